use std::fmt;
use std::str::FromStr;

use crate::error::Error;

/// The dense prediction target a network or dataset is built for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TaskKind {
    Segmentation,
    Depth,
    Normal,
    /// Depth and surface normals predicted together from one image.
    Joint,
}

impl TaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Segmentation => "seg",
            TaskKind::Depth => "depth",
            TaskKind::Normal => "normal",
            TaskKind::Joint => "joint",
        }
    }

    pub fn is_regression(self) -> bool {
        !matches!(self, TaskKind::Segmentation)
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "seg" | "segmentation" => Ok(TaskKind::Segmentation),
            "depth" => Ok(TaskKind::Depth),
            "normal" => Ok(TaskKind::Normal),
            "joint" => Ok(TaskKind::Joint),
            other => Err(Error::config(format!(
                "unknown task `{other}` (expected seg, depth, normal or joint)"
            ))),
        }
    }
}
