//! Shipped architecture templates. Channel counts are stored at full width;
//! desk-scale runs shrink them with [`NetworkSpec::scaled_width`].

use std::path::Path;
use std::str::FromStr;

use super::spec::NetworkSpec;
use crate::error::{Error, Result};

/// Default divisor applied to template channel widths for desk-scale runs.
pub const DEFAULT_WIDTH_DIVISOR: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Template {
    /// 7-layer analyzer with 5x5 encoder convolutions (figure-ground segmentation).
    FigureGroundAnalyzer,
    /// 5-layer analyzer for 21-class segmentation.
    VocAnalyzer,
    /// 9-layer analyzer for depth or surface normals.
    DenseAnalyzer,
    /// Two-stem, two-head analyzer for joint depth and normals.
    JointAnalyzer,
    /// 17-layer U-Net predictor with tripled decoder convolutions.
    UnetPredictor,
    /// Compact U-Net predictor sized for 64x64 synthetic scenes.
    DeskPredictor,
}

impl Template {
    pub const ALL: [Template; 6] = [
        Template::FigureGroundAnalyzer,
        Template::VocAnalyzer,
        Template::DenseAnalyzer,
        Template::JointAnalyzer,
        Template::UnetPredictor,
        Template::DeskPredictor,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Template::FigureGroundAnalyzer => "figure_ground_analyzer",
            Template::VocAnalyzer => "voc_analyzer",
            Template::DenseAnalyzer => "dense_analyzer",
            Template::JointAnalyzer => "joint_analyzer",
            Template::UnetPredictor => "unet_predictor",
            Template::DeskPredictor => "desk_predictor",
        }
    }

    pub fn text(self) -> &'static str {
        match self {
            Template::FigureGroundAnalyzer => {
                include_str!("../../templates/figure_ground_analyzer.tsv")
            }
            Template::VocAnalyzer => include_str!("../../templates/voc_analyzer.tsv"),
            Template::DenseAnalyzer => include_str!("../../templates/dense_analyzer.tsv"),
            Template::JointAnalyzer => include_str!("../../templates/joint_analyzer.tsv"),
            Template::UnetPredictor => include_str!("../../templates/unet_predictor.tsv"),
            Template::DeskPredictor => include_str!("../../templates/desk_predictor.tsv"),
        }
    }

    /// The full-width spec exactly as shipped.
    pub fn spec(self) -> NetworkSpec {
        NetworkSpec::parse(self.text()).expect("shipped templates are valid")
    }
}

impl FromStr for Template {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Template::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::config(format!("unknown template `{s}`")))
    }
}

/// Resolves a template reference: a shipped template name or a path to a template file.
pub fn load_template(reference: &str) -> Result<NetworkSpec> {
    if let Ok(t) = reference.parse::<Template>() {
        return Ok(t.spec());
    }
    let path = Path::new(reference);
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    NetworkSpec::parse(&text)
}
