use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::io::{read_pfm, read_pgm};
use super::{renormalize, Sample, Target};
use crate::error::{Error, Result};
use crate::task::TaskKind;

pub const MANIFEST_MAGIC: &str = "ASMDATA1";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleRecord {
    pub id: String,
    pub image: String,
    /// Target file; joint samples list the depth and normal maps joined by `+`.
    pub target: String,
    pub instance: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub task: TaskKind,
    pub classes: usize,
    /// `# key=value` lines in file order (seed, generator parameters, split).
    pub meta: Vec<(String, String)>,
    pub records: Vec<SampleRecord>,
    /// Directory that record paths are relative to.
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn new(task: TaskKind, classes: usize, root: impl Into<PathBuf>) -> Self {
        Self {
            task,
            classes,
            meta: Vec::new(),
            records: Vec::new(),
            root: root.into(),
        }
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{MANIFEST_MAGIC} {} {}\n", self.task, self.classes);
        for (k, v) in &self.meta {
            s.push_str(&format!("# {k}={v}\n"));
        }
        for r in &self.records {
            s.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                r.id, r.image, r.target, r.instance
            ));
        }
        s
    }

    pub fn parse(text: &str, root: impl Into<PathBuf>) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::format("empty manifest"))?;
        let mut parts = header.split_whitespace();
        if parts.next() != Some(MANIFEST_MAGIC) {
            return Err(Error::format(format!(
                "manifest must start with `{MANIFEST_MAGIC}`"
            )));
        }
        let task: TaskKind = parts
            .next()
            .ok_or_else(|| Error::format("manifest header lacks the task"))?
            .parse()
            .map_err(|_| Error::format("manifest header names an unknown task"))?;
        let classes: usize = parts
            .next()
            .and_then(|c| c.parse().ok())
            .ok_or_else(|| Error::format("manifest header lacks the class count"))?;
        let mut m = DatasetManifest::new(task, classes, root);
        let mut ids = std::collections::HashSet::new();
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            if let Some(meta) = line.strip_prefix('#') {
                if let Some((k, v)) = meta.trim().split_once('=') {
                    m.meta.push((k.trim().to_string(), v.trim().to_string()));
                }
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 4 {
                return Err(Error::format(format!(
                    "manifest line {}: expected 4 fields",
                    i + 2
                )));
            }
            if !ids.insert(f[0].to_string()) {
                return Err(Error::format(format!(
                    "manifest line {}: duplicate id `{}`",
                    i + 2,
                    f[0]
                )));
            }
            m.records.push(SampleRecord {
                id: f[0].into(),
                image: f[1].into(),
                target: f[2].into(),
                instance: f[3].into(),
            });
        }
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, root)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    fn resolve(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn load_sample(&self, index: usize) -> Result<Sample> {
        let r = self
            .records
            .get(index)
            .ok_or_else(|| Error::usage(format!("sample index {index} out of range")))?;
        let image = read_pgm(&self.resolve(&r.image))?;
        let instances = read_pgm(&self.resolve(&r.instance))?;
        let target = match self.task {
            TaskKind::Segmentation => {
                let m = read_pgm(&self.resolve(&r.target))?;
                if let Some(&bad) = m.data.iter().find(|&&c| c as usize >= self.classes) {
                    return Err(Error::data(format!(
                        "sample {}: class id {bad} >= {}",
                        r.id, self.classes
                    )));
                }
                Target::Classes(m)
            }
            TaskKind::Depth => Target::Depth(read_pfm(&self.resolve(&r.target))?),
            TaskKind::Normal => Target::Normal(renormalize(&read_pfm(&self.resolve(&r.target))?)),
            TaskKind::Joint => {
                let (d, n) = r.target.split_once('+').ok_or_else(|| {
                    Error::format(format!(
                        "sample {}: joint target needs `depth+normal`",
                        r.id
                    ))
                })?;
                Target::Joint {
                    depth: read_pfm(&self.resolve(d))?,
                    normal: renormalize(&read_pfm(&self.resolve(n))?),
                }
            }
        };
        let image = super::io::FloatMap::new(
            1,
            image.width,
            image.height,
            image.data.iter().map(|&b| f64::from(b) / 255.0).collect(),
        )?;
        let sample = Sample {
            id: r.id.clone(),
            image,
            target,
            instances,
        };
        sample.validate()?;
        Ok(sample)
    }

    pub fn load_all(&self) -> Result<Vec<Sample>> {
        (0..self.len()).map(|i| self.load_sample(i)).collect()
    }

    /// Files referenced by the manifest, in record order.
    pub fn files(&self) -> Vec<PathBuf> {
        self.records
            .iter()
            .flat_map(|r| {
                let mut v = vec![self.resolve(&r.image)];
                v.extend(r.target.split('+').map(|t| self.resolve(t)));
                v.push(self.resolve(&r.instance));
                v
            })
            .collect()
    }

    /// SHA-256 over the manifest text and every referenced file, hex encoded.
    pub fn checksum(&self) -> Result<String> {
        let mut h = Sha256::new();
        h.update(self.to_text().as_bytes());
        for f in self.files() {
            let bytes = std::fs::read(&f).map_err(|e| Error::io(&f, e))?;
            h.update((bytes.len() as u64).to_le_bytes());
            h.update(&bytes);
        }
        Ok(hex::encode(h.finalize()))
    }
}
