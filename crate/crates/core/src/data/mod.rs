//! Synthetic datasets and their on-disk formats.

mod io;
mod manifest;
mod synth;

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;

pub use io::{
    decode_pfm, decode_pgm, encode_pfm, encode_pgm, read_pfm, read_pgm, write_pfm, write_pgm,
    FloatMap, Mask,
};
pub use manifest::{DatasetManifest, SampleRecord, MANIFEST_MAGIC};
pub use synth::{
    class_intensity, pixel_coord, render_planes, room_layout, room_sample, sample_rng, scene_class,
    segmentation_layout, segmentation_sample, PixelRect, Plane, PlaneRender, SegParams, Shape,
    ShapeKind, SCENE_CLASSES, SCENE_EXTENT,
};

use crate::error::{Error, Result};
use crate::task::TaskKind;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Classes(Mask),
    Depth(FloatMap),
    Normal(FloatMap),
    Joint { depth: FloatMap, normal: FloatMap },
}

impl Target {
    pub fn task(&self) -> TaskKind {
        match self {
            Target::Classes(_) => TaskKind::Segmentation,
            Target::Depth(_) => TaskKind::Depth,
            Target::Normal(_) => TaskKind::Normal,
            Target::Joint { .. } => TaskKind::Joint,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    /// Single-channel intensities in [0, 1], quantized to 8 bits.
    pub image: FloatMap,
    pub target: Target,
    /// 0 marks background.
    pub instances: Mask,
}

impl Sample {
    pub fn size(&self) -> (usize, usize) {
        (self.image.height, self.image.width)
    }

    pub fn validate(&self) -> Result<()> {
        let check_depth = |d: &FloatMap| {
            if d.data.iter().any(|&v| v <= 0.0) {
                return Err(Error::data(format!(
                    "sample {}: depth must be positive",
                    self.id
                )));
            }
            Ok(())
        };
        let check_normal = |n: &FloatMap| {
            let hw = n.width * n.height;
            for i in 0..hw {
                let norm = (0..3)
                    .map(|c| n.data[c * hw + i].powi(2))
                    .sum::<f64>()
                    .sqrt();
                if (norm - 1.0).abs() > 1e-9 {
                    return Err(Error::data(format!(
                        "sample {}: normal at pixel {i} has norm {norm}",
                        self.id
                    )));
                }
            }
            Ok(())
        };
        match &self.target {
            Target::Classes(_) => Ok(()),
            Target::Depth(d) => check_depth(d),
            Target::Normal(n) => check_normal(n),
            Target::Joint { depth, normal } => {
                check_depth(depth).and_then(|_| check_normal(normal))
            }
        }
    }
}

/// Rescales every pixel of a 3-channel map to unit length (norm floored at 1e-8).
pub fn renormalize(map: &FloatMap) -> FloatMap {
    let hw = map.width * map.height;
    let mut out = map.clone();
    for i in 0..hw {
        let norm = (0..3)
            .map(|c| map.data[c * hw + i].powi(2))
            .sum::<f64>()
            .sqrt()
            .max(1e-8);
        for c in 0..3 {
            out.data[c * hw + i] = map.data[c * hw + i] / norm;
        }
    }
    out
}

/// Stacks sample images into `[N, 1, H, W]`.
pub fn image_batch(samples: &[&Sample]) -> Result<Tensor> {
    let (h, w) = samples
        .first()
        .map(|s| s.size())
        .ok_or_else(|| Error::usage("empty batch"))?;
    let mut data = Vec::with_capacity(samples.len() * h * w);
    for s in samples {
        if s.size() != (h, w) {
            return Err(Error::usage("batch samples differ in size"));
        }
        data.extend_from_slice(&s.image.data);
    }
    Tensor::from_vec(vec![samples.len(), 1, h, w], data)
}

/// One-hot encodes a class mask into `C` channel planes appended to `out`.
pub fn one_hot_into(mask: &Mask, classes: usize, out: &mut Vec<f64>) -> Result<()> {
    let hw = mask.width * mask.height;
    let start = out.len();
    out.resize(start + classes * hw, 0.0);
    for (i, &c) in mask.data.iter().enumerate() {
        let c = c as usize;
        if c >= classes {
            return Err(Error::data(format!(
                "class id {c} out of range for {classes} classes"
            )));
        }
        out[start + c * hw + i] = 1.0;
    }
    Ok(())
}

/// Target tensors in head order: one-hot `[N, C, H, W]` for segmentation, `[N, 1, H, W]`
/// depth, `[N, 3, H, W]` normals, and depth then normals for the joint task.
pub fn target_batch(samples: &[&Sample], task: TaskKind, classes: usize) -> Result<Vec<Tensor>> {
    let (h, w) = samples
        .first()
        .map(|s| s.size())
        .ok_or_else(|| Error::usage("empty batch"))?;
    let n = samples.len();
    let mut seg = Vec::new();
    let mut depth = Vec::new();
    let mut normal = Vec::new();
    for s in samples {
        match (&s.target, task) {
            (Target::Classes(m), TaskKind::Segmentation) => one_hot_into(m, classes, &mut seg)?,
            (Target::Depth(d), TaskKind::Depth) => depth.extend_from_slice(&d.data),
            (Target::Normal(nm), TaskKind::Normal) => normal.extend_from_slice(&nm.data),
            (
                Target::Joint {
                    depth: d,
                    normal: nm,
                },
                TaskKind::Joint,
            ) => {
                depth.extend_from_slice(&d.data);
                normal.extend_from_slice(&nm.data);
            }
            (t, _) => {
                return Err(Error::usage(format!(
                    "sample {} has a {} target, expected {task}",
                    s.id,
                    t.task()
                )))
            }
        }
    }
    Ok(match task {
        TaskKind::Segmentation => vec![Tensor::from_vec(vec![n, classes, h, w], seg)?],
        TaskKind::Depth => vec![Tensor::from_vec(vec![n, 1, h, w], depth)?],
        TaskKind::Normal => vec![Tensor::from_vec(vec![n, 3, h, w], normal)?],
        TaskKind::Joint => vec![
            Tensor::from_vec(vec![n, 1, h, w], depth)?,
            Tensor::from_vec(vec![n, 3, h, w], normal)?,
        ],
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenConfig {
    pub task: TaskKind,
    pub seed: u64,
    pub n_train: usize,
    pub n_val: usize,
    pub size: usize,
    pub classes: usize,
    pub clutter: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            task: TaskKind::Segmentation,
            seed: 0,
            n_train: 200,
            n_val: 50,
            size: 64,
            classes: 4,
            clutter: 1,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.size < 16 || self.size > 4096 {
            return Err(Error::config("size must lie in [16, 4096]"));
        }
        if self.task == TaskKind::Segmentation {
            SegParams {
                size: self.size,
                classes: self.classes,
                clutter: self.clutter,
            }
            .validate()?;
        }
        Ok(())
    }

    /// Classes recorded in the manifest: the generator's classes for segmentation,
    /// the room-scene semantic classes otherwise.
    pub fn manifest_classes(&self) -> usize {
        if self.task == TaskKind::Segmentation {
            self.classes
        } else {
            SCENE_CLASSES
        }
    }

    /// Renders sample `index` in memory.
    pub fn sample(&self, index: u64) -> Result<Sample> {
        match self.task {
            TaskKind::Segmentation => segmentation_sample(
                &SegParams {
                    size: self.size,
                    classes: self.classes,
                    clutter: self.clutter,
                },
                self.seed,
                index,
            ),
            t => room_sample(t, self.size, self.seed, index),
        }
    }

    /// Seeded permutation of all sample indices; the first `n_train` form the train split.
    pub fn split(&self) -> (Vec<u64>, Vec<u64>) {
        let total = (self.n_train + self.n_val) as u64;
        let mut idx: Vec<u64> = (0..total).collect();
        idx.shuffle(&mut sample_rng(self.seed, u64::MAX));
        let mut val = idx.split_off(self.n_train);
        idx.sort_unstable();
        val.sort_unstable();
        (idx, val)
    }
}

/// Manifests of a generated dataset.
#[derive(Debug, Clone)]
pub struct GeneratedSet {
    pub train: DatasetManifest,
    pub val: DatasetManifest,
    pub train_path: PathBuf,
    pub val_path: PathBuf,
}

impl GeneratedSet {
    /// Combined SHA-256 of both splits.
    pub fn checksum(&self) -> Result<String> {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(self.train.checksum()?.as_bytes());
        h.update(self.val.checksum()?.as_bytes());
        Ok(hex::encode(h.finalize()))
    }
}

fn write_sample(dir: &Path, s: &Sample) -> Result<SampleRecord> {
    let rel = |suffix: &str| format!("samples/{}_{suffix}", s.id);
    let image = Mask::new(
        s.image.width,
        s.image.height,
        s.image
            .data
            .iter()
            .map(|&v| (v * 255.0).round() as u8)
            .collect(),
    )?;
    let record = SampleRecord {
        id: s.id.clone(),
        image: rel("image.pgm"),
        target: match &s.target {
            Target::Classes(_) => rel("mask.pgm"),
            Target::Depth(_) => rel("depth.pfm"),
            Target::Normal(_) => rel("normal.pfm"),
            Target::Joint { .. } => format!("{}+{}", rel("depth.pfm"), rel("normal.pfm")),
        },
        instance: rel("inst.pgm"),
    };
    write_pgm(&dir.join(&record.image), &image)?;
    write_pgm(&dir.join(&record.instance), &s.instances)?;
    match &s.target {
        Target::Classes(m) => write_pgm(&dir.join(&record.target), m)?,
        Target::Depth(d) => write_pfm(&dir.join(&record.target), d)?,
        Target::Normal(n) => write_pfm(&dir.join(&record.target), n)?,
        Target::Joint { depth, normal } => {
            write_pfm(&dir.join(rel("depth.pfm")), depth)?;
            write_pfm(&dir.join(rel("normal.pfm")), normal)?;
        }
    }
    Ok(record)
}

/// Renders the dataset into `dir` and writes `train.txt` and `val.txt`.
pub fn generate_dataset(cfg: &GenConfig, dir: &Path) -> Result<GeneratedSet> {
    cfg.validate()?;
    let samples_dir = dir.join("samples");
    std::fs::create_dir_all(&samples_dir).map_err(|e| Error::io(&samples_dir, e))?;
    let (train_idx, val_idx) = cfg.split();
    let build = |split: &str, idx: &[u64]| -> Result<DatasetManifest> {
        let mut m = DatasetManifest::new(cfg.task, cfg.manifest_classes(), dir);
        m.meta = vec![
            ("seed".into(), cfg.seed.to_string()),
            ("size".into(), cfg.size.to_string()),
            ("clutter".into(), cfg.clutter.to_string()),
            ("n_train".into(), cfg.n_train.to_string()),
            ("n_val".into(), cfg.n_val.to_string()),
            ("split".into(), split.into()),
            (
                "shuffle".into(),
                format!("chacha8(seed={}, stream=u64::MAX)", cfg.seed),
            ),
        ];
        for &i in idx {
            m.records.push(write_sample(dir, &cfg.sample(i)?)?);
        }
        Ok(m)
    };
    let train = build("train", &train_idx)?;
    let val = build("val", &val_idx)?;
    let train_path = dir.join("train.txt");
    let val_path = dir.join("val.txt");
    train.write(&train_path)?;
    val.write(&val_path)?;
    Ok(GeneratedSet {
        train,
        val,
        train_path,
        val_path,
    })
}
