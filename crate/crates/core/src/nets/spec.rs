//! Declarative layer graphs and their tab-separated text form.
//!
//! One layer per line:
//!
//! ```text
//! name <TAB> connections(comma-separated) <TAB> kernel <TAB> channels <TAB> stride <TAB> repeat <TAB> upsample{0|1}
//! ```
//!
//! Network-level facts are `@`-directives (`@role`, `@input`, `@head`, `@taps`,
//! `@recon_tap`, `@affine_norm`); `#` starts a comment line.

use std::collections::{HashMap, HashSet};
use std::fmt::{self, Write as _};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::task::TaskKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NetRole {
    Predictor,
    Analyzer,
    Regularizer,
    Discriminator,
}

impl NetRole {
    pub fn as_str(self) -> &'static str {
        match self {
            NetRole::Predictor => "predictor",
            NetRole::Analyzer => "analyzer",
            NetRole::Regularizer => "regularizer",
            NetRole::Discriminator => "discriminator",
        }
    }
}

impl FromStr for NetRole {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "predictor" => Ok(NetRole::Predictor),
            "analyzer" => Ok(NetRole::Analyzer),
            "regularizer" => Ok(NetRole::Regularizer),
            "discriminator" => Ok(NetRole::Discriminator),
            other => Err(Error::format(format!("unknown network role `{other}`"))),
        }
    }
}

/// What an output head produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HeadRole {
    /// Per-class logits.
    Segmentation,
    Depth,
    Normal,
    /// A single logit per sample (spatially averaged).
    Logit,
}

impl HeadRole {
    pub fn as_str(self) -> &'static str {
        match self {
            HeadRole::Segmentation => "segmentation",
            HeadRole::Depth => "depth",
            HeadRole::Normal => "normal",
            HeadRole::Logit => "logit",
        }
    }

    pub fn task(self) -> Option<TaskKind> {
        match self {
            HeadRole::Segmentation => Some(TaskKind::Segmentation),
            HeadRole::Depth => Some(TaskKind::Depth),
            HeadRole::Normal => Some(TaskKind::Normal),
            HeadRole::Logit => None,
        }
    }
}

impl FromStr for HeadRole {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "segmentation" => Ok(HeadRole::Segmentation),
            "depth" => Ok(HeadRole::Depth),
            "normal" => Ok(HeadRole::Normal),
            "logit" => Ok(HeadRole::Logit),
            other => Err(Error::format(format!("unknown head role `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: String,
    /// Source layers, concatenated over channels in this order.
    pub sources: Vec<String>,
    pub kernel: usize,
    pub channels: usize,
    pub stride: usize,
    pub repeat: usize,
    /// Bilinearly upsample the first source to the resolution of the second
    /// (or by 2 when there is a single source) before concatenation.
    pub upsample: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InputSpec {
    pub name: String,
    pub channels: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeadSpec {
    pub layer: String,
    pub role: HeadRole,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkSpec {
    pub role: NetRole,
    pub inputs: Vec<InputSpec>,
    pub layers: Vec<LayerSpec>,
    pub heads: Vec<HeadSpec>,
    /// Layers whose activations enter the ASM loss.
    pub taps: Vec<String>,
    /// Layer feeding the reconstruction (regularizer) heads.
    pub recon_tap: Option<String>,
    pub affine_norm: bool,
}

/// Spatial extent and channel count of one activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActShape {
    pub channels: usize,
    pub h: usize,
    pub w: usize,
}

fn field<T: FromStr>(s: &str, what: &str, line: usize) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Error::format(format!("line {line}: bad {what} `{s}`")))
}

impl NetworkSpec {
    pub fn parse(text: &str) -> Result<Self> {
        let mut role = None;
        let mut inputs = Vec::new();
        let mut layers = Vec::new();
        let mut heads = Vec::new();
        let mut taps = Vec::new();
        let mut recon_tap = None;
        let mut affine_norm = false;
        for (i, raw) in text.lines().enumerate() {
            let ln = i + 1;
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if let Some(directive) = cols[0].strip_prefix('@') {
                let arg = |k: usize| {
                    cols.get(k).copied().ok_or_else(|| {
                        Error::format(format!("line {ln}: @{directive} is missing a value"))
                    })
                };
                match directive {
                    "role" => role = Some(arg(1)?.parse()?),
                    "input" => inputs.push(InputSpec {
                        name: arg(1)?.to_string(),
                        channels: field(arg(2)?, "input channels", ln)?,
                    }),
                    "head" => heads.push(HeadSpec {
                        layer: arg(1)?.to_string(),
                        role: arg(2)?.parse()?,
                    }),
                    "taps" => {
                        taps = arg(1)?
                            .split(',')
                            .filter(|s| !s.is_empty())
                            .map(str::to_string)
                            .collect()
                    }
                    "recon_tap" => recon_tap = Some(arg(1)?.to_string()),
                    "affine_norm" => affine_norm = field::<u8>(arg(1)?, "flag", ln)? == 1,
                    other => {
                        return Err(Error::format(format!(
                            "line {ln}: unknown directive @{other}"
                        )))
                    }
                }
                continue;
            }
            if cols.len() != 7 {
                return Err(Error::format(format!(
                    "line {ln}: expected 7 tab-separated fields, found {}",
                    cols.len()
                )));
            }
            let upsample = match cols[6].trim() {
                "0" => false,
                "1" => true,
                other => return Err(Error::format(format!("line {ln}: upsample flag `{other}`"))),
            };
            layers.push(LayerSpec {
                name: cols[0].to_string(),
                sources: cols[1].split(',').map(|s| s.trim().to_string()).collect(),
                kernel: field(cols[2], "kernel", ln)?,
                channels: field(cols[3], "channels", ln)?,
                stride: field(cols[4], "stride", ln)?,
                repeat: field(cols[5], "repeat", ln)?,
                upsample,
            });
        }
        let spec = NetworkSpec {
            role: role.ok_or_else(|| Error::format("missing @role directive"))?,
            inputs,
            layers,
            heads,
            taps,
            recon_tap,
            affine_norm,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "@role\t{}", self.role.as_str());
        for i in &self.inputs {
            let _ = writeln!(s, "@input\t{}\t{}", i.name, i.channels);
        }
        for h in &self.heads {
            let _ = writeln!(s, "@head\t{}\t{}", h.layer, h.role.as_str());
        }
        if !self.taps.is_empty() {
            let _ = writeln!(s, "@taps\t{}", self.taps.join(","));
        }
        if let Some(t) = &self.recon_tap {
            let _ = writeln!(s, "@recon_tap\t{t}");
        }
        if self.affine_norm {
            let _ = writeln!(s, "@affine_norm\t1");
        }
        for l in &self.layers {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                l.name,
                l.sources.join(","),
                l.kernel,
                l.channels,
                l.stride,
                l.repeat,
                u8::from(l.upsample)
            );
        }
        s
    }

    pub fn layer(&self, name: &str) -> Option<&LayerSpec> {
        self.layers.iter().find(|l| l.name == name)
    }

    pub fn is_head(&self, layer: &str) -> bool {
        self.heads.iter().any(|h| h.layer == layer)
    }

    pub fn head(&self, role: HeadRole) -> Option<&HeadSpec> {
        self.heads.iter().find(|h| h.role == role)
    }

    pub fn validate(&self) -> Result<()> {
        if self.inputs.is_empty() {
            return Err(Error::config("network declares no inputs"));
        }
        let mut seen: HashSet<&str> = HashSet::new();
        for i in &self.inputs {
            if i.channels == 0 || !seen.insert(&i.name) {
                return Err(Error::config(format!(
                    "input `{}` is duplicated or has no channels",
                    i.name
                )));
            }
        }
        for l in &self.layers {
            let bad = |msg: String| Err(Error::config(format!("layer `{}`: {msg}", l.name)));
            if seen.contains(l.name.as_str()) {
                return bad("name declared twice".into());
            }
            if l.sources.is_empty() {
                return bad("no connections".into());
            }
            if let Some(src) = l.sources.iter().find(|s| !seen.contains(s.as_str())) {
                return bad(format!(
                    "connection `{src}` is not a previously declared layer or input"
                ));
            }
            if l.kernel == 0 || l.kernel % 2 == 0 {
                return bad(format!("kernel {} must be odd", l.kernel));
            }
            if l.channels == 0 || l.stride == 0 || l.repeat == 0 {
                return bad("channels, stride and repeat must be positive".into());
            }
            if l.upsample && l.stride != 1 {
                return bad("decoder (upsampling) layers must have stride 1".into());
            }
            seen.insert(&l.name);
        }
        if self.heads.is_empty() {
            return Err(Error::config("network declares no output heads"));
        }
        for h in &self.heads {
            let layer = self.layer(&h.layer).ok_or_else(|| {
                Error::config(format!("head `{}` is not a declared layer", h.layer))
            })?;
            let ok = match h.role {
                HeadRole::Segmentation => layer.channels >= 1,
                HeadRole::Depth | HeadRole::Logit => layer.channels == 1,
                HeadRole::Normal => layer.channels == 3,
            };
            if !ok {
                return Err(Error::config(format!(
                    "head `{}` has {} channels, incompatible with role {}",
                    h.layer,
                    layer.channels,
                    h.role.as_str()
                )));
            }
        }
        for t in &self.taps {
            if self.layer(t).is_none() {
                return Err(Error::config(format!("tap `{t}` is not a declared layer")));
            }
        }
        if self.role == NetRole::Analyzer && self.taps.is_empty() {
            return Err(Error::config("analyzer specs need at least one ASM tap"));
        }
        if let Some(t) = &self.recon_tap {
            if self.layer(t).is_none() {
                return Err(Error::config(format!(
                    "regularizer tap `{t}` is not a declared layer"
                )));
            }
        }
        Ok(())
    }

    /// Input channel count of each convolution, layer by layer (first repeat).
    pub fn in_channels(&self) -> Result<Vec<usize>> {
        let mut ch: HashMap<&str, usize> = self
            .inputs
            .iter()
            .map(|i| (i.name.as_str(), i.channels))
            .collect();
        let mut out = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let c = l
                .sources
                .iter()
                .map(|s| ch.get(s.as_str()).copied())
                .sum::<Option<usize>>()
                .ok_or_else(|| {
                    Error::config(format!("layer `{}` has a dangling connection", l.name))
                })?;
            out.push(c);
            ch.insert(&l.name, l.channels);
        }
        Ok(out)
    }

    /// Activation shapes of every layer for an `h x w` input (all inputs share the extent).
    pub fn infer_shapes(&self, h: usize, w: usize) -> Result<Vec<ActShape>> {
        let mut acts: HashMap<&str, ActShape> = self
            .inputs
            .iter()
            .map(|i| {
                (
                    i.name.as_str(),
                    ActShape {
                        channels: i.channels,
                        h,
                        w,
                    },
                )
            })
            .collect();
        let mut out = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let srcs: Vec<ActShape> = l.sources.iter().map(|s| acts[s.as_str()]).collect();
            let (th, tw) = resolve_extent(l, &srcs)?;
            let shape = ActShape {
                channels: l.channels,
                h: th.div_ceil(l.stride),
                w: tw.div_ceil(l.stride),
            };
            acts.insert(&l.name, shape);
            out.push(shape);
        }
        Ok(out)
    }

    /// Returns a copy whose hidden layers have `ceil(channels / divisor)` channels.
    /// Head layers keep their task-defined widths.
    pub fn scaled_width(&self, divisor: usize) -> Result<Self> {
        if divisor == 0 {
            return Err(Error::config("width divisor must be positive"));
        }
        let mut s = self.clone();
        let heads: HashSet<String> = s.heads.iter().map(|h| h.layer.clone()).collect();
        for l in &mut s.layers {
            if !heads.contains(&l.name) {
                l.channels = l.channels.div_ceil(divisor).max(1);
            }
        }
        Ok(s)
    }

    /// Adapts inputs and heads to a task: predictor inputs take `image_channels`,
    /// analyzer inputs take the target encoding (C classes, 1 depth, 3 normal).
    pub fn retarget(&self, task: TaskKind, classes: usize, image_channels: usize) -> Result<Self> {
        let mut s = self.clone();
        let head_channels = |t: TaskKind| match t {
            TaskKind::Segmentation => classes,
            TaskKind::Depth => 1,
            TaskKind::Normal => 3,
            TaskKind::Joint => unreachable!(),
        };
        let head_role = |t: TaskKind| match t {
            TaskKind::Segmentation => HeadRole::Segmentation,
            TaskKind::Depth => HeadRole::Depth,
            _ => HeadRole::Normal,
        };
        if task == TaskKind::Segmentation && classes < 2 {
            return Err(Error::config("segmentation needs at least 2 classes"));
        }
        match (s.role, task) {
            (NetRole::Predictor, _) => {
                if s.inputs.len() != 1 {
                    return Err(Error::config(
                        "predictor templates take exactly one image input",
                    ));
                }
                s.inputs[0].channels = image_channels;
            }
            (_, TaskKind::Joint) => {
                if s.inputs.len() != 2 {
                    return Err(Error::config(
                        "joint analyzers need separate `input_depth` and `input_normal` stems",
                    ));
                }
                s.inputs[0].channels = 1;
                s.inputs[1].channels = 3;
            }
            (_, t) => {
                if s.inputs.len() != 1 {
                    return Err(Error::config(format!(
                        "a {t} analyzer takes exactly one input"
                    )));
                }
                s.inputs[0].channels = head_channels(t);
            }
        }
        if task == TaskKind::Joint {
            if s.heads.len() == 1 {
                let old = s.heads[0].layer.clone();
                let idx = s
                    .layers
                    .iter()
                    .position(|l| l.name == old)
                    .expect("validated head");
                let mut depth = s.layers[idx].clone();
                let mut normal = depth.clone();
                depth.name = format!("{old}_depth");
                depth.channels = 1;
                normal.name = format!("{old}_normal");
                normal.channels = 3;
                s.layers.splice(idx..=idx, [depth.clone(), normal.clone()]);
                s.heads = vec![
                    HeadSpec {
                        layer: depth.name,
                        role: HeadRole::Depth,
                    },
                    HeadSpec {
                        layer: normal.name,
                        role: HeadRole::Normal,
                    },
                ];
            } else if s.heads.len() == 2 {
                s.heads[0].role = HeadRole::Depth;
                s.heads[1].role = HeadRole::Normal;
                for (h, c) in s.heads.clone().iter().zip([1, 3]) {
                    if let Some(l) = s.layers.iter_mut().find(|l| l.name == h.layer) {
                        l.channels = c;
                    }
                }
            } else {
                return Err(Error::config("joint task needs one or two output heads"));
            }
        } else {
            if s.heads.len() != 1 {
                return Err(Error::config(format!(
                    "a {task} network has exactly one output head"
                )));
            }
            s.heads[0].role = head_role(task);
            let hl = s.heads[0].layer.clone();
            if let Some(l) = s.layers.iter_mut().find(|l| l.name == hl) {
                l.channels = head_channels(task);
            }
        }
        s.validate()?;
        Ok(s)
    }

    /// The discriminator for the GAN baselines: this spec's encoder (layers up to the
    /// first decoder layer), a 1x1 single-channel head and global average pooling.
    /// `extra_channels` widens the first input (cGAN conditioning on the image).
    pub fn discriminator(&self, extra_channels: usize) -> Result<Self> {
        let mut layers: Vec<LayerSpec> = self
            .layers
            .iter()
            .take_while(|l| !l.upsample && !self.is_head(&l.name))
            .cloned()
            .collect();
        let last = layers
            .last()
            .map(|l| l.name.clone())
            .ok_or_else(|| Error::config("analyzer has no encoder layers"))?;
        layers.push(LayerSpec {
            name: "output".into(),
            sources: vec![last],
            kernel: 1,
            channels: 1,
            stride: 1,
            repeat: 1,
            upsample: false,
        });
        let mut inputs = self.inputs.clone();
        inputs[0].channels += extra_channels;
        let spec = NetworkSpec {
            role: NetRole::Discriminator,
            inputs,
            layers,
            heads: vec![HeadSpec {
                layer: "output".into(),
                role: HeadRole::Logit,
            }],
            taps: Vec::new(),
            recon_tap: None,
            affine_norm: self.affine_norm,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Spatial extent a layer's convolution sees after optional upsampling.
pub(crate) fn resolve_extent(l: &LayerSpec, srcs: &[ActShape]) -> Result<(usize, usize)> {
    let first = srcs[0];
    let (th, tw) = if l.upsample {
        let (th, tw) = srcs
            .get(1)
            .map_or((first.h * 2, first.w * 2), |s| (s.h, s.w));
        if th % first.h != 0 || tw % first.w != 0 || th / first.h != tw / first.w {
            return Err(Error::config(format!(
                "layer `{}`: cannot upsample {}x{} to {th}x{tw} by an integer factor",
                l.name, first.h, first.w
            )));
        }
        (th, tw)
    } else {
        (first.h, first.w)
    };
    for (s, name) in srcs.iter().zip(&l.sources).skip(usize::from(l.upsample)) {
        if (s.h, s.w) != (th, tw) {
            return Err(Error::config(format!(
                "layer `{}`: connection `{name}` is {}x{}, expected {th}x{tw}",
                l.name, s.h, s.w
            )));
        }
    }
    Ok((th, tw))
}

impl fmt::Display for NetworkSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}
