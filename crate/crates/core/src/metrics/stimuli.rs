//! Top input stimuli of an analyzer filter: the ground-truth patches that drive one
//! channel of one layer hardest.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::data::Mask;
use crate::error::{Error, Result};
use crate::nets::{Network, NetworkSpec};
use crate::tensor::{Graph, Tensor};

/// Where a layer's activations sit in input pixel coordinates: activation `o` is
/// centred at `offset + o * jump` and sees a window of `size` input pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldGeometry {
    pub offset: f64,
    pub jump: f64,
    pub size: f64,
}

/// Receptive-field geometry of every layer for a square `extent x extent` input.
pub fn receptive_fields(
    spec: &NetworkSpec,
    extent: usize,
) -> Result<HashMap<String, FieldGeometry>> {
    let shapes = spec.infer_shapes(extent, extent)?;
    let mut geo: HashMap<String, FieldGeometry> = spec
        .inputs
        .iter()
        .map(|i| {
            (
                i.name.clone(),
                FieldGeometry {
                    offset: 0.0,
                    jump: 1.0,
                    size: 1.0,
                },
            )
        })
        .collect();
    let mut ext: HashMap<String, usize> = spec
        .inputs
        .iter()
        .map(|i| (i.name.clone(), extent))
        .collect();
    for (l, shape) in spec.layers.iter().zip(&shapes) {
        let mut g = geo[&l.sources[0]];
        let mut h = ext[&l.sources[0]];
        if l.upsample {
            let target = shape.h;
            let f = (target / h) as f64;
            if f > 1.0 {
                g = FieldGeometry {
                    offset: g.offset + g.jump * (0.5 / f - 0.5),
                    jump: g.jump / f,
                    size: g.size + g.jump,
                };
                h = target;
            }
        }
        for s in &l.sources[1..] {
            g.size = g.size.max(geo[s].size);
        }
        for r in 0..l.repeat {
            let stride = if r == 0 { l.stride } else { 1 };
            let out = h.div_ceil(stride);
            let pad_total = ((out - 1) * stride + l.kernel).saturating_sub(h);
            let pad_top = (pad_total / 2) as f64;
            let k = l.kernel as f64;
            g = FieldGeometry {
                offset: g.offset + g.jump * ((k - 1.0) / 2.0 - pad_top),
                jump: g.jump * stride as f64,
                size: g.size + (k - 1.0) * g.jump,
            };
            h = out;
        }
        geo.insert(l.name.clone(), g);
        ext.insert(l.name.clone(), h);
    }
    Ok(geo)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stimulus {
    pub sample: usize,
    pub row: usize,
    pub col: usize,
    pub activation: f64,
    /// `patch_size x patch_size` display values in [0, 1], zero outside the image.
    pub patch: Vec<f64>,
    /// Top-left corner of the patch in input pixels (may be negative).
    pub origin: (i64, i64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopStimuli {
    pub layer: String,
    pub filter: usize,
    pub patch_size: usize,
    pub entries: Vec<Stimulus>,
    /// Set when fewer than the requested number of non-overlapping patches exist.
    pub truncated: bool,
}

/// Grey-level rendering of a network input for display: class index scaled to [0, 1]
/// for multi-channel one-hot maps, min-max scaling otherwise.
fn display_planes(x: &Tensor) -> Result<Vec<f64>> {
    let (n, c, h, w) = x.dims4()?;
    let hw = h * w;
    let d = x.data();
    if c >= 2 {
        let mut out = Vec::with_capacity(n * hw);
        for b in 0..n {
            for p in 0..hw {
                let mut best = 0;
                for k in 1..c {
                    if d[(b * c + k) * hw + p] > d[(b * c + best) * hw + p] {
                        best = k;
                    }
                }
                out.push(best as f64 / (c - 1) as f64);
            }
        }
        return Ok(out);
    }
    let (lo, hi) = d
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
    let span = if hi > lo { hi - lo } else { 1.0 };
    Ok(d.iter().map(|v| (v - lo) / span).collect())
}

/// Ranks every spatial position of `layer`'s channel `filter` over all `inputs` (each a
/// list of network inputs for one batch) and keeps the `k` best patches that do not
/// overlap within a sample. Ties are broken by `(sample, row, col)`.
pub fn top_stimuli(
    net: &Network,
    inputs: &[Vec<Tensor>],
    layer: &str,
    filter: usize,
    k: usize,
) -> Result<TopStimuli> {
    let spec = net.spec();
    let l = spec
        .layer(layer)
        .ok_or_else(|| Error::usage(format!("unknown layer `{layer}`")))?;
    if filter >= l.channels {
        return Err(Error::usage(format!(
            "layer `{layer}` has {} filters, asked for {filter}",
            l.channels
        )));
    }
    let mut ranked: Vec<(f64, usize, usize, usize)> = Vec::new();
    let mut display: Vec<f64> = Vec::new();
    let mut extent = None;
    let mut sample_base = 0;
    for batch in inputs {
        let first = batch
            .first()
            .ok_or_else(|| Error::usage("empty input list"))?;
        let (n, _, h, w) = first.dims4()?;
        if h != w || extent.is_some_and(|e| e != h) {
            return Err(Error::usage("top stimuli need square inputs of one size"));
        }
        extent = Some(h);
        display.extend(display_planes(first)?);
        let mut g = Graph::new();
        let b = net.bind(&mut g, false)?;
        let xs = batch
            .iter()
            .map(|t| g.constant(t))
            .collect::<Result<Vec<_>>>()?;
        let out = net.forward(&mut g, &b, &xs, &[layer])?;
        let a = out.taps[layer];
        let (c, ah, aw) = (g.shape(a)[1], g.shape(a)[2], g.shape(a)[3]);
        let v = g.value(a);
        for s in 0..n {
            for r in 0..ah {
                for col in 0..aw {
                    ranked.push((
                        v[((s * c + filter) * ah + r) * aw + col],
                        sample_base + s,
                        r,
                        col,
                    ));
                }
            }
        }
        sample_base += n;
    }
    let Some(extent) = extent else {
        return Ok(TopStimuli {
            layer: layer.into(),
            filter,
            patch_size: 1,
            entries: vec![],
            truncated: k > 0,
        });
    };
    let geo = receptive_fields(spec, extent)?[layer];
    let patch_size = (geo.size.round() as usize) | 1;
    ranked.sort_by(|a, b| {
        b.0.total_cmp(&a.0)
            .then((a.1, a.2, a.3).cmp(&(b.1, b.2, b.3)))
    });
    let mut chosen: Vec<Stimulus> = Vec::new();
    let half = (patch_size / 2) as i64;
    for &(act, s, r, c) in &ranked {
        if chosen.len() == k {
            break;
        }
        let cy = (geo.offset + geo.jump * r as f64).round() as i64;
        let cx = (geo.offset + geo.jump * c as f64).round() as i64;
        let origin = (cy - half, cx - half);
        let overlaps = chosen.iter().any(|o| {
            o.sample == s
                && (o.origin.0 - origin.0).abs() < patch_size as i64
                && (o.origin.1 - origin.1).abs() < patch_size as i64
        });
        if overlaps {
            continue;
        }
        let hw = extent * extent;
        let mut patch = vec![0.0; patch_size * patch_size];
        for pr in 0..patch_size {
            for pc in 0..patch_size {
                let (y, x) = (origin.0 + pr as i64, origin.1 + pc as i64);
                if (0..extent as i64).contains(&y) && (0..extent as i64).contains(&x) {
                    patch[pr * patch_size + pc] =
                        display[s * hw + y as usize * extent + x as usize];
                }
            }
        }
        chosen.push(Stimulus {
            sample: s,
            row: r,
            col: c,
            activation: act,
            patch,
            origin,
        });
    }
    let truncated = chosen.len() < k;
    Ok(TopStimuli {
        layer: layer.into(),
        filter,
        patch_size,
        entries: chosen,
        truncated,
    })
}

impl TopStimuli {
    /// Patches tiled five per row with a one-pixel white border.
    pub fn montage(&self) -> Result<Mask> {
        let p = self.patch_size;
        let n = self.entries.len().max(1);
        let cols = n.min(5);
        let rows = n.div_ceil(5);
        let width = cols * (p + 1) + 1;
        let height = rows * (p + 1) + 1;
        let mut data = vec![255u8; width * height];
        for (i, e) in self.entries.iter().enumerate() {
            let (tr, tc) = (i / 5, i % 5);
            for r in 0..p {
                for c in 0..p {
                    let y = tr * (p + 1) + 1 + r;
                    let x = tc * (p + 1) + 1 + c;
                    data[y * width + x] =
                        (e.patch[r * p + c].clamp(0.0, 1.0) * 255.0).round() as u8;
                }
            }
        }
        Mask::new(width, height, data)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("rank,sample,row,col,activation,origin_row,origin_col\n");
        for (i, e) in self.entries.iter().enumerate() {
            let _ = writeln!(
                s,
                "{},{},{},{},{:.17e},{},{}",
                i + 1,
                e.sample,
                e.row,
                e.col,
                e.activation,
                e.origin.0,
                e.origin.1
            );
        }
        s
    }
}
