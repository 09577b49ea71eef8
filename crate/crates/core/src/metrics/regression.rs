//! Depth and surface-normal error measures.

use crate::error::{Error, Result};

pub const DELTA_EXPONENTS: [f64; 5] = [0.25, 0.5, 1.0, 2.0, 3.0];
pub const ANGLE_THRESHOLDS: [f64; 5] = [2.82, 5.63, 11.25, 22.5, 30.0];

pub fn delta_thresholds() -> [f64; 5] {
    DELTA_EXPONENTS.map(|e| 1.25f64.powf(e))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthMetrics {
    pub rel: f64,
    pub log10: f64,
    pub rms: f64,
    /// Fractions with `max(gt/pred, pred/gt) < 1.25^e` for the exponents in [`DELTA_EXPONENTS`].
    pub delta: [f64; 5],
    pub pixels: usize,
}

/// Running sums for depth metrics; merging in a fixed order keeps results deterministic.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DepthAccumulator {
    abs_rel: f64,
    sq: f64,
    sq_log10: f64,
    within: [u64; 5],
    n: usize,
}

impl DepthAccumulator {
    pub fn add(&mut self, pred: &[f64], gt: &[f64], valid: Option<&[bool]>) -> Result<()> {
        if pred.len() != gt.len() || valid.is_some_and(|v| v.len() != gt.len()) {
            return Err(Error::usage("depth maps differ in size"));
        }
        let thr = delta_thresholds();
        for i in 0..gt.len() {
            if valid.is_some_and(|v| !v[i]) {
                continue;
            }
            let (p, y) = (pred[i], gt[i]);
            if !(p > 0.0) || !(y > 0.0) {
                return Err(Error::data(format!(
                    "non-positive depth at pixel {i} (pred {p}, gt {y})"
                )));
            }
            self.abs_rel += (p - y).abs() / y;
            self.sq += (p - y).powi(2);
            self.sq_log10 += (p.log10() - y.log10()).powi(2);
            let ratio = (p / y).max(y / p);
            for (k, t) in thr.iter().enumerate() {
                if ratio < *t {
                    self.within[k] += 1;
                }
            }
            self.n += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, o: &DepthAccumulator) {
        self.abs_rel += o.abs_rel;
        self.sq += o.sq;
        self.sq_log10 += o.sq_log10;
        for k in 0..5 {
            self.within[k] += o.within[k];
        }
        self.n += o.n;
    }

    pub fn finish(&self) -> Option<DepthMetrics> {
        if self.n == 0 {
            return None;
        }
        let n = self.n as f64;
        Some(DepthMetrics {
            rel: self.abs_rel / n,
            log10: (self.sq_log10 / n).sqrt(),
            rms: (self.sq / n).sqrt(),
            delta: self.within.map(|w| w as f64 / n),
            pixels: self.n,
        })
    }
}

pub fn depth_metrics(pred: &[f64], gt: &[f64], valid: Option<&[bool]>) -> Result<DepthMetrics> {
    let mut acc = DepthAccumulator::default();
    acc.add(pred, gt, valid)?;
    acc.finish()
        .ok_or_else(|| Error::data("no valid depth pixels"))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalMetrics {
    pub mean: f64,
    /// Lower midpoint for even counts.
    pub median: f64,
    /// Fractions with angle `<= t` for the thresholds in [`ANGLE_THRESHOLDS`].
    pub within: [f64; 5],
    pub pixels: usize,
}

/// Angle in degrees between `pred` (normalized with a 1e-8 norm floor) and `gt`.
pub fn angle_deg(pred: [f64; 3], gt: [f64; 3]) -> f64 {
    let n = (pred[0] * pred[0] + pred[1] * pred[1] + pred[2] * pred[2])
        .sqrt()
        .max(1e-8);
    let p = pred.map(|v| v / n);
    let dot = p[0] * gt[0] + p[1] * gt[1] + p[2] * gt[2];
    let cross = [
        p[1] * gt[2] - p[2] * gt[1],
        p[2] * gt[0] - p[0] * gt[2],
        p[0] * gt[1] - p[1] * gt[0],
    ];
    let cn = (cross[0] * cross[0] + cross[1] * cross[1] + cross[2] * cross[2]).sqrt();
    cn.atan2(dot).to_degrees()
}

/// Per-pixel angles for channel-major `3 x HW` maps, skipping invalid pixels.
pub fn normal_angles(pred: &[f64], gt: &[f64], valid: Option<&[bool]>) -> Result<Vec<f64>> {
    if pred.len() != gt.len() || !pred.len().is_multiple_of(3) {
        return Err(Error::usage(
            "normal maps must be 3-channel and equal in size",
        ));
    }
    let hw = gt.len() / 3;
    if valid.is_some_and(|v| v.len() != hw) {
        return Err(Error::usage("valid mask size mismatch"));
    }
    Ok((0..hw)
        .filter(|&i| valid.is_none_or(|v| v[i]))
        .map(|i| {
            angle_deg(
                [pred[i], pred[hw + i], pred[2 * hw + i]],
                [gt[i], gt[hw + i], gt[2 * hw + i]],
            )
        })
        .collect())
}

pub fn summarize_angles(angles: &[f64]) -> Option<NormalMetrics> {
    if angles.is_empty() {
        return None;
    }
    let n = angles.len();
    let mut sorted = angles.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[(n - 1) / 2];
    let mean = angles.iter().sum::<f64>() / n as f64;
    let within =
        ANGLE_THRESHOLDS.map(|t| angles.iter().filter(|&&a| a <= t).count() as f64 / n as f64);
    Some(NormalMetrics {
        mean,
        median,
        within,
        pixels: n,
    })
}

pub fn normal_metrics(pred: &[f64], gt: &[f64], valid: Option<&[bool]>) -> Result<NormalMetrics> {
    summarize_angles(&normal_angles(pred, gt, valid)?)
        .ok_or_else(|| Error::data("no valid normal pixels"))
}
