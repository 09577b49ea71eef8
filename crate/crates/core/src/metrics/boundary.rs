//! Boundary precision/recall with one-to-one matching inside a distance tolerance.

use crate::error::{Error, Result};

/// Pixels of class `class` that have a 4-neighbour with a different label.
pub fn boundary_pixels(mask: &[u8], width: usize, height: usize, class: u8) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for r in 0..height {
        for c in 0..width {
            if mask[r * width + c] != class {
                continue;
            }
            let differs = |rr: usize, cc: usize| mask[rr * width + cc] != class;
            let edge = (r > 0 && differs(r - 1, c))
                || (r + 1 < height && differs(r + 1, c))
                || (c > 0 && differs(r, c - 1))
                || (c + 1 < width && differs(r, c + 1));
            if edge {
                out.push((r, c));
            }
        }
    }
    out
}

/// Size of a maximum matching between `a` and `b` where pairs within `tol` (Euclidean) may match.
pub fn max_matching(a: &[(usize, usize)], b: &[(usize, usize)], tol: f64) -> usize {
    let tol2 = tol * tol;
    let adj: Vec<Vec<usize>> = a
        .iter()
        .map(|&(r, c)| {
            b.iter()
                .enumerate()
                .filter(|(_, &(rr, cc))| {
                    let dr = r as f64 - rr as f64;
                    let dc = c as f64 - cc as f64;
                    dr * dr + dc * dc <= tol2
                })
                .map(|(j, _)| j)
                .collect()
        })
        .collect();
    let mut owner: Vec<Option<usize>> = vec![None; b.len()];
    let mut matched = 0;
    for i in 0..a.len() {
        if adj[i].is_empty() {
            continue;
        }
        let mut seen = vec![false; b.len()];
        if augment(i, &adj, &mut owner, &mut seen) {
            matched += 1;
        }
    }
    matched
}

fn augment(i: usize, adj: &[Vec<usize>], owner: &mut [Option<usize>], seen: &mut [bool]) -> bool {
    for &j in &adj[i] {
        if seen[j] {
            continue;
        }
        seen[j] = true;
        if owner[j].is_none_or(|k| augment(k, adj, owner, seen)) {
            owner[j] = Some(i);
            return true;
        }
    }
    false
}

/// Matched and total boundary-pixel counts for one class; these add across images.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BoundaryCounts {
    pub matched: usize,
    pub pred: usize,
    pub gt: usize,
}

impl BoundaryCounts {
    pub fn merge(&mut self, o: BoundaryCounts) {
        self.matched += o.matched;
        self.pred += o.pred;
        self.gt += o.gt;
    }

    pub fn prf(&self) -> BoundaryPrf {
        let p = if self.pred > 0 {
            self.matched as f64 / self.pred as f64
        } else {
            0.0
        };
        let r = if self.gt > 0 {
            self.matched as f64 / self.gt as f64
        } else {
            0.0
        };
        let f = if p + r > 0.0 {
            2.0 * p * r / (p + r)
        } else {
            0.0
        };
        BoundaryPrf {
            precision: p,
            recall: r,
            f_measure: f,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryPrf {
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
}

/// Default matching tolerance: 0.0075 of the image diagonal.
pub fn default_tolerance(width: usize, height: usize) -> f64 {
    0.0075 * ((width * width + height * height) as f64).sqrt()
}

/// Per-class boundary counts for one image.
pub fn boundary_counts(
    pred: &[u8],
    gt: &[u8],
    width: usize,
    height: usize,
    classes: usize,
    tolerance: f64,
) -> Result<Vec<BoundaryCounts>> {
    if pred.len() != width * height || gt.len() != width * height {
        return Err(Error::usage("boundary masks must match the stated size"));
    }
    if !(tolerance >= 0.0) {
        return Err(Error::usage("boundary tolerance must be non-negative"));
    }
    Ok((0..classes)
        .map(|c| {
            let bp = boundary_pixels(pred, width, height, c as u8);
            let bg = boundary_pixels(gt, width, height, c as u8);
            BoundaryCounts {
                matched: max_matching(&bp, &bg, tolerance),
                pred: bp.len(),
                gt: bg.len(),
            }
        })
        .collect())
}

/// Per-class boundary precision, recall and F; `None` where neither mask has a boundary.
pub fn boundary_prf(
    pred: &[u8],
    gt: &[u8],
    width: usize,
    height: usize,
    classes: usize,
    tolerance: f64,
) -> Result<Vec<Option<BoundaryPrf>>> {
    Ok(
        boundary_counts(pred, gt, width, height, classes, tolerance)?
            .into_iter()
            .map(|c| (c.pred + c.gt > 0).then(|| c.prf()))
            .collect(),
    )
}
