use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Denominator floor for the relative error, so gradients near zero are
/// compared on an absolute scale instead of blowing up the ratio.
const REL_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(tensor index, element index)` of the worst probe.
    pub worst: Option<(usize, usize)>,
    pub probes: usize,
    pub tolerance: f64,
    pub passed: bool,
}

fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR)
}

fn eval(f: &impl Fn(&mut Graph, &[Var]) -> Result<Var>, point: &[Tensor]) -> Result<f64> {
    let mut g = Graph::new();
    let vars = point
        .iter()
        .map(|t| g.param(t))
        .collect::<Result<Vec<_>>>()?;
    let out = f(&mut g, &vars)?;
    if g.value(out).len() != 1 {
        return Err(Error::usage("grad_check needs a scalar-valued graph"));
    }
    let v = g.scalar(out);
    if !v.is_finite() {
        return Err(Error::numeric(
            "grad_check",
            "non-finite loss at probe point",
        ));
    }
    Ok(v)
}

/// Compares tape gradients against central finite differences.
///
/// At most `max_probes` coordinates per tensor are perturbed, chosen with a
/// seeded sampler so reports are reproducible.
pub fn grad_check<F>(
    f: F,
    point: &[Tensor],
    step: f64,
    tolerance: f64,
    max_probes: usize,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars = point
        .iter()
        .map(|t| g.param(t))
        .collect::<Result<Vec<_>>>()?;
    let out = f(&mut g, &vars)?;
    if !g.scalar(out).is_finite() {
        return Err(Error::numeric(
            "grad_check",
            "non-finite loss at probe point",
        ));
    }
    let grads = g.backward(out)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe_point = point.to_vec();
    let mut max_rel_error = 0.0f64;
    let mut worst = None;
    let mut probes = 0;
    for (ti, t) in point.iter().enumerate() {
        let idxs: Vec<usize> = if t.len() <= max_probes {
            (0..t.len()).collect()
        } else {
            let mut v = sample(&mut rng, t.len(), max_probes).into_vec();
            v.sort_unstable();
            v
        };
        let analytic = grads.get(vars[ti]);
        for i in idxs {
            let a = analytic.map_or(0.0, |g| g[i]);
            let orig = t.data()[i];
            probe_point[ti].data_mut()[i] = orig + step;
            let up = eval(&f, &probe_point)?;
            probe_point[ti].data_mut()[i] = orig - step;
            let down = eval(&f, &probe_point)?;
            probe_point[ti].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * step);
            let e = rel_error(a, numeric);
            probes += 1;
            if e > max_rel_error || worst.is_none() {
                max_rel_error = max_rel_error.max(e);
                worst = Some((ti, i));
            }
        }
    }
    Ok(GradCheckReport {
        max_rel_error,
        worst,
        probes,
        tolerance,
        passed: max_rel_error <= tolerance,
    })
}
