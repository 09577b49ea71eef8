//! Executable checks of the minimax game's theory on small, fully controlled cases.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::steps::{asm_between, sr_objective};
use crate::error::{Error, Result};
use crate::losses::asm_loss;
use crate::nets::{build_network, load_template, Network, NetworkSpec};
use crate::task::TaskKind;
use crate::tensor::{global_grad_norm, Graph, OptimizerKind, OptimizerState, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct TheoryProbeConfig {
    /// Linear analyzer weights swept in part (a).
    pub ws: Vec<f64>,
    /// Single-coordinate perturbations for part (a).
    pub epsilons: Vec<f64>,
    /// Randomized cases for the zero-value equivalence of part (b).
    pub cases: usize,
    /// Analyzer ascent steps against an oracle predictor in part (c).
    pub ascent_steps: usize,
    pub ascent_lr: f64,
    /// `lr_A / lr_S` ratios for part (d).
    pub lr_ratios: Vec<f64>,
    pub lr_s: f64,
    pub runs_per_ratio: usize,
    pub game_steps: usize,
    pub seed: u64,
}

impl Default for TheoryProbeConfig {
    fn default() -> Self {
        let mut ws = vec![0.0];
        ws.extend((-2..=20).map(|k| 2f64.powi(k)));
        Self {
            ws,
            epsilons: vec![0.0, 0.1, 1.0],
            cases: 1000,
            ascent_steps: 100,
            ascent_lr: 1e-3,
            lr_ratios: vec![0.25, 0.5, 1.0, 2.0, 4.0, 8.0],
            lr_s: 0.05,
            runs_per_ratio: 50,
            game_steps: 200,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DivergenceRow {
    pub epsilon: f64,
    pub w: f64,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EquivalenceSummary {
    pub cases: usize,
    /// Cases whose prediction equals the target.
    pub identical: usize,
    /// Cases whose ASM value is exactly zero.
    pub zero_values: usize,
    /// Cases where "value is zero" and "prediction equals target" agree.
    pub agreements: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquilibriumStep {
    pub step: usize,
    pub value: f64,
    /// Norm of the ASM term's gradient with respect to the analyzer.
    pub grad_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrRatioRow {
    pub ratio: f64,
    pub runs: usize,
    pub diverged: usize,
}

impl LrRatioRow {
    pub fn frequency(&self) -> f64 {
        if self.runs == 0 {
            0.0
        } else {
            self.diverged as f64 / self.runs as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TheoryReport {
    pub divergence: Vec<DivergenceRow>,
    pub equivalence: EquivalenceSummary,
    pub equilibrium: Vec<EquilibriumStep>,
    pub lr_sweep: Vec<LrRatioRow>,
}

/// Single-layer linear analyzer: a 1x1 convolution tapped before any nonlinearity.
pub fn linear_analyzer(channels: usize, weights: &[f64]) -> Result<Network> {
    let role = match channels {
        1 => "depth",
        3 => "normal",
        _ => "segmentation",
    };
    let spec = NetworkSpec::parse(&format!(
        "@role\tanalyzer\n@input\tinput\t{channels}\n@head\toutput\t{role}\n@taps\toutput\n\
         output\tinput\t1\t{channels}\t1\t1\t0\n"
    ))?;
    let mut net = build_network(&spec, 0)?;
    if weights.len() != channels * channels {
        return Err(Error::usage("linear analyzer needs a square weight matrix"));
    }
    net.params_mut()[0].data_mut().copy_from_slice(weights);
    net.params_mut()[1].data_mut().fill(0.0);
    Ok(net)
}

const LINEAR_TAP: &str = "output";

fn linear_value(analyzer: &Network, pred: &Tensor, target: &Tensor) -> Result<f64> {
    Ok(asm_between(
        analyzer,
        &[LINEAR_TAP.into()],
        std::slice::from_ref(pred),
        std::slice::from_ref(target),
    )?
    .scalar)
}

/// Part (a): ASM value of a linear analyzer with weight `w` against a prediction
/// that differs from the target by `ε` in one coordinate.
pub fn divergence_curve(ws: &[f64], epsilons: &[f64], seed: u64) -> Result<Vec<DivergenceRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y = Tensor::from_vec(
        vec![1, 1, 4, 4],
        (0..16).map(|_| rng.gen_range(0.0..1.0)).collect(),
    )?;
    let mut rows = Vec::new();
    for &eps in epsilons {
        let mut pred = y.clone();
        pred.data_mut()[5] += eps;
        for &w in ws {
            let a = linear_analyzer(1, &[w])?;
            rows.push(DivergenceRow {
                epsilon: eps,
                w,
                value: linear_value(&a, &pred, &y)?,
            });
        }
    }
    Ok(rows)
}

/// Whether every `ε ≠ 0` curve is strictly increasing in `|w|`.
pub fn strictly_increasing(rows: &[DivergenceRow]) -> bool {
    let mut eps: Vec<f64> = rows
        .iter()
        .map(|r| r.epsilon)
        .filter(|e| *e != 0.0)
        .collect();
    eps.dedup();
    eps.iter().all(|&e| {
        let mut curve: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| r.epsilon == e)
            .map(|r| (r.w.abs(), r.value))
            .collect();
        curve.sort_by(|a, b| a.0.total_cmp(&b.0));
        curve.windows(2).all(|p| p[1].0 > p[0].0 && p[1].1 > p[0].1)
    })
}

/// Part (b): on random small cases, the value is zero exactly when prediction equals target.
pub fn equivalence_check(cases: usize, seed: u64) -> Result<EquivalenceSummary> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = EquivalenceSummary {
        cases,
        ..Default::default()
    };
    for _ in 0..cases {
        let c = rng.gen_range(1..=3);
        let (h, w) = (rng.gen_range(2..=5), rng.gen_range(2..=5));
        let n = c * h * w;
        let y = Tensor::from_vec(
            vec![1, c, h, w],
            (0..n).map(|_| rng.gen_range(0.0..1.0)).collect(),
        )?;
        let mut pred = y.clone();
        let same = rng.gen_bool(0.5);
        if !same {
            for _ in 0..rng.gen_range(1..=3) {
                let i = rng.gen_range(0..n);
                let mag = rng.gen_range(1e-3..1.0);
                pred.data_mut()[i] += if rng.gen_bool(0.5) { mag } else { -mag };
            }
        }
        let weights: Vec<f64> = (0..c * c)
            .map(|i| {
                let v: f64 = rng.gen_range(0.2..2.0);
                if i % (c + 1) == 0 {
                    v
                } else {
                    0.1 * (v - 1.1)
                }
            })
            .collect();
        let a = linear_analyzer(c, &weights)?;
        let value = linear_value(&a, &pred, &y)?;
        let equal = pred == y;
        s.identical += equal as usize;
        s.zero_values += (value == 0.0) as usize;
        s.agreements += ((value == 0.0) == equal) as usize;
    }
    Ok(s)
}

/// Part (c): with an oracle predictor `S(x) = y`, a full-size analyzer trained on the
/// ascent objective (plus its reconstruction term) never sees a nonzero value.
pub fn equilibrium_trace(steps: usize, lr: f64, seed: u64) -> Result<Vec<EquilibriumStep>> {
    let spec = load_template("dense_analyzer")?
        .scaled_width(4)?
        .retarget(TaskKind::Depth, 2, 1)?;
    let mut analyzer = build_network(&spec, seed)?;
    let taps = spec.taps.clone();
    let tap_refs: Vec<&str> = taps.iter().map(String::as_str).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y = Tensor::from_vec(
        vec![2, 1, 16, 16],
        (0..512).map(|_| rng.gen_range(1.0..6.0)).collect(),
    )?;
    let oracle = y.clone();
    let mut opt = OptimizerState::new(OptimizerKind::adam(), 0.0);
    let mut trace = Vec::with_capacity(steps);
    for step in 1..=steps {
        let mut g = Graph::new();
        let a = analyzer.bind(&mut g, true)?;
        let p = g.constant(&oracle)?;
        let t = g.constant(&y)?;
        let fp = analyzer.forward(&mut g, &a, &[p], &tap_refs)?;
        let ft = analyzer.forward(&mut g, &a, &[t], &tap_refs)?;
        let asm = asm_loss(&mut g, &fp.taps, &ft.taps)?;
        analyzer.zero_grads();
        analyzer.collect_grads(&g.backward(asm.var)?, &a)?;
        let grad_norm = global_grad_norm(analyzer.params());
        trace.push(EquilibriumStep {
            step,
            value: asm.scalar,
            grad_norm,
        });
        let neg = g.scale(asm.var, -1.0)?;
        let sr = sr_objective(&mut g, TaskKind::Depth, &ft.heads, &[t])?;
        let loss = g.add(neg, sr)?;
        analyzer.zero_grads();
        analyzer.collect_grads(&g.backward(loss)?, &a)?;
        analyzer
            .params_mut()
            .iter_mut()
            .for_each(Tensor::touch_grad);
        opt.step(analyzer.params_mut(), lr)?;
    }
    Ok(trace)
}

/// Part (d): a per-coordinate linear game `V = ½ Σ (w_i d_i)²` where the analyzer ascends
/// in `w` at `ratio · lr_s` and the predictor then descends in the residual `d`.
/// A run diverges when `V` exceeds 1e8 or stops being finite.
pub fn lr_ratio_sweep(
    ratios: &[f64],
    lr_s: f64,
    runs: usize,
    steps: usize,
    seed: u64,
) -> Vec<LrRatioRow> {
    const DIM: usize = 8;
    let value =
        |w: &[f64], d: &[f64]| 0.5 * w.iter().zip(d).map(|(a, b)| (a * b).powi(2)).sum::<f64>();
    ratios
        .iter()
        .map(|&ratio| {
            let lr_a = ratio * lr_s;
            let mut diverged = 0;
            for run in 0..runs {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(run as u64);
                let normal = rand_distr::StandardNormal;
                let mut w: Vec<f64> = (0..DIM).map(|_| rng.sample::<f64, _>(normal)).collect();
                let mut d: Vec<f64> = (0..DIM)
                    .map(|_| 2.0 * rng.sample::<f64, _>(normal))
                    .collect();
                for _ in 0..steps {
                    for (wi, di) in w.iter_mut().zip(&d) {
                        *wi += lr_a * *wi * di * di;
                    }
                    for (di, wi) in d.iter_mut().zip(&w) {
                        *di -= lr_s * wi * wi * *di;
                    }
                    let v = value(&w, &d);
                    if !v.is_finite() || v > 1e8 {
                        diverged += 1;
                        break;
                    }
                }
            }
            LrRatioRow {
                ratio,
                runs,
                diverged,
            }
        })
        .collect()
}

pub fn theory_probe(cfg: &TheoryProbeConfig) -> Result<TheoryReport> {
    if cfg.ws.is_empty() || cfg.epsilons.is_empty() || cfg.lr_ratios.is_empty() {
        return Err(Error::config("theory probe grids must be nonempty"));
    }
    Ok(TheoryReport {
        divergence: divergence_curve(&cfg.ws, &cfg.epsilons, cfg.seed)?,
        equivalence: equivalence_check(cfg.cases, cfg.seed)?,
        equilibrium: equilibrium_trace(cfg.ascent_steps, cfg.ascent_lr, cfg.seed)?,
        lr_sweep: lr_ratio_sweep(
            &cfg.lr_ratios,
            cfg.lr_s,
            cfg.runs_per_ratio,
            cfg.game_steps,
            cfg.seed,
        ),
    })
}

impl TheoryReport {
    pub fn divergence_increasing(&self) -> bool {
        strictly_increasing(&self.divergence)
    }

    /// Largest `|value|` along the equilibrium trace.
    pub fn equilibrium_max(&self) -> f64 {
        self.equilibrium
            .iter()
            .fold(0.0, |m, s| m.max(s.value.abs()))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("# divergence\nepsilon,w,value\n");
        for r in &self.divergence {
            let _ = writeln!(s, "{},{},{}", r.epsilon, r.w, r.value);
        }
        let e = &self.equivalence;
        let _ = write!(
            s,
            "\n# equivalence\ncases,identical,zero_values,agreements\n{},{},{},{}\n",
            e.cases, e.identical, e.zero_values, e.agreements
        );
        s.push_str("\n# equilibrium\nstep,value,grad_norm\n");
        for r in &self.equilibrium {
            let _ = writeln!(s, "{},{},{}", r.step, r.value, r.grad_norm);
        }
        s.push_str("\n# lr_sweep\nratio,runs,diverged,frequency\n");
        for r in &self.lr_sweep {
            let _ = writeln!(s, "{},{},{},{}", r.ratio, r.runs, r.diverged, r.frequency());
        }
        s
    }
}
