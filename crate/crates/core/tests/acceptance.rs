//! Acceptance suite. Prints one PASS/FAIL line per criterion and a summary line. Failures
//! make the process exit nonzero only when `ASMLAB_ACCEPTANCE_STRICT=1` is set.
//!
//! `cargo test --release --test acceptance` runs everything; trailing numbers select criteria
//! (`cargo test --release --test acceptance -- 1 3`).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use asmlab::cli::Cli;
use asmlab::data::{
    decode_pfm, decode_pgm, encode_pfm, encode_pgm, read_pfm, read_pgm, write_pfm, write_pgm,
    DatasetManifest, FloatMap, GenConfig, Mask, Sample, SampleRecord,
};
use asmlab::losses::{
    asm_loss, cross_entropy_logits, gan_losses, iid_loss, normalized_l2, sr_loss, sr_loss_logits,
};
use asmlab::metrics::{
    boundary_pixels, boundary_prf, depth_metrics, evaluate_predictions, max_matching,
    normal_metrics, seg_metrics, MetricsReport, DELTA_EXPONENTS,
};
use asmlab::nets::{
    build_network, deserialize_network, serialize_network, Network, NetworkSpec, Template,
};
use asmlab::tensor::{grad_check, GradCheckReport, Graph, Padding, Tensor, Var};
use asmlab::training::{
    asm_grad_check, build_models, divergence_curve, equilibrium_trace, equivalence_check, predict,
    strictly_increasing, Batch, Phase, Regime, TrainConfig, Trainer,
};
use asmlab::{Error, Result, TaskKind};
use clap::Parser;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Result<Verdict> {
    Ok(Verdict {
        pass,
        detail: detail.into(),
    })
}

// ---------------------------------------------------------------- 1: gradients

/// Zero-initialized biases put ReLU inputs exactly on the kink wherever the input is flat,
/// so gradients are checked at a nearby generic point instead.
fn jitter_biases(net: &mut Network, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in net.params_mut().iter_mut().filter(|p| p.shape().len() == 1) {
        for v in p.data_mut() {
            *v = rng.gen_range(-0.1..0.1);
        }
    }
}

/// Contracts `v` against fixed pseudo-random weights so every output element matters.
fn contract(g: &mut Graph, v: Var) -> Result<Var> {
    let shape = g.shape(v).to_vec();
    let n: usize = shape.iter().product();
    let w = g.constant_from(
        shape,
        (0..n).map(|i| (1.3 * i as f64 + 0.7).sin()).collect(),
    )?;
    let m = g.mul(v, w)?;
    g.sum(m)
}

fn randn(rng: &mut ChaCha8Rng, shape: Vec<usize>, std: f64) -> Tensor {
    Tensor::randn(shape, std, rng)
}

fn positive(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(0.2..3.0)).collect()).unwrap()
}

fn one_hot(rng: &mut ChaCha8Rng, n: usize, c: usize, h: usize, w: usize) -> Tensor {
    let mut d = vec![0.0; n * c * h * w];
    for b in 0..n {
        for p in 0..h * w {
            d[(b * c + rng.gen_range(0..c)) * h * w + p] = 1.0;
        }
    }
    Tensor::from_vec(vec![n, c, h, w], d).unwrap()
}

fn check<F>(
    name: &str,
    f: F,
    point: &[Tensor],
    reports: &mut Vec<(String, GradCheckReport)>,
) -> Result<()>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let r = grad_check(f, point, 1e-6, 1e-5, 24, reports.len() as u64)?;
    reports.push((name.to_string(), r));
    Ok(())
}

fn gradients() -> Result<Verdict> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut reports = Vec::new();
    for round in 0..3 {
        let n = rng.gen_range(1..3);
        let c = rng.gen_range(1..5);
        let h = rng.gen_range(4..10);
        let w = rng.gen_range(4..10);
        let x = randn(&mut rng, vec![n, c, h, w], 1.0);
        let y = randn(&mut rng, vec![n, c, h, w], 1.0);
        let k = [1, 3, 5][round];
        let co = rng.gen_range(1..5);
        let wt = randn(&mut rng, vec![co, c, k, k], 0.5);
        let bias = randn(&mut rng, vec![co], 0.1);
        let p = x.clone();
        for (stride, pad) in [
            (1, Padding::Same),
            (2, Padding::Same),
            (1, Padding::Explicit(k / 2)),
            (2, Padding::Explicit(1)),
        ] {
            check(
                &format!("conv2d k{k} s{stride} {pad:?}"),
                |g, v| {
                    let o = g.conv2d(v[0], v[1], Some(v[2]), stride, pad)?;
                    contract(g, o)
                },
                &[x.clone(), wt.clone(), bias.clone()],
                &mut reports,
            )?;
        }
        check(
            "conv2d no bias",
            |g, v| {
                let o = g.conv2d(v[0], v[1], None, 1, Padding::Same)?;
                contract(g, o)
            },
            &[x.clone(), wt.clone()],
            &mut reports,
        )?;
        type Unary = fn(&mut Graph, Var) -> Result<Var>;
        let unary: [(&str, Unary); 10] = [
            ("relu", |g, v| g.relu(v)),
            ("sigmoid", |g, v| g.sigmoid(v)),
            ("softplus", |g, v| g.softplus(v)),
            ("scale", |g, v| g.scale(v, -1.7)),
            ("square", |g, v| g.square(v)),
            ("softmax", |g, v| g.softmax_channels(v)),
            ("log_softmax", |g, v| g.log_softmax_channels(v)),
            ("normalize", |g, v| g.normalize_channels(v, 1e-8)),
            ("global_avg_pool", |g, v| g.global_avg_pool(v)),
            ("upsample x2", |g, v| g.bilinear_upsample(v, 2)),
        ];
        for (name, op) in unary {
            check(
                name,
                |g, v| {
                    let o = op(g, v[0])?;
                    contract(g, o)
                },
                std::slice::from_ref(&p),
                &mut reports,
            )?;
        }
        check(
            "upsample x3",
            |g, v| {
                let o = g.bilinear_upsample(v[0], 3)?;
                contract(g, o)
            },
            std::slice::from_ref(&p),
            &mut reports,
        )?;
        check(
            "log",
            |g, v| {
                let o = g.log(v[0])?;
                contract(g, o)
            },
            &[positive(&mut rng, vec![n, c, h, w])],
            &mut reports,
        )?;
        check(
            "mean",
            |g, v| {
                let s = g.square(v[0])?;
                g.mean(s)
            },
            std::slice::from_ref(&p),
            &mut reports,
        )?;
        type Binary = fn(&mut Graph, Var, Var) -> Result<Var>;
        let binary: [(&str, Binary); 4] = [
            ("add", |g, a, b| g.add(a, b)),
            ("sub", |g, a, b| g.sub(a, b)),
            ("mul", |g, a, b| g.mul(a, b)),
            ("concat", |g, a, b| g.concat_channels(&[a, b])),
        ];
        for (name, op) in binary {
            check(
                name,
                |g, v| {
                    let o = op(g, v[0], v[1])?;
                    contract(g, o)
                },
                &[x.clone(), y.clone()],
                &mut reports,
            )?;
        }
        check(
            "affine_norm",
            |g, v| {
                let o = g.affine_norm(v[0], v[1], v[2])?;
                contract(g, o)
            },
            &[
                x.clone(),
                randn(&mut rng, vec![c], 1.0),
                randn(&mut rng, vec![c], 1.0),
            ],
            &mut reports,
        )?;

        let cls = c.max(2);
        let t = one_hot(&mut rng, n, cls, h, w);
        let logits = randn(&mut rng, vec![n, cls, h, w], 1.0);
        check(
            "cross_entropy",
            |g, v| {
                let yv = g.constant(&t)?;
                cross_entropy_logits(g, yv, v[0])
            },
            std::slice::from_ref(&logits),
            &mut reports,
        )?;
        let nt = randn(&mut rng, vec![n, 3, h, w], 1.0);
        check(
            "normalized_l2",
            |g, v| {
                let yv = g.constant(&nt)?;
                normalized_l2(g, yv, v[0])
            },
            &[randn(&mut rng, vec![n, 3, h, w], 1.0)],
            &mut reports,
        )?;
        let depth_t = positive(&mut rng, vec![n, 1, h, w]);
        for task in [TaskKind::Depth, TaskKind::Segmentation] {
            let (target, pred) = match task {
                TaskKind::Depth => (depth_t.clone(), positive(&mut rng, vec![n, 1, h, w])),
                _ => (t.clone(), randn(&mut rng, vec![n, cls, h, w], 1.0)),
            };
            check(
                &format!("iid_loss {task}"),
                |g, v| {
                    let yv = g.constant(&target)?;
                    Ok(iid_loss(g, task, yv, v[0])?.var)
                },
                std::slice::from_ref(&pred),
                &mut reports,
            )?;
            check(
                &format!("sr_loss {task}"),
                |g, v| {
                    let yv = g.constant(&target)?;
                    Ok(match task {
                        TaskKind::Segmentation => sr_loss_logits(g, task, yv, v[0])?,
                        _ => sr_loss(g, task, yv, v[0])?,
                    }
                    .var)
                },
                &[pred],
                &mut reports,
            )?;
        }
        check(
            "gan_losses",
            |g, v| {
                let (d, gen) = gan_losses(g, v[0], v[1])?;
                g.add(d.var, gen.var)
            },
            &[
                randn(&mut rng, vec![n, 1, h, w], 2.0),
                randn(&mut rng, vec![n, 1, h, w], 2.0),
            ],
            &mut reports,
        )?;
        check(
            "asm_loss",
            |g, v| {
                let fp: BTreeMap<String, Var> =
                    [("a".to_string(), v[0]), ("b".to_string(), v[2])].into();
                let fy: BTreeMap<String, Var> =
                    [("a".to_string(), v[1]), ("b".to_string(), v[3])].into();
                Ok(asm_loss(g, &fp, &fy)?.var)
            },
            &[
                x.clone(),
                y.clone(),
                randn(&mut rng, vec![n, 2, 3, 3], 1.0),
                randn(&mut rng, vec![n, 2, 3, 3], 1.0),
            ],
            &mut reports,
        )?;
    }

    for (i, task) in [
        TaskKind::Segmentation,
        TaskKind::Depth,
        TaskKind::Normal,
        TaskKind::Joint,
    ]
    .into_iter()
    .enumerate()
    {
        let mut cfg = TrainConfig::new(Regime::Asm, task);
        cfg.width_divisor = 16;
        cfg.seed = i as u64;
        let mut m = build_models(&cfg)?;
        jitter_biases(&mut m.predictor, 31 + i as u64);
        jitter_biases(
            m.analyzer.as_mut().expect("asm builds an analyzer"),
            41 + i as u64,
        );
        let gen = GenConfig {
            task,
            size: 16,
            seed: 5,
            ..GenConfig::default()
        };
        let samples = [gen.sample(0)?, gen.sample(1)?];
        let refs: Vec<&Sample> = samples.iter().collect();
        let batch = Batch::from_samples(&refs, task, cfg.classes)?;
        let analyzer = m.analyzer.as_ref().expect("asm builds an analyzer");
        let r = asm_grad_check(
            &m.predictor,
            analyzer,
            &m.taps,
            task,
            &batch,
            1e-6,
            1e-5,
            4,
            21 + i as u64,
        )?;
        reports.push((format!("ASM objective ({task}) through S and A"), r));
    }

    let secs = start.elapsed().as_secs_f64();
    let failed: Vec<String> = reports
        .iter()
        .filter(|(_, r)| !r.passed)
        .map(|(n, r)| format!("{n} ({:.2e})", r.max_rel_error))
        .collect();
    let worst = reports
        .iter()
        .map(|(_, r)| r.max_rel_error)
        .fold(0.0, f64::max);
    let probes: usize = reports.iter().map(|(_, r)| r.probes).sum();
    verdict(
        failed.is_empty() && secs < 60.0,
        format!(
            "{} checks, {probes} probes, worst relative error {worst:.2e} (tol 1e-5), {secs:.1} s{}",
            reports.len(),
            if failed.is_empty() { String::new() } else { format!("; failing: {}", failed.join(", ")) }
        ),
    )
}

// ---------------------------------------------------------------- 2: theory

fn theory() -> Result<Verdict> {
    let trace = equilibrium_trace(100, 1e-3, 0)?;
    let eq_max = trace
        .iter()
        .map(|s| s.value.abs().max(s.grad_norm))
        .fold(0.0, f64::max);
    let eq_ok = trace.len() == 100 && eq_max <= 1e-12;

    let mut ws = vec![0.0];
    ws.extend((-2..=20).map(|k| 2f64.powi(k)));
    let rows = divergence_curve(&ws, &[0.0, 1e-3, 0.1, 1.0], 7)?;
    let mirrored: Vec<f64> = ws.iter().map(|w| -w).collect();
    let symmetric = divergence_curve(&mirrored, &[0.0, 1e-3, 0.1, 1.0], 7)?
        .iter()
        .zip(&rows)
        .all(|(a, b)| a.value == b.value);
    let zero_eps = rows
        .iter()
        .filter(|r| r.epsilon == 0.0)
        .all(|r| r.value == 0.0);
    let smallest_top = rows
        .iter()
        .filter(|r| r.epsilon != 0.0 && r.w == 2f64.powi(20))
        .map(|r| r.value)
        .fold(f64::INFINITY, f64::min);
    let smallest_start = rows
        .iter()
        .filter(|r| r.epsilon != 0.0 && r.w == 0.25)
        .map(|r| r.value)
        .fold(f64::INFINITY, f64::min);
    // The value is quadratic in w, so 22 doublings must multiply it by 4^22.
    let grows = smallest_top >= smallest_start * 4f64.powi(22) * (1.0 - 1e-9);
    let div_ok = strictly_increasing(&rows) && zero_eps && grows && symmetric;

    let e = equivalence_check(1000, 3)?;
    let eqv_ok = e.cases == 1000 && e.agreements == 1000 && e.identical > 0 && e.identical < 1000;

    verdict(
        eq_ok && div_ok && eqv_ok,
        format!(
            "(a) oracle: max |V|, |grad| over 100 ascent steps {eq_max:.1e}; \
             (b) strictly increasing in |w| with V(2^20)/V(2^-2) >= 4^22: {div_ok}; \
             (c) {}/{} cases agree ({} identical)",
            e.agreements, e.cases, e.identical
        ),
    )
}

// ---------------------------------------------------------------- 3: metric oracles

fn brute_miou(pred: &[u8], gt: &[u8], classes: usize) -> f64 {
    let mut ious = Vec::new();
    for c in 0..classes as u8 {
        let inter = pred
            .iter()
            .zip(gt)
            .filter(|(&p, &g)| p == c && g == c)
            .count();
        let union = pred
            .iter()
            .zip(gt)
            .filter(|(&p, &g)| p == c || g == c)
            .count();
        if union > 0 {
            ious.push(inter as f64 / union as f64);
        }
    }
    ious.iter().sum::<f64>() / ious.len() as f64
}

/// Largest matching by trying every injective assignment (depth-first over `a`).
fn exhaustive_matching(a: &[(usize, usize)], b: &[(usize, usize)], tol: f64) -> usize {
    fn go(
        i: usize,
        a: &[(usize, usize)],
        b: &[(usize, usize)],
        used: &mut Vec<bool>,
        tol: f64,
    ) -> usize {
        if i == a.len() {
            return 0;
        }
        let mut best = go(i + 1, a, b, used, tol);
        for j in 0..b.len() {
            let (dr, dc) = (a[i].0 as f64 - b[j].0 as f64, a[i].1 as f64 - b[j].1 as f64);
            if !used[j] && (dr * dr + dc * dc).sqrt() <= tol {
                used[j] = true;
                best = best.max(1 + go(i + 1, a, b, used, tol));
                used[j] = false;
            }
        }
        best
    }
    go(0, a, b, &mut vec![false; b.len()], tol)
}

fn random_blob_mask(r: &mut ChaCha8Rng, w: usize, h: usize) -> Vec<u8> {
    let mut m = vec![0u8; w * h];
    for _ in 0..r.gen_range(1..3) {
        let (r0, c0) = (r.gen_range(0..h), r.gen_range(0..w));
        let (r1, c1) = (r.gen_range(r0..h), r.gen_range(c0..w));
        for y in r0..=r1 {
            for x in c0..=c1 {
                m[y * w + x] = 1;
            }
        }
    }
    m
}

fn metric_oracles() -> Result<Verdict> {
    let mut r = ChaCha8Rng::seed_from_u64(17);
    let mut miou_bad = 0;
    for _ in 0..1000 {
        let classes = r.gen_range(2..7);
        let gt: Vec<u8> = (0..64).map(|_| r.gen_range(0..classes) as u8).collect();
        let pred: Vec<u8> = (0..64).map(|_| r.gen_range(0..classes) as u8).collect();
        if seg_metrics(&pred, &gt, classes)?.miou != brute_miou(&pred, &gt, classes) {
            miou_bad += 1;
        }
    }

    let (mut cases, mut boundary_bad, mut attempts) = (0, 0, 0);
    while cases < 500 && attempts < 100_000 {
        attempts += 1;
        let (w, h) = (r.gen_range(3..8), r.gen_range(3..8));
        let pred = random_blob_mask(&mut r, w, h);
        let gt = random_blob_mask(&mut r, w, h);
        let bp = boundary_pixels(&pred, w, h, 1);
        let bg = boundary_pixels(&gt, w, h, 1);
        if bp.len() > 12 || bg.len() > 12 {
            continue;
        }
        cases += 1;
        let tol = [0.0, 1.0, std::f64::consts::SQRT_2, 2.0, 2.5][r.gen_range(0..5)];
        let m = exhaustive_matching(&bp, &bg, tol);
        let prf = boundary_prf(&pred, &gt, w, h, 2, tol)?[1];
        let p = if bp.is_empty() {
            0.0
        } else {
            m as f64 / bp.len() as f64
        };
        let rc = if bg.is_empty() {
            0.0
        } else {
            m as f64 / bg.len() as f64
        };
        let f = if p + rc > 0.0 {
            2.0 * p * rc / (p + rc)
        } else {
            0.0
        };
        let ok = max_matching(&bp, &bg, tol) == m
            && prf.is_some_and(|v| {
                v.precision == p && v.recall == rc && (v.f_measure - f).abs() <= 1e-15
            });
        boundary_bad += usize::from(!ok);
    }

    let mut hand_bad = Vec::new();
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12;
    // Against gt = 2 the ratios 1, 1.1, 1.2, 1.5, 1.9, 4 fall one per threshold band.
    let pred = [2.0, 2.2, 2.4, 3.0, 3.8, 8.0];
    let d = depth_metrics(&pred, &[2.0; 6], None)?;
    let rel = (0.0 + 0.1 + 0.2 + 0.5 + 0.9 + 3.0) / 6.0;
    let rms = ((0.0 + 0.04 + 0.16 + 1.0 + 3.24 + 36.0) / 6.0f64).sqrt();
    let log10 = (pred
        .iter()
        .map(|p| (p / 2.0f64).log10().powi(2))
        .sum::<f64>()
        / 6.0)
        .sqrt();
    let deltas = [1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0, 4.0 / 6.0, 5.0 / 6.0];
    if !(close(d.rel, rel) && close(d.rms, rms) && close(d.log10, log10)) {
        hand_bad.push(format!(
            "depth rel/rms/log10 {} {} {}",
            d.rel, d.rms, d.log10
        ));
    }
    if d.delta.iter().zip(deltas).any(|(a, b)| !close(*a, b)) {
        hand_bad.push(format!("depth delta {:?}", d.delta));
    }
    // Angles 0, 45, 90 and 180 degrees, channel-major.
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let pred = [0.0, s, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, s, 0.0, -1.0];
    let gt = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0];
    let n = normal_metrics(&pred, &gt, None)?;
    if !(close(n.mean, 315.0 / 4.0) && close(n.median, 45.0)) {
        hand_bad.push(format!("normal mean/median {} {}", n.mean, n.median));
    }
    let within = [0.25, 0.25, 0.25, 0.25, 0.25];
    if n.within.iter().zip(within).any(|(a, b)| !close(*a, b)) {
        hand_bad.push(format!("normal within {:?}", n.within));
    }

    verdict(
        miou_bad == 0 && boundary_bad == 0 && cases == 500 && hand_bad.is_empty(),
        format!(
            "mIoU {}/1000 exact; boundary P/R/F {}/{cases} exact; closed forms {}",
            1000 - miou_bad,
            cases - boundary_bad,
            if hand_bad.is_empty() {
                "match".to_string()
            } else {
                hand_bad.join("; ")
            }
        ),
    )
}

// ---------------------------------------------------------------- 4: update schedule

fn conformance() -> Result<Verdict> {
    let gen = GenConfig {
        size: 16,
        ..GenConfig::default()
    };
    let samples = (0..4).map(|i| gen.sample(i)).collect::<Result<Vec<_>>>()?;
    let mut cfg = TrainConfig::new(Regime::Asm, TaskKind::Segmentation);
    cfg.max_iter = 5;
    cfg.width_divisor = 8;
    let mut t = Trainer::new(cfg.clone(), samples.clone())?;
    while !t.is_done() {
        t.step()?;
    }
    let c = t.counters();
    let order_ok = c.trace.len() == 10
        && c.trace
            .chunks(2)
            .all(|p| p == [Phase::Analyzer, Phase::Predictor])
        && c.analyzer_updates == 5
        && c.predictor_updates == 5;
    let binarize_ok =
        cfg.binarize && c.binarized_analyzer_passes == 5 && c.binarized_predictor_passes == 0;

    let mut bad = cfg.clone();
    bad.lr_a = 2.0 * bad.lr_s;
    let rejected = matches!(Trainer::new(bad, samples.clone()), Err(Error::Config(_)));
    let mut equal = cfg;
    equal.lr_a = equal.lr_s;
    let accepted = Trainer::new(equal, samples).is_ok();

    verdict(
        order_ok && binarize_ok && rejected && accepted,
        format!(
            "trace {:?}...; analyzer/predictor updates {}/{}; binarized analyzer/predictor passes {}/{}; \
             lr_a > lr_s rejected: {rejected}",
            &c.trace[..2],
            c.analyzer_updates,
            c.predictor_updates,
            c.binarized_analyzer_passes,
            c.binarized_predictor_passes
        ),
    )
}

// ---------------------------------------------------------------- 5: desk-scale convergence

const EVAL_EVERY: usize = 100;
const TIME_LIMIT: Duration = Duration::from_secs(30 * 60);

struct Run {
    label: String,
    best: f64,
    reached_at: Option<usize>,
    iters: usize,
    secs: f64,
}

fn score(report: &MetricsReport, task: TaskKind) -> f64 {
    match task {
        TaskKind::Segmentation => report.seg.as_ref().map_or(0.0, |s| s.miou),
        _ => {
            let k = DELTA_EXPONENTS.iter().position(|&e| e == 1.0).unwrap();
            report.depth.as_ref().map_or(0.0, |d| d.delta[k])
        }
    }
}

fn converge(label: &str, cfg: TrainConfig, gen: &GenConfig, target: f64) -> Result<Run> {
    let (train_idx, val_idx) = gen.split();
    let train = train_idx
        .iter()
        .map(|&i| gen.sample(i))
        .collect::<Result<Vec<_>>>()?;
    let val = val_idx
        .iter()
        .map(|&i| gen.sample(i))
        .collect::<Result<Vec<_>>>()?;
    let task = cfg.task;
    let start = Instant::now();
    let mut t = Trainer::new(cfg, train)?;
    let mut run = Run {
        label: label.into(),
        best: 0.0,
        reached_at: None,
        iters: 0,
        secs: 0.0,
    };
    while !t.is_done() && start.elapsed() < TIME_LIMIT {
        let rec = t.step()?;
        run.iters = rec.iter;
        if rec.iter % EVAL_EVERY == 0 || t.is_done() {
            let preds = predict(&t.models().predictor, task, &val, 8)?;
            let report =
                evaluate_predictions(label, task, gen.manifest_classes(), &val, &preds, "val", 1)?;
            let v = score(&report, task);
            run.best = run.best.max(v);
            if v >= target && start.elapsed() <= TIME_LIMIT {
                run.reached_at = Some(rec.iter);
                break;
            }
        }
    }
    run.secs = start.elapsed().as_secs_f64();
    Ok(run)
}

fn describe(r: &Run, metric: &str) -> String {
    match r.reached_at {
        Some(i) => format!(
            "{} {metric} {:.4} at iter {i} ({:.0} s)",
            r.label, r.best, r.secs
        ),
        None => format!(
            "{} best {metric} {:.4}, not reached in {} iters ({:.0} s)",
            r.label, r.best, r.iters, r.secs
        ),
    }
}

fn convergence() -> Result<Verdict> {
    let seg = GenConfig::default();
    let depth = GenConfig {
        task: TaskKind::Depth,
        ..GenConfig::default()
    };
    let iid_seg = converge(
        "iid seg",
        TrainConfig::new(Regime::Iid, TaskKind::Segmentation),
        &seg,
        0.85,
    )?;
    let asm_seg = converge(
        "asm seg",
        TrainConfig::new(Regime::Asm, TaskKind::Segmentation),
        &seg,
        0.85,
    )?;
    let iid_depth = converge(
        "iid depth",
        TrainConfig::new(Regime::Iid, TaskKind::Depth),
        &depth,
        0.90,
    )?;
    let asm_depth = converge(
        "asm depth",
        TrainConfig::new(Regime::Asm, TaskKind::Depth),
        &depth,
        0.90,
    )?;

    let mut hybrid_cfg = TrainConfig::new(Regime::Asm, TaskKind::Segmentation);
    hybrid_cfg.iid_weight = 1.0;
    let hybrid = converge("asm+iid seg", hybrid_cfg, &seg, 0.85)?;
    println!(
        "info       ASM-vs-IID (not gated): seg mIoU {:+.4}, depth delta<1.25 {:+.4}; {}",
        asm_seg.best - iid_seg.best,
        asm_depth.best - iid_depth.best,
        describe(&hybrid, "mIoU"),
    );

    let runs = [
        (&iid_seg, "mIoU"),
        (&asm_seg, "mIoU"),
        (&iid_depth, "delta<1.25"),
        (&asm_depth, "delta<1.25"),
    ];
    verdict(
        runs.iter().all(|(r, _)| r.reached_at.is_some()),
        runs.iter()
            .map(|(r, m)| describe(r, m))
            .collect::<Vec<_>>()
            .join("; "),
    )
}

// ---------------------------------------------------------------- 6: determinism

fn cli(args: &[&str]) -> Result<()> {
    let parsed = Cli::try_parse_from(std::iter::once("asmlab").chain(args.iter().copied()))
        .map_err(|e| Error::usage(e.to_string()))?;
    parsed.execute().map(drop)
}

fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.insert(
                    p.strip_prefix(root).unwrap().to_path_buf(),
                    std::fs::read(&p).unwrap(),
                );
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

fn determinism() -> Result<Verdict> {
    let tmp = tempfile::tempdir().map_err(|e| Error::io("tempdir", e))?;
    let p = |s: &str| tmp.path().join(s).to_string_lossy().into_owned();
    let data = p("data");
    cli(&[
        "gen-data", "--task", "seg", "--n", "8", "--n-val", "4", "--size", "16", "--out", &data,
    ])?;
    let ckpt = format!("{}/predictor.ckpt", p("train1"));
    let analyzer = format!("{}/analyzer.ckpt", p("train1"));
    let oracle = p("oracle");
    cli(&["eval", "--data", &data, "--oracle", "--out", &oracle])?;

    let mut commands: Vec<(&str, Vec<String>)> = vec![
        (
            "gen-data",
            vec![
                "gen-data", "--task", "depth", "--n", "6", "--n-val", "2", "--size", "16",
            ]
            .into_iter()
            .map(String::from)
            .collect(),
        ),
        (
            "train",
            [
                "train",
                "--data",
                &data,
                "--regime",
                "asm",
                "--max-iter",
                "20",
                "--set",
                "checkpoint_every=10",
            ]
            .map(String::from)
            .to_vec(),
        ),
    ];
    let mut diffs = Vec::new();
    let mut checked = 0;
    let mut compare = |name: &str, args: &[String], a: String, b: String| -> Result<()> {
        for out in [&a, &b] {
            let mut v: Vec<&str> = args.iter().map(String::as_str).collect();
            v.extend(["--out", out]);
            cli(&v)?;
        }
        let (ta, tb) = (tree(Path::new(&a)), tree(Path::new(&b)));
        checked += ta.len();
        if ta.is_empty() || ta != tb {
            diffs.push(name.to_string());
        }
        Ok(())
    };
    for (name, args) in commands.drain(..) {
        let (a, b) = if name == "train" {
            (p("train1"), p("train2"))
        } else {
            (p(&format!("{name}1")), p(&format!("{name}2")))
        };
        compare(name, &args, a, b)?;
    }
    let rest: Vec<(&str, Vec<&str>)> = vec![
        ("eval", vec!["eval", "--checkpoint", &ckpt, "--data", &data]),
        (
            "analyze loss-maps",
            vec![
                "analyze",
                "loss-maps",
                "--checkpoint",
                &ckpt,
                "--data",
                &data,
            ],
        ),
        (
            "analyze top-stimuli",
            vec![
                "analyze",
                "top-stimuli",
                "--analyzer",
                &analyzer,
                "--data",
                &data,
            ],
        ),
        (
            "analyze theory-probe",
            vec![
                "analyze",
                "theory-probe",
                "--set",
                "probe_cases=50",
                "--set",
                "probe_runs=5",
                "--set",
                "probe_ascent_steps=10",
            ],
        ),
    ];
    for (i, (name, args)) in rest.iter().enumerate() {
        let args: Vec<String> = args.iter().map(|s| s.to_string()).collect();
        compare(name, &args, p(&format!("c{i}a")), p(&format!("c{i}b")))?;
    }
    let eval_a = p("c0a");
    compare(
        "report",
        &["report".to_string(), eval_a, oracle],
        p("ra"),
        p("rb"),
    )?;

    verdict(
        diffs.is_empty(),
        format!(
            "gen-data, train, eval, analyze (3 modes) and report run twice: {checked} files, {}",
            if diffs.is_empty() {
                "all bit-identical".to_string()
            } else {
                format!("differing: {}", diffs.join(", "))
            }
        ),
    )
}

// ---------------------------------------------------------------- 7: round trips

fn round_trips() -> Result<Verdict> {
    let mut r = ChaCha8Rng::seed_from_u64(23);
    let tmp = tempfile::tempdir().map_err(|e| Error::io("tempdir", e))?;
    let mut failures = Vec::new();
    for i in 0..100 {
        let (w, h) = (r.gen_range(1..40), r.gen_range(1..40));
        let mask = Mask::new(w, h, (0..w * h).map(|_| r.gen()).collect())?;
        let pgm_ok = decode_pgm(&encode_pgm(&mask))? == mask;
        let c = if i % 2 == 0 { 1 } else { 3 };
        let data: Vec<f64> = (0..c * w * h)
            .map(|_| match r.gen_range(0..4) {
                0 => r.gen_range(-1e6..1e6),
                1 => r.gen_range(-1.0..1.0) * 1e-30,
                _ => r.gen_range(-10.0..10.0),
            })
            .collect();
        let map = FloatMap::new(c, w, h, data)?;
        let back = decode_pfm(&encode_pfm(&map)?)?;
        let pfm_ok = (back.channels, back.width, back.height) == (c, w, h)
            && back
                .data
                .iter()
                .zip(&map.data)
                .all(|(b, a)| *b == *a as f32 as f64);
        if !(pgm_ok && pfm_ok) {
            failures.push(format!("raster case {i}"));
        }
        if i < 5 {
            let (pp, fp) = (
                tmp.path().join(format!("m{i}.pgm")),
                tmp.path().join(format!("f{i}.pfm")),
            );
            write_pgm(&pp, &mask)?;
            write_pfm(&fp, &map)?;
            if read_pgm(&pp)? != mask || read_pfm(&fp)? != back {
                failures.push(format!("file case {i}"));
            }
        }
    }

    for (i, t) in Template::ALL.into_iter().enumerate() {
        let mut net = build_network(&t.spec().scaled_width(16)?, i as u64)?;
        for p in net.params_mut() {
            for v in p.data_mut() {
                *v = r.gen_range(-1.0..1.0) * 10f64.powi(r.gen_range(-300..300));
            }
        }
        let bytes = serialize_network(&net);
        let back = deserialize_network(&bytes)?;
        let same = back.spec() == net.spec()
            && back.params().iter().zip(net.params()).all(|(a, b)| {
                a.shape() == b.shape()
                    && a.data()
                        .iter()
                        .zip(b.data())
                        .all(|(x, y)| x.to_bits() == y.to_bits())
            });
        if !same || serialize_network(&back) != bytes {
            failures.push(format!("checkpoint {}", t.name()));
        }
    }

    for i in 0..50 {
        let task = [
            TaskKind::Segmentation,
            TaskKind::Depth,
            TaskKind::Normal,
            TaskKind::Joint,
        ][i % 4];
        let mut m = DatasetManifest::new(task, r.gen_range(2..30), tmp.path());
        m.meta = (0..r.gen_range(0..4))
            .map(|k| (format!("key{k}"), format!("{}", r.gen::<u32>())))
            .collect();
        let word = |r: &mut ChaCha8Rng| -> String {
            (0..r.gen_range(1..12))
                .map(|_| char::from(b"abcdefghijklmnopqrstuvwxyz0123456789_-."[r.gen_range(0..39)]))
                .collect()
        };
        for _ in 0..r.gen_range(0..20) {
            let target = if task == TaskKind::Joint {
                format!("samples/{}.pfm+samples/{}.pfm", word(&mut r), word(&mut r))
            } else {
                format!("samples/{}", word(&mut r))
            };
            let n = m.records.len();
            m.records.push(SampleRecord {
                id: format!("{n:04}{}", word(&mut r)),
                image: format!("samples/{}.pgm", word(&mut r)),
                target,
                instance: format!("samples/{}.pgm", word(&mut r)),
            });
        }
        if DatasetManifest::parse(&m.to_text(), tmp.path())? != m {
            failures.push(format!("manifest case {i}"));
        }
    }

    verdict(
        failures.is_empty(),
        if failures.is_empty() {
            "100 PGM/PFM pairs (PFM at f32 precision), 6 checkpoints bit-exact, 50 manifests"
                .to_string()
        } else {
            format!("failing: {}", failures.join(", "))
        },
    )
}

// ---------------------------------------------------------------- 8: architectures

/// `(layer, connection, kernel, channels, repeat)` rows of the architecture tables.
type Row = (&'static str, &'static [&'static str], usize, usize, usize);

const FIGURE_GROUND: &[Row] = &[
    ("conv1", &["input"], 5, 32, 1),
    ("conv2", &["conv1"], 5, 64, 1),
    ("conv3", &["conv2"], 5, 128, 1),
    ("conv4", &["conv3"], 5, 256, 1),
    ("conv5", &["conv4", "conv3"], 3, 128, 1),
    ("conv6", &["conv5", "conv2"], 3, 64, 1),
    ("conv7", &["conv6", "conv1"], 3, 32, 1),
    ("output", &["conv7"], 1, 1, 1),
];
const VOC: &[Row] = &[
    ("conv1", &["input"], 3, 128, 1),
    ("conv2", &["conv1"], 3, 256, 1),
    ("conv3", &["conv2"], 3, 256, 1),
    ("conv4", &["conv3", "conv2"], 3, 256, 1),
    ("conv5", &["conv4", "conv1"], 3, 128, 1),
    ("output", &["conv5"], 1, 21, 1),
];
const DENSE: &[Row] = &[
    ("conv1", &["input"], 3, 32, 1),
    ("conv2", &["conv1"], 3, 64, 1),
    ("conv3", &["conv2"], 3, 128, 1),
    ("conv4", &["conv3"], 3, 128, 1),
    ("conv5", &["conv4"], 3, 128, 1),
    ("conv6", &["conv5", "conv4"], 3, 128, 1),
    ("conv7", &["conv6", "conv3"], 3, 128, 1),
    ("conv8", &["conv7", "conv2"], 3, 64, 1),
    ("conv9", &["conv8", "conv1"], 3, 32, 1),
    ("output", &["conv9"], 1, 1, 1),
];
const JOINT: &[Row] = &[
    ("conv1_1", &["input_depth"], 3, 32, 1),
    ("conv1_2", &["input_normal"], 3, 32, 1),
    ("conv2", &["conv1_1", "conv1_2"], 3, 128, 1),
    ("conv3", &["conv2"], 3, 256, 1),
    ("conv4", &["conv3"], 3, 256, 1),
    ("conv5", &["conv4"], 3, 256, 1),
    ("conv6", &["conv5", "conv4"], 3, 256, 1),
    ("conv7", &["conv6", "conv3"], 3, 256, 1),
    ("conv8", &["conv7", "conv2"], 3, 128, 1),
    ("conv9", &["conv8", "conv1_1", "conv1_2"], 3, 64, 1),
    ("output_depth", &["conv9"], 1, 1, 1),
    ("output_normal", &["conv9"], 1, 3, 1),
];
const UNET: &[Row] = &[
    ("conv1", &["input"], 3, 64, 1),
    ("conv2", &["conv1"], 3, 128, 1),
    ("conv3", &["conv2"], 3, 256, 1),
    ("conv4", &["conv3"], 3, 512, 1),
    ("conv5", &["conv4"], 3, 512, 1),
    ("conv6", &["conv5"], 3, 512, 1),
    ("conv7", &["conv6"], 3, 512, 1),
    ("conv8", &["conv7"], 3, 512, 1),
    ("conv9", &["conv8"], 3, 512, 1),
    ("conv10", &["conv9", "conv8"], 3, 512, 3),
    ("conv11", &["conv10", "conv7"], 3, 512, 3),
    ("conv12", &["conv11", "conv6"], 3, 512, 3),
    ("conv13", &["conv12", "conv5"], 3, 512, 3),
    ("conv14", &["conv13", "conv4"], 3, 512, 3),
    ("conv15", &["conv14", "conv3"], 3, 256, 3),
    ("conv16", &["conv15", "conv2"], 3, 128, 3),
    ("conv17", &["conv16", "conv1"], 3, 64, 3),
    ("output", &["conv17"], 1, 1, 1),
];

fn conforms(
    spec: &NetworkSpec,
    rows: &[Row],
    divisor: usize,
    extent: usize,
) -> Result<Option<String>> {
    if spec.layers.len() != rows.len() {
        return Ok(Some(format!(
            "{} layers, table has {}",
            spec.layers.len(),
            rows.len()
        )));
    }
    for (l, &(name, conn, k, ch, rep)) in spec.layers.iter().zip(rows) {
        let expected = if spec.is_head(name) { ch } else { ch / divisor };
        if l.name != name
            || l.sources != conn
            || l.kernel != k
            || l.channels != expected
            || l.repeat != rep
        {
            return Ok(Some(format!(
                "layer {} differs from table row {name}",
                l.name
            )));
        }
    }
    let net = build_network(spec, 0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut g = Graph::new();
    let b = net.bind(&mut g, false)?;
    let xs = spec
        .inputs
        .iter()
        .map(|i| {
            g.constant(&Tensor::randn(
                vec![1, i.channels, extent, extent],
                1.0,
                &mut rng,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let out = net.forward(&mut g, &b, &xs, &[])?;
    for (h, head) in out.heads.iter().zip(&spec.heads) {
        let ch = spec.layer(&head.layer).map_or(0, |l| l.channels);
        if g.shape(*h) != [1, ch, extent, extent] {
            return Ok(Some(format!(
                "head {} has shape {:?} for a {extent}x{extent} input",
                head.layer,
                g.shape(*h)
            )));
        }
    }
    Ok(None)
}

fn architectures() -> Result<Verdict> {
    const DIV: usize = 4;
    let cases: [(Template, &[Row], usize); 5] = [
        (Template::FigureGroundAnalyzer, FIGURE_GROUND, 32),
        (Template::VocAnalyzer, VOC, 32),
        (Template::DenseAnalyzer, DENSE, 64),
        (Template::JointAnalyzer, JOINT, 64),
        (Template::UnetPredictor, UNET, 512),
    ];
    let mut problems = Vec::new();
    for (t, rows, extent) in cases {
        if let Some(p) = conforms(&t.spec().scaled_width(DIV)?, rows, DIV, extent)? {
            problems.push(format!("{}: {p}", t.name()));
        }
    }
    let normal = Template::DenseAnalyzer
        .spec()
        .retarget(TaskKind::Normal, 2, 1)?;
    if normal.layer("output").map(|l| l.channels) != Some(3) {
        problems.push("dense_analyzer retargeted to normals lacks a 3-channel output".into());
    }
    verdict(
        problems.is_empty(),
        if problems.is_empty() {
            format!("5 templates at 1/{DIV} width match the tables and return input-sized outputs")
        } else {
            problems.join("; ")
        },
    )
}

// ---------------------------------------------------------------- driver

fn main() {
    let wanted: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let criteria: [(usize, &str, fn() -> Result<Verdict>); 8] = [
        (1, "gradient correctness", gradients),
        (2, "theory suite", theory),
        (3, "metric oracles", metric_oracles),
        (4, "update schedule conformance", conformance),
        (5, "desk-scale convergence", convergence),
        (6, "determinism", determinism),
        (7, "format round trips", round_trips),
        (8, "architecture conformance", architectures),
    ];
    let mut failed = Vec::new();
    for (n, name, f) in criteria {
        if !wanted.is_empty() && !wanted.contains(&n) {
            continue;
        }
        let v = f().unwrap_or_else(|e| Verdict {
            pass: false,
            detail: format!("error: {e}"),
        });
        if !v.pass {
            failed.push(n.to_string());
        }
        println!(
            "criterion {n} {:<28} {}  {}",
            name,
            if v.pass { "PASS" } else { "FAIL" },
            v.detail
        );
    }
    if failed.is_empty() {
        println!("all selected criteria passed");
    } else {
        println!("failed criteria: {}", failed.join(", "));
        if std::env::var("ASMLAB_ACCEPTANCE_STRICT").as_deref() == Ok("1") {
            std::process::exit(1);
        }
    }
}
