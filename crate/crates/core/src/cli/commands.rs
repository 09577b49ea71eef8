use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::config::RunConfig;
use crate::data::{
    generate_dataset, image_batch, target_batch, write_pgm, DatasetManifest, Sample,
};
use crate::error::{Error, Result};
use crate::metrics::{
    compare_reports, evaluate_predictions, top_stimuli, MetricsReport, Prediction,
};
use crate::nets::{load_network, HeadRole, NetRole, Network};
use crate::task::TaskKind;
use crate::training::{asm_between, predict, predict_structured, run_training, theory_probe};

/// Environment variable capping evaluation worker threads.
pub const THREADS_ENV: &str = "ASMLAB_THREADS";

/// Creates `dir`, refusing a non-empty existing directory unless `force` is set.
pub fn prepare_out(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        let occupied = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .next()
            .is_some();
        if occupied && !force {
            return Err(Error::usage(format!(
                "output directory {} already exists; pass --force to overwrite",
                dir.display()
            )));
        }
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// The task a predictor's output heads produce.
pub fn network_task(net: &Network) -> Result<TaskKind> {
    let roles: Vec<HeadRole> = net.spec().heads.iter().map(|h| h.role).collect();
    match roles.as_slice() {
        [HeadRole::Segmentation] => Ok(TaskKind::Segmentation),
        [HeadRole::Depth] => Ok(TaskKind::Depth),
        [HeadRole::Normal] => Ok(TaskKind::Normal),
        [HeadRole::Depth, HeadRole::Normal] => Ok(TaskKind::Joint),
        _ => Err(Error::config(
            "checkpoint heads do not describe a prediction task",
        )),
    }
}

fn manifest_path(cfg: &RunConfig, split: &str) -> Result<PathBuf> {
    if let Some(m) = cfg.get_path("manifest") {
        return Ok(m);
    }
    cfg.get_path("data")
        .map(|d| d.join(format!("{split}.txt")))
        .ok_or_else(|| Error::usage("no dataset given: set `data` (directory) or `manifest`"))
}

fn load_manifest(cfg: &RunConfig, split: &str) -> Result<DatasetManifest> {
    let path = manifest_path(cfg, split)?;
    DatasetManifest::load(&path)
}

fn required_path(cfg: &RunConfig, key: &str) -> Result<PathBuf> {
    cfg.get_path(key)
        .ok_or_else(|| Error::usage(format!("`{key}` is required")))
}

pub fn gen_data(cfg: &RunConfig, out: &Path, force: bool) -> Result<String> {
    let gen = cfg.gen_config()?;
    gen.validate()?;
    prepare_out(out, force)?;
    let set = generate_dataset(&gen, out)?;
    Ok(format!(
        "train manifest: {} ({} samples)\nval manifest: {} ({} samples)\nchecksum: {}\n",
        set.train_path.display(),
        set.train.len(),
        set.val_path.display(),
        set.val.len(),
        set.checksum()?
    ))
}

pub fn train(cfg: &RunConfig, out: &Path, force: bool) -> Result<String> {
    let manifest = load_manifest(cfg, "train")?;
    if let Some(t) = cfg.task()? {
        if t != manifest.task {
            return Err(Error::config(format!(
                "config task {t} does not match the {} manifest",
                manifest.task
            )));
        }
    }
    let tc = cfg.train_config(manifest.task, manifest.classes)?;
    prepare_out(out, force)?;
    let samples = manifest.load_all()?;
    let outcome = run_training(&tc, &samples, out)?;
    let mut s = String::new();
    let _ = writeln!(
        s,
        "regime {} on {} ({} samples, {} iterations)",
        tc.regime,
        tc.task,
        samples.len(),
        tc.max_iter
    );
    if let Some(r) = outcome.log.last() {
        let _ = writeln!(s, "final loss_s {} obj_a {} sr {}", r.loss_s, r.obj_a, r.sr);
    }
    let _ = writeln!(s, "log: {}", outcome.log_path.display());
    let _ = writeln!(s, "checkpoint: {}", outcome.predictor_path.display());
    Ok(s)
}

fn eval_threads() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(1),
        Ok(v) => v.parse::<usize>().ok().filter(|&n| n > 0).ok_or_else(|| {
            Error::config(format!(
                "{THREADS_ENV} must be a positive integer, got `{v}`"
            ))
        }),
    }
}

fn checked_predictor(cfg: &RunConfig, manifest: &DatasetManifest) -> Result<Network> {
    let net = load_network(&required_path(cfg, "checkpoint")?)?;
    let task = network_task(&net)?;
    if task != manifest.task {
        return Err(Error::config(format!(
            "checkpoint predicts {task} but the manifest holds {} samples",
            manifest.task
        )));
    }
    if task == TaskKind::Segmentation {
        let spec = net.spec();
        let c = spec.layer(&spec.heads[0].layer).map_or(0, |l| l.channels);
        if c != manifest.classes {
            return Err(Error::config(format!(
                "checkpoint has {c} classes, manifest {}",
                manifest.classes
            )));
        }
    }
    Ok(net)
}

/// Evaluates a checkpoint (or the ground truth with `oracle`) on a manifest.
pub fn evaluate(cfg: &RunConfig) -> Result<MetricsReport> {
    let manifest = load_manifest(cfg, "val")?;
    let samples = manifest.load_all()?;
    let oracle = cfg.get_bool("oracle")?.unwrap_or(false);
    let preds: Vec<Prediction> = if oracle {
        samples.iter().map(Prediction::from_target).collect()
    } else {
        let net = checked_predictor(cfg, &manifest)?;
        predict(&net, manifest.task, &samples, cfg.get_or("eval_batch", 8)?)?
    };
    let label = cfg
        .get_str("label")
        .unwrap_or(if oracle { "ground_truth" } else { "model" });
    evaluate_predictions(
        label,
        manifest.task,
        manifest.classes,
        &samples,
        &preds,
        &manifest.checksum()?,
        eval_threads()?,
    )
}

pub fn eval(cfg: &RunConfig, out: &Path, force: bool) -> Result<String> {
    let report = evaluate(cfg)?;
    prepare_out(out, force)?;
    let summary = report.summary_json();
    write(&out.join("report.csv"), &report.to_csv())?;
    write(&out.join("summary.jsonl"), &format!("{summary}\n"))?;
    Ok(format!(
        "{summary}\nreport: {}\n",
        out.join("report.csv").display()
    ))
}

fn analyzer_checkpoint(cfg: &RunConfig) -> Result<PathBuf> {
    if let Some(a) = cfg.get_path("analyzer") {
        return Ok(a);
    }
    let sibling = cfg
        .get_path("checkpoint")
        .and_then(|c| c.parent().map(|d| d.join("analyzer.ckpt")));
    sibling
        .filter(|p| p.exists())
        .ok_or_else(|| Error::usage("`analyzer` checkpoint is required"))
}

fn select_sample(cfg: &RunConfig, manifest: &DatasetManifest) -> Result<Sample> {
    let i: usize = cfg.get_or("sample", 0)?;
    if i >= manifest.len() {
        return Err(Error::usage(format!(
            "sample {i} out of range: the manifest has {}",
            manifest.len()
        )));
    }
    manifest.load_sample(i)
}

pub fn loss_maps(cfg: &RunConfig, out: &Path, force: bool) -> Result<String> {
    let manifest = load_manifest(cfg, "val")?;
    let analyzer = load_network(&analyzer_checkpoint(cfg)?)?;
    let taps: Vec<String> = match cfg.get_str("taps") {
        Some(t) => t
            .split(',')
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect(),
        None => analyzer.spec().taps.clone(),
    };
    if let Some(t) = taps.iter().find(|t| analyzer.spec().layer(t).is_none()) {
        return Err(Error::usage(format!("unknown analyzer layer `{t}`")));
    }
    if taps.is_empty() {
        return Err(Error::usage("no taps selected"));
    }
    let sample = select_sample(cfg, &manifest)?;
    let target = target_batch(&[&sample], manifest.task, manifest.classes)?;
    let pred = if cfg.get_bool("oracle")?.unwrap_or(false) {
        target.clone()
    } else {
        let net = checked_predictor(cfg, &manifest)?;
        predict_structured(&net, manifest.task, &image_batch(&[&sample])?)?
    };
    let loss = asm_between(&analyzer, &taps, &pred, &target)?;
    prepare_out(out, force)?;
    let files = crate::losses::export_loss_maps(&loss, out)?;
    let mut s = format!("sample {} ASM {}\n", sample.id, loss.scalar);
    for f in files {
        let _ = writeln!(s, "{}", f.display());
    }
    Ok(s)
}

pub fn stimuli(cfg: &RunConfig, out: &Path, force: bool) -> Result<String> {
    let manifest = load_manifest(cfg, "val")?;
    let path = match cfg.get_path("analyzer") {
        Some(p) => p,
        None => required_path(cfg, "checkpoint")?,
    };
    let net = load_network(&path)?;
    let layer = cfg.get_str("layer").unwrap_or("conv1").to_string();
    let filter: usize = cfg.get_or("filter", 0)?;
    let k: usize = cfg.get_or("k", 10)?;
    let samples = manifest.load_all()?;
    let batch: usize = cfg.get_or("eval_batch", 8)?;
    let mut inputs = Vec::new();
    for chunk in samples.chunks(batch.max(1)) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        inputs.push(if net.role() == NetRole::Predictor {
            vec![image_batch(&refs)?]
        } else {
            target_batch(&refs, manifest.task, manifest.classes)?
        });
    }
    let top = top_stimuli(&net, &inputs, &layer, filter, k)?;
    prepare_out(out, force)?;
    write_pgm(&out.join("montage.pgm"), &top.montage()?)?;
    write(&out.join("ranking.csv"), &top.to_csv())?;
    Ok(format!(
        "{} patches of {}x{} for {layer}/{filter}{}\nmontage: {}\n",
        top.entries.len(),
        top.patch_size,
        top.patch_size,
        if top.truncated {
            " (fewer than requested)"
        } else {
            ""
        },
        out.join("montage.pgm").display()
    ))
}

pub fn probe(cfg: &RunConfig, out: &Path, force: bool) -> Result<String> {
    let report = theory_probe(&cfg.probe_config()?)?;
    prepare_out(out, force)?;
    let path = out.join("theory_probe.csv");
    write(&path, &report.to_csv())?;
    let e = &report.equivalence;
    Ok(format!(
        "divergence strictly increasing: {}\nequivalence: {}/{} cases agree\nequilibrium max |V|: {:e}\nreport: {}\n",
        report.divergence_increasing(),
        e.agreements,
        e.cases,
        report.equilibrium_max(),
        path.display()
    ))
}

fn report_csv(path: &Path) -> Result<String> {
    let file = if path.is_dir() {
        path.join("report.csv")
    } else {
        path.to_path_buf()
    };
    std::fs::read_to_string(&file).map_err(|e| Error::io(&file, e))
}

fn slug(s: &str) -> String {
    let t: String = s
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect();
    if t.is_empty() {
        "unnamed".into()
    } else {
        t
    }
}

/// Series drawn as bar charts when present.
const CHART_SERIES: [(&str, &str); 7] = [
    ("depth", "value"),
    ("boundary", "precision"),
    ("iou", "iou"),
    ("instance", "pixel_accuracy"),
    ("instance", "delta_1.25"),
    ("instance", "within_11.25"),
    ("normal", "value"),
];

/// Compares the first report against each of the others.
pub fn report(inputs: &[PathBuf], out: &Path, force: bool) -> Result<String> {
    if inputs.len() < 2 {
        return Err(Error::usage("report needs at least two evaluation outputs"));
    }
    let candidate = report_csv(&inputs[0])?;
    let mut comparisons = Vec::new();
    for base in &inputs[1..] {
        comparisons.push(compare_reports(&candidate, &report_csv(base)?)?);
    }
    prepare_out(out, force)?;
    let mut s = String::new();
    for (i, cmp) in comparisons.iter().enumerate() {
        let stem = format!("{}_vs_{}", slug(&cmp.candidate), slug(&cmp.baseline));
        let stem = if comparisons.len() > 1 {
            format!("{stem}_{}", i + 1)
        } else {
            stem
        };
        let csv = out.join(format!("deltas_{stem}.csv"));
        write(&csv, &cmp.to_csv())?;
        let _ = writeln!(s, "{}", csv.display());
        for (block, metric) in CHART_SERIES {
            if cmp.series(block, metric).is_empty() {
                continue;
            }
            let svg = out.join(format!("{block}_{}_{stem}.svg", slug(metric)));
            write(&svg, &cmp.to_svg(block, metric))?;
            let _ = writeln!(s, "{}", svg.display());
        }
    }
    Ok(s)
}
