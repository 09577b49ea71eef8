//! Dataset-level evaluation and the CSV/JSON report format.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde_json::json;

use super::boundary::{boundary_counts, default_tolerance, BoundaryCounts, BoundaryPrf};
use super::instance::{instance_aggregate, instance_regions, InstanceAggregate, InstanceRegion};
use super::regression::{
    delta_thresholds, normal_angles, summarize_angles, DepthAccumulator, DepthMetrics,
    NormalMetrics, ANGLE_THRESHOLDS,
};
use super::segmentation::{background_confusion, ConfusionMatrix};
use crate::data::{scene_class, Sample, Target};
use crate::error::{Error, Result};
use crate::task::TaskKind;

/// A model output for one sample, in the target's native layout.
#[derive(Debug, Clone, PartialEq)]
pub enum Prediction {
    Classes(Vec<u8>),
    Depth(Vec<f64>),
    /// Channel-major `3 x H x W`.
    Normal(Vec<f64>),
    Joint {
        depth: Vec<f64>,
        normal: Vec<f64>,
    },
}

impl Prediction {
    /// The ground truth of `sample` expressed as a prediction.
    pub fn from_target(sample: &Sample) -> Self {
        match &sample.target {
            Target::Classes(m) => Prediction::Classes(m.data.clone()),
            Target::Depth(d) => Prediction::Depth(d.data.clone()),
            Target::Normal(n) => Prediction::Normal(n.data.clone()),
            Target::Joint { depth, normal } => Prediction::Joint {
                depth: depth.data.clone(),
                normal: normal.data.clone(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegSection {
    pub confusion: ConfusionMatrix,
    pub iou: Vec<Option<f64>>,
    pub miou: f64,
    pub pixel_accuracy: f64,
    pub boundary: Vec<Option<BoundaryPrf>>,
    pub boundary_overall: BoundaryPrf,
    pub boundary_tolerance: f64,
    pub background: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceSection {
    /// What the per-instance value measures.
    pub metric: String,
    pub aggregate: InstanceAggregate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub label: String,
    pub task: TaskKind,
    pub classes: usize,
    pub samples: usize,
    pub manifest_checksum: String,
    pub seg: Option<SegSection>,
    pub depth: Option<DepthMetrics>,
    pub normal: Option<NormalMetrics>,
    pub instance: Option<InstanceSection>,
}

/// Per-sample statistics, merged in sample order.
#[derive(Debug, Default)]
struct Partial {
    confusion: Option<ConfusionMatrix>,
    boundary: Vec<BoundaryCounts>,
    depth: DepthAccumulator,
    angles: Vec<f64>,
    instances: Vec<(InstanceRegion, f64)>,
}

fn evaluate_one(
    index: usize,
    s: &Sample,
    p: &Prediction,
    classes: usize,
    tolerance: f64,
) -> Result<Partial> {
    let (h, w) = s.size();
    let mut out = Partial::default();
    match (&s.target, p) {
        (Target::Classes(gt), Prediction::Classes(pred)) => {
            let mut cm = ConfusionMatrix::new(classes);
            cm.add(pred, &gt.data)?;
            out.confusion = Some(cm);
            out.boundary = boundary_counts(pred, &gt.data, w, h, classes, tolerance)?;
            for r in instance_regions(index, &s.instances, |_, px| gt.data[px] as usize) {
                let hit = r.pixels.iter().filter(|&&i| pred[i] == gt.data[i]).count();
                let v = hit as f64 / r.pixels.len() as f64;
                out.instances.push((r, v));
            }
        }
        (Target::Depth(gt), Prediction::Depth(pred)) => {
            depth_part(&mut out, index, s, pred, &gt.data)?;
        }
        (Target::Normal(gt), Prediction::Normal(pred)) => {
            normal_part(&mut out, index, s, pred, &gt.data)?;
        }
        (
            Target::Joint { depth, normal },
            Prediction::Joint {
                depth: pd,
                normal: pn,
            },
        ) => {
            out.depth.add(pd, &depth.data, None)?;
            out.angles = normal_angles(pn, &normal.data, None)?;
            normal_instances(&mut out, index, s, pn, &normal.data)?;
        }
        _ => {
            return Err(Error::usage(format!(
                "prediction for sample {} has the wrong task",
                s.id
            )))
        }
    }
    Ok(out)
}

fn depth_part(out: &mut Partial, index: usize, s: &Sample, pred: &[f64], gt: &[f64]) -> Result<()> {
    out.depth.add(pred, gt, None)?;
    let thr = delta_thresholds()[2];
    for r in instance_regions(index, &s.instances, |id, _| scene_class(id)) {
        let hit = r
            .pixels
            .iter()
            .filter(|&&i| (pred[i] / gt[i]).max(gt[i] / pred[i]) < thr)
            .count();
        let v = hit as f64 / r.pixels.len() as f64;
        out.instances.push((r, v));
    }
    Ok(())
}

fn normal_instances(
    out: &mut Partial,
    index: usize,
    s: &Sample,
    pred: &[f64],
    gt: &[f64],
) -> Result<()> {
    let hw = gt.len() / 3;
    for r in instance_regions(index, &s.instances, |id, _| scene_class(id)) {
        let mut valid = vec![false; hw];
        r.pixels.iter().for_each(|&i| valid[i] = true);
        let a = normal_angles(pred, gt, Some(&valid))?;
        let v = a.iter().filter(|&&x| x <= ANGLE_THRESHOLDS[2]).count() as f64 / a.len() as f64;
        out.instances.push((r, v));
    }
    Ok(())
}

fn normal_part(
    out: &mut Partial,
    index: usize,
    s: &Sample,
    pred: &[f64],
    gt: &[f64],
) -> Result<()> {
    out.angles = normal_angles(pred, gt, None)?;
    normal_instances(out, index, s, pred, gt)
}

/// Evaluates predictions against their samples. `threads` workers each take a
/// contiguous slice of samples; partial results are merged in sample order.
pub fn evaluate_predictions(
    label: &str,
    task: TaskKind,
    classes: usize,
    samples: &[Sample],
    preds: &[Prediction],
    manifest_checksum: &str,
    threads: usize,
) -> Result<MetricsReport> {
    if samples.len() != preds.len() {
        return Err(Error::usage("one prediction per sample is required"));
    }
    if let Some(s) = samples.iter().find(|s| s.target.task() != task) {
        return Err(Error::usage(format!(
            "sample {} is not a {task} sample",
            s.id
        )));
    }
    let tolerance = samples
        .first()
        .map_or(0.0, |s| default_tolerance(s.size().1, s.size().0));
    let threads = threads.clamp(1, samples.len().max(1));
    let chunk = samples.len().div_ceil(threads).max(1);
    let partials: Vec<Result<Vec<Partial>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..samples.len())
            .step_by(chunk)
            .map(|start| {
                let end = (start + chunk).min(samples.len());
                scope.spawn(move || {
                    (start..end)
                        .map(|i| evaluate_one(i, &samples[i], &preds[i], classes, tolerance))
                        .collect::<Result<Vec<_>>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("metric worker panicked"))
            .collect()
    });
    let mut confusion = ConfusionMatrix::new(classes);
    let mut boundary = vec![BoundaryCounts::default(); classes];
    let mut depth = DepthAccumulator::default();
    let mut angles = Vec::new();
    let mut inst: Vec<(InstanceRegion, f64)> = Vec::new();
    for part in partials {
        for p in part? {
            if let Some(cm) = &p.confusion {
                confusion.merge(cm);
            }
            for (acc, b) in boundary.iter_mut().zip(&p.boundary) {
                acc.merge(*b);
            }
            depth.merge(&p.depth);
            angles.extend(p.angles);
            inst.extend(p.instances);
        }
    }
    let seg = (task == TaskKind::Segmentation).then(|| {
        let mut overall = BoundaryCounts::default();
        boundary.iter().skip(1).for_each(|b| overall.merge(*b));
        SegSection {
            iou: confusion.per_class_iou(),
            miou: confusion.miou(),
            pixel_accuracy: confusion.pixel_accuracy(),
            boundary: boundary
                .iter()
                .map(|b| (b.pred + b.gt > 0).then(|| b.prf()))
                .collect(),
            boundary_overall: overall.prf(),
            boundary_tolerance: tolerance,
            background: background_confusion(&confusion),
            confusion: confusion.clone(),
        }
    });
    let regions: Vec<InstanceRegion> = inst.iter().map(|(r, _)| r.clone()).collect();
    let values: BTreeMap<(usize, u8), f64> = inst
        .iter()
        .map(|(r, v)| ((r.sample, r.instance), *v))
        .collect();
    let metric = match task {
        TaskKind::Segmentation => "pixel_accuracy",
        TaskKind::Depth => "delta_1.25",
        _ => "within_11.25",
    };
    let instance = (!samples.is_empty()).then(|| InstanceSection {
        metric: metric.into(),
        aggregate: instance_aggregate(&regions, classes, |r| values[&(r.sample, r.instance)]),
    });
    Ok(MetricsReport {
        label: label.into(),
        task,
        classes,
        samples: samples.len(),
        manifest_checksum: manifest_checksum.into(),
        seg,
        depth: depth.finish(),
        normal: summarize_angles(&angles),
        instance,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{x}"))
}

impl MetricsReport {
    /// CSV blocks, each introduced by a `# name` line.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# summary\nkey,value");
        let _ = writeln!(
            s,
            "label,{}\ntask,{}\nclasses,{}\nsamples,{}",
            self.label, self.task, self.classes, self.samples
        );
        let _ = writeln!(s, "manifest_checksum,{}", self.manifest_checksum);
        if let Some(seg) = &self.seg {
            let _ = writeln!(
                s,
                "\n# confusion\ngt\\pred,{}",
                (0..self.classes)
                    .map(|c| c.to_string())
                    .collect::<Vec<_>>()
                    .join(",")
            );
            for c in 0..self.classes {
                let row: Vec<String> = seg.confusion.row(c).iter().map(u64::to_string).collect();
                let _ = writeln!(s, "{c},{}", row.join(","));
            }
            let _ = writeln!(s, "\n# iou\nclass,iou");
            for (c, v) in seg.iou.iter().enumerate() {
                let _ = writeln!(s, "{c},{}", opt(*v));
            }
            let _ = writeln!(s, "mean,{}", seg.miou);
            let _ = writeln!(s, "\n# boundary\nclass,precision,recall,f_measure");
            for (c, b) in seg.boundary.iter().enumerate() {
                match b {
                    Some(b) => {
                        let _ = writeln!(s, "{c},{},{},{}", b.precision, b.recall, b.f_measure);
                    }
                    None => {
                        let _ = writeln!(s, "{c},n/a,n/a,n/a");
                    }
                }
            }
            let o = seg.boundary_overall;
            let _ = writeln!(s, "overall,{},{},{}", o.precision, o.recall, o.f_measure);
            let _ = writeln!(s, "\n# background_confusion\nclass,fraction");
            for (i, v) in seg.background.iter().enumerate() {
                let _ = writeln!(s, "{},{}", i + 1, opt(*v));
            }
        }
        if let Some(d) = &self.depth {
            let _ = writeln!(
                s,
                "\n# depth\nmetric,value\nrel,{}\nlog10,{}\nrms,{}",
                d.rel, d.log10, d.rms
            );
            for (e, v) in super::regression::DELTA_EXPONENTS.iter().zip(d.delta) {
                let _ = writeln!(s, "delta_1.25^{e},{v}");
            }
        }
        if let Some(n) = &self.normal {
            let _ = writeln!(
                s,
                "\n# normal\nmetric,value\nmean,{}\nmedian,{}",
                n.mean, n.median
            );
            for (t, v) in ANGLE_THRESHOLDS.iter().zip(n.within) {
                let _ = writeln!(s, "within_{t},{v}");
            }
        }
        if let Some(inst) = &self.instance {
            let _ = writeln!(s, "\n# instance\nclass,instances,{}", inst.metric);
            for (c, v) in inst.aggregate.per_class.iter().enumerate() {
                let _ = writeln!(s, "{c},{},{}", inst.aggregate.counts[c], opt(*v));
            }
        }
        s
    }

    /// Single-line JSON record of the headline numbers.
    pub fn summary_json(&self) -> String {
        let mut m = serde_json::Map::new();
        m.insert("label".into(), json!(self.label));
        m.insert("task".into(), json!(self.task.as_str()));
        m.insert("samples".into(), json!(self.samples));
        m.insert("manifest_checksum".into(), json!(self.manifest_checksum));
        if let Some(seg) = &self.seg {
            m.insert("miou".into(), json!(seg.miou));
            m.insert("pixel_accuracy".into(), json!(seg.pixel_accuracy));
            m.insert("boundary_f".into(), json!(seg.boundary_overall.f_measure));
        }
        if let Some(d) = &self.depth {
            m.insert("rel".into(), json!(d.rel));
            m.insert("log10".into(), json!(d.log10));
            m.insert("rms".into(), json!(d.rms));
            m.insert("delta_1.25".into(), json!(d.delta[2]));
        }
        if let Some(n) = &self.normal {
            m.insert("angle_mean".into(), json!(n.mean));
            m.insert("angle_median".into(), json!(n.median));
            m.insert("within_11.25".into(), json!(n.within[2]));
        }
        serde_json::Value::Object(m).to_string()
    }
}

/// Splits report CSV text into its `# name` blocks (header row included).
pub fn parse_blocks(text: &str) -> BTreeMap<String, Vec<Vec<String>>> {
    let mut out: BTreeMap<String, Vec<Vec<String>>> = BTreeMap::new();
    let mut current: Option<String> = None;
    for line in text.lines() {
        if let Some(name) = line.strip_prefix("# ") {
            current = Some(name.trim().to_string());
            out.entry(name.trim().to_string()).or_default();
        } else if !line.trim().is_empty() {
            if let Some(c) = &current {
                out.get_mut(c)
                    .expect("block exists")
                    .push(line.split(',').map(str::to_string).collect());
            }
        }
    }
    out
}
