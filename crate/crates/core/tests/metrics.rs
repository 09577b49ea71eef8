use asmlab::data::{GenConfig, Mask, Sample, Target};
use asmlab::metrics::{
    angle_deg, background_confusion, boundary_pixels, boundary_prf, compare_reports, depth_metrics,
    evaluate_predictions, instance_aggregate, instance_regions, max_matching, normal_metrics,
    seg_metrics, top_stimuli, ConfusionMatrix, Prediction,
};
use asmlab::nets::{build_network, NetworkSpec};
use asmlab::tensor::Tensor;
use asmlab::TaskKind;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Maximum matching by exhaustive search over subsets of `b` (bitmask DP).
fn exhaustive_matching(a: &[(usize, usize)], b: &[(usize, usize)], tol: f64) -> usize {
    assert!(b.len() <= 16);
    let ok = |i: usize, j: usize| {
        let dr = a[i].0 as f64 - b[j].0 as f64;
        let dc = a[i].1 as f64 - b[j].1 as f64;
        (dr * dr + dc * dc).sqrt() <= tol
    };
    // best[mask] after processing a prefix of `a`: most pairs using exactly the gt set `mask`.
    let full = 1usize << b.len();
    let mut best = vec![-1i64; full];
    best[0] = 0;
    for i in 0..a.len() {
        let prev = best.clone();
        for mask in 0..full {
            if prev[mask] < 0 {
                continue;
            }
            for j in 0..b.len() {
                if mask & (1 << j) == 0 && ok(i, j) {
                    let m2 = mask | (1 << j);
                    best[m2] = best[m2].max(prev[mask] + 1);
                }
            }
        }
    }
    best.into_iter().max().unwrap() as usize
}

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

#[test]
fn seg_metric_examples() {
    let gt = [0u8, 0, 1, 1];
    assert_eq!(seg_metrics(&gt, &gt, 2).unwrap().miou, 1.0);
    let m = seg_metrics(&[0, 1, 1, 1], &gt, 2).unwrap();
    assert_eq!(m.iou, vec![Some(0.5), Some(2.0 / 3.0)]);
    assert!((m.miou - 7.0 / 12.0).abs() < 1e-15);
    assert_eq!(m.confusion.rows(), vec![vec![1, 1], vec![0, 2]]);
    let d = seg_metrics(&[1, 1, 0, 0], &[2, 2, 0, 0], 3).unwrap();
    assert_eq!(d.iou[2], Some(0.0));
    assert!(matches!(
        seg_metrics(&[5], &[0], 2),
        Err(asmlab::Error::Data(_))
    ));
}

#[test]
fn miou_matches_brute_force_on_random_masks() {
    let mut r = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..1000 {
        let classes = r.gen_range(2..6);
        let gt: Vec<u8> = (0..64).map(|_| r.gen_range(0..classes) as u8).collect();
        let pred: Vec<u8> = (0..64).map(|_| r.gen_range(0..classes) as u8).collect();
        let m = seg_metrics(&pred, &gt, classes).unwrap();
        let oracle = brute_miou(&pred, &gt, classes);
        assert_eq!(m.miou, oracle);
        assert_eq!(m.confusion.miou(), m.miou);
        for c in 0..classes {
            let row: u64 = m.confusion.row(c).iter().sum();
            assert_eq!(
                row as usize,
                gt.iter().filter(|&&g| g as usize == c).count()
            );
        }
    }
}

#[test]
fn boundary_examples() {
    let (w, h) = (12, 10);
    let rect = |dx: usize| {
        let mut m = vec![0u8; w * h];
        for r in 3..7 {
            for c in 3 + dx..8 + dx {
                m[r * w + c] = 1;
            }
        }
        m
    };
    let gt = rect(0);
    for v in boundary_prf(&gt, &gt, w, h, 2, 0.0)
        .unwrap()
        .into_iter()
        .flatten()
    {
        assert_eq!((v.precision, v.recall, v.f_measure), (1.0, 1.0, 1.0));
    }
    let shifted = rect(1);
    for v in boundary_prf(&shifted, &gt, w, h, 2, 1.5)
        .unwrap()
        .into_iter()
        .flatten()
    {
        assert_eq!(v.f_measure, 1.0);
    }
    let empty = vec![0u8; w * h];
    let v = boundary_prf(&empty, &gt, w, h, 2, 1.0).unwrap();
    assert_eq!(v[1].unwrap().f_measure, 0.0);
}

#[test]
fn boundary_matching_equals_exhaustive_oracle() {
    let mut r = ChaCha8Rng::seed_from_u64(2);
    let mut cases = 0;
    while cases < 300 {
        let (w, h) = (r.gen_range(3..7), r.gen_range(3..7));
        let mk = |r: &mut ChaCha8Rng| {
            let mut m = vec![0u8; w * h];
            let blobs = r.gen_range(1..3);
            for _ in 0..blobs {
                let (r0, c0) = (r.gen_range(0..h), r.gen_range(0..w));
                let (r1, c1) = (r.gen_range(r0..h), r.gen_range(c0..w));
                for y in r0..=r1 {
                    for x in c0..=c1 {
                        m[y * w + x] = 1;
                    }
                }
            }
            m
        };
        let (pred, gt) = (mk(&mut r), mk(&mut r));
        let bp = boundary_pixels(&pred, w, h, 1);
        let bg = boundary_pixels(&gt, w, h, 1);
        if bp.len() > 12 || bg.len() > 12 {
            continue;
        }
        let tol = [0.0, 1.0, 1.5, 2.3][r.gen_range(0..4)];
        let fast = max_matching(&bp, &bg, tol);
        assert_eq!(fast, exhaustive_matching(&bp, &bg, tol));
        let prf = boundary_prf(&pred, &gt, w, h, 2, tol).unwrap()[1];
        if let Some(v) = prf {
            let p = if bp.is_empty() {
                0.0
            } else {
                fast as f64 / bp.len() as f64
            };
            let rc = if bg.is_empty() {
                0.0
            } else {
                fast as f64 / bg.len() as f64
            };
            assert_eq!(v.precision, p);
            assert_eq!(v.recall, rc);
        }
        cases += 1;
    }
}

#[test]
fn depth_closed_forms() {
    let m = depth_metrics(&[2.0; 4], &[2.0; 4], None).unwrap();
    assert_eq!((m.rel, m.log10, m.rms), (0.0, 0.0, 0.0));
    assert!(m.delta.iter().all(|&d| d == 1.0));
    let m = depth_metrics(&[3.0; 4], &[2.0; 4], None).unwrap();
    assert!((m.rel - 0.5).abs() <= 1e-12);
    assert!((m.rms - 1.0).abs() <= 1e-12);
    assert!((m.log10 - (1.5f64).log10()).abs() <= 1e-12);
    assert_eq!(m.delta[2], 0.0);
    assert_eq!(m.delta[3], 1.0);
    assert!(matches!(
        depth_metrics(&[1.0], &[0.0], None),
        Err(asmlab::Error::Data(_))
    ));
    let masked = depth_metrics(&[1.0, 5.0], &[0.0, 5.0], Some(&[false, true])).unwrap();
    assert_eq!(masked.rel, 0.0);
}

#[test]
fn normal_closed_forms() {
    let gt = [0.0, 0.0, 0.0, 0.0, 1.0, 1.0];
    let m = normal_metrics(&gt, &gt, None).unwrap();
    assert!(m.mean.abs() <= 1e-12 && m.median.abs() <= 1e-12);
    assert!(m.within.iter().all(|&v| v == 1.0));
    let ortho = [1.0, 0.0, 0.0, 1.0, 0.0, 0.0];
    let m = normal_metrics(&ortho, &gt, None).unwrap();
    assert!((m.mean - 90.0).abs() <= 1e-12);
    assert!(m.within.iter().all(|&v| v == 0.0));
    assert!(normal_metrics(&[0.0; 3], &[0.0, 0.0, 1.0], None)
        .unwrap()
        .mean
        .is_finite());
}

#[test]
fn median_takes_lower_midpoint() {
    let angles_deg: [f64; 4] = [10.0, 20.0, 30.0, 40.0];
    let mut pred = vec![0.0; 12];
    let mut gt = vec![0.0; 12];
    for (i, a) in angles_deg.iter().enumerate() {
        let t = a.to_radians();
        pred[i] = t.sin();
        pred[8 + i] = t.cos();
        gt[8 + i] = 1.0;
    }
    let m = normal_metrics(&pred, &gt, None).unwrap();
    assert!((m.median - 20.0).abs() < 1e-12);
    assert!((m.mean - 25.0).abs() < 1e-12);
}

proptest! {
    #[test]
    fn delta_accuracy_is_monotone(vals in prop::collection::vec((0.1f64..10.0, 0.1f64..10.0), 1..40)) {
        let (p, g): (Vec<f64>, Vec<f64>) = vals.into_iter().unzip();
        let m = depth_metrics(&p, &g, None).unwrap();
        for k in 1..5 {
            prop_assert!(m.delta[k] >= m.delta[k - 1]);
        }
    }

    #[test]
    fn angle_is_scale_invariant(p in prop::array::uniform3(-1.0f64..1.0), s in 0.01f64..100.0) {
        prop_assume!(p.iter().map(|v| v * v).sum::<f64>() > 1e-4);
        let g = [0.0, 0.6, 0.8];
        let a = angle_deg(p, g);
        let b = angle_deg(p.map(|v| v * s), g);
        prop_assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn instance_aggregation() {
    let inst = Mask::new(4, 1, vec![1, 1, 2, 2]).unwrap();
    let regions = instance_regions(0, &inst, |_, _| 1);
    let agg = instance_aggregate(&regions, 3, |r| if r.instance == 1 { 0.2 } else { 0.8 });
    assert!((agg.per_class[1].unwrap() - 0.5).abs() < 1e-15);
    assert_eq!(agg.missing, vec![0, 2]);

    // Unequal areas: still the unweighted mean.
    let inst = Mask::new(5, 1, vec![1, 2, 2, 2, 2]).unwrap();
    let regions = instance_regions(0, &inst, |_, _| 1);
    let agg = instance_aggregate(&regions, 2, |r| if r.pixels.len() == 1 { 0.2 } else { 0.8 });
    assert!((agg.per_class[1].unwrap() - 0.5).abs() < 1e-15);

    // Randomized three-instance case against direct per-region recomputation.
    let mut r = ChaCha8Rng::seed_from_u64(3);
    let ids: Vec<u8> = (0..36).map(|_| r.gen_range(1..4)).collect();
    let values: Vec<f64> = (0..36).map(|_| r.gen()).collect();
    let inst = Mask::new(6, 6, ids.clone()).unwrap();
    let regions = instance_regions(0, &inst, |id, _| (id as usize) % 2);
    let mean_of = |id: u8| {
        let v: Vec<f64> = (0..36)
            .filter(|&i| ids[i] == id)
            .map(|i| values[i])
            .collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let agg = instance_aggregate(&regions, 2, |reg| {
        reg.pixels.iter().map(|&i| values[i]).sum::<f64>() / reg.pixels.len() as f64
    });
    assert!((agg.per_class[1].unwrap() - (mean_of(1) + mean_of(3)) / 2.0).abs() < 1e-12);
    assert!((agg.per_class[0].unwrap() - mean_of(2)).abs() < 1e-12);
}

#[test]
fn background_confusion_examples() {
    let perfect =
        ConfusionMatrix::from_rows(&[vec![5, 0, 0], vec![0, 3, 0], vec![0, 0, 2]]).unwrap();
    assert_eq!(background_confusion(&perfect), vec![Some(0.0), Some(0.0)]);
    let bg = ConfusionMatrix::from_rows(&[vec![5, 0, 0], vec![4, 0, 0], vec![0, 0, 0]]).unwrap();
    assert_eq!(background_confusion(&bg), vec![Some(1.0), None]);
    let mut r = ChaCha8Rng::seed_from_u64(4);
    let rows: Vec<Vec<u64>> = (0..4)
        .map(|_| (0..4).map(|_| r.gen_range(1..50)).collect())
        .collect();
    let cm = ConfusionMatrix::from_rows(&rows).unwrap();
    for (i, v) in background_confusion(&cm).into_iter().enumerate() {
        let row = &rows[i + 1];
        assert_eq!(v.unwrap(), row[0] as f64 / row.iter().sum::<u64>() as f64);
    }
}

fn tiny_analyzer(channels: usize) -> NetworkSpec {
    NetworkSpec::parse(&format!(
        "@role\tanalyzer\n@input\tinput\t{channels}\n@head\toutput\tdepth\n@taps\tconv1\n\
conv1\tinput\t3\t1\t1\t1\t0\noutput\tconv1\t1\t1\t1\t1\t0\n"
    ))
    .unwrap()
}

#[test]
fn top_stimuli_tie_order_and_empty() {
    let mut net = build_network(&tiny_analyzer(1), 0).unwrap();
    net.params_mut()[0].data_mut().fill(0.0);
    let x = Tensor::full(vec![2, 1, 8, 8], 1.0);
    let none = top_stimuli(&net, &[vec![x.clone()]], "conv1", 0, 0).unwrap();
    assert!(none.entries.is_empty());
    let ts = top_stimuli(&net, &[vec![x]], "conv1", 0, 6).unwrap();
    assert_eq!(ts.patch_size, 3);
    let keys: Vec<_> = ts
        .entries
        .iter()
        .map(|e| (e.sample, e.row, e.col))
        .collect();
    let mut sorted = keys.clone();
    sorted.sort();
    assert_eq!(keys, sorted);
    assert_eq!(keys[0], (0, 0, 0));
    let lots = top_stimuli(
        &net,
        &[vec![Tensor::full(vec![1, 1, 8, 8], 1.0)]],
        "conv1",
        0,
        1000,
    )
    .unwrap();
    assert!(lots.truncated && lots.entries.len() < 1000);
}

#[test]
fn planted_ridge_filter_finds_thin_bars() {
    let cfg = GenConfig {
        n_train: 30,
        n_val: 0,
        size: 32,
        seed: 9,
        ..GenConfig::default()
    };
    let samples: Vec<Sample> = (0..30).map(|i| cfg.sample(i).unwrap()).collect();
    let classes = cfg.classes;
    let bar_class = 3;
    let mut net = build_network(&tiny_analyzer(classes), 0).unwrap();
    // Vertical ridge detector on the bar channel only.
    let w = net.params_mut()[0].data_mut();
    w.fill(0.0);
    for r in 0..3 {
        for (c, v) in [-1.0, 2.0, -1.0].iter().enumerate() {
            w[bar_class * 9 + r * 3 + c] = *v;
        }
    }
    let inputs: Vec<Vec<Tensor>> = samples
        .iter()
        .map(|s| asmlab::data::target_batch(&[s], TaskKind::Segmentation, classes).unwrap())
        .collect();
    let ts = top_stimuli(&net, &inputs, "conv1", 0, 10).unwrap();
    assert_eq!(ts.entries.len(), 10);
    for e in &ts.entries {
        let Target::Classes(m) = &samples[e.sample].target else {
            unreachable!()
        };
        assert_eq!(m.get(e.row, e.col) as usize, bar_class, "{e:?}");
    }
    let montage = ts.montage().unwrap();
    assert_eq!(montage.width, 5 * 4 + 1);
}

fn gt_report(label: &str) -> String {
    let cfg = GenConfig {
        n_train: 4,
        n_val: 0,
        size: 32,
        seed: 1,
        ..GenConfig::default()
    };
    let samples: Vec<Sample> = (0..4).map(|i| cfg.sample(i).unwrap()).collect();
    let preds: Vec<Prediction> = samples.iter().map(Prediction::from_target).collect();
    evaluate_predictions(label, TaskKind::Segmentation, 4, &samples, &preds, "abc", 2)
        .unwrap()
        .to_csv()
}

#[test]
fn ground_truth_evaluates_perfectly_and_deterministically() {
    let cfg = GenConfig {
        task: TaskKind::Joint,
        n_train: 3,
        n_val: 0,
        size: 16,
        seed: 1,
        ..GenConfig::default()
    };
    let samples: Vec<Sample> = (0..3).map(|i| cfg.sample(i).unwrap()).collect();
    let preds: Vec<Prediction> = samples.iter().map(Prediction::from_target).collect();
    let rep = evaluate_predictions("gt", TaskKind::Joint, 5, &samples, &preds, "x", 3).unwrap();
    let d = rep.depth.unwrap();
    assert_eq!((d.rel, d.rms), (0.0, 0.0));
    assert!(rep.normal.unwrap().mean < 1e-6);
    let a = gt_report("gt");
    assert_eq!(a, gt_report("gt"));
    assert!(a.contains("mean,1\n"));
}

#[test]
fn comparison_deltas() {
    let a = gt_report("asm");
    let same = compare_reports(&a, &a).unwrap();
    assert!(same.rows.iter().filter_map(|r| r.delta()).all(|d| d == 0.0));
    assert!(same.to_svg("boundary", "precision").starts_with("<svg"));

    let mk = |label: &str, iou: &[&str]| {
        let mut s = format!(
            "# summary\nkey,value\nlabel,{label}\nmanifest_checksum,m\n\n# iou\nclass,iou\n"
        );
        for (c, v) in iou.iter().enumerate() {
            s.push_str(&format!("{c},{v}\n"));
        }
        s
    };
    let cmp = compare_reports(
        &mk("asm", &["0.9", "0.5", "0.7"]),
        &mk("iid", &["0.8", "0.75", "n/a"]),
    )
    .unwrap();
    let d: Vec<Option<f64>> = cmp.series("iou", "iou").iter().map(|r| r.delta()).collect();
    assert!((d[0].unwrap() - 0.1).abs() < 1e-15);
    assert!((d[1].unwrap() + 0.25).abs() < 1e-15);
    assert_eq!(d[2], None);
    assert!(cmp.to_csv().contains("iou,2,iou,0.7,n/a,n/a"));

    let other = mk("x", &["1"]).replace("manifest_checksum,m", "manifest_checksum,z");
    assert!(matches!(
        compare_reports(&other, &mk("y", &["1"])),
        Err(asmlab::Error::Config(_))
    ));
}
