use std::collections::HashSet;

use asmlab::data::{
    decode_pfm, decode_pgm, encode_pfm, encode_pgm, generate_dataset, pixel_coord, render_planes,
    sample_rng, segmentation_layout, DatasetManifest, FloatMap, GenConfig, Mask, Plane, SegParams,
    Shape, Target,
};
use asmlab::{Error, TaskKind};
use proptest::prelude::*;

fn seg_cfg(n: usize, size: usize) -> GenConfig {
    GenConfig {
        n_train: n,
        n_val: n / 4,
        size,
        seed: 7,
        ..GenConfig::default()
    }
}

#[test]
fn pgm_header_byte_count() {
    let m = Mask::new(3, 2, vec![0, 1, 2, 3, 4, 5]).unwrap();
    let bytes = encode_pgm(&m);
    let header = "P5\n3 2\n255\n";
    assert_eq!(bytes.len(), header.len() + 6);
    assert_eq!(&bytes[..header.len()], header.as_bytes());
}

#[test]
fn pgm_rejects_other_maxval_and_size_mismatch() {
    assert!(matches!(
        decode_pgm(b"P5\n2 1\n65535\n\0\0\0\0"),
        Err(Error::Format(_))
    ));
    assert!(matches!(
        decode_pgm(b"P5\n2 2\n255\n\0\0\0"),
        Err(Error::Format(_))
    ));
    assert!(matches!(
        decode_pgm(b"P2\n1 1\n255\n0"),
        Err(Error::Format(_))
    ));
}

#[test]
fn pfm_quantization_and_row_order() {
    let c = FloatMap::new(1, 3, 2, vec![1.5; 6]).unwrap();
    assert_eq!(decode_pfm(&encode_pfm(&c).unwrap()).unwrap(), c);

    let pi = FloatMap::new(1, 1, 1, vec![std::f64::consts::PI]).unwrap();
    let back = decode_pfm(&encode_pfm(&pi).unwrap()).unwrap();
    assert_eq!(back.data[0], f64::from(std::f64::consts::PI as f32));

    // A marker in the top-left pixel lands in the first pixel of the last stored row.
    let mut marker = FloatMap::new(1, 4, 3, vec![0.0; 12]).unwrap();
    marker.data[0] = 9.0;
    let bytes = encode_pfm(&marker).unwrap();
    let header = "Pf\n4 3\n-1.0\n".len();
    let payload = &bytes[header..];
    let last_row = 2 * 4 * 4;
    assert_eq!(
        f32::from_le_bytes(payload[last_row..last_row + 4].try_into().unwrap()),
        9.0
    );
    assert!(payload[..last_row].iter().all(|&b| b == 0));
}

#[test]
fn pfm_rejects_big_endian_and_nan() {
    let mut be = b"Pf\n1 1\n1.0\n".to_vec();
    be.extend_from_slice(&1.0f32.to_be_bytes());
    assert!(matches!(decode_pfm(&be), Err(Error::Format(_))));
    let mut nan = b"Pf\n1 1\n-1.0\n".to_vec();
    nan.extend_from_slice(&f32::NAN.to_le_bytes());
    assert!(matches!(decode_pfm(&nan), Err(Error::Format(_))));
}

proptest! {
    #[test]
    fn pgm_round_trip(w in 1usize..20, h in 1usize..20, seed in any::<u64>()) {
        use rand::Rng;
        let mut r = sample_rng(seed, 0);
        let m = Mask::new(w, h, (0..w * h).map(|_| r.gen()).collect()).unwrap();
        prop_assert_eq!(decode_pgm(&encode_pgm(&m)).unwrap(), m);
    }

    #[test]
    fn pfm_round_trip_within_f32(vals in prop::collection::vec(-1e6f64..1e6, 3 * 12)) {
        let m = FloatMap::new(3, 4, 3, vals.clone()).unwrap();
        let back = decode_pfm(&encode_pfm(&m).unwrap()).unwrap();
        for (a, b) in vals.iter().zip(&back.data) {
            prop_assert_eq!(f64::from(*a as f32), *b);
        }
    }
}

#[test]
fn single_disc_area_matches_analytic_area() {
    let p = SegParams {
        size: 64,
        classes: 2,
        clutter: 0,
    };
    let mut checked = 0;
    for idx in 0..40 {
        let shapes = segmentation_layout(&p, &mut sample_rng(3, idx));
        assert_eq!(shapes.len(), 1);
        let Shape::Disc { cx, cy, r } = shapes[0].1 else {
            panic!("class 1 draws discs")
        };
        if cx - r < 0.0 || cy - r < 0.0 || cx + r > 64.0 || cy + r > 64.0 {
            continue;
        }
        let s = asmlab::data::segmentation_sample(&p, 3, idx).unwrap();
        let Target::Classes(m) = &s.target else {
            unreachable!()
        };
        let count = m.data.iter().filter(|&&c| c == 1).count() as f64;
        let pi = std::f64::consts::PI;
        assert!(
            count >= pi * (r - 1.0).powi(2) && count <= pi * (r + 1.0).powi(2),
            "{count} vs r={r}"
        );
        checked += 1;
    }
    assert!(checked >= 10);
}

#[test]
fn generation_is_byte_identical_and_splits_are_disjoint() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = seg_cfg(8, 32);
    let sa = generate_dataset(&cfg, a.path()).unwrap();
    let sb = generate_dataset(&cfg, b.path()).unwrap();
    assert_eq!(sa.checksum().unwrap(), sb.checksum().unwrap());
    for (fa, fb) in sa.train.files().iter().zip(sb.train.files()) {
        assert_eq!(std::fs::read(fa).unwrap(), std::fs::read(fb).unwrap());
    }
    let train: HashSet<_> = sa.train.records.iter().map(|r| r.id.clone()).collect();
    assert!(sa.val.records.iter().all(|r| !train.contains(&r.id)));
    assert_eq!(train.len() + sa.val.len(), 10);

    let loaded = DatasetManifest::load(&sa.train_path).unwrap();
    assert_eq!(loaded.to_text(), sa.train.to_text());
    let s0 = loaded.load_sample(0).unwrap();
    let idx: u64 = s0.id.parse().unwrap();
    assert_eq!(s0, cfg.sample(idx).unwrap());
}

#[test]
fn empty_dataset_is_valid() {
    let d = tempfile::tempdir().unwrap();
    let set = generate_dataset(&seg_cfg(0, 32), d.path()).unwrap();
    let m = DatasetManifest::load(&set.train_path).unwrap();
    assert!(m.is_empty());
    assert_eq!(m.task, TaskKind::Segmentation);
}

#[test]
fn fronto_parallel_plane_is_constant() {
    let r = render_planes(16, &[Plane::fronto_parallel(2.5, 1)]).unwrap();
    assert!(r.depth.data.iter().all(|&d| d == 2.5));
    let hw = 256;
    for i in 0..hw {
        assert_eq!(
            [
                r.normal.data[i],
                r.normal.data[hw + i],
                r.normal.data[2 * hw + i]
            ],
            [0.0, 0.0, 1.0]
        );
    }
}

#[test]
fn two_planes_meet_at_the_expected_row() {
    let size = 32;
    let row = 20;
    // The tilted plane crosses depth 3 exactly on the border between rows 19 and 20.
    let y_border = (row as f64 / size as f64 - 0.5) * 4.0;
    let slope = -0.8;
    let tilted = Plane {
        depth0: 3.0 - slope * y_border,
        slope_x: 0.0,
        slope_y: slope,
        region: None,
        instance: 2,
        albedo: 0.5,
    };
    let r = render_planes(size, &[Plane::fronto_parallel(3.0, 1), tilted]).unwrap();
    let hw = size * size;
    let expected = tilted.normal();
    for rr in 0..size {
        assert!(pixel_coord(rr, size) < y_border || rr >= row);
        for c in 0..size {
            let i = rr * size + c;
            let n = [
                r.normal.data[i],
                r.normal.data[hw + i],
                r.normal.data[2 * hw + i],
            ];
            if rr < row {
                assert_eq!(n, [0.0, 0.0, 1.0], "row {rr}");
            } else {
                assert_eq!(n, expected, "row {rr}");
            }
        }
    }
}

#[test]
fn room_targets_are_unit_and_positive() {
    for task in [TaskKind::Depth, TaskKind::Normal, TaskKind::Joint] {
        let cfg = GenConfig {
            task,
            n_train: 6,
            n_val: 0,
            size: 32,
            seed: 11,
            ..GenConfig::default()
        };
        for i in 0..6 {
            let s = cfg.sample(i).unwrap();
            s.validate().unwrap();
            if let Target::Joint { depth, normal } = &s.target {
                assert!(depth.data.iter().all(|&d| d > 0.0));
                let hw = 32 * 32;
                for p in 0..hw {
                    let n: f64 = (0..3)
                        .map(|c| normal.data[c * hw + p].powi(2))
                        .sum::<f64>()
                        .sqrt();
                    assert!((n - 1.0).abs() <= 1e-9);
                }
            }
        }
    }
}

#[test]
fn room_round_trips_through_files() {
    let d = tempfile::tempdir().unwrap();
    let cfg = GenConfig {
        task: TaskKind::Joint,
        n_train: 3,
        n_val: 1,
        size: 16,
        seed: 2,
        ..GenConfig::default()
    };
    let set = generate_dataset(&cfg, d.path()).unwrap();
    assert!(set.train.records[0].target.contains('+'));
    for (k, rec) in set.train.records.iter().enumerate() {
        let s = set.train.load_sample(k).unwrap();
        assert_eq!(s, cfg.sample(rec.id.parse().unwrap()).unwrap());
    }
}
