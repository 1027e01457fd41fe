use std::sync::OnceLock;

use super::*;
use crate::morphable_model::generate_synthetic_basis;

fn basis() -> &'static MorphableBasis {
    static B: OnceLock<MorphableBasis> = OnceLock::new();
    B.get_or_init(|| generate_synthetic_basis(42, 300).unwrap())
}

fn small_cfg(count: usize) -> SamplerConfig {
    SamplerConfig {
        count,
        size: 32,
        ..SamplerConfig::default()
    }
}

#[test]
fn params_are_deterministic_per_index() {
    let cfg = small_cfg(10);
    let a = sample_params(&cfg, basis(), 7).unwrap();
    let b = sample_params(&cfg, basis(), 7).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, sample_params(&cfg, basis(), 8).unwrap());
    let other = SamplerConfig { seed: 2, ..cfg };
    assert_ne!(a, sample_params(&other, basis(), 7).unwrap());
}

#[test]
fn yaw_buckets_are_balanced() {
    let cfg = small_cfg(10_000);
    let mut counts = [0usize; 3];
    for i in 0..10_000 {
        let p = sample_params(&cfg, basis(), i).unwrap();
        let yaw = yaw_degrees(&p).unwrap();
        counts[((yaw / 30.0) as usize).min(2)] += 1;
    }
    for c in counts {
        let share = c as f64 / 10_000.0;
        assert!((share - 1.0 / 3.0).abs() <= 0.02, "bucket shares {counts:?}");
    }
}

#[test]
fn landmarks_stay_in_crop_and_labels_are_consistent() {
    let cfg = small_cfg(300);
    let s = cfg.size as f64;
    for i in 0..300 {
        let rec = generate_sample(&cfg, basis(), i).unwrap();
        for q in rec.landmarks_g.points() {
            assert!((0.0..s).contains(&q[0]) && (0.0..s).contains(&q[1]));
        }
        assert_eq!(rec.landmarks_g, project(basis(), &rec.p_g).unwrap());
        let yaw = decompose_pose(rec.p_g.pose()).unwrap().yaw.abs().to_degrees();
        assert_eq!(rec.yaw_deg, yaw);
        assert!(rec.image.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(rec.image.len(), 3 * 32 * 32);
    }
}

#[test]
fn impossible_framing_is_a_config_error() {
    let cfg = SamplerConfig {
        scale_min: 5.0,
        scale_max: 6.0,
        ..small_cfg(1)
    };
    match sample_params(&cfg, basis(), 0) {
        Err(Error::Config(m)) => assert!(m.contains("100"), "{m}"),
        other => panic!("expected config error, got {other:?}"),
    }
}

#[test]
fn config_validation() {
    assert!(small_cfg(1).validate().is_ok());
    for bad in [
        SamplerConfig { occlusion_prob: 1.5, ..small_cfg(1) },
        SamplerConfig { yaw_max_deg: 90.0, ..small_cfg(1) },
        SamplerConfig { scale_min: 0.4, ..small_cfg(1) },
        SamplerConfig { lighting_min: 0.0, ..small_cfg(1) },
        SamplerConfig { size: 4, ..small_cfg(1) },
    ] {
        assert!(bad.validate().is_err(), "{bad:?}");
    }
}

#[test]
fn clean_render_is_reproducible() {
    let cfg = SamplerConfig {
        noise_std: 0.0,
        ..small_cfg(1)
    };
    let p = sample_params(&cfg, basis(), 3).unwrap();
    let a = render_sample_with(&p, basis(), &cfg, 3, Some(false), Some(false)).unwrap();
    let b = render_sample_with(&p, basis(), &cfg, 3, Some(false), Some(false)).unwrap();
    assert_eq!(a, b);
    let peak = a.image.iter().cloned().fold(0.0f32, f32::max);
    assert!((peak - 1.0).abs() < 1e-6, "max-normalised render peaks at {peak}");
}

#[test]
fn lighting_scales_intensities_exactly() {
    let cfg = small_cfg(1);
    let p = sample_params(&cfg, basis(), 5).unwrap();
    let dark = render_sample_with(&p, basis(), &cfg, 5, Some(false), Some(true)).unwrap();
    let plain = render_sample_with(&p, basis(), &cfg, 5, Some(false), Some(false)).unwrap();
    assert!(dark.lighting >= 0.5 && dark.lighting <= 1.0);
    assert_eq!(plain.lighting, 1.0);
    for (d, c) in dark.image.iter().zip(&plain.image) {
        assert_eq!(*d, (*c as f64 * dark.lighting) as f32);
    }
    let mean = |v: &[f32]| v.iter().map(|&x| x as f64).sum::<f64>() / v.len() as f64;
    let ratio = mean(&dark.image) / mean(&plain.image);
    assert!((ratio - dark.lighting).abs() < 1e-6);
    assert_eq!(dark.p_g, plain.p_g);
}

#[test]
fn occlusion_changes_pixels_not_labels() {
    let cfg = small_cfg(1);
    let s = cfg.size;
    for idx in 0..20 {
        let p = sample_params(&cfg, basis(), idx).unwrap();
        let occ = render_sample_with(&p, basis(), &cfg, idx, Some(true), Some(false)).unwrap();
        let clean = render_sample_with(&p, basis(), &cfg, idx, Some(false), Some(false)).unwrap();
        assert!(occ.occluded && !clean.occluded);
        assert_eq!(occ.p_g, clean.p_g);
        assert_eq!(occ.landmarks_g, clean.landmarks_g);
        assert_eq!(occ.yaw_deg, clean.yaw_deg);
        // Bounding box of the changed pixels.
        let plane = s * s;
        let mut rows = (usize::MAX, 0);
        let mut cols = (usize::MAX, 0);
        for i in 0..plane {
            if (0..3).any(|c| occ.image[c * plane + i] != clean.image[c * plane + i]) {
                rows = (rows.0.min(i / s), rows.1.max(i / s));
                cols = (cols.0.min(i % s), cols.1.max(i % s));
            }
        }
        let area = (rows.1 + 1 - rows.0) * (cols.1 + 1 - cols.0);
        let share = area as f64 / plane as f64;
        assert!((0.08..=0.33).contains(&share), "occluded share {share}");
    }
}

#[test]
fn generation_is_worker_count_invariant() {
    let cfg = small_cfg(12);
    let a = generate_dataset(&cfg, basis(), 1).unwrap();
    let b = generate_dataset(&cfg, basis(), 3).unwrap();
    assert_eq!(a, b);
    assert_eq!(dataset_bytes(&a), dataset_bytes(&b));
    assert!(a.check_basis(basis()).is_ok());
    let other = generate_synthetic_basis(43, 300).unwrap();
    assert!(matches!(a.check_basis(&other), Err(Error::HashMismatch { .. })));
}

#[test]
fn file_round_trip() {
    let cfg = small_cfg(10);
    let ds = generate_dataset(&cfg, basis(), 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.fpds");
    write_dataset(&ds, &path).unwrap();
    let back = read_dataset(&path).unwrap();
    assert_eq!(back.len(), 10);
    assert_eq!(back.config_text, ds.config_text);
    assert_eq!(back.config_hash, cfg.config_hash());
    for (a, b) in ds.records.iter().zip(&back.records) {
        assert_eq!(a.p_g, b.p_g);
        assert_eq!(a.landmarks_g, b.landmarks_g);
        assert_eq!(a.yaw_deg.to_bits(), b.yaw_deg.to_bits());
        assert_eq!((a.occluded, a.lighting), (b.occluded, b.lighting));
        for (x, y) in a.image.iter().zip(&b.image) {
            assert!((x - y).abs() <= 1.0 / 255.0);
        }
        let mut q = a.clone();
        q.quantize();
        assert_eq!(q.image, b.image);
    }
}

#[test]
fn truncated_file_names_the_record() {
    let ds = generate_dataset(&small_cfg(4), basis(), 1).unwrap();
    let bytes = dataset_bytes(&ds);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.fpds");
    std::fs::write(&path, &bytes[..bytes.len() - 100]).unwrap();
    match read_dataset(&path) {
        Err(Error::Parse { record, .. }) => assert_eq!(record, Some(3)),
        other => panic!("expected parse error, got {other:?}"),
    }
    let mut bad = bytes.clone();
    bad[0] = b'X';
    std::fs::write(&path, &bad).unwrap();
    match read_dataset(&path) {
        Err(Error::Parse { offset, record, .. }) => assert_eq!((offset, record), (0, None)),
        other => panic!("expected parse error, got {other:?}"),
    }
}
