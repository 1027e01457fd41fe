use super::*;
use crate::morphable_model::{
    compose_pose, generate_synthetic_basis, project_vertices, MorphableBasis, ParamVector,
    PARAM_DIM,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_truth(rng: &mut impl Rng, basis: &MorphableBasis) -> ParamVector {
    let pose = compose_pose(
        rng.random_range(10.0..30.0),
        rng.random_range(-1.4..1.4),
        rng.random_range(-0.4..0.4),
        rng.random_range(-0.4..0.4),
        [rng.random_range(20.0..40.0), rng.random_range(20.0..40.0), 0.0],
    )
    .unwrap();
    let id: Vec<f64> = basis.id_scale().iter().map(|s| s * rng.random_range(-1.0..1.0)).collect();
    let exp: Vec<f64> = basis.exp_scale().iter().map(|s| s * rng.random_range(-1.0..1.0)).collect();
    ParamVector::from_parts(&pose, &id, &exp).unwrap()
}

fn perturbed(rng: &mut impl Rng, p: &ParamVector, scale: f64) -> ParamVector {
    let mut q = *p;
    for v in q.0.iter_mut() {
        *v += scale * rng.random_range(-1.0..1.0) * (1.0 + v.abs() * 0.1);
    }
    q
}

/// Central differences of a scalar function of the parameter vector.
fn fd_grad(f: impl Fn(&ParamVector) -> f64, p: &ParamVector, h: f64) -> Vec<f64> {
    (0..PARAM_DIM)
        .map(|i| {
            let mut a = *p;
            a.0[i] += h;
            let mut b = *p;
            b.0[i] -= h;
            (f(&a) - f(&b)) / (2.0 * h)
        })
        .collect()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let scale = a.iter().chain(b).fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

#[test]
fn pdc_examples() {
    let p = ParamVector::zeros();
    let r = pdc(&p, &p);
    assert_eq!(r.value, 0.0);
    assert!(r.grad.iter().all(|&g| g == 0.0));
    let mut q = p;
    q.0[0] = 1.0;
    let r = pdc(&q, &p);
    assert_eq!(r.value, 1.0);
    let mut e = vec![0.0; PARAM_DIM];
    e[0] = 2.0;
    assert_eq!(r.grad, e);
}

#[test]
fn pdc_gradient_matches_central_differences() {
    let basis = generate_synthetic_basis(1, 100).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100 {
        let pg = random_truth(&mut rng, &basis);
        let p = perturbed(&mut rng, &pg, 1.0);
        let fd = fd_grad(|q| pdc(q, &pg).value, &p, 1e-6);
        assert!(rel_err(&pdc(&p, &pg).grad, &fd) < 1e-5);
    }
}

#[test]
fn vdc_examples() {
    let basis = generate_synthetic_basis(2, 100).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let pg = random_truth(&mut rng, &basis);
    assert_eq!(vdc(&pg, &pg, &basis).unwrap().value, 0.0);
    let mut p = pg;
    p.0[3] += 3.0;
    p.0[7] -= 4.0;
    let v = vdc(&p, &pg, &basis).unwrap().value;
    assert!((v - 25.0).abs() < 1e-9, "{v}");
}

#[test]
fn vdc_gradient_matches_central_differences() {
    let basis = generate_synthetic_basis(3, 100).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let pg = random_truth(&mut rng, &basis);
        let p = perturbed(&mut rng, &pg, 0.5);
        let fd = fd_grad(|q| vdc(q, &pg, &basis).unwrap().value, &p, 1e-5);
        let an = vdc(&p, &pg, &basis).unwrap().grad;
        assert!(rel_err(&an, &fd) < 1e-4, "{}", rel_err(&an, &fd));
    }
}

// The definition applied literally: re-project once per parameter.
fn looped_weights(p: &ParamVector, pg: &ParamVector, basis: &MorphableBasis) -> Vec<f64> {
    let base = project_vertices(basis, pg).unwrap();
    let raw: Vec<f64> = (0..PARAM_DIM)
        .map(|i| {
            let mut q = *pg;
            q.0[i] = p.0[i];
            let moved = project_vertices(basis, &q).unwrap();
            let ms: f64 = moved
                .iter()
                .zip(&base)
                .map(|(a, b)| (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2))
                .sum::<f64>()
                / base.len() as f64;
            ms.sqrt()
        })
        .collect();
    let max = raw.iter().cloned().fold(0.0, f64::max);
    if max == 0.0 {
        return vec![1.0; PARAM_DIM];
    }
    raw.iter().map(|r| r / max).collect()
}

#[test]
fn wpdc_weight_examples() {
    let basis = generate_synthetic_basis(4, 120).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let pg = random_truth(&mut rng, &basis);
    assert_eq!(wpdc_weights(&pg, &pg, &basis).unwrap(), WPDCWeights::uniform());

    let mut p = pg;
    p.0[3] += 2.0;
    let w = wpdc_weights(&p, &pg, &basis).unwrap();
    assert_eq!(w.weights[3], 1.0);
    assert!(w.weights.iter().enumerate().all(|(i, &x)| i == 3 || x == 0.0));
}

#[test]
fn wpdc_weights_match_looped_definition() {
    let basis = generate_synthetic_basis(5, 90).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..30 {
        let pg = random_truth(&mut rng, &basis);
        let p = perturbed(&mut rng, &pg, 0.8);
        let fast = wpdc_weights(&p, &pg, &basis).unwrap();
        let slow = looped_weights(&p, &pg, &basis);
        for (a, b) in fast.weights.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }
}

#[test]
fn wpdc_examples_and_gradient() {
    let basis = generate_synthetic_basis(6, 100).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let pg = random_truth(&mut rng, &basis);
    assert_eq!(wpdc(&pg, &pg, &basis).unwrap().value, 0.0);
    for _ in 0..100 {
        let pg = random_truth(&mut rng, &basis);
        let p = perturbed(&mut rng, &pg, 1.0);
        let uniform = wpdc_with_weights(&p, &pg, &WPDCWeights::uniform());
        assert_eq!(uniform, pdc(&p, &pg));
        let w = wpdc_weights(&p, &pg, &basis).unwrap();
        let fd = fd_grad(|q| wpdc_with_weights(q, &pg, &w).value, &p, 1e-6);
        assert!(rel_err(&wpdc_with_weights(&p, &pg, &w).grad, &fd) < 1e-5);
    }
}

#[test]
fn wing_zero_and_knee() {
    let cfg = WingConfig::default();
    assert_eq!(wing(&[[0.0, 0.0]; 68], &cfg).value, 0.0);
    let omega = cfg.omega();
    let below = wing_scalar(omega * (1.0 - 1e-12), &cfg);
    let at = wing_scalar(omega, &cfg);
    assert!((below - at).abs() < 1e-9);
    // The log branch has slope omega/(epsilon + omega) at the knee, the linear
    // branch slope 1: the value joins continuously, the derivative does not.
    let left = wing_scalar_grad(omega * (1.0 - 1e-12), &cfg);
    let right = wing_scalar_grad(omega, &cfg);
    assert!((left - omega / (cfg.epsilon() + omega)).abs() < 1e-9);
    assert_eq!(right, 1.0);
    assert!((cfg.constant() - (omega - omega * (1.0 + omega / cfg.epsilon()).ln())).abs() < 1e-15);
}

#[test]
fn wing_gradient_away_from_knee() {
    let cfg = WingConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..100 {
        let res: Vec<[f64; 2]> = (0..68)
            .map(|_| {
                std::array::from_fn(|_| loop {
                    let x: f64 = rng.random_range(-30.0..30.0);
                    if (x.abs() - cfg.omega()).abs() > 1e-3 && x.abs() > 1e-3 {
                        break x;
                    }
                })
            })
            .collect();
        let an = wing(&res, &cfg).grad;
        let fd: Vec<f64> = (0..136)
            .map(|i| {
                let h = 1e-6;
                let mut a = res.clone();
                a[i / 2][i % 2] += h;
                let mut b = res.clone();
                b[i / 2][i % 2] -= h;
                (wing(&a, &cfg).value - wing(&b, &cfg).value) / (2.0 * h)
            })
            .collect();
        assert!(rel_err(&an, &fd) < 1e-5);
    }
}

#[test]
fn merged_examples() {
    let basis = generate_synthetic_basis(8, 100).unwrap();
    let cfg = WingConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let pg = random_truth(&mut rng, &basis);
    assert_eq!(merged_loss(&pg, &pg, &basis, &cfg).unwrap().value, 0.0);

    let wing = LossReport {
        value: 0.0,
        grad: vec![0.0; PARAM_DIM],
        components: vec![],
    };
    let wp = LossReport {
        value: 3.0,
        grad: (0..PARAM_DIM).map(|i| i as f64).collect(),
        components: vec![],
    };
    let m = combine_merged(&wing, &wp);
    assert_eq!(m.value, 1.5);
    assert_eq!(m.grad[10], 5.0);
    assert_eq!(m.component("wpdc"), Some(3.0));
}

#[test]
fn merged_gradient_matches_central_differences() {
    let basis = generate_synthetic_basis(9, 100).unwrap();
    let cfg = WingConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..30 {
        let pg = random_truth(&mut rng, &basis);
        let p = perturbed(&mut rng, &pg, 0.3);
        let w = wpdc_weights(&p, &pg, &basis).unwrap();
        let m = merged_loss_with_weights(&p, &pg, &basis, &cfg, &w).unwrap();
        let wl = wing_landmarks(&p, &pg, &basis, &cfg).unwrap();
        let wp = wpdc_with_weights(&p, &pg, &w);
        assert!((m.value - (wl.value + 0.5 * wp.value)).abs() <= 1e-12 * m.value.max(1.0));
        for i in 0..PARAM_DIM {
            assert_eq!(m.grad[i], wl.grad[i] + 0.5 * wp.grad[i]);
        }
        let fd = fd_grad(
            |q| merged_loss_with_weights(q, &pg, &basis, &cfg, &w).unwrap().value,
            &p,
            1e-6,
        );
        assert!(rel_err(&m.grad, &fd) < 1e-4, "{}", rel_err(&m.grad, &fd));
    }
}

proptest! {
    #[test]
    fn wing_even_and_monotone(x in -100.0f64..100.0, dx in 0.0f64..10.0) {
        let cfg = WingConfig::default();
        prop_assert_eq!(wing_scalar(x, &cfg), wing_scalar(-x, &cfg));
        prop_assert!(wing_scalar(x.abs() + dx, &cfg) >= wing_scalar(x.abs(), &cfg));
        prop_assert!(wing_scalar(x, &cfg) >= 0.0);
    }

    #[test]
    fn parameter_losses_non_negative(seed in 0u64..1000) {
        let basis = generate_synthetic_basis(10, 80).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pg = random_truth(&mut rng, &basis);
        let p = perturbed(&mut rng, &pg, 1.0);
        prop_assert!(pdc(&p, &pg).value > 0.0);
        prop_assert!(wpdc(&p, &pg, &basis).unwrap().value > 0.0);
        prop_assert!(vdc(&p, &pg, &basis).unwrap().value >= 0.0);
    }
}
