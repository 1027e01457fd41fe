//! Deterministic synthetic bases standing in for a scanned-face PCA model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{MorphableBasis, NUM_EXP, NUM_ID, NUM_LANDMARKS};
use crate::{Error, Result};

/// Geometric decay plan for the coefficient priors.
///
/// Column `k` of the identity basis has prior std
/// `id_sigma0 · sqrt(N) · id_ratio^k`, so its RMS effect per vertex is
/// `id_sigma0 · id_ratio^k` (columns are unit-norm over `3N` entries).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BasisPlan {
    pub id_sigma0: f64,
    pub id_ratio: f64,
    pub exp_sigma0: f64,
    pub exp_ratio: f64,
}

impl Default for BasisPlan {
    fn default() -> Self {
        BasisPlan {
            id_sigma0: 0.03,
            id_ratio: 0.9,
            exp_sigma0: 0.02,
            exp_ratio: 0.85,
        }
    }
}

pub fn generate_synthetic_basis(seed: u64, num_vertices: usize) -> Result<MorphableBasis> {
    generate_synthetic_basis_with(seed, num_vertices, BasisPlan::default())
}

pub fn generate_synthetic_basis_with(
    seed: u64,
    num_vertices: usize,
    plan: BasisPlan,
) -> Result<MorphableBasis> {
    let n = num_vertices;
    if n < NUM_LANDMARKS {
        return Err(Error::Config(format!(
            "a basis needs at least {NUM_LANDMARKS} vertices to host the {NUM_LANDMARKS} landmarks, got {n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let cols = (n as f64).sqrt().ceil() as usize;
    let rows = n.div_ceil(cols);
    let mean_shape = face_patch(&mut rng, n, rows, cols);
    let triangles = grid_triangles(n, rows, cols);
    let landmark_indices = farthest_point_landmarks(&mut rng, &mean_shape);

    let columns = orthonormal_fields(&mut rng, &mean_shape, NUM_ID + NUM_EXP);
    let mut id_basis = vec![0.0; 3 * n * NUM_ID];
    let mut exp_basis = vec![0.0; 3 * n * NUM_EXP];
    for row in 0..3 * n {
        for k in 0..NUM_ID {
            id_basis[row * NUM_ID + k] = columns[k][row];
        }
        for k in 0..NUM_EXP {
            exp_basis[row * NUM_EXP + k] = columns[NUM_ID + k][row];
        }
    }
    let root_n = (n as f64).sqrt();
    let id_scale = (0..NUM_ID)
        .map(|k| plan.id_sigma0 * root_n * plan.id_ratio.powi(k as i32))
        .collect();
    let exp_scale = (0..NUM_EXP)
        .map(|k| plan.exp_sigma0 * root_n * plan.exp_ratio.powi(k as i32))
        .collect();

    MorphableBasis::new(
        mean_shape,
        id_basis,
        exp_basis,
        landmark_indices,
        triangles,
        id_scale,
        exp_scale,
    )
}

/// Grid-parameterised patch of an ellipsoid with a nose bump, centred at the origin.
fn face_patch(rng: &mut ChaCha8Rng, n: usize, rows: usize, cols: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(3 * n);
    let du = 2.0 / (cols - 1) as f64;
    let dv = 2.0 / (rows - 1).max(1) as f64;
    for idx in 0..n {
        let (r, c) = (idx / cols, idx % cols);
        let u = -1.0 + c as f64 * du + rng.random_range(-0.15..0.15) * du;
        let v = -1.0 + r as f64 * dv + rng.random_range(-0.15..0.15) * dv;
        let (theta_x, theta_y) = (u * 1.05, v * 1.1);
        let x = 0.8 * theta_x.sin() * theta_y.cos();
        let y = theta_y.sin();
        let mut z = 0.65 * theta_x.cos() * theta_y.cos();
        z += 0.18 * (-(x * x + (y + 0.05) * (y + 0.05)) / 0.02).exp();
        out.extend_from_slice(&[x, y, z]);
    }
    let mut centroid = [0.0; 3];
    for v in out.chunks_exact(3) {
        for d in 0..3 {
            centroid[d] += v[d] / n as f64;
        }
    }
    for v in out.chunks_exact_mut(3) {
        for d in 0..3 {
            v[d] -= centroid[d];
        }
    }
    out
}

fn grid_triangles(n: usize, rows: usize, cols: usize) -> Vec<[u32; 3]> {
    let mut tris = Vec::new();
    for r in 0..rows.saturating_sub(1) {
        for c in 0..cols - 1 {
            let a = r * cols + c;
            let b = a + 1;
            let d = a + cols;
            let e = d + 1;
            if d < n {
                tris.push([a as u32, d as u32, b as u32]);
            }
            if e < n {
                tris.push([b as u32, d as u32, e as u32]);
            }
        }
    }
    tris
}

/// Farthest-point sampling from a seeded starting vertex.
fn farthest_point_landmarks(rng: &mut ChaCha8Rng, mean: &[f64]) -> Vec<u32> {
    let n = mean.len() / 3;
    let dist2 = |a: usize, b: usize| -> f64 {
        (0..3).map(|d| (mean[3 * a + d] - mean[3 * b + d]).powi(2)).sum()
    };
    let first = rng.random_range(0..n);
    let mut chosen = vec![first as u32];
    let mut nearest: Vec<f64> = (0..n).map(|v| dist2(v, first)).collect();
    while chosen.len() < NUM_LANDMARKS {
        let (next, _) = nearest
            .iter()
            .enumerate()
            .fold((0, -1.0), |best, (i, &d)| if d > best.1 { (i, d) } else { best });
        chosen.push(next as u32);
        for (v, slot) in nearest.iter_mut().enumerate() {
            *slot = slot.min(dist2(v, next));
        }
    }
    chosen
}

/// Smooth random displacement fields, orthonormalised jointly.
fn orthonormal_fields(rng: &mut ChaCha8Rng, mean: &[f64], count: usize) -> Vec<Vec<f64>> {
    let n = mean.len() / 3;
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    let mut k = 0;
    while basis.len() < count {
        // Higher-order columns oscillate faster, like trailing PCA modes.
        let freq_scale = 1.0 + k as f64 / 8.0;
        let mut col = vec![0.0; 3 * n];
        for d in 0..3 {
            for _ in 0..3 {
                let w: [f64; 3] = std::array::from_fn(|_| {
                    freq_scale * rng.sample::<f64, _>(StandardNormal)
                });
                let phase = rng.random_range(0.0..std::f64::consts::TAU);
                let amp: f64 = rng.sample(StandardNormal);
                for v in 0..n {
                    let p = &mean[3 * v..3 * v + 3];
                    col[3 * v + d] += amp * (w[0] * p[0] + w[1] * p[1] + w[2] * p[2] + phase).sin();
                }
            }
        }
        k += 1;
        // Two passes of modified Gram-Schmidt.
        let before = norm(&col);
        for _ in 0..2 {
            for q in &basis {
                let dot: f64 = q.iter().zip(&col).map(|(a, b)| a * b).sum();
                for (c, qi) in col.iter_mut().zip(q) {
                    *c -= dot * qi;
                }
            }
        }
        let after = norm(&col);
        if after < 1e-6 * before || after == 0.0 {
            continue;
        }
        for c in col.iter_mut() {
            *c /= after;
        }
        basis.push(col);
    }
    basis
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn column(basis: &MorphableBasis, k: usize) -> Vec<f64> {
        (0..3 * basis.num_vertices()).map(|r| basis.id_at(r, k)).collect()
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let a = generate_synthetic_basis(42, 300).unwrap();
        let b = generate_synthetic_basis(42, 300).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic_basis(43, 300).unwrap();
        assert_ne!(a.mean_shape(), c.mean_shape());
    }

    #[test]
    fn columns_are_orthonormal() {
        let b = generate_synthetic_basis(1, 150).unwrap();
        let n3 = 3 * b.num_vertices();
        let col = |k: usize| -> Vec<f64> {
            if k < NUM_ID {
                (0..n3).map(|r| b.id_at(r, k)).collect()
            } else {
                (0..n3).map(|r| b.exp_at(r, k - NUM_ID)).collect()
            }
        };
        let cols: Vec<Vec<f64>> = (0..NUM_ID + NUM_EXP).map(col).collect();
        for i in 0..cols.len() {
            for j in 0..cols.len() {
                let dot: f64 = cols[i].iter().zip(&cols[j]).map(|(a, b)| a * b).sum();
                let target = if i == j { 1.0 } else { 0.0 };
                assert!((dot - target).abs() < 1e-10, "({i},{j}) = {dot}");
            }
        }
    }

    #[test]
    fn effect_magnitude_decays_at_plan_ratio() {
        let plan = BasisPlan::default();
        let b = generate_synthetic_basis(9, 200).unwrap();
        let effect = |k: usize| b.id_scale()[k] * norm(&column(&b, k));
        for k in 1..NUM_ID {
            let ratio = effect(k) / effect(k - 1);
            assert!((ratio - plan.id_ratio).abs() < 1e-12);
        }
        let exp_effect = |k: usize| {
            let col: Vec<f64> = (0..600).map(|r| b.exp_at(r, k)).collect();
            b.exp_scale()[k] * norm(&col)
        };
        for k in 1..NUM_EXP {
            assert!((exp_effect(k) / exp_effect(k - 1) - plan.exp_ratio).abs() < 1e-12);
        }
    }

    #[test]
    fn indices_in_range_and_distinct_landmarks() {
        let b = generate_synthetic_basis(2, 68).unwrap();
        let mut lm = b.landmark_indices().to_vec();
        lm.sort();
        lm.dedup();
        assert_eq!(lm.len(), NUM_LANDMARKS);
        assert!(!b.triangles().is_empty());
        let b = generate_synthetic_basis(2, 501).unwrap();
        assert!(b.triangles().iter().flatten().all(|&i| (i as usize) < 501));
    }

    #[test]
    fn too_few_vertices_rejected() {
        let err = generate_synthetic_basis(1, 10).unwrap_err();
        assert!(err.to_string().contains("68"));
    }
}
