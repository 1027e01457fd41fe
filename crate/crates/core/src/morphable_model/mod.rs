//! Linear 3D morphable model: shape synthesis and weak-perspective projection.
//!
//! A shape is `mean + A_id·α_id + A_exp·α_exp` over `N` interleaved
//! `(x, y, z)` vertices. The pose block of a [`ParamVector`] is a row-major
//! 3×4 matrix `[f·R | t]`; projection keeps the first two rows, which is
//! exactly `f·Pr·R·S + t_2d` with `Pr` the orthographic truncation.

mod io;
mod mesh;
mod pose;
mod synth;

pub use io::{basis_bytes, load_basis, save_basis};
pub use mesh::{export_mesh, parse_obj, write_obj};
pub use pose::{compose_pose, decompose_pose, rotation_matrix, Pose, GIMBAL_MARGIN};
pub use synth::{generate_synthetic_basis, generate_synthetic_basis_with, BasisPlan};

use crate::hash::Fingerprint;
use crate::{Error, Result};

pub const NUM_ID: usize = 40;
pub const NUM_EXP: usize = 10;
pub const POSE_DIM: usize = 12;
pub const PARAM_DIM: usize = POSE_DIM + NUM_ID + NUM_EXP;
pub const NUM_LANDMARKS: usize = 68;

/// Mean shape plus identity/expression principal components.
#[derive(Debug, Clone, PartialEq)]
pub struct MorphableBasis {
    num_vertices: usize,
    mean_shape: Vec<f64>,
    /// `3N × NUM_ID`, row-major.
    id_basis: Vec<f64>,
    /// `3N × NUM_EXP`, row-major.
    exp_basis: Vec<f64>,
    landmark_indices: Vec<u32>,
    triangles: Vec<[u32; 3]>,
    /// Prior standard deviation of each identity coefficient.
    id_scale: Vec<f64>,
    /// Prior standard deviation of each expression coefficient.
    exp_scale: Vec<f64>,
}

impl MorphableBasis {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        mean_shape: Vec<f64>,
        id_basis: Vec<f64>,
        exp_basis: Vec<f64>,
        landmark_indices: Vec<u32>,
        triangles: Vec<[u32; 3]>,
        id_scale: Vec<f64>,
        exp_scale: Vec<f64>,
    ) -> Result<Self> {
        if !mean_shape.len().is_multiple_of(3) || mean_shape.is_empty() {
            return Err(Error::Shape(format!(
                "mean shape length {} is not a positive multiple of 3",
                mean_shape.len()
            )));
        }
        let n = mean_shape.len() / 3;
        if id_basis.len() != 3 * n * NUM_ID {
            return Err(Error::Shape(format!(
                "identity basis has {} entries, expected 3N x {NUM_ID} = {}",
                id_basis.len(),
                3 * n * NUM_ID
            )));
        }
        if exp_basis.len() != 3 * n * NUM_EXP {
            return Err(Error::Shape(format!(
                "expression basis has {} entries, expected 3N x {NUM_EXP} = {}",
                exp_basis.len(),
                3 * n * NUM_EXP
            )));
        }
        if landmark_indices.len() != NUM_LANDMARKS {
            return Err(Error::Shape(format!(
                "{} landmark indices, expected {NUM_LANDMARKS}",
                landmark_indices.len()
            )));
        }
        if let Some(&bad) = landmark_indices.iter().find(|&&i| i as usize >= n) {
            return Err(Error::Shape(format!("landmark index {bad} >= N = {n}")));
        }
        if let Some(t) = triangles.iter().find(|t| t.iter().any(|&i| i as usize >= n)) {
            return Err(Error::Shape(format!("triangle {t:?} references a vertex >= N = {n}")));
        }
        if id_scale.len() != NUM_ID || exp_scale.len() != NUM_EXP {
            return Err(Error::Shape("coefficient scale plan has the wrong length".into()));
        }
        let finite = mean_shape
            .iter()
            .chain(&id_basis)
            .chain(&exp_basis)
            .chain(&id_scale)
            .chain(&exp_scale)
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFinite("morphable basis"));
        }
        Ok(MorphableBasis {
            num_vertices: n,
            mean_shape,
            id_basis,
            exp_basis,
            landmark_indices,
            triangles,
            id_scale,
            exp_scale,
        })
    }

    pub fn num_vertices(&self) -> usize {
        self.num_vertices
    }
    pub fn mean_shape(&self) -> &[f64] {
        &self.mean_shape
    }
    pub fn id_basis(&self) -> &[f64] {
        &self.id_basis
    }
    pub fn exp_basis(&self) -> &[f64] {
        &self.exp_basis
    }
    pub fn landmark_indices(&self) -> &[u32] {
        &self.landmark_indices
    }
    pub fn triangles(&self) -> &[[u32; 3]] {
        &self.triangles
    }
    pub fn id_scale(&self) -> &[f64] {
        &self.id_scale
    }
    pub fn exp_scale(&self) -> &[f64] {
        &self.exp_scale
    }

    /// Entry `(row, k)` of the identity basis.
    #[inline]
    pub fn id_at(&self, row: usize, k: usize) -> f64 {
        self.id_basis[row * NUM_ID + k]
    }

    #[inline]
    pub fn exp_at(&self, row: usize, k: usize) -> f64 {
        self.exp_basis[row * NUM_EXP + k]
    }

    /// One synthesized vertex; `alpha_id`/`alpha_exp` must already be length-checked.
    #[inline]
    pub fn vertex(&self, v: usize, alpha_id: &[f64], alpha_exp: &[f64]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for (d, o) in out.iter_mut().enumerate() {
            let row = 3 * v + d;
            let id_row = &self.id_basis[row * NUM_ID..(row + 1) * NUM_ID];
            let exp_row = &self.exp_basis[row * NUM_EXP..(row + 1) * NUM_EXP];
            let mut acc = self.mean_shape[row];
            for (a, b) in id_row.iter().zip(alpha_id) {
                acc += a * b;
            }
            for (a, b) in exp_row.iter().zip(alpha_exp) {
                acc += a * b;
            }
            *o = acc;
        }
        out
    }

    /// SHA-256-derived fingerprint of the serialized basis.
    pub fn fingerprint(&self) -> Fingerprint {
        Fingerprint::of(&io::to_bytes(self))
    }
}

/// The 62-dimensional regression target: 12 pose, 40 identity, 10 expression.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamVector(pub [f64; PARAM_DIM]);

impl Default for ParamVector {
    fn default() -> Self {
        ParamVector([0.0; PARAM_DIM])
    }
}

impl ParamVector {
    pub fn zeros() -> Self {
        Self::default()
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        let arr: [f64; PARAM_DIM] = values.try_into().map_err(|_| {
            Error::Shape(format!(
                "parameter vector has {} entries, expected {PARAM_DIM}",
                values.len()
            ))
        })?;
        Ok(ParamVector(arr))
    }

    pub fn from_parts(pose: &[f64; POSE_DIM], alpha_id: &[f64], alpha_exp: &[f64]) -> Result<Self> {
        if alpha_id.len() != NUM_ID || alpha_exp.len() != NUM_EXP {
            return Err(Error::Shape(format!(
                "coefficient lengths {}/{} (expected {NUM_ID}/{NUM_EXP})",
                alpha_id.len(),
                alpha_exp.len()
            )));
        }
        let mut p = [0.0; PARAM_DIM];
        p[..POSE_DIM].copy_from_slice(pose);
        p[POSE_DIM..POSE_DIM + NUM_ID].copy_from_slice(alpha_id);
        p[POSE_DIM + NUM_ID..].copy_from_slice(alpha_exp);
        Ok(ParamVector(p))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn pose(&self) -> &[f64; POSE_DIM] {
        self.0[..POSE_DIM].try_into().unwrap()
    }

    pub fn pose_mut(&mut self) -> &mut [f64] {
        &mut self.0[..POSE_DIM]
    }

    pub fn alpha_id(&self) -> &[f64] {
        &self.0[POSE_DIM..POSE_DIM + NUM_ID]
    }

    pub fn alpha_exp(&self) -> &[f64] {
        &self.0[POSE_DIM + NUM_ID..]
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// `N × 3` vertex positions.
#[derive(Debug, Clone, PartialEq)]
pub struct Shape3D {
    pub vertices: Vec<[f64; 3]>,
}

/// 68 image-plane landmark positions in pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct Landmarks2D {
    points: Vec<[f64; 2]>,
}

impl Landmarks2D {
    pub fn new(points: Vec<[f64; 2]>) -> Result<Self> {
        if points.len() != NUM_LANDMARKS {
            return Err(Error::Shape(format!(
                "{} landmarks, expected {NUM_LANDMARKS}",
                points.len()
            )));
        }
        if !points.iter().flatten().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("landmarks"));
        }
        Ok(Landmarks2D { points })
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn into_points(self) -> Vec<[f64; 2]> {
        self.points
    }
}

fn check_alphas(basis: &MorphableBasis, alpha_id: &[f64], alpha_exp: &[f64]) -> Result<()> {
    if alpha_id.len() != NUM_ID {
        return Err(Error::Shape(format!(
            "alpha_id has {} entries, basis has {NUM_ID} identity columns",
            alpha_id.len()
        )));
    }
    if alpha_exp.len() != NUM_EXP {
        return Err(Error::Shape(format!(
            "alpha_exp has {} entries, basis has {NUM_EXP} expression columns",
            alpha_exp.len()
        )));
    }
    let _ = basis;
    Ok(())
}

/// `mean + A_id·alpha_id + A_exp·alpha_exp`, reshaped to `N × 3`.
pub fn synthesize_shape(
    basis: &MorphableBasis,
    alpha_id: &[f64],
    alpha_exp: &[f64],
) -> Result<Shape3D> {
    check_alphas(basis, alpha_id, alpha_exp)?;
    let vertices = (0..basis.num_vertices())
        .map(|v| basis.vertex(v, alpha_id, alpha_exp))
        .collect();
    Ok(Shape3D { vertices })
}

/// Applies the first two rows of the 3×4 pose matrix to one vertex.
#[inline]
pub fn project_point(pose: &[f64; POSE_DIM], v: [f64; 3]) -> [f64; 2] {
    [
        pose[0] * v[0] + pose[1] * v[1] + pose[2] * v[2] + pose[3],
        pose[4] * v[0] + pose[5] * v[1] + pose[6] * v[2] + pose[7],
    ]
}

fn check_params(params: &ParamVector) -> Result<()> {
    if !params.is_finite() {
        return Err(Error::NonFinite("parameter vector"));
    }
    Ok(())
}

/// Projects every vertex of the synthesized shape.
pub fn project_vertices(basis: &MorphableBasis, params: &ParamVector) -> Result<Vec<[f64; 2]>> {
    check_params(params)?;
    let (pose, id, exp) = (params.pose(), params.alpha_id(), params.alpha_exp());
    Ok((0..basis.num_vertices())
        .map(|v| project_point(pose, basis.vertex(v, id, exp)))
        .collect())
}

/// Projected positions of the 68 landmark vertices.
pub fn project(basis: &MorphableBasis, params: &ParamVector) -> Result<Landmarks2D> {
    check_params(params)?;
    let (pose, id, exp) = (params.pose(), params.alpha_id(), params.alpha_exp());
    let points = basis
        .landmark_indices()
        .iter()
        .map(|&v| project_point(pose, basis.vertex(v as usize, id, exp)))
        .collect();
    Landmarks2D::new(points)
}

/// Vector-Jacobian product of projection.
///
/// `vertices[i]` receives upstream gradient `grads[i]` on its projected
/// position; returns the gradient with respect to all 62 parameters.
pub fn projection_vjp(
    basis: &MorphableBasis,
    params: &ParamVector,
    vertices: &[u32],
    grads: &[[f64; 2]],
) -> [f64; PARAM_DIM] {
    debug_assert_eq!(vertices.len(), grads.len());
    let (pose, id, exp) = (params.pose(), params.alpha_id(), params.alpha_exp());
    let mut out = [0.0; PARAM_DIM];
    for (&v, g) in vertices.iter().zip(grads) {
        let v = v as usize;
        let s = basis.vertex(v, id, exp);
        for r in 0..2 {
            for c in 0..3 {
                out[r * 4 + c] += g[r] * s[c];
            }
            out[r * 4 + 3] += g[r];
        }
        // dL/dS_v = M2^T g
        let gs = [
            pose[0] * g[0] + pose[4] * g[1],
            pose[1] * g[0] + pose[5] * g[1],
            pose[2] * g[0] + pose[6] * g[1],
        ];
        for (d, &gd) in gs.iter().enumerate() {
            let row = 3 * v + d;
            let id_row = &basis.id_basis[row * NUM_ID..(row + 1) * NUM_ID];
            for (o, a) in out[POSE_DIM..POSE_DIM + NUM_ID].iter_mut().zip(id_row) {
                *o += a * gd;
            }
            let exp_row = &basis.exp_basis[row * NUM_EXP..(row + 1) * NUM_EXP];
            for (o, a) in out[POSE_DIM + NUM_ID..].iter_mut().zip(exp_row) {
                *o += a * gd;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_params(rng: &mut impl Rng) -> ParamVector {
        let mut p = ParamVector::zeros();
        for v in p.0.iter_mut() {
            *v = rng.random_range(-2.0..2.0);
        }
        p
    }

    #[test]
    fn zero_coefficients_give_mean_shape() {
        let basis = generate_synthetic_basis(3, 120).unwrap();
        let shape = synthesize_shape(&basis, &[0.0; NUM_ID], &[0.0; NUM_EXP]).unwrap();
        for (v, p) in shape.vertices.iter().enumerate() {
            for d in 0..3 {
                assert_eq!(p[d], basis.mean_shape()[3 * v + d]);
            }
        }
    }

    #[test]
    fn single_axis_linearity() {
        let basis = generate_synthetic_basis(3, 100).unwrap();
        let k = 7;
        let c = 2.5;
        let mut a = [0.0; NUM_ID];
        a[k] = c;
        let shape = synthesize_shape(&basis, &a, &[0.0; NUM_EXP]).unwrap();
        for (v, p) in shape.vertices.iter().enumerate() {
            for d in 0..3 {
                let row = 3 * v + d;
                let expect = basis.mean_shape()[row] + c * basis.id_at(row, k);
                assert!((p[d] - expect).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let basis = generate_synthetic_basis(3, 70).unwrap();
        assert!(matches!(
            synthesize_shape(&basis, &[0.0; 39], &[0.0; NUM_EXP]),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            synthesize_shape(&basis, &[0.0; NUM_ID], &[0.0; 11]),
            Err(Error::Shape(_))
        ));
        assert!(ParamVector::from_slice(&[0.0; 61]).is_err());
    }

    #[test]
    fn identity_pose_projects_to_xy() {
        let basis = generate_synthetic_basis(5, 90).unwrap();
        let pose = compose_pose(1.0, 0.0, 0.0, 0.0, [0.0; 3]).unwrap();
        let p = ParamVector::from_parts(&pose, &[0.0; NUM_ID], &[0.0; NUM_EXP]).unwrap();
        let lm = project(&basis, &p).unwrap();
        for (pt, &v) in lm.points().iter().zip(basis.landmark_indices()) {
            let v = v as usize;
            assert_eq!(pt[0], basis.mean_shape()[3 * v]);
            assert_eq!(pt[1], basis.mean_shape()[3 * v + 1]);
        }
    }

    #[test]
    fn scaled_translated_projection() {
        let basis = generate_synthetic_basis(5, 90).unwrap();
        let pose = compose_pose(2.0, 0.0, 0.0, 0.0, [10.0, 20.0, 0.0]).unwrap();
        let p = ParamVector::from_parts(&pose, &[0.0; NUM_ID], &[0.0; NUM_EXP]).unwrap();
        let lm = project(&basis, &p).unwrap();
        for (pt, &v) in lm.points().iter().zip(basis.landmark_indices()) {
            let v = v as usize;
            assert!((pt[0] - (2.0 * basis.mean_shape()[3 * v] + 10.0)).abs() < 1e-12);
            assert!((pt[1] - (2.0 * basis.mean_shape()[3 * v + 1] + 20.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn non_finite_params_rejected() {
        let basis = generate_synthetic_basis(5, 90).unwrap();
        let mut p = ParamVector::zeros();
        p.0[20] = f64::NAN;
        assert!(matches!(project(&basis, &p), Err(Error::NonFinite(_))));
        assert!(project_vertices(&basis, &p).is_err());
    }

    #[test]
    fn vjp_matches_finite_differences() {
        let basis = generate_synthetic_basis(11, 80).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = random_params(&mut rng);
        let verts: Vec<u32> = (0..80).step_by(3).collect();
        let grads: Vec<[f64; 2]> = verts
            .iter()
            .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
            .collect();
        let objective = |q: &ParamVector| -> f64 {
            verts
                .iter()
                .zip(&grads)
                .map(|(&v, g)| {
                    let pt = project_point(q.pose(), basis.vertex(v as usize, q.alpha_id(), q.alpha_exp()));
                    pt[0] * g[0] + pt[1] * g[1]
                })
                .sum()
        };
        let analytic = projection_vjp(&basis, &p, &verts, &grads);
        for i in 0..PARAM_DIM {
            let h = 1e-6;
            let mut a = p;
            a.0[i] += h;
            let mut b = p;
            b.0[i] -= h;
            let fd = (objective(&a) - objective(&b)) / (2.0 * h);
            assert!((fd - analytic[i]).abs() < 1e-6 * (1.0 + fd.abs()), "{i}: {fd} vs {}", analytic[i]);
        }
    }
}
