//! Continuous refinement of the selected camera and the matched planes.
//!
//! The parameter vector is `[rot6d (6), translation (3), q₁…q_P, q'₁…q'_P]`
//! where `q = o·n` is the offset-scaled normal of each matched plane in its
//! own camera frame, one per matched pair in ascending `(i, j)` order.
//!
//! Residual blocks, each scaled by the square root of its weight and left
//! out entirely when that weight is zero:
//!
//! 1. plane consistency `q_i − q'_j→1` per matched pair,
//! 2. `X₁ − (R·X₂ + t)` per keypoint, with `X` the back-projection of each
//!    pixel onto its plane,
//! 3. geodesic deviation of the rotation from the anchor rotation,
//! 4. deviation of every plane from its detected value. Without this block
//!    the problem is invariant to a global scale of planes and translation,
//!    and shrinking the scene drives every other residual towards zero.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, Matrix2x3, Matrix3, UnitQuaternion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::discrete::{Correspondence, PlaneDetection, Selection};
use crate::geometry::{
    geodesic_distance, rot6d_to_matrix, skew_vector, CameraPose, Intrinsics, Mat3, Plane, Rot6D, Vec3,
};
use crate::lsq::{self, LeastSquaresProblem, SolveError, SolverConfig};

/// Keypoint matches `(u1, v1, u2, v2)` between view-1 plane `i` and
/// view-2 plane `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointPair {
    pub i: usize,
    pub j: usize,
    pub points: Vec<[f64; 4]>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct KeypointMatchSet {
    pub pairs: Vec<KeypointPair>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineConfig {
    pub w_plane: f64,
    pub w_pixel: f64,
    pub w_cam: f64,
    pub w_prior: f64,
    pub ftol: f64,
    pub xtol: f64,
    pub gtol: f64,
    pub max_iterations: usize,
    pub ransac_threshold: f64,
    pub ransac_iterations: usize,
    pub ransac_min_matches: usize,
    pub ransac_seed: u64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            w_plane: 1.0,
            w_pixel: 1.0,
            // a strong rotation pull biases the optimum toward the bin centre,
            // while the plane prior removes the scale gauge of the plane terms
            w_cam: 0.01,
            w_prior: 1.0,
            ftol: 1e-8,
            xtol: 1e-8,
            gtol: 1e-8,
            max_iterations: 200,
            ransac_threshold: 3.0,
            ransac_iterations: 1000,
            ransac_min_matches: 3,
            ransac_seed: 0,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<(), &'static str> {
        let w = [self.w_plane, self.w_pixel, self.w_cam, self.w_prior];
        if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err("residual weights must be finite and non-negative");
        }
        if [self.ftol, self.xtol, self.gtol].iter().any(|x| !(*x > 0.0)) {
            return Err("tolerances must be positive");
        }
        if !(self.ransac_threshold > 0.0) {
            return Err("ransac_threshold must be positive");
        }
        Ok(())
    }

    fn solver(&self) -> SolverConfig {
        SolverConfig { ftol: self.ftol, xtol: self.xtol, gtol: self.gtol, max_iterations: self.max_iterations }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct KeypointStats {
    pub input: usize,
    pub used: usize,
    pub rejected_by_ransac: usize,
    /// Rays parallel to or behind their plane at the initial estimate.
    pub dropped_invalid: usize,
    /// Keypoints attached to pairs that are not in the correspondence.
    pub inactive: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineResult {
    pub camera: CameraPose,
    pub planes1: Vec<Plane>,
    pub planes2: Vec<Plane>,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
    pub converged: bool,
    pub keypoints: KeypointStats,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RefineError {
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error("refined plane {index} of view {view} collapsed to the origin")]
    DegeneratePlane { view: usize, index: usize },
    #[error("correspondence index out of range")]
    BadCorrespondence,
}

/// Largest consensus set of a 2D affine map from the first point of each
/// pair to the second. Fewer than `ransac_min_matches` pairs, or no
/// non-degenerate sample, yields an empty set. Output is in the canonical
/// (bitwise sorted) order of the input.
pub fn affine_ransac_filter(points: &[[f64; 4]], cfg: &RefineConfig) -> Vec<[f64; 4]> {
    affine_ransac_mask(points, points, cfg, cfg.ransac_seed)
        .into_iter()
        .zip(canonical(points))
        .filter_map(|(keep, p)| keep.then_some(p))
        .collect()
}

fn canonical(points: &[[f64; 4]]) -> Vec<[f64; 4]> {
    let mut v = points.to_vec();
    v.sort_by_key(|a| a.map(f64::to_bits));
    v
}

/// Inlier mask, in canonical order of `order_by`, for a model fitted on
/// `coords` (same length, same order as `order_by`).
fn affine_ransac_mask(coords: &[[f64; 4]], order_by: &[[f64; 4]], cfg: &RefineConfig, seed: u64) -> Vec<bool> {
    let n = coords.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by_key(|k| order_by[*k].map(f64::to_bits));
    let pts: Vec<[f64; 4]> = idx.iter().map(|k| coords[*k]).collect();
    let min = cfg.ransac_min_matches.max(3);
    if n < min {
        return alloc::vec![false; n];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Vec<bool> = alloc::vec![false; n];
    let mut best_count = 0;
    let thr2 = cfg.ransac_threshold * cfg.ransac_threshold;
    for _ in 0..cfg.ransac_iterations {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        let c = rng.random_range(0..n);
        if a == b || b == c || a == c {
            continue;
        }
        let Some(model) = fit_affine(&pts[a], &pts[b], &pts[c]) else { continue };
        let inliers: Vec<bool> = pts
            .iter()
            .map(|p| {
                let (u, v) = apply_affine(&model, p[0], p[1]);
                (u - p[2]) * (u - p[2]) + (v - p[3]) * (v - p[3]) <= thr2
            })
            .collect();
        let count = inliers.iter().filter(|x| **x).count();
        if count > best_count {
            best_count = count;
            best = inliers;
            if count == n {
                break;
            }
        }
    }
    if best_count < min {
        return alloc::vec![false; n];
    }
    best
}

fn fit_affine(a: &[f64; 4], b: &[f64; 4], c: &[f64; 4]) -> Option<Matrix2x3<f64>> {
    let src = Matrix3::new(a[0], a[1], 1.0, b[0], b[1], 1.0, c[0], c[1], 1.0);
    let spread = [a, b, c].iter().flat_map(|p| [p[0].abs(), p[1].abs()]).fold(1.0f64, f64::max);
    if src.determinant().abs() < 1e-9 * spread * spread {
        return None;
    }
    let inv = src.try_inverse()?;
    let du = inv * Vec3::new(a[2], b[2], c[2]);
    let dv = inv * Vec3::new(a[3], b[3], c[3]);
    Some(Matrix2x3::new(du[0], du[1], du[2], dv[0], dv[1], dv[2]))
}

fn apply_affine(m: &Matrix2x3<f64>, u: f64, v: f64) -> (f64, f64) {
    (m[(0, 0)] * u + m[(0, 1)] * v + m[(0, 2)], m[(1, 0)] * u + m[(1, 1)] * v + m[(1, 2)])
}

/// Coordinates of the plane point seen at a pixel, as imaged by a virtual
/// camera at the same centre looking straight at the plane with focal
/// length `fx`.
fn viewpoint_normalized(pixel: (f64, f64), plane: &Plane, k: &Intrinsics) -> Option<(f64, f64)> {
    let x = crate::geometry::backproject(pixel, plane, k).ok()?;
    let n = plane.normal();
    let helper = if n.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let e1 = helper.cross(&n).normalize();
    let e2 = n.cross(&e1);
    Some((k.fx * e1.dot(&x) / plane.offset(), k.fx * e2.dot(&x) / plane.offset()))
}

/// Derivatives of the Gram-Schmidt rotation with respect to each of the six
/// 6D coordinates.
fn rot6d_tangents(v: &Rot6D) -> [Mat3; 6] {
    let n1 = v.a1.norm();
    let b1 = v.a1 / n1;
    let s = b1.dot(&v.a2);
    let u = v.a2 - b1 * s;
    let nu = u.norm();
    let b2 = u / nu;
    core::array::from_fn(|k| {
        let mut da1 = Vec3::zeros();
        let mut da2 = Vec3::zeros();
        if k < 3 {
            da1[k] = 1.0;
        } else {
            da2[k - 3] = 1.0;
        }
        let db1 = (da1 - b1 * b1.dot(&da1)) / n1;
        let ds = db1.dot(&v.a2) + b1.dot(&da2);
        let du = da2 - b1 * ds - db1 * s;
        let db2 = (du - b2 * b2.dot(&du)) / nu;
        let db3 = db1.cross(&b2) + b1.cross(&db2);
        Mat3::from_columns(&[db1, db2, db3])
    })
}

fn vee(m: &Mat3) -> Vec3 {
    Vec3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]) * 0.5
}

/// Unit rotation axis of `E`, or zero when the rotation is (numerically) the
/// identity so that the geodesic residual has a zero subgradient there.
fn rotation_axis(e: &Mat3) -> Vec3 {
    let skew = skew_vector(e);
    let cos = (e.trace() - 1.0) * 0.5;
    let sin = 0.5 * skew.norm();
    let angle = libm::atan2(sin, cos.clamp(-1.0, 1.0));
    if angle < 1e-10 {
        return Vec3::zeros();
    }
    if sin > 1e-6 {
        return skew / skew.norm();
    }
    // close to π: the axis is the dominant column of (E + I)/2
    let sym = (e + Mat3::identity()) * 0.5;
    let mut best = sym.column(0).into_owned();
    for c in 1..3 {
        if sym.column(c).norm() > best.norm() {
            best = sym.column(c).into_owned();
        }
    }
    let mut axis = best.normalize();
    if axis.dot(&skew) < 0.0 {
        axis = -axis;
    }
    axis
}

/// Back-projection through an offset-scaled normal: `X = r·|q|²/(q·r)`.
fn backproject_scaled(q: &Vec3, ray: &Vec3) -> Option<Vec3> {
    let denom = q.dot(ray);
    let qn = q.norm();
    if !(denom > 1e-9 * qn) || qn <= crate::geometry::MIN_OFFSET {
        return None;
    }
    Some(ray * (q.norm_squared() / denom))
}

fn backproject_scaled_jacobian(q: &Vec3, ray: &Vec3) -> Mat3 {
    let denom = q.dot(ray);
    let grad = q * (2.0 / denom) - ray * (q.norm_squared() / (denom * denom));
    ray * grad.transpose()
}

/// Keypoints of one matched pair as viewing rays.
#[derive(Debug, Clone, PartialEq)]
struct PairKeypoints {
    rays1: Vec<Vec3>,
    rays2: Vec<Vec3>,
}

/// The refinement residual model over the packed parameter vector.
#[derive(Debug, Clone)]
pub struct RefinementProblem {
    pairs: Vec<(usize, usize)>,
    prior1: Vec<Vec3>,
    prior2: Vec<Vec3>,
    keypoints: Vec<PairKeypoints>,
    anchor: Mat3,
    w_plane: f64,
    w_pixel: f64,
    w_cam: f64,
    w_prior: f64,
}

impl RefinementProblem {
    pub fn num_pairs(&self) -> usize {
        self.pairs.len()
    }

    pub fn num_parameters(&self) -> usize {
        9 + 6 * self.pairs.len()
    }

    pub fn num_keypoints(&self) -> usize {
        self.keypoints.iter().map(|k| k.rays1.len()).sum()
    }

    fn q1_index(&self, k: usize) -> usize {
        9 + 3 * k
    }

    fn q2_index(&self, k: usize) -> usize {
        9 + 3 * (self.pairs.len() + k)
    }

    fn num_residuals(&self) -> usize {
        let mut n = 3;
        if self.w_plane > 0.0 {
            n += 3 * self.pairs.len();
        }
        if self.w_pixel > 0.0 {
            n += 3 * self.num_keypoints();
        }
        if self.w_cam > 0.0 {
            n += 1;
        }
        if self.w_prior > 0.0 {
            n += 6 * self.pairs.len();
        }
        n
    }

    /// Packs a camera and the detected planes of the matched pairs.
    pub fn pack(&self, camera: &CameraPose) -> DVector<f64> {
        let mut x = DVector::zeros(self.num_parameters());
        let r = camera.rotation_matrix();
        x.rows_mut(0, 3).copy_from(&r.column(0));
        x.rows_mut(3, 3).copy_from(&r.column(1));
        x.rows_mut(6, 3).copy_from(&camera.translation());
        for k in 0..self.pairs.len() {
            let (a, b) = (self.q1_index(k), self.q2_index(k));
            x.rows_mut(a, 3).copy_from(&self.prior1[k]);
            x.rows_mut(b, 3).copy_from(&self.prior2[k]);
        }
        x
    }

    fn rotation(x: &DVector<f64>) -> Option<(Rot6D, Mat3)> {
        let v = Rot6D::from_slice(&x.as_slice()[0..6]);
        rot6d_to_matrix(&v).ok().map(|r| (v, r))
    }

    fn vec3(x: &DVector<f64>, at: usize) -> Vec3 {
        Vec3::new(x[at], x[at + 1], x[at + 2])
    }

    /// Camera encoded in a parameter vector.
    pub fn camera(&self, x: &DVector<f64>) -> Option<CameraPose> {
        let (_, r) = Self::rotation(x)?;
        CameraPose::from_matrix(&r, Self::vec3(x, 6)).ok()
    }

    /// Offset-scaled normals of the matched pairs.
    pub fn planes(&self, x: &DVector<f64>) -> (Vec<Vec3>, Vec<Vec3>) {
        let q1 = (0..self.pairs.len()).map(|k| Self::vec3(x, self.q1_index(k))).collect();
        let q2 = (0..self.pairs.len()).map(|k| Self::vec3(x, self.q2_index(k))).collect();
        (q1, q2)
    }

    /// Mean distance between matched keypoints after back-projection and
    /// transfer into the first frame.
    pub fn mean_keypoint_distance(&self, x: &DVector<f64>) -> Option<f64> {
        let (_, r) = Self::rotation(x)?;
        let t = Self::vec3(x, 6);
        let (q1, q2) = self.planes(x);
        let mut total = 0.0;
        let mut count = 0usize;
        for (k, kp) in self.keypoints.iter().enumerate() {
            for (r1, r2) in kp.rays1.iter().zip(&kp.rays2) {
                let x1 = backproject_scaled(&q1[k], r1)?;
                let x2 = backproject_scaled(&q2[k], r2)?;
                total += (x1 - (r * x2 + t)).norm();
                count += 1;
            }
        }
        (count > 0).then(|| total / count as f64)
    }
}

fn transfer(p: &Vec3, t: &Vec3) -> Option<Vec3> {
    let pp = p.norm_squared();
    if !(pp > 1e-18) {
        return None;
    }
    Some(p * (1.0 + t.dot(p) / pp))
}

/// `(∂P/∂p, ∂P/∂t)` for `P = p·(1 + t·p/|p|²)`.
fn transfer_jacobian(p: &Vec3, t: &Vec3) -> (Mat3, Mat3) {
    let pp = p.norm_squared();
    let tp = t.dot(p);
    let g = 1.0 + tp / pp;
    let row = t.transpose() / pp - p.transpose() * (2.0 * tp / (pp * pp));
    (Mat3::identity() * g + p * row, p * p.transpose() / pp)
}

impl LeastSquaresProblem for RefinementProblem {
    fn residuals(&self, x: &DVector<f64>) -> Option<DVector<f64>> {
        let (v6, r) = Self::rotation(x)?;
        let t = Self::vec3(x, 6);
        let (q1, q2) = self.planes(x);
        let mut out = Vec::with_capacity(self.num_residuals());
        // the 6D vector has three directions that leave the rotation
        // unchanged; pin them to an orthonormal pair
        out.extend_from_slice(&[v6.a1.norm_squared() - 1.0, v6.a2.norm_squared() - 1.0, v6.a1.dot(&v6.a2)]);
        if self.w_plane > 0.0 {
            let s = libm::sqrt(self.w_plane);
            for k in 0..self.pairs.len() {
                let d = (q1[k] - transfer(&(r * q2[k]), &t)?) * s;
                out.extend_from_slice(d.as_slice());
            }
        }
        if self.w_pixel > 0.0 {
            let s = libm::sqrt(self.w_pixel);
            for (k, kp) in self.keypoints.iter().enumerate() {
                for (r1, r2) in kp.rays1.iter().zip(&kp.rays2) {
                    let x1 = backproject_scaled(&q1[k], r1)?;
                    let x2 = backproject_scaled(&q2[k], r2)?;
                    out.extend_from_slice(((x1 - (r * x2 + t)) * s).as_slice());
                }
            }
        }
        if self.w_cam > 0.0 {
            out.push(libm::sqrt(self.w_cam) * geodesic_distance(&self.anchor, &r));
        }
        if self.w_prior > 0.0 {
            let s = libm::sqrt(self.w_prior);
            for (q, prior) in q1.iter().zip(&self.prior1).chain(q2.iter().zip(&self.prior2)) {
                out.extend_from_slice(((q - prior) * s).as_slice());
            }
        }
        Some(DVector::from_vec(out))
    }

    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut jac = DMatrix::zeros(self.num_residuals(), self.num_parameters());
        let Some((v6, r)) = Self::rotation(x) else { return jac };
        let tangents = rot6d_tangents(&v6);
        let t = Self::vec3(x, 6);
        let (q1, q2) = self.planes(x);
        for c in 0..3 {
            jac[(0, c)] = 2.0 * v6.a1[c];
            jac[(1, 3 + c)] = 2.0 * v6.a2[c];
            jac[(2, c)] = v6.a2[c];
            jac[(2, 3 + c)] = v6.a1[c];
        }
        let mut row = 3;

        let put = |jac: &mut DMatrix<f64>, row: usize, col: usize, block: &Mat3| {
            jac.fixed_view_mut::<3, 3>(row, col).copy_from(block);
        };

        if self.w_plane > 0.0 {
            let s = libm::sqrt(self.w_plane);
            for (k, q) in q2.iter().enumerate() {
                let p = r * q;
                let (dp, dt) = transfer_jacobian(&p, &t);
                for (c, tan) in tangents.iter().enumerate() {
                    let col = -(dp * (tan * q)) * s;
                    jac.fixed_view_mut::<3, 1>(row, c).copy_from(&col);
                }
                put(&mut jac, row, 6, &(-dt * s));
                put(&mut jac, row, self.q1_index(k), &(Mat3::identity() * s));
                put(&mut jac, row, self.q2_index(k), &(-(dp * r) * s));
                row += 3;
            }
        }
        if self.w_pixel > 0.0 {
            let s = libm::sqrt(self.w_pixel);
            for (k, kp) in self.keypoints.iter().enumerate() {
                for (r1, r2) in kp.rays1.iter().zip(&kp.rays2) {
                    let Some(x2) = backproject_scaled(&q2[k], r2) else {
                        row += 3;
                        continue;
                    };
                    for (c, tan) in tangents.iter().enumerate() {
                        let col = -(tan * x2) * s;
                        jac.fixed_view_mut::<3, 1>(row, c).copy_from(&col);
                    }
                    put(&mut jac, row, 6, &(-Mat3::identity() * s));
                    put(&mut jac, row, self.q1_index(k), &(backproject_scaled_jacobian(&q1[k], r1) * s));
                    put(&mut jac, row, self.q2_index(k), &(-(r * backproject_scaled_jacobian(&q2[k], r2)) * s));
                    row += 3;
                }
            }
        }
        if self.w_cam > 0.0 {
            let s = libm::sqrt(self.w_cam);
            let axis = rotation_axis(&(self.anchor.transpose() * r));
            for (c, tan) in tangents.iter().enumerate() {
                let delta = vee(&(r.transpose() * tan));
                jac[(row, c)] = s * axis.dot(&delta);
            }
            row += 1;
        }
        if self.w_prior > 0.0 {
            let s = Mat3::identity() * libm::sqrt(self.w_prior);
            for k in 0..self.pairs.len() {
                put(&mut jac, row, self.q1_index(k), &s);
                row += 3;
            }
            for k in 0..self.pairs.len() {
                put(&mut jac, row, self.q2_index(k), &s);
                row += 3;
            }
        }
        jac
    }
}

/// Everything needed to build a [`RefinementProblem`].
pub struct RefineInputs<'a> {
    pub dets1: &'a [PlaneDetection],
    pub dets2: &'a [PlaneDetection],
    pub correspondence: &'a Correspondence,
    pub keypoints: &'a KeypointMatchSet,
    pub intrinsics: [Intrinsics; 2],
}

/// Builds the residual model: keypoints are grouped per active pair,
/// brought into canonical order, filtered by affine RANSAC in
/// viewpoint-normalised coordinates and checked against the initial planes.
pub fn build_problem(
    inputs: &RefineInputs<'_>,
    anchor: &UnitQuaternion<f64>,
    cfg: &RefineConfig,
) -> Result<(RefinementProblem, KeypointStats), RefineError> {
    let mut pairs: Vec<(usize, usize)> = inputs.correspondence.matches.iter().map(|m| (m.i, m.j)).collect();
    pairs.sort_unstable();
    if pairs.iter().any(|(i, j)| *i >= inputs.dets1.len() || *j >= inputs.dets2.len()) {
        return Err(RefineError::BadCorrespondence);
    }
    let [k1, k2] = inputs.intrinsics;
    let mut stats = KeypointStats::default();
    let mut grouped: Vec<Vec<[f64; 4]>> = alloc::vec![Vec::new(); pairs.len()];
    for kp in &inputs.keypoints.pairs {
        stats.input += kp.points.len();
        match pairs.binary_search(&(kp.i, kp.j)) {
            Ok(k) => grouped[k].extend_from_slice(&kp.points),
            Err(_) => stats.inactive += kp.points.len(),
        }
    }

    let mut keypoints = Vec::with_capacity(pairs.len());
    for (k, (i, j)) in pairs.iter().enumerate() {
        let (p1, p2) = (inputs.dets1[*i].plane, inputs.dets2[*j].plane);
        let mut pts = core::mem::take(&mut grouped[k]);
        pts.sort_by_key(|a| a.map(f64::to_bits));
        let (valid, normalized): (Vec<[f64; 4]>, Vec<[f64; 4]>) = pts
            .iter()
            .filter_map(|p| {
                let a = viewpoint_normalized((p[0], p[1]), &p1, &k1)?;
                let b = viewpoint_normalized((p[2], p[3]), &p2, &k2)?;
                Some((*p, [a.0, a.1, b.0, b.1]))
            })
            .unzip();
        stats.dropped_invalid += pts.len() - valid.len();
        let seed = cfg.ransac_seed ^ ((*i as u64) << 32 | *j as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let keep = affine_ransac_mask(&normalized, &valid, cfg, seed);
        let mut rays1 = Vec::new();
        let mut rays2 = Vec::new();
        for (p, kept) in valid.iter().zip(&keep) {
            if *kept {
                rays1.push(k1.ray(p[0], p[1]));
                rays2.push(k2.ray(p[2], p[3]));
            }
        }
        stats.rejected_by_ransac += valid.len() - rays1.len();
        stats.used += rays1.len();
        keypoints.push(PairKeypoints { rays1, rays2 });
    }

    let prior1 = pairs.iter().map(|(i, _)| inputs.dets1[*i].plane.scaled_normal()).collect();
    let prior2 = pairs.iter().map(|(_, j)| inputs.dets2[*j].plane.scaled_normal()).collect();
    let problem = RefinementProblem {
        pairs,
        prior1,
        prior2,
        keypoints,
        anchor: anchor.to_rotation_matrix().into_inner(),
        w_plane: cfg.w_plane,
        w_pixel: cfg.w_pixel,
        w_cam: cfg.w_cam,
        w_prior: cfg.w_prior,
    };
    Ok((problem, stats))
}

/// Refines from an arbitrary initial camera, regularising the rotation
/// towards `anchor`.
pub fn refine_from(
    inputs: &RefineInputs<'_>,
    init: &CameraPose,
    anchor: &UnitQuaternion<f64>,
    cfg: &RefineConfig,
) -> Result<RefineResult, RefineError> {
    let (problem, stats) = build_problem(inputs, anchor, cfg)?;
    let passthrough = |dets: &[PlaneDetection]| dets.iter().map(|d| d.plane).collect::<Vec<_>>();
    let mut planes1 = passthrough(inputs.dets1);
    let mut planes2 = passthrough(inputs.dets2);

    let x0 = problem.pack(init);
    // without matched planes nothing constrains the camera beyond its prior
    if problem.num_pairs() == 0 || problem.num_residuals() == 0 {
        return Ok(RefineResult {
            camera: *init,
            planes1,
            planes2,
            initial_cost: 0.0,
            final_cost: 0.0,
            iterations: 0,
            converged: true,
            keypoints: stats,
        });
    }
    let report = lsq::solve(&problem, x0, &cfg.solver())?;
    let camera = problem.camera(&report.x).ok_or(SolveError::NumericalFailure { iteration: report.iterations })?;
    let (q1, q2) = problem.planes(&report.x);
    for (k, (i, j)) in problem.pairs.iter().enumerate() {
        planes1[*i] =
            Plane::from_scaled_normal(&q1[k]).map_err(|_| RefineError::DegeneratePlane { view: 0, index: *i })?;
        planes2[*j] =
            Plane::from_scaled_normal(&q2[k]).map_err(|_| RefineError::DegeneratePlane { view: 1, index: *j })?;
    }
    debug_assert!(report.final_cost <= report.initial_cost + 1e-12);
    Ok(RefineResult {
        camera,
        planes1,
        planes2,
        initial_cost: report.initial_cost,
        final_cost: report.final_cost,
        iterations: report.iterations,
        converged: report.converged(),
        keypoints: stats,
    })
}

/// Refines the discrete selection, starting from and anchored to the
/// selected bin pose.
pub fn refine(
    selection: &Selection,
    dets1: &[PlaneDetection],
    dets2: &[PlaneDetection],
    keypoints: &KeypointMatchSet,
    intrinsics: [Intrinsics; 2],
    cfg: &RefineConfig,
) -> Result<RefineResult, RefineError> {
    let inputs = RefineInputs { dets1, dets2, correspondence: &selection.correspondence, keypoints, intrinsics };
    let pose = selection.camera();
    refine_from(&inputs, &pose, &pose.rotation(), cfg)
}
