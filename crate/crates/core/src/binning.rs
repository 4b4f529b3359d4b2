//! Discretisation of relative camera poses into translation and rotation bins
//! and expansion of the two marginals into joint camera hypotheses.

use alloc::vec::Vec;
use core::cmp::Ordering;

use nalgebra::{Matrix4, SymmetricEigen, UnitQuaternion, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::geometry::{canonical_quaternion, CameraPose, Vec3};

pub const NUM_BINS: usize = 32;
pub const NUM_HYPOTHESES: usize = NUM_BINS * NUM_BINS;

const MAX_ITERATIONS: usize = 300;
const CONVERGENCE_SHIFT: f64 = 1e-6;
const PROBABILITY_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BinningError {
    #[error("need at least {needed} distinct samples, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("expected {expected} {what} bins, got {got}")]
    WrongBinCount { what: &'static str, expected: usize, got: usize },
    #[error("{0} probabilities must be non-negative and sum to 1")]
    InvalidProbabilities(&'static str),
}

/// Translation centroids (metres) and rotation centroids (canonical unit
/// quaternions), `NUM_BINS` of each.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseBins {
    translations: Vec<Vec3>,
    rotations: Vec<UnitQuaternion<f64>>,
}

impl PoseBins {
    pub fn new(translations: Vec<Vec3>, rotations: Vec<UnitQuaternion<f64>>) -> Result<Self, BinningError> {
        if translations.len() != NUM_BINS {
            return Err(BinningError::WrongBinCount {
                what: "translation",
                expected: NUM_BINS,
                got: translations.len(),
            });
        }
        if rotations.len() != NUM_BINS {
            return Err(BinningError::WrongBinCount { what: "rotation", expected: NUM_BINS, got: rotations.len() });
        }
        let rotations = rotations.into_iter().map(canonical_quaternion).collect();
        Ok(PoseBins { translations, rotations })
    }

    pub fn translations(&self) -> &[Vec3] {
        &self.translations
    }

    pub fn rotations(&self) -> &[UnitQuaternion<f64>] {
        &self.rotations
    }

    pub fn pose(&self, index_t: usize, index_r: usize) -> CameraPose {
        CameraPose::new(self.rotations[index_r], self.translations[index_t])
    }
}

/// Two independent multinomials over the translation and rotation bins.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraDistribution {
    bins: PoseBins,
    p_trans: Vec<f64>,
    p_rot: Vec<f64>,
}

impl CameraDistribution {
    pub fn new(bins: PoseBins, p_trans: Vec<f64>, p_rot: Vec<f64>) -> Result<Self, BinningError> {
        check_probabilities(&p_trans, "translation")?;
        check_probabilities(&p_rot, "rotation")?;
        Ok(CameraDistribution { bins, p_trans, p_rot })
    }

    pub fn uniform(bins: PoseBins) -> Self {
        let p = alloc::vec![1.0 / NUM_BINS as f64; NUM_BINS];
        CameraDistribution { bins, p_trans: p.clone(), p_rot: p }
    }

    pub fn bins(&self) -> &PoseBins {
        &self.bins
    }

    pub fn p_trans(&self) -> &[f64] {
        &self.p_trans
    }

    pub fn p_rot(&self) -> &[f64] {
        &self.p_rot
    }

    /// Pose of the most probable translation and rotation bins.
    pub fn most_probable(&self) -> CameraHypothesis {
        let t = argmax(&self.p_trans);
        let r = argmax(&self.p_rot);
        self.hypothesis(t, r)
    }

    pub fn hypothesis(&self, index_t: usize, index_r: usize) -> CameraHypothesis {
        CameraHypothesis {
            index_t,
            index_r,
            translation: self.bins.translations[index_t],
            rotation: self.bins.rotations[index_r],
            p_t: self.p_trans[index_t],
            p_r: self.p_rot[index_r],
        }
    }
}

fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in p.iter().enumerate() {
        if *v > p[best] {
            best = i;
        }
    }
    best
}

fn check_probabilities(p: &[f64], what: &'static str) -> Result<(), BinningError> {
    if p.len() != NUM_BINS {
        return Err(BinningError::WrongBinCount { what, expected: NUM_BINS, got: p.len() });
    }
    let sum: f64 = p.iter().sum();
    if p.iter().any(|v| !v.is_finite() || *v < 0.0) || (sum - 1.0).abs() > PROBABILITY_TOL {
        return Err(BinningError::InvalidProbabilities(what));
    }
    Ok(())
}

/// One joint (translation bin, rotation bin) camera option.
///
/// The marginal probabilities are kept separate so the discrete objective can
/// weight them independently. They are the raw marginals; flooring for the
/// logarithm happens in the objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraHypothesis {
    pub index_t: usize,
    pub index_r: usize,
    pub translation: Vec3,
    pub rotation: UnitQuaternion<f64>,
    pub p_t: f64,
    pub p_r: f64,
}

impl CameraHypothesis {
    pub fn index(&self) -> usize {
        self.index_t * NUM_BINS + self.index_r
    }

    pub fn pose(&self) -> CameraPose {
        CameraPose::new(self.rotation, self.translation)
    }
}

/// All `NUM_BINS²` hypotheses, translation index major.
pub fn expand_hypotheses(dist: &CameraDistribution) -> Vec<CameraHypothesis> {
    let mut out = Vec::with_capacity(NUM_HYPOTHESES);
    for t in 0..NUM_BINS {
        for r in 0..NUM_BINS {
            out.push(dist.hypothesis(t, r));
        }
    }
    out
}

/// Nearest translation centroid and nearest rotation centroid; ties go to
/// the lowest index.
pub fn assign_bins(pose: &CameraPose, bins: &PoseBins) -> (usize, usize) {
    (nearest_translation(&pose.translation(), &bins.translations), nearest_rotation(&pose.rotation(), &bins.rotations))
}

fn nearest_translation(t: &Vec3, centroids: &[Vec3]) -> usize {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = (t - c).norm_squared();
        if d < best.1 {
            best = (i, d);
        }
    }
    best.0
}

fn nearest_rotation(q: &UnitQuaternion<f64>, centroids: &[UnitQuaternion<f64>]) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let s = q.coords.dot(&c.coords).abs();
        if s > best.1 {
            best = (i, s);
        }
    }
    best.0
}

fn lexicographic(a: &[f64], b: &[f64]) -> Ordering {
    a.iter().zip(b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(Ordering::Equal)
}

fn count_distinct(mut keys: Vec<[u64; 4]>) -> usize {
    keys.sort_unstable();
    keys.dedup();
    keys.len()
}

/// Lloyd's k-means with k-means++ seeding on translation samples.
/// Centroids are returned in lexicographic order.
pub fn fit_translation_bins(points: &[Vec3], k: usize, seed: u64) -> Result<Vec<Vec3>, BinningError> {
    let distinct = count_distinct(points.iter().map(|p| [p.x.to_bits(), p.y.to_bits(), p.z.to_bits(), 0]).collect());
    if k == 0 || distinct < k {
        return Err(BinningError::InsufficientData { needed: k.max(1), got: distinct });
    }
    let dist = |a: &Vec3, b: &Vec3| (a - b).norm_squared();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_init(points, k, &mut rng, dist);
    let mut labels = alloc::vec![0usize; points.len()];

    for _ in 0..MAX_ITERATIONS {
        for (label, p) in labels.iter_mut().zip(points) {
            *label = nearest_translation(p, &centroids);
        }
        let mut sums = alloc::vec![Vec3::zeros(); k];
        let mut counts = alloc::vec![0usize; k];
        for (label, p) in labels.iter().zip(points) {
            sums[*label] += p;
            counts[*label] += 1;
        }
        let mut shift: f64 = 0.0;
        for c in 0..k {
            let next = if counts[c] > 0 {
                sums[c] / counts[c] as f64
            } else {
                // empty cluster: move it to the point worst served by its centroid
                points[farthest_point(points, &labels, &centroids, dist)]
            };
            shift = shift.max((next - centroids[c]).norm());
            centroids[c] = next;
        }
        if shift < CONVERGENCE_SHIFT {
            break;
        }
    }
    centroids.sort_by(|a, b| lexicographic(a.as_slice(), b.as_slice()));
    Ok(centroids)
}

/// Spherical k-means on the quaternion double cover. Similarity is `|q·c|`
/// and each centroid is the principal eigenvector of `Σ q qᵀ` over its
/// members. Centroids are canonical (`w ≥ 0`) and in lexicographic
/// `(w, x, y, z)` order.
pub fn fit_rotation_bins(
    rotations: &[UnitQuaternion<f64>],
    k: usize,
    seed: u64,
) -> Result<Vec<UnitQuaternion<f64>>, BinningError> {
    let samples: Vec<UnitQuaternion<f64>> = rotations.iter().copied().map(canonical_quaternion).collect();
    let distinct =
        count_distinct(samples.iter().map(|q| [q.w.to_bits(), q.i.to_bits(), q.j.to_bits(), q.k.to_bits()]).collect());
    if k == 0 || distinct < k {
        return Err(BinningError::InsufficientData { needed: k.max(1), got: distinct });
    }
    let dist = |a: &UnitQuaternion<f64>, b: &UnitQuaternion<f64>| {
        let d = a.coords.dot(&b.coords);
        1.0 - d * d
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_init(&samples, k, &mut rng, dist);
    let mut labels = alloc::vec![0usize; samples.len()];

    for _ in 0..MAX_ITERATIONS {
        for (label, q) in labels.iter_mut().zip(&samples) {
            *label = nearest_rotation(q, &centroids);
        }
        let mut scatter = alloc::vec![Matrix4::<f64>::zeros(); k];
        let mut counts = alloc::vec![0usize; k];
        for (label, q) in labels.iter().zip(&samples) {
            scatter[*label] += q.coords * q.coords.transpose();
            counts[*label] += 1;
        }
        let mut shift: f64 = 0.0;
        for c in 0..k {
            let next = if counts[c] > 0 {
                principal_quaternion(&scatter[c])
            } else {
                samples[farthest_point(&samples, &labels, &centroids, dist)]
            };
            let d = (next.coords - centroids[c].coords).norm().min((next.coords + centroids[c].coords).norm());
            shift = shift.max(d);
            centroids[c] = next;
        }
        if shift < CONVERGENCE_SHIFT {
            break;
        }
    }
    centroids.sort_by(|a, b| lexicographic(&quat_key(a), &quat_key(b)));
    Ok(centroids)
}

/// Fits both marginals on sampled relative poses. The rotation fit uses a
/// seed derived from `seed` so the two clusterings are independent.
pub fn fit_pose_bins(poses: &[CameraPose], seed: u64) -> Result<PoseBins, BinningError> {
    let t: Vec<Vec3> = poses.iter().map(|p| p.translation()).collect();
    let r: Vec<UnitQuaternion<f64>> = poses.iter().map(|p| p.rotation()).collect();
    let translations = fit_translation_bins(&t, NUM_BINS, seed)?;
    let rotations = fit_rotation_bins(&r, NUM_BINS, seed.wrapping_add(0x5851_F42D_4C95_7F2D))?;
    PoseBins::new(translations, rotations)
}

fn quat_key(q: &UnitQuaternion<f64>) -> [f64; 4] {
    [q.w, q.i, q.j, q.k]
}

/// Principal eigenvector of a quaternion scatter matrix, as a canonical
/// unit quaternion.
pub fn principal_quaternion(scatter: &Matrix4<f64>) -> UnitQuaternion<f64> {
    let eig = SymmetricEigen::new(*scatter);
    let mut best = 0;
    for i in 1..4 {
        if eig.eigenvalues[i] > eig.eigenvalues[best] {
            best = i;
        }
    }
    let v: Vector4<f64> = eig.eigenvectors.column(best).into_owned();
    // nalgebra stores quaternion coordinates as [x, y, z, w]
    canonical_quaternion(UnitQuaternion::new_normalize(nalgebra::Quaternion::from(v)))
}

fn plus_plus_init<T: Copy>(points: &[T], k: usize, rng: &mut ChaCha8Rng, dist: impl Fn(&T, &T) -> f64) -> Vec<T> {
    let mut centroids = Vec::with_capacity(k);
    centroids.push(points[rng.random_range(0..points.len())]);
    let mut d2: Vec<f64> = points.iter().map(|p| dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = None;
            for (i, d) in d2.iter().enumerate() {
                if *d > 0.0 {
                    chosen = Some(i);
                    if target < *d {
                        break;
                    }
                    target -= d;
                }
            }
            chosen.unwrap_or(0)
        } else {
            0
        };
        let c = points[idx];
        centroids.push(c);
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(dist(p, &c));
        }
    }
    centroids
}

fn farthest_point<T>(points: &[T], labels: &[usize], centroids: &[T], dist: impl Fn(&T, &T) -> f64) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, (p, l)) in points.iter().zip(labels).enumerate() {
        let d = dist(p, &centroids[*l]);
        if d > best.1 {
            best = (i, d);
        }
    }
    best.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::quaternion_distance;
    use approx::assert_relative_eq;
    use core::f64::consts::PI;

    fn uniform_bins() -> PoseBins {
        let t = (0..NUM_BINS).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect();
        let r = (0..NUM_BINS).map(|i| UnitQuaternion::from_axis_angle(&Vec3::z_axis(), i as f64 * 0.1)).collect();
        PoseBins::new(t, r).unwrap()
    }

    #[test]
    fn kmeans_single_cluster_is_mean() {
        let c = fit_translation_bins(&[Vec3::zeros(), Vec3::new(2.0, 0.0, 0.0)], 1, 0).unwrap();
        assert_relative_eq!(c[0], Vec3::new(1.0, 0.0, 0.0));
    }

    #[test]
    fn kmeans_two_clusters_matches_exhaustive_partition() {
        let pts = [Vec3::zeros(), Vec3::new(0.1, 0.0, 0.0), Vec3::new(5.0, 0.0, 0.0), Vec3::new(5.1, 0.0, 0.0)];
        // exhaustive 2-partition oracle: minimise within-cluster SSE
        let mut best = (f64::INFINITY, Vec::new());
        for mask in 1u32..(1 << pts.len()) - 1 {
            let (a, b): (Vec<_>, Vec<_>) = (0..pts.len()).partition(|i| mask & (1 << i) != 0);
            let mean = |ix: &[usize]| ix.iter().map(|i| pts[*i]).sum::<Vec3>() / ix.len() as f64;
            let (ma, mb) = (mean(&a), mean(&b));
            let sse: f64 = a.iter().map(|i| (pts[*i] - ma).norm_squared()).sum::<f64>()
                + b.iter().map(|i| (pts[*i] - mb).norm_squared()).sum::<f64>();
            if sse < best.0 {
                let mut c = alloc::vec![ma, mb];
                c.sort_by(|x, y| x.x.total_cmp(&y.x));
                best = (sse, c);
            }
        }
        let c = fit_translation_bins(&pts, 2, 7).unwrap();
        for (got, want) in c.iter().zip(&best.1) {
            assert_relative_eq!(*got, *want, epsilon = 1e-12);
        }
        assert_relative_eq!(c[0], Vec3::new(0.05, 0.0, 0.0), epsilon = 1e-12);
        assert_relative_eq!(c[1], Vec3::new(5.05, 0.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn kmeans_k_equals_point_count() {
        let pts = [Vec3::new(3.0, 1.0, 0.0), Vec3::new(-1.0, 2.0, 0.5), Vec3::new(0.0, 0.0, 1.0)];
        let c = fit_translation_bins(&pts, 3, 11).unwrap();
        let mut want = pts.to_vec();
        want.sort_by(|a, b| lexicographic(a.as_slice(), b.as_slice()));
        assert_eq!(c, want);
    }

    #[test]
    fn kmeans_insufficient_data() {
        let pts = [Vec3::zeros(), Vec3::zeros(), Vec3::x()];
        assert_eq!(fit_translation_bins(&pts, 3, 0), Err(BinningError::InsufficientData { needed: 3, got: 2 }));
    }

    #[test]
    fn spherical_kmeans_double_cover() {
        let id = UnitQuaternion::identity();
        let c = fit_rotation_bins(&[id, id], 1, 0).unwrap();
        assert!(quaternion_distance(&c[0], &id) < 1e-12);

        let q = UnitQuaternion::from_axis_angle(&Vec3::y_axis(), 0.7);
        let neg = UnitQuaternion::new_unchecked(-q.into_inner());
        let c = fit_rotation_bins(&[q, neg], 1, 0).unwrap();
        assert!(c[0].w >= 0.0);
        assert!((c[0].coords.dot(&q.coords).abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn spherical_kmeans_two_clusters() {
        let around = |base: f64| {
            [-0.02, -0.01, 0.01, 0.02].map(|d| {
                UnitQuaternion::from_axis_angle(&Vec3::z_axis(), base + d)
                    * UnitQuaternion::from_axis_angle(&Vec3::x_axis(), d * 0.5)
            })
        };
        let a = around(0.0);
        let b = around(PI / 2.0);
        let all: Vec<_> = a.iter().chain(b.iter()).copied().collect();

        // brute-force 2-partition oracle with chordal means
        let chordal = |ix: &[usize]| {
            let s: Matrix4<f64> = ix.iter().map(|i| all[*i].coords * all[*i].coords.transpose()).sum();
            principal_quaternion(&s)
        };
        let mut best = (f64::NEG_INFINITY, Vec::new());
        for mask in 1u32..(1 << all.len()) - 1 {
            let (p, q): (Vec<usize>, Vec<usize>) = (0..all.len()).partition(|i| mask & (1 << i) != 0);
            let (cp, cq) = (chordal(&p), chordal(&q));
            let score: f64 = p.iter().map(|i| all[*i].coords.dot(&cp.coords).powi(2)).sum::<f64>()
                + q.iter().map(|i| all[*i].coords.dot(&cq.coords).powi(2)).sum::<f64>();
            if score > best.0 {
                best = (score, alloc::vec![cp, cq]);
            }
        }
        let fitted = fit_rotation_bins(&all, 2, 3).unwrap();
        for want in &best.1 {
            let closest = fitted.iter().map(|c| quaternion_distance(c, want)).fold(f64::INFINITY, f64::min);
            assert!(closest < 2f64.to_radians(), "closest {closest}");
        }
    }

    #[test]
    fn spherical_kmeans_sign_invariant() {
        let mut samples = Vec::new();
        for i in 0..40 {
            let axis = nalgebra::Unit::new_normalize(Vec3::new(1.0, (i as f64).sin(), (i as f64 * 0.3).cos()));
            samples.push(UnitQuaternion::from_axis_angle(&axis, i as f64 * 0.07));
        }
        let flipped: Vec<_> = samples
            .iter()
            .enumerate()
            .map(|(i, q)| if i % 2 == 0 { UnitQuaternion::new_unchecked(-q.into_inner()) } else { *q })
            .collect();
        assert_eq!(fit_rotation_bins(&samples, 5, 42).unwrap(), fit_rotation_bins(&flipped, 5, 42).unwrap());
        assert_eq!(fit_rotation_bins(&samples, 5, 42).unwrap(), fit_rotation_bins(&samples, 5, 42).unwrap());
    }

    #[test]
    fn assign_bins_exact_and_ties() {
        let bins = uniform_bins();
        for i in 0..NUM_BINS {
            assert_eq!(assign_bins(&bins.pose(i, i), &bins), (i, i));
        }
        // equidistant between translation centroids 3 and 7, placed off the grid line
        let mut t = bins.translations().to_vec();
        t[3] = Vec3::new(100.0, 1.0, 0.0);
        t[7] = Vec3::new(100.0, -1.0, 0.0);
        let tied = PoseBins::new(t, bins.rotations().to_vec()).unwrap();
        let pose = CameraPose::new(UnitQuaternion::identity(), Vec3::new(100.0, 0.0, 0.0));
        assert_eq!(assign_bins(&pose, &tied).0, 3);
    }

    #[test]
    fn expansion_properties() {
        let dist = CameraDistribution::uniform(uniform_bins());
        let h = expand_hypotheses(&dist);
        assert_eq!(h.len(), NUM_HYPOTHESES);
        assert!(h.iter().all(|x| x.p_t == 1.0 / 32.0 && x.p_r == 1.0 / 32.0));
        let total: f64 = h.iter().map(|x| x.p_t * x.p_r).sum();
        assert!((total - 1.0).abs() < 1e-6);
        assert!(h.iter().enumerate().all(|(i, x)| x.index() == i));

        let mut pt = alloc::vec![0.0; NUM_BINS];
        let mut pr = alloc::vec![0.0; NUM_BINS];
        pt[5] = 1.0;
        pr[9] = 1.0;
        let dist = CameraDistribution::new(uniform_bins(), pt, pr).unwrap();
        let nonzero: Vec<_> =
            expand_hypotheses(&dist).iter().filter(|x| x.p_t * x.p_r > 0.0).map(|x| x.index()).collect();
        assert_eq!(nonzero, [5 * 32 + 9]);
    }

    #[test]
    fn distribution_validation() {
        let bad = alloc::vec![0.5; NUM_BINS];
        assert!(CameraDistribution::new(uniform_bins(), bad.clone(), bad).is_err());
        assert!(PoseBins::new(alloc::vec![Vec3::zeros(); 3], alloc::vec![]).is_err());
    }
}
