//! Synthetic two-view plane scenes with full ground truth.
//!
//! World planes are expressed in the first camera's frame. Each plane is a
//! square patch placed so that its corners project inside every view that
//! sees it; masks are the rasterised projected patches and keypoints are
//! points on the shared patches projected with the true geometry.

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::{DVector, UnitQuaternion};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::binning::{BinningError, CameraDistribution, PoseBins, NUM_BINS};
use crate::discrete::{Correspondence, Match, PlaneDetection};
use crate::geometry::{quaternion_distance, world2cam, CameraPose, Intrinsics, Plane, Vec3};
use crate::mask::MaskRle;
use crate::refine::{KeypointMatchSet, KeypointPair};

/// Camera attempts before giving up.
pub const MAX_ATTEMPTS: usize = 1000;
/// Placement attempts per plane for one camera.
const PLANE_ATTEMPTS: usize = 200;
const OFFSET_RANGE: (f64, f64) = (0.5, 6.0);
/// Minimum offset of a plane in the frame of any camera that sees it.
const MIN_VIEW_OFFSET: f64 = 0.3;
/// Minimum `|cos|` between a plane's normal and the viewing ray.
const MIN_INCIDENCE: f64 = 0.3;
/// Planes of one scene must differ by more than the evaluation tolerance in
/// normal or in offset, so no two of them would count as the same plane.
const DISTINCT_ANGLE_DEG: f64 = crate::metrics::NORMAL_THRESHOLD_DEG;
const DISTINCT_OFFSET: f64 = crate::metrics::OFFSET_THRESHOLD_M;
const TRANSLATION_TEMPERATURE: f64 = 0.5;
const ROTATION_TEMPERATURE: f64 = 0.3;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_shared: usize,
    pub n_unique_per_view: usize,
    pub max_rotation_deg: f64,
    pub max_translation: f64,
    pub sigma_normal_deg: f64,
    pub sigma_offset: f64,
    /// Expected norm of the embedding perturbation before renormalising.
    pub sigma_embedding: f64,
    pub sigma_pixel: f64,
    /// Multiplies the base softmax temperatures (0.5 m and 0.3 rad).
    pub distribution_temperature: f64,
    pub embedding_dim: usize,
    pub keypoints_per_plane: usize,
    pub intrinsics: Intrinsics,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_shared: 3,
            n_unique_per_view: 3,
            max_rotation_deg: 90.0,
            max_translation: 4.0,
            sigma_normal_deg: 0.0,
            sigma_offset: 0.0,
            sigma_embedding: 0.0,
            sigma_pixel: 0.0,
            distribution_temperature: 1.0,
            embedding_dim: 128,
            keypoints_per_plane: 20,
            intrinsics: Intrinsics::default(),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn noise_free(seed: u64) -> Self {
        SynthConfig { seed, ..SynthConfig::default() }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &'static str| Err(SynthError::InvalidConfig(m));
        if self.n_shared < 3 || self.n_unique_per_view < 3 {
            return bad("scenes need at least 3 shared and 3 unique planes per view");
        }
        let sigmas = [self.sigma_normal_deg, self.sigma_offset, self.sigma_embedding, self.sigma_pixel];
        if sigmas.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return bad("noise levels must be finite and non-negative");
        }
        if !(self.distribution_temperature > 0.0 && self.distribution_temperature.is_finite()) {
            return bad("distribution_temperature must be positive");
        }
        if !(self.max_rotation_deg >= 0.0 && self.max_rotation_deg <= 180.0) {
            return bad("max_rotation_deg must lie in [0, 180]");
        }
        if !(self.max_translation >= 0.0 && self.max_translation.is_finite()) {
            return bad("max_translation must be non-negative");
        }
        if self.embedding_dim == 0 {
            return bad("embedding_dim must be positive");
        }
        self.intrinsics.validate().map_err(|_| SynthError::InvalidConfig("invalid intrinsics"))
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("invalid synthetic config: {0}")]
    InvalidConfig(&'static str),
    #[error("could not place the scene in {attempts} attempts")]
    RetryExhausted { attempts: usize },
    #[error(transparent)]
    Binning(#[from] BinningError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthPair {
    pub dets1: Vec<PlaneDetection>,
    pub dets2: Vec<PlaneDetection>,
    pub gt_camera: CameraPose,
    pub gt_correspondence: Correspondence,
    pub distribution: CameraDistribution,
    pub keypoints: KeypointMatchSet,
    pub gt_world_planes: Vec<Plane>,
    /// World plane index of each detection.
    pub source1: Vec<usize>,
    pub source2: Vec<usize>,
    pub intrinsics: Intrinsics,
}

impl SynthPair {
    /// True camera-frame planes of a view (before detection noise).
    pub fn true_view_planes(&self, view: usize) -> Vec<Plane> {
        let src = if view == 0 { &self.source1 } else { &self.source2 };
        src.iter()
            .map(|k| {
                let w = self.gt_world_planes[*k];
                if view == 0 {
                    w
                } else {
                    world2cam(&w, &self.gt_camera).expect("placement keeps offsets positive")
                }
            })
            .collect()
    }
}

fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let n = v.norm();
        if n > 1e-6 {
            return v / n;
        }
    }
}

fn unit3(rng: &mut ChaCha8Rng) -> Vec3 {
    let v = unit_vector(rng, 3);
    Vec3::new(v[0], v[1], v[2])
}

/// Rotation by exactly `angle` radians about a uniformly random axis.
fn random_rotation(rng: &mut ChaCha8Rng, angle: f64) -> UnitQuaternion<f64> {
    UnitQuaternion::from_scaled_axis(unit3(rng) * angle)
}

/// Uniform within the rotation and translation bounds: rotation angle
/// density follows the Haar measure restricted to the ball, translation is
/// uniform in the ball.
pub fn sample_pose(rng: &mut ChaCha8Rng, max_rotation_deg: f64, max_translation: f64) -> CameraPose {
    let max_angle = max_rotation_deg.to_radians();
    let angle = if max_angle > 0.0 {
        // the angle density is proportional to 1 − cos θ
        let peak = 1.0 - libm::cos(max_angle);
        loop {
            let a = rng.random_range(0.0..=max_angle);
            if rng.random::<f64>() * peak <= 1.0 - libm::cos(a) {
                break a;
            }
        }
    } else {
        0.0
    };
    let r = libm::cbrt(rng.random::<f64>()) * max_translation;
    CameraPose::new(random_rotation(rng, angle), unit3(rng) * r)
}

/// Independent relative poses from the scene prior, for fitting bins.
pub fn sample_training_poses(n: usize, max_rotation_deg: f64, max_translation: f64, seed: u64) -> Vec<CameraPose> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| sample_pose(&mut rng, max_rotation_deg, max_translation)).collect()
}

/// Moves the translation by exactly `d_trans` in a random direction and
/// composes the rotation with a random-axis rotation of exactly `d_rot_deg`.
pub fn perturb_pose(pose: &CameraPose, d_trans: f64, d_rot_deg: f64, seed: u64) -> CameraPose {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dt = unit3(&mut rng) * d_trans;
    let dr = random_rotation(&mut rng, d_rot_deg.to_radians());
    CameraPose::new(dr * pose.rotation(), pose.translation() + dt)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Visibility {
    Both,
    First,
    Second,
}

#[derive(Debug, Clone, Copy)]
struct Patch {
    plane: Plane,
    corners: [Vec3; 4],
}

/// Square patch around a seed point of the plane, shrunk until it projects
/// inside every view that sees it.
fn place_patch(
    rng: &mut ChaCha8Rng,
    vis: Visibility,
    camera: &CameraPose,
    k: &Intrinsics,
    existing: &[Patch],
) -> Option<Patch> {
    let to_cam2 = camera.inverse();
    let centre2 = camera.translation();
    for _ in 0..PLANE_ATTEMPTS {
        let normal = unit3(rng);
        let offset = rng.random_range(OFFSET_RANGE.0..=OFFSET_RANGE.1);
        let plane = Plane::new(normal, offset).ok()?;
        if existing.iter().any(|p| !distinct(&p.plane, &plane)) {
            continue;
        }
        // seed pixel in the host view, central region
        let (u, v) = (rng.random_range(0.2..0.8) * k.width as f64, rng.random_range(0.2..0.8) * k.height as f64);
        let (ray_world, origin) = match vis {
            Visibility::Second => (camera.rotation_matrix() * k.ray(u, v), centre2),
            _ => (k.ray(u, v), Vec3::zeros()),
        };
        let denom = plane.normal().dot(&ray_world);
        if denom.abs() < 1e-9 {
            continue;
        }
        let s = (plane.offset() - plane.normal().dot(&origin)) / denom;
        if s <= 0.0 {
            continue;
        }
        let point = origin + ray_world * s;
        let sees1 = vis != Visibility::Second;
        let sees2 = vis != Visibility::First;
        let mut ok = true;
        for (sees, c) in [(sees1, Vec3::zeros()), (sees2, centre2)] {
            if !sees {
                continue;
            }
            let d = point - c;
            if d.norm() > 12.0 || plane.normal().dot(&d).abs() / d.norm() < MIN_INCIDENCE {
                ok = false;
            }
            if (plane.normal().dot(&c) - plane.offset()).abs() < MIN_VIEW_OFFSET {
                ok = false;
            }
        }
        if !ok {
            continue;
        }
        let helper = if plane.normal().x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
        let e1 = plane.normal().cross(&helper).normalize();
        let e1 =
            UnitQuaternion::from_axis_angle(&nalgebra::Unit::new_unchecked(plane.normal()), rng.random_range(0.0..PI))
                * e1;
        let e2 = plane.normal().cross(&e1);
        let mut half = rng.random_range(0.4..1.2);
        for _ in 0..6 {
            let corners = [
                point + (e1 + e2) * half,
                point + (e2 - e1) * half,
                point - (e1 + e2) * half,
                point + (e1 - e2) * half,
            ];
            let inside = |pts: &[Vec3; 4], pose: Option<&CameraPose>| {
                pts.iter().all(|x| {
                    let xc = pose.map_or(*x, |p| p.transform_point(x));
                    xc.z > 0.1 && k.project(&xc).is_some_and(|(a, b)| k.contains(a, b))
                })
            };
            if (!sees1 || inside(&corners, None)) && (!sees2 || inside(&corners, Some(&to_cam2))) {
                return Some(Patch { plane, corners });
            }
            half *= 0.6;
        }
    }
    None
}

fn distinct(a: &Plane, b: &Plane) -> bool {
    let angle = libm::acos(a.normal().dot(&b.normal()).abs().min(1.0)).to_degrees();
    angle > DISTINCT_ANGLE_DEG || (a.offset() - b.offset()).abs() > DISTINCT_OFFSET
}

/// Rasterises a convex image-space polygon: a pixel is set when its centre
/// lies inside.
pub fn rasterize_convex(points: &[(f64, f64)], width: u32, height: u32) -> MaskRle {
    MaskRle::from_row_spans(height, width, |row| {
        let y = row as f64 + 0.5;
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for k in 0..points.len() {
            let (a, b) = (points[k], points[(k + 1) % points.len()]);
            if (a.1 <= y && b.1 >= y) || (b.1 <= y && a.1 >= y) {
                if (b.1 - a.1).abs() < 1e-12 {
                    lo = lo.min(a.0.min(b.0));
                    hi = hi.max(a.0.max(b.0));
                } else {
                    let x = a.0 + (y - a.1) * (b.0 - a.0) / (b.1 - a.1);
                    lo = lo.min(x);
                    hi = hi.max(x);
                }
            }
        }
        if !(lo <= hi) {
            return None;
        }
        let start = libm::ceil(lo - 0.5).max(0.0);
        let end = (libm::floor(hi - 0.5) + 1.0).min(width as f64);
        (end > start).then_some((start as u32, end as u32))
    })
}

fn project_mask(corners: &[Vec3; 4], to_cam: &CameraPose, k: &Intrinsics) -> MaskRle {
    let pts: Vec<(f64, f64)> =
        corners.iter().map(|x| k.project(&to_cam.transform_point(x)).expect("corners are in front")).collect();
    rasterize_convex(&pts, k.width, k.height)
}

fn perturb_plane(rng: &mut ChaCha8Rng, plane: &Plane, sigma_normal_deg: f64, sigma_offset: f64) -> Plane {
    let mut normal = plane.normal();
    if sigma_normal_deg > 0.0 {
        let helper = unit3(rng);
        let axis = normal.cross(&helper);
        if axis.norm() > 1e-9 {
            let angle = rng.sample::<f64, _>(StandardNormal) * sigma_normal_deg.to_radians();
            normal = UnitQuaternion::from_scaled_axis(axis.normalize() * angle) * normal;
        }
    }
    let offset = plane.offset() + sigma_offset * rng.sample::<f64, _>(StandardNormal);
    Plane::new(normal, offset).expect("unit normal")
}

fn perturb_embedding(rng: &mut ChaCha8Rng, base: &DVector<f64>, sigma: f64) -> Vec<f64> {
    if sigma == 0.0 {
        return base.iter().copied().collect();
    }
    let scale = sigma / libm::sqrt(base.len() as f64);
    let v = DVector::from_fn(base.len(), |i, _| base[i] + scale * rng.sample::<f64, _>(StandardNormal));
    let n = v.norm();
    v.iter().map(|x| x / n).collect()
}

fn softmax_neg(distances: &[f64], temperature: f64) -> Vec<f64> {
    let min = distances.iter().copied().fold(f64::INFINITY, f64::min);
    let w: Vec<f64> = distances.iter().map(|d| libm::exp(-(d - min) / temperature)).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

/// Camera distribution peaked at the true pose: a softmax of negative
/// distance to each bin centre, per marginal.
pub fn camera_distribution(
    gt: &CameraPose,
    bins: &PoseBins,
    temperature: f64,
) -> Result<CameraDistribution, BinningError> {
    let dt: Vec<f64> = bins.translations().iter().map(|t| (t - gt.translation()).norm()).collect();
    let dr: Vec<f64> = bins.rotations().iter().map(|q| quaternion_distance(q, &gt.rotation())).collect();
    let p_t = softmax_neg(&dt, TRANSLATION_TEMPERATURE * temperature);
    let p_r = softmax_neg(&dr, ROTATION_TEMPERATURE * temperature);
    debug_assert_eq!(p_t.len(), NUM_BINS);
    CameraDistribution::new(bins.clone(), p_t, p_r)
}

struct Scene {
    camera: CameraPose,
    patches: Vec<Patch>,
    visibility: Vec<Visibility>,
}

fn place_scene(rng: &mut ChaCha8Rng, cfg: &SynthConfig) -> Result<Scene, SynthError> {
    let mut visibility = alloc::vec![Visibility::Both; cfg.n_shared];
    visibility.extend(core::iter::repeat_n(Visibility::First, cfg.n_unique_per_view));
    visibility.extend(core::iter::repeat_n(Visibility::Second, cfg.n_unique_per_view));
    'attempt: for _ in 0..MAX_ATTEMPTS {
        let camera = sample_pose(rng, cfg.max_rotation_deg, cfg.max_translation);
        let mut patches: Vec<Patch> = Vec::with_capacity(visibility.len());
        for vis in &visibility {
            match place_patch(rng, *vis, &camera, &cfg.intrinsics, &patches) {
                Some(p) => patches.push(p),
                None => continue 'attempt,
            }
        }
        return Ok(Scene { camera, patches, visibility });
    }
    Err(SynthError::RetryExhausted { attempts: MAX_ATTEMPTS })
}

/// Generates one scene pair. Identical configs give identical pairs.
pub fn generate(cfg: &SynthConfig, bins: &PoseBins) -> Result<SynthPair, SynthError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let Scene { camera, patches, visibility } = place_scene(&mut rng, cfg)?;
    let k = cfg.intrinsics;
    let to_cam2 = camera.inverse();
    let world: Vec<Plane> = patches.iter().map(|p| p.plane).collect();

    // detection order in each view is shuffled
    let mut order1: Vec<usize> = (0..world.len()).filter(|w| visibility[*w] != Visibility::Second).collect();
    let mut order2: Vec<usize> = (0..world.len()).filter(|w| visibility[*w] != Visibility::First).collect();
    order1.shuffle(&mut rng);
    order2.shuffle(&mut rng);

    let embeddings: Vec<DVector<f64>> = (0..world.len()).map(|_| unit_vector(&mut rng, cfg.embedding_dim)).collect();
    let make = |view: usize, w: usize, rng: &mut ChaCha8Rng| {
        let true_plane =
            if view == 0 { world[w] } else { world2cam(&world[w], &camera).expect("placement keeps offsets positive") };
        let plane = perturb_plane(rng, &true_plane, cfg.sigma_normal_deg, cfg.sigma_offset);
        let embedding = perturb_embedding(rng, &embeddings[w], cfg.sigma_embedding);
        let pose = if view == 0 { CameraPose::identity() } else { to_cam2 };
        PlaneDetection {
            id: format!("plane-{w:02}"),
            plane,
            embedding,
            score: rng.random_range(0.6..=1.0),
            mask: Some(project_mask(&patches[w].corners, &pose, &k)),
        }
    };
    let dets1: Vec<PlaneDetection> = order1.iter().map(|w| make(0, *w, &mut rng)).collect();
    let dets2: Vec<PlaneDetection> = order2.iter().map(|w| make(1, *w, &mut rng)).collect();

    let mut matches: Vec<Match> = order1
        .iter()
        .enumerate()
        .filter_map(|(i, w)| order2.iter().position(|x| x == w).map(|j| Match { i, j, cost: 0.0 }))
        .collect();
    matches.sort_by_key(|m| m.i);
    let gt_correspondence = Correspondence { m: dets1.len(), n: dets2.len(), matches };

    let mut pairs = Vec::new();
    for m in &gt_correspondence.matches {
        let c = &patches[order1[m.i]].corners;
        let points = (0..cfg.keypoints_per_plane)
            .map(|_| {
                let (a, b) = (rng.random::<f64>(), rng.random::<f64>());
                let x =
                    c[0] * ((1.0 - a) * (1.0 - b)) + c[1] * (a * (1.0 - b)) + c[2] * (a * b) + c[3] * ((1.0 - a) * b);
                let (u1, v1) = k.project(&x).expect("patch in front of view 1");
                let (u2, v2) = k.project(&to_cam2.transform_point(&x)).expect("patch in front of view 2");
                let mut noise = || cfg.sigma_pixel * rng.sample::<f64, _>(StandardNormal);
                [u1 + noise(), v1 + noise(), u2 + noise(), v2 + noise()]
            })
            .collect();
        pairs.push(KeypointPair { i: m.i, j: m.j, points });
    }

    Ok(SynthPair {
        dets1,
        dets2,
        gt_camera: camera,
        gt_correspondence,
        distribution: camera_distribution(&camera, bins, cfg.distribution_temperature)?,
        keypoints: KeypointMatchSet { pairs },
        gt_world_planes: world,
        source1: order1,
        source2: order2,
        intrinsics: k,
    })
}
