//! Fusing matched planes into one scene in the first camera's frame.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::SymmetricEigen;

use crate::discrete::{Correspondence, PlaneDetection};
use crate::geometry::{cam2world, CameraPose, Mat3, Plane, Vec3};
use crate::mask::MaskRle;

/// Unit vector maximising `Σ (n̂·nᵢ)²`, i.e. the principal eigenvector of
/// `Σ nᵢnᵢᵀ`, with its sign aligned to the first input.
///
/// When the top eigenvalue is degenerate the eigenvector whose component
/// magnitudes are lexicographically largest is chosen. Inputs must be
/// non-empty.
pub fn average_normal(normals: &[Vec3]) -> Vec3 {
    assert!(!normals.is_empty(), "average_normal needs at least one normal");
    let scatter: Mat3 = normals.iter().map(|n| n * n.transpose()).sum();
    let eig = SymmetricEigen::new(scatter);
    let top = eig.eigenvalues.max();
    let tol = 1e-9 * top.abs().max(1e-300);
    let mut best: Option<Vec3> = None;
    for k in 0..3 {
        if top - eig.eigenvalues[k] > tol {
            continue;
        }
        let v = eig.eigenvectors.column(k).normalize();
        let take = match &best {
            None => true,
            Some(b) => lex_abs_greater(&v, b),
        };
        if take {
            best = Some(v);
        }
    }
    let mut n = best.expect("symmetric matrix has a largest eigenvalue");
    let d = n.dot(&normals[0]);
    if d < 0.0 || (d == 0.0 && first_nonzero(&n) < 0.0) {
        n = -n;
    }
    n
}

fn lex_abs_greater(a: &Vec3, b: &Vec3) -> bool {
    for k in 0..3 {
        let (x, y) = (a[k].abs(), b[k].abs());
        if (x - y).abs() > 1e-12 {
            return x > y;
        }
    }
    false
}

fn first_nonzero(v: &Vec3) -> f64 {
    v.iter().copied().find(|x| x.abs() > 1e-12).unwrap_or(0.0)
}

/// A world-frame plane with the detections it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct MergedPlane {
    pub plane: Plane,
    /// `(view, detection id)` with view 0 or 1.
    pub sources: Vec<(usize, String)>,
    /// Mean detection score of the sources.
    pub score: f64,
    /// Masks in each view's image, where available.
    pub masks: [Option<MaskRle>; 2],
}

impl MergedPlane {
    pub fn single(view: usize, plane: Plane, det: &PlaneDetection) -> Self {
        let mut masks = [None, None];
        masks[view] = det.mask.clone();
        MergedPlane { plane, sources: alloc::vec![(view, det.id.clone())], score: det.score, masks }
    }
}

/// Merges two world-frame planes: averaged normal, mean offset and mean
/// score. The result keeps the non-negative offset convention.
pub fn merge_pair(p1: &Plane, p2: &Plane, det1: &PlaneDetection, det2: &PlaneDetection) -> MergedPlane {
    let normal = average_normal(&[p1.normal(), p2.normal()]);
    // offsets are averaged along the orientation of each input that agrees
    // with the merged normal
    let signed = |p: &Plane| if p.normal().dot(&normal) >= 0.0 { p.offset() } else { -p.offset() };
    let offset = 0.5 * (signed(p1) + signed(p2));
    let plane = Plane::new(normal, offset).expect("unit normal");
    MergedPlane {
        plane,
        sources: alloc::vec![(0, det1.id.clone()), (1, det2.id.clone())],
        score: 0.5 * (det1.score + det2.score),
        masks: [det1.mask.clone(), det2.mask.clone()],
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Diagnostics {
    pub discrete_objective: Option<f64>,
    pub initial_cost: Option<f64>,
    pub final_cost: Option<f64>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub camera: CameraPose,
    /// Planes fused from a matched pair, in view-1 index order.
    pub merged: Vec<MergedPlane>,
    /// Unmatched planes, view 1 first, each in index order.
    pub singletons: Vec<MergedPlane>,
    pub correspondence: Correspondence,
    pub diagnostics: Diagnostics,
}

impl Reconstruction {
    /// Every plane of the scene, merged planes first.
    pub fn planes(&self) -> impl Iterator<Item = &MergedPlane> {
        self.merged.iter().chain(&self.singletons)
    }
}

/// Carries a view-2 plane into the world, falling back to transforming the
/// normal directly when the plane passes (nearly) through its camera centre.
fn to_world(plane: &Plane, camera: &CameraPose, id: &str, warnings: &mut Vec<String>) -> Plane {
    match cam2world(plane, camera) {
        Ok(p) => p,
        Err(e) => {
            warnings.push(format!("view 2 plane {id}: {e}; transformed by its normal instead"));
            let n = camera.rotation_matrix() * plane.normal();
            Plane::new(n, plane.offset() + n.dot(&camera.translation())).expect("rotated unit normal")
        }
    }
}

/// Assembles the scene from camera-frame planes of both views (detected or
/// refined), the camera of view 2 and the correspondence between views.
///
/// `planes1`/`planes2` must be index-aligned with `dets1`/`dets2`.
pub fn build_reconstruction(
    dets1: &[PlaneDetection],
    dets2: &[PlaneDetection],
    planes1: &[Plane],
    planes2: &[Plane],
    camera: &CameraPose,
    correspondence: &Correspondence,
    diagnostics: Diagnostics,
) -> Reconstruction {
    assert_eq!(dets1.len(), planes1.len());
    assert_eq!(dets2.len(), planes2.len());
    let mut diagnostics = diagnostics;
    let world2: Vec<Plane> =
        planes2.iter().zip(dets2).map(|(p, d)| to_world(p, camera, &d.id, &mut diagnostics.warnings)).collect();

    let mut used1 = alloc::vec![false; dets1.len()];
    let mut used2 = alloc::vec![false; dets2.len()];
    let mut matches = correspondence.matches.clone();
    matches.sort_by_key(|m| (m.i, m.j));
    let mut merged = Vec::with_capacity(matches.len());
    for m in &matches {
        if used1[m.i] || used2[m.j] {
            diagnostics.warnings.push(format!("duplicate match ({}, {}) ignored", m.i, m.j));
            continue;
        }
        used1[m.i] = true;
        used2[m.j] = true;
        merged.push(merge_pair(&planes1[m.i], &world2[m.j], &dets1[m.i], &dets2[m.j]));
    }

    let mut singletons = Vec::new();
    for (i, d) in dets1.iter().enumerate() {
        if !used1[i] {
            singletons.push(MergedPlane::single(0, planes1[i], d));
        }
    }
    for (j, d) in dets2.iter().enumerate() {
        if !used2[j] {
            singletons.push(MergedPlane::single(1, world2[j], d));
        }
    }
    Reconstruction { camera: *camera, merged, singletons, correspondence: correspondence.clone(), diagnostics }
}
