#![allow(dead_code)]

use std::sync::OnceLock;

use planestitch_core::binning::{fit_pose_bins, PoseBins};
use planestitch_core::geometry::{backproject, geodesic_distance};
use planestitch_core::refine::KeypointMatchSet;
use planestitch_core::synth::{generate, sample_training_poses, SynthConfig, SynthPair};
use planestitch_core::{CameraPose, Intrinsics, Plane};

pub fn bins() -> &'static PoseBins {
    static BINS: OnceLock<PoseBins> = OnceLock::new();
    BINS.get_or_init(|| fit_pose_bins(&sample_training_poses(2000, 90.0, 4.0, 1), 1).unwrap())
}

/// Noise-free pair with a sharply peaked camera distribution.
pub fn clean_pair(seed: u64) -> SynthPair {
    generate(&SynthConfig { distribution_temperature: 1e-3, ..SynthConfig::noise_free(seed) }, bins()).unwrap()
}

pub fn camera_error(a: &CameraPose, b: &CameraPose) -> (f64, f64) {
    let t = (a.translation() - b.translation()).norm();
    let r = geodesic_distance(&a.rotation_matrix(), &b.rotation_matrix()).to_degrees();
    (t, r)
}

/// Mean 3D distance between matched keypoints cast onto their planes, with
/// view 2 carried into view 1 by `camera`.
pub fn keypoint_misalignment(
    kps: &KeypointMatchSet,
    planes1: &[Plane],
    planes2: &[Plane],
    camera: &CameraPose,
    k: &Intrinsics,
) -> f64 {
    let mut total = 0.0;
    let mut count = 0;
    for pair in &kps.pairs {
        for p in &pair.points {
            let x1 = backproject((p[0], p[1]), &planes1[pair.i], k).unwrap();
            let x2 = camera.transform_point(&backproject((p[2], p[3]), &planes2[pair.j], k).unwrap());
            total += (x1 - x2).norm();
            count += 1;
        }
    }
    total / count as f64
}
