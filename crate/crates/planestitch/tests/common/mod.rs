#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use planestitch::dataset::write_pair;
use planestitch_core::binning::{fit_pose_bins, PoseBins};
use planestitch_core::geometry::geodesic_distance;
use planestitch_core::synth::{generate, sample_training_poses, SynthConfig, SynthPair};
use planestitch_core::CameraPose;

pub fn bins() -> &'static PoseBins {
    static BINS: OnceLock<PoseBins> = OnceLock::new();
    BINS.get_or_init(|| fit_pose_bins(&sample_training_poses(2000, 90.0, 4.0, 1), 1).unwrap())
}

/// Noise-free pair with a sharply peaked camera distribution.
pub fn clean_pair(seed: u64) -> SynthPair {
    generate(&SynthConfig { distribution_temperature: 1e-3, ..SynthConfig::noise_free(seed) }, bins()).unwrap()
}

/// Writes `pair` to `root/name` and returns the directory.
pub fn write(root: &Path, name: &str, pair: &SynthPair) -> PathBuf {
    let dir = root.join(name);
    write_pair(&dir, name, pair).unwrap();
    dir
}

pub fn camera_error(a: &CameraPose, b: &CameraPose) -> (f64, f64) {
    let t = (a.translation() - b.translation()).norm();
    let r = geodesic_distance(&a.rotation_matrix(), &b.rotation_matrix()).to_degrees();
    (t, r)
}
