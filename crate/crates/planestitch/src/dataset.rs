//! Synthetic datasets on disk: one directory per pair holding the
//! detections, camera distribution, keypoints and ground truth.

use std::path::{Path, PathBuf};

use planestitch_core::binning::{fit_pose_bins, PoseBins};
use planestitch_core::synth::{generate, SynthPair};
use planestitch_core::CameraPose;
use rayon::prelude::*;
use rayon::ThreadPool;

use crate::config::PipelineConfig;
use crate::error::FormatError;
use crate::format::{
    write_json, CameraFile, DetectionsFile, GtFile, KeypointFile, PoseDto, CAMERA_FILE, DETECTIONS_FILE, GT_FILE,
    KEYPOINTS_FILE,
};

pub fn write_pair(dir: &Path, name: &str, pair: &SynthPair) -> Result<(), FormatError> {
    let k = &pair.intrinsics;
    let dets =
        DetectionsFile::from_views([(&format!("{name}-1"), k, &pair.dets1), (&format!("{name}-2"), k, &pair.dets2)]);
    write_json(&dir.join(DETECTIONS_FILE), &dets)?;
    write_json(&dir.join(CAMERA_FILE), &CameraFile::inline(&pair.distribution))?;
    write_json(&dir.join(KEYPOINTS_FILE), &KeypointFile::from(&pair.keypoints))?;
    write_json(&dir.join(GT_FILE), &GtFile::from_synth(pair))
}

pub fn pair_name(index: usize) -> String {
    format!("pair-{index:04}")
}

/// Generates `count` pairs with seeds `seed, seed + 1, …` into
/// `out/pair-NNNN`. Returns the pair directories in order.
pub fn write_dataset(
    out: &Path,
    bins: &PoseBins,
    cfg: &PipelineConfig,
    count: usize,
    seed: u64,
    pool: &ThreadPool,
) -> Result<Vec<PathBuf>, FormatError> {
    pool.install(|| {
        (0..count)
            .into_par_iter()
            .map(|k| {
                let synth = cfg.synth_config(seed.wrapping_add(k as u64))?;
                let pair = generate(&synth, bins).map_err(|e| FormatError::invalid(format!("synth (pair {k})"), e))?;
                let name = pair_name(k);
                let dir = out.join(&name);
                write_pair(&dir, &name, &pair)?;
                Ok(dir)
            })
            .collect()
    })
}

pub fn fit_bins(poses: &[PoseDto], seed: u64) -> Result<PoseBins, FormatError> {
    let poses =
        poses.iter().enumerate().map(|(k, p)| p.to_pose(&format!("[{k}]"))).collect::<Result<Vec<CameraPose>, _>>()?;
    fit_pose_bins(&poses, seed).map_err(|e| FormatError::invalid("poses", e))
}
