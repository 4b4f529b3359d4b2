//! End-to-end orchestration: parallel discrete search, refinement, merging,
//! and the JSON report.
//!
//! Hypotheses are scored in parallel, but the winner is picked by an
//! order-independent reduction, so results do not depend on the number of
//! worker threads.

use std::path::{Path, PathBuf};

use planestitch_core::discrete::{DiscreteProblem, Selection};
use planestitch_core::merge::{Diagnostics, MergedPlane, Reconstruction};
use planestitch_core::stitch::{finish, PairInputs, StitchOutput};
use planestitch_core::{Correspondence, Intrinsics, Match};
use rayon::prelude::*;
use rayon::ThreadPool;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::error::FormatError;
use crate::format::{
    load_pair, masks_from_dto, masks_to_dto, pair_dirs, plane_from, IntrinsicsDto, MaskDto, PairData, PoseDto,
    DETECTIONS_FILE, REPORT_FILE,
};

pub fn thread_pool(threads: usize) -> ThreadPool {
    rayon::ThreadPoolBuilder::new().num_threads(threads.max(1)).build().expect("thread pool")
}

/// Scores every hypothesis on the current rayon pool and reduces to the
/// selection.
pub fn select_parallel(problem: &DiscreteProblem<'_>) -> Selection {
    let candidates: Vec<_> = (0..problem.num_hypotheses()).into_par_iter().map(|k| problem.evaluate(k)).collect();
    problem.select(candidates).expect("the hypothesis grid is never empty")
}

pub fn stitch_pair(data: &PairData, cfg: &PipelineConfig) -> StitchOutput {
    let stitch_cfg = cfg.stitch_config();
    let inputs = PairInputs {
        dets1: &data.views[0].detections,
        dets2: &data.views[1].detections,
        distribution: &data.distribution,
        keypoints: &data.keypoints,
        intrinsics: [data.views[0].intrinsics, data.views[1].intrinsics],
    };
    let problem = DiscreteProblem::new(inputs.dets1, inputs.dets2, inputs.distribution, &stitch_cfg.matching);
    let selection = select_parallel(&problem);
    finish(&inputs, selection, &stitch_cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectedBin {
    pub index_t: usize,
    pub index_r: usize,
    pub p_t: f64,
    pub p_r: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContinuousSummary {
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
    pub converged: bool,
    pub keypoints_input: usize,
    pub keypoints_used: usize,
    pub keypoints_rejected_by_ransac: usize,
    pub keypoints_dropped_invalid: usize,
    pub keypoints_inactive: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatchDto {
    pub i: usize,
    pub j: usize,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceDto {
    /// 1 or 2.
    pub view: usize,
    pub id: String,
}

/// A world-frame plane of the reconstruction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportPlane {
    pub id: String,
    pub sources: Vec<SourceDto>,
    pub normal: [f64; 3],
    pub offset: f64,
    pub score: f64,
    pub masks: [Option<MaskDto>; 2],
}

/// Everything one `stitch` run produced. Failed runs carry `error` and
/// leave the other fields empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Report {
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub config: PipelineConfig,
    pub selected_bin: Option<SelectedBin>,
    pub discrete_objective: Option<f64>,
    pub continuous: Option<ContinuousSummary>,
    pub camera: Option<PoseDto>,
    pub intrinsics: Option<[IntrinsicsDto; 2]>,
    pub m: usize,
    pub n: usize,
    pub correspondence: Vec<MatchDto>,
    pub planes: Vec<ReportPlane>,
    pub warnings: Vec<String>,
}

pub(crate) fn plane_id(sources: &[(usize, String)]) -> String {
    sources.iter().map(|(v, id)| format!("{}:{id}", v + 1)).collect::<Vec<_>>().join("+")
}

impl ReportPlane {
    fn from_merged(p: &MergedPlane) -> Self {
        let n = p.plane.normal();
        ReportPlane {
            id: plane_id(&p.sources),
            sources: p.sources.iter().map(|(v, id)| SourceDto { view: v + 1, id: id.clone() }).collect(),
            normal: [n.x, n.y, n.z],
            offset: p.plane.offset(),
            score: p.score,
            masks: masks_to_dto(&p.masks),
        }
    }
}

impl Report {
    pub fn success(out: &StitchOutput, cfg: &PipelineConfig, intrinsics: [Intrinsics; 2]) -> Self {
        let recon = &out.reconstruction;
        let h = &out.selection.hypothesis;
        Report {
            status: "ok".into(),
            error: None,
            config: *cfg,
            selected_bin: Some(SelectedBin { index_t: h.index_t, index_r: h.index_r, p_t: h.p_t, p_r: h.p_r }),
            discrete_objective: recon.diagnostics.discrete_objective,
            continuous: out.refinement.as_ref().map(|r| ContinuousSummary {
                initial_cost: r.initial_cost,
                final_cost: r.final_cost,
                iterations: r.iterations,
                converged: r.converged,
                keypoints_input: r.keypoints.input,
                keypoints_used: r.keypoints.used,
                keypoints_rejected_by_ransac: r.keypoints.rejected_by_ransac,
                keypoints_dropped_invalid: r.keypoints.dropped_invalid,
                keypoints_inactive: r.keypoints.inactive,
            }),
            camera: Some((&recon.camera).into()),
            intrinsics: Some([(&intrinsics[0]).into(), (&intrinsics[1]).into()]),
            m: recon.correspondence.m,
            n: recon.correspondence.n,
            correspondence: recon
                .correspondence
                .matches
                .iter()
                .map(|m| MatchDto { i: m.i, j: m.j, cost: m.cost })
                .collect(),
            planes: recon.planes().map(ReportPlane::from_merged).collect(),
            warnings: recon.diagnostics.warnings.clone(),
        }
    }

    pub fn failure(error: &dyn std::fmt::Display, cfg: &PipelineConfig) -> Self {
        Report {
            status: "error".into(),
            error: Some(error.to_string()),
            config: *cfg,
            selected_bin: None,
            discrete_objective: None,
            continuous: None,
            camera: None,
            intrinsics: None,
            m: 0,
            n: 0,
            correspondence: Vec::new(),
            planes: Vec::new(),
            warnings: Vec::new(),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }

    /// Rebuilds the reconstruction the report describes.
    pub fn reconstruction(&self) -> Result<Reconstruction, FormatError> {
        let camera = self
            .camera
            .as_ref()
            .ok_or_else(|| FormatError::invalid("camera", "report of a failed run has no camera"))?
            .to_pose("camera")?;
        let mut merged = Vec::new();
        let mut singletons = Vec::new();
        for (k, p) in self.planes.iter().enumerate() {
            let field = format!("planes[{k}] ({})", p.id);
            let plane = plane_from(&p.normal, p.offset, &field)?;
            let masks = masks_from_dto(&p.masks, &field)?;
            let sources = p.sources.iter().map(|s| (s.view.saturating_sub(1), s.id.clone())).collect::<Vec<_>>();
            let mp = MergedPlane { plane, sources, score: p.score, masks };
            if mp.sources.len() > 1 {
                merged.push(mp);
            } else {
                singletons.push(mp);
            }
        }
        Ok(Reconstruction {
            camera,
            merged,
            singletons,
            correspondence: Correspondence {
                m: self.m,
                n: self.n,
                matches: self.correspondence.iter().map(|m| Match { i: m.i, j: m.j, cost: m.cost }).collect(),
            },
            diagnostics: Diagnostics {
                discrete_objective: self.discrete_objective,
                initial_cost: self.continuous.map(|c| c.initial_cost),
                final_cost: self.continuous.map(|c| c.final_cost),
                warnings: self.warnings.clone(),
            },
        })
    }

    pub fn intrinsics(&self) -> Result<[Intrinsics; 2], FormatError> {
        let k = self.intrinsics.ok_or_else(|| FormatError::invalid("intrinsics", "missing"))?;
        Ok([k[0].to_intrinsics("intrinsics[0]")?, k[1].to_intrinsics("intrinsics[1]")?])
    }
}

/// Loads, stitches and reports one pair directory.
pub fn run_pair_dir(dir: &Path, cfg: &PipelineConfig) -> Report {
    match load_pair(dir) {
        Ok(data) => {
            let out = stitch_pair(&data, cfg);
            Report::success(&out, cfg, [data.views[0].intrinsics, data.views[1].intrinsics])
        }
        Err(e) => Report::failure(&e, cfg),
    }
}

/// True when `dir` holds a single pair rather than a batch of pairs.
pub fn is_pair_dir(dir: &Path) -> bool {
    dir.join(DETECTIONS_FILE).is_file()
}

/// Stitches a single pair directory or every pair subdirectory of a batch
/// directory, in parallel on `pool`. Results are in directory-name order.
pub fn run_batch(dir: &Path, cfg: &PipelineConfig, pool: &ThreadPool) -> Result<Vec<(PathBuf, Report)>, FormatError> {
    let dirs = if is_pair_dir(dir) { vec![dir.to_path_buf()] } else { pair_dirs(dir)? };
    Ok(pool.install(|| dirs.par_iter().map(|d| (d.clone(), run_pair_dir(d, cfg))).collect()))
}

/// Where the report of pair directory `pair` goes: next to its inputs, or
/// mirrored under `out_root` when given.
pub fn report_path(input_root: &Path, pair: &Path, out_root: Option<&Path>) -> PathBuf {
    match out_root {
        None => pair.join(REPORT_FILE),
        Some(root) => match pair.strip_prefix(input_root) {
            Ok(rel) if !rel.as_os_str().is_empty() => root.join(rel).join(REPORT_FILE),
            _ => root.join(REPORT_FILE),
        },
    }
}
