//! The full two-view pipeline: discrete selection, optional continuous
//! refinement, merging.

use alloc::format;
use alloc::vec::Vec;

use crate::binning::CameraDistribution;
use crate::discrete::{DiscreteProblem, MatchConfig, PlaneDetection, Selection};
use crate::geometry::Intrinsics;
use crate::merge::{build_reconstruction, Diagnostics, Reconstruction};
use crate::refine::{refine, KeypointMatchSet, RefineConfig, RefineResult};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StitchConfig {
    pub matching: MatchConfig,
    pub refine: RefineConfig,
    pub skip_continuous: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StitchOutput {
    pub selection: Selection,
    pub refinement: Option<RefineResult>,
    pub reconstruction: Reconstruction,
}

/// Inputs of one image pair.
#[derive(Debug, Clone, Copy)]
pub struct PairInputs<'a> {
    pub dets1: &'a [PlaneDetection],
    pub dets2: &'a [PlaneDetection],
    pub distribution: &'a CameraDistribution,
    pub keypoints: &'a KeypointMatchSet,
    pub intrinsics: [Intrinsics; 2],
}

/// Runs the discrete search sequentially and completes the pipeline.
pub fn stitch(inputs: &PairInputs<'_>, cfg: &StitchConfig) -> StitchOutput {
    let problem = DiscreteProblem::new(inputs.dets1, inputs.dets2, inputs.distribution, &cfg.matching);
    let selection = problem
        .select((0..problem.num_hypotheses()).map(|k| problem.evaluate(k)))
        .expect("the hypothesis grid is never empty");
    finish(inputs, selection, cfg)
}

/// Completes the pipeline from a discrete selection. A refinement failure
/// falls back to the selected bin pose with a warning.
pub fn finish(inputs: &PairInputs<'_>, selection: Selection, cfg: &StitchConfig) -> StitchOutput {
    let mut diagnostics = Diagnostics { discrete_objective: Some(selection.objective_value), ..Diagnostics::default() };
    for e in &selection.excluded {
        diagnostics.warnings.push(format!(
            "view {} plane {} excluded from matching: degenerate offset",
            e.view + 1,
            e.id
        ));
    }
    let detected = |dets: &[PlaneDetection]| dets.iter().map(|d| d.plane).collect::<Vec<_>>();
    let (camera, planes1, planes2, refinement) = if cfg.skip_continuous {
        (selection.camera(), detected(inputs.dets1), detected(inputs.dets2), None)
    } else {
        match refine(&selection, inputs.dets1, inputs.dets2, inputs.keypoints, inputs.intrinsics, &cfg.refine) {
            Ok(r) => {
                diagnostics.initial_cost = Some(r.initial_cost);
                diagnostics.final_cost = Some(r.final_cost);
                if r.keypoints.dropped_invalid > 0 {
                    diagnostics
                        .warnings
                        .push(format!("{} keypoints dropped: ray misses its plane", r.keypoints.dropped_invalid));
                }
                (r.camera, r.planes1.clone(), r.planes2.clone(), Some(r))
            }
            Err(e) => {
                diagnostics.warnings.push(format!("continuous refinement failed: {e}; using the selected bin pose"));
                (selection.camera(), detected(inputs.dets1), detected(inputs.dets2), None)
            }
        }
    };
    let reconstruction = build_reconstruction(
        inputs.dets1,
        inputs.dets2,
        &planes1,
        &planes2,
        &camera,
        &selection.correspondence,
        diagnostics,
    );
    StitchOutput { selection, refinement, reconstruction }
}
