//! Stitching of planar reconstructions from two sparse views.
//!
//! Planes detected in each view are matched under a discrete set of camera
//! hypotheses, the best hypothesis and correspondence are refined jointly,
//! and matched planes are merged into a single scene.

#![no_std]
// negated comparisons are used on purpose: they also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod assignment;
pub mod binning;
pub mod discrete;
pub mod geometry;
pub mod lsq;
pub mod mask;
pub mod merge;
pub mod metrics;
pub mod refine;
pub mod stitch;
pub mod synth;

pub use binning::{CameraDistribution, CameraHypothesis, PoseBins};
pub use discrete::{Correspondence, DiscreteProblem, Match, MatchConfig, PlaneDetection, Selection};
pub use geometry::{CameraPose, Intrinsics, Plane};
pub use mask::MaskRle;
pub use merge::{MergedPlane, Reconstruction};
pub use refine::{KeypointMatchSet, KeypointPair, RefineConfig, RefineResult};
