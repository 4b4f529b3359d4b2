mod common;

use common::{camera_error, clean_pair};
use planestitch_core::binning::CameraDistribution;
use planestitch_core::refine::KeypointMatchSet;
use planestitch_core::stitch::{stitch, PairInputs, StitchConfig};
use planestitch_core::Intrinsics;

fn inputs(pair: &planestitch_core::synth::SynthPair) -> PairInputs<'_> {
    PairInputs {
        dets1: &pair.dets1,
        dets2: &pair.dets2,
        distribution: &pair.distribution,
        keypoints: &pair.keypoints,
        intrinsics: [pair.intrinsics; 2],
    }
}

#[test]
fn noise_free_pairs_are_stitched_exactly() {
    for seed in 0..5 {
        let pair = clean_pair(seed);
        let out = stitch(&inputs(&pair), &StitchConfig::default());
        let got: Vec<_> = out.selection.correspondence.matches.iter().map(|m| (m.i, m.j)).collect();
        let want: Vec<_> = pair.gt_correspondence.matches.iter().map(|m| (m.i, m.j)).collect();
        assert_eq!(got, want, "seed {seed}");
        let (t, r) = camera_error(&out.reconstruction.camera, &pair.gt_camera);
        assert!(t <= 0.05 && r <= 1.0, "seed {seed}: {t} m {r} deg");
        assert_eq!(out.reconstruction.merged.len(), pair.gt_correspondence.matches.len());
    }
}

#[test]
fn skipping_refinement_keeps_the_bin_pose() {
    let pair = clean_pair(2);
    let cfg = StitchConfig { skip_continuous: true, ..StitchConfig::default() };
    let out = stitch(&inputs(&pair), &cfg);
    assert!(out.refinement.is_none());
    assert_eq!(out.reconstruction.camera, out.selection.camera());
    assert_eq!(out.reconstruction.diagnostics.final_cost, None);
}

#[test]
fn empty_views_give_the_most_probable_camera() {
    let pair = clean_pair(0);
    let dist: &CameraDistribution = &pair.distribution;
    let kps = KeypointMatchSet::default();
    let inputs = PairInputs {
        dets1: &[],
        dets2: &[],
        distribution: dist,
        keypoints: &kps,
        intrinsics: [Intrinsics::default(); 2],
    };
    let out = stitch(&inputs, &StitchConfig::default());
    assert_eq!(out.reconstruction.planes().count(), 0);
    assert_eq!(out.reconstruction.camera, dist.most_probable().pose());
}
