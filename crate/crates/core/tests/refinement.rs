mod common;

use common::{camera_error, clean_pair, keypoint_misalignment};
use planestitch_core::discrete::{Correspondence, DiscreteProblem};
use planestitch_core::refine::{refine, refine_from, KeypointMatchSet, RefineConfig, RefineInputs};
use planestitch_core::synth::{generate, perturb_pose, SynthConfig};
use planestitch_core::MatchConfig;

#[test]
fn perturbed_camera_is_recovered() {
    for seed in 0..10 {
        let pair = clean_pair(seed);
        let init = perturb_pose(&pair.gt_camera, 0.1, 5.0, seed);
        let inputs = RefineInputs {
            dets1: &pair.dets1,
            dets2: &pair.dets2,
            correspondence: &pair.gt_correspondence,
            keypoints: &pair.keypoints,
            intrinsics: [pair.intrinsics; 2],
        };
        let r = refine_from(&inputs, &init, &init.rotation(), &RefineConfig::default()).unwrap();
        let (t, deg) = camera_error(&r.camera, &pair.gt_camera);
        assert!(t < 1e-3 && deg < 0.1, "seed {seed}: {t} m, {deg} deg");
        assert!(r.final_cost <= r.initial_cost);
    }
}

#[test]
fn refinement_improves_on_the_bin_pose() {
    for seed in 0..5 {
        let pair = clean_pair(seed);
        let problem = DiscreteProblem::new(&pair.dets1, &pair.dets2, &pair.distribution, &MatchConfig::default());
        let sel = problem.select((0..problem.num_hypotheses()).map(|k| problem.evaluate(k))).unwrap();
        let r = refine(&sel, &pair.dets1, &pair.dets2, &pair.keypoints, [pair.intrinsics; 2], &RefineConfig::default())
            .unwrap();
        let before = camera_error(&sel.camera(), &pair.gt_camera);
        let after = camera_error(&r.camera, &pair.gt_camera);
        assert!(after.0 < before.0 && after.1 < before.1, "seed {seed}: {before:?} -> {after:?}");

        // matched textures line up better after refinement
        let detected1: Vec<_> = pair.dets1.iter().map(|d| d.plane).collect();
        let detected2: Vec<_> = pair.dets2.iter().map(|d| d.plane).collect();
        let k = &pair.intrinsics;
        let baseline = keypoint_misalignment(&pair.keypoints, &detected1, &detected2, &sel.camera(), k);
        let refined = keypoint_misalignment(&pair.keypoints, &r.planes1, &r.planes2, &r.camera, k);
        assert!(refined < baseline, "seed {seed}: {baseline} -> {refined}");
    }
}

#[test]
fn order_of_pairs_and_keypoints_does_not_matter() {
    let cfg = SynthConfig { sigma_normal_deg: 3.0, sigma_offset: 0.05, sigma_pixel: 1.0, ..SynthConfig::noise_free(4) };
    let pair = generate(&cfg, common::bins()).unwrap();
    let init = perturb_pose(&pair.gt_camera, 0.2, 4.0, 9);
    let run = |corr: &Correspondence, kps: &KeypointMatchSet| {
        let inputs = RefineInputs {
            dets1: &pair.dets1,
            dets2: &pair.dets2,
            correspondence: corr,
            keypoints: kps,
            intrinsics: [pair.intrinsics; 2],
        };
        refine_from(&inputs, &init, &init.rotation(), &RefineConfig::default()).unwrap()
    };
    let reference = run(&pair.gt_correspondence, &pair.keypoints);

    let mut corr = pair.gt_correspondence.clone();
    corr.matches.reverse();
    let mut kps = pair.keypoints.clone();
    kps.pairs.reverse();
    for p in &mut kps.pairs {
        p.points.reverse();
        p.points.rotate_left(3);
    }
    let shuffled = run(&corr, &kps);
    assert_eq!(reference, shuffled);
    let bits = |r: &planestitch_core::RefineResult| {
        let t = r.camera.translation();
        let q = r.camera.rotation();
        [t.x, t.y, t.z, q.w, q.i, q.j, q.k].map(f64::to_bits)
    };
    assert_eq!(bits(&reference), bits(&shuffled));
}

#[test]
fn cost_never_increases_on_noisy_pairs() {
    for seed in 0..20 {
        let cfg = SynthConfig {
            sigma_normal_deg: 5.0,
            sigma_offset: 0.1,
            sigma_embedding: 0.1,
            sigma_pixel: 1.0,
            ..SynthConfig::noise_free(seed)
        };
        let pair = generate(&cfg, common::bins()).unwrap();
        let problem = DiscreteProblem::new(&pair.dets1, &pair.dets2, &pair.distribution, &MatchConfig::default());
        let sel = problem.select((0..problem.num_hypotheses()).map(|k| problem.evaluate(k))).unwrap();
        let r = refine(&sel, &pair.dets1, &pair.dets2, &pair.keypoints, [pair.intrinsics; 2], &RefineConfig::default())
            .unwrap();
        assert!(r.final_cost <= r.initial_cost, "seed {seed}");
    }
}
