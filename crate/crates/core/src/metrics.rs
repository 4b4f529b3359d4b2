//! Evaluation: plane detection AP, pair association accuracy (IPAA) and
//! relative camera error statistics.

use alloc::vec::Vec;

use thiserror::Error;

use crate::geometry::{geodesic_distance, CameraPose, Plane};
use crate::mask::MaskRle;

pub use crate::mask::mask_iou;

pub const MASK_IOU_THRESHOLD: f64 = 0.5;
pub const NORMAL_THRESHOLD_DEG: f64 = 30.0;
pub const OFFSET_THRESHOLD_M: f64 = 1.0;

/// Which conditions a true positive must satisfy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TPCriteria {
    pub use_mask: bool,
    pub use_normal: bool,
    pub use_offset: bool,
}

impl TPCriteria {
    pub const ALL: TPCriteria = TPCriteria { use_mask: true, use_normal: true, use_offset: true };
    pub const NO_OFFSET: TPCriteria = TPCriteria { use_mask: true, use_normal: true, use_offset: false };
    pub const NO_NORMAL: TPCriteria = TPCriteria { use_mask: true, use_normal: false, use_offset: true };

    pub fn is_valid(&self) -> bool {
        self.use_mask || self.use_normal || self.use_offset
    }
}

/// A world-frame plane with per-view masks. The score is ignored for
/// ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalPlane {
    pub plane: Plane,
    pub score: f64,
    pub masks: [Option<MaskRle>; 2],
}

/// Predictions and ground truth for one image pair.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ApSample {
    pub predictions: Vec<EvalPlane>,
    pub ground_truth: Vec<EvalPlane>,
}

/// IoU over both views at once: pixel intersections and unions are summed
/// over the views before dividing. A mask missing on one side counts as
/// empty.
pub fn two_view_iou(a: &[Option<MaskRle>; 2], b: &[Option<MaskRle>; 2]) -> f64 {
    let mut inter = 0u64;
    let mut union = 0u64;
    for v in 0..2 {
        match (&a[v], &b[v]) {
            (Some(x), Some(y)) => {
                let i = x.intersection(y).unwrap_or(0);
                inter += i;
                union += x.area() + y.area() - i;
            }
            (Some(x), None) | (None, Some(x)) => union += x.area(),
            (None, None) => {}
        }
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

pub fn normal_error_deg(a: &Plane, b: &Plane) -> f64 {
    libm::acos(a.normal().dot(&b.normal()).abs().min(1.0)).to_degrees()
}

fn passes_geometry(pred: &EvalPlane, gt: &EvalPlane, c: &TPCriteria) -> bool {
    (!c.use_normal || normal_error_deg(&pred.plane, &gt.plane) <= NORMAL_THRESHOLD_DEG)
        && (!c.use_offset || (pred.plane.offset() - gt.plane.offset()).abs() <= OFFSET_THRESHOLD_M)
}

/// Detection average precision pooled over all samples.
///
/// Predictions are visited by descending score (ties by sample, then by
/// position); each one claims the unclaimed ground-truth plane of its own
/// sample with the highest mask IoU (at least the IoU threshold when the
/// mask criterion is on). The claim is a true positive when the enabled
/// normal and offset criteria also hold. Matching on masks alone keeps the
/// assignment independent of the geometric criteria, so relaxing them
/// never lowers the AP. The precision/recall curve is integrated exactly
/// under its monotone envelope. With no ground truth at all the AP is 0.
pub fn evaluate_ap(samples: &[ApSample], criteria: &TPCriteria) -> f64 {
    let total_gt: usize = samples.iter().map(|s| s.ground_truth.len()).sum();
    if total_gt == 0 {
        return 0.0;
    }
    let mut order: Vec<(usize, usize)> =
        samples.iter().enumerate().flat_map(|(s, x)| (0..x.predictions.len()).map(move |p| (s, p))).collect();
    order.sort_by(|a, b| {
        let sa = samples[a.0].predictions[a.1].score;
        let sb = samples[b.0].predictions[b.1].score;
        sb.total_cmp(&sa).then(a.cmp(b))
    });

    let mut claimed: Vec<Vec<bool>> = samples.iter().map(|s| alloc::vec![false; s.ground_truth.len()]).collect();
    let mut tp_flags = Vec::with_capacity(order.len());
    for (s, p) in order {
        let pred = &samples[s].predictions[p];
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in samples[s].ground_truth.iter().enumerate() {
            if claimed[s][g] {
                continue;
            }
            let iou = two_view_iou(&pred.masks, &gt.masks);
            if criteria.use_mask && iou < MASK_IOU_THRESHOLD {
                continue;
            }
            if best.is_none_or(|(_, b)| iou > b) {
                best = Some((g, iou));
            }
        }
        let hit = best.is_some_and(|(g, _)| {
            claimed[s][g] = true;
            passes_geometry(pred, &samples[s].ground_truth[g], criteria)
        });
        tp_flags.push(hit);
    }
    average_precision(&tp_flags, total_gt)
}

/// All-point interpolated AP of a ranked list of true/false positives.
pub fn average_precision(tp_flags: &[bool], total_gt: usize) -> f64 {
    if total_gt == 0 {
        return 0.0;
    }
    let mut precision = Vec::with_capacity(tp_flags.len());
    let mut recall = Vec::with_capacity(tp_flags.len());
    let mut tp = 0usize;
    for (k, hit) in tp_flags.iter().enumerate() {
        if *hit {
            tp += 1;
        }
        precision.push(tp as f64 / (k + 1) as f64);
        recall.push(tp as f64 / total_gt as f64);
    }
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (p, r) in precision.iter().zip(&recall) {
        if *r > prev_recall {
            ap += (r - prev_recall) * p;
            prev_recall = *r;
        }
    }
    ap
}

/// Predicted and true matches for one image pair with `m` and `n` planes.
#[derive(Debug, Clone, PartialEq)]
pub struct PairAssociation {
    pub m: usize,
    pub n: usize,
    pub predicted: Vec<(usize, usize)>,
    pub ground_truth: Vec<(usize, usize)>,
}

impl PairAssociation {
    /// Correctly associated planes over distinct planes (a shared plane
    /// counts once). A shared plane is correct when its true pair is
    /// predicted; a unique plane is correct when it is left unmatched.
    pub fn counts(&self) -> (usize, usize) {
        let total = self.m + self.n - self.ground_truth.len();
        let mut pred1 = alloc::vec![None; self.m];
        let mut pred2 = alloc::vec![None; self.n];
        for (i, j) in &self.predicted {
            pred1[*i] = Some(*j);
            pred2[*j] = Some(*i);
        }
        let mut shared1 = alloc::vec![false; self.m];
        let mut shared2 = alloc::vec![false; self.n];
        let mut correct = 0;
        for (i, j) in &self.ground_truth {
            shared1[*i] = true;
            shared2[*j] = true;
            if pred1[*i] == Some(*j) {
                correct += 1;
            }
        }
        correct += (0..self.m).filter(|i| !shared1[*i] && pred1[*i].is_none()).count();
        correct += (0..self.n).filter(|j| !shared2[*j] && pred2[*j].is_none()).count();
        (correct, total)
    }

    pub fn accuracy(&self) -> f64 {
        let (c, t) = self.counts();
        if t == 0 {
            1.0
        } else {
            c as f64 / t as f64
        }
    }
}

/// Fraction of pairs with at least `x_percent` of their planes associated
/// correctly.
pub fn evaluate_ipaa(pairs: &[PairAssociation], x_percent: f64) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    let hits = pairs
        .iter()
        .filter(|p| {
            let (c, t) = p.counts();
            // integer-exact comparison of c/t ≥ x/100
            100.0 * c as f64 >= x_percent * t as f64
        })
        .count();
    hits as f64 / pairs.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraErrorStats {
    pub median_t: f64,
    pub mean_t: f64,
    pub frac_t_le_1m: f64,
    pub median_r: f64,
    pub mean_r: f64,
    pub frac_r_le_30deg: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("{pred} predicted poses for {gt} ground-truth poses")]
    LengthMismatch { pred: usize, gt: usize },
    #[error("no poses to evaluate")]
    Empty,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Translation error in metres and rotation error in degrees per pose.
pub fn camera_errors(pred: &CameraPose, gt: &CameraPose) -> (f64, f64) {
    let t = (pred.translation() - gt.translation()).norm();
    let r = geodesic_distance(&pred.rotation_matrix(), &gt.rotation_matrix()).to_degrees();
    (t, r)
}

pub fn evaluate_camera(pred: &[CameraPose], gt: &[CameraPose]) -> Result<CameraErrorStats, MetricsError> {
    if pred.len() != gt.len() {
        return Err(MetricsError::LengthMismatch { pred: pred.len(), gt: gt.len() });
    }
    if pred.is_empty() {
        return Err(MetricsError::Empty);
    }
    let (te, re): (Vec<f64>, Vec<f64>) = pred.iter().zip(gt).map(|(p, g)| camera_errors(p, g)).unzip();
    let n = te.len() as f64;
    let frac = |v: &[f64], thr: f64| v.iter().filter(|x| **x <= thr).count() as f64 / n;
    Ok(CameraErrorStats {
        median_t: median(&te),
        mean_t: te.iter().sum::<f64>() / n,
        frac_t_le_1m: frac(&te, OFFSET_THRESHOLD_M),
        median_r: median(&re),
        mean_r: re.iter().sum::<f64>() / n,
        frac_r_le_30deg: frac(&re, NORMAL_THRESHOLD_DEG),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;
    use nalgebra::UnitQuaternion;
    use proptest::prelude::*;

    fn mask(rows: core::ops::Range<u32>) -> MaskRle {
        MaskRle::from_row_spans(20, 20, |r| rows.contains(&r).then_some((0, 20)))
    }

    fn eval_plane(o: f64, score: f64, rows: core::ops::Range<u32>) -> EvalPlane {
        EvalPlane { plane: Plane::new(Vec3::z(), o).unwrap(), score, masks: [Some(mask(rows)), None] }
    }

    #[test]
    fn criteria_constants() {
        assert_eq!(MASK_IOU_THRESHOLD, 0.5);
        assert_eq!(NORMAL_THRESHOLD_DEG, 30.0);
        assert_eq!(OFFSET_THRESHOLD_M, 1.0);
        assert!(TPCriteria::ALL.is_valid());
        assert!(!TPCriteria { use_mask: false, use_normal: false, use_offset: false }.is_valid());
    }

    #[test]
    fn exact_prediction_and_criteria_switch() {
        let gt = eval_plane(2.0, 1.0, 0..5);
        let s = ApSample { predictions: alloc::vec![gt.clone()], ground_truth: alloc::vec![gt.clone()] };
        assert_eq!(evaluate_ap(&[s], &TPCriteria::ALL), 1.0);
        let off = ApSample { predictions: alloc::vec![eval_plane(3.5, 1.0, 0..5)], ground_truth: alloc::vec![gt] };
        assert_eq!(evaluate_ap(core::slice::from_ref(&off), &TPCriteria::ALL), 0.0);
        assert_eq!(evaluate_ap(&[off], &TPCriteria::NO_OFFSET), 1.0);
    }

    #[test]
    fn hand_computed_pr_curve() {
        let gts = alloc::vec![eval_plane(1.0, 0.0, 0..4), eval_plane(2.0, 0.0, 5..9), eval_plane(3.0, 0.0, 10..14)];
        // true positives at ranks 1 and 3
        let preds = alloc::vec![
            eval_plane(1.0, 0.9, 0..4),
            eval_plane(5.0, 0.8, 15..19),
            eval_plane(2.0, 0.7, 5..9),
            eval_plane(1.0, 0.6, 0..4),
            eval_plane(9.0, 0.5, 15..20),
        ];
        let s = ApSample { predictions: preds, ground_truth: gts };
        let ap = evaluate_ap(&[s], &TPCriteria::ALL);
        assert!((ap - 5.0 / 9.0).abs() < 1e-12, "{ap}");
    }

    #[test]
    fn ipaa_fixtures() {
        let full = PairAssociation {
            m: 2,
            n: 2,
            predicted: alloc::vec![(0, 0), (1, 1)],
            ground_truth: alloc::vec![(0, 0), (1, 1)],
        };
        // accuracies 1, 3/4, 1/2 over four distinct planes each: two shared
        // planes plus one unique plane per view. A missed match costs one
        // plane, a wrong match costs two.
        let gt = alloc::vec![(0, 0), (1, 1)];
        let three_quarters = PairAssociation { m: 3, n: 3, predicted: alloc::vec![(0, 0)], ground_truth: gt.clone() };
        let half = PairAssociation { m: 3, n: 3, predicted: alloc::vec![(0, 0), (1, 2)], ground_truth: gt };
        assert_eq!(three_quarters.counts(), (3, 4));
        assert_eq!(half.counts(), (2, 4));
        let pairs = [full.clone(), three_quarters.clone(), half];
        assert_eq!(evaluate_ipaa(&pairs, 100.0), 1.0 / 3.0);
        assert_eq!(evaluate_ipaa(&pairs, 80.0), 1.0 / 3.0);
        assert_eq!(evaluate_ipaa(&pairs, 70.0), 2.0 / 3.0);
        assert_eq!(evaluate_ipaa(core::slice::from_ref(&three_quarters), 90.0), 0.0);
        assert_eq!(evaluate_ipaa(&[three_quarters], 70.0), 1.0);
        for x in [100.0, 90.0, 80.0, 0.0] {
            assert_eq!(evaluate_ipaa(core::slice::from_ref(&full), x), 1.0);
        }
    }

    #[test]
    fn camera_statistics() {
        let a = CameraPose::identity();
        assert_eq!(
            evaluate_camera(&[a], &[a]).unwrap(),
            CameraErrorStats {
                median_t: 0.0,
                mean_t: 0.0,
                frac_t_le_1m: 1.0,
                median_r: 0.0,
                mean_r: 0.0,
                frac_r_le_30deg: 1.0
            }
        );
        let b = CameraPose::new(
            UnitQuaternion::from_axis_angle(&Vec3::z_axis(), 45f64.to_radians()),
            Vec3::new(2.0, 0.0, 0.0),
        );
        let s = evaluate_camera(&[b], &[a]).unwrap();
        assert_eq!((s.median_t, s.mean_t, s.frac_t_le_1m), (2.0, 2.0, 0.0));
        assert!((s.median_r - 45.0).abs() < 1e-9 && s.frac_r_le_30deg == 0.0);
        let p = [
            CameraPose::new(UnitQuaternion::identity(), Vec3::new(0.5, 0.0, 0.0)),
            CameraPose::new(UnitQuaternion::identity(), Vec3::new(0.0, 1.5, 0.0)),
        ];
        let s = evaluate_camera(&p, &[a, a]).unwrap();
        assert_eq!((s.median_t, s.mean_t, s.frac_t_le_1m), (1.0, 1.0, 0.5));
        assert_eq!(evaluate_camera(&p, &[a]), Err(MetricsError::LengthMismatch { pred: 2, gt: 1 }));
    }

    fn arb_sample() -> impl Strategy<Value = ApSample> {
        let plane =
            (0u32..15, 1u32..6, 0.0..3.0f64, -0.5..0.5f64, 0.0..1.0f64).prop_map(|(r, h, o, tilt, s)| EvalPlane {
                plane: Plane::new(Vec3::new(tilt, 0.0, 1.0), o).unwrap(),
                score: s,
                masks: [Some(mask(r..r + h)), None],
            });
        (proptest::collection::vec(plane.clone(), 0..6), proptest::collection::vec(plane, 1..5))
            .prop_map(|(predictions, ground_truth)| ApSample { predictions, ground_truth })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]
        #[test]
        fn ap_properties(samples in proptest::collection::vec(arb_sample(), 1..4)) {
            let all = evaluate_ap(&samples, &TPCriteria::ALL);
            prop_assert!((0.0..=1.0).contains(&all));
            prop_assert!(all <= evaluate_ap(&samples, &TPCriteria::NO_OFFSET) + 1e-12);
            prop_assert!(all <= evaluate_ap(&samples, &TPCriteria::NO_NORMAL) + 1e-12);
            let mut warped = samples.clone();
            for s in &mut warped {
                for p in &mut s.predictions {
                    p.score = libm::exp(3.0 * p.score) - 7.0;
                }
            }
            prop_assert_eq!(evaluate_ap(&warped, &TPCriteria::ALL), all);
        }

        #[test]
        fn ipaa_non_increasing(accs in proptest::collection::vec((0usize..5, 0usize..5), 1..10)) {
            let pairs: Vec<PairAssociation> = accs
                .iter()
                .map(|(shared, wrong)| {
                    let k = shared + wrong;
                    PairAssociation {
                        m: k + 1,
                        n: k + 1,
                        predicted: (0..k).map(|i| (i, if i < *shared { i } else { i + 1 })).collect(),
                        ground_truth: (0..k).map(|i| (i, i)).collect(),
                    }
                })
                .collect();
            let mut prev = 1.0;
            for x in [0.0, 50.0, 70.0, 80.0, 90.0, 100.0] {
                let v = evaluate_ipaa(&pairs, x);
                prop_assert!(v <= prev);
                prev = v;
            }
        }
    }
}
