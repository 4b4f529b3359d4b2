//! Joint search over camera hypotheses and plane correspondences.
//!
//! For every hypothesis the second view's planes are carried into the world
//! frame, a cost matrix against the first view is built, the assignment is
//! solved and thresholded, and the hypothesis is scored. The lowest score
//! wins, ties going to the lowest hypothesis index.

use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::DMatrix;

use crate::assignment::hungarian;
use crate::binning::{expand_hypotheses, CameraDistribution, CameraHypothesis};
use crate::geometry::{cam2world, CameraPose, Plane};
use crate::mask::MaskRle;

/// Probabilities are floored here before taking logarithms.
pub const PROBABILITY_FLOOR: f64 = 1e-12;

/// One detected plane in a view, in that view's camera frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaneDetection {
    pub id: String,
    pub plane: Plane,
    pub embedding: Vec<f64>,
    pub score: f64,
    pub mask: Option<MaskRle>,
}

/// Weights of the matching cost and of the discrete objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchConfig {
    pub lambda_e: f64,
    pub lambda_n: f64,
    pub lambda_o: f64,
    pub o_clamp: f64,
    pub match_threshold: f64,
    pub lambda_h: f64,
    pub lambda_t: f64,
    pub lambda_r: f64,
    pub lambda_n_matches: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig {
            lambda_e: 0.47,
            lambda_n: 0.25,
            lambda_o: 0.28,
            o_clamp: 4.0,
            match_threshold: 0.7,
            lambda_h: 0.432,
            lambda_t: 0.166,
            lambda_r: 0.092,
            lambda_n_matches: 0.311,
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<(), &'static str> {
        let weights = [
            self.lambda_e,
            self.lambda_n,
            self.lambda_o,
            self.match_threshold,
            self.lambda_h,
            self.lambda_t,
            self.lambda_r,
            self.lambda_n_matches,
        ];
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err("matching weights must be finite and non-negative");
        }
        if !(self.o_clamp > 0.0 && self.o_clamp.is_finite()) {
            return Err("o_clamp must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match {
    pub i: usize,
    pub j: usize,
    pub cost: f64,
}

/// Sparse form of the binary correspondence matrix between `m` view-1
/// planes and `n` view-2 planes. Matches are sorted by `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Correspondence {
    pub m: usize,
    pub n: usize,
    pub matches: Vec<Match>,
}

impl Correspondence {
    pub fn empty(m: usize, n: usize) -> Self {
        Correspondence { m, n, matches: Vec::new() }
    }

    pub fn partner_of_first(&self, i: usize) -> Option<usize> {
        self.matches.iter().find(|x| x.i == i).map(|x| x.j)
    }

    pub fn partner_of_second(&self, j: usize) -> Option<usize> {
        self.matches.iter().find(|x| x.j == j).map(|x| x.i)
    }

    pub fn total_cost(&self) -> f64 {
        self.matches.iter().map(|x| x.cost).sum()
    }
}

/// Per-pair embedding distances `‖e_i − e'_j‖`.
pub fn embedding_distances(dets1: &[PlaneDetection], dets2: &[PlaneDetection]) -> DMatrix<f64> {
    DMatrix::from_fn(dets1.len(), dets2.len(), |i, j| {
        let (a, b) = (&dets1[i].embedding, &dets2[j].embedding);
        let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        libm::sqrt(sq)
    })
}

/// Weighted plane-to-plane matching cost for world-frame planes.
///
/// `None` marks a plane that cannot take part in matching; its row or column
/// is `+∞`.
pub fn cost_matrix(
    planes1: &[Option<Plane>],
    planes2: &[Option<Plane>],
    embedding_dist: &DMatrix<f64>,
    cfg: &MatchConfig,
) -> DMatrix<f64> {
    DMatrix::from_fn(planes1.len(), planes2.len(), |i, j| match (&planes1[i], &planes2[j]) {
        (Some(a), Some(b)) => pair_cost(a, b, embedding_dist[(i, j)], cfg),
        _ => f64::INFINITY,
    })
}

pub fn pair_cost(a: &Plane, b: &Plane, embedding_dist: f64, cfg: &MatchConfig) -> f64 {
    let cos = a.normal().dot(&b.normal()).abs().min(1.0);
    let dn = libm::acos(cos) / PI;
    let doff = ((a.offset() - b.offset()).abs() / cfg.o_clamp).min(1.0);
    cfg.lambda_e * embedding_dist + cfg.lambda_n * dn + cfg.lambda_o * doff
}

/// Optimal assignment with every pair whose cost exceeds the threshold
/// discarded afterwards.
pub fn match_with_threshold(cost: &DMatrix<f64>, cfg: &MatchConfig) -> Correspondence {
    let (m, n) = cost.shape();
    let matches = hungarian(cost)
        .into_iter()
        .map(|(i, j)| Match { i, j, cost: cost[(i, j)] })
        .filter(|x| x.cost <= cfg.match_threshold)
        .collect();
    Correspondence { m, n, matches }
}

/// `λ_h·Σ cost − λ_t·ln p_t − λ_R·ln p_R − λ_N·|matches|`.
pub fn discrete_objective(corr: &Correspondence, p_t: f64, p_r: f64, cfg: &MatchConfig) -> f64 {
    let log = |p: f64| libm::log(p.max(PROBABILITY_FLOOR));
    cfg.lambda_h * corr.total_cost()
        - cfg.lambda_t * log(p_t)
        - cfg.lambda_r * log(p_r)
        - cfg.lambda_n_matches * corr.matches.len() as f64
}

/// A plane that could not take part in matching.
#[derive(Debug, Clone, PartialEq)]
pub struct ExcludedPlane {
    pub view: usize,
    pub index: usize,
    pub id: String,
}

/// Result of evaluating one hypothesis.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub hypothesis: CameraHypothesis,
    pub correspondence: Correspondence,
    pub objective_value: f64,
    /// View-2 planes whose world-frame offset degenerates under this
    /// hypothesis.
    pub excluded: Vec<usize>,
}

impl Candidate {
    /// Strict total preference: lower objective, then lower index.
    pub fn better_than(&self, other: &Candidate) -> bool {
        match self.objective_value.total_cmp(&other.objective_value) {
            core::cmp::Ordering::Less => true,
            core::cmp::Ordering::Equal => self.hypothesis.index() < other.hypothesis.index(),
            core::cmp::Ordering::Greater => false,
        }
    }
}

/// Winning hypothesis together with the planes that were left out of
/// matching for it.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub hypothesis: CameraHypothesis,
    pub correspondence: Correspondence,
    pub objective_value: f64,
    pub excluded: Vec<ExcludedPlane>,
}

impl Selection {
    pub fn camera(&self) -> CameraPose {
        self.hypothesis.pose()
    }
}

/// Precomputed, hypothesis-independent parts of the discrete search. Each
/// hypothesis can be evaluated independently, which lets callers
/// parallelise the search without affecting the result.
pub struct DiscreteProblem<'a> {
    dets1: &'a [PlaneDetection],
    dets2: &'a [PlaneDetection],
    world1: Vec<Option<Plane>>,
    embedding_dist: DMatrix<f64>,
    hypotheses: Vec<CameraHypothesis>,
    cfg: MatchConfig,
}

impl<'a> DiscreteProblem<'a> {
    pub fn new(
        dets1: &'a [PlaneDetection],
        dets2: &'a [PlaneDetection],
        dist: &CameraDistribution,
        cfg: &MatchConfig,
    ) -> Self {
        let world1 = dets1.iter().map(|d| cam2world(&d.plane, &CameraPose::identity()).ok()).collect();
        DiscreteProblem {
            dets1,
            dets2,
            world1,
            embedding_dist: embedding_distances(dets1, dets2),
            hypotheses: expand_hypotheses(dist),
            cfg: *cfg,
        }
    }

    pub fn num_hypotheses(&self) -> usize {
        self.hypotheses.len()
    }

    pub fn hypotheses(&self) -> &[CameraHypothesis] {
        &self.hypotheses
    }

    /// View-2 planes carried into the world frame under hypothesis `k`.
    pub fn world_planes2(&self, k: usize) -> Vec<Option<Plane>> {
        let pose = self.hypotheses[k].pose();
        self.dets2.iter().map(|d| cam2world(&d.plane, &pose).ok()).collect()
    }

    pub fn cost_matrix(&self, k: usize) -> DMatrix<f64> {
        cost_matrix(&self.world1, &self.world_planes2(k), &self.embedding_dist, &self.cfg)
    }

    pub fn evaluate(&self, k: usize) -> Candidate {
        let hypothesis = self.hypotheses[k];
        let world2 = self.world_planes2(k);
        let cost = cost_matrix(&self.world1, &world2, &self.embedding_dist, &self.cfg);
        let correspondence = match_with_threshold(&cost, &self.cfg);
        let objective_value = discrete_objective(&correspondence, hypothesis.p_t, hypothesis.p_r, &self.cfg);
        let excluded = world2.iter().enumerate().filter(|(_, p)| p.is_none()).map(|(j, _)| j).collect();
        Candidate { hypothesis, correspondence, objective_value, excluded }
    }

    /// Reduces evaluated candidates to the winning selection. The reduction
    /// is order independent.
    pub fn select(&self, candidates: impl IntoIterator<Item = Candidate>) -> Option<Selection> {
        let best = candidates.into_iter().reduce(|a, b| if b.better_than(&a) { b } else { a })?;
        let mut excluded: Vec<ExcludedPlane> = self
            .world1
            .iter()
            .enumerate()
            .filter(|(_, p)| p.is_none())
            .map(|(i, _)| ExcludedPlane { view: 0, index: i, id: self.dets1[i].id.clone() })
            .collect();
        excluded.extend(best.excluded.iter().map(|j| ExcludedPlane {
            view: 1,
            index: *j,
            id: self.dets2[*j].id.clone(),
        }));
        Some(Selection {
            hypothesis: best.hypothesis,
            correspondence: best.correspondence,
            objective_value: best.objective_value,
            excluded,
        })
    }
}

/// Sequential exhaustive search over all hypotheses.
pub fn select_camera_and_correspondence(
    dets1: &[PlaneDetection],
    dets2: &[PlaneDetection],
    dist: &CameraDistribution,
    cfg: &MatchConfig,
) -> Selection {
    let problem = DiscreteProblem::new(dets1, dets2, dist, cfg);
    let candidates = (0..problem.num_hypotheses()).map(|k| problem.evaluate(k));
    problem.select(candidates).expect("at least one hypothesis")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assignment::oracle::all_assignments;
    use crate::binning::{PoseBins, NUM_BINS};
    use crate::geometry::Vec3;
    use nalgebra::UnitQuaternion;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn plane(n: [f64; 3], o: f64) -> Plane {
        Plane::new(Vec3::from(n), o).unwrap()
    }

    fn det(id: &str, p: Plane, e: Vec<f64>) -> PlaneDetection {
        PlaneDetection { id: id.into(), plane: p, embedding: e, score: 1.0, mask: None }
    }

    fn bins() -> PoseBins {
        let t = (0..NUM_BINS).map(|i| Vec3::new(i as f64 * 0.2, 0.0, 0.0)).collect();
        let r = (0..NUM_BINS).map(|i| UnitQuaternion::from_axis_angle(&Vec3::y_axis(), i as f64 * 0.05)).collect();
        PoseBins::new(t, r).unwrap()
    }

    #[test]
    fn cost_matrix_hand_values() {
        let cfg = MatchConfig::default();
        let a = plane([0.0, 0.0, 1.0], 2.0);
        let d = DMatrix::from_element(1, 1, 0.0);
        assert_eq!(cost_matrix(&[Some(a)], &[Some(a)], &d, &cfg)[(0, 0)], 0.0);

        let b = plane([1.0, 0.0, 0.0], 4.0);
        let d = DMatrix::from_element(1, 1, 1.0);
        let c = cost_matrix(&[Some(a)], &[Some(b)], &d, &cfg)[(0, 0)];
        assert!((c - 0.735).abs() < 1e-12, "{c}");

        let far = plane([0.0, 0.0, 1.0], 12.0);
        let d = DMatrix::from_element(1, 1, 0.0);
        let c = cost_matrix(&[Some(a)], &[Some(far)], &d, &cfg)[(0, 0)];
        assert!((c - 0.28).abs() < 1e-15);
    }

    #[test]
    fn thresholding() {
        let cfg = MatchConfig::default();
        let c = DMatrix::from_row_slice(2, 2, &[0.1, 0.9, 0.9, 0.1]);
        let m = match_with_threshold(&c, &cfg);
        assert_eq!(m.matches.iter().map(|x| (x.i, x.j)).collect::<Vec<_>>(), [(0, 0), (1, 1)]);
        assert!(match_with_threshold(&DMatrix::from_element(1, 1, 0.8), &cfg).matches.is_empty());
    }

    #[test]
    fn thresholded_matches_equal_brute_force_then_filter() {
        let cfg = MatchConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut checked = 0;
        while checked < 20 {
            let c = DMatrix::from_fn(5, 5, |_, _| rng.random_range(0.0..2.0));
            let best = all_assignments(5, 5)
                .into_iter()
                .min_by(|a, b| {
                    let ca: f64 = a.iter().map(|(i, j)| c[(*i, *j)]).sum();
                    let cb: f64 = b.iter().map(|(i, j)| c[(*i, *j)]).sum();
                    ca.total_cmp(&cb)
                })
                .unwrap();
            let want: Vec<_> = best.into_iter().filter(|(i, j)| c[(*i, *j)] <= 0.7).collect();
            if want.len() != 2 {
                continue;
            }
            let got: Vec<_> = match_with_threshold(&c, &cfg).matches.iter().map(|x| (x.i, x.j)).collect();
            assert_eq!(got, want);
            checked += 1;
        }
    }

    #[test]
    fn objective_hand_values() {
        let cfg = MatchConfig::default();
        assert_eq!(discrete_objective(&Correspondence::empty(0, 0), 1.0, 1.0, &cfg), 0.0);
        let one = Correspondence { m: 1, n: 1, matches: alloc::vec![Match { i: 0, j: 0, cost: 0.2 }] };
        let ln32 = libm::log(32.0);
        let hand = 0.432 * 0.2 + 0.166 * ln32 + 0.092 * ln32 - 0.311;
        let got = discrete_objective(&one, 1.0 / 32.0, 1.0 / 32.0, &cfg);
        assert!((got - hand).abs() < 1e-12);
        assert!((got - 0.66956).abs() < 1e-5);

        let mut two = one.clone();
        two.matches.push(Match { i: 1, j: 1, cost: 0.0 });
        let diff = discrete_objective(&one, 0.5, 0.5, &cfg) - discrete_objective(&two, 0.5, 0.5, &cfg);
        assert!((diff - cfg.lambda_n_matches).abs() < 1e-12);
    }

    #[test]
    fn probabilities_are_floored() {
        let cfg = MatchConfig::default();
        let v = discrete_objective(&Correspondence::empty(0, 0), 0.0, 1.0, &cfg);
        assert!(v.is_finite());
        assert!((v - cfg.lambda_t * -libm::log(PROBABILITY_FLOOR)).abs() < 1e-9);
    }

    #[test]
    fn empty_views_follow_probabilities() {
        let cfg = MatchConfig::default();
        let uniform = CameraDistribution::uniform(bins());
        assert_eq!(select_camera_and_correspondence(&[], &[], &uniform, &cfg).hypothesis.index(), 0);

        let mut pt = alloc::vec![0.1 / 31.0; NUM_BINS];
        let mut pr = alloc::vec![0.1 / 31.0; NUM_BINS];
        pt[4] = 0.9;
        pr[20] = 0.9;
        let peaked = CameraDistribution::new(bins(), pt, pr).unwrap();
        let s = select_camera_and_correspondence(&[], &[], &peaked, &cfg);
        assert_eq!((s.hypothesis.index_t, s.hypothesis.index_r), (4, 20));
    }

    #[test]
    fn selection_is_global_minimum() {
        let cfg = MatchConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut unit = |d: usize| {
            let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let n = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>());
            v.into_iter().map(|x| x / n).collect::<Vec<_>>()
        };
        let e: Vec<_> = (0..4).map(|_| unit(8)).collect();
        let dets1 = alloc::vec![
            det("a", plane([0.0, -1.0, 0.2], 1.5), e[0].clone()),
            det("b", plane([1.0, 0.0, 0.3], 2.5), e[1].clone()),
            det("c", plane([0.0, 0.0, 1.0], 4.0), e[2].clone()),
        ];
        let dets2 = alloc::vec![
            det("x", plane([0.0, -1.0, 0.25], 1.4), e[0].clone()),
            det("y", plane([0.9, 0.1, 0.3], 2.0), e[3].clone()),
        ];
        let dist = CameraDistribution::uniform(bins());
        let problem = DiscreteProblem::new(&dets1, &dets2, &dist, &cfg);
        let sel = select_camera_and_correspondence(&dets1, &dets2, &dist, &cfg);
        for k in 0..problem.num_hypotheses() {
            assert!(sel.objective_value <= problem.evaluate(k).objective_value);
        }
        let recomputed = discrete_objective(&sel.correspondence, sel.hypothesis.p_t, sel.hypothesis.p_r, &cfg);
        assert!((recomputed - sel.objective_value).abs() < 1e-9);
        // reversed evaluation order reduces to the same selection
        let rev = problem.select((0..problem.num_hypotheses()).rev().map(|k| problem.evaluate(k))).unwrap();
        assert_eq!(rev, sel);
    }

    #[test]
    fn zero_embedding_distance_leaves_geometric_terms() {
        let cfg = MatchConfig::default();
        let a = plane([0.0, 1.0, 0.0], 1.0);
        let b = plane([0.0, 1.0, 1.0], 3.0);
        let d = DMatrix::from_element(1, 1, 0.0);
        let c = cost_matrix(&[Some(a)], &[Some(b)], &d, &cfg)[(0, 0)];
        let dn = libm::acos(a.normal().dot(&b.normal()).abs()) / PI;
        let doff = (b.offset() - a.offset()).abs() / cfg.o_clamp;
        assert!((c - (cfg.lambda_n * dn + cfg.lambda_o * doff)).abs() < 1e-12);
    }

    #[test]
    fn degenerate_planes_are_excluded() {
        let cfg = MatchConfig::default();
        let e = alloc::vec![1.0, 0.0];
        let dets1 = alloc::vec![det("a", plane([0.0, 0.0, 1.0], 0.0), e.clone())];
        let dets2 = alloc::vec![det("b", plane([0.0, 0.0, 1.0], 2.0), e)];
        let dist = CameraDistribution::uniform(bins());
        let sel = select_camera_and_correspondence(&dets1, &dets2, &dist, &cfg);
        assert!(sel.correspondence.matches.is_empty());
        assert_eq!(sel.excluded, [ExcludedPlane { view: 0, index: 0, id: "a".into() }]);
    }
}
