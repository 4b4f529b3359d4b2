//! Levenberg-Marquardt solver for small dense nonlinear least squares.
//!
//! The damping parameter acts as an inverse trust-region radius: a step is
//! accepted only when it lowers the cost, so the accepted cost sequence is
//! non-increasing.

use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

pub trait LeastSquaresProblem {
    /// Residual vector at `x`, or `None` when `x` is outside the domain
    /// where the residuals are defined. Such trial steps are rejected.
    fn residuals(&self, x: &DVector<f64>) -> Option<DVector<f64>>;

    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub ftol: f64,
    pub xtol: f64,
    pub gtol: f64,
    pub max_iterations: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { ftol: 1e-8, xtol: 1e-8, gtol: 1e-8, max_iterations: 200 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Gradient,
    StepSize,
    CostReduction,
    MaxIterations,
    /// Damping grew without finding an acceptable step.
    Stalled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub x: DVector<f64>,
    /// `½‖r‖²` at the start and at the returned point.
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
    pub termination: Termination,
    /// Costs of the accepted iterates, starting with the initial cost.
    pub cost_history: Vec<f64>,
}

impl SolveReport {
    pub fn converged(&self) -> bool {
        matches!(self.termination, Termination::Gradient | Termination::StepSize | Termination::CostReduction)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum SolveError {
    #[error("cost became non-finite at iteration {iteration}")]
    NumericalFailure { iteration: usize },
    #[error("residuals are undefined at the initial point")]
    InvalidStart,
    #[error("problem has no residuals")]
    NoResiduals,
}

fn half_norm_sq(r: &DVector<f64>) -> f64 {
    0.5 * r.norm_squared()
}

pub fn solve<P: LeastSquaresProblem>(
    problem: &P,
    init: DVector<f64>,
    cfg: &SolverConfig,
) -> Result<SolveReport, SolveError> {
    let mut x = init;
    let mut r = problem.residuals(&x).ok_or(SolveError::InvalidStart)?;
    if r.is_empty() {
        return Err(SolveError::NoResiduals);
    }
    let mut cost = half_norm_sq(&r);
    if !cost.is_finite() {
        return Err(SolveError::NumericalFailure { iteration: 0 });
    }
    let initial_cost = cost;
    let mut history = alloc::vec![cost];

    let mut jac = problem.jacobian(&x);
    let mut grad = jac.tr_mul(&r);
    let mut normal = jac.tr_mul(&jac);
    let mut scale = DVector::from_iterator(x.len(), normal.diagonal().iter().copied());

    let finish = |x, cost, iterations, termination, history| SolveReport {
        x,
        initial_cost,
        final_cost: cost,
        iterations,
        termination,
        cost_history: history,
    };

    if grad.amax() <= cfg.gtol {
        return Ok(finish(x, cost, 0, Termination::Gradient, history));
    }

    let max_diag = scale.amax().max(f64::MIN_POSITIVE);
    let floor = 1e-12 * max_diag;
    let mut mu = 1e-3;
    let mut nu = 2.0;

    for iteration in 1..=cfg.max_iterations {
        for (s, d) in scale.iter_mut().zip(normal.diagonal().iter()) {
            *s = d.max(floor);
        }
        let mut damped = normal.clone();
        for k in 0..x.len() {
            damped[(k, k)] += mu * scale[k];
        }
        let Some(chol) = damped.cholesky() else {
            mu *= nu;
            nu *= 2.0;
            continue;
        };
        let step = chol.solve(&(-&grad));
        if step.norm() <= cfg.xtol * (x.norm() + cfg.xtol) {
            return Ok(finish(x, cost, iteration, Termination::StepSize, history));
        }

        let candidate = &x + &step;
        let trial = problem.residuals(&candidate).map(|r| (half_norm_sq(&r), r));
        let accepted = match trial {
            Some((c, _)) if c.is_nan() => return Err(SolveError::NumericalFailure { iteration }),
            Some((c, r_new)) if c <= cost => {
                let scaled_step = step.component_mul(&scale) * mu;
                let predicted = 0.5 * step.dot(&(scaled_step - &grad));
                let rho = if predicted > 0.0 { (cost - c) / predicted } else { 0.0 };
                Some((c, r_new, rho))
            }
            _ => None,
        };

        match accepted {
            Some((c, r_new, rho)) if rho > 0.0 || c < cost => {
                let reduction = cost - c;
                let previous = cost;
                x = candidate;
                r = r_new;
                cost = c;
                history.push(cost);
                jac = problem.jacobian(&x);
                grad = jac.tr_mul(&r);
                normal = jac.tr_mul(&jac);
                mu *= (1.0f64 / 3.0).max(1.0 - libm::pow(2.0 * rho.min(1.0) - 1.0, 3.0));
                nu = 2.0;
                if reduction <= cfg.ftol * previous {
                    return Ok(finish(x, cost, iteration, Termination::CostReduction, history));
                }
                if grad.amax() <= cfg.gtol {
                    return Ok(finish(x, cost, iteration, Termination::Gradient, history));
                }
            }
            _ => {
                mu *= nu;
                nu *= 2.0;
                if mu > 1e32 {
                    return Ok(finish(x, cost, iteration, Termination::Stalled, history));
                }
            }
        }
    }
    Ok(finish(x, cost, cfg.max_iterations, Termination::MaxIterations, history))
}

/// Central finite-difference Jacobian.
pub fn numerical_jacobian<P: LeastSquaresProblem>(problem: &P, x: &DVector<f64>, step: f64) -> Option<DMatrix<f64>> {
    let r0 = problem.residuals(x)?;
    let mut jac = DMatrix::zeros(r0.len(), x.len());
    for k in 0..x.len() {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[k] += step;
        xm[k] -= step;
        let col = (problem.residuals(&xp)? - problem.residuals(&xm)?) / (2.0 * step);
        jac.set_column(k, &col);
    }
    Some(jac)
}
