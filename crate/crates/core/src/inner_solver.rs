//! Minimization of the frozen-coefficient energy by damped Newton descent.
//!
//! Each step solves `H(u, ε) d = -J'(u)` with the regularized Hessian,
//! falls back to steepest descent if `d` is not a descent direction, and
//! backtracks on the true energy. Convergence is declared on the max-norm
//! of the residual, which is exactly the discrete weak-form defect.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assembly::FrozenProblem;
use crate::geometry::DiscreteField;
use crate::linalg::{dot, norm_inf, LinalgError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InnerOptions {
    /// Stop when `max_i |J'(u)·φᵢ| ≤ grad_tol`.
    pub grad_tol: f64,
    pub max_iters: usize,
    /// Curvature regularization; only the Hessian sees it.
    pub eps_reg: f64,
    /// Step shrink factor in `(0, 1)`.
    pub backtrack: f64,
    /// Armijo constant.
    pub sufficient_decrease: f64,
    pub max_backtracks: usize,
}

impl Default for InnerOptions {
    fn default() -> Self {
        InnerOptions {
            grad_tol: 1e-10,
            max_iters: 200,
            eps_reg: 1e-8,
            backtrack: 0.5,
            sufficient_decrease: 1e-4,
            max_backtracks: 80,
        }
    }
}

impl InnerOptions {
    pub fn validate(&self) -> Result<(), InnerError> {
        let bad = |m: &str| Err(InnerError::InvalidOptions(m.to_string()));
        if !(self.grad_tol > 0.0) {
            return bad("grad_tol must be positive");
        }
        if self.max_iters == 0 || self.max_backtracks == 0 {
            return bad("max_iters and max_backtracks must be positive");
        }
        if !(self.eps_reg > 0.0) {
            return bad("eps_reg must be positive");
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return bad("backtrack factor must lie in (0, 1)");
        }
        if !(self.sufficient_decrease > 0.0 && self.sufficient_decrease < 1.0) {
            return bad("sufficient_decrease must lie in (0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum StepKind {
    Start,
    Newton,
    Gradient,
}

/// One accepted iterate.
#[derive(Debug, Clone, Serialize)]
pub struct InnerStep {
    pub energy: f64,
    pub residual_max: f64,
    /// Step length that produced this iterate (0 for the start).
    pub step_length: f64,
    pub kind: StepKind,
}

#[derive(Debug, Clone, Serialize)]
pub struct InnerReport {
    /// Number of accepted descent steps.
    pub iterations: usize,
    pub history: Vec<InnerStep>,
    pub converged: bool,
}

impl InnerReport {
    pub fn final_residual(&self) -> f64 {
        self.history.last().map_or(f64::INFINITY, |s| s.residual_max)
    }
}

/// Best iterate and trace returned with a failed solve.
#[derive(Debug, Clone)]
pub struct PartialSolve {
    pub field: DiscreteField,
    pub report: InnerReport,
}

#[derive(Debug, Error)]
pub enum InnerError {
    #[error("invalid inner options: {0}")]
    InvalidOptions(String),
    #[error("initial iterate violates the Dirichlet condition")]
    InitialNotAdmissible,
    #[error("inner solver did not reach grad_tol in {} iterations (residual {:e})", .0.report.iterations, .0.report.final_residual())]
    MaxItersExceeded(Box<PartialSolve>),
    #[error("line search failed to decrease the energy at iteration {} (residual {:e})", .0.report.iterations, .0.report.final_residual())]
    Stalled(Box<PartialSolve>),
    #[error("regularized Hessian factorization failed at iteration {iteration}: {source}")]
    LinearSolveFailure {
        iteration: usize,
        #[source]
        source: LinalgError,
    },
}

/// Energies may differ by this much from rounding alone.
fn energy_noise(j: f64) -> f64 {
    1e-14 * j.abs().max(1.0)
}

struct Accepted {
    free: Vec<f64>,
    field: DiscreteField,
    energy: f64,
    residual: Vec<f64>,
    step: f64,
}

fn line_search(
    problem: &FrozenProblem<'_>,
    free: &[f64],
    energy: f64,
    residual: &[f64],
    direction: &[f64],
    opts: &InnerOptions,
) -> Option<Accepted> {
    let space = problem.space();
    let slope = dot(residual, direction);
    let r_max = norm_inf(residual);
    let mut t = 1.0;
    for _ in 0..opts.max_backtracks {
        let trial: Vec<f64> = free.iter().zip(direction).map(|(u, d)| u + t * d).collect();
        let field = DiscreteField::from_free(space, &trial);
        let j = problem.energy(&field);
        if j.is_finite() {
            if j <= energy + opts.sufficient_decrease * t * slope {
                let residual = problem.residual(&field);
                return Some(Accepted {
                    free: trial,
                    field,
                    energy: j,
                    residual,
                    step: t,
                });
            }
            // Near the minimum the Armijo decrease drops below the rounding
            // level of J; accept such steps only if the residual improves.
            if j - energy <= energy_noise(energy) {
                let residual = problem.residual(&field);
                if norm_inf(&residual) < r_max {
                    return Some(Accepted {
                        free: trial,
                        field,
                        energy: j.min(energy),
                        residual,
                        step: t,
                    });
                }
            }
        }
        t *= opts.backtrack;
    }
    None
}

/// Minimizes the frozen energy starting from `u0`, which must vanish on
/// the Dirichlet nodes.
pub fn solve_frozen(
    problem: &FrozenProblem<'_>,
    u0: &DiscreteField,
    opts: &InnerOptions,
) -> Result<(DiscreteField, InnerReport), InnerError> {
    opts.validate()?;
    if !u0.satisfies_dirichlet() {
        return Err(InnerError::InitialNotAdmissible);
    }
    let space = problem.space();
    let symbolic = space.symbolic_factorization();

    let mut free = u0.free_values();
    let mut field = DiscreteField::from_free(space, &free);
    let mut energy = problem.energy(&field);
    let mut residual = problem.residual(&field);
    let mut report = InnerReport {
        iterations: 0,
        history: vec![InnerStep {
            energy,
            residual_max: norm_inf(&residual),
            step_length: 0.0,
            kind: StepKind::Start,
        }],
        converged: false,
    };

    loop {
        if norm_inf(&residual) <= opts.grad_tol {
            report.converged = true;
            return Ok((field, report));
        }
        if report.iterations >= opts.max_iters {
            return Err(InnerError::MaxItersExceeded(Box::new(PartialSolve { field, report })));
        }

        let hessian = problem.hessian(&field, opts.eps_reg);
        let chol = symbolic
            .factor(&hessian)
            .map_err(|source| InnerError::LinearSolveFailure {
                iteration: report.iterations,
                source,
            })?;
        let neg_r: Vec<f64> = residual.iter().map(|r| -r).collect();
        let mut direction = chol.solve(&neg_r);
        let mut kind = StepKind::Newton;
        if !(dot(&residual, &direction) < 0.0) || direction.iter().any(|d| !d.is_finite()) {
            direction = neg_r.clone();
            kind = StepKind::Gradient;
        }

        let mut accepted = line_search(problem, &free, energy, &residual, &direction, opts);
        if accepted.is_none() && kind == StepKind::Newton {
            kind = StepKind::Gradient;
            accepted = line_search(problem, &free, energy, &residual, &neg_r, opts);
        }
        let Some(step) = accepted else {
            return Err(InnerError::Stalled(Box::new(PartialSolve { field, report })));
        };

        free = step.free;
        field = step.field;
        energy = step.energy;
        residual = step.residual;
        report.iterations += 1;
        report.history.push(InnerStep {
            energy,
            residual_max: norm_inf(&residual),
            step_length: step.step,
            kind,
        });
    }
}

/// Discrete weak-solution certificate: `|J'(u)·φᵢ| ≤ tol` for every free node.
pub fn weak_residual_check(problem: &FrozenProblem<'_>, u: &DiscreteField, tol: f64) -> bool {
    norm_inf(&problem.residual(u)) <= tol
}
