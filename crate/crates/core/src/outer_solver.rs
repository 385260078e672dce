//! Fixed-point driver for the full problem, a-priori bound monitors and the
//! Rayleigh-quotient estimator for `λ₁`.
//!
//! The outer loop is the relaxed Picard iteration
//! `v_{k+1} = (1 - θ) v_k + θ T(v_k)`, `v_0 = 0`, where `T(v)` is the
//! minimizer of the energy with `α(x, v(x))` frozen. Each `T(v)` is checked
//! against the a-priori bounds
//!
//! ```text
//! ∫ |∇T(v)|^p ≤ C,    ∫ |T(v)|^p ≤ C₁ = C / λ₁,
//! C = C_ε ∫ |f|^{p'} / (λ - ε/λ₁),   C_ε = ε^{-(p⁺-1)},   ε = ½ min{1, λ λ₁}.
//! ```

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assembly::{mass_matrix, stiffness_matrix, AssemblyError, ProblemData};
use crate::coefficients::{source_conjugate_modular, CoefficientError, DEFAULT_T_CHECK};
use crate::exec;
use crate::geometry::{DiscreteField, FeSpace, CONSTRAINED};
use crate::inner_solver::{solve_frozen, InnerError, InnerOptions};
use crate::linalg::{dot, norm_inf, EnvelopeCholesky, LinalgError};
use crate::varexp::{gradient_modular, luxemburg_norm, modular, ExponentField, VarExpError};

#[derive(Debug, Error)]
pub enum OuterError {
    #[error("invalid options: {0}")]
    InvalidOptions(String),
    #[error("mesh has no interior nodes")]
    NoFreeNodes,
    #[error("λ - ε/λ₁ = {denominator:e} is not positive (λ = {lambda}, λ₁ = {lambda1}, ε = {epsilon})")]
    NonpositiveDenominator {
        lambda: f64,
        lambda1: f64,
        epsilon: f64,
        denominator: f64,
    },
    #[error("outer iteration {iteration}: {source}")]
    Inner {
        iteration: usize,
        #[source]
        source: InnerError,
    },
    #[error("fixed-point iteration did not reach fix_tol in {} iterations (last difference {:e})", .0.report.outer_iterations, .0.report.last_difference())]
    MaxOuterExceeded(Box<PartialOuter>),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error(transparent)]
    Coefficient(#[from] CoefficientError),
    #[error(transparent)]
    VarExp(#[from] VarExpError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Best iterate of a run that hit `max_outer`.
#[derive(Debug, Clone)]
pub struct PartialOuter {
    pub field: DiscreteField,
    pub report: SolveReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Lambda1Options {
    /// Random starts in addition to the linear eigenvector start.
    pub restarts: usize,
    pub seed: u64,
    pub max_iters: usize,
    /// Stop a descent once the relative decrease of `R` falls below this.
    pub rel_tol: f64,
}

impl Default for Lambda1Options {
    fn default() -> Self {
        Lambda1Options {
            restarts: 4,
            seed: 42,
            max_iters: 300,
            rel_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OuterOptions {
    /// Stop when the Luxemburg norm of `u_{k+1} - u_k` is at most this.
    pub fix_tol: f64,
    pub max_outer: usize,
    /// Initial relaxation `θ ∈ (0, 1]`.
    pub theta: f64,
    /// Floor for automatic halving of `θ`.
    pub min_theta: f64,
    /// Estimate `λ₁` and track the a-priori bounds every iteration.
    pub monitor_bounds: bool,
    pub lambda1: Lambda1Options,
    /// Range `[-t_check, t_check]` over which the `α` bounds are sampled.
    pub t_check: f64,
    pub t_samples: usize,
}

impl Default for OuterOptions {
    fn default() -> Self {
        OuterOptions {
            fix_tol: 1e-8,
            max_outer: 50,
            theta: 1.0,
            min_theta: 1.0 / 16.0,
            monitor_bounds: true,
            lambda1: Lambda1Options::default(),
            t_check: DEFAULT_T_CHECK,
            t_samples: 41,
        }
    }
}

impl OuterOptions {
    pub fn validate(&self) -> Result<(), OuterError> {
        let bad = |m: &str| Err(OuterError::InvalidOptions(m.to_string()));
        if !(self.fix_tol > 0.0) {
            return bad("fix_tol must be positive");
        }
        if self.max_outer == 0 {
            return bad("max_outer must be positive");
        }
        if !(self.theta > 0.0 && self.theta <= 1.0) {
            return bad("theta must lie in (0, 1]");
        }
        if !(self.min_theta > 0.0 && self.min_theta <= self.theta) {
            return bad("min_theta must lie in (0, theta]");
        }
        if !(self.t_check > 0.0) {
            return bad("t_check must be positive");
        }
        if self.monitor_bounds && self.lambda1.restarts == 0 {
            return bad("lambda1.restarts must be at least 1");
        }
        Ok(())
    }
}

/// `R(u) = ∫|∇u|^p / ∫|u|^p`, or `None` for `u = 0`.
pub fn rayleigh_quotient(u: &DiscreteField, p: &ExponentField) -> Option<f64> {
    let m = modular(u, p);
    (m > 0.0).then(|| gradient_modular(u, p) / m)
}

#[derive(Debug, Clone)]
pub struct Lambda1Estimate {
    pub value: f64,
    /// Minimizing field, scaled to unit modular.
    pub minimizer: DiscreteField,
    pub restarts_used: usize,
    /// Best quotient reached from each start; index 0 is the eigenvector start.
    pub start_values: Vec<f64>,
}

/// Gradients of `G = ∫|∇u|^p` and `M = ∫|u|^p` over free nodes.
fn quotient_gradients(u: &DiscreteField, p: &ExponentField) -> (Vec<f64>, Vec<f64>) {
    let space = u.space();
    let nq = space.points_per_element();
    let w = space.qp_weights();
    let pv = p.values();
    let points = space.rule().points();
    let tris = space.mesh().triangles();
    let vals = u.values();
    let local = exec::map_range(tris.len(), |e| {
        let g = u.gradient_on_element(e);
        let gn = g[0].hypot(g[1]);
        let grads = space.basis_gradients(e);
        let tri = tris[e];
        let mut dg = [0.0; 3];
        let mut dm = [0.0; 3];
        for (q, l) in points.iter().enumerate() {
            let k = e * nq + q;
            if gn > 0.0 {
                let c = w[k] * pv[k] * gn.powf(pv[k] - 2.0);
                for a in 0..3 {
                    dg[a] += c * (g[0] * grads[a][0] + g[1] * grads[a][1]);
                }
            }
            let uq = l[0] * vals[tri[0]] + l[1] * vals[tri[1]] + l[2] * vals[tri[2]];
            if uq != 0.0 {
                let c = w[k] * pv[k] * uq.abs().powf(pv[k] - 2.0) * uq;
                for a in 0..3 {
                    dm[a] += c * l[a];
                }
            }
        }
        (dg, dm)
    });
    let mut dg = vec![0.0; space.num_free()];
    let mut dm = vec![0.0; space.num_free()];
    for (e, (g, m)) in local.iter().enumerate() {
        for (a, &node) in tris[e].iter().enumerate() {
            let i = space.free_index(node);
            if i != CONSTRAINED {
                dg[i] += g[a];
                dm[i] += m[a];
            }
        }
    }
    (dg, dm)
}

/// Scales a nonzero field to unit Luxemburg norm, i.e. unit modular.
fn normalize(u: DiscreteField, p: &ExponentField) -> Result<Option<DiscreteField>, VarExpError> {
    let n = luxemburg_norm(&u, p)?;
    Ok((n > 0.0 && n.is_finite()).then(|| u.scaled(1.0 / n)))
}

struct Descent {
    best: f64,
    minimizer: DiscreteField,
}

/// Preconditioned normalized gradient descent on `R` from one start. The
/// search direction is the `H¹₀` gradient `-K⁻¹ ∇R`.
fn descend(
    start: DiscreteField,
    p: &ExponentField,
    stiffness: &EnvelopeCholesky,
    opts: &Lambda1Options,
) -> Result<Option<Descent>, VarExpError> {
    let space = start.space().clone();
    let Some(mut u) = normalize(start, p)? else {
        return Ok(None);
    };
    let Some(mut r) = rayleigh_quotient(&u, p) else {
        return Ok(None);
    };
    let mut out = Descent {
        best: r,
        minimizer: u.clone(),
    };
    let mut step = 1.0;
    for _ in 0..opts.max_iters {
        let m = modular(&u, p);
        let (dg, dm) = quotient_gradients(&u, p);
        let grad: Vec<f64> = dg.iter().zip(&dm).map(|(g, h)| (g - r * h) / m).collect();
        let dir: Vec<f64> = stiffness.solve(&grad).into_iter().map(|d| -d).collect();
        if !(dot(&grad, &dir) < 0.0) {
            break;
        }
        let free = u.free_values();
        let mut accepted = None;
        for _ in 0..50 {
            let trial: Vec<f64> = free.iter().zip(&dir).map(|(a, d)| a + step * d).collect();
            if let Some(cand) = normalize(DiscreteField::from_free(&space, &trial), p)? {
                if let Some(rc) = rayleigh_quotient(&cand, p) {
                    if rc < out.best {
                        out.best = rc;
                        out.minimizer = cand.clone();
                    }
                    if rc < r {
                        accepted = Some((cand, rc));
                        break;
                    }
                }
            }
            step *= 0.5;
        }
        let Some((cand, rc)) = accepted else {
            break;
        };
        let decrease = r - rc;
        u = cand;
        r = rc;
        step = (2.0 * step).min(1e6);
        if decrease <= opts.rel_tol * r {
            break;
        }
    }
    Ok(Some(out))
}

/// First eigenvector of `K x = λ M x` over free nodes by inverse iteration.
fn linear_eigenvector(stiffness: &EnvelopeCholesky, mass: &crate::linalg::CsrMatrix) -> Vec<f64> {
    let n = mass.dim();
    let mut x = vec![1.0; n];
    let mut last = f64::INFINITY;
    for _ in 0..200 {
        let y = stiffness.solve(&mass.mul_vec(&x));
        let scale = norm_inf(&y);
        x = y.into_iter().map(|v| v / scale).collect();
        // With ‖x‖∞ = 1 the growth factor tends to 1/λ.
        let rq = 1.0 / scale;
        if (last - rq).abs() <= 1e-14 * rq {
            break;
        }
        last = rq;
    }
    x
}

/// Minimizes `R(u) = ∫|∇u|^p / ∫|u|^p` over nonzero P1 fields from the
/// linear eigenvector start plus `restarts` random non-negative starts.
/// The returned value is the smallest quotient evaluated during the run.
pub fn estimate_lambda1(
    space: &Arc<FeSpace>,
    p: &ExponentField,
    opts: &Lambda1Options,
) -> Result<Lambda1Estimate, OuterError> {
    if opts.restarts == 0 {
        return Err(OuterError::InvalidOptions("lambda1.restarts must be at least 1".into()));
    }
    if space.num_free() == 0 {
        return Err(OuterError::NoFreeNodes);
    }
    let k = stiffness_matrix(space);
    let chol = space.symbolic_factorization().factor(&k)?;
    let mass = mass_matrix(space);

    let mut starts = vec![linear_eigenvector(&chol, &mass)];
    for r in 0..opts.restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        rng.set_stream(r as u64 + 1);
        let mut x: Vec<f64> = (0..space.num_free()).map(|_| rng.random::<f64>()).collect();
        // Two smoothing sweeps keep the start non-negative and in H¹₀ scale.
        for _ in 0..2 {
            x = chol.solve(&mass.mul_vec(&x));
        }
        starts.push(x);
    }

    let runs = exec::map_jobs(starts.len(), |i| {
        descend(DiscreteField::from_free(space, &starts[i]), p, &chol, opts)
    });
    let mut best: Option<Descent> = None;
    let mut start_values = Vec::with_capacity(runs.len());
    for run in runs {
        match run? {
            Some(d) => {
                start_values.push(d.best);
                if best.as_ref().is_none_or(|b| d.best < b.best) {
                    best = Some(d);
                }
            }
            None => start_values.push(f64::INFINITY),
        }
    }
    let best = best.ok_or(OuterError::NoFreeNodes)?;
    Ok(Lambda1Estimate {
        value: best.best,
        minimizer: best.minimizer,
        restarts_used: start_values.len(),
        start_values,
    })
}

/// Explicit constants of the a-priori bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Lemma2Constants {
    pub epsilon: f64,
    pub c_epsilon: f64,
    pub c: f64,
    pub c1: f64,
    /// `∫ |f|^{p'}`.
    pub f_conj_modular: f64,
    pub lambda: f64,
    pub lambda1: f64,
    pub p_plus: f64,
}

pub fn lemma2_constants(
    f_conj_modular: f64,
    p_plus: f64,
    lambda: f64,
    lambda1: f64,
) -> Result<Lemma2Constants, OuterError> {
    let epsilon = 0.5 * f64::min(1.0, lambda * lambda1);
    let denominator = lambda - epsilon / lambda1;
    if !(lambda > 0.0 && lambda1 > 0.0 && denominator > 0.0) {
        return Err(OuterError::NonpositiveDenominator {
            lambda,
            lambda1,
            epsilon,
            denominator,
        });
    }
    let c_epsilon = epsilon.powf(-(p_plus - 1.0));
    let c = c_epsilon * f_conj_modular / denominator;
    Ok(Lemma2Constants {
        epsilon,
        c_epsilon,
        c,
        c1: c / lambda1,
        f_conj_modular,
        lambda,
        lambda1,
        p_plus,
    })
}

/// Estimates `λ₁` for the problem's exponent and derives the bound constants.
pub fn bound_constants(
    data: &ProblemData,
    opts: &Lambda1Options,
) -> Result<(Lambda1Estimate, Lemma2Constants), OuterError> {
    let est = estimate_lambda1(data.space(), data.exponent(), opts)?;
    let f_conj = source_conjugate_modular(data.source_qp(), data.exponent());
    let constants = lemma2_constants(f_conj, data.exponent().p_plus(), data.alpha().lambda(), est.value)?;
    Ok((est, constants))
}

/// Bound quantities for one `T(v)`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct BoundProbe {
    pub gradient_modular: f64,
    pub modular: f64,
    /// `C - ∫|∇T(v)|^p`.
    pub lemma2_slack: f64,
    /// `C₁ - ∫|T(v)|^p`.
    pub remark1_slack: f64,
    /// `∫ f T(v) - λ ∫|∇T(v)|^p`.
    pub energy_slack: f64,
    pub inner_iterations: usize,
}

fn probe_values(data: &ProblemData, u: &DiscreteField, constants: Option<&Lemma2Constants>) -> (f64, f64, f64, f64, f64) {
    let p = data.exponent();
    let gm = gradient_modular(u, p);
    let m = modular(u, p);
    let energy_slack = data.source_pairing(u) - data.alpha().lambda() * gm;
    let (l2, r1) = constants.map_or((f64::NAN, f64::NAN), |c| (c.c - gm, c.c1 - m));
    (gm, m, l2, r1, energy_slack)
}

/// Computes `T(v)` for each probe and the bound slacks.
pub fn bound_probes(
    data: &ProblemData,
    constants: &Lemma2Constants,
    probes: &[DiscreteField],
    inner: &InnerOptions,
) -> Result<Vec<BoundProbe>, OuterError> {
    let results = exec::map_jobs(probes.len(), |i| -> Result<BoundProbe, OuterError> {
        let frozen = data.freeze(&probes[i])?;
        let zero = DiscreteField::zeros(data.space());
        let (u, rep) = solve_frozen(&frozen, &zero, inner).map_err(|source| OuterError::Inner { iteration: i, source })?;
        let (gradient_modular, modular, lemma2_slack, remark1_slack, energy_slack) = probe_values(data, &u, Some(constants));
        Ok(BoundProbe {
            gradient_modular,
            modular,
            lemma2_slack,
            remark1_slack,
            energy_slack,
            inner_iterations: rep.iterations,
        })
    });
    results.into_iter().collect()
}

/// Seeded random nodal fields with values uniform in `[-amplitude, amplitude]`.
/// Boundary values are random too; `α` accepts any frozen argument.
pub fn random_fields(space: &Arc<FeSpace>, count: usize, amplitude: f64, seed: u64) -> Vec<DiscreteField> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let values = (0..space.mesh().num_nodes())
                .map(|_| rng.random_range(-amplitude..=amplitude))
                .collect();
            DiscreteField::from_values(space, values)
        })
        .collect()
}

/// `|T(v + 2⁻ⁿ w) - T(v)|_{p(·)}` for `n = 1..=levels`.
pub fn continuity_probe(
    data: &ProblemData,
    v: &DiscreteField,
    w: &DiscreteField,
    levels: usize,
    inner: &InnerOptions,
) -> Result<Vec<f64>, OuterError> {
    let zero = DiscreteField::zeros(data.space());
    let (base, _) = solve_frozen(&data.freeze(v)?, &zero, inner).map_err(|source| OuterError::Inner { iteration: 0, source })?;
    let runs = exec::map_jobs(levels, |k| -> Result<f64, OuterError> {
        let vn = v.add_scaled(0.5f64.powi(k as i32 + 1), w);
        let (un, _) = solve_frozen(&data.freeze(&vn)?, &base, inner).map_err(|source| OuterError::Inner { iteration: k + 1, source })?;
        Ok(luxemburg_norm(&un.sub(&base), data.exponent())?)
    });
    runs.into_iter().collect()
}

/// Max-norm of the weak residual with `α` frozen at `u` itself.
pub fn self_consistency_residual(u: &DiscreteField, data: &ProblemData) -> Result<f64, OuterError> {
    Ok(norm_inf(&data.freeze(u)?.residual(u)))
}

/// True iff `u` satisfies the discrete weak identity of the full problem
/// within `tol` on every free hat function.
pub fn self_consistency_check(u: &DiscreteField, data: &ProblemData, tol: f64) -> Result<bool, OuterError> {
    Ok(self_consistency_residual(u, data)? <= tol)
}

#[derive(Debug, Clone, Serialize)]
pub struct OuterIteration {
    pub iteration: usize,
    /// `|u_{k+1} - u_k|_{p(·)}`.
    pub difference_norm: f64,
    pub difference_modular: f64,
    pub gradient_modular: f64,
    pub modular: f64,
    /// Frozen energy at `T(v_k)`.
    pub energy: f64,
    pub lemma2_slack: Option<f64>,
    pub remark1_slack: Option<f64>,
    /// `∫ |v_k|^p ≤ C₁`.
    pub in_ball: Option<bool>,
    pub energy_slack: f64,
    pub inner_iterations: usize,
    pub inner_residual: f64,
    /// Relaxation used for the update after this iteration.
    pub theta: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Lambda1Summary {
    pub value: f64,
    pub restarts_used: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SelfConsistency {
    pub tol: f64,
    pub max_residual: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveReport {
    pub converged: bool,
    pub outer_iterations: usize,
    pub iterations: Vec<OuterIteration>,
    pub lambda1: Option<Lambda1Summary>,
    pub constants: Option<Lemma2Constants>,
    pub self_consistency: Option<SelfConsistency>,
}

impl SolveReport {
    pub fn last_difference(&self) -> f64 {
        self.iterations.last().map_or(f64::INFINITY, |r| r.difference_norm)
    }

    /// Smallest gradient-modular and modular bound slacks over all iterations.
    pub fn min_bound_slacks(&self) -> Option<(f64, f64)> {
        self.constants?;
        let l2 = self.iterations.iter().filter_map(|r| r.lemma2_slack).fold(f64::INFINITY, f64::min);
        let r1 = self.iterations.iter().filter_map(|r| r.remark1_slack).fold(f64::INFINITY, f64::min);
        Some((l2, r1))
    }
}

/// Relaxed Picard iteration `v ↦ T(v)` from `v₀ = 0`.
///
/// Each inner solve is warm-started from the previous `T(v)`. If the
/// difference norm grows on two consecutive iterations `θ` is halved, down
/// to `min_theta`.
pub fn fixed_point_solve(
    data: &ProblemData,
    inner: &InnerOptions,
    outer: &OuterOptions,
) -> Result<(DiscreteField, SolveReport), OuterError> {
    outer.validate()?;
    inner.validate().map_err(|source| OuterError::Inner { iteration: 0, source })?;
    let space = data.space();
    data.alpha().validate(space, outer.t_check, outer.t_samples)?;
    let p = data.exponent();

    let mut report = SolveReport {
        converged: false,
        outer_iterations: 0,
        iterations: Vec::new(),
        lambda1: None,
        constants: None,
        self_consistency: None,
    };
    if outer.monitor_bounds {
        let (est, constants) = bound_constants(data, &outer.lambda1)?;
        report.lambda1 = Some(Lambda1Summary {
            value: est.value,
            restarts_used: est.restarts_used,
        });
        report.constants = Some(constants);
    }

    let mut v = DiscreteField::zeros(space);
    let mut u_prev = DiscreteField::zeros(space);
    let mut theta = outer.theta;
    let mut increases = 0;
    let mut best: Option<(f64, DiscreteField)> = None;

    for k in 1..=outer.max_outer {
        let frozen = data.freeze(&v)?;
        let (u, inner_rep) = solve_frozen(&frozen, &u_prev, inner).map_err(|source| OuterError::Inner { iteration: k, source })?;
        let diff = u.sub(&u_prev);
        let difference_norm = luxemburg_norm(&diff, p)?;
        let (gm, m, l2, r1, energy_slack) = probe_values(data, &u, report.constants.as_ref());
        let in_ball = report.constants.map(|c| modular(&v, p) <= c.c1 + 1e-6);

        if let Some(prev) = report.iterations.last() {
            if difference_norm > prev.difference_norm {
                increases += 1;
            } else {
                increases = 0;
            }
        }
        if increases >= 2 && theta > outer.min_theta {
            theta = (0.5 * theta).max(outer.min_theta);
            increases = 0;
        }

        report.iterations.push(OuterIteration {
            iteration: k,
            difference_norm,
            difference_modular: modular(&diff, p),
            gradient_modular: gm,
            modular: m,
            energy: frozen.energy(&u),
            lemma2_slack: report.constants.map(|_| l2),
            remark1_slack: report.constants.map(|_| r1),
            in_ball,
            energy_slack,
            inner_iterations: inner_rep.iterations,
            inner_residual: inner_rep.final_residual(),
            theta,
        });
        report.outer_iterations = k;

        if difference_norm <= outer.fix_tol {
            report.converged = true;
            let tol = 10.0 * inner.grad_tol;
            let max_residual = self_consistency_residual(&u, data)?;
            report.self_consistency = Some(SelfConsistency {
                tol,
                max_residual,
                passed: max_residual <= tol,
            });
            return Ok((u, report));
        }
        if best.as_ref().is_none_or(|(d, _)| difference_norm < *d) {
            best = Some((difference_norm, u.clone()));
        }
        v = v.lerp(theta, &u);
        u_prev = u;
    }

    let field = best.map_or(u_prev, |(_, f)| f);
    Err(OuterError::MaxOuterExceeded(Box::new(PartialOuter { field, report })))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{AlphaCoefficient, MatrixField, SourceTerm};
    use crate::geometry::structured_square_mesh;
    use crate::varexp::ExponentMode;

    fn problem(n: usize, p: f64, alpha: AlphaCoefficient, f: f64) -> ProblemData {
        let space = FeSpace::new(structured_square_mesh(n), 4).unwrap();
        let mode = if p == 2.0 { ExponentMode::Diagnostic } else { ExponentMode::Solver };
        ProblemData::new(
            ExponentField::constant(&space, p, mode).unwrap(),
            MatrixField::identity(),
            alpha,
            SourceTerm::constant(f),
        )
        .unwrap()
    }

    #[test]
    fn constants_formula() {
        let c = lemma2_constants(3.0, 3.0, 1.0, 1.0).unwrap();
        assert_eq!(c.epsilon, 0.5);
        assert_eq!(c.c_epsilon, 4.0);
        assert_eq!(c.c, 24.0);
        assert_eq!(c.c1, 24.0);
        let zero = lemma2_constants(0.0, 3.0, 1.0, 1.0).unwrap();
        assert_eq!((zero.c, zero.c1), (0.0, 0.0));
        assert!(lemma2_constants(1.0, 3.0, 1.0, 0.0).is_err());
        assert!(lemma2_constants(1.0, 3.0, 1.0, -2.0).is_err());
        let mut last = 0.0;
        for f in [0.0, 0.1, 1.0, 10.0] {
            let c = lemma2_constants(f, 3.5, 0.7, 12.0).unwrap().c;
            assert!(c >= last);
            last = c;
        }
    }

    #[test]
    fn small_lambda1_keeps_denominator_positive() {
        let c = lemma2_constants(1.0, 3.0, 1.0, 0.25).unwrap();
        assert!(c.lambda - c.epsilon / c.lambda1 > 0.0);
    }

    #[test]
    fn lambda1_quotient_is_scale_invariant_for_constant_p() {
        let d = problem(6, 3.0, AlphaCoefficient::constant(1.0), 1.0);
        let u = DiscreteField::interpolate(d.space(), |x, y| x * (1.0 - x) * y * (1.0 - y) * (1.0 + x));
        let r = rayleigh_quotient(&u, d.exponent()).unwrap();
        for t in [0.1, 10.0] {
            let rt = rayleigh_quotient(&u.scaled(t), d.exponent()).unwrap();
            assert!((rt - r).abs() <= 1e-12 * r);
        }
        assert!(rayleigh_quotient(&DiscreteField::zeros(d.space()), d.exponent()).is_none());
    }

    #[test]
    fn lambda1_gradient_matches_differences() {
        let space = FeSpace::new(structured_square_mesh(4), 4).unwrap();
        let p = ExponentField::from_fn(&space, ExponentMode::Solver, |x, _| 2.5 + x).unwrap();
        let u = DiscreteField::interpolate(&space, |x, y| (x * (1.0 - x) * y * (1.0 - y)).sqrt() * (1.0 + y));
        let u = DiscreteField::from_free(&space, &u.free_values());
        let (dg, dm) = quotient_gradients(&u, &p);
        let h = 1e-6;
        for i in [0, 3, 7] {
            let mut e = vec![0.0; space.num_free()];
            e[i] = h;
            let plus = u.add_scaled(1.0, &DiscreteField::from_free(&space, &e));
            let minus = u.add_scaled(-1.0, &DiscreteField::from_free(&space, &e));
            let fg = (gradient_modular(&plus, &p) - gradient_modular(&minus, &p)) / (2.0 * h);
            let fm = (modular(&plus, &p) - modular(&minus, &p)) / (2.0 * h);
            assert!((fg - dg[i]).abs() <= 1e-6 * dg[i].abs().max(1e-3), "{fg} {}", dg[i]);
            assert!((fm - dm[i]).abs() <= 1e-6 * dm[i].abs().max(1e-3), "{fm} {}", dm[i]);
        }
    }

    #[test]
    fn lambda1_estimate_beats_probes() {
        let space = FeSpace::new(structured_square_mesh(8), 4).unwrap();
        let p = ExponentField::from_fn(&space, ExponentMode::Solver, |x, _| 3.0 + 0.5 * (std::f64::consts::PI * x).sin()).unwrap();
        let est = estimate_lambda1(&space, &p, &Lambda1Options { restarts: 2, ..Default::default() }).unwrap();
        assert!(est.value > 0.0);
        assert_eq!(est.restarts_used, 3);
        assert!((modular(&est.minimizer, &p) - 1.0).abs() < 1e-10);
        for w in random_fields(&space, 20, 1.0, 7) {
            let w = DiscreteField::from_free(&space, &w.free_values());
            assert!(est.value <= rayleigh_quotient(&w, &p).unwrap());
        }
    }

    #[test]
    fn no_free_nodes_is_an_error() {
        let space = FeSpace::new(structured_square_mesh(1), 2).unwrap();
        let p = ExponentField::constant(&space, 3.0, ExponentMode::Solver).unwrap();
        assert!(matches!(
            estimate_lambda1(&space, &p, &Lambda1Options::default()),
            Err(OuterError::NoFreeNodes)
        ));
    }

    #[test]
    fn t_independent_alpha_is_a_constant_map() {
        let alpha = AlphaCoefficient::parse("1 + x*y", 1.0, 2.0).unwrap();
        let d = problem(8, 3.0, alpha, 1.0);
        let (_, rep) = fixed_point_solve(&d, &InnerOptions::default(), &OuterOptions::default()).unwrap();
        assert_eq!(rep.outer_iterations, 2);
        assert_eq!(rep.iterations[1].difference_norm, 0.0);
        assert!(rep.self_consistency.as_ref().unwrap().passed);
        let (l2, r1) = rep.min_bound_slacks().unwrap();
        assert!(l2 >= 0.0 && r1 >= 0.0);
    }

    #[test]
    fn t_dependent_alpha_converges_and_is_self_consistent() {
        let alpha = AlphaCoefficient::parse("1 + 1/(1 + t^2)", 1.0, 2.0).unwrap();
        let d = problem(8, 3.0, alpha, 1.0);
        let opts = OuterOptions {
            monitor_bounds: false,
            ..Default::default()
        };
        let (u, rep) = fixed_point_solve(&d, &InnerOptions::default(), &opts).unwrap();
        assert!(rep.converged && rep.outer_iterations > 2);
        assert!(self_consistency_check(&u, &d, 1e-7).unwrap());
        assert!(rep.constants.is_none());

        let one = OuterOptions { max_outer: 1, ..opts };
        match fixed_point_solve(&d, &InnerOptions::default(), &one) {
            Err(OuterError::MaxOuterExceeded(partial)) => {
                assert!(!self_consistency_check(&partial.field, &d, 1e-9).unwrap());
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn zero_source_is_trivially_consistent() {
        let d = problem(4, 3.0, AlphaCoefficient::constant(1.0), 0.0);
        assert!(self_consistency_check(&DiscreteField::zeros(d.space()), &d, 0.0).unwrap());
    }

    #[test]
    fn alpha_below_declared_bound_is_rejected() {
        let alpha = AlphaCoefficient::parse("0.5 + 0*t", 1.0, 2.0).unwrap();
        let d = problem(4, 3.0, alpha, 1.0);
        assert!(matches!(
            fixed_point_solve(&d, &InnerOptions::default(), &OuterOptions::default()),
            Err(OuterError::Coefficient(_))
        ));
    }

    #[test]
    fn continuity_probe_decreases() {
        let alpha = AlphaCoefficient::parse("1 + 1/(1 + t^2)", 1.0, 2.0).unwrap();
        let d = problem(6, 3.0, alpha, 1.0);
        let v = DiscreteField::interpolate(d.space(), |x, y| x * y);
        let w = DiscreteField::interpolate(d.space(), |x, _| 1.0 + x);
        let norms = continuity_probe(&d, &v, &w, 8, &InnerOptions::default()).unwrap();
        for pair in norms.windows(2) {
            assert!(pair[1] <= pair[0] || pair[1] <= 1e-8);
        }
        assert!(norms[7] < norms[0] * 0.05);
    }
}
