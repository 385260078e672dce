//! Modular, Luxemburg norm and the inequalities relating them, for variable
//! exponents sampled at the quadrature points of a P1 space.

use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::expr::{ExprError, Expression};
use crate::geometry::{DiscreteField, FeSpace};

#[derive(Debug, Error)]
pub enum VarExpError {
    #[error("exponent {value} at ({x}, {y}) violates the admissible range ({requirement})")]
    ExponentOutOfRange {
        value: f64,
        x: f64,
        y: f64,
        requirement: &'static str,
    },
    #[error("exponent expression: {0}")]
    Expression(#[from] ExprError),
    #[error("Luxemburg norm bisection did not converge after {0} steps")]
    NoConvergence(usize),
}

/// Whether the exponent must satisfy `p > 2` everywhere (solver mode) or
/// may touch 2 (diagnostic mode, for the linear oracles).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ExponentMode {
    Solver,
    Diagnostic,
}

/// A variable exponent sampled at the quadrature points of one space.
#[derive(Debug, Clone)]
pub struct ExponentField {
    space: Arc<FeSpace>,
    values: Vec<f64>,
    p_minus: f64,
    p_plus: f64,
    mode: ExponentMode,
}

impl ExponentField {
    pub fn constant(space: &Arc<FeSpace>, p: f64, mode: ExponentMode) -> Result<Self, VarExpError> {
        Self::from_fn(space, mode, |_, _| p)
    }

    /// `expr` is an expression in `x` and `y`.
    pub fn from_expression(
        space: &Arc<FeSpace>,
        expr: &Expression,
        mode: ExponentMode,
    ) -> Result<Self, VarExpError> {
        let values = space
            .qp_coords()
            .iter()
            .map(|p| expr.eval(&[p[0], p[1]]))
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_qp_values(space, values, mode)
    }

    pub fn from_fn(
        space: &Arc<FeSpace>,
        mode: ExponentMode,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Self, VarExpError> {
        Self::from_qp_values(space, space.sample_qps(f), mode)
    }

    pub fn from_qp_values(
        space: &Arc<FeSpace>,
        values: Vec<f64>,
        mode: ExponentMode,
    ) -> Result<Self, VarExpError> {
        assert_eq!(values.len(), space.num_qps());
        let (requirement, ok): (&'static str, fn(f64) -> bool) = match mode {
            ExponentMode::Solver => ("2 < p < inf", |p| p > 2.0 && p.is_finite()),
            ExponentMode::Diagnostic => ("2 <= p < inf", |p| p >= 2.0 && p.is_finite()),
        };
        if let Some(k) = values.iter().position(|&p| !ok(p)) {
            let [x, y] = space.qp_coords()[k];
            return Err(VarExpError::ExponentOutOfRange {
                value: values[k],
                x,
                y,
                requirement,
            });
        }
        let p_minus = values.iter().copied().fold(f64::INFINITY, f64::min);
        let p_plus = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(ExponentField {
            space: space.clone(),
            values,
            p_minus,
            p_plus,
            mode,
        })
    }

    pub fn space(&self) -> &Arc<FeSpace> {
        &self.space
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn p_minus(&self) -> f64 {
        self.p_minus
    }

    pub fn p_plus(&self) -> f64 {
        self.p_plus
    }

    pub fn mode(&self) -> ExponentMode {
        self.mode
    }

    pub fn is_constant(&self) -> bool {
        self.p_minus == self.p_plus
    }

    pub fn conjugate(&self) -> ConjugateField {
        ConjugateField {
            values: self.values.iter().map(|&p| p / (p - 1.0)).collect(),
        }
    }

    fn check_space(&self, u: &DiscreteField) {
        assert!(
            Arc::ptr_eq(&self.space, u.space()),
            "field and exponent must share a space"
        );
    }
}

/// The conjugate exponent `p' = p / (p - 1)` at each quadrature point.
#[derive(Debug, Clone, PartialEq)]
pub struct ConjugateField {
    values: Vec<f64>,
}

impl ConjugateField {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// `Σ w |v|^p` over quadrature samples. Zero samples contribute nothing, so
/// the result is exactly 0 for a vanishing field.
pub fn modular_of_samples(values: &[f64], exponents: &[f64], weights: &[f64]) -> f64 {
    values
        .iter()
        .zip(exponents)
        .zip(weights)
        .map(|((&v, &p), &w)| if v == 0.0 { 0.0 } else { w * v.abs().powf(p) })
        .sum()
}

const MAX_STEPS: usize = 200;

/// Luxemburg norm `inf{μ > 0 : Σ w |v/μ|^p ≤ 1}` of quadrature samples.
///
/// With `s = ln μ`, `g(s) = ln ρ(v/μ)` is convex and strictly decreasing for
/// `v ≠ 0`. The root of `g` is bracketed by doubling/halving `μ` and then
/// found by Newton steps on `g`, falling back to bisection whenever a step
/// leaves the bracket.
pub fn luxemburg_of_samples(
    values: &[f64],
    exponents: &[f64],
    weights: &[f64],
) -> Result<f64, VarExpError> {
    // Drop zero samples once: they never contribute.
    let terms: Vec<(f64, f64, f64)> = values
        .iter()
        .zip(exponents)
        .zip(weights)
        .filter(|((v, _), w)| **v != 0.0 && **w > 0.0)
        .map(|((&v, &p), &w)| (v.abs().ln(), p, w))
        .collect();
    if terms.is_empty() {
        return Ok(0.0);
    }
    // (ρ, dρ/ds) at s = ln μ
    let phi = |s: f64| -> (f64, f64) {
        terms.iter().fold((0.0, 0.0), |(f, d), &(lv, p, w)| {
            let t = w * (p * (lv - s)).exp();
            (f + t, d - p * t)
        })
    };
    let p_min = terms.iter().map(|t| t.1).fold(f64::INFINITY, f64::min);
    let p_max = terms.iter().map(|t| t.1).fold(f64::NEG_INFINITY, f64::max);
    let rho = phi(0.0).0;
    let mut mu0 = rho.max(rho.powf(1.0 / p_max)).max(rho.powf(1.0 / p_min));
    if !(mu0 > 0.0 && mu0.is_finite()) {
        mu0 = 1.0;
    }

    let mut s = mu0.ln();
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    let mut steps = 0;
    // Bracket: move by ln 2 until the sign of g changes.
    loop {
        let f = phi(s).0;
        if f == 1.0 {
            return Ok(s.exp());
        }
        if f > 1.0 {
            lo = s;
        } else {
            hi = s;
        }
        if lo.is_finite() && hi.is_finite() {
            break;
        }
        s += if f > 1.0 { std::f64::consts::LN_2 } else { -std::f64::consts::LN_2 };
        steps += 1;
        if steps > 2100 {
            return Err(VarExpError::NoConvergence(steps));
        }
    }
    let mut s = 0.5 * (lo + hi);
    for _ in 0..MAX_STEPS {
        let (f, d) = phi(s);
        if f == 1.0 {
            return Ok(s.exp());
        }
        if f > 1.0 {
            lo = s;
        } else {
            hi = s;
        }
        let newton = s - f.ln() * f / d;
        let next = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        let scale = s.abs().max(1.0);
        if (next - s).abs() <= 2.0 * f64::EPSILON * scale || hi - lo <= 2.0 * f64::EPSILON * scale {
            return Ok(next.exp());
        }
        s = next;
    }
    Err(VarExpError::NoConvergence(MAX_STEPS))
}

/// `∫ |u|^{p(x)} dx`.
pub fn modular(u: &DiscreteField, p: &ExponentField) -> f64 {
    p.check_space(u);
    modular_of_samples(&u.values_at_qps(), &p.values, u.space().qp_weights())
}

/// Per-quadrature-point `|∇u|` (constant on each element).
pub fn gradient_magnitudes(u: &DiscreteField) -> Vec<f64> {
    let nq = u.space().points_per_element();
    u.element_gradients()
        .into_iter()
        .flat_map(|g| std::iter::repeat_n(g[0].hypot(g[1]), nq))
        .collect()
}

/// `∫ |∇u|^{p(x)} dx`.
pub fn gradient_modular(u: &DiscreteField, p: &ExponentField) -> f64 {
    p.check_space(u);
    modular_of_samples(&gradient_magnitudes(u), &p.values, u.space().qp_weights())
}

/// `|u|_{p(·)}`.
pub fn luxemburg_norm(u: &DiscreteField, p: &ExponentField) -> Result<f64, VarExpError> {
    p.check_space(u);
    luxemburg_of_samples(&u.values_at_qps(), &p.values, u.space().qp_weights())
}

/// `|∇u|_{p(·)}`, the norm of the zero-trace Sobolev space.
pub fn gradient_luxemburg_norm(u: &DiscreteField, p: &ExponentField) -> Result<f64, VarExpError> {
    p.check_space(u);
    luxemburg_of_samples(&gradient_magnitudes(u), &p.values, u.space().qp_weights())
}

/// Which branch of the norm–modular relations applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum NormRegime {
    Above,
    Below,
    Unit,
}

/// Outcome of checking the norm–modular relations for one field. Slacks are
/// `(upper - lower) / max(1, |upper|, |lower|)` of each inequality, so a
/// negative slack is a violation.
#[derive(Debug, Clone, Serialize)]
pub struct ModularRelationsReport {
    pub norm: f64,
    pub modular: f64,
    pub p_minus: f64,
    pub p_plus: f64,
    pub regime: NormRegime,
    pub lower_slack: f64,
    pub upper_slack: f64,
    /// `|u| = 1 ⇔ ρ(u) = 1` held (both at unit or neither).
    pub unit_consistent: bool,
}

impl ModularRelationsReport {
    pub fn min_slack(&self) -> f64 {
        self.lower_slack.min(self.upper_slack)
    }

    pub fn passed(&self, tol: f64) -> bool {
        self.min_slack() >= -tol && self.unit_consistent
    }
}

pub(crate) fn relative_slack(smaller: f64, larger: f64) -> f64 {
    (larger - smaller) / 1f64.max(smaller.abs()).max(larger.abs())
}

const UNIT_TOL: f64 = 1e-12;

/// Checks, with `p⁻`/`p⁺` taken over the quadrature points:
/// `|u| > 1 ⇒ |u|^{p⁻} ≤ ρ(u) ≤ |u|^{p⁺}`, `|u| < 1 ⇒ |u|^{p⁺} ≤ ρ(u) ≤ |u|^{p⁻}`
/// and `|u| = 1 ⇔ ρ(u) = 1`.
pub fn check_modular_relations(
    u: &DiscreteField,
    p: &ExponentField,
) -> Result<ModularRelationsReport, VarExpError> {
    let norm = luxemburg_norm(u, p)?;
    let rho = modular(u, p);
    let (lo_pow, hi_pow) = (norm.powf(p.p_minus), norm.powf(p.p_plus));
    let norm_unit = (norm - 1.0).abs() <= UNIT_TOL;
    let rho_unit = (rho - 1.0).abs() <= UNIT_TOL;
    let regime = if norm_unit {
        NormRegime::Unit
    } else if norm > 1.0 {
        NormRegime::Above
    } else {
        NormRegime::Below
    };
    let (lower_slack, upper_slack) = match regime {
        NormRegime::Above => (relative_slack(lo_pow, rho), relative_slack(rho, hi_pow)),
        NormRegime::Below => (relative_slack(hi_pow, rho), relative_slack(rho, lo_pow)),
        NormRegime::Unit => {
            let s = -(rho - 1.0).abs();
            (s, s)
        }
    };
    // Near the unit sphere the implication is checked with a looser
    // tolerance on the other side, since norm and modular carry rounding.
    let unit_consistent = match (norm_unit, rho_unit) {
        (true, _) => (rho - 1.0).abs() <= 1e-10,
        (false, true) => (norm - 1.0).abs() <= 1e-10,
        (false, false) => true,
    };
    Ok(ModularRelationsReport {
        norm,
        modular: rho,
        p_minus: p.p_minus,
        p_plus: p.p_plus,
        regime,
        lower_slack,
        upper_slack,
        unit_consistent,
    })
}

/// Both sides of the Hölder-type inequality
/// `|∫ u v| ≤ (1/p⁻ + 1/p'⁻) |u|_{p(·)} |v|_{p'(·)}`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct HolderSides {
    pub lhs: f64,
    pub rhs: f64,
}

impl HolderSides {
    pub fn slack(&self) -> f64 {
        relative_slack(self.lhs, self.rhs)
    }
}

pub fn holder_pairing(
    u: &DiscreteField,
    v: &DiscreteField,
    p: &ExponentField,
) -> Result<HolderSides, VarExpError> {
    p.check_space(u);
    p.check_space(v);
    let w = u.space().qp_weights();
    let uq = u.values_at_qps();
    let vq = v.values_at_qps();
    let lhs = uq
        .iter()
        .zip(&vq)
        .zip(w)
        .map(|((a, b), w)| w * a * b)
        .sum::<f64>()
        .abs();
    let conj = p.conjugate();
    let u_norm = luxemburg_of_samples(&uq, &p.values, w)?;
    let v_norm = luxemburg_of_samples(&vq, conj.values(), w)?;
    let constant = 1.0 / p.p_minus + 1.0 / conj.min();
    Ok(HolderSides {
        lhs,
        rhs: constant * u_norm * v_norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::structured_square_mesh;

    fn space(n: usize) -> Arc<FeSpace> {
        FeSpace::new(structured_square_mesh(n), 4).unwrap()
    }

    #[test]
    fn modular_examples() {
        let s = space(4);
        let p3 = ExponentField::constant(&s, 3.0, ExponentMode::Solver).unwrap();
        assert_eq!(modular(&DiscreteField::zeros(&s), &p3), 0.0);
        let two = DiscreteField::interpolate(&s, |_, _| 2.0);
        assert!((modular(&two, &p3) - 8.0).abs() < 1e-13);
        let p4 = ExponentField::constant(&s, 4.0, ExponentMode::Solver).unwrap();
        let x = DiscreteField::interpolate(&s, |x, _| x);
        assert!((modular(&x, &p4) - 0.2).abs() < 1e-12);
        assert!((gradient_modular(&x, &p3) - 1.0).abs() < 1e-13);
        assert_eq!(gradient_modular(&DiscreteField::zeros(&s), &p3), 0.0);
    }

    #[test]
    fn gradient_modular_matches_elementwise_sum() {
        let s = space(2);
        let p = ExponentField::constant(&s, 3.0, ExponentMode::Solver).unwrap();
        let hat = DiscreteField::interpolate(&s, |x, y| {
            if (x - 0.5).abs() < 1e-12 && (y - 0.5).abs() < 1e-12 {
                1.0
            } else {
                0.0
            }
        });
        // Direct per-element oracle: Σ area |∇u|^p.
        let m = s.mesh();
        let mut oracle = 0.0;
        for e in 0..m.num_triangles() {
            let v = m.vertices(e);
            let tri = m.triangles()[e];
            // Gradient from solving the 2x2 system of edge differences.
            let (d1, d2) = (
                [v[1][0] - v[0][0], v[1][1] - v[0][1]],
                [v[2][0] - v[0][0], v[2][1] - v[0][1]],
            );
            let u = |k: usize| hat.values()[tri[k]];
            let (b1, b2) = (u(1) - u(0), u(2) - u(0));
            let det = d1[0] * d2[1] - d1[1] * d2[0];
            let gx = (b1 * d2[1] - b2 * d1[1]) / det;
            let gy = (d1[0] * b2 - d2[0] * b1) / det;
            oracle += m.element_areas()[e] * gx.hypot(gy).powi(3);
        }
        assert!((gradient_modular(&hat, &p) - oracle).abs() < 1e-12 * oracle);
    }

    #[test]
    fn luxemburg_examples() {
        let s = space(4);
        let pv = ExponentField::from_fn(&s, ExponentMode::Solver, |x, _| {
            3.0 + 0.5 * (std::f64::consts::PI * x).sin()
        })
        .unwrap();
        assert_eq!(luxemburg_norm(&DiscreteField::zeros(&s), &pv).unwrap(), 0.0);
        let one = DiscreteField::interpolate(&s, |_, _| 1.0);
        assert!((luxemburg_norm(&one, &pv).unwrap() - 1.0).abs() < 1e-12);
        let p3 = ExponentField::constant(&s, 3.0, ExponentMode::Solver).unwrap();
        let two = DiscreteField::interpolate(&s, |_, _| 2.0);
        assert!((luxemburg_norm(&two, &p3).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn constant_exponent_gives_classical_norm() {
        let s = space(6);
        let p = ExponentField::constant(&s, 3.5, ExponentMode::Solver).unwrap();
        let u = DiscreteField::interpolate(&s, |x, y| (3.0 * x).sin() + y * y - 0.3);
        let classical = modular(&u, &p).powf(1.0 / 3.5);
        let lux = luxemburg_norm(&u, &p).unwrap();
        assert!((lux - classical).abs() <= 1e-10 * classical);
    }

    #[test]
    fn modular_relation_branches() {
        let s = space(4);
        let p = ExponentField::from_fn(&s, ExponentMode::Solver, |x, _| 3.0 + x).unwrap();
        let two = DiscreteField::interpolate(&s, |_, _| 2.0);
        let r = check_modular_relations(&two, &p).unwrap();
        assert_eq!(r.regime, NormRegime::Above);
        assert!(r.modular > 8.0 && r.modular < 16.0);
        assert!(r.passed(1e-12));
        let half = DiscreteField::interpolate(&s, |_, _| 0.5);
        let r = check_modular_relations(&half, &p).unwrap();
        assert_eq!(r.regime, NormRegime::Below);
        assert!(r.modular > 0.0625 && r.modular < 0.125);
        assert!(r.passed(1e-12));
        let one = DiscreteField::interpolate(&s, |_, _| 1.0);
        let r = check_modular_relations(&one, &p).unwrap();
        assert_eq!(r.regime, NormRegime::Unit);
        assert!(r.passed(1e-12));
    }

    #[test]
    fn holder_examples() {
        let s = space(4);
        let p2 = ExponentField::constant(&s, 2.0, ExponentMode::Diagnostic).unwrap();
        let one = DiscreteField::interpolate(&s, |_, _| 1.0);
        let h = holder_pairing(&one, &one, &p2).unwrap();
        assert!((h.lhs - 1.0).abs() < 1e-13 && (h.rhs - 1.0).abs() < 1e-12);
        let h = holder_pairing(&DiscreteField::zeros(&s), &one, &p2).unwrap();
        assert_eq!(h.lhs, 0.0);
        assert!(h.rhs >= 0.0);
    }

    #[test]
    fn exponent_modes() {
        let s = space(2);
        assert!(ExponentField::constant(&s, 2.0, ExponentMode::Solver).is_err());
        assert!(ExponentField::constant(&s, 2.0, ExponentMode::Diagnostic).is_ok());
        assert!(ExponentField::constant(&s, 1.5, ExponentMode::Diagnostic).is_err());
        let p = ExponentField::from_fn(&s, ExponentMode::Solver, |x, y| 3.0 + x - y).unwrap();
        let c = p.conjugate();
        for (a, b) in p.values().iter().zip(c.values()) {
            assert!((1.0 / a + 1.0 / b - 1.0).abs() <= 1e-14);
        }
    }
}
