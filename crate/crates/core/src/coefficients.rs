//! Problem data: the matrix field `A(x)`, the bounded coefficient `α(x, t)`,
//! the source `f(x)`, and the two pointwise inequalities for the
//! anisotropic power `⟨Aξ, ξ⟩^{s/2}`.

use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::expr::{ExprError, Expression};
use crate::geometry::{DiscreteField, FeSpace, GridField};
use crate::varexp::{modular_of_samples, relative_slack, ExponentField};

#[derive(Debug, Error)]
pub enum CoefficientError {
    #[error("{what}: {source}")]
    Expression {
        what: &'static str,
        #[source]
        source: ExprError,
    },
    #[error("A(x) is not elliptic at ({x}, {y}): smallest eigenvalue {min_eig} < 1")]
    NotElliptic { x: f64, y: f64, min_eig: f64 },
    #[error("declared bounds must satisfy 0 < lambda <= Lambda (got {lambda}, {big_lambda})")]
    BadBounds { lambda: f64, big_lambda: f64 },
    #[error("alpha({x}, {y}, {t}) = {value} lies outside the declared [{lambda}, {big_lambda}]")]
    AlphaOutOfBounds {
        x: f64,
        y: f64,
        t: f64,
        value: f64,
        lambda: f64,
        big_lambda: f64,
    },
    #[error("source term is not finite at ({x}, {y})")]
    SourceNotFinite { x: f64, y: f64 },
}

fn expr_err(what: &'static str) -> impl Fn(ExprError) -> CoefficientError {
    move |source| CoefficientError::Expression { what, source }
}

/// Symmetric 2×2 matrix stored as `[a11, a12, a22]`.
pub type Sym2 = [f64; 3];

pub fn sym_apply(a: &Sym2, v: [f64; 2]) -> [f64; 2] {
    [a[0] * v[0] + a[1] * v[1], a[1] * v[0] + a[2] * v[1]]
}

/// `⟨A v, v⟩`.
pub fn sym_quad(a: &Sym2, v: [f64; 2]) -> f64 {
    a[0] * v[0] * v[0] + 2.0 * a[1] * v[0] * v[1] + a[2] * v[1] * v[1]
}

/// Smallest eigenvalue of a symmetric 2×2 matrix.
pub fn sym_min_eigenvalue(a: &Sym2) -> f64 {
    let mean = 0.5 * (a[0] + a[2]);
    let half_diff = 0.5 * (a[0] - a[2]);
    mean - half_diff.hypot(a[1])
}

/// Tolerance on `min eig(A) ≥ 1`.
pub const ELLIPTICITY_TOL: f64 = 1e-12;

/// Symmetric coefficient matrix field; only the upper triangle is stored.
#[derive(Debug, Clone)]
pub struct MatrixField {
    pub a11: Expression,
    pub a12: Expression,
    pub a22: Expression,
}

impl MatrixField {
    pub fn identity() -> MatrixField {
        MatrixField {
            a11: Expression::constant(1.0, &["x", "y"]),
            a12: Expression::constant(0.0, &["x", "y"]),
            a22: Expression::constant(1.0, &["x", "y"]),
        }
    }

    pub fn parse(a11: &str, a12: &str, a22: &str) -> Result<MatrixField, CoefficientError> {
        let v = ["x", "y"];
        Ok(MatrixField {
            a11: Expression::parse(a11, &v).map_err(expr_err("a11"))?,
            a12: Expression::parse(a12, &v).map_err(expr_err("a12"))?,
            a22: Expression::parse(a22, &v).map_err(expr_err("a22"))?,
        })
    }

    pub fn eval(&self, x: f64, y: f64) -> Result<Sym2, CoefficientError> {
        let p = [x, y];
        Ok([
            self.a11.eval(&p).map_err(expr_err("a11"))?,
            self.a12.eval(&p).map_err(expr_err("a12"))?,
            self.a22.eval(&p).map_err(expr_err("a22"))?,
        ])
    }

    /// Samples `A` at every quadrature point and checks `⟨Aξ,ξ⟩ ≥ |ξ|²`
    /// through the smallest eigenvalue.
    pub fn sample_checked(&self, space: &FeSpace) -> Result<Vec<Sym2>, CoefficientError> {
        space
            .qp_coords()
            .iter()
            .map(|&[x, y]| {
                let a = self.eval(x, y)?;
                let min_eig = sym_min_eigenvalue(&a);
                if min_eig < 1.0 - ELLIPTICITY_TOL {
                    return Err(CoefficientError::NotElliptic { x, y, min_eig });
                }
                Ok(a)
            })
            .collect()
    }
}

/// `α(x, y, t)` with declared bounds `0 < λ ≤ α ≤ Λ`.
#[derive(Debug, Clone)]
pub struct AlphaCoefficient {
    expr: Expression,
    lambda: f64,
    big_lambda: f64,
}

/// Default half-width of the `t` range sampled when validating `α`.
pub const DEFAULT_T_CHECK: f64 = 1e3;

impl AlphaCoefficient {
    pub fn new(expr: Expression, lambda: f64, big_lambda: f64) -> Result<Self, CoefficientError> {
        if !(lambda > 0.0 && lambda <= big_lambda && big_lambda.is_finite()) {
            return Err(CoefficientError::BadBounds { lambda, big_lambda });
        }
        Ok(AlphaCoefficient {
            expr,
            lambda,
            big_lambda,
        })
    }

    pub fn parse(src: &str, lambda: f64, big_lambda: f64) -> Result<Self, CoefficientError> {
        let expr = Expression::parse(src, &["x", "y", "t"]).map_err(expr_err("alpha"))?;
        Self::new(expr, lambda, big_lambda)
    }

    pub fn constant(value: f64) -> AlphaCoefficient {
        Self::new(Expression::constant(value, &["x", "y", "t"]), value, value)
            .expect("positive constant")
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn big_lambda(&self) -> f64 {
        self.big_lambda
    }

    pub fn expression(&self) -> &Expression {
        &self.expr
    }

    /// True when `α` does not depend on the solution value `t`.
    pub fn independent_of_t(&self) -> bool {
        !self.expr.depends_on("t")
    }

    pub fn eval(&self, x: f64, y: f64, t: f64) -> Result<f64, CoefficientError> {
        self.expr.eval(&[x, y, t]).map_err(expr_err("alpha"))
    }

    /// Evaluates `α(x, v(x))` at quadrature points from `v`'s samples there.
    pub fn sample_frozen(&self, space: &FeSpace, v_qp: &[f64]) -> Result<Vec<f64>, CoefficientError> {
        space
            .qp_coords()
            .iter()
            .zip(v_qp)
            .map(|(&[x, y], &t)| self.eval(x, y, t))
            .collect()
    }

    /// Spot-checks the declared bounds on every quadrature point crossed with
    /// `t_samples` values spread over `[-t_check, t_check]`.
    pub fn validate(&self, space: &FeSpace, t_check: f64, t_samples: usize) -> Result<(), CoefficientError> {
        let m = t_samples.max(2);
        let ts: Vec<f64> = (0..m)
            .map(|k| -t_check + 2.0 * t_check * k as f64 / (m - 1) as f64)
            .chain([0.0, 1.0, -1.0])
            .collect();
        let results = crate::exec::map_range(space.num_qps(), |q| {
            let [x, y] = space.qp_coords()[q];
            for &t in &ts {
                let value = self.eval(x, y, t)?;
                if !(value >= self.lambda && value <= self.big_lambda) {
                    return Err(CoefficientError::AlphaOutOfBounds {
                        x,
                        y,
                        t,
                        value,
                        lambda: self.lambda,
                        big_lambda: self.big_lambda,
                    });
                }
            }
            Ok(())
        });
        results.into_iter().collect()
    }
}

/// Right-hand side `f`.
#[derive(Debug, Clone)]
pub enum SourceTerm {
    /// Expression in `x`, `y`.
    Expr(Expression),
    /// P1 field on the solver mesh.
    Nodal(DiscreteField),
    /// Gridded samples read by bilinear interpolation.
    Grid(Arc<GridField>),
}

impl SourceTerm {
    pub fn parse(src: &str) -> Result<SourceTerm, CoefficientError> {
        Ok(SourceTerm::Expr(
            Expression::parse(src, &["x", "y"]).map_err(expr_err("f"))?,
        ))
    }

    pub fn constant(value: f64) -> SourceTerm {
        SourceTerm::Expr(Expression::constant(value, &["x", "y"]))
    }

    pub fn sample(&self, space: &Arc<FeSpace>) -> Result<Vec<f64>, CoefficientError> {
        let values = match self {
            SourceTerm::Expr(e) => space
                .qp_coords()
                .iter()
                .map(|p| e.eval(p))
                .collect::<Result<Vec<_>, _>>()
                .map_err(expr_err("f"))?,
            SourceTerm::Nodal(field) => {
                assert!(Arc::ptr_eq(field.space(), space), "source lives on another mesh");
                field.values_at_qps()
            }
            SourceTerm::Grid(g) => space.qp_coords().iter().map(|p| g.interpolate(p[0], p[1])).collect(),
        };
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            let [x, y] = space.qp_coords()[k];
            return Err(CoefficientError::SourceNotFinite { x, y });
        }
        Ok(values)
    }
}

/// `∫ |f|^{p'(x)} dx` from quadrature samples of `f`.
pub fn source_conjugate_modular(f_qp: &[f64], p: &ExponentField) -> f64 {
    modular_of_samples(f_qp, p.conjugate().values(), p.space().qp_weights())
}

/// Both sides of a pointwise inequality `lhs ≥ rhs`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InequalitySides {
    pub lhs: f64,
    pub rhs: f64,
}

impl InequalitySides {
    /// `(lhs - rhs) / max(1, |lhs|, |rhs|)`; negative means violated.
    pub fn slack(&self) -> f64 {
        relative_slack(self.rhs, self.lhs)
    }
}

fn anisotropic_power(a: &Sym2, xi: [f64; 2], s: f64) -> f64 {
    let q = sym_quad(a, xi);
    if q <= 0.0 {
        0.0
    } else {
        q.powf(0.5 * s)
    }
}

/// Clarkson-type inequality for `F(ξ) = ⟨Aξ,ξ⟩^{s/2}`, `s ≥ 2`:
/// `(F(ξ₁) + F(ξ₂))/2 ≥ F((ξ₁+ξ₂)/2) + F((ξ₁−ξ₂)/2)`.
pub fn check_clarkson(xi1: [f64; 2], xi2: [f64; 2], a: &Sym2, s: f64) -> InequalitySides {
    let lhs = 0.5 * (anisotropic_power(a, xi1, s) + anisotropic_power(a, xi2, s));
    let plus = [0.5 * (xi1[0] + xi2[0]), 0.5 * (xi1[1] + xi2[1])];
    let minus = [0.5 * (xi1[0] - xi2[0]), 0.5 * (xi1[1] - xi2[1])];
    let rhs = anisotropic_power(a, plus, s) + anisotropic_power(a, minus, s);
    InequalitySides { lhs, rhs }
}

/// Gradient inequality of the convex `F(ξ) = ⟨Aξ,ξ⟩^{s/2}`:
/// `F(ξ₂) ≥ F(ξ₁) + s ⟨Aξ₁,ξ₁⟩^{(s−2)/2} ⟨Aξ₁, ξ₂−ξ₁⟩`.
/// At `ξ₁ = 0` the linear term is taken as its limit 0.
pub fn check_monotonicity(xi1: [f64; 2], xi2: [f64; 2], a: &Sym2, s: f64) -> InequalitySides {
    let lhs = anisotropic_power(a, xi2, s);
    let q1 = sym_quad(a, xi1);
    let linear = if q1 <= 0.0 {
        0.0
    } else {
        let a_xi1 = sym_apply(a, xi1);
        let d = [xi2[0] - xi1[0], xi2[1] - xi1[1]];
        s * q1.powf(0.5 * (s - 2.0)) * (a_xi1[0] * d[0] + a_xi1[1] * d[1])
    };
    InequalitySides {
        lhs,
        rhs: anisotropic_power(a, xi1, s) + linear,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::structured_square_mesh;
    use crate::varexp::ExponentMode;

    #[test]
    fn min_eigenvalue_matches_direction_sweep() {
        let mats: [Sym2; 4] = [[1.0, 0.0, 1.0], [2.0, 0.5, 1.5], [3.0, -1.2, 1.8], [1.0, 0.999, 1.0]];
        for a in mats {
            let sweep = (0..360)
                .map(|k| {
                    let th = (k as f64).to_radians();
                    sym_quad(&a, [th.cos(), th.sin()])
                })
                .fold(f64::INFINITY, f64::min);
            // The sweep misses the exact minimizer by at most half a degree.
            let exact = sym_min_eigenvalue(&a);
            assert!(sweep >= exact - 1e-10);
            assert!(sweep - exact <= (a[0] - a[2]).hypot(2.0 * a[1]) * (0.5f64.to_radians()).powi(2) * 1.01 + 1e-14);
        }
    }

    #[test]
    fn ellipticity_enforced() {
        let space = FeSpace::new(structured_square_mesh(2), 4).unwrap();
        assert!(MatrixField::identity().sample_checked(&space).is_ok());
        let ok = MatrixField::parse("2 + x", "0.5", "2").unwrap();
        assert!(ok.sample_checked(&space).is_ok());
        let bad = MatrixField::parse("1", "0.5", "1").unwrap();
        assert!(matches!(
            bad.sample_checked(&space),
            Err(CoefficientError::NotElliptic { .. })
        ));
    }

    #[test]
    fn alpha_bounds() {
        let space = FeSpace::new(structured_square_mesh(2), 4).unwrap();
        let a = AlphaCoefficient::parse("1 + 1/(1+t^2)", 1.0, 2.0).unwrap();
        assert!(!a.independent_of_t());
        assert!(a.validate(&space, DEFAULT_T_CHECK, 41).is_ok());
        let low = AlphaCoefficient::parse("0.5", 1.0, 1.0).unwrap();
        assert!(matches!(
            low.validate(&space, DEFAULT_T_CHECK, 41),
            Err(CoefficientError::AlphaOutOfBounds { .. })
        ));
        assert!(AlphaCoefficient::parse("1", 0.0, 1.0).is_err());
        assert!(AlphaCoefficient::parse("1", 2.0, 1.0).is_err());
        assert!(AlphaCoefficient::constant(1.0).independent_of_t());
    }

    #[test]
    fn clarkson_identity_cases() {
        let a = [2.0, 0.3, 1.5];
        let xi = [0.7, -1.1];
        let same = check_clarkson(xi, xi, &a, 3.3);
        assert_eq!(same.lhs, same.rhs);
        let opposite = check_clarkson(xi, [-xi[0], -xi[1]], &a, 3.3);
        assert!((opposite.lhs - opposite.rhs).abs() <= 1e-15 * opposite.lhs);
        // s = 2, A = I: parallelogram law.
        let id = [1.0, 0.0, 1.0];
        let c = check_clarkson([0.3, 2.0], [-1.4, 0.25], &id, 2.0);
        assert!((c.lhs - c.rhs).abs() <= 1e-13);
    }

    #[test]
    fn monotonicity_identity_cases() {
        let a = [1.5, -0.2, 1.1];
        let xi = [0.4, 0.9];
        let eq = check_monotonicity(xi, xi, &a, 2.7);
        assert_eq!(eq.lhs, eq.rhs);
        let zero = check_monotonicity([0.0, 0.0], xi, &a, 2.5);
        assert_eq!(zero.rhs, 0.0);
        assert!(zero.lhs >= 0.0);
    }

    #[test]
    fn source_sampling_and_conjugate_modular() {
        let space = FeSpace::new(structured_square_mesh(4), 4).unwrap();
        let f = SourceTerm::constant(1.0).sample(&space).unwrap();
        let p = ExponentField::constant(&space, 3.0, ExponentMode::Solver).unwrap();
        assert!((source_conjugate_modular(&f, &p) - 1.0).abs() < 1e-13);
        let bad = SourceTerm::parse("1/(x-x)").unwrap();
        assert!(bad.sample(&space).is_err());
    }
}
