//! Manufactured solutions and convergence studies.
//!
//! When the right-hand side has no closed form it comes from a fine-grid
//! finite-difference oracle that shares no code with the assembly module:
//! `∇u*` by central differences, the flux `α ⟨A∇u*,∇u*⟩^{(p-2)/2} A∇u*`
//! evaluated pointwise, and its divergence by central differences again.

use std::fmt::Write as _;
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::assembly::{AssemblyError, ProblemData};
use crate::coefficients::{sym_apply, sym_quad, AlphaCoefficient, CoefficientError, MatrixField, SourceTerm};
use crate::expr::{ExprError, Expression};
use crate::geometry::{polygonal_disk_mesh, structured_square_mesh, DiscreteField, FeSpace, GridField, Mesh, MeshError};
use crate::inner_solver::InnerOptions;
use crate::outer_solver::{fixed_point_solve, OuterError, OuterOptions};
use crate::varexp::{gradient_luxemburg_norm, ExponentField, ExponentMode, VarExpError};

pub const BUILTIN_CASES: [&str; 3] = ["disk-p3", "square-p2-linear", "square-varp"];

/// Boundary segments of the coarsest disk mesh.
pub const DISK_BOUNDARY_SEGMENTS: usize = 8;

#[derive(Debug, Error)]
pub enum MmsError {
    #[error("unknown case {0:?} (expected one of disk-p3, square-p2-linear, square-varp)")]
    UnknownCase(String),
    #[error("a convergence study needs at least 3 levels, got {0}")]
    TooFewLevels(usize),
    #[error("exact solution is {value:e} at boundary point ({x}, {y})")]
    BoundaryTrace { x: f64, y: f64, value: f64 },
    #[error("{what}: {source}")]
    Expression {
        what: &'static str,
        #[source]
        source: ExprError,
    },
    #[error("level {level}: {source}")]
    Solve {
        level: usize,
        partial: Box<ConvergenceTable>,
        #[source]
        source: OuterError,
    },
    #[error(transparent)]
    Coefficient(#[from] CoefficientError),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error(transparent)]
    VarExp(#[from] VarExpError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CaseDomain {
    Square,
    Disk,
}

#[derive(Debug, Clone)]
pub enum CaseRhs {
    Expr(Expression),
    /// Fine-grid finite-difference oracle.
    Oracle,
}

#[derive(Debug, Clone)]
pub struct ManufacturedCase {
    pub name: String,
    pub exact_u: Expression,
    pub rhs: CaseRhs,
    pub domain: CaseDomain,
    /// Exponent in `(x, y)`.
    pub exponent: Expression,
    pub exponent_mode: ExponentMode,
    pub alpha: AlphaCoefficient,
    pub matrix: MatrixField,
}

fn xy(what: &'static str, src: &str) -> Result<Expression, MmsError> {
    Expression::parse(src, &["x", "y"]).map_err(|source| MmsError::Expression { what, source })
}

pub fn builtin_case(name: &str) -> Result<ManufacturedCase, MmsError> {
    let sines = "sin(pi*x)*sin(pi*y)";
    let case = match name {
        "disk-p3" => ManufacturedCase {
            name: name.into(),
            // (p-1)/p (1/2)^{1/(p-1)} (1 - r^{p/(p-1)}) with p = 3
            exact_u: xy("exact_u", "(2/3) * (1/2)^(1/2) * (1 - (x^2 + y^2)^(3/4))")?,
            rhs: CaseRhs::Expr(xy("f", "1")?),
            domain: CaseDomain::Disk,
            exponent: xy("p", "3")?,
            exponent_mode: ExponentMode::Solver,
            alpha: AlphaCoefficient::constant(1.0),
            matrix: MatrixField::identity(),
        },
        "square-p2-linear" => ManufacturedCase {
            name: name.into(),
            exact_u: xy("exact_u", sines)?,
            rhs: CaseRhs::Expr(xy("f", "2*pi^2*sin(pi*x)*sin(pi*y)")?),
            domain: CaseDomain::Square,
            exponent: xy("p", "2")?,
            exponent_mode: ExponentMode::Diagnostic,
            alpha: AlphaCoefficient::constant(1.0),
            matrix: MatrixField::identity(),
        },
        "square-varp" => ManufacturedCase {
            name: name.into(),
            exact_u: xy("exact_u", sines)?,
            rhs: CaseRhs::Oracle,
            domain: CaseDomain::Square,
            exponent: xy("p", "3 + 0.5*sin(pi*x)")?,
            exponent_mode: ExponentMode::Solver,
            alpha: AlphaCoefficient::constant(1.0),
            matrix: MatrixField::identity(),
        },
        other => return Err(MmsError::UnknownCase(other.to_string())),
    };
    Ok(case)
}

impl ManufacturedCase {
    /// Mesh of level `level ≥ 1`: square `n = 8·2^{level-1}`, disk refined
    /// `level` times from an 8-gon fan.
    pub fn mesh(&self, level: usize) -> Mesh {
        assert!(level >= 1, "levels start at 1");
        match self.domain {
            CaseDomain::Square => structured_square_mesh(8 << (level - 1)),
            CaseDomain::Disk => polygonal_disk_mesh(DISK_BOUNDARY_SEGMENTS, level),
        }
    }

    /// Largest `|u*|` over boundary nodes and 3-point Gauss points of
    /// boundary edges.
    pub fn boundary_trace(&self, mesh: &Mesh) -> Result<(f64, [f64; 2]), MmsError> {
        let g = 0.5 * (0.6f64).sqrt();
        let mut worst = (0.0, [0.0, 0.0]);
        let mut check = |p: [f64; 2]| -> Result<(), MmsError> {
            let v = self.exact_u.eval(&p).map_err(|source| MmsError::Expression { what: "exact_u", source })?;
            if v.abs() > worst.0 {
                worst = (v.abs(), p);
            }
            Ok(())
        };
        let directed: std::collections::HashSet<(usize, usize)> = mesh
            .triangles()
            .iter()
            .flat_map(|t| [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])])
            .collect();
        for t in mesh.triangles() {
            for k in 0..3 {
                let (i, j) = (t[k], t[(k + 1) % 3]);
                if directed.contains(&(j, i)) {
                    continue;
                }
                let (pi, pj) = (mesh.nodes()[i], mesh.nodes()[j]);
                for s in [0.0, 0.5 - g, 0.5, 0.5 + g] {
                    check([pi[0] + s * (pj[0] - pi[0]), pi[1] + s * (pj[1] - pi[1])])?;
                }
            }
        }
        Ok(worst)
    }

    /// Coefficient data for the solver on `space`. Oracle right-hand sides
    /// are sampled with `fine_n = max(512, 4 n)` cells per unit length,
    /// where `n = ⌈√2 / h⌉` (the cell count per unit length of a structured
    /// square mesh).
    pub fn problem(&self, space: &Arc<FeSpace>) -> Result<ProblemData, MmsError> {
        let exponent = ExponentField::from_expression(space, &self.exponent, self.exponent_mode)?;
        let source = match &self.rhs {
            CaseRhs::Expr(e) => SourceTerm::Expr(e.clone()),
            CaseRhs::Oracle => {
                let n = (std::f64::consts::SQRT_2 / space.mesh().max_edge_length()).ceil() as usize;
                let fine_n = (4 * n).max(512);
                SourceTerm::Grid(Arc::new(oracle_rhs(self, bounding_box(space.mesh()), fine_n)?))
            }
        };
        Ok(ProblemData::new(exponent, self.matrix.clone(), self.alpha.clone(), source)?)
    }
}

fn bounding_box(mesh: &Mesh) -> [[f64; 2]; 2] {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for p in mesh.nodes() {
        for d in 0..2 {
            lo[d] = lo[d].min(p[d]);
            hi[d] = hi[d].max(p[d]);
        }
    }
    [lo, hi]
}

/// `f = -div(α ⟨A∇u*,∇u*⟩^{(p-2)/2} A∇u*)` on a grid covering `bbox` with
/// spacing `1/fine_n`, both derivatives by central differences.
pub fn oracle_rhs(case: &ManufacturedCase, bbox: [[f64; 2]; 2], fine_n: usize) -> Result<GridField, MmsError> {
    assert!(fine_n >= 4);
    let h = 1.0 / fine_n as f64;
    let [lo, hi] = bbox;
    let nx = (((hi[0] - lo[0]) / h).ceil() as usize + 1).max(2);
    let ny = (((hi[1] - lo[1]) / h).ceil() as usize + 1).max(2);

    let u = |x: f64, y: f64| case.exact_u.eval(&[x, y]).map_err(|source| MmsError::Expression { what: "exact_u", source });
    let flux = |x: f64, y: f64| -> Result<[f64; 2], MmsError> {
        let g = [
            (u(x + h, y)? - u(x - h, y)?) / (2.0 * h),
            (u(x, y + h)? - u(x, y - h)?) / (2.0 * h),
        ];
        if g == [0.0, 0.0] {
            return Ok([0.0, 0.0]);
        }
        let a = case.matrix.eval(x, y)?;
        let p = case.exponent.eval(&[x, y]).map_err(|source| MmsError::Expression { what: "p", source })?;
        let alpha = case.alpha.eval(x, y, u(x, y)?)?;
        let c = alpha * sym_quad(&a, g).powf(0.5 * (p - 2.0));
        let ag = sym_apply(&a, g);
        Ok([c * ag[0], c * ag[1]])
    };
    let samples = crate::exec::map_range(nx * ny, |k| -> Result<f64, MmsError> {
        let (x, y) = (lo[0] + h * (k % nx) as f64, lo[1] + h * (k / nx) as f64);
        let div = (flux(x + h, y)?[0] - flux(x - h, y)?[0]) / (2.0 * h)
            + (flux(x, y + h)?[1] - flux(x, y - h)?[1]) / (2.0 * h);
        Ok(-div)
    });
    let values = samples.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(GridField::new(lo, h, nx, ny, values))
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceRow {
    pub level: usize,
    pub h: f64,
    pub nodes: usize,
    /// `max_i |u_h(xᵢ) - u*(xᵢ)|`.
    pub linf_error: f64,
    /// `|∇(u_h - I_h u*)|_{p(·)}`.
    pub energy_error: f64,
    /// `ln(e_{k-1}/e_k) / ln(h_{k-1}/h_k)` of the nodal error.
    pub observed_order: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceTable {
    pub case: String,
    pub rows: Vec<ConvergenceRow>,
}

impl ConvergenceTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("h,nodes,Linf_error,energy_error,observed_order\n");
        for r in &self.rows {
            let order = r.observed_order.map(|o| format!("{o:.6}")).unwrap_or_default();
            let _ = writeln!(out, "{:.16e},{},{:.16e},{:.16e},{}", r.h, r.nodes, r.linf_error, r.energy_error, order);
        }
        out
    }

    pub fn linf_strictly_decreasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].linf_error < w[0].linf_error)
    }

    pub fn last_order(&self) -> Option<f64> {
        self.rows.last().and_then(|r| r.observed_order)
    }
}

/// Solves `case` on each level and tabulates errors against `exact_u`.
pub fn convergence_study(
    case: &ManufacturedCase,
    levels: &[usize],
    inner: &InnerOptions,
    quadrature_degree: usize,
) -> Result<ConvergenceTable, MmsError> {
    if levels.len() < 3 {
        return Err(MmsError::TooFewLevels(levels.len()));
    }
    let outer = OuterOptions {
        monitor_bounds: false,
        ..Default::default()
    };
    let mut table = ConvergenceTable {
        case: case.name.clone(),
        rows: Vec::with_capacity(levels.len()),
    };
    for &level in levels {
        let mesh = case.mesh(level);
        if case.domain == CaseDomain::Square {
            let (value, [x, y]) = case.boundary_trace(&mesh)?;
            if value > 1e-10 {
                return Err(MmsError::BoundaryTrace { x, y, value });
            }
        }
        let h = mesh.max_edge_length();
        let space = FeSpace::new(mesh, quadrature_degree)?;
        let data = case.problem(&space)?;
        let (u, _) = match fixed_point_solve(&data, inner, &outer) {
            Ok(out) => out,
            Err(source) => {
                return Err(MmsError::Solve {
                    level,
                    partial: Box::new(table),
                    source,
                })
            }
        };
        let mut exact = Vec::with_capacity(space.mesh().num_nodes());
        for p in space.mesh().nodes() {
            let v = case.exact_u.eval(p).map_err(|source| MmsError::Expression { what: "exact_u", source })?;
            exact.push(if space.mesh().is_boundary(exact.len()) { 0.0 } else { v });
        }
        let exact = DiscreteField::from_values(&space, exact);
        let diff = u.sub(&exact);
        let linf_error = diff.max_abs();
        let energy_error = gradient_luxemburg_norm(&diff, data.exponent())?;
        let observed_order = table
            .rows
            .last()
            .map(|prev| (prev.linf_error / linf_error).ln() / (prev.h / h).ln());
        table.rows.push(ConvergenceRow {
            level,
            h,
            nodes: space.mesh().num_nodes(),
            linf_error,
            energy_error,
            observed_order,
        });
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn unknown_case_rejected() {
        assert!(matches!(builtin_case("cube"), Err(MmsError::UnknownCase(_))));
        for name in BUILTIN_CASES {
            assert_eq!(builtin_case(name).unwrap().name, name);
        }
    }

    #[test]
    fn disk_solution_satisfies_radial_equation() {
        // -(1/r)(r |u'| u')' = 1 checked by differences in r
        let c = builtin_case("disk-p3").unwrap();
        let u = |r: f64| c.exact_u.eval(&[r, 0.0]).unwrap();
        let h = 1e-4;
        let q = |r: f64| {
            let du = (u(r + h) - u(r - h)) / (2.0 * h);
            du.abs() * du
        };
        for r in [0.2, 0.5, 0.8] {
            let lhs = -((r + h) * q(r + h) - (r - h) * q(r - h)) / (2.0 * h) / r;
            assert!((lhs - 1.0).abs() < 1e-6, "{r}: {lhs}");
        }
        assert!(u(1.0).abs() < 1e-15);
    }

    #[test]
    fn linear_case_ratio() {
        let c = builtin_case("square-p2-linear").unwrap();
        let CaseRhs::Expr(f) = &c.rhs else { panic!() };
        for (x, y) in [(0.3, 0.4), (0.77, 0.1)] {
            let ratio = f.eval(&[x, y]).unwrap() / c.exact_u.eval(&[x, y]).unwrap();
            assert!((ratio - 2.0 * PI * PI).abs() < 1e-12);
        }
        let (trace, _) = c.boundary_trace(&c.mesh(1)).unwrap();
        assert!(trace <= 1e-10);
    }

    #[test]
    fn oracle_matches_laplacian() {
        let c = builtin_case("square-p2-linear").unwrap();
        let g = oracle_rhs(&c, [[0.0, 0.0], [1.0, 1.0]], 512).unwrap();
        let mut worst: f64 = 0.0;
        for j in 0..g.dims().1 {
            for i in 0..g.dims().0 {
                let [x, y] = g.point(i, j);
                worst = worst.max((g.at(i, j) - 2.0 * PI * PI * (PI * x).sin() * (PI * y).sin()).abs());
            }
        }
        assert!(worst <= 1e-3, "{worst}");
    }

    #[test]
    fn oracle_of_zero_is_zero() {
        let mut c = builtin_case("square-varp").unwrap();
        c.exact_u = Expression::constant(0.0, &["x", "y"]);
        let g = oracle_rhs(&c, [[0.0, 0.0], [1.0, 1.0]], 16).unwrap();
        assert!(g.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn oracle_reproduces_disk_source() {
        let c = builtin_case("disk-p3").unwrap();
        let g = oracle_rhs(&c, [[-1.0, -1.0], [1.0, 1.0]], 512).unwrap();
        for (x, y) in [(0.3, 0.2), (-0.5, 0.4), (0.1, -0.7), (0.6, 0.6)] {
            assert!((g.interpolate(x, y) - 1.0).abs() < 1e-2);
        }
    }

    #[test]
    fn study_needs_three_levels() {
        let c = builtin_case("square-p2-linear").unwrap();
        assert!(matches!(
            convergence_study(&c, &[1, 2], &InnerOptions::default(), 4),
            Err(MmsError::TooFewLevels(2))
        ));
    }

    #[test]
    fn csv_layout() {
        let t = ConvergenceTable {
            case: "x".into(),
            rows: vec![ConvergenceRow {
                level: 1,
                h: 0.5,
                nodes: 9,
                linf_error: 0.25,
                energy_error: 1.0,
                observed_order: None,
            }],
        };
        let csv = t.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "h,nodes,Linf_error,energy_error,observed_order");
        assert!(lines.next().unwrap().ends_with(",9,2.5000000000000000e-1,1.0000000000000000e0,"));
    }
}
