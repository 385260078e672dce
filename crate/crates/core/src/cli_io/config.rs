//! Run configuration: a TOML document with `[domain]`, `[problem]`,
//! `[inner]`, `[outer]`, `[lambda1]`, `[quadrature]` and `[output]` tables.
//!
//! ```toml
//! seed = 42
//!
//! [domain]
//! kind = "square"      # square | disk | file
//! n = 16
//!
//! [problem]
//! p = "3 + 0.5*sin(pi*x)"
//! alpha = "1 + 1/(1 + t^2)"
//! lambda = 1.0
//! Lambda = 2.0
//! f = "1"
//! ```

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Deserialize;
use thiserror::Error;

use super::fields::{read_field_csv, FieldError, FieldFormat};
use crate::assembly::{AssemblyError, ProblemData};
use crate::coefficients::{AlphaCoefficient, CoefficientError, MatrixField, SourceTerm, DEFAULT_T_CHECK};
use crate::expr::{ExprError, Expression};
use crate::geometry::{polygonal_disk_mesh, structured_square_mesh, FeSpace, Mesh, MeshError};
use crate::inner_solver::InnerOptions;
use crate::mms::DISK_BOUNDARY_SEGMENTS;
use crate::outer_solver::{Lambda1Options, OuterOptions};
use crate::varexp::{ExponentField, ExponentMode, VarExpError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Syntax(String),
    #[error("missing key `{0}`")]
    MissingKey(&'static str),
    #[error("`{key}`: {source}")]
    Expression {
        key: &'static str,
        #[source]
        source: ExprError,
    },
    #[error("`{key}`: {message}")]
    Value { key: &'static str, message: String },
    #[error("invariant violation: {0}")]
    Invariant(String),
    #[error("mesh: {0}")]
    Mesh(#[from] MeshError),
    #[error("source field: {0}")]
    Field(#[from] FieldError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainKind {
    Square,
    Disk,
    File,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSection {
    pub kind: DomainKind,
    pub n: Option<usize>,
    pub n_boundary: Option<usize>,
    pub refinement: Option<usize>,
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProblem {
    p: Option<String>,
    alpha: Option<String>,
    lambda: Option<f64>,
    #[serde(rename = "Lambda")]
    big_lambda: Option<f64>,
    a11: Option<String>,
    a12: Option<String>,
    a22: Option<String>,
    f: Option<String>,
    f_file: Option<PathBuf>,
    #[serde(default)]
    diagnostic: bool,
    t_check: Option<f64>,
    t_samples: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOuter {
    fix_tol: Option<f64>,
    max_outer: Option<usize>,
    theta: Option<f64>,
    min_theta: Option<f64>,
    monitor_bounds: Option<bool>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLambda1 {
    restarts: Option<usize>,
    max_iters: Option<usize>,
    rel_tol: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawQuadrature {
    degree: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    dir: Option<PathBuf>,
    formats: Option<Vec<FieldFormat>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    seed: Option<u64>,
    domain: Option<DomainSection>,
    problem: Option<RawProblem>,
    inner: Option<InnerOptions>,
    outer: Option<RawOuter>,
    lambda1: Option<RawLambda1>,
    quadrature: Option<RawQuadrature>,
    output: Option<RawOutput>,
}

#[derive(Debug, Clone)]
pub enum SourceSpec {
    Expr(Expression),
    File(PathBuf),
}

/// Validated configuration. Expressions are parsed; nothing is sampled yet.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub seed: u64,
    pub domain: DomainSection,
    pub exponent: Expression,
    pub diagnostic: bool,
    pub alpha: AlphaCoefficient,
    pub matrix: MatrixField,
    pub source: SourceSpec,
    pub t_check: f64,
    pub t_samples: usize,
    pub inner: InnerOptions,
    pub outer: OuterOptions,
    pub quadrature_degree: usize,
    pub output_dir: PathBuf,
    pub formats: Vec<FieldFormat>,
    /// Directory relative paths in the file are resolved against.
    pub base_dir: PathBuf,
}

/// Mesh, space and sampled coefficients of a validated configuration.
#[derive(Debug, Clone)]
pub struct BuiltProblem {
    pub space: Arc<FeSpace>,
    pub data: ProblemData,
}

fn expression(key: &'static str, src: &str, vars: &[&str]) -> Result<Expression, ConfigError> {
    Expression::parse(src, vars).map_err(|source| ConfigError::Expression { key, source })
}

fn positive(key: &'static str, v: f64) -> Result<f64, ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(ConfigError::Value {
            key,
            message: format!("must be positive and finite, got {v}"),
        })
    }
}

fn coefficient_error(e: CoefficientError) -> ConfigError {
    match e {
        CoefficientError::Expression { what, source } => ConfigError::Expression { key: what, source },
        other => ConfigError::Invariant(other.to_string()),
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        RunConfig::from_str_in(&text, &base)
    }

    /// Parses configuration text; relative paths resolve against `base_dir`.
    pub fn from_str_in(text: &str, base_dir: &Path) -> Result<RunConfig, ConfigError> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string().trim_end().to_string()))?;
        let domain = raw.domain.ok_or(ConfigError::MissingKey("domain"))?;
        match domain.kind {
            DomainKind::Square => {
                let n = domain.n.ok_or(ConfigError::MissingKey("domain.n"))?;
                if n == 0 {
                    return Err(ConfigError::Value {
                        key: "domain.n",
                        message: "must be at least 1".into(),
                    });
                }
            }
            DomainKind::Disk => {
                if domain.n_boundary.is_some_and(|n| n < 8) {
                    return Err(ConfigError::Value {
                        key: "domain.n_boundary",
                        message: "must be at least 8".into(),
                    });
                }
            }
            DomainKind::File => {
                domain.path.as_ref().ok_or(ConfigError::MissingKey("domain.path"))?;
            }
        }

        let problem = raw.problem.ok_or(ConfigError::MissingKey("problem"))?;
        let exponent = expression("p", problem.p.as_deref().ok_or(ConfigError::MissingKey("problem.p"))?, &["x", "y"])?;
        let lambda = problem.lambda.ok_or(ConfigError::MissingKey("problem.lambda"))?;
        let big_lambda = problem.big_lambda.ok_or(ConfigError::MissingKey("problem.Lambda"))?;
        let alpha_src = problem.alpha.as_deref().ok_or(ConfigError::MissingKey("problem.alpha"))?;
        let alpha = AlphaCoefficient::new(expression("alpha", alpha_src, &["x", "y", "t"])?, lambda, big_lambda)
            .map_err(coefficient_error)?;
        let matrix = MatrixField::parse(
            problem.a11.as_deref().unwrap_or("1"),
            problem.a12.as_deref().unwrap_or("0"),
            problem.a22.as_deref().unwrap_or("1"),
        )
        .map_err(coefficient_error)?;
        let source = match (problem.f, problem.f_file) {
            (Some(_), Some(_)) => {
                return Err(ConfigError::Value {
                    key: "problem.f",
                    message: "give either f or f_file, not both".into(),
                })
            }
            (Some(f), None) => SourceSpec::Expr(expression("f", &f, &["x", "y"])?),
            (None, Some(path)) => SourceSpec::File(path),
            (None, None) => return Err(ConfigError::MissingKey("problem.f")),
        };
        let t_check = positive("problem.t_check", problem.t_check.unwrap_or(DEFAULT_T_CHECK))?;
        let t_samples = problem.t_samples.unwrap_or(41);

        let inner = raw.inner.unwrap_or_default();
        inner.validate().map_err(|e| ConfigError::Value {
            key: "inner",
            message: e.to_string(),
        })?;

        let mut outer = OuterOptions {
            t_check,
            t_samples,
            ..Default::default()
        };
        if let Some(o) = raw.outer {
            outer.fix_tol = o.fix_tol.unwrap_or(outer.fix_tol);
            outer.max_outer = o.max_outer.unwrap_or(outer.max_outer);
            outer.theta = o.theta.unwrap_or(outer.theta);
            outer.min_theta = o.min_theta.unwrap_or(outer.min_theta.min(outer.theta));
            outer.monitor_bounds = o.monitor_bounds.unwrap_or(outer.monitor_bounds);
        }
        let seed = raw.seed.unwrap_or(42);
        outer.lambda1 = Lambda1Options {
            seed,
            ..Default::default()
        };
        if let Some(l) = raw.lambda1 {
            outer.lambda1.restarts = l.restarts.unwrap_or(outer.lambda1.restarts);
            outer.lambda1.max_iters = l.max_iters.unwrap_or(outer.lambda1.max_iters);
            outer.lambda1.rel_tol = l.rel_tol.unwrap_or(outer.lambda1.rel_tol);
        }
        if outer.lambda1.restarts == 0 {
            return Err(ConfigError::Value {
                key: "lambda1.restarts",
                message: "must be at least 1".into(),
            });
        }
        outer.validate().map_err(|e| ConfigError::Value {
            key: "outer",
            message: e.to_string(),
        })?;

        let quadrature_degree = raw.quadrature.map_or(4, |q| q.degree);
        if !(1..=5).contains(&quadrature_degree) {
            return Err(ConfigError::Value {
                key: "quadrature.degree",
                message: format!("must lie in 1..=5, got {quadrature_degree}"),
            });
        }
        let (output_dir, formats) = match raw.output {
            Some(o) => (
                o.dir.unwrap_or_else(|| PathBuf::from("out")),
                o.formats.unwrap_or_else(|| vec![FieldFormat::Csv, FieldFormat::Vtk]),
            ),
            None => (PathBuf::from("out"), vec![FieldFormat::Csv, FieldFormat::Vtk]),
        };

        Ok(RunConfig {
            seed,
            domain,
            exponent,
            diagnostic: problem.diagnostic,
            alpha,
            matrix,
            source,
            t_check,
            t_samples,
            inner,
            outer,
            quadrature_degree,
            output_dir,
            formats,
            base_dir: base_dir.to_path_buf(),
        })
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn mesh(&self) -> Result<Mesh, ConfigError> {
        let d = &self.domain;
        Ok(match d.kind {
            DomainKind::Square => structured_square_mesh(d.n.expect("checked on parse")),
            DomainKind::Disk => polygonal_disk_mesh(
                d.n_boundary.unwrap_or(DISK_BOUNDARY_SEGMENTS),
                d.refinement.unwrap_or(3),
            ),
            DomainKind::File => Mesh::load(self.resolve(d.path.as_ref().expect("checked on parse")))?,
        })
    }

    /// Builds the mesh and samples every coefficient. `require_solver_exponent`
    /// demands `p > 2` unless the file sets `diagnostic = true`.
    pub fn build(&self, require_solver_exponent: bool) -> Result<BuiltProblem, ConfigError> {
        let space = FeSpace::new(self.mesh()?, self.quadrature_degree)?;
        if space.num_free() == 0 {
            return Err(ConfigError::Value {
                key: "domain",
                message: "mesh has no interior nodes".into(),
            });
        }
        let mode = if require_solver_exponent && !self.diagnostic {
            ExponentMode::Solver
        } else {
            ExponentMode::Diagnostic
        };
        let exponent = ExponentField::from_expression(&space, &self.exponent, mode).map_err(|e| match e {
            VarExpError::Expression(source) => ConfigError::Expression { key: "p", source },
            other => ConfigError::Invariant(other.to_string()),
        })?;
        self.alpha
            .validate(&space, self.t_check, self.t_samples)
            .map_err(coefficient_error)?;
        let source = match &self.source {
            SourceSpec::Expr(e) => SourceTerm::Expr(e.clone()),
            SourceSpec::File(path) => SourceTerm::Nodal(read_field_csv(&self.resolve(path), &space)?),
        };
        let data = ProblemData::new(exponent, self.matrix.clone(), self.alpha.clone(), source).map_err(|e| match e {
            AssemblyError::Coefficient(c) => coefficient_error(c),
            other => ConfigError::Invariant(other.to_string()),
        })?;
        Ok(BuiltProblem { space, data })
    }
}

/// Reads, validates and builds a configuration file.
pub fn parse_config(path: &Path, require_solver_exponent: bool) -> Result<(RunConfig, BuiltProblem), ConfigError> {
    let config = RunConfig::from_file(path)?;
    let built = config.build(require_solver_exponent)?;
    Ok((config, built))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[domain]
kind = "square"
n = 16

[problem]
p = "3"
alpha = "1"
lambda = 1.0
Lambda = 1.0
f = "1"
"#;

    fn parse(text: &str) -> Result<RunConfig, ConfigError> {
        RunConfig::from_str_in(text, Path::new("."))
    }

    #[test]
    fn minimal_config_is_valid() {
        let c = parse(MINIMAL).unwrap();
        assert_eq!(c.seed, 42);
        assert_eq!(c.quadrature_degree, 4);
        assert_eq!(c.inner, InnerOptions::default());
        assert_eq!(c.outer.fix_tol, 1e-8);
        let built = c.build(true).unwrap();
        assert_eq!(built.space.mesh().num_nodes(), 17 * 17);
        assert_eq!(built.data.exponent().p_minus(), 3.0);
    }

    #[test]
    fn syntax_error_reports_offset() {
        let text = MINIMAL.replace("p = \"3\"", "p = \"2.5-?\"");
        match parse(&text) {
            Err(ConfigError::Expression { key: "p", source: ExprError::Syntax { offset, .. } }) => assert_eq!(offset, 4),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn alpha_below_lambda_is_invariant_violation() {
        let text = MINIMAL.replace("alpha = \"1\"", "alpha = \"0.5\"");
        let c = parse(&text).unwrap();
        assert!(matches!(c.build(true), Err(ConfigError::Invariant(_))));
    }

    #[test]
    fn missing_and_unknown_keys() {
        let text = MINIMAL.replace("f = \"1\"", "");
        assert!(matches!(parse(&text), Err(ConfigError::MissingKey("problem.f"))));
        let text = MINIMAL.replace("f = \"1\"", "f = \"1\"\ng = 2");
        assert!(matches!(parse(&text), Err(ConfigError::Syntax(_))));
        let text = MINIMAL.replace("Lambda = 1.0", "Lambda = 0.5");
        assert!(matches!(parse(&text), Err(ConfigError::Invariant(_))));
    }

    #[test]
    fn exponent_admissibility_depends_on_mode() {
        let text = MINIMAL.replace("p = \"3\"", "p = \"2\"");
        let c = parse(&text).unwrap();
        assert!(matches!(c.build(true), Err(ConfigError::Invariant(_))));
        assert!(c.build(false).is_ok());
        let text = text.replace("f = \"1\"", "f = \"1\"\ndiagnostic = true");
        assert!(parse(&text).unwrap().build(true).is_ok());
    }

    #[test]
    fn option_overrides() {
        let text = format!("seed = 7\n{MINIMAL}\n[inner]\ngrad_tol = 1e-9\n[outer]\nmax_outer = 5\ntheta = 0.5\n[lambda1]\nrestarts = 2\n[quadrature]\ndegree = 5\n[output]\ndir = \"res\"\nformats = [\"vtk\"]\n");
        let c = parse(&text).unwrap();
        assert_eq!(c.inner.grad_tol, 1e-9);
        assert_eq!((c.outer.max_outer, c.outer.theta, c.outer.min_theta), (5, 0.5, 1.0 / 16.0));
        assert_eq!((c.outer.lambda1.restarts, c.outer.lambda1.seed), (2, 7));
        assert_eq!(c.quadrature_degree, 5);
        assert_eq!(c.formats, vec![FieldFormat::Vtk]);
        let bad = format!("{MINIMAL}\n[outer]\ntheta = 1.5\n");
        assert!(matches!(parse(&bad), Err(ConfigError::Value { key: "outer", .. })));
    }
}
