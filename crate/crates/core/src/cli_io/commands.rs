use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use super::config::{parse_config, BuiltProblem, RunConfig};
use super::fields::write_field;
use super::report::{self, Lambda1Summary, MeshSummary, ProblemSummary, SolveSummary};
use super::{CliError, ConfigError};
use crate::check::run_checks;
use crate::coefficients::source_conjugate_modular;
use crate::geometry::{polygonal_disk_mesh, structured_square_mesh, DiscreteField, FeSpace, Mesh};
use crate::inner_solver::InnerOptions;
use crate::mms::{builtin_case, convergence_study, MmsError, DISK_BOUNDARY_SEGMENTS};
use crate::outer_solver::{estimate_lambda1, fixed_point_solve, lemma2_constants, OuterError};
use crate::varexp::VarExpError;

#[derive(Debug, Parser)]
#[command(name = "apx", version, about = "P1 finite-element solver for anisotropic variable-exponent Dirichlet problems")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the nonlinear problem described by a configuration file.
    Solve {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides `output.dir`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Estimate the Rayleigh-quotient constant λ₁ for the configured exponent.
    Lambda1 {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Convergence study for a built-in manufactured solution.
    Mms {
        /// disk-p3 | square-p2-linear | square-varp
        #[arg(long)]
        case: String,
        #[arg(long, default_value_t = 3)]
        levels: usize,
        #[arg(long, default_value_t = 4)]
        quadrature: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Randomized inequality suite.
    Check {
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 10_000)]
        draws: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate or inspect mesh files.
    Mesh {
        #[command(subcommand)]
        action: MeshCommand,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MeshKind {
    Square,
    Disk,
}

#[derive(Debug, Subcommand)]
pub enum MeshCommand {
    Gen {
        #[arg(long, value_enum)]
        kind: MeshKind,
        #[arg(long, default_value_t = 16)]
        n: usize,
        #[arg(long, default_value_t = DISK_BOUNDARY_SEGMENTS)]
        n_boundary: usize,
        #[arg(long, default_value_t = 3)]
        refinement: usize,
        #[arg(long)]
        out: PathBuf,
    },
    Info {
        path: PathBuf,
        #[arg(long)]
        json: bool,
    },
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(io_err(path))
}

fn output_dir(config: &RunConfig, cli_out: Option<PathBuf>) -> Result<PathBuf, CliError> {
    let dir = cli_out.unwrap_or_else(|| config.resolve(&config.output_dir));
    std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    Ok(dir)
}

fn write_fields(config: &RunConfig, dir: &Path, stem: &str, u: &DiscreteField) -> Result<(), CliError> {
    for &format in &config.formats {
        write_field(u, format, &dir.join(format!("{stem}.{}", format.extension())))?;
    }
    Ok(())
}

fn mesh_summary(space: &FeSpace) -> MeshSummary {
    let mesh = space.mesh();
    MeshSummary {
        nodes: mesh.num_nodes(),
        triangles: mesh.num_triangles(),
        free_nodes: space.num_free(),
        h_max: mesh.max_edge_length(),
        min_angle_degrees: mesh.min_angle_degrees(),
    }
}

fn problem_summary(built: &BuiltProblem) -> ProblemSummary {
    let d = &built.data;
    ProblemSummary {
        p_minus: d.exponent().p_minus(),
        p_plus: d.exponent().p_plus(),
        exponent_mode: d.exponent().mode(),
        lambda: d.alpha().lambda(),
        big_lambda: d.alpha().big_lambda(),
        alpha_depends_on_t: !d.alpha().independent_of_t(),
    }
}

fn outer_error(e: OuterError) -> CliError {
    match e {
        OuterError::InvalidOptions(m) => CliError::Usage(m),
        OuterError::NoFreeNodes => CliError::Config(ConfigError::Value {
            key: "domain",
            message: "mesh has no interior nodes".into(),
        }),
        e @ (OuterError::NonpositiveDenominator { .. } | OuterError::Coefficient(_)) => CliError::Invariant(e.to_string()),
        OuterError::VarExp(e @ VarExpError::ExponentOutOfRange { .. }) => CliError::Invariant(e.to_string()),
        other => CliError::NonConvergence(other.to_string()),
    }
}

/// Bound slacks may undershoot zero by rounding only.
const BOUND_SLACK_TOL: f64 = 1e-6;

fn solve(config_path: &Path, out: Option<PathBuf>) -> Result<String, CliError> {
    let (config, built) = parse_config(config_path, true)?;
    let dir = output_dir(&config, out)?;
    let result = fixed_point_solve(&built.data, &config.inner, &config.outer);
    let (u, solve_report, failure) = match result {
        Ok((u, r)) => (u, r, None),
        Err(OuterError::MaxOuterExceeded(partial)) => {
            let msg = format!(
                "fixed-point iteration stopped after {} iterations (last difference {:e})",
                partial.report.outer_iterations,
                partial.report.last_difference()
            );
            (partial.field, partial.report, Some(CliError::NonConvergence(msg)))
        }
        Err(e) => return Err(outer_error(e)),
    };
    let summary = SolveSummary {
        command: "solve",
        seed: config.seed,
        mesh: mesh_summary(&built.space),
        problem: problem_summary(&built),
        constants_estimated: solve_report.constants.is_some(),
        solve: solve_report,
    };
    write_fields(&config, &dir, "solution", &u)?;
    let text = report::solve_text(&summary);
    write(&dir.join("report.txt"), &text)?;
    write(&dir.join("report.json"), &report::to_json(&summary))?;
    if let Some(f) = failure {
        return Err(f);
    }
    if let Some((l2, r1)) = summary.solve.min_bound_slacks() {
        if l2 < -BOUND_SLACK_TOL || r1 < -BOUND_SLACK_TOL {
            return Err(CliError::Invariant(format!(
                "a-priori bound violated (gradient-modular slack {l2:e}, modular slack {r1:e})"
            )));
        }
    }
    if let Some(sc) = &summary.solve.self_consistency {
        if !sc.passed {
            return Err(CliError::Invariant(format!(
                "weak residual {:e} exceeds {:e} with alpha frozen at the solution",
                sc.max_residual, sc.tol
            )));
        }
    }
    Ok(text)
}

fn lambda1(config_path: &Path, out: Option<PathBuf>) -> Result<String, CliError> {
    let (config, built) = parse_config(config_path, false)?;
    let dir = output_dir(&config, out)?;
    let est = estimate_lambda1(&built.space, built.data.exponent(), &config.outer.lambda1).map_err(outer_error)?;
    let f_conj = source_conjugate_modular(built.data.source_qp(), built.data.exponent());
    let constants = lemma2_constants(
        f_conj,
        built.data.exponent().p_plus(),
        built.data.alpha().lambda(),
        est.value,
    )
    .ok();
    let summary = Lambda1Summary {
        command: "lambda1",
        seed: config.seed,
        mesh: mesh_summary(&built.space),
        problem: problem_summary(&built),
        value: est.value,
        restarts_used: est.restarts_used,
        start_values: est.start_values.clone(),
        constants,
    };
    write_fields(&config, &dir, "lambda1_minimizer", &est.minimizer)?;
    let text = report::lambda1_text(&summary);
    write(&dir.join("lambda1_report.txt"), &text)?;
    write(&dir.join("lambda1_report.json"), &report::to_json(&summary))?;
    Ok(text)
}

fn mms(case: &str, levels: usize, quadrature: usize, out: Option<PathBuf>) -> Result<String, CliError> {
    let case = builtin_case(case).map_err(|e| CliError::Usage(e.to_string()))?;
    let levels: Vec<usize> = (1..=levels).collect();
    let table = match convergence_study(&case, &levels, &InnerOptions::default(), quadrature) {
        Ok(t) => t,
        Err(e @ (MmsError::TooFewLevels(_) | MmsError::Mesh(_))) => return Err(CliError::Usage(e.to_string())),
        Err(e @ MmsError::BoundaryTrace { .. }) => return Err(CliError::Invariant(e.to_string())),
        Err(e) => return Err(CliError::NonConvergence(e.to_string())),
    };
    if let Some(dir) = out {
        std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        write(&dir.join(format!("mms_{}.csv", table.case)), &table.to_csv())?;
        write(&dir.join(format!("mms_{}.json", table.case)), &report::to_json(&table))?;
    }
    Ok(report::mms_text(&table))
}

fn check(seed: u64, draws: usize, out: Option<PathBuf>) -> Result<String, CliError> {
    if draws == 0 {
        return Err(CliError::Usage("--draws must be positive".into()));
    }
    let r = run_checks(seed, draws);
    let text = report::check_text(&r);
    if let Some(dir) = out {
        std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        write(&dir.join("check_report.txt"), &text)?;
        write(&dir.join("check_report.json"), &report::to_json(&r))?;
    }
    if r.total_violations() > 0 {
        return Err(CliError::Invariant(format!("{} inequality violations\n{text}", r.total_violations())));
    }
    Ok(text)
}

fn mesh_info(mesh: &Mesh, json: bool) -> String {
    #[derive(serde::Serialize)]
    struct Info {
        nodes: usize,
        triangles: usize,
        boundary_nodes: usize,
        area: f64,
        h_max: f64,
        min_angle_degrees: f64,
    }
    let info = Info {
        nodes: mesh.num_nodes(),
        triangles: mesh.num_triangles(),
        boundary_nodes: mesh.boundary_nodes().len(),
        area: mesh.total_area(),
        h_max: mesh.max_edge_length(),
        min_angle_degrees: mesh.min_angle_degrees(),
    };
    if json {
        return report::to_json(&info);
    }
    format!(
        "nodes = {}\ntriangles = {}\nboundary_nodes = {}\narea = {:.12e}\nh_max = {:.12e}\nmin_angle_degrees = {:.12e}\n",
        info.nodes, info.triangles, info.boundary_nodes, info.area, info.h_max, info.min_angle_degrees
    )
}

fn mesh(action: MeshCommand) -> Result<String, CliError> {
    match action {
        MeshCommand::Gen {
            kind,
            n,
            n_boundary,
            refinement,
            out,
        } => {
            let mesh = match kind {
                MeshKind::Square if n >= 1 => structured_square_mesh(n),
                MeshKind::Disk if n_boundary >= 8 => polygonal_disk_mesh(n_boundary, refinement),
                MeshKind::Square => return Err(CliError::Usage("--n must be at least 1".into())),
                MeshKind::Disk => return Err(CliError::Usage("--n-boundary must be at least 8".into())),
            };
            mesh.save(&out).map_err(|e| match e {
                crate::geometry::MeshError::Io(source) => CliError::Io { path: out.clone(), source },
                other => CliError::Usage(other.to_string()),
            })?;
            Ok(mesh_info(&mesh, false))
        }
        MeshCommand::Info { path, json } => {
            let mesh = Mesh::load(&path).map_err(|e| match e {
                crate::geometry::MeshError::Io(source) => CliError::Io { path: path.clone(), source },
                other => CliError::Config(ConfigError::Mesh(other)),
            })?;
            Ok(mesh_info(&mesh, json))
        }
    }
}

/// Executes one command and returns what it prints on success.
pub fn run(cli: Cli) -> Result<String, CliError> {
    match cli.command {
        Command::Solve { config, out } => solve(&config, out),
        Command::Lambda1 { config, out } => lambda1(&config, out),
        Command::Mms {
            case,
            levels,
            quadrature,
            out,
        } => mms(&case, levels, quadrature, out),
        Command::Check { seed, draws, out } => check(seed, draws, out),
        Command::Mesh { action } => mesh(action),
    }
}
