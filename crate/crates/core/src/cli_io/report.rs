//! Run reports: `key = value` text with a per-iteration table, mirrored as
//! JSON. Reports carry no timestamps or thread counts, so identical runs
//! produce identical bytes.

use std::fmt::Write as _;

use serde::Serialize;

use crate::check::CheckReport;
use crate::mms::ConvergenceTable;
use crate::outer_solver::{Lemma2Constants, SolveReport};
use crate::varexp::ExponentMode;

#[derive(Debug, Clone, Serialize)]
pub struct MeshSummary {
    pub nodes: usize,
    pub triangles: usize,
    pub free_nodes: usize,
    pub h_max: f64,
    pub min_angle_degrees: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProblemSummary {
    pub p_minus: f64,
    pub p_plus: f64,
    pub exponent_mode: ExponentMode,
    pub lambda: f64,
    #[serde(rename = "Lambda")]
    pub big_lambda: f64,
    pub alpha_depends_on_t: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveSummary {
    pub command: &'static str,
    pub seed: u64,
    pub mesh: MeshSummary,
    pub problem: ProblemSummary,
    /// `λ₁` (and with it `C`, `C₁`) comes from the numerical estimator.
    pub constants_estimated: bool,
    pub solve: SolveReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct Lambda1Summary {
    pub command: &'static str,
    pub seed: u64,
    pub mesh: MeshSummary,
    pub problem: ProblemSummary,
    pub value: f64,
    pub restarts_used: usize,
    pub start_values: Vec<f64>,
    /// Present when the source term makes the constants meaningful.
    pub constants: Option<Lemma2Constants>,
}

fn num(x: f64) -> String {
    format!("{x:.12e}")
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| "-".to_string(), num)
}

fn kv(out: &mut String, key: &str, value: impl std::fmt::Display) {
    let _ = writeln!(out, "{key} = {value}");
}

fn common(out: &mut String, seed: u64, mesh: &MeshSummary, problem: &ProblemSummary) {
    kv(out, "seed", seed);
    kv(out, "nodes", mesh.nodes);
    kv(out, "triangles", mesh.triangles);
    kv(out, "free_nodes", mesh.free_nodes);
    kv(out, "h_max", num(mesh.h_max));
    kv(out, "min_angle_degrees", num(mesh.min_angle_degrees));
    kv(out, "p_minus", num(problem.p_minus));
    kv(out, "p_plus", num(problem.p_plus));
    kv(
        out,
        "exponent_mode",
        match problem.exponent_mode {
            ExponentMode::Solver => "solver",
            ExponentMode::Diagnostic => "diagnostic",
        },
    );
    kv(out, "lambda", num(problem.lambda));
    kv(out, "Lambda", num(problem.big_lambda));
    kv(out, "alpha_depends_on_t", problem.alpha_depends_on_t);
}

fn constants(out: &mut String, c: Option<&Lemma2Constants>) {
    let Some(c) = c else {
        kv(out, "constants", "-");
        return;
    };
    kv(out, "epsilon", num(c.epsilon));
    kv(out, "C_epsilon", num(c.c_epsilon));
    kv(out, "C", num(c.c));
    kv(out, "C1", num(c.c1));
    kv(out, "f_conjugate_modular", num(c.f_conj_modular));
}

pub fn solve_text(s: &SolveSummary) -> String {
    let mut out = String::from("# apx solve report\n");
    common(&mut out, s.seed, &s.mesh, &s.problem);
    let r = &s.solve;
    kv(&mut out, "converged", r.converged);
    kv(&mut out, "outer_iterations", r.outer_iterations);
    kv(&mut out, "lambda1_estimate", opt(r.lambda1.as_ref().map(|l| l.value)));
    kv(&mut out, "lambda1_restarts", r.lambda1.as_ref().map_or(0, |l| l.restarts_used));
    kv(&mut out, "constants_estimated", s.constants_estimated);
    constants(&mut out, r.constants.as_ref());
    if let Some((l2, r1)) = r.min_bound_slacks() {
        kv(&mut out, "min_lemma2_slack", num(l2));
        kv(&mut out, "min_remark1_slack", num(r1));
    }
    match &r.self_consistency {
        Some(sc) => {
            kv(&mut out, "self_consistency_tol", num(sc.tol));
            kv(&mut out, "self_consistency_residual", num(sc.max_residual));
            kv(&mut out, "self_consistency_check", sc.passed);
        }
        None => kv(&mut out, "self_consistency_check", "-"),
    }
    out.push_str("\n# iteration table\n");
    out.push_str("iter,diff_norm,diff_modular,gradient_modular,modular,energy,lemma2_slack,remark1_slack,in_ball,energy_slack,inner_iterations,inner_residual,theta\n");
    for it in &r.iterations {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            it.iteration,
            num(it.difference_norm),
            num(it.difference_modular),
            num(it.gradient_modular),
            num(it.modular),
            num(it.energy),
            opt(it.lemma2_slack),
            opt(it.remark1_slack),
            it.in_ball.map_or_else(|| "-".to_string(), |b| b.to_string()),
            num(it.energy_slack),
            it.inner_iterations,
            num(it.inner_residual),
            num(it.theta),
        );
    }
    out
}

pub fn lambda1_text(s: &Lambda1Summary) -> String {
    let mut out = String::from("# apx lambda1 report\n");
    common(&mut out, s.seed, &s.mesh, &s.problem);
    kv(&mut out, "lambda1_estimate", num(s.value));
    kv(&mut out, "restarts_used", s.restarts_used);
    for (k, v) in s.start_values.iter().enumerate() {
        kv(&mut out, &format!("start_{k}"), num(*v));
    }
    constants(&mut out, s.constants.as_ref());
    out
}

pub fn check_text(r: &CheckReport) -> String {
    let mut out = String::from("# apx check report\n");
    kv(&mut out, "seed", r.seed);
    kv(&mut out, "draws", r.draws);
    kv(&mut out, "tolerance", num(r.tolerance));
    kv(&mut out, "violations", r.total_violations());
    out.push_str("\nfamily,draws,violations,min_slack,worst_draw\n");
    for f in &r.families {
        let _ = writeln!(out, "{},{},{},{},{}", f.family.name(), f.draws, f.violations, num(f.min_slack), f.worst_draw);
    }
    out
}

pub fn mms_text(t: &ConvergenceTable) -> String {
    let mut out = format!("# apx mms report\ncase = {}\n\n", t.case);
    out.push_str(&t.to_csv());
    out
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report types serialize");
    s.push('\n');
    s
}
