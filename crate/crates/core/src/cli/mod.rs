//! Command-line front end.
//!
//! Exit codes: 0 success, 1 a checked hypothesis does not hold, 2 input
//! error, 3 numerical failure.

mod problem_file;
mod profiles;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::asymptotics::{classify, count_sign_changes, energy_csv, energy_profile, Classification, DEFAULT_WINDOW};
use crate::expr::Expr;
use crate::fixedpoint::{picard_solve, FixedPointError, IterationReport, PicardOptions, Start};
use crate::hypotheses::{HypothesisReport, Verdict};
use crate::ivp::{fmt_num, solve_ivp, solve_recurrence, three_term_normalize, Method, Solution, StepControl};

pub use problem_file::{Diagnostic, Mode, ProblemFile, SolverSection, TheoremSection};
pub use profiles::{run_profile, Profile};

pub const EXIT_OK: i32 = 0;
pub const EXIT_HYPOTHESIS: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// Default horizon for `solve` and `classify` when the file gives none.
const IVP_HORIZON: f64 = 100.0;

#[derive(Debug, Parser)]
#[command(name = "vsie", version, about = "Solve and classify Volterra-Stieltjes integral equations on a half-axis")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Output directory for CSV series and JSON reports.
    #[arg(long, global = true, env = "VSIE_OUT", default_value = "vsie-out")]
    out: PathBuf,
    /// Overrides the solver tolerance (rtol for `solve`, tol for `fixpoint`).
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Truncation point for tail integrals; end point of `solve` when the file has no x_end.
    #[arg(long, global = true)]
    horizon: Option<f64>,
    /// Iteration cap for `fixpoint`.
    #[arg(long = "max-iter", global = true)]
    max_iter: Option<usize>,
    /// Theorem profile for `check`: auto, thm-2.4, thm-4.8 or thm-4.2.
    #[arg(long, global = true)]
    profile: Option<String>,
}

#[derive(Debug, Args)]
struct Target {
    /// Problem file.
    file: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Forward-solve the initial value problem.
    Solve(Target),
    /// Picard iteration for the fixed point asymptotic to `f`.
    Fixpoint(Target),
    /// Run a theorem profile of hypothesis checks.
    Check(Target),
    /// Solve, then classify the end behaviour.
    Classify(Target),
    /// Iterate the second-order recurrence.
    Discrete(Target),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Solve(_) => "solve",
            Command::Fixpoint(_) => "fixpoint",
            Command::Check(_) => "check",
            Command::Classify(_) => "classify",
            Command::Discrete(_) => "discrete",
        }
    }

    fn file(&self) -> &Path {
        match self {
            Command::Solve(t) | Command::Fixpoint(t) | Command::Check(t) | Command::Classify(t) | Command::Discrete(t) => &t.file,
        }
    }
}

enum Failure {
    Input(Diagnostic),
    Numerical(String),
}

impl From<Diagnostic> for Failure {
    fn from(d: Diagnostic) -> Self {
        Failure::Input(d)
    }
}

/// Parse `argv` (program name first), run, and return the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(Failure::Input(d)) => {
            eprintln!("vsie: error: {d}");
            EXIT_INPUT
        }
        Err(Failure::Numerical(msg)) => {
            eprintln!("vsie: numerical failure: {msg}");
            EXIT_NUMERICAL
        }
    }
}

fn execute(cli: &Cli) -> Result<i32, Failure> {
    let pf = ProblemFile::load(cli.command.file())?;
    if let Some(mode) = pf.solver.mode {
        let expected = match cli.command {
            Command::Solve(_) => Mode::Ivp,
            Command::Fixpoint(_) => Mode::Fixpoint,
            Command::Check(_) => Mode::Check,
            Command::Classify(_) => Mode::Classify,
            Command::Discrete(_) => Mode::Discrete,
        };
        if mode != expected {
            eprintln!("vsie: note: file declares mode {mode:?}, running `{}`", cli.command.name());
        }
    }
    fs::create_dir_all(&cli.out).map_err(|e| {
        Failure::Input(Diagnostic {
            path: cli.out.clone(),
            line: None,
            message: format!("cannot create output directory: {e}"),
        })
    })?;
    match cli.command {
        Command::Solve(_) => cmd_solve(cli, &pf),
        Command::Fixpoint(_) => cmd_fixpoint(cli, &pf),
        Command::Check(_) => cmd_check(cli, &pf),
        Command::Classify(_) => cmd_classify(cli, &pf),
        Command::Discrete(_) => cmd_discrete(cli, &pf),
    }
}

fn write_out(cli: &Cli, name: &str, contents: &str) -> Result<(), Failure> {
    let path = cli.out.join(name);
    fs::write(&path, contents).map_err(|e| {
        Failure::Input(Diagnostic {
            path,
            line: None,
            message: e.to_string(),
        })
    })
}

fn write_json<T: Serialize>(cli: &Cli, name: &str, value: &T) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Failure::Numerical(e.to_string()))?;
    text.push('\n');
    write_out(cli, name, &text)
}

fn file_label(pf: &ProblemFile) -> String {
    pf.path.file_name().map_or_else(|| pf.path.display().to_string(), |n| n.to_string_lossy().into_owned())
}

fn step_control(cli: &Cli, s: &SolverSection) -> StepControl {
    let mut c = StepControl::default();
    if let Some(r) = cli.tol.or(s.rtol) {
        c.rtol = r;
        c.atol = r * 1e-2;
    }
    if let Some(a) = s.atol {
        c.atol = a;
    }
    if let Some(h) = s.max_step {
        c.max_step = h;
    }
    c
}

fn picard_options(cli: &Cli, s: &SolverSection) -> PicardOptions {
    let mut o = PicardOptions::default();
    if let Some(t) = cli.tol.or(s.tol) {
        o.tol = t;
    }
    if let Some(h) = cli.horizon.or(s.horizon) {
        o.horizon = h;
    }
    if let Some(n) = cli.max_iter.or(s.max_iter) {
        o.max_iter = n;
    }
    if let Some(q) = s.quad_tol {
        o.quad_tol = q;
    }
    if let Some(t) = s.tail_tol {
        o.tail_tol = t;
    }
    o
}

#[derive(Serialize)]
struct IvpReport<'a> {
    command: &'static str,
    problem: String,
    method: Method,
    interval: (f64, f64),
    nodes: usize,
    y_end: f64,
    yprime_end: f64,
    step_control: &'a StepControl,
}

fn ivp_solution(cli: &Cli, pf: &ProblemFile, command: &str) -> Result<(Solution, StepControl), Failure> {
    let s = &pf.solver;
    let y0 = pf.require("solver", "y0", s.y0, command)?;
    let yp0 = pf.require("solver", "yp0", s.yp0, command)?;
    let a = s.x_start.unwrap_or(pf.problem.domain_start());
    let b = s.x_end.or(cli.horizon).or(s.horizon).unwrap_or(a + IVP_HORIZON);
    let ctrl = step_control(cli, s);
    let sol = solve_ivp(&pf.problem, y0, yp0, a, b, &ctrl).map_err(|e| Failure::Numerical(e.to_string()))?;
    Ok((sol, ctrl))
}

fn cmd_solve(cli: &Cli, pf: &ProblemFile) -> Result<i32, Failure> {
    let (sol, ctrl) = ivp_solution(cli, pf, "solve")?;
    write_out(cli, "solution.csv", &sol.to_csv())?;
    let last = sol.len() - 1;
    write_json(
        cli,
        "report.json",
        &IvpReport {
            command: "solve",
            problem: file_label(pf),
            method: sol.method,
            interval: (sol.start(), sol.end()),
            nodes: sol.len(),
            y_end: sol.y[last],
            yprime_end: sol.yprime_right[last],
            step_control: &ctrl,
        },
    )?;
    println!("solved on [{}, {}] with {} nodes; y(end) = {}", fmt_num(sol.start()), fmt_num(sol.end()), sol.len(), fmt_num(sol.y[last]));
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct FixpointReport<'a> {
    command: &'static str,
    problem: String,
    x0: f64,
    start: String,
    options: &'a PicardOptions,
    iteration: &'a IterationReport,
}

fn fixpoint_solution(cli: &Cli, pf: &ProblemFile, command: &str) -> Result<(Solution, IterationReport, PicardOptions, f64, Start), Failure> {
    let f = pf.require_expr("problem", "f", pf.problem.forcing.as_ref(), command)?;
    let s = &pf.solver;
    let x0 = s.x0.or(pf.theorem.x0).unwrap_or(pf.problem.domain_start());
    let start = match &s.initial {
        None => Start::Forcing,
        Some(e) => Start::Function(e.clone()),
    };
    let opts = picard_options(cli, s);
    match picard_solve(&pf.problem, f, &start, x0, &opts) {
        Ok((sol, report)) => Ok((sol, report, opts, x0, start)),
        Err(FixedPointError::Diverged(report)) => {
            let _ = write_json(
                cli,
                "report.json",
                &FixpointReport {
                    command: "fixpoint",
                    problem: file_label(pf),
                    x0,
                    start: start_label(&start),
                    options: &opts,
                    iteration: &report,
                },
            );
            Err(Failure::Numerical(format!(
                "Picard iteration diverged after {} iterations",
                report.iterations
            )))
        }
        Err(e @ FixedPointError::BadDomain { .. }) => Err(Failure::Input(pf.error_in("solver", e.to_string()))),
        Err(e) => Err(Failure::Numerical(e.to_string())),
    }
}

fn start_label(s: &Start) -> String {
    match s {
        Start::Constant(c) => fmt_num(*c),
        Start::Forcing => "f".into(),
        Start::Function(e) => e.source().to_string(),
    }
}

fn cmd_fixpoint(cli: &Cli, pf: &ProblemFile) -> Result<i32, Failure> {
    let (sol, report, opts, x0, start) = fixpoint_solution(cli, pf, "fixpoint")?;
    write_out(cli, "solution.csv", &sol.to_csv())?;
    write_json(
        cli,
        "report.json",
        &FixpointReport {
            command: "fixpoint",
            problem: file_label(pf),
            x0,
            start: start_label(&start),
            options: &opts,
            iteration: &report,
        },
    )?;
    let last = report.sup_deltas.last().copied().unwrap_or(0.0);
    println!(
        "{} after {} iterations; last sup delta {}; {} nodes on [{}, {}]",
        if report.converged { "converged" } else { "not converged" },
        report.iterations,
        fmt_num(last),
        report.nodes,
        fmt_num(x0),
        fmt_num(opts.horizon)
    );
    if report.converged {
        Ok(EXIT_OK)
    } else {
        Err(Failure::Numerical(format!("no convergence within {} iterations", opts.max_iter)))
    }
}

#[derive(Serialize)]
struct CheckReport<'a> {
    command: &'static str,
    problem: String,
    profile: &'static str,
    all_hold: bool,
    checks: &'a [HypothesisReport],
}

fn verdict_label(v: Verdict) -> &'static str {
    match v {
        Verdict::Holds => "holds",
        Verdict::Fails => "fails",
        Verdict::Unknown => "unknown",
    }
}

fn check_table(checks: &[HypothesisReport]) -> String {
    let width = checks.iter().map(|c| c.name.len()).max().unwrap_or(0).max("hypothesis".len());
    let mut out = String::new();
    let _ = writeln!(out, "{:<width$}  {:<7}  {:>14}  {:>14}", "hypothesis", "holds", "value", "threshold");
    for c in checks {
        let _ = writeln!(
            out,
            "{:<width$}  {:<7}  {:>14}  {:>14}",
            c.name,
            verdict_label(c.holds),
            fmt_num(c.value),
            fmt_num(c.threshold)
        );
    }
    out
}

fn cmd_check(cli: &Cli, pf: &ProblemFile) -> Result<i32, Failure> {
    let name = cli.profile.as_deref().or(pf.theorem.profile.as_deref()).unwrap_or("auto");
    let profile = Profile::parse(name).ok_or_else(|| {
        pf.error_in(
            "theorem",
            format!("unknown profile `{name}` (expected auto, thm-2.4, thm-4.8, thm-4.2 or their long names)"),
        )
    })?;
    let checks = run_profile(profile, pf)?;
    let all_hold = checks.iter().all(|c| c.holds.is_holds());
    write_json(
        cli,
        "report.json",
        &CheckReport {
            command: "check",
            problem: file_label(pf),
            profile: profile.name(),
            all_hold,
            checks: &checks,
        },
    )?;
    print!("{}", check_table(&checks));
    Ok(if all_hold { EXIT_OK } else { EXIT_HYPOTHESIS })
}

#[derive(Serialize)]
struct ClassifyReport {
    command: &'static str,
    problem: String,
    source: &'static str,
    nodes: usize,
    sign_changes: usize,
    classification: Classification,
}

fn cmd_classify(cli: &Cli, pf: &ProblemFile) -> Result<i32, Failure> {
    let s = &pf.solver;
    let (sol, source) = if s.y0.is_some() || s.yp0.is_some() {
        (ivp_solution(cli, pf, "classify")?.0, "ivp")
    } else if pf.problem.forcing.is_some() {
        (fixpoint_solution(cli, pf, "classify")?.0, "fixpoint")
    } else {
        return Err(Failure::Input(pf.error_in(
            "solver",
            "`classify` needs y0 and yp0 in [solver], or f in [problem] for the fixed point",
        )));
    };
    let window = s.window.unwrap_or(DEFAULT_WINDOW);
    let class = classify(&sol, pf.problem.forcing.as_ref(), window).map_err(|e| match e {
        crate::asymptotics::AsymptoticsError::BadWindow(_) => Failure::Input(pf.error_in("solver", e.to_string())),
        other => Failure::Numerical(other.to_string()),
    })?;
    write_out(cli, "solution.csv", &sol.to_csv())?;
    if let Some(big_g) = &s.big_g {
        let zero = Expr::constant(0.0);
        let g = s.g.as_ref().unwrap_or(&zero);
        let points = energy_profile(&sol, big_g, g).map_err(|e| Failure::Numerical(e.to_string()))?;
        write_out(cli, "energy.csv", &energy_csv(&points))?;
    }
    write_json(
        cli,
        "classification.json",
        &ClassifyReport {
            command: "classify",
            problem: file_label(pf),
            source,
            nodes: sol.len(),
            sign_changes: count_sign_changes(&sol, sol.start(), sol.end()),
            classification: class,
        },
    )?;
    println!("{:?} on window [{}, {}]", class.class, fmt_num(class.fit_window.0), fmt_num(class.fit_window.1));
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct DiscreteReport {
    command: &'static str,
    problem: String,
    n_max: usize,
    y_last: f64,
    sign_changes: usize,
}

fn cmd_discrete(cli: &Cli, pf: &ProblemFile) -> Result<i32, Failure> {
    let s = &pf.solver;
    let y0 = pf.require("solver", "y0", s.y0, "discrete")?;
    let y1 = pf.require("solver", "y1", s.y1, "discrete")?;
    let n_max = pf.require("solver", "N", s.n, "discrete")?;
    let b = pf.require_expr("solver", "b", s.b.as_ref(), "discrete")?;
    let numeric = |e: crate::ivp::IvpError| Failure::Numerical(e.to_string());
    let y = solve_recurrence(&pf.problem.nonlinearity, b, y0, y1, n_max).map_err(|e| match e {
        crate::ivp::IvpError::TooShort(_) => Failure::Input(pf.error_in("solver", e.to_string())),
        other => numeric(other),
    })?;
    let grid: Vec<f64> = (0..=n_max).map(|n| n as f64).collect();
    // forward differences, the slope of the polygonal extension
    let diffs: Vec<f64> = (0..=n_max).map(|n| if n < n_max { y[n + 1] - y[n] } else { y[n] - y[n - 1] }).collect();
    let sol = Solution::from_samples(grid, y, diffs, Method::Recurrence);
    write_out(cli, "solution.csv", &sol.to_csv())?;
    if let Some(c) = &s.c {
        let norm = three_term_normalize(c, b, s.alpha0.unwrap_or(1.0), s.alpha1.unwrap_or(1.0), n_max).map_err(numeric)?;
        write_json(cli, "normalization.json", &norm)?;
    }
    let report = DiscreteReport {
        command: "discrete",
        problem: file_label(pf),
        n_max,
        y_last: sol.y[n_max],
        sign_changes: count_sign_changes(&sol, 0.0, n_max as f64),
    };
    write_json(cli, "report.json", &report)?;
    println!("y_{} = {}; {} sign changes", n_max, fmt_num(report.y_last), report.sign_changes);
    Ok(EXIT_OK)
}
