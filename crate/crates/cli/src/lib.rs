//! Command-line harness: run an engine on a registered problem, inspect
//! Newton bases, run the diagnostic suites and extract plot series.

pub mod basis;
pub mod checks;
pub mod config;
pub mod solve;
pub mod trace;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use ntr_core::interp::{BasisOptions, PivotRule, QuadOrder};

use config::{Algorithm, RunConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_OBJECTIVE: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;

/// Directory searched for `--config` names that are not found as given.
pub const CONFIG_DIR_VAR: &str = "NTR_CONFIG_DIR";

#[derive(Debug, Parser)]
#[command(name = "ntr", version, about = "Derivative-free trust-region harness")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum QuadOrderArg {
    Lex,
    SquaresFirst,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run an engine on a registered problem.
    Solve {
        #[arg(long)]
        problem: Option<String>,
        /// newton_tr, quad_ntr or blackbox_ntr.
        #[arg(long)]
        algorithm: Option<String>,
        /// Flat `key = value` file; flags override its entries.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Maximum number of objective evaluations.
        #[arg(long)]
        budget: Option<usize>,
        /// Trace CSV output path.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Summary output path; printed to stdout when absent.
        #[arg(long)]
        summary: Option<PathBuf>,
        /// Extra `key=value` settings, applied after the config file.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Build the Newton basis of a point-set file and report it.
    Basis {
        file: PathBuf,
        /// Polynomial i of block l pivots on point i of block l.
        #[arg(long)]
        paper_order: bool,
        #[arg(long, value_enum, default_value = "lex")]
        quad_order: QuadOrderArg,
    },
    /// Run the derivative, eigen, subproblem and penalty diagnostics.
    Check {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Append a failing check (testing hook).
        #[arg(long)]
        force_fail: bool,
    },
    /// Write f-vs-evals, delta-vs-iter and rho-vs-iter series from a trace.
    TracePlotdata {
        trace: PathBuf,
        /// Output directory; defaults to the trace's directory.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// List the registered problems.
    Problems,
}

/// Output of one invocation: text for stdout and stderr plus the exit code.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Outcome {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

impl Outcome {
    fn ok(stdout: String) -> Self {
        Self {
            code: EXIT_OK,
            stdout,
            stderr: String::new(),
        }
    }

    fn err(code: i32, msg: impl std::fmt::Display) -> Self {
        Self {
            code,
            stdout: String::new(),
            stderr: format!("error: {msg}\n"),
        }
    }
}

fn resolve_config_path(p: &Path) -> PathBuf {
    if p.exists() {
        return p.to_path_buf();
    }
    match std::env::var_os(CONFIG_DIR_VAR) {
        Some(dir) => Path::new(&dir).join(p),
        None => p.to_path_buf(),
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), String> {
    fs::File::create(path)
        .and_then(|mut f| f.write_all(text.as_bytes()))
        .map_err(|e| format!("{}: {e}", path.display()))
}

#[allow(clippy::too_many_arguments)]
fn run_solve(
    problem: Option<String>,
    algorithm: Option<String>,
    config: Option<PathBuf>,
    seed: Option<u64>,
    budget: Option<usize>,
    trace: Option<PathBuf>,
    summary: Option<PathBuf>,
    set: Vec<String>,
) -> Outcome {
    let mut cfg = match config {
        Some(p) => {
            let p = resolve_config_path(&p);
            match fs::read_to_string(&p) {
                Ok(text) => match RunConfig::from_text(&text) {
                    Ok(c) => c,
                    Err(e) => return Outcome::err(EXIT_CONFIG, format!("{}: {e}", p.display())),
                },
                Err(e) => return Outcome::err(EXIT_CONFIG, format!("{}: {e}", p.display())),
            }
        }
        None => RunConfig::default(),
    };
    let mut overrides: Vec<(String, String)> = Vec::new();
    for kv in set {
        match kv.split_once('=') {
            Some((k, v)) => overrides.push((k.trim().into(), v.trim().into())),
            None => return Outcome::err(EXIT_CONFIG, format!("--set expects KEY=VALUE, got `{kv}`")),
        }
    }
    if let Some(v) = problem {
        overrides.push(("problem".into(), v));
    }
    if let Some(v) = algorithm {
        overrides.push(("algorithm".into(), v));
    }
    if let Some(v) = seed {
        overrides.push(("seed".into(), v.to_string()));
    }
    if let Some(v) = budget {
        overrides.push(("budget".into(), v.to_string()));
    }
    for (k, v) in &overrides {
        if let Err(e) = cfg.set(k, v) {
            return Outcome::err(EXIT_CONFIG, e);
        }
    }
    if trace.is_some() {
        cfg.trace = trace;
    }
    if summary.is_some() {
        cfg.summary = summary;
    }
    let out = match solve::solve(&cfg) {
        Ok(o) => o,
        Err(e @ solve::SolveError::Config(_)) => return Outcome::err(EXIT_CONFIG, e),
        Err(e @ solve::SolveError::Objective(_)) => return Outcome::err(EXIT_OBJECTIVE, e),
        Err(e) => return Outcome::err(EXIT_FAILED, e),
    };
    if let Some(p) = &cfg.trace {
        if let Err(e) = write_file(p, &out.trace_csv) {
            return Outcome::err(EXIT_CONFIG, e);
        }
    }
    let text = out.summary.to_text();
    match &cfg.summary {
        Some(p) => match write_file(p, &text) {
            Ok(()) => Outcome::ok(String::new()),
            Err(e) => Outcome::err(EXIT_CONFIG, e),
        },
        None => Outcome::ok(text),
    }
}

fn run_basis(file: &Path, paper_order: bool, quad_order: QuadOrderArg) -> Outcome {
    let text = match fs::read_to_string(file) {
        Ok(t) => t,
        Err(e) => return Outcome::err(EXIT_CONFIG, format!("{}: {e}", file.display())),
    };
    let opts = BasisOptions {
        pivot: if paper_order { PivotRule::PaperOrder } else { PivotRule::Max },
        quad_order: match quad_order {
            QuadOrderArg::Lex => QuadOrder::Lex,
            QuadOrderArg::SquaresFirst => QuadOrder::SquaresFirst,
        },
        ..Default::default()
    };
    match basis::basis_report(&text, &opts) {
        Ok(r) => Outcome::ok(r.to_text()),
        Err(e) => Outcome::err(EXIT_CONFIG, format!("{}: {e}", file.display())),
    }
}

fn run_check(seed: u64, force_fail: bool) -> Outcome {
    let lines = checks::run_checks(seed, force_fail);
    let mut out = String::new();
    for l in &lines {
        out.push_str(&l.render());
        out.push('\n');
    }
    Outcome {
        code: if lines.iter().any(checks::CheckLine::failed) { EXIT_FAILED } else { EXIT_OK },
        stdout: out,
        stderr: String::new(),
    }
}

fn run_plotdata(trace: &Path, out_dir: Option<PathBuf>) -> Outcome {
    let text = match fs::read_to_string(trace) {
        Ok(t) => t,
        Err(e) => return Outcome::err(EXIT_CONFIG, format!("{}: {e}", trace.display())),
    };
    let series = match trace::plot_series(&text) {
        Ok(s) => s,
        Err(e) => return Outcome::err(EXIT_CONFIG, e),
    };
    let dir = out_dir.unwrap_or_else(|| trace.parent().map(Path::to_path_buf).unwrap_or_default());
    let stem = trace.file_stem().and_then(|s| s.to_str()).unwrap_or("trace");
    let mut listing = String::new();
    for s in series {
        let path = dir.join(format!("{stem}_{}.dat", s.name));
        if let Err(e) = write_file(&path, &s.to_text()) {
            return Outcome::err(EXIT_CONFIG, e);
        }
        listing.push_str(&format!("{}\n", path.display()));
    }
    Outcome::ok(listing)
}

fn run_problems() -> Outcome {
    let mut s = String::new();
    for (name, dim, smooth) in ntr_core::problems::list_problems() {
        s.push_str(&format!("{name} dim={dim} smooth={smooth}\n"));
    }
    Outcome::ok(s)
}

pub fn execute(cli: Cli) -> Outcome {
    match cli.command {
        Command::Solve {
            problem,
            algorithm,
            config,
            seed,
            budget,
            trace,
            summary,
            set,
        } => run_solve(problem, algorithm, config, seed, budget, trace, summary, set),
        Command::Basis {
            file,
            paper_order,
            quad_order,
        } => run_basis(&file, paper_order, quad_order),
        Command::Check { seed, force_fail } => run_check(seed, force_fail),
        Command::TracePlotdata { trace, out_dir } => run_plotdata(&trace, out_dir),
        Command::Problems => run_problems(),
    }
}

/// Parses `args` (program name first) and runs the command. Usage errors
/// exit with the config-error code; help and version exit 0.
pub fn run<I, T>(args: I) -> Outcome
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => execute(cli),
        Err(e) => {
            let text = e.render().to_string();
            if e.use_stderr() {
                Outcome {
                    code: EXIT_CONFIG,
                    stdout: String::new(),
                    stderr: text,
                }
            } else {
                Outcome::ok(text)
            }
        }
    }
}

/// Algorithm names accepted by `--algorithm`.
pub fn algorithm_names() -> [String; 3] {
    [Algorithm::NewtonTr, Algorithm::QuadNtr, Algorithm::BlackboxNtr].map(|a| a.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{RunSummary, TRACE_COLUMNS};

    fn ntr(args: &[&str]) -> Outcome {
        run(std::iter::once("ntr").chain(args.iter().copied()))
    }

    fn tmp(name: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("ntr-harness-tests-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn solve_sphere_quad_ntr() {
        let trace = tmp("sphere.csv");
        let summary = tmp("sphere.txt");
        let o = ntr(&[
            "solve", "--problem", "sphere", "--algorithm", "quad_ntr", "--seed", "1", "--trace",
            trace.to_str().unwrap(), "--summary", summary.to_str().unwrap(),
        ]);
        assert_eq!(o.code, EXIT_OK, "{}", o.stderr);
        let s = RunSummary::parse(&fs::read_to_string(&summary).unwrap()).unwrap();
        assert!(s.final_f <= 1e-3, "{s:?}");

        let text = fs::read_to_string(&trace).unwrap();
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        assert_eq!(rdr.headers().unwrap().iter().collect::<Vec<_>>(), TRACE_COLUMNS);
        let mut last_evals = 0;
        for rec in rdr.records() {
            let rec = rec.unwrap();
            rec[0].parse::<usize>().unwrap();
            last_evals = rec[1].parse::<usize>().unwrap();
            for c in [2, 3] {
                rec[c].parse::<f64>().unwrap();
            }
            rec[7].parse::<bool>().unwrap();
            assert!(["success-swap", "geometry-repair", "shrink", "final"].contains(&&rec[8]));
            let x: Vec<f64> = rec[21].split(';').map(|v| v.parse().unwrap()).collect();
            assert_eq!(x.len(), 2);
        }
        assert_eq!(last_evals, s.evals);
    }

    #[test]
    fn unknown_problem_exits_with_config_error() {
        let o = ntr(&["solve", "--problem", "nope"]);
        assert_eq!(o.code, EXIT_CONFIG);
        assert!(o.stderr.contains("nope"));
    }

    #[test]
    fn unknown_config_key_is_named() {
        let cfg = tmp("bad.cfg");
        fs::write(&cfg, "# comment\nproblem = sphere\ndelta_zero = 1\n").unwrap();
        let o = ntr(&["solve", "--config", cfg.to_str().unwrap()]);
        assert_eq!(o.code, EXIT_CONFIG);
        assert!(o.stderr.contains("delta_zero"));
    }

    #[test]
    fn config_file_drives_the_run() {
        let cfg = tmp("good.cfg");
        fs::write(&cfg, "problem = quad_illcond\nalgorithm = newton_tr\nmax_iters = 100 # short\n").unwrap();
        let o = ntr(&["solve", "--config", cfg.to_str().unwrap()]);
        assert_eq!(o.code, EXIT_OK, "{}", o.stderr);
        assert!(RunSummary::parse(&o.stdout).unwrap().iters <= 100);
        let o = ntr(&["solve", "--config", cfg.to_str().unwrap(), "--set", "max_iters=oops"]);
        assert_eq!(o.code, EXIT_CONFIG);
    }

    #[test]
    fn budget_one_stops_after_sampling() {
        let o = ntr(&["solve", "--problem", "sphere", "--budget", "1"]);
        assert_eq!(o.code, EXIT_OK, "{}", o.stderr);
        let s = RunSummary::parse(&o.stdout).unwrap();
        assert_eq!(s.terminated_by, "budget");
        assert!(s.evals <= 1);
    }

    #[test]
    fn usage_errors_and_help() {
        assert_eq!(ntr(&["solve", "--bogus"]).code, EXIT_CONFIG);
        let help = ntr(&["--help"]);
        assert_eq!(help.code, EXIT_OK);
        assert!(help.stdout.contains("trace-plotdata"));
    }

    #[test]
    fn basis_single_point_and_malformed_files() {
        let one = tmp("one.txt");
        fs::write(&one, "0 1.5 -2\n").unwrap();
        let o = ntr(&["basis", one.to_str().unwrap()]);
        assert_eq!(o.code, EXIT_OK);
        assert!(o.stdout.contains("poly N_1^[0] pivot 0"));
        assert!(o.stdout.contains("determinant 1.0000000000000000e0"));
        assert!(o.stdout.contains("status complete"));

        let bad = tmp("bad.txt");
        fs::write(&bad, "0 1 2\n1 x y\n").unwrap();
        assert_eq!(ntr(&["basis", bad.to_str().unwrap()]).code, EXIT_CONFIG);
        assert_eq!(ntr(&["basis", tmp("missing.txt").to_str().unwrap()]).code, EXIT_CONFIG);
    }

    #[test]
    fn check_is_deterministic_and_can_be_forced_to_fail() {
        let a = ntr(&["check", "--seed", "3"]);
        let b = ntr(&["check", "--seed", "3"]);
        assert_eq!(a.code, EXIT_OK, "{}", a.stdout);
        assert!(a.stdout.lines().any(|l| l == "input_gradient_fd: pass"));
        assert_eq!(a.stdout, b.stdout);
        let f = ntr(&["check", "--force-fail"]);
        assert_ne!(f.code, EXIT_OK);
        assert!(f.stdout.contains("forced_failure: fail"));
    }

    #[test]
    fn plotdata_writes_three_series() {
        let trace = tmp("plot.csv");
        let o = ntr(&["solve", "--problem", "rosenbrock", "--algorithm", "newton_tr", "--trace", trace.to_str().unwrap()]);
        assert_eq!(o.code, EXIT_OK);
        let out_dir = tmp("plots");
        fs::create_dir_all(&out_dir).unwrap();
        let o = ntr(&["trace-plotdata", trace.to_str().unwrap(), "--out-dir", out_dir.to_str().unwrap()]);
        assert_eq!(o.code, EXIT_OK, "{}", o.stderr);
        for name in ["plot_f_vs_evals.dat", "plot_delta_vs_iter.dat", "plot_rho_vs_iter.dat"] {
            let text = fs::read_to_string(out_dir.join(name)).unwrap();
            assert!(text.lines().count() > 1, "{name}");
        }

        let partial = tmp("partial.csv");
        fs::write(&partial, "iter,evals,f\n1,2,3\n").unwrap();
        let o = ntr(&["trace-plotdata", partial.to_str().unwrap()]);
        assert_eq!(o.code, EXIT_CONFIG);
        assert!(o.stderr.contains("delta"));
    }

    #[test]
    fn problems_are_listed() {
        let out = ntr(&["problems"]).stdout;
        assert!(out.contains("example3 dim=2 smooth=true"));
        assert!(out.contains("l1norm dim=2 smooth=false"));
    }

    #[test]
    fn algorithm_names_round_trip() {
        for name in algorithm_names() {
            assert_eq!(name.parse::<Algorithm>().unwrap().to_string(), name);
        }
    }
}
