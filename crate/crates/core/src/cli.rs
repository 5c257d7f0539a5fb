//! Command-line front end.
//!
//! Exit codes: 0 success, 2 invalid configuration or arguments, 3 solver
//! failure, 4 a hysteretic run asked for where no high steady state exists.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::composite::{solve_full_with, FullSolution, Regime};
use crate::constrained_high::default_x_max;
use crate::dp_oracle::{compare, dp_skiba, dp_solve, DpConfig, DpMode};
use crate::error::Error;
use crate::export::{
    fmt_num, load_policy, write_dp_csv, write_hysteretic_solution, write_solution, write_trajectory_csv,
};
use crate::hysteresis::{default_x_max_hysteretic, solve_hysteretic_with, HystSolution};
use crate::model::{notional_steady_state, FecundityFactor, HysteresisState, ModelParams};
use crate::policy::PiecewisePolicy;
use crate::saddle_path::SolverOptions;
use crate::trajectory::{discounted_welfare, simulate, Trajectory};

/// Environment variable that overrides the output directory.
pub const OUT_ENV: &str = "TIPPING_HARVEST_OUT";
const DEFAULT_OUT: &str = "tipping-harvest-out";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
}

/// Contents of a run configuration file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelParams,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub oracle: DpConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, Error> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.model.validate()?;
        cfg.solver.validate()?;
        cfg.oracle.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }
}

#[derive(Parser, Debug)]
#[command(name = "tipping-harvest", version, about = "Optimal harvesting with tipping recruitment")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve for the optimal policy and write it out.
    Solve {
        config: PathBuf,
        #[arg(long)]
        hysteresis: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate the optimally managed stock from `x0`.
    Simulate {
        config: PathBuf,
        #[arg(long)]
        x0: f64,
        /// Initial hysteresis state (0 low, 1 high).
        #[arg(long)]
        s0: Option<u8>,
        /// Defaults to 200 / rho.
        #[arg(long)]
        horizon: Option<f64>,
        #[arg(long, default_value_t = 1.0)]
        output_dt: f64,
        #[arg(long)]
        hysteresis: bool,
        /// Reuse a policy written by `solve` instead of solving again.
        #[arg(long)]
        solution: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the Skiba point, checked against the oracle.
    Skiba {
        config: PathBuf,
        #[arg(long)]
        hysteresis: bool,
        /// Skip the value-iteration check.
        #[arg(long)]
        no_oracle: bool,
    },
    /// Classify the regime over a grid of tipping points and penalties.
    Sweep {
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        xp_list: Vec<f64>,
        #[arg(long, value_delimiter = ',', required = true)]
        pi_list: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare the analytic solution with value iteration.
    Oracle {
        config: PathBuf,
        #[arg(long)]
        hysteresis: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Failure carrying its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(e: impl std::fmt::Display) -> Self {
        Failure {
            code: 2,
            message: e.to_string(),
        }
    }

    fn solver(e: impl std::fmt::Display) -> Self {
        Failure {
            code: 3,
            message: e.to_string(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::InvalidParams(_) | Error::MissingHysteresisThreshold => Failure::config(e),
            other => Failure::solver(other),
        }
    }
}

type CliResult = Result<(), Failure>;

pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(cmd: Command) -> CliResult {
    match cmd {
        Command::Solve { config, hysteresis, out } => cmd_solve(&config, hysteresis, out),
        Command::Simulate {
            config,
            x0,
            s0,
            horizon,
            output_dt,
            hysteresis,
            solution,
            out,
        } => cmd_simulate(&config, x0, s0, horizon, output_dt, hysteresis, solution, out),
        Command::Skiba {
            config,
            hysteresis,
            no_oracle,
        } => cmd_skiba(&config, hysteresis, !no_oracle),
        Command::Sweep {
            config,
            xp_list,
            pi_list,
            out,
        } => cmd_sweep(&config, &xp_list, &pi_list, out),
        Command::Oracle { config, hysteresis, out } => cmd_oracle(&config, hysteresis, out),
    }
}

fn out_dir(cfg: &RunConfig, flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .or_else(|| cfg.output.dir.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

fn load(path: &Path) -> Result<RunConfig, Failure> {
    RunConfig::load(path).map_err(Failure::config)
}

fn hysteretic_params(cfg: &RunConfig) -> Result<ModelParams, Failure> {
    cfg.model
        .x_p_h()
        .map_err(|_| Failure::config("--hysteresis needs `x_p_h` in [model]"))?;
    Ok(cfg.model)
}

fn solve_plain(cfg: &RunConfig) -> Result<FullSolution, Failure> {
    Ok(solve_full_with(&cfg.model, default_x_max(&cfg.model), &cfg.solver)?)
}

fn solve_hyst(cfg: &RunConfig) -> Result<HystSolution, Failure> {
    let p = hysteretic_params(cfg)?;
    Ok(solve_hysteretic_with(&p, default_x_max_hysteretic(&p)?, &cfg.solver)?)
}

fn no_high_failure(what: &str) -> Failure {
    Failure {
        code: 4,
        message: format!("{what}: no high steady state is reachable under hysteresis (NoHighSteadyState)"),
    }
}

fn print_warnings(warnings: &[String]) {
    for w in warnings {
        eprintln!("warning: {w}");
    }
}

fn cmd_solve(config: &Path, hysteresis: bool, out: Option<PathBuf>) -> CliResult {
    let cfg = load(config)?;
    let dir = out_dir(&cfg, out);
    if hysteresis {
        let sol = solve_hyst(&cfg)?;
        let rec = write_hysteretic_solution(&dir, &sol)?;
        print_warnings(&sol.warnings);
        println!("regime {}", rec.regime);
        println!("skiba_h {}", fmt_num(rec.skiba));
        println!("permanent_collapse {}", sol.permanent_collapse);
        print_steady_states(rec.steady_state_high, rec.steady_state_low);
        println!("output {}", dir.display());
        if sol.regime == Regime::NoHighSteadyState {
            return Err(no_high_failure("solve"));
        }
    } else {
        let sol = solve_plain(&cfg)?;
        let rec = write_solution(&dir, &sol)?;
        print_warnings(&sol.warnings);
        println!("regime {}", rec.regime);
        println!("skiba {}", fmt_num(rec.skiba));
        print_steady_states(rec.steady_state_high, rec.steady_state_low);
        println!("output {}", dir.display());
    }
    Ok(())
}

fn print_steady_states(high: Option<crate::SteadyState>, low: Option<crate::SteadyState>) {
    for (name, ss) in [("high", high), ("low", low)] {
        if let Some(ss) = ss {
            println!("steady_state_{name} {} {}", fmt_num(ss.x), fmt_num(ss.h));
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_simulate(
    config: &Path,
    x0: f64,
    s0: Option<u8>,
    horizon: Option<f64>,
    output_dt: f64,
    hysteresis: bool,
    solution: Option<PathBuf>,
    out: Option<PathBuf>,
) -> CliResult {
    let cfg = load(config)?;
    let dir = out_dir(&cfg, out);
    let s0 = s0.map(HysteresisState::from_u8).transpose().map_err(Failure::config)?;
    let horizon = horizon.unwrap_or(200.0 / cfg.model.rho);
    let policy: PiecewisePolicy = match solution {
        Some(sol_dir) => {
            let (rec, policy) = load_policy(&sol_dir).map_err(Failure::config)?;
            if rec.regime == Regime::NoHighSteadyState && rec.hysteretic && x0 >= rec.params.x_p {
                return Err(no_high_failure("simulate"));
            }
            policy
        }
        None if hysteresis => {
            let sol = solve_hyst(&cfg)?;
            if sol.regime == Regime::NoHighSteadyState && x0 >= sol.params().x_p {
                return Err(no_high_failure("simulate"));
            }
            sol.policy
        }
        None => solve_plain(&cfg)?.policy,
    };
    let p = *policy.params();
    let traj: Trajectory = match simulate(&policy, x0, s0, horizon, output_dt) {
        Ok(t) => t,
        Err(Error::Extinction { t, trajectory }) => {
            fs::create_dir_all(&dir)?;
            write_trajectory_csv(&dir.join("trajectory.csv"), &trajectory)?;
            return Err(Failure::solver(format!("stock exhausted at t = {t}")));
        }
        Err(e @ (Error::InvalidParams(_) | Error::NegativeStock(_))) => return Err(Failure::config(e)),
        Err(e) => return Err(e.into()),
    };
    fs::create_dir_all(&dir)?;
    write_trajectory_csv(&dir.join("trajectory.csv"), &traj)?;
    let last = traj.last();
    println!("x_end {}", fmt_num(last.x));
    println!("h_end {}", fmt_num(last.h));
    println!("absorbed {}", traj.absorbed);
    for e in &traj.events {
        println!("event {} t {} x {}", e.kind.as_str(), fmt_num(e.t), fmt_num(e.x));
    }
    println!("welfare {}", fmt_num(discounted_welfare(&traj, p.sigma, p.rho)));
    println!("output {}", dir.join("trajectory.csv").display());
    Ok(())
}

fn cmd_skiba(config: &Path, hysteresis: bool, oracle: bool) -> CliResult {
    let cfg = load(config)?;
    let (skiba, regime, p, mode) = if hysteresis {
        let sol = solve_hyst(&cfg)?;
        (sol.skiba_h, sol.regime, *sol.params(), DpMode::Hysteretic)
    } else {
        let sol = solve_plain(&cfg)?;
        (sol.skiba, sol.regime, cfg.model, DpMode::Tipping)
    };
    println!("regime {regime}");
    println!("skiba {}", fmt_num(skiba));
    if oracle {
        let res = dp_solve(&p, &cfg.oracle, mode)?;
        let est = dp_skiba(&res)?;
        let trivial = matches!(regime, Regime::InteriorHighTrivialSkiba | Regime::BoundaryHighTrivialSkiba);
        let reference = if trivial { 0.0 } else { skiba };
        let cells = if est.trivial && trivial {
            0.0
        } else {
            (reference - est.x).abs() / res.cell_width(reference.max(est.x))
        };
        println!("oracle_skiba {} +/- {}", fmt_num(est.x), fmt_num(est.half_width));
        println!("oracle_cells {}", fmt_num(cells));
    }
    Ok(())
}

#[derive(Clone, Debug)]
struct SweepRow {
    x_p: f64,
    pi: f64,
    outcome: Result<(Regime, f64, f64), String>,
}

fn cmd_sweep(config: &Path, xps: &[f64], pis: &[f64], out: Option<PathBuf>) -> CliResult {
    let cfg = load(config)?;
    let dir = out_dir(&cfg, out);
    let mut cases = Vec::new();
    for &x_p in xps {
        for &pi in pis {
            let p = cfg.model.with_x_p(x_p).with_pi(pi);
            p.validate().map_err(Failure::config)?;
            cases.push(p);
        }
    }
    let rows: Vec<SweepRow> = cases
        .par_iter()
        .map(|p| {
            let outcome = solve_full_with(p, default_x_max(p), &cfg.solver)
                .map(|sol| {
                    let attractor = sol
                        .steady_state_high
                        .or(sol.steady_state_low)
                        .map(|s| s.x)
                        .unwrap_or_else(|| notional_steady_state(FecundityFactor::HIGH, p).x);
                    (sol.regime, sol.skiba, attractor)
                })
                .map_err(|e| e.to_string());
            SweepRow {
                x_p: p.x_p,
                pi: p.pi,
                outcome,
            }
        })
        .collect();
    let mut text = String::from("x_p,pi,regime,skiba,x_hat\n");
    let mut failed = 0;
    for r in &rows {
        match &r.outcome {
            Ok((regime, skiba, x_hat)) => text.push_str(&format!(
                "{},{},{},{},{}\n",
                fmt_num(r.x_p),
                fmt_num(r.pi),
                regime,
                fmt_num(*skiba),
                fmt_num(*x_hat)
            )),
            Err(e) => {
                failed += 1;
                eprintln!("error: x_p = {}, pi = {}: {e}", r.x_p, r.pi);
                text.push_str(&format!("{},{},error,NaN,NaN\n", fmt_num(r.x_p), fmt_num(r.pi)));
            }
        }
    }
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("sweep.csv"), &text)?;
    print!("{text}");
    if failed > 0 {
        return Err(Failure::solver(format!("{failed} sweep entries failed")));
    }
    Ok(())
}

fn cmd_oracle(config: &Path, hysteresis: bool, out: Option<PathBuf>) -> CliResult {
    let cfg = load(config)?;
    let dir = out_dir(&cfg, out);
    let report = if hysteresis {
        let sol = solve_hyst(&cfg)?;
        let res = dp_solve(sol.params(), &cfg.oracle, DpMode::Hysteretic)?;
        fs::create_dir_all(&dir)?;
        write_dp_csv(&dir.join("dp.csv"), &res)?;
        compare(&sol, &res)
    } else {
        let sol = solve_plain(&cfg)?;
        let res = dp_solve(&cfg.model, &cfg.oracle, DpMode::Tipping)?;
        fs::create_dir_all(&dir)?;
        write_dp_csv(&dir.join("dp.csv"), &res)?;
        compare(&sol, &res)
    };
    let json = serde_json::to_string_pretty(&report).map_err(Error::from)?;
    fs::write(dir.join("oracle_report.json"), &json)?;
    println!("{json}");
    Ok(())
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::solver(e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = "[model]\nsigma = 1.0\nrho = 0.05\npi = 0.5\nx_p = 16.0\n";

    #[test]
    fn parses_minimal_config() {
        let cfg = RunConfig::parse(BASE).unwrap();
        assert_eq!(cfg.model, ModelParams::default());
        assert_eq!(cfg.solver, SolverOptions::default());
        assert_eq!(cfg.oracle, DpConfig::default());
    }

    #[test]
    fn rejects_unknown_keys() {
        for extra in ["[model.extra]\n", "[solver]\nrtoll = 1e-9\n", "[oracle]\nnx = 3\n", "[plot]\n"] {
            let err = RunConfig::parse(&format!("{BASE}{extra}")).unwrap_err();
            assert!(matches!(err, Error::Config(_)), "{extra}: {err}");
        }
        assert!(RunConfig::parse(&BASE.replace("x_p = 16.0", "x_p = 16.0\nbeta = 2.0")).is_err());
    }

    #[test]
    fn invalid_penalty_names_the_invariant() {
        let err = RunConfig::parse(&BASE.replace("pi = 0.5", "pi = 1.2")).unwrap_err();
        assert!(matches!(err, Error::InvalidParams(_)));
        assert!(err.to_string().contains("pi"), "{err}");
    }

    #[test]
    fn overrides_apply() {
        let text = format!("{BASE}A = 2.0\nx_p_h = 20.0\n[oracle]\nn_x = 300\n[output]\ndir = \"o\"\n");
        let cfg = RunConfig::parse(&text).unwrap();
        assert_eq!(cfg.model.scale, 2.0);
        assert_eq!(cfg.model.x_p_h, Some(20.0));
        assert_eq!(cfg.oracle.n_x, 300);
        assert_eq!(cfg.output.dir, Some(PathBuf::from("o")));
    }
}
