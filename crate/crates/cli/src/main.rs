//! `fxband`: solve, verify and simulate optimal intervention bands from JSON
//! problem files.
//!
//! Exit status: 0 on success, 2 when a solution was found but fails an
//! optimality check, 1 on any error (with nothing written to stdout).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use fxband::config::ProblemConfig;
use fxband::simulator::{compare_policies, estimate_cost, simulate_path, write_event_log, BandPolicy, CostEstimate, PathStreams};
use fxband::solver::{solve, verify, PolicySolution, SolutionRecord, VerificationReport};
use fxband::tables::{build_table, table_csv, TableKind};
use fxband::{CostSpec, ScalarLaw};

#[derive(Parser)]
#[command(name = "fxband", version, about = "Optimal exchange-rate intervention bands")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve for the optimal band and print the solution as JSON.
    Solve {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check the optimality conditions of a solution (solving first if no
    /// solution file is given).
    Verify {
        config: PathBuf,
        #[arg(long)]
        solution: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Value function on a uniform grid as `x,V` CSV.
    Curve {
        config: PathBuf,
        #[arg(long)]
        xmin: f64,
        #[arg(long)]
        xmax: f64,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Reference tables as `label,a,b,alpha` CSV.
    Table {
        which: TableArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte Carlo cost of a solved policy, optionally against perturbed policies.
    Simulate {
        config: PathBuf,
        #[arg(long)]
        policy_from: PathBuf,
        /// Perturbation such as `a-0.05` or `alpha+0.05`; repeatable.
        #[arg(long)]
        perturb: Vec<String>,
        /// Write the event log of the first `--log-paths` paths as CSV.
        #[arg(long)]
        events: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        log_paths: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve over a grid of one parameter; prints `param,a,b,alpha` CSV.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        param: SweepParam,
        #[arg(long)]
        from: f64,
        #[arg(long)]
        to: f64,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum TableArg {
    ReactionCompare,
    Statics,
    Horizon,
}

impl From<TableArg> for TableKind {
    fn from(t: TableArg) -> Self {
        match t {
            TableArg::ReactionCompare => TableKind::ReactionCompare,
            TableArg::Statics => TableKind::Statics,
            TableArg::Horizon => TableKind::Horizon,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepParam {
    Mu,
    Sigma,
    R,
    Rho,
    #[value(name = "K")]
    K,
    /// Reaction period, as a point law.
    T,
    SigmaShift,
    MuShift,
}

impl SweepParam {
    fn name(self) -> &'static str {
        match self {
            SweepParam::Mu => "mu",
            SweepParam::Sigma => "sigma",
            SweepParam::R => "r",
            SweepParam::Rho => "rho",
            SweepParam::K => "K",
            SweepParam::T => "t",
            SweepParam::SigmaShift => "sigma_shift",
            SweepParam::MuShift => "mu_shift",
        }
    }

    fn apply(self, base: &ProblemConfig, value: f64) -> ProblemConfig {
        let mut c = base.clone();
        match self {
            SweepParam::Mu => c.model.mu = value,
            SweepParam::Sigma => c.model.sigma = value,
            SweepParam::R => c.model.r = value,
            SweepParam::Rho => c.model.rho = value,
            SweepParam::K => c.cost = CostSpec { k_fixed: value },
            SweepParam::T => c.reaction.t = ScalarLaw::Point(value),
            SweepParam::SigmaShift => c.reaction.sigma_shift = ScalarLaw::Point(value),
            SweepParam::MuShift => c.reaction.mu_shift = ScalarLaw::Point(value),
        }
        c
    }
}

/// Rendered command output and the exit status it implies.
struct Output {
    text: String,
    status: u8,
}

impl Output {
    fn ok(text: String) -> Self {
        Output { text, status: 0 }
    }

    fn checked(text: String, report: &VerificationReport) -> Self {
        Output {
            text,
            status: if report.all_pass { 0 } else { 2 },
        }
    }
}

fn solve_config(config: &ProblemConfig) -> Result<PolicySolution> {
    Ok(solve(&config.model, &config.cost, &config.reaction, &config.solver)?)
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

fn read_solution(path: &Path, config: &ProblemConfig) -> Result<PolicySolution> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let record: SolutionRecord =
        serde_json::from_str(&text).with_context(|| format!("parsing solution {}", path.display()))?;
    Ok(PolicySolution::from_record(&record, &config.model)?)
}

fn cmd_solve(config: &Path) -> Result<Output> {
    let config = ProblemConfig::load(config)?;
    let sol = solve_config(&config)?;
    Ok(Output::checked(to_json(&sol.to_record())?, &sol.verification))
}

fn cmd_verify(config: &Path, solution: Option<&Path>) -> Result<Output> {
    let config = ProblemConfig::load(config)?;
    let sol = match solution {
        Some(path) => read_solution(path, &config)?,
        None => solve_config(&config)?,
    };
    let report = verify(&sol, &config.model);
    Ok(Output::checked(to_json(&report)?, &report))
}

fn cmd_curve(config: &Path, xmin: f64, xmax: f64, n: usize) -> Result<Output> {
    if !(xmin > 0.0 && xmax > xmin) {
        bail!("need 0 < xmin < xmax, got xmin={xmin}, xmax={xmax}");
    }
    if n < 2 {
        bail!("need at least 2 grid points, got {n}");
    }
    let config = ProblemConfig::load(config)?;
    let sol = solve_config(&config)?;
    let mut text = String::from("x,V\n");
    for k in 0..n {
        let x = xmin + (xmax - xmin) * k as f64 / (n - 1) as f64;
        text.push_str(&format!("{x},{}\n", sol.value(x)));
    }
    Ok(Output::ok(text))
}

fn cmd_table(which: TableArg, config: &fxband::solver::SolverConfig) -> Result<Output> {
    let rows = build_table(which.into(), config);
    for row in &rows {
        if let Some(e) = &row.error {
            eprintln!("row {}: {e}", row.label);
        }
    }
    Ok(Output::ok(table_csv(&rows)))
}

#[derive(Serialize)]
struct ComparisonRow {
    label: String,
    policy: BandPolicy,
    estimate: CostEstimate,
    /// Mean of `cost(solved) - cost(this policy)` path by path.
    diff_vs_solved: f64,
    diff_stderr: f64,
}

#[derive(Serialize)]
struct SimulationOutput {
    policy: BandPolicy,
    estimate: CostEstimate,
    #[serde(skip_serializing_if = "Option::is_none")]
    comparison: Option<Vec<ComparisonRow>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ranking: Option<Vec<String>>,
}

fn cmd_simulate(
    config: &Path,
    policy_from: &Path,
    perturb: &[String],
    events: Option<&Path>,
    log_paths: usize,
) -> Result<Output> {
    let config = ProblemConfig::load(config)?;
    let sol = read_solution(policy_from, &config)?;
    let policy = sol.policy();
    policy.validate()?;
    for w in config.sim.warnings(&config.model) {
        eprintln!("warning: {w}");
    }
    let (params, law, cost, sim) = (&config.model, &config.reaction, &config.cost, &config.sim);

    let output = if perturb.is_empty() {
        SimulationOutput {
            policy,
            estimate: estimate_cost(&policy, params, law, cost, sim)?,
            comparison: None,
            ranking: None,
        }
    } else {
        let mut labels = vec!["solved".to_string()];
        let mut policies = vec![policy];
        for spec in perturb {
            policies.push(policy.perturbed(spec)?);
            labels.push(spec.clone());
        }
        let cmp = compare_policies(&policies, params, law, cost, sim)?;
        let rows = (0..policies.len())
            .map(|j| ComparisonRow {
                label: labels[j].clone(),
                policy: policies[j],
                estimate: cmp.estimates[j],
                diff_vs_solved: cmp.diff_mean[0][j],
                diff_stderr: cmp.diff_stderr[0][j],
            })
            .collect();
        SimulationOutput {
            policy,
            estimate: cmp.estimates[0],
            comparison: Some(rows),
            ranking: Some(cmp.ranking.iter().map(|&i| labels[i].clone()).collect()),
        }
    };

    if let Some(path) = events {
        let mut log = Vec::new();
        for path_index in 0..log_paths.min(sim.n_paths) {
            let mut streams = PathStreams::for_path(sim.seed, path_index);
            simulate_path(&policy, params, law, cost, sim, &mut streams, path_index, Some(&mut log))?;
        }
        let mut buf = Vec::new();
        write_event_log(&log, &mut buf)?;
        fs::write(path, buf).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(Output::ok(to_json(&output)?))
}

fn cmd_sweep(config: &Path, param: SweepParam, from: f64, to: f64, n: usize) -> Result<Output> {
    if n < 1 {
        bail!("need at least one sweep point");
    }
    let base = ProblemConfig::load(config)?;
    let mut text = format!("{},a,b,alpha\n", param.name());
    for k in 0..n {
        let value = if n == 1 { from } else { from + (to - from) * k as f64 / (n - 1) as f64 };
        let config = param.apply(&base, value);
        let row = config
            .validate()
            .map_err(anyhow::Error::from)
            .and_then(|_| solve_config(&config));
        match row {
            Ok(sol) => text.push_str(&format!("{value},{},{},{}\n", sol.a, sol.b, sol.alpha)),
            Err(e) => {
                eprintln!("{}={value}: {e}", param.name());
                text.push_str(&format!("{value},ERROR,ERROR,ERROR\n"));
            }
        }
    }
    Ok(Output::ok(text))
}

fn run(cli: Cli) -> Result<(Output, Option<PathBuf>)> {
    Ok(match cli.command {
        Command::Solve { config, out } => (cmd_solve(&config)?, out),
        Command::Verify { config, solution, out } => (cmd_verify(&config, solution.as_deref())?, out),
        Command::Curve {
            config,
            xmin,
            xmax,
            n,
            out,
        } => (cmd_curve(&config, xmin, xmax, n)?, out),
        Command::Table { which, out } => (cmd_table(which, &Default::default())?, out),
        Command::Simulate {
            config,
            policy_from,
            perturb,
            events,
            log_paths,
            out,
        } => (cmd_simulate(&config, &policy_from, &perturb, events.as_deref(), log_paths)?, out),
        Command::Sweep {
            config,
            param,
            from,
            to,
            n,
            out,
        } => (cmd_sweep(&config, param, from, to, n)?, out),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = run(cli).and_then(|(output, out)| {
        match out {
            Some(path) => fs::write(&path, &output.text).with_context(|| format!("writing {}", path.display()))?,
            None => std::io::stdout().write_all(output.text.as_bytes())?,
        }
        Ok(output.status)
    });
    match result {
        Ok(status) => {
            if status == 2 {
                eprintln!("solution found but at least one optimality check failed");
            }
            ExitCode::from(status)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
