//! `wardrop`: simulate route-choice dynamics, solve for equilibria, check
//! feasibility, sweep the update rate and compare local decision rules.

mod plot;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use wardrop_core::choice::spot_check_assumptions;
use wardrop_core::dynamics::TIME_TO_THRESHOLD_LEVEL;
use wardrop_core::equilibrium::SolverKind;
use wardrop_core::experiment::{self, RunOutcome, DEFAULT_SWEEP_ETAS};
use wardrop_core::scenario::results::{format_float, write_atomic, write_results};
use wardrop_core::scenario::{self, ScenarioConfig};

/// Consistency defects above this fail `check`.
const CONSISTENCY_TOL: f64 = 1e-10;
/// Cross sensitivities below this fail `check`.
const COOPERATIVITY_TOL: f64 = -1e-8;
const CHECK_SAMPLES: usize = 100;
const CHECK_SEED: u64 = 2024;

#[derive(Parser)]
#[command(
    name = "wardrop",
    version,
    about = "Route-choice dynamics on acyclic transportation networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve for the equilibrium, then simulate towards it.
    Simulate {
        #[command(flatten)]
        target: Target,
        #[command(flatten)]
        overrides: Overrides,
        /// Also write a log-linear SVG plot of the distance to equilibrium.
        #[arg(long)]
        svg: bool,
    },
    /// Compute the perturbed equilibrium.
    Equilibrium {
        #[command(flatten)]
        target: Target,
        #[arg(long, value_enum, default_value_t = Solver::FixedPoint)]
        solver: Solver,
    },
    /// Validate a scenario and report feasibility and local decision checks.
    Check {
        /// Built-in scenario name or path to a scenario file.
        scenario: String,
    },
    /// Run the scenario for several update rates.
    Sweep {
        #[command(flatten)]
        target: Target,
        /// Comma-separated update rates.
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_SWEEP_ETAS)]
        etas: Vec<f64>,
    },
    /// Run the scenario under both local decision rules.
    Compare {
        #[command(flatten)]
        target: Target,
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long)]
        svg: bool,
    },
}

#[derive(Args)]
struct Target {
    /// Built-in scenario name or path to a scenario file.
    scenario: String,
    /// Output directory; defaults to the scenario's `output.dir`, then
    /// `results/<scenario name>`.
    #[arg(long, short, env = "WARDROP_OUTPUT")]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct Overrides {
    /// Preference update rate.
    #[arg(long)]
    eta: Option<f64>,
    /// Integration step; defaults to min(0.01, 0.1 / max(1, eta)).
    #[arg(long)]
    dt: Option<f64>,
    /// Simulated time horizon.
    #[arg(long)]
    t_end: Option<f64>,
    /// Record every n-th step.
    #[arg(long)]
    stride: Option<usize>,
    /// Use step-doubling error control.
    #[arg(long)]
    adaptive: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Solver {
    FixedPoint,
    MirrorDescent,
}

impl From<Solver> for SolverKind {
    fn from(s: Solver) -> Self {
        match s {
            Solver::FixedPoint => SolverKind::FixedPoint,
            Solver::MirrorDescent => SolverKind::MirrorDescent,
        }
    }
}

impl Overrides {
    /// Applies the overrides and revalidates with the scenario rules.
    fn apply(&self, mut config: ScenarioConfig) -> Result<ScenarioConfig> {
        if let Some(eta) = self.eta {
            config.dynamics.eta = eta;
        }
        if let Some(dt) = self.dt {
            config.solver.dt = Some(dt);
        }
        if let Some(t_end) = self.t_end {
            config.solver.t_end = t_end;
        }
        if let Some(stride) = self.stride {
            config.solver.stride = stride;
        }
        config.solver.adaptive |= self.adaptive;
        config.validate().context("invalid override")?;
        Ok(config)
    }
}

fn load(name: &str) -> Result<ScenarioConfig> {
    scenario::load(name).with_context(|| format!("cannot load scenario `{name}`"))
}

fn output_dir(target: &Target, config: &ScenarioConfig) -> PathBuf {
    target
        .output
        .clone()
        .or_else(|| config.output.dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| Path::new("results").join(&config.name))
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Simulate {
            target,
            overrides,
            svg,
        } => simulate(&target, &overrides, svg),
        Command::Equilibrium { target, solver } => solve(&target, solver.into()),
        Command::Check { scenario } => check(&scenario),
        Command::Sweep { target, etas } => sweep(&target, &etas),
        Command::Compare {
            target,
            overrides,
            svg,
        } => compare(&target, &overrides, svg),
    }
}

fn describe_run(label: &str, run: &RunOutcome) {
    println!(
        "{label}: status {}, t = {}, terminal distance {:e}, time to {:e}: {}",
        run.trajectory.status.as_str(),
        run.trajectory.last().t,
        run.terminal_distance(),
        TIME_TO_THRESHOLD_LEVEL,
        run.time_to_threshold()
            .map_or("not reached".to_string(), |t| format!("{t:.4}")),
    );
}

fn distance_series(run: &RunOutcome) -> Vec<(f64, f64)> {
    run.trajectory
        .samples
        .iter()
        .filter_map(|s| s.dist_l1.map(|d| (s.t, d)))
        .collect()
}

fn simulate(target: &Target, overrides: &Overrides, svg: bool) -> Result<ExitCode> {
    let config = overrides.apply(load(&target.scenario)?)?;
    let dir = output_dir(target, &config);
    let scenario = config.build()?;
    let settings = scenario.simulation_settings();
    let run = experiment::run(scenario, settings)?;
    let files = write_results(&run.record(), &dir, "trajectory")?;
    describe_run(&config.name, &run);
    println!("dt = {}", run.trajectory.dt);
    println!("wrote {}", files.trajectory.display());
    println!("wrote {}", files.manifest.display());
    if svg {
        let path = dir.join("distance.svg");
        let plot = plot::log_linear_svg(
            &format!("{}: distance to equilibrium", config.name),
            &[(
                config.dynamics.local_decision.name(),
                &distance_series(&run),
            )],
        );
        write_atomic(&path, plot.as_bytes())?;
        println!("wrote {}", path.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn solve(target: &Target, kind: SolverKind) -> Result<ExitCode> {
    let config = load(&target.scenario)?;
    let scenario = config.build()?;
    let result = experiment::solve_equilibrium(&scenario, kind)
        .with_context(|| format!("{kind} solver failed on `{}`", config.name))?;
    let list = |v: &[f64]| {
        v.iter()
            .map(|x| format!("{x:.12}"))
            .collect::<Vec<_>>()
            .join(", ")
    };
    println!("solver: {kind}, iterations: {}", result.iterations);
    println!("pi_h: [{}]", list(&result.pi_h));
    println!("f_h: [{}]", list(&result.f_h));
    println!("rho_h: [{}]", list(&result.rho_h));
    println!("fixed-point residual: {:e}", result.fixed_point_residual);
    println!("wardrop gap: {:e}", result.wardrop_gap);
    println!("potential: {}", result.potential_value);

    let floats = |v: &[f64]| {
        v.iter()
            .map(|&x| format_float(x))
            .collect::<Vec<_>>()
            .join(", ")
    };
    let report = format!(
        "scenario = \"{}\"\nscenario_sha256 = \"{}\"\nsolver = \"{kind}\"\niterations = {}\n\
         fixed_point_residual = {}\nwardrop_gap = {}\npotential = {}\npi_h = [{}]\nf_h = [{}]\nrho_h = [{}]\n",
        config.name,
        config.sha256()?,
        result.iterations,
        format_float(result.fixed_point_residual),
        format_float(result.wardrop_gap),
        format_float(result.potential_value),
        floats(&result.pi_h),
        floats(&result.f_h),
        floats(&result.rho_h),
    );
    let path = output_dir(target, &config).join("equilibrium.toml");
    write_atomic(&path, report.as_bytes())?;
    println!("wrote {}", path.display());
    Ok(ExitCode::SUCCESS)
}

fn check(name: &str) -> Result<ExitCode> {
    let config = load(name)?;
    let scenario = config.build()?;
    let instance = &scenario.instance;
    let min_cut = instance.min_cut_capacity();
    let feasible = min_cut > 1.0;
    println!("scenario: {}", config.name);
    println!(
        "nodes: {}, links: {}, paths: {}",
        instance.network.node_count(),
        instance.link_count(),
        instance.path_count()
    );
    println!(
        "min-cut capacity: {min_cut} ({})",
        if feasible {
            "feasible"
        } else {
            "INFEASIBLE: does not exceed unit demand"
        }
    );
    let report = spot_check_assumptions(
        instance,
        &scenario.local_decision,
        CHECK_SAMPLES,
        CHECK_SEED,
    );
    let consistent = report.max_consistency_defect <= CONSISTENCY_TOL;
    let cooperative = report.min_cross_sensitivity >= COOPERATIVITY_TOL;
    let verdict = |ok: bool| if ok { "pass" } else { "FAIL" };
    println!(
        "local consistency: max defect {:e} over {} samples: {}",
        report.max_consistency_defect,
        report.samples,
        verdict(consistent)
    );
    if report.min_cross_sensitivity.is_finite() {
        println!(
            "cooperativity: min cross sensitivity {:e}: {}",
            report.min_cross_sensitivity,
            verdict(cooperative)
        );
    } else {
        println!("cooperativity: no branching nodes: pass");
    }
    Ok(if feasible && consistent && cooperative {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn sweep(target: &Target, etas: &[f64]) -> Result<ExitCode> {
    if etas.is_empty() {
        bail!("no update rates given");
    }
    let config = load(&target.scenario)?;
    let dir = output_dir(target, &config);
    let entries = experiment::sweep(&config, etas);
    let mut failures = 0;
    for entry in &entries {
        match &entry.outcome {
            Ok(run) => {
                write_results(&run.record(), &dir, &format!("eta-{}", entry.eta))?;
                describe_run(&format!("eta = {}", entry.eta), run);
            }
            Err(err) => {
                failures += 1;
                eprintln!("eta = {}: failed: {err}", entry.eta);
            }
        }
    }
    let summary = dir.join("summary.csv");
    write_atomic(&summary, experiment::sweep_summary_csv(&entries).as_bytes())?;
    println!("wrote {}", summary.display());
    if failures > 0 {
        bail!("{failures} of {} runs failed", entries.len());
    }
    Ok(ExitCode::SUCCESS)
}

fn compare(target: &Target, overrides: &Overrides, svg: bool) -> Result<ExitCode> {
    let config = overrides.apply(load(&target.scenario)?)?;
    let dir = output_dir(target, &config);
    let cmp = experiment::compare(&config)?;
    write_results(&cmp.i_logit.record(), &dir, "i_logit")?;
    write_results(
        &cmp.preference_consistent.record(),
        &dir,
        "preference_consistent",
    )?;
    let path = dir.join("comparison.csv");
    write_atomic(&path, cmp.distance_csv().as_bytes())?;
    describe_run("i-logit", &cmp.i_logit);
    describe_run("preference-consistent", &cmp.preference_consistent);
    if let (Some(a), Some(b)) = (
        cmp.i_logit.time_to_threshold(),
        cmp.preference_consistent.time_to_threshold(),
    ) {
        let faster = if b < a {
            "preference-consistent"
        } else if a < b {
            "i-logit"
        } else {
            "neither"
        };
        println!(
            "relative difference {:.2}%, faster: {faster}",
            100.0 * (a - b).abs() / a.max(b)
        );
    }
    println!("wrote {}", path.display());
    if svg {
        let path = dir.join("comparison.svg");
        let plot = plot::log_linear_svg(
            &format!(
                "{}: distance to equilibrium, eta = {}",
                config.name, config.dynamics.eta
            ),
            &[
                ("i-logit", &distance_series(&cmp.i_logit)),
                (
                    "preference-consistent",
                    &distance_series(&cmp.preference_consistent),
                ),
            ],
        );
        write_atomic(&path, plot.as_bytes())?;
        println!("wrote {}", path.display());
    }
    Ok(ExitCode::SUCCESS)
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn overrides_are_validated() {
        let config = load("fig1").unwrap();
        let bad = Overrides {
            eta: Some(-1.0),
            dt: None,
            t_end: None,
            stride: None,
            adaptive: false,
        };
        assert!(bad.apply(config.clone()).is_err());
        let good = Overrides {
            eta: Some(10.0),
            dt: Some(0.005),
            t_end: Some(5.0),
            stride: Some(3),
            adaptive: false,
        };
        let applied = good.apply(config).unwrap();
        assert_eq!(applied.dynamics.eta, 10.0);
        assert_eq!(applied.solver.dt, Some(0.005));
        assert_eq!(applied.solver.stride, 3);
    }
}
