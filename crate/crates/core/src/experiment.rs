//! End-to-end runs: solve for the equilibrium, then simulate towards it.
//!
//! Sweeps and comparisons fan independent runs out over a thread pool. Each
//! run owns its state and results come back in input order, so the output
//! does not depend on scheduling.

use rayon::prelude::*;
use thiserror::Error;

use crate::dynamics::{
    simulate, DynamicsError, SimulationSettings, Trajectory, TIME_TO_THRESHOLD_LEVEL,
};
use crate::equilibrium::{self, EquilibriumError, EquilibriumResult, SolverKind};
use crate::scenario::results::{format_float, RunRecord};
use crate::scenario::{LocalDecisionSpec, Scenario, ScenarioConfig, ScenarioError};

/// The update rates of the published sweep.
pub const DEFAULT_SWEEP_ETAS: [f64; 5] = [0.01, 0.1, 1.0, 10.0, 100.0];

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Equilibrium(#[from] EquilibriumError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub scenario: Scenario,
    pub settings: SimulationSettings,
    pub equilibrium: EquilibriumResult,
    pub trajectory: Trajectory,
}

impl RunOutcome {
    pub fn record(&self) -> RunRecord<'_> {
        RunRecord {
            scenario: &self.scenario,
            settings: &self.settings,
            equilibrium: &self.equilibrium,
            trajectory: &self.trajectory,
        }
    }

    pub fn terminal_distance(&self) -> f64 {
        self.trajectory
            .terminal_distance()
            .expect("runs always carry an equilibrium reference")
    }

    pub fn time_to_threshold(&self) -> Option<f64> {
        self.trajectory.time_to_threshold(TIME_TO_THRESHOLD_LEVEL)
    }
}

/// Solves for the scenario's equilibrium.
pub fn solve_equilibrium(
    scenario: &Scenario,
    kind: SolverKind,
) -> Result<EquilibriumResult, EquilibriumError> {
    equilibrium::solve(
        &scenario.instance,
        &scenario.best_response,
        kind,
        &scenario.solver_options(kind),
    )
}

/// Solves for `ρ^h` with the fixed-point solver, then simulates from the
/// scenario's initial state, measuring the distance to it.
pub fn run(
    scenario: Scenario,
    settings: SimulationSettings,
) -> Result<RunOutcome, ExperimentError> {
    let equilibrium = solve_equilibrium(&scenario, SolverKind::FixedPoint)?;
    let trajectory = simulate(
        &scenario.dynamics(),
        scenario.initial_state.clone(),
        &settings,
        Some(&equilibrium.rho_h),
    )?;
    Ok(RunOutcome {
        scenario,
        settings,
        equilibrium,
        trajectory,
    })
}

/// Runs a scenario with the settings it declares.
pub fn run_config(config: &ScenarioConfig) -> Result<RunOutcome, ExperimentError> {
    let scenario = config.build()?;
    let settings = scenario.simulation_settings();
    run(scenario, settings)
}

/// Horizon used for a sweep run: the slow dynamics need time of order `1/η`,
/// so the declared horizon is extended to at least `50/η`.
pub fn sweep_horizon(t_end: f64, eta: f64) -> f64 {
    t_end.max(50.0 / eta)
}

#[derive(Debug)]
pub struct SweepEntry {
    pub eta: f64,
    pub outcome: Result<RunOutcome, ExperimentError>,
}

/// One run per update rate, in parallel.
pub fn sweep(config: &ScenarioConfig, etas: &[f64]) -> Vec<SweepEntry> {
    etas.par_iter()
        .map(|&eta| SweepEntry {
            eta,
            outcome: config
                .with_eta(eta)
                .map_err(ExperimentError::from)
                .and_then(|config| {
                    let scenario = config.build()?;
                    let mut settings = scenario.simulation_settings();
                    settings.t_end = sweep_horizon(settings.t_end, eta);
                    run(scenario, settings)
                }),
        })
        .collect()
}

/// `eta,status,terminal_distance_l1,time_to_threshold,final_time`; failed
/// runs have status `failed` and empty numeric cells.
pub fn sweep_summary_csv(entries: &[SweepEntry]) -> String {
    let mut out = String::from("eta,status,terminal_distance_l1,time_to_threshold,final_time\n");
    for entry in entries {
        let row = match &entry.outcome {
            Ok(run) => format!(
                "{},{},{},{},{}",
                format_float(entry.eta),
                run.trajectory.status.as_str(),
                format_float(run.terminal_distance()),
                run.time_to_threshold()
                    .map(format_float)
                    .unwrap_or_default(),
                format_float(run.trajectory.last().t),
            ),
            Err(_) => format!("{},failed,,,", format_float(entry.eta)),
        };
        out.push_str(&row);
        out.push('\n');
    }
    out
}

/// Paired runs that differ only in the local decision rule.
#[derive(Debug, Clone)]
pub struct Comparison {
    pub i_logit: RunOutcome,
    pub preference_consistent: RunOutcome,
}

/// Runs the scenario under i-logit and preference-consistent local decisions.
///
/// The i-logit sensitivity is taken from the scenario when it declares one and
/// is 1 otherwise. Neither run stops early, so both share one time grid.
pub fn compare(config: &ScenarioConfig) -> Result<Comparison, ExperimentError> {
    let gamma = match config.dynamics.local_decision {
        LocalDecisionSpec::ILogit { gamma } => gamma,
        LocalDecisionSpec::PreferenceConsistent => 1.0,
    };
    let prepare = |decision| -> Result<(Scenario, SimulationSettings), ExperimentError> {
        let scenario = config.with_local_decision(decision)?.build()?;
        let mut settings = scenario.simulation_settings();
        settings.stop_on_convergence = false;
        Ok((scenario, settings))
    };
    let (a, b) = (
        prepare(LocalDecisionSpec::ILogit { gamma })?,
        prepare(LocalDecisionSpec::PreferenceConsistent)?,
    );
    let (i_logit, preference_consistent) = rayon::join(|| run(a.0, a.1), || run(b.0, b.1));
    Ok(Comparison {
        i_logit: i_logit?,
        preference_consistent: preference_consistent?,
    })
}

impl Comparison {
    /// `t,dist_i_logit,dist_preference_consistent`.
    pub fn distance_csv(&self) -> String {
        let mut out = String::from("t,dist_i_logit,dist_preference_consistent\n");
        let a = &self.i_logit.trajectory.samples;
        let b = &self.preference_consistent.trajectory.samples;
        for (x, y) in a.iter().zip(b) {
            debug_assert_eq!(x.t, y.t);
            out.push_str(&format!(
                "{},{},{}\n",
                format_float(x.t),
                x.dist_l1.map(format_float).unwrap_or_default(),
                y.dist_l1.map(format_float).unwrap_or_default(),
            ));
        }
        out
    }
}
