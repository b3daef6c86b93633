//! The coupled two-time-scale system and its integration.
//!
//! State is the link density vector `ρ` and the path preference `π`:
//!
//! ```text
//! dπ/dt = η (F(μ(ρ)) − π)
//! dρ/dt = H(μ(ρ), π)
//! ```
//!
//! `F` is the perturbed best response to path delays and `H` is mass
//! conservation at every node, with arriving traffic split by the local
//! decision rule. The origin receives a constant unit inflow.

use thiserror::Error;

use crate::choice::{ChoiceError, LocalDecision, PerturbedBestResponse, SIMPLEX_TOL};
use crate::congestion::FlowDensity;
use crate::diagnostics::{self, LyapunovConfig};
use crate::instance::Instance;

/// Default fixed step for slow updates (`η ≤ 1`).
pub const DEFAULT_DT: f64 = 0.01;
/// Default density ceiling above which a run is declared unstable.
pub const DEFAULT_BLOWUP_CEILING: f64 = 1e6;
/// Default early-stop threshold on `‖ρ − ρ^h‖₁`.
pub const DEFAULT_CONVERGENCE_TOL: f64 = 1e-8;
/// Threshold for the time-to-threshold metric.
pub const TIME_TO_THRESHOLD_LEVEL: f64 = 1e-3;
/// Simplex drift beyond which `π` is clipped and renormalized after a step.
const SIMPLEX_REPAIR_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DynamicsError {
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("invalid simulation setting: {0}")]
    InvalidSetting(String),
    #[error("numerical blowup at t = {time}: density {density} on link {link}")]
    NumericalBlowup {
        time: f64,
        link: usize,
        density: f64,
    },
    #[error("step rejected: local error {error:e} still above tolerance at dt = {dt:e}")]
    StepRejected { dt: f64, error: f64 },
    #[error(transparent)]
    Choice(#[from] ChoiceError),
}

/// Densities and path preference; the full state of the coupled system.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemState {
    pub rho: Vec<f64>,
    pub pi: Vec<f64>,
}

impl SystemState {
    pub fn new(rho: Vec<f64>, pi: Vec<f64>) -> Self {
        Self { rho, pi }
    }

    fn axpy(&self, scale: f64, direction: &SystemState) -> SystemState {
        let add = |x: &[f64], d: &[f64]| x.iter().zip(d).map(|(a, b)| a + scale * b).collect();
        SystemState {
            rho: add(&self.rho, &direction.rho),
            pi: add(&self.pi, &direction.pi),
        }
    }

    fn max_abs(&self) -> f64 {
        self.rho
            .iter()
            .chain(&self.pi)
            .fold(0.0f64, |m, x| m.max(x.abs()))
    }

    fn max_abs_difference(&self, other: &SystemState) -> f64 {
        self.rho
            .iter()
            .zip(&other.rho)
            .chain(self.pi.iter().zip(&other.pi))
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
    }
}

/// The coupled system over a shared [`Instance`].
#[derive(Debug, Clone)]
pub struct Dynamics<'a> {
    instance: &'a Instance,
    best_response: PerturbedBestResponse,
    local_decision: LocalDecision,
    eta: f64,
}

impl<'a> Dynamics<'a> {
    /// `eta = 0` freezes the preference.
    pub fn new(
        instance: &'a Instance,
        best_response: PerturbedBestResponse,
        local_decision: LocalDecision,
        eta: f64,
    ) -> Result<Self, DynamicsError> {
        if !(eta >= 0.0 && eta.is_finite()) {
            return Err(DynamicsError::InvalidSetting(format!(
                "update rate must be nonnegative and finite, got {eta}"
            )));
        }
        Ok(Self {
            instance,
            best_response,
            local_decision,
            eta,
        })
    }

    pub fn instance(&self) -> &'a Instance {
        self.instance
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn best_response(&self) -> PerturbedBestResponse {
        self.best_response
    }

    pub fn local_decision(&self) -> LocalDecision {
        self.local_decision
    }

    /// Density derivative `H(f, π)`, node by node in topological order.
    ///
    /// A node whose preference-associated outflow is zero splits uniformly.
    pub fn fast_rhs(&self, flows: &[f64], pi: &[f64]) -> Vec<f64> {
        let net = &self.instance.network;
        let pref = self.instance.preference_flows(pi);
        let mut derivative = vec![0.0; net.link_count()];
        let mut out_flows = Vec::new();
        let mut pref_out = Vec::new();
        let mut split = Vec::new();
        for v in 0..net.destination() {
            let links = net.out_links(v);
            let inflow = if v == net.origin() {
                1.0
            } else {
                net.in_links(v).iter().map(|&e| flows[e]).sum()
            };
            out_flows.clear();
            out_flows.extend(links.iter().map(|&e| flows[e]));
            pref_out.clear();
            pref_out.extend(links.iter().map(|&e| pref[e]));
            split.clear();
            split.resize(links.len(), 0.0);
            if self
                .local_decision
                .split_into(&out_flows, &pref_out, &mut split)
                .is_err()
            {
                split.fill(1.0 / links.len() as f64);
            }
            for (k, &e) in links.iter().enumerate() {
                derivative[e] = inflow * split[k] - flows[e];
            }
        }
        derivative
    }

    /// Preference derivative `η (F(f) − π)`.
    pub fn slow_rhs(&self, flows: &[f64], pi: &[f64]) -> Result<Vec<f64>, ChoiceError> {
        if self.eta == 0.0 {
            return Ok(vec![0.0; pi.len()]);
        }
        let delays = self.instance.path_delays(flows);
        let mut response = vec![0.0; pi.len()];
        self.best_response.respond_into(&delays, &mut response)?;
        Ok(response
            .iter()
            .zip(pi)
            .map(|(r, p)| self.eta * (r - p))
            .collect())
    }

    /// Time derivative of the full state.
    pub fn derivative(&self, state: &SystemState) -> Result<SystemState, DynamicsError> {
        let flows = self.instance.congestion.flows(&state.rho);
        Ok(SystemState {
            rho: self.fast_rhs(&flows, &state.pi),
            pi: self.slow_rhs(&flows, &state.pi)?,
        })
    }

    /// One classical fourth-order Runge–Kutta step.
    ///
    /// Negative densities are clipped to zero; the preference is clipped and
    /// renormalized only if it drifted off the simplex by more than 1e-12.
    pub fn step(&self, state: &SystemState, dt: f64) -> Result<SystemState, DynamicsError> {
        Ok(self.step_counting(state, dt)?.0)
    }

    /// Like [`Dynamics::step`], also reporting the simplex drift before any
    /// repair and whether the repair fired.
    fn step_counting(
        &self,
        state: &SystemState,
        dt: f64,
    ) -> Result<(SystemState, StepReport), DynamicsError> {
        let k1 = self.derivative(state)?;
        let k2 = self.derivative(&state.axpy(0.5 * dt, &k1))?;
        let k3 = self.derivative(&state.axpy(0.5 * dt, &k2))?;
        let k4 = self.derivative(&state.axpy(dt, &k3))?;
        let combine = |x: &[f64], a: &[f64], b: &[f64], c: &[f64], d: &[f64]| -> Vec<f64> {
            (0..x.len())
                .map(|i| x[i] + dt / 6.0 * (a[i] + 2.0 * b[i] + 2.0 * c[i] + d[i]))
                .collect()
        };
        let mut rho = combine(&state.rho, &k1.rho, &k2.rho, &k3.rho, &k4.rho);
        let mut pi = if self.eta == 0.0 {
            state.pi.clone()
        } else {
            combine(&state.pi, &k1.pi, &k2.pi, &k3.pi, &k4.pi)
        };
        for r in &mut rho {
            *r = r.max(0.0);
        }
        let drift = (pi.iter().sum::<f64>() - 1.0).abs();
        let repaired = repair_simplex(&mut pi);
        Ok((SystemState { rho, pi }, StepReport { drift, repaired }))
    }

    /// Step-doubling error control around [`Dynamics::step`]: compares one
    /// step of size `dt` with two of size `dt / 2`, halving `dt` until the
    /// max-norm difference is within `atol`.
    pub fn step_adaptive(
        &self,
        state: &SystemState,
        dt: f64,
        atol: f64,
        dt_min: f64,
    ) -> Result<AdaptiveStep, DynamicsError> {
        let mut dt = dt;
        loop {
            let full = self.step(state, dt)?;
            let (mid, first) = self.step_counting(state, 0.5 * dt)?;
            let (half, second) = self.step_counting(&mid, 0.5 * dt)?;
            let error = full.max_abs_difference(&half);
            if error <= atol {
                let growth = if error == 0.0 {
                    2.0
                } else {
                    (0.9 * (atol / error).powf(0.2)).clamp(1.0, 2.0)
                };
                return Ok(AdaptiveStep {
                    state: half,
                    dt_taken: dt,
                    dt_next: dt * growth,
                    report: StepReport {
                        drift: first.drift.max(second.drift),
                        repaired: first.repaired || second.repaired,
                    },
                });
            }
            if 0.5 * dt < dt_min {
                return Err(DynamicsError::StepRejected { dt, error });
            }
            dt *= 0.5;
        }
    }
}

/// Result of [`Dynamics::step_adaptive`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveStep {
    pub state: SystemState,
    pub dt_taken: f64,
    pub dt_next: f64,
    report: StepReport,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct StepReport {
    drift: f64,
    repaired: bool,
}

/// Clips negative entries and renormalizes if `pi` left the simplex by more
/// than the repair tolerance. Returns whether it did.
fn repair_simplex(pi: &mut [f64]) -> bool {
    let total: f64 = pi.iter().sum();
    let negative = pi.iter().any(|&p| p < 0.0);
    if !negative && (total - 1.0).abs() <= SIMPLEX_REPAIR_TOL {
        return false;
    }
    for p in pi.iter_mut() {
        *p = p.max(0.0);
    }
    let total: f64 = pi.iter().sum();
    for p in pi.iter_mut() {
        *p /= total;
    }
    true
}

/// Step-size rule: `min(0.01, 0.1 / max(1, η))`.
pub fn auto_dt(eta: f64) -> f64 {
    DEFAULT_DT.min(0.1 / eta.max(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Integrator {
    /// Fixed-step classical Runge–Kutta.
    Rk4,
    /// Runge–Kutta with step-doubling error control.
    StepDoubling { atol: f64, dt_min: f64 },
}

impl Integrator {
    pub fn adaptive() -> Self {
        Self::StepDoubling {
            atol: 1e-8,
            dt_min: 1e-10,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Rk4 => "rk4",
            Self::StepDoubling { .. } => "rk4-step-doubling",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationSettings {
    /// Fixed (or initial, when adaptive) step; `None` applies [`auto_dt`].
    pub dt: Option<f64>,
    pub t_end: f64,
    /// Record every `stride`-th step.
    pub stride: usize,
    pub integrator: Integrator,
    /// Early stop once `‖ρ − ρ^h‖₁` drops below this (with a reference).
    pub convergence_tol: f64,
    pub stop_on_convergence: bool,
    /// Without a reference, stop once `‖dstate/dt‖∞` drops below this.
    pub stall_tol: f64,
    pub blowup_ceiling: f64,
    pub lyapunov: LyapunovConfig,
}

impl Default for SimulationSettings {
    fn default() -> Self {
        Self {
            dt: None,
            t_end: 500.0,
            stride: 10,
            integrator: Integrator::Rk4,
            convergence_tol: DEFAULT_CONVERGENCE_TOL,
            stop_on_convergence: true,
            stall_tol: 1e-12,
            blowup_ceiling: DEFAULT_BLOWUP_CEILING,
            lyapunov: LyapunovConfig::default(),
        }
    }
}

impl SimulationSettings {
    pub fn effective_dt(&self, eta: f64) -> f64 {
        self.dt.unwrap_or_else(|| auto_dt(eta))
    }

    fn validate(&self) -> Result<(), DynamicsError> {
        let bad = |msg: String| Err(DynamicsError::InvalidSetting(msg));
        if let Some(dt) = self.dt {
            if !(dt > 0.0 && dt.is_finite()) {
                return bad(format!("dt must be positive, got {dt}"));
            }
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return bad(format!("t_end must be positive, got {}", self.t_end));
        }
        if self.stride == 0 {
            return bad("stride must be at least 1".into());
        }
        if !(self.blowup_ceiling > 0.0) {
            return bad(format!(
                "blowup ceiling must be positive, got {}",
                self.blowup_ceiling
            ));
        }
        if let Integrator::StepDoubling { atol, dt_min } = self.integrator {
            if !(atol > 0.0 && dt_min > 0.0) {
                return bad("adaptive tolerances must be positive".into());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    /// `‖ρ − ρ^h‖₁` dropped below the convergence tolerance.
    Converged,
    /// No reference given and the state stopped moving.
    Stationary,
    /// Reached the final time.
    Completed,
}

impl RunStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Converged => "converged",
            Self::Stationary => "stationary",
            Self::Completed => "completed",
        }
    }
}

/// One recorded time point with its derived quantities.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub state: SystemState,
    pub flows: Vec<f64>,
    pub pref_flows: Vec<f64>,
    pub v: f64,
    pub w: f64,
    /// `‖ρ − ρ^h‖₁`, when an equilibrium reference was supplied.
    pub dist_l1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub status: RunStatus,
    /// Initial step size.
    pub dt: f64,
    pub steps: usize,
    /// How often the simplex repair fired.
    pub simplex_repairs: usize,
    /// Largest `|Σπ − 1|` seen right after a step, before any repair.
    pub max_simplex_drift: f64,
}

impl Trajectory {
    pub fn last(&self) -> &Sample {
        self.samples
            .last()
            .expect("a trajectory has at least its initial sample")
    }

    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }

    pub fn distances(&self) -> Option<Vec<f64>> {
        self.samples.iter().map(|s| s.dist_l1).collect()
    }

    pub fn terminal_distance(&self) -> Option<f64> {
        self.last().dist_l1
    }

    /// First time `‖ρ − ρ^h‖₁ ≤ level`, linearly interpolated between the
    /// recorded samples that bracket the crossing.
    pub fn time_to_threshold(&self, level: f64) -> Option<f64> {
        let mut previous: Option<(f64, f64)> = None;
        for sample in &self.samples {
            let d = sample.dist_l1?;
            if d <= level {
                return Some(match previous {
                    None => sample.t,
                    Some((t0, d0)) => t0 + (d0 - level) / (d0 - d) * (sample.t - t0),
                });
            }
            previous = Some((sample.t, d));
        }
        None
    }
}

/// Integrates from `initial` until `t_end`, convergence or stall.
///
/// `reference` is the equilibrium density `ρ^h`; when given, every sample
/// records `‖ρ − ρ^h‖₁` and the run may stop early on convergence.
pub fn simulate(
    dynamics: &Dynamics<'_>,
    initial: SystemState,
    settings: &SimulationSettings,
    reference: Option<&[f64]>,
) -> Result<Trajectory, DynamicsError> {
    settings.validate()?;
    let instance = dynamics.instance();
    check_initial_state(instance, &initial)?;
    if let Some(r) = reference {
        if r.len() != instance.link_count() {
            return Err(DynamicsError::InvalidState(format!(
                "reference has {} densities, network has {} links",
                r.len(),
                instance.link_count()
            )));
        }
    }

    let dt = settings.effective_dt(dynamics.eta());
    let recorder = Recorder {
        instance,
        weights: settings.lyapunov.link_weights(&instance.network),
        reference,
    };
    let mut samples = vec![recorder.sample(0.0, initial.clone())];
    let mut state = initial;
    let mut t = 0.0;
    let mut steps = 0usize;
    let mut simplex_repairs = 0usize;
    let mut max_simplex_drift: f64 = 0.0;
    let mut status = RunStatus::Completed;
    let mut next_dt = dt;
    let full_steps = (settings.t_end / dt * (1.0 + 1e-12)).floor() as usize;

    loop {
        let (next, report, t_next) = match settings.integrator {
            Integrator::Rk4 => {
                let (h, t_next) = if steps < full_steps {
                    (dt, (steps + 1) as f64 * dt)
                } else {
                    (settings.t_end - t, settings.t_end)
                };
                if h <= settings.t_end * 1e-12 {
                    break;
                }
                let (next, report) = step_or_blowup(dynamics, &state, h, t)?;
                (next, report, t_next)
            }
            Integrator::StepDoubling { atol, dt_min } => {
                let remaining = settings.t_end - t;
                if remaining <= settings.t_end * 1e-12 {
                    break;
                }
                let h = next_dt.min(remaining);
                let step = match dynamics.step_adaptive(&state, h, atol, dt_min) {
                    Err(DynamicsError::Choice(ChoiceError::AllPathsInfiniteDelay)) => {
                        return Err(blowup_at(&state, t))
                    }
                    other => other?,
                };
                next_dt = step.dt_next;
                let t_next = if step.dt_taken == remaining {
                    settings.t_end
                } else {
                    t + step.dt_taken
                };
                (step.state, step.report, t_next)
            }
        };
        steps += 1;
        t = t_next;
        max_simplex_drift = max_simplex_drift.max(report.drift);
        if report.repaired {
            simplex_repairs += 1;
        }
        state = next;
        check_blowup(instance, &state, t, settings.blowup_ceiling)?;

        let stop = match reference {
            Some(r) => settings.stop_on_convergence && l1(&state.rho, r) < settings.convergence_tol,
            None => dynamics.derivative(&state)?.max_abs() < settings.stall_tol,
        };
        if stop {
            status = if reference.is_some() {
                RunStatus::Converged
            } else {
                RunStatus::Stationary
            };
            samples.push(recorder.sample(t, state.clone()));
            break;
        }
        if steps.is_multiple_of(settings.stride) {
            samples.push(recorder.sample(t, state.clone()));
        }
    }
    if samples.last().map(|s| s.t) != Some(t) {
        samples.push(recorder.sample(t, state));
    }

    Ok(Trajectory {
        samples,
        status,
        dt,
        steps,
        simplex_repairs,
        max_simplex_drift,
    })
}

fn step_or_blowup(
    dynamics: &Dynamics<'_>,
    state: &SystemState,
    dt: f64,
    t: f64,
) -> Result<(SystemState, StepReport), DynamicsError> {
    match dynamics.step_counting(state, dt) {
        // Saturated links made every path delay infinite.
        Err(DynamicsError::Choice(ChoiceError::AllPathsInfiniteDelay)) => Err(blowup_at(state, t)),
        other => other,
    }
}

fn blowup_at(state: &SystemState, t: f64) -> DynamicsError {
    let (link, density) =
        state
            .rho
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (e, r)| {
                if r > best.1 {
                    (e, r)
                } else {
                    best
                }
            });
    DynamicsError::NumericalBlowup {
        time: t,
        link,
        density,
    }
}

fn check_initial_state(instance: &Instance, state: &SystemState) -> Result<(), DynamicsError> {
    if state.rho.len() != instance.link_count() {
        return Err(DynamicsError::InvalidState(format!(
            "{} densities for {} links",
            state.rho.len(),
            instance.link_count()
        )));
    }
    if let Some((e, r)) = state
        .rho
        .iter()
        .enumerate()
        .find(|(_, r)| !(r.is_finite() && **r >= 0.0))
    {
        return Err(DynamicsError::InvalidState(format!(
            "density {r} on link {e}"
        )));
    }
    if state.pi.len() != instance.path_count() {
        return Err(DynamicsError::InvalidState(format!(
            "{} preference weights for {} paths",
            state.pi.len(),
            instance.path_count()
        )));
    }
    let total: f64 = state.pi.iter().sum();
    if state.pi.iter().any(|p| !(p.is_finite() && *p >= 0.0)) || (total - 1.0).abs() > SIMPLEX_TOL {
        return Err(DynamicsError::InvalidState(format!(
            "preference {:?} is not a probability vector",
            state.pi
        )));
    }
    Ok(())
}

/// Densities above the ceiling, or so large that the flow rounds to
/// capacity, mean the network is filling up without bound.
fn check_blowup(
    instance: &Instance,
    state: &SystemState,
    t: f64,
    ceiling: f64,
) -> Result<(), DynamicsError> {
    for (e, &rho) in state.rho.iter().enumerate() {
        let law = instance.congestion.law(e);
        if !rho.is_finite() || rho > ceiling || law.flow(rho) >= law.capacity() {
            return Err(DynamicsError::NumericalBlowup {
                time: t,
                link: e,
                density: rho,
            });
        }
    }
    Ok(())
}

fn l1(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b).abs()).sum()
}

struct Recorder<'a> {
    instance: &'a Instance,
    weights: Vec<f64>,
    reference: Option<&'a [f64]>,
}

impl Recorder<'_> {
    fn sample(&self, t: f64, state: SystemState) -> Sample {
        let congestion = &self.instance.congestion;
        let flows = congestion.flows(&state.rho);
        let pref_flows = self.instance.preference_flows(&state.pi);
        let pref_densities = congestion.densities(&pref_flows);
        let v = diagnostics::weighted_l1(&self.weights, &flows, &pref_flows);
        let w = diagnostics::weighted_l1(&self.weights, &state.rho, &pref_densities);
        let dist_l1 = self.reference.map(|r| l1(&state.rho, r));
        Sample {
            t,
            state,
            flows,
            pref_flows,
            v,
            w,
            dist_l1,
        }
    }
}
