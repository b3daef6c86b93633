//! Perturbed Wardrop equilibrium.
//!
//! The equilibrium preference `π^h` is the unique fixed point of
//! `π = F(Aπ)` and the unique minimizer over the feasible simplex of the
//! strictly convex potential
//!
//! ```text
//! Φ(π) = Σ_e ∫₀^{f_e} T_e(s) ds + h(π),    f = Aπ.
//! ```
//!
//! Two independent solvers are provided: a damped fixed-point iteration and
//! entropic mirror descent on `Φ`. Both start from a strictly feasible
//! interior point and only accept steps that lower `Φ` or, once `Φ` is flat to
//! rounding, reduce the fixed-point residual `‖F(Aπ) − π‖₁` below its worst
//! value over the last few accepted steps. Rejected steps are halved, so
//! iterates never leave the feasible region. The best iterate seen is returned.
//!
//! Both methods are first order. When demand forces some link within a tiny
//! margin of its capacity the delay there is extremely steep, progress slows
//! to a crawl and the solver reports `NotConverged` rather than a rough answer.

use std::fmt;

use thiserror::Error;

use crate::choice::{self, ChoiceError, PerturbedBestResponse};
use crate::instance::Instance;

/// Paths carrying less preference than this count as unused in the Wardrop gap.
pub const DEFAULT_USED_THRESHOLD: f64 = 1e-6;

const NONMONOTONE_WINDOW: usize = 10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EquilibriumError {
    #[error("unit demand is infeasible: min-cut capacity {min_cut} does not exceed 1")]
    Infeasible { min_cut: f64 },
    #[error("{solver} solver stopped after {iterations} iterations with residual {residual:e}")]
    NotConverged {
        solver: SolverKind,
        iterations: usize,
        residual: f64,
    },
    #[error("preference induces a link flow at or above capacity")]
    InfeasiblePreference,
    #[error("invalid solver option: {0}")]
    InvalidOption(String),
    #[error(transparent)]
    Choice(#[from] ChoiceError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SolverKind {
    /// `π ← (1 − s) π + s F(Aπ)`.
    FixedPoint,
    /// `π ← π^{1−s} F(Aπ)^s / Z`, a mirror-descent step of size `sβ` on `Φ`.
    MirrorDescent,
}

impl SolverKind {
    pub const ALL: [SolverKind; 2] = [SolverKind::FixedPoint, SolverKind::MirrorDescent];

    pub fn name(&self) -> &'static str {
        match self {
            Self::FixedPoint => "fixed-point",
            Self::MirrorDescent => "mirror-descent",
        }
    }
}

impl fmt::Display for SolverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    /// Stop once `‖F(Aπ) − π‖₁` is at most this.
    pub tol: f64,
    pub max_iters: usize,
    /// Initial (and largest) step `s ∈ (0, 1]`.
    pub step: f64,
    /// The step is never shrunk below this.
    pub min_step: f64,
    /// Extra iterations allowed after reaching `tol` while the residual
    /// keeps decreasing.
    pub polish_iters: usize,
}

impl SolverOptions {
    pub fn for_solver(kind: SolverKind) -> Self {
        let max_iters = match kind {
            SolverKind::FixedPoint => 1_000_000,
            SolverKind::MirrorDescent => 100_000,
        };
        Self {
            tol: 1e-10,
            max_iters,
            step: 0.5,
            min_step: 1e-14,
            polish_iters: 1000,
        }
    }

    fn validate(&self) -> Result<(), EquilibriumError> {
        if !(self.tol > 0.0) {
            return Err(EquilibriumError::InvalidOption(format!(
                "tolerance {}",
                self.tol
            )));
        }
        if !(self.step > 0.0 && self.step <= 1.0) {
            return Err(EquilibriumError::InvalidOption(format!(
                "step must lie in (0, 1], got {}",
                self.step
            )));
        }
        if !(self.min_step > 0.0 && self.min_step <= self.step) {
            return Err(EquilibriumError::InvalidOption(format!(
                "minimum step {}",
                self.min_step
            )));
        }
        Ok(())
    }
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self::for_solver(SolverKind::FixedPoint)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumResult {
    pub pi_h: Vec<f64>,
    pub f_h: Vec<f64>,
    pub rho_h: Vec<f64>,
    pub potential_value: f64,
    pub fixed_point_residual: f64,
    pub wardrop_gap: f64,
    pub iterations: usize,
    pub solver: SolverKind,
}

/// `Φ(π)`. Fails if `Aπ` reaches capacity on some link.
pub fn potential(
    instance: &Instance,
    best_response: &PerturbedBestResponse,
    pi: &[f64],
) -> Result<f64, EquilibriumError> {
    if !choice::is_feasible(pi, &instance.paths, &instance.congestion) {
        return Err(EquilibriumError::InfeasiblePreference);
    }
    let flows = instance.preference_flows(pi);
    let integral: f64 = flows
        .iter()
        .enumerate()
        .map(|(e, &f)| instance.congestion.delay_integral(e, f))
        .sum();
    Ok(integral + best_response.perturbation(pi))
}

/// `‖F(Aπ) − π‖₁`; infinite for an infeasible preference.
pub fn fixed_point_residual(
    instance: &Instance,
    best_response: &PerturbedBestResponse,
    pi: &[f64],
) -> f64 {
    let mut response = vec![0.0; pi.len()];
    residual_into(instance, best_response, pi, &mut response)
}

fn residual_into(
    instance: &Instance,
    best_response: &PerturbedBestResponse,
    pi: &[f64],
    response: &mut [f64],
) -> f64 {
    if !choice::is_feasible(pi, &instance.paths, &instance.congestion) {
        return f64::INFINITY;
    }
    let delays = instance.path_delays(&instance.preference_flows(pi));
    if best_response.respond_into(&delays, response).is_err() {
        return f64::INFINITY;
    }
    response.iter().zip(pi).map(|(r, p)| (r - p).abs()).sum()
}

/// Largest delay on a used path minus the smallest path delay, at `f = Aπ`.
pub fn wardrop_gap(instance: &Instance, pi: &[f64], used_threshold: f64) -> f64 {
    let delays = instance.path_delays(&instance.preference_flows(pi));
    let best = delays.iter().copied().fold(f64::INFINITY, f64::min);
    let worst_used = delays
        .iter()
        .zip(pi)
        .filter(|(_, &p)| p > used_threshold)
        .map(|(&d, _)| d)
        .fold(f64::NEG_INFINITY, f64::max);
    (worst_used - best).max(0.0)
}

/// Computes `π^h` with the chosen solver.
pub fn solve(
    instance: &Instance,
    best_response: &PerturbedBestResponse,
    kind: SolverKind,
    options: &SolverOptions,
) -> Result<EquilibriumResult, EquilibriumError> {
    options.validate()?;
    let min_cut = instance.min_cut_capacity();
    if !(min_cut > 1.0) {
        return Err(EquilibriumError::Infeasible { min_cut });
    }
    solve_from(
        instance,
        best_response,
        kind,
        options,
        interior_start(instance),
    )
}

/// Like [`solve`], from a given strictly feasible preference with positive
/// entries.
pub fn solve_from(
    instance: &Instance,
    best_response: &PerturbedBestResponse,
    kind: SolverKind,
    options: &SolverOptions,
    start: Vec<f64>,
) -> Result<EquilibriumResult, EquilibriumError> {
    options.validate()?;
    if start.len() != instance.path_count()
        || start.iter().any(|&p| !(p > 0.0 && p.is_finite()))
        || (start.iter().sum::<f64>() - 1.0).abs() > choice::SIMPLEX_TOL
    {
        return Err(EquilibriumError::Choice(ChoiceError::InvalidPreference(
            "start must be a positive probability vector over the paths".into(),
        )));
    }
    if !choice::is_feasible(&start, &instance.paths, &instance.congestion) {
        return Err(EquilibriumError::InfeasiblePreference);
    }
    let mut pi = start;
    let mut response = vec![0.0; pi.len()];
    let mut candidate = vec![0.0; pi.len()];
    let mut candidate_response = vec![0.0; pi.len()];
    let mut residual = residual_into(instance, best_response, &pi, &mut response);
    let mut merit = potential(instance, best_response, &pi)?;
    let mut recent = std::collections::VecDeque::from([residual]);
    let mut best = (residual, pi.clone());
    let mut step = options.step;
    let mut iterations = 0;

    // Past the tolerance, keep iterating while the residual still improves so
    // that downstream distances are not floored at the solver tolerance.
    let mut polish_left = options.polish_iters;
    while best.0 > 0.0 {
        let converged = best.0 <= options.tol;
        if converged {
            if polish_left == 0 {
                break;
            }
            polish_left -= 1;
        } else if iterations >= options.max_iters {
            return Err(EquilibriumError::NotConverged {
                solver: kind,
                iterations,
                residual: best.0,
            });
        }
        iterations += 1;
        match kind {
            SolverKind::FixedPoint => {
                for ((c, p), r) in candidate.iter_mut().zip(&pi).zip(&response) {
                    *c = (1.0 - step) * p + step * r;
                }
            }
            SolverKind::MirrorDescent => {
                for ((c, p), r) in candidate.iter_mut().zip(&pi).zip(&response) {
                    *c = weighted_log(1.0 - step, *p) + weighted_log(step, *r);
                }
                let top = candidate.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for c in candidate.iter_mut() {
                    *c = (*c - top).exp();
                    total += *c;
                }
                for c in candidate.iter_mut() {
                    *c /= total;
                }
            }
        }
        let candidate_residual =
            residual_into(instance, best_response, &candidate, &mut candidate_response);
        // Both updates descend Φ for small steps, so it drives progress far from
        // the solution. Near it Φ is flat to rounding and the residual decides.
        let candidate_merit = if candidate_residual.is_finite() {
            potential(instance, best_response, &candidate).unwrap_or(f64::INFINITY)
        } else {
            f64::INFINITY
        };
        let noise = 8.0 * f64::EPSILON * merit.abs().max(1.0);
        // The damped map contracts in its own norm, not in ℓ₁, so the residual
        // is only required to beat its recent worst.
        let reference = recent.iter().copied().fold(0.0, f64::max);
        let accept = candidate_merit < merit - noise
            || (candidate_merit <= merit + noise && candidate_residual < reference);
        if accept {
            std::mem::swap(&mut pi, &mut candidate);
            std::mem::swap(&mut response, &mut candidate_response);
            residual = candidate_residual;
            merit = candidate_merit;
            if recent.len() == NONMONOTONE_WINDOW {
                recent.pop_front();
            }
            recent.push_back(residual);
            if residual < best.0 {
                best = (residual, pi.clone());
            }
            step = (step * 1.25).min(options.step);
        } else {
            step *= 0.5;
            if step < options.min_step {
                if converged {
                    break;
                }
                return Err(EquilibriumError::NotConverged {
                    solver: kind,
                    iterations,
                    residual: best.0,
                });
            }
        }
    }
    let (residual, pi) = best;

    let f_h = instance.preference_flows(&pi);
    let rho_h = instance.congestion.densities(&f_h);
    Ok(EquilibriumResult {
        potential_value: potential(instance, best_response, &pi)?,
        fixed_point_residual: residual,
        wardrop_gap: wardrop_gap(instance, &pi, DEFAULT_USED_THRESHOLD),
        iterations,
        solver: kind,
        pi_h: pi,
        f_h,
        rho_h,
    })
}

/// `a ln x` with `0 ln 0 = 0`.
fn weighted_log(a: f64, x: f64) -> f64 {
    if a == 0.0 {
        0.0
    } else {
        a * x.ln()
    }
}

/// A strictly feasible preference with every entry positive.
///
/// The uniform preference when it is feasible. Otherwise a maximum flow is
/// decomposed into paths and scaled to unit demand, which is feasible when the
/// min-cut exceeds 1, and then blended with the uniform preference as far as
/// feasibility allows.
pub fn interior_start(instance: &Instance) -> Vec<f64> {
    let n = instance.path_count();
    let uniform = vec![1.0 / n as f64; n];
    if choice::is_feasible(&uniform, &instance.paths, &instance.congestion) {
        return uniform;
    }
    let max_flow = instance
        .network
        .max_flow(&instance.congestion.capacities())
        .expect("validated capacities");
    let routed = decompose(instance, max_flow.link_flows);
    let total: f64 = routed.iter().sum();
    if !(total > 0.0) {
        return uniform;
    }
    let mut lambda = 0.5;
    loop {
        let mixed: Vec<f64> = routed
            .iter()
            .zip(&uniform)
            .map(|(w, u)| (1.0 - lambda) * w / total + lambda * u)
            .collect();
        if choice::is_feasible(&mixed, &instance.paths, &instance.congestion) || lambda < 1e-12 {
            return mixed;
        }
        lambda *= 0.5;
    }
}

/// Greedy path decomposition of a link flow: follow the largest remaining
/// outflow from the origin, peel off the bottleneck, repeat.
fn decompose(instance: &Instance, mut flows: Vec<f64>) -> Vec<f64> {
    let net = &instance.network;
    let mut weights = vec![0.0; instance.path_count()];
    let floor = 1e-12 * flows.iter().copied().fold(0.0, f64::max);
    for _ in 0..net.link_count() {
        let mut path = Vec::new();
        let mut node = net.origin();
        while node != net.destination() {
            let Some(&e) = net
                .out_links(node)
                .iter()
                .filter(|&&e| flows[e] > floor)
                .max_by(|&&a, &&b| flows[a].total_cmp(&flows[b]))
            else {
                break;
            };
            path.push(e);
            node = net.link(e).head;
        }
        if node != net.destination() || path.is_empty() {
            break;
        }
        let bottleneck = path.iter().map(|&e| flows[e]).fold(f64::INFINITY, f64::min);
        for &e in &path {
            flows[e] -= bottleneck;
        }
        if let Some(p) = instance.paths.index_of(&path) {
            weights[p] += bottleneck;
        }
    }
    weights
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::congestion::CongestionModel;
    use crate::graph::Network;
    use std::f64::consts::LN_2;

    fn logit(beta: f64) -> PerturbedBestResponse {
        PerturbedBestResponse::logit(beta).unwrap()
    }

    fn parallel(caps: &[f64], thetas: &[f64]) -> Instance {
        let links: Vec<_> = caps.iter().map(|_| (0, 1)).collect();
        Instance::new(
            Network::new(2, &links).unwrap(),
            CongestionModel::exponential(caps, thetas).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn symmetric_two_link() {
        let inst = parallel(&[2.0, 2.0], &[1.0, 1.0]);
        for kind in SolverKind::ALL {
            let res = solve(&inst, &logit(1.0), kind, &SolverOptions::for_solver(kind)).unwrap();
            assert_eq!(res.pi_h, vec![0.5, 0.5]);
            assert_eq!(res.iterations, 0);
            let rho = -(0.75f64).ln();
            assert!((res.rho_h[0] - rho).abs() < 1e-15);
            assert_eq!(res.wardrop_gap, 0.0);
        }
    }

    #[test]
    fn single_link() {
        let inst = parallel(&[2.0], &[1.0]);
        let res = solve(
            &inst,
            &logit(1.0),
            SolverKind::FixedPoint,
            &SolverOptions::default(),
        )
        .unwrap();
        assert_eq!(res.pi_h, vec![1.0]);
        assert!((res.rho_h[0] - LN_2).abs() < 1e-15);
    }

    #[test]
    fn asymmetric_two_link_solvers_agree_with_bisection() {
        let inst = parallel(&[2.0, 2.0], &[1.0, 2.0]);
        // Scalar oracle: x = π₁ solves x = σ(β (T₂(1−x) − T₁(x))).
        let t = |e: usize, f: f64| inst.congestion.delay(e, f);
        let g = |x: f64| x - 1.0 / (1.0 + (t(0, x) - t(1, 1.0 - x)).exp());
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let x = 0.5 * (lo + hi);
        assert!((x - 0.43303).abs() < 1e-5);
        for kind in SolverKind::ALL {
            let res = solve(&inst, &logit(1.0), kind, &SolverOptions::for_solver(kind)).unwrap();
            assert!((res.pi_h[0] - x).abs() < 1e-10, "{kind}: {:?}", res.pi_h);
            assert!(res.fixed_point_residual <= 1e-10);
        }
    }

    #[test]
    fn infeasible_demand_is_reported() {
        let inst = parallel(&[0.4, 0.5], &[1.0, 1.0]);
        let err = solve(
            &inst,
            &logit(1.0),
            SolverKind::FixedPoint,
            &SolverOptions::default(),
        )
        .unwrap_err();
        assert!(
            matches!(err, EquilibriumError::Infeasible { min_cut } if (min_cut - 0.9).abs() < 1e-15)
        );
    }

    #[test]
    fn interior_start_when_uniform_is_infeasible() {
        // Uniform puts 1/2 on the link with capacity 0.3.
        let inst = parallel(&[0.3, 5.0], &[1.0, 1.0]);
        let start = interior_start(&inst);
        assert!(start.iter().all(|&p| p > 0.0));
        assert!((start.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(choice::is_feasible(&start, &inst.paths, &inst.congestion));
        for kind in SolverKind::ALL {
            let res = solve(&inst, &logit(1.0), kind, &SolverOptions::for_solver(kind)).unwrap();
            assert!(res.f_h[0] < 0.3);
        }
    }

    #[test]
    fn potential_requires_feasibility() {
        let inst = parallel(&[0.3, 5.0], &[1.0, 1.0]);
        assert_eq!(
            potential(&inst, &logit(1.0), &[0.5, 0.5]),
            Err(EquilibriumError::InfeasiblePreference)
        );
        assert_eq!(
            fixed_point_residual(&inst, &logit(1.0), &[0.5, 0.5]),
            f64::INFINITY
        );
    }

    #[test]
    fn wardrop_gap_ignores_unused_paths() {
        let inst = parallel(&[2.0, 2.0], &[1.0, 2.0]);
        assert_eq!(wardrop_gap(&inst, &[0.0, 1.0], 1e-6), 0.0);
        let gap = wardrop_gap(&inst, &[0.5, 0.5], 1e-6);
        let expected = inst.congestion.delay(0, 0.5) - inst.congestion.delay(1, 0.5);
        assert!((gap - expected).abs() < 1e-15);
    }

    #[test]
    fn explicit_starts() {
        let inst = parallel(&[2.0, 2.0], &[1.0, 2.0]);
        let opts = SolverOptions::default();
        let a = solve_from(
            &inst,
            &logit(1.0),
            SolverKind::FixedPoint,
            &opts,
            vec![0.9, 0.1],
        )
        .unwrap();
        let b = solve_from(
            &inst,
            &logit(1.0),
            SolverKind::FixedPoint,
            &opts,
            vec![0.1, 0.9],
        )
        .unwrap();
        assert!((a.pi_h[0] - b.pi_h[0]).abs() < 1e-12);
        assert!(solve_from(
            &inst,
            &logit(1.0),
            SolverKind::FixedPoint,
            &opts,
            vec![1.0, 0.0]
        )
        .is_err());
        let tight = parallel(&[0.3, 5.0], &[1.0, 1.0]);
        assert_eq!(
            solve_from(
                &tight,
                &logit(1.0),
                SolverKind::FixedPoint,
                &opts,
                vec![0.5, 0.5]
            ),
            Err(EquilibriumError::InfeasiblePreference)
        );
    }

    #[test]
    fn invalid_options() {
        let inst = parallel(&[2.0], &[1.0]);
        for opts in [
            SolverOptions {
                tol: 0.0,
                ..Default::default()
            },
            SolverOptions {
                step: 1.5,
                ..Default::default()
            },
            SolverOptions {
                min_step: 0.0,
                ..Default::default()
            },
        ] {
            assert!(matches!(
                solve(&inst, &logit(1.0), SolverKind::FixedPoint, &opts),
                Err(EquilibriumError::InvalidOption(_))
            ));
        }
    }
}
