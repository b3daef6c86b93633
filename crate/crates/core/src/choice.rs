//! Driver decisions.
//!
//! Two rules shape route choice. Globally, the aggregate path preference
//! chases a perturbed best response to current path delays; the built-in
//! perturbation is the entropy, giving the logit rule. Locally, at every
//! node, arriving drivers split over the outgoing links according to a local
//! decision function of the observed outgoing flows and the flows their
//! preference would induce.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::congestion::CongestionModel;
use crate::graph::PathSet;
use crate::instance::Instance;

/// Tolerance on the sum of a path preference.
pub const SIMPLEX_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChoiceError {
    #[error("invalid path preference: {0}")]
    InvalidPreference(String),
    #[error("every path has infinite delay")]
    AllPathsInfiniteDelay,
    #[error("preference-associated outflow of the node is zero")]
    ZeroPreferenceOutflow,
    #[error("invalid choice parameter: {0}")]
    InvalidParameter(String),
}

/// A probability vector over the paths of a network.
#[derive(Debug, Clone, PartialEq)]
pub struct PathPreference(Vec<f64>);

impl PathPreference {
    pub fn new(weights: Vec<f64>) -> Result<Self, ChoiceError> {
        if weights.is_empty() {
            return Err(ChoiceError::InvalidPreference("no paths".into()));
        }
        if let Some((p, w)) = weights
            .iter()
            .enumerate()
            .find(|(_, w)| !(w.is_finite() && **w >= 0.0))
        {
            return Err(ChoiceError::InvalidPreference(format!(
                "entry {p} is {w}, expected a finite nonnegative weight"
            )));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > SIMPLEX_TOL {
            return Err(ChoiceError::InvalidPreference(format!(
                "weights sum to {total}, expected 1"
            )));
        }
        Ok(Self(weights))
    }

    pub fn uniform(paths: usize) -> Self {
        Self(vec![1.0 / paths as f64; paths])
    }

    pub fn weights(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Whether the induced link flows stay strictly below capacity.
    pub fn is_feasible(&self, paths: &PathSet, congestion: &CongestionModel) -> bool {
        is_feasible(self.weights(), paths, congestion)
    }
}

pub(crate) fn is_feasible(pi: &[f64], paths: &PathSet, congestion: &CongestionModel) -> bool {
    paths
        .link_flows(pi)
        .iter()
        .enumerate()
        .all(|(e, &f)| f < congestion.capacity(e))
}

/// Per-path delays `A'T(f)`; a path through a link at or above capacity has
/// infinite delay.
pub fn path_delays(paths: &PathSet, congestion: &CongestionModel, flows: &[f64]) -> Vec<f64> {
    paths.path_sums(&congestion.delays(flows))
}

/// Global perturbed best response to path delays.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PerturbedBestResponse {
    /// Softmax of `−β · delay`, i.e. entropy perturbation `h(ω) = β⁻¹ Σ ω log ω`.
    Logit { beta: f64 },
}

impl PerturbedBestResponse {
    pub fn logit(beta: f64) -> Result<Self, ChoiceError> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(ChoiceError::InvalidParameter(format!(
                "logit noise level must be positive and finite, got {beta}"
            )));
        }
        Ok(Self::Logit { beta })
    }

    pub fn respond(&self, delays: &[f64]) -> Result<PathPreference, ChoiceError> {
        let mut weights = vec![0.0; delays.len()];
        self.respond_into(delays, &mut weights)?;
        Ok(PathPreference(weights))
    }

    /// Writes the response into `out` without allocating.
    pub fn respond_into(&self, delays: &[f64], out: &mut [f64]) -> Result<(), ChoiceError> {
        match *self {
            Self::Logit { beta } => {
                let best = delays
                    .iter()
                    .copied()
                    .filter(|d| d.is_finite())
                    .fold(f64::INFINITY, f64::min);
                if !best.is_finite() {
                    return Err(ChoiceError::AllPathsInfiniteDelay);
                }
                let mut total = 0.0;
                for (w, &d) in out.iter_mut().zip(delays) {
                    *w = if d.is_finite() {
                        (-beta * (d - best)).exp()
                    } else {
                        0.0
                    };
                    total += *w;
                }
                for w in out.iter_mut() {
                    *w /= total;
                }
                Ok(())
            }
        }
    }

    /// The perturbation `h(π)`, with `0 log 0 = 0`.
    pub fn perturbation(&self, pi: &[f64]) -> f64 {
        match *self {
            Self::Logit { beta } => {
                pi.iter()
                    .filter(|&&p| p > 0.0)
                    .map(|&p| p * p.ln())
                    .sum::<f64>()
                    / beta
            }
        }
    }

    /// `∇h(π)`; entries are `−∞` where `π_p = 0`.
    pub fn perturbation_gradient(&self, pi: &[f64]) -> Vec<f64> {
        match *self {
            Self::Logit { beta } => pi.iter().map(|&p| (p.ln() + 1.0) / beta).collect(),
        }
    }
}

/// Node-level split of arriving traffic over outgoing links.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LocalDecision {
    /// `G_e ∝ f^π_e exp(−γ (f_e − f^π_e))`.
    ILogit { gamma: f64 },
    /// `G_e ∝ f^π_e`, ignoring observed flows.
    PreferenceConsistent,
}

impl LocalDecision {
    pub fn i_logit(gamma: f64) -> Result<Self, ChoiceError> {
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(ChoiceError::InvalidParameter(format!(
                "i-logit sensitivity must be nonnegative and finite, got {gamma}"
            )));
        }
        Ok(Self::ILogit { gamma })
    }

    /// Split fractions over a node's outgoing links, given the observed
    /// outgoing flows and the preference-associated ones.
    pub fn split(&self, out_flows: &[f64], pref_out: &[f64]) -> Result<Vec<f64>, ChoiceError> {
        let mut out = vec![0.0; out_flows.len()];
        self.split_into(out_flows, pref_out, &mut out)?;
        Ok(out)
    }

    pub fn split_into(
        &self,
        out_flows: &[f64],
        pref_out: &[f64],
        out: &mut [f64],
    ) -> Result<(), ChoiceError> {
        debug_assert_eq!(out_flows.len(), pref_out.len());
        let pref_total: f64 = pref_out.iter().sum();
        if !(pref_total > 0.0) {
            return Err(ChoiceError::ZeroPreferenceOutflow);
        }
        match *self {
            Self::PreferenceConsistent => {
                for (g, &fp) in out.iter_mut().zip(pref_out) {
                    *g = fp / pref_total;
                }
            }
            Self::ILogit { gamma } => {
                let exponent = |f: f64, fp: f64| -gamma * (f - fp);
                let shift = out_flows
                    .iter()
                    .zip(pref_out)
                    .filter(|(_, &fp)| fp > 0.0)
                    .map(|(&f, &fp)| exponent(f, fp))
                    .fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for ((g, &f), &fp) in out.iter_mut().zip(out_flows).zip(pref_out) {
                    *g = if fp > 0.0 {
                        fp * (exponent(f, fp) - shift).exp()
                    } else {
                        0.0
                    };
                    total += *g;
                }
                for g in out.iter_mut() {
                    *g /= total;
                }
            }
        }
        Ok(())
    }
}

/// Largest violation of local consistency: at the preference-associated
/// flows, every node must split its total preference outflow exactly as the
/// preference does, `λ_v G^v_e(f^π) = f^π_e`.
pub fn consistency_defect(instance: &Instance, decision: &LocalDecision, pi: &[f64]) -> f64 {
    let pref = instance.preference_flows(pi);
    let net = &instance.network;
    let mut worst: f64 = 0.0;
    for v in 0..net.destination() {
        let links = net.out_links(v);
        let pref_out: Vec<f64> = links.iter().map(|&e| pref[e]).collect();
        let total: f64 = pref_out.iter().sum();
        let Ok(split) = decision.split(&pref_out, &pref_out) else {
            continue;
        };
        for (g, fp) in split.iter().zip(&pref_out) {
            worst = worst.max((total * g - fp).abs());
        }
    }
    worst
}

/// Smallest central-difference cross sensitivity `∂G_j/∂f_e`, `j ≠ e`, at
/// one node. Cooperative rules keep this nonnegative.
pub fn min_cross_sensitivity(
    decision: &LocalDecision,
    out_flows: &[f64],
    pref_out: &[f64],
    step: f64,
) -> Result<f64, ChoiceError> {
    let mut worst = f64::INFINITY;
    let mut probe = out_flows.to_vec();
    for e in 0..out_flows.len() {
        probe[e] = out_flows[e] + step;
        let up = decision.split(&probe, pref_out)?;
        probe[e] = out_flows[e] - step;
        let down = decision.split(&probe, pref_out)?;
        probe[e] = out_flows[e];
        for j in (0..out_flows.len()).filter(|&j| j != e) {
            worst = worst.min((up[j] - down[j]) / (2.0 * step));
        }
    }
    Ok(worst)
}

/// Outcome of [`spot_check_assumptions`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssumptionReport {
    pub samples: usize,
    pub max_consistency_defect: f64,
    pub min_cross_sensitivity: f64,
}

/// Random spot checks of local consistency and cooperativity: `samples`
/// interior preferences and, at every branching node, `samples` admissible
/// outgoing flow vectors.
pub fn spot_check_assumptions(
    instance: &Instance,
    decision: &LocalDecision,
    samples: usize,
    seed: u64,
) -> AssumptionReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = &instance.network;
    let step = 1e-6;
    let mut max_defect: f64 = 0.0;
    let mut min_cross = f64::INFINITY;
    for _ in 0..samples {
        let pi = random_interior_preference(&mut rng, instance.path_count());
        max_defect = max_defect.max(consistency_defect(instance, decision, &pi));
        let pref = instance.preference_flows(&pi);
        for v in 0..net.destination() {
            let links = net.out_links(v);
            if links.len() < 2 {
                continue;
            }
            let pref_out: Vec<f64> = links.iter().map(|&e| pref[e]).collect();
            let flows: Vec<f64> = links
                .iter()
                .map(|&e| {
                    let cap = instance.congestion.capacity(e).min(10.0);
                    step + rng.gen::<f64>() * (cap - 2.0 * step)
                })
                .collect();
            if let Ok(s) = min_cross_sensitivity(decision, &flows, &pref_out, step) {
                min_cross = min_cross.min(s);
            }
        }
    }
    AssumptionReport {
        samples,
        max_consistency_defect: max_defect,
        min_cross_sensitivity: min_cross,
    }
}

/// Uniform sample from the interior of the probability simplex.
pub fn random_interior_preference(rng: &mut impl Rng, paths: usize) -> Vec<f64> {
    let mut weights: Vec<f64> = (0..paths)
        .map(|_| -(1.0 - rng.gen::<f64>()).ln() + 1e-12)
        .collect();
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    weights
}
