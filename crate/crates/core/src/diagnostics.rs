//! Lyapunov functions and distances monitored along trajectories.
//!
//! `V` and `W` are ℓ₁ distances between the actual link flows (densities)
//! and those induced by the current path preference, with the links leaving
//! node `v` weighted by `α^v` under the topological node numbering.

use thiserror::Error;

use crate::congestion::CongestionModel;
use crate::graph::Network;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DiagnosticsError {
    #[error("vectors of length {left} and {right} cannot be compared")]
    LengthMismatch { left: usize, right: usize },
    #[error("node weight base must lie in (0, 1), got {0}")]
    InvalidAlpha(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LyapunovConfig {
    alpha: f64,
}

impl LyapunovConfig {
    pub fn new(alpha: f64) -> Result<Self, DiagnosticsError> {
        if alpha > 0.0 && alpha < 1.0 {
            Ok(Self { alpha })
        } else {
            Err(DiagnosticsError::InvalidAlpha(alpha))
        }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// `α^{tail(e)}` for every link.
    pub fn link_weights(&self, network: &Network) -> Vec<f64> {
        network
            .links()
            .iter()
            .map(|link| self.alpha.powi(link.tail as i32))
            .collect()
    }
}

impl Default for LyapunovConfig {
    fn default() -> Self {
        Self { alpha: 0.5 }
    }
}

/// `V(f, π) = Σ_v α^v Σ_{e ∈ E⁺_v} |f_e − f^π_e|`, with `pref_flows = f^π`.
pub fn lyapunov_v(
    network: &Network,
    config: &LyapunovConfig,
    flows: &[f64],
    pref_flows: &[f64],
) -> f64 {
    weighted_l1(&config.link_weights(network), flows, pref_flows)
}

/// `W(ρ, π) = Σ_v α^v Σ_{e ∈ E⁺_v} |ρ_e − ρ^π_e|` with `ρ^π = μ⁻¹(f^π)`.
/// Infinite if some preference-associated flow is at or above capacity.
pub fn lyapunov_w(
    network: &Network,
    congestion: &CongestionModel,
    config: &LyapunovConfig,
    densities: &[f64],
    pref_flows: &[f64],
) -> f64 {
    let pref_densities = congestion.densities(pref_flows);
    weighted_l1(&config.link_weights(network), densities, &pref_densities)
}

pub(crate) fn weighted_l1(weights: &[f64], x: &[f64], y: &[f64]) -> f64 {
    weights
        .iter()
        .zip(x.iter().zip(y))
        .map(|(w, (a, b))| w * (a - b).abs())
        .sum()
}

pub fn distance_l1(x: &[f64], y: &[f64]) -> Result<f64, DiagnosticsError> {
    check_lengths(x, y)?;
    Ok(x.iter().zip(y).map(|(a, b)| (a - b).abs()).sum())
}

pub fn distance_l2(x: &[f64], y: &[f64]) -> Result<f64, DiagnosticsError> {
    check_lengths(x, y)?;
    Ok(x.iter()
        .zip(y)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt())
}

fn check_lengths(x: &[f64], y: &[f64]) -> Result<(), DiagnosticsError> {
    if x.len() == y.len() {
        Ok(())
    } else {
        Err(DiagnosticsError::LengthMismatch {
            left: x.len(),
            right: y.len(),
        })
    }
}
