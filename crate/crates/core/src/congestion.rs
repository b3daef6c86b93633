//! Link congestion: flow-density laws and delays.
//!
//! Every link carries a flow-density law `μ` that is zero at zero density,
//! strictly increasing, strictly concave and has a finite slope at zero. Its
//! supremum is the link capacity. The delay of a link at flow `f` is the
//! density needed to carry that flow divided by the flow, i.e. the traversal
//! time of a unit-length link; it is infinite at or above capacity.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::LinkId;
use crate::quadrature;

/// Flows below this are evaluated with the zero-flow delay limit.
const TINY_FLOW: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CongestionError {
    #[error("negative density {density} on link {link}")]
    NegativeDensity { link: LinkId, density: f64 },
    #[error("flow {flow} on link {link} is at or above its capacity {capacity}")]
    FlowAtOrAboveCapacity {
        link: LinkId,
        flow: f64,
        capacity: f64,
    },
    #[error("negative flow {flow} on link {link}")]
    NegativeFlow { link: LinkId, flow: f64 },
    #[error("invalid flow-density parameter: {0}")]
    InvalidParameter(String),
}

/// A link flow-density law.
///
/// Implementors supply the law, its inverse, its slope and its supremum; the
/// delay and the delay integral are derived from those.
pub trait FlowDensity {
    /// `μ(ρ)` for `ρ ≥ 0`.
    fn flow(&self, density: f64) -> f64;

    /// `μ⁻¹(f)` for `0 ≤ f < C`.
    fn density(&self, flow: f64) -> f64;

    /// `μ'(ρ)` for `ρ ≥ 0`.
    fn flow_slope(&self, density: f64) -> f64;

    /// `C = sup μ`, possibly infinite.
    fn capacity(&self) -> f64;

    /// Delay `T(f) = μ⁻¹(f) / f`, extended by continuity to `f = 0` and set
    /// to `+∞` at or above capacity.
    fn delay(&self, flow: f64) -> f64 {
        if flow >= self.capacity() {
            f64::INFINITY
        } else if flow < TINY_FLOW {
            1.0 / self.flow_slope(0.0)
        } else {
            self.density(flow) / flow
        }
    }

    /// `∫₀^f T(s) ds` by 64-node Gauss–Legendre quadrature, `+∞` above
    /// capacity.
    fn delay_integral(&self, flow: f64) -> f64 {
        if flow > self.capacity() {
            return f64::INFINITY;
        }
        if flow <= 0.0 {
            return 0.0;
        }
        quadrature::integrate(|s| self.delay(s), 0.0, flow)
    }
}

/// `μ(ρ) = C (1 − e^{−θρ})`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Exponential {
    capacity: f64,
    theta: f64,
}

impl Exponential {
    pub fn new(capacity: f64, theta: f64) -> Result<Self, CongestionError> {
        if !(capacity > 0.0 && capacity.is_finite()) {
            return Err(CongestionError::InvalidParameter(format!(
                "exponential law needs a finite positive capacity, got {capacity}"
            )));
        }
        if !(theta > 0.0 && theta.is_finite()) {
            return Err(CongestionError::InvalidParameter(format!(
                "exponential law needs a finite positive theta, got {theta}"
            )));
        }
        Ok(Self { capacity, theta })
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }
}

impl FlowDensity for Exponential {
    fn flow(&self, density: f64) -> f64 {
        -self.capacity * (-self.theta * density).exp_m1()
    }

    fn density(&self, flow: f64) -> f64 {
        -(-flow / self.capacity).ln_1p() / self.theta
    }

    fn flow_slope(&self, density: f64) -> f64 {
        self.capacity * self.theta * (-self.theta * density).exp()
    }

    fn capacity(&self) -> f64 {
        self.capacity
    }

    fn delay(&self, flow: f64) -> f64 {
        if flow >= self.capacity {
            f64::INFINITY
        } else if flow < TINY_FLOW {
            1.0 / (self.capacity * self.theta)
        } else {
            // log(C / (C − f)) without cancellation near capacity.
            -(-flow / self.capacity).ln_1p() / (self.theta * flow)
        }
    }
}

/// Flow-density law of one link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LinkLaw {
    Exponential(Exponential),
}

impl FlowDensity for LinkLaw {
    fn flow(&self, density: f64) -> f64 {
        match self {
            LinkLaw::Exponential(law) => law.flow(density),
        }
    }

    fn density(&self, flow: f64) -> f64 {
        match self {
            LinkLaw::Exponential(law) => law.density(flow),
        }
    }

    fn flow_slope(&self, density: f64) -> f64 {
        match self {
            LinkLaw::Exponential(law) => law.flow_slope(density),
        }
    }

    fn capacity(&self) -> f64 {
        match self {
            LinkLaw::Exponential(law) => law.capacity(),
        }
    }

    fn delay(&self, flow: f64) -> f64 {
        match self {
            LinkLaw::Exponential(law) => law.delay(flow),
        }
    }
}

/// Flow-density laws for every link of a network, indexed by link id.
#[derive(Debug, Clone, PartialEq)]
pub struct CongestionModel {
    laws: Vec<LinkLaw>,
}

impl CongestionModel {
    pub fn new(laws: Vec<LinkLaw>) -> Self {
        Self { laws }
    }

    /// Exponential laws with the given per-link capacities and shapes.
    pub fn exponential(capacities: &[f64], thetas: &[f64]) -> Result<Self, CongestionError> {
        if capacities.len() != thetas.len() {
            return Err(CongestionError::InvalidParameter(format!(
                "{} capacities but {} theta values",
                capacities.len(),
                thetas.len()
            )));
        }
        let laws = capacities
            .iter()
            .zip(thetas)
            .map(|(&c, &t)| Exponential::new(c, t).map(LinkLaw::Exponential))
            .collect::<Result<_, _>>()?;
        Ok(Self { laws })
    }

    /// The same exponential law on `links` links.
    pub fn uniform_exponential(
        links: usize,
        capacity: f64,
        theta: f64,
    ) -> Result<Self, CongestionError> {
        Self::exponential(&vec![capacity; links], &vec![theta; links])
    }

    pub fn link_count(&self) -> usize {
        self.laws.len()
    }

    pub fn law(&self, link: LinkId) -> &LinkLaw {
        &self.laws[link]
    }

    pub fn capacity(&self, link: LinkId) -> f64 {
        self.laws[link].capacity()
    }

    pub fn capacities(&self) -> Vec<f64> {
        self.laws.iter().map(FlowDensity::capacity).collect()
    }

    pub fn flow_of_density(&self, link: LinkId, density: f64) -> Result<f64, CongestionError> {
        if density < 0.0 || density.is_nan() {
            return Err(CongestionError::NegativeDensity { link, density });
        }
        Ok(self.laws[link].flow(density))
    }

    pub fn density_of_flow(&self, link: LinkId, flow: f64) -> Result<f64, CongestionError> {
        let capacity = self.capacity(link);
        if flow < 0.0 || flow.is_nan() {
            return Err(CongestionError::NegativeFlow { link, flow });
        }
        if flow >= capacity {
            return Err(CongestionError::FlowAtOrAboveCapacity {
                link,
                flow,
                capacity,
            });
        }
        Ok(self.laws[link].density(flow))
    }

    pub fn flow_derivative(&self, link: LinkId, density: f64) -> Result<f64, CongestionError> {
        if density < 0.0 || density.is_nan() {
            return Err(CongestionError::NegativeDensity { link, density });
        }
        Ok(self.laws[link].flow_slope(density))
    }

    /// Delay of `link` at a nonnegative flow; `+∞` at or above capacity.
    pub fn delay(&self, link: LinkId, flow: f64) -> f64 {
        self.laws[link].delay(flow)
    }

    pub fn delay_integral(&self, link: LinkId, flow: f64) -> f64 {
        self.laws[link].delay_integral(flow)
    }

    /// Link flows for a density vector, treating negative entries as zero.
    pub fn flows(&self, densities: &[f64]) -> Vec<f64> {
        self.laws
            .iter()
            .zip(densities)
            .map(|(law, &rho)| law.flow(rho.max(0.0)))
            .collect()
    }

    pub fn delays(&self, flows: &[f64]) -> Vec<f64> {
        self.laws
            .iter()
            .zip(flows)
            .map(|(law, &f)| law.delay(f))
            .collect()
    }

    /// Densities carrying the given flows, `+∞` where a flow is at or above
    /// capacity.
    pub fn densities(&self, flows: &[f64]) -> Vec<f64> {
        self.laws
            .iter()
            .zip(flows)
            .map(|(law, &f)| {
                if f >= law.capacity() {
                    f64::INFINITY
                } else {
                    law.density(f.max(0.0))
                }
            })
            .collect()
    }
}
