//! A network together with its paths and link physics.

use thiserror::Error;

use crate::congestion::CongestionModel;
use crate::graph::{GraphError, Network, PathSet};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InstanceError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("congestion model has {laws} links, network has {links}")]
    LinkCountMismatch { laws: usize, links: usize },
}

/// The immutable part of a scenario, shared by every run on it.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub network: Network,
    pub paths: PathSet,
    pub congestion: CongestionModel,
}

impl Instance {
    pub fn new(network: Network, congestion: CongestionModel) -> Result<Self, InstanceError> {
        if congestion.link_count() != network.link_count() {
            return Err(InstanceError::LinkCountMismatch {
                laws: congestion.link_count(),
                links: network.link_count(),
            });
        }
        let paths = network.enumerate_paths()?;
        Ok(Self {
            network,
            paths,
            congestion,
        })
    }

    pub fn link_count(&self) -> usize {
        self.network.link_count()
    }

    pub fn path_count(&self) -> usize {
        self.paths.len()
    }

    /// Min-cut capacity `C*`; unit demand is feasible iff it exceeds 1.
    pub fn min_cut_capacity(&self) -> f64 {
        self.network
            .min_cut_capacity(&self.congestion.capacities())
            .expect("capacities of a validated congestion model are nonnegative")
    }

    /// Preference-associated link flows `f^π = Aπ`.
    pub fn preference_flows(&self, pi: &[f64]) -> Vec<f64> {
        self.paths.link_flows(pi)
    }

    /// Per-path delays `A'T(f)`.
    pub fn path_delays(&self, flows: &[f64]) -> Vec<f64> {
        crate::choice::path_delays(&self.paths, &self.congestion, flows)
    }
}
