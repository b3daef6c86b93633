//! Scenario files: parsing, validation, built-ins and result persistence.
//!
//! A scenario is a TOML document with a top-level `name` and the sections
//! `[network]`, `[dynamics]`, `[solver]` and `[output]`. Unknown keys are
//! rejected. See the repository README for the full grammar.

pub mod builtin;
pub mod results;

use std::fmt::Display;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::choice::{LocalDecision, PerturbedBestResponse, SIMPLEX_TOL};
use crate::congestion::{CongestionModel, Exponential, LinkLaw};
use crate::diagnostics::LyapunovConfig;
use crate::dynamics::{
    Dynamics, Integrator, SimulationSettings, SystemState, DEFAULT_BLOWUP_CEILING,
    DEFAULT_CONVERGENCE_TOL,
};
use crate::equilibrium::{SolverKind, SolverOptions};
use crate::graph::Network;
use crate::instance::Instance;

pub use builtin::{builtin, builtin_names, builtin_scenarios};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid `{field}`: {reason}")]
    Validation { field: String, reason: String },
    #[error("cannot read scenario {path}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot write {path}: {message}")]
    Write { path: PathBuf, message: String },
    #[error("cannot serialize: {0}")]
    Serialize(String),
}

impl ScenarioError {
    fn invalid(field: impl Into<String>, reason: impl Display) -> Self {
        Self::Validation {
            field: field.into(),
            reason: reason.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub network: NetworkSpec,
    pub dynamics: DynamicsSpec,
    #[serde(default)]
    pub solver: SolverSpec,
    #[serde(default)]
    pub output: OutputSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub nodes: usize,
    pub links: Vec<LinkSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    pub id: String,
    pub tail: usize,
    pub head: usize,
    pub capacity: f64,
    pub theta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsSpec {
    pub eta: f64,
    pub best_response: BestResponseSpec,
    pub local_decision: LocalDecisionSpec,
    #[serde(default)]
    pub initial_preference: InitialPreference,
    /// Accept networks whose min-cut capacity does not exceed 1.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub allow_infeasible: bool,
    /// Keyed by link id.
    pub initial_density: IndexMap<String, f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BestResponseSpec {
    Logit { beta: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LocalDecisionSpec {
    ILogit { gamma: f64 },
    PreferenceConsistent,
}

impl LocalDecisionSpec {
    pub fn name(&self) -> &'static str {
        match self {
            Self::ILogit { .. } => "i_logit",
            Self::PreferenceConsistent => "preference_consistent",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "RawPreference", into = "RawPreference")]
pub enum InitialPreference {
    #[default]
    Uniform,
    Explicit(Vec<f64>),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum RawPreference {
    Keyword(String),
    Weights(Vec<f64>),
}

impl TryFrom<RawPreference> for InitialPreference {
    type Error = String;

    fn try_from(raw: RawPreference) -> Result<Self, String> {
        match raw {
            RawPreference::Keyword(k) if k == "uniform" => Ok(Self::Uniform),
            RawPreference::Keyword(k) => Err(format!(
                "expected \"uniform\" or an array of path weights, found \"{k}\""
            )),
            RawPreference::Weights(w) => Ok(Self::Explicit(w)),
        }
    }
}

impl From<InitialPreference> for RawPreference {
    fn from(p: InitialPreference) -> Self {
        match p {
            InitialPreference::Uniform => Self::Keyword("uniform".into()),
            InitialPreference::Explicit(w) => Self::Weights(w),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSpec {
    /// Fixed step; omitted means `min(0.01, 0.1 / max(1, η))`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    pub t_end: f64,
    pub stride: usize,
    pub convergence_tol: f64,
    pub blowup_ceiling: f64,
    pub adaptive: bool,
    pub equilibrium_tol: f64,
    pub lyapunov_alpha: f64,
}

impl Default for SolverSpec {
    fn default() -> Self {
        Self {
            dt: None,
            t_end: 500.0,
            stride: 10,
            convergence_tol: DEFAULT_CONVERGENCE_TOL,
            blowup_ceiling: DEFAULT_BLOWUP_CEILING,
            adaptive: false,
            equilibrium_tol: 1e-10,
            lyapunov_alpha: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<String>,
}

/// Parses and fully validates a scenario document.
pub fn parse_scenario(text: &str) -> Result<ScenarioConfig, ScenarioError> {
    let config: ScenarioConfig = toml::from_str(text).map_err(|err| ScenarioError::Parse {
        line: err
            .span()
            .map(|span| text[..span.start.min(text.len())].matches('\n').count() + 1)
            .unwrap_or(0),
        message: err.message().trim().to_string(),
    })?;
    config.validate()?;
    Ok(config)
}

/// Reads a scenario file from disk.
pub fn read_scenario(path: &Path) -> Result<ScenarioConfig, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    parse_scenario(&text)
}

/// A built-in scenario by name, otherwise a file path.
pub fn load(name_or_path: &str) -> Result<ScenarioConfig, ScenarioError> {
    match builtin(name_or_path) {
        Some(config) => Ok(config),
        None => read_scenario(Path::new(name_or_path)),
    }
}

impl ScenarioConfig {
    /// Canonical text form; parsing it back yields an equal config.
    pub fn to_toml(&self) -> Result<String, ScenarioError> {
        toml::to_string(self).map_err(|e| ScenarioError::Serialize(e.to_string()))
    }

    /// SHA-256 of the canonical text, as lowercase hex.
    pub fn sha256(&self) -> Result<String, ScenarioError> {
        let digest = Sha256::digest(self.to_toml()?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        self.build().map(|_| ())
    }

    /// Overrides the update rate, revalidating.
    pub fn with_eta(&self, eta: f64) -> Result<Self, ScenarioError> {
        let mut config = self.clone();
        config.dynamics.eta = eta;
        config.validate()?;
        Ok(config)
    }

    pub fn with_local_decision(&self, decision: LocalDecisionSpec) -> Result<Self, ScenarioError> {
        let mut config = self.clone();
        config.dynamics.local_decision = decision;
        config.validate()?;
        Ok(config)
    }

    /// Validates everything and assembles the runnable objects.
    pub fn build(&self) -> Result<Scenario, ScenarioError> {
        if self.name.trim().is_empty() {
            return Err(ScenarioError::invalid("name", "must not be empty"));
        }
        let instance = self.build_instance()?;
        let best_response = match self.dynamics.best_response {
            BestResponseSpec::Logit { beta } => PerturbedBestResponse::logit(beta)
                .map_err(|e| ScenarioError::invalid("dynamics.best_response.beta", e))?,
        };
        let local_decision = match self.dynamics.local_decision {
            LocalDecisionSpec::ILogit { gamma } => LocalDecision::i_logit(gamma)
                .map_err(|e| ScenarioError::invalid("dynamics.local_decision.gamma", e))?,
            LocalDecisionSpec::PreferenceConsistent => LocalDecision::PreferenceConsistent,
        };
        let eta = self.dynamics.eta;
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(ScenarioError::invalid(
                "dynamics.eta",
                format!("must be positive and finite, got {eta}"),
            ));
        }
        let rho = self.initial_densities()?;
        let pi = self.initial_preference(instance.path_count())?;
        self.check_solver()?;
        let min_cut = instance.min_cut_capacity();
        if !(min_cut > 1.0) && !self.dynamics.allow_infeasible {
            return Err(ScenarioError::invalid(
                "network",
                format!(
                    "min-cut capacity {min_cut} does not exceed the unit demand \
                     (set dynamics.allow_infeasible = true to run anyway)"
                ),
            ));
        }
        Ok(Scenario {
            config: self.clone(),
            instance,
            best_response,
            local_decision,
            eta,
            initial_state: SystemState::new(rho, pi),
        })
    }

    fn build_instance(&self) -> Result<Instance, ScenarioError> {
        let links = &self.network.links;
        let mut raw = Vec::with_capacity(links.len());
        let mut laws = Vec::with_capacity(links.len());
        for (k, link) in links.iter().enumerate() {
            let field = |key: &str| format!("network.links[{k}].{key}");
            if link.id.trim().is_empty() {
                return Err(ScenarioError::invalid(field("id"), "must not be empty"));
            }
            if links[..k].iter().any(|other| other.id == link.id) {
                return Err(ScenarioError::invalid(
                    field("id"),
                    format!("duplicate link id `{}`", link.id),
                ));
            }
            for (key, value) in [("capacity", link.capacity), ("theta", link.theta)] {
                if !(value > 0.0 && value.is_finite()) {
                    return Err(ScenarioError::invalid(
                        field(key),
                        format!("must be positive and finite, got {value}"),
                    ));
                }
            }
            let law = Exponential::new(link.capacity, link.theta)
                .map_err(|e| ScenarioError::invalid(field("capacity"), e))?;
            laws.push(LinkLaw::Exponential(law));
            raw.push((link.tail, link.head));
        }
        let network = Network::new(self.network.nodes, &raw)
            .map_err(|e| ScenarioError::invalid("network", e))?;
        Instance::new(network, CongestionModel::new(laws))
            .map_err(|e| ScenarioError::invalid("network", e))
    }

    fn initial_densities(&self) -> Result<Vec<f64>, ScenarioError> {
        let table = &self.dynamics.initial_density;
        if let Some(key) = table
            .keys()
            .find(|key| !self.network.links.iter().any(|l| &l.id == *key))
        {
            return Err(ScenarioError::invalid(
                format!("dynamics.initial_density.{key}"),
                "no link with this id",
            ));
        }
        self.network
            .links
            .iter()
            .map(|link| {
                let field = format!("dynamics.initial_density.{}", link.id);
                match table.get(&link.id) {
                    None => Err(ScenarioError::invalid(
                        field,
                        format!("missing initial density for link `{}`", link.id),
                    )),
                    Some(&rho) if !(rho >= 0.0 && rho.is_finite()) => Err(ScenarioError::invalid(
                        field,
                        format!("must be finite and nonnegative, got {rho}"),
                    )),
                    Some(&rho) => Ok(rho),
                }
            })
            .collect()
    }

    fn initial_preference(&self, paths: usize) -> Result<Vec<f64>, ScenarioError> {
        let field = "dynamics.initial_preference";
        match &self.dynamics.initial_preference {
            InitialPreference::Uniform => Ok(vec![1.0 / paths as f64; paths]),
            InitialPreference::Explicit(w) => {
                if w.len() != paths {
                    return Err(ScenarioError::invalid(
                        field,
                        format!("{} weights given, the network has {paths} paths", w.len()),
                    ));
                }
                if let Some(p) = w.iter().find(|p| !(p.is_finite() && **p > 0.0)) {
                    return Err(ScenarioError::invalid(
                        field,
                        format!("weight {p} is not in the simplex interior"),
                    ));
                }
                let total: f64 = w.iter().sum();
                if (total - 1.0).abs() > SIMPLEX_TOL {
                    return Err(ScenarioError::invalid(
                        field,
                        format!("weights sum to {total}, not on the simplex"),
                    ));
                }
                Ok(w.clone())
            }
        }
    }

    fn check_solver(&self) -> Result<(), ScenarioError> {
        let s = &self.solver;
        let positive = |key: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(ScenarioError::invalid(
                    format!("solver.{key}"),
                    format!("must be positive and finite, got {v}"),
                ))
            }
        };
        if let Some(dt) = s.dt {
            positive("dt", dt)?;
        }
        positive("t_end", s.t_end)?;
        positive("convergence_tol", s.convergence_tol)?;
        positive("blowup_ceiling", s.blowup_ceiling)?;
        positive("equilibrium_tol", s.equilibrium_tol)?;
        if s.stride == 0 {
            return Err(ScenarioError::invalid(
                "solver.stride",
                "must be at least 1",
            ));
        }
        LyapunovConfig::new(s.lyapunov_alpha)
            .map_err(|e| ScenarioError::invalid("solver.lyapunov_alpha", e))?;
        Ok(())
    }
}

/// A validated scenario with its network, models and initial state built.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub instance: Instance,
    pub best_response: PerturbedBestResponse,
    pub local_decision: LocalDecision,
    pub eta: f64,
    pub initial_state: SystemState,
}

impl Scenario {
    pub fn name(&self) -> &str {
        &self.config.name
    }

    pub fn link_ids(&self) -> Vec<&str> {
        self.config
            .network
            .links
            .iter()
            .map(|l| l.id.as_str())
            .collect()
    }

    pub fn dynamics(&self) -> Dynamics<'_> {
        Dynamics::new(
            &self.instance,
            self.best_response,
            self.local_decision,
            self.eta,
        )
        .expect("update rate validated when the scenario was built")
    }

    pub fn simulation_settings(&self) -> SimulationSettings {
        let s = &self.config.solver;
        SimulationSettings {
            dt: s.dt,
            t_end: s.t_end,
            stride: s.stride,
            integrator: if s.adaptive {
                Integrator::adaptive()
            } else {
                Integrator::Rk4
            },
            convergence_tol: s.convergence_tol,
            blowup_ceiling: s.blowup_ceiling,
            lyapunov: LyapunovConfig::new(s.lyapunov_alpha).expect("validated"),
            ..SimulationSettings::default()
        }
    }

    pub fn solver_options(&self, kind: SolverKind) -> SolverOptions {
        SolverOptions {
            tol: self.config.solver.equilibrium_tol,
            ..SolverOptions::for_solver(kind)
        }
    }
}
