//! Scenarios shipped with the crate.

use super::{parse_scenario, ScenarioConfig};

const SOURCES: [(&str, &str); 6] = [
    ("fig1", include_str!("../../scenarios/fig1.scenario")),
    ("fig1-pc", include_str!("../../scenarios/fig1-pc.scenario")),
    (
        "two-link-sym",
        include_str!("../../scenarios/two-link-sym.scenario"),
    ),
    (
        "two-link-asym",
        include_str!("../../scenarios/two-link-asym.scenario"),
    ),
    (
        "single-link",
        include_str!("../../scenarios/single-link.scenario"),
    ),
    (
        "infeasible",
        include_str!("../../scenarios/infeasible.scenario"),
    ),
];

pub fn builtin_names() -> impl Iterator<Item = &'static str> {
    SOURCES.iter().map(|(name, _)| *name)
}

/// The source text of a built-in scenario.
pub fn builtin_source(name: &str) -> Option<&'static str> {
    SOURCES
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| *text)
}

pub fn builtin(name: &str) -> Option<ScenarioConfig> {
    builtin_source(name).map(|text| {
        parse_scenario(text)
            .unwrap_or_else(|e| panic!("built-in scenario `{name}` is invalid: {e}"))
    })
}

pub fn builtin_scenarios() -> Vec<(&'static str, ScenarioConfig)> {
    builtin_names()
        .map(|name| (name, builtin(name).expect("listed")))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{BestResponseSpec, InitialPreference, LocalDecisionSpec};

    #[test]
    fn all_builtins_parse_under_their_own_name() {
        let all = builtin_scenarios();
        assert_eq!(all.len(), 6);
        for (name, config) in all {
            assert_eq!(config.name, name);
            config.build().unwrap();
        }
        assert!(builtin("nope").is_none());
    }

    #[test]
    fn fig1_matches_the_published_parameters() {
        let config = builtin("fig1").unwrap();
        assert_eq!(config.network.nodes, 9);
        assert_eq!(config.network.links.len(), 15);
        let expected_links = [
            (0, 1),
            (0, 2),
            (0, 3),
            (1, 4),
            (2, 4),
            (2, 5),
            (3, 5),
            (3, 7),
            (1, 6),
            (4, 6),
            (5, 7),
            (4, 8),
            (5, 8),
            (6, 8),
            (7, 8),
        ];
        for (k, link) in config.network.links.iter().enumerate() {
            assert_eq!(link.id, format!("e{}", k + 1));
            assert_eq!((link.tail, link.head), expected_links[k]);
            assert_eq!(link.capacity, 2.0);
            assert_eq!(link.theta, 1.0);
        }
        assert_eq!(config.dynamics.eta, 0.1);
        assert_eq!(
            config.dynamics.best_response,
            BestResponseSpec::Logit { beta: 1.0 }
        );
        assert_eq!(
            config.dynamics.local_decision,
            LocalDecisionSpec::ILogit { gamma: 1.0 }
        );
        assert_eq!(
            config.dynamics.initial_preference,
            InitialPreference::Uniform
        );
        let rho = &config.dynamics.initial_density;
        let expected = [
            ("e1", 5.0),
            ("e12", 5.0),
            ("e2", 7.0),
            ("e6", 7.0),
            ("e8", 7.0),
            ("e3", 3.0),
            ("e7", 3.0),
            ("e4", 6.0),
            ("e5", 1.0),
            ("e9", 9.0),
            ("e10", 10.0),
            ("e13", 12.0),
            ("e14", 4.0),
            ("e15", 8.0),
            ("e11", 0.0),
        ];
        assert_eq!(rho.len(), expected.len());
        for (id, value) in expected {
            assert_eq!(rho[id], value, "{id}");
        }

        let scenario = config.build().unwrap();
        assert_eq!(scenario.instance.path_count(), 10);
        assert_eq!(scenario.initial_state.pi, vec![0.1; 10]);
        assert_eq!(scenario.instance.min_cut_capacity(), 6.0);
    }

    #[test]
    fn fig1_pc_differs_only_in_local_decision() {
        let mut pc = builtin("fig1-pc").unwrap();
        assert_eq!(
            pc.dynamics.local_decision,
            LocalDecisionSpec::PreferenceConsistent
        );
        let fig1 = builtin("fig1").unwrap();
        pc.name = fig1.name.clone();
        pc.description = fig1.description.clone();
        pc.dynamics.local_decision = fig1.dynamics.local_decision;
        assert_eq!(pc, fig1);
    }

    #[test]
    fn infeasible_min_cut() {
        let scenario = builtin("infeasible").unwrap().build().unwrap();
        assert!((scenario.instance.min_cut_capacity() - 0.9).abs() < 1e-15);
    }
}
