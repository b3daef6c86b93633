mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::random_dag;
use wardrop_core::choice::random_interior_preference;
use wardrop_core::equilibrium::{
    potential, solve, solve_from, wardrop_gap, SolverKind, SolverOptions,
};
use wardrop_core::scenario::builtin;
use wardrop_core::{CongestionModel, Instance, Network, PerturbedBestResponse};

/// Delay of an exponential link, written out independently of the library.
fn delay(c: f64, theta: f64, f: f64) -> f64 {
    if f == 0.0 {
        1.0 / (c * theta)
    } else {
        (c / (c - f)).ln() / (theta * f)
    }
}

/// Unperturbed equilibrium share of the first of two parallel links, by
/// bisection on equal delays, with the corners handled explicitly.
fn wardrop_share(c: [f64; 2], theta: [f64; 2]) -> f64 {
    let g = |x: f64| delay(c[0], theta[0], x) - delay(c[1], theta[1], 1.0 - x);
    if g(0.0) >= 0.0 {
        return 0.0;
    }
    if g(1.0) <= 0.0 {
        return 1.0;
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn logit(beta: f64) -> PerturbedBestResponse {
    PerturbedBestResponse::logit(beta).unwrap()
}

fn fixed_point(instance: &Instance, beta: f64) -> wardrop_core::EquilibriumResult {
    solve(
        instance,
        &logit(beta),
        SolverKind::FixedPoint,
        &SolverOptions::default(),
    )
    .unwrap()
}

/// A random feasible instance with at most 12 paths.
fn random_instance(seed: u64) -> Option<(Instance, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dag = random_dag(&mut rng, 6);
    let net = Network::new(dag.nodes, &dag.links).unwrap();
    if net.enumerate_paths().unwrap().len() > 12 {
        return None;
    }
    let raw: Vec<f64> = dag.links.iter().map(|_| rng.gen_range(0.3..3.0)).collect();
    // Every link can carry the whole demand with room to spare, so no link is
    // forced against capacity; near-saturated equilibria are too stiff for
    // first-order solvers to reach the tolerance in reasonable time.
    let floor = 1.2 / raw.iter().copied().fold(f64::INFINITY, f64::min);
    let scale = (rng.gen_range(1.5..4.0) / net.min_cut_capacity(&raw).unwrap()).max(floor);
    let caps: Vec<f64> = raw.iter().map(|c| c * scale).collect();
    let thetas: Vec<f64> = dag.links.iter().map(|_| rng.gen_range(0.3..3.0)).collect();
    let beta = rng.gen_range(0.3..5.0);
    let instance =
        Instance::new(net, CongestionModel::exponential(&caps, &thetas).unwrap()).unwrap();
    Some((instance, beta))
}

#[test]
fn asymmetric_pair_matches_the_bisection_oracle() {
    let scenario = builtin("two-link-asym").unwrap().build().unwrap();
    let x = wardrop_share([2.0, 2.0], [1.0, 2.0]);
    // The flatter link is slower even when empty, so the unperturbed
    // equilibrium routes everything over the steeper one.
    assert_eq!(x, 0.0);
    let distance = |beta: f64| {
        let eq = fixed_point(&scenario.instance, beta);
        (eq.f_h[0] - x).abs() + (eq.f_h[1] - (1.0 - x)).abs()
    };
    assert!((distance(1.0) - 0.86606).abs() < 1e-4);
    assert!((distance(10.0) - 0.262134).abs() < 1e-5);
}

#[test]
fn interior_wardrop_split_is_approached() {
    // Equal free-flow delays, unequal capacities: the oracle split is interior.
    let net = Network::new(2, &[(0, 1), (0, 1)]).unwrap();
    let instance = Instance::new(
        net,
        CongestionModel::exponential(&[2.0, 3.0], &[1.5, 1.0]).unwrap(),
    )
    .unwrap();
    let x = wardrop_share([2.0, 3.0], [1.5, 1.0]);
    assert!(x > 0.0 && x < 1.0);
    let distances: Vec<f64> = [1.0, 10.0, 100.0, 1000.0]
        .iter()
        .map(|&beta| {
            let eq = fixed_point(&instance, beta);
            (eq.f_h[0] - x).abs() + (eq.f_h[1] - (1.0 - x)).abs()
        })
        .collect();
    assert!(distances.windows(2).all(|w| w[1] < w[0]), "{distances:?}");
    // An interior split is approached at rate 1/β.
    assert!(distances[2] / distances[3] > 8.0, "{distances:?}");
    assert!(distances[3] < 5e-3);
}

#[test]
fn wardrop_gap_shrinks_with_beta() {
    let scenario = builtin("two-link-asym").unwrap().build().unwrap();
    let gaps: Vec<f64> = [1.0, 10.0, 100.0]
        .iter()
        .map(|&b| {
            wardrop_gap(
                &scenario.instance,
                &fixed_point(&scenario.instance, b).pi_h,
                1e-6,
            )
        })
        .collect();
    assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2], "{gaps:?}");

    let at = wardrop_gap(&scenario.instance, &[0.9, 0.1], 1e-6);
    assert!((at - (delay(2.0, 1.0, 0.9) - delay(2.0, 2.0, 0.1))).abs() < 1e-12);
}

#[test]
fn random_starts_reach_the_same_flows() {
    let scenario = builtin("fig1").unwrap().build().unwrap();
    let reference = fixed_point(&scenario.instance, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..10 {
        let start = random_interior_preference(&mut rng, 10);
        let eq = solve_from(
            &scenario.instance,
            &logit(1.0),
            SolverKind::MirrorDescent,
            &SolverOptions::for_solver(SolverKind::MirrorDescent),
            start,
        )
        .unwrap();
        let d: f64 = eq
            .f_h
            .iter()
            .zip(&reference.f_h)
            .map(|(a, b)| (a - b).abs())
            .sum();
        assert!(d <= 1e-7, "{d}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn solvers_agree_and_are_stationary(seed in any::<u64>()) {
        let Some((instance, beta)) = random_instance(seed) else { return Ok(()); };
        let br = logit(beta);
        let a = solve(&instance, &br, SolverKind::FixedPoint, &SolverOptions::default()).unwrap();
        let b = solve(&instance, &br, SolverKind::MirrorDescent,
                      &SolverOptions::for_solver(SolverKind::MirrorDescent)).unwrap();
        let d: f64 = a.pi_h.iter().zip(&b.pi_h).map(|(x, y)| (x - y).abs()).sum();
        prop_assert!(d <= 1e-8, "solvers differ by {}", d);
        prop_assert!(a.fixed_point_residual <= 1e-10 && b.fixed_point_residual <= 1e-10);

        // Central differences of the potential, projected onto the simplex.
        // Entries below 1e-3 are skipped: there the entropy curvature swamps a
        // central difference of any usable width.
        let h = 1e-6;
        let grad: Vec<f64> = (0..a.pi_h.len()).filter(|&p| a.pi_h[p] >= 1e-3).map(|p| {
            let mut up = a.pi_h.clone();
            let mut down = a.pi_h.clone();
            up[p] += h;
            down[p] -= h;
            (potential(&instance, &br, &up).unwrap() - potential(&instance, &br, &down).unwrap()) / (2.0 * h)
        }).collect();
        let mean = grad.iter().sum::<f64>() / grad.len() as f64;
        let worst = grad.iter().map(|g| (g - mean).abs()).fold(0.0, f64::max);
        prop_assert!(worst <= 1e-6, "projected gradient {}", worst);
    }

    #[test]
    fn equilibrium_minimizes_the_potential(seed in any::<u64>()) {
        let Some((instance, beta)) = random_instance(seed) else { return Ok(()); };
        let br = logit(beta);
        let eq = solve(&instance, &br, SolverKind::FixedPoint, &SolverOptions::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        for _ in 0..20 {
            let pi = random_interior_preference(&mut rng, instance.path_count());
            if let Ok(value) = potential(&instance, &br, &pi) {
                prop_assert!(eq.potential_value <= value + 1e-12);
            }
        }
    }
}
