//! Helpers shared by the integration tests: random networks and brute-force
//! oracles written independently of the library.

#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::Rng;

/// A random single-origin, single-destination DAG with shuffled node labels
/// and link order.
#[derive(Debug, Clone)]
pub struct RandomDag {
    pub nodes: usize,
    pub links: Vec<(usize, usize)>,
}

pub fn random_dag(rng: &mut impl Rng, max_nodes: usize) -> RandomDag {
    let n = rng.gen_range(2..=max_nodes);
    let mut links = Vec::new();
    // Every inner node gets a predecessor and a successor, so each node lies
    // on some origin-destination path.
    for v in 1..n - 1 {
        links.push((rng.gen_range(0..v), v));
        links.push((v, rng.gen_range(v + 1..n)));
    }
    if n == 2 || rng.gen_bool(0.5) {
        links.push((0, n - 1));
    }
    for _ in 0..rng.gen_range(0..=n) {
        let u = rng.gen_range(0..n - 1);
        let v = rng.gen_range(u + 1..n);
        links.push((u, v));
    }
    let mut labels: Vec<usize> = (0..n).collect();
    labels.shuffle(rng);
    let mut links: Vec<(usize, usize)> =
        links.iter().map(|&(u, v)| (labels[u], labels[v])).collect();
    links.shuffle(rng);
    RandomDag { nodes: n, links }
}

fn source_and_sink(nodes: usize, links: &[(usize, usize)]) -> (usize, usize) {
    let source = (0..nodes)
        .find(|&v| links.iter().all(|&(_, h)| h != v))
        .unwrap();
    let sink = (0..nodes)
        .find(|&v| links.iter().all(|&(t, _)| t != v))
        .unwrap();
    (source, sink)
}

/// All source-to-sink paths as link-id sequences, by plain recursion.
pub fn brute_force_paths(nodes: usize, links: &[(usize, usize)]) -> Vec<Vec<usize>> {
    fn walk(
        at: usize,
        sink: usize,
        links: &[(usize, usize)],
        prefix: &mut Vec<usize>,
        out: &mut Vec<Vec<usize>>,
    ) {
        if at == sink {
            out.push(prefix.clone());
            return;
        }
        for (id, &(t, h)) in links.iter().enumerate() {
            if t == at {
                prefix.push(id);
                walk(h, sink, links, prefix, out);
                prefix.pop();
            }
        }
    }
    let (source, sink) = source_and_sink(nodes, links);
    let mut out = Vec::new();
    walk(source, sink, links, &mut Vec::new(), &mut out);
    out
}

/// Minimum over all source-side node sets of the capacity leaving the set.
pub fn brute_force_min_cut(nodes: usize, links: &[(usize, usize)], capacities: &[f64]) -> f64 {
    let (source, sink) = source_and_sink(nodes, links);
    let inner: Vec<usize> = (0..nodes).filter(|&v| v != source && v != sink).collect();
    let mut best = f64::INFINITY;
    for mask in 0u32..(1 << inner.len()) {
        let mut side = vec![false; nodes];
        side[source] = true;
        for (k, &v) in inner.iter().enumerate() {
            side[v] = mask & (1 << k) != 0;
        }
        let cut: f64 = links
            .iter()
            .zip(capacities)
            .filter(|(&(t, h), _)| side[t] && !side[h])
            .map(|(_, c)| c)
            .sum();
        best = best.min(cut);
    }
    best
}

/// Density derivative recomputed node by node from the conservation law,
/// with the i-logit or preference-consistent split written out inline.
pub fn mass_balance_oracle(
    nodes: usize,
    links: &[(usize, usize)],
    flows: &[f64],
    pref_flows: &[f64],
    gamma: Option<f64>,
) -> Vec<f64> {
    let (source, sink) = source_and_sink(nodes, links);
    let mut h = vec![0.0; links.len()];
    for v in (0..nodes).filter(|&v| v != sink) {
        let inflow: f64 = if v == source {
            1.0
        } else {
            links
                .iter()
                .zip(flows)
                .filter(|(&(_, hd), _)| hd == v)
                .map(|(_, f)| f)
                .sum()
        };
        let out: Vec<usize> = (0..links.len()).filter(|&e| links[e].0 == v).collect();
        let weight = |e: usize| match gamma {
            Some(g) => pref_flows[e] * (-g * (flows[e] - pref_flows[e])).exp(),
            None => pref_flows[e],
        };
        let total: f64 = out.iter().map(|&e| weight(e)).sum();
        for &e in &out {
            h[e] = inflow * weight(e) / total - flows[e];
        }
    }
    h
}
