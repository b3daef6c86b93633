//! Acyclic single origin-destination networks.
//!
//! A [`Network`] is built from a raw node count and link list. Validation
//! rejects cycles, extra sources or sinks and stranded nodes, then relabels
//! the nodes along a topological order so that the origin is `0`, the
//! destination is `node_count - 1` and every link `(u, v)` has `u < v`. Link
//! ids are kept exactly as given (their position in the input list).

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};

use thiserror::Error;

pub type NodeId = usize;
pub type LinkId = usize;

/// Default upper bound on the number of enumerated paths.
pub const DEFAULT_PATH_CAP: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GraphError {
    #[error("a network needs at least two nodes, got {0}")]
    TooFewNodes(usize),
    #[error("the network has no links")]
    NoLinks,
    #[error("link {link} references node {node}, but the network only has {node_count} nodes")]
    UnknownNode {
        link: LinkId,
        node: NodeId,
        node_count: usize,
    },
    #[error("directed cycle through nodes {nodes:?}")]
    CycleDetected { nodes: Vec<NodeId> },
    #[error("more than one origin (nodes without incoming links): {0:?}")]
    MultipleOrigins(Vec<NodeId>),
    #[error("more than one destination (nodes without outgoing links): {0:?}")]
    MultipleDestinations(Vec<NodeId>),
    #[error("nodes not on any origin-destination path: {0:?}")]
    UnreachableNode(Vec<NodeId>),
    #[error("more than {cap} origin-destination paths")]
    PathExplosion { cap: usize },
    #[error("expected {expected} link capacities, got {got}")]
    CapacityLengthMismatch { expected: usize, got: usize },
    #[error("capacity of link {link} must be nonnegative, got {value}")]
    InvalidCapacity { link: LinkId, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Link {
    pub tail: NodeId,
    pub head: NodeId,
}

/// A validated acyclic network with topologically relabeled nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    node_count: usize,
    links: Vec<Link>,
    /// `original_ids[v]` is the caller's id of relabeled node `v`.
    original_ids: Vec<NodeId>,
    out_links: Vec<Vec<LinkId>>,
    in_links: Vec<Vec<LinkId>>,
}

impl Network {
    /// Validates a raw network given as `(tail, head)` pairs over node ids
    /// `0..node_count`.
    pub fn new(node_count: usize, raw_links: &[(NodeId, NodeId)]) -> Result<Self, GraphError> {
        if node_count < 2 {
            return Err(GraphError::TooFewNodes(node_count));
        }
        if raw_links.is_empty() {
            return Err(GraphError::NoLinks);
        }
        for (link, &(tail, head)) in raw_links.iter().enumerate() {
            for node in [tail, head] {
                if node >= node_count {
                    return Err(GraphError::UnknownNode {
                        link,
                        node,
                        node_count,
                    });
                }
            }
        }

        let mut out_raw = vec![Vec::new(); node_count];
        let mut in_raw = vec![Vec::new(); node_count];
        for (link, &(tail, head)) in raw_links.iter().enumerate() {
            out_raw[tail].push(link);
            in_raw[head].push(link);
        }

        let order = topological_order(node_count, raw_links, &out_raw, &in_raw)?;

        let isolated: Vec<NodeId> = (0..node_count)
            .filter(|&v| out_raw[v].is_empty() && in_raw[v].is_empty())
            .collect();
        if !isolated.is_empty() {
            return Err(GraphError::UnreachableNode(isolated));
        }
        let sources: Vec<NodeId> = (0..node_count).filter(|&v| in_raw[v].is_empty()).collect();
        if sources.len() > 1 {
            return Err(GraphError::MultipleOrigins(sources));
        }
        let sinks: Vec<NodeId> = (0..node_count).filter(|&v| out_raw[v].is_empty()).collect();
        if sinks.len() > 1 {
            return Err(GraphError::MultipleDestinations(sinks));
        }
        // Acyclic with one source and one sink, so these are the first and
        // last nodes of the order.
        let origin = order[0];
        let destination = order[node_count - 1];

        let forward = reachable(origin, &out_raw, |l| raw_links[l].1);
        let backward = reachable(destination, &in_raw, |l| raw_links[l].0);
        let stranded: Vec<NodeId> = (0..node_count)
            .filter(|&v| !(forward[v] && backward[v]))
            .collect();
        if !stranded.is_empty() {
            return Err(GraphError::UnreachableNode(stranded));
        }

        let mut new_id = vec![0; node_count];
        for (position, &old) in order.iter().enumerate() {
            new_id[old] = position;
        }
        let links: Vec<Link> = raw_links
            .iter()
            .map(|&(tail, head)| Link {
                tail: new_id[tail],
                head: new_id[head],
            })
            .collect();
        let mut out_links = vec![Vec::new(); node_count];
        let mut in_links = vec![Vec::new(); node_count];
        for (id, link) in links.iter().enumerate() {
            out_links[link.tail].push(id);
            in_links[link.head].push(id);
        }

        Ok(Self {
            node_count,
            links,
            original_ids: order,
            out_links,
            in_links,
        })
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn link_count(&self) -> usize {
        self.links.len()
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn link(&self, id: LinkId) -> Link {
        self.links[id]
    }

    pub fn origin(&self) -> NodeId {
        0
    }

    pub fn destination(&self) -> NodeId {
        self.node_count - 1
    }

    /// Caller-supplied ids of the relabeled nodes, in topological order.
    pub fn topological_order(&self) -> &[NodeId] {
        &self.original_ids
    }

    pub fn original_id(&self, node: NodeId) -> NodeId {
        self.original_ids[node]
    }

    /// Outgoing links of `node`, in increasing link id.
    pub fn out_links(&self, node: NodeId) -> &[LinkId] {
        &self.out_links[node]
    }

    /// Incoming links of `node`, in increasing link id.
    pub fn in_links(&self, node: NodeId) -> &[LinkId] {
        &self.in_links[node]
    }

    /// Enumerates all origin-destination paths with the default cap.
    pub fn enumerate_paths(&self) -> Result<PathSet, GraphError> {
        self.enumerate_paths_capped(DEFAULT_PATH_CAP)
    }

    /// Enumerates all origin-destination paths in lexicographic order of
    /// their link id sequences.
    pub fn enumerate_paths_capped(&self, cap: usize) -> Result<PathSet, GraphError> {
        let mut paths = Vec::new();
        let mut current = Vec::new();
        // Explicit stack of (node, index of next outgoing link to try).
        let mut stack = vec![(self.origin(), 0usize)];
        while let Some(frame) = stack.last_mut() {
            let (node, next) = *frame;
            if node == self.destination() {
                if paths.len() == cap {
                    return Err(GraphError::PathExplosion { cap });
                }
                paths.push(current.clone());
                stack.pop();
                current.pop();
                continue;
            }
            match self.out_links[node].get(next) {
                Some(&link) => {
                    frame.1 += 1;
                    current.push(link);
                    stack.push((self.links[link].head, 0));
                }
                None => {
                    stack.pop();
                    current.pop();
                }
            }
        }
        Ok(PathSet::new(paths, self.link_count()))
    }

    /// Min-cut capacity between origin and destination.
    ///
    /// Infinite capacities are allowed and propagate: if some path consists
    /// only of infinite-capacity links the result is `f64::INFINITY`.
    pub fn min_cut_capacity(&self, capacities: &[f64]) -> Result<f64, GraphError> {
        Ok(self.max_flow(capacities)?.value)
    }

    /// Shortest-augmenting-path maximum flow from origin to destination.
    pub fn max_flow(&self, capacities: &[f64]) -> Result<MaxFlow, GraphError> {
        if capacities.len() != self.link_count() {
            return Err(GraphError::CapacityLengthMismatch {
                expected: self.link_count(),
                got: capacities.len(),
            });
        }
        for (link, &value) in capacities.iter().enumerate() {
            if value.is_nan() || value < 0.0 {
                return Err(GraphError::InvalidCapacity { link, value });
            }
        }

        // Arc 2e runs along link e, arc 2e + 1 is its reverse.
        let mut residual: Vec<f64> = capacities.iter().flat_map(|&c| [c, 0.0]).collect();
        let arc_head = |arc: usize| {
            let link = self.links[arc / 2];
            if arc.is_multiple_of(2) {
                link.head
            } else {
                link.tail
            }
        };
        let mut adjacency = vec![Vec::new(); self.node_count];
        for (id, link) in self.links.iter().enumerate() {
            adjacency[link.tail].push(2 * id);
            adjacency[link.head].push(2 * id + 1);
        }

        let source = self.origin();
        let sink = self.destination();
        let mut value = 0.0;
        loop {
            let mut parent_arc: Vec<Option<usize>> = vec![None; self.node_count];
            let mut visited = vec![false; self.node_count];
            visited[source] = true;
            let mut queue = VecDeque::from([source]);
            while let Some(node) = queue.pop_front() {
                if node == sink {
                    break;
                }
                for &arc in &adjacency[node] {
                    let next = arc_head(arc);
                    if !visited[next] && residual[arc] > 0.0 {
                        visited[next] = true;
                        parent_arc[next] = Some(arc);
                        queue.push_back(next);
                    }
                }
            }
            if !visited[sink] {
                break;
            }

            let mut bottleneck = f64::INFINITY;
            let mut node = sink;
            while let Some(arc) = parent_arc[node] {
                bottleneck = bottleneck.min(residual[arc]);
                node = arc_head(arc ^ 1);
            }
            if bottleneck.is_infinite() {
                let link_flows = vec![f64::INFINITY; self.link_count()];
                return Ok(MaxFlow {
                    value: f64::INFINITY,
                    link_flows,
                });
            }
            let mut node = sink;
            while let Some(arc) = parent_arc[node] {
                residual[arc] -= bottleneck;
                residual[arc ^ 1] += bottleneck;
                node = arc_head(arc ^ 1);
            }
            value += bottleneck;
        }

        // Net flow on a link is what has been pushed onto its reverse arc.
        let link_flows = (0..self.link_count())
            .map(|e| residual[2 * e + 1])
            .collect();
        Ok(MaxFlow { value, link_flows })
    }
}

/// Result of [`Network::max_flow`].
#[derive(Debug, Clone, PartialEq)]
pub struct MaxFlow {
    pub value: f64,
    pub link_flows: Vec<f64>,
}

/// Kahn's algorithm, always releasing the smallest available node id so the
/// order is deterministic.
fn topological_order(
    node_count: usize,
    raw_links: &[(NodeId, NodeId)],
    out_raw: &[Vec<LinkId>],
    in_raw: &[Vec<LinkId>],
) -> Result<Vec<NodeId>, GraphError> {
    let mut indegree: Vec<usize> = in_raw.iter().map(Vec::len).collect();
    let mut ready: BinaryHeap<Reverse<NodeId>> = (0..node_count)
        .filter(|&v| indegree[v] == 0)
        .map(Reverse)
        .collect();
    let mut order = Vec::with_capacity(node_count);
    while let Some(Reverse(node)) = ready.pop() {
        order.push(node);
        for &link in &out_raw[node] {
            let head = raw_links[link].1;
            indegree[head] -= 1;
            if indegree[head] == 0 {
                ready.push(Reverse(head));
            }
        }
    }
    if order.len() == node_count {
        return Ok(order);
    }

    // Every node left over has a predecessor that is also left over; walking
    // predecessors must eventually revisit a node.
    let mut position = vec![None; node_count];
    let mut walk = Vec::new();
    let mut node = (0..node_count).find(|&v| indegree[v] > 0).unwrap_or(0);
    loop {
        if let Some(start) = position[node] {
            let mut cycle: Vec<NodeId> = walk[start..].to_vec();
            cycle.reverse();
            return Err(GraphError::CycleDetected { nodes: cycle });
        }
        position[node] = Some(walk.len());
        walk.push(node);
        node = in_raw[node]
            .iter()
            .map(|&l| raw_links[l].0)
            .find(|&tail| indegree[tail] > 0)
            .unwrap_or(node);
    }
}

fn reachable(
    start: NodeId,
    adjacency: &[Vec<LinkId>],
    other_end: impl Fn(LinkId) -> NodeId,
) -> Vec<bool> {
    let mut seen = vec![false; adjacency.len()];
    seen[start] = true;
    let mut stack = vec![start];
    while let Some(node) = stack.pop() {
        for &link in &adjacency[node] {
            let next = other_end(link);
            if !seen[next] {
                seen[next] = true;
                stack.push(next);
            }
        }
    }
    seen
}

/// Origin-destination paths and the link-path incidence matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSet {
    paths: Vec<Vec<LinkId>>,
    /// `incidence[e][p]` is 1 iff link `e` lies on path `p`.
    incidence: Vec<Vec<u8>>,
}

impl PathSet {
    fn new(paths: Vec<Vec<LinkId>>, link_count: usize) -> Self {
        let mut incidence = vec![vec![0u8; paths.len()]; link_count];
        for (p, path) in paths.iter().enumerate() {
            for &e in path {
                incidence[e][p] = 1;
            }
        }
        Self { paths, incidence }
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn link_count(&self) -> usize {
        self.incidence.len()
    }

    pub fn paths(&self) -> &[Vec<LinkId>] {
        &self.paths
    }

    pub fn path(&self, p: usize) -> &[LinkId] {
        &self.paths[p]
    }

    pub fn incidence(&self) -> &[Vec<u8>] {
        &self.incidence
    }

    pub fn contains(&self, link: LinkId, path: usize) -> bool {
        self.incidence[link][path] == 1
    }

    /// Index of the path with exactly this link sequence.
    pub fn index_of(&self, links: &[LinkId]) -> Option<usize> {
        self.paths
            .binary_search_by(|p| p.as_slice().cmp(links))
            .ok()
    }

    /// Link flows `A·weights` induced by a vector of path weights.
    pub fn link_flows(&self, weights: &[f64]) -> Vec<f64> {
        debug_assert_eq!(weights.len(), self.len());
        let mut flows = vec![0.0; self.link_count()];
        for (path, &w) in self.paths.iter().zip(weights) {
            for &e in path {
                flows[e] += w;
            }
        }
        flows
    }

    /// Per-path sums `A'·link_values`; infinities propagate.
    pub fn path_sums(&self, link_values: &[f64]) -> Vec<f64> {
        debug_assert_eq!(link_values.len(), self.link_count());
        self.paths
            .iter()
            .map(|path| path.iter().map(|&e| link_values[e]).sum())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Links e1..e15 of the nine-node benchmark topology.
    const BENCHMARK_LINKS: [(usize, usize); 15] = [
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

    #[test]
    fn single_link() {
        let net = Network::new(2, &[(0, 1)]).unwrap();
        assert_eq!(net.topological_order(), &[0, 1]);
        assert_eq!(net.enumerate_paths().unwrap().len(), 1);
        assert_eq!(net.min_cut_capacity(&[2.0]).unwrap(), 2.0);
    }

    #[test]
    fn two_cycle_is_rejected() {
        let err = Network::new(2, &[(0, 1), (1, 0)]).unwrap_err();
        match err {
            GraphError::CycleDetected { mut nodes } => {
                nodes.sort();
                assert_eq!(nodes, vec![0, 1]);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn cycle_downstream_of_origin_is_named() {
        let err = Network::new(4, &[(0, 1), (1, 2), (2, 1), (2, 3)]).unwrap_err();
        match err {
            GraphError::CycleDetected { mut nodes } => {
                nodes.sort();
                assert_eq!(nodes, vec![1, 2]);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn self_loop_is_a_cycle() {
        assert!(matches!(
            Network::new(2, &[(0, 1), (1, 1)]),
            Err(GraphError::CycleDetected { .. })
        ));
    }

    #[test]
    fn origin_and_destination_errors() {
        assert_eq!(
            Network::new(3, &[(0, 2), (1, 2)]).unwrap_err(),
            GraphError::MultipleOrigins(vec![0, 1])
        );
        assert_eq!(
            Network::new(3, &[(0, 1), (0, 2)]).unwrap_err(),
            GraphError::MultipleDestinations(vec![1, 2])
        );
        assert_eq!(
            Network::new(3, &[(0, 1)]).unwrap_err(),
            GraphError::UnreachableNode(vec![2])
        );
        assert_eq!(
            Network::new(1, &[(0, 0)]).unwrap_err(),
            GraphError::TooFewNodes(1)
        );
        assert_eq!(Network::new(2, &[]).unwrap_err(), GraphError::NoLinks);
        assert!(matches!(
            Network::new(2, &[(0, 5)]),
            Err(GraphError::UnknownNode {
                link: 0,
                node: 5,
                ..
            })
        ));
    }

    #[test]
    fn relabels_along_topological_order() {
        // Origin is caller node 2, destination caller node 0.
        let net = Network::new(3, &[(2, 1), (1, 0), (2, 0)]).unwrap();
        assert_eq!(net.topological_order(), &[2, 1, 0]);
        assert_eq!(net.link(0), Link { tail: 0, head: 1 });
        assert_eq!(net.link(1), Link { tail: 1, head: 2 });
        assert_eq!(net.link(2), Link { tail: 0, head: 2 });
        for link in net.links() {
            assert!(link.tail < link.head);
        }
    }

    #[test]
    fn parallel_links() {
        let net = Network::new(2, &[(0, 1), (0, 1)]).unwrap();
        let paths = net.enumerate_paths().unwrap();
        assert_eq!(paths.paths(), &[vec![0], vec![1]]);
        let cut = net.min_cut_capacity(&[0.4, 0.5]).unwrap();
        assert!((cut - 0.9).abs() < 1e-15);
        assert!(cut <= 1.0);
    }

    #[test]
    fn benchmark_topology() {
        let net = Network::new(9, &BENCHMARK_LINKS).unwrap();
        assert_eq!(net.origin(), 0);
        assert_eq!(net.destination(), 8);
        assert_eq!(net.topological_order(), &[0, 1, 2, 3, 4, 5, 6, 7, 8]);
        let paths = net.enumerate_paths().unwrap();
        assert_eq!(paths.len(), 10);
        let mut sorted = paths.paths().to_vec();
        sorted.sort();
        assert_eq!(sorted, paths.paths());
        assert_eq!(net.min_cut_capacity(&[2.0; 15]).unwrap(), 6.0);
    }

    #[test]
    fn path_cap() {
        let net = Network::new(9, &BENCHMARK_LINKS).unwrap();
        assert_eq!(
            net.enumerate_paths_capped(9).unwrap_err(),
            GraphError::PathExplosion { cap: 9 }
        );
        assert_eq!(net.enumerate_paths_capped(10).unwrap().len(), 10);
    }

    #[test]
    fn infinite_capacities() {
        let net = Network::new(3, &[(0, 1), (1, 2), (0, 2)]).unwrap();
        let inf = f64::INFINITY;
        assert_eq!(net.min_cut_capacity(&[inf, inf, 1.0]).unwrap(), inf);
        assert_eq!(net.min_cut_capacity(&[inf, 0.5, 1.0]).unwrap(), 1.5);
    }

    #[test]
    fn capacity_errors() {
        let net = Network::new(2, &[(0, 1)]).unwrap();
        assert!(matches!(
            net.min_cut_capacity(&[]),
            Err(GraphError::CapacityLengthMismatch {
                expected: 1,
                got: 0
            })
        ));
        assert!(matches!(
            net.min_cut_capacity(&[-1.0]),
            Err(GraphError::InvalidCapacity { link: 0, .. })
        ));
    }

    #[test]
    fn max_flow_is_a_feasible_flow() {
        let net = Network::new(9, &BENCHMARK_LINKS).unwrap();
        let caps: Vec<f64> = (0..15).map(|e| 0.3 + 0.1 * e as f64).collect();
        let flow = net.max_flow(&caps).unwrap();
        for (f, c) in flow.link_flows.iter().zip(&caps) {
            assert!(*f >= 0.0 && *f <= c + 1e-12);
        }
        for v in 1..8 {
            let inflow: f64 = net.in_links(v).iter().map(|&e| flow.link_flows[e]).sum();
            let outflow: f64 = net.out_links(v).iter().map(|&e| flow.link_flows[e]).sum();
            assert!((inflow - outflow).abs() < 1e-12);
        }
    }

    #[test]
    fn incidence_and_products() {
        let net = Network::new(3, &[(0, 1), (1, 2), (0, 2)]).unwrap();
        let paths = net.enumerate_paths().unwrap();
        assert_eq!(paths.paths(), &[vec![0, 1], vec![2]]);
        assert_eq!(paths.incidence(), &[vec![1, 0], vec![1, 0], vec![0, 1]]);
        assert_eq!(paths.link_flows(&[0.25, 0.75]), vec![0.25, 0.25, 0.75]);
        assert_eq!(
            paths.path_sums(&[1.0, 2.0, f64::INFINITY]),
            vec![3.0, f64::INFINITY]
        );
        assert_eq!(paths.index_of(&[2]), Some(1));
        assert_eq!(paths.index_of(&[1]), None);
    }
}
