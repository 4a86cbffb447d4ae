//! Network graph generation and structural metrics.
//!
//! The graph is undirected with integer hop latencies on every edge and a
//! role for every node. Path metrics (diameter, effective diameter, vertex
//! cuts) count hops only; latency matters to the engine, not here.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::rng::{stream, stream_rng};

/// Index of a node in a [`NetworkGraph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl NodeId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Role of a node in the network.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum NodeClass {
    /// Block producer holding `hashrate_share` of the total hashrate.
    Miner { hashrate_share: f64 },
    /// Non-mining node that validates every block against its own policy.
    HomeFullNode,
    /// Header-following light client.
    SpvClient,
}

/// Data-free discriminant of [`NodeClass`], used for filters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassKind {
    Miner,
    Hfn,
    Spv,
}

impl NodeClass {
    pub fn kind(&self) -> ClassKind {
        match self {
            NodeClass::Miner { .. } => ClassKind::Miner,
            NodeClass::HomeFullNode => ClassKind::Hfn,
            NodeClass::SpvClient => ClassKind::Spv,
        }
    }

    pub fn is_miner(&self) -> bool {
        matches!(self, NodeClass::Miner { .. })
    }

    pub fn hashrate_share(&self) -> f64 {
        match self {
            NodeClass::Miner { hashrate_share } => *hashrate_share,
            _ => 0.0,
        }
    }
}

impl fmt::Display for ClassKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClassKind::Miner => "miner",
            ClassKind::Hfn => "hfn",
            ClassKind::Spv => "spv",
        })
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum TopologyError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("self-loop on node {0}")]
    SelfLoop(NodeId),
    #[error("duplicate edge {0}-{1}")]
    DuplicateEdge(NodeId, NodeId),
    #[error("edge latency must be at least 1 tick (got {0})")]
    ZeroLatency(u32),
    #[error("graph is disconnected ({} components): {components:?}", components.len())]
    Disconnected { components: Vec<Vec<NodeId>> },
    #[error("nodes {0} and {1} are adjacent; no vertex cut separates them")]
    Adjacent(NodeId, NodeId),
    #[error("no connected Watts-Strogatz graph after {0} attempts")]
    RewiringFailed(u32),
    #[error("graph text line {line}: {message}")]
    Parse { line: usize, message: String },
}

pub type Result<T> = std::result::Result<T, TopologyError>;

/// Generation parameters recorded in the text header (`n k beta seed`).
/// Graphs not produced by [`generate_watts_strogatz`] carry zeros.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct GraphParams {
    pub k: u32,
    pub beta: f64,
    pub seed: u64,
}

/// Undirected latency-weighted graph with a role per node.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkGraph {
    params: GraphParams,
    roles: Vec<NodeClass>,
    adjacency: Vec<BTreeMap<NodeId, u32>>,
    edge_count: usize,
}

impl NetworkGraph {
    /// `n` isolated home full nodes.
    pub fn empty(n: usize) -> Self {
        NetworkGraph {
            params: GraphParams::default(),
            roles: vec![NodeClass::HomeFullNode; n],
            adjacency: vec![BTreeMap::new(); n],
            edge_count: 0,
        }
    }

    /// Build from an explicit edge list; every latency defaults to 1.
    pub fn from_edges(n: usize, edges: &[(u32, u32)]) -> Result<Self> {
        let mut g = NetworkGraph::empty(n);
        for &(u, v) in edges {
            g.add_edge(NodeId(u), NodeId(v), 1)?;
        }
        Ok(g)
    }

    pub fn node_count(&self) -> usize {
        self.roles.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    pub fn params(&self) -> GraphParams {
        self.params
    }

    pub fn set_params(&mut self, params: GraphParams) {
        self.params = params;
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.roles.len() as u32).map(NodeId)
    }

    pub fn contains(&self, v: NodeId) -> bool {
        v.index() < self.roles.len()
    }

    fn check(&self, v: NodeId) -> Result<()> {
        if self.contains(v) {
            Ok(())
        } else {
            Err(TopologyError::UnknownNode(v))
        }
    }

    pub fn role(&self, v: NodeId) -> NodeClass {
        self.roles[v.index()]
    }

    pub fn roles(&self) -> &[NodeClass] {
        &self.roles
    }

    pub fn set_role(&mut self, v: NodeId, class: NodeClass) -> Result<()> {
        self.check(v)?;
        self.roles[v.index()] = class;
        Ok(())
    }

    pub fn nodes_of(&self, kind: ClassKind) -> Vec<NodeId> {
        self.nodes().filter(|&v| self.role(v).kind() == kind).collect()
    }

    pub fn miners(&self) -> Vec<NodeId> {
        self.nodes_of(ClassKind::Miner)
    }

    /// Append a node with the given role and no edges.
    pub fn add_node(&mut self, class: NodeClass) -> NodeId {
        self.roles.push(class);
        self.adjacency.push(BTreeMap::new());
        NodeId(self.roles.len() as u32 - 1)
    }

    pub fn add_edge(&mut self, u: NodeId, v: NodeId, latency: u32) -> Result<()> {
        self.check(u)?;
        self.check(v)?;
        if u == v {
            return Err(TopologyError::SelfLoop(u));
        }
        if latency == 0 {
            return Err(TopologyError::ZeroLatency(latency));
        }
        if self.adjacency[u.index()].contains_key(&v) {
            return Err(TopologyError::DuplicateEdge(u.min(v), u.max(v)));
        }
        self.adjacency[u.index()].insert(v, latency);
        self.adjacency[v.index()].insert(u, latency);
        self.edge_count += 1;
        Ok(())
    }

    /// Remove an edge; returns its latency if it existed.
    pub fn remove_edge(&mut self, u: NodeId, v: NodeId) -> Option<u32> {
        if !self.contains(u) || !self.contains(v) {
            return None;
        }
        let lat = self.adjacency[u.index()].remove(&v)?;
        self.adjacency[v.index()].remove(&u);
        self.edge_count -= 1;
        Some(lat)
    }

    pub fn has_edge(&self, u: NodeId, v: NodeId) -> bool {
        self.contains(u) && self.adjacency[u.index()].contains_key(&v)
    }

    pub fn latency(&self, u: NodeId, v: NodeId) -> Option<u32> {
        self.adjacency.get(u.index())?.get(&v).copied()
    }

    pub fn set_latency(&mut self, u: NodeId, v: NodeId, latency: u32) -> Result<()> {
        if latency == 0 {
            return Err(TopologyError::ZeroLatency(latency));
        }
        if !self.has_edge(u, v) {
            return Err(TopologyError::InvalidParameter(format!("no edge {u}-{v}")));
        }
        self.adjacency[u.index()].insert(v, latency);
        self.adjacency[v.index()].insert(u, latency);
        Ok(())
    }

    /// Neighbors of `v` with edge latencies, in ascending node order.
    pub fn neighbors(&self, v: NodeId) -> impl Iterator<Item = (NodeId, u32)> + '_ {
        self.adjacency[v.index()].iter().map(|(&w, &l)| (w, l))
    }

    pub fn degree(&self, v: NodeId) -> usize {
        self.adjacency[v.index()].len()
    }

    /// Every edge once as `(u, v, latency)` with `u < v`, sorted.
    pub fn edges(&self) -> impl Iterator<Item = (NodeId, NodeId, u32)> + '_ {
        self.adjacency.iter().enumerate().flat_map(|(u, nb)| {
            let u = NodeId(u as u32);
            nb.range(NodeId(u.0 + 1)..).map(move |(&v, &l)| (u, v, l))
        })
    }

    pub fn max_latency(&self) -> u32 {
        self.edges().map(|(_, _, l)| l).max().unwrap_or(1)
    }

    /// Nodes with no edges.
    pub fn isolated_nodes(&self) -> BTreeSet<NodeId> {
        self.nodes().filter(|&v| self.degree(v) == 0).collect()
    }

    /// Structural invariants: symmetric adjacency, no loops, latencies ≥ 1,
    /// miner shares summing to 1.
    pub fn validate(&self) -> Result<()> {
        let mut count = 0usize;
        for u in self.nodes() {
            for (v, l) in self.neighbors(u) {
                if u == v {
                    return Err(TopologyError::SelfLoop(u));
                }
                if l == 0 {
                    return Err(TopologyError::ZeroLatency(l));
                }
                if self.latency(v, u) != Some(l) {
                    return Err(TopologyError::InvalidParameter(format!("asymmetric edge {u}-{v}")));
                }
                count += 1;
            }
        }
        if count != 2 * self.edge_count {
            return Err(TopologyError::InvalidParameter("edge count out of sync".into()));
        }
        let miners = self.miners();
        if !miners.is_empty() {
            let total: f64 = miners.iter().map(|&m| self.role(m).hashrate_share()).sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(TopologyError::InvalidParameter(format!(
                    "miner hashrate shares sum to {total}, expected 1"
                )));
            }
        }
        Ok(())
    }

    fn mask(&self, restrict_to: Option<&BTreeSet<NodeId>>) -> Result<Vec<bool>> {
        match restrict_to {
            None => Ok(vec![true; self.node_count()]),
            Some(set) => {
                let mut m = vec![false; self.node_count()];
                for &v in set {
                    self.check(v)?;
                    m[v.index()] = true;
                }
                Ok(m)
            }
        }
    }

    /// Hop distances from `src` inside the node mask; `u32::MAX` = unreachable.
    fn bfs(&self, src: NodeId, mask: &[bool]) -> Vec<u32> {
        let mut dist = vec![u32::MAX; self.node_count()];
        dist[src.index()] = 0;
        let mut q = VecDeque::from([src]);
        while let Some(u) = q.pop_front() {
            let d = dist[u.index()];
            for &w in self.adjacency[u.index()].keys() {
                if mask[w.index()] && dist[w.index()] == u32::MAX {
                    dist[w.index()] = d + 1;
                    q.push_back(w);
                }
            }
        }
        dist
    }

    /// Connected components of the (induced) graph, each sorted, ordered by
    /// smallest member.
    pub fn components(&self, restrict_to: Option<&BTreeSet<NodeId>>) -> Result<Vec<Vec<NodeId>>> {
        let mask = self.mask(restrict_to)?;
        let mut seen = vec![false; self.node_count()];
        let mut out = Vec::new();
        for v in self.nodes() {
            if !mask[v.index()] || seen[v.index()] {
                continue;
            }
            let dist = self.bfs(v, &mask);
            let comp: Vec<NodeId> = self
                .nodes()
                .filter(|w| dist[w.index()] != u32::MAX)
                .collect();
            for w in &comp {
                seen[w.index()] = true;
            }
            out.push(comp);
        }
        Ok(out)
    }

    pub fn is_connected(&self, restrict_to: Option<&BTreeSet<NodeId>>) -> Result<bool> {
        Ok(self.components(restrict_to)?.len() <= 1)
    }

    /// Distances of all unordered pairs in the induced subgraph.
    fn pair_distances(&self, restrict_to: Option<&BTreeSet<NodeId>>) -> Result<Vec<u32>> {
        let mask = self.mask(restrict_to)?;
        let members: Vec<NodeId> = self.nodes().filter(|v| mask[v.index()]).collect();
        if members.is_empty() {
            return Err(TopologyError::InvalidParameter("empty node set".into()));
        }
        let mut out = Vec::with_capacity(members.len() * (members.len() - 1) / 2);
        for (i, &u) in members.iter().enumerate() {
            let dist = self.bfs(u, &mask);
            for &w in &members[i + 1..] {
                let d = dist[w.index()];
                if d == u32::MAX {
                    return Err(TopologyError::Disconnected {
                        components: self.components(restrict_to)?,
                    });
                }
                out.push(d);
            }
        }
        Ok(out)
    }

    /// Induced subgraph on `keep`, renumbered in ascending id order.
    pub fn induced(&self, keep: &BTreeSet<NodeId>) -> Result<(NetworkGraph, Vec<NodeId>)> {
        let order: Vec<NodeId> = keep.iter().copied().collect();
        let mut index = BTreeMap::new();
        for (i, &v) in order.iter().enumerate() {
            self.check(v)?;
            index.insert(v, NodeId(i as u32));
        }
        let mut g = NetworkGraph::empty(order.len());
        for (i, &v) in order.iter().enumerate() {
            g.roles[i] = self.role(v);
        }
        for (u, v, l) in self.edges() {
            if let (Some(&a), Some(&b)) = (index.get(&u), index.get(&v)) {
                g.add_edge(a, b, l)?;
            }
        }
        Ok((g, order))
    }

    /// Attach a new node by a single edge to `anchor`.
    pub fn attach_leaf(&mut self, anchor: NodeId, class: NodeClass, latency: u32) -> Result<NodeId> {
        self.check(anchor)?;
        let v = self.add_node(class);
        self.add_edge(v, anchor, latency)?;
        Ok(v)
    }

    /// Append `count` nodes with no edges.
    pub fn with_isolated_nodes(mut self, count: usize, class: NodeClass) -> Self {
        for _ in 0..count {
            self.add_node(class);
        }
        self
    }
}

/// Watts-Strogatz small-world graph: ring lattice with `k/2` neighbors on
/// each side, each clockwise edge rewired with probability `beta` to a
/// uniformly chosen node that is neither `u` nor already adjacent to `u`.
///
/// Disconnected outcomes are retried with sub-seeds `(seed, attempt)` up to
/// 100 times. All edges get latency 1; all nodes start as home full nodes.
pub fn generate_watts_strogatz(n: usize, k: usize, beta: f64, seed: u64) -> Result<NetworkGraph> {
    if k < 2 || k % 2 != 0 {
        return Err(TopologyError::InvalidParameter(format!("k must be even and >= 2 (got {k})")));
    }
    if k >= n {
        return Err(TopologyError::InvalidParameter(format!("k must be < n (k={k}, n={n})")));
    }
    if !(0.0..=1.0).contains(&beta) {
        return Err(TopologyError::InvalidParameter(format!("beta must lie in [0,1] (got {beta})")));
    }
    const ATTEMPTS: u32 = 100;
    for attempt in 0..ATTEMPTS {
        let mut g = ring_lattice(n, k);
        if beta > 0.0 {
            let mut rng = stream_rng(seed, &[stream::TOPOLOGY, attempt as u64]);
            for j in 1..=k / 2 {
                for u in 0..n {
                    let u_id = NodeId(u as u32);
                    let v_id = NodeId(((u + j) % n) as u32);
                    if rng.random::<f64>() >= beta {
                        continue;
                    }
                    if g.degree(u_id) >= n - 1 {
                        continue;
                    }
                    let w = loop {
                        let w = NodeId(rng.random_range(0..n as u32));
                        if w != u_id && !g.has_edge(u_id, w) {
                            break w;
                        }
                    };
                    if g.remove_edge(u_id, v_id).is_some() {
                        g.add_edge(u_id, w, 1)?;
                    }
                }
            }
        }
        if g.is_connected(None)? {
            g.params = GraphParams { k: k as u32, beta, seed };
            return Ok(g);
        }
    }
    Err(TopologyError::RewiringFailed(ATTEMPTS))
}

fn ring_lattice(n: usize, k: usize) -> NetworkGraph {
    let mut g = NetworkGraph::empty(n);
    for j in 1..=k / 2 {
        for u in 0..n {
            let v = (u + j) % n;
            g.add_edge(NodeId(u as u32), NodeId(v as u32), 1)
                .expect("ring lattice edges are distinct when k < n");
        }
    }
    g
}

/// Choose miners, densify the miner core and split the rest into SPV / HFN.
///
/// Miners get equal hashrate shares. Random miner-miner edges (latency 1)
/// are added until the miner-induced subgraph is connected, then
/// `core_extra_edges` more (capped by the number of missing pairs).
/// Existing miner-miner edges are set to latency 1. `ceil(spv_fraction·n)`
/// of the remaining nodes become SPV clients; the rest are home full nodes.
pub fn assign_roles(
    graph: &NetworkGraph,
    miner_count: usize,
    spv_fraction: f64,
    core_extra_edges: usize,
    seed: u64,
) -> Result<NetworkGraph> {
    let n = graph.node_count();
    if miner_count == 0 {
        return Err(TopologyError::InvalidParameter("miner_count must be >= 1".into()));
    }
    if !(0.0..=1.0).contains(&spv_fraction) {
        return Err(TopologyError::InvalidParameter(format!(
            "spv_fraction must lie in [0,1] (got {spv_fraction})"
        )));
    }
    let spv_count = (spv_fraction * n as f64 - 1e-9).ceil().max(0.0) as usize;
    if miner_count + spv_count > n {
        return Err(TopologyError::InvalidParameter(format!(
            "{miner_count} miners + {spv_count} SPV clients exceed {n} nodes"
        )));
    }
    let mut g = graph.clone();
    let mut rng = stream_rng(seed, &[stream::ROLES]);
    let mut order: Vec<NodeId> = g.nodes().collect();
    order.shuffle(&mut rng);

    let mut miners: Vec<NodeId> = order[..miner_count].to_vec();
    miners.sort();
    let share = 1.0 / miner_count as f64;
    for (i, &v) in order.iter().enumerate() {
        g.roles[v.index()] = if i < miner_count {
            NodeClass::Miner { hashrate_share: share }
        } else if i < miner_count + spv_count {
            NodeClass::SpvClient
        } else {
            NodeClass::HomeFullNode
        };
    }

    for (a, &u) in miners.iter().enumerate() {
        for &v in &miners[a + 1..] {
            if g.has_edge(u, v) {
                g.set_latency(u, v, 1)?;
            }
        }
    }

    // Union-find over miner indices.
    let mut parent: Vec<usize> = (0..miner_count).collect();
    fn find(p: &mut [usize], x: usize) -> usize {
        let mut r = x;
        while p[r] != r {
            r = p[r];
        }
        let mut c = x;
        while p[c] != r {
            let next = p[c];
            p[c] = r;
            c = next;
        }
        r
    }
    let mut groups = miner_count;
    for a in 0..miner_count {
        for b in a + 1..miner_count {
            if g.has_edge(miners[a], miners[b]) {
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                if ra != rb {
                    parent[ra] = rb;
                    groups -= 1;
                }
            }
        }
    }
    while groups > 1 {
        let a = rng.random_range(0..miner_count);
        let b = rng.random_range(0..miner_count);
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra == rb {
            continue;
        }
        g.add_edge(miners[a], miners[b], 1)?;
        parent[ra] = rb;
        groups -= 1;
    }

    let mut missing: Vec<(NodeId, NodeId)> = Vec::new();
    for (a, &u) in miners.iter().enumerate() {
        for &v in &miners[a + 1..] {
            if !g.has_edge(u, v) {
                missing.push((u, v));
            }
        }
    }
    missing.shuffle(&mut rng);
    for &(u, v) in missing.iter().take(core_extra_edges) {
        g.add_edge(u, v, 1)?;
    }
    Ok(g)
}

/// Set edge latencies: miner-miner edges get 1 tick, every other edge a
/// uniform draw from `[lat_min, lat_max]`.
pub fn assign_latencies(graph: &NetworkGraph, lat_min: u32, lat_max: u32, seed: u64) -> Result<NetworkGraph> {
    if lat_min == 0 || lat_min > lat_max {
        return Err(TopologyError::InvalidParameter(format!(
            "latency range [{lat_min}, {lat_max}] must satisfy 1 <= min <= max"
        )));
    }
    let mut g = graph.clone();
    let mut rng = stream_rng(seed, &[stream::LATENCY]);
    let edges: Vec<(NodeId, NodeId, u32)> = g.edges().collect();
    for (u, v, _) in edges {
        let lat = if g.role(u).is_miner() && g.role(v).is_miner() {
            1
        } else {
            rng.random_range(lat_min..=lat_max)
        };
        g.set_latency(u, v, lat)?;
    }
    Ok(g)
}

/// Largest hop distance over all pairs of the (induced) graph.
pub fn diameter(graph: &NetworkGraph, restrict_to: Option<&BTreeSet<NodeId>>) -> Result<u32> {
    Ok(graph.pair_distances(restrict_to)?.into_iter().max().unwrap_or(0))
}

/// Smallest `k` such that at least `(1 - epsilon)` of unordered pairs are
/// within `k` hops. `epsilon = 0` gives the diameter.
pub fn effective_diameter(
    graph: &NetworkGraph,
    epsilon: f64,
    restrict_to: Option<&BTreeSet<NodeId>>,
) -> Result<u32> {
    if !(0.0..1.0).contains(&epsilon) {
        return Err(TopologyError::InvalidParameter(format!(
            "epsilon must lie in [0,1) (got {epsilon})"
        )));
    }
    let mut d = graph.pair_distances(restrict_to)?;
    if d.is_empty() {
        return Ok(0);
    }
    d.sort_unstable();
    let needed = ((1.0 - epsilon) * d.len() as f64 - 1e-9).ceil().max(0.0) as usize;
    if needed == 0 {
        return Ok(0);
    }
    Ok(d[needed.min(d.len()) - 1])
}

/// Mean local clustering coefficient over the (induced) node set. Nodes of
/// degree < 2 contribute 0.
pub fn clustering_coefficient(graph: &NetworkGraph, restrict_to: Option<&BTreeSet<NodeId>>) -> Result<f64> {
    let mask = graph.mask(restrict_to)?;
    let members: Vec<NodeId> = graph.nodes().filter(|v| mask[v.index()]).collect();
    if members.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for &v in &members {
        let nb: Vec<NodeId> = graph.adjacency[v.index()]
            .keys()
            .copied()
            .filter(|w| mask[w.index()])
            .collect();
        let d = nb.len();
        if d < 2 {
            continue;
        }
        let mut closed = 0usize;
        for (i, &a) in nb.iter().enumerate() {
            for &b in &nb[i + 1..] {
                if graph.has_edge(a, b) {
                    closed += 1;
                }
            }
        }
        total += closed as f64 / (d * (d - 1) / 2) as f64;
    }
    Ok(total / members.len() as f64)
}

/// Minimum vertex set separating `s` from `t`. Among minimum cuts the
/// lexicographically smallest (by sorted node id) is returned. An empty set
/// means `s` and `t` are already disconnected.
pub fn min_vertex_cut(graph: &NetworkGraph, s: NodeId, t: NodeId) -> Result<BTreeSet<NodeId>> {
    graph.check(s)?;
    graph.check(t)?;
    if s == t {
        return Err(TopologyError::InvalidParameter("s and t must differ".into()));
    }
    if graph.has_edge(s, t) {
        return Err(TopologyError::Adjacent(s.min(t), s.max(t)));
    }
    let mut removed = vec![false; graph.node_count()];
    let mut k = vertex_connectivity(graph, s, t, &removed);
    let mut cut = BTreeSet::new();
    for v in graph.nodes() {
        if k == 0 {
            break;
        }
        if v == s || v == t {
            continue;
        }
        removed[v.index()] = true;
        if vertex_connectivity(graph, s, t, &removed) + 1 == k {
            cut.insert(v);
            k -= 1;
        } else {
            removed[v.index()] = false;
        }
    }
    Ok(cut)
}

/// Number of internally vertex-disjoint s-t paths avoiding `removed`
/// (unit-capacity max flow on the split graph).
fn vertex_connectivity(graph: &NetworkGraph, s: NodeId, t: NodeId, removed: &[bool]) -> usize {
    // Node v becomes v_in = 2v and v_out = 2v + 1.
    let n = graph.node_count();
    let mut net = FlowNet::new(2 * n);
    const INF: i32 = i32::MAX / 4;
    for v in graph.nodes() {
        if removed[v.index()] {
            continue;
        }
        let cap = if v == s || v == t { INF } else { 1 };
        net.add(2 * v.index(), 2 * v.index() + 1, cap);
    }
    for (u, v, _) in graph.edges() {
        if removed[u.index()] || removed[v.index()] {
            continue;
        }
        net.add(2 * u.index() + 1, 2 * v.index(), INF);
        net.add(2 * v.index() + 1, 2 * u.index(), INF);
    }
    net.max_flow(2 * s.index() + 1, 2 * t.index()) as usize
}

struct FlowNet {
    head: Vec<Vec<usize>>,
    to: Vec<usize>,
    cap: Vec<i32>,
}

impl FlowNet {
    fn new(n: usize) -> Self {
        FlowNet { head: vec![Vec::new(); n], to: Vec::new(), cap: Vec::new() }
    }

    fn add(&mut self, u: usize, v: usize, c: i32) {
        self.head[u].push(self.to.len());
        self.to.push(v);
        self.cap.push(c);
        self.head[v].push(self.to.len());
        self.to.push(u);
        self.cap.push(0);
    }

    fn max_flow(&mut self, src: usize, sink: usize) -> i64 {
        let mut flow = 0i64;
        loop {
            let mut prev_edge = vec![usize::MAX; self.head.len()];
            let mut visited = vec![false; self.head.len()];
            visited[src] = true;
            let mut q = VecDeque::from([src]);
            while let Some(u) = q.pop_front() {
                if u == sink {
                    break;
                }
                for &e in &self.head[u] {
                    let w = self.to[e];
                    if self.cap[e] > 0 && !visited[w] {
                        visited[w] = true;
                        prev_edge[w] = e;
                        q.push_back(w);
                    }
                }
            }
            if !visited[sink] {
                return flow;
            }
            let mut bottleneck = i32::MAX;
            let mut v = sink;
            while v != src {
                let e = prev_edge[v];
                bottleneck = bottleneck.min(self.cap[e]);
                v = self.to[e ^ 1];
            }
            let mut v = sink;
            while v != src {
                let e = prev_edge[v];
                self.cap[e] -= bottleneck;
                self.cap[e ^ 1] += bottleneck;
                v = self.to[e ^ 1];
            }
            flow += bottleneck as i64;
        }
    }
}

// ---------------------------------------------------------------------------
// Text format
//
//   n k beta seed
//   u v latency          one line per edge, u < v, ascending
//   id role [hashrate]   one line per node; role in {miner, hfn, spv}
// ---------------------------------------------------------------------------

impl NetworkGraph {
    pub fn to_text(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        let p = self.params;
        writeln!(out, "{} {} {} {}", self.node_count(), p.k, p.beta, p.seed).unwrap();
        for (u, v, l) in self.edges() {
            writeln!(out, "{u} {v} {l}").unwrap();
        }
        for v in self.nodes() {
            match self.role(v) {
                NodeClass::Miner { hashrate_share } => writeln!(out, "{v} miner {hashrate_share}"),
                NodeClass::HomeFullNode => writeln!(out, "{v} hfn"),
                NodeClass::SpvClient => writeln!(out, "{v} spv"),
            }
            .unwrap();
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let err = |line: usize, message: String| TopologyError::Parse { line, message };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let (hl, header) = lines.next().ok_or_else(|| err(1, "missing header".into()))?;
        let h: Vec<&str> = header.split_whitespace().collect();
        if h.len() != 4 {
            return Err(err(hl, "header must be `n k beta seed`".into()));
        }
        let n: usize = h[0].parse().map_err(|e| err(hl, format!("n: {e}")))?;
        let k: u32 = h[1].parse().map_err(|e| err(hl, format!("k: {e}")))?;
        let beta: f64 = h[2].parse().map_err(|e| err(hl, format!("beta: {e}")))?;
        let seed: u64 = h[3].parse().map_err(|e| err(hl, format!("seed: {e}")))?;
        let mut g = NetworkGraph::empty(n);
        g.params = GraphParams { k, beta, seed };
        let mut seen_nodes = vec![false; n];
        let mut in_nodes = false;
        for (ln, line) in lines {
            let tok: Vec<&str> = line.split_whitespace().collect();
            if tok.is_empty() {
                continue;
            }
            let is_edge = tok.len() == 3 && tok[1].parse::<u32>().is_ok();
            if is_edge {
                if in_nodes {
                    return Err(err(ln, "edge line after node lines".into()));
                }
                let u: u32 = tok[0].parse().map_err(|e| err(ln, format!("{e}")))?;
                let v: u32 = tok[1].parse().map_err(|e| err(ln, format!("{e}")))?;
                let l: u32 = tok[2].parse().map_err(|e| err(ln, format!("{e}")))?;
                g.add_edge(NodeId(u), NodeId(v), l).map_err(|e| err(ln, e.to_string()))?;
                continue;
            }
            in_nodes = true;
            let id: u32 = tok[0].parse().map_err(|e| err(ln, format!("node id: {e}")))?;
            let id = NodeId(id);
            if !g.contains(id) {
                return Err(err(ln, format!("node {id} out of range")));
            }
            let class = match (tok.get(1).copied(), tok.len()) {
                (Some("miner"), 3) => NodeClass::Miner {
                    hashrate_share: tok[2].parse().map_err(|e| err(ln, format!("hashrate: {e}")))?,
                },
                (Some("hfn"), 2) => NodeClass::HomeFullNode,
                (Some("spv"), 2) => NodeClass::SpvClient,
                _ => return Err(err(ln, format!("bad node line `{line}`"))),
            };
            if std::mem::replace(&mut seen_nodes[id.index()], true) {
                return Err(err(ln, format!("node {id} listed twice")));
            }
            g.roles[id.index()] = class;
        }
        if let Some(missing) = seen_nodes.iter().position(|s| !s) {
            return Err(err(0, format!("node {missing} has no role line")));
        }
        Ok(g)
    }
}

impl Serialize for NetworkGraph {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_text())
    }
}

impl<'de> Deserialize<'de> for NetworkGraph {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        NetworkGraph::from_text(&text).map_err(serde::de::Error::custom)
    }
}
