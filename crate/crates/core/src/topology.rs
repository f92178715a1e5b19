//! Sparse directed gossip topologies.
//!
//! Every node gossips with a total outgoing rate of `B / n`, split over its
//! out-edges either evenly or according to a uniformly random point on the
//! simplex. Out-neighbours are drawn uniformly without replacement. Graphs
//! are not required to be connected; a node may have no in-edges at all.

use std::collections::BTreeSet;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// How many times `generate` redraws a graph when `require_source_reachable` is set.
const MAX_REDRAWS: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge<T> {
    pub from: usize,
    pub to: usize,
    pub rate: T,
}

/// Directed graph with per-edge gossip rates and per-node outgoing budgets.
///
/// Edges are kept sorted by `(from, to)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NetworkJson<T>", into = "NetworkJson<T>")]
#[serde(bound(serialize = "T: Scalar + Serialize", deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct GossipNetwork<T> {
    n: usize,
    edges: Vec<Edge<T>>,
    budgets: Vec<T>,
}

/// Wire form: `{"n": 3, "edges": [[0, 1, 0.5], ...], "budgets": [...]}`.
#[derive(Serialize, Deserialize)]
struct NetworkJson<T> {
    n: usize,
    edges: Vec<(usize, usize, T)>,
    budgets: Vec<T>,
}

impl<T: Scalar> From<GossipNetwork<T>> for NetworkJson<T> {
    fn from(net: GossipNetwork<T>) -> Self {
        NetworkJson {
            n: net.n,
            edges: net.edges.into_iter().map(|e| (e.from, e.to, e.rate)).collect(),
            budgets: net.budgets,
        }
    }
}

impl<T: Scalar> TryFrom<NetworkJson<T>> for GossipNetwork<T> {
    type Error = Error;

    fn try_from(raw: NetworkJson<T>) -> Result<Self> {
        let edges = raw.edges.into_iter().map(|(from, to, rate)| Edge { from, to, rate }).collect();
        GossipNetwork::from_parts(raw.n, edges, raw.budgets)
    }
}

impl<T: Scalar> GossipNetwork<T> {
    /// Builds a network from explicit edges and budgets, checking the structural invariants.
    pub fn from_parts(n: usize, mut edges: Vec<Edge<T>>, budgets: Vec<T>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidSpec("network needs at least one node".into()));
        }
        if budgets.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: budgets.len() });
        }
        let mut seen = BTreeSet::new();
        for e in &edges {
            if e.from >= n || e.to >= n {
                return Err(Error::InvalidSpec(format!("edge {}->{} out of range for n={n}", e.from, e.to)));
            }
            if e.from == e.to {
                return Err(Error::InvalidSpec(format!("self-loop on node {}", e.from)));
            }
            if !(e.rate >= T::zero()) || !e.rate.is_finite() {
                return Err(Error::InvalidSpec(format!("edge {}->{} has invalid rate", e.from, e.to)));
            }
            if !seen.insert((e.from, e.to)) {
                return Err(Error::InvalidSpec(format!("duplicate edge {}->{}", e.from, e.to)));
            }
        }
        if budgets.iter().any(|b| !(*b >= T::zero()) || !b.is_finite()) {
            return Err(Error::InvalidSpec("budgets must be finite and nonnegative".into()));
        }
        edges.sort_by_key(|e| (e.from, e.to));
        Ok(GossipNetwork { n, edges, budgets })
    }

    /// A network with no gossip at all.
    pub fn isolated(n: usize) -> Result<Self> {
        Self::from_parts(n, Vec::new(), vec![T::zero(); n])
    }

    /// Builds a network from rated edges; each budget is the node's outgoing rate sum.
    pub fn from_rated_edges(n: usize, edges: &[(usize, usize, T)]) -> Result<Self> {
        let edges: Vec<Edge<T>> = edges.iter().map(|&(from, to, rate)| Edge { from, to, rate }).collect();
        let mut budgets = vec![T::zero(); n];
        for e in &edges {
            if e.from < n {
                budgets[e.from] = budgets[e.from] + e.rate;
            }
        }
        Self::from_parts(n, edges, budgets)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[Edge<T>] {
        &self.edges
    }

    pub fn budgets(&self) -> &[T] {
        &self.budgets
    }

    pub fn gossip_rate(&self, from: usize, to: usize) -> T {
        self.edges
            .binary_search_by_key(&(from, to), |e| (e.from, e.to))
            .map(|k| self.edges[k].rate)
            .unwrap_or_else(|_| T::zero())
    }

    pub fn out_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n];
        for e in &self.edges {
            deg[e.from] += 1;
        }
        deg
    }

    pub fn in_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n];
        for e in &self.edges {
            deg[e.to] += 1;
        }
        deg
    }

    /// Nodes with out-degree 0; their gossip budget has nowhere to go and is 0.
    pub fn idle_nodes(&self) -> Vec<usize> {
        self.out_degrees()
            .iter()
            .enumerate()
            .filter_map(|(i, &d)| (d == 0).then_some(i))
            .collect()
    }

    pub fn total_gossip_rate(&self) -> T {
        self.edges.iter().map(|e| e.rate).sum()
    }

    /// Multiplies every gossip rate and budget by `c`.
    pub fn scaled(&self, c: T) -> Self {
        GossipNetwork {
            n: self.n,
            edges: self.edges.iter().map(|e| Edge { rate: e.rate * c, ..*e }).collect(),
            budgets: self.budgets.iter().map(|&b| b * c).collect(),
        }
    }

    /// Converts the rates to another scalar type.
    pub fn cast<U: Scalar>(&self) -> GossipNetwork<U> {
        GossipNetwork {
            n: self.n,
            edges: self
                .edges
                .iter()
                .map(|e| Edge { from: e.from, to: e.to, rate: U::lit(e.rate.as_f64()) })
                .collect(),
            budgets: self.budgets.iter().map(|b| U::lit(b.as_f64())).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GossipMode {
    Symmetric,
    Asymmetric,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TopologyKind<T> {
    /// Out-degree uniform on `[min, max]`.
    UniformDegree { min: usize, max: usize },
    ConstantDegree { degree: usize },
    /// Node `i` (0-indexed) gets `min(ceil(gamma^i), n - 1)` out-neighbours.
    Exponential { gamma: T },
    /// Fixed edge list; rates are still assigned from the capacity.
    Custom { edges: Vec<(usize, usize)> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopologySpec<T> {
    #[serde(flatten)]
    pub kind: TopologyKind<T>,
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_mode")]
    pub gossip_mode: GossipMode,
    /// Total gossip capacity `B`; every node's budget is `B / n`.
    pub capacity: T,
    /// Redraw until every node has at least one incoming gossip edge.
    #[serde(default)]
    pub require_source_reachable: bool,
}

fn default_mode() -> GossipMode {
    GossipMode::Symmetric
}

impl<T: Scalar> TopologySpec<T> {
    pub fn uniform_degree(n: usize, min: usize, max: usize, capacity: T, seed: u64) -> Self {
        Self::with_kind(TopologyKind::UniformDegree { min, max }, n, capacity, seed)
    }

    pub fn constant_degree(n: usize, degree: usize, capacity: T, seed: u64) -> Self {
        Self::with_kind(TopologyKind::ConstantDegree { degree }, n, capacity, seed)
    }

    pub fn exponential(n: usize, gamma: T, capacity: T, seed: u64) -> Self {
        Self::with_kind(TopologyKind::Exponential { gamma }, n, capacity, seed)
    }

    pub fn custom(n: usize, edges: Vec<(usize, usize)>, capacity: T) -> Self {
        Self::with_kind(TopologyKind::Custom { edges }, n, capacity, 0)
    }

    fn with_kind(kind: TopologyKind<T>, n: usize, capacity: T, seed: u64) -> Self {
        TopologySpec {
            kind,
            n,
            seed,
            gossip_mode: GossipMode::Symmetric,
            capacity,
            require_source_reachable: false,
        }
    }

    pub fn asymmetric(mut self) -> Self {
        self.gossip_mode = GossipMode::Asymmetric;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n;
        if n < 2 {
            return Err(Error::InvalidSpec(format!("need n >= 2, got {n}")));
        }
        if !(self.capacity > T::zero()) || !self.capacity.is_finite() {
            return Err(Error::InvalidSpec("gossip capacity must be positive".into()));
        }
        match &self.kind {
            TopologyKind::UniformDegree { min, max } => {
                if *min < 1 || min > max || *max > n - 1 {
                    return Err(Error::InvalidSpec(format!(
                        "degree bounds must satisfy 1 <= {min} <= {max} <= {}",
                        n - 1
                    )));
                }
            }
            TopologyKind::ConstantDegree { degree } => {
                if *degree >= n {
                    return Err(Error::InvalidSpec(format!("constant degree {degree} must be < n = {n}")));
                }
                if *degree == 0 {
                    return Err(Error::InvalidSpec("constant degree must be at least 1".into()));
                }
            }
            TopologyKind::Exponential { gamma } => {
                if !(*gamma > T::one()) || !gamma.is_finite() {
                    return Err(Error::InvalidSpec("exponential base gamma must be > 1".into()));
                }
            }
            TopologyKind::Custom { edges } => {
                for &(i, j) in edges {
                    if i >= n || j >= n || i == j {
                        return Err(Error::InvalidSpec(format!("invalid custom edge {i}->{j}")));
                    }
                }
            }
        }
        Ok(())
    }

    /// Out-degree prescribed for node `i` by the exponential rule.
    pub fn exponential_degree(gamma: T, i: usize, n: usize) -> usize {
        let raw = gamma.as_f64().powi(i as i32).ceil();
        if raw.is_finite() && raw < (n - 1) as f64 {
            raw as usize
        } else {
            n - 1
        }
    }
}

/// Draws a network according to `spec`. Same spec (including seed) gives the same network.
pub fn generate<T: Scalar>(spec: &TopologySpec<T>) -> Result<GossipNetwork<T>> {
    spec.validate()?;
    let n = spec.n;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut draws = 0;
    let pairs = loop {
        let pairs = draw_edges(spec, &mut rng);
        draws += 1;
        if !spec.require_source_reachable || every_node_has_in_edge(n, &pairs) {
            break pairs;
        }
        if matches!(spec.kind, TopologyKind::Custom { .. }) || draws >= MAX_REDRAWS {
            return Err(Error::InvalidSpec(format!(
                "could not draw a graph where every node has an in-edge after {draws} attempts"
            )));
        }
    };

    let edges = pairs.into_iter().map(|(from, to)| Edge { from, to, rate: T::zero() }).collect();
    let skeleton = GossipNetwork::from_parts(n, edges, vec![T::zero(); n])?;
    assign_gossip_rates(&skeleton, spec.capacity, spec.gossip_mode, rates_seed(spec.seed))
}

/// Seed of the rate-assignment stream, kept apart from the edge-drawing stream.
fn rates_seed(seed: u64) -> u64 {
    seed ^ 0x9E37_79B9_7F4A_7C15
}

fn draw_edges<T: Scalar>(spec: &TopologySpec<T>, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let n = spec.n;
    if let TopologyKind::Custom { edges } = &spec.kind {
        let set: BTreeSet<(usize, usize)> = edges.iter().copied().collect();
        return set.into_iter().collect();
    }
    let mut pairs = Vec::new();
    for i in 0..n {
        let degree = match &spec.kind {
            TopologyKind::UniformDegree { min, max } => rng.random_range(*min..=*max),
            TopologyKind::ConstantDegree { degree } => *degree,
            TopologyKind::Exponential { gamma } => TopologySpec::exponential_degree(*gamma, i, n),
            TopologyKind::Custom { .. } => unreachable!(),
        };
        let mut targets: Vec<usize> = index::sample(rng, n - 1, degree)
            .into_iter()
            .map(|k| if k < i { k } else { k + 1 })
            .collect();
        targets.sort_unstable();
        pairs.extend(targets.into_iter().map(|j| (i, j)));
    }
    pairs
}

fn every_node_has_in_edge(n: usize, pairs: &[(usize, usize)]) -> bool {
    let mut has = vec![false; n];
    for &(_, j) in pairs {
        has[j] = true;
    }
    has.into_iter().all(|h| h)
}

/// Sets every node's budget to `capacity / n` and spreads it over the node's out-edges.
///
/// Nodes without out-edges get budget 0; see [`GossipNetwork::idle_nodes`].
pub fn assign_gossip_rates<T: Scalar>(
    net: &GossipNetwork<T>,
    capacity: T,
    mode: GossipMode,
    seed: u64,
) -> Result<GossipNetwork<T>> {
    if !(capacity > T::zero()) || !capacity.is_finite() {
        return Err(Error::InvalidSpec("gossip capacity must be positive".into()));
    }
    let n = net.n();
    let per_node = capacity / T::from_usize_lossy(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = net.edges().to_vec();
    let mut budgets = vec![T::zero(); n];

    let mut start = 0;
    while start < edges.len() {
        let from = edges[start].from;
        let end = start + edges[start..].iter().take_while(|e| e.from == from).count();
        let out = &mut edges[start..end];
        budgets[from] = per_node;
        match mode {
            GossipMode::Symmetric => {
                let share = per_node / T::from_usize_lossy(out.len());
                for e in out.iter_mut() {
                    e.rate = share;
                }
            }
            GossipMode::Asymmetric => {
                let weights: Vec<T> = (0..out.len()).map(|_| T::lit(rng.sample::<f64, _>(Exp1))).collect();
                let total: T = weights.iter().copied().sum();
                for (e, w) in out.iter_mut().zip(weights) {
                    e.rate = per_node * w / total;
                }
            }
        }
        start = end;
    }
    GossipNetwork::from_parts(n, edges, budgets)
}
