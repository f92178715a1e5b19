//! Event-driven simulation of the version-age process.
//!
//! Three families of independent Poisson streams drive the state:
//!
//! - the source's own updates (rate `λ_e`) increment the source version `N_s`;
//! - source-to-node pushes (rate `λ_i`) set `N_i ← N_s`;
//! - gossip `j → k` (edge rate) sets `N_k ← max(N_k, N_j)`.
//!
//! Rates are constant over a run, so the superposition is sampled with a
//! single exponential clock plus a categorical draw of the event type. Each
//! node reports the time average of `Δ_i(t) = N_s(t) - N_i(t)` over the window
//! after warmup. Clock arithmetic runs in `f64` regardless of the scalar type.

use std::collections::VecDeque;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::topology::GossipNetwork;

pub const DEFAULT_HORIZON: f64 = 1e5;
pub const DEFAULT_WARMUP: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig<T> {
    pub lambda_e: T,
    /// Source-to-node rates `λ_i`.
    pub allocation: Vec<T>,
    pub horizon: T,
    #[serde(default)]
    pub seed: u64,
    pub warmup_fraction: T,
}

impl<T: Scalar> SimConfig<T> {
    pub fn new(lambda_e: T, allocation: Vec<T>, seed: u64) -> Self {
        SimConfig {
            lambda_e,
            allocation,
            horizon: T::lit(DEFAULT_HORIZON),
            seed,
            warmup_fraction: T::lit(DEFAULT_WARMUP),
        }
    }

    pub fn with_horizon(mut self, horizon: T) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.allocation.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: self.allocation.len() });
        }
        if self.allocation.iter().any(|&r| !(r >= T::zero()) || !r.is_finite()) {
            return Err(Error::InvalidArgument("allocation entries must be finite and nonnegative".into()));
        }
        if !(self.lambda_e >= T::zero()) || !self.lambda_e.is_finite() {
            return Err(Error::InvalidArgument("lambda_e must be finite and nonnegative".into()));
        }
        if !(self.horizon > T::zero()) || !self.horizon.is_finite() {
            return Err(Error::InvalidArgument("horizon must be positive".into()));
        }
        if !(self.warmup_fraction >= T::zero() && self.warmup_fraction < T::one()) {
            return Err(Error::InvalidArgument("warmup_fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Time-averaged ages from one window (or the mean over replicates).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgeReport<T> {
    pub per_node: Vec<T>,
    pub worst: T,
    pub source_updates: u64,
    pub horizon_used: T,
    /// Nodes that no positive-rate path reaches from the source; their age grows without bound.
    pub unbounded: Vec<usize>,
    /// Standard error of each per-node mean, present when averaged over two or more replicates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std_error: Option<Vec<T>>,
}

impl<T: Scalar> AgeReport<T> {
    /// Report built from exact or externally computed ages.
    pub fn from_ages(per_node: Vec<T>) -> Self {
        let worst = per_node.iter().copied().fold(T::neg_infinity(), T::max);
        let unbounded = per_node
            .iter()
            .enumerate()
            .filter_map(|(i, a)| a.is_infinite().then_some(i))
            .collect();
        AgeReport {
            per_node,
            worst,
            source_updates: 0,
            horizon_used: T::zero(),
            unbounded,
            std_error: None,
        }
    }

    pub fn is_stationary(&self) -> bool {
        self.unbounded.is_empty()
    }
}

#[derive(Clone, Copy, Debug)]
enum Event {
    SourceUpdate,
    Push(usize),
    Gossip { from: usize, to: usize },
}

struct EventTable {
    events: Vec<Event>,
    cumulative: Vec<f64>,
}

impl EventTable {
    fn build<T: Scalar>(net: &GossipNetwork<T>, cfg: &SimConfig<T>) -> Self {
        let mut events = Vec::new();
        let mut cumulative = Vec::new();
        let mut acc = 0.0;
        let mut push = |ev: Event, rate: f64| {
            if rate > 0.0 {
                acc += rate;
                events.push(ev);
                cumulative.push(acc);
            }
        };
        push(Event::SourceUpdate, cfg.lambda_e.as_f64());
        for (i, r) in cfg.allocation.iter().enumerate() {
            push(Event::Push(i), r.as_f64());
        }
        for e in net.edges() {
            push(Event::Gossip { from: e.from, to: e.to }, e.rate.as_f64());
        }
        EventTable { events, cumulative }
    }

    fn total(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0)
    }

    fn pick(&self, u: f64) -> Event {
        let target = u * self.total();
        let k = self.cumulative.partition_point(|&c| c <= target);
        self.events[k.min(self.events.len() - 1)]
    }
}

/// Integral of a piecewise-constant counter over `[window_start, window_end]`.
#[derive(Clone, Copy, Default)]
struct Counter {
    value: u64,
    since: f64,
    integral: f64,
}

impl Counter {
    fn advance(&mut self, now: f64, window: (f64, f64)) {
        let lo = self.since.max(window.0);
        let hi = now.min(window.1);
        if hi > lo {
            self.integral += self.value as f64 * (hi - lo);
        }
        self.since = now;
    }

    fn set(&mut self, value: u64, now: f64, window: (f64, f64)) {
        self.advance(now, window);
        self.value = value;
    }
}

/// Nodes not reachable from the source over positive-rate pushes and gossip edges.
pub fn unreachable_nodes<T: Scalar>(net: &GossipNetwork<T>, allocation: &[T]) -> Vec<usize> {
    let n = net.n();
    let mut out: Vec<Vec<usize>> = vec![Vec::new(); n];
    for e in net.edges().iter().filter(|e| e.rate > T::zero()) {
        out[e.from].push(e.to);
    }
    let mut seen = vec![false; n];
    let mut queue: VecDeque<usize> = (0..n).filter(|&i| allocation[i] > T::zero()).collect();
    for &i in &queue {
        seen[i] = true;
    }
    while let Some(i) = queue.pop_front() {
        for &j in &out[i] {
            if !seen[j] {
                seen[j] = true;
                queue.push_back(j);
            }
        }
    }
    (0..n).filter(|&i| !seen[i]).collect()
}

/// Runs one window and returns the per-node time-averaged ages.
pub fn simulate<T: Scalar>(net: &GossipNetwork<T>, cfg: &SimConfig<T>) -> Result<AgeReport<T>> {
    run(net, cfg, None)
}

/// Like [`simulate`], also writing `time,node,delta` CSV rows whenever a node's age changes.
pub fn simulate_traced<T: Scalar, W: Write>(
    net: &GossipNetwork<T>,
    cfg: &SimConfig<T>,
    out: &mut W,
) -> Result<AgeReport<T>> {
    writeln!(out, "time,node,delta")?;
    run(net, cfg, Some(out))
}

fn run<T: Scalar>(net: &GossipNetwork<T>, cfg: &SimConfig<T>, mut trace: Option<&mut dyn Write>) -> Result<AgeReport<T>> {
    let n = net.n();
    cfg.validate(n)?;
    let table = EventTable::build(net, cfg);
    let total_rate = table.total();
    if !(total_rate > 0.0) {
        return Err(Error::DegenerateRates);
    }

    let horizon = cfg.horizon.as_f64();
    let window = (cfg.warmup_fraction.as_f64() * horizon, horizon);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut source = Counter::default();
    let mut nodes = vec![Counter::default(); n];
    let mut t = 0.0;

    loop {
        let dt: f64 = rng.sample(Exp1);
        t += dt / total_rate;
        if t > horizon {
            break;
        }
        match table.pick(rng.random::<f64>()) {
            Event::SourceUpdate => {
                source.set(source.value + 1, t, window);
                if let Some(w) = trace.as_deref_mut() {
                    for (i, node) in nodes.iter().enumerate() {
                        writeln!(w, "{t},{i},{}", source.value - node.value)?;
                    }
                }
            }
            Event::Push(i) => {
                if nodes[i].value != source.value {
                    nodes[i].set(source.value, t, window);
                    if let Some(w) = trace.as_deref_mut() {
                        writeln!(w, "{t},{i},0")?;
                    }
                }
            }
            Event::Gossip { from, to } => {
                let v = nodes[from].value;
                if v > nodes[to].value {
                    nodes[to].set(v, t, window);
                    if let Some(w) = trace.as_deref_mut() {
                        writeln!(w, "{t},{to},{}", source.value - v)?;
                    }
                }
            }
        }
    }

    source.advance(horizon, window);
    let span = window.1 - window.0;
    let per_node: Vec<T> = nodes
        .iter_mut()
        .map(|node| {
            node.advance(horizon, window);
            T::lit(((source.integral - node.integral) / span).max(0.0))
        })
        .collect();
    let worst = per_node.iter().copied().fold(T::neg_infinity(), T::max);
    Ok(AgeReport {
        per_node,
        worst,
        source_updates: source.value,
        horizon_used: T::lit(span),
        unbounded: unreachable_nodes(net, &cfg.allocation),
        std_error: None,
    })
}

/// Seed of replicate `r` derived from a base seed (splitmix64 finaliser).
pub fn replicate_seed(base: u64, r: usize) -> u64 {
    let mut z = base.wrapping_add((r as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mean over `replications` independent windows, with per-node standard errors.
///
/// Replicates may run in parallel; they are combined in replicate order.
pub fn simulate_replicated<T: Scalar>(
    net: &GossipNetwork<T>,
    cfg: &SimConfig<T>,
    replications: usize,
) -> Result<AgeReport<T>> {
    if replications == 0 {
        return Err(Error::InvalidArgument("replications must be >= 1".into()));
    }
    let reports: Vec<AgeReport<T>> = (0..replications)
        .into_par_iter()
        .map(|r| {
            let cfg = SimConfig { seed: replicate_seed(cfg.seed, r), ..cfg.clone() };
            simulate(net, &cfg)
        })
        .collect::<Result<_>>()?;

    let n = net.n();
    let count = replications as f64;
    let mut mean = vec![0.0f64; n];
    for rep in &reports {
        for (m, a) in mean.iter_mut().zip(&rep.per_node) {
            *m += a.as_f64() / count;
        }
    }
    let std_error = (replications > 1).then(|| {
        (0..n)
            .map(|i| {
                let ss: f64 = reports.iter().map(|rep| (rep.per_node[i].as_f64() - mean[i]).powi(2)).sum();
                T::lit((ss / (count - 1.0) / count).sqrt())
            })
            .collect()
    });
    let per_node: Vec<T> = mean.into_iter().map(T::lit).collect();
    let worst = per_node.iter().copied().fold(T::neg_infinity(), T::max);
    Ok(AgeReport {
        per_node,
        worst,
        source_updates: reports.iter().map(|r| r.source_updates).sum(),
        horizon_used: reports[0].horizon_used,
        unbounded: reports[0].unbounded.clone(),
        std_error,
    })
}
