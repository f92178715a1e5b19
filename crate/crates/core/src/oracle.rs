//! Exact long-run expected version ages.
//!
//! For a node subset `S`, `a_S` is the stationary mean of `min_{i in S} Δ_i(t)`.
//! It satisfies
//!
//! ```text
//! a_S = (λ_e + Σ_{j ∈ N(S)} λ_j(S) · a_{S ∪ {j}}) / (λ_0(S) + Σ_{j ∈ N(S)} λ_j(S))
//! ```
//!
//! where `N(S)` are the nodes outside `S` gossiping into it, `λ_j(S)` is the
//! total gossip rate from `j` into `S` and `λ_0(S)` the total source rate into
//! `S`. The recursion only refers to strictly larger sets, so it terminates at
//! sets with no outside in-neighbours, where `a_S = λ_e / λ_0(S)`.
//!
//! Subsets are bitmasks, which caps the network at [`MAX_NODES`] nodes.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::topology::GossipNetwork;

pub const MAX_NODES: usize = 20;

/// Relative slack for the superset-monotonicity check inside the recursion.
const MONOTONE_SLACK: f64 = 1e-9;

/// Memoised subset ages for one (network, allocation, λ_e) triple.
pub struct SubsetAgeCache<'a, T> {
    net: &'a GossipNetwork<T>,
    allocation: &'a [T],
    lambda_e: T,
    /// in_edges[k] = (j, rate of j -> k) for positive rates.
    in_edges: Vec<Vec<(usize, T)>>,
    /// Indexed by bitmask; NaN marks "not computed".
    memo: Vec<T>,
}

impl<'a, T: Scalar> SubsetAgeCache<'a, T> {
    pub fn new(net: &'a GossipNetwork<T>, allocation: &'a [T], lambda_e: T) -> Result<Self> {
        let n = net.n();
        if n > MAX_NODES {
            return Err(Error::TooLarge { n, cap: MAX_NODES });
        }
        if allocation.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: allocation.len() });
        }
        if allocation.iter().any(|&r| !(r >= T::zero()) || !r.is_finite()) {
            return Err(Error::InvalidArgument("allocation entries must be finite and nonnegative".into()));
        }
        if !(lambda_e > T::zero()) || !lambda_e.is_finite() {
            return Err(Error::InvalidArgument("lambda_e must be positive".into()));
        }
        let mut in_edges = vec![Vec::new(); n];
        for e in net.edges() {
            if e.rate > T::zero() {
                in_edges[e.to].push((e.from, e.rate));
            }
        }
        Ok(SubsetAgeCache { net, allocation, lambda_e, in_edges, memo: vec![T::nan(); 1 << n] })
    }

    pub fn n(&self) -> usize {
        self.net.n()
    }

    /// Exact `a_S` for the subset encoded by `mask`; `+inf` if `S` can go unrefreshed forever.
    pub fn age(&mut self, mask: u32) -> T {
        assert!(mask != 0, "empty subset has no age");
        let cached = self.memo[mask as usize];
        if !cached.is_nan() {
            return cached;
        }

        let n = self.n();
        let mut source_in = T::zero();
        let mut gossip_in = vec![T::zero(); n];
        for k in (0..n).filter(|k| mask & (1 << k) != 0) {
            source_in = source_in + self.allocation[k];
            for &(j, rate) in &self.in_edges[k] {
                if mask & (1 << j) == 0 {
                    gossip_in[j] = gossip_in[j] + rate;
                }
            }
        }

        let total_in = source_in + gossip_in.iter().copied().sum::<T>();
        let value = if total_in <= T::zero() {
            T::infinity()
        } else {
            let mut numer = self.lambda_e;
            let mut expansions = Vec::new();
            for (j, &rate) in gossip_in.iter().enumerate().filter(|(_, r)| **r > T::zero()) {
                let bigger = self.age(mask | (1 << j));
                expansions.push(bigger);
                numer = numer + rate * bigger;
            }
            let value = numer / total_in;
            debug_assert!(
                expansions
                    .iter()
                    .all(|&b| b <= value * (T::one() + T::lit(MONOTONE_SLACK)) || value.is_infinite()),
                "superset age exceeds subset age for mask {mask:#b}"
            );
            value
        };
        self.memo[mask as usize] = value;
        value
    }

    pub fn node_age(&mut self, i: usize) -> T {
        self.age(1 << i)
    }

    pub fn node_ages(&mut self) -> Vec<T> {
        (0..self.n()).map(|i| self.node_age(i)).collect()
    }
}

/// Exact `a_i` for a single node.
pub fn exact_node_age<T: Scalar>(net: &GossipNetwork<T>, allocation: &[T], lambda_e: T, i: usize) -> Result<T> {
    if i >= net.n() {
        return Err(Error::InvalidArgument(format!("node {i} out of range")));
    }
    Ok(SubsetAgeCache::new(net, allocation, lambda_e)?.node_age(i))
}

/// Exact ages of every node, sharing one subset cache.
pub fn exact_ages<T: Scalar>(net: &GossipNetwork<T>, allocation: &[T], lambda_e: T) -> Result<Vec<T>> {
    Ok(SubsetAgeCache::new(net, allocation, lambda_e)?.node_ages())
}

/// `max_i a_i`; infinite if any node is never refreshed.
pub fn exact_worst_age<T: Scalar>(net: &GossipNetwork<T>, allocation: &[T], lambda_e: T) -> Result<T> {
    let ages = exact_ages(net, allocation, lambda_e)?;
    Ok(ages.into_iter().fold(T::neg_infinity(), T::max))
}

/// Best allocation on the grid `{k · λ/(resolution-1)}^n` with `Σ λ_i ≤ λ`, by exhaustive search.
///
/// The grid has on the order of `resolution^n / n!` points; keep `n` small.
pub fn grid_optimum<T: Scalar>(
    net: &GossipNetwork<T>,
    lambda_e: T,
    lambda_total: T,
    resolution: usize,
) -> Result<(Vec<T>, T)> {
    if resolution < 2 {
        return Err(Error::InvalidArgument(format!("grid resolution must be >= 2, got {resolution}")));
    }
    if !(lambda_total > T::zero()) {
        return Err(Error::InvalidArgument("lambda_total must be positive".into()));
    }
    let n = net.n();
    let steps = resolution - 1;
    let delta = lambda_total / T::from_usize_lossy(steps);

    let mut counts = vec![0usize; n];
    let mut allocation = vec![T::zero(); n];
    let mut best: Option<(Vec<T>, T)> = None;
    loop {
        for (a, &k) in allocation.iter_mut().zip(&counts) {
            *a = delta * T::from_usize_lossy(k);
        }
        let age = exact_worst_age(net, &allocation, lambda_e)?;
        if best.as_ref().is_none_or(|(_, b)| age < *b) {
            best = Some((allocation.clone(), age));
        }
        if !next_composition(&mut counts, steps) {
            break;
        }
    }
    Ok(best.expect("grid is nonempty"))
}

/// Advances `counts` through all vectors with `Σ counts ≤ cap` in odometer order.
fn next_composition(counts: &mut [usize], cap: usize) -> bool {
    let mut total: usize = counts.iter().sum();
    for slot in counts.iter_mut() {
        if total < cap {
            *slot += 1;
            return true;
        }
        total -= *slot;
        *slot = 0;
    }
    false
}
