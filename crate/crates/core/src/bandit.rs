//! GP-UCB over the feasible allocation region.
//!
//! The source proposes an allocation, the network reports time-averaged ages,
//! and a Gaussian-process surrogate of the reward `f = -max_i a_i` picks the
//! next allocation by maximising `μ(x) + √β_m · σ(x)` over
//! `D = {x ∈ [0, u]^n : Σ x ≤ b}`.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{KernelParams, SurrogateState};
use crate::oracle;
use crate::scalar::Scalar;
use crate::sim::{self, replicate_seed, AgeReport, SimConfig};
use crate::topology::GossipNetwork;

/// Rejection attempts when sampling a region whose box is tighter than its budget.
const MAX_REJECTIONS: usize = 1000;
const BISECTION_STEPS: usize = 200;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeasibleRegion<T> {
    pub n: usize,
    pub box_upper: T,
    pub budget: T,
}

impl<T: Scalar> FeasibleRegion<T> {
    pub fn new(n: usize, box_upper: T, budget: T) -> Result<Self> {
        if n == 0 || !(box_upper > T::zero()) || !(budget > T::zero()) || !box_upper.is_finite() || !budget.is_finite() {
            return Err(Error::InvalidArgument("region needs n >= 1 and positive finite bounds".into()));
        }
        Ok(FeasibleRegion { n, box_upper, budget })
    }

    /// `[0, λ]^n ∩ {Σ x ≤ λ}`.
    pub fn simplex(n: usize, lambda_total: T) -> Result<Self> {
        Self::new(n, lambda_total, lambda_total)
    }

    pub fn uniform_point(&self) -> Vec<T> {
        let share = self.budget / T::from_usize_lossy(self.n);
        vec![share.min(self.box_upper); self.n]
    }

    pub fn contains(&self, x: &[T], tol: T) -> bool {
        x.len() == self.n
            && x.iter().all(|&v| v >= -tol && v <= self.box_upper + tol)
            && x.iter().copied().sum::<T>() <= self.budget + tol
    }

    /// Uniform sample from the region.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<T> {
        for _ in 0..MAX_REJECTIONS {
            let x = self.sample_simplex(rng);
            if x.iter().all(|&v| v <= self.box_upper) {
                return x;
            }
        }
        // Box much tighter than the budget: sample the box and reject on the sum instead.
        for _ in 0..MAX_REJECTIONS {
            let x: Vec<T> = (0..self.n).map(|_| self.box_upper * T::lit(rng.random::<f64>())).collect();
            if x.iter().copied().sum::<T>() <= self.budget {
                return x;
            }
        }
        project(&self.sample_simplex(rng), self)
    }

    fn sample_simplex<R: Rng>(&self, rng: &mut R) -> Vec<T> {
        let draws: Vec<f64> = (0..=self.n).map(|_| rng.sample(Exp1)).collect();
        let total: f64 = draws.iter().sum();
        draws[..self.n].iter().map(|&d| self.budget * T::lit(d / total)).collect()
    }
}

/// Euclidean projection onto the region.
///
/// The projection is `clip(x - τ, 0, u)` with `τ = 0` when the clipped point
/// already meets the budget, and otherwise the `τ > 0` that makes the sum hit
/// the budget, found by bisection. The upper bisection end is returned so the
/// result never exceeds the budget.
pub fn project<T: Scalar>(x: &[T], region: &FeasibleRegion<T>) -> Vec<T> {
    let clip = |v: T, shift: T| (v - shift).max(T::zero()).min(region.box_upper);
    let shifted_sum = |shift: T| x.iter().map(|&v| clip(v, shift)).sum::<T>();

    if shifted_sum(T::zero()) <= region.budget {
        return x.iter().map(|&v| clip(v, T::zero())).collect();
    }
    let mut lo = T::zero();
    let mut hi = x.iter().copied().fold(T::zero(), T::max);
    for _ in 0..BISECTION_STEPS {
        let mid = (lo + hi) / T::lit(2.0);
        if mid <= lo || mid >= hi {
            break;
        }
        if shifted_sum(mid) > region.budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    x.iter().map(|&v| clip(v, hi)).collect()
}

/// Exploration weight `β_m = 2 log(m² π² / (6δ))`.
pub fn beta<T: Scalar>(m: usize, delta: T) -> T {
    let m = T::from_usize_lossy(m.max(1));
    let pi = T::lit(std::f64::consts::PI);
    T::lit(2.0) * (m * m * pi * pi / (T::lit(6.0) * delta)).ln()
}

/// UCB acquisition `μ(x) + √β σ(x)`.
pub fn acquisition<T: Scalar>(state: &SurrogateState<T>, x: &[T], beta: T) -> Result<T> {
    let (mean, var) = state.posterior(x)?;
    Ok(mean + beta.max(T::zero()).sqrt() * var.sqrt())
}

/// Settings of the inner acquisition maximiser.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AscentConfig {
    /// Local ascents per maximisation.
    pub restarts: usize,
    /// Uniform samples scored to choose the ascent starting points.
    pub candidate_pool: usize,
    pub max_steps: usize,
    /// Central-difference step, relative to the budget.
    pub fd_step: f64,
}

impl Default for AscentConfig {
    fn default() -> Self {
        AscentConfig { restarts: 10, candidate_pool: 256, max_steps: 40, fd_step: 1e-5 }
    }
}

/// Multi-start projected gradient ascent on the acquisition.
///
/// Starts are the best `restarts` of `candidate_pool` uniform samples plus
/// `incumbent` when given. Gradients are central differences; steps use
/// backtracking and every iterate is projected back onto the region. Returns
/// the best local maximum and its value; ties go to the earlier start.
pub fn maximize_acquisition<T: Scalar>(
    state: &SurrogateState<T>,
    beta: T,
    region: &FeasibleRegion<T>,
    cfg: &AscentConfig,
    incumbent: Option<&[T]>,
    seed: u64,
) -> Result<(Vec<T>, T)> {
    if cfg.restarts == 0 {
        return Err(Error::InvalidArgument("restarts must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phi = |x: &[T]| acquisition(state, x, beta);

    if state.is_empty() {
        // constant acquisition: the first random start wins
        let x = region.sample(&mut rng);
        let v = phi(&x)?;
        return Ok((x, v));
    }

    let pool = cfg.candidate_pool.max(cfg.restarts);
    let mut scored: Vec<(T, usize, Vec<T>)> = Vec::with_capacity(pool);
    for k in 0..pool {
        let x = region.sample(&mut rng);
        scored.push((phi(&x)?, k, x));
    }
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal).then(a.1.cmp(&b.1)));
    let mut starts: Vec<Vec<T>> = scored.into_iter().take(cfg.restarts).map(|(_, _, x)| x).collect();
    if let Some(inc) = incumbent {
        starts.push(project(inc, region));
    }

    let h = region.budget * T::lit(cfg.fd_step);
    let mut best: Option<(Vec<T>, T)> = None;
    for start in starts {
        let (x, v) = ascend(&phi, start, region, h, cfg.max_steps)?;
        if best.as_ref().is_none_or(|(_, bv)| v > *bv) {
            best = Some((x, v));
        }
    }
    Ok(best.expect("at least one start"))
}

fn ascend<T: Scalar, F>(phi: &F, mut x: Vec<T>, region: &FeasibleRegion<T>, h: T, max_steps: usize) -> Result<(Vec<T>, T)>
where
    F: Fn(&[T]) -> Result<T>,
{
    let n = x.len();
    let mut fx = phi(&x)?;
    let mut step = region.budget * T::lit(0.1);
    let min_step = region.budget * T::lit(1e-7);
    let mut probe = x.clone();

    for _ in 0..max_steps {
        let mut grad = vec![T::zero(); n];
        for d in 0..n {
            probe[d] = x[d] + h;
            let up = phi(&probe)?;
            probe[d] = x[d] - h;
            let down = phi(&probe)?;
            probe[d] = x[d];
            grad[d] = (up - down) / (h + h);
        }
        let norm = grad.iter().map(|&g| g * g).sum::<T>().sqrt();
        if !(norm > T::zero()) || !norm.is_finite() {
            break;
        }

        let mut moved = false;
        while step >= min_step {
            let trial: Vec<T> = x.iter().zip(&grad).map(|(&xi, &gi)| xi + step * gi / norm).collect();
            let trial = project(&trial, region);
            let ft = phi(&trial)?;
            if ft > fx {
                let dist = trial.iter().zip(&x).map(|(&a, &b)| (a - b) * (a - b)).sum::<T>().sqrt();
                x = trial;
                fx = ft;
                probe.clone_from(&x);
                step = step * T::lit(2.0);
                moved = dist > min_step;
                break;
            }
            step = step / T::lit(2.0);
        }
        if !moved {
            break;
        }
    }
    Ok((x, fx))
}

/// Maps an allocation to observed ages.
pub trait Evaluator<T> {
    fn evaluate(&mut self, allocation: &[T], iteration: usize) -> Result<AgeReport<T>>;
}

/// Noise-free evaluator backed by the exact recursion.
pub struct OracleEvaluator<'a, T> {
    pub net: &'a GossipNetwork<T>,
    pub lambda_e: T,
}

impl<T: Scalar> Evaluator<T> for OracleEvaluator<'_, T> {
    fn evaluate(&mut self, allocation: &[T], _iteration: usize) -> Result<AgeReport<T>> {
        Ok(AgeReport::from_ages(oracle::exact_ages(self.net, allocation, self.lambda_e)?))
    }
}

/// One simulation window (or a replicated batch) per evaluation.
pub struct SimEvaluator<'a, T> {
    pub net: &'a GossipNetwork<T>,
    pub lambda_e: T,
    pub horizon: T,
    pub warmup_fraction: T,
    pub seed: u64,
    pub replications: usize,
}

impl<'a, T: Scalar> SimEvaluator<'a, T> {
    pub fn new(net: &'a GossipNetwork<T>, lambda_e: T, seed: u64) -> Self {
        SimEvaluator {
            net,
            lambda_e,
            horizon: T::lit(sim::DEFAULT_HORIZON),
            warmup_fraction: T::lit(sim::DEFAULT_WARMUP),
            seed,
            replications: 1,
        }
    }
}

impl<T: Scalar> Evaluator<T> for SimEvaluator<'_, T> {
    fn evaluate(&mut self, allocation: &[T], iteration: usize) -> Result<AgeReport<T>> {
        let cfg = SimConfig {
            lambda_e: self.lambda_e,
            allocation: allocation.to_vec(),
            horizon: self.horizon,
            seed: replicate_seed(self.seed, iteration),
            warmup_fraction: self.warmup_fraction,
        };
        if self.replications > 1 {
            sim::simulate_replicated(self.net, &cfg, self.replications)
        } else {
            sim::simulate(self.net, &cfg)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BanditConfig<T> {
    pub iterations: usize,
    /// Confidence parameter of the β schedule.
    pub delta: T,
    pub kernel: KernelParams<T>,
    #[serde(default)]
    pub ascent: AscentConfig,
    /// Reported ages above this multiple of the initial (uniform) age are clipped
    /// before they reach the surrogate.
    pub age_cap_factor: T,
    pub center_rewards: bool,
}

impl<T: Scalar> BanditConfig<T> {
    /// Defaults for rewards normalised by the uniform allocation's worst age:
    /// prior standard deviation of 10% of that age, ℓ = 0.2·λ_total, ν = 5/2.
    pub fn new(iterations: usize, lambda_total: T) -> Self {
        let mut kernel = KernelParams::default_for_budget(lambda_total);
        kernel.variance = T::lit(0.01);
        kernel.noise = T::lit(1e-4) * kernel.variance;
        BanditConfig {
            iterations,
            delta: T::lit(0.1),
            kernel,
            ascent: AscentConfig::default(),
            age_cap_factor: T::lit(3.0),
            center_rewards: true,
        }
    }
}

/// One round: the allocation that was evaluated and the one proposed next.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord<T> {
    pub m: usize,
    /// Allocation evaluated this round.
    pub lambda: Vec<T>,
    pub worst_age: T,
    /// `worst_age` clipped at the age cap; what the surrogate was fed, in age units.
    pub objective: T,
    pub per_node_age: Vec<T>,
    pub beta: T,
    /// Acquisition value of `proposed`, in normalised reward units.
    pub acq_value: T,
    pub proposed: Vec<T>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizationTrace<T> {
    pub iterations: Vec<IterationRecord<T>>,
    /// Running minimum of the evaluated worst ages.
    pub best_so_far: Vec<T>,
    pub best_allocation: Vec<T>,
    pub best_age: T,
    /// Set when the evaluator failed; the iterations before the failure are kept.
    pub failure: Option<String>,
}

impl<T: Scalar + Serialize> OptimizationTrace<T> {
    /// One JSON object per iteration.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for rec in &self.iterations {
            serde_json::to_writer(&mut out, rec)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

impl<T: Scalar> OptimizationTrace<T> {
    pub fn worst_ages(&self) -> Vec<T> {
        self.iterations.iter().map(|r| r.worst_age).collect()
    }
}

/// Runs the learning loop for `cfg.iterations` rounds, starting from the uniform allocation.
pub fn run<T: Scalar, E: Evaluator<T>>(
    region: &FeasibleRegion<T>,
    cfg: &BanditConfig<T>,
    evaluator: &mut E,
    seed: u64,
) -> Result<OptimizationTrace<T>> {
    if cfg.iterations == 0 {
        return Err(Error::InvalidArgument("iterations must be >= 1".into()));
    }
    if !(cfg.delta > T::zero() && cfg.delta < T::one()) {
        return Err(Error::InvalidArgument("delta must lie in (0, 1)".into()));
    }
    cfg.kernel.validate()?;

    let mut trace = OptimizationTrace {
        iterations: Vec::with_capacity(cfg.iterations),
        best_so_far: Vec::with_capacity(cfg.iterations),
        best_allocation: Vec::new(),
        best_age: T::infinity(),
        failure: None,
    };
    let mut current = region.uniform_point();
    let mut surrogate: Option<SurrogateState<T>> = None;
    let mut scale = T::one();

    for m in 1..=cfg.iterations {
        let report = match evaluator.evaluate(&current, m) {
            Ok(r) => r,
            Err(e) => {
                trace.failure = Some(Error::Evaluator { iteration: m, message: e.to_string() }.to_string());
                return Ok(trace);
            }
        };
        if report.per_node.len() != region.n {
            return Err(Error::DimensionMismatch { expected: region.n, got: report.per_node.len() });
        }
        let worst = report.worst;

        let state = match surrogate.as_mut() {
            Some(s) => s,
            None => {
                if !(worst.is_finite() && worst > T::zero()) {
                    trace.failure = Some(format!("initial allocation has non-finite worst age {worst}"));
                    return Ok(trace);
                }
                scale = worst;
                let mut params = cfg.kernel.clone();
                if let Some(se) = &report.std_error {
                    let worst_node = argmax(&report.per_node);
                    params.noise = params.noise.max((se[worst_node] / scale).powi(2));
                }
                surrogate.insert(SurrogateState::new(params)?.centered(cfg.center_rewards))
            }
        };
        let cap = cfg.age_cap_factor * scale;
        let objective = if worst.is_finite() { worst.min(cap) } else { cap };
        let reward = -objective / scale;
        state.push(&current, reward)?;

        if worst < trace.best_age || trace.best_allocation.is_empty() {
            trace.best_age = worst;
            trace.best_allocation = current.clone();
        }
        trace.best_so_far.push(trace.best_age);

        let beta_m = beta(m, cfg.delta);
        let (proposed, acq_value) = maximize_acquisition(
            state,
            beta_m,
            region,
            &cfg.ascent,
            Some(&trace.best_allocation),
            replicate_seed(seed, m),
        )?;
        trace.iterations.push(IterationRecord {
            m,
            lambda: std::mem::replace(&mut current, proposed.clone()),
            worst_age: worst,
            objective,
            per_node_age: report.per_node,
            beta: beta_m,
            acq_value,
            proposed,
        });
    }
    Ok(trace)
}

fn argmax<T: Scalar>(v: &[T]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, T::neg_infinity()), |(bi, bv), (i, &x)| if x > bv { (i, x) } else { (bi, bv) })
        .0
}

/// Instantaneous and cumulative regret against `baseline_age`.
pub fn regret_series<T: Scalar>(trace: &OptimizationTrace<T>, baseline_age: T) -> (Vec<T>, Vec<T>) {
    let instant: Vec<T> = trace.iterations.iter().map(|r| r.worst_age - baseline_age).collect();
    let cumulative = cumulative_sum(&instant);
    (instant, cumulative)
}

/// Regret of the clipped objective against the best age the run itself found,
/// for when the true optimum is unknown. Stays finite when a proposal starves a node.
pub fn pseudo_regret<T: Scalar>(trace: &OptimizationTrace<T>) -> (Vec<T>, Vec<T>) {
    let instant: Vec<T> = trace.iterations.iter().map(|r| r.objective - trace.best_age).collect();
    let cumulative = cumulative_sum(&instant);
    (instant, cumulative)
}

fn cumulative_sum<T: Scalar>(values: &[T]) -> Vec<T> {
    values
        .iter()
        .scan(T::zero(), |acc, &r| {
            *acc = *acc + r;
            Some(*acc)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::Smoothness;

    #[test]
    fn beta_values() {
        let b1: f64 = beta(1, 0.1);
        assert!((b1 - 2.0 * (std::f64::consts::PI.powi(2) / 0.6).ln()).abs() < 1e-12);
        assert!((b1 - 5.602).abs() < 2e-3);
        let near_one: f64 = beta(1, 1.0 - 1e-12);
        assert!((near_one - 0.9954).abs() < 1e-4);
        for m in 1..1000 {
            assert!(beta::<f64>(m + 1, 0.1) >= beta(m, 0.1));
        }
    }

    #[test]
    fn projection_cases() {
        let region = FeasibleRegion::<f64>::simplex(4, 1.0).unwrap();
        let inside = vec![0.1, 0.2, 0.3, 0.1];
        assert_eq!(project(&inside, &region), inside);
        let out = project(&[0.5; 4], &region);
        for v in &out {
            assert!((v - 0.25).abs() < 1e-12);
        }
        let clipped = project(&[-1.0, 0.2, 0.0, 0.0], &region);
        assert_eq!(clipped, vec![0.0, 0.2, 0.0, 0.0]);
    }

    #[test]
    fn projection_respects_tight_box() {
        let region = FeasibleRegion::<f64>::new(3, 0.4, 1.0).unwrap();
        let p = project(&[2.0, 2.0, 0.1], &region);
        assert!(region.contains(&p, 1e-12));
        assert!((p[0] - 0.4).abs() < 1e-12 && (p[1] - 0.4).abs() < 1e-12);
        assert!((p[2] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn samples_are_feasible() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for region in [FeasibleRegion::simplex(5, 2.0).unwrap(), FeasibleRegion::new(5, 0.3, 1.0).unwrap()] {
            for _ in 0..200 {
                assert!(region.contains(&region.sample(&mut rng), 1e-12));
            }
        }
    }

    #[test]
    fn acquisition_with_zero_beta_is_mean() {
        let s = SurrogateState::new(KernelParams::new(1.0, 1.0, Smoothness::Half, 0.0))
            .unwrap()
            .update(&[0.0], 2.0)
            .unwrap();
        let (mean, _) = s.posterior(&[1.0]).unwrap();
        assert_eq!(acquisition(&s, &[1.0], 0.0).unwrap(), mean);
        let e = (-1.0f64).exp();
        let v = acquisition(&s, &[1.0], 4.0).unwrap();
        assert!((v - (2.0 * e + 2.0 * (1.0 - e * e).sqrt())).abs() < 1e-12);
        assert!((v - 2.596).abs() < 1e-3);
    }

    #[test]
    fn empty_state_returns_feasible_point() {
        let s = SurrogateState::new(KernelParams::default_for_budget(1.0)).unwrap();
        let region = FeasibleRegion::simplex(3, 1.0).unwrap();
        let (x, _) = maximize_acquisition(&s, 5.0, &region, &AscentConfig::default(), None, 3).unwrap();
        assert!(region.contains(&x, 1e-9));
    }

    #[test]
    fn single_round_trace() {
        let net = GossipNetwork::<f64>::from_rated_edges(2, &[(0, 1, 1.0), (1, 0, 1.0)]).unwrap();
        let region = FeasibleRegion::simplex(2, 1.0).unwrap();
        let mut eval = OracleEvaluator { net: &net, lambda_e: 10.0 };
        let trace = run(&region, &BanditConfig::new(1, 1.0), &mut eval, 0).unwrap();
        assert_eq!(trace.iterations.len(), 1);
        assert_eq!(trace.iterations[0].lambda, vec![0.5, 0.5]);
        assert!((trace.iterations[0].worst_age - 40.0 / 3.0).abs() < 1e-9);
        assert!(region.contains(&trace.iterations[0].proposed, 1e-9));
    }

    struct Failing;
    impl Evaluator<f64> for Failing {
        fn evaluate(&mut self, allocation: &[f64], iteration: usize) -> Result<AgeReport<f64>> {
            if iteration > 3 {
                Err(Error::DegenerateRates)
            } else {
                Ok(AgeReport::from_ages(vec![10.0 + allocation[0]; allocation.len()]))
            }
        }
    }

    #[test]
    fn evaluator_failure_keeps_partial_trace() {
        let region = FeasibleRegion::simplex(2, 1.0).unwrap();
        let trace = run(&region, &BanditConfig::new(10, 1.0), &mut Failing, 0).unwrap();
        assert_eq!(trace.iterations.len(), 3);
        assert!(trace.failure.unwrap().contains("iteration 4"));
    }

    #[test]
    fn regret_of_flat_trace_is_zero() {
        let region = FeasibleRegion::simplex(2, 1.0).unwrap();
        struct Flat;
        impl Evaluator<f64> for Flat {
            fn evaluate(&mut self, a: &[f64], _: usize) -> Result<AgeReport<f64>> {
                Ok(AgeReport::from_ages(vec![7.0; a.len()]))
            }
        }
        let trace = run(&region, &BanditConfig::new(5, 1.0), &mut Flat, 0).unwrap();
        let (r, big_r) = regret_series(&trace, 7.0);
        assert!(r.iter().all(|&v| v == 0.0) && big_r.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn jsonl_fields() {
        let net = GossipNetwork::<f64>::isolated(2).unwrap();
        let region = FeasibleRegion::simplex(2, 1.0).unwrap();
        let trace = run(&region, &BanditConfig::new(2, 1.0), &mut OracleEvaluator { net: &net, lambda_e: 10.0 }, 1).unwrap();
        let mut buf = Vec::new();
        trace.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 2);
        let v: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        for key in ["m", "lambda", "worst_age", "per_node_age", "beta", "acq_value"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
    }
}
