//! Experiment configuration and orchestration.
//!
//! An experiment draws one topology per seed, evaluates the uniform
//! allocation, runs the learning loop, and records both schemes' per-node ages
//! next to each node's degrees and final rate. Seeds run as independent jobs;
//! results are always collected in seed order.

pub mod cli;
pub mod export;
pub mod stats;

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bandit::{self, AscentConfig, BanditConfig, FeasibleRegion, OptimizationTrace, OracleEvaluator, SimEvaluator};
use crate::error::{Error, Result};
use crate::gp::KernelParams;
use crate::oracle;
use crate::sim::{self, replicate_seed, AgeReport, SimConfig};
use crate::topology::{self, GossipNetwork, TopologyKind, TopologySpec};

pub use stats::{age_histogram, degree_rate_summary, spearman, AgeHistogram, Correlation, DegreeRateTable};

/// Caps the number of seed jobs run in parallel.
pub const THREADS_ENV: &str = "GOSSIP_FAIR_THREADS";

/// Replicate index reserved for the final assessment windows.
const ASSESSMENT_REPLICATE: usize = 1 << 20;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvaluatorMode {
    #[default]
    Simulate,
    Oracle,
}

impl std::str::FromStr for EvaluatorMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "simulate" => Ok(EvaluatorMode::Simulate),
            "oracle" => Ok(EvaluatorMode::Oracle),
            other => Err(Error::Config(format!("mode: expected `simulate` or `oracle`, got `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CapacityName {
    /// `B = n`
    N,
    /// `B = √n`
    SqrtN,
}

/// Gossip capacity as a function of `n`, for sweeps over network size.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CapacityRule {
    Named(CapacityName),
    Constant(f64),
}

impl CapacityRule {
    pub fn capacity(&self, n: usize) -> f64 {
        match self {
            CapacityRule::Named(CapacityName::N) => n as f64,
            CapacityRule::Named(CapacityName::SqrtN) => (n as f64).sqrt(),
            CapacityRule::Constant(b) => *b,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSettings {
    pub horizon: f64,
    pub warmup_fraction: f64,
    pub replications: usize,
}

impl Default for SimSettings {
    fn default() -> Self {
        SimSettings { horizon: sim::DEFAULT_HORIZON, warmup_fraction: sim::DEFAULT_WARMUP, replications: 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BanditSettings {
    pub delta: f64,
    pub age_cap_factor: f64,
    pub center_rewards: bool,
    pub ascent: AscentConfig,
}

impl Default for BanditSettings {
    fn default() -> Self {
        let base = BanditConfig::<f64>::new(1, 1.0);
        BanditSettings {
            delta: base.delta,
            age_cap_factor: base.age_cap_factor,
            center_rewards: base.center_rewards,
            ascent: base.ascent,
        }
    }
}

/// The single JSON document every CLI subcommand reads.
///
/// The network comes from exactly one of `topology` (generated per seed),
/// `network` (inline) or `network_file`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub topology: Option<TopologySpec<f64>>,
    #[serde(default)]
    pub network: Option<GossipNetwork<f64>>,
    #[serde(default)]
    pub network_file: Option<PathBuf>,
    /// Allocation for `simulate` / `oracle`; defaults to uniform.
    #[serde(default)]
    pub allocation: Option<Vec<f64>>,
    #[serde(default = "default_lambda_e")]
    pub lambda_e: f64,
    #[serde(default = "default_lambda_total")]
    pub lambda_total: f64,
    /// Overrides `topology.capacity`, e.g. `"n"`, `"sqrt_n"` or `2.0`.
    #[serde(default)]
    pub capacity_rule: Option<CapacityRule>,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default)]
    pub sim: SimSettings,
    /// Surrogate kernel; defaults to [`BanditConfig::new`].
    #[serde(default)]
    pub kernel: Option<KernelParams<f64>>,
    #[serde(default)]
    pub bandit: BanditSettings,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub mode: EvaluatorMode,
    /// Network sizes to sweep; each gets its own output subdirectory.
    #[serde(default)]
    pub n_values: Option<Vec<usize>>,
    #[serde(default = "default_bins")]
    pub histogram_bins: usize,
    #[serde(default)]
    pub outputs: Option<PathBuf>,
}

fn default_lambda_e() -> f64 {
    10.0
}
fn default_lambda_total() -> f64 {
    1.0
}
fn default_iterations() -> usize {
    100
}
fn default_seeds() -> Vec<u64> {
    vec![0]
}
fn default_bins() -> usize {
    10
}

impl ExperimentConfig {
    /// Config around a topology with every other field at its default.
    pub fn for_topology(topology: TopologySpec<f64>) -> Self {
        ExperimentConfig {
            topology: Some(topology),
            network: None,
            network_file: None,
            allocation: None,
            lambda_e: default_lambda_e(),
            lambda_total: default_lambda_total(),
            capacity_rule: None,
            iterations: default_iterations(),
            sim: SimSettings::default(),
            kernel: None,
            bandit: BanditSettings::default(),
            seeds: default_seeds(),
            mode: EvaluatorMode::default(),
            n_values: None,
            histogram_bins: default_bins(),
            outputs: None,
        }
    }

    /// Parses and validates a config, reporting the offending field path on failure.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::Config(format!("{path}: {}", e.into_inner()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_json(&text)?;
        if let (Some(file), Some(dir)) = (&cfg.network_file, path.parent()) {
            if file.is_relative() {
                cfg.network_file = Some(dir.join(file));
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let sources = [self.topology.is_some(), self.network.is_some(), self.network_file.is_some()]
            .into_iter()
            .filter(|&b| b)
            .count();
        if sources > 1 {
            return Err(Error::Config("give only one of `topology`, `network`, `network_file`".into()));
        }
        if self.iterations == 0 {
            return Err(Error::Config("iterations: must be >= 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds: must be nonempty".into()));
        }
        if !(self.lambda_total > 0.0 && self.lambda_total.is_finite()) {
            return Err(Error::Config("lambda_total: must be positive".into()));
        }
        if !(self.lambda_e >= 0.0 && self.lambda_e.is_finite()) {
            return Err(Error::Config("lambda_e: must be finite and nonnegative".into()));
        }
        if self.histogram_bins < 2 {
            return Err(Error::Config("histogram_bins: must be >= 2".into()));
        }
        if self.sim.replications == 0 {
            return Err(Error::Config("sim.replications: must be >= 1".into()));
        }
        if !(self.sim.horizon > 0.0) || !(0.0..1.0).contains(&self.sim.warmup_fraction) {
            return Err(Error::Config("sim: need horizon > 0 and warmup_fraction in [0, 1)".into()));
        }
        if !(self.bandit.delta > 0.0 && self.bandit.delta < 1.0) {
            return Err(Error::Config("bandit.delta: must lie in (0, 1)".into()));
        }
        if self.bandit.ascent.restarts == 0 {
            return Err(Error::Config("bandit.ascent.restarts: must be >= 1".into()));
        }
        if let Some(k) = &self.kernel {
            k.validate().map_err(|e| Error::Config(format!("kernel: {e}")))?;
        }
        if let Some(t) = &self.topology {
            let mut t = t.clone();
            if let Some(rule) = self.capacity_rule {
                t.capacity = rule.capacity(t.n);
            }
            t.validate().map_err(|e| Error::Config(format!("topology: {e}")))?;
        }
        if let Some(ns) = &self.n_values {
            if ns.is_empty() || self.topology.is_none() {
                return Err(Error::Config("n_values: needs a nonempty list and a `topology`".into()));
            }
        }
        Ok(())
    }

    /// Topology spec for one seed, with the size and capacity overrides applied.
    pub fn topology_for(&self, seed: u64, n: Option<usize>) -> Result<TopologySpec<f64>> {
        let mut spec = self
            .topology
            .clone()
            .ok_or_else(|| Error::Config("topology: required for this command".into()))?;
        spec.seed = seed;
        if let Some(n) = n {
            spec.n = n;
            if let TopologyKind::UniformDegree { min, max } = &mut spec.kind {
                *max = (*max).min(n - 1);
                *min = (*min).min(*max);
            }
        }
        if let Some(rule) = self.capacity_rule {
            spec.capacity = rule.capacity(spec.n);
        }
        Ok(spec)
    }

    /// The network for `seed`: generated from `topology`, or the fixed inline/file network.
    pub fn network_for(&self, seed: u64, n: Option<usize>) -> Result<GossipNetwork<f64>> {
        if let Some(net) = &self.network {
            return Ok(net.clone());
        }
        if let Some(path) = &self.network_file {
            let text = std::fs::read_to_string(path)?;
            return serde_json::from_str(&text).map_err(|e| Error::Config(format!("network_file: {e}")));
        }
        topology::generate(&self.topology_for(seed, n)?)
    }

    pub fn allocation_for(&self, n: usize) -> Result<Vec<f64>> {
        match &self.allocation {
            Some(a) if a.len() != n => Err(Error::Config(format!("allocation: expected {n} entries, got {}", a.len()))),
            Some(a) => Ok(a.clone()),
            None => Ok(FeasibleRegion::simplex(n, self.lambda_total)?.uniform_point()),
        }
    }

    pub fn sim_config(&self, allocation: Vec<f64>, seed: u64) -> SimConfig<f64> {
        SimConfig {
            lambda_e: self.lambda_e,
            allocation,
            horizon: self.sim.horizon,
            seed,
            warmup_fraction: self.sim.warmup_fraction,
        }
    }

    pub fn bandit_config(&self) -> BanditConfig<f64> {
        let mut cfg = BanditConfig::new(self.iterations, self.lambda_total);
        if let Some(k) = &self.kernel {
            cfg.kernel = k.clone();
        }
        cfg.delta = self.bandit.delta;
        cfg.age_cap_factor = self.bandit.age_cap_factor;
        cfg.center_rewards = self.bandit.center_rewards;
        cfg.ascent = self.bandit.ascent.clone();
        cfg
    }
}

/// Evaluates `allocation` with the configured evaluator outside the learning loop.
fn assess(cfg: &ExperimentConfig, net: &GossipNetwork<f64>, allocation: &[f64], seed: u64) -> Result<AgeReport<f64>> {
    match cfg.mode {
        EvaluatorMode::Oracle => Ok(AgeReport::from_ages(oracle::exact_ages(net, allocation, cfg.lambda_e)?)),
        EvaluatorMode::Simulate => {
            let sim_cfg = cfg.sim_config(allocation.to_vec(), replicate_seed(seed, ASSESSMENT_REPLICATE));
            sim::simulate_replicated(net, &sim_cfg, cfg.sim.replications)
        }
    }
}

/// Runs the learning loop once on `net`.
pub fn optimize(cfg: &ExperimentConfig, net: &GossipNetwork<f64>, seed: u64) -> Result<OptimizationTrace<f64>> {
    let region = FeasibleRegion::simplex(net.n(), cfg.lambda_total)?;
    let bandit_cfg = cfg.bandit_config();
    match cfg.mode {
        EvaluatorMode::Oracle => {
            let mut eval = OracleEvaluator { net, lambda_e: cfg.lambda_e };
            bandit::run(&region, &bandit_cfg, &mut eval, seed)
        }
        EvaluatorMode::Simulate => {
            let mut eval = SimEvaluator {
                net,
                lambda_e: cfg.lambda_e,
                horizon: cfg.sim.horizon,
                warmup_fraction: cfg.sim.warmup_fraction,
                seed,
                replications: cfg.sim.replications,
            };
            bandit::run(&region, &bandit_cfg, &mut eval, seed)
        }
    }
}

/// Both schemes on one seed's network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub network: GossipNetwork<f64>,
    pub uniform_allocation: Vec<f64>,
    pub optimized_allocation: Vec<f64>,
    pub uniform_ages: Vec<f64>,
    pub optimized_ages: Vec<f64>,
    pub trace: OptimizationTrace<f64>,
}

impl SeedOutcome {
    pub fn uniform_worst(&self) -> f64 {
        max(&self.uniform_ages)
    }

    pub fn optimized_worst(&self) -> f64 {
        max(&self.optimized_ages)
    }

    pub fn out_degrees(&self) -> Vec<usize> {
        self.network.out_degrees()
    }

    pub fn in_degrees(&self) -> Vec<usize> {
        self.network.in_degrees()
    }
}

fn max(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedFailure {
    pub seed: u64,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonResult {
    pub outcomes: Vec<SeedOutcome>,
    pub failures: Vec<SeedFailure>,
}

/// Mean and standard error of the mean.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std_error: f64,
    pub count: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Summary {
        let count = values.len();
        if count == 0 {
            return Summary { mean: f64::NAN, std_error: f64::NAN, count };
        }
        let mean = values.iter().sum::<f64>() / count as f64;
        let std_error = if count > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (count - 1) as f64;
            (var / count as f64).sqrt()
        } else {
            0.0
        };
        Summary { mean, std_error, count }
    }
}

impl ComparisonResult {
    /// `(uniform worst age, optimized worst age)` per successful seed.
    pub fn worst_pairs(&self) -> Vec<(u64, f64, f64)> {
        self.outcomes.iter().map(|o| (o.seed, o.uniform_worst(), o.optimized_worst())).collect()
    }

    pub fn uniform_summary(&self) -> Summary {
        Summary::of(&self.outcomes.iter().map(SeedOutcome::uniform_worst).collect::<Vec<_>>())
    }

    pub fn optimized_summary(&self) -> Summary {
        Summary::of(&self.outcomes.iter().map(SeedOutcome::optimized_worst).collect::<Vec<_>>())
    }

    /// Mean of `uniform − optimized` worst age.
    pub fn gap_summary(&self) -> Summary {
        Summary::of(&self.outcomes.iter().map(|o| o.uniform_worst() - o.optimized_worst()).collect::<Vec<_>>())
    }
}

fn run_seed(cfg: &ExperimentConfig, seed: u64, n: Option<usize>) -> Result<SeedOutcome> {
    let network = cfg.network_for(seed, n)?;
    let region = FeasibleRegion::simplex(network.n(), cfg.lambda_total)?;
    let uniform_allocation = region.uniform_point();
    let trace = optimize(cfg, &network, seed)?;
    if let Some(f) = &trace.failure {
        return Err(Error::Evaluator { iteration: trace.iterations.len() + 1, message: f.clone() });
    }
    let optimized_allocation = trace.best_allocation.clone();
    let uniform_ages = assess(cfg, &network, &uniform_allocation, seed)?.per_node;
    let optimized_ages = assess(cfg, &network, &optimized_allocation, seed)?.per_node;
    Ok(SeedOutcome { seed, network, uniform_allocation, optimized_allocation, uniform_ages, optimized_ages, trace })
}

fn with_pool<R: Send>(job: impl FnOnce() -> R + Send) -> R {
    let threads = std::env::var(THREADS_ENV).ok().and_then(|v| v.parse::<usize>().ok()).filter(|&t| t > 0);
    match threads.map(|t| rayon::ThreadPoolBuilder::new().num_threads(t).build()) {
        Some(Ok(pool)) => pool.install(job),
        _ => job(),
    }
}

/// Runs every seed; a failing seed is recorded and does not stop the others.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ComparisonResult> {
    run_experiment_sized(cfg, None)
}

/// [`run_experiment`] with the topology size overridden.
pub fn run_experiment_sized(cfg: &ExperimentConfig, n: Option<usize>) -> Result<ComparisonResult> {
    cfg.validate()?;
    let results: Vec<(u64, Result<SeedOutcome>)> =
        with_pool(|| cfg.seeds.par_iter().map(|&seed| (seed, run_seed(cfg, seed, n))).collect());
    let mut outcomes = Vec::new();
    let mut failures = Vec::new();
    for (seed, r) in results {
        match r {
            Ok(o) => outcomes.push(o),
            Err(e) => failures.push(SeedFailure { seed, message: e.to_string() }),
        }
    }
    Ok(ComparisonResult { outcomes, failures })
}

/// One row per (n, scheme) of a size sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n: usize,
    pub lambda_total: f64,
    pub capacity: f64,
    pub scheme: String,
    pub mean_worst_age: f64,
    pub std_error: f64,
    pub seeds: usize,
}

/// Runs the experiment for every size in `cfg.n_values`.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<Vec<(usize, ComparisonResult)>> {
    let sizes = cfg.n_values.clone().ok_or_else(|| Error::Config("n_values: required for a sweep".into()))?;
    sizes.into_iter().map(|n| Ok((n, run_experiment_sized(cfg, Some(n))?))).collect()
}

pub fn sweep_rows(cfg: &ExperimentConfig, sweep: &[(usize, ComparisonResult)]) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for (n, result) in sweep {
        let capacity = cfg.topology_for(0, Some(*n))?.capacity;
        for (scheme, s) in [("uniform", result.uniform_summary()), ("optimized", result.optimized_summary())] {
            rows.push(SweepRow {
                n: *n,
                lambda_total: cfg.lambda_total,
                capacity,
                scheme: scheme.into(),
                mean_worst_age: s.mean,
                std_error: s.std_error,
                seeds: s.count,
            });
        }
    }
    Ok(rows)
}
