//! Ensemble statistics: degree-vs-rate tables, rank correlations, age histograms.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::ComparisonResult;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Correlation {
    Defined {
        rho: f64,
        /// Two-sided p-value of the t approximation with `count − 2` degrees of freedom.
        p_value: f64,
        count: usize,
    },
    Undefined {
        reason: String,
    },
}

impl Correlation {
    pub fn rho(&self) -> Option<f64> {
        match self {
            Correlation::Defined { rho, .. } => Some(*rho),
            Correlation::Undefined { .. } => None,
        }
    }

    pub fn p_value(&self) -> Option<f64> {
        match self {
            Correlation::Defined { p_value, .. } => Some(*p_value),
            Correlation::Undefined { .. } => None,
        }
    }
}

/// 1-based ranks, ties sharing the average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end + 1 < order.len() && values[order[end + 1]] == values[order[start]] {
            end += 1;
        }
        let rank = (start + end) as f64 / 2.0 + 1.0;
        for &k in &order[start..=end] {
            ranks[k] = rank;
        }
        start = end + 1;
    }
    ranks
}

fn distinct(values: &[f64]) -> usize {
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v.len()
}

/// Spearman rank correlation (Pearson correlation of average ranks).
pub fn spearman(x: &[f64], y: &[f64]) -> Correlation {
    if x.len() != y.len() {
        return Correlation::Undefined { reason: format!("length mismatch {} vs {}", x.len(), y.len()) };
    }
    let count = x.len();
    if count < 3 {
        return Correlation::Undefined { reason: format!("need at least 3 pairs, got {count}") };
    }
    if distinct(x) < 2 || distinct(y) < 2 {
        return Correlation::Undefined { reason: "fewer than 2 distinct values".into() };
    }
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    let mean = (count as f64 + 1.0) / 2.0;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mean) * (b - mean);
        sxx += (a - mean).powi(2);
        syy += (b - mean).powi(2);
    }
    let rho = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    let dof = (count - 2) as f64;
    let p_value = if rho.abs() >= 1.0 {
        0.0
    } else {
        let t = rho * (dof / (1.0 - rho * rho)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, dof).expect("positive degrees of freedom");
        2.0 * dist.cdf(-t.abs())
    };
    Correlation::Defined { rho, p_value, count }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegreeBucket {
    pub degree: usize,
    pub count: usize,
    pub mean_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegreeRateTable {
    pub by_out_degree: Vec<DegreeBucket>,
    pub by_in_degree: Vec<DegreeBucket>,
    pub out_degree_correlation: Correlation,
    pub in_degree_correlation: Correlation,
}

fn buckets(degrees: &[usize], rates: &[f64]) -> Vec<DegreeBucket> {
    let mut acc: BTreeMap<usize, (usize, f64)> = BTreeMap::new();
    for (&d, &r) in degrees.iter().zip(rates) {
        let e = acc.entry(d).or_default();
        e.0 += 1;
        e.1 += r;
    }
    acc.into_iter()
        .map(|(degree, (count, sum))| DegreeBucket { degree, count, mean_rate: sum / count as f64 })
        .collect()
}

/// Final allocated rate against out- and in-degree, pooled over every node of every seed.
pub fn degree_rate_summary(results: &ComparisonResult) -> DegreeRateTable {
    let mut out_deg = Vec::new();
    let mut in_deg = Vec::new();
    let mut rates = Vec::new();
    for o in &results.outcomes {
        out_deg.extend(o.out_degrees());
        in_deg.extend(o.in_degrees());
        rates.extend(o.optimized_allocation.iter().copied());
    }
    let as_f64 = |v: &[usize]| v.iter().map(|&d| d as f64).collect::<Vec<_>>();
    DegreeRateTable {
        by_out_degree: buckets(&out_deg, &rates),
        by_in_degree: buckets(&in_deg, &rates),
        out_degree_correlation: spearman(&as_f64(&out_deg), &rates),
        in_degree_correlation: spearman(&as_f64(&in_deg), &rates),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedRange {
    pub seed: u64,
    pub uniform_range: f64,
    pub optimized_range: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgeHistogram {
    /// `bins + 1` edges shared by both schemes; non-finite ages land in the last bin.
    pub edges: Vec<f64>,
    pub uniform_counts: Vec<usize>,
    pub optimized_counts: Vec<usize>,
    /// Per-seed `max − min` of the per-node ages.
    pub ranges: Vec<SeedRange>,
}

impl AgeHistogram {
    /// Fraction of seeds whose optimized spread is no wider than the uniform one.
    pub fn narrower_fraction(&self) -> f64 {
        if self.ranges.is_empty() {
            return f64::NAN;
        }
        let hits = self.ranges.iter().filter(|r| r.optimized_range <= r.uniform_range).count();
        hits as f64 / self.ranges.len() as f64
    }

    pub fn occupied_bins(counts: &[usize]) -> usize {
        counts.iter().filter(|&&c| c > 0).count()
    }
}

fn spread(ages: &[f64]) -> f64 {
    let hi = ages.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = ages.iter().copied().fold(f64::INFINITY, f64::min);
    hi - lo
}

/// Per-node age histogram for both schemes on common bins.
pub fn age_histogram(results: &ComparisonResult, bins: usize) -> AgeHistogram {
    let bins = bins.max(2);
    let all = results
        .outcomes
        .iter()
        .flat_map(|o| o.uniform_ages.iter().chain(&o.optimized_ages))
        .copied()
        .filter(|a| a.is_finite());
    let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), a| (lo.min(a), hi.max(a)));
    let (lo, hi) = if lo.is_finite() { (lo, hi) } else { (0.0, 0.0) };
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|k| if k == bins { hi } else { lo + width * k as f64 }).collect();

    let bin_of = |a: f64| -> usize {
        if !a.is_finite() {
            bins - 1
        } else if width <= 0.0 {
            0
        } else {
            (((a - lo) / width) as usize).min(bins - 1)
        }
    };
    let mut uniform_counts = vec![0; bins];
    let mut optimized_counts = vec![0; bins];
    for o in &results.outcomes {
        for &a in &o.uniform_ages {
            uniform_counts[bin_of(a)] += 1;
        }
        for &a in &o.optimized_ages {
            optimized_counts[bin_of(a)] += 1;
        }
    }
    let ranges = results
        .outcomes
        .iter()
        .map(|o| SeedRange {
            seed: o.seed,
            uniform_range: spread(&o.uniform_ages),
            optimized_range: spread(&o.optimized_ages),
        })
        .collect();
    AgeHistogram { edges, uniform_counts, optimized_counts, ranges }
}
