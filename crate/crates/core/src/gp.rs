//! Gaussian-process surrogate with a Matérn covariance.
//!
//! The posterior is kept as a lower Cholesky factor of `K + noise·I` that
//! grows by one row per observation, plus the weight vector
//! `(K + noise·I)⁻¹ (f - offset)` so that mean queries are a dot product.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// First diagonal jitter tried after a failed factorization, relative to the signal variance.
const JITTER_START: f64 = 1e-10;
/// Largest jitter tried before giving up, relative to the signal variance.
const JITTER_MAX: f64 = 1e-2;
/// A pivot below this fraction of its diagonal entry counts as a factorization failure.
const PIVOT_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Smoothness {
    #[serde(rename = "1/2")]
    Half,
    #[serde(rename = "3/2")]
    ThreeHalves,
    #[serde(rename = "5/2")]
    FiveHalves,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LengthScale<T> {
    Shared(T),
    PerDim(Vec<T>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelParams<T> {
    pub variance: T,
    pub length_scale: LengthScale<T>,
    pub smoothness: Smoothness,
    /// Observation noise variance added to the diagonal.
    pub noise: T,
}

impl<T: Scalar> KernelParams<T> {
    pub fn new(variance: T, length_scale: T, smoothness: Smoothness, noise: T) -> Self {
        KernelParams { variance, length_scale: LengthScale::Shared(length_scale), smoothness, noise }
    }

    /// ν = 5/2, ℓ = 0.2·λ_total, unit variance, noise 1e-4·variance.
    pub fn default_for_budget(lambda_total: T) -> Self {
        Self::new(T::one(), T::lit(0.2) * lambda_total, Smoothness::FiveHalves, T::lit(1e-4))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.variance > T::zero()) || !self.variance.is_finite() {
            return Err(Error::InvalidArgument("kernel variance must be positive".into()));
        }
        let ok = match &self.length_scale {
            LengthScale::Shared(l) => *l > T::zero() && l.is_finite(),
            LengthScale::PerDim(ls) => !ls.is_empty() && ls.iter().all(|l| *l > T::zero() && l.is_finite()),
        };
        if !ok {
            return Err(Error::InvalidArgument("length scales must be positive".into()));
        }
        if !(self.noise >= T::zero()) || !self.noise.is_finite() {
            return Err(Error::InvalidArgument("noise variance must be nonnegative".into()));
        }
        Ok(())
    }

    /// Length-scale-weighted Euclidean distance.
    fn scaled_distance(&self, x: &[T], y: &[T]) -> Result<T> {
        if x.len() != y.len() {
            return Err(Error::DimensionMismatch { expected: x.len(), got: y.len() });
        }
        let sq = match &self.length_scale {
            LengthScale::Shared(l) => x.iter().zip(y).map(|(&a, &b)| ((a - b) / *l).powi(2)).sum::<T>(),
            LengthScale::PerDim(ls) => {
                if ls.len() != x.len() {
                    return Err(Error::DimensionMismatch { expected: ls.len(), got: x.len() });
                }
                x.iter().zip(y).zip(ls).map(|((&a, &b), &l)| ((a - b) / l).powi(2)).sum::<T>()
            }
        };
        Ok(sq.sqrt())
    }

    fn profile(&self, r: T) -> T {
        let v = self.variance;
        match self.smoothness {
            Smoothness::Half => v * (-r).exp(),
            Smoothness::ThreeHalves => {
                let s = T::lit(3f64.sqrt()) * r;
                v * (T::one() + s) * (-s).exp()
            }
            Smoothness::FiveHalves => {
                let s = T::lit(5f64.sqrt()) * r;
                v * (T::one() + s + s * s / T::lit(3.0)) * (-s).exp()
            }
        }
    }
}

/// Matérn covariance `k(x, y)`.
pub fn kernel<T: Scalar>(params: &KernelParams<T>, x: &[T], y: &[T]) -> Result<T> {
    Ok(params.profile(params.scaled_distance(x, y)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurrogateState<T> {
    points: Vec<Vec<T>>,
    rewards: Vec<T>,
    params: KernelParams<T>,
    /// Subtract the running reward mean before regression.
    center: bool,
    /// Extra diagonal jitter currently in the factor.
    jitter: T,
    /// Rows of the lower Cholesky factor; row `i` has `i + 1` entries.
    factor: Vec<Vec<T>>,
    weights: Vec<T>,
    offset: T,
}

impl<T: Scalar> SurrogateState<T> {
    /// Empty surrogate with a zero prior mean.
    pub fn new(params: KernelParams<T>) -> Result<Self> {
        params.validate()?;
        Ok(SurrogateState {
            points: Vec::new(),
            rewards: Vec::new(),
            params,
            center: false,
            jitter: T::zero(),
            factor: Vec::new(),
            weights: Vec::new(),
            offset: T::zero(),
        })
    }

    /// Regress on rewards minus their running mean and add the mean back on prediction.
    pub fn centered(mut self, center: bool) -> Self {
        self.center = center;
        self.refresh_weights();
        self
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec<T>] {
        &self.points
    }

    pub fn rewards(&self) -> &[T] {
        &self.rewards
    }

    pub fn params(&self) -> &KernelParams<T> {
        &self.params
    }

    pub fn jitter(&self) -> T {
        self.jitter
    }

    /// Returns a new state with `(x, f)` appended.
    pub fn update(&self, x: &[T], f: T) -> Result<Self> {
        let mut next = self.clone();
        next.push(x, f)?;
        Ok(next)
    }

    /// Appends `(x, f)` in place, extending the factor by one row.
    pub fn push(&mut self, x: &[T], f: T) -> Result<()> {
        if let Some(first) = self.points.first() {
            if first.len() != x.len() {
                return Err(Error::DimensionMismatch { expected: first.len(), got: x.len() });
            }
        }
        if !f.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("observations must be finite".into()));
        }
        let k = self.cross_covariance(x)?;
        let diag = self.params.variance + self.params.noise + self.jitter;
        let row = forward_solve(&self.factor, &k);
        let pivot = diag - dot(&row, &row);

        self.points.push(x.to_vec());
        self.rewards.push(f);
        if pivot > diag * T::lit(PIVOT_FLOOR) {
            let mut row = row;
            row.push(pivot.sqrt());
            self.factor.push(row);
        } else {
            self.refactor_with_escalation()?;
        }
        self.refresh_weights();
        Ok(())
    }

    /// Posterior mean and variance of the latent function at `x`.
    pub fn posterior(&self, x: &[T]) -> Result<(T, T)> {
        let prior = kernel(&self.params, x, x)?;
        if self.is_empty() {
            return Ok((T::zero(), prior));
        }
        let k = self.cross_covariance(x)?;
        let mean = self.offset + dot(&k, &self.weights);
        let v = forward_solve(&self.factor, &k);
        let var = (prior - dot(&v, &v)).max(T::zero());
        Ok((mean, var))
    }

    fn cross_covariance(&self, x: &[T]) -> Result<Vec<T>> {
        self.points.iter().map(|p| kernel(&self.params, p, x)).collect()
    }

    fn refactor_with_escalation(&mut self) -> Result<()> {
        let variance = self.params.variance;
        let mut jitter = if self.jitter > T::zero() {
            self.jitter * T::lit(10.0)
        } else {
            variance * T::lit(JITTER_START)
        };
        while jitter <= variance * T::lit(JITTER_MAX) * T::lit(1.0 + 1e-9) {
            if let Some(factor) = self.cholesky(jitter) {
                self.factor = factor;
                self.jitter = jitter;
                return Ok(());
            }
            jitter = jitter * T::lit(10.0);
        }
        self.points.pop();
        self.rewards.pop();
        Err(Error::Singular { jitter: jitter.as_f64() })
    }

    fn cholesky(&self, jitter: T) -> Option<Vec<Vec<T>>> {
        let m = self.points.len();
        let mut factor: Vec<Vec<T>> = Vec::with_capacity(m);
        for i in 0..m {
            let mut row = Vec::with_capacity(i + 1);
            for j in 0..i {
                let kij = kernel(&self.params, &self.points[i], &self.points[j]).ok()?;
                let s = kij - dot(&row[..j], &factor[j][..j]);
                row.push(s / factor[j][j]);
            }
            let diag = self.params.variance + self.params.noise + jitter;
            let pivot = diag - dot(&row, &row);
            if !(pivot > diag * T::lit(PIVOT_FLOOR)) {
                return None;
            }
            row.push(pivot.sqrt());
            factor.push(row);
        }
        Some(factor)
    }

    fn refresh_weights(&mut self) {
        let m = self.rewards.len();
        self.offset = if self.center && m > 0 {
            self.rewards.iter().copied().sum::<T>() / T::from_usize_lossy(m)
        } else {
            T::zero()
        };
        let centered: Vec<T> = self.rewards.iter().map(|&f| f - self.offset).collect();
        let z = forward_solve(&self.factor, &centered);
        self.weights = backward_solve(&self.factor, &z);
    }
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Solves `L z = b` for the packed lower factor.
fn forward_solve<T: Scalar>(factor: &[Vec<T>], b: &[T]) -> Vec<T> {
    let mut z: Vec<T> = Vec::with_capacity(b.len());
    for (i, row) in factor.iter().enumerate() {
        let s = b[i] - dot(&row[..i], &z);
        z.push(s / row[i]);
    }
    z
}

/// Solves `Lᵀ w = z`.
fn backward_solve<T: Scalar>(factor: &[Vec<T>], z: &[T]) -> Vec<T> {
    let m = z.len();
    let mut w = z.to_vec();
    for i in (0..m).rev() {
        w[i] = w[i] / factor[i][i];
        let wi = w[i];
        for (k, wk) in w.iter_mut().enumerate().take(i) {
            *wk = *wk - factor[i][k] * wi;
        }
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exp_kernel() -> KernelParams<f64> {
        KernelParams::new(1.0, 1.0, Smoothness::Half, 0.0)
    }

    #[test]
    fn kernel_at_zero_distance_is_variance() {
        for s in [Smoothness::Half, Smoothness::ThreeHalves, Smoothness::FiveHalves] {
            let p = KernelParams::new(2.5, 0.3, s, 0.0);
            assert_eq!(kernel(&p, &[0.1, 0.7], &[0.1, 0.7]).unwrap(), 2.5);
        }
    }

    #[test]
    fn exponential_kernel_closed_form() {
        let v = kernel(&exp_kernel(), &[0.0], &[1.0]).unwrap();
        assert!((v - (-1.0f64).exp()).abs() < 1e-15);
        assert!((v - 0.3679).abs() < 1e-4);
    }

    #[test]
    fn matern_closed_forms() {
        let r: f64 = 0.7;
        let p32 = KernelParams::new(1.0, 1.0, Smoothness::ThreeHalves, 0.0);
        let p52 = KernelParams::new(1.0, 1.0, Smoothness::FiveHalves, 0.0);
        let s3 = 3f64.sqrt() * r;
        let s5 = 5f64.sqrt() * r;
        assert!((kernel(&p32, &[0.0], &[r]).unwrap() - (1.0 + s3) * (-s3).exp()).abs() < 1e-15);
        assert!((kernel(&p52, &[0.0], &[r]).unwrap() - (1.0 + s5 + 5.0 * r * r / 3.0) * (-s5).exp()).abs() < 1e-15);
    }

    #[test]
    fn per_dimension_length_scales() {
        let p = KernelParams {
            variance: 1.0,
            length_scale: LengthScale::PerDim(vec![1.0, 2.0]),
            smoothness: Smoothness::Half,
            noise: 0.0,
        };
        let v = kernel(&p, &[0.0, 0.0], &[0.0, 2.0]).unwrap();
        assert!((v - (-1.0f64).exp()).abs() < 1e-15);
        assert!(kernel(&p, &[0.0], &[1.0]).is_err());
    }

    #[test]
    fn dimension_mismatch() {
        assert!(matches!(
            kernel(&exp_kernel(), &[0.0, 1.0], &[0.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn empty_state_returns_prior() {
        let s = SurrogateState::new(KernelParams::new(3.0, 1.0, Smoothness::FiveHalves, 0.0)).unwrap();
        assert_eq!(s.posterior(&[0.4, 0.2]).unwrap(), (0.0, 3.0));
    }

    #[test]
    fn one_point_interpolation() {
        let s = SurrogateState::new(exp_kernel()).unwrap().update(&[0.3], -5.0).unwrap();
        let (m, v) = s.posterior(&[0.3]).unwrap();
        assert!((m + 5.0).abs() < 1e-12 && v.abs() < 1e-12);
    }

    #[test]
    fn one_point_scalar_posterior() {
        let s = SurrogateState::new(exp_kernel()).unwrap().update(&[0.0], 2.0).unwrap();
        let (m, v) = s.posterior(&[1.0]).unwrap();
        let e = (-1.0f64).exp();
        assert!((m - 2.0 * e).abs() < 1e-12);
        assert!((v - (1.0 - e * e)).abs() < 1e-12);
    }

    #[test]
    fn centering_shifts_the_mean() {
        let s = SurrogateState::new(exp_kernel()).unwrap().centered(true);
        let s = s.update(&[0.0], 2.0).unwrap();
        let (m_far, _) = s.posterior(&[50.0]).unwrap();
        assert!((m_far - 2.0).abs() < 1e-12);
        let (m_at, _) = s.posterior(&[0.0]).unwrap();
        assert!((m_at - 2.0).abs() < 1e-12);
    }

    #[test]
    fn duplicate_point_triggers_jitter() {
        let s = SurrogateState::new(exp_kernel()).unwrap();
        let s = s.update(&[0.5], 1.0).unwrap().update(&[0.5], 1.0).unwrap();
        assert!(s.jitter() > 0.0 && s.jitter() <= 1e-6);
        let (m, _) = s.posterior(&[0.5]).unwrap();
        assert!((m - 1.0).abs() < 1e-4);
    }

    #[test]
    fn rejects_mismatched_dimension() {
        let s = SurrogateState::new(exp_kernel()).unwrap().update(&[0.0, 1.0], 1.0).unwrap();
        assert!(s.update(&[0.0], 1.0).is_err());
        assert!(s.posterior(&[0.0]).is_err());
    }

    #[test]
    fn snapshot_round_trip() {
        let s = SurrogateState::new(KernelParams::default_for_budget(1.0))
            .unwrap()
            .centered(true)
            .update(&[0.2, 0.3], -4.0)
            .unwrap();
        let json = serde_json::to_string(&s).unwrap();
        let back: SurrogateState<f64> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn works_in_single_precision() {
        let p = KernelParams::<f32>::new(1.0, 1.0, Smoothness::Half, 0.0);
        let s = SurrogateState::new(p).unwrap().update(&[0.0], 2.0).unwrap();
        let (m, _) = s.posterior(&[1.0]).unwrap();
        assert!((m - 2.0 * (-1.0f32).exp()).abs() < 1e-6);
    }
}
