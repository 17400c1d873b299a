use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::{self, DensityState};
use crate::C64;

const SUM_TOL: f64 = 1e-9;
const NEGATIVE_TOL: f64 = 1e-8;
/// `⟨n⟩` below which correlation functions are reported as undefined.
pub const VACUUM_EPS: f64 = 1e-12;

/// Cavity photon-number distribution `P(n)`, `n = 0..len`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PhotonDistribution {
    probabilities: Vec<f64>,
}

impl PhotonDistribution {
    /// Validates normalisation (`1e-9`) and entrywise positivity (`-1e-8`).
    pub fn new(probabilities: Vec<f64>) -> Result<Self> {
        if probabilities.is_empty() {
            return Err(Error::InvalidState("empty photon distribution".into()));
        }
        if probabilities.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidState("non-finite probability".into()));
        }
        let sum: f64 = probabilities.iter().sum();
        if (sum - 1.0).abs() > SUM_TOL {
            return Err(Error::InvalidState(format!("distribution sums to {sum}")));
        }
        if let Some(p) = probabilities.iter().find(|&&p| p < -NEGATIVE_TOL) {
            return Err(Error::InvalidState(format!("negative probability {p}")));
        }
        Ok(Self { probabilities })
    }

    /// Normalises arbitrary nonnegative weights.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::InvalidState("weights sum to zero".into()));
        }
        Self::new(weights.into_iter().map(|w| w / total).collect())
    }

    /// Poisson distribution with the given mean, truncated at `n_max` and
    /// renormalised.
    pub fn poisson(mean: f64, n_max: usize) -> Result<Self> {
        let mut w = Vec::with_capacity(n_max + 1);
        let mut log_p = -mean;
        for n in 0..=n_max {
            if n > 0 {
                log_p += mean.ln() - (n as f64).ln();
            }
            w.push(if mean == 0.0 { if n == 0 { 1.0 } else { 0.0 } } else { log_p.exp() });
        }
        Self::from_weights(w)
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn len(&self) -> usize {
        self.probabilities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probabilities.is_empty()
    }

    pub fn get(&self, n: usize) -> f64 {
        self.probabilities.get(n).copied().unwrap_or(0.0)
    }

    /// Population of the highest retained Fock level.
    pub fn tail(&self) -> f64 {
        *self.probabilities.last().unwrap()
    }

    pub fn mean(&self) -> f64 {
        self.factorial_moment(1)
    }

    /// `Σ n(n-1)..(n-m+1) P(n)`.
    pub fn factorial_moment(&self, m: usize) -> f64 {
        self.probabilities
            .iter()
            .enumerate()
            .map(|(n, &p)| (0..m).map(|i| n as f64 - i as f64).product::<f64>() * p)
            .sum()
    }

    /// Probability of `n >= k`.
    pub fn at_least(&self, k: usize) -> f64 {
        self.probabilities.iter().skip(k).sum()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        let len = self.len().max(other.len());
        (0..len).map(|n| (self.get(n) - other.get(n)).abs()).fold(0.0, f64::max)
    }
}

/// `g⁽ᵐ⁾(0) = Σ n(n-1)..(n-m+1) P(n) / (Σ n P(n))^m`.
pub fn gm_from_distribution(p: &PhotonDistribution, m: usize) -> Result<f64> {
    if m < 2 {
        return Err(Error::InvalidState(format!("correlation order must be >= 2, got {m}")));
    }
    let mean = p.mean();
    if mean <= VACUUM_EPS {
        return Err(Error::UndefinedCorrelation { mean });
    }
    Ok(p.factorial_moment(m) / mean.powi(m as i32))
}

/// `⟨a†a†aa⟩ / ⟨a†a⟩²` for the cavity (subsystem 0) of `state`.
pub fn g2_from_state(state: &DensityState) -> Result<f64> {
    g2_with_shift(state, C64::new(0.0, 0.0))
}

/// `g⁽²⁾` for the field `a + α`, with `a` the cavity lowering operator of
/// `state`. Used for states solved in a displaced frame.
pub(crate) fn g2_with_shift(state: &DensityState, alpha: C64) -> Result<f64> {
    let (n1, n2) = normal_moments(state, alpha)?;
    if n1 <= VACUUM_EPS {
        return Err(Error::UndefinedCorrelation { mean: n1 });
    }
    Ok(n2 / (n1 * n1))
}

/// `(⟨A†A⟩, ⟨A†A†AA⟩)` with `A = a + α`.
pub(crate) fn normal_moments(state: &DensityState, alpha: C64) -> Result<(f64, f64)> {
    let space = state.space();
    let dim = space.dims()[0];
    let mut a = hilbert::embed(&hilbert::annihilation(dim)?, 0, space)?;
    if alpha != C64::new(0.0, 0.0) {
        a = a.try_add(&hilbert::OperatorMatrix::identity(space).scale(alpha))?;
    }
    let ad = a.adjoint();
    let n1 = hilbert::expectation(state, &ad.try_mul(&a)?)?.re;
    let aa = a.try_mul(&a)?;
    let n2 = hilbert::expectation(state, &aa.adjoint().try_mul(&aa)?)?.re;
    Ok((n1, n2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{cavity_distribution, CompositeSpace};
    use approx::assert_abs_diff_eq;
    use faer::Mat;

    #[test]
    fn fock_one_has_zero_g2() {
        let p = PhotonDistribution::new(vec![0.0, 1.0, 0.0]).unwrap();
        assert_eq!(gm_from_distribution(&p, 2).unwrap(), 0.0);
        let st = DensityState::basis(CompositeSpace::single(4).unwrap(), &[1]).unwrap();
        assert_eq!(g2_from_state(&st).unwrap(), 0.0);
    }

    #[test]
    fn poisson_has_unit_g2() {
        let p = PhotonDistribution::poisson(1.0, 20).unwrap();
        assert_abs_diff_eq!(gm_from_distribution(&p, 2).unwrap(), 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(gm_from_distribution(&p, 3).unwrap(), 1.0, epsilon = 1e-6);
    }

    #[test]
    fn third_order_without_three_photon_support() {
        let p = PhotonDistribution::new(vec![0.5, 0.0, 0.5]).unwrap();
        assert_eq!(gm_from_distribution(&p, 3).unwrap(), 0.0);
    }

    #[test]
    fn vacuum_is_undefined() {
        let p = PhotonDistribution::new(vec![1.0, 0.0]).unwrap();
        assert!(matches!(gm_from_distribution(&p, 2), Err(Error::UndefinedCorrelation { .. })));
        let st = DensityState::basis(CompositeSpace::single(3).unwrap(), &[0]).unwrap();
        assert!(matches!(g2_from_state(&st), Err(Error::UndefinedCorrelation { .. })));
    }

    #[test]
    fn coherent_state_g2() {
        let dim = 40;
        let alpha: f64 = 1.3;
        let mut ket = vec![C64::new(0.0, 0.0); dim];
        let mut amp = (-alpha * alpha / 2.0).exp();
        for (n, k) in ket.iter_mut().enumerate() {
            if n > 0 {
                amp *= alpha / (n as f64).sqrt();
            }
            *k = C64::new(amp, 0.0);
        }
        let st = DensityState::pure(CompositeSpace::single(dim).unwrap(), &ket).unwrap();
        assert_abs_diff_eq!(g2_from_state(&st).unwrap(), 1.0, epsilon = 1e-8);
    }

    #[test]
    fn thermal_state_g2() {
        let dim = 160;
        let nbar: f64 = 1.0;
        let r = nbar / (1.0 + nbar);
        let weights: Vec<f64> = (0..dim).map(|n| r.powi(n as i32)).collect();
        let total: f64 = weights.iter().sum();
        let m = Mat::from_fn(dim, dim, |i, j| {
            if i == j {
                C64::new(weights[i] / total, 0.0)
            } else {
                C64::new(0.0, 0.0)
            }
        });
        let st = DensityState::new(CompositeSpace::single(dim).unwrap(), m).unwrap();
        assert_abs_diff_eq!(g2_from_state(&st).unwrap(), 2.0, epsilon = 1e-6);
        let p = cavity_distribution(&st).unwrap();
        assert_abs_diff_eq!(
            g2_from_state(&st).unwrap(),
            gm_from_distribution(&p, 2).unwrap(),
            epsilon = 1e-9
        );
    }

    #[test]
    fn distribution_validation() {
        assert!(PhotonDistribution::new(vec![0.5, 0.6]).is_err());
        assert!(PhotonDistribution::new(vec![1.1, -0.1]).is_err());
        assert!(PhotonDistribution::new(vec![1.0 + 1e-10, -1e-10]).is_ok());
    }
}
