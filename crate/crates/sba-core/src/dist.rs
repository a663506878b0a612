//! Explicit finite distributions.
//!
//! Environments and policies expose their stochastic pieces as explicit
//! (outcome, probability) supports so exact expectation enumeration and
//! Monte Carlo sampling draw from the same object.

use crate::error::{Error, Result};
use rand::Rng;

/// Tolerance for "probabilities sum to 1" checks.
pub const PROB_TOLERANCE: f64 = 1e-12;

/// A finite distribution over outcomes of type `T`.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteDist<T> {
    outcomes: Vec<(T, f64)>,
}

impl<T> FiniteDist<T> {
    /// Build a distribution, dropping zero-probability outcomes and
    /// verifying the total is 1 within [`PROB_TOLERANCE`].
    pub fn new(outcomes: Vec<(T, f64)>, context: &str) -> Result<Self> {
        let total: f64 = outcomes.iter().map(|(_, p)| p).sum();
        if (total - 1.0).abs() > PROB_TOLERANCE || outcomes.iter().any(|(_, p)| *p < 0.0) {
            return Err(Error::InvalidDistribution {
                context: context.to_string(),
                total,
                tolerance: PROB_TOLERANCE,
            });
        }
        Ok(FiniteDist {
            outcomes: outcomes.into_iter().filter(|(_, p)| *p > 0.0).collect(),
        })
    }

    /// Point mass on a single outcome.
    pub fn point(outcome: T) -> Self {
        FiniteDist {
            outcomes: vec![(outcome, 1.0)],
        }
    }

    pub fn support(&self) -> &[(T, f64)] {
        &self.outcomes
    }

    pub fn iter(&self) -> impl Iterator<Item = &(T, f64)> {
        self.outcomes.iter()
    }

    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }

    /// Sample an outcome index by inverse CDF over the support.
    fn sample_index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.gen::<f64>();
        let mut acc = 0.0;
        for (i, (_, p)) in self.outcomes.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        self.outcomes.len() - 1
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> &T {
        &self.outcomes[self.sample_index(rng)].0
    }

    pub fn map<U, F: FnMut(&T) -> U>(&self, mut f: F) -> FiniteDist<U> {
        FiniteDist {
            outcomes: self.outcomes.iter().map(|(t, p)| (f(t), *p)).collect(),
        }
    }
}

impl<T: PartialEq> FiniteDist<T> {
    /// Probability of a specific outcome (0 if outside the support).
    pub fn prob(&self, outcome: &T) -> f64 {
        self.outcomes
            .iter()
            .filter(|(t, _)| t == outcome)
            .map(|(_, p)| p)
            .sum()
    }
}

impl FiniteDist<usize> {
    /// Uniform distribution over `0..n`.
    pub fn uniform(n: usize) -> Self {
        let p = 1.0 / n as f64;
        FiniteDist {
            outcomes: (0..n).map(|i| (i, p)).collect(),
        }
    }
}

impl FiniteDist<f64> {
    /// Mean of a real-valued distribution.
    pub fn mean(&self) -> f64 {
        self.outcomes.iter().map(|(v, p)| v * p).sum()
    }
}

/// Sample mean and standard error (sample std with n-1 denominator over
/// sqrt n). Requires at least two samples.
pub fn mean_and_stderr(samples: &[f64]) -> (f64, f64) {
    let n = samples.len();
    assert!(n >= 2, "mean_and_stderr needs at least two samples");
    let mean = samples.iter().sum::<f64>() / n as f64;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    (mean, (var / n as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedStream;

    #[test]
    fn rejects_bad_total() {
        let err = FiniteDist::new(vec![(0usize, 0.5), (1, 0.6)], "test").unwrap_err();
        assert!(matches!(err, Error::InvalidDistribution { .. }));
    }

    #[test]
    fn uniform_sums_to_one() {
        let d = FiniteDist::uniform(10);
        let total: f64 = d.iter().map(|(_, p)| p).sum();
        assert!((total - 1.0).abs() <= PROB_TOLERANCE);
    }

    #[test]
    fn sampling_matches_probabilities() {
        let d = FiniteDist::new(vec![(0usize, 0.25), (1, 0.75)], "test").unwrap();
        let mut rng = SeedStream::new(11).rng();
        let n = 100_000;
        let ones = (0..n).filter(|_| *d.sample(&mut rng) == 1).count();
        let freq = ones as f64 / n as f64;
        assert!((freq - 0.75).abs() < 0.01, "freq {freq}");
    }

    #[test]
    fn stderr_basics() {
        let (m, se) = mean_and_stderr(&[1.0, 1.0, 1.0]);
        assert_eq!(m, 1.0);
        assert_eq!(se, 0.0);
        let (m, se) = mean_and_stderr(&[0.0, 2.0]);
        assert_eq!(m, 1.0);
        assert!((se - 1.0).abs() < 1e-12);
    }
}
