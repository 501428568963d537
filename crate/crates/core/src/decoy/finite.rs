//! Entropy and finite-size fluctuation helpers.

use crate::error::{check_range, Result};

/// Binary Shannon entropy in bits, with `H(0) = H(1) = 0`.
pub fn binary_entropy(p: f64) -> Result<f64> {
    check_range("p", p, 0.0, 1.0)?;
    Ok(binary_entropy_unchecked(p))
}

pub(crate) fn binary_entropy_unchecked(p: f64) -> f64 {
    if p <= 0.0 || p >= 1.0 {
        return 0.0;
    }
    -p * p.log2() - (1.0 - p) * (1.0 - p).log2()
}

/// Confidence interval on the expectation of an observed count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CountInterval {
    pub lower: f64,
    pub upper: f64,
}

impl CountInterval {
    pub fn contains(&self, v: f64) -> bool {
        self.lower <= v && v <= self.upper
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            lower: self.lower * factor,
            upper: self.upper * factor,
        }
    }
}

/// Multiplicative Chernoff interval for the mean of a count `k`.
///
/// With `β = ln(1/ε)`: `upper = k + β + √(2βk + β²)` and
/// `lower = max(0, k − √(2βk))`. Each side fails with probability at most ε.
pub fn chernoff_interval(k: f64, epsilon: f64) -> Result<CountInterval> {
    check_range("k", k, 0.0, f64::MAX)?;
    check_range("epsilon", epsilon, f64::MIN_POSITIVE, 1.0)?;
    if epsilon >= 1.0 {
        return Err(crate::Error::domain("epsilon", "must be < 1"));
    }
    let beta = (1.0 / epsilon).ln();
    Ok(CountInterval {
        lower: (k - (2.0 * beta * k).sqrt()).max(0.0),
        upper: k + beta + (2.0 * beta * k + beta * beta).sqrt(),
    })
}
