//! Log-domain arithmetic helpers for the dynamic-programming recursions.
//!
//! All recursions accumulate path weights as log values; summing alternatives
//! is `log(exp(a) + exp(b))` computed with a max shift so that weights of
//! magnitude far beyond `f64::MAX.ln()` stay finite.

/// `log(exp(a) + exp(b))`, stable for any finite or `-inf` inputs.
#[inline]
pub fn logsumexp2(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    if a >= b {
        a + (b - a).exp().ln_1p()
    } else {
        b + (a - b).exp().ln_1p()
    }
}

/// Streaming log-sum accumulator.
///
/// Keeps a running maximum and the sum of `exp(x - max)`. `push` folds in one
/// value; `merge` combines two accumulators, so a reduction over any tree of
/// sub-ranges produces the same total. The per-step reductions in the forward
/// and backward passes are phrased through this type so they stay associative
/// and could be evaluated in parallel chunks.
#[derive(Debug, Clone, Copy)]
pub struct LogSum {
    max: f64,
    sum: f64,
}

impl LogSum {
    /// The empty sum, `log(0)`.
    #[inline]
    pub fn new() -> Self {
        LogSum {
            max: f64::NEG_INFINITY,
            sum: 0.0,
        }
    }

    /// Fold one log-domain term into the sum.
    #[inline]
    pub fn push(&mut self, x: f64) {
        if x == f64::NEG_INFINITY {
            return;
        }
        if x <= self.max {
            self.sum += (x - self.max).exp();
        } else {
            self.sum = self.sum * (self.max - x).exp() + 1.0;
            self.max = x;
        }
    }

    /// Combine with another partial sum (associative, commutative).
    #[inline]
    pub fn merge(&mut self, other: LogSum) {
        if other.max == f64::NEG_INFINITY {
            return;
        }
        if other.max <= self.max {
            self.sum += other.sum * (other.max - self.max).exp();
        } else {
            self.sum = self.sum * (self.max - other.max).exp() + other.sum;
            self.max = other.max;
        }
    }

    /// The accumulated value, `log(sum of exp(terms))`.
    #[inline]
    pub fn value(&self) -> f64 {
        if self.max == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            self.max + self.sum.ln()
        }
    }
}

impl Default for LogSum {
    fn default() -> Self {
        Self::new()
    }
}

/// Log-sum-exp over a slice (two-pass, max-shifted).
pub fn logsumexp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = values.iter().map(|&v| (v - max).exp()).sum();
    max + sum.ln()
}
