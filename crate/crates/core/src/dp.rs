//! Marginal-log-loss dynamic programming over a score lattice.
//!
//! The loss on an utterance with reference labels `L` is
//! `-log Σ_{π: labels(π)=L} exp(score(π)) + log Σ_π exp(score(π))`,
//! both sums over valid segmentations of `[0, T)`. The constrained sum is the
//! numerator, the free sum the denominator; each has a forward and a backward
//! recursion, and combining them gives exact segment posteriors and the loss
//! gradient with respect to every lattice cell. Everything stays in the log
//! domain until posteriors are formed.

use ndarray::{Array2, Array3};

use crate::lattice::{LabelSequence, ScoreLattice, Segment, Segmentation};
use crate::logmath::LogSum;

/// Forward scores for the unconstrained (denominator) sum.
///
/// `alpha[t]` is the log-sum of scores of all segmentations of the first `t`
/// timesteps; `alpha[0] = 0` (the empty product) and `alpha[T]` is the log
/// partition value.
pub fn forward_denominator(w: &ScoreLattice) -> Vec<f64> {
    let t_len = w.num_timesteps();
    let mut alpha = vec![f64::NEG_INFINITY; t_len + 1];
    alpha[0] = 0.0;
    for t in 1..=t_len {
        let mut acc = LogSum::default();
        for s in 1..=w.max_duration().min(t) {
            let prev = alpha[t - s];
            for v in 0..w.vocab_size() {
                acc.push(prev + w.get(t - s, s, v));
            }
        }
        alpha[t] = acc.value();
    }
    alpha
}

/// Backward counterpart of [`forward_denominator`]: `beta[t]` sums over
/// segmentations of `[t, T)`, so `beta[0]` equals `alpha[T]`.
pub fn backward_denominator(w: &ScoreLattice) -> Vec<f64> {
    let t_len = w.num_timesteps();
    let mut beta = vec![f64::NEG_INFINITY; t_len + 1];
    beta[t_len] = 0.0;
    for t in (0..t_len).rev() {
        let mut acc = LogSum::default();
        for s in 1..=w.max_duration().min(t_len - t) {
            let next = beta[t + s];
            for v in 0..w.vocab_size() {
                acc.push(w.get(t, s, v) + next);
            }
        }
        beta[t] = acc.value();
    }
    beta
}

/// Forward scores constrained to the reference labels.
///
/// `alpha[[t, j]]` sums over segmentations of the first `t` timesteps whose
/// label projection is exactly the first `j` reference labels. Unreachable
/// states are `-inf`; `alpha[[T, K]]` is the log numerator.
pub fn forward_numerator(w: &ScoreLattice, labels: &LabelSequence) -> Array2<f64> {
    let t_len = w.num_timesteps();
    let k_len = labels.len();
    let mut alpha = Array2::from_elem((t_len + 1, k_len + 1), f64::NEG_INFINITY);
    alpha[[0, 0]] = 0.0;
    for t in 1..=t_len {
        for j in 1..=k_len.min(t) {
            let v = labels[j - 1];
            let mut acc = LogSum::default();
            for s in 1..=w.max_duration().min(t) {
                let prev = alpha[[t - s, j - 1]];
                if prev > f64::NEG_INFINITY {
                    acc.push(prev + w.get(t - s, s, v));
                }
            }
            alpha[[t, j]] = acc.value();
        }
    }
    alpha
}

/// Backward counterpart of [`forward_numerator`]: `beta[[t, j]]` sums over
/// segmentations of `[t, T)` labeled with the reference suffix starting at
/// label `j`, so `beta[[0, 0]]` equals the log numerator.
pub fn backward_numerator(w: &ScoreLattice, labels: &LabelSequence) -> Array2<f64> {
    let t_len = w.num_timesteps();
    let k_len = labels.len();
    let mut beta = Array2::from_elem((t_len + 1, k_len + 1), f64::NEG_INFINITY);
    beta[[t_len, k_len]] = 0.0;
    for t in (0..t_len).rev() {
        for j in (0..k_len).rev() {
            let v = labels[j];
            let mut acc = LogSum::default();
            for s in 1..=w.max_duration().min(t_len - t) {
                let next = beta[[t + s, j + 1]];
                if next > f64::NEG_INFINITY {
                    acc.push(w.get(t, s, v) + next);
                }
            }
            beta[[t, j]] = acc.value();
        }
    }
    beta
}

/// Loss value together with its two log-domain components.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginalLoss {
    pub loss: f64,
    pub log_numerator: f64,
    pub log_denominator: f64,
    /// True when no segmentation is consistent with the reference labels
    /// (e.g. more labels than timesteps, or too few given the duration cap).
    /// The loss is `+inf` in that case, never NaN.
    pub infeasible: bool,
}

impl MarginalLoss {
    fn from_parts(log_numerator: f64, log_denominator: f64) -> Self {
        let infeasible = log_numerator == f64::NEG_INFINITY;
        MarginalLoss {
            loss: if infeasible {
                f64::INFINITY
            } else {
                log_denominator - log_numerator
            },
            log_numerator,
            log_denominator,
            infeasible,
        }
    }
}

/// All four DP tables for one utterance, plus accessors for the two log sums.
#[derive(Debug, Clone)]
pub struct DPTables {
    pub alpha_den: Vec<f64>,
    pub beta_den: Vec<f64>,
    pub alpha_num: Array2<f64>,
    pub beta_num: Array2<f64>,
}

impl DPTables {
    pub fn compute(w: &ScoreLattice, labels: &LabelSequence) -> Self {
        DPTables {
            alpha_den: forward_denominator(w),
            beta_den: backward_denominator(w),
            alpha_num: forward_numerator(w, labels),
            beta_num: backward_numerator(w, labels),
        }
    }

    pub fn log_denominator(&self) -> f64 {
        *self.alpha_den.last().expect("alpha_den has T+1 entries")
    }

    pub fn log_numerator(&self) -> f64 {
        let (t, k) = self.alpha_num.dim();
        self.alpha_num[[t - 1, k - 1]]
    }

    pub fn loss(&self) -> MarginalLoss {
        MarginalLoss::from_parts(self.log_numerator(), self.log_denominator())
    }

    /// Fixed-format text rendering of all four tables, for eyeballing small
    /// examples and golden tests.
    pub fn to_text(&self) -> String {
        use std::fmt::Write;
        let fmt_val = |x: f64| {
            if x == f64::NEG_INFINITY {
                "-inf".to_string()
            } else {
                format!("{x:.6}")
            }
        };
        let fmt_row = |row: &[f64]| {
            row.iter()
                .map(|&x| fmt_val(x))
                .collect::<Vec<_>>()
                .join(" ")
        };
        let mut out = String::new();
        writeln!(out, "alpha_den: {}", fmt_row(&self.alpha_den)).unwrap();
        writeln!(out, "beta_den:  {}", fmt_row(&self.beta_den)).unwrap();
        for (t, row) in self.alpha_num.outer_iter().enumerate() {
            writeln!(out, "alpha_num[{t}]: {}", fmt_row(row.as_slice().unwrap())).unwrap();
        }
        for (t, row) in self.beta_num.outer_iter().enumerate() {
            writeln!(out, "beta_num[{t}]:  {}", fmt_row(row.as_slice().unwrap())).unwrap();
        }
        out
    }
}

/// Marginal log loss from the two forward recursions only.
pub fn marginal_log_loss(w: &ScoreLattice, labels: &LabelSequence) -> MarginalLoss {
    let log_den = *forward_denominator(w).last().unwrap();
    let alpha_num = forward_numerator(w, labels);
    let (t, k) = alpha_num.dim();
    MarginalLoss::from_parts(alpha_num[[t - 1, k - 1]], log_den)
}

/// Exact segment posterior marginals under the two distributions.
///
/// `denominator[[t, s-1, v]]` is the probability that segment `(t, s, v)`
/// appears in a path drawn from the unconstrained distribution; `numerator`
/// is the same under the label-constrained distribution. Both arrays share
/// the lattice shape, with zeros at invalid cells.
#[derive(Debug, Clone)]
pub struct Posteriors {
    pub denominator: Array3<f64>,
    pub numerator: Array3<f64>,
}

pub fn segment_posteriors(
    w: &ScoreLattice,
    labels: &LabelSequence,
) -> (MarginalLoss, Posteriors) {
    let tables = DPTables::compute(w, labels);
    let loss = tables.loss();
    let shape = (w.num_timesteps(), w.max_duration(), w.vocab_size());
    let mut den = Array3::zeros(shape);
    let mut num = Array3::zeros(shape);
    accumulate_posteriors(w, labels, &tables, &mut den, 1.0, &mut num, 1.0);
    (loss, Posteriors {
        denominator: den,
        numerator: num,
    })
}

/// Loss and its gradient with respect to every lattice cell:
/// denominator posterior minus numerator posterior, so every entry lies in
/// `[-1, 1]` and the gradient vanishes exactly when the two distributions
/// place identical marginals on every segment.
///
/// For an infeasible reference the gradient is all zeros and the loss carries
/// the flag; callers skip such utterances.
pub fn loss_and_gradient(
    w: &ScoreLattice,
    labels: &LabelSequence,
) -> (MarginalLoss, Array3<f64>) {
    let tables = DPTables::compute(w, labels);
    let loss = tables.loss();
    let shape = (w.num_timesteps(), w.max_duration(), w.vocab_size());
    let mut grad = Array3::zeros(shape);
    if loss.infeasible {
        return (loss, grad);
    }
    let mut unused = Array3::zeros((0, 0, 0));
    accumulate_posteriors(w, labels, &tables, &mut grad, 1.0, &mut unused, 0.0);
    accumulate_posteriors(w, labels, &tables, &mut unused, 0.0, &mut grad, -1.0);
    (loss, grad)
}

/// Add `den_scale` times the denominator posterior into `den_out` and
/// `num_scale` times the numerator posterior into `num_out` (a scale of zero
/// skips that side entirely, letting the gradient reuse one buffer).
fn accumulate_posteriors(
    w: &ScoreLattice,
    labels: &LabelSequence,
    tables: &DPTables,
    den_out: &mut Array3<f64>,
    den_scale: f64,
    num_out: &mut Array3<f64>,
    num_scale: f64,
) {
    let t_len = w.num_timesteps();
    let log_den = tables.log_denominator();
    if den_scale != 0.0 && log_den > f64::NEG_INFINITY {
        for t in 0..t_len {
            let a = tables.alpha_den[t];
            for s in 1..=w.max_duration().min(t_len - t) {
                let b = tables.beta_den[t + s];
                for v in 0..w.vocab_size() {
                    let p = (a + w.get(t, s, v) + b - log_den).exp();
                    den_out[[t, s - 1, v]] += den_scale * p;
                }
            }
        }
    }
    let log_num = tables.log_numerator();
    if num_scale != 0.0 && log_num > f64::NEG_INFINITY {
        for t in 0..t_len {
            for j in 0..labels.len() {
                let a = tables.alpha_num[[t, j]];
                if a == f64::NEG_INFINITY {
                    continue;
                }
                let v = labels[j];
                for s in 1..=w.max_duration().min(t_len - t) {
                    let b = tables.beta_num[[t + s, j + 1]];
                    if b == f64::NEG_INFINITY {
                        continue;
                    }
                    let p = (a + w.get(t, s, v) + b - log_num).exp();
                    num_out[[t, s - 1, v]] += num_scale * p;
                }
            }
        }
    }
}

/// Sanity numbers for the posterior identities on one utterance: the
/// numerator posterior mass equals the label count (every constrained path
/// has exactly `|L|` segments), the denominator mass is the expected segment
/// count, and no gradient entry leaves `[-1, 1]`.
#[derive(Debug, Clone, Copy)]
pub struct PosteriorCheck {
    pub numerator_mass: f64,
    pub denominator_mass: f64,
    pub label_count: usize,
    pub max_abs_gradient: f64,
}

pub fn posterior_check(w: &ScoreLattice, labels: &LabelSequence) -> PosteriorCheck {
    let (_, posteriors) = segment_posteriors(w, labels);
    let grad_extremum = posteriors
        .denominator
        .iter()
        .zip(posteriors.numerator.iter())
        .map(|(d, n)| (d - n).abs())
        .fold(0.0f64, f64::max);
    PosteriorCheck {
        numerator_mass: posteriors.numerator.sum(),
        denominator_mass: posteriors.denominator.sum(),
        label_count: labels.len(),
        max_abs_gradient: grad_extremum,
    }
}

/// Best path and its score.
#[derive(Debug, Clone, PartialEq)]
pub struct ViterbiResult {
    pub path: Segmentation,
    pub score: f64,
}

/// Max-score segmentation with a deterministic tie rule: on equal score,
/// prefer the larger duration, then the smaller label, applied from the last
/// segment backwards (the natural order for the backtrace).
pub fn viterbi(w: &ScoreLattice) -> ViterbiResult {
    let t_len = w.num_timesteps();
    assert!(
        w.vocab_size() >= 1 || t_len == 0,
        "cannot decode a non-empty input over an empty vocabulary"
    );
    let mut delta = vec![f64::NEG_INFINITY; t_len + 1];
    let mut back = vec![(0usize, 0usize); t_len + 1];
    delta[0] = 0.0;
    for t in 1..=t_len {
        let mut best = f64::NEG_INFINITY;
        let mut best_sv = (0usize, 0usize);
        for s in 1..=w.max_duration().min(t) {
            for v in 0..w.vocab_size() {
                let score = delta[t - s] + w.get(t - s, s, v);
                let wins = score > best
                    || (score == best
                        && (s > best_sv.0 || (s == best_sv.0 && v < best_sv.1)));
                if wins {
                    best = score;
                    best_sv = (s, v);
                }
            }
        }
        assert!(
            best_sv.0 >= 1,
            "no admissible segment ends at frame {t} (non-finite scores?)"
        );
        delta[t] = best;
        back[t] = best_sv;
    }
    let mut segments = Vec::new();
    let mut t = t_len;
    while t > 0 {
        let (s, v) = back[t];
        segments.push(Segment::new(t - s, s, v));
        t -= s;
    }
    segments.reverse();
    ViterbiResult {
        path: Segmentation::new(segments),
        score: delta[t_len],
    }
}
