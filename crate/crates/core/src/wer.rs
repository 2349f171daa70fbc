//! Word-level edit distance: WER with a full backtraced alignment, and the
//! substitution-rate-by-training-frequency breakdown built on top of it.

/// One alignment column. Labels are word indices; `None` marks the side an
/// insertion or deletion leaves empty.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EditOp {
    Match,
    Substitute,
    Insert,
    Delete,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AlignedPair {
    pub op: EditOp,
    pub hyp: Option<usize>,
    pub reference: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WerAlignment {
    pub rate: f64,
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
    pub ops: Vec<AlignedPair>,
}

impl WerAlignment {
    pub fn errors(&self) -> usize {
        self.substitutions + self.insertions + self.deletions
    }
}

/// Levenshtein alignment at the word level; rate = (S+I+D)/|reference|.
/// Returns `None` for an empty reference, where the rate is undefined.
/// Cost ties prefer the diagonal (match/substitute), then deletion.
pub fn wer(hyp: &[usize], reference: &[usize]) -> Option<WerAlignment> {
    if reference.is_empty() {
        return None;
    }
    let (n, m) = (hyp.len(), reference.len());
    let mut cost = vec![vec![0usize; m + 1]; n + 1];
    for (j, c) in cost[0].iter_mut().enumerate() {
        *c = j;
    }
    for i in 1..=n {
        cost[i][0] = i;
        for j in 1..=m {
            let diag = cost[i - 1][j - 1] + usize::from(hyp[i - 1] != reference[j - 1]);
            let del = cost[i - 1][j] + 1; // hyp word unmatched: insertion into hyp
            let ins = cost[i][j - 1] + 1; // reference word unmatched: deletion
            cost[i][j] = diag.min(del).min(ins);
        }
    }
    let mut ops = Vec::with_capacity(n.max(m));
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 {
            let diag = cost[i - 1][j - 1] + usize::from(hyp[i - 1] != reference[j - 1]);
            if cost[i][j] == diag {
                let op = if hyp[i - 1] == reference[j - 1] {
                    EditOp::Match
                } else {
                    EditOp::Substitute
                };
                ops.push(AlignedPair {
                    op,
                    hyp: Some(hyp[i - 1]),
                    reference: Some(reference[j - 1]),
                });
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && cost[i][j] == cost[i - 1][j] + 1 {
            ops.push(AlignedPair {
                op: EditOp::Insert,
                hyp: Some(hyp[i - 1]),
                reference: None,
            });
            i -= 1;
        } else {
            ops.push(AlignedPair {
                op: EditOp::Delete,
                hyp: None,
                reference: Some(reference[j - 1]),
            });
            j -= 1;
        }
    }
    ops.reverse();
    let substitutions = ops.iter().filter(|p| p.op == EditOp::Substitute).count();
    let insertions = ops.iter().filter(|p| p.op == EditOp::Insert).count();
    let deletions = ops.iter().filter(|p| p.op == EditOp::Delete).count();
    Some(WerAlignment {
        rate: (substitutions + insertions + deletions) as f64 / m as f64,
        substitutions,
        insertions,
        deletions,
        ops,
    })
}

/// Aggregate WER over a corpus: total errors over total reference words.
pub fn corpus_wer(alignments: &[WerAlignment], reference_words: usize) -> f64 {
    if reference_words == 0 {
        return 0.0;
    }
    let errors: usize = alignments.iter().map(|a| a.errors()).sum();
    errors as f64 / reference_words as f64
}

/// One histogram bin: reference words whose training-set count lies in
/// `lo..=hi`, with the fraction of them that were substituted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrequencyBucket {
    pub lo: usize,
    pub hi: usize,
    pub substitutions: usize,
    pub reference_tokens: usize,
}

impl FrequencyBucket {
    pub fn rate(&self) -> f64 {
        if self.reference_tokens == 0 {
            0.0
        } else {
            self.substitutions as f64 / self.reference_tokens as f64
        }
    }
}

pub const DEFAULT_FREQUENCY_BUCKETS: [(usize, usize); 5] =
    [(0, 0), (1, 2), (3, 9), (10, 99), (100, usize::MAX)];

/// Substitution rate bucketed by how often each reference word appeared in
/// training. Insertions have no reference word and are ignored; deletions
/// count toward the denominator but not the substitution numerator.
pub fn per_frequency_substitutions(
    alignments: &[WerAlignment],
    train_counts: &[usize],
    buckets: &[(usize, usize)],
) -> Vec<FrequencyBucket> {
    let mut out: Vec<FrequencyBucket> = buckets
        .iter()
        .map(|&(lo, hi)| FrequencyBucket { lo, hi, substitutions: 0, reference_tokens: 0 })
        .collect();
    for alignment in alignments {
        for pair in &alignment.ops {
            let Some(v) = pair.reference else { continue };
            let count = train_counts.get(v).copied().unwrap_or(0);
            for bucket in &mut out {
                if count >= bucket.lo && count <= bucket.hi {
                    bucket.reference_tokens += 1;
                    if pair.op == EditOp::Substitute {
                        bucket.substitutions += 1;
                    }
                    break;
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    // Textbook recursion, exponential but exact for tiny sequences.
    fn edit_distance_oracle(hyp: &[usize], reference: &[usize]) -> usize {
        match (hyp.split_last(), reference.split_last()) {
            (None, None) => 0,
            (None, Some((_, rest))) => 1 + edit_distance_oracle(hyp, rest),
            (Some((_, rest)), None) => 1 + edit_distance_oracle(rest, reference),
            (Some((h, hr)), Some((r, rr))) => {
                let diag = edit_distance_oracle(hr, rr) + usize::from(h != r);
                diag.min(edit_distance_oracle(hr, reference) + 1)
                    .min(edit_distance_oracle(hyp, rr) + 1)
            }
        }
    }

    #[test]
    fn identical_sequences_have_zero_error() {
        let a = wer(&[3, 1, 4], &[3, 1, 4]).unwrap();
        assert_eq!(a.rate, 0.0);
        assert_eq!(a.errors(), 0);
        assert!(a.ops.iter().all(|p| p.op == EditOp::Match));
    }

    #[test]
    fn single_deletion_case() {
        let a = wer(&[0], &[0, 1]).unwrap();
        assert_eq!((a.substitutions, a.insertions, a.deletions), (0, 0, 1));
        assert_eq!(a.rate, 0.5);
    }

    #[test]
    fn substitution_plus_insertion_case() {
        // hyp = [x, b, c] vs ref = [a, b]: substitute a->x, match b, insert c.
        let a = wer(&[9, 1, 2], &[0, 1]).unwrap();
        assert_eq!((a.substitutions, a.insertions, a.deletions), (1, 1, 0));
        assert_eq!(a.rate, 1.0);
    }

    #[test]
    fn empty_reference_is_undefined() {
        assert!(wer(&[1, 2], &[]).is_none());
        assert!(wer(&[], &[]).is_none());
    }

    #[test]
    fn empty_hypothesis_is_all_deletions() {
        let a = wer(&[], &[5, 6, 7]).unwrap();
        assert_eq!(a.deletions, 3);
        assert_eq!(a.rate, 1.0);
    }

    #[test]
    fn error_count_matches_recursive_oracle_on_random_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(0x3d17);
        for _ in 0..60 {
            let n = rng.random_range(0..7);
            let m = rng.random_range(1..7);
            let hyp: Vec<usize> = (0..n).map(|_| rng.random_range(0..4)).collect();
            let reference: Vec<usize> = (0..m).map(|_| rng.random_range(0..4)).collect();
            let a = wer(&hyp, &reference).unwrap();
            assert_eq!(
                a.errors(),
                edit_distance_oracle(&hyp, &reference),
                "hyp {hyp:?} ref {reference:?}"
            );
        }
    }

    #[test]
    fn alignment_replays_both_sequences_in_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(0xa119);
        for _ in 0..40 {
            let n = rng.random_range(0..8);
            let m = rng.random_range(1..8);
            let hyp: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
            let reference: Vec<usize> = (0..m).map(|_| rng.random_range(0..3)).collect();
            let a = wer(&hyp, &reference).unwrap();
            let replay_hyp: Vec<usize> = a.ops.iter().filter_map(|p| p.hyp).collect();
            let replay_ref: Vec<usize> = a.ops.iter().filter_map(|p| p.reference).collect();
            assert_eq!(replay_hyp, hyp);
            assert_eq!(replay_ref, reference);
        }
    }

    #[test]
    fn frequency_histogram_is_zero_without_errors() {
        let alignments = vec![wer(&[0, 1, 2], &[0, 1, 2]).unwrap()];
        let counts = vec![50, 50, 50];
        let buckets = per_frequency_substitutions(
            &alignments,
            &counts,
            &DEFAULT_FREQUENCY_BUCKETS,
        );
        assert!(buckets.iter().all(|b| b.substitutions == 0));
        // All tokens land in the 10..=99 bucket.
        assert_eq!(buckets[3].reference_tokens, 3);
        assert_eq!(buckets[3].rate(), 0.0);
    }

    #[test]
    fn planted_rare_word_errors_show_up_only_in_the_rare_bucket() {
        // Word 0 frequent (count 200), word 1 rare (count 2). Substitute only
        // the rare one.
        let alignments = vec![
            wer(&[0, 9], &[0, 1]).unwrap(),
            wer(&[0, 9], &[0, 1]).unwrap(),
            wer(&[0, 1], &[0, 1]).unwrap(),
        ];
        let counts = vec![200, 2];
        let buckets = per_frequency_substitutions(
            &alignments,
            &counts,
            &DEFAULT_FREQUENCY_BUCKETS,
        );
        // Bucket (1,2) holds the rare word: 2 substitutions over 3 tokens.
        assert_eq!(buckets[1].substitutions, 2);
        assert_eq!(buckets[1].reference_tokens, 3);
        assert!((buckets[1].rate() - 2.0 / 3.0).abs() < 1e-15);
        // Frequent bucket saw tokens but no substitutions.
        assert_eq!(buckets[4].substitutions, 0);
        assert_eq!(buckets[4].reference_tokens, 3);
        // Untouched buckets stay empty.
        assert_eq!(buckets[0].reference_tokens, 0);
        assert_eq!(buckets[2].reference_tokens, 0);
    }
}
