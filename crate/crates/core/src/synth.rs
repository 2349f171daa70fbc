//! Synthetic whole-word data: a compositional task built from per-character
//! prototype frames, with duration jitter, additive noise, and a Zipf-like
//! label distribution. Every generated utterance carries its ground-truth
//! segmentation, and a closed-form oracle scorer exists for the noiseless
//! case, which makes decoding and training behavior checkable end to end.

use ndarray::{Array1, Array2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::lattice::{LabelSequence, Segment, Segmentation, Vocabulary};
use crate::pretrain::WordPair;
use crate::scorer::{AcousticParams, FrameFeatures, Pooling, SegmentScorerParams};

const WORD_CHARS: &[char] = &['a', 'b', 'c', 'd', 'e', 'f', 'g', 'h', 'i', 'j', 'k', 'l', 'm'];
const MIN_WORD_CHARS: usize = 2;
const MAX_WORD_CHARS: usize = 5;

/// One generated utterance with its ground truth.
#[derive(Debug, Clone)]
pub struct Utterance {
    pub id: String,
    pub frames: FrameFeatures,
    pub labels: LabelSequence,
    pub segmentation: Segmentation,
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub utterances: Vec<Utterance>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    /// Training-set occurrence count per label.
    pub fn label_counts(&self, vocab_size: usize) -> Vec<usize> {
        let mut counts = vec![0usize; vocab_size];
        for utt in &self.utterances {
            for &v in utt.labels.as_slice() {
                counts[v] += 1;
            }
        }
        counts
    }

    /// Longest frame sequence in the set.
    pub fn max_frames(&self) -> usize {
        self.utterances
            .iter()
            .map(|u| u.frames.num_frames())
            .max()
            .unwrap_or(0)
    }
}

/// A desk-scale stand-in for a speech corpus. Words are character strings;
/// each character owns a prototype frame vector with positive entries, and a
/// word's template repeats each character's prototype a fixed number of
/// times. Distinct words are kept acoustically distinguishable: no two words
/// share a normalized character histogram, so template means never collide.
#[derive(Debug, Clone)]
pub struct SyntheticTask {
    pub vocab: Vocabulary,
    /// Per-character prototype frames (one row per alphabet slot).
    pub prototypes: Array2<f64>,
    /// Frames per character in a clean template.
    pub frames_per_char: usize,
    /// Standard deviation of additive Gaussian noise.
    pub noise: f64,
    /// Relative duration jitter: word lengths scale by U[1−j, 1+j].
    pub duration_jitter: f64,
    /// Words per utterance, uniform over this inclusive range.
    pub words_per_utterance: (usize, usize),
    /// Zipf-like sampling: weight of rank r is (r+1)^(−exponent).
    pub zipf_exponent: f64,
}

impl SyntheticTask {
    /// Build a task with `vocab_size` random words over `frame_dim`-dim frames.
    pub fn new(vocab_size: usize, frame_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let words = sample_distinguishable_words(vocab_size, &mut rng);
        let vocab = Vocabulary::new(words).expect("generated words are valid and distinct");
        let prototypes = Array2::from_shape_fn((vocab.alphabet().table_size(), frame_dim), |_| {
            rng.random_range(0.2..1.2)
        });
        SyntheticTask {
            vocab,
            prototypes,
            frames_per_char: 2,
            noise: 0.05,
            duration_jitter: 0.2,
            words_per_utterance: (2, 5),
            zipf_exponent: 1.0,
        }
    }

    pub fn frame_dim(&self) -> usize {
        self.prototypes.ncols()
    }

    /// Clean (noiseless, unjittered) template of a word.
    pub fn template(&self, v: usize) -> Array2<f64> {
        let seq = self.vocab.char_seq(v);
        let mut t = Array2::zeros((seq.len() * self.frames_per_char, self.frame_dim()));
        for (i, &c) in seq.iter().enumerate() {
            for k in 0..self.frames_per_char {
                t.row_mut(i * self.frames_per_char + k)
                    .assign(&self.prototypes.row(c));
            }
        }
        t
    }

    /// Mean frame of a word's clean template.
    pub fn template_mean(&self, v: usize) -> Array1<f64> {
        let t = self.template(v);
        let n = t.nrows() as f64;
        t.sum_axis(ndarray::Axis(0)) / n
    }

    /// Longest clean template, the natural lower bound for max segment size.
    pub fn max_template_len(&self) -> usize {
        (0..self.vocab.size())
            .map(|v| self.vocab.char_seq(v).len() * self.frames_per_char)
            .max()
            .unwrap_or(0)
    }

    fn sample_label<R: Rng>(&self, rng: &mut R) -> usize {
        let weights: Vec<f64> = (0..self.vocab.size())
            .map(|r| ((r + 1) as f64).powf(-self.zipf_exponent))
            .collect();
        let total: f64 = weights.iter().sum();
        let mut u = rng.random_range(0.0..total);
        for (v, w) in weights.iter().enumerate() {
            u -= w;
            if u < 0.0 {
                return v;
            }
        }
        self.vocab.size() - 1
    }

    /// Render one word token: jittered duration, nearest-neighbor resampled
    /// template rows, additive noise.
    fn render_word<R: Rng>(&self, v: usize, rng: &mut R) -> Array2<f64> {
        let template = self.template(v);
        let t_w = template.nrows();
        let scale = if self.duration_jitter > 0.0 {
            rng.random_range(1.0 - self.duration_jitter..1.0 + self.duration_jitter)
        } else {
            1.0
        };
        let s = ((t_w as f64 * scale).round() as usize).max(1);
        let mut out = Array2::zeros((s, self.frame_dim()));
        for i in 0..s {
            let src = (((i as f64 + 0.5) * t_w as f64 / s as f64) as usize).min(t_w - 1);
            out.row_mut(i).assign(&template.row(src));
        }
        if self.noise > 0.0 {
            let normal = Normal::new(0.0, self.noise).unwrap();
            out.mapv_inplace(|x| x + normal.sample(rng));
        }
        out
    }

    fn render_utterance<R: Rng>(&self, id: String, rng: &mut R) -> Utterance {
        let (lo, hi) = self.words_per_utterance;
        let n_words = rng.random_range(lo..=hi);
        let labels: Vec<usize> = (0..n_words).map(|_| self.sample_label(rng)).collect();
        let mut rows: Vec<Array2<f64>> = Vec::with_capacity(n_words);
        let mut segments = Vec::with_capacity(n_words);
        let mut start = 0usize;
        for &v in &labels {
            let word = self.render_word(v, rng);
            segments.push(Segment::new(start, word.nrows(), v));
            start += word.nrows();
            rows.push(word);
        }
        let mut frames = Array2::zeros((start, self.frame_dim()));
        let mut at = 0usize;
        for block in rows {
            frames
                .slice_mut(ndarray::s![at..at + block.nrows(), ..])
                .assign(&block);
            at += block.nrows();
        }
        let segmentation = Segmentation::new(segments);
        debug_assert!(segmentation
            .validate(start, self.vocab.size())
            .is_ok());
        Utterance {
            id,
            frames: FrameFeatures::new(frames),
            labels: LabelSequence::new(labels),
            segmentation,
        }
    }

    /// Generate `n` utterances; a fixed seed reproduces the dataset exactly.
    pub fn generate(&self, n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let utterances = (0..n)
            .map(|i| self.render_utterance(format!("utt-{i:05}"), &mut rng))
            .collect();
        Dataset { utterances }
    }

    /// Isolated word tokens for embedding pre-training.
    pub fn word_pairs(&self, n: usize, seed: u64) -> Vec<WordPair> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let v = self.sample_label(&mut rng);
                WordPair {
                    frames: FrameFeatures::new(self.render_word(v, &mut rng)),
                    label: v,
                }
            })
            .collect()
    }

    /// Closed-form scorer that decodes noiseless single-word utterances
    /// exactly: mean pooling with an identity first layer, and per-word
    /// output rows scoring a span mean m as |m|² − |m − μ_v|² − c. The
    /// constant c = 6·F makes every extra segment strictly unprofitable
    /// (span means of positive sub-1.2 frames keep |m|² ≤ 1.44·F).
    pub fn oracle_scorer(&self) -> SegmentScorerParams {
        let f = self.frame_dim();
        let acoustic = AcousticParams {
            pooling: Pooling::Mean,
            a1: Array2::eye(f),
            b1: Array1::zeros(f),
            attention: None,
        };
        acoustic.check_shapes();
        let v_size = self.vocab.size();
        let mut a2 = Array2::zeros((v_size, f));
        let mut b2 = Array1::zeros(v_size);
        let c = 6.0 * f as f64;
        for v in 0..v_size {
            let mu = self.template_mean(v);
            a2.row_mut(v).assign(&(&mu * 2.0));
            b2[v] = -mu.dot(&mu) - c;
        }
        SegmentScorerParams { acoustic, a2, b2 }
    }
}

/// Random words whose normalized character histograms are pairwise distinct,
/// so that mean-pooled clean templates never coincide (anagrams and
/// repetitions like "ab"/"ba" or "aa"/"a" are rejected).
fn sample_distinguishable_words<R: Rng>(count: usize, rng: &mut R) -> Vec<String> {
    // Histogram keys scaled by lcm(2..=5) = 60 so they stay integral.
    let mut seen = std::collections::HashSet::new();
    let mut words = Vec::with_capacity(count);
    let mut attempts = 0usize;
    while words.len() < count {
        attempts += 1;
        assert!(
            attempts < 100_000,
            "vocabulary of {count} distinguishable words not reachable"
        );
        let len = rng.random_range(MIN_WORD_CHARS..=MAX_WORD_CHARS);
        let word: String = (0..len)
            .map(|_| WORD_CHARS[rng.random_range(0..WORD_CHARS.len())])
            .collect();
        let mut hist = [0usize; 26];
        for b in word.bytes() {
            hist[(b - b'a') as usize] += 60 / len;
        }
        if seen.insert(hist) {
            words.push(word);
        }
    }
    words
}
