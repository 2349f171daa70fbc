//! Core domain types: segmentations, label sequences, vocabularies, and the
//! score lattice the dynamic programming runs over.
//!
//! Also hosts the exhaustive path enumerator used as a brute-force reference
//! for every DP result at desk scale.

use std::collections::HashMap;
use std::fmt;

use ndarray::Array3;
use thiserror::Error;

/// Hard caps for exhaustive enumeration; beyond these the path count explodes.
pub const ENUM_MAX_T: usize = 12;
pub const ENUM_MAX_S: usize = 6;
pub const ENUM_MAX_V: usize = 6;

/// One scored span: `duration` timesteps starting at timestep `start`,
/// hypothesizing word `label`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Segment {
    pub start: usize,
    pub duration: usize,
    pub label: usize,
}

impl Segment {
    pub fn new(start: usize, duration: usize, label: usize) -> Self {
        Segment {
            start,
            duration,
            label,
        }
    }

    /// Exclusive end timestep, `start + duration`.
    #[inline]
    pub fn end(&self) -> usize {
        self.start + self.duration
    }
}

/// A contiguous tiling of `[0, T)` into labeled segments.
///
/// Valid segmentations start at 0, have strictly positive durations, abut
/// exactly (the end of each segment is the start of the next), and end at the
/// total sequence length. `validate` checks all of that.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Segmentation {
    segments: Vec<Segment>,
}

/// First violated segmentation constraint, reported by [`Segmentation::validate`].
#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum SegmentationViolation {
    #[error("first segment starts at {0}, expected 0")]
    FirstStart(usize),
    #[error("segment {index} has zero duration")]
    ZeroDuration { index: usize },
    #[error("segment {next} starts at {found} but the previous segment ends at {expected}")]
    Discontiguous {
        next: usize,
        expected: usize,
        found: usize,
    },
    #[error("last segment ends at {found}, expected total length {expected}")]
    EndMismatch { expected: usize, found: usize },
    #[error("segment {index} label {label} out of range for vocabulary size {vocab}")]
    LabelRange {
        index: usize,
        label: usize,
        vocab: usize,
    },
}

impl Segmentation {
    pub fn new(segments: Vec<Segment>) -> Self {
        Segmentation { segments }
    }

    /// Build from `(start, duration, label)` triples.
    pub fn from_tuples(tuples: &[(usize, usize, usize)]) -> Self {
        Segmentation {
            segments: tuples
                .iter()
                .map(|&(t, s, l)| Segment::new(t, s, l))
                .collect(),
        }
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// Total timesteps covered, assuming contiguity (`t_K + s_K`).
    pub fn span(&self) -> usize {
        self.segments.last().map_or(0, Segment::end)
    }

    /// Check every invariant against a total length and vocabulary size,
    /// reporting the first violation in segment order.
    pub fn validate(
        &self,
        total_len: usize,
        vocab_size: usize,
    ) -> Result<(), SegmentationViolation> {
        if self.segments.is_empty() {
            if total_len == 0 {
                return Ok(());
            }
            return Err(SegmentationViolation::EndMismatch {
                expected: total_len,
                found: 0,
            });
        }
        if self.segments[0].start != 0 {
            return Err(SegmentationViolation::FirstStart(self.segments[0].start));
        }
        let mut cursor = 0usize;
        for (index, seg) in self.segments.iter().enumerate() {
            if seg.start != cursor {
                return Err(SegmentationViolation::Discontiguous {
                    next: index,
                    expected: cursor,
                    found: seg.start,
                });
            }
            if seg.duration == 0 {
                return Err(SegmentationViolation::ZeroDuration { index });
            }
            if seg.label >= vocab_size {
                return Err(SegmentationViolation::LabelRange {
                    index,
                    label: seg.label,
                    vocab: vocab_size,
                });
            }
            cursor = seg.end();
        }
        if cursor != total_len {
            return Err(SegmentationViolation::EndMismatch {
                expected: total_len,
                found: cursor,
            });
        }
        Ok(())
    }

    /// Project onto the label sequence, checking the length-independent
    /// structural invariants first (start at 0, positive durations, abutting).
    pub fn label_map(&self) -> Result<LabelSequence, SegmentationViolation> {
        // Total length equal to the own span always passes the end check, so
        // this validates exactly the T-independent constraints.
        self.validate(self.span(), usize::MAX)?;
        Ok(self.labels_unchecked())
    }

    /// Label projection without validity checks.
    pub fn labels_unchecked(&self) -> LabelSequence {
        LabelSequence::new(self.segments.iter().map(|s| s.label).collect())
    }

    /// Render in the plain-text exchange format: `t:s:label` triples separated
    /// by single spaces, empty string for the empty path.
    pub fn to_text(&self) -> String {
        self.segments
            .iter()
            .map(|s| format!("{}:{}:{}", s.start, s.duration, s.label))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Parse the `t:s:label` text format produced by [`Segmentation::to_text`].
    pub fn parse_text(line: &str) -> Result<Self, LatticeError> {
        let mut segments = Vec::new();
        for token in line.split_whitespace() {
            let mut parts = token.splitn(3, ':');
            let mut field = |name: &str| {
                parts
                    .next()
                    .ok_or_else(|| {
                        LatticeError::Parse(format!("segment `{token}` is missing its {name}"))
                    })?
                    .parse::<usize>()
                    .map_err(|_| {
                        LatticeError::Parse(format!("segment `{token}` has a non-numeric {name}"))
                    })
            };
            let start = field("start")?;
            let duration = field("duration")?;
            let label = field("label")?;
            segments.push(Segment::new(start, duration, label));
        }
        Ok(Segmentation::new(segments))
    }
}

impl fmt::Display for Segmentation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

/// Ordered word indices of an utterance.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LabelSequence(Vec<usize>);

impl LabelSequence {
    pub fn new(labels: Vec<usize>) -> Self {
        LabelSequence(labels)
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }
}

impl std::ops::Deref for LabelSequence {
    type Target = [usize];

    fn deref(&self) -> &[usize] {
        &self.0
    }
}

impl From<Vec<usize>> for LabelSequence {
    fn from(labels: Vec<usize>) -> Self {
        LabelSequence(labels)
    }
}

impl FromIterator<usize> for LabelSequence {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        LabelSequence(iter.into_iter().collect())
    }
}

/// Errors from lattice construction, parsing, and enumeration guards.
#[derive(Debug, Error)]
pub enum LatticeError {
    #[error(
        "enumeration limits exceeded: T={t}, S={s}, V={v} \
         (exhaustive enumeration supports T ≤ {ENUM_MAX_T}, S ≤ {ENUM_MAX_S}, V ≤ {ENUM_MAX_V}; \
         use the DP recursions for larger instances)"
    )]
    EnumerationLimit { t: usize, s: usize, v: usize },
    #[error("enumeration requires S ≥ 1 and V ≥ 1 (got S={s}, V={v})")]
    DegenerateShape { s: usize, v: usize },
    #[error("label {label} out of range for vocabulary of size {vocab}")]
    LabelOutOfRange { label: usize, vocab: usize },
    #[error("malformed segmentation text: {0}")]
    Parse(String),
    #[error("vocabulary word {index} (`{word}`) is empty")]
    EmptyWord { index: usize, word: String },
    #[error("duplicate vocabulary word `{0}`")]
    DuplicateWord(String),
    #[error(transparent)]
    Invalid(#[from] SegmentationViolation),
}

/// Fixed character inventory for the written-view embedder.
///
/// Characters unknown at encode time map to a reserved trailing index so the
/// embedding table can stay fixed once configured.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alphabet {
    chars: Vec<char>,
    index: HashMap<char, usize>,
}

impl Alphabet {
    /// Build from any character source; deduplicated and sorted so the same
    /// inventory always yields the same indexing.
    pub fn from_chars<I: IntoIterator<Item = char>>(chars: I) -> Self {
        let mut chars: Vec<char> = chars.into_iter().collect();
        chars.sort_unstable();
        chars.dedup();
        let index = chars.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        Alphabet { chars, index }
    }

    pub fn from_words<'a, I: IntoIterator<Item = &'a str>>(words: I) -> Self {
        Self::from_chars(words.into_iter().flat_map(|w| w.chars()))
    }

    /// Number of real characters (excludes the reserved unknown slot).
    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    /// Index reserved for characters outside the inventory.
    pub fn unknown_index(&self) -> usize {
        self.chars.len()
    }

    /// Rows an embedding table over this alphabet needs (chars + unknown).
    pub fn table_size(&self) -> usize {
        self.chars.len() + 1
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    /// Encode a word; the flag reports whether any character fell back to the
    /// reserved unknown index.
    pub fn encode(&self, word: &str) -> (Vec<usize>, bool) {
        let mut had_unknown = false;
        let seq = word
            .chars()
            .map(|c| {
                self.index.get(&c).copied().unwrap_or_else(|| {
                    had_unknown = true;
                    self.unknown_index()
                })
            })
            .collect();
        (seq, had_unknown)
    }
}

/// Whole-word vocabulary: dense word indices, spellings as character index
/// sequences, and optional log-unigram weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    words: Vec<String>,
    char_seqs: Vec<Vec<usize>>,
    log_unigram: Option<Vec<f64>>,
    alphabet: Alphabet,
    word_index: HashMap<String, usize>,
    had_unknown_chars: bool,
}

impl Vocabulary {
    /// Build with the alphabet derived from the words themselves.
    pub fn new(words: Vec<String>) -> Result<Self, LatticeError> {
        let alphabet = Alphabet::from_words(words.iter().map(String::as_str));
        Self::with_alphabet(words, alphabet)
    }

    /// Build against a fixed alphabet; out-of-inventory characters map to the
    /// reserved unknown index and set [`Vocabulary::had_unknown_chars`].
    pub fn with_alphabet(words: Vec<String>, alphabet: Alphabet) -> Result<Self, LatticeError> {
        let mut word_index = HashMap::with_capacity(words.len());
        let mut char_seqs = Vec::with_capacity(words.len());
        let mut had_unknown_chars = false;
        for (index, word) in words.iter().enumerate() {
            if word.is_empty() {
                return Err(LatticeError::EmptyWord {
                    index,
                    word: word.clone(),
                });
            }
            if word_index.insert(word.clone(), index).is_some() {
                return Err(LatticeError::DuplicateWord(word.clone()));
            }
            let (seq, unknown) = alphabet.encode(word);
            had_unknown_chars |= unknown;
            char_seqs.push(seq);
        }
        Ok(Vocabulary {
            words,
            char_seqs,
            log_unigram: None,
            alphabet,
            word_index,
            had_unknown_chars,
        })
    }

    pub fn size(&self) -> usize {
        self.words.len()
    }

    pub fn word(&self, index: usize) -> &str {
        &self.words[index]
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn index_of(&self, word: &str) -> Option<usize> {
        self.word_index.get(word).copied()
    }

    pub fn char_seq(&self, index: usize) -> &[usize] {
        &self.char_seqs[index]
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    pub fn had_unknown_chars(&self) -> bool {
        self.had_unknown_chars
    }

    /// Attach log-unigram weights (e.g. from training counts).
    pub fn set_log_unigram(&mut self, log_probs: Vec<f64>) {
        assert_eq!(log_probs.len(), self.words.len());
        self.log_unigram = Some(log_probs);
    }

    pub fn log_unigram(&self) -> Option<&[f64]> {
        self.log_unigram.as_deref()
    }

    /// Map a label sequence back to whitespace-joined words.
    pub fn render(&self, labels: &[usize]) -> String {
        labels
            .iter()
            .map(|&l| self.words[l].as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Map word strings to label indices; unknown word is an error.
    pub fn parse_labels(&self, text: &str) -> Result<LabelSequence, LatticeError> {
        text.split_whitespace()
            .map(|w| {
                self.index_of(w).ok_or_else(|| {
                    LatticeError::Parse(format!("word `{w}` is not in the vocabulary"))
                })
            })
            .collect::<Result<Vec<_>, _>>()
            .map(LabelSequence::new)
    }
}

/// Segment scores `w[t, s, v]` in the log domain: the score of hypothesizing
/// word `v` on the span of `s` timesteps starting at `t`.
///
/// Durations are 1-based in the API and stored at offset `s - 1` so the array
/// is dense. Cells whose span overruns `T` hold `-inf`, which is absorbing
/// under both max and log-sum reductions, so unguarded scans stay correct.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreLattice {
    w: Array3<f64>,
}

impl ScoreLattice {
    /// All valid cells set to `fill`.
    pub fn filled(t_len: usize, max_dur: usize, vocab: usize, fill: f64) -> Self {
        Self::from_fn(t_len, max_dur, vocab, |_, _, _| fill)
    }

    /// Valid cells from `f(t, s, v)` with `s` the 1-based duration.
    pub fn from_fn<F: FnMut(usize, usize, usize) -> f64>(
        t_len: usize,
        max_dur: usize,
        vocab: usize,
        mut f: F,
    ) -> Self {
        let mut w = Array3::from_elem((t_len, max_dur, vocab), f64::NEG_INFINITY);
        for t in 0..t_len {
            for s in 1..=max_dur.min(t_len - t) {
                for v in 0..vocab {
                    w[[t, s - 1, v]] = f(t, s, v);
                }
            }
        }
        ScoreLattice { w }
    }

    /// Valid cells drawn uniformly from `range`.
    pub fn random<R: rand::Rng>(
        t_len: usize,
        max_dur: usize,
        vocab: usize,
        range: std::ops::Range<f64>,
        rng: &mut R,
    ) -> Self {
        Self::from_fn(t_len, max_dur, vocab, |_, _, _| {
            rng.random_range(range.clone())
        })
    }

    /// Wrap an existing array; cells with `t + s > T` are forced to `-inf`.
    pub fn from_array(mut w: Array3<f64>) -> Self {
        let (t_len, max_dur, vocab) = w.dim();
        for t in 0..t_len {
            for s in (t_len - t + 1)..=max_dur {
                for v in 0..vocab {
                    w[[t, s - 1, v]] = f64::NEG_INFINITY;
                }
            }
        }
        ScoreLattice { w }
    }

    pub fn num_timesteps(&self) -> usize {
        self.w.dim().0
    }

    pub fn max_duration(&self) -> usize {
        self.w.dim().1
    }

    pub fn vocab_size(&self) -> usize {
        self.w.dim().2
    }

    #[inline]
    pub fn is_valid_cell(&self, t: usize, s: usize) -> bool {
        s >= 1 && t + s <= self.num_timesteps() && s <= self.max_duration()
    }

    /// Score of segment `(t, s, v)`; `s` is the 1-based duration.
    #[inline]
    pub fn get(&self, t: usize, s: usize, v: usize) -> f64 {
        self.w[[t, s - 1, v]]
    }

    /// Set a valid cell; panics on an invalid span.
    pub fn set(&mut self, t: usize, s: usize, v: usize, value: f64) {
        assert!(
            self.is_valid_cell(t, s),
            "segment ({t}, {s}) overruns T={}",
            self.num_timesteps()
        );
        self.w[[t, s - 1, v]] = value;
    }

    /// Total score of a path, summing left to right.
    pub fn path_score(&self, pi: &Segmentation) -> f64 {
        pi.segments()
            .iter()
            .fold(0.0, |acc, seg| acc + self.get(seg.start, seg.duration, seg.label))
    }

    pub fn view(&self) -> &Array3<f64> {
        &self.w
    }

    pub fn view_mut(&mut self) -> &mut Array3<f64> {
        &mut self.w
    }

    pub fn into_array(self) -> Array3<f64> {
        self.w
    }

    /// True when every in-range cell is finite (the construction invariant).
    pub fn all_valid_finite(&self) -> bool {
        let t_len = self.num_timesteps();
        (0..t_len).all(|t| {
            (1..=self.max_duration().min(t_len - t))
                .all(|s| (0..self.vocab_size()).all(|v| self.get(t, s, v).is_finite()))
        })
    }
}

/// Lazily enumerate every valid segmentation of `[0, T)` with durations up to
/// `max_dur` and labels below `vocab`, in lexicographic `(t1, s1, l1, ...)`
/// order. With a constraint, only paths whose label projection equals it.
///
/// This is the brute-force reference the DP recursions are tested against;
/// the shape guard refuses instances whose path count is astronomically
/// beyond desk scale.
pub fn enumerate_paths(
    t_total: usize,
    max_dur: usize,
    vocab: usize,
    constraint: Option<&LabelSequence>,
) -> Result<PathEnumerator, LatticeError> {
    if max_dur == 0 || vocab == 0 {
        return Err(LatticeError::DegenerateShape {
            s: max_dur,
            v: vocab,
        });
    }
    if t_total > ENUM_MAX_T || max_dur > ENUM_MAX_S || vocab > ENUM_MAX_V {
        return Err(LatticeError::EnumerationLimit {
            t: t_total,
            s: max_dur,
            v: vocab,
        });
    }
    if let Some(labels) = constraint {
        if let Some(&bad) = labels.iter().find(|&&l| l >= vocab) {
            return Err(LatticeError::LabelOutOfRange {
                label: bad,
                vocab,
            });
        }
    }
    Ok(PathEnumerator {
        t_total,
        max_dur,
        vocab,
        constraint: constraint.map(|c| c.to_vec()),
        stack: Vec::new(),
        state: EnumState::Fresh,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum EnumState {
    Fresh,
    Running,
    Done,
}

/// Iterator returned by [`enumerate_paths`].
#[derive(Debug, Clone)]
pub struct PathEnumerator {
    t_total: usize,
    max_dur: usize,
    vocab: usize,
    constraint: Option<Vec<usize>>,
    stack: Vec<Segment>,
    state: EnumState,
}

impl PathEnumerator {
    fn cursor(&self) -> usize {
        self.stack.last().map_or(0, Segment::end)
    }

    /// Duration bounds for the next segment at the current depth, or `None`
    /// when no extension can complete a valid path.
    fn duration_bounds(&self) -> Option<(usize, usize)> {
        let t = self.cursor();
        let remaining = self.t_total - t;
        if remaining == 0 {
            return None;
        }
        match &self.constraint {
            None => Some((1, self.max_dur.min(remaining))),
            Some(labels) => {
                let depth = self.stack.len();
                if depth >= labels.len() {
                    return None;
                }
                // After this segment, `left` labels must each take 1..=S steps.
                let left = labels.len() - depth - 1;
                let lo = remaining.saturating_sub(left * self.max_dur).max(1);
                let hi = self.max_dur.min(remaining.saturating_sub(left));
                if lo > hi {
                    return None;
                }
                Some((lo, hi))
            }
        }
    }

    fn label_for_depth(&self, depth: usize) -> usize {
        match &self.constraint {
            Some(labels) => labels[depth],
            None => 0,
        }
    }

    /// Whether the current stack is a complete path.
    fn at_leaf(&self) -> bool {
        self.cursor() == self.t_total
            && match &self.constraint {
                Some(labels) => self.stack.len() == labels.len(),
                None => true,
            }
    }

    /// Push smallest-first segments until a leaf is reached; false on dead end.
    fn descend(&mut self) -> bool {
        while !self.at_leaf() {
            match self.duration_bounds() {
                Some((lo, _)) => {
                    let label = self.label_for_depth(self.stack.len());
                    self.stack.push(Segment::new(self.cursor(), lo, label));
                }
                None => return false,
            }
        }
        true
    }

    /// Advance the deepest segment to its next (s, l) choice; false when the
    /// deepest segment is exhausted (caller pops).
    fn advance_last(&mut self) -> bool {
        let Some(top) = self.stack.last_mut() else {
            return false;
        };
        if self.constraint.is_none() && top.label + 1 < self.vocab {
            top.label += 1;
            return true;
        }
        let start = top.start;
        let next_dur = top.duration + 1;
        self.stack.pop();
        // Lower duration bound only matters for the first visit; any larger
        // duration within the upper bound stays feasible for constrained
        // enumeration because the remaining span shrinks.
        if let Some((lo, hi)) = self.duration_bounds() {
            debug_assert!(lo <= next_dur || next_dur > hi);
            if next_dur <= hi {
                let label = self.label_for_depth(self.stack.len());
                self.stack.push(Segment::new(start, next_dur, label));
                return true;
            }
        }
        false
    }
}

impl Iterator for PathEnumerator {
    type Item = Segmentation;

    fn next(&mut self) -> Option<Segmentation> {
        match self.state {
            EnumState::Done => return None,
            EnumState::Fresh => {
                self.state = EnumState::Running;
                if self.t_total == 0 {
                    self.state = EnumState::Done;
                    let empty_ok = self.constraint.as_ref().map_or(true, Vec::is_empty);
                    return empty_ok.then(|| Segmentation::new(Vec::new()));
                }
                if self.descend() {
                    return Some(Segmentation::new(self.stack.clone()));
                }
            }
            EnumState::Running => {}
        }
        loop {
            if self.advance_last() {
                if self.descend() {
                    return Some(Segmentation::new(self.stack.clone()));
                }
                // Dead end below this choice; keep advancing.
                continue;
            }
            if self.stack.is_empty() {
                self.state = EnumState::Done;
                return None;
            }
        }
    }
}
