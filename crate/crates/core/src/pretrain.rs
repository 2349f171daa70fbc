//! Joint acoustic / written word-embedding pre-training.
//!
//! An acoustic view embeds a spoken word segment with the same pooling +
//! ReLU machinery the recognizer's segment scorer uses; a written view
//! composes a word embedding from its character sequence. Both are trained
//! with a three-term contrastive objective over mini-batches, with semi-hard
//! negatives drawn from the batch. The trained pieces transfer directly into
//! a [`SegmentScorerParams`]: acoustic half verbatim, output rows from the
//! written view.

use std::collections::HashMap;

use ndarray::{Array1, Array2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::lattice::Vocabulary;
use crate::optim::Adam;
use crate::scorer::{
    embed_span, embed_span_backprop, AcousticGrads, AcousticParams, FrameFeatures,
    SegmentScorerParams,
};

/// The acoustic view shares its parameter shape with the scorer's acoustic
/// half so pre-trained weights transfer without translation.
pub type AcousticViewEmbedder = AcousticParams;

/// Cosine distance `1 - a·b/(|a||b|)`, with the flag raised when either
/// vector is zero (the distance is then defined as 1 by convention).
pub fn cosine_distance_flagged(a: &[f64], b: &[f64]) -> (f64, bool) {
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for i in 0..a.len() {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    if aa == 0.0 || bb == 0.0 {
        return (1.0, true);
    }
    (1.0 - ab / (aa.sqrt() * bb.sqrt()), false)
}

pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    cosine_distance_flagged(a, b).0
}

/// Add `coeff · ∂d(a,b)/∂a` into `da` and `coeff · ∂d(a,b)/∂b` into `db`.
/// Zero vectors contribute no gradient (matching the distance-1 convention).
fn add_cosine_grads(a: &[f64], b: &[f64], coeff: f64, da: &mut [f64], db: &mut [f64]) {
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for i in 0..a.len() {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    if aa == 0.0 || bb == 0.0 {
        return;
    }
    let (na, nb) = (aa.sqrt(), bb.sqrt());
    let inv = 1.0 / (na * nb);
    for i in 0..a.len() {
        da[i] += coeff * (-b[i] * inv + ab * a[i] / (aa * na * nb));
        db[i] += coeff * (-a[i] * inv + ab * b[i] / (bb * na * nb));
    }
}

/// One training pair: the frames of a spoken word segment and its label.
#[derive(Debug, Clone)]
pub struct WordPair {
    pub frames: FrameFeatures,
    pub label: usize,
}

/// A mini-batch with the contrastive hyperparameters in force for it.
#[derive(Debug, Clone, Copy)]
pub struct PairBatch<'a> {
    pub pairs: &'a [WordPair],
    /// Margin `m`.
    pub margin: f64,
    /// Negatives averaged per term (`M`); at least 1.
    pub negatives: usize,
}

// --- written view ----------------------------------------------------------

/// Character-compositional word embedder: an embedding row per character fed
/// through a single bidirectional tanh recurrence, with a linear readout of
/// the two final states. Deterministic: same character sequence, same output.
#[derive(Debug, Clone, PartialEq)]
pub struct WrittenViewEmbedder {
    /// One row per character (including the reserved unknown slot).
    pub char_table: Array2<f64>,
    pub w_fwd: Array2<f64>,
    pub u_fwd: Array2<f64>,
    pub b_fwd: Array1<f64>,
    pub w_bwd: Array2<f64>,
    pub u_bwd: Array2<f64>,
    pub b_bwd: Array1<f64>,
    pub w_out: Array2<f64>,
    pub b_out: Array1<f64>,
}

/// Hidden states kept from a forward pass for backpropagation through time.
#[derive(Debug, Clone)]
pub struct WrittenTrace {
    h_fwd: Array2<f64>,
    h_bwd: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WrittenGrads {
    pub char_table: Array2<f64>,
    pub w_fwd: Array2<f64>,
    pub u_fwd: Array2<f64>,
    pub b_fwd: Array1<f64>,
    pub w_bwd: Array2<f64>,
    pub u_bwd: Array2<f64>,
    pub b_bwd: Array1<f64>,
    pub w_out: Array2<f64>,
    pub b_out: Array1<f64>,
}

impl WrittenViewEmbedder {
    pub fn random<R: Rng>(
        table_size: usize,
        char_dim: usize,
        hidden_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        let mut mat = |rows: usize, cols: usize| {
            let scale = 1.0 / (cols as f64).sqrt();
            Array2::from_shape_fn((rows, cols), |_| rng.random_range(-scale..scale))
        };
        WrittenViewEmbedder {
            char_table: mat(table_size, char_dim),
            w_fwd: mat(hidden_dim, char_dim),
            u_fwd: mat(hidden_dim, hidden_dim),
            b_fwd: Array1::zeros(hidden_dim),
            w_bwd: mat(hidden_dim, char_dim),
            u_bwd: mat(hidden_dim, hidden_dim),
            b_bwd: Array1::zeros(hidden_dim),
            w_out: mat(out_dim, 2 * hidden_dim),
            b_out: Array1::zeros(out_dim),
        }
    }

    pub fn char_dim(&self) -> usize {
        self.char_table.ncols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_fwd.nrows()
    }

    pub fn out_dim(&self) -> usize {
        self.w_out.nrows()
    }

    pub fn table_size(&self) -> usize {
        self.char_table.nrows()
    }

    fn step(
        w: &Array2<f64>,
        u: &Array2<f64>,
        b: &Array1<f64>,
        x: ndarray::ArrayView1<f64>,
        h_prev: Option<ndarray::ArrayView1<f64>>,
    ) -> Array1<f64> {
        let mut a = w.dot(&x) + b;
        if let Some(h) = h_prev {
            a = a + u.dot(&h);
        }
        a.mapv_inplace(f64::tanh);
        a
    }

    /// Embed a character sequence, keeping the recurrent states.
    pub fn embed_with_trace(&self, seq: &[usize]) -> (Array1<f64>, WrittenTrace) {
        assert!(!seq.is_empty(), "cannot embed an empty character sequence");
        let n = seq.len();
        let r = self.hidden_dim();
        let mut h_fwd = Array2::zeros((n, r));
        for i in 0..n {
            let x = self.char_table.row(seq[i]);
            let prev = (i > 0).then(|| h_fwd.row(i - 1).to_owned());
            let h = Self::step(&self.w_fwd, &self.u_fwd, &self.b_fwd, x, prev.as_ref().map(|p| p.view()));
            h_fwd.row_mut(i).assign(&h);
        }
        let mut h_bwd = Array2::zeros((n, r));
        for i in (0..n).rev() {
            let x = self.char_table.row(seq[i]);
            let prev = (i + 1 < n).then(|| h_bwd.row(i + 1).to_owned());
            let h = Self::step(&self.w_bwd, &self.u_bwd, &self.b_bwd, x, prev.as_ref().map(|p| p.view()));
            h_bwd.row_mut(i).assign(&h);
        }
        let mut cat = Array1::zeros(2 * r);
        cat.slice_mut(ndarray::s![..r]).assign(&h_fwd.row(n - 1));
        cat.slice_mut(ndarray::s![r..]).assign(&h_bwd.row(0));
        let out = self.w_out.dot(&cat) + &self.b_out;
        (out, WrittenTrace { h_fwd, h_bwd })
    }

    pub fn embed(&self, seq: &[usize]) -> Array1<f64> {
        self.embed_with_trace(seq).0
    }

    /// Embeddings for every vocabulary word, one row per word.
    pub fn embed_vocab(&self, vocab: &Vocabulary) -> Array2<f64> {
        let mut table = Array2::zeros((vocab.size(), self.out_dim()));
        for v in 0..vocab.size() {
            table.row_mut(v).assign(&self.embed(vocab.char_seq(v)));
        }
        table
    }

    /// Backpropagation through time; adds into `grads`.
    pub fn backprop(
        &self,
        seq: &[usize],
        trace: &WrittenTrace,
        dout: &[f64],
        grads: &mut WrittenGrads,
    ) {
        let n = seq.len();
        let r = self.hidden_dim();
        let dout = ndarray::ArrayView1::from(dout);

        let mut cat = Array1::zeros(2 * r);
        cat.slice_mut(ndarray::s![..r]).assign(&trace.h_fwd.row(n - 1));
        cat.slice_mut(ndarray::s![r..]).assign(&trace.h_bwd.row(0));
        grads.w_out += &dout
            .insert_axis(ndarray::Axis(1))
            .dot(&cat.view().insert_axis(ndarray::Axis(0)));
        grads.b_out += &dout;
        let dcat = self.w_out.t().dot(&dout);

        let mut dh_fwd = Array2::<f64>::zeros((n, r));
        let mut dh_bwd = Array2::<f64>::zeros((n, r));
        dh_fwd.row_mut(n - 1).assign(&dcat.slice(ndarray::s![..r]));
        dh_bwd.row_mut(0).assign(&dcat.slice(ndarray::s![r..]));

        // Forward chain backwards through time.
        for i in (0..n).rev() {
            let h = trace.h_fwd.row(i);
            let da = (&dh_fwd.row(i) * &h.mapv(|x| 1.0 - x * x)).to_owned();
            let x = self.char_table.row(seq[i]);
            grads.w_fwd += &da
                .view()
                .insert_axis(ndarray::Axis(1))
                .dot(&x.insert_axis(ndarray::Axis(0)));
            grads.b_fwd += &da;
            if i > 0 {
                grads.u_fwd += &da
                    .view()
                    .insert_axis(ndarray::Axis(1))
                    .dot(&trace.h_fwd.row(i - 1).insert_axis(ndarray::Axis(0)));
                let prop = self.u_fwd.t().dot(&da);
                let mut row = dh_fwd.row_mut(i - 1);
                row += &prop;
            }
            let dx = self.w_fwd.t().dot(&da);
            let mut crow = grads.char_table.row_mut(seq[i]);
            crow += &dx;
        }
        // Backward chain forwards through time.
        for i in 0..n {
            let h = trace.h_bwd.row(i);
            let da = (&dh_bwd.row(i) * &h.mapv(|x| 1.0 - x * x)).to_owned();
            let x = self.char_table.row(seq[i]);
            grads.w_bwd += &da
                .view()
                .insert_axis(ndarray::Axis(1))
                .dot(&x.insert_axis(ndarray::Axis(0)));
            grads.b_bwd += &da;
            if i + 1 < n {
                grads.u_bwd += &da
                    .view()
                    .insert_axis(ndarray::Axis(1))
                    .dot(&trace.h_bwd.row(i + 1).insert_axis(ndarray::Axis(0)));
                let prop = self.u_bwd.t().dot(&da);
                let mut row = dh_bwd.row_mut(i + 1);
                row += &prop;
            }
            let dx = self.w_bwd.t().dot(&da);
            let mut crow = grads.char_table.row_mut(seq[i]);
            crow += &dx;
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.char_table.as_slice_mut().unwrap(),
            self.w_fwd.as_slice_mut().unwrap(),
            self.u_fwd.as_slice_mut().unwrap(),
            self.b_fwd.as_slice_mut().unwrap(),
            self.w_bwd.as_slice_mut().unwrap(),
            self.u_bwd.as_slice_mut().unwrap(),
            self.b_bwd.as_slice_mut().unwrap(),
            self.w_out.as_slice_mut().unwrap(),
            self.b_out.as_slice_mut().unwrap(),
        ]
    }

    pub fn tensor_lens(&self) -> Vec<usize> {
        vec![
            self.char_table.len(),
            self.w_fwd.len(),
            self.u_fwd.len(),
            self.b_fwd.len(),
            self.w_bwd.len(),
            self.u_bwd.len(),
            self.b_bwd.len(),
            self.w_out.len(),
            self.b_out.len(),
        ]
    }
}

impl WrittenGrads {
    pub fn zeros_like(model: &WrittenViewEmbedder) -> Self {
        WrittenGrads {
            char_table: Array2::zeros(model.char_table.dim()),
            w_fwd: Array2::zeros(model.w_fwd.dim()),
            u_fwd: Array2::zeros(model.u_fwd.dim()),
            b_fwd: Array1::zeros(model.b_fwd.len()),
            w_bwd: Array2::zeros(model.w_bwd.dim()),
            u_bwd: Array2::zeros(model.u_bwd.dim()),
            b_bwd: Array1::zeros(model.b_bwd.len()),
            w_out: Array2::zeros(model.w_out.dim()),
            b_out: Array1::zeros(model.b_out.len()),
        }
    }

    /// Same ordering as [`WrittenViewEmbedder::tensors_mut`].
    pub fn tensors(&self) -> Vec<&[f64]> {
        vec![
            self.char_table.as_slice().unwrap(),
            self.w_fwd.as_slice().unwrap(),
            self.u_fwd.as_slice().unwrap(),
            self.b_fwd.as_slice().unwrap(),
            self.w_bwd.as_slice().unwrap(),
            self.u_bwd.as_slice().unwrap(),
            self.b_bwd.as_slice().unwrap(),
            self.w_out.as_slice().unwrap(),
            self.b_out.as_slice().unwrap(),
        ]
    }

    pub fn scale(&mut self, c: f64) {
        for a in [
            &mut self.char_table,
            &mut self.w_fwd,
            &mut self.u_fwd,
            &mut self.w_bwd,
            &mut self.u_bwd,
            &mut self.w_out,
        ] {
            a.mapv_inplace(|x| x * c);
        }
        for a in [&mut self.b_fwd, &mut self.b_bwd, &mut self.b_out] {
            a.mapv_inplace(|x| x * c);
        }
    }
}

// --- batch embeddings and the contrastive objective ------------------------

/// Embeddings of one batch: acoustic rows per pair and written rows per
/// distinct word (first-appearance order).
#[derive(Debug, Clone)]
pub struct BatchEmbeddings {
    /// N × D acoustic embeddings, one per pair.
    pub f: Array2<f64>,
    /// Per-pair labels.
    pub labels: Vec<usize>,
    /// Distinct labels present in the batch.
    pub words: Vec<usize>,
    /// |words| × D written embeddings, rows aligned with `words`.
    pub g: Array2<f64>,
    slot: HashMap<usize, usize>,
}

impl BatchEmbeddings {
    /// Assemble from precomputed embeddings (tests plant values directly).
    pub fn from_parts(f: Array2<f64>, labels: Vec<usize>, words: Vec<usize>, g: Array2<f64>) -> Self {
        assert_eq!(f.nrows(), labels.len());
        assert_eq!(g.nrows(), words.len());
        let slot = words.iter().enumerate().map(|(k, &w)| (w, k)).collect();
        BatchEmbeddings { f, labels, words, g, slot }
    }

    pub fn compute(
        pairs: &[WordPair],
        acoustic: &AcousticParams,
        written: &WrittenViewEmbedder,
        vocab: &Vocabulary,
    ) -> Self {
        let d = acoustic.embed_dim();
        let mut f = Array2::zeros((pairs.len(), d));
        let mut labels = Vec::with_capacity(pairs.len());
        let mut words = Vec::new();
        let mut slot = HashMap::new();
        for (i, pair) in pairs.iter().enumerate() {
            let n = pair.frames.num_frames();
            f.row_mut(i)
                .assign(&embed_span(acoustic, &pair.frames, 0, n));
            labels.push(pair.label);
            slot.entry(pair.label).or_insert_with(|| {
                words.push(pair.label);
                words.len() - 1
            });
        }
        let mut g = Array2::zeros((words.len(), written.out_dim()));
        for (k, &w) in words.iter().enumerate() {
            g.row_mut(k).assign(&written.embed(vocab.char_seq(w)));
        }
        BatchEmbeddings { f, labels, words, g, slot }
    }

    pub fn slot_of(&self, label: usize) -> usize {
        self.slot[&label]
    }

    fn d_fg(&self, i: usize, k: usize) -> f64 {
        cosine_distance(
            self.f.row(i).to_slice().unwrap(),
            self.g.row(k).to_slice().unwrap(),
        )
    }

    fn d_gg(&self, k: usize, l: usize) -> f64 {
        cosine_distance(
            self.g.row(k).to_slice().unwrap(),
            self.g.row(l).to_slice().unwrap(),
        )
    }
}

/// Semi-hard negative candidates for anchor `i` under one of the three loss
/// terms. Terms 0 and 2 return indices into `emb.words`; term 1 returns pair
/// indices. A candidate is semi-hard when its distance to the anchor point
/// strictly exceeds the anchor's positive distance.
pub fn semi_hard_negatives(emb: &BatchEmbeddings, i: usize, term: u8) -> Vec<usize> {
    let v = emb.labels[i];
    let pos_slot = emb.slot_of(v);
    let d_pos = emb.d_fg(i, pos_slot);
    match term {
        0 => (0..emb.words.len())
            .filter(|&k| emb.words[k] != v && emb.d_fg(i, k) > d_pos)
            .collect(),
        1 => (0..emb.labels.len())
            .filter(|&j| emb.labels[j] != v && emb.d_fg(j, pos_slot) > d_pos)
            .collect(),
        2 => (0..emb.words.len())
            .filter(|&k| emb.words[k] != v && emb.d_gg(pos_slot, k) > d_pos)
            .collect(),
        _ => panic!("term must be 0, 1, or 2"),
    }
}

/// Hinge accumulation shared by the loss and its gradient: for each anchor
/// and term, select up to M smallest-distance semi-hard negatives and call
/// `sink(i, term, negative, weight, hinge)` for each selected one, where
/// `weight` is 1/|selected|.
fn for_each_selected_negative<F: FnMut(usize, u8, usize, f64, f64)>(
    emb: &BatchEmbeddings,
    margin: f64,
    m_neg: usize,
    mut sink: F,
) -> f64 {
    assert!(m_neg >= 1, "need at least one negative per term");
    let mut total = 0.0;
    for i in 0..emb.labels.len() {
        let pos_slot = emb.slot_of(emb.labels[i]);
        let d_pos = emb.d_fg(i, pos_slot);
        for term in 0..3u8 {
            let mut cands: Vec<(f64, usize)> = semi_hard_negatives(emb, i, term)
                .into_iter()
                .map(|c| {
                    let d = match term {
                        0 => emb.d_fg(i, c),
                        1 => emb.d_fg(c, pos_slot),
                        _ => emb.d_gg(pos_slot, c),
                    };
                    (d, c)
                })
                .collect();
            if cands.is_empty() {
                continue;
            }
            cands.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            cands.truncate(m_neg);
            let weight = 1.0 / cands.len() as f64;
            for &(d_neg, c) in &cands {
                let hinge = margin + d_pos - d_neg;
                if hinge > 0.0 {
                    total += weight * hinge;
                    sink(i, term, c, weight, hinge);
                }
            }
        }
    }
    total
}

/// The three-term contrastive objective over precomputed batch embeddings.
pub fn contrastive_loss_from_embeddings(
    emb: &BatchEmbeddings,
    margin: f64,
    m_neg: usize,
) -> f64 {
    for_each_selected_negative(emb, margin, m_neg, |_, _, _, _, _| {})
}

/// Convenience wrapper: embed the batch, then evaluate the objective.
pub fn contrastive_loss(
    batch: &PairBatch<'_>,
    acoustic: &AcousticParams,
    written: &WrittenViewEmbedder,
    vocab: &Vocabulary,
) -> f64 {
    let emb = BatchEmbeddings::compute(batch.pairs, acoustic, written, vocab);
    contrastive_loss_from_embeddings(&emb, batch.margin, batch.negatives)
}

/// Loss plus gradients with respect to the batch embedding rows.
pub fn contrastive_loss_and_embedding_grads(
    emb: &BatchEmbeddings,
    margin: f64,
    m_neg: usize,
) -> (f64, Array2<f64>, Array2<f64>) {
    let mut df = Array2::zeros(emb.f.dim());
    let mut dg = Array2::zeros(emb.g.dim());
    let loss = for_each_selected_negative(emb, margin, m_neg, |i, term, c, weight, _| {
        let pos_slot = emb.slot_of(emb.labels[i]);
        // Positive side: +weight on d(f_i, g_pos) in every term.
        {
            let (fi, gp) = (emb.f.row(i), emb.g.row(pos_slot));
            let mut dfi = df.row_mut(i);
            let dfi_s = dfi.as_slice_mut().unwrap();
            // Borrow dance: gradient rows live in different arrays.
            let mut dgp = vec![0.0; emb.g.ncols()];
            add_cosine_grads(
                fi.to_slice().unwrap(),
                gp.to_slice().unwrap(),
                weight,
                dfi_s,
                &mut dgp,
            );
            let mut row = dg.row_mut(pos_slot);
            row += &ndarray::ArrayView1::from(&dgp[..]);
        }
        // Negative side: -weight on the term's negative distance.
        match term {
            0 => {
                let mut dgn = vec![0.0; emb.g.ncols()];
                add_cosine_grads(
                    emb.f.row(i).to_slice().unwrap(),
                    emb.g.row(c).to_slice().unwrap(),
                    -weight,
                    df.row_mut(i).as_slice_mut().unwrap(),
                    &mut dgn,
                );
                let mut row = dg.row_mut(c);
                row += &ndarray::ArrayView1::from(&dgn[..]);
            }
            1 => {
                let mut dgp = vec![0.0; emb.g.ncols()];
                add_cosine_grads(
                    emb.f.row(c).to_slice().unwrap(),
                    emb.g.row(pos_slot).to_slice().unwrap(),
                    -weight,
                    df.row_mut(c).as_slice_mut().unwrap(),
                    &mut dgp,
                );
                let mut row = dg.row_mut(pos_slot);
                row += &ndarray::ArrayView1::from(&dgp[..]);
            }
            _ => {
                let mut dgp = vec![0.0; emb.g.ncols()];
                let mut dgn = vec![0.0; emb.g.ncols()];
                add_cosine_grads(
                    emb.g.row(pos_slot).to_slice().unwrap(),
                    emb.g.row(c).to_slice().unwrap(),
                    -weight,
                    &mut dgp,
                    &mut dgn,
                );
                let mut rp = dg.row_mut(pos_slot);
                rp += &ndarray::ArrayView1::from(&dgp[..]);
                let mut rn = dg.row_mut(c);
                rn += &ndarray::ArrayView1::from(&dgn[..]);
            }
        }
    });
    (loss, df, dg)
}

/// Full batch gradient: loss, acoustic-parameter grads, written-parameter
/// grads. Used per training step and finite-difference checked in tests.
pub fn contrastive_step_grads(
    pairs: &[WordPair],
    vocab: &Vocabulary,
    acoustic: &AcousticParams,
    written: &WrittenViewEmbedder,
    margin: f64,
    m_neg: usize,
) -> (f64, AcousticGrads, WrittenGrads) {
    let emb = BatchEmbeddings::compute(pairs, acoustic, written, vocab);
    let (loss, df, dg) = contrastive_loss_and_embedding_grads(&emb, margin, m_neg);
    let mut ag = AcousticGrads::zeros_like(acoustic);
    for (i, pair) in pairs.iter().enumerate() {
        let row = df.row(i);
        if row.iter().all(|&x| x == 0.0) {
            continue;
        }
        let n = pair.frames.num_frames();
        embed_span_backprop(
            acoustic,
            &pair.frames,
            0,
            n,
            row.to_slice().unwrap(),
            &mut ag,
            None,
        );
    }
    let mut wg = WrittenGrads::zeros_like(written);
    for (k, &w) in emb.words.iter().enumerate() {
        let row = dg.row(k);
        if row.iter().all(|&x| x == 0.0) {
            continue;
        }
        let seq = vocab.char_seq(w);
        let (_, trace) = written.embed_with_trace(seq);
        written.backprop(seq, &trace, row.to_slice().unwrap(), &mut wg);
    }
    (loss, ag, wg)
}

// --- evaluation -------------------------------------------------------------

/// Average precision of a ranked match/non-match list (ascending distance).
fn average_precision(scored: &mut Vec<(f64, bool)>) -> Option<f64> {
    let positives = scored.iter().filter(|(_, p)| *p).count();
    if positives == 0 {
        return None;
    }
    scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut hits = 0usize;
    let mut ap = 0.0;
    for (rank, &(_, positive)) in scored.iter().enumerate() {
        if positive {
            hits += 1;
            ap += hits as f64 / (rank + 1) as f64;
        }
    }
    Some(ap / positives as f64)
}

/// Cross-view average precision: rank every (segment, word) pair by cosine
/// distance between the acoustic embedding and the word's written embedding;
/// a pair matches when the segment's label is that word. `None` when no
/// positive pair exists.
pub fn crossview_ap(
    f: &Array2<f64>,
    labels: &[usize],
    g: &Array2<f64>,
    words: &[usize],
) -> Option<f64> {
    assert_eq!(f.nrows(), labels.len());
    assert_eq!(g.nrows(), words.len());
    let mut scored = Vec::with_capacity(labels.len() * words.len());
    for i in 0..labels.len() {
        for (k, &w) in words.iter().enumerate() {
            let d = cosine_distance(f.row(i).to_slice().unwrap(), g.row(k).to_slice().unwrap());
            scored.push((d, labels[i] == w));
        }
    }
    average_precision(&mut scored)
}

/// Evaluate cross-view AP of the current embedders on held-out pairs.
pub fn evaluate_crossview_ap(
    pairs: &[WordPair],
    acoustic: &AcousticParams,
    written: &WrittenViewEmbedder,
    vocab: &Vocabulary,
) -> Option<f64> {
    if pairs.is_empty() {
        return None;
    }
    let emb = BatchEmbeddings::compute(pairs, acoustic, written, vocab);
    crossview_ap(&emb.f, &emb.labels, &emb.g, &emb.words)
}

// --- recognizer coupling ----------------------------------------------------

/// Blend of the sequence loss with an L2 pull of output rows toward the
/// pre-trained written embeddings, summed over label occurrences.
pub fn agwe_regularized_loss(
    seg_loss: f64,
    a2: &Array2<f64>,
    labels: &[usize],
    g_table: &Array2<f64>,
    lambda: f64,
) -> f64 {
    assert!((0.0..=1.0).contains(&lambda), "lambda must lie in [0, 1]");
    let mut reg = 0.0;
    for &v in labels {
        let diff = &a2.row(v) - &g_table.row(v);
        reg += diff.dot(&diff);
    }
    (1.0 - lambda) * seg_loss + lambda * reg
}

/// Initialize a segment scorer from the two pre-trained views: acoustic half
/// copied verbatim, output rows from character composition (so words never
/// seen in pre-training still get a row), biases zero.
pub fn transfer_init(
    acoustic: &AcousticViewEmbedder,
    written: &WrittenViewEmbedder,
    vocab: &Vocabulary,
) -> SegmentScorerParams {
    assert_eq!(
        acoustic.embed_dim(),
        written.out_dim(),
        "acoustic and written views must share the embedding dimension"
    );
    SegmentScorerParams {
        acoustic: acoustic.clone(),
        a2: written.embed_vocab(vocab),
        b2: Array1::zeros(vocab.size()),
    }
}

// --- training driver ---------------------------------------------------------

#[derive(Debug, Clone)]
pub struct PretrainConfig {
    pub margin: f64,
    /// Starting M, decreased by one per batch…
    pub m_start: usize,
    /// …down to this floor.
    pub m_floor: usize,
    /// Frame budget per mini-batch (batches are built greedily up to this).
    pub frames_per_batch: usize,
    pub lr: f64,
    /// Learning-rate division factor on AP plateau.
    pub lr_reduce: f64,
    /// Steps without dev-AP improvement before the rate is reduced.
    pub patience_steps: usize,
    /// Dev AP is computed every this many steps.
    pub eval_every: usize,
    pub max_steps: usize,
    /// Stop early once dev AP reaches this value, if set.
    pub target_ap: Option<f64>,
    /// Training stops once the learning rate falls below this.
    pub min_lr: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            margin: 0.45,
            m_start: 64,
            m_floor: 6,
            frames_per_batch: 2_000,
            lr: 0.001,
            lr_reduce: 10.0,
            patience_steps: 600,
            eval_every: 50,
            max_steps: 5_000,
            target_ap: None,
            min_lr: 1e-9,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApPoint {
    pub step: usize,
    pub ap: f64,
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub acoustic: AcousticViewEmbedder,
    pub written: WrittenViewEmbedder,
    pub ap_log: Vec<ApPoint>,
    pub best_ap: f64,
    pub steps_run: usize,
}

#[derive(Debug, Error)]
pub enum PretrainError {
    #[error("no training pairs supplied")]
    EmptyTraining,
    #[error("held-out pairs contain no positive (segment, word) match; AP is undefined")]
    NoPositives,
}

/// Joint multi-view training loop: greedy frame-budget batches, M schedule,
/// Adam on both views, periodic dev AP with plateau-triggered learning-rate
/// reduction and early stopping.
pub fn train_multiview(
    train: &[WordPair],
    dev: &[WordPair],
    vocab: &Vocabulary,
    mut acoustic: AcousticViewEmbedder,
    mut written: WrittenViewEmbedder,
    cfg: &PretrainConfig,
) -> Result<PretrainOutcome, PretrainError> {
    if train.is_empty() {
        return Err(PretrainError::EmptyTraining);
    }
    // AP must be well-defined before burning any compute.
    evaluate_crossview_ap(dev, &acoustic, &written, vocab).ok_or(PretrainError::NoPositives)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let lens: Vec<usize> = acoustic
        .tensor_lens()
        .into_iter()
        .chain(written.tensor_lens())
        .collect();
    let mut opt = Adam::new(cfg.lr, &lens);

    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0usize;

    let mut ap_log = Vec::new();
    let mut best_ap = f64::NEG_INFINITY;
    let mut last_improve_step = 0usize;
    let mut step = 0usize;

    while step < cfg.max_steps {
        // Greedy batch under the frame budget (always at least one pair).
        let mut batch: Vec<WordPair> = Vec::new();
        let mut budget = 0usize;
        loop {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let pair = &train[order[cursor]];
            let cost = pair.frames.num_frames();
            if !batch.is_empty() && budget + cost > cfg.frames_per_batch {
                break;
            }
            batch.push(pair.clone());
            budget += cost;
            cursor += 1;
            if budget >= cfg.frames_per_batch {
                break;
            }
        }
        step += 1;
        let m_neg = cfg.m_start.saturating_sub(step - 1).max(cfg.m_floor);
        let (_, mut ag, mut wg) =
            contrastive_step_grads(&batch, vocab, &acoustic, &written, cfg.margin, m_neg);
        let scale = 1.0 / batch.len() as f64;
        ag.scale(scale);
        wg.scale(scale);
        {
            let mut params: Vec<&mut [f64]> = acoustic
                .tensors_mut()
                .into_iter()
                .chain(written.tensors_mut())
                .collect();
            let grads: Vec<&[f64]> = ag.tensors().into_iter().chain(wg.tensors()).collect();
            opt.step(&mut params, &grads);
        }

        if step % cfg.eval_every == 0 || step == cfg.max_steps {
            let ap = evaluate_crossview_ap(dev, &acoustic, &written, vocab)
                .expect("positives checked up front");
            ap_log.push(ApPoint { step, ap });
            if ap > best_ap + 1e-4 {
                best_ap = ap;
                last_improve_step = step;
            } else if step - last_improve_step >= cfg.patience_steps {
                opt.lr /= cfg.lr_reduce;
                last_improve_step = step;
            }
            if let Some(target) = cfg.target_ap {
                if ap >= target {
                    break;
                }
            }
            if opt.lr < cfg.min_lr {
                break;
            }
        }
    }
    Ok(PretrainOutcome {
        acoustic,
        written,
        ap_log,
        best_ap,
        steps_run: step,
    })
}
