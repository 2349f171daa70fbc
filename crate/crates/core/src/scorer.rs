//! Factored segment scoring: pool frames over a span, push the pooled vector
//! through a one-layer ReLU network to get a segment embedding, then score
//! every word as an inner product against that word's output row.
//!
//! Because the segment embedding does not depend on the word, the whole
//! `T x S x V` lattice factors through a `T x S x D` embedding table; the
//! cost of the vocabulary is one dot product per cell, and the fill routine
//! needs only O(T + F + D) scratch regardless of `V`.

use ndarray::{Array1, Array2, Array3};
use rand::Rng;

use crate::lattice::ScoreLattice;

/// Acoustic frames for one utterance, one row per timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameFeatures {
    h: Array2<f64>,
}

impl FrameFeatures {
    pub fn new(h: Array2<f64>) -> Self {
        FrameFeatures { h }
    }

    pub fn num_frames(&self) -> usize {
        self.h.nrows()
    }

    pub fn dim(&self) -> usize {
        self.h.ncols()
    }

    pub fn row(&self, t: usize) -> &[f64] {
        self.h
            .row(t)
            .to_slice()
            .expect("frame rows are contiguous")
    }

    pub fn view(&self) -> &Array2<f64> {
        &self.h
    }

    pub fn into_array(self) -> Array2<f64> {
        self.h
    }
}

/// How a span of frames is reduced to a fixed-size vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pooling {
    /// Concatenate the first and last frame inside the segment (dim `2F`).
    Concat,
    /// Arithmetic mean over the span (dim `F`).
    Mean,
    /// Softmax-weighted mean with learned query `g`; the weights are
    /// normalized to sum to one over the span (dim `F`).
    Attention,
}

impl Pooling {
    pub fn pooled_dim(self, frame_dim: usize) -> usize {
        match self {
            Pooling::Concat => 2 * frame_dim,
            Pooling::Mean | Pooling::Attention => frame_dim,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Pooling::Concat => "concat",
            Pooling::Mean => "mean",
            Pooling::Attention => "attention",
        }
    }
}

impl std::str::FromStr for Pooling {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "concat" => Ok(Pooling::Concat),
            "mean" => Ok(Pooling::Mean),
            "attention" => Ok(Pooling::Attention),
            other => Err(format!(
                "unknown pooling `{other}` (expected concat, mean, or attention)"
            )),
        }
    }
}

/// The acoustic half of the scorer: pooling choice, the ReLU layer
/// `f = relu(A1 · pooled + b1)`, and the attention query when applicable.
#[derive(Debug, Clone, PartialEq)]
pub struct AcousticParams {
    pub pooling: Pooling,
    /// `D x P` where `P = pooling.pooled_dim(F)`.
    pub a1: Array2<f64>,
    pub b1: Array1<f64>,
    /// Attention query over frames, length `F`; present iff `pooling` is
    /// [`Pooling::Attention`].
    pub attention: Option<Array1<f64>>,
}

impl AcousticParams {
    pub fn random<R: Rng>(
        pooling: Pooling,
        frame_dim: usize,
        embed_dim: usize,
        rng: &mut R,
    ) -> Self {
        let pooled = pooling.pooled_dim(frame_dim);
        let scale = 1.0 / (pooled as f64).sqrt();
        AcousticParams {
            pooling,
            a1: Array2::from_shape_fn((embed_dim, pooled), |_| rng.random_range(-scale..scale)),
            b1: Array1::zeros(embed_dim),
            attention: (pooling == Pooling::Attention)
                .then(|| Array1::from_shape_fn(frame_dim, |_| rng.random_range(-scale..scale))),
        }
    }

    pub fn embed_dim(&self) -> usize {
        self.a1.nrows()
    }

    pub fn pooled_dim(&self) -> usize {
        self.a1.ncols()
    }

    /// Frame dimensionality implied by the pooled width.
    pub fn frame_dim(&self) -> usize {
        match self.pooling {
            Pooling::Concat => self.a1.ncols() / 2,
            Pooling::Mean | Pooling::Attention => self.a1.ncols(),
        }
    }

    pub fn check_shapes(&self) {
        assert_eq!(self.b1.len(), self.embed_dim(), "b1 length vs A1 rows");
        if self.pooling == Pooling::Attention {
            let g = self
                .attention
                .as_ref()
                .expect("attention pooling requires the query vector");
            assert_eq!(g.len(), self.frame_dim(), "attention query vs frame dim");
        }
        if self.pooling == Pooling::Concat {
            assert_eq!(self.a1.ncols() % 2, 0, "concat pooled width must be even");
        }
    }

    /// Tensors as an ordered flat-slice list (for optimizer plumbing).
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = vec![
            self.a1.as_slice_mut().unwrap(),
            self.b1.as_slice_mut().unwrap(),
        ];
        if let Some(g) = &mut self.attention {
            out.push(g.as_slice_mut().unwrap());
        }
        out
    }

    pub fn tensor_lens(&self) -> Vec<usize> {
        let mut out = vec![self.a1.len(), self.b1.len()];
        if let Some(g) = &self.attention {
            out.push(g.len());
        }
        out
    }
}

/// Full scorer: acoustic segment embedder plus per-word output rows
/// (`a2` is `V x D`, `b2` length `V`).
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentScorerParams {
    pub acoustic: AcousticParams,
    pub a2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl SegmentScorerParams {
    pub fn random<R: Rng>(
        pooling: Pooling,
        frame_dim: usize,
        embed_dim: usize,
        vocab: usize,
        rng: &mut R,
    ) -> Self {
        let scale = 1.0 / (embed_dim as f64).sqrt();
        SegmentScorerParams {
            acoustic: AcousticParams::random(pooling, frame_dim, embed_dim, rng),
            a2: Array2::from_shape_fn((vocab, embed_dim), |_| rng.random_range(-scale..scale)),
            b2: Array1::zeros(vocab),
        }
    }

    /// Flat views over every parameter, acoustic tensors first. Order
    /// matches [`ScorerGrads::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = self.acoustic.tensors_mut();
        out.push(self.a2.as_slice_mut().unwrap());
        out.push(self.b2.as_slice_mut().unwrap());
        out
    }

    pub fn tensor_lens(&self) -> Vec<usize> {
        let mut out = self.acoustic.tensor_lens();
        out.push(self.a2.len());
        out.push(self.b2.len());
        out
    }

    pub fn vocab_size(&self) -> usize {
        self.a2.nrows()
    }

    pub fn embed_dim(&self) -> usize {
        self.acoustic.embed_dim()
    }

    pub fn check_shapes(&self) {
        self.acoustic.check_shapes();
        assert_eq!(self.a2.ncols(), self.acoustic.embed_dim(), "a2 cols vs D");
        assert_eq!(self.b2.len(), self.a2.nrows(), "b2 length vs V");
    }
}

/// Segment embeddings for every valid `(t, s)` cell, shape `T x S x D`
/// (invalid spans are all-zero rows).
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentEmbeddings {
    pub e: Array3<f64>,
}

impl SegmentEmbeddings {
    /// Embedding of the span of `s` frames starting at `t` (1-based duration).
    pub fn get(&self, t: usize, s: usize) -> &[f64] {
        let d = self.e.dim().2;
        let base = (t * self.e.dim().1 + (s - 1)) * d;
        &self.e.as_slice().unwrap()[base..base + d]
    }
}

// --- small dense kernels -------------------------------------------------
//
// Written out by hand so the lattice fill performs no hidden allocation; the
// packing buffers of a general GEMM would scale with the output width, which
// is exactly what the vocabulary-independence contract rules out.

#[inline]
fn dot(x: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    let mut acc = 0.0;
    for i in 0..x.len() {
        acc += x[i] * y[i];
    }
    acc
}

/// out = A·x + b for a row-major `rows x cols` slice.
#[inline]
fn mat_vec_bias(a: &[f64], rows: usize, cols: usize, x: &[f64], b: &[f64], out: &mut [f64]) {
    debug_assert_eq!(a.len(), rows * cols);
    debug_assert_eq!(x.len(), cols);
    for r in 0..rows {
        out[r] = b[r] + dot(&a[r * cols..(r + 1) * cols], x);
    }
}

/// out += Aᵀ·x for a row-major `rows x cols` slice (x has `rows` entries).
#[inline]
fn mat_t_vec_add(a: &[f64], rows: usize, cols: usize, x: &[f64], out: &mut [f64]) {
    for r in 0..rows {
        let xr = x[r];
        if xr == 0.0 {
            continue;
        }
        let row = &a[r * cols..(r + 1) * cols];
        for c in 0..cols {
            out[c] += xr * row[c];
        }
    }
}

#[inline]
fn axpy(alpha: f64, x: &[f64], out: &mut [f64]) {
    for i in 0..x.len() {
        out[i] += alpha * x[i];
    }
}

// --- pooling --------------------------------------------------------------

/// Pool the span of `s` frames starting at `t` into `out`.
///
/// For attention, `att_scores[r]` must hold `g · H[r]` for every frame and
/// `weights` receives the normalized span weights (length `s`).
fn pool_into(
    pooling: Pooling,
    frames: &FrameFeatures,
    t: usize,
    s: usize,
    att_scores: &[f64],
    weights: &mut [f64],
    out: &mut [f64],
) {
    let f_dim = frames.dim();
    match pooling {
        Pooling::Concat => {
            out[..f_dim].copy_from_slice(frames.row(t));
            out[f_dim..].copy_from_slice(frames.row(t + s - 1));
        }
        Pooling::Mean => {
            out.fill(0.0);
            for r in t..t + s {
                axpy(1.0, frames.row(r), out);
            }
            let inv = 1.0 / s as f64;
            for o in out.iter_mut() {
                *o *= inv;
            }
        }
        Pooling::Attention => {
            let span = &att_scores[t..t + s];
            let max = span.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (wi, &sc) in weights[..s].iter_mut().zip(span) {
                *wi = (sc - max).exp();
                z += *wi;
            }
            out.fill(0.0);
            for (i, r) in (t..t + s).enumerate() {
                weights[i] /= z;
                axpy(weights[i], frames.row(r), out);
            }
        }
    }
}

/// Reusable buffers for [`score_lattice_into`] and the embedding fill; sized
/// once, never touched by the vocabulary dimension.
#[derive(Debug, Default)]
pub struct ScoreScratch {
    pooled: Vec<f64>,
    emb: Vec<f64>,
    att_scores: Vec<f64>,
    weights: Vec<f64>,
}

impl ScoreScratch {
    fn prepare(
        &mut self,
        params: &AcousticParams,
        frames: &FrameFeatures,
        max_dur: usize,
    ) {
        self.pooled.resize(params.pooled_dim(), 0.0);
        self.emb.resize(params.embed_dim(), 0.0);
        self.weights.resize(max_dur, 0.0);
        if params.pooling == Pooling::Attention {
            let g = params.attention.as_ref().unwrap();
            self.att_scores.resize(frames.num_frames(), 0.0);
            for t in 0..frames.num_frames() {
                self.att_scores[t] = dot(g.as_slice().unwrap(), frames.row(t));
            }
        }
    }
}

/// Embed one span into `out` (length `D`), reusing `scratch`.
fn embed_into(
    params: &AcousticParams,
    frames: &FrameFeatures,
    t: usize,
    s: usize,
    scratch: &mut ScoreScratch,
    out: &mut [f64],
) {
    pool_into(
        params.pooling,
        frames,
        t,
        s,
        &scratch.att_scores,
        &mut scratch.weights,
        &mut scratch.pooled,
    );
    mat_vec_bias(
        params.a1.as_slice().unwrap(),
        params.embed_dim(),
        params.pooled_dim(),
        &scratch.pooled,
        params.b1.as_slice().unwrap(),
        out,
    );
    for o in out.iter_mut() {
        if *o < 0.0 {
            *o = 0.0;
        }
    }
}

/// Fill `out` with `w[t, s, v] = a2[v] · f(t, s) + b2[v]` for every valid
/// cell. The only working memory is `scratch`, whose size depends on
/// `T`, `F`, `S`, and `D` but not on the vocabulary; growing `V` only grows
/// the output itself.
pub fn score_lattice_into(
    params: &SegmentScorerParams,
    frames: &FrameFeatures,
    out: &mut ScoreLattice,
    scratch: &mut ScoreScratch,
) {
    params.check_shapes();
    assert_eq!(out.num_timesteps(), frames.num_frames(), "lattice T");
    assert_eq!(out.vocab_size(), params.vocab_size(), "lattice V");
    assert_eq!(params.acoustic.frame_dim(), frames.dim(), "frame dim");
    let t_len = frames.num_frames();
    let max_dur = out.max_duration();
    let d_dim = params.embed_dim();
    let v_dim = params.vocab_size();
    scratch.prepare(&params.acoustic, frames, max_dur);
    let a2 = params.a2.as_slice().unwrap();
    let b2 = params.b2.as_slice().unwrap();
    // embed_into borrows the scratch mutably, so lend it the embedding
    // buffer separately for the duration of the fill.
    let mut emb = std::mem::take(&mut scratch.emb);
    for t in 0..t_len {
        for s in 1..=max_dur.min(t_len - t) {
            embed_into(&params.acoustic, frames, t, s, scratch, &mut emb);
            for v in 0..v_dim {
                let score = b2[v] + dot(&a2[v * d_dim..(v + 1) * d_dim], &emb);
                out.set(t, s, v, score);
            }
        }
    }
    scratch.emb = emb;
}

/// Allocate-and-fill convenience wrapper around [`score_lattice_into`].
pub fn score_lattice(
    params: &SegmentScorerParams,
    frames: &FrameFeatures,
    max_dur: usize,
) -> ScoreLattice {
    let mut out = ScoreLattice::filled(
        frames.num_frames(),
        max_dur,
        params.vocab_size(),
        f64::NEG_INFINITY,
    );
    let mut scratch = ScoreScratch::default();
    score_lattice_into(params, frames, &mut out, &mut scratch);
    out
}

/// Word-independent segment embeddings for every valid span.
pub fn embed_segments(
    params: &AcousticParams,
    frames: &FrameFeatures,
    max_dur: usize,
) -> SegmentEmbeddings {
    params.check_shapes();
    let t_len = frames.num_frames();
    let d_dim = params.embed_dim();
    let mut e = Array3::zeros((t_len, max_dur, d_dim));
    let mut scratch = ScoreScratch::default();
    scratch.prepare(params, frames, max_dur);
    let mut buf = vec![0.0; d_dim];
    for t in 0..t_len {
        for s in 1..=max_dur.min(t_len - t) {
            embed_into(params, frames, t, s, &mut scratch, &mut buf);
            for (d, &val) in buf.iter().enumerate() {
                e[[t, s - 1, d]] = val;
            }
        }
    }
    SegmentEmbeddings { e }
}

/// Straight-line reference implementation of the lattice fill: one segment
/// at a time, whole-array ndarray arithmetic, no shared scratch. Slow and
/// allocation-happy on purpose; the fast path is tested against it.
pub fn naive_score_lattice(
    params: &SegmentScorerParams,
    frames: &FrameFeatures,
    max_dur: usize,
) -> ScoreLattice {
    params.check_shapes();
    let t_len = frames.num_frames();
    ScoreLattice::from_fn(t_len, max_dur, params.vocab_size(), |t, s, v| {
        let h = frames.view();
        let pooled: Array1<f64> = match params.acoustic.pooling {
            Pooling::Concat => {
                let mut p = Array1::zeros(2 * frames.dim());
                p.slice_mut(ndarray::s![..frames.dim()])
                    .assign(&h.row(t));
                p.slice_mut(ndarray::s![frames.dim()..])
                    .assign(&h.row(t + s - 1));
                p
            }
            Pooling::Mean => h
                .slice(ndarray::s![t..t + s, ..])
                .mean_axis(ndarray::Axis(0))
                .unwrap(),
            Pooling::Attention => {
                let g = params.acoustic.attention.as_ref().unwrap();
                let span = h.slice(ndarray::s![t..t + s, ..]);
                let scores = span.dot(g);
                let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let weights = scores.mapv(|x| (x - max).exp());
                let weights = &weights / weights.sum();
                weights.dot(&span)
            }
        };
        let pre = params.acoustic.a1.dot(&pooled) + &params.acoustic.b1;
        let emb = pre.mapv(|x| x.max(0.0));
        params.a2.row(v).dot(&emb) + params.b2[v]
    })
}

/// Gradients for the acoustic half of the scorer.
#[derive(Debug, Clone, PartialEq)]
pub struct AcousticGrads {
    pub a1: Array2<f64>,
    pub b1: Array1<f64>,
    pub attention: Option<Array1<f64>>,
}

impl AcousticGrads {
    pub fn zeros_like(params: &AcousticParams) -> Self {
        AcousticGrads {
            a1: Array2::zeros(params.a1.dim()),
            b1: Array1::zeros(params.b1.len()),
            attention: params.attention.as_ref().map(|g| Array1::zeros(g.len())),
        }
    }

    /// Same ordering as [`AcousticParams::tensors_mut`].
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = vec![
            self.a1.as_slice().unwrap(),
            self.b1.as_slice().unwrap(),
        ];
        if let Some(g) = &self.attention {
            out.push(g.as_slice().unwrap());
        }
        out
    }

    pub fn scale(&mut self, c: f64) {
        self.a1.mapv_inplace(|x| x * c);
        self.b1.mapv_inplace(|x| x * c);
        if let Some(g) = &mut self.attention {
            g.mapv_inplace(|x| x * c);
        }
    }
}

/// Gradients of a scalar objective with respect to every scorer parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct ScorerGrads {
    pub acoustic: AcousticGrads,
    pub a2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl ScorerGrads {
    pub fn zeros_like(params: &SegmentScorerParams) -> Self {
        ScorerGrads {
            acoustic: AcousticGrads::zeros_like(&params.acoustic),
            a2: Array2::zeros(params.a2.dim()),
            b2: Array1::zeros(params.b2.len()),
        }
    }

    /// Same ordering as [`SegmentScorerParams::tensors_mut`].
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = self.acoustic.tensors();
        out.push(self.a2.as_slice().unwrap());
        out.push(self.b2.as_slice().unwrap());
        out
    }

    pub fn add(&mut self, other: &ScorerGrads) {
        self.acoustic.a1 += &other.acoustic.a1;
        self.acoustic.b1 += &other.acoustic.b1;
        if let (Some(g), Some(o)) = (&mut self.acoustic.attention, &other.acoustic.attention) {
            *g += o;
        }
        self.a2 += &other.a2;
        self.b2 += &other.b2;
    }

    pub fn scale(&mut self, c: f64) {
        self.acoustic.scale(c);
        self.a2.mapv_inplace(|x| x * c);
        self.b2.mapv_inplace(|x| x * c);
    }
}

/// Embed a single span on its own (used by the embedding pre-training,
/// where each training pair is one whole segment).
pub fn embed_span(
    params: &AcousticParams,
    frames: &FrameFeatures,
    t: usize,
    s: usize,
) -> Array1<f64> {
    params.check_shapes();
    let mut scratch = ScoreScratch::default();
    scratch.prepare(params, frames, s);
    let mut out = vec![0.0; params.embed_dim()];
    embed_into(params, frames, t, s, &mut scratch, &mut out);
    Array1::from_vec(out)
}

/// Backpropagate a gradient at the embedding output of one span, adding into
/// `grads` and (optionally) the frame gradient.
pub fn embed_span_backprop(
    params: &AcousticParams,
    frames: &FrameFeatures,
    t: usize,
    s: usize,
    demb: &[f64],
    grads: &mut AcousticGrads,
    mut grad_h: Option<&mut Array2<f64>>,
) {
    params.check_shapes();
    let d_dim = params.embed_dim();
    let p_dim = params.pooled_dim();
    let mut scratch = ScoreScratch::default();
    scratch.prepare(params, frames, s);
    pool_into(
        params.pooling,
        frames,
        t,
        s,
        &scratch.att_scores,
        &mut scratch.weights,
        &mut scratch.pooled,
    );
    let mut pre = vec![0.0; d_dim];
    mat_vec_bias(
        params.a1.as_slice().unwrap(),
        d_dim,
        p_dim,
        &scratch.pooled,
        params.b1.as_slice().unwrap(),
        &mut pre,
    );
    let mut dpre = demb.to_vec();
    let mut dpooled = vec![0.0; p_dim];
    span_backprop(
        params,
        frames,
        t,
        s,
        &pre,
        &mut dpre,
        &mut dpooled,
        &scratch,
        grads,
        grad_h.as_deref_mut(),
    );
}

/// Shared tail of the backward pass for one span: takes the gradient at the
/// ReLU output (`dpre`, which it masks in place), and pushes it through the
/// first layer and the pooling. `pre` and `scratch` must hold the recomputed
/// forward state for this span.
#[allow(clippy::too_many_arguments)]
fn span_backprop(
    params: &AcousticParams,
    frames: &FrameFeatures,
    t: usize,
    s: usize,
    pre: &[f64],
    dpre: &mut [f64],
    dpooled: &mut [f64],
    scratch: &ScoreScratch,
    grads: &mut AcousticGrads,
    grad_h: Option<&mut Array2<f64>>,
) {
    let d_dim = params.embed_dim();
    let p_dim = params.pooled_dim();
    let f_dim = frames.dim();
    let a1 = params.a1.as_slice().unwrap();

    for d in 0..d_dim {
        if pre[d] <= 0.0 {
            dpre[d] = 0.0;
        }
    }
    {
        let ga1 = grads.a1.as_slice_mut().unwrap();
        let gb1 = grads.b1.as_slice_mut().unwrap();
        for d in 0..d_dim {
            let gd = dpre[d];
            if gd == 0.0 {
                continue;
            }
            gb1[d] += gd;
            axpy(gd, &scratch.pooled, &mut ga1[d * p_dim..(d + 1) * p_dim]);
        }
    }
    dpooled.fill(0.0);
    mat_t_vec_add(a1, d_dim, p_dim, dpre, dpooled);

    let Some(grad_h) = grad_h else {
        // Frame gradients not requested; attention still needs its own grad.
        if params.pooling == Pooling::Attention {
            let mut davg = 0.0;
            let mut dalpha = vec![0.0; s];
            for i in 0..s {
                dalpha[i] = dot(dpooled, frames.row(t + i));
                davg += scratch.weights[i] * dalpha[i];
            }
            let gatt = grads.attention.as_mut().unwrap().as_slice_mut().unwrap();
            for i in 0..s {
                let dlogit = scratch.weights[i] * (dalpha[i] - davg);
                axpy(dlogit, frames.row(t + i), gatt);
            }
        }
        return;
    };

    match params.pooling {
        Pooling::Concat => {
            axpy(1.0, &dpooled[..f_dim], grad_h.row_mut(t).into_slice().unwrap());
            axpy(
                1.0,
                &dpooled[f_dim..],
                grad_h.row_mut(t + s - 1).into_slice().unwrap(),
            );
        }
        Pooling::Mean => {
            let inv = 1.0 / s as f64;
            for r in t..t + s {
                axpy(inv, dpooled, grad_h.row_mut(r).into_slice().unwrap());
            }
        }
        Pooling::Attention => {
            let g = params.attention.as_ref().unwrap();
            let gs = g.as_slice().unwrap();
            let mut davg = 0.0;
            let mut dalpha = vec![0.0; s];
            for i in 0..s {
                dalpha[i] = dot(dpooled, frames.row(t + i));
                davg += scratch.weights[i] * dalpha[i];
            }
            let gatt = grads.attention.as_mut().unwrap().as_slice_mut().unwrap();
            for i in 0..s {
                let w_i = scratch.weights[i];
                let dlogit = w_i * (dalpha[i] - davg);
                axpy(dlogit, frames.row(t + i), gatt);
                let hrow = grad_h.row_mut(t + i).into_slice().unwrap();
                axpy(w_i, dpooled, hrow);
                axpy(dlogit, gs, hrow);
            }
        }
    }
}

/// Backpropagate a lattice-shaped upstream gradient (`dJ/dw[t,s,v]`) through
/// the scorer, producing parameter gradients and the gradient with respect
/// to the input frames.
pub fn score_backprop(
    params: &SegmentScorerParams,
    frames: &FrameFeatures,
    grad_w: &Array3<f64>,
) -> (ScorerGrads, Array2<f64>) {
    params.check_shapes();
    let t_len = frames.num_frames();
    let f_dim = frames.dim();
    let (gt, max_dur, gv) = grad_w.dim();
    assert_eq!(gt, t_len, "grad lattice T");
    assert_eq!(gv, params.vocab_size(), "grad lattice V");
    let d_dim = params.embed_dim();
    let p_dim = params.acoustic.pooled_dim();

    let mut grads = ScorerGrads::zeros_like(params);
    let mut grad_h = Array2::zeros((t_len, f_dim));

    let mut scratch = ScoreScratch::default();
    scratch.prepare(&params.acoustic, frames, max_dur);
    let a1 = params.acoustic.a1.as_slice().unwrap();
    let a2 = params.a2.as_slice().unwrap();
    let mut pre = vec![0.0; d_dim];
    let mut demb = vec![0.0; d_dim];
    let mut dpooled = vec![0.0; p_dim];
    let gw = grad_w.as_slice().unwrap();

    for t in 0..t_len {
        for s in 1..=max_dur.min(t_len - t) {
            let grow = &gw[(t * max_dur + (s - 1)) * gv..(t * max_dur + s) * gv];
            if grow.iter().all(|&g| g == 0.0) {
                continue;
            }
            // Recompute the forward pass for this span.
            pool_into(
                params.acoustic.pooling,
                frames,
                t,
                s,
                &scratch.att_scores,
                &mut scratch.weights,
                &mut scratch.pooled,
            );
            mat_vec_bias(
                a1,
                d_dim,
                p_dim,
                &scratch.pooled,
                params.acoustic.b1.as_slice().unwrap(),
                &mut pre,
            );

            // Output layer: scores = a2 · emb + b2 with emb = relu(pre).
            demb.fill(0.0);
            {
                let ga2 = grads.a2.as_slice_mut().unwrap();
                let gb2 = grads.b2.as_slice_mut().unwrap();
                for v in 0..gv {
                    let g = grow[v];
                    if g == 0.0 {
                        continue;
                    }
                    gb2[v] += g;
                    let row = &a2[v * d_dim..(v + 1) * d_dim];
                    for d in 0..d_dim {
                        let emb_d = pre[d].max(0.0);
                        ga2[v * d_dim + d] += g * emb_d;
                        demb[d] += g * row[d];
                    }
                }
            }

            // ReLU, first layer and pooling share the span tail.
            span_backprop(
                &params.acoustic,
                frames,
                t,
                s,
                &pre,
                &mut demb,
                &mut dpooled,
                &scratch,
                &mut grads.acoustic,
                Some(&mut grad_h),
            );
        }
    }
    (grads, grad_h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dp::{loss_and_gradient, marginal_log_loss};
    use crate::lattice::LabelSequence;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_frames<R: Rng>(t: usize, f: usize, rng: &mut R) -> FrameFeatures {
        FrameFeatures::new(Array2::from_shape_fn((t, f), |_| rng.random_range(-1.0..1.0)))
    }

    fn all_poolings() -> [Pooling; 3] {
        [Pooling::Concat, Pooling::Mean, Pooling::Attention]
    }

    #[test]
    fn fast_fill_matches_naive_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        for pooling in all_poolings() {
            let params = SegmentScorerParams::random(pooling, 4, 5, 7, &mut rng);
            let frames = random_frames(9, 4, &mut rng);
            let fast = score_lattice(&params, &frames, 3);
            let naive = naive_score_lattice(&params, &frames, 3);
            for t in 0..9 {
                for s in 1..=3usize.min(9 - t) {
                    for v in 0..7 {
                        assert!(
                            (fast.get(t, s, v) - naive.get(t, s, v)).abs() < 1e-12,
                            "{pooling:?} cell ({t},{s},{v})"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn lattice_factors_through_segment_embeddings() {
        let mut rng = ChaCha8Rng::seed_from_u64(103);
        for pooling in all_poolings() {
            let params = SegmentScorerParams::random(pooling, 3, 6, 5, &mut rng);
            let frames = random_frames(8, 3, &mut rng);
            let w = score_lattice(&params, &frames, 4);
            let emb = embed_segments(&params.acoustic, &frames, 4);
            for t in 0..8 {
                for s in 1..=4usize.min(8 - t) {
                    let e = emb.get(t, s);
                    for v in 0..5 {
                        let re =
                            dot(params.a2.row(v).to_slice().unwrap(), e) + params.b2[v];
                        assert!(
                            (w.get(t, s, v) - re).abs() < 1e-12,
                            "{pooling:?} ({t},{s},{v})"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn attention_weights_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(107);
        let params = AcousticParams::random(Pooling::Attention, 3, 4, &mut rng);
        let frames = random_frames(6, 3, &mut rng);
        let mut scratch = ScoreScratch::default();
        scratch.prepare(&params, &frames, 4);
        for t in 0..6 {
            for s in 1..=4usize.min(6 - t) {
                let mut out = vec![0.0; 3];
                let scores = scratch.att_scores.clone();
                pool_into(
                    Pooling::Attention,
                    &frames,
                    t,
                    s,
                    &scores,
                    &mut scratch.weights,
                    &mut out,
                );
                let sum: f64 = scratch.weights[..s].iter().sum();
                assert!((sum - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_frame_spans_pool_to_the_frame_itself() {
        // Mean and attention agree on s = 1, concat duplicates the frame.
        let mut rng = ChaCha8Rng::seed_from_u64(109);
        let frames = random_frames(4, 3, &mut rng);
        let g = Array1::from_vec(vec![0.3, -0.2, 0.9]);
        let mut weights = vec![0.0; 2];
        let scores: Vec<f64> = (0..4).map(|t| dot(g.as_slice().unwrap(), frames.row(t))).collect();
        for t in 0..4 {
            let mut mean = vec![0.0; 3];
            pool_into(Pooling::Mean, &frames, t, 1, &[], &mut weights, &mut mean);
            assert_eq!(mean, frames.row(t));
            let mut att = vec![0.0; 3];
            pool_into(Pooling::Attention, &frames, t, 1, &scores, &mut weights, &mut att);
            for (a, b) in att.iter().zip(frames.row(t)) {
                assert!((a - b).abs() < 1e-15);
            }
            let mut cat = vec![0.0; 6];
            pool_into(Pooling::Concat, &frames, t, 1, &[], &mut weights, &mut cat);
            assert_eq!(&cat[..3], frames.row(t));
            assert_eq!(&cat[3..], frames.row(t));
        }
    }

    #[test]
    fn span_embedding_matches_table_and_backprops() {
        let mut rng = ChaCha8Rng::seed_from_u64(127);
        for pooling in all_poolings() {
            let params = AcousticParams::random(pooling, 3, 4, &mut rng);
            let frames = random_frames(6, 3, &mut rng);
            let table = embed_segments(&params, &frames, 3);
            for t in 0..6 {
                for s in 1..=3usize.min(6 - t) {
                    let single = embed_span(&params, &frames, t, s);
                    for (a, b) in single.iter().zip(table.get(t, s)) {
                        assert!((a - b).abs() < 1e-14);
                    }
                }
            }

            // J = c · embed_span(t, s); check every parameter against FD.
            let c: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (t, s) = (1usize, 3usize);
            let objective = |p: &AcousticParams, h: &FrameFeatures| {
                dot(&c, embed_span(p, h, t, s).as_slice().unwrap())
            };
            let mut grads = AcousticGrads::zeros_like(&params);
            let mut grad_h = Array2::zeros((6, 3));
            embed_span_backprop(&params, &frames, t, s, &c, &mut grads, Some(&mut grad_h));
            let h = 1e-6;
            for &(i, j) in &[(0usize, 0usize), (2, 1), (3, 2)] {
                let mut p = params.clone();
                p.a1[[i, j]] += h;
                let mut m = params.clone();
                m.a1[[i, j]] -= h;
                let fd = (objective(&p, &frames) - objective(&m, &frames)) / (2.0 * h);
                assert!((grads.a1[[i, j]] - fd).abs() < 1e-6, "{pooling:?} a1");
            }
            for &(r, cc) in &[(1usize, 0usize), (3, 2)] {
                let mut hp = frames.clone();
                hp.h[[r, cc]] += h;
                let mut hm = frames.clone();
                hm.h[[r, cc]] -= h;
                let fd = (objective(&params, &hp) - objective(&params, &hm)) / (2.0 * h);
                assert!((grad_h[[r, cc]] - fd).abs() < 1e-6, "{pooling:?} frames");
            }
            if let Some(g) = &grads.attention {
                for i in 0..3 {
                    let mut p = params.clone();
                    p.attention.as_mut().unwrap()[i] += h;
                    let mut m = params.clone();
                    m.attention.as_mut().unwrap()[i] -= h;
                    let fd = (objective(&p, &frames) - objective(&m, &frames)) / (2.0 * h);
                    assert!((g[i] - fd).abs() < 1e-6, "{pooling:?} attention");
                }
            }
        }
    }

    /// End-to-end objective for finite differences: marginal loss of the
    /// scored lattice against a fixed reference.
    fn objective(params: &SegmentScorerParams, frames: &FrameFeatures, labels: &LabelSequence) -> f64 {
        marginal_log_loss(&score_lattice(params, frames, 3), labels).loss
    }

    #[test]
    fn backprop_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(113);
        let labels = LabelSequence::new(vec![1, 0, 2]);
        for pooling in all_poolings() {
            let params = SegmentScorerParams::random(pooling, 3, 4, 3, &mut rng);
            let frames = random_frames(7, 3, &mut rng);
            let w = score_lattice(&params, &frames, 3);
            let (loss, gw) = loss_and_gradient(&w, &labels);
            assert!(!loss.infeasible);
            let (grads, grad_h) = score_backprop(&params, &frames, &gw);

            let h = 1e-6;
            let fd = |plus: &SegmentScorerParams, minus: &SegmentScorerParams| {
                (objective(plus, &frames, &labels) - objective(minus, &frames, &labels))
                    / (2.0 * h)
            };

            // A few entries of every parameter tensor.
            for &(i, j) in &[(0usize, 0usize), (1, 2), (3, 1)] {
                let mut p = params.clone();
                p.acoustic.a1[[i, j]] += h;
                let mut m = params.clone();
                m.acoustic.a1[[i, j]] -= h;
                assert!(
                    (grads.acoustic.a1[[i, j]] - fd(&p, &m)).abs() < 2e-5,
                    "{pooling:?} a1[{i},{j}]: {} vs {}",
                    grads.acoustic.a1[[i, j]],
                    fd(&p, &m)
                );
            }
            for i in 0..4 {
                let mut p = params.clone();
                p.acoustic.b1[i] += h;
                let mut m = params.clone();
                m.acoustic.b1[i] -= h;
                assert!((grads.acoustic.b1[i] - fd(&p, &m)).abs() < 2e-5, "{pooling:?} b1[{i}]");
            }
            for &(i, j) in &[(0usize, 0usize), (2, 3)] {
                let mut p = params.clone();
                p.a2[[i, j]] += h;
                let mut m = params.clone();
                m.a2[[i, j]] -= h;
                assert!((grads.a2[[i, j]] - fd(&p, &m)).abs() < 2e-5, "{pooling:?} a2");
            }
            for i in 0..3 {
                let mut p = params.clone();
                p.b2[i] += h;
                let mut m = params.clone();
                m.b2[i] -= h;
                assert!((grads.b2[i] - fd(&p, &m)).abs() < 2e-5, "{pooling:?} b2[{i}]");
            }
            if let Some(gatt) = &grads.acoustic.attention {
                for i in 0..3 {
                    let mut p = params.clone();
                    p.acoustic.attention.as_mut().unwrap()[i] += h;
                    let mut m = params.clone();
                    m.acoustic.attention.as_mut().unwrap()[i] -= h;
                    assert!((gatt[i] - fd(&p, &m)).abs() < 2e-5, "attention[{i}]");
                }
            }
            // Input frames.
            for &(r, c) in &[(0usize, 0usize), (3, 2), (6, 1)] {
                let mut hp = frames.clone();
                hp.h[[r, c]] += h;
                let mut hm = frames.clone();
                hm.h[[r, c]] -= h;
                let fdh = (objective(&params, &hp, &labels)
                    - objective(&params, &hm, &labels))
                    / (2.0 * h);
                assert!(
                    (grad_h[[r, c]] - fdh).abs() < 2e-5,
                    "{pooling:?} frames[{r},{c}]: {} vs {}",
                    grad_h[[r, c]],
                    fdh
                );
            }
        }
    }
}
