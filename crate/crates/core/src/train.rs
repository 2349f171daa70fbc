//! End-to-end desk-scale training: a small pluggable frame encoder in front
//! of the factored segment scorer, marginal-log-loss batches with the
//! per-batch max-segment cap, Adam with dev-WER plateau halving, and the
//! reproducible per-epoch metric log.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dp::{loss_and_gradient, viterbi};
use crate::lattice::{LabelSequence, Segmentation, Vocabulary};
use crate::optim::Adam;
use crate::pretrain::{transfer_init, AcousticViewEmbedder, WrittenViewEmbedder};
use crate::scorer::{
    score_backprop, score_lattice, FrameFeatures, Pooling, ScorerGrads,
    SegmentScorerParams,
};
use crate::synth::Dataset;
use crate::wer::{corpus_wer, wer, WerAlignment};

/// Stack successive frame pairs: `T×F0 → ⌈T/2⌉×2F0`, odd tail zero-padded.
/// The second value reports whether padding happened.
pub fn stack_frames(x: &Array2<f64>) -> (Array2<f64>, bool) {
    let (t, f) = x.dim();
    assert!(t >= 1, "cannot stack an empty frame sequence");
    let rows = t.div_ceil(2);
    let mut out = Array2::zeros((rows, 2 * f));
    for k in 0..rows {
        out.slice_mut(ndarray::s![k, ..f]).assign(&x.row(2 * k));
        if 2 * k + 1 < t {
            out.slice_mut(ndarray::s![k, f..]).assign(&x.row(2 * k + 1));
        }
    }
    (out, t % 2 == 1)
}

/// Per-batch effective max segment size:
/// `S_eff = min(2 · max_batch ⌈T/|L|⌉, S_config)`, where T is the length the
/// lattice will actually see (post-encoder).
pub fn batch_cap_segments(shapes: &[(usize, usize)], s_config: usize) -> usize {
    let worst = shapes
        .iter()
        .map(|&(t, l)| {
            assert!(l >= 1, "utterances carry at least one word");
            t.div_ceil(l)
        })
        .max()
        .unwrap_or(1);
    (2 * worst).min(s_config).max(1)
}

/// Linear frame map with optional temporal average pooling and dropout.
/// Evaluation mode is deterministic; dropout only applies when a training
/// RNG is supplied.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyEncoder {
    /// `F_out × F_in`.
    pub w: Array2<f64>,
    pub b: Array1<f64>,
    /// Temporal average-pooling stride; 1 disables pooling.
    pub stride: usize,
    /// Dropout rate on the linear output.
    pub dropout: f64,
}

/// Bookkeeping from a traced forward pass, enough to backpropagate.
#[derive(Debug, Clone)]
pub struct EncoderTrace {
    mask: Option<Array2<f64>>,
    t_in: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderGrads {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl ToyEncoder {
    pub fn random<R: Rng>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let scale = 1.0 / (in_dim as f64).sqrt();
        ToyEncoder {
            w: Array2::from_shape_fn((out_dim, in_dim), |_| rng.random_range(-scale..scale)),
            b: Array1::zeros(out_dim),
            stride: 1,
            dropout: 0.0,
        }
    }

    /// Pass-through initialization, the natural start when the scorer was
    /// pre-trained directly on the raw features.
    pub fn identity(dim: usize) -> Self {
        ToyEncoder {
            w: Array2::eye(dim),
            b: Array1::zeros(dim),
            stride: 1,
            dropout: 0.0,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.w.nrows()
    }

    /// Output length for an input of `t` frames.
    pub fn out_len(&self, t: usize) -> usize {
        t.div_ceil(self.stride)
    }

    /// Forward pass. `dropout_rng: None` is evaluation mode.
    pub fn encode_traced(
        &self,
        x: &Array2<f64>,
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> (FrameFeatures, EncoderTrace) {
        assert!(self.stride >= 1);
        assert_eq!(x.ncols(), self.in_dim(), "encoder input dim");
        let t = x.nrows();
        let mut y = x.dot(&self.w.t());
        y += &self.b;
        let mask = match dropout_rng {
            Some(rng) if self.dropout > 0.0 => {
                let keep = 1.0 - self.dropout;
                let mask = Array2::from_shape_fn(y.dim(), |_| {
                    if rng.random::<f64>() < keep {
                        1.0 / keep
                    } else {
                        0.0
                    }
                });
                y *= &mask;
                Some(mask)
            }
            _ => None,
        };
        let out = if self.stride == 1 {
            y
        } else {
            let rows = self.out_len(t);
            let mut pooled = Array2::zeros((rows, self.out_dim()));
            for k in 0..rows {
                let lo = k * self.stride;
                let hi = ((k + 1) * self.stride).min(t);
                pooled
                    .row_mut(k)
                    .assign(&y.slice(ndarray::s![lo..hi, ..]).mean_axis(Axis(0)).unwrap());
            }
            pooled
        };
        (FrameFeatures::new(out), EncoderTrace { mask, t_in: t })
    }

    pub fn encode(&self, x: &Array2<f64>) -> FrameFeatures {
        self.encode_traced(x, None).0
    }

    /// Accumulate parameter gradients given the upstream gradient on the
    /// encoder output.
    pub fn backprop(
        &self,
        x: &Array2<f64>,
        trace: &EncoderTrace,
        d_out: &Array2<f64>,
        grads: &mut EncoderGrads,
    ) {
        let t = trace.t_in;
        assert_eq!(x.nrows(), t);
        let mut dy = if self.stride == 1 {
            d_out.clone()
        } else {
            let mut dy = Array2::zeros((t, self.out_dim()));
            for k in 0..d_out.nrows() {
                let lo = k * self.stride;
                let hi = ((k + 1) * self.stride).min(t);
                let share = 1.0 / (hi - lo) as f64;
                for i in lo..hi {
                    dy.row_mut(i).assign(&(&d_out.row(k) * share));
                }
            }
            dy
        };
        if let Some(mask) = &trace.mask {
            dy *= mask;
        }
        grads.w += &dy.t().dot(x);
        grads.b += &dy.sum_axis(Axis(0));
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.w.as_slice_mut().unwrap(), self.b.as_slice_mut().unwrap()]
    }

    pub fn tensor_lens(&self) -> Vec<usize> {
        vec![self.w.len(), self.b.len()]
    }
}

impl EncoderGrads {
    pub fn zeros_like(encoder: &ToyEncoder) -> Self {
        EncoderGrads {
            w: Array2::zeros(encoder.w.dim()),
            b: Array1::zeros(encoder.b.len()),
        }
    }

    /// Same ordering as [`ToyEncoder::tensors_mut`].
    pub fn tensors(&self) -> Vec<&[f64]> {
        vec![self.w.as_slice().unwrap(), self.b.as_slice().unwrap()]
    }

    pub fn add(&mut self, other: &EncoderGrads) {
        self.w += &other.w;
        self.b += &other.b;
    }

    pub fn scale(&mut self, c: f64) {
        self.w.mapv_inplace(|x| x * c);
        self.b.mapv_inplace(|x| x * c);
    }
}

/// Dropout defaults keyed to vocabulary size, the paper's 5k/10k/20k table
/// carried down two orders of magnitude.
pub fn default_dropout(vocab_size: usize) -> f64 {
    if vocab_size < 100 {
        0.25
    } else if vocab_size < 200 {
        0.35
    } else {
        0.45
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub max_segment: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub epochs: usize,
    /// `None` picks the vocabulary-size default.
    pub dropout: Option<f64>,
    /// Weight of the embedding-regularization term; 0 disables it.
    pub lambda: f64,
    /// Stack successive input frame pairs before the encoder.
    pub stack: bool,
    /// Encoder average-pooling stride.
    pub stride: usize,
    /// Epochs without dev-WER improvement before the rate halves.
    pub plateau_patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_segment: 32,
            batch_size: 16,
            lr: 0.001,
            epochs: 10,
            dropout: None,
            lambda: 0.0,
            stack: false,
            stride: 1,
            plateau_patience: 1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub enum Init {
    Random {
        encoder_dim: usize,
        embed_dim: usize,
        pooling: Pooling,
    },
    Pretrained {
        acoustic: AcousticViewEmbedder,
        written: WrittenViewEmbedder,
    },
}

impl Init {
    pub fn label(&self) -> &'static str {
        match self {
            Init::Random { .. } => "random",
            Init::Pretrained { .. } => "pretrained",
        }
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("training diverged (non-finite loss) at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },
    #[error("training and dev sets must both be non-empty")]
    EmptyDataset,
    #[error("lambda {0} outside [0, 1]")]
    BadLambda(f64),
    #[error("embedding regularization needs a pretrained init")]
    LambdaNeedsInit,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub dev_wer: f64,
    pub lr: f64,
}

impl EpochMetrics {
    pub fn render(&self) -> String {
        format!(
            "{}\t{:.6}\t{:.6}\t{:.8}",
            self.epoch, self.loss, self.dev_wer, self.lr
        )
    }
}

pub fn render_metric_log(log: &[EpochMetrics]) -> String {
    let mut out = String::from("epoch\tloss\tdev_wer\tlr\n");
    for m in log {
        out.push_str(&m.render());
        out.push('\n');
    }
    out
}

pub fn write_metric_log(path: &Path, log: &[EpochMetrics]) -> io::Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(render_metric_log(log).as_bytes())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters at the best dev-WER epoch.
    pub params: SegmentScorerParams,
    pub encoder: ToyEncoder,
    pub log: Vec<EpochMetrics>,
    pub best_dev_wer: f64,
    pub best_epoch: usize,
    pub init_label: String,
    /// Utterances skipped because their label sequence could not tile the
    /// encoded length.
    pub infeasible_skipped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineGrads {
    pub encoder: EncoderGrads,
    pub scorer: ScorerGrads,
}

impl PipelineGrads {
    pub fn zeros_like(encoder: &ToyEncoder, params: &SegmentScorerParams) -> Self {
        PipelineGrads {
            encoder: EncoderGrads::zeros_like(encoder),
            scorer: ScorerGrads::zeros_like(params),
        }
    }
}

/// Loss and gradients for one utterance through the whole pipeline
/// (encoder → scorer → marginal log loss, plus the optional embedding
/// regularizer). Gradients accumulate into `grads`. Returns the total loss
/// and whether the utterance was infeasible (in which case nothing is
/// accumulated and the loss is +inf). A numerically broken lattice
/// (non-finite scores) comes back as a NaN loss that is *not* flagged
/// infeasible, so callers can tell divergence from structural infeasibility.
#[allow(clippy::too_many_arguments)]
pub fn utterance_loss_and_grads(
    encoder: &ToyEncoder,
    params: &SegmentScorerParams,
    g_table: Option<&Array2<f64>>,
    lambda: f64,
    frames: &Array2<f64>,
    labels: &LabelSequence,
    s_eff: usize,
    dropout_rng: Option<&mut ChaCha8Rng>,
    grads: &mut PipelineGrads,
) -> (f64, bool) {
    let (encoded, trace) = encoder.encode_traced(frames, dropout_rng);
    let t = encoded.num_frames();
    let w = score_lattice(params, &encoded, s_eff.min(t).max(1));
    if !w.all_valid_finite() {
        return (f64::NAN, false);
    }
    let (marginal, mut grad_w) = loss_and_gradient(&w, labels);
    if marginal.infeasible {
        return (f64::INFINITY, true);
    }
    let mut total = marginal.loss;
    if lambda > 0.0 {
        grad_w.mapv_inplace(|g| g * (1.0 - lambda));
        total *= 1.0 - lambda;
    }
    let (sgrads, grad_h) = score_backprop(params, &encoded, &grad_w);
    grads.scorer.add(&sgrads);
    if lambda > 0.0 {
        let g_table = g_table.expect("lambda > 0 requires the embedding table");
        for &v in labels.as_slice() {
            let diff = (&params.a2.row(v) - &g_table.row(v)).to_owned();
            total += lambda * diff.dot(&diff);
            let mut row = grads.scorer.a2.row_mut(v);
            row += &(&diff * (2.0 * lambda));
        }
    }
    encoder.backprop(frames, &trace, &grad_h, &mut grads.encoder);
    (total, false)
}

/// Evaluation-mode decode of one (already stacked) utterance.
pub fn decode_utterance(
    encoder: &ToyEncoder,
    params: &SegmentScorerParams,
    frames: &Array2<f64>,
    s_max: usize,
) -> (LabelSequence, Segmentation, f64) {
    let encoded = encoder.encode(frames);
    let t = encoded.num_frames();
    let w = score_lattice(params, &encoded, s_max.min(t).max(1));
    let result = viterbi(&w);
    (result.path.labels_unchecked(), result.path, result.score)
}

/// Dev-set word error rate together with the per-utterance alignments.
pub fn evaluate_wer(
    encoder: &ToyEncoder,
    params: &SegmentScorerParams,
    inputs: &[Array2<f64>],
    references: &[&LabelSequence],
    s_max: usize,
) -> (f64, Vec<WerAlignment>) {
    let mut alignments = Vec::with_capacity(inputs.len());
    let mut ref_words = 0usize;
    for (x, reference) in inputs.iter().zip(references) {
        let (hyp, _, _) = decode_utterance(encoder, params, x, s_max);
        ref_words += reference.as_slice().len();
        alignments.push(
            wer(hyp.as_slice(), reference.as_slice()).expect("references are non-empty"),
        );
    }
    (corpus_wer(&alignments, ref_words), alignments)
}

fn prepare_inputs(data: &Dataset, stack: bool) -> Vec<Array2<f64>> {
    data.utterances
        .iter()
        .map(|u| {
            if stack {
                stack_frames(u.frames.view()).0
            } else {
                u.frames.view().clone()
            }
        })
        .collect()
}

/// Train on a dataset with periodic dev evaluation. Reproducible: the same
/// config and seed yield an identical metric log.
pub fn train(
    train_data: &Dataset,
    dev_data: &Dataset,
    vocab: &Vocabulary,
    init: Init,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    if !(0.0..=1.0).contains(&cfg.lambda) {
        return Err(TrainError::BadLambda(cfg.lambda));
    }
    if train_data.is_empty() || dev_data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    if cfg.lambda > 0.0 && matches!(init, Init::Random { .. }) {
        return Err(TrainError::LambdaNeedsInit);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let train_inputs = prepare_inputs(train_data, cfg.stack);
    let dev_inputs = prepare_inputs(dev_data, cfg.stack);
    let input_dim = train_inputs[0].ncols();

    let init_label = init.label().to_string();
    let (mut encoder, mut params, g_table) = match init {
        Init::Random { encoder_dim, embed_dim, pooling } => {
            let encoder = ToyEncoder::random(input_dim, encoder_dim, &mut rng);
            let mut params =
                SegmentScorerParams::random(pooling, encoder_dim, embed_dim, vocab.size(), &mut rng);
            if let Some(lu) = vocab.log_unigram() {
                params.b2 = Array1::from(lu.to_vec());
            }
            (encoder, params, None)
        }
        Init::Pretrained { acoustic, written } => {
            if acoustic.frame_dim() != input_dim {
                return Err(TrainError::DimMismatch(format!(
                    "pretrained acoustic view expects {} input dims, data has {}",
                    acoustic.frame_dim(),
                    input_dim
                )));
            }
            let params = transfer_init(&acoustic, &written, vocab);
            let g_table = params.a2.clone();
            (ToyEncoder::identity(input_dim), params, Some(g_table))
        }
    };
    encoder.stride = cfg.stride.max(1);
    encoder.dropout = cfg.dropout.unwrap_or_else(|| default_dropout(vocab.size()));

    let lens: Vec<usize> = encoder
        .tensor_lens()
        .into_iter()
        .chain(params.tensor_lens())
        .collect();
    let mut opt = Adam::new(cfg.lr, &lens);

    let mut order: Vec<usize> = (0..train_data.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best_dev_wer = f64::INFINITY;
    let mut best_epoch = 0usize;
    let mut best: Option<(ToyEncoder, SegmentScorerParams)> = None;
    let mut bad_epochs = 0usize;
    let mut infeasible_skipped = 0usize;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let epoch_lr = opt.lr;
        let mut epoch_loss_sum = 0.0;
        let mut epoch_loss_count = 0usize;
        for (batch_no, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let shapes: Vec<(usize, usize)> = chunk
                .iter()
                .map(|&i| {
                    (
                        encoder.out_len(train_inputs[i].nrows()),
                        train_data.utterances[i].labels.as_slice().len(),
                    )
                })
                .collect();
            let s_eff = batch_cap_segments(&shapes, cfg.max_segment);
            let mut grads = PipelineGrads::zeros_like(&encoder, &params);
            let mut n_eff = 0usize;
            let mut batch_loss = 0.0;
            for &i in chunk {
                let utt = &train_data.utterances[i];
                let (loss, infeasible) = utterance_loss_and_grads(
                    &encoder,
                    &params,
                    g_table.as_ref(),
                    cfg.lambda,
                    &train_inputs[i],
                    &utt.labels,
                    s_eff,
                    if encoder.dropout > 0.0 { Some(&mut rng) } else { None },
                    &mut grads,
                );
                if infeasible {
                    infeasible_skipped += 1;
                    continue;
                }
                if !loss.is_finite() {
                    return Err(TrainError::Diverged { epoch, batch: batch_no + 1 });
                }
                batch_loss += loss;
                n_eff += 1;
            }
            if n_eff == 0 {
                continue;
            }
            grads.encoder.scale(1.0 / n_eff as f64);
            grads.scorer.scale(1.0 / n_eff as f64);
            {
                let mut tensors: Vec<&mut [f64]> = encoder
                    .tensors_mut()
                    .into_iter()
                    .chain(params.tensors_mut())
                    .collect();
                let gtensors: Vec<&[f64]> = grads
                    .encoder
                    .tensors()
                    .into_iter()
                    .chain(grads.scorer.tensors())
                    .collect();
                if gtensors.iter().any(|g| g.iter().any(|x| !x.is_finite())) {
                    return Err(TrainError::Diverged { epoch, batch: batch_no + 1 });
                }
                opt.step(&mut tensors, &gtensors);
            }
            epoch_loss_sum += batch_loss;
            epoch_loss_count += n_eff;
        }
        let references: Vec<&LabelSequence> =
            dev_data.utterances.iter().map(|u| &u.labels).collect();
        let (dev_wer, _) =
            evaluate_wer(&encoder, &params, &dev_inputs, &references, cfg.max_segment);
        let loss = if epoch_loss_count > 0 {
            epoch_loss_sum / epoch_loss_count as f64
        } else {
            f64::INFINITY
        };
        log.push(EpochMetrics { epoch, loss, dev_wer, lr: epoch_lr });
        if dev_wer < best_dev_wer {
            best_dev_wer = dev_wer;
            best_epoch = epoch;
            best = Some((encoder.clone(), params.clone()));
            bad_epochs = 0;
        } else {
            bad_epochs += 1;
            if bad_epochs >= cfg.plateau_patience {
                opt.lr /= 2.0;
                bad_epochs = 0;
            }
        }
    }
    let (best_encoder, best_params) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        params: best_params,
        encoder: best_encoder,
        log,
        best_dev_wer,
        best_epoch,
        init_label,
        infeasible_skipped,
    })
}
