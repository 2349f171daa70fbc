//! Whole-word segmental sequence prediction: score lattices, marginal-loss
//! dynamic programming, factored segment scoring, embedding pre-training, and
//! the toy end-to-end training harness.

pub mod container;
pub mod data;
pub mod dp;
pub mod lattice;
pub mod logmath;
pub mod optim;
pub mod pretrain;
pub mod probe;
pub mod scorer;
pub mod synth;
pub mod train;
pub mod wer;

// Real allocation numbers for the probe's own unit tests.
#[cfg(test)]
#[global_allocator]
static TEST_ALLOC: probe::CountingAllocator = probe::CountingAllocator;

pub use container::{
    container_to_embedder, container_to_pipeline, container_to_scorer, embedder_to_container,
    pipeline_to_container, scorer_to_container, ContainerError, ModelContainer,
};
pub use data::{load_dataset, materialize_pairs, read_pair_list, save_dataset, DataError, PairRef};
pub use dp::{
    loss_and_gradient, marginal_log_loss, posterior_check, segment_posteriors, viterbi, DPTables,
    MarginalLoss, PosteriorCheck, Posteriors, ViterbiResult,
};
pub use lattice::{
    enumerate_paths, Alphabet, LabelSequence, LatticeError, ScoreLattice, Segment, Segmentation,
    SegmentationViolation, Vocabulary,
};
pub use logmath::{logsumexp, logsumexp2, LogSum};
pub use optim::Adam;
pub use probe::{measure_thread_allocs, AllocStats, CountingAllocator};
pub use pretrain::{
    agwe_regularized_loss, contrastive_loss, contrastive_step_grads, cosine_distance,
    crossview_ap, semi_hard_negatives, train_multiview, transfer_init, AcousticViewEmbedder,
    BatchEmbeddings, PairBatch, PretrainConfig, PretrainError, PretrainOutcome, WordPair,
    WrittenGrads, WrittenViewEmbedder,
};
pub use scorer::{
    embed_segments, naive_score_lattice, score_backprop, score_lattice, score_lattice_into,
    AcousticParams, FrameFeatures, Pooling, ScoreScratch, ScorerGrads, SegmentEmbeddings,
    SegmentScorerParams,
};
pub use synth::{Dataset, SyntheticTask, Utterance};
pub use train::{
    batch_cap_segments, decode_utterance, evaluate_wer, render_metric_log, stack_frames, train,
    utterance_loss_and_grads, EpochMetrics, Init, ToyEncoder, TrainConfig, TrainError,
    TrainOutcome,
};
pub use wer::{
    corpus_wer, per_frequency_substitutions, wer, FrequencyBucket, WerAlignment,
    DEFAULT_FREQUENCY_BUCKETS,
};
