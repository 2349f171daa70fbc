//! The pipeline commands: dataset generation, embedder pre-training,
//! recognizer training, decoding, and WER evaluation.
//!
//! Every failure maps to a fixed exit code so shell pipelines can branch on
//! it: 2 invalid config or input paths, 3 no positive training pairs,
//! 4 init/checkpoint dimension mismatch, 5 corrupt model container,
//! 6 evaluation input mismatch. Unexpected I/O problems exit 1.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use segword::data::{
    derive_pairs, read_counts, read_pair_list, read_vocab, write_counts, write_pair_list,
    write_transcripts, write_vocab,
};
use segword::pretrain::ApPoint;
use segword::{
    container_to_embedder, container_to_pipeline, corpus_wer, decode_utterance, embedder_to_container,
    load_dataset, materialize_pairs, per_frequency_substitutions, pipeline_to_container,
    save_dataset, stack_frames, train, train_multiview, wer, AcousticParams, ContainerError,
    DataError, Dataset, Init, ModelContainer, Pooling, PretrainConfig, PretrainError,
    SyntheticTask, TrainConfig, TrainError, WerAlignment, WrittenViewEmbedder,
    DEFAULT_FREQUENCY_BUCKETS,
};

use crate::config::{ConfigError, RunConfig};

pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn new(code: i32, message: impl Into<String>) -> Self {
        CliError { code, message: message.into() }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::new(2, e.to_string())
    }
}

impl From<ContainerError> for CliError {
    fn from(e: ContainerError) -> Self {
        CliError::new(5, e.to_string())
    }
}

// Dataset problems surface while validating inputs, before any compute.
impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::new(2, e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        let code = match &e {
            TrainError::DimMismatch(_) => 4,
            TrainError::Diverged { .. } => 1,
            _ => 2,
        };
        CliError::new(code, e.to_string())
    }
}

impl From<PretrainError> for CliError {
    fn from(e: PretrainError) -> Self {
        CliError::new(3, e.to_string())
    }
}

pub type CmdResult = Result<(), CliError>;

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::new(1, format!("{}: {e}", path.display()))
}

// ---------------------------------------------------------------------------
// gen

#[derive(Args, Debug)]
pub struct GenArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 50)]
    pub vocab_size: usize,
    #[arg(long, default_value_t = 6)]
    pub frame_dim: usize,
    /// Training utterances.
    #[arg(long, default_value_t = 200)]
    pub train: usize,
    /// Held-out utterances (0 skips the dev split).
    #[arg(long, default_value_t = 0)]
    pub dev: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Additive noise σ; default from the task.
    #[arg(long)]
    pub noise: Option<f64>,
    /// Relative duration jitter.
    #[arg(long)]
    pub jitter: Option<f64>,
    #[arg(long)]
    pub words_min: Option<usize>,
    #[arg(long)]
    pub words_max: Option<usize>,
    /// Zipf exponent for word sampling.
    #[arg(long)]
    pub zipf: Option<f64>,
}

fn write_split(dir: &Path, task: &SyntheticTask, data: &Dataset) -> Result<(), CliError> {
    save_dataset(dir, &task.vocab, data)?;
    write_pair_list(&dir.join("pairs.tsv"), &task.vocab, &derive_pairs(data))?;
    let lines: Vec<(String, Vec<usize>)> = data
        .utterances
        .iter()
        .map(|u| (u.id.clone(), u.labels.as_slice().to_vec()))
        .collect();
    write_transcripts(&dir.join("transcripts.tsv"), &task.vocab, &lines)?;
    Ok(())
}

pub fn cmd_gen(args: &GenArgs) -> CmdResult {
    if args.vocab_size == 0 || args.frame_dim == 0 || args.train == 0 {
        return Err(CliError::new(2, "vocab-size, frame-dim and train must be ≥ 1"));
    }
    let mut task = SyntheticTask::new(args.vocab_size, args.frame_dim, args.seed);
    if let Some(v) = args.noise {
        if !(v >= 0.0) {
            return Err(CliError::new(2, "noise must be ≥ 0"));
        }
        task.noise = v;
    }
    if let Some(v) = args.jitter {
        if !(0.0..1.0).contains(&v) {
            return Err(CliError::new(2, "jitter must be in [0, 1)"));
        }
        task.duration_jitter = v;
    }
    if let Some(v) = args.zipf {
        task.zipf_exponent = v;
    }
    let (lo, hi) = (
        args.words_min.unwrap_or(task.words_per_utterance.0),
        args.words_max.unwrap_or(task.words_per_utterance.1),
    );
    if lo == 0 || lo > hi {
        return Err(CliError::new(2, "need 1 ≤ words-min ≤ words-max"));
    }
    task.words_per_utterance = (lo, hi);

    let train_data = task.generate(args.train, args.seed);
    fs::create_dir_all(&args.out).map_err(|e| io_err(&args.out, e))?;
    write_vocab(&args.out.join("vocab.tsv"), &task.vocab)?;
    write_split(&args.out.join("train"), &task, &train_data)?;
    let mut counts = vec![0usize; task.vocab.size()];
    for u in &train_data.utterances {
        for &v in u.labels.as_slice() {
            counts[v] += 1;
        }
    }
    write_counts(&args.out.join("train/counts.tsv"), &task.vocab, &counts)?;
    if args.dev > 0 {
        let dev_data = task.generate(args.dev, args.seed.wrapping_add(1));
        write_split(&args.out.join("dev"), &task, &dev_data)?;
    }
    println!(
        "wrote {} train / {} dev utterances, vocab {}, under {}",
        args.train,
        args.dev,
        task.vocab.size(),
        args.out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// pretrain

#[derive(Args, Debug)]
pub struct PretrainArgs {
    /// Run configuration (`key = value` lines).
    pub config: PathBuf,
    /// Parse and validate the config, touch nothing.
    #[arg(long)]
    pub dry_run: bool,
}

const PRETRAIN_KEYS: &[&str] = &[
    "vocab", "dataset", "pairs", "dev_dataset", "dev_pairs", "out", "embed_dim", "char_dim",
    "hidden_dim", "pooling", "margin", "m_start", "m_floor", "frames_per_batch", "lr",
    "lr_reduce", "patience_steps", "eval_every", "max_steps", "target_ap", "min_lr", "seed",
];

fn parse_pooling(cfg: &RunConfig) -> Result<Pooling, CliError> {
    let name = cfg.get("pooling").unwrap_or("mean");
    name.parse()
        .map_err(|_| CliError::new(2, format!("config: bad pooling {name:?}")))
}

struct PretrainPlan {
    vocab_path: PathBuf,
    dataset: PathBuf,
    pairs: PathBuf,
    dev_dataset: PathBuf,
    dev_pairs: PathBuf,
    out: PathBuf,
    embed_dim: usize,
    char_dim: usize,
    hidden_dim: usize,
    pooling: Pooling,
    cfg: PretrainConfig,
}

fn pretrain_plan(cfg: &RunConfig) -> Result<PretrainPlan, CliError> {
    cfg.check_keys(PRETRAIN_KEYS)?;
    let defaults = PretrainConfig::default();
    let plan = PretrainPlan {
        vocab_path: cfg.path("vocab")?,
        dataset: cfg.path("dataset")?,
        pairs: cfg.path("pairs")?,
        dev_dataset: cfg.path("dev_dataset")?,
        dev_pairs: cfg.path("dev_pairs")?,
        out: cfg.path("out")?,
        embed_dim: cfg.parse_or("embed_dim", 32usize)?,
        char_dim: cfg.parse_or("char_dim", 8usize)?,
        hidden_dim: cfg.parse_or("hidden_dim", 24usize)?,
        pooling: parse_pooling(cfg)?,
        cfg: PretrainConfig {
            margin: cfg.parse_or("margin", defaults.margin)?,
            m_start: cfg.parse_or("m_start", defaults.m_start)?,
            m_floor: cfg.parse_or("m_floor", defaults.m_floor)?,
            frames_per_batch: cfg.parse_or("frames_per_batch", defaults.frames_per_batch)?,
            lr: cfg.parse_or("lr", defaults.lr)?,
            lr_reduce: cfg.parse_or("lr_reduce", defaults.lr_reduce)?,
            patience_steps: cfg.parse_or("patience_steps", defaults.patience_steps)?,
            eval_every: cfg.parse_or("eval_every", defaults.eval_every)?,
            max_steps: cfg.parse_or("max_steps", defaults.max_steps)?,
            target_ap: cfg.parse_opt("target_ap")?,
            min_lr: cfg.parse_or("min_lr", defaults.min_lr)?,
            seed: cfg.parse_or("seed", defaults.seed)?,
        },
    };
    if plan.embed_dim == 0 || plan.char_dim == 0 || plan.hidden_dim == 0 {
        return Err(CliError::new(2, "config: embedding dims must be ≥ 1"));
    }
    if !(plan.cfg.margin > 0.0) || !(plan.cfg.lr > 0.0) || plan.cfg.m_floor == 0 {
        return Err(CliError::new(2, "config: margin, lr and m_floor must be positive"));
    }
    if plan.cfg.m_start < plan.cfg.m_floor {
        return Err(CliError::new(2, "config: m_start must be ≥ m_floor"));
    }
    for p in [&plan.vocab_path, &plan.dataset, &plan.pairs, &plan.dev_dataset, &plan.dev_pairs] {
        if !p.is_file() {
            return Err(CliError::new(2, format!("config: no such input {}", p.display())));
        }
    }
    Ok(plan)
}

pub fn cmd_pretrain(args: &PretrainArgs) -> CmdResult {
    let cfg = RunConfig::load(&args.config)?;
    let plan = pretrain_plan(&cfg)?;
    if args.dry_run {
        println!("config ok: {}", args.config.display());
        return Ok(());
    }
    let vocab = read_vocab(&plan.vocab_path)?;
    let train_set = load_dataset(&plan.dataset, &vocab)?;
    let dev_set = load_dataset(&plan.dev_dataset, &vocab)?;
    let train_pairs = materialize_pairs(&train_set, &read_pair_list(&plan.pairs, &vocab)?)?;
    let dev_pairs = materialize_pairs(&dev_set, &read_pair_list(&plan.dev_pairs, &vocab)?)?;
    let frame_dim = train_pairs
        .first()
        .map(|p| p.frames.dim())
        .ok_or_else(|| CliError::new(3, "no training pairs supplied"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(plan.cfg.seed);
    let acoustic = AcousticParams::random(plan.pooling, frame_dim, plan.embed_dim, &mut rng);
    let written = WrittenViewEmbedder::random(
        vocab.alphabet().table_size(),
        plan.char_dim,
        plan.hidden_dim,
        plan.embed_dim,
        &mut rng,
    );
    let outcome = train_multiview(&train_pairs, &dev_pairs, &vocab, acoustic, written, &plan.cfg)?;
    print!("{}", render_ap_log(&outcome.ap_log));
    println!("best_ap\t{:.4}\tsteps\t{}", outcome.best_ap, outcome.steps_run);
    let meta = vec![
        ("best_ap".into(), format!("{:.6}", outcome.best_ap)),
        ("steps".into(), outcome.steps_run.to_string()),
    ];
    embedder_to_container(&outcome.acoustic, &outcome.written, &vocab, meta)
        .save(&plan.out)
        .map_err(|e| CliError::new(1, format!("{}: {e}", plan.out.display())))?;
    Ok(())
}

fn render_ap_log(log: &[ApPoint]) -> String {
    let mut out = String::from("step\tdev_ap\n");
    for p in log {
        out.push_str(&format!("{}\t{:.4}\n", p.step, p.ap));
    }
    out
}

// ---------------------------------------------------------------------------
// train

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Run configuration (`key = value` lines).
    pub config: PathBuf,
    /// Pre-trained embedder checkpoint to initialize from.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Embedding-regularization weight λ; overrides the config.
    #[arg(long, value_name = "LAMBDA")]
    pub agwe_reg: Option<f64>,
}

const TRAIN_KEYS: &[&str] = &[
    "train", "dev", "vocab", "counts", "out", "max_segment", "batch_size", "lr", "epochs",
    "dropout", "lambda", "stack", "stride", "plateau_patience", "seed", "encoder_dim",
    "embed_dim", "pooling",
];

pub fn cmd_train(args: &TrainArgs) -> CmdResult {
    let cfg = RunConfig::load(&args.config)?;
    cfg.check_keys(TRAIN_KEYS)?;
    let lambda = match args.agwe_reg {
        Some(l) => l,
        None => cfg.parse_or("lambda", 0.0f64)?,
    };
    if !(0.0..=1.0).contains(&lambda) {
        return Err(CliError::new(2, format!("lambda {lambda} outside [0, 1]")));
    }
    let defaults = TrainConfig::default();
    let tc = TrainConfig {
        max_segment: cfg.parse_or("max_segment", defaults.max_segment)?,
        batch_size: cfg.parse_or("batch_size", defaults.batch_size)?,
        lr: cfg.parse_or("lr", defaults.lr)?,
        epochs: cfg.parse_or("epochs", defaults.epochs)?,
        dropout: cfg.parse_opt("dropout")?,
        lambda,
        stack: cfg.flag_or("stack", defaults.stack)?,
        stride: cfg.parse_or("stride", defaults.stride)?,
        plateau_patience: cfg.parse_or("plateau_patience", defaults.plateau_patience)?,
        seed: cfg.parse_or("seed", defaults.seed)?,
    };
    if tc.max_segment == 0 || tc.batch_size == 0 || tc.epochs == 0 || tc.stride == 0 {
        return Err(CliError::new(2, "config: max_segment, batch_size, epochs, stride must be ≥ 1"));
    }
    let out_path = cfg.path("out")?;
    let mut vocab = read_vocab(&cfg.path("vocab")?)?;
    if let Some(counts_path) = cfg.path_opt("counts") {
        let counts = read_counts(&counts_path, &vocab)?;
        vocab.set_log_unigram(smoothed_log_unigram(&counts));
    }
    let train_set = load_dataset(&cfg.path("train")?, &vocab)?;
    let dev_set = load_dataset(&cfg.path("dev")?, &vocab)?;

    let init = match &args.init {
        Some(path) => {
            let c = ModelContainer::load(path)?;
            let (acoustic, written, ck_vocab) = container_to_embedder(&c)?;
            if ck_vocab.words() != vocab.words() {
                return Err(CliError::new(
                    4,
                    "init checkpoint vocabulary differs from the training vocabulary",
                ));
            }
            Init::Pretrained { acoustic, written }
        }
        None => Init::Random {
            encoder_dim: cfg.parse_or("encoder_dim", 16usize)?,
            embed_dim: cfg.parse_or("embed_dim", 32usize)?,
            pooling: parse_pooling(&cfg)?,
        },
    };

    let outcome = train(&train_set, &dev_set, &vocab, init, &tc)?;
    print!("{}", segword::render_metric_log(&outcome.log));
    println!(
        "best_dev_wer\t{:.6}\tepoch\t{}\tinit\t{}",
        outcome.best_dev_wer, outcome.best_epoch, outcome.init_label
    );
    let meta = vec![
        ("init".into(), outcome.init_label.clone()),
        ("stack".into(), if tc.stack { "1".into() } else { "0".into() }),
        ("lambda".into(), format!("{lambda}")),
        ("best_epoch".into(), outcome.best_epoch.to_string()),
        ("best_dev_wer".into(), format!("{:.6}", outcome.best_dev_wer)),
    ];
    pipeline_to_container(&outcome.encoder, &outcome.params, &vocab, tc.max_segment, meta)
        .save(&out_path)
        .map_err(|e| CliError::new(1, format!("{}: {e}", out_path.display())))?;
    Ok(())
}

fn smoothed_log_unigram(counts: &[usize]) -> Vec<f64> {
    // Add-one smoothing keeps zero-count words finite.
    let total: usize = counts.iter().sum::<usize>() + counts.len();
    counts
        .iter()
        .map(|&c| ((c + 1) as f64 / total as f64).ln())
        .collect()
}

// ---------------------------------------------------------------------------
// decode

#[derive(Args, Debug)]
pub struct DecodeArgs {
    /// Trained model container.
    pub model: PathBuf,
    /// Dataset manifest to decode.
    pub manifest: PathBuf,
    /// Append the Viterbi segmentation (`start:duration:label` triples).
    #[arg(long)]
    pub dump_segments: bool,
}

fn thread_count(n_items: usize) -> Result<usize, CliError> {
    let hw = std::thread::available_parallelism().map(|p| p.get()).unwrap_or(1);
    let k = match std::env::var("SEGWORD_THREADS") {
        Ok(v) => v
            .parse::<usize>()
            .ok()
            .filter(|&k| k >= 1)
            .ok_or_else(|| CliError::new(2, format!("SEGWORD_THREADS: bad value {v:?}")))?,
        Err(_) => hw,
    };
    Ok(k.min(n_items.max(1)))
}

pub fn cmd_decode(args: &DecodeArgs) -> CmdResult {
    let container = ModelContainer::load(&args.model)?;
    let (encoder, params, vocab, s_max) = container_to_pipeline(&container)?;
    let stack = container.meta.iter().any(|(k, v)| k == "stack" && v == "1");
    let data = load_dataset(&args.manifest, &vocab)?;
    let inputs: Vec<Array2<f64>> = data
        .utterances
        .iter()
        .map(|u| {
            if stack {
                stack_frames(u.frames.view()).0
            } else {
                u.frames.view().clone()
            }
        })
        .collect();

    let decode_row = |i: usize| {
        let (labels, path, _) = decode_utterance(&encoder, &params, &inputs[i], s_max);
        let mut row = format!("{}\t{}", data.utterances[i].id, vocab.render(labels.as_slice()));
        if args.dump_segments {
            row.push('\t');
            row.push_str(&path.to_text());
        }
        row
    };

    let n = inputs.len();
    let k = thread_count(n)?;
    let mut rows: Vec<Option<String>> = vec![None; n];
    if k <= 1 {
        for (i, slot) in rows.iter_mut().enumerate() {
            *slot = Some(decode_row(i));
        }
    } else {
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..k)
                .map(|j| {
                    let decode_row = &decode_row;
                    s.spawn(move || {
                        let mut out = Vec::new();
                        let mut i = j;
                        while i < n {
                            out.push((i, decode_row(i)));
                            i += k;
                        }
                        out
                    })
                })
                .collect();
            for h in handles {
                for (i, row) in h.join().expect("decode worker panicked") {
                    rows[i] = Some(row);
                }
            }
        });
    }
    for row in rows {
        println!("{}", row.unwrap());
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// eval

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Hypothesis transcripts (`id<TAB>words`).
    pub hyp: PathBuf,
    /// Reference transcripts (`id<TAB>words`).
    pub reference: PathBuf,
    /// Training-set word counts, enables the per-frequency breakdown.
    #[arg(long)]
    pub counts: Option<PathBuf>,
}

fn read_raw_transcripts(path: &Path) -> Result<Vec<(String, Vec<String>)>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut out = Vec::new();
    for (no, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (id, words) = line.split_once('\t').ok_or_else(|| {
            CliError::new(
                6,
                format!("{}:{}: malformed line, expected `id<TAB>words`", path.display(), no + 1),
            )
        })?;
        let tokens: Vec<String> = words.split_whitespace().map(str::to_string).collect();
        out.push((id.to_string(), tokens));
    }
    Ok(out)
}

pub fn cmd_eval(args: &EvalArgs) -> CmdResult {
    let hyp = read_raw_transcripts(&args.hyp)?;
    let reference = read_raw_transcripts(&args.reference)?;

    let hyp_ids: Vec<&String> = hyp.iter().map(|(id, _)| id).collect();
    let ref_ids: Vec<&String> = reference.iter().map(|(id, _)| id).collect();
    if hyp_ids != ref_ids {
        let mut offenders = Vec::new();
        for id in &hyp_ids {
            if !ref_ids.contains(id) {
                offenders.push(format!("{id} (hyp only)"));
            }
        }
        for id in &ref_ids {
            if !hyp_ids.contains(id) {
                offenders.push(format!("{id} (ref only)"));
            }
        }
        if offenders.is_empty() {
            offenders.push("same ids, different order".into());
        }
        return Err(CliError::new(6, format!("utterance ids disagree: {}", offenders.join(", "))));
    }

    // Index the union of words so the alignment can run on label ids.
    let mut index: HashMap<&str, usize> = HashMap::new();
    let mut words: Vec<&str> = Vec::new();
    for (_, tokens) in hyp.iter().chain(reference.iter()) {
        for t in tokens {
            if !index.contains_key(t.as_str()) {
                index.insert(t.as_str(), words.len());
                words.push(t.as_str());
            }
        }
    }
    let encode = |tokens: &[String]| -> Vec<usize> {
        tokens.iter().map(|t| index[t.as_str()]).collect()
    };
    let hyp_seqs: Vec<Vec<usize>> = hyp.iter().map(|(_, t)| encode(t)).collect();
    let ref_seqs: Vec<Vec<usize>> = reference.iter().map(|(_, t)| encode(t)).collect();

    let mut alignments: Vec<WerAlignment> = Vec::with_capacity(hyp.len());
    let mut ref_words = 0usize;
    for (i, (h, r)) in hyp_seqs.iter().zip(&ref_seqs).enumerate() {
        let a = wer(h, r).ok_or_else(|| {
            CliError::new(6, format!("empty reference for utterance {}", hyp[i].0))
        })?;
        println!(
            "utt\t{}\twer\t{:.4}\tsub\t{}\tins\t{}\tdel\t{}\tref\t{}",
            hyp[i].0, a.rate, a.substitutions, a.insertions, a.deletions, r.len()
        );
        ref_words += r.len();
        alignments.push(a);
    }
    let (s, i, d) = alignments.iter().fold((0, 0, 0), |(s, i, d), a| {
        (s + a.substitutions, i + a.insertions, d + a.deletions)
    });
    println!(
        "corpus\twer\t{:.4}\tsub\t{s}\tins\t{i}\tdel\t{d}\tref\t{ref_words}",
        corpus_wer(&alignments, ref_words)
    );

    if let Some(counts_path) = &args.counts {
        let table = read_raw_counts(counts_path)?;
        let counts: Vec<usize> =
            words.iter().map(|w| table.get(*w).copied().unwrap_or(0)).collect();
        for b in per_frequency_substitutions(&alignments, &counts, &DEFAULT_FREQUENCY_BUCKETS) {
            let hi = if b.hi == usize::MAX { "inf".to_string() } else { b.hi.to_string() };
            println!(
                "freq\t{}-{}\tsub_rate\t{:.4}\tsub\t{}\tref\t{}",
                b.lo,
                hi,
                b.rate(),
                b.substitutions,
                b.reference_tokens
            );
        }
    }
    Ok(())
}

fn read_raw_counts(path: &Path) -> Result<HashMap<String, usize>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut out = HashMap::new();
    for (no, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = || {
            CliError::new(
                6,
                format!("{}:{}: malformed count line", path.display(), no + 1),
            )
        };
        let (word, count) = line.split_once('\t').ok_or_else(bad)?;
        let count: usize = count.trim().parse().map_err(|_| bad())?;
        out.insert(word.to_string(), count);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// bench

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Comma-separated input lengths.
    #[arg(long, value_delimiter = ',', default_values_t = vec![64, 128, 256, 512, 1024])]
    pub t_grid: Vec<usize>,
    #[arg(long, default_value_t = 64)]
    pub max_duration: usize,
    #[arg(long, default_value_t = 64)]
    pub vocab: usize,
    /// Numerator label-sequence length.
    #[arg(long, default_value_t = 16)]
    pub labels: usize,
    /// Timing repetitions per grid point (median reported, minima fitted).
    #[arg(long, default_value_t = 9)]
    pub reps: usize,
    #[arg(long, default_value_t = 24029)]
    pub seed: u64,
}

pub fn cmd_bench(args: &BenchArgs) -> CmdResult {
    if args.t_grid.is_empty() || args.t_grid.contains(&0) {
        return Err(CliError::new(2, "t-grid needs at least one positive length"));
    }
    if args.max_duration == 0 || args.vocab == 0 || args.labels == 0 || args.reps == 0 {
        return Err(CliError::new(2, "max-duration, vocab, labels, reps must be ≥ 1"));
    }
    let spec = crate::bench::BenchSpec {
        t_grid: args.t_grid.clone(),
        max_duration: args.max_duration,
        vocab: args.vocab,
        num_labels: args.labels,
        reps: args.reps,
        seed: args.seed,
    };
    print!("{}", crate::bench::render(&crate::bench::run(&spec)));
    Ok(())
}
