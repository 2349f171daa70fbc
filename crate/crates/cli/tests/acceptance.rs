//! Release gate for the toolkit. Eight checks cover the dynamic programs
//! against exhaustive enumeration, gradient fidelity, posterior
//! normalization, the factored scorer's memory contract, wall-time scaling,
//! embedding pre-training, and the end-to-end effect of pre-trained
//! initialization and the embedding regularizer. Each check prints a single
//! PASS/FAIL line (visible under `--nocapture`).

use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::{Duration, Instant};

use ndarray::{Array1, Array2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use segword::pretrain::{contrastive_loss_and_embedding_grads, contrastive_loss_from_embeddings};
use segword::{
    cosine_distance, enumerate_paths, evaluate_wer, loss_and_gradient, marginal_log_loss,
    naive_score_lattice, per_frequency_substitutions, posterior_check, score_lattice,
    segment_posteriors, train, train_multiview, utterance_loss_and_grads, viterbi,
    AcousticParams, BatchEmbeddings, FrameFeatures, Init, LabelSequence, Pooling, PretrainConfig,
    ScoreLattice, Segmentation, SegmentScorerParams, SyntheticTask, ToyEncoder, TrainConfig,
    TrainOutcome, Vocabulary, WrittenViewEmbedder,
};
use segword::logsumexp2;
use segword::train::PipelineGrads;
use segword_cli::bench::{self, BenchSpec};

// The memory probe and the wall-time check need real allocation counts and a
// quiet process, so the gate installs the counting allocator and serializes
// its tests through one lock.
#[global_allocator]
static ALLOC: segword::CountingAllocator = segword::CountingAllocator;

fn gate() -> MutexGuard<'static, ()> {
    static GATE: Mutex<()> = Mutex::new(());
    GATE.lock().unwrap_or_else(|e| e.into_inner())
}

fn check<F>(n: usize, title: &str, body: F)
where
    F: FnOnce() -> Result<String, String>,
{
    let _serial = gate();
    match body() {
        Ok(detail) if detail.is_empty() => println!("acceptance {n} [{title}]: PASS"),
        Ok(detail) => println!("acceptance {n} [{title}]: PASS ({detail})"),
        Err(why) => {
            println!("acceptance {n} [{title}]: FAIL ({why})");
            panic!("acceptance {n} [{title}]: {why}");
        }
    }
}

macro_rules! ensure {
    ($cond:expr, $($arg:tt)+) => {
        if !$cond {
            return Err(format!($($arg)+));
        }
    };
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / f64::max(1.0, a.abs().max(b.abs()))
}

/// Random lattice plus a label sequence guaranteed to tile it.
fn random_case(
    rng: &mut ChaCha8Rng,
    t_max: usize,
    s_max: usize,
    v_max: usize,
) -> (ScoreLattice, LabelSequence) {
    let t = rng.random_range(1..=t_max);
    let s = rng.random_range(1..=s_max);
    let v = rng.random_range(1..=v_max);
    let w = ScoreLattice::random(t, s, v, -3.0..3.0, rng);
    // Any count in [⌈T/S⌉, T] admits segments of 1..=S frames.
    let k = rng.random_range(t.div_ceil(s)..=t);
    let labels = LabelSequence::new((0..k).map(|_| rng.random_range(0..v)).collect());
    (w, labels)
}

#[test]
fn acceptance_1_dp_matches_exhaustive_enumeration() {
    check(1, "oracle equivalence", || {
        let started = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(0xAC01);
        let mut worst = 0.0f64;
        for case in 0..200 {
            let (w, labels) = random_case(&mut rng, 8, 4, 4);
            let (t, s, v) = (w.num_timesteps(), w.max_duration(), w.vocab_size());

            let mut log_den = f64::NEG_INFINITY;
            let mut best: Option<(Segmentation, f64)> = None;
            for pi in enumerate_paths(t, s, v, None).unwrap() {
                let score = w.path_score(&pi);
                log_den = logsumexp2(log_den, score);
                if best.as_ref().is_none_or(|&(_, top)| score > top) {
                    best = Some((pi, score));
                }
            }
            let mut log_num = f64::NEG_INFINITY;
            for pi in enumerate_paths(t, s, v, Some(&labels)).unwrap() {
                log_num = logsumexp2(log_num, w.path_score(&pi));
            }

            let got = marginal_log_loss(&w, &labels);
            worst = worst
                .max(rel_err(got.log_denominator, log_den))
                .max(rel_err(got.log_numerator, log_num))
                .max(rel_err(got.loss, log_den - log_num));
            ensure!(
                worst <= 1e-8,
                "case {case}: loss parts drifted {worst:.3e} from enumeration"
            );

            // Posterior marginals exercise the forward and backward tables at
            // every cell, not just their totals.
            let (_, posteriors) = segment_posteriors(&w, &labels);
            let mut den_marg = ndarray::Array3::<f64>::zeros((t, s, v));
            for pi in enumerate_paths(t, s, v, None).unwrap() {
                let p = (w.path_score(&pi) - log_den).exp();
                for seg in pi.segments() {
                    den_marg[[seg.start, seg.duration - 1, seg.label]] += p;
                }
            }
            let mut num_marg = ndarray::Array3::<f64>::zeros((t, s, v));
            for pi in enumerate_paths(t, s, v, Some(&labels)).unwrap() {
                let p = (w.path_score(&pi) - log_num).exp();
                for seg in pi.segments() {
                    num_marg[[seg.start, seg.duration - 1, seg.label]] += p;
                }
            }
            for (got_p, want_p) in posteriors
                .denominator
                .iter()
                .chain(posteriors.numerator.iter())
                .zip(den_marg.iter().chain(num_marg.iter()))
            {
                ensure!(
                    (got_p - want_p).abs() <= 1e-8,
                    "case {case}: marginal {got_p} vs enumerated {want_p}"
                );
            }

            let decoded = viterbi(&w);
            let (want_path, want_score) = best.unwrap();
            ensure!(
                decoded.path == want_path,
                "case {case}: viterbi path {:?} differs from argmax {:?}",
                decoded.path,
                want_path
            );
            ensure!(
                rel_err(decoded.score, want_score) <= 1e-8,
                "case {case}: viterbi score {} vs argmax {}",
                decoded.score,
                want_score
            );
        }
        let elapsed = started.elapsed();
        ensure!(elapsed < Duration::from_secs(60), "took {elapsed:?}, budget 1 min");
        Ok(format!("200 lattices, worst rel err {worst:.2e}, {elapsed:.0?}"))
    });
}

#[test]
fn acceptance_2_gradients_match_finite_differences() {
    check(2, "gradient fidelity", || {
        let started = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(0xAC02);
        let h = 1e-5;

        let mut worst_lattice = 0.0f64;
        for _ in 0..50 {
            let (w, labels) = random_case(&mut rng, 8, 4, 4);
            let (_, grad) = loss_and_gradient(&w, &labels);
            let t_len = w.num_timesteps();
            for t in 0..t_len {
                for s in 1..=w.max_duration().min(t_len - t) {
                    for v in 0..w.vocab_size() {
                        let mut plus = w.clone();
                        plus.set(t, s, v, w.get(t, s, v) + h);
                        let mut minus = w.clone();
                        minus.set(t, s, v, w.get(t, s, v) - h);
                        let fd = (marginal_log_loss(&plus, &labels).loss
                            - marginal_log_loss(&minus, &labels).loss)
                            / (2.0 * h);
                        worst_lattice = worst_lattice.max(rel_err(grad[[t, s - 1, v]], fd));
                    }
                }
            }
        }
        ensure!(
            worst_lattice <= 1e-6,
            "lattice gradient rel err {worst_lattice:.3e} above 1e-6"
        );

        // End to end: every scalar parameter of the encoder and the scorer,
        // under both pooling modes, with and without the embedding
        // regularizer in the loss.
        let mut worst_pipeline = 0.0f64;
        for (pooling, lambda) in [(Pooling::Mean, 0.0), (Pooling::Attention, 0.4)] {
            let frames = Array2::from_shape_fn((7, 4), |_| rng.random_range(-1.0..1.0));
            let labels = LabelSequence::new(vec![1, 0, 3]);
            let mut encoder = ToyEncoder::random(4, 5, &mut rng);
            encoder.dropout = 0.0;
            let params = SegmentScorerParams::random(pooling, 5, 6, 4, &mut rng);
            let g_table = (lambda > 0.0)
                .then(|| Array2::from_shape_fn((4, 6), |_| rng.random_range(-1.0..1.0)));
            let eval = |e: &ToyEncoder, p: &SegmentScorerParams| {
                let mut sink = PipelineGrads::zeros_like(e, p);
                utterance_loss_and_grads(
                    e, p, g_table.as_ref(), lambda, &frames, &labels, 3, None, &mut sink,
                )
                .0
            };
            let mut grads = PipelineGrads::zeros_like(&encoder, &params);
            let (loss, infeasible) = utterance_loss_and_grads(
                &encoder, &params, g_table.as_ref(), lambda, &frames, &labels, 3, None, &mut grads,
            );
            ensure!(loss.is_finite() && !infeasible, "pipeline case degenerate");

            let fd_at = |apply: &dyn Fn(&mut ToyEncoder, &mut SegmentScorerParams, f64)| {
                let (mut e, mut p) = (encoder.clone(), params.clone());
                apply(&mut e, &mut p, h);
                let up = eval(&e, &p);
                let (mut e, mut p) = (encoder.clone(), params.clone());
                apply(&mut e, &mut p, -h);
                (up - eval(&e, &p)) / (2.0 * h)
            };
            let mut record = |analytic: f64, fd: f64| {
                worst_pipeline = worst_pipeline.max(rel_err(analytic, fd));
            };
            for i in 0..encoder.w.nrows() {
                for j in 0..encoder.w.ncols() {
                    record(grads.encoder.w[[i, j]], fd_at(&|e, _, d| e.w[[i, j]] += d));
                }
            }
            for i in 0..encoder.b.len() {
                record(grads.encoder.b[i], fd_at(&|e, _, d| e.b[i] += d));
            }
            for i in 0..params.acoustic.a1.nrows() {
                for j in 0..params.acoustic.a1.ncols() {
                    record(
                        grads.scorer.acoustic.a1[[i, j]],
                        fd_at(&|_, p, d| p.acoustic.a1[[i, j]] += d),
                    );
                }
            }
            for i in 0..params.acoustic.b1.len() {
                record(
                    grads.scorer.acoustic.b1[i],
                    fd_at(&|_, p, d| p.acoustic.b1[i] += d),
                );
            }
            if let Some(attention) = &params.acoustic.attention {
                let g_att = grads.scorer.acoustic.attention.as_ref().unwrap();
                for i in 0..attention.len() {
                    record(
                        g_att[i],
                        fd_at(&|_, p, d| p.acoustic.attention.as_mut().unwrap()[i] += d),
                    );
                }
            }
            for i in 0..params.a2.nrows() {
                for j in 0..params.a2.ncols() {
                    record(grads.scorer.a2[[i, j]], fd_at(&|_, p, d| p.a2[[i, j]] += d));
                }
            }
            for i in 0..params.b2.len() {
                record(grads.scorer.b2[i], fd_at(&|_, p, d| p.b2[i] += d));
            }
        }
        ensure!(
            worst_pipeline <= 1e-4,
            "pipeline gradient rel err {worst_pipeline:.3e} above 1e-4"
        );
        let elapsed = started.elapsed();
        ensure!(elapsed < Duration::from_secs(120), "took {elapsed:?}, budget 2 min");
        Ok(format!(
            "lattice {worst_lattice:.2e}, pipeline {worst_pipeline:.2e}, {elapsed:.0?}"
        ))
    });
}

#[test]
fn acceptance_3_posteriors_normalize() {
    check(3, "normalization", || {
        let mut rng = ChaCha8Rng::seed_from_u64(0xAC03);
        let mut worst_mass = 0.0f64;
        let mut worst_grad = 0.0f64;
        let mut worst_label_mass = 0.0f64;
        for _ in 0..50 {
            let (w, labels) = random_case(&mut rng, 8, 4, 4);
            let (t, s, v) = (w.num_timesteps(), w.max_duration(), w.vocab_size());

            let log_den = marginal_log_loss(&w, &labels).log_denominator;
            let total: f64 = enumerate_paths(t, s, v, None)
                .unwrap()
                .map(|pi| (w.path_score(&pi) - log_den).exp())
                .sum();
            worst_mass = worst_mass.max((total - 1.0).abs());

            let (_, grad) = loss_and_gradient(&w, &labels);
            for &g in grad.iter() {
                worst_grad = worst_grad.max(g.abs());
            }
            let posterior = posterior_check(&w, &labels);
            worst_label_mass = worst_label_mass
                .max((posterior.numerator_mass - posterior.label_count as f64).abs());
        }
        ensure!(worst_mass <= 1e-8, "path probabilities sum 1±{worst_mass:.3e}");
        ensure!(
            worst_grad <= 1.0 + 1e-12,
            "gradient entry {worst_grad} outside [-1, 1]"
        );
        ensure!(
            worst_label_mass <= 1e-6,
            "numerator mass off |L| by {worst_label_mass:.3e}"
        );
        Ok(format!(
            "Σp drift {worst_mass:.1e}, max |grad| {worst_grad:.4}, mass drift {worst_label_mass:.1e}"
        ))
    });
}

#[test]
fn acceptance_4_factored_scoring_is_exact_and_memory_flat() {
    check(4, "factoring + memory contract", || {
        let mut rng = ChaCha8Rng::seed_from_u64(0xAC04);
        let mut worst = 0.0f64;
        for pooling in [Pooling::Mean, Pooling::Concat, Pooling::Attention] {
            let params = SegmentScorerParams::random(pooling, 7, 5, 9, &mut rng);
            let frames = FrameFeatures::new(Array2::from_shape_fn((30, 7), |_| {
                rng.random_range(-1.0..1.0)
            }));
            let fast = score_lattice(&params, &frames, 6);
            let slow = naive_score_lattice(&params, &frames, 6);
            for t in 0..30 {
                for s in 1..=6usize.min(30 - t) {
                    for v in 0..9 {
                        worst = worst.max((fast.get(t, s, v) - slow.get(t, s, v)).abs());
                    }
                }
            }
        }
        ensure!(worst <= 1e-12, "factored vs naive scores differ by {worst:.3e}");

        let (at_v, at_2v) = bench::scoring_aux_probe(64, 0xAC04);
        ensure!(
            at_2v <= at_v,
            "auxiliary scoring memory grew with V: {at_v} → {at_2v} bytes"
        );
        Ok(format!("max |Δscore| {worst:.1e}; aux bytes {at_v} at V, {at_2v} at 2V"))
    });
}

#[test]
fn acceptance_5_wall_time_scales_linearly_in_t() {
    check(5, "linear scaling", || {
        // Timing on a shared host is noisy; the fit gets a few attempts and
        // the best one is judged.
        let mut best: Option<(f64, f64)> = None;
        for attempt in 0..3u64 {
            let report = bench::run(&BenchSpec { seed: 0x5eed + attempt, ..Default::default() });
            let loss_fit = report.loss_fit.as_ref().ok_or("no loss fit")?.r_squared;
            let viterbi_fit = report.viterbi_fit.as_ref().ok_or("no viterbi fit")?.r_squared;
            if best.is_none_or(|(l, v)| loss_fit.min(viterbi_fit) > l.min(v)) {
                best = Some((loss_fit, viterbi_fit));
            }
            if loss_fit > 0.98 && viterbi_fit > 0.98 {
                break;
            }
        }
        let (loss_r2, viterbi_r2) = best.unwrap();
        ensure!(
            loss_r2 > 0.98 && viterbi_r2 > 0.98,
            "linear fit R² {loss_r2:.4} (loss) / {viterbi_r2:.4} (viterbi) not above 0.98"
        );
        Ok(format!("R² {loss_r2:.4} (loss), {viterbi_r2:.4} (viterbi)"))
    });
}

#[test]
fn acceptance_6_pretraining_reaches_high_crossview_ap() {
    check(6, "multi-view pre-training", || {
        // Unit behavior of the contrastive objective first. Distances are
        // cosine, so the loss ignores any positive rescaling of either view.
        let a = [0.3, -1.2, 0.4];
        let b = [1.0, 0.2, -0.7];
        let a3: Vec<f64> = a.iter().map(|x| 3.0 * x).collect();
        let b02: Vec<f64> = b.iter().map(|x| 0.2 * x).collect();
        ensure!(
            (cosine_distance(&a, &b) - cosine_distance(&a3, &b02)).abs() <= 1e-12,
            "cosine distance is not scale invariant"
        );

        let vocab = Vocabulary::new(vec!["ab".into(), "cd".into()]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0xAC06);
        let pairs: Vec<segword::WordPair> = (0..4)
            .map(|i| segword::WordPair {
                frames: FrameFeatures::new(Array2::from_shape_fn((3, 2), |_| {
                    rng.random_range(0.1..1.0)
                })),
                label: i / 2,
            })
            .collect();
        let acoustic = AcousticParams::random(Pooling::Mean, 2, 4, &mut rng);
        let written =
            WrittenViewEmbedder::random(vocab.alphabet().table_size(), 3, 4, 4, &mut rng);
        let mut emb = BatchEmbeddings::compute(&pairs, &acoustic, &written, &vocab);

        // Geometry that satisfies every margin: each view sits exactly on its
        // word's axis, and the two axes are orthogonal.
        let axis = |word: usize| {
            let mut row = Array1::zeros(4);
            row[word] = 1.0;
            row
        };
        for (i, &label) in emb.labels.clone().iter().enumerate() {
            emb.f.row_mut(i).assign(&axis(label));
        }
        for (k, &word) in emb.words.clone().iter().enumerate() {
            emb.g.row_mut(k).assign(&axis(word));
        }
        let satisfied = contrastive_loss_from_embeddings(&emb, 0.5, 2);
        ensure!(satisfied == 0.0, "satisfied margins gave loss {satisfied}");
        let (_, df, dg) = contrastive_loss_and_embedding_grads(&emb, 0.5, 2);
        ensure!(
            df.iter().chain(dg.iter()).all(|&g| g == 0.0),
            "satisfied margins leaked gradient"
        );
        // Tilting each acoustic row toward the other word keeps the wrong
        // word semi-hard (farther than the positive) but inside the margin:
        // d_pos = 1 − 2/√5, d_neg = 1 − 1/√5, hinge ≈ 0.053 per negative.
        for (i, &label) in emb.labels.clone().iter().enumerate() {
            let tilted = axis(label) * 2.0 + axis(1 - label);
            emb.f.row_mut(i).assign(&tilted);
        }
        let violated = contrastive_loss_from_embeddings(&emb, 0.5, 2);
        ensure!(violated > 0.0, "violated margins gave loss {violated}");

        // Batch-level scale invariance on an arbitrary configuration.
        let mut emb = BatchEmbeddings::compute(&pairs, &acoustic, &written, &vocab);
        let reference = contrastive_loss_from_embeddings(&emb, 0.45, 2);
        emb.f *= 3.7;
        emb.g *= 0.25;
        let rescaled = contrastive_loss_from_embeddings(&emb, 0.45, 2);
        ensure!(
            (reference - rescaled).abs() <= 1e-12,
            "loss moved under rescaling: {reference} vs {rescaled}"
        );

        // The 50-word task: cross-view AP must clear 0.9 inside 5k steps.
        let task = SyntheticTask::new(50, 6, 0xAC06);
        let train_pairs = task.word_pairs(600, 1);
        let dev_pairs = task.word_pairs(240, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let acoustic = AcousticParams::random(Pooling::Mean, 6, 16, &mut rng);
        let written =
            WrittenViewEmbedder::random(task.vocab.alphabet().table_size(), 6, 12, 16, &mut rng);
        let cfg = PretrainConfig {
            max_steps: 5000,
            eval_every: 50,
            target_ap: Some(0.9),
            ..Default::default()
        };
        let out = train_multiview(&train_pairs, &dev_pairs, &task.vocab, acoustic, written, &cfg)
            .map_err(|e| format!("pre-training failed: {e}"))?;
        ensure!(
            out.best_ap >= 0.9 && out.steps_run <= 5000,
            "AP {:.4} after {} steps",
            out.best_ap,
            out.steps_run
        );
        Ok(format!("AP {:.3} after {} steps", out.best_ap, out.steps_run))
    });
}

// --- shared artifacts for the end-to-end trend checks -----------------------

struct TrendRuns {
    dev_inputs: Vec<Array2<f64>>,
    dev_refs: Vec<LabelSequence>,
    counts: Vec<usize>,
    s_max: usize,
    random: TrainOutcome,
    awe: TrainOutcome,
    regularized: Vec<(f64, TrainOutcome)>,
    build_time: Duration,
}

/// Words with at most this many training occurrences count as rare.
const RARE_CEILING: usize = 2;

fn rare_rate(runs: &TrendRuns, out: &TrainOutcome) -> (f64, usize) {
    let refs: Vec<&LabelSequence> = runs.dev_refs.iter().collect();
    let (_, alignments) =
        evaluate_wer(&out.encoder, &out.params, &runs.dev_inputs, &refs, runs.s_max);
    let buckets = per_frequency_substitutions(
        &alignments,
        &runs.counts,
        &[(0, RARE_CEILING), (RARE_CEILING + 1, usize::MAX)],
    );
    (buckets[0].rate(), buckets[0].reference_tokens)
}

fn trend_runs() -> &'static TrendRuns {
    static RUNS: OnceLock<TrendRuns> = OnceLock::new();
    RUNS.get_or_init(|| {
        let started = Instant::now();
        // Scarce supervision over a skewed word distribution, noisy enough
        // that one or two examples of a word don't pin it down — the regime
        // where initialization has something to say.
        let mut task = SyntheticTask::new(50, 6, 0xAC07);
        task.zipf_exponent = 1.5;
        task.noise = 0.10;
        let train_data = task.generate(160, 71);
        let dev_data = task.generate(400, 72);
        let counts = train_data.label_counts(task.vocab.size());

        // Embedding pre-training on isolated word tokens. Coverage is
        // uniform over the vocabulary — word frequency in running speech has
        // no bearing on which words have isolated examples — which is what
        // lets the transferred rows rescue words the recognizer rarely sees.
        let mut pair_task = task.clone();
        pair_task.zipf_exponent = 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(0xAC07);
        let acoustic = AcousticParams::random(Pooling::Mean, 6, 16, &mut rng);
        let written =
            WrittenViewEmbedder::random(task.vocab.alphabet().table_size(), 6, 12, 16, &mut rng);
        let pre_cfg = PretrainConfig {
            max_steps: 5000,
            eval_every: 100,
            target_ap: Some(0.93),
            ..Default::default()
        };
        let pre = train_multiview(
            &pair_task.word_pairs(1000, 73),
            &pair_task.word_pairs(300, 74),
            &task.vocab,
            acoustic,
            written,
            &pre_cfg,
        )
        .expect("pre-training runs");

        let s_max = task.max_template_len() * 13 / 10 + 2;
        let cfg = TrainConfig {
            max_segment: s_max,
            batch_size: 8,
            lr: 0.05,
            epochs: 14,
            dropout: Some(0.0),
            lambda: 0.0,
            stack: false,
            stride: 1,
            plateau_patience: 12,
            seed: 5,
        };
        let awe_init = || Init::Pretrained {
            acoustic: pre.acoustic.clone(),
            written: pre.written.clone(),
        };
        let random_init = Init::Random { encoder_dim: 6, embed_dim: 16, pooling: Pooling::Mean };

        let random = train(&train_data, &dev_data, &task.vocab, random_init, &cfg)
            .expect("random-init training runs");
        let awe = train(&train_data, &dev_data, &task.vocab, awe_init(), &cfg)
            .expect("pretrained-init training runs");
        let regularized = [0.1, 0.5]
            .into_iter()
            .map(|lambda| {
                let reg_cfg = TrainConfig { lambda, ..cfg.clone() };
                let out = train(&train_data, &dev_data, &task.vocab, awe_init(), &reg_cfg)
                    .expect("regularized training runs");
                (lambda, out)
            })
            .collect();

        TrendRuns {
            dev_inputs: dev_data.utterances.iter().map(|u| u.frames.view().clone()).collect(),
            dev_refs: dev_data.utterances.iter().map(|u| u.labels.clone()).collect(),
            counts,
            s_max,
            random,
            awe,
            regularized,
            build_time: started.elapsed(),
        }
    })
}

#[test]
fn acceptance_7_pretrained_init_dominates_random_init() {
    check(7, "pre-training trend", || {
        let runs = trend_runs();
        ensure!(
            runs.build_time < Duration::from_secs(30 * 60),
            "shared runs took {:?}, budget 30 min",
            runs.build_time
        );
        for (epoch, (awe, random)) in
            runs.awe.log.iter().zip(&runs.random.log).enumerate().skip(1)
        {
            ensure!(
                awe.dev_wer <= random.dev_wer + 1e-12,
                "epoch {epoch}: pretrained dev WER {:.4} above random {:.4}",
                awe.dev_wer,
                random.dev_wer
            );
        }
        let (awe_rate, awe_tokens) = rare_rate(runs, &runs.awe);
        let (random_rate, random_tokens) = rare_rate(runs, &runs.random);
        ensure!(
            awe_tokens == random_tokens && awe_tokens > 0,
            "rare bucket is empty or inconsistent ({awe_tokens} vs {random_tokens} tokens)"
        );
        ensure!(
            awe_rate <= random_rate + 1e-12,
            "rare-word substitution rate {awe_rate:.4} above random init {random_rate:.4}"
        );
        Ok(format!(
            "dev WER {:.4} vs {:.4}; rare sub rate {:.3} vs {:.3} over {} tokens; built in {:.0?}",
            runs.awe.best_dev_wer,
            runs.random.best_dev_wer,
            awe_rate,
            random_rate,
            awe_tokens,
            runs.build_time
        ))
    });
}

#[test]
fn train_harness_reaches_low_dev_wer_on_a_separable_task() {
    check(0, "train harness", || {
        let started = Instant::now();
        let mut task = SyntheticTask::new(50, 6, 0xAC00);
        task.noise = 0.01;
        task.duration_jitter = 0.0;
        task.zipf_exponent = 0.3;
        let train_data = task.generate(320, 11);
        let dev_data = task.generate(100, 12);
        let cfg = TrainConfig {
            max_segment: task.max_template_len() * 13 / 10 + 2,
            batch_size: 4,
            lr: 0.1,
            epochs: 110,
            dropout: Some(0.0),
            lambda: 0.0,
            stack: false,
            stride: 1,
            plateau_patience: 8,
            seed: 9,
        };
        let init = Init::Random { encoder_dim: 6, embed_dim: 48, pooling: Pooling::Mean };
        let out = train(&train_data, &dev_data, &task.vocab, init, &cfg)
            .map_err(|e| format!("training failed: {e}"))?;
        ensure!(
            out.best_dev_wer <= 0.05,
            "dev WER {:.4} above 5% on a separable task",
            out.best_dev_wer
        );
        Ok(format!("dev WER {:.4} in {:.0?}", out.best_dev_wer, started.elapsed()))
    });
}

#[test]
fn acceptance_8_embedding_regularizer_protects_rare_words() {
    check(8, "embedding regularization", || {
        let runs = trend_runs();
        let (baseline, tokens) = rare_rate(runs, &runs.awe);
        ensure!(tokens > 0, "rare bucket is empty");
        let mut rates = Vec::new();
        for (lambda, out) in &runs.regularized {
            let (rate, _) = rare_rate(runs, out);
            ensure!(
                rate <= baseline + 1e-12,
                "λ={lambda}: rare-word substitution rate {rate:.4} above λ=0 baseline {baseline:.4}"
            );
            rates.push(format!("λ={lambda}: {rate:.3}"));
        }
        Ok(format!("baseline {baseline:.3}; {}", rates.join(", ")))
    });
}
