//! End-to-end checks of the `segword` binary: the documented exit codes, the
//! pipeline happy path, and decode determinism.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn segword() -> Command {
    Command::new(env!("CARGO_BIN_EXE_segword"))
}

fn run(args: &[&str], dir: &Path) -> Output {
    segword()
        .args(args)
        .current_dir(dir)
        .output()
        .expect("spawn segword")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap()
}

fn assert_code(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "stdout:\n{}\nstderr:\n{}",
        stdout(out),
        stderr(out)
    );
}

/// Tiny dataset + configs shared by the pipeline tests.
fn gen_workspace() -> TempDir {
    let tmp = TempDir::new().unwrap();
    let out = run(
        &[
            "gen", "--out", "data", "--vocab-size", "6", "--frame-dim", "4", "--train", "12",
            "--dev", "6", "--seed", "9", "--noise", "0.02",
        ],
        tmp.path(),
    );
    assert_code(&out, 0);
    tmp
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

const TRAIN_CFG: &str = "train = data/train/manifest.tsv\n\
                         dev = data/dev/manifest.tsv\n\
                         vocab = data/vocab.tsv\n\
                         counts = data/train/counts.tsv\n\
                         out = model.sgwc\n\
                         epochs = 2\n\
                         batch_size = 4\n\
                         lr = 0.05\n\
                         dropout = 0.0\n\
                         encoder_dim = 4\n\
                         embed_dim = 6\n\
                         pooling = mean\n\
                         seed = 3\n";

const PRETRAIN_CFG: &str = "vocab = data/vocab.tsv\n\
                            dataset = data/train/manifest.tsv\n\
                            pairs = data/train/pairs.tsv\n\
                            dev_dataset = data/dev/manifest.tsv\n\
                            dev_pairs = data/dev/pairs.tsv\n\
                            out = embedder.sgwc\n\
                            embed_dim = 6\n\
                            char_dim = 4\n\
                            hidden_dim = 5\n\
                            max_steps = 6\n\
                            eval_every = 3\n\
                            seed = 2\n";

#[test]
fn pipeline_runs_and_decode_is_deterministic() {
    let tmp = gen_workspace();
    write(tmp.path(), "train.cfg", TRAIN_CFG);
    assert_code(&run(&["train", "train.cfg"], tmp.path()), 0);

    let first = run(&["decode", "model.sgwc", "data/dev/manifest.tsv"], tmp.path());
    assert_code(&first, 0);
    assert_eq!(stdout(&first).lines().count(), 6);
    // Same input twice: identical bytes, regardless of the thread count.
    let again = run(&["decode", "model.sgwc", "data/dev/manifest.tsv"], tmp.path());
    assert_eq!(first.stdout, again.stdout);
    let threaded = segword()
        .args(["decode", "model.sgwc", "data/dev/manifest.tsv"])
        .env("SEGWORD_THREADS", "3")
        .current_dir(tmp.path())
        .output()
        .unwrap();
    assert_eq!(first.stdout, threaded.stdout);

    let dumped = run(
        &["decode", "model.sgwc", "data/dev/manifest.tsv", "--dump-segments"],
        tmp.path(),
    );
    assert_code(&dumped, 0);
    for line in stdout(&dumped).lines() {
        let fields: Vec<&str> = line.split('\t').collect();
        assert_eq!(fields.len(), 3, "line {line:?}");
        for triple in fields[2].split_whitespace() {
            assert_eq!(triple.split(':').count(), 3, "segment {triple:?}");
        }
    }

    // Round trip through eval: hypotheses vs themselves score zero.
    fs::write(tmp.path().join("hyp.tsv"), &first.stdout).unwrap();
    let eval = run(&["eval", "hyp.tsv", "hyp.tsv"], tmp.path());
    assert_code(&eval, 0);
    assert!(stdout(&eval).contains("corpus\twer\t0.0000"), "{}", stdout(&eval));
}

#[test]
fn pretrain_writes_a_loadable_checkpoint_and_dry_run_touches_nothing() {
    let tmp = gen_workspace();
    write(tmp.path(), "pre.cfg", PRETRAIN_CFG);
    let dry = run(&["pretrain", "pre.cfg", "--dry-run"], tmp.path());
    assert_code(&dry, 0);
    assert!(!tmp.path().join("embedder.sgwc").exists());

    assert_code(&run(&["pretrain", "pre.cfg"], tmp.path()), 0);
    assert!(tmp.path().join("embedder.sgwc").exists());

    // The checkpoint initializes training (identity encoder needs the raw
    // frame dim, which matches here).
    write(tmp.path(), "train.cfg", TRAIN_CFG);
    let out = run(&["train", "train.cfg", "--init", "embedder.sgwc"], tmp.path());
    assert_code(&out, 0);
    assert!(stdout(&out).contains("init\tpretrained"));
}

#[test]
fn config_problems_exit_2() {
    let tmp = gen_workspace();
    // Unknown key.
    write(tmp.path(), "bad.cfg", &format!("{TRAIN_CFG}typo_key = 1\n"));
    assert_code(&run(&["train", "bad.cfg"], tmp.path()), 2);
    // Missing dataset path.
    write(
        tmp.path(),
        "missing.cfg",
        &PRETRAIN_CFG.replace("data/train/pairs.tsv", "data/train/nope.tsv"),
    );
    assert_code(&run(&["pretrain", "missing.cfg", "--dry-run"], tmp.path()), 2);
    // Lambda outside [0, 1].
    write(tmp.path(), "train.cfg", TRAIN_CFG);
    assert_code(&run(&["train", "train.cfg", "--agwe-reg", "1.5"], tmp.path()), 2);
    // Regularization without a pretrained init.
    assert_code(&run(&["train", "train.cfg", "--agwe-reg", "0.1"], tmp.path()), 2);
}

#[test]
fn empty_pair_list_exits_3() {
    let tmp = gen_workspace();
    fs::write(tmp.path().join("data/train/pairs.tsv"), "").unwrap();
    write(tmp.path(), "pre.cfg", PRETRAIN_CFG);
    assert_code(&run(&["pretrain", "pre.cfg"], tmp.path()), 3);
}

#[test]
fn init_dimension_mismatch_exits_4() {
    let tmp = gen_workspace();
    write(tmp.path(), "pre.cfg", PRETRAIN_CFG);
    assert_code(&run(&["pretrain", "pre.cfg"], tmp.path()), 0);
    // Same vocabulary, different frame dim: the identity encoder can't fit.
    let out = run(
        &[
            "gen", "--out", "data2", "--vocab-size", "6", "--frame-dim", "5", "--train", "8",
            "--dev", "4", "--seed", "9", "--noise", "0.02",
        ],
        tmp.path(),
    );
    assert_code(&out, 0);
    let cfg2 = TRAIN_CFG.replace("data/", "data2/");
    write(tmp.path(), "train2.cfg", &cfg2);
    assert_code(&run(&["train", "train2.cfg", "--init", "embedder.sgwc"], tmp.path()), 4);
}

#[test]
fn corrupt_container_exits_5() {
    let tmp = gen_workspace();
    write(tmp.path(), "train.cfg", TRAIN_CFG);
    assert_code(&run(&["train", "train.cfg"], tmp.path()), 0);
    let model = tmp.path().join("model.sgwc");
    let mut bytes = fs::read(&model).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x01;
    fs::write(&model, &bytes).unwrap();
    assert_code(&run(&["decode", "model.sgwc", "data/dev/manifest.tsv"], tmp.path()), 5);
}

#[test]
fn eval_mismatches_exit_6_and_known_rates_come_out() {
    let tmp = TempDir::new().unwrap();
    // 2 errors over 10 reference words → 20%.
    write(tmp.path(), "ref.tsv", "u1\ta b c d e\nu2\tf g h i j\n");
    write(tmp.path(), "hyp.tsv", "u1\ta b x d e\nu2\tf g h i\n");
    let out = run(&["eval", "hyp.tsv", "ref.tsv"], tmp.path());
    assert_code(&out, 0);
    assert!(stdout(&out).contains("corpus\twer\t0.2000"), "{}", stdout(&out));

    // Unknown utterance id.
    write(tmp.path(), "hyp2.tsv", "u1\ta b x d e\nu3\tf g h i\n");
    let out = run(&["eval", "hyp2.tsv", "ref.tsv"], tmp.path());
    assert_code(&out, 6);
    assert!(stderr(&out).contains("u3"), "{}", stderr(&out));

    // Malformed line (no tab).
    write(tmp.path(), "hyp3.tsv", "u1 a b\n");
    assert_code(&run(&["eval", "hyp3.tsv", "ref.tsv"], tmp.path()), 6);

    // Empty reference is undefined.
    write(tmp.path(), "ref2.tsv", "u1\t\nu2\tf g h i j\n");
    write(tmp.path(), "hyp4.tsv", "u1\ta\nu2\tf g h i j\n");
    assert_code(&run(&["eval", "hyp4.tsv", "ref2.tsv"], tmp.path()), 6);
}

#[test]
fn decoding_an_empty_dataset_prints_nothing() {
    let tmp = gen_workspace();
    write(tmp.path(), "train.cfg", TRAIN_CFG);
    assert_code(&run(&["train", "train.cfg"], tmp.path()), 0);
    write(tmp.path(), "empty.tsv", "");
    let out = run(&["decode", "model.sgwc", "empty.tsv"], tmp.path());
    assert_code(&out, 0);
    assert!(out.stdout.is_empty());
}

#[test]
fn bench_handles_a_trivial_grid() {
    let tmp = TempDir::new().unwrap();
    let out = run(&["bench", "--t-grid", "1", "--reps", "1"], tmp.path());
    assert_code(&out, 0);
    assert!(stdout(&out).contains("scoring aux peak"));
}
