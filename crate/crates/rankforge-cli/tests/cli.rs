//! End-to-end tests of the `rankforge` binary: every subcommand, artifact
//! determinism, config-file overrides, and agreement with the library.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_rankforge")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "rankforge {args:?} failed:\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Generates a small corpus and returns (dir, train.jsonl, dev.jsonl).
fn small_corpus(root: &Path, seed: &str, extra: &[&str]) -> (PathBuf, PathBuf) {
    let dir = root.join(format!("corpus-{seed}"));
    let mut args = vec![
        "synth",
        "--out",
        path_str(&dir),
        "--seed",
        seed,
        "--train-queries",
        "30",
        "--dev-queries",
        "8",
        "--candidates",
        "10",
    ];
    args.extend_from_slice(extra);
    run_ok(&args);
    (dir.join("train.jsonl"), dir.join("dev.jsonl"))
}

#[test]
fn synth_is_deterministic_and_self_contained() {
    let tmp = tempfile::tempdir().unwrap();
    let (train_a, dev_a) = small_corpus(tmp.path(), "11", &[]);
    let before = std::fs::read(&train_a).unwrap();
    // Regenerating with the same seed overwrites with identical bytes.
    let (train_b, _) = small_corpus(tmp.path(), "11", &[]);
    assert_eq!(train_a, train_b);
    assert_eq!(before, std::fs::read(&train_b).unwrap());
    assert!(dev_a.exists());
    let dir = train_a.parent().unwrap();
    assert!(dir.join("synth_config.json").exists());
    // Qrels match the labels embedded in the candidate files.
    let qrels = rankforge::data::read_qrels(&dir.join("dev.qrels")).unwrap();
    let lists = rankforge::data::read_candidates(&dev_a, true).unwrap();
    assert_eq!(qrels, rankforge::data::qrels_from_candidates(&lists));
    // All artifacts stay inside --out.
    let names: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    assert_eq!(names.len(), 5, "{names:?}");
}

#[test]
fn train_requires_seed_on_the_command_line() {
    let tmp = tempfile::tempdir().unwrap();
    let (train, _) = small_corpus(tmp.path(), "12", &[]);
    let out = run(&[
        "train",
        "--out",
        path_str(&tmp.path().join("run")),
        "--data",
        path_str(&train),
        "--steps",
        "1",
    ]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("--seed"), "{stderr}");
}

fn train_small(root: &Path, data: &Path, dir_name: &str, extra: &[&str]) -> PathBuf {
    let out = root.join(dir_name);
    let mut args = vec![
        "train",
        "--out",
        path_str(&out),
        "--data",
        path_str(data),
        "--seed",
        "3",
        "--steps",
        "40",
        "--batch-size",
        "2",
        "--learning-rate",
        "1e-3",
        "--list-size",
        "5",
        "--eval-every",
        "20",
    ];
    args.extend_from_slice(extra);
    run_ok(&args);
    out
}

#[test]
fn training_artifacts_are_deterministic_across_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let (train, _) = small_corpus(tmp.path(), "13", &[]);
    let a = train_small(tmp.path(), &train, "run-a", &[]);
    let b = train_small(tmp.path(), &train, "run-b", &[]);
    for name in [
        "model.ckpt",
        "checkpoint-step-20.ckpt",
        "vocab.tsv",
        "loss_curve.csv",
        "train_config.json",
    ] {
        let lhs = std::fs::read(a.join(name)).unwrap();
        let rhs = std::fs::read(b.join(name)).unwrap();
        assert_eq!(lhs, rhs, "{name} differs between identical runs");
    }
    let curve = std::fs::read_to_string(a.join("loss_curve.csv")).unwrap();
    assert!(curve.starts_with("step,loss\n"));
    assert_eq!(curve.lines().count(), 41, "header plus one row per step");
}

#[test]
fn rerank_is_deterministic_and_matches_library_composition() {
    let tmp = tempfile::tempdir().unwrap();
    let (train, dev) = small_corpus(tmp.path(), "14", &[]);
    let run_dir = train_small(tmp.path(), &train, "run", &[]);
    let rerank = |name: &str| -> PathBuf {
        let out = tmp.path().join(name);
        run_ok(&[
            "rerank",
            "--out",
            path_str(&out),
            "--checkpoint",
            path_str(&run_dir.join("model.ckpt")),
            "--vocab",
            path_str(&run_dir.join("vocab.tsv")),
            "--data",
            path_str(&dev),
            "--top-k",
            "4",
        ]);
        out.join("run.trec")
    };
    let first = rerank("rr-a");
    let second = rerank("rr-b");
    let body = std::fs::read_to_string(&first).unwrap();
    assert_eq!(body, std::fs::read_to_string(&second).unwrap());
    // 8 dev queries x top_k 4.
    assert_eq!(body.lines().count(), 32);

    // The binary's run agrees with scoring + sorting through the library.
    let model = rankforge::model::RankerModel::load(&run_dir.join("model.ckpt")).unwrap();
    let vocab = rankforge::data::Vocabulary::load(&run_dir.join("vocab.tsv")).unwrap();
    let lists = rankforge::data::read_candidates(&dev, false).unwrap();
    let mut opts = rankforge::eval::RerankOptions {
        top_k: 4,
        ..Default::default()
    };
    opts.template.max_seq_len = model.config.max_seq_len;
    let outcome = rankforge::eval::rerank(&model, &vocab, &lists, &opts).unwrap();
    let entries = rankforge::data::read_run(&first).unwrap();
    assert_eq!(entries.len(), outcome.entries.len());
    for (got, want) in entries.iter().zip(&outcome.entries) {
        assert_eq!(got.query_id, want.query_id);
        assert_eq!(got.doc_id, want.doc_id);
        assert_eq!(got.rank, want.rank);
        // Written scores are rounded to 6 decimals.
        assert!((got.score - want.score).abs() < 5e-7);
    }
}

#[test]
fn eval_reports_means_and_significance_markers() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    // Hand-built judgments and two runs: candidate perfect, baseline wrong.
    std::fs::write(
        dir.join("qrels.txt"),
        "q1 0 good 1\nq2 0 good 1\nq3 0 good 1\n",
    )
    .unwrap();
    let mut cand = String::new();
    let mut base = String::new();
    for q in ["q1", "q2", "q3"] {
        cand.push_str(&format!("{q} Q0 good 1 2.000000 t\n{q} Q0 bad 2 1.000000 t\n"));
        base.push_str(&format!("{q} Q0 bad 1 2.000000 t\n{q} Q0 good 2 1.000000 t\n"));
    }
    std::fs::write(dir.join("cand.trec"), cand).unwrap();
    std::fs::write(dir.join("base.trec"), base).unwrap();
    let stdout = run_ok(&[
        "eval",
        "--out",
        path_str(&dir.join("ev")),
        "--run",
        path_str(&dir.join("cand.trec")),
        "--qrels",
        path_str(&dir.join("qrels.txt")),
        "--metrics",
        "mrr@10,ndcg@10",
        "--baseline",
        path_str(&dir.join("base.trec")),
    ]);
    assert!(stdout.contains('*'), "expected significance marker:\n{stdout}");
    let tsv = std::fs::read_to_string(dir.join("ev/eval.tsv")).unwrap();
    assert!(tsv.ends_with("ALL\t1.000000\t1.000000\n"), "{tsv}");
    assert!(dir.join("ev/eval.json").exists());

    // Identical runs: no markers.
    let stdout = run_ok(&[
        "eval",
        "--out",
        path_str(&dir.join("ev2")),
        "--run",
        path_str(&dir.join("cand.trec")),
        "--qrels",
        path_str(&dir.join("qrels.txt")),
        "--baseline",
        path_str(&dir.join("cand.trec")),
    ]);
    let markers = stdout
        .lines()
        .filter(|l| !l.starts_with("* ="))
        .filter(|l| l.contains('*'))
        .count();
    assert_eq!(markers, 0, "{stdout}");
}

#[test]
fn config_file_supplies_defaults_and_flags_override() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(
        dir.join("synth.json"),
        r#"{"train_queries": 7, "dev_queries": 3, "candidates": 6, "seed": 99}"#,
    )
    .unwrap();
    // --dev-queries on the command line beats the config value.
    run_ok(&[
        "synth",
        "--config",
        path_str(&dir.join("synth.json")),
        "--out",
        path_str(&dir.join("c")),
        "--dev-queries",
        "5",
    ]);
    let count = |p: PathBuf| std::fs::read_to_string(p).unwrap().lines().count();
    assert_eq!(count(dir.join("c/train.jsonl")), 7);
    assert_eq!(count(dir.join("c/dev.jsonl")), 5);

    // Nested config files are rejected (flat key-value contract).
    std::fs::write(dir.join("nested.json"), r#"{"synth": {"seed": 1}}"#).unwrap();
    let out = run(&[
        "synth",
        "--config",
        path_str(&dir.join("nested.json")),
        "--out",
        path_str(&dir.join("n")),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("flat"));
}

#[test]
fn zeroshot_table_covers_all_datasets_and_checkpoint_is_untouched() {
    let tmp = tempfile::tempdir().unwrap();
    let (train, dev) = small_corpus(tmp.path(), "15", &[]);
    // A second domain with disjoint keys, included in the training vocab.
    let b_dir = tmp.path().join("corpus-b");
    run_ok(&[
        "synth",
        "--out",
        path_str(&b_dir),
        "--seed",
        "77",
        "--train-queries",
        "0",
        "--dev-queries",
        "6",
        "--candidates",
        "10",
        "--key-offset",
        "50000",
    ]);
    let b_dev = b_dir.join("dev.jsonl");
    let run_dir = train_small(
        tmp.path(),
        &train,
        "run",
        &["--vocab-extra", path_str(&b_dev)],
    );
    let ckpt = run_dir.join("model.ckpt");
    let before = std::fs::read(&ckpt).unwrap();
    let stdout = run_ok(&[
        "zeroshot",
        "--out",
        path_str(&tmp.path().join("zs")),
        "--checkpoint",
        path_str(&ckpt),
        "--vocab",
        path_str(&run_dir.join("vocab.tsv")),
        "--data",
        path_str(&b_dev),
        "--data",
        path_str(&dev),
    ]);
    assert!(stdout.contains("macro-average"));
    assert!(stdout.contains("unchanged: true"));
    assert_eq!(before, std::fs::read(&ckpt).unwrap());
    let report: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(tmp.path().join("zs/zeroshot.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(report["rows"].as_array().unwrap().len(), 2);
}

#[test]
fn gradcheck_prints_every_cell_under_tolerance() {
    let stdout = run_ok(&["gradcheck", "--lists", "3", "--instances", "1", "--seed", "2"]);
    assert!(stdout.contains("loss/softmax"));
    assert!(stdout.contains("e2e/enc_pool_dense+poly1"));
    assert!(stdout.contains("loss-level max"));
}

#[test]
fn sweep_writes_table_plot_and_result_json() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("sweep");
    run_ok(&[
        "sweep",
        "--out",
        path_str(&out),
        "--kind",
        "loss",
        "--steps",
        "2",
        "--train-queries",
        "8",
        "--dev-queries",
        "3",
        "--candidates",
        "6",
        "--list-size",
        "3",
        "--seeds",
        "1",
    ]);
    let tsv = std::fs::read_to_string(out.join("sweep.tsv")).unwrap();
    // Header plus one row per (run, metric): 5 losses x 1 seed x 1 metric.
    assert_eq!(tsv.lines().count(), 6, "{tsv}");
    let plot = std::fs::read_to_string(out.join("plot.csv")).unwrap();
    assert!(plot.starts_with("loss,mean_dev_mrr_at_10\n"));
    assert_eq!(plot.lines().count(), 6, "{plot}");
    assert!(out.join("sweep.json").exists());
}
