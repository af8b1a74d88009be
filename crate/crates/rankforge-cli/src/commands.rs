//! Subcommand implementations.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};

use rankforge::data::{
    qrels_from_candidates, read_candidates, read_qrels, read_run, tokenize, write_candidates,
    write_qrels, write_run, CandidateList, PositiveSelection, Vocabulary,
};
use rankforge::eval::{
    evaluate, format_eval_text, rerank as rerank_lists, write_eval_tsv, EvalOptions, MetricSpec,
    MissingQrels, RerankOptions,
};
use rankforge::experiments::{
    build_vocab_over, gradcheck_report, run_sweep, zeroshot_eval, BenchmarkSettings, SweepKind,
};
use rankforge::model::{HeadVariant, ModelConfig, Pooling, RankerModel};
use rankforge::synth::{generate, SynthConfig};
use rankforge::train::{
    train_with_callback, write_loss_curve, Optimizer, TrainConfig, TrainLoss,
};

use crate::overlay::{OutDir, Overlay};
use crate::{
    EvalArgs, GradcheckArgs, RerankArgs, SweepArgs, SynthArgs, TrainArgs, ZeroshotArgs,
};

/// Prints the empty-document summary the library scores silently.
fn warn_empty_docs(lists: &[CandidateList], what: &str) {
    let (mut empty, mut total) = (0usize, 0usize);
    for list in lists {
        for doc in &list.docs {
            total += 1;
            empty += usize::from(tokenize(&doc.text).is_empty());
        }
    }
    if empty > 0 {
        eprintln!(
            "warning: {empty} of {total} documents in {what} have empty text; \
             they are scored via the empty-document placeholder"
        );
    }
}

fn read_lists(path: &Path, binary: bool) -> Result<Vec<CandidateList>> {
    let lists = read_candidates(path, binary)
        .with_context(|| format!("read candidates {}", path.display()))?;
    warn_empty_docs(&lists, &path.display().to_string());
    Ok(lists)
}

pub fn synth(args: SynthArgs) -> Result<()> {
    let cfg = Overlay::load(args.common.config.as_deref())?;
    let defaults = SynthConfig::default();
    let synth_cfg = SynthConfig {
        seed: cfg.get(args.seed, "seed", defaults.seed)?,
        train_queries: cfg.get(args.train_queries, "train_queries", defaults.train_queries)?,
        dev_queries: cfg.get(args.dev_queries, "dev_queries", defaults.dev_queries)?,
        candidates_per_query: cfg.get(args.candidates, "candidates", defaults.candidates_per_query)?,
        key_vocab: cfg.get(args.key_vocab, "key_vocab", defaults.key_vocab)?,
        common_vocab: cfg.get(args.common_vocab, "common_vocab", defaults.common_vocab)?,
        phrase_len: cfg.get(args.phrase_len, "phrase_len", defaults.phrase_len)?,
        neg_key_overlap: cfg.get(args.neg_key_overlap, "neg_key_overlap", defaults.neg_key_overlap)?,
        common_overlap: cfg.get(args.common_overlap, "common_overlap", defaults.common_overlap)?,
        key_offset: cfg.get(args.key_offset, "key_offset", defaults.key_offset)?,
    };
    let out = OutDir::create(cfg.require(args.out, "out")?)?;
    let corpus = generate(&synth_cfg)?;
    write_candidates(&out.path("train.jsonl"), &corpus.train)?;
    write_candidates(&out.path("dev.jsonl"), &corpus.dev)?;
    write_qrels(&out.path("train.qrels"), &qrels_from_candidates(&corpus.train))?;
    write_qrels(&out.path("dev.qrels"), &qrels_from_candidates(&corpus.dev))?;
    let snapshot = serde_json::to_string_pretty(&synth_cfg)?;
    std::fs::write(out.path("synth_config.json"), snapshot + "\n")?;
    println!(
        "wrote {} train and {} dev queries ({} candidates each) to {}",
        corpus.train.len(),
        corpus.dev.len(),
        synth_cfg.candidates_per_query,
        out.display()
    );
    Ok(())
}

pub fn train(args: TrainArgs) -> Result<()> {
    let start = Instant::now();
    let cfg = Overlay::load(args.common.config.as_deref())?;
    let out = OutDir::create(cfg.require(args.out, "out")?)?;
    let data_path: PathBuf = cfg.require(args.data, "data")?;
    let graded = cfg.flag(args.graded_labels, "graded_labels")?;
    let corpus = read_lists(&data_path, !graded)?;
    let dev: Option<Vec<CandidateList>> = match cfg.lookup_path(args.dev, "dev")? {
        Some(path) => Some(read_lists(&path, false)?),
        None => None,
    };

    let vocab = match cfg.lookup_path(args.vocab, "vocab")? {
        Some(path) => {
            Vocabulary::load(&path).with_context(|| format!("load vocab {}", path.display()))?
        }
        None => {
            let mut all: Vec<CandidateList> = corpus.clone();
            if let Some(dev) = &dev {
                all.extend(dev.iter().cloned());
            }
            for extra in &args.vocab_extra {
                all.extend(read_lists(extra, false)?);
            }
            build_vocab_over(&all)?
        }
    };
    vocab.save(&out.path("vocab.tsv"))?;

    let preset = cfg.get(args.preset, "preset", "tiny".to_string())?;
    let mut model_cfg = ModelConfig::preset(&preset, vocab.len())?;
    model_cfg.seed = args.seed;
    let head = cfg.get(args.head, "head", "encdec".to_string())?;
    model_cfg.head_variant = match head.as_str() {
        "encdec" => HeadVariant::EncdecTokenLogit,
        "enc" => HeadVariant::EncPoolDense,
        "generation" => HeadVariant::GenerationBaseline,
        other => anyhow::bail!("unknown head {other:?}: expected encdec, enc, or generation"),
    };
    if let Some(pooling) = cfg.lookup_opt::<String>(args.pooling, "pooling")? {
        model_cfg.pooling = match pooling.as_str() {
            "first" => Pooling::First,
            "mean" => Pooling::Mean,
            other => anyhow::bail!("unknown pooling {other:?}: expected first or mean"),
        };
    }
    if !model_cfg.head_variant.needs_decoder() {
        model_cfg.decoder_layers = 0;
    }

    let dft = TrainConfig::default();
    let train_cfg = TrainConfig {
        loss: TrainLoss::parse(&cfg.get(args.loss, "loss", "softmax".to_string())?)?,
        epsilon: cfg.get(args.epsilon, "epsilon", dft.epsilon)?,
        list_size: cfg.get(args.list_size, "list_size", dft.list_size)?,
        batch_size: cfg.get(args.batch_size, "batch_size", dft.batch_size)?,
        learning_rate: cfg.get(args.learning_rate, "learning_rate", dft.learning_rate)?,
        steps: cfg.get(args.steps, "steps", dft.steps)?,
        seed: args.seed,
        eval_every: cfg.get(args.eval_every, "eval_every", dft.eval_every)?,
        optimizer: match cfg.get(args.optimizer, "optimizer", "adam".to_string())?.as_str() {
            "adam" => Optimizer::Adam,
            "sgd" => Optimizer::Sgd,
            other => anyhow::bail!("unknown optimizer {other:?}: expected adam or sgd"),
        },
        positive_selection: match cfg
            .get(args.positive_selection, "positive_selection", "sample".to_string())?
            .as_str()
        {
            "sample" => PositiveSelection::Sample,
            "first" => PositiveSelection::First,
            other => anyhow::bail!("unknown positive selection {other:?}"),
        },
        with_postfix: cfg.flag(args.with_postfix, "with_postfix")?,
    };

    let snapshot = serde_json::json!({ "model": &model_cfg, "train": &train_cfg });
    std::fs::write(
        out.path("train_config.json"),
        serde_json::to_string_pretty(&snapshot)? + "\n",
    )?;

    let mut model = RankerModel::new(model_cfg)?;
    println!(
        "training {} parameters on {} queries (loss {}, {} steps)",
        model.param_count(),
        corpus.len(),
        train_cfg.loss.as_str(),
        train_cfg.steps
    );
    let final_step = train_cfg.steps;
    let report = train_with_callback(&mut model, &train_cfg, &corpus, &vocab, |step, m| {
        if step < final_step {
            m.save(&out.path(&format!("checkpoint-step-{step}.ckpt")))?;
        }
        if let Some(dev) = &dev {
            let report = rankforge::experiments::dev_report(m, &vocab, dev, "mrr@10")?;
            println!("step {step:6}  dev mrr@10 {:.4}", report.means[0]);
        }
        Ok(())
    })?;
    model.save(&out.path("model.ckpt"))?;
    write_loss_curve(&out.path("loss_curve.csv"), &report.loss_curve)?;
    if report.skipped_queries > 0 {
        eprintln!(
            "warning: {} queries lacked a positive or a negative and were not trained on",
            report.skipped_queries
        );
    }
    println!(
        "final loss {:.6} after {} steps ({:.1}s); artifacts in {}",
        report.final_loss,
        final_step,
        start.elapsed().as_secs_f64(),
        out.display()
    );
    Ok(())
}

pub fn rerank(args: RerankArgs) -> Result<()> {
    let cfg = Overlay::load(args.common.config.as_deref())?;
    let out = OutDir::create(cfg.require(args.out, "out")?)?;
    let checkpoint: PathBuf = cfg.require(args.checkpoint, "checkpoint")?;
    let vocab_path: PathBuf = cfg.require(args.vocab, "vocab")?;
    let data: PathBuf = cfg.require(args.data, "data")?;
    let model = RankerModel::load(&checkpoint)?;
    let vocab = Vocabulary::load(&vocab_path)?;
    let lists = read_lists(&data, false)?;
    let mut opts = RerankOptions {
        top_k: cfg.get(args.top_k, "top_k", 1000)?,
        tag: cfg.get(args.tag, "tag", "rankforge".to_string())?,
        ..RerankOptions::default()
    };
    opts.template.max_seq_len = model.config.max_seq_len;
    opts.template.with_postfix = cfg.flag(args.with_postfix, "with_postfix")?;
    let outcome = rerank_lists(&model, &vocab, &lists, &opts)?;
    write_run(&out.path("run.trec"), &outcome.entries, &opts.tag)?;
    for qid in &outcome.skipped_queries {
        eprintln!("warning: query {qid} has no candidates; skipped");
    }
    if outcome.truncated > 0 {
        eprintln!(
            "note: {} sequences were truncated to fit {} tokens",
            outcome.truncated, model.config.max_seq_len
        );
    }
    println!(
        "wrote {} run entries for {} queries to {}",
        outcome.entries.len(),
        lists.len() - outcome.skipped_queries.len(),
        out.path("run.trec").display()
    );
    Ok(())
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let cfg = Overlay::load(args.common.config.as_deref())?;
    let out = OutDir::create(cfg.require(args.out, "out")?)?;
    let run_path: PathBuf = cfg.require(args.run, "run")?;
    let qrels_path: PathBuf = cfg.require(args.qrels, "qrels")?;
    let run = read_run(&run_path)?;
    let qrels = read_qrels(&qrels_path)?;
    let metric_list = cfg.get(args.metrics, "metrics", "mrr@10,ndcg@10,map".to_string())?;
    let metrics = metric_list
        .split(',')
        .map(|s| MetricSpec::parse(s.trim()))
        .collect::<Result<Vec<_>, _>>()?;
    let missing = match cfg.get(args.missing, "missing", "zero".to_string())?.as_str() {
        "zero" => MissingQrels::Zero,
        "drop" => MissingQrels::Drop,
        other => anyhow::bail!("unknown missing-judgment policy {other:?}: expected zero or drop"),
    };
    let baseline = match cfg.lookup_path(args.baseline, "baseline")? {
        Some(path) => Some(read_run(&path)?),
        None => None,
    };
    let opts = EvalOptions { metrics, missing };
    let report = evaluate(&run, &qrels, &opts, baseline.as_deref())?;
    print!("{}", format_eval_text(&report));
    write_eval_tsv(&out.path("eval.tsv"), &report)?;
    std::fs::write(
        out.path("eval.json"),
        serde_json::to_string_pretty(&report)? + "\n",
    )?;
    Ok(())
}

pub fn sweep(args: SweepArgs) -> Result<()> {
    let cfg = Overlay::load(args.common.config.as_deref())?;
    let out = OutDir::create(cfg.require(args.out, "out")?)?;
    let kind = SweepKind::parse(&cfg.get(args.kind, "kind", "list_size".to_string())?)?;
    let dft = BenchmarkSettings::default();
    let seeds = match cfg.lookup_opt::<String>(args.seeds, "seeds")? {
        None => dft.seeds.clone(),
        Some(list) => list
            .split(',')
            .map(|s| s.trim().parse::<u64>().context("seeds must be integers"))
            .collect::<Result<Vec<_>>>()?,
    };
    let mut settings = BenchmarkSettings {
        steps: cfg.get(args.steps, "steps", dft.steps)?,
        batch_size: cfg.get(args.batch_size, "batch_size", dft.batch_size)?,
        learning_rate: cfg.get(args.learning_rate, "learning_rate", dft.learning_rate)?,
        list_size: cfg.get(args.list_size, "list_size", dft.list_size)?,
        seeds,
        ..dft
    };
    settings.synth.train_queries =
        cfg.get(args.train_queries, "train_queries", settings.synth.train_queries)?;
    settings.synth.dev_queries =
        cfg.get(args.dev_queries, "dev_queries", settings.synth.dev_queries)?;
    settings.synth.candidates_per_query =
        cfg.get(args.candidates, "candidates", settings.synth.candidates_per_query)?;

    println!(
        "sweeping {kind:?} ({} steps, seeds {:?})",
        settings.steps, settings.seeds
    );
    let outcome = run_sweep(kind, &settings)?;
    outcome.result.write_json(&out.path("sweep.json"))?;
    outcome.result.write_tsv(&out.path("sweep.tsv"))?;
    std::fs::write(out.path("plot.csv"), &outcome.plot_csv)?;
    print!("{}", outcome.plot_csv);
    for (run, err) in &outcome.matrix.failures {
        eprintln!("warning: {run} failed: {err}");
    }
    println!("results in {}", out.display());
    Ok(())
}

pub fn zeroshot(args: ZeroshotArgs) -> Result<()> {
    let cfg = Overlay::load(args.common.config.as_deref())?;
    let out = OutDir::create(cfg.require(args.out, "out")?)?;
    let checkpoint: PathBuf = cfg.require(args.checkpoint, "checkpoint")?;
    let vocab_path: PathBuf = cfg.require(args.vocab, "vocab")?;
    anyhow::ensure!(!args.data.is_empty(), "zeroshot needs at least one --data file");
    let vocab = Vocabulary::load(&vocab_path)?;
    let mut datasets = Vec::with_capacity(args.data.len());
    let mut seen = std::collections::HashSet::new();
    for path in &args.data {
        let base = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        let mut name = base.clone();
        let mut n = 2;
        while !seen.insert(name.clone()) {
            name = format!("{base}-{n}");
            n += 1;
        }
        datasets.push((name, read_lists(path, false)?));
    }
    let report = zeroshot_eval(&checkpoint, &vocab, &datasets)?;
    let table = report.format_table();
    print!("{table}");
    std::fs::write(out.path("zeroshot.txt"), &table)?;
    std::fs::write(
        out.path("zeroshot.json"),
        serde_json::to_string_pretty(&report)? + "\n",
    )?;
    anyhow::ensure!(
        report.checkpoint_hash_before == report.checkpoint_hash_after,
        "checkpoint changed during evaluation"
    );
    Ok(())
}

pub fn gradcheck(args: GradcheckArgs) -> Result<()> {
    let cfg = Overlay::load(args.common.config.as_deref())?;
    let seed = cfg.get(args.seed, "seed", 17u64)?;
    let lists = cfg.get(args.lists, "lists", 200)?;
    let instances = cfg.get(args.instances, "instances", 20)?;
    let report = gradcheck_report(seed, lists, instances)?;
    print!("{}", report.format_table());
    if let Some(out) = args.out {
        let out = OutDir::create(out)?;
        std::fs::write(
            out.path("gradcheck.json"),
            serde_json::to_string_pretty(&report)? + "\n",
        )?;
    }
    Ok(())
}
