mod common;

use std::fs;
use std::process::Command;

use common::*;
use selfnet::artifact::{Checkpoint, EmbeddingArtifact};
use selfnet::data::read_split_file;
use selfnet::eval::{compute_metrics, read_heatmap_csv, read_heatmap_json, round6};
use selfnet::subword::compose_vector;
use selfnet::synthetic::{elongation_corpus, planted_split, PlantedConfig};
use selfnet::AttentionPool;
use selfnet_cli::*;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_selfnet"));
    c.env_remove(SEED_ENV);
    c
}

fn prepare(input: &str, out_dir: &std::path::Path) -> anyhow::Result<(PrepareSummary, String)> {
    let mut out = Vec::new();
    let summary = cmd_prepare(
        &PrepareArgs {
            input: data_file(input),
            out_dir: out_dir.to_path_buf(),
            seed: Some(3),
        },
        &mut out,
    )?;
    Ok((summary, String::from_utf8(out).unwrap()))
}

#[test]
fn prepare_splits_one_hundred_tweets_65_15_20() {
    let dir = tempfile::tempdir().unwrap();
    let (summary, _) = prepare("tweets100.jsonl", dir.path()).unwrap();
    assert_eq!(summary.sizes, [65, 15, 20]);
    for (name, n) in [("train", 65), ("valid", 15), ("test", 20)] {
        let examples = read_split_file(dir.path().join(format!("{name}.jsonl"))).unwrap();
        assert_eq!(examples.len(), n, "{name}");
    }
    let stats: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("stats.json")).unwrap()).unwrap();
    assert_eq!(stats["kept"], 100);
    assert_eq!(stats["positive"], 50);
    assert_eq!(stats["discarded"], 0);
    assert_eq!(stats["positive_fraction"], 0.5);

    let again = tempfile::tempdir().unwrap();
    prepare("tweets100.jsonl", again.path()).unwrap();
    for name in ["train.jsonl", "valid.jsonl", "test.jsonl", "stats.json"] {
        assert_eq!(
            fs::read(dir.path().join(name)).unwrap(),
            fs::read(again.path().join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn prepare_counts_conflicting_tags_as_discarded() {
    let dir = tempfile::tempdir().unwrap();
    let (summary, _) = prepare("tweets_conflict.jsonl", dir.path()).unwrap();
    assert_eq!(summary.stats.discarded, 10);
    assert_eq!(summary.stats.kept, 40);
}

#[test]
fn prepare_reports_malformed_lines_and_continues() {
    let dir = tempfile::tempdir().unwrap();
    let (summary, text) = prepare("tweets_malformed.jsonl", dir.path()).unwrap();
    assert_eq!(summary.stats.malformed, 2);
    assert_eq!(summary.stats.kept, 38);
    assert!(text.contains("tweets_malformed.jsonl:7:"), "{text}");
    assert!(text.contains("tweets_malformed.jsonl:21:"), "{text}");
}

#[test]
fn prepare_rejects_empty_input_without_writing() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    let out_dir = dir.path().join("out");
    let err = cmd_prepare(
        &PrepareArgs {
            input: empty.clone(),
            out_dir: out_dir.clone(),
            seed: None,
        },
        &mut Vec::new(),
    );
    assert!(err.is_err());
    assert!(!out_dir.exists());

    let status = bin()
        .args(["prepare", "--input"])
        .arg(&empty)
        .arg("--out-dir")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(!status.status.success());
    assert!(String::from_utf8_lossy(&status.stderr).contains("no usable records"));
    assert!(!out_dir.exists());
}

#[test]
fn embeddings_round_trip_and_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let corpus: Vec<String> = elongation_corpus(60, 1).iter().map(|s| s.join(" ")).collect();
    let input = dir.path().join("corpus.txt");
    fs::write(&input, corpus.join("\n")).unwrap();
    let config = write_config(
        dir.path(),
        "embed_dim = 12\nbuckets = 500\nsg_epochs = 2\nsg_subsample = 0",
    );
    let run = |name: &str| {
        let args = EmbeddingArgs {
            input: input.clone(),
            out_dir: dir.path().join(name),
            overrides: overrides(&config),
        };
        cmd_train_embeddings(&args, &mut Vec::new()).unwrap()
    };
    let a = run("a");
    let b = run("b");
    assert_eq!(a.epoch_losses.len(), 2);
    assert_eq!(fs::read(&a.artifact).unwrap(), fs::read(&b.artifact).unwrap());

    let loaded = EmbeddingArtifact::load(&a.artifact).unwrap();
    let v = compose_vector("gharr", &loaded.table, &loaded.vocab);
    assert_eq!(v.len(), 12);
    let again = EmbeddingArtifact::load(&b.artifact).unwrap();
    assert_eq!(v, compose_vector("gharr", &again.table, &again.vocab));

    // The artifact seeds a classifier run.
    let data = dir.path().join("data");
    write_split(&data, &planted_split([48, 16, 16], PlantedConfig::default(), 2));
    let train_config = write_config(
        dir.path(),
        &format!("{TOY_CONFIG}embed_dim = 12\nbuckets = 500\nepochs = 1"),
    );
    let summary = cmd_train(
        &TrainArgs {
            input: data,
            out_dir: dir.path().join("run"),
            embeddings: Some(a.artifact.clone()),
            resume: None,
            overrides: overrides(&train_config),
        },
        &mut Vec::new(),
    )
    .unwrap();
    assert_eq!(summary.log.len(), 1);
}

fn toy_train(dir: &std::path::Path, extra: Overrides) -> (TrainSummary, String) {
    let data = dir.join("data");
    if !data.exists() {
        write_split(&data, &planted_split([96, 32, 32], PlantedConfig::default(), 1));
    }
    let config = write_config(dir, TOY_CONFIG);
    let mut o = overrides(&config);
    o.attention_pool = extra.attention_pool;
    o.epochs = extra.epochs.or(o.epochs);
    let mut out = Vec::new();
    let summary = cmd_train(
        &TrainArgs {
            input: data,
            out_dir: dir.join(format!("run-{}", o.attention_pool.as_deref().unwrap_or("mean"))),
            embeddings: None,
            resume: None,
            overrides: o,
        },
        &mut out,
    )
    .unwrap();
    (summary, String::from_utf8(out).unwrap())
}

#[test]
fn train_writes_checkpoints_and_log() {
    let dir = tempfile::tempdir().unwrap();
    let (summary, text) = toy_train(dir.path(), Overrides::default());
    assert_eq!(summary.log.len(), 2);
    let run = dir.path().join("run-mean");
    let log = fs::read_to_string(run.join("log.csv")).unwrap();
    assert_eq!(log.lines().count(), 3);
    assert_eq!(log.lines().next().unwrap(), "epoch,lr,train_loss,valid_loss,valid_f1");
    assert!(run.join("final.ckpt").exists());
    assert!(run.join("best.ckpt").exists());
    assert!(text.contains("config learning_rate = 0.005 (file)"), "{text}");
    assert!(text.contains("config seed = 0 (flag)"), "{text}");
    assert!(text.contains("config dropout_p = 0.4 (default)"), "{text}");
    assert_eq!(text.matches("\nepoch ").count() + text.starts_with("epoch ") as usize, 2);

    let (max, _) = toy_train(
        dir.path(),
        Overrides {
            attention_pool: Some("max".into()),
            ..Overrides::default()
        },
    );
    let ckpt = Checkpoint::load(&max.final_checkpoint).unwrap();
    assert_eq!(ckpt.model.config.attention_pool, AttentionPool::Max);
}

#[test]
fn resumed_training_matches_an_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    write_split(&data, &planted_split([96, 32, 32], PlantedConfig::default(), 1));
    let config = write_config(dir.path(), TOY_CONFIG);
    let run = |name: &str, epochs: usize, resume: Option<std::path::PathBuf>| {
        let mut o = overrides(&config);
        o.epochs = Some(epochs);
        cmd_train(
            &TrainArgs {
                input: data.clone(),
                out_dir: dir.path().join(name),
                embeddings: None,
                resume,
                overrides: o,
            },
            &mut Vec::new(),
        )
        .unwrap()
    };
    let short = run("short", 1, None);
    run("resumed", 3, Some(short.final_checkpoint));
    run("straight", 3, None);
    for name in ["final.ckpt", "log.csv"] {
        assert_eq!(
            fs::read(dir.path().join("resumed").join(name)).unwrap(),
            fs::read(dir.path().join("straight").join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn evaluate_is_repeatable_and_matches_offline_recompute() {
    let dir = tempfile::tempdir().unwrap();
    let (summary, _) = toy_train(dir.path(), Overrides::default());
    let eval = |name: &str| {
        let mut out = Vec::new();
        let s = cmd_evaluate(
            &EvaluateArgs {
                checkpoint: summary.final_checkpoint.clone(),
                input: dir.path().join("data"),
                out_dir: Some(dir.path().join(name)),
                config: None,
                batch_size: None,
            },
            &mut out,
        )
        .unwrap();
        (s, out)
    };
    let (a, out_a) = eval("eval-a");
    let (_, out_b) = eval("eval-b");
    assert_eq!(out_a, out_b);
    let text = String::from_utf8(out_a).unwrap();
    assert!(text.contains("Recall") && text.contains("selfnet_mean"), "{text}");

    let preds = fs::read_to_string(dir.path().join("eval-a/predictions.csv")).unwrap();
    let (mut p, mut t) = (Vec::new(), Vec::new());
    for line in preds.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        t.push(cols[1].parse::<usize>().unwrap());
        p.push(cols[2].parse::<usize>().unwrap());
    }
    assert_eq!(p.len(), 32);
    assert_eq!(compute_metrics(&p, &t).unwrap(), a.metrics);
    for name in ["metrics.csv", "predictions.csv"] {
        assert_eq!(
            fs::read(dir.path().join("eval-a").join(name)).unwrap(),
            fs::read(dir.path().join("eval-b").join(name)).unwrap()
        );
    }

    // Relabel the test set with the model's own predictions: a perfect model.
    let test = read_split_file(dir.path().join("data/test.jsonl")).unwrap();
    let relabeled: Vec<_> = test
        .iter()
        .zip(&a.predictions)
        .map(|(e, &p)| {
            let mut e = e.clone();
            e.label = p;
            e.to_record(Vec::new())
        })
        .collect();
    let perfect = dir.path().join("perfect.jsonl");
    selfnet::data::write_jsonl(&perfect, &relabeled).unwrap();
    let s = cmd_evaluate(
        &EvaluateArgs {
            checkpoint: summary.final_checkpoint.clone(),
            input: perfect,
            out_dir: None,
            config: None,
            batch_size: Some(7),
        },
        &mut Vec::new(),
    )
    .unwrap();
    assert_eq!(s.metrics.accuracy, 1.0);
    if s.metrics.tp > 0 {
        assert_eq!((s.metrics.precision, s.metrics.recall, s.metrics.f1), (1.0, 1.0, 1.0));
    }
}

#[test]
fn evaluate_rejects_mismatched_dimensions_distinctly() {
    let dir = tempfile::tempdir().unwrap();
    let (summary, _) = toy_train(dir.path(), Overrides::default());
    let other = dir.path().join("other.txt");
    fs::write(&other, "embed_dim = 8\nhidden_size = 7").unwrap();
    let err = cmd_evaluate(
        &EvaluateArgs {
            checkpoint: summary.final_checkpoint.clone(),
            input: dir.path().join("data"),
            out_dir: None,
            config: Some(other),
            batch_size: None,
        },
        &mut Vec::new(),
    )
    .unwrap_err();
    let mismatch = err.downcast_ref::<DimensionMismatch>().expect("dimension mismatch");
    assert_eq!(mismatch.checkpoint, (8, 6));
    assert_eq!(mismatch.config, (8, 7));
}

#[test]
fn attend_exports_lossless_heatmaps() {
    let dir = tempfile::tempdir().unwrap();
    let (summary, _) = toy_train(dir.path(), Overrides::default());
    let attend = |text: &str, name: &str| {
        let mut out = Vec::new();
        let s = cmd_attend(
            &AttendArgs {
                checkpoint: summary.final_checkpoint.clone(),
                text: text.into(),
                out_dir: dir.path().join(name),
                top_k: 3,
            },
            &mut out,
        );
        (s, String::from_utf8(out).unwrap())
    };

    let (s, text) = attend("Love the TRAFFIC in bharat, yaar!! https://t.co/x", "five");
    let s = s.unwrap();
    assert_eq!(s.record.tokens, ["love", "the", "traffic", "in", "bharat", "yaar"]);
    assert_eq!(s.pairs.len(), 3);
    assert_eq!(text.lines().filter(|l| l.starts_with(char::is_numeric)).count(), 3);
    let json = read_heatmap_json(&dir.path().join("five/heatmap.json")).unwrap();
    assert_eq!(json, s.record);
    let (tokens, matrix) = read_heatmap_csv(&s.csv).unwrap();
    assert_eq!(tokens, s.record.tokens);
    for (row, want) in matrix.iter().zip(&s.record.matrix) {
        let want: Vec<f64> = want.iter().map(|&v| round6(v)).collect();
        assert_eq!(row, &want);
    }

    let (one, text) = attend("gharr", "one");
    let one = one.unwrap();
    assert_eq!(one.record.matrix.len(), 1);
    assert_eq!(one.record.matrix[0].len(), 1);
    assert!(one.pairs.is_empty());
    assert!(!text.lines().any(|l| l.starts_with(char::is_numeric)), "{text}");
    let csv = fs::read_to_string(&one.csv).unwrap();
    assert_eq!(csv.lines().count(), 2);

    let (empty, _) = attend("#only @tags !!!", "empty");
    assert!(empty.unwrap_err().to_string().contains("empty after cleaning"));
}

#[test]
fn config_precedence_and_unknown_keys() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "learning_rate = 0.01\nseed = 5\nepochs = 4");
    let mut o = Overrides {
        config: Some(config.clone()),
        lr: Some(0.02),
        ..Overrides::default()
    };
    let r = resolve(Default::default(), Source::Default, &o).unwrap();
    assert_eq!(r.config.learning_rate, 0.02);
    assert_eq!(r.sources["learning_rate"], Source::Flag);
    assert_eq!((r.config.seed, r.sources["seed"]), (5, Source::File));
    assert_eq!((r.config.epochs, r.sources["epochs"]), (4, Source::File));
    assert_eq!(r.sources["batch_size"], Source::Default);
    o.seed = Some(9);
    assert_eq!(resolve(Default::default(), Source::Default, &o).unwrap().config.seed, 9);

    let bad = dir.path().join("bad.txt");
    fs::write(&bad, "learning_rate = 0.01\nlearnin_rate = 3\n").unwrap();
    let err = resolve(
        Default::default(),
        Source::Default,
        &Overrides {
            config: Some(bad),
            ..Overrides::default()
        },
    )
    .unwrap_err();
    assert!(err.to_string().contains(":2: unknown config key `learnin_rate`"), "{err}");
}

#[test]
fn binary_echoes_config_and_honours_seed_fallback() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus.txt");
    fs::write(&corpus, "gharr jaldi chalo\nmatch dekha\n").unwrap();
    let config = write_config(dir.path(), "embed_dim = 4\nbuckets = 50\nsg_epochs = 1");
    let run = |env: Option<&str>, seed: Option<&str>| {
        let mut c = bin();
        c.args(["train-embeddings", "--input"])
            .arg(&corpus)
            .arg("--out-dir")
            .arg(dir.path().join("emb"))
            .arg("--config")
            .arg(&config);
        if let Some(s) = seed {
            c.args(["--seed", s]);
        }
        if let Some(e) = env {
            c.env(SEED_ENV, e);
        }
        let out = c.output().unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(out.stdout).unwrap()
    };
    assert!(run(None, None).contains("config seed = 0 (default)"));
    assert!(run(Some("42"), None).contains("config seed = 42 (env)"));
    assert!(run(Some("42"), Some("7")).contains("config seed = 7 (flag)"));
    let text = run(None, None);
    for key in CONFIG_KEYS_FOR_TEST {
        assert!(text.contains(&format!("config {key} = ")), "{key}");
    }

    let bad = bin().args(["train", "--input"]).arg(dir.path().join("nope")).arg("--out-dir").arg(dir.path().join("x")).output().unwrap();
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("missing split file"));
}

const CONFIG_KEYS_FOR_TEST: &[&str] = selfnet::train::CONFIG_KEYS;

#[test]
fn ablate_reports_both_variants() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    write_split(&data, &planted_split([64, 32, 32], PlantedConfig::default(), 6));
    let config = write_config(dir.path(), &format!("{TOY_CONFIG}epochs = 1"));
    let mut out = Vec::new();
    let rows = cmd_ablate(
        &AblateArgs {
            input: data,
            out_dir: Some(dir.path().join("abl")),
            overrides: overrides(&config),
        },
        &mut out,
    )
    .unwrap();
    let names: Vec<&str> = rows.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names, ["selfmatching_max", "selfnet_mean"]);
    let csv = fs::read_to_string(dir.path().join("abl/ablation.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}
