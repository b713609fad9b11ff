//! Subcommands behind the `selfnet` binary.
//!
//! Each `cmd_*` function writes its human-readable report to the supplied
//! writer and returns a summary, so tests can drive the commands directly.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use selfnet::artifact::{Checkpoint, EmbeddingArtifact};
use selfnet::data::{self, DatasetSplit, LabelTags, LabeledExample, PrepareStats, RawTweet};
use selfnet::eval::{self, argmax, format_table, table_csv, AblationSpec, HeatmapRecord, MetricsReport, Variant};
use selfnet::subword::train_skipgram;
use selfnet::train::{train, EpochLog, Init, Status, TrainConfig, CONFIG_KEYS};
use selfnet::{AttentionPool, NgramVocabulary};

/// Seed fallback when neither `--seed` nor the config file sets one.
pub const SEED_ENV: &str = "SELFNET_SEED";

pub const SPLIT_NAMES: [&str; 3] = ["train", "valid", "test"];

#[derive(Debug, Parser)]
#[command(name = "selfnet", version, about = "Incongruity-attention sarcasm detector for code-mixed text")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Clean, weakly label and split a raw tweet JSONL file.
    Prepare(PrepareArgs),
    /// Train subword skipgram embeddings on a corpus.
    TrainEmbeddings(EmbeddingArgs),
    /// Train the classifier on prepared splits.
    Train(TrainArgs),
    /// Score a checkpoint on a labelled split.
    Evaluate(EvaluateArgs),
    /// Export the raw attention matrix of one sentence.
    Attend(AttendArgs),
    /// Train mean- and max-pooling variants side by side.
    Ablate(AblateArgs),
}

/// Flags that override the configuration file.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// Plain `key = value` configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Random seed. Falls back to the config file, then $SELFNET_SEED.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long, value_parser = ["mean", "max"])]
    pub attention_pool: Option<String>,
    #[arg(long, value_parser = ["direction_final", "last_position"])]
    pub final_state_mode: Option<String>,
    #[arg(long, value_parser = ["global_norm", "value"])]
    pub clip_mode: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct PrepareArgs {
    /// Raw tweets, one `{"id", "text", "hashtags"}` object per line.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct EmbeddingArgs {
    /// Plain text (one sentence per line) or JSONL with a `text` field.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Directory holding train.jsonl and valid.jsonl.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Pretrained embedding artifact from `train-embeddings`.
    #[arg(long, conflicts_with = "resume")]
    pub embeddings: Option<PathBuf>,
    /// Checkpoint to continue from.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// A split file, or a directory holding test.jsonl.
    #[arg(long)]
    pub input: PathBuf,
    /// Where metrics.csv and predictions.csv go.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Expected configuration; its dimensions must match the checkpoint.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub batch_size: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct AttendArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub text: String,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// How many of the most negative token pairs to print.
    #[arg(long, default_value_t = 5)]
    pub top_k: usize,
}

#[derive(Debug, Clone, Args)]
pub struct AblateArgs {
    /// Directory holding train.jsonl, valid.jsonl and test.jsonl.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: Overrides,
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Prepare(a) => cmd_prepare(&a, out).map(drop),
        Command::TrainEmbeddings(a) => cmd_train_embeddings(&a, out).map(drop),
        Command::Train(a) => cmd_train(&a, out).map(drop),
        Command::Evaluate(a) => cmd_evaluate(&a, out).map(drop),
        Command::Attend(a) => cmd_attend(&a, out).map(drop),
        Command::Ablate(a) => cmd_ablate(&a, out).map(drop),
    }
}

/// Where an effective configuration value came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Default,
    Checkpoint,
    File,
    Env,
    Flag,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Default => "default",
            Source::Checkpoint => "checkpoint",
            Source::File => "file",
            Source::Env => "env",
            Source::Flag => "flag",
        })
    }
}

#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: TrainConfig,
    pub sources: BTreeMap<&'static str, Source>,
}

impl Resolved {
    /// Prints every effective value with its origin.
    pub fn echo(&self, out: &mut dyn Write) -> Result<()> {
        for &key in CONFIG_KEYS {
            let value = self.config.get(key)?;
            writeln!(out, "config {key} = {value} ({})", self.sources[key])?;
        }
        Ok(())
    }
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| anyhow!("{SEED_ENV}=`{v}` is not an unsigned integer")),
        Err(_) => Ok(None),
    }
}

/// Applies file, environment and flag layers over `base`, in rising priority.
/// The environment seed only fills in when nothing else set it.
pub fn resolve(base: TrainConfig, base_source: Source, o: &Overrides) -> Result<Resolved> {
    let mut config = base;
    let mut sources: BTreeMap<&'static str, Source> =
        CONFIG_KEYS.iter().map(|&k| (k, base_source)).collect();
    let known = |key: &str| CONFIG_KEYS.iter().copied().find(|&k| k == key);

    if let Some(path) = &o.config {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config file {}", path.display()))?;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                anyhow!("{}:{}: expected `key = value`", path.display(), i + 1)
            })?;
            let key = key.trim();
            let name = known(key)
                .ok_or_else(|| anyhow!("{}:{}: unknown config key `{key}`", path.display(), i + 1))?;
            config
                .set(name, value)
                .with_context(|| format!("{}:{}", path.display(), i + 1))?;
            sources.insert(name, Source::File);
        }
    }

    if o.seed.is_none() && sources["seed"] == Source::Default {
        if let Some(seed) = env_seed()? {
            config.seed = seed;
            sources.insert("seed", Source::Env);
        }
    }

    let flags: [(&'static str, Option<String>); 7] = [
        ("seed", o.seed.map(|v| v.to_string())),
        ("epochs", o.epochs.map(|v| v.to_string())),
        ("learning_rate", o.lr.map(|v| v.to_string())),
        ("batch_size", o.batch_size.map(|v| v.to_string())),
        ("attention_pool", o.attention_pool.clone()),
        ("final_state_mode", o.final_state_mode.clone()),
        ("clip_mode", o.clip_mode.clone()),
    ];
    for (key, value) in flags {
        if let Some(v) = value {
            config.set(key, &v)?;
            sources.insert(key, Source::Flag);
        }
    }
    config.validate()?;
    Ok(Resolved { config, sources })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrepareSummary {
    pub stats: PrepareStats,
    pub sizes: [usize; 3],
}

/// Cleans, labels and splits raw tweets into `train/valid/test.jsonl` plus
/// `stats.json`. Nothing is written unless the split succeeds.
pub fn cmd_prepare(args: &PrepareArgs, out: &mut dyn Write) -> Result<PrepareSummary> {
    let (seed, source) = match args.seed {
        Some(s) => (s, Source::Flag),
        None => match env_seed()? {
            Some(s) => (s, Source::Env),
            None => (0, Source::Default),
        },
    };
    writeln!(out, "config seed = {seed} ({source})")?;

    let (tweets, malformed): (Vec<RawTweet>, _) = data::read_jsonl(&args.input)
        .with_context(|| format!("reading {}", args.input.display()))?;
    for m in &malformed {
        writeln!(out, "skipped {}:{}: {}", args.input.display(), m.line, m.reason)?;
    }
    if tweets.is_empty() {
        bail!("{} contains no usable records", args.input.display());
    }
    let (examples, mut stats) = data::label_tweets(&tweets, &LabelTags::default());
    stats.malformed = malformed.len();
    let split = data::split(&examples, seed)?;

    let hashtags: HashMap<&str, &Vec<String>> = tweets
        .iter()
        .rev()
        .map(|t| (t.id.as_str(), &t.hashtags))
        .collect();
    fs::create_dir_all(&args.out_dir)?;
    let parts = [&split.train, &split.valid, &split.test];
    for (name, part) in SPLIT_NAMES.iter().zip(parts) {
        let records: Vec<_> = part
            .iter()
            .map(|e| e.to_record(hashtags.get(e.id.as_str()).map(|h| h.to_vec()).unwrap_or_default()))
            .collect();
        data::write_jsonl(args.out_dir.join(format!("{name}.jsonl")), &records)?;
    }
    let sizes = [split.train.len(), split.valid.len(), split.test.len()];
    let mut summary = serde_json::to_value(&stats)?;
    summary["train"] = sizes[0].into();
    summary["valid"] = sizes[1].into();
    summary["test"] = sizes[2].into();
    summary["positive_fraction"] = if stats.kept == 0 {
        0.0.into()
    } else {
        (stats.positive as f64 / stats.kept as f64).into()
    };
    fs::write(
        args.out_dir.join("stats.json"),
        serde_json::to_string_pretty(&summary)? + "\n",
    )?;
    writeln!(
        out,
        "read {} records ({} malformed), kept {} ({} sarcastic, {} not), discarded {}, empty {}, duplicates {}",
        stats.total,
        stats.malformed,
        stats.kept,
        stats.positive,
        stats.negative,
        stats.discarded,
        stats.empty_after_clean,
        stats.duplicates
    )?;
    writeln!(out, "split train {} / valid {} / test {}", sizes[0], sizes[1], sizes[2])?;
    Ok(PrepareSummary { stats, sizes })
}

/// Reads a plain-text or JSONL corpus and cleans each line into tokens.
pub fn read_corpus(path: &Path) -> Result<Vec<Vec<String>>> {
    let jsonl = path.extension().is_some_and(|e| e == "jsonl");
    let reader = BufReader::new(
        File::open(path).with_context(|| format!("opening {}", path.display()))?,
    );
    let mut corpus = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let text = if jsonl {
            let v: serde_json::Value = serde_json::from_str(&line)
                .with_context(|| format!("{}:{}", path.display(), i + 1))?;
            v.get("text")
                .and_then(|t| t.as_str())
                .ok_or_else(|| anyhow!("{}:{}: missing `text` field", path.display(), i + 1))?
                .to_string()
        } else {
            line
        };
        let tokens = data::clean(&text);
        if !tokens.is_empty() {
            corpus.push(tokens);
        }
    }
    Ok(corpus)
}

#[derive(Debug, Clone)]
pub struct EmbeddingSummary {
    pub artifact: PathBuf,
    pub epoch_losses: Vec<f64>,
}

/// Trains skipgram embeddings and writes `embeddings.bin`.
pub fn cmd_train_embeddings(args: &EmbeddingArgs, out: &mut dyn Write) -> Result<EmbeddingSummary> {
    let resolved = resolve(TrainConfig::default(), Source::Default, &args.overrides)?;
    resolved.echo(out)?;
    let config = &resolved.config;
    let corpus = read_corpus(&args.input)?;
    if corpus.is_empty() {
        bail!("corpus {} is empty after cleaning", args.input.display());
    }
    let vocab = NgramVocabulary::build(config.vocab.clone(), &corpus)?;
    let outcome = train_skipgram(&corpus, &config.skipgram(), &vocab)?;
    for (e, loss) in outcome.epoch_losses.iter().enumerate() {
        writeln!(out, "embedding epoch {} loss {loss}", e + 1)?;
    }
    fs::create_dir_all(&args.out_dir)?;
    let path = args.out_dir.join("embeddings.bin");
    let (words, rows) = (vocab.word_count(), vocab.input_rows());
    EmbeddingArtifact {
        vocab,
        table: outcome.table,
    }
    .save(&path)?;
    writeln!(
        out,
        "wrote {} ({} words, {} rows, dim {})",
        path.display(),
        words,
        rows,
        config.model.embed_dim
    )?;
    Ok(EmbeddingSummary {
        artifact: path,
        epoch_losses: outcome.epoch_losses,
    })
}

/// Loads the split files under `dir`. Train and valid must exist; test is
/// optional unless `need_test`.
pub fn load_split(dir: &Path, seed: u64, need_test: bool) -> Result<DatasetSplit> {
    let read = |name: &str, required: bool| -> Result<Vec<LabeledExample>> {
        let path = dir.join(format!("{name}.jsonl"));
        if !path.exists() {
            if required {
                bail!("missing split file {}", path.display());
            }
            return Ok(Vec::new());
        }
        data::read_split_file(&path).with_context(|| format!("reading {}", path.display()))
    };
    Ok(DatasetSplit {
        train: read("train", true)?,
        valid: read("valid", true)?,
        test: read("test", need_test)?,
        seed,
    })
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub log: Vec<EpochLog>,
    pub final_checkpoint: PathBuf,
    pub best_checkpoint: Option<PathBuf>,
}

/// Trains and writes `log.csv`, `best.ckpt` and `final.ckpt`.
pub fn cmd_train(args: &TrainArgs, out: &mut dyn Write) -> Result<TrainSummary> {
    let (base, source, resume) = match &args.resume {
        Some(path) => {
            let ckpt = Checkpoint::load(path)
                .with_context(|| format!("loading checkpoint {}", path.display()))?;
            (ckpt.config.clone(), Source::Checkpoint, Some(ckpt))
        }
        None => (TrainConfig::default(), Source::Default, None),
    };
    let resolved = resolve(base, source, &args.overrides)?;
    resolved.echo(out)?;
    let config = &resolved.config;
    let split = load_split(&args.input, config.seed, false)?;
    let artifact = match &args.embeddings {
        Some(path) => Some(
            EmbeddingArtifact::load(path)
                .with_context(|| format!("loading embeddings {}", path.display()))?,
        ),
        None => None,
    };

    fs::create_dir_all(&args.out_dir)?;
    let log_path = args.out_dir.join("log.csv");
    let best_path = args.out_dir.join("best.ckpt");
    let final_path = args.out_dir.join("final.ckpt");
    {
        let mut log = File::create(&log_path)?;
        writeln!(log, "{}", EpochLog::CSV_HEADER)?;
        if let Some(ckpt) = &resume {
            for row in &ckpt.state.history {
                writeln!(log, "{}", row.csv_row())?;
            }
        }
    }
    let init = match resume {
        Some(ckpt) => Init::Resume(ckpt),
        None => Init::Fresh(artifact.as_ref()),
    };

    let mut wrote_best = false;
    let total = config.epochs;
    let outcome = train(&split, config, init, |row, ckpt, is_best| {
        let mut log = OpenOptions::new().append(true).open(&log_path)?;
        writeln!(log, "{}", row.csv_row())?;
        writeln!(
            out,
            "epoch {}/{total} lr {} train_loss {:.6} valid_loss {:.6} valid_f1 {:.4}{}",
            row.epoch,
            row.lr,
            row.train_loss,
            row.valid_loss,
            row.valid_f1,
            if is_best { " *" } else { "" }
        )?;
        if is_best {
            ckpt.save(&best_path)?;
            wrote_best = true;
        }
        Ok(())
    })?;
    outcome.last.save(&final_path)?;
    writeln!(out, "wrote {} and {}", log_path.display(), final_path.display())?;
    if let Status::Diverged { epoch, reason } = &outcome.status {
        bail!(
            "training diverged in epoch {epoch} ({reason}); the last good state is in {}",
            final_path.display()
        );
    }
    Ok(TrainSummary {
        log: outcome.log().to_vec(),
        final_checkpoint: final_path,
        best_checkpoint: wrote_best.then_some(best_path),
    })
}

/// The configuration file passed to `evaluate` disagrees with the checkpoint
/// on the embedding or hidden size.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DimensionMismatch {
    pub checkpoint: (usize, usize),
    pub config: (usize, usize),
}

impl fmt::Display for DimensionMismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "checkpoint has embed_dim {} and hidden_size {}, but the config asks for {} and {}",
            self.checkpoint.0, self.checkpoint.1, self.config.0, self.config.1
        )
    }
}

impl std::error::Error for DimensionMismatch {}

fn variant_name(pool: AttentionPool) -> &'static str {
    Variant::ALL
        .into_iter()
        .find(|v| v.pool() == pool)
        .map_or("selfnet", Variant::name)
}

#[derive(Debug, Clone)]
pub struct EvaluateSummary {
    pub metrics: MetricsReport,
    pub predictions: Vec<usize>,
}

/// Scores a checkpoint and prints the metrics table.
pub fn cmd_evaluate(args: &EvaluateArgs, out: &mut dyn Write) -> Result<EvaluateSummary> {
    let ckpt = Checkpoint::load(&args.checkpoint)
        .with_context(|| format!("loading checkpoint {}", args.checkpoint.display()))?;
    let model = &ckpt.model.config;
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config file {}", path.display()))?;
        let expected = TrainConfig::from_text(&text)
            .with_context(|| format!("parsing config file {}", path.display()))?;
        let want = (expected.model.embed_dim, expected.model.hidden_size);
        let have = (model.embed_dim, model.hidden_size);
        if want != have {
            return Err(DimensionMismatch {
                checkpoint: have,
                config: want,
            }
            .into());
        }
    }
    let path = if args.input.is_dir() {
        args.input.join("test.jsonl")
    } else {
        args.input.clone()
    };
    let examples =
        data::read_split_file(&path).with_context(|| format!("reading {}", path.display()))?;
    if examples.is_empty() {
        bail!("{} has no examples", path.display());
    }
    let batch_size = args.batch_size.unwrap_or(ckpt.config.batch_size);
    let scored = eval::score(&ckpt.model, &examples, batch_size)?;
    let rows = vec![(variant_name(model.attention_pool).to_string(), scored.metrics)];
    write!(out, "{}", format_table(&rows))?;
    writeln!(
        out,
        "tp {} fp {} fn {} tn {} over {} examples",
        scored.metrics.tp,
        scored.metrics.fp,
        scored.metrics.fn_,
        scored.metrics.tn,
        scored.metrics.total()
    )?;
    if let Some(dir) = &args.out_dir {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("metrics.csv"), table_csv(&rows)?)?;
        let mut pred = String::from("id,label,predicted,p_sarcastic\n");
        for ((e, &p), probs) in examples.iter().zip(&scored.predictions).zip(&scored.probs) {
            pred.push_str(&format!("{},{},{},{}\n", e.id, e.label, p, probs[1]));
        }
        fs::write(dir.join("predictions.csv"), pred)?;
    }
    Ok(EvaluateSummary {
        metrics: scored.metrics,
        predictions: scored.predictions,
    })
}

#[derive(Debug, Clone)]
pub struct AttendSummary {
    pub record: HeatmapRecord,
    pub probs: [f64; 2],
    /// Printed off-diagonal cells, most negative first.
    pub pairs: Vec<(usize, usize, f64)>,
    pub csv: PathBuf,
}

/// Writes `heatmap.csv` and `heatmap.json` for one sentence and prints its
/// most negative token pairs.
pub fn cmd_attend(args: &AttendArgs, out: &mut dyn Write) -> Result<AttendSummary> {
    let tokens = data::clean(&args.text);
    if tokens.is_empty() {
        bail!("the sentence is empty after cleaning");
    }
    let ckpt = Checkpoint::load(&args.checkpoint)
        .with_context(|| format!("loading checkpoint {}", args.checkpoint.display()))?;
    let analysis = ckpt.model.analyze(&tokens)?;
    let record = HeatmapRecord {
        tokens: analysis.record.tokens,
        matrix: analysis.record.matrix,
        predicted: argmax(&analysis.probs),
        truth: None,
    };
    fs::create_dir_all(&args.out_dir)?;
    let csv = args.out_dir.join("heatmap.csv");
    eval::export_heatmap(&record, &csv)?;

    writeln!(out, "tokens: {}", record.tokens.join(" "))?;
    writeln!(
        out,
        "predicted: {} (p_sarcastic {:.6})",
        if record.predicted == 1 { "sarcastic" } else { "not sarcastic" },
        analysis.probs[1]
    )?;
    let pairs: Vec<(usize, usize, f64)> = record
        .ranked_cells()
        .into_iter()
        .filter(|&(i, j, _)| i != j)
        .take(args.top_k)
        .collect();
    for (rank, &(i, j, v)) in pairs.iter().enumerate() {
        writeln!(
            out,
            "{}. {} / {} ({i}, {j}) {v:.6}",
            rank + 1,
            record.tokens[i],
            record.tokens[j]
        )?;
    }
    writeln!(out, "wrote {}", csv.display())?;
    Ok(AttendSummary {
        record,
        probs: analysis.probs,
        pairs,
        csv,
    })
}

/// Trains both pooling variants and prints them in one table.
pub fn cmd_ablate(args: &AblateArgs, out: &mut dyn Write) -> Result<Vec<(String, MetricsReport)>> {
    let resolved = resolve(TrainConfig::default(), Source::Default, &args.overrides)?;
    resolved.echo(out)?;
    let split = load_split(&args.input, resolved.config.seed, true)?;
    let spec = AblationSpec {
        variants: Variant::ALL.to_vec(),
        config: resolved.config,
    };
    let rows = eval::run_ablation(&spec, &split)?;
    write!(out, "{}", format_table(&rows))?;
    if let Some(dir) = &args.out_dir {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("ablation.csv"), table_csv(&rows)?)?;
    }
    Ok(rows)
}
