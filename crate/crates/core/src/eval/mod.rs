//! Metrics, parameter accounting, the pooling ablation and heatmap export.

mod metrics;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use metrics::{argmax, compute_metrics, format_table, table_csv, MetricsReport, TABLE_COLUMNS};

use crate::attention::AttentionPool;
use crate::data::{DatasetSplit, LabeledExample, Lexicon};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams, SelfNet, BILINEAR, EMBEDDING, ENCODER_BWD, ENCODER_FWD, MLP};
use crate::train::{train, Init, TrainConfig};

/// Eval-mode predictions and metrics over a set of examples.
#[derive(Debug, Clone, PartialEq)]
pub struct Scored {
    pub probs: Vec<[f64; 2]>,
    pub predictions: Vec<usize>,
    pub metrics: MetricsReport,
    /// Mean cross-entropy.
    pub loss: f64,
}

pub fn score(net: &SelfNet, examples: &[LabeledExample], batch_size: usize) -> Result<Scored> {
    let mut lexicon = Lexicon::new();
    let (probs, loss) = net.evaluate(examples, batch_size, &mut lexicon)?;
    let predictions: Vec<usize> = probs.iter().map(argmax).collect();
    let truths: Vec<usize> = examples.iter().map(|e| e.label).collect();
    let metrics = compute_metrics(&predictions, &truths)?;
    Ok(Scored {
        probs,
        predictions,
        metrics,
        loss,
    })
}

/// Trainable parameter totals per component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct ParameterCount {
    pub embedding: usize,
    pub bilinear: usize,
    pub encoder: usize,
    pub mlp: usize,
}

impl ParameterCount {
    pub fn non_embedding(&self) -> usize {
        self.bilinear + self.encoder + self.mlp
    }

    pub fn total(&self) -> usize {
        self.embedding + self.non_embedding()
    }
}

/// Closed-form count for a model with `rows` embedding rows.
pub fn count_parameters(config: &ModelConfig, rows: usize) -> ParameterCount {
    let d = config.embed_dim;
    let h = config.hidden_size;
    ParameterCount {
        embedding: rows * d,
        bilinear: d * d,
        encoder: 2 * 4 * (d * h + h * h + h),
        mlp: config
            .mlp_dims()
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum(),
    }
}

/// Counts by walking every named tensor.
pub fn enumerate_parameters(params: &ModelParams) -> ParameterCount {
    let mut count = ParameterCount::default();
    for (name, t) in params.named() {
        let slot = if name == EMBEDDING {
            &mut count.embedding
        } else if name == BILINEAR {
            &mut count.bilinear
        } else if name.starts_with(ENCODER_FWD) || name.starts_with(ENCODER_BWD) {
            &mut count.encoder
        } else if name.starts_with(MLP) {
            &mut count.mlp
        } else {
            unreachable!("unclassified parameter {name}")
        };
        *slot += t.len();
    }
    count
}

/// The two pooling variants compared in the ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Max-pooled self-matching attention.
    SelfmatchingMax,
    /// Mean-pooled self-matching attention.
    SelfnetMean,
}

impl Variant {
    /// Reporting order: the baseline row first, the proposed model last.
    pub const ALL: [Variant; 2] = [Variant::SelfmatchingMax, Variant::SelfnetMean];

    pub fn name(self) -> &'static str {
        match self {
            Variant::SelfmatchingMax => "selfmatching_max",
            Variant::SelfnetMean => "selfnet_mean",
        }
    }

    pub fn pool(self) -> AttentionPool {
        match self {
            Variant::SelfmatchingMax => AttentionPool::Max,
            Variant::SelfnetMean => AttentionPool::Mean,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationSpec {
    pub variants: Vec<Variant>,
    /// Shared configuration; only the pooling is overridden per variant.
    pub config: TrainConfig,
}

/// Trains every variant under the same seed and data, then scores the
/// best-validation checkpoint of each on the test split.
pub fn run_ablation(spec: &AblationSpec, split: &DatasetSplit) -> Result<Vec<(String, MetricsReport)>> {
    if split.test.is_empty() {
        return Err(Error::Empty("test split"));
    }
    let mut rows = Vec::with_capacity(spec.variants.len());
    for &variant in &spec.variants {
        let mut config = spec.config.clone();
        config.model.attention_pool = variant.pool();
        let outcome = train(split, &config, Init::Fresh(None), |_, _, _| Ok(()))?;
        let best = outcome.best.as_ref().unwrap_or(&outcome.last);
        let scored = score(&best.model, &split.test, config.batch_size)?;
        rows.push((variant.name().to_string(), scored.metrics));
    }
    Ok(rows)
}

/// One sentence's raw pair scores with its labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapRecord {
    pub tokens: Vec<String>,
    /// Raw bilinear scores `P`, one row per token.
    pub matrix: Vec<Vec<f64>>,
    pub predicted: usize,
    pub truth: Option<usize>,
}

impl HeatmapRecord {
    pub fn validate(&self) -> Result<()> {
        let n = self.tokens.len();
        if n == 0 {
            return Err(Error::Empty("heatmap"));
        }
        if self.matrix.len() != n || self.matrix.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidShape {
                shape: vec![self.matrix.len(), self.matrix.first().map_or(0, Vec::len)],
                reason: format!("heatmap matrix must be {n}x{n}"),
            });
        }
        Ok(())
    }

    /// Cells ordered from most negative, ties by row then column.
    pub fn ranked_cells(&self) -> Vec<(usize, usize, f64)> {
        let mut cells: Vec<(usize, usize, f64)> = self
            .matrix
            .iter()
            .enumerate()
            .flat_map(|(i, row)| row.iter().enumerate().map(move |(j, &v)| (i, j, v)))
            .collect();
        cells.sort_by(|a, b| a.2.total_cmp(&b.2).then((a.0, a.1).cmp(&(b.0, b.1))));
        cells
    }
}

/// Companion JSON path next to a heatmap CSV.
pub fn json_companion(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

/// Writes the CSV grid (token header row and column, six decimals) and the
/// full-precision JSON companion.
pub fn export_heatmap(record: &HeatmapRecord, csv_path: &Path) -> Result<()> {
    record.validate()?;
    fs::write(csv_path, heatmap_csv(record)?)?;
    fs::write(json_companion(csv_path), serde_json::to_string_pretty(record)?)?;
    Ok(())
}

pub fn heatmap_csv(record: &HeatmapRecord) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    let mut header = vec![String::new()];
    header.extend(record.tokens.iter().cloned());
    w.write_record(&header)?;
    for (token, row) in record.tokens.iter().zip(&record.matrix) {
        let mut cells = vec![token.clone()];
        cells.extend(row.iter().map(|v| format!("{v:.6}")));
        w.write_record(&cells)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// Parses a heatmap CSV back into tokens and the six-decimal matrix.
pub fn read_heatmap_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)?;
    let mut records = r.records();
    let header = records.next().ok_or(Error::Empty("heatmap csv"))??;
    let tokens: Vec<String> = header.iter().skip(1).map(String::from).collect();
    let mut matrix = Vec::with_capacity(tokens.len());
    for (i, rec) in records.enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .skip(1)
            .map(|c| {
                c.parse::<f64>().map_err(|e| Error::Malformed {
                    line: i + 2,
                    reason: e.to_string(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if rec.get(0) != tokens.get(i).map(String::as_str) || row.len() != tokens.len() {
            return Err(Error::Malformed {
                line: i + 2,
                reason: "row label or width does not match the header".into(),
            });
        }
        matrix.push(row);
    }
    if matrix.len() != tokens.len() {
        return Err(Error::Malformed {
            line: matrix.len() + 1,
            reason: format!("expected {} rows", tokens.len()),
        });
    }
    Ok((tokens, matrix))
}

pub fn read_heatmap_json(path: &Path) -> Result<HeatmapRecord> {
    let record: HeatmapRecord = serde_json::from_str(&fs::read_to_string(path)?)?;
    record.validate()?;
    Ok(record)
}

/// Rounds to the six decimals stored in the CSV.
pub fn round6(v: f64) -> f64 {
    format!("{v:.6}").parse().expect("formatted float parses")
}
