//! Binary checkpoint and embedding artifact files.
//!
//! Both formats start with a magic string and a little-endian `u32` format
//! version, followed by a `key = value` text block and named tensors stored
//! as (name, rank, extents, little-endian `f64` elements). Files are decoded
//! completely in memory before anything is returned.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use thiserror::Error;

use crate::error::Result;
use crate::model::{ModelParams, SelfNet};
use crate::subword::{EmbeddingTable, NgramVocabulary, VocabConfig};
use crate::tensor::Tensor;
use crate::train::{AdamState, EpochLog, TrainConfig};

pub const CHECKPOINT_MAGIC: &[u8; 7] = b"SELFNET";
pub const EMBEDDING_MAGIC: &[u8; 7] = b"SELFEMB";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("unsupported file format: expected {expected}, found {found}")]
    Version { expected: String, found: String },
    #[error("file is truncated while reading {0}")]
    Truncated(String),
    #[error("tensor `{name}` has shape {found:?}, expected {expected:?}")]
    Shape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("invalid file contents: {0}")]
    Invalid(String),
}

/// Progress counters that make an interrupted run resumable.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingState {
    /// Completed epochs.
    pub epoch: usize,
    pub seed: u64,
    pub best_valid_f1: Option<f64>,
    pub best_epoch: Option<usize>,
    pub history: Vec<EpochLog>,
}

/// Everything needed to reproduce predictions or continue training.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub model: SelfNet,
    pub adam: AdamState,
    pub state: TrainingState,
}

/// A pretrained subword table with the vocabulary that indexes it.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingArtifact {
    pub vocab: NgramVocabulary,
    pub table: EmbeddingTable,
}

struct Encoder<W: Write> {
    out: W,
}

impl<W: Write> Encoder<W> {
    fn raw(&mut self, b: &[u8]) -> Result<()> {
        self.out.write_all(b)?;
        Ok(())
    }

    fn u32(&mut self, v: u32) -> Result<()> {
        self.raw(&v.to_le_bytes())
    }

    fn u64(&mut self, v: u64) -> Result<()> {
        self.raw(&v.to_le_bytes())
    }

    fn f64(&mut self, v: f64) -> Result<()> {
        self.raw(&v.to_le_bytes())
    }

    fn opt_f64(&mut self, v: Option<f64>) -> Result<()> {
        self.raw(&[u8::from(v.is_some())])?;
        self.f64(v.unwrap_or(0.0))
    }

    fn str(&mut self, s: &str) -> Result<()> {
        self.u64(s.len() as u64)?;
        self.raw(s.as_bytes())
    }

    fn tensor(&mut self, name: &str, t: &Tensor) -> Result<()> {
        self.str(name)?;
        self.u32(t.shape().len() as u32)?;
        for &e in t.shape() {
            self.u64(e as u64)?;
        }
        // Element bytes are written in bulk; this dominates file size.
        let mut buf = Vec::with_capacity(t.len() * 8);
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        self.raw(&buf)
    }

    fn tensors<'a>(&mut self, items: impl ExactSizeIterator<Item = (&'a str, &'a Tensor)>) -> Result<()> {
        self.u64(items.len() as u64)?;
        for (name, t) in items {
            self.tensor(name, t)?;
        }
        Ok(())
    }

    fn vocab(&mut self, vocab: &NgramVocabulary) -> Result<()> {
        self.u64(vocab.word_count() as u64)?;
        for (w, &c) in vocab.words().iter().zip(vocab.counts()) {
            self.str(w)?;
            self.u64(c)?;
        }
        Ok(())
    }
}

struct Decoder<'a> {
    buf: &'a [u8],
    pos: usize,
}

type Decoded<T> = std::result::Result<T, CheckpointError>;

impl<'a> Decoder<'a> {
    fn take(&mut self, n: usize, what: &str) -> Decoded<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| CheckpointError::Truncated(what.to_string()))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self, what: &str) -> Decoded<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Decoded<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Decoded<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn usize(&mut self, what: &str) -> Decoded<usize> {
        usize::try_from(self.u64(what)?)
            .map_err(|_| CheckpointError::Invalid(format!("{what} does not fit in memory")))
    }

    fn f64(&mut self, what: &str) -> Decoded<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn opt_f64(&mut self, what: &str) -> Decoded<Option<f64>> {
        let flag = self.u8(what)?;
        let v = self.f64(what)?;
        match flag {
            0 => Ok(None),
            1 => Ok(Some(v)),
            other => Err(CheckpointError::Invalid(format!("{what}: bad flag {other}"))),
        }
    }

    fn str(&mut self, what: &str) -> Decoded<String> {
        let len = self.usize(what)?;
        let bytes = self.take(len, what)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| CheckpointError::Invalid(format!("{what} is not UTF-8")))
    }

    fn header(&mut self, magic: &[u8; 7]) -> Decoded<()> {
        let expected = || {
            format!(
                "{} version {FORMAT_VERSION}",
                String::from_utf8_lossy(magic)
            )
        };
        let found = self.take(magic.len(), "magic").map_err(|_| CheckpointError::Version {
            expected: expected(),
            found: "a file shorter than the magic string".into(),
        })?;
        if found != magic {
            return Err(CheckpointError::Version {
                expected: expected(),
                found: format!("magic bytes {:?}", String::from_utf8_lossy(found)),
            });
        }
        let version = self.u32("format version")?;
        if version != FORMAT_VERSION {
            return Err(CheckpointError::Version {
                expected: expected(),
                found: format!("version {version}"),
            });
        }
        Ok(())
    }

    fn tensor(&mut self) -> Decoded<(String, Tensor)> {
        let name = self.str("tensor name")?;
        let what = format!("tensor `{name}`");
        let rank = self.u32(&what)? as usize;
        let shape = (0..rank)
            .map(|_| self.usize(&what))
            .collect::<Decoded<Vec<_>>>()?;
        let len = shape
            .iter()
            .try_fold(1usize, |acc, &e| acc.checked_mul(e))
            .and_then(|n| n.checked_mul(8).map(|_| n))
            .ok_or_else(|| CheckpointError::Invalid(format!("{what} is too large")))?;
        let bytes = self.take(len * 8, &what)?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| CheckpointError::Invalid(format!("{what}: {e}")))?;
        Ok((name, t))
    }

    fn tensors(&mut self) -> Decoded<Vec<(String, Tensor)>> {
        let n = self.usize("tensor count")?;
        (0..n).map(|_| self.tensor()).collect()
    }

    fn vocab(&mut self, config: VocabConfig) -> Decoded<NgramVocabulary> {
        let n = self.usize("vocabulary size")?;
        let mut words = Vec::new();
        let mut counts = Vec::new();
        for _ in 0..n {
            words.push(self.str("vocabulary word")?);
            counts.push(self.u64("vocabulary count")?);
        }
        NgramVocabulary::with_words(config, words, counts)
            .map_err(|e| CheckpointError::Invalid(format!("vocabulary: {e}")))
    }

    fn finish(&self) -> Decoded<()> {
        if self.pos != self.buf.len() {
            return Err(CheckpointError::Invalid(format!(
                "{} trailing bytes",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

/// Orders `found` tensors as `expected`, checking names and shapes.
fn match_tensors(
    found: Vec<(String, Tensor)>,
    expected: &[(String, Vec<usize>)],
) -> Decoded<Vec<(String, Tensor)>> {
    if found.len() != expected.len() {
        return Err(CheckpointError::Invalid(format!(
            "expected {} tensors, found {}",
            expected.len(),
            found.len()
        )));
    }
    let mut found: std::collections::BTreeMap<String, Tensor> = found.into_iter().collect();
    expected
        .iter()
        .map(|(name, shape)| {
            let t = found
                .remove(name)
                .ok_or_else(|| CheckpointError::Invalid(format!("missing tensor `{name}`")))?;
            if t.shape() != shape.as_slice() {
                return Err(CheckpointError::Shape {
                    name: name.clone(),
                    expected: shape.clone(),
                    found: t.shape().to_vec(),
                });
            }
            Ok((name.clone(), t))
        })
        .collect()
}

fn create(path: &Path) -> Result<Encoder<BufWriter<File>>> {
    Ok(Encoder {
        out: BufWriter::new(File::create(path)?),
    })
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut e = create(path)?;
        e.raw(CHECKPOINT_MAGIC)?;
        e.u32(FORMAT_VERSION)?;
        e.str(&self.config.to_text())?;
        e.vocab(&self.model.vocab)?;
        let named = self.model.params.named();
        e.tensors(named.iter().map(|(k, t)| (k.as_str(), *t)))?;

        e.u64(self.adam.step)?;
        e.f64(self.adam.beta1)?;
        e.f64(self.adam.beta2)?;
        e.f64(self.adam.eps)?;
        e.tensors(self.adam.m.iter().map(|(k, t)| (k.as_str(), t)))?;
        e.tensors(self.adam.v.iter().map(|(k, t)| (k.as_str(), t)))?;

        let s = &self.state;
        e.u64(s.epoch as u64)?;
        e.u64(s.seed)?;
        e.opt_f64(s.best_valid_f1)?;
        e.opt_f64(s.best_epoch.map(|b| b as f64))?;
        e.u64(s.history.len() as u64)?;
        for row in &s.history {
            e.u64(row.epoch as u64)?;
            for v in [row.lr, row.train_loss, row.valid_loss, row.valid_f1] {
                e.f64(v)?;
            }
        }
        e.out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Ok(Self::decode(&bytes)?)
    }

    pub fn decode(bytes: &[u8]) -> Decoded<Self> {
        let mut d = Decoder { buf: bytes, pos: 0 };
        d.header(CHECKPOINT_MAGIC)?;
        let config = TrainConfig::from_text(&d.str("config block")?)
            .map_err(|e| CheckpointError::Invalid(format!("config block: {e}")))?;
        config
            .validate()
            .map_err(|e| CheckpointError::Invalid(format!("config block: {e}")))?;
        let vocab = d.vocab(config.vocab.clone())?;
        let expected = ModelParams::shapes(&config.model, vocab.input_rows())
            .map_err(|e| CheckpointError::Invalid(e.to_string()))?;
        let params = match_tensors(d.tensors()?, &expected)?;
        let params = ModelParams::from_map(params.into_iter().collect(), &config.model, vocab.input_rows())
            .map_err(|e| CheckpointError::Invalid(e.to_string()))?;

        let step = d.u64("optimizer step")?;
        let beta1 = d.f64("optimizer beta1")?;
        let beta2 = d.f64("optimizer beta2")?;
        let eps = d.f64("optimizer epsilon")?;
        let m = match_tensors(d.tensors()?, &expected)?.into_iter().collect();
        let v = match_tensors(d.tensors()?, &expected)?.into_iter().collect();
        let adam = AdamState {
            beta1,
            beta2,
            eps,
            step,
            m,
            v,
        };

        let epoch = d.usize("epoch counter")?;
        let seed = d.u64("seed")?;
        let best_valid_f1 = d.opt_f64("best validation F1")?;
        let best_epoch = d.opt_f64("best epoch")?.map(|b| b as usize);
        let rows = d.usize("history length")?;
        let mut history = Vec::new();
        for _ in 0..rows {
            history.push(EpochLog {
                epoch: d.usize("history")?,
                lr: d.f64("history")?,
                train_loss: d.f64("history")?,
                valid_loss: d.f64("history")?,
                valid_f1: d.f64("history")?,
            });
        }
        d.finish()?;
        Ok(Checkpoint {
            model: SelfNet {
                config: config.model.clone(),
                vocab,
                params,
            },
            config,
            adam,
            state: TrainingState {
                epoch,
                seed,
                best_valid_f1,
                best_epoch,
                history,
            },
        })
    }
}

const VOCAB_KEYS: [&str; 5] = ["min_n", "max_n", "buckets", "boundary_markers", "min_count"];

impl EmbeddingArtifact {
    pub fn save(&self, path: &Path) -> Result<()> {
        let probe = TrainConfig {
            vocab: self.vocab.config().clone(),
            ..TrainConfig::default()
        };
        let mut text = String::new();
        for key in VOCAB_KEYS {
            text.push_str(&format!("{key} = {}\n", probe.get(key)?));
        }
        let mut e = create(path)?;
        e.raw(EMBEDDING_MAGIC)?;
        e.u32(FORMAT_VERSION)?;
        e.str(&text)?;
        e.vocab(&self.vocab)?;
        let mut items = vec![("input", &self.table.input)];
        if let Some(out) = &self.table.output {
            items.push(("output", out));
        }
        e.tensors(items.into_iter())?;
        e.out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Ok(Self::decode(&bytes)?)
    }

    pub fn decode(bytes: &[u8]) -> Decoded<Self> {
        let mut d = Decoder { buf: bytes, pos: 0 };
        d.header(EMBEDDING_MAGIC)?;
        let text = d.str("vocabulary settings")?;
        let mut probe = TrainConfig::default();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .filter(|(k, _)| VOCAB_KEYS.contains(&k.trim()))
                .ok_or_else(|| CheckpointError::Invalid(format!("vocabulary setting `{line}`")))?;
            probe
                .set(k.trim(), v)
                .map_err(|e| CheckpointError::Invalid(e.to_string()))?;
        }
        let vocab = d.vocab(probe.vocab)?;
        let mut tensors = d.tensors()?.into_iter();
        let input = match tensors.next() {
            Some((name, t)) if name == "input" => t,
            _ => return Err(CheckpointError::Invalid("missing input table".into())),
        };
        let output = match tensors.next() {
            Some((name, t)) if name == "output" => Some(t),
            None => None,
            Some((name, _)) => return Err(CheckpointError::Invalid(format!("unexpected tensor `{name}`"))),
        };
        if tensors.next().is_some() {
            return Err(CheckpointError::Invalid("unexpected extra tensors".into()));
        }
        d.finish()?;
        if input.rows() != vocab.input_rows() {
            return Err(CheckpointError::Shape {
                name: "input".into(),
                expected: vec![vocab.input_rows(), input.cols()],
                found: input.shape().to_vec(),
            });
        }
        let table = EmbeddingTable::new(input, output).map_err(|e| CheckpointError::Invalid(e.to_string()))?;
        Ok(EmbeddingArtifact { vocab, table })
    }
}
