//! Character n-gram vocabulary, bucket hashing and token composition.
//!
//! Token vectors are the mean of their hashed n-gram bucket rows plus, for
//! tokens frequent enough to own one, a whole-word row. Bucket rows occupy
//! `[0, B)` of the input table and word rows `[B, B + |words|)`, so elongated
//! or code-mixed spellings that were never seen still land on shared rows.

mod skipgram;

use std::collections::HashMap;
use std::io::Write;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use skipgram::{train_skipgram, SkipgramConfig, SkipgramOutcome};

pub const BOUNDARY_START: char = '<';
pub const BOUNDARY_END: char = '>';

/// Settings that fix how tokens map to table rows.
#[derive(Debug, Clone, PartialEq)]
pub struct VocabConfig {
    pub min_n: usize,
    pub max_n: usize,
    pub buckets: usize,
    pub boundary_markers: bool,
    /// Minimum corpus count for a token to get its own word row.
    pub min_count: usize,
}

impl Default for VocabConfig {
    fn default() -> Self {
        VocabConfig {
            min_n: 3,
            max_n: 6,
            buckets: 200_000,
            boundary_markers: true,
            min_count: 1,
        }
    }
}

impl VocabConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_n == 0 || self.min_n > self.max_n {
            return Err(Error::Config(format!(
                "n-gram range [{}, {}] is invalid",
                self.min_n, self.max_n
            )));
        }
        if self.buckets == 0 {
            return Err(Error::Config("bucket count must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NgramVocabulary {
    config: VocabConfig,
    words: Vec<String>,
    counts: Vec<u64>,
    index: HashMap<String, usize>,
}

impl NgramVocabulary {
    /// Vocabulary without whole-word rows.
    pub fn new(config: VocabConfig) -> Result<Self> {
        config.validate()?;
        Ok(NgramVocabulary {
            config,
            words: Vec::new(),
            counts: Vec::new(),
            index: HashMap::new(),
        })
    }

    /// Word rows for tokens seen at least `min_count` times, ordered by
    /// descending count then lexicographically.
    pub fn build<'a, I, S>(config: VocabConfig, corpus: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a S>,
        S: AsRef<[String]> + 'a + ?Sized,
    {
        let mut counts: HashMap<&str, u64> = HashMap::new();
        for sentence in corpus {
            for tok in sentence.as_ref() {
                *counts.entry(tok.as_str()).or_default() += 1;
            }
        }
        let mut entries: Vec<(String, u64)> = counts
            .into_iter()
            .filter(|&(_, c)| c as usize >= config.min_count.max(1))
            .map(|(w, c)| (w.to_string(), c))
            .collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let (words, counts): (Vec<_>, Vec<_>) = entries.into_iter().unzip();
        Self::with_words(config, words, counts)
    }

    pub fn with_words(config: VocabConfig, words: Vec<String>, counts: Vec<u64>) -> Result<Self> {
        config.validate()?;
        if words.len() != counts.len() {
            return Err(Error::Config("word and count lists differ in length".into()));
        }
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if index.insert(w.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate vocabulary word `{w}`")));
            }
        }
        Ok(NgramVocabulary {
            config,
            words,
            counts,
            index,
        })
    }

    pub fn config(&self) -> &VocabConfig {
        &self.config
    }

    pub fn buckets(&self) -> usize {
        self.config.buckets
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn word_count(&self) -> usize {
        self.words.len()
    }

    /// Rows in the input table: buckets followed by word rows.
    pub fn input_rows(&self) -> usize {
        self.config.buckets + self.words.len()
    }

    /// Position of `token` in the word list.
    pub fn word_id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Input-table row of `token`'s whole-word vector.
    pub fn word_row(&self, token: &str) -> Option<usize> {
        self.word_id(token).map(|i| self.config.buckets + i)
    }

    pub fn ngrams(&self, token: &str) -> Vec<String> {
        extract_ngrams(token, &self.config)
    }

    /// Every input-table row that contributes to `token`'s vector.
    pub fn bag(&self, token: &str) -> Vec<usize> {
        let mut rows: Vec<usize> = self
            .ngrams(token)
            .iter()
            .map(|g| hash_ngram(g, self.config.buckets))
            .collect();
        rows.extend(self.word_row(token));
        rows
    }
}

/// Contiguous character n-grams for every `n` in `[min_n, max_n]`, ordered by
/// `n` then position. With boundary markers the token is wrapped in `<`/`>`.
pub fn extract_ngrams(token: &str, config: &VocabConfig) -> Vec<String> {
    let mut chars: Vec<char> = Vec::with_capacity(token.len() + 2);
    if config.boundary_markers {
        chars.push(BOUNDARY_START);
    }
    chars.extend(token.chars());
    if config.boundary_markers {
        chars.push(BOUNDARY_END);
    }
    let mut out = Vec::new();
    for n in config.min_n..=config.max_n {
        if n > chars.len() {
            break;
        }
        out.extend(chars.windows(n).map(|w| w.iter().collect::<String>()));
    }
    out
}

/// 32-bit FNV-1a over the UTF-8 bytes of `ngram`, reduced modulo `buckets`.
pub fn hash_ngram(ngram: &str, buckets: usize) -> usize {
    let mut h: u32 = 0x811c_9dc5;
    for &b in ngram.as_bytes() {
        h ^= u32::from(b);
        h = h.wrapping_mul(0x0100_0193);
    }
    (h as usize) % buckets.max(1)
}

/// Input (subword + word) and output (context) vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub input: Tensor,
    pub output: Option<Tensor>,
}

impl EmbeddingTable {
    pub fn new(input: Tensor, output: Option<Tensor>) -> Result<Self> {
        if input.shape().len() != 2 {
            return Err(Error::InvalidShape {
                shape: input.shape().to_vec(),
                reason: "input table must be rank 2".into(),
            });
        }
        if let Some(out) = &output {
            if out.cols() != input.cols() {
                return Err(Error::ShapeMismatch {
                    op: "embedding table",
                    left: input.shape().to_vec(),
                    right: out.shape().to_vec(),
                });
            }
        }
        Ok(EmbeddingTable { input, output })
    }

    pub fn dim(&self) -> usize {
        self.input.cols()
    }

    /// Checks that the table has one input row per vocabulary row.
    pub fn check_vocab(&self, vocab: &NgramVocabulary) -> Result<()> {
        if self.input.rows() != vocab.input_rows() {
            return Err(Error::ShapeMismatch {
                op: "embedding table rows",
                left: self.input.shape().to_vec(),
                right: vec![vocab.input_rows()],
            });
        }
        Ok(())
    }

    /// Writes `token<TAB>v1 v2 … vd` for every vocabulary word.
    pub fn export_text<W: Write>(&self, vocab: &NgramVocabulary, mut out: W) -> Result<()> {
        for word in vocab.words() {
            let v = compose_vector(word, self, vocab);
            let cells: Vec<String> = v.data().iter().map(|x| format!("{x:.6}")).collect();
            writeln!(out, "{word}\t{}", cells.join(" "))?;
        }
        Ok(())
    }
}

/// Mean of `rows` of `table`, or zeros when `rows` is empty.
pub(crate) fn mean_rows(table: &Tensor, rows: &[usize]) -> Vec<f64> {
    let d = table.cols();
    let mut out = vec![0.0; d];
    if rows.is_empty() {
        return out;
    }
    for &r in rows {
        for (o, &v) in out.iter_mut().zip(table.row(r)) {
            *o += v;
        }
    }
    let n = rows.len() as f64;
    for o in &mut out {
        *o /= n;
    }
    out
}

pub fn compose_vector(token: &str, table: &EmbeddingTable, vocab: &NgramVocabulary) -> Tensor {
    Tensor::vector(mean_rows(&table.input, &vocab.bag(token)))
}

/// Stacks composed token vectors into an `[n×d]` sentence matrix.
pub fn embed_sentence<S: AsRef<str>>(
    tokens: &[S],
    table: &EmbeddingTable,
    vocab: &NgramVocabulary,
) -> Result<Tensor> {
    if tokens.is_empty() {
        return Err(Error::Empty("embed_sentence"));
    }
    let d = table.dim();
    let mut data = Vec::with_capacity(tokens.len() * d);
    for t in tokens {
        data.extend(mean_rows(&table.input, &vocab.bag(t.as_ref())));
    }
    Tensor::new([tokens.len(), d], data)
}

pub fn cosine(a: &Tensor, b: &Tensor) -> f64 {
    let dot: f64 = a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum();
    let norm = (a.sq_norm() * b.sq_norm()).sqrt();
    if norm == 0.0 {
        0.0
    } else {
        dot / norm
    }
}
