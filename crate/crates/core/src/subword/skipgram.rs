//! Skipgram with negative sampling over composed subword vectors.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{mean_rows, EmbeddingTable, NgramVocabulary};
use crate::autodiff::sigmoid_scalar;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct SkipgramConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Frequent-token subsampling threshold; `0` disables subsampling.
    pub subsample: f64,
    pub seed: u64,
}

impl Default for SkipgramConfig {
    fn default() -> Self {
        SkipgramConfig {
            dim: 100,
            window: 5,
            negatives: 5,
            epochs: 5,
            learning_rate: 0.05,
            subsample: 1e-4,
            seed: 0,
        }
    }
}

impl SkipgramConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.negatives == 0 {
            return Err(Error::Config("window and negatives must be at least 1".into()));
        }
        if self.dim == 0 || self.epochs == 0 {
            return Err(Error::Config("dim and epochs must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || self.subsample < 0.0 {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SkipgramOutcome {
    pub table: EmbeddingTable,
    /// Mean negative-sampling loss per (center, context) pair, one per epoch.
    pub epoch_losses: Vec<f64>,
}

/// Cumulative unigram^0.75 distribution over word ids.
struct NegativeSampler {
    cumulative: Vec<f64>,
}

impl NegativeSampler {
    fn new(counts: &[u64]) -> Self {
        let mut acc = 0.0;
        let cumulative = counts
            .iter()
            .map(|&c| {
                acc += (c as f64).powf(0.75);
                acc
            })
            .collect();
        NegativeSampler { cumulative }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        let total = *self.cumulative.last().expect("non-empty vocabulary");
        let target = rng.gen::<f64>() * total;
        self.cumulative
            .partition_point(|&c| c <= target)
            .min(self.cumulative.len() - 1)
    }
}

/// Trains input (subword + word) and output vectors on `corpus`.
///
/// Every in-vocabulary token is a potential context; centers are composed
/// from their n-gram bag, and each update spreads the center gradient evenly
/// over the bag rows.
pub fn train_skipgram(
    corpus: &[Vec<String>],
    config: &SkipgramConfig,
    vocab: &NgramVocabulary,
) -> Result<SkipgramOutcome> {
    config.validate()?;
    let total_tokens: usize = corpus.iter().map(Vec::len).sum();
    if total_tokens == 0 {
        return Err(Error::Empty("train_skipgram corpus"));
    }
    if vocab.word_count() == 0 {
        return Err(Error::Config("vocabulary has no words".into()));
    }
    let d = config.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut input = Tensor::uniform([vocab.input_rows(), d], 1.0 / d as f64, &mut rng);
    let mut output = Tensor::zeros([vocab.word_count(), d]);

    let sampler = NegativeSampler::new(vocab.counts());
    let total_count: u64 = vocab.counts().iter().sum();
    let keep_prob: Vec<f64> = vocab
        .counts()
        .iter()
        .map(|&c| {
            if config.subsample <= 0.0 {
                return 1.0;
            }
            let f = c as f64 / total_count as f64;
            ((config.subsample / f).sqrt() + config.subsample / f).min(1.0)
        })
        .collect();

    // Bags and ids are fixed for the run.
    let encoded: Vec<Vec<(Vec<usize>, Option<usize>)>> = corpus
        .iter()
        .map(|s| s.iter().map(|t| (vocab.bag(t), vocab.word_id(t))).collect())
        .collect();

    let planned = (config.epochs * total_tokens) as f64;
    let mut processed = 0usize;
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut hidden = vec![0.0; d];
    let mut grad = vec![0.0; d];

    for _ in 0..config.epochs {
        let mut loss_sum = 0.0;
        let mut pairs = 0usize;
        for sentence in &encoded {
            let kept: Vec<&(Vec<usize>, Option<usize>)> = sentence
                .iter()
                .filter(|(_, id)| match id {
                    Some(i) => rng.gen::<f64>() < keep_prob[*i],
                    None => true,
                })
                .collect();
            for (pos, (bag, _)) in kept.iter().enumerate() {
                processed += 1;
                let lr = config.learning_rate * (1.0 - processed as f64 / planned).max(1e-4);
                if bag.is_empty() {
                    continue;
                }
                let lo = pos.saturating_sub(config.window);
                let hi = (pos + config.window).min(kept.len() - 1);
                for ctx in lo..=hi {
                    let Some(target) = kept[ctx].1.filter(|_| ctx != pos) else {
                        continue;
                    };
                    hidden.copy_from_slice(&mean_rows(&input, bag));
                    grad.iter_mut().for_each(|g| *g = 0.0);
                    loss_sum += update(&hidden, &mut grad, &mut output, target, 1.0, lr);
                    for _ in 0..config.negatives {
                        let neg = sampler.sample(&mut rng);
                        if neg == target {
                            continue;
                        }
                        loss_sum += update(&hidden, &mut grad, &mut output, neg, 0.0, lr);
                    }
                    let share = 1.0 / bag.len() as f64;
                    for &row in bag.iter() {
                        for (w, g) in input.row_mut(row).iter_mut().zip(&grad) {
                            *w += g * share;
                        }
                    }
                    pairs += 1;
                }
            }
        }
        let mean = if pairs == 0 { 0.0 } else { loss_sum / pairs as f64 };
        if !mean.is_finite() {
            return Err(Error::NonFinite("skipgram loss".into()));
        }
        epoch_losses.push(mean);
    }

    Ok(SkipgramOutcome {
        table: EmbeddingTable::new(input, Some(output))?,
        epoch_losses,
    })
}

/// One logistic step against output row `target`; returns the pair loss.
fn update(
    hidden: &[f64],
    grad: &mut [f64],
    output: &mut Tensor,
    target: usize,
    label: f64,
    lr: f64,
) -> f64 {
    let row = output.row_mut(target);
    let score: f64 = hidden.iter().zip(row.iter()).map(|(h, o)| h * o).sum();
    let p = sigmoid_scalar(score);
    let step = lr * (label - p);
    for ((g, o), h) in grad.iter_mut().zip(row.iter_mut()).zip(hidden) {
        *g += step * *o;
        *o += step * h;
    }
    let prob = if label > 0.5 { p } else { 1.0 - p };
    -prob.max(1e-12).ln()
}
