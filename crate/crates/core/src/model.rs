//! The full SelfNet forward pass and its parameter set.
//!
//! Subword embeddings feed two branches: the self-matching attention block,
//! which yields a sentence vector `v`, and the BiLSTM, which yields a final
//! state. The MLP head classifies `[v ; final_state]`.

use std::collections::BTreeMap;

use rand::Rng;

use crate::attention::{attend, export_raw_matrix, AttentionPool, RawMatrixRecord};
use crate::autodiff::{Graph, Var};
use crate::classifier::{mlp_probs, register_mlp, LayerVars, MlpParams, Mode, NUM_CLASSES};
use crate::data::{Batch, LabeledExample, Lexicon};
use crate::encoder::{encode_batch, FinalStateMode, LstmDirectionParams, LstmVars};
use crate::error::{Error, Result};
use crate::subword::{EmbeddingTable, NgramVocabulary};
use crate::tensor::Tensor;

pub const EMBEDDING: &str = "embedding";
pub const BILINEAR: &str = "attention.bilinear";
pub const ENCODER_FWD: &str = "encoder.fwd";
pub const ENCODER_BWD: &str = "encoder.bwd";
pub const MLP: &str = "mlp";

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub hidden_size: usize,
    /// Hidden MLP widths between the fused features and the output layer.
    pub mlp_hidden: Vec<usize>,
    pub dropout_p: f64,
    pub attention_pool: AttentionPool,
    pub final_state_mode: FinalStateMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embed_dim: 100,
            hidden_size: 256,
            mlp_hidden: vec![256],
            dropout_p: 0.4,
            attention_pool: AttentionPool::Mean,
            final_state_mode: FinalStateMode::DirectionFinal,
        }
    }
}

impl ModelConfig {
    /// `[d + 2h, hidden..., 2]`
    pub fn mlp_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.embed_dim + 2 * self.hidden_size];
        dims.extend(&self.mlp_hidden);
        dims.push(NUM_CLASSES);
        dims
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.hidden_size == 0 || self.mlp_hidden.contains(&0) {
            return Err(Error::Config("model widths must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!(
                "dropout_p {} outside [0, 1)",
                self.dropout_p
            )));
        }
        Ok(())
    }
}

/// Every trainable tensor of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub embedding: Tensor,
    pub bilinear: Tensor,
    pub fwd: LstmDirectionParams,
    pub bwd: LstmDirectionParams,
    pub mlp: MlpParams,
}

impl ModelParams {
    /// Random initialisation; embedding rows are uniform `±1/d`.
    pub fn init<R: Rng>(config: &ModelConfig, rows: usize, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let d = config.embed_dim;
        let h = config.hidden_size;
        let embedding = Tensor::uniform([rows.max(1), d], 1.0 / d as f64, rng);
        let bilinear = Tensor::uniform([d, d], 1.0 / (d as f64).sqrt(), rng);
        let fwd = LstmDirectionParams::init(d, h, rng);
        let bwd = LstmDirectionParams::init(d, h, rng);
        let mlp = MlpParams::init(&config.mlp_dims(), rng)?;
        Ok(ModelParams {
            embedding,
            bilinear,
            fwd,
            bwd,
            mlp,
        })
    }

    /// Names and tensors in a fixed order.
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![
            (EMBEDDING.to_string(), &self.embedding),
            (BILINEAR.to_string(), &self.bilinear),
        ];
        for (prefix, p) in [(ENCODER_FWD, &self.fwd), (ENCODER_BWD, &self.bwd)] {
            out.push((format!("{prefix}.w_input"), &p.w_input));
            out.push((format!("{prefix}.w_recurrent"), &p.w_recurrent));
            out.push((format!("{prefix}.bias"), &p.bias));
        }
        for (i, l) in self.mlp.layers.iter().enumerate() {
            out.push((format!("{MLP}.{i}.weight"), &l.weight));
            out.push((format!("{MLP}.{i}.bias"), &l.bias));
        }
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = vec![
            (EMBEDDING.to_string(), &mut self.embedding),
            (BILINEAR.to_string(), &mut self.bilinear),
        ];
        for (prefix, p) in [(ENCODER_FWD, &mut self.fwd), (ENCODER_BWD, &mut self.bwd)] {
            out.push((format!("{prefix}.w_input"), &mut p.w_input));
            out.push((format!("{prefix}.w_recurrent"), &mut p.w_recurrent));
            out.push((format!("{prefix}.bias"), &mut p.bias));
        }
        for (i, l) in self.mlp.layers.iter_mut().enumerate() {
            out.push((format!("{MLP}.{i}.weight"), &mut l.weight));
            out.push((format!("{MLP}.{i}.bias"), &mut l.bias));
        }
        out
    }

    pub fn to_map(&self) -> BTreeMap<String, Tensor> {
        self.named().into_iter().map(|(k, t)| (k, t.clone())).collect()
    }

    /// Rebuilds parameters from named tensors, checking every shape against
    /// `config` and `rows`.
    pub fn from_map(
        mut map: BTreeMap<String, Tensor>,
        config: &ModelConfig,
        rows: usize,
    ) -> Result<Self> {
        let shapes = Self::shapes(config, rows)?;
        let mut take = |name: String, expected: &[usize]| -> Result<Tensor> {
            let t = map.remove(&name).ok_or(Error::UnknownParameter(name))?;
            if t.shape() != expected {
                return Err(Error::ShapeMismatch {
                    op: "parameter shape",
                    left: t.shape().to_vec(),
                    right: expected.to_vec(),
                });
            }
            Ok(t)
        };
        let mut shapes = shapes.into_iter();
        let mut next = || {
            let (name, shape) = shapes.next().expect("fixed parameter list");
            take(name, &shape)
        };
        let embedding = next()?;
        let bilinear = next()?;
        let mut lstm = || -> Result<LstmDirectionParams> {
            Ok(LstmDirectionParams {
                w_input: next()?,
                w_recurrent: next()?,
                bias: next()?,
            })
        };
        let fwd = lstm()?;
        let bwd = lstm()?;
        let layers = (0..config.mlp_dims().len() - 1)
            .map(|_| {
                Ok(crate::classifier::Layer {
                    weight: next()?,
                    bias: next()?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(extra) = map.keys().next() {
            return Err(Error::UnknownParameter(extra.clone()));
        }
        Ok(ModelParams {
            embedding,
            bilinear,
            fwd,
            bwd,
            mlp: MlpParams { layers },
        })
    }

    /// Parameter names and shapes in [`named`](Self::named) order.
    pub fn shapes(config: &ModelConfig, rows: usize) -> Result<Vec<(String, Vec<usize>)>> {
        config.validate()?;
        let d = config.embed_dim;
        let h = config.hidden_size;
        let mut out = vec![
            (EMBEDDING.to_string(), vec![rows.max(1), d]),
            (BILINEAR.to_string(), vec![d, d]),
        ];
        for prefix in [ENCODER_FWD, ENCODER_BWD] {
            out.push((format!("{prefix}.w_input"), vec![d, 4 * h]));
            out.push((format!("{prefix}.w_recurrent"), vec![h, 4 * h]));
            out.push((format!("{prefix}.bias"), vec![4 * h]));
        }
        for (i, w) in config.mlp_dims().windows(2).enumerate() {
            out.push((format!("{MLP}.{i}.weight"), vec![w[0], w[1]]));
            out.push((format!("{MLP}.{i}.bias"), vec![w[1]]));
        }
        Ok(out)
    }

    pub fn zeros(config: &ModelConfig, rows: usize) -> Result<Self> {
        config.validate()?;
        let d = config.embed_dim;
        let h = config.hidden_size;
        Ok(ModelParams {
            embedding: Tensor::zeros([rows.max(1), d]),
            bilinear: Tensor::zeros([d, d]),
            fwd: LstmDirectionParams::zeros(d, h),
            bwd: LstmDirectionParams::zeros(d, h),
            mlp: MlpParams::zeros(&config.mlp_dims())?,
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn register<'p>(&'p self, g: &mut Graph<'p>) -> ModelVars {
        ModelVars {
            embedding: g.param(EMBEDDING, &self.embedding),
            bilinear: g.param(BILINEAR, &self.bilinear),
            fwd: LstmVars::register(g, ENCODER_FWD, &self.fwd),
            bwd: LstmVars::register(g, ENCODER_BWD, &self.bwd),
            mlp: register_mlp(g, MLP, &self.mlp),
        }
    }
}

/// Tape handles for every parameter.
#[derive(Debug, Clone)]
pub struct ModelVars {
    pub embedding: Var,
    pub bilinear: Var,
    pub fwd: LstmVars,
    pub bwd: LstmVars,
    pub mlp: Vec<LayerVars>,
}

impl ModelVars {
    /// Looks parameters up by their canonical names.
    pub fn from_named(vars: &BTreeMap<String, Var>, config: &ModelConfig) -> Result<Self> {
        let get = |name: String| {
            vars.get(&name)
                .copied()
                .ok_or(Error::UnknownParameter(name))
        };
        let lstm = |prefix: &str| -> Result<LstmVars> {
            Ok(LstmVars {
                w_input: get(format!("{prefix}.w_input"))?,
                w_recurrent: get(format!("{prefix}.w_recurrent"))?,
                bias: get(format!("{prefix}.bias"))?,
                hidden: config.hidden_size,
            })
        };
        let layers = config.mlp_dims().len() - 1;
        let mlp = (0..layers)
            .map(|i| {
                Ok(LayerVars {
                    weight: get(format!("{MLP}.{i}.weight"))?,
                    bias: get(format!("{MLP}.{i}.bias"))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ModelVars {
            embedding: get(EMBEDDING.to_string())?,
            bilinear: get(BILINEAR.to_string())?,
            fwd: lstm(ENCODER_FWD)?,
            bwd: lstm(ENCODER_BWD)?,
            mlp,
        })
    }
}

/// Tape handles produced by [`forward`].
#[derive(Debug, Clone)]
pub struct ForwardVars {
    /// `[b × 2]` class probabilities.
    pub probs: Var,
    /// Per row, `[n_r × n_r]` raw pair scores over that row's real tokens.
    pub raw: Vec<Var>,
    /// Per row, `[n_r]` attention weights.
    pub alpha: Vec<Var>,
}

/// Records the full model on a padded batch.
pub fn forward<R: Rng>(
    g: &mut Graph<'_>,
    vars: &ModelVars,
    batch: &Batch,
    lexicon: &Lexicon,
    config: &ModelConfig,
    mode: Mode,
    rng: &mut R,
) -> Result<ForwardVars> {
    let b = batch.rows();
    let n = batch.width;
    if b == 0 {
        return Err(Error::Empty("batch"));
    }
    let bags: Vec<Vec<usize>> = batch
        .token_ids
        .iter()
        .map(|&id| lexicon.bag(id).to_vec())
        .collect();
    let emb = g.embedding_bag(vars.embedding, &bags)?;

    let mut raw = Vec::with_capacity(b);
    let mut alpha = Vec::with_capacity(b);
    let mut vectors = Vec::with_capacity(b);
    for r in 0..b {
        let idx: Vec<usize> = (0..n).filter(|&t| batch.mask_row(r)[t]).map(|t| r * n + t).collect();
        if idx.is_empty() {
            return Err(Error::AllMasked);
        }
        let e = g.gather_rows(emb, &idx)?;
        let att = attend(g, e, vars.bilinear, config.attention_pool)?;
        raw.push(att.raw);
        alpha.push(att.alpha);
        vectors.push(att.vector);
    }
    let v = g.concat_rows(&vectors)?;

    let inputs = (0..n)
        .map(|t| {
            let rows: Vec<usize> = (0..b).map(|r| r * n + t).collect();
            g.gather_rows(emb, &rows)
        })
        .collect::<Result<Vec<_>>>()?;
    let mask: Vec<Vec<bool>> = (0..b).map(|r| batch.mask_row(r).to_vec()).collect();
    let encoded = encode_batch(g, &inputs, &mask, &vars.fwd, &vars.bwd, config.final_state_mode)?;

    let features = g.concat_cols(&[v, encoded.final_state])?;
    let probs = mlp_probs(g, features, &vars.mlp, mode, config.dropout_p, rng)?;
    Ok(ForwardVars { probs, raw, alpha })
}

/// Records forward plus the mean cross-entropy loss.
pub fn loss<R: Rng>(
    g: &mut Graph<'_>,
    vars: &ModelVars,
    batch: &Batch,
    lexicon: &Lexicon,
    config: &ModelConfig,
    mode: Mode,
    rng: &mut R,
) -> Result<(Var, ForwardVars)> {
    let out = forward(g, vars, batch, lexicon, config, mode, rng)?;
    let l = g.cross_entropy(out.probs, &batch.labels)?;
    Ok((l, out))
}

/// A trained model: configuration, vocabulary and parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SelfNet {
    pub config: ModelConfig,
    pub vocab: NgramVocabulary,
    pub params: ModelParams,
}

/// Eval-mode prediction for one sentence, with its raw attention matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceAnalysis {
    pub probs: [f64; NUM_CLASSES],
    pub record: RawMatrixRecord,
    pub alpha: Vec<f64>,
}

impl SelfNet {
    pub fn new<R: Rng>(config: ModelConfig, vocab: NgramVocabulary, rng: &mut R) -> Result<Self> {
        let params = ModelParams::init(&config, vocab.input_rows(), rng)?;
        Ok(SelfNet {
            config,
            vocab,
            params,
        })
    }

    /// Replaces the embedding rows with a pretrained subword table.
    pub fn load_embeddings(&mut self, table: &EmbeddingTable) -> Result<()> {
        table.check_vocab(&self.vocab)?;
        if table.dim() != self.config.embed_dim {
            return Err(Error::ShapeMismatch {
                op: "embedding dim",
                left: table.input.shape().to_vec(),
                right: vec![self.config.embed_dim],
            });
        }
        self.params.embedding = table.input.clone();
        Ok(())
    }

    /// Eval-mode class probabilities for `batch`.
    pub fn predict_batch(&self, batch: &Batch, lexicon: &Lexicon) -> Result<Vec<[f64; NUM_CLASSES]>> {
        let mut g = Graph::new();
        let vars = self.params.register(&mut g);
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let out = forward(&mut g, &vars, batch, lexicon, &self.config, Mode::Eval, &mut rng)?;
        let p = g.value(out.probs);
        Ok((0..batch.rows()).map(|r| [p.get(r, 0), p.get(r, 1)]).collect())
    }

    /// Eval-mode probabilities and mean loss for `examples` in fixed order.
    pub fn evaluate(
        &self,
        examples: &[LabeledExample],
        batch_size: usize,
        lexicon: &mut Lexicon,
    ) -> Result<(Vec<[f64; NUM_CLASSES]>, f64)> {
        let batches = crate::data::batch::<rand_chacha::ChaCha8Rng>(
            examples,
            batch_size,
            lexicon,
            &self.vocab,
            None,
        )?;
        let mut probs = Vec::with_capacity(examples.len());
        let mut total = 0.0;
        for b in &batches {
            let p = self.predict_batch(b, lexicon)?;
            for (row, &y) in p.iter().zip(&b.labels) {
                total += crate::classifier::cross_entropy(row, y)?;
            }
            probs.extend(p);
        }
        let mean = if probs.is_empty() { 0.0 } else { total / probs.len() as f64 };
        Ok((probs, mean))
    }

    /// Prediction, attention weights and raw pair scores for one sentence.
    pub fn analyze(&self, tokens: &[String]) -> Result<SentenceAnalysis> {
        if tokens.is_empty() {
            return Err(Error::Empty("sentence"));
        }
        let example = LabeledExample::new("probe", tokens.to_vec(), 0)?;
        let mut lexicon = Lexicon::new();
        let batch = Batch::assemble(&[&example], &mut lexicon, &self.vocab);
        let mut g = Graph::new();
        let vars = self.params.register(&mut g);
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let out = forward(&mut g, &vars, &batch, &lexicon, &self.config, Mode::Eval, &mut rng)?;
        let p = g.value(out.probs);
        let n = batch.width;
        let kept: Vec<&str> = (0..n).map(|t| lexicon.token(batch.ids_row(0)[t])).collect();
        let record = export_raw_matrix(g.value(out.raw[0]), &kept, &vec![true; n])?;
        Ok(SentenceAnalysis {
            probs: [p.get(0, 0), p.get(0, 1)],
            record,
            alpha: g.value(out.alpha[0]).data().to_vec(),
        })
    }
}
