//! Self-matching incongruity attention.
//!
//! Every word pair `(i, j)` of a sentence is scored with a shared bilinear
//! form `P[i][j] = e_i·M·e_j`; GELU of the raw scores gives the joint feature
//! matrix `m`. Position `i` is scored by pooling column `i` of `m` over the
//! real positions `k` (mean for SelfNet, max for the self-matching ablation),
//! the scores are softmax-normalised into `α`, and the sentence vector is
//! `v = αᵀE`. Padding positions are removed before scoring, so they never
//! reach a pooling denominator and receive `α = 0`.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{softmax_slice, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// How each position's column of the joint feature matrix is pooled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionPool {
    #[default]
    Mean,
    Max,
}

impl AttentionPool {
    pub fn as_str(self) -> &'static str {
        match self {
            AttentionPool::Mean => "mean",
            AttentionPool::Max => "max",
        }
    }
}

impl FromStr for AttentionPool {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(AttentionPool::Mean),
            "max" => Ok(AttentionPool::Max),
            other => Err(Error::Config(format!("unknown attention pool `{other}`"))),
        }
    }
}

/// The shared `d×d` matrix `M`.
#[derive(Debug, Clone, PartialEq)]
pub struct BilinearWeights {
    m: Tensor,
}

impl BilinearWeights {
    pub fn new(m: Tensor) -> Result<Self> {
        match m.shape() {
            [a, b] if a == b => Ok(BilinearWeights { m }),
            other => Err(Error::InvalidShape {
                shape: other.to_vec(),
                reason: "bilinear weights must be square".into(),
            }),
        }
    }

    pub fn dim(&self) -> usize {
        self.m.rows()
    }

    pub fn matrix(&self) -> &Tensor {
        &self.m
    }
}

/// Tape values produced by [`attend`] for one sentence of real positions.
#[derive(Debug, Clone, Copy)]
pub struct AttendVars {
    /// `[n×n]` pre-activation pair scores.
    pub raw: Var,
    /// `[n×n]` GELU-activated pair scores.
    pub joint: Var,
    /// `[n]` attention weights.
    pub alpha: Var,
    /// `[1×d]` attention-weighted sentence vector.
    pub vector: Var,
}

/// Records the attention block for an `[n×d]` sentence of real positions.
pub fn attend(g: &mut Graph<'_>, e: Var, m: Var, pool: AttentionPool) -> Result<AttendVars> {
    let em = g.matmul(e, m)?;
    let et = g.transpose(e);
    let raw = g.matmul(em, et)?;
    let joint = g.gelu(raw);
    let scores = match pool {
        AttentionPool::Mean => g.mean_axis0(joint),
        AttentionPool::Max => g.max_axis0(joint),
    };
    let alpha = g.softmax(scores)?;
    let vector = g.matmul(alpha, e)?;
    Ok(AttendVars {
        raw,
        joint,
        alpha,
        vector,
    })
}

fn real_positions(mask: &[bool], n: usize) -> Result<Vec<usize>> {
    if mask.len() != n {
        return Err(Error::ShapeMismatch {
            op: "attention mask",
            left: vec![n],
            right: vec![mask.len()],
        });
    }
    let idx: Vec<usize> = (0..n).filter(|&i| mask[i]).collect();
    if idx.is_empty() {
        return Err(Error::AllMasked);
    }
    Ok(idx)
}

/// Raw scores `P` and joint features `m = gelu(P)`. Cells touching a padding
/// position are left at zero.
pub fn pair_scores(e: &Tensor, weights: &BilinearWeights, mask: &[bool]) -> Result<(Tensor, Tensor)> {
    let (n, d) = e.dims2();
    if d != weights.dim() {
        return Err(Error::ShapeMismatch {
            op: "pair_scores",
            left: e.shape().to_vec(),
            right: weights.matrix().shape().to_vec(),
        });
    }
    let idx = real_positions(mask, n)?;
    let mut g = Graph::new();
    let ev = g.constant(e.clone());
    let compact = g.gather_rows(ev, &idx)?;
    let mv = g.constant(weights.matrix().clone());
    let em = g.matmul(compact, mv)?;
    let et = g.transpose(compact);
    let raw = g.matmul(em, et)?;
    let joint = g.gelu(raw);
    Ok((
        scatter_square(g.value(raw), &idx, n),
        scatter_square(g.value(joint), &idx, n),
    ))
}

fn scatter_square(compact: &Tensor, idx: &[usize], n: usize) -> Tensor {
    let mut out = Tensor::zeros([n, n]);
    for (a, &i) in idx.iter().enumerate() {
        for (b, &j) in idx.iter().enumerate() {
            out.set(i, j, compact.get(a, b));
        }
    }
    out
}

fn pooled_weights(joint: &Tensor, mask: &[bool], pool: AttentionPool) -> Result<Tensor> {
    let (n, c) = joint.dims2();
    if n != c {
        return Err(Error::InvalidShape {
            shape: joint.shape().to_vec(),
            reason: "joint feature matrix must be square".into(),
        });
    }
    let idx = real_positions(mask, n)?;
    let scores: Vec<f64> = idx
        .iter()
        .map(|&i| {
            let column = idx.iter().map(|&k| joint.get(k, i));
            match pool {
                AttentionPool::Mean => column.sum::<f64>() / idx.len() as f64,
                AttentionPool::Max => column.fold(f64::NEG_INFINITY, f64::max),
            }
        })
        .collect();
    let alpha = softmax_slice(&scores);
    let mut out = vec![0.0; n];
    for (&i, a) in idx.iter().zip(alpha) {
        out[i] = a;
    }
    Ok(Tensor::vector(out))
}

/// Mean-pooled attention: `α = softmax_i(mean_k m[k][i])` over real positions.
pub fn attention_weights(joint: &Tensor, mask: &[bool]) -> Result<Tensor> {
    pooled_weights(joint, mask, AttentionPool::Mean)
}

/// Max-pooled attention: `α = softmax_i(max_k m[k][i])` over real positions.
pub fn attention_weights_max(joint: &Tensor, mask: &[bool]) -> Result<Tensor> {
    pooled_weights(joint, mask, AttentionPool::Max)
}

/// `v = Σ_i α_i · e_i`.
pub fn sentence_vector(alpha: &Tensor, e: &Tensor) -> Result<Tensor> {
    let (n, d) = e.dims2();
    if alpha.len() != n {
        return Err(Error::ShapeMismatch {
            op: "sentence_vector",
            left: alpha.shape().to_vec(),
            right: e.shape().to_vec(),
        });
    }
    let mut v = vec![0.0; d];
    for (i, &a) in alpha.data().iter().enumerate() {
        for (o, &x) in v.iter_mut().zip(e.row(i)) {
            *o += a * x;
        }
    }
    Ok(Tensor::vector(v))
}

/// Tokens and raw pair scores with padding stripped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawMatrixRecord {
    pub tokens: Vec<String>,
    pub matrix: Vec<Vec<f64>>,
}

impl RawMatrixRecord {
    /// `(row, col)` of the most negative cell; the first one wins ties.
    pub fn most_negative(&self) -> Option<(usize, usize)> {
        self.ranked_cells().into_iter().next().map(|(i, j, _)| (i, j))
    }

    /// Every cell sorted ascending by score.
    pub fn ranked_cells(&self) -> Vec<(usize, usize, f64)> {
        let mut cells: Vec<(usize, usize, f64)> = self
            .matrix
            .iter()
            .enumerate()
            .flat_map(|(i, row)| row.iter().enumerate().map(move |(j, &v)| (i, j, v)))
            .collect();
        cells.sort_by(|a, b| a.2.total_cmp(&b.2));
        cells
    }
}

pub fn export_raw_matrix<S: AsRef<str>>(
    raw: &Tensor,
    tokens: &[S],
    mask: &[bool],
) -> Result<RawMatrixRecord> {
    let (n, c) = raw.dims2();
    if n != c || tokens.len() != n {
        return Err(Error::ShapeMismatch {
            op: "export_raw_matrix",
            left: raw.shape().to_vec(),
            right: vec![tokens.len()],
        });
    }
    let idx = real_positions(mask, n)?;
    Ok(RawMatrixRecord {
        tokens: idx.iter().map(|&i| tokens[i].as_ref().to_string()).collect(),
        matrix: idx
            .iter()
            .map(|&i| idx.iter().map(|&j| raw.get(i, j)).collect())
            .collect(),
    })
}
