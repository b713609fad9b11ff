//! MLP head over `[v ; final_state]` and the cross-entropy objective.

use rand::Rng;

use crate::autodiff::{Graph, Var, PROB_FLOOR};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Number of output classes: non-sarcastic (0) and sarcastic (1).
pub const NUM_CLASSES: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `[in × out]`
    pub weight: Tensor,
    /// `[out]`
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
}

impl MlpParams {
    /// Layer widths from input to output, e.g. `[d + 2h, 256, 2]`.
    pub fn dims(&self) -> Vec<usize> {
        let mut dims: Vec<usize> = self.layers.iter().map(|l| l.weight.rows()).collect();
        dims.extend(self.layers.last().map(|l| l.weight.cols()));
        dims
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        check_dims(dims)?;
        Ok(MlpParams {
            layers: dims
                .windows(2)
                .map(|w| Layer {
                    weight: Tensor::zeros([w[0], w[1]]),
                    bias: Tensor::zeros([w[1]]),
                })
                .collect(),
        })
    }

    /// Uniform `±1/√fan_in` weights and biases.
    pub fn init<R: Rng>(dims: &[usize], rng: &mut R) -> Result<Self> {
        check_dims(dims)?;
        Ok(MlpParams {
            layers: dims
                .windows(2)
                .map(|w| {
                    let bound = 1.0 / (w[0] as f64).sqrt();
                    Layer {
                        weight: Tensor::uniform([w[0], w[1]], bound, rng),
                        bias: Tensor::uniform([w[1]], bound, rng),
                    }
                })
                .collect(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        for pair in self.layers.windows(2) {
            if pair[0].weight.cols() != pair[1].weight.rows() {
                return Err(Error::ShapeMismatch {
                    op: "mlp layers",
                    left: pair[0].weight.shape().to_vec(),
                    right: pair[1].weight.shape().to_vec(),
                });
            }
        }
        for l in &self.layers {
            if l.bias.len() != l.weight.cols() {
                return Err(Error::ShapeMismatch {
                    op: "mlp bias",
                    left: l.weight.shape().to_vec(),
                    right: l.bias.shape().to_vec(),
                });
            }
        }
        check_dims(&self.dims())
    }
}

fn check_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 || dims.last() != Some(&NUM_CLASSES) || dims.contains(&0) {
        return Err(Error::Config(format!(
            "MLP dims {dims:?} must chain positive widths and end in {NUM_CLASSES}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy)]
pub struct LayerVars {
    pub weight: Var,
    pub bias: Var,
}

pub fn register_mlp<'p>(g: &mut Graph<'p>, prefix: &str, p: &'p MlpParams) -> Vec<LayerVars> {
    p.layers
        .iter()
        .enumerate()
        .map(|(i, l)| LayerVars {
            weight: g.param(format!("{prefix}.{i}.weight"), &l.weight),
            bias: g.param(format!("{prefix}.{i}.bias"), &l.bias),
        })
        .collect()
}

/// Records the MLP on `[b × in]` features and returns `[b × 2]` class
/// probabilities. Hidden layers use GELU followed by inverted dropout.
pub fn mlp_probs<R: Rng>(
    g: &mut Graph<'_>,
    features: Var,
    layers: &[LayerVars],
    mode: Mode,
    dropout_p: f64,
    rng: &mut R,
) -> Result<Var> {
    let mut x = features;
    for (i, l) in layers.iter().enumerate() {
        let z = g.matmul(x, l.weight)?;
        x = g.add_row_bias(z, l.bias)?;
        if i + 1 < layers.len() {
            x = g.gelu(x);
            x = g.dropout(x, dropout_p, mode == Mode::Train, rng)?;
        }
    }
    g.softmax(x)
}

/// Class probabilities for one sentence.
pub fn predict<R: Rng>(
    v: &Tensor,
    final_state: &Tensor,
    params: &MlpParams,
    mode: Mode,
    dropout_p: f64,
    rng: &mut R,
) -> Result<[f64; NUM_CLASSES]> {
    params.validate()?;
    let input = v.len() + final_state.len();
    if params.dims()[0] != input {
        return Err(Error::ShapeMismatch {
            op: "predict",
            left: vec![v.len(), final_state.len()],
            right: params.layers[0].weight.shape().to_vec(),
        });
    }
    let mut g = Graph::new();
    let layers: Vec<LayerVars> = params
        .layers
        .iter()
        .map(|l| LayerVars {
            weight: g.constant(l.weight.clone()),
            bias: g.constant(l.bias.clone()),
        })
        .collect();
    let mut features = v.data().to_vec();
    features.extend_from_slice(final_state.data());
    let x = g.constant(Tensor::new([1, input], features)?);
    let probs = mlp_probs(&mut g, x, &layers, mode, dropout_p, rng)?;
    let p = g.value(probs).data();
    Ok([p[0], p[1]])
}

/// `−ln max(ŷ[y], 1e-12)`.
pub fn cross_entropy(probs: &[f64; NUM_CLASSES], label: usize) -> Result<f64> {
    if label >= NUM_CLASSES {
        return Err(Error::InvalidLabel(label));
    }
    Ok(-probs[label].max(PROB_FLOOR).ln())
}
