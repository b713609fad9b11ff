//! Bidirectional LSTM encoder.
//!
//! Gates are packed `[i | f | g | o]` along the column axis of the input and
//! recurrent matrices, so one cell update is two matmuls on a batch.

use std::cell::Cell;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

thread_local! {
    static CELL_UPDATES: Cell<usize> = const { Cell::new(0) };
}

/// Cell updates recorded on this thread since the last reset.
pub fn cell_updates() -> usize {
    CELL_UPDATES.with(Cell::get)
}

pub fn reset_cell_updates() {
    CELL_UPDATES.with(|c| c.set(0));
}

/// Which per-direction states form the sentence-level encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinalStateMode {
    /// Forward state after the last real token, backward state after the first.
    #[default]
    DirectionFinal,
    /// Both directions' states at the last real token.
    LastPosition,
}

impl FinalStateMode {
    pub fn as_str(self) -> &'static str {
        match self {
            FinalStateMode::DirectionFinal => "direction_final",
            FinalStateMode::LastPosition => "last_position",
        }
    }
}

impl FromStr for FinalStateMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "direction_final" => Ok(FinalStateMode::DirectionFinal),
            "last_position" => Ok(FinalStateMode::LastPosition),
            other => Err(Error::Config(format!("unknown final state mode `{other}`"))),
        }
    }
}

/// Weights of one LSTM direction.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmDirectionParams {
    /// `[d × 4h]`
    pub w_input: Tensor,
    /// `[h × 4h]`
    pub w_recurrent: Tensor,
    /// `[4h]`
    pub bias: Tensor,
}

impl LstmDirectionParams {
    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        LstmDirectionParams {
            w_input: Tensor::zeros([input_dim, 4 * hidden]),
            w_recurrent: Tensor::zeros([hidden, 4 * hidden]),
            bias: Tensor::zeros([4 * hidden]),
        }
    }

    /// Uniform `±1/√h` weights, zero biases except the forget gate at `+1`.
    pub fn init<R: Rng>(input_dim: usize, hidden: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let mut bias = Tensor::zeros([4 * hidden]);
        bias.data_mut()[hidden..2 * hidden].fill(1.0);
        LstmDirectionParams {
            w_input: Tensor::uniform([input_dim, 4 * hidden], bound, rng),
            w_recurrent: Tensor::uniform([hidden, 4 * hidden], bound, rng),
            bias,
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_recurrent.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.w_input.rows()
    }

    pub fn validate(&self) -> Result<()> {
        let h = self.hidden();
        let ok = self.w_recurrent.shape() == [h, 4 * h]
            && self.w_input.cols() == 4 * h
            && self.bias.len() == 4 * h;
        if ok {
            Ok(())
        } else {
            Err(Error::ShapeMismatch {
                op: "lstm params",
                left: self.w_input.shape().to_vec(),
                right: self.w_recurrent.shape().to_vec(),
            })
        }
    }
}

/// Tape handles for one direction's weights.
#[derive(Debug, Clone, Copy)]
pub struct LstmVars {
    pub w_input: Var,
    pub w_recurrent: Var,
    pub bias: Var,
    pub hidden: usize,
}

impl LstmVars {
    pub fn register<'p>(g: &mut Graph<'p>, prefix: &str, p: &'p LstmDirectionParams) -> Self {
        LstmVars {
            w_input: g.param(format!("{prefix}.w_input"), &p.w_input),
            w_recurrent: g.param(format!("{prefix}.w_recurrent"), &p.w_recurrent),
            bias: g.param(format!("{prefix}.bias"), &p.bias),
            hidden: p.hidden(),
        }
    }

    pub fn constants(g: &mut Graph<'_>, p: &LstmDirectionParams) -> Self {
        LstmVars {
            w_input: g.constant(p.w_input.clone()),
            w_recurrent: g.constant(p.w_recurrent.clone()),
            bias: g.constant(p.bias.clone()),
            hidden: p.hidden(),
        }
    }
}

/// Records one cell update on a batch: `x` is `[b×d]`, states `[b×h]`.
pub fn lstm_cell(g: &mut Graph<'_>, x: Var, h: Var, c: Var, p: &LstmVars) -> Result<(Var, Var)> {
    CELL_UPDATES.with(|n| n.set(n.get() + 1));
    let hs = p.hidden;
    let xw = g.matmul(x, p.w_input)?;
    let hu = g.matmul(h, p.w_recurrent)?;
    let pre = g.add(xw, hu)?;
    let pre = g.add_row_bias(pre, p.bias)?;
    let i_pre = g.slice_cols(pre, 0, hs)?;
    let f_pre = g.slice_cols(pre, hs, hs)?;
    let g_pre = g.slice_cols(pre, 2 * hs, hs)?;
    let o_pre = g.slice_cols(pre, 3 * hs, hs)?;
    let i = g.sigmoid(i_pre);
    let f = g.sigmoid(f_pre);
    let cand = g.tanh(g_pre);
    let o = g.sigmoid(o_pre);
    let keep = g.mul(f, c)?;
    let write = g.mul(i, cand)?;
    let c_new = g.add(keep, write)?;
    let squashed = g.tanh(c_new);
    let h_new = g.mul(o, squashed)?;
    Ok((h_new, c_new))
}

/// Single-step cell on plain tensors.
pub fn lstm_step(
    x: &Tensor,
    h_prev: &Tensor,
    c_prev: &Tensor,
    params: &LstmDirectionParams,
) -> Result<(Tensor, Tensor)> {
    params.validate()?;
    let hs = params.hidden();
    if x.len() != params.input_dim() || h_prev.len() != hs || c_prev.len() != hs {
        return Err(Error::ShapeMismatch {
            op: "lstm_step",
            left: x.shape().to_vec(),
            right: params.w_input.shape().to_vec(),
        });
    }
    let mut g = Graph::new();
    let vars = LstmVars::constants(&mut g, params);
    let xv = g.constant(x.clone().reshape([1, x.len()])?);
    let hv = g.constant(h_prev.clone().reshape([1, hs])?);
    let cv = g.constant(c_prev.clone().reshape([1, hs])?);
    let (h, c) = lstm_cell(&mut g, xv, hv, cv, &vars)?;
    Ok((
        g.value(h).clone().reshape([hs])?,
        g.value(c).clone().reshape([hs])?,
    ))
}

/// Tape handles for an encoded batch.
#[derive(Debug, Clone)]
pub struct EncodedVars {
    /// Per position, `[b × 2h]` rows `[→h_t ; ←h_t]`.
    pub states: Vec<Var>,
    /// `[b × 2h]`
    pub final_state: Var,
}

/// Records a bidirectional scan. `inputs[t]` is the `[b×d]` slice at position
/// `t`; `mask[r][t]` marks real tokens. Padding positions copy the previous
/// state through unchanged.
pub fn encode_batch(
    g: &mut Graph<'_>,
    inputs: &[Var],
    mask: &[Vec<bool>],
    fwd: &LstmVars,
    bwd: &LstmVars,
    mode: FinalStateMode,
) -> Result<EncodedVars> {
    let n = inputs.len();
    let b = mask.len();
    if n == 0 || b == 0 {
        return Err(Error::Empty("encode"));
    }
    if mask.iter().any(|row| row.len() != n) {
        return Err(Error::ShapeMismatch {
            op: "encode mask",
            left: vec![b, n],
            right: mask.iter().map(Vec::len).collect(),
        });
    }
    if mask.iter().any(|row| !row.contains(&true)) {
        return Err(Error::AllMasked);
    }
    let (fwd_states, fwd_final) = scan(g, inputs, mask, fwd, 0..n)?;
    let (bwd_states, bwd_final) = scan(g, inputs, mask, bwd, (0..n).rev())?;

    let mut states = Vec::with_capacity(n);
    for t in 0..n {
        states.push(g.concat_cols(&[fwd_states[t], bwd_states[t]])?);
    }

    let final_state = match mode {
        FinalStateMode::DirectionFinal => g.concat_cols(&[fwd_final, bwd_final])?,
        FinalStateMode::LastPosition => {
            let last: Vec<usize> = mask
                .iter()
                .map(|row| row.iter().rposition(|&m| m).expect("checked non-empty"))
                .collect();
            let mut picked = g.constant(Tensor::zeros([b, bwd.hidden]));
            for (t, &state) in bwd_states.iter().enumerate() {
                let here: Vec<bool> = last.iter().map(|&l| l == t).collect();
                if here.contains(&true) {
                    picked = g.select_rows(&here, state, picked)?;
                }
            }
            g.concat_cols(&[fwd_final, picked])?
        }
    };
    Ok(EncodedVars {
        states,
        final_state,
    })
}

fn scan(
    g: &mut Graph<'_>,
    inputs: &[Var],
    mask: &[Vec<bool>],
    params: &LstmVars,
    order: impl Iterator<Item = usize>,
) -> Result<(Vec<Var>, Var)> {
    let zero = Tensor::zeros([mask.len(), params.hidden]);
    let mut h = g.constant(zero.clone());
    let mut c = g.constant(zero);
    let mut states = vec![h; inputs.len()];
    for t in order {
        let (h_new, c_new) = lstm_cell(g, inputs[t], h, c, params)?;
        let real: Vec<bool> = mask.iter().map(|row| row[t]).collect();
        h = g.select_rows(&real, h_new, h)?;
        c = g.select_rows(&real, c_new, c)?;
        states[t] = h;
    }
    Ok((states, h))
}

/// Per-position states and the sentence-level encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSequence {
    /// `[n × 2h]`
    pub states: Tensor,
    /// `[2h]`
    pub final_state: Tensor,
}

/// Encodes one `[n×d]` sentence.
pub fn encode(
    e: &Tensor,
    mask: &[bool],
    fwd: &LstmDirectionParams,
    bwd: &LstmDirectionParams,
    mode: FinalStateMode,
) -> Result<EncodedSequence> {
    fwd.validate()?;
    bwd.validate()?;
    let (n, d) = e.dims2();
    if d != fwd.input_dim() || d != bwd.input_dim() || fwd.hidden() != bwd.hidden() {
        return Err(Error::ShapeMismatch {
            op: "encode",
            left: e.shape().to_vec(),
            right: fwd.w_input.shape().to_vec(),
        });
    }
    if mask.len() != n {
        return Err(Error::ShapeMismatch {
            op: "encode mask",
            left: vec![n],
            right: vec![mask.len()],
        });
    }
    let mut g = Graph::new();
    let fv = LstmVars::constants(&mut g, fwd);
    let bv = LstmVars::constants(&mut g, bwd);
    let inputs: Vec<Var> = (0..n)
        .map(|t| g.constant(Tensor::new([1, d], e.row(t).to_vec()).expect("row")))
        .collect();
    let out = encode_batch(&mut g, &inputs, &[mask.to_vec()], &fv, &bv, mode)?;
    let width = 2 * fwd.hidden();
    let mut data = Vec::with_capacity(n * width);
    for &s in &out.states {
        data.extend_from_slice(g.value(s).data());
    }
    Ok(EncodedSequence {
        states: Tensor::new([n, width], data)?,
        final_state: Tensor::vector(g.value(out.final_state).data().to_vec()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_cell() {
        let p = LstmDirectionParams::zeros(3, 2);
        let (h, c) = lstm_step(
            &Tensor::zeros([3]),
            &Tensor::zeros([2]),
            &Tensor::zeros([2]),
            &p,
        )
        .unwrap();
        assert_eq!(h.data(), &[0.0, 0.0]);
        assert_eq!(c.data(), &[0.0, 0.0]);
    }

    #[test]
    fn saturated_forget_gate_keeps_cell() {
        let mut p = LstmDirectionParams::zeros(2, 3);
        p.bias.data_mut()[3..6].fill(20.0);
        let c0 = Tensor::vector(vec![0.4, -1.3, 2.0]);
        let (_, c) = lstm_step(&Tensor::zeros([2]), &Tensor::zeros([3]), &c0, &p).unwrap();
        for (a, b) in c.data().iter().zip(c0.data()) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn single_token_final_state_is_its_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = LstmDirectionParams::init(4, 3, &mut rng);
        let b = LstmDirectionParams::init(4, 3, &mut rng);
        let e = Tensor::uniform([1, 4], 1.0, &mut rng);
        let out = encode(&e, &[true], &f, &b, FinalStateMode::DirectionFinal).unwrap();
        assert_eq!(out.states.shape(), &[1, 6]);
        assert_eq!(out.states.row(0), out.final_state.data());
    }

    #[test]
    fn palindrome_with_shared_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = LstmDirectionParams::init(3, 4, &mut rng);
        let a = Tensor::uniform([1, 3], 1.0, &mut rng).into_data();
        let b = Tensor::uniform([1, 3], 1.0, &mut rng).into_data();
        let e = Tensor::from_rows(&[a.clone(), b, a]).unwrap();
        let out = encode(&e, &[true; 3], &p, &p, FinalStateMode::DirectionFinal).unwrap();
        assert_eq!(&out.states.row(2)[..4], &out.states.row(0)[4..]);
    }

    #[test]
    fn all_masked_rejected() {
        let p = LstmDirectionParams::zeros(2, 2);
        let e = Tensor::zeros([2, 2]);
        assert!(matches!(
            encode(&e, &[false, false], &p, &p, FinalStateMode::DirectionFinal),
            Err(Error::AllMasked)
        ));
    }

    #[test]
    fn counts_two_updates_per_position() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = LstmDirectionParams::init(2, 2, &mut rng);
        let e = Tensor::uniform([5, 2], 1.0, &mut rng);
        reset_cell_updates();
        encode(&e, &[true; 5], &p, &p, FinalStateMode::DirectionFinal).unwrap();
        assert_eq!(cell_updates(), 10);
    }

    #[test]
    fn last_position_mode_uses_backward_state_at_last_token() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f = LstmDirectionParams::init(2, 3, &mut rng);
        let b = LstmDirectionParams::init(2, 3, &mut rng);
        let e = Tensor::uniform([4, 2], 1.0, &mut rng);
        let mask = [true, true, true, false];
        let out = encode(&e, &mask, &f, &b, FinalStateMode::LastPosition).unwrap();
        assert_eq!(&out.final_state.data()[..3], &out.states.row(2)[..3]);
        assert_eq!(&out.final_state.data()[3..], &out.states.row(2)[3..]);
        let df = encode(&e, &mask, &f, &b, FinalStateMode::DirectionFinal).unwrap();
        assert_eq!(&df.final_state.data()[3..], &df.states.row(0)[3..]);
    }
}
