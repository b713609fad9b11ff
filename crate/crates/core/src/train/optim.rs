//! Adam and gradient clipping.

use std::collections::BTreeMap;

use super::config::ClipMode;
use crate::autodiff::GradientSet;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Number of updates applied so far.
    pub step: u64,
    pub m: BTreeMap<String, Tensor>,
    pub v: BTreeMap<String, Tensor>,
}

impl AdamState {
    /// Zero moments shaped like `params`.
    pub fn new<'a, I>(params: I) -> Self
    where
        I: IntoIterator<Item = (String, &'a Tensor)>,
    {
        let m: BTreeMap<String, Tensor> = params
            .into_iter()
            .map(|(k, t)| (k, Tensor::zeros(t.shape().to_vec())))
            .collect();
        AdamState {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            v: m.clone(),
            m,
        }
    }
}

/// One bias-corrected Adam update of every parameter in `params`.
///
/// Every gradient is checked for non-finite values before anything is
/// modified, so a failed step leaves parameters and state untouched.
pub fn adam_step(
    params: Vec<(String, &mut Tensor)>,
    grads: &GradientSet,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    for (name, p) in &params {
        let g = grads
            .get(name)
            .ok_or_else(|| Error::UnknownParameter(name.clone()))?;
        if g.shape() != p.shape() {
            return Err(Error::ShapeMismatch {
                op: "adam_step",
                left: p.shape().to_vec(),
                right: g.shape().to_vec(),
            });
        }
        if !g.is_finite() {
            return Err(Error::NonFinite(name.clone()));
        }
        for moments in [&state.m, &state.v] {
            match moments.get(name) {
                Some(t) if t.shape() == p.shape() => {}
                _ => return Err(Error::UnknownParameter(name.clone())),
            }
        }
    }
    state.step += 1;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);
    for (name, p) in params {
        let g = grads.get(&name).expect("checked").data();
        let m = state.m.get_mut(&name).expect("checked").data_mut();
        let v = state.v.get_mut(&name).expect("checked").data_mut();
        for (i, w) in p.data_mut().iter_mut().enumerate() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Clips `grads` in place and returns the global L2 norm before clipping.
pub fn clip_gradients(grads: &mut GradientSet, clip_norm: f64, mode: ClipMode) -> f64 {
    let norm = grads.global_norm();
    match mode {
        ClipMode::GlobalNorm => {
            if norm > clip_norm {
                let factor = clip_norm / norm;
                for (_, g) in grads.iter_mut() {
                    g.scale(factor);
                }
            }
        }
        ClipMode::Value => {
            for (_, g) in grads.iter_mut() {
                for x in g.data_mut() {
                    *x = x.clamp(-clip_norm, clip_norm);
                }
            }
        }
    }
    norm
}
