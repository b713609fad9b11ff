//! Central finite-difference verification of tape gradients.

use std::collections::BTreeMap;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-parameter outcome of a gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Flat index, analytic and numeric value of the worst entry.
    pub worst: Option<(usize, f64, f64)>,
    /// Set when the function produced a non-finite value under perturbation.
    pub non_finite: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params
            .iter()
            .map(|p| if p.non_finite { f64::INFINITY } else { p.max_rel_error })
            .fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.params
            .iter()
            .all(|p| !p.non_finite && p.max_rel_error < self.tolerance)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ParamCheck> {
        self.params
            .iter()
            .filter(|p| p.non_finite || p.max_rel_error >= self.tolerance)
    }
}

/// `|analytic − numeric| / max(|analytic|, |numeric|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares tape gradients of a scalar function against central differences.
///
/// `function` receives a fresh graph with every entry of `params` registered
/// as a trainable leaf under its name and must return a scalar loss.
pub fn grad_check<F>(
    function: F,
    params: &BTreeMap<String, Tensor>,
    epsilon: f64,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    F: for<'p> Fn(&mut Graph<'p>, &BTreeMap<String, Var>) -> Result<Var>,
{
    if !(epsilon > 0.0 && epsilon <= 1e-2) {
        return Err(Error::Config(format!("epsilon {epsilon} outside (0, 1e-2]")));
    }
    let eval = |values: &BTreeMap<String, Tensor>| -> Result<f64> {
        let mut g = Graph::new();
        let vars = values
            .iter()
            .map(|(k, t)| (k.clone(), g.param(k.clone(), t)))
            .collect();
        let loss = function(&mut g, &vars)?;
        Ok(g.value(loss).item())
    };

    let analytic = {
        let mut g = Graph::new();
        let vars = params
            .iter()
            .map(|(k, t)| (k.clone(), g.param(k.clone(), t)))
            .collect();
        let loss = function(&mut g, &vars)?;
        g.backward(loss)?
    };

    let mut work = params.clone();
    let mut report = Vec::with_capacity(params.len());
    for (name, tensor) in params {
        let grad = analytic
            .get(name)
            .ok_or_else(|| Error::UnknownParameter(name.clone()))?;
        let mut check = ParamCheck {
            name: name.clone(),
            max_rel_error: 0.0,
            max_abs_error: 0.0,
            worst: None,
            non_finite: false,
        };
        for i in 0..tensor.len() {
            let original = tensor.data()[i];
            work.get_mut(name).expect("present").data_mut()[i] = original + epsilon;
            let plus = eval(&work)?;
            work.get_mut(name).expect("present").data_mut()[i] = original - epsilon;
            let minus = eval(&work)?;
            work.get_mut(name).expect("present").data_mut()[i] = original;
            if !plus.is_finite() || !minus.is_finite() {
                check.non_finite = true;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * epsilon);
            check.max_abs_error = check.max_abs_error.max((grad.data()[i] - numeric).abs());
            let err = relative_error(grad.data()[i], numeric);
            if check.worst.is_none() || err > check.max_rel_error {
                check.max_rel_error = err;
                check.worst = Some((i, grad.data()[i], numeric));
            }
        }
        report.push(check);
    }
    Ok(GradCheckReport {
        params: report,
        tolerance,
    })
}
