//! L1 objective, Adam and the step-halving learning-rate schedule.

use crate::error::{Error, Result};
use crate::params::Params;
use crate::tensor::{Real, Tensor4};

/// Mean absolute error over every element, with its gradient
/// `sign(pred - target) / count` (`sign(0) = 0`).
pub fn l1_loss(pred: &Tensor4, target: &Tensor4) -> Result<(Real, Tensor4)> {
    if pred.shape() != target.shape() {
        return Err(Error::shape(
            "l1_loss",
            format!("prediction {} vs target {}", pred.shape(), target.shape()),
        ));
    }
    let count = pred.data().len() as Real;
    let mut loss = 0.0;
    let grad = Tensor4::from_vec(
        pred.shape(),
        pred.data()
            .iter()
            .zip(target.data())
            .map(|(&p, &t)| {
                let d = p - t;
                loss += d.abs();
                if d > 0.0 {
                    1.0 / count
                } else if d < 0.0 {
                    -1.0 / count
                } else {
                    0.0
                }
            })
            .collect(),
    )?;
    Ok((loss / count, grad))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub lr0: Real,
    pub beta1: Real,
    pub beta2: Real,
    pub eps: Real,
    /// Iterations between learning-rate halvings.
    pub halving_interval: u64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            lr0: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            halving_interval: 200_000,
        }
    }
}

/// `lr0 · 2^-floor(iter / halving_interval)`.
pub fn lr_at(iter: u64, hyper: &AdamHyper) -> Real {
    let halvings = iter / hyper.halving_interval.max(1);
    hyper.lr0 * (0.5 as Real).powi(halvings.min(i32::MAX as u64) as i32)
}

/// Moment buffers, one per parameter tensor in visiting order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<Real>>,
    pub v: Vec<Vec<Real>>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &impl Params) -> Self {
        let zeros: Vec<Vec<Real>> = params
            .named_tensors()
            .iter()
            .map(|t| vec![0.0; t.values.len()])
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }
}

/// One bias-corrected Adam update with step size `lr`:
///
/// ```text
/// t += 1
/// m = β1·m + (1 - β1)·g
/// v = β2·v + (1 - β2)·g²
/// θ -= lr · (m / (1 - β1^t)) / (sqrt(v / (1 - β2^t)) + ε)
/// ```
///
/// Gradients are checked for finiteness before anything is modified.
pub fn adam_step<P: Params>(
    params: &mut P,
    grads: &P,
    state: &mut AdamState,
    hyper: &AdamHyper,
    lr: Real,
) -> Result<()> {
    let grads = grads.named_tensors();
    if grads.len() != state.m.len() {
        return Err(Error::shape(
            "adam_step",
            format!("{} gradient tensors for {} state buffers", grads.len(), state.m.len()),
        ));
    }
    for (g, m) in grads.iter().zip(&state.m) {
        if g.values.len() != m.len() {
            return Err(Error::shape("adam_step", format!("`{}` has wrong size", g.name)));
        }
        if g.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient(g.name.clone()));
        }
    }
    state.t += 1;
    let t = state.t.min(i32::MAX as u64) as i32;
    let bc1 = 1.0 - hyper.beta1.powi(t);
    let bc2 = 1.0 - hyper.beta2.powi(t);
    let mut i = 0;
    let mut mismatch = None;
    params.visit_mut("", &mut |name, theta| {
        let (g, m, v) = (grads[i].values, &mut state.m[i], &mut state.v[i]);
        i += 1;
        if theta.len() != g.len() {
            mismatch.get_or_insert_with(|| name.to_string());
            return;
        }
        for k in 0..theta.len() {
            m[k] = hyper.beta1 * m[k] + (1.0 - hyper.beta1) * g[k];
            v[k] = hyper.beta2 * v[k] + (1.0 - hyper.beta2) * g[k] * g[k];
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            theta[k] -= lr * m_hat / (v_hat.sqrt() + hyper.eps);
        }
    });
    match mismatch {
        Some(name) => Err(Error::shape("adam_step", format!("`{name}` does not match its gradient"))),
        None => Ok(()),
    }
}
