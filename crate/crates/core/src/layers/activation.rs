use std::hash::Hasher;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor4};

pub struct ReluTape {
    /// `x > 0` per element.
    mask: Vec<bool>,
}

impl ReluTape {
    /// Feeds the activation pattern into `hasher`.
    pub fn fingerprint(&self, hasher: &mut impl Hasher) {
        for chunk in self.mask.chunks(64) {
            let word = chunk
                .iter()
                .enumerate()
                .fold(0u64, |acc, (i, &b)| acc | ((b as u64) << i));
            hasher.write_u64(word);
        }
    }
}

pub fn relu_apply(x: &Tensor4) -> Tensor4 {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

pub fn relu(x: &Tensor4) -> (Tensor4, ReluTape) {
    let mask = x.data().iter().map(|&v| v > 0.0).collect();
    (relu_apply(x), ReluTape { mask })
}

/// Gradient passes where the input was strictly positive; the subgradient
/// at exactly zero is 0.
pub fn relu_backward(grad_y: &Tensor4, tape: ReluTape) -> Result<Tensor4> {
    if grad_y.data().len() != tape.mask.len() {
        return Err(Error::shape(
            "relu_backward",
            format!("gradient {} does not match cached input", grad_y.shape()),
        ));
    }
    let mut g = grad_y.clone();
    for (v, &m) in g.data_mut().iter_mut().zip(&tape.mask) {
        if !m {
            *v = 0.0;
        }
    }
    Ok(g)
}

pub struct SigmoidTape {
    y: Tensor4,
}

#[inline]
fn stable_sigmoid(x: Real) -> Real {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid_apply(x: &Tensor4) -> Tensor4 {
    x.map(stable_sigmoid)
}

pub fn sigmoid(x: &Tensor4) -> (Tensor4, SigmoidTape) {
    let y = sigmoid_apply(x);
    (y.clone(), SigmoidTape { y })
}

pub fn sigmoid_backward(grad_y: &Tensor4, tape: SigmoidTape) -> Result<Tensor4> {
    if grad_y.shape() != tape.y.shape() {
        return Err(Error::shape(
            "sigmoid_backward",
            format!("gradient {} vs output {}", grad_y.shape(), tape.y.shape()),
        ));
    }
    let mut g = grad_y.clone();
    for (v, &y) in g.data_mut().iter_mut().zip(tape.y.data()) {
        *v *= y * (1.0 - y);
    }
    Ok(g)
}
