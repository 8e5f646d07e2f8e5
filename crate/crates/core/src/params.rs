//! Named access to the tensors of a parameter set.
//!
//! Every parameter tensor has a stable dotted name (`body.groups.0.tail.weight`).
//! Visiting order is fixed and shared by initialisation, checkpoints, the
//! optimiser state and flattening.

use crate::layers::Conv2dParams;
use crate::tensor::Real;

/// A parameter tensor seen through [`Params::visit`].
#[derive(Debug)]
pub struct NamedTensor<'a> {
    pub name: String,
    pub dims: Vec<usize>,
    pub values: &'a [Real],
}

pub trait Params {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(NamedTensor<'a>));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [Real]));

    fn named_tensors(&self) -> Vec<NamedTensor<'_>> {
        let mut out = Vec::new();
        self.visit("", &mut |t| out.push(t));
        out
    }

    fn num_scalars(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |t| n += t.values.len());
        n
    }

    /// All values concatenated in visiting order.
    fn flatten(&self) -> Vec<Real> {
        let mut out = Vec::new();
        self.visit("", &mut |t| out.extend_from_slice(t.values));
        out
    }

    /// Inverse of [`Params::flatten`]. Panics if `flat` has the wrong length.
    fn load_flat(&mut self, flat: &[Real]) {
        let mut offset = 0;
        self.visit_mut("", &mut |_, values| {
            values.copy_from_slice(&flat[offset..offset + values.len()]);
            offset += values.len();
        });
        assert_eq!(offset, flat.len(), "load_flat: length mismatch");
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

impl Params for Conv2dParams {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(NamedTensor<'a>)) {
        f(NamedTensor {
            name: join(prefix, "weight"),
            dims: self.weight.shape().dims().to_vec(),
            values: self.weight.data(),
        });
        f(NamedTensor {
            name: join(prefix, "bias"),
            dims: vec![self.bias.len()],
            values: &self.bias,
        });
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [Real])) {
        f(&join(prefix, "weight"), self.weight.data_mut());
        f(&join(prefix, "bias"), &mut self.bias);
    }
}
