//! Dense rank-4 tensors in row-major `(n, c, h, w)` layout.

use std::fmt;

use crate::error::{Error, Result};

/// Working precision. 64-bit by default; the `f32` feature switches the whole
/// crate to 32-bit reals.
#[cfg(not(feature = "f32"))]
pub type Real = f64;
#[cfg(feature = "f32")]
pub type Real = f32;

/// Scales a tolerance written for 64-bit reals to the working precision.
#[cfg(test)]
pub(crate) fn tol(t: f64) -> Real {
    if cfg!(feature = "f32") {
        (t * 5e8) as Real
    } else {
        t as Real
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Shape4 {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape4 {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self { n, c, h, w }
    }

    pub const fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub const fn plane_len(&self) -> usize {
        self.h * self.w
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }
}

impl fmt::Display for Shape4 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.c, self.h, self.w)
    }
}

/// Dense `(n, c, h, w)` array with an optional gradient buffer of the same
/// shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor4 {
    shape: Shape4,
    data: Vec<Real>,
    grad: Option<Vec<Real>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
}

impl ElementwiseOp {
    #[inline]
    fn apply(self, a: Real, b: Real) -> Real {
        match self {
            ElementwiseOp::Add => a + b,
            ElementwiseOp::Sub => a - b,
            ElementwiseOp::Mul => a * b,
        }
    }
}

/// Right-hand side of an elementwise operation.
#[derive(Clone, Copy, Debug)]
pub enum Operand<'a> {
    Tensor(&'a Tensor4),
    Scalar(Real),
}

/// `a (op) b`. A tensor `b` must either match `a`'s shape or have shape
/// `(n, c, 1, 1)`, in which case it is broadcast over the spatial axes.
pub fn elementwise(op: ElementwiseOp, a: &Tensor4, b: Operand<'_>) -> Result<Tensor4> {
    let data = match b {
        Operand::Scalar(s) => a.data.iter().map(|&x| op.apply(x, s)).collect(),
        Operand::Tensor(b) if b.shape == a.shape => a
            .data
            .iter()
            .zip(&b.data)
            .map(|(&x, &y)| op.apply(x, y))
            .collect(),
        Operand::Tensor(b) if b.is_channel_vector_for(a.shape) => {
            let plane = a.shape.plane_len();
            let mut out = Vec::with_capacity(a.data.len());
            for (chunk, &y) in a.data.chunks_exact(plane.max(1)).zip(&b.data) {
                out.extend(chunk.iter().map(|&x| op.apply(x, y)));
            }
            out
        }
        Operand::Tensor(b) => {
            return Err(Error::shape(
                "elementwise",
                format!("cannot combine {} with {}", a.shape, b.shape),
            ))
        }
    };
    Ok(Tensor4 {
        shape: a.shape,
        data,
        grad: None,
    })
}

impl Tensor4 {
    pub fn zeros(shape: Shape4) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: Shape4, value: Real) -> Self {
        Self {
            shape,
            data: vec![value; shape.len()],
            grad: None,
        }
    }

    pub fn from_vec(shape: Shape4, data: Vec<Real>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::shape(
                "Tensor4::from_vec",
                format!("{} needs {} values, got {}", shape, shape.len(), data.len()),
            ));
        }
        Ok(Self {
            shape,
            data,
            grad: None,
        })
    }

    pub fn from_fn(shape: Shape4, mut f: impl FnMut(usize, usize, usize, usize) -> Real) -> Self {
        let mut data = Vec::with_capacity(shape.len());
        for n in 0..shape.n {
            for c in 0..shape.c {
                for y in 0..shape.h {
                    for x in 0..shape.w {
                        data.push(f(n, c, y, x));
                    }
                }
            }
        }
        Self {
            shape,
            data,
            grad: None,
        }
    }

    #[inline]
    pub fn shape(&self) -> Shape4 {
        self.shape
    }

    #[inline]
    pub fn data(&self) -> &[Real] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [Real] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Real> {
        self.data
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.shape.c + c) * self.shape.h + y) * self.shape.w + x
    }

    #[inline]
    pub fn get(&self, n: usize, c: usize, y: usize, x: usize) -> Real {
        self.data[self.index(n, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: Real) {
        let i = self.index(n, c, y, x);
        self.data[i] = v;
    }

    /// The `h * w` plane of channel `c` in batch item `n`.
    pub fn plane(&self, n: usize, c: usize) -> &[Real] {
        let len = self.shape.plane_len();
        let start = (n * self.shape.c + c) * len;
        &self.data[start..start + len]
    }

    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [Real] {
        let len = self.shape.plane_len();
        let start = (n * self.shape.c + c) * len;
        &mut self.data[start..start + len]
    }

    /// Contiguous `(c, h, w)` block of batch item `n`.
    pub fn item(&self, n: usize) -> &[Real] {
        let len = self.shape.c * self.shape.plane_len();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn item_mut(&mut self, n: usize) -> &mut [Real] {
        let len = self.shape.c * self.shape.plane_len();
        &mut self.data[n * len..(n + 1) * len]
    }

    pub fn map(&self, f: impl Fn(Real) -> Real) -> Tensor4 {
        Tensor4 {
            shape: self.shape,
            data: self.data.iter().map(|&x| f(x)).collect(),
            grad: None,
        }
    }

    pub fn add(&self, other: &Tensor4) -> Result<Tensor4> {
        elementwise(ElementwiseOp::Add, self, Operand::Tensor(other))
    }

    pub fn sub(&self, other: &Tensor4) -> Result<Tensor4> {
        elementwise(ElementwiseOp::Sub, self, Operand::Tensor(other))
    }

    pub fn mul(&self, other: &Tensor4) -> Result<Tensor4> {
        elementwise(ElementwiseOp::Mul, self, Operand::Tensor(other))
    }

    pub fn scale(&self, s: Real) -> Tensor4 {
        self.map(|x| x * s)
    }

    /// `self += other` for equal shapes.
    pub fn add_assign(&mut self, other: &Tensor4) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(
                "add_assign",
                format!("{} vs {}", self.shape, other.shape),
            ));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn sum(&self) -> Real {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> Real {
        self.sum() / self.data.len() as Real
    }

    pub fn max_abs_diff(&self, other: &Tensor4) -> Real {
        assert_eq!(self.shape, other.shape, "max_abs_diff: shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, Real::max)
    }

    /// Bitwise equality of the values (distinguishes `0.0` from `-0.0`).
    pub fn bitwise_eq(&self, other: &Tensor4) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    fn is_channel_vector_for(&self, target: Shape4) -> bool {
        self.shape == Shape4::new(target.n, target.c, 1, 1)
    }

    pub fn grad(&self) -> Option<&[Real]> {
        self.grad.as_deref()
    }

    /// Adds `g` into the gradient buffer, allocating it on first use.
    pub fn accumulate_grad(&mut self, g: &Tensor4) -> Result<()> {
        if g.shape != self.shape {
            return Err(Error::shape(
                "accumulate_grad",
                format!("gradient {} for tensor {}", g.shape, self.shape),
            ));
        }
        let buf = self
            .grad
            .get_or_insert_with(|| vec![0.0; self.shape.len()]);
        for (a, &b) in buf.iter_mut().zip(&g.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    pub fn take_grad(&mut self) -> Option<Tensor4> {
        self.grad.take().map(|data| Tensor4 {
            shape: self.shape,
            data,
            grad: None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(shape: Shape4, v: &[Real]) -> Tensor4 {
        Tensor4::from_vec(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn add_zero_is_identity() {
        let s = Shape4::new(1, 1, 2, 2);
        let a = t(s, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(a.add(&Tensor4::zeros(s)).unwrap().data(), a.data());
    }

    #[test]
    fn mul_by_zero_scalar() {
        let a = t(Shape4::new(1, 2, 1, 2), &[1.0, -2.0, 3.0, 4.5]);
        let z = elementwise(ElementwiseOp::Mul, &a, Operand::Scalar(0.0)).unwrap();
        assert!(z.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn channel_broadcast() {
        let ones = Tensor4::full(Shape4::new(1, 2, 2, 2), 1.0);
        let b = t(Shape4::new(1, 2, 1, 1), &[10.0, 20.0]);
        let y = ones.add(&b).unwrap();
        assert_eq!(y.plane(0, 0), &[11.0; 4]);
        assert_eq!(y.plane(0, 1), &[21.0; 4]);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let a = Tensor4::zeros(Shape4::new(1, 2, 2, 2));
        let b = Tensor4::zeros(Shape4::new(1, 3, 2, 2));
        let err = a.add(&b).unwrap_err();
        assert!(matches!(err, Error::Shape { .. }), "{err}");
        assert!(err.to_string().contains("1x2x2x2"));
        assert!(Tensor4::from_vec(Shape4::new(1, 1, 2, 2), vec![0.0; 3]).is_err());
    }

    #[test]
    fn grad_buffer_accumulates() {
        let s = Shape4::new(1, 1, 1, 2);
        let mut a = Tensor4::zeros(s);
        assert!(a.grad().is_none());
        a.accumulate_grad(&t(s, &[1.0, 2.0])).unwrap();
        a.accumulate_grad(&t(s, &[0.5, 0.5])).unwrap();
        assert_eq!(a.grad().unwrap(), &[1.5, 2.5]);
        a.zero_grad();
        assert_eq!(a.grad().unwrap(), &[0.0, 0.0]);
        assert!(a.accumulate_grad(&Tensor4::zeros(Shape4::new(1, 1, 2, 1))).is_err());
        assert_eq!(a.take_grad().unwrap().shape(), s);
        assert!(a.grad().is_none());
    }

    fn tensor_strategy(shape: Shape4) -> impl Strategy<Value = Tensor4> {
        proptest::collection::vec(-1e3 as Real..1e3, shape.len())
            .prop_map(move |v| Tensor4::from_vec(shape, v).unwrap())
    }

    proptest! {
        #[test]
        fn add_commutes_and_associates(
            a in tensor_strategy(Shape4::new(2, 2, 3, 3)),
            b in tensor_strategy(Shape4::new(2, 2, 3, 3)),
            c in tensor_strategy(Shape4::new(2, 2, 3, 3)),
        ) {
            let ab = a.add(&b).unwrap();
            prop_assert!(ab.bitwise_eq(&b.add(&a).unwrap()));
            let left = ab.add(&c).unwrap();
            let right = a.add(&b.add(&c).unwrap()).unwrap();
            prop_assert!(left.max_abs_diff(&right) <= tol(1e-12 * 3e3));
        }

        #[test]
        fn broadcast_add_then_subtract_recovers(
            a in tensor_strategy(Shape4::new(2, 3, 4, 4)),
            b in proptest::collection::vec(-1.0 as Real..1.0, 6),
        ) {
            let b = Tensor4::from_vec(Shape4::new(2, 3, 1, 1), b).unwrap();
            let back = a.add(&b).unwrap().sub(&b).unwrap();
            // |a| <= 1e3 and |b| < 1, so a + b - b round-trips exactly only up to
            // one rounding of the sum.
            prop_assert!(back.max_abs_diff(&a) <= 1e3 * Real::EPSILON);
        }
    }

    #[test]
    fn broadcast_add_then_subtract_exact_for_representable_values() {
        let a = Tensor4::from_fn(Shape4::new(1, 2, 3, 3), |_, c, y, x| (c * 9 + y * 3 + x) as Real);
        let b = t(Shape4::new(1, 2, 1, 1), &[0.5, -2.25]);
        assert!(a.add(&b).unwrap().sub(&b).unwrap().bitwise_eq(&a));
    }
}
