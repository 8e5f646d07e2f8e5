use crate::error::{Error, Result};
use crate::tensor::{Real, Shape4, Tensor4};

pub struct GapTape {
    input_shape: Shape4,
}

/// Mean over the spatial axes: `(n, c, h, w) -> (n, c, 1, 1)`.
pub fn global_avg_pool(x: &Tensor4) -> Result<(Tensor4, GapTape)> {
    let s = x.shape();
    if s.plane_len() == 0 {
        return Err(Error::shape("global_avg_pool", format!("empty spatial extent in {s}")));
    }
    let inv = 1.0 / s.plane_len() as Real;
    let mut z = Tensor4::zeros(Shape4::new(s.n, s.c, 1, 1));
    for n in 0..s.n {
        for c in 0..s.c {
            z.set(n, c, 0, 0, x.plane(n, c).iter().sum::<Real>() * inv);
        }
    }
    Ok((z, GapTape { input_shape: s }))
}

/// Spreads each channel's gradient uniformly over its `h * w` positions.
pub fn gap_backward(grad_z: &Tensor4, tape: GapTape) -> Result<Tensor4> {
    let s = tape.input_shape;
    if grad_z.shape() != Shape4::new(s.n, s.c, 1, 1) {
        return Err(Error::shape(
            "gap_backward",
            format!("gradient {} for pooled input {}", grad_z.shape(), s),
        ));
    }
    let inv = 1.0 / s.plane_len() as Real;
    let mut g = Tensor4::zeros(s);
    for n in 0..s.n {
        for c in 0..s.c {
            let v = grad_z.get(n, c, 0, 0) * inv;
            g.plane_mut(n, c).fill(v);
        }
    }
    Ok(g)
}

pub struct ChannelScaleTape {
    x: Tensor4,
    s: Tensor4,
}

fn check_scale(op: &'static str, x: &Tensor4, s: &Tensor4) -> Result<()> {
    let xs = x.shape();
    if s.shape() != Shape4::new(xs.n, xs.c, 1, 1) {
        return Err(Error::shape(
            op,
            format!("scales {} do not match features {}", s.shape(), xs),
        ));
    }
    Ok(())
}

/// `x̂[n, c] = s[n, c] · x[n, c]`.
pub fn channel_scale_apply(x: &Tensor4, s: &Tensor4) -> Result<Tensor4> {
    check_scale("channel_scale", x, s)?;
    x.mul(s)
}

pub fn channel_scale(x: &Tensor4, s: &Tensor4) -> Result<(Tensor4, ChannelScaleTape)> {
    let y = channel_scale_apply(x, s)?;
    Ok((
        y,
        ChannelScaleTape {
            x: x.clone(),
            s: s.clone(),
        },
    ))
}

/// Returns `(grad_x, grad_s)` with `grad_x = s · grad` and
/// `grad_s = Σ_{h,w} x · grad`.
pub fn channel_scale_backward(grad: &Tensor4, tape: ChannelScaleTape) -> Result<(Tensor4, Tensor4)> {
    let ChannelScaleTape { x, s } = tape;
    if grad.shape() != x.shape() {
        return Err(Error::shape(
            "channel_scale_backward",
            format!("gradient {} vs input {}", grad.shape(), x.shape()),
        ));
    }
    let grad_x = grad.mul(&s)?;
    let xs = x.shape();
    let mut grad_s = Tensor4::zeros(s.shape());
    for n in 0..xs.n {
        for c in 0..xs.c {
            let dot: Real = x
                .plane(n, c)
                .iter()
                .zip(grad.plane(n, c))
                .map(|(a, b)| a * b)
                .sum();
            grad_s.set(n, c, 0, 0, dot);
        }
    }
    Ok((grad_x, grad_s))
}
