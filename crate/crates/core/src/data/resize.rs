//! Separable bicubic resampling with the `a = -0.5` cubic convolution kernel.
//!
//! Output sample `i` sits at input coordinate `(i + 0.5) / s - 0.5` for a
//! scale factor `s = out / in`. When shrinking with antialiasing enabled, the
//! kernel is stretched by `1 / s` so every output averages over its whole
//! footprint. Taps falling outside the input are clamped to the nearest edge
//! and weights are normalised to sum to one.

use super::image::{ImageU8, RgbPlanes};
use crate::error::{Error, Result};
use crate::tensor::{Real, Shape4, Tensor4};

const A: Real = -0.5;

/// Keys' cubic convolution kernel with `a = -0.5`; support `[-2, 2]`.
pub fn cubic_kernel(x: Real) -> Real {
    let x = x.abs();
    if x <= 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((A * x - 5.0 * A) * x + 8.0 * A) * x - 4.0 * A
    } else {
        0.0
    }
}

/// Input taps and normalised weights for one output sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Contribution {
    pub indices: Vec<usize>,
    pub weights: Vec<Real>,
}

/// Tap tables for resampling a line of `in_len` samples to `out_len`.
pub fn contributions(in_len: usize, out_len: usize, antialias: bool) -> Result<Vec<Contribution>> {
    if in_len == 0 || out_len == 0 {
        return Err(Error::InvalidArgument(format!(
            "resize lengths must be positive, got {in_len} -> {out_len}"
        )));
    }
    let scale = out_len as Real / in_len as Real;
    let stretch = if antialias && scale < 1.0 { scale } else { 1.0 };
    let support = 2.0 / stretch;
    let last = (in_len - 1) as isize;
    Ok((0..out_len)
        .map(|i| {
            let center = (i as Real + 0.5) / scale - 0.5;
            let lo = (center - support).floor() as isize;
            let hi = (center + support).ceil() as isize;
            let mut indices = Vec::with_capacity((hi - lo + 1) as usize);
            let mut weights = Vec::with_capacity(indices.capacity());
            for j in lo..=hi {
                let wgt = cubic_kernel((center - j as Real) * stretch);
                if wgt != 0.0 {
                    indices.push(j.clamp(0, last) as usize);
                    weights.push(wgt);
                }
            }
            let total: Real = weights.iter().sum();
            for v in &mut weights {
                *v /= total;
            }
            Contribution { indices, weights }
        })
        .collect())
}

/// Resamples a row-major `h × w` plane to `out_h × out_w`, rows first.
pub fn resize_plane(
    src: &[Real],
    h: usize,
    w: usize,
    out_h: usize,
    out_w: usize,
    antialias: bool,
) -> Result<Vec<Real>> {
    if src.len() != h * w {
        return Err(Error::shape("resize_plane", format!("{h}x{w} plane with {} values", src.len())));
    }
    let cols = contributions(w, out_w, antialias)?;
    let rows = contributions(h, out_h, antialias)?;
    let mut tmp = vec![0.0; h * out_w];
    for y in 0..h {
        let line = &src[y * w..(y + 1) * w];
        for (x, c) in cols.iter().enumerate() {
            tmp[y * out_w + x] = c.indices.iter().zip(&c.weights).map(|(&j, &k)| line[j] * k).sum();
        }
    }
    let mut out = vec![0.0; out_h * out_w];
    for (y, c) in rows.iter().enumerate() {
        let dst = &mut out[y * out_w..(y + 1) * out_w];
        for (&j, &k) in c.indices.iter().zip(&c.weights) {
            let line = &tmp[j * out_w..(j + 1) * out_w];
            for (d, s) in dst.iter_mut().zip(line) {
                *d += s * k;
            }
        }
    }
    Ok(out)
}

pub(crate) fn resize_planes(p: &RgbPlanes, out_h: usize, out_w: usize, antialias: bool) -> Result<RgbPlanes> {
    let mut planes: [Vec<Real>; 3] = Default::default();
    for (dst, src) in planes.iter_mut().zip(&p.planes) {
        *dst = resize_plane(src, p.h, p.w, out_h, out_w, antialias)?;
    }
    Ok(RgbPlanes {
        h: out_h,
        w: out_w,
        planes,
    })
}

/// Antialiased bicubic resize of an 8-bit image, rounded half up.
pub fn bicubic_resize(img: &ImageU8, out_h: usize, out_w: usize) -> Result<ImageU8> {
    Ok(resize_planes(&RgbPlanes::from_image(img), out_h, out_w, true)?.to_image())
}

/// Bicubic upscaling of every plane of `t` by an integer factor, with no
/// quantisation.
pub fn bicubic_upscale_tensor(t: &Tensor4, scale: usize) -> Result<Tensor4> {
    if scale == 0 {
        return Err(Error::InvalidArgument("upscale factor must be positive".into()));
    }
    let s = t.shape();
    let (oh, ow) = (s.h * scale, s.w * scale);
    let mut data = Vec::with_capacity(s.n * s.c * oh * ow);
    for n in 0..s.n {
        for c in 0..s.c {
            data.extend(resize_plane(t.plane(n, c), s.h, s.w, oh, ow, false)?);
        }
    }
    Tensor4::from_vec(Shape4::new(s.n, s.c, oh, ow), data)
}
