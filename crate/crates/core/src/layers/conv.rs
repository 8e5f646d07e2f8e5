//! Same-size 2-D convolution (cross-correlation, no kernel flip) with zero
//! padding of `(k - 1) / 2`, lowered to matrix products via im2col.

use crate::error::{Error, Result};
use crate::tensor::{Real, Shape4, Tensor4};

#[derive(Clone, Debug, PartialEq)]
pub struct Conv2dParams {
    /// `(out_c, in_c, k, k)`.
    pub weight: Tensor4,
    /// One entry per output channel.
    pub bias: Vec<Real>,
}

impl Conv2dParams {
    pub fn new(weight: Tensor4, bias: Vec<Real>) -> Result<Self> {
        let s = weight.shape();
        if s.h != s.w || s.h % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "convolution kernel must be square with odd size, got {}x{}",
                s.h, s.w
            )));
        }
        if bias.len() != s.n {
            return Err(Error::shape(
                "Conv2dParams::new",
                format!("{} output channels but {} biases", s.n, bias.len()),
            ));
        }
        Ok(Self { weight, bias })
    }

    pub fn zeros(out_c: usize, in_c: usize, k: usize) -> Self {
        Self::new(Tensor4::zeros(Shape4::new(out_c, in_c, k, k)), vec![0.0; out_c])
            .expect("odd kernel size")
    }

    /// A 3x3 (or `k`x`k`) kernel that copies each input channel to the same
    /// output channel.
    pub fn identity(channels: usize, k: usize) -> Self {
        let mut p = Self::zeros(channels, channels, k);
        let c = k / 2;
        for ch in 0..channels {
            p.weight.set(ch, ch, c, c, 1.0);
        }
        p
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape().n
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape().c
    }

    pub fn kernel_size(&self) -> usize {
        self.weight.shape().h
    }

    pub fn padding(&self) -> usize {
        (self.kernel_size() - 1) / 2
    }

    pub fn num_scalars(&self) -> usize {
        self.weight.shape().len() + self.bias.len()
    }

    fn describe(&self) -> String {
        let k = self.kernel_size();
        format!(
            "conv2d({}->{}, {k}x{k})",
            self.in_channels(),
            self.out_channels()
        )
    }

    fn check_input(&self, x: &Tensor4) -> Result<()> {
        if x.shape().c != self.in_channels() {
            return Err(Error::ChannelMismatch {
                layer: self.describe(),
                expected: self.in_channels(),
                got: x.shape().c,
            });
        }
        Ok(())
    }
}

pub struct ConvTape<'p> {
    input: Tensor4,
    params: &'p Conv2dParams,
}

/// `C = A·B + beta·C` on strided row-major views.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[Real],
    (rsa, csa): (usize, usize),
    b: &[Real],
    (rsb, csb): (usize, usize),
    beta: Real,
    c: &mut [Real],
) {
    debug_assert!(m == 0 || k == 0 || (m - 1) * rsa + (k - 1) * csa < a.len());
    debug_assert!(k == 0 || n == 0 || (k - 1) * rsb + (n - 1) * csb < b.len());
    debug_assert!(c.len() >= m * n);
    #[cfg(not(feature = "f32"))]
    let kernel = matrixmultiply::dgemm;
    #[cfg(feature = "f32")]
    let kernel = matrixmultiply::sgemm;
    // SAFETY: the asserts above bound every strided access inside the slices,
    // and `c` does not alias `a` or `b` (distinct borrows).
    unsafe {
        kernel(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Unfolds one `(c, h, w)` item into a `(c*k*k, h*w)` column matrix.
fn im2col(item: &[Real], c: usize, h: usize, w: usize, k: usize, cols: &mut [Real]) {
    let p = k / 2;
    let hw = h * w;
    for ci in 0..c {
        let plane = &item[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[((ci * k + ky) * k + kx) * hw..][..hw];
                let x_lo = p.saturating_sub(kx);
                let x_hi = (w + p).saturating_sub(kx).min(w);
                for y in 0..h {
                    let dst = &mut row[y * w..(y + 1) * w];
                    let sy = y + ky;
                    if sy < p || sy - p >= h || x_lo >= x_hi {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[(sy - p) * w..(sy - p + 1) * w];
                    dst[..x_lo].fill(0.0);
                    dst[x_hi..].fill(0.0);
                    let sx0 = x_lo + kx - p;
                    dst[x_lo..x_hi].copy_from_slice(&src[sx0..sx0 + (x_hi - x_lo)]);
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-and-adds columns back into an item.
fn col2im(cols: &[Real], c: usize, h: usize, w: usize, k: usize, item: &mut [Real]) {
    let p = k / 2;
    let hw = h * w;
    item.fill(0.0);
    for ci in 0..c {
        let plane = &mut item[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols[((ci * k + ky) * k + kx) * hw..][..hw];
                let x_lo = p.saturating_sub(kx);
                let x_hi = (w + p).saturating_sub(kx).min(w);
                if x_lo >= x_hi {
                    continue;
                }
                for y in 0..h {
                    let sy = y + ky;
                    if sy < p || sy - p >= h {
                        continue;
                    }
                    let src = &row[y * w + x_lo..y * w + x_hi];
                    let sx0 = x_lo + kx - p;
                    let dst = &mut plane[(sy - p) * w + sx0..][..x_hi - x_lo];
                    for (d, &s) in dst.iter_mut().zip(src) {
                        *d += s;
                    }
                }
            }
        }
    }
}

pub fn conv2d_apply(x: &Tensor4, p: &Conv2dParams) -> Result<Tensor4> {
    p.check_input(x)?;
    let Shape4 { n, c, h, w } = x.shape();
    let (oc, k) = (p.out_channels(), p.kernel_size());
    let hw = h * w;
    let kk = c * k * k;
    let mut y = Tensor4::zeros(Shape4::new(n, oc, h, w));
    let mut cols = if k == 1 { Vec::new() } else { vec![0.0; kk * hw] };
    for b in 0..n {
        let out = y.item_mut(b);
        for (o, &bias) in p.bias.iter().enumerate() {
            out[o * hw..(o + 1) * hw].fill(bias);
        }
        let rhs: &[Real] = if k == 1 {
            x.item(b)
        } else {
            im2col(x.item(b), c, h, w, k, &mut cols);
            &cols
        };
        gemm(oc, kk, hw, p.weight.data(), (kk, 1), rhs, (hw, 1), 1.0, out);
    }
    Ok(y)
}

pub fn conv2d<'p>(x: &Tensor4, p: &'p Conv2dParams) -> Result<(Tensor4, ConvTape<'p>)> {
    let y = conv2d_apply(x, p)?;
    Ok((
        y,
        ConvTape {
            input: x.clone(),
            params: p,
        },
    ))
}

/// Returns `(grad_x, grad_params)`.
pub fn conv2d_backward(grad_y: &Tensor4, tape: ConvTape<'_>) -> Result<(Tensor4, Conv2dParams)> {
    let ConvTape { input, params } = tape;
    let Shape4 { n, c, h, w } = input.shape();
    let (oc, k) = (params.out_channels(), params.kernel_size());
    let expected = Shape4::new(n, oc, h, w);
    if grad_y.shape() != expected {
        return Err(Error::shape(
            "conv2d_backward",
            format!("gradient {} but output was {}", grad_y.shape(), expected),
        ));
    }
    let hw = h * w;
    let kk = c * k * k;
    let mut grad_w = Tensor4::zeros(params.weight.shape());
    let mut grad_b = vec![0.0; oc];
    let mut grad_x = Tensor4::zeros(input.shape());
    let mut cols = if k == 1 { Vec::new() } else { vec![0.0; kk * hw] };
    let mut grad_cols = if k == 1 { Vec::new() } else { vec![0.0; kk * hw] };
    for b in 0..n {
        let gy = grad_y.item(b);
        for (o, gb) in grad_b.iter_mut().enumerate() {
            *gb += gy[o * hw..(o + 1) * hw].iter().sum::<Real>();
        }
        let rhs: &[Real] = if k == 1 {
            input.item(b)
        } else {
            im2col(input.item(b), c, h, w, k, &mut cols);
            &cols
        };
        // dW += dY · colsᵀ
        gemm(oc, hw, kk, gy, (hw, 1), rhs, (1, hw), 1.0, grad_w.data_mut());
        // dcols = Wᵀ · dY
        if k == 1 {
            gemm(kk, oc, hw, params.weight.data(), (1, kk), gy, (hw, 1), 0.0, grad_x.item_mut(b));
        } else {
            gemm(kk, oc, hw, params.weight.data(), (1, kk), gy, (hw, 1), 0.0, &mut grad_cols);
            col2im(&grad_cols, c, h, w, k, grad_x.item_mut(b));
        }
    }
    Ok((
        grad_x,
        Conv2dParams {
            weight: grad_w,
            bias: grad_b,
        },
    ))
}
