//! PSNR and SSIM on 8-bit-range planes.

use crate::data::{gaussian_kernel, quantize_round_half_up, rgb_to_y, ImageU8, Plane};
use crate::error::{Error, Result};
use crate::tensor::Real;

const PEAK: Real = 255.0;
const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: Real = 1.5;
const K1: Real = 0.01;
const K2: Real = 0.03;

fn same_dims(op: &'static str, a: &Plane, b: &Plane) -> Result<()> {
    if (a.h, a.w) != (b.h, b.w) {
        return Err(Error::shape(op, format!("{}x{} vs {}x{}", a.h, a.w, b.h, b.w)));
    }
    Ok(())
}

/// Luma of an 8-bit image, itself rounded half up to integer levels.
pub fn quantized_y(img: &ImageU8) -> Plane {
    let mut y = rgb_to_y(img);
    for v in &mut y.data {
        *v = quantize_round_half_up(*v) as Real;
    }
    y
}

/// `10·log10(255² / MSE)` after removing `crop` pixels from every border.
/// Identical planes give `+∞`.
pub fn psnr(a: &Plane, b: &Plane, crop: usize) -> Result<Real> {
    same_dims("psnr", a, b)?;
    let (a, b) = (a.shave(crop)?, b.shave(crop)?);
    let mse = a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum::<Real>() / a.data.len() as Real;
    if mse == 0.0 {
        return Ok(Real::INFINITY);
    }
    Ok(10.0 * (PEAK * PEAK / mse).log10())
}

/// Valid-region separable filter.
fn filter_valid(p: &[Real], h: usize, w: usize, taps: &[Real]) -> Vec<Real> {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut tmp = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            tmp[y * ow + x] = taps.iter().enumerate().map(|(i, t)| t * p[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for (i, t) in taps.iter().enumerate() {
            for x in 0..ow {
                out[y * ow + x] += t * tmp[(y + i) * ow + x];
            }
        }
    }
    out
}

/// Mean structural similarity with an 11×11 Gaussian window (σ = 1.5),
/// `K1 = 0.01`, `K2 = 0.03`, `L = 255`, over windows lying fully inside the
/// image.
pub fn ssim(a: &Plane, b: &Plane) -> Result<Real> {
    same_dims("ssim", a, b)?;
    if a.h < SSIM_WINDOW || a.w < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {}x{}",
            a.h, a.w
        )));
    }
    let taps = gaussian_kernel(SSIM_SIGMA, SSIM_WINDOW)?;
    let c1 = (K1 * PEAK).powi(2);
    let c2 = (K2 * PEAK).powi(2);
    let f = |v: &[Real]| filter_valid(v, a.h, a.w, &taps);
    let prod = |x: &[Real], y: &[Real]| x.iter().zip(y).map(|(p, q)| p * q).collect::<Vec<_>>();
    let mu1 = f(&a.data);
    let mu2 = f(&b.data);
    let e11 = f(&prod(&a.data, &a.data));
    let e22 = f(&prod(&b.data, &b.data));
    let e12 = f(&prod(&a.data, &b.data));
    let n = mu1.len();
    let total: Real = (0..n)
        .map(|i| {
            let (m1, m2) = (mu1[i], mu2[i]);
            let s11 = e11[i] - m1 * m1;
            let s22 = e22[i] - m2 * m2;
            let s12 = e12[i] - m1 * m2;
            ((2.0 * m1 * m2 + c1) * (2.0 * s12 + c2)) / ((m1 * m1 + m2 * m2 + c1) * (s11 + s22 + c2))
        })
        .sum();
    Ok(total / n as Real)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic;
    use proptest::prelude::*;

    fn constant(h: usize, w: usize, v: Real) -> Plane {
        Plane::new(h, w, vec![v; h * w]).unwrap()
    }

    fn luma(seed: u64) -> Plane {
        quantized_y(&synthetic::scene(24, 20, seed))
    }

    #[test]
    fn psnr_reference_values() {
        let a = luma(1);
        assert_eq!(psnr(&a, &a, 2).unwrap(), Real::INFINITY);
        let plus_one = Plane::new(a.h, a.w, a.data.iter().map(|v| v + 1.0).collect()).unwrap();
        assert!((psnr(&a, &plus_one, 2).unwrap() - 48.1308036086791).abs() < 1e-9);
        assert!(psnr(&constant(8, 8, 0.0), &constant(8, 8, 255.0), 1).unwrap().abs() < 1e-12);
        assert!(psnr(&a, &constant(5, 5, 0.0), 0).is_err());
        assert!(psnr(&constant(4, 4, 0.0), &constant(4, 4, 1.0), 2).is_err());
    }

    #[test]
    fn crop_ignores_border() {
        let a = constant(10, 10, 50.0);
        let mut b = a.clone();
        b.data[0] = 0.0;
        assert_eq!(psnr(&a, &b, 1).unwrap(), Real::INFINITY);
        assert!(psnr(&a, &b, 0).unwrap().is_finite());
    }

    #[test]
    fn ssim_reference_values() {
        let a = luma(2);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() <= 1e-12);
        let c1 = (0.01 * 255.0 as Real).powi(2);
        let expected = (2.0 * 100.0 * 110.0 + c1) / (100.0 * 100.0 + 110.0 * 110.0 + c1);
        let got = ssim(&constant(16, 16, 100.0), &constant(16, 16, 110.0)).unwrap();
        assert!((got - expected).abs() < crate::tensor::tol(1e-12));
        assert!((got - 0.995476444).abs() < crate::tensor::tol(1e-9));
        assert!(ssim(&constant(10, 30, 1.0), &constant(10, 30, 1.0)).is_err());
    }

    #[test]
    fn psnr_falls_with_noise_amplitude() {
        let a = luma(3);
        let mut last = Real::INFINITY;
        for amp in [1.0, 2.0, 4.0, 8.0] {
            let mut rng = crate::rng::SplitMix64::new(7);
            let noisy = Plane::new(
                a.h,
                a.w,
                a.data.iter().map(|v| v + amp * rng.uniform(-1.0, 1.0) as Real).collect(),
            )
            .unwrap();
            let p = psnr(&a, &noisy, 0).unwrap();
            assert!(p < last);
            last = p;
        }
    }

    proptest! {
        #[test]
        fn ssim_symmetric_and_bounded(s1 in 0u64..1000, s2 in 0u64..1000) {
            let (a, b) = (luma(s1), luma(s2));
            let ab = ssim(&a, &b).unwrap();
            prop_assert!((ab - ssim(&b, &a).unwrap()).abs() < 1e-12);
            prop_assert!((-1.0..=1.0).contains(&ab));
        }
    }
}
