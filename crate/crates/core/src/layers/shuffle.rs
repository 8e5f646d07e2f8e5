//! Sub-pixel rearrangement between channels and space.
//!
//! Channel ordering: `y[n, c, u·i + a, u·j + b] = x[n, c·u² + a·u + b, i, j]`,
//! i.e. each output channel owns a contiguous run of `u²` input channels laid
//! out row-major over the `u × u` sub-pixel block.

use crate::error::{Error, Result};
use crate::tensor::{Shape4, Tensor4};

fn check_factor(u: usize) -> Result<()> {
    if u == 0 {
        return Err(Error::InvalidArgument("upscale factor must be positive".into()));
    }
    Ok(())
}

/// `(n, c·u², h, w) -> (n, c, u·h, u·w)`.
pub fn pixel_shuffle(x: &Tensor4, u: usize) -> Result<Tensor4> {
    check_factor(u)?;
    let s = x.shape();
    let uu = u * u;
    if s.c % uu != 0 {
        return Err(Error::shape(
            "pixel_shuffle",
            format!("{} channels not divisible by {}² = {}", s.c, u, uu),
        ));
    }
    let oc = s.c / uu;
    let mut y = Tensor4::zeros(Shape4::new(s.n, oc, s.h * u, s.w * u));
    let ow = s.w * u;
    for n in 0..s.n {
        for c in 0..oc {
            let out = y.plane_mut(n, c);
            for a in 0..u {
                for b in 0..u {
                    let src = x.plane(n, c * uu + a * u + b);
                    for i in 0..s.h {
                        let row = &mut out[(u * i + a) * ow..];
                        for j in 0..s.w {
                            row[u * j + b] = src[i * s.w + j];
                        }
                    }
                }
            }
        }
    }
    Ok(y)
}

/// Exact inverse of [`pixel_shuffle`]: `(n, c, u·h, u·w) -> (n, c·u², h, w)`.
pub fn pixel_unshuffle(y: &Tensor4, u: usize) -> Result<Tensor4> {
    check_factor(u)?;
    let s = y.shape();
    if s.h % u != 0 || s.w % u != 0 {
        return Err(Error::shape(
            "pixel_unshuffle",
            format!("spatial size {}x{} not divisible by {}", s.h, s.w, u),
        ));
    }
    let (h, w) = (s.h / u, s.w / u);
    let uu = u * u;
    let mut x = Tensor4::zeros(Shape4::new(s.n, s.c * uu, h, w));
    for n in 0..s.n {
        for c in 0..s.c {
            let src = y.plane(n, c);
            for a in 0..u {
                for b in 0..u {
                    let dst = x.plane_mut(n, c * uu + a * u + b);
                    for i in 0..h {
                        for j in 0..w {
                            dst[i * w + j] = src[(u * i + a) * s.w + u * j + b];
                        }
                    }
                }
            }
        }
    }
    Ok(x)
}

/// Shuffling is a permutation, so its adjoint is the inverse permutation.
pub fn pixel_shuffle_backward(grad_y: &Tensor4, u: usize) -> Result<Tensor4> {
    pixel_unshuffle(grad_y, u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Real;
    use proptest::prelude::*;

    #[test]
    fn four_channels_to_block() {
        let x = Tensor4::from_vec(Shape4::new(1, 4, 1, 1), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = pixel_shuffle(&x, 2).unwrap();
        assert_eq!(y.shape(), Shape4::new(1, 1, 2, 2));
        assert_eq!(y.data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn layout_rule() {
        let u = 3;
        let x = Tensor4::from_fn(Shape4::new(2, 18, 2, 3), |n, c, i, j| {
            (n * 1000 + c * 100 + i * 10 + j) as Real
        });
        let y = pixel_shuffle(&x, u).unwrap();
        for n in 0..2 {
            for c in 0..2 {
                for i in 0..2 {
                    for j in 0..3 {
                        for a in 0..u {
                            for b in 0..u {
                                assert_eq!(
                                    y.get(n, c, u * i + a, u * j + b),
                                    x.get(n, c * u * u + a * u + b, i, j)
                                );
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn constant_stays_constant() {
        let y = pixel_shuffle(&Tensor4::full(Shape4::new(1, 8, 3, 3), 0.25), 2).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn indivisible_channels_rejected() {
        assert!(pixel_shuffle(&Tensor4::zeros(Shape4::new(1, 6, 2, 2)), 2).is_err());
        assert!(pixel_unshuffle(&Tensor4::zeros(Shape4::new(1, 1, 3, 2)), 2).is_err());
    }

    proptest! {
        #[test]
        fn unshuffle_inverts_shuffle(
            u in 1usize..4, c in 1usize..3, h in 1usize..4, w in 1usize..4,
            seed in any::<u64>(),
        ) {
            let mut rng = crate::rng::SplitMix64::new(seed);
            let x = Tensor4::from_fn(Shape4::new(2, c * u * u, h, w), |_, _, _, _| rng.uniform(-1.0, 1.0) as Real);
            let y = pixel_shuffle(&x, u).unwrap();
            prop_assert!(pixel_unshuffle(&y, u).unwrap().bitwise_eq(&x));
            // a permutation keeps the multiset of values
            let mut a = x.data().to_vec();
            let mut b = y.data().to_vec();
            a.sort_by(|p, q| p.partial_cmp(q).unwrap());
            b.sort_by(|p, q| p.partial_cmp(q).unwrap());
            prop_assert_eq!(a, b);
        }
    }
}
