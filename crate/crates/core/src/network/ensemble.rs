use rayon::prelude::*;

use super::{infer, RcanConfig, RcanParams};
use crate::dihedral::{inverse_transform_tensor, transform_tensor, Dihedral};
use crate::error::Result;
use crate::tensor::Tensor4;

/// Averages `upscale` over the eight dihedral transforms of `x`, undoing
/// each transform on the corresponding output. Passes run in parallel; the
/// sum is taken in mode order so the result is deterministic.
pub fn self_ensemble<F>(x: &Tensor4, upscale: F) -> Result<Tensor4>
where
    F: Fn(&Tensor4) -> Result<Tensor4> + Sync,
{
    let outputs: Vec<Tensor4> = Dihedral::all()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|d| Ok(inverse_transform_tensor(&upscale(&transform_tensor(x, d))?, d)))
        .collect::<Result<_>>()?;
    let mut it = outputs.into_iter();
    let mut acc = it.next().expect("eight transforms");
    for y in it {
        acc.add_assign(&y)?;
    }
    Ok(acc.scale(0.125))
}

/// Self-ensembled network inference.
pub fn self_ensemble_forward(x: &Tensor4, params: &RcanParams, config: &RcanConfig) -> Result<Tensor4> {
    self_ensemble(x, |t| infer(t, params, config))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::build;
    use crate::rng::SplitMix64;
    use crate::tensor::{Real, Shape4};

    #[test]
    fn constant_output_survives() {
        let x = Tensor4::zeros(Shape4::new(1, 3, 3, 5));
        let y = self_ensemble(&x, |t| {
            let s = t.shape();
            Ok(Tensor4::full(Shape4::new(s.n, s.c, 2 * s.h, 2 * s.w), 0.375))
        })
        .unwrap();
        assert_eq!(y.shape(), Shape4::new(1, 3, 6, 10));
        assert!(y.data().iter().all(|&v| v == 0.375));
    }

    #[test]
    fn identity_map_is_equivariant() {
        let mut rng = SplitMix64::new(5);
        let x = Tensor4::from_fn(Shape4::new(1, 3, 4, 6), |_, _, _, _| rng.next_f64() as Real);
        let y = self_ensemble(&x, |t| Ok(t.clone())).unwrap();
        assert!(y.max_abs_diff(&x) < crate::tensor::tol(1e-15));
    }

    #[test]
    fn differs_from_plain_forward_on_asymmetric_input() {
        let cfg = RcanConfig::tiny(2);
        let p = build(&cfg, 8).unwrap();
        let x = Tensor4::from_fn(Shape4::new(1, 3, 5, 7), |_, c, y, x| {
            ((c + 1) * (3 * y + x * x)) as Real / 100.0
        });
        let plain = infer(&x, &p, &cfg).unwrap();
        let ens = self_ensemble_forward(&x, &p, &cfg).unwrap();
        assert_eq!(plain.shape(), ens.shape());
        assert!(plain.max_abs_diff(&ens) > 1e-6);
    }
}
