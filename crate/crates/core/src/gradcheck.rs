//! Central finite differences: the independent oracle for every analytic
//! backward pass in the crate.
//!
//! The functions here only ever call forward computations. The check
//! suites in [`suite`] compare them against the hand-written backward passes.

pub mod suite;

use crate::error::{Error, Result};
use crate::tensor::Real;

/// Default step for 64-bit central differences.
pub const DEFAULT_STEP: Real = 1e-3;

/// `|a - b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: Real, b: Real) -> Real {
    let denom = a.abs().max(b.abs()).max(1e-8);
    (a - b).abs() / denom
}

/// Central-difference gradient of `f` at `params`:
/// `(f(θ + h eᵢ) - f(θ - h eᵢ)) / 2h` for every coordinate `i`.
pub fn finite_diff_grad<F>(mut f: F, params: &[Real], h: Real) -> Result<Vec<Real>>
where
    F: FnMut(&[Real]) -> Result<Real>,
{
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("step must be positive, got {h}")));
    }
    let mut theta = params.to_vec();
    let mut grad = Vec::with_capacity(params.len());
    for i in 0..theta.len() {
        let orig = theta[i];
        theta[i] = orig + h;
        let plus = f(&theta)?;
        theta[i] = orig - h;
        let minus = f(&theta)?;
        theta[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFiniteAt { index: i });
        }
        grad.push((plus - minus) / (2.0 * h));
    }
    Ok(grad)
}

/// Outcome of a guarded central difference at one coordinate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Probe {
    /// Both evaluations saw the same activation pattern.
    Smooth(Real),
    /// The two evaluations straddle a kink (a ReLU or `|·|` changed branch),
    /// so the derivative is not defined by the difference quotient.
    Kink,
}

/// Central differences at selected coordinates for piecewise-smooth
/// functions. `f` returns its value together with a fingerprint of the
/// branch pattern it took (ReLU masks, signs of L1 residuals); coordinates
/// whose `+h` and `-h` evaluations disagree on the fingerprint are reported
/// as [`Probe::Kink`].
pub fn finite_diff_probe<F>(
    mut f: F,
    params: &[Real],
    h: Real,
    coords: &[usize],
) -> Result<Vec<Probe>>
where
    F: FnMut(&[Real]) -> Result<(Real, u64)>,
{
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("step must be positive, got {h}")));
    }
    let mut theta = params.to_vec();
    let mut out = Vec::with_capacity(coords.len());
    for &i in coords {
        let orig = theta[i];
        theta[i] = orig + h;
        let (plus, sig_plus) = f(&theta)?;
        theta[i] = orig - h;
        let (minus, sig_minus) = f(&theta)?;
        theta[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFiniteAt { index: i });
        }
        out.push(if sig_plus == sig_minus {
            Probe::Smooth((plus - minus) / (2.0 * h))
        } else {
            Probe::Kink
        });
    }
    Ok(out)
}

// Central differences at h = 1e-3 need 64-bit reals.
#[cfg(all(test, not(feature = "f32")))]
mod tests {
    use super::*;

    #[test]
    fn quadratic() {
        let g = finite_diff_grad(|t| Ok(t[0] * t[0]), &[3.0], DEFAULT_STEP).unwrap();
        assert!((g[0] - 6.0).abs() < 1e-6);
    }

    #[test]
    fn constant_has_zero_gradient() {
        let g = finite_diff_grad(|_| Ok(4.2), &[1.0, -2.0, 0.5], DEFAULT_STEP).unwrap();
        assert_eq!(g, vec![0.0; 3]);
    }

    #[test]
    fn linear_functional_recovers_coefficients() {
        let coef: [Real; 5] = [0.3, -1.7, 2.0, 0.0, 12.5];
        let f = |t: &[Real]| Ok(t.iter().zip(&coef).map(|(a, b)| a * b).sum::<Real>());
        let g = finite_diff_grad(f, &[0.1, 0.2, -0.3, 4.0, -5.0], DEFAULT_STEP).unwrap();
        for (gi, ci) in g.iter().zip(&coef) {
            assert!((gi - ci).abs() < 1e-8, "{gi} vs {ci}");
        }
    }

    #[test]
    fn non_finite_names_coordinate() {
        let f = |t: &[Real]| Ok(if t[1] > 1.0 { Real::NAN } else { 0.0 });
        match finite_diff_grad(f, &[0.0, 0.9995, 0.0], DEFAULT_STEP) {
            Err(Error::NonFiniteAt { index }) => assert_eq!(index, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_non_positive_step() {
        assert!(finite_diff_grad(|_| Ok(0.0), &[1.0], 0.0).is_err());
    }

    #[test]
    fn probe_flags_kinks() {
        let f = |t: &[Real]| Ok((t[0].abs() + 2.0 * t[1], (t[0] > 0.0) as u64));
        let p = finite_diff_probe(f, &[0.0005, 1.0], DEFAULT_STEP, &[0, 1]).unwrap();
        assert_eq!(p[0], Probe::Kink);
        match p[1] {
            Probe::Smooth(g) => assert!((g - 2.0).abs() < 1e-9),
            Probe::Kink => panic!("smooth coordinate flagged"),
        }
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1.0, 1.1) - 0.1 / 1.1).abs() < 1e-15);
        assert!((relative_error(0.0, 1e-12) - 1e-4).abs() < 1e-15);
    }
}
