//! Shared inputs for the benchmarks.

use rcan_core::rng::SplitMix64;
use rcan_core::{Real, Shape4, Tensor4};

/// Uniform values in `[-1, 1)`.
pub fn random_tensor(shape: Shape4, seed: u64) -> Tensor4 {
    let mut rng = SplitMix64::new(seed);
    Tensor4::from_fn(shape, |_, _, _, _| rng.uniform(-1.0, 1.0) as Real)
}
