use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::scalar::Scalar;

/// Samples uniformly from `(-bound, bound)`.
pub fn uniform<F: Scalar>(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> ArrayD<F> {
    ArrayD::from_shape_simple_fn(IxDyn(shape), || {
        F::of_f64((rng.random::<f64>() * 2.0 - 1.0) * bound)
    })
}

/// Fan-in scaled uniform init, `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`, the
/// usual default for linear and recurrent weights.
pub fn fan_in_uniform<F: Scalar>(
    rng: &mut ChaCha8Rng,
    shape: &[usize],
    fan_in: usize,
) -> ArrayD<F> {
    uniform(rng, shape, 1.0 / (fan_in as f64).sqrt())
}
