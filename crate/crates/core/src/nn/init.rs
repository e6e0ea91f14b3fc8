use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use super::tensor::{Real, Tensor};

/// `N(0, 1/fan_in)`, the initialization SELU networks expect.
pub fn lecun_normal<F: Real, R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<F> {
    let std = (1.0 / fan_in.max(1) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            F::cast(z * std)
        })
        .collect();
    Tensor::from_vec(shape, data).expect("length matches shape")
}

/// Uniform on `+-sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<F: Real, R: Rng + ?Sized>(
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
    rng: &mut R,
) -> Tensor<F> {
    let limit = (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
    let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
    let n = shape.iter().product();
    let data = (0..n).map(|_| F::cast(dist.sample(rng))).collect();
    Tensor::from_vec(shape, data).expect("length matches shape")
}
