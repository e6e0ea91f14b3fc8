//! Training-time stochastic regularizers: additive Gaussian noise and dropout.

use ndarray::{Array2, ArrayViewMut2};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::tensor::Real;
use crate::error::{Error, Result};

/// Adds i.i.d. `N(0, sigma^2)` noise in place, skipping column `skip`.
pub fn add_gaussian_noise<F: Real, R: Rng + ?Sized>(
    x: &mut ArrayViewMut2<'_, F>,
    sigma: f64,
    rng: &mut R,
    skip: Option<usize>,
) {
    if sigma == 0.0 {
        return;
    }
    for mut row in x.rows_mut() {
        for (c, v) in row.iter_mut().enumerate() {
            if Some(c) == skip {
                continue;
            }
            let z: f64 = StandardNormal.sample(rng);
            *v += F::cast(sigma * z);
        }
    }
}

/// Inverted dropout. In training each element is zeroed with probability `p`
/// and survivors are scaled by `1 / (1 - p)`; the returned mask holds those
/// per-element factors. Outside training the input passes through unchanged.
pub fn dropout<F: Real, R: Rng + ?Sized>(
    x: &Array2<F>,
    p: f64,
    rng: &mut R,
    training: bool,
) -> Result<(Array2<F>, Option<Array2<F>>)> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Value(format!("dropout probability {p} must be in [0, 1)")));
    }
    if !training || p == 0.0 {
        return Ok((x.clone(), None));
    }
    let keep = F::cast(1.0 / (1.0 - p));
    let mask = Array2::from_shape_simple_fn(x.dim(), || {
        if rng.random::<f64>() < p {
            F::zero()
        } else {
            keep
        }
    });
    Ok((x * &mask, Some(mask)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dropout_outside_training_is_identity() {
        let x = Array2::from_elem((3, 3), 2.0f32);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (y, mask) = dropout(&x, 0.5, &mut rng, false).unwrap();
        assert_eq!(y, x);
        assert!(mask.is_none());
        let (y, _) = dropout(&x, 0.0, &mut rng, true).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn dropout_rejects_p_one() {
        let x = Array2::from_elem((1, 1), 1.0f32);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(dropout(&x, 1.0, &mut rng, true).is_err());
        assert!(dropout(&x, -0.1, &mut rng, true).is_err());
    }

    #[test]
    fn dropout_is_unbiased() {
        let x = Array2::from_elem((100, 1000), 1.0f64);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (y, _) = dropout(&x, 0.5, &mut rng, true).unwrap();
        let mean = y.mean().unwrap();
        assert!((0.98..=1.02).contains(&mean), "mean {mean}");
        assert!(y.iter().all(|&v| v == 0.0 || v == 2.0));
    }

    #[test]
    fn noise_respects_skip_column() {
        let mut x = Array2::<f64>::zeros((4, 3));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        add_gaussian_noise(&mut x.view_mut(), 0.1, &mut rng, Some(1));
        assert!(x.column(1).iter().all(|&v| v == 0.0));
        assert!(x.column(0).iter().all(|&v| v != 0.0));
    }
}
