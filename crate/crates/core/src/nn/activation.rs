use ndarray::{Array2, Zip};

use super::tensor::Real;

pub const SELU_LAMBDA: f64 = 1.0507009873554805;
pub const SELU_ALPHA: f64 = 1.6732632423543772;

pub fn selu<F: Real>(x: F) -> F {
    if x > F::zero() {
        F::cast(SELU_LAMBDA) * x
    } else {
        F::cast(SELU_LAMBDA * SELU_ALPHA) * (x.exp() - F::one())
    }
}

pub fn selu_inplace<F: Real>(x: &mut Array2<F>) {
    x.mapv_inplace(selu);
}

/// Multiplies `dy` by the SELU derivative, recovered from the output `y`:
/// `lambda` where `y > 0`, else `y + lambda * alpha`.
pub fn selu_backward<F: Real>(y: &Array2<F>, dy: &mut Array2<F>) {
    let lambda = F::cast(SELU_LAMBDA);
    let la = F::cast(SELU_LAMBDA * SELU_ALPHA);
    Zip::from(dy).and(y).for_each(|d, &y| {
        *d *= if y > F::zero() { lambda } else { y + la };
    });
}

#[inline]
pub fn sigmoid<F: Real>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}
