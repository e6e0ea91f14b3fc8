//! Finite-difference verification of analytic gradients.

use ndarray::Array2;
use rand::seq::index::sample;
use rand::Rng;

use super::dense::{softmax_rows, Dense};
use super::loss::masked_cross_entropy;
use super::tensor::Parameter;
use crate::error::Result;

/// A deterministic scalar objective over a set of `f64` parameters.
pub trait Differentiable {
    fn parameters_mut(&mut self) -> Vec<&mut Parameter<f64>>;
    /// Loss with gradients accumulated into each parameter's `grad`.
    fn loss_and_grad(&mut self) -> Result<f64>;
    fn loss(&mut self) -> Result<f64>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_relative_error: f64,
    /// `(parameter name, flat index, analytic, numeric)` of the worst entry.
    pub worst: Option<(String, usize, f64, f64)>,
}

/// Softmax layer with masked cross-entropy over fixed inputs.
pub struct SoftmaxObjective {
    pub dense: Dense<f64>,
    pub x: Array2<f64>,
    pub labels: Vec<usize>,
    pub mask: Vec<bool>,
}

impl SoftmaxObjective {
    fn run(&mut self, grad: bool) -> Result<f64> {
        let mut probs = self.dense.logits(&self.x.view())?;
        softmax_rows(&mut probs);
        let (loss, dlogits) = masked_cross_entropy(probs.view(), &self.labels, &self.mask, None)?;
        if grad {
            self.dense.backward(&self.x, &dlogits, false);
        }
        Ok(loss)
    }
}

impl Differentiable for SoftmaxObjective {
    fn parameters_mut(&mut self) -> Vec<&mut Parameter<f64>> {
        vec![&mut self.dense.weight, &mut self.dense.bias]
    }
    fn loss_and_grad(&mut self) -> Result<f64> {
        self.run(true)
    }
    fn loss(&mut self) -> Result<f64> {
        self.run(false)
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares analytic gradients against central differences with step `h` on
/// up to `samples` randomly chosen scalar parameters.
pub fn grad_check<M: Differentiable, R: Rng + ?Sized>(
    model: &mut M,
    h: f64,
    samples: usize,
    rng: &mut R,
) -> Result<GradCheckReport> {
    for p in model.parameters_mut() {
        p.zero_grad();
    }
    model.loss_and_grad()?;
    let mut coords = Vec::new();
    for (pi, p) in model.parameters_mut().into_iter().enumerate() {
        for i in 0..p.value.len() {
            coords.push((pi, i, p.grad.data()[i], p.name.clone()));
        }
    }
    let picked = sample(rng, coords.len(), samples.min(coords.len()));
    let mut report = GradCheckReport {
        checked: 0,
        max_relative_error: 0.0,
        worst: None,
    };
    for k in picked {
        let (pi, i, analytic, ref name) = coords[k];
        let original = model.parameters_mut()[pi].value.data()[i];
        model.parameters_mut()[pi].value.data_mut()[i] = original + h;
        let plus = model.loss()?;
        model.parameters_mut()[pi].value.data_mut()[i] = original - h;
        let minus = model.loss()?;
        model.parameters_mut()[pi].value.data_mut()[i] = original;
        let numeric = (plus - minus) / (2.0 * h);
        let err = relative_error(analytic, numeric);
        report.checked += 1;
        if err >= report.max_relative_error {
            report.max_relative_error = err;
            report.worst = Some((name.clone(), i, analytic, numeric));
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct Cubic(Parameter<f64>, bool);

    impl Differentiable for Cubic {
        fn parameters_mut(&mut self) -> Vec<&mut Parameter<f64>> {
            vec![&mut self.0]
        }
        fn loss_and_grad(&mut self) -> Result<f64> {
            let broken = self.1;
            let Parameter { value, grad, .. } = &mut self.0;
            for (g, w) in grad.data_mut().iter_mut().zip(value.data()) {
                *g += if broken { 2.0 * w * w } else { 3.0 * w * w };
            }
            self.loss()
        }
        fn loss(&mut self) -> Result<f64> {
            Ok(self.0.value.data().iter().map(|w| w.powi(3)).sum())
        }
    }

    #[test]
    fn detects_correct_and_wrong_gradients() {
        let w = Tensor::from_vec(&[4], vec![0.5, -1.0, 2.0, 1.5]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ok = grad_check(&mut Cubic(Parameter::new("w", w.clone()), false), 1e-5, 10, &mut rng).unwrap();
        assert_eq!(ok.checked, 4);
        assert!(ok.max_relative_error < 1e-6);
        let bad = grad_check(&mut Cubic(Parameter::new("w", w), true), 1e-5, 10, &mut rng).unwrap();
        assert!(bad.max_relative_error > 0.1);
    }
}
