//! Per-timestep fully connected layer followed by softmax.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;

use super::init::lecun_normal;
use super::tensor::{Parameter, Real, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Dense<F> {
    /// `in_dim x out_dim`
    pub weight: Parameter<F>,
    pub bias: Parameter<F>,
}

impl<F: Real> Dense<F> {
    pub fn new<R: Rng + ?Sized>(name: &str, in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        Self::from_tensors(name, lecun_normal(&[in_dim, out_dim], in_dim, rng), Tensor::zeros(&[out_dim]))
            .expect("consistent shapes")
    }

    pub fn from_tensors(name: &str, weight: Tensor<F>, bias: Tensor<F>) -> Result<Self> {
        let &[_, out_dim] = weight.shape() else {
            return Err(Error::Shape(format!("dense weight must be rank 2, got {:?}", weight.shape())));
        };
        if bias.shape() != [out_dim] {
            return Err(Error::Shape(format!(
                "dense weight {:?} does not match bias {:?}",
                weight.shape(),
                bias.shape()
            )));
        }
        Ok(Dense {
            weight: Parameter::new(format!("{name}.weight"), weight),
            bias: Parameter::new(format!("{name}.bias"), bias),
        })
    }

    pub fn in_dim(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn logits(&self, x: &ArrayView2<'_, F>) -> Result<Array2<F>> {
        if x.ncols() != self.in_dim() {
            return Err(Error::Shape(format!(
                "dense expects {} inputs, got {}",
                self.in_dim(),
                x.ncols()
            )));
        }
        let mut out = Array2::zeros((x.nrows(), self.out_dim()));
        out += &self.bias.value.matrix();
        general_mat_mul(F::one(), x, &self.weight.value.matrix(), F::one(), &mut out);
        Ok(out)
    }

    pub fn backward(&mut self, x: &Array2<F>, dlogits: &Array2<F>, input_grad: bool) -> Option<Array2<F>> {
        general_mat_mul(F::one(), &x.t(), dlogits, F::one(), &mut self.weight.grad.matrix_mut());
        for (g, d) in self.bias.grad.data_mut().iter_mut().zip(dlogits.sum_axis(Axis(0))) {
            *g += d;
        }
        input_grad.then(|| dlogits.dot(&self.weight.value.matrix().t()))
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows<F: Real>(logits: &mut Array2<F>) {
    for mut row in logits.rows_mut() {
        let max = row.iter().copied().fold(F::neg_infinity(), F::max);
        let mut sum = F::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

/// `softmax(input . weights + bias)` applied to every row.
pub fn dense_softmax<F: Real>(input: ArrayView2<'_, F>, weights: &Tensor<F>, bias: &Tensor<F>) -> Result<Array2<F>> {
    let dense = Dense::from_tensors("dense", weights.clone(), bias.clone())?;
    let mut out = dense.logits(&input)?;
    softmax_rows(&mut out);
    Ok(out)
}
