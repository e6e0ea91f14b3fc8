//! Length-preserving dilated 1D convolution.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use super::init::lecun_normal;
use super::layout::SeqLayout;
use super::tensor::{Parameter, Real, Tensor};
use crate::error::{Error, Result};

/// Convolution over the time axis with zero "same" padding.
///
/// Kernel tap `k` of a width-`K` kernel reads input position
/// `t + (k - K/2) * dilation`, so odd widths pad symmetrically and even widths
/// pad one extra step on the left (width 20: ten before, nine after).
#[derive(Debug, Clone)]
pub struct Conv1d<F> {
    /// `width x in_dim x out_dim`
    pub kernel: Parameter<F>,
    pub bias: Parameter<F>,
    dilation: usize,
}

impl<F: Real> Conv1d<F> {
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        width: usize,
        in_dim: usize,
        out_dim: usize,
        dilation: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let kernel = lecun_normal(&[width, in_dim, out_dim], width * in_dim, rng);
        Self::from_tensors(name, kernel, Tensor::zeros(&[out_dim]), dilation)
    }

    pub fn from_tensors(name: &str, kernel: Tensor<F>, bias: Tensor<F>, dilation: usize) -> Result<Self> {
        if dilation < 1 {
            return Err(Error::Shape(format!("dilation {dilation} must be >= 1")));
        }
        let &[width, _, out_dim] = kernel.shape() else {
            return Err(Error::Shape(format!("conv kernel must be rank 3, got {:?}", kernel.shape())));
        };
        if width == 0 || bias.shape() != [out_dim] {
            return Err(Error::Shape(format!(
                "conv kernel {:?} does not match bias {:?}",
                kernel.shape(),
                bias.shape()
            )));
        }
        Ok(Conv1d {
            kernel: Parameter::new(format!("{name}.kernel"), kernel),
            bias: Parameter::new(format!("{name}.bias"), bias),
            dilation,
        })
    }

    pub fn width(&self) -> usize {
        self.kernel.value.shape()[0]
    }

    pub fn in_dim(&self) -> usize {
        self.kernel.value.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.kernel.value.shape()[2]
    }

    pub fn dilation(&self) -> usize {
        self.dilation
    }

    /// Input offset read by each kernel tap.
    pub fn offsets(&self) -> impl Iterator<Item = isize> + '_ {
        let centre = (self.width() / 2) as isize;
        (0..self.width()).map(move |k| (k as isize - centre) * self.dilation as isize)
    }

    /// How far the layer reads (before, after) each position.
    pub fn reach(&self) -> (usize, usize) {
        reach(self.width(), self.dilation)
    }

    fn tap(&self, k: usize) -> ArrayView2<'_, F> {
        let c = self.in_dim();
        self.kernel.value.matrix().slice_move(s![k * c..(k + 1) * c, ..])
    }

    fn check(&self, x: &Array2<F>, layout: SeqLayout) -> Result<()> {
        layout.check_rows(x, "conv input")?;
        if x.ncols() != self.in_dim() {
            return Err(Error::Shape(format!(
                "conv expects {} input channels, got {}",
                self.in_dim(),
                x.ncols()
            )));
        }
        let (before, after) = self.reach();
        if layout.gap < before.max(after) {
            return Err(Error::Shape(format!(
                "layout gap {} is narrower than the kernel reach {}",
                layout.gap,
                before.max(after)
            )));
        }
        Ok(())
    }

    /// `x` must have zero gap rows; the output keeps them zero.
    pub fn forward(&self, x: &Array2<F>, layout: SeqLayout) -> Result<Array2<F>> {
        self.check(x, layout)?;
        let rows = x.nrows();
        let mut out = Array2::zeros((rows, self.out_dim()));
        out += &self.bias.value.matrix();
        for (k, off) in self.offsets().enumerate() {
            let (lo, hi) = shifted_range(rows, off);
            if lo >= hi {
                continue;
            }
            let src = x.slice(s![(lo as isize + off) as usize..(hi as isize + off) as usize, ..]);
            let mut dst = out.slice_mut(s![lo..hi, ..]);
            general_mat_mul(F::one(), &src, &self.tap(k), F::one(), &mut dst);
        }
        layout.zero_gaps(&mut out);
        Ok(out)
    }

    /// Accumulates parameter gradients and returns the input gradient when
    /// `input_grad` is set. `dy` must be zero on gap rows.
    pub fn backward(&mut self, x: &Array2<F>, dy: &Array2<F>, layout: SeqLayout, input_grad: bool) -> Option<Array2<F>> {
        let rows = x.nrows();
        let c = self.in_dim();
        let offsets: Vec<isize> = self.offsets().collect();
        let mut dx = input_grad.then(|| Array2::zeros((rows, c)));
        {
            let mut dk = self.kernel.grad.matrix_mut();
            for (k, &off) in offsets.iter().enumerate() {
                let (lo, hi) = shifted_range(rows, off);
                if lo >= hi {
                    continue;
                }
                let src_range = (lo as isize + off) as usize..(hi as isize + off) as usize;
                let src = x.slice(s![src_range.clone(), ..]);
                let d = dy.slice(s![lo..hi, ..]);
                let mut dk_tap = dk.slice_mut(s![k * c..(k + 1) * c, ..]);
                general_mat_mul(F::one(), &src.t(), &d, F::one(), &mut dk_tap);
                if let Some(dx) = dx.as_mut() {
                    let tap = self.kernel.value.matrix().slice_move(s![k * c..(k + 1) * c, ..]);
                    let mut dst = dx.slice_mut(s![src_range, ..]);
                    general_mat_mul(F::one(), &d, &tap.t(), F::one(), &mut dst);
                }
            }
        }
        let db: Array1<F> = dy.sum_axis(Axis(0));
        for (g, d) in self.bias.grad.data_mut().iter_mut().zip(db.iter()) {
            *g += *d;
        }
        if let Some(dx) = dx.as_mut() {
            layout.zero_gaps(dx);
        }
        dx
    }
}

/// Output rows `[lo, hi)` whose shifted input row stays inside `[0, rows)`.
fn shifted_range(rows: usize, off: isize) -> (usize, usize) {
    let lo = (-off).max(0) as usize;
    let hi = (rows as isize - off.max(0)).max(0) as usize;
    (lo.min(hi), hi)
}

/// Positions read (before, after) by a width-`width` kernel at `dilation`.
pub fn reach(width: usize, dilation: usize) -> (usize, usize) {
    let before = width / 2;
    let after = width - 1 - before;
    (before * dilation, after * dilation)
}

/// Receptive field (before, after) of a stack of convolutions.
pub fn receptive_field(widths: &[usize], dilations: &[usize]) -> (usize, usize) {
    widths
        .iter()
        .zip(dilations)
        .map(|(&w, &d)| reach(w, d))
        .fold((0, 0), |acc, r| (acc.0 + r.0, acc.1 + r.1))
}

/// Convolves one `T x C` sequence with a `K x C x F` kernel.
pub fn conv1d_same<F: Real>(
    input: ArrayView2<'_, F>,
    kernels: &Tensor<F>,
    bias: &Tensor<F>,
    dilation: usize,
) -> Result<Array2<F>> {
    let conv = Conv1d::from_tensors("conv", kernels.clone(), bias.clone(), dilation)?;
    let (before, after) = conv.reach();
    let (x, layout) = SeqLayout::pack(&[input], before.max(after))?;
    let y = conv.forward(&x, layout)?;
    Ok(layout.sequence(&y, 0).to_owned())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct evaluation of the convolution sum with explicit zero padding.
    fn naive(input: &Array2<f64>, kernel: &Tensor<f64>, bias: &[f64], dilation: usize) -> Array2<f64> {
        let &[k_w, c, f] = kernel.shape() else { unreachable!() };
        let t_len = input.nrows();
        let centre = (k_w / 2) as isize;
        let mut out = Array2::zeros((t_len, f));
        for t in 0..t_len {
            for o in 0..f {
                let mut acc = bias[o];
                for k in 0..k_w {
                    let pos = t as isize + (k as isize - centre) * dilation as isize;
                    if pos < 0 || pos >= t_len as isize {
                        continue;
                    }
                    for ch in 0..c {
                        acc += input[[pos as usize, ch]] * kernel.data()[(k * c + ch) * f + o];
                    }
                }
                out[[t, o]] = acc;
            }
        }
        out
    }

    #[test]
    fn identity_kernel() {
        let c = 3;
        let mut kernel = Tensor::<f64>::zeros(&[1, c, c]);
        for i in 0..c {
            kernel.data_mut()[i * c + i] = 1.0;
        }
        let input = array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]];
        let out = conv1d_same(input.view(), &kernel, &Tensor::zeros(&[c]), 1).unwrap();
        assert_eq!(out, input);
    }

    #[test]
    fn box_filter_with_zero_padding() {
        let kernel = Tensor::from_vec(&[3, 1, 1], vec![1.0, 1.0, 1.0]).unwrap();
        let input = array![[1.0f64], [2.0], [3.0]];
        let out = conv1d_same(input.view(), &kernel, &Tensor::zeros(&[1]), 1).unwrap();
        assert_eq!(out.column(0).to_vec(), [3.0, 6.0, 5.0]);
    }

    #[test]
    fn dilated_impulse_response() {
        let kernel = Tensor::from_vec(&[3, 1, 1], vec![1.0, 10.0, 100.0]).unwrap();
        let mut input = Array2::<f64>::zeros((5, 1));
        input[[2, 0]] = 1.0;
        let out = conv1d_same(input.view(), &kernel, &Tensor::zeros(&[1]), 2).unwrap();
        // Output t reads t-2, t, t+2: the impulse at 2 reaches outputs 4, 2, 0.
        assert_eq!(out.column(0).to_vec(), [100.0, 0.0, 10.0, 0.0, 1.0]);
    }

    #[test]
    fn even_width_pads_left_heavy() {
        assert_eq!(reach(20, 1), (10, 9));
        assert_eq!(reach(3, 2), (2, 2));
        assert_eq!(reach(1, 1), (0, 0));
        let conv = Conv1d::<f64>::from_tensors("c", Tensor::zeros(&[20, 1, 1]), Tensor::zeros(&[1]), 1).unwrap();
        let offs: Vec<isize> = conv.offsets().collect();
        assert_eq!(offs.first(), Some(&-10));
        assert_eq!(offs.last(), Some(&9));
    }

    #[test]
    fn stack_receptive_field() {
        assert_eq!(receptive_field(&[3, 3, 3, 3, 3, 20], &[1, 2, 2, 2, 2, 1]), (19, 18));
    }

    #[test]
    fn shape_errors() {
        assert!(Conv1d::<f64>::from_tensors("c", Tensor::zeros(&[3, 2, 2]), Tensor::zeros(&[2]), 0).is_err());
        let kernel = Tensor::<f64>::zeros(&[3, 2, 2]);
        let input = Array2::<f64>::zeros((4, 3));
        assert!(matches!(
            conv1d_same(input.view(), &kernel, &Tensor::zeros(&[2]), 1),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn batched_matches_naive_per_sequence() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (width, dilation) in [(3, 1), (3, 2), (20, 1), (4, 3)] {
            let conv = Conv1d::<f64>::new("c", width, 3, 2, dilation, &mut rng).unwrap();
            let seqs: Vec<Array2<f64>> = (0..3)
                .map(|i| Array::from_shape_fn((7, 3), |(t, c)| ((t * 3 + c + i) as f64 * 0.37).sin()))
                .collect();
            let views: Vec<_> = seqs.iter().map(|s| s.view()).collect();
            let (before, after) = conv.reach();
            let (x, layout) = SeqLayout::pack(&views, before.max(after)).unwrap();
            let y = conv.forward(&x, layout).unwrap();
            for (i, seq) in seqs.iter().enumerate() {
                let expected = naive(seq, &conv.kernel.value, conv.bias.value.data(), dilation);
                let got = layout.sequence(&y, i);
                assert!((&got - &expected).iter().all(|d| d.abs() < 1e-12));
            }
        }
    }

    proptest! {
        #[test]
        fn length_is_preserved(t in 1usize..40, width in prop::sample::select(vec![1usize, 3, 20]), dilation in 1usize..=2) {
            let mut rng = ChaCha8Rng::seed_from_u64(t as u64);
            let conv = Conv1d::<f64>::new("c", width, 2, 3, dilation, &mut rng).unwrap();
            let input = Array2::<f64>::ones((t, 2));
            let out = conv1d_same(input.view(), &conv.kernel.value, &conv.bias.value, dilation).unwrap();
            prop_assert_eq!(out.dim(), (t, 3));
        }
    }
}
