//! LSTM layers with hand-written backpropagation through time.
//!
//! Gate columns are ordered input, forget, candidate, output. Every sequence
//! in a batch shares one length, so a timestep is a strided row view of the
//! batch matrix and the recurrent product is one matrix multiply per step.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView2, Axis};
use rand::Rng;

use super::activation::sigmoid;
use super::init::glorot_uniform;
use super::layout::SeqLayout;
use super::tensor::{Parameter, Real, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Lstm<F> {
    /// `in_dim x 4H`
    pub w_input: Parameter<F>,
    /// `H x 4H`
    pub w_recurrent: Parameter<F>,
    /// `4H`
    pub bias: Parameter<F>,
    pub reverse: bool,
}

/// Activations kept from the forward pass.
#[derive(Debug, Clone)]
pub struct LstmCache<F> {
    /// Activated gates per row, `rows x 4H`.
    gates: Array2<F>,
    cells: Array2<F>,
    pub hidden: Array2<F>,
}

impl<F: Real> Lstm<F> {
    pub fn new<R: Rng + ?Sized>(name: &str, in_dim: usize, hidden: usize, reverse: bool, rng: &mut R) -> Self {
        let w_input = glorot_uniform(&[in_dim, 4 * hidden], in_dim, 4 * hidden, rng);
        let w_recurrent = glorot_uniform(&[hidden, 4 * hidden], hidden, 4 * hidden, rng);
        let mut bias = Tensor::zeros(&[4 * hidden]);
        for v in &mut bias.data_mut()[hidden..2 * hidden] {
            *v = F::one();
        }
        Self::from_tensors(name, w_input, w_recurrent, bias, reverse).expect("consistent shapes")
    }

    pub fn from_tensors(
        name: &str,
        w_input: Tensor<F>,
        w_recurrent: Tensor<F>,
        bias: Tensor<F>,
        reverse: bool,
    ) -> Result<Self> {
        let &[h, gates] = w_recurrent.shape() else {
            return Err(Error::Shape("recurrent kernel must be rank 2".into()));
        };
        let ok = gates == 4 * h
            && w_input.shape().len() == 2
            && w_input.shape()[1] == gates
            && bias.shape() == [gates];
        if !ok {
            return Err(Error::Shape(format!(
                "LSTM shapes disagree: input {:?}, recurrent {:?}, bias {:?}",
                w_input.shape(),
                w_recurrent.shape(),
                bias.shape()
            )));
        }
        Ok(Lstm {
            w_input: Parameter::new(format!("{name}.w_input"), w_input),
            w_recurrent: Parameter::new(format!("{name}.w_recurrent"), w_recurrent),
            bias: Parameter::new(format!("{name}.bias"), bias),
            reverse,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.w_input.value.shape()[0]
    }

    pub fn hidden(&self) -> usize {
        self.w_recurrent.value.shape()[0]
    }

    fn time(&self, layout: SeqLayout, step: usize) -> usize {
        if self.reverse {
            layout.len - 1 - step
        } else {
            step
        }
    }

    pub fn forward(&self, x: ArrayView2<'_, F>, layout: SeqLayout) -> Result<LstmCache<F>> {
        if x.nrows() != layout.rows() || x.ncols() != self.in_dim() {
            return Err(Error::Shape(format!(
                "LSTM expects {} x {}, got {:?}",
                layout.rows(),
                self.in_dim(),
                x.dim()
            )));
        }
        let h = self.hidden();
        let rows = layout.rows();
        let mut gates = Array2::zeros((rows, 4 * h));
        gates += &self.bias.value.matrix();
        general_mat_mul(F::one(), &x, &self.w_input.value.matrix(), F::one(), &mut gates);
        let mut cells = Array2::zeros((rows, h));
        let mut hidden = Array2::zeros((rows, h));
        if layout.is_empty() {
            return Ok(LstmCache { gates, cells, hidden });
        }
        let w_rec = self.w_recurrent.value.matrix();
        let mut pre = Array2::zeros((layout.n_seq, 4 * h));
        for step in 0..layout.len {
            let t = self.time(layout, step);
            pre.assign(&layout.step(&gates, t));
            if step > 0 {
                let prev = self.time(layout, step - 1);
                general_mat_mul(F::one(), &layout.step(&hidden, prev), &w_rec, F::one(), &mut pre);
            }
            for b in 0..layout.n_seq {
                let r = layout.row(b, t);
                let c_prev: Option<Vec<F>> = (step > 0).then(|| {
                    let rp = layout.row(b, self.time(layout, step - 1));
                    cells.row(rp).to_vec()
                });
                let p = pre.row(b);
                let mut g_row = gates.row_mut(r);
                let g = g_row.as_slice_mut().expect("standard layout");
                let p = p.as_slice().expect("standard layout");
                let mut c_row = cells.row_mut(r);
                let c = c_row.as_slice_mut().expect("standard layout");
                let mut h_row = hidden.row_mut(r);
                let hh = h_row.as_slice_mut().expect("standard layout");
                for j in 0..h {
                    let i_g = sigmoid(p[j]);
                    let f_g = sigmoid(p[h + j]);
                    let c_g = p[2 * h + j].tanh();
                    let o_g = sigmoid(p[3 * h + j]);
                    let cp = c_prev.as_ref().map_or(F::zero(), |v| v[j]);
                    let cell = f_g * cp + i_g * c_g;
                    c[j] = cell;
                    hh[j] = o_g * cell.tanh();
                    g[j] = i_g;
                    g[h + j] = f_g;
                    g[2 * h + j] = c_g;
                    g[3 * h + j] = o_g;
                }
            }
        }
        layout.zero_gaps(&mut hidden);
        Ok(LstmCache { gates, cells, hidden })
    }

    /// Backpropagation through time. Accumulates parameter gradients and
    /// returns the input gradient when `input_grad` is set.
    pub fn backward(
        &mut self,
        x: ArrayView2<'_, F>,
        cache: &LstmCache<F>,
        dy: ArrayView2<'_, F>,
        layout: SeqLayout,
        input_grad: bool,
    ) -> Option<Array2<F>> {
        let h = self.hidden();
        let rows = layout.rows();
        let mut dz = Array2::<F>::zeros((rows, 4 * h));
        if !layout.is_empty() {
            let mut dh_next = Array2::<F>::zeros((layout.n_seq, h));
            let mut dc_next = Array2::<F>::zeros((layout.n_seq, h));
            let one = F::one();
            for step in (0..layout.len).rev() {
                let t = self.time(layout, step);
                let prev = (step > 0).then(|| self.time(layout, step - 1));
                for b in 0..layout.n_seq {
                    let r = layout.row(b, t);
                    let g = cache.gates.row(r);
                    let g = g.as_slice().expect("standard layout");
                    let c = cache.cells.row(r);
                    let c = c.as_slice().expect("standard layout");
                    let c_prev = prev.map(|tp| cache.cells.row(layout.row(b, tp)));
                    let dy_row = dy.row(r);
                    let mut dz_row = dz.row_mut(r);
                    let dzr = dz_row.as_slice_mut().expect("standard layout");
                    let mut dh_row = dh_next.row_mut(b);
                    let mut dc_row = dc_next.row_mut(b);
                    for j in 0..h {
                        let (i_g, f_g, c_g, o_g) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
                        let tc = c[j].tanh();
                        let dh = dy_row[j] + dh_row[j];
                        let dc = dh * o_g * (one - tc * tc) + dc_row[j];
                        let cp = c_prev.as_ref().map_or(F::zero(), |v| v[j]);
                        dzr[j] = dc * c_g * i_g * (one - i_g);
                        dzr[h + j] = dc * cp * f_g * (one - f_g);
                        dzr[2 * h + j] = dc * i_g * (one - c_g * c_g);
                        dzr[3 * h + j] = dh * tc * o_g * (one - o_g);
                        dc_row[j] = dc * f_g;
                        dh_row[j] = F::zero();
                    }
                }
                if let Some(tp) = prev {
                    let dstep = layout.step(&dz, t);
                    general_mat_mul(
                        one,
                        &layout.step(&cache.hidden, tp).t(),
                        &dstep,
                        one,
                        &mut self.w_recurrent.grad.matrix_mut(),
                    );
                    general_mat_mul(one, &dstep, &self.w_recurrent.value.matrix().t(), F::zero(), &mut dh_next);
                }
            }
        }
        layout.zero_gaps(&mut dz);
        general_mat_mul(F::one(), &x.t(), &dz, F::one(), &mut self.w_input.grad.matrix_mut());
        for (gb, d) in self.bias.grad.data_mut().iter_mut().zip(dz.sum_axis(Axis(0))) {
            *gb += d;
        }
        input_grad.then(|| {
            let mut dx = dz.dot(&self.w_input.value.matrix().t());
            layout.zero_gaps(&mut dx);
            dx
        })
    }
}

/// Forward and reverse LSTMs whose outputs are concatenated per timestep.
#[derive(Debug, Clone)]
pub struct BiLstm<F> {
    pub forward: Lstm<F>,
    pub backward: Lstm<F>,
}

#[derive(Debug, Clone)]
pub struct BiLstmCache<F> {
    forward: LstmCache<F>,
    backward: LstmCache<F>,
}

impl<F: Real> BiLstm<F> {
    pub fn new<R: Rng + ?Sized>(name: &str, in_dim: usize, hidden: usize, rng: &mut R) -> Self {
        BiLstm {
            forward: Lstm::new(&format!("{name}.fwd"), in_dim, hidden, false, rng),
            backward: Lstm::new(&format!("{name}.bwd"), in_dim, hidden, true, rng),
        }
    }

    pub fn from_directions(forward: Lstm<F>, backward: Lstm<F>) -> Result<Self> {
        if forward.hidden() != backward.hidden() || forward.in_dim() != backward.in_dim() {
            return Err(Error::Shape(format!(
                "BLSTM directions disagree: forward {}->{}, backward {}->{}",
                forward.in_dim(),
                forward.hidden(),
                backward.in_dim(),
                backward.hidden()
            )));
        }
        Ok(BiLstm { forward, backward })
    }

    pub fn hidden(&self) -> usize {
        self.forward.hidden()
    }

    /// Output is `rows x 2H`: forward states, then backward states.
    pub fn forward(&self, x: ArrayView2<'_, F>, layout: SeqLayout) -> Result<(Array2<F>, BiLstmCache<F>)> {
        let fwd = self.forward.forward(x, layout)?;
        let bwd = self.backward.forward(x, layout)?;
        let h = self.hidden();
        let mut out = Array2::zeros((layout.rows(), 2 * h));
        out.slice_mut(s![.., ..h]).assign(&fwd.hidden);
        out.slice_mut(s![.., h..]).assign(&bwd.hidden);
        Ok((out, BiLstmCache { forward: fwd, backward: bwd }))
    }

    pub fn backward(
        &mut self,
        x: ArrayView2<'_, F>,
        cache: &BiLstmCache<F>,
        dy: &Array2<F>,
        layout: SeqLayout,
        input_grad: bool,
    ) -> Option<Array2<F>> {
        let h = self.hidden();
        let dx_f = self
            .forward
            .backward(x, &cache.forward, dy.slice(s![.., ..h]), layout, input_grad);
        let dx_b = self
            .backward
            .backward(x, &cache.backward, dy.slice(s![.., h..]), layout, input_grad);
        match (dx_f, dx_b) {
            (Some(a), Some(b)) => Some(a + b),
            _ => None,
        }
    }
}

/// Runs one LSTM over a single `T x C` sequence and returns `T x H` states.
pub fn lstm_layer<F: Real>(input: ArrayView2<'_, F>, lstm: &Lstm<F>) -> Result<Array2<F>> {
    let (x, layout) = SeqLayout::pack(&[input], 0)?;
    Ok(layout.sequence(&lstm.forward(x.view(), layout)?.hidden, 0).to_owned())
}

/// Bidirectional pass over a single sequence, `T x 2H`.
pub fn bilstm<F: Real>(input: ArrayView2<'_, F>, layer: &BiLstm<F>) -> Result<Array2<F>> {
    let (x, layout) = SeqLayout::pack(&[input], 0)?;
    let (out, _) = layer.forward(x.view(), layout)?;
    Ok(layout.sequence(&out, 0).to_owned())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Unbatched recurrence written directly from the cell equations.
    fn reference(input: &Array2<f64>, l: &Lstm<f64>) -> Array2<f64> {
        let h = l.hidden();
        let t_len = input.nrows();
        let wx = l.w_input.value.matrix();
        let wh = l.w_recurrent.value.matrix();
        let b = l.bias.value.data();
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let mut out = Array2::zeros((t_len, h));
        let mut hs = vec![0.0; h];
        let mut cs = vec![0.0; h];
        let order: Vec<usize> = if l.reverse { (0..t_len).rev().collect() } else { (0..t_len).collect() };
        for t in order {
            let mut z = vec![0.0; 4 * h];
            for (g, zg) in z.iter_mut().enumerate() {
                *zg = b[g]
                    + (0..input.ncols()).map(|c| input[[t, c]] * wx[[c, g]]).sum::<f64>()
                    + (0..h).map(|k| hs[k] * wh[[k, g]]).sum::<f64>();
            }
            for j in 0..h {
                let (i, f, g, o) = (sig(z[j]), sig(z[h + j]), z[2 * h + j].tanh(), sig(z[3 * h + j]));
                cs[j] = f * cs[j] + i * g;
                hs[j] = o * cs[j].tanh();
                out[[t, j]] = hs[j];
            }
        }
        out
    }

    fn random_input(t: usize, c: usize, seed: u64) -> Array2<f64> {
        Array::from_shape_fn((t, c), |(i, j)| ((i * 7 + j * 3) as f64 * 0.61 + seed as f64).sin())
    }

    #[test]
    fn zero_parameters_give_zero_states() {
        let l = Lstm::<f64>::from_tensors(
            "z",
            Tensor::zeros(&[3, 8]),
            Tensor::zeros(&[2, 8]),
            Tensor::zeros(&[8]),
            false,
        )
        .unwrap();
        let out = lstm_layer(random_input(5, 3, 1).view(), &l).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
        let bi = BiLstm::from_directions(l.clone(), Lstm { reverse: true, ..l }).unwrap();
        let out = bilstm(random_input(5, 3, 1).view(), &bi).unwrap();
        assert_eq!(out.dim(), (5, 4));
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_step_matches_cell_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let l = Lstm::<f64>::new("l", 4, 3, false, &mut rng);
        let x = random_input(1, 4, 2);
        let out = lstm_layer(x.view(), &l).unwrap();
        let expected = reference(&x, &l);
        assert!((&out - &expected).iter().all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn matches_reference_both_directions() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for reverse in [false, true] {
            let l = Lstm::<f64>::new("l", 3, 5, reverse, &mut rng);
            let x = random_input(9, 3, 5);
            let out = lstm_layer(x.view(), &l).unwrap();
            assert!((&out - &reference(&x, &l)).iter().all(|d| d.abs() < 1e-12));
        }
    }

    #[test]
    fn reverse_of_palindrome_is_reversed_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let fwd = Lstm::<f64>::new("l", 2, 3, false, &mut rng);
        let rev = Lstm { reverse: true, ..fwd.clone() };
        let half = random_input(3, 2, 9);
        let mut x = Array2::zeros((6, 2));
        for t in 0..3 {
            x.row_mut(t).assign(&half.row(t));
            x.row_mut(5 - t).assign(&half.row(t));
        }
        let a = lstm_layer(x.view(), &fwd).unwrap();
        let b = lstm_layer(x.view(), &rev).unwrap();
        for t in 0..6 {
            assert!((&a.row(t) - &b.row(5 - t)).iter().all(|d| d.abs() < 1e-12));
        }
    }

    #[test]
    fn bilstm_concatenates_directions() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let bi = BiLstm::<f64>::new("b", 3, 4, &mut rng);
        let x = random_input(7, 3, 1);
        let out = bilstm(x.view(), &bi).unwrap();
        assert_eq!(out.slice(s![.., ..4]), lstm_layer(x.view(), &bi.forward).unwrap());
        let expected_b = reference(&x, &bi.backward);
        assert!((&out.slice(s![.., 4..]) - &expected_b).iter().all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn batched_equals_single_sequence() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let l = Lstm::<f64>::new("l", 3, 4, true, &mut rng);
        let seqs: Vec<Array2<f64>> = (0..3).map(|s| random_input(6, 3, s)).collect();
        let views: Vec<_> = seqs.iter().map(|s| s.view()).collect();
        let (x, layout) = SeqLayout::pack(&views, 2).unwrap();
        let cache = l.forward(x.view(), layout).unwrap();
        for (i, s) in seqs.iter().enumerate() {
            let single = lstm_layer(s.view(), &l).unwrap();
            assert!((&layout.sequence(&cache.hidden, i) - &single).iter().all(|d| d.abs() < 1e-12));
        }
    }

    #[test]
    fn shape_mismatches_are_errors() {
        assert!(Lstm::<f64>::from_tensors("l", Tensor::zeros(&[3, 8]), Tensor::zeros(&[2, 4]), Tensor::zeros(&[8]), false).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = Lstm::<f64>::new("a", 3, 2, false, &mut rng);
        let b = Lstm::<f64>::new("b", 3, 4, true, &mut rng);
        assert!(BiLstm::from_directions(a.clone(), b).is_err());
        assert!(lstm_layer(Array2::<f64>::zeros((4, 5)).view(), &a).is_err());
    }
}
