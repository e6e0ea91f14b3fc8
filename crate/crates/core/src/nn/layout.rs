use ndarray::{s, Array2, ArrayView2, ArrayViewMut2};

use super::tensor::Real;
use crate::error::{Error, Result};

/// Row layout of a batch of equal-length sequences stacked in one matrix.
///
/// Every sequence is preceded and followed by `gap` zero rows, so a shifted
/// matrix product never reads across sequence boundaries as long as the
/// shift is at most `gap`. Layers keep the gap rows at zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeqLayout {
    pub n_seq: usize,
    pub len: usize,
    pub gap: usize,
}

impl SeqLayout {
    pub fn new(n_seq: usize, len: usize, gap: usize) -> Self {
        SeqLayout { n_seq, len, gap }
    }

    pub fn rows(&self) -> usize {
        self.gap + self.n_seq * (self.len + self.gap)
    }

    pub fn stride(&self) -> usize {
        self.len + self.gap
    }

    pub fn row(&self, seq: usize, t: usize) -> usize {
        self.gap + seq * self.stride() + t
    }

    pub fn is_empty(&self) -> bool {
        self.n_seq == 0 || self.len == 0
    }

    /// Rows of timestep `t` across all sequences.
    pub fn step<'a, F>(&self, m: &'a Array2<F>, t: usize) -> ArrayView2<'a, F> {
        let start = self.row(0, t);
        let end = self.row(self.n_seq - 1, t) + 1;
        m.slice(s![start..end;self.stride(), ..])
    }

    pub fn step_mut<'a, F>(&self, m: &'a mut Array2<F>, t: usize) -> ArrayViewMut2<'a, F> {
        let start = self.row(0, t);
        let end = self.row(self.n_seq - 1, t) + 1;
        let stride = self.stride();
        m.slice_mut(s![start..end;stride, ..])
    }

    pub fn zero_gaps<F: Real>(&self, m: &mut Array2<F>) {
        let stride = self.stride();
        for seq in 0..=self.n_seq {
            let end = seq * stride + self.gap;
            m.slice_mut(s![end - self.gap..end, ..]).fill(F::zero());
        }
    }

    pub fn check_rows<F>(&self, m: &Array2<F>, what: &str) -> Result<()> {
        if m.nrows() != self.rows() {
            return Err(Error::Shape(format!(
                "{what}: {} rows, layout needs {}",
                m.nrows(),
                self.rows()
            )));
        }
        Ok(())
    }

    /// Stacks equal-length sequences into this layout.
    pub fn pack<F: Real>(seqs: &[ArrayView2<'_, F>], gap: usize) -> Result<(Array2<F>, SeqLayout)> {
        let len = seqs.first().map_or(0, |s| s.nrows());
        let cols = seqs.first().map_or(0, |s| s.ncols());
        if seqs.iter().any(|s| s.nrows() != len || s.ncols() != cols) {
            return Err(Error::Shape("sequences in a batch must share length and width".into()));
        }
        let layout = SeqLayout::new(seqs.len(), len, gap);
        let mut m = Array2::zeros((layout.rows(), cols));
        for (i, seq) in seqs.iter().enumerate() {
            let start = layout.row(i, 0);
            m.slice_mut(s![start..start + len, ..]).assign(seq);
        }
        Ok((m, layout))
    }

    /// Rows of sequence `seq`.
    pub fn sequence<'a, F>(&self, m: &'a Array2<F>, seq: usize) -> ArrayView2<'a, F> {
        let start = self.row(seq, 0);
        m.slice(s![start..start + self.len, ..])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn pack_places_sequences_between_gaps() {
        let a = array![[1.0f64], [2.0]];
        let b = array![[3.0f64], [4.0]];
        let (m, layout) = SeqLayout::pack(&[a.view(), b.view()], 1).unwrap();
        assert_eq!(layout.rows(), 7);
        assert_eq!(m.column(0).to_vec(), [0.0, 1.0, 2.0, 0.0, 3.0, 4.0, 0.0]);
        assert_eq!(layout.step(&m, 1).column(0).to_vec(), [2.0, 4.0]);
        assert_eq!(layout.sequence(&m, 1), b);
    }

    #[test]
    fn zero_gaps_clears_only_gaps() {
        let layout = SeqLayout::new(2, 2, 2);
        let mut m = Array2::<f64>::ones((layout.rows(), 1));
        layout.zero_gaps(&mut m);
        assert_eq!(m.column(0).to_vec(), [0., 0., 1., 1., 0., 0., 1., 1., 0., 0.]);
    }
}
