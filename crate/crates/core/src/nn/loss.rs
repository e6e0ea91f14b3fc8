use ndarray::{Array2, ArrayView2};

use super::tensor::Real;
use crate::error::{Error, Result};

/// Mean negative log-likelihood over unmasked rows, with its gradient with
/// respect to the softmax logits: `w_y * (p - onehot(y)) / M` on unmasked
/// rows and zero elsewhere. `class_weights` scales each row by the weight of
/// its true class.
pub fn masked_cross_entropy<F: Real>(
    probs: ArrayView2<'_, F>,
    labels: &[usize],
    mask: &[bool],
    class_weights: Option<&[f64]>,
) -> Result<(f64, Array2<F>)> {
    let (rows, classes) = probs.dim();
    if labels.len() != rows || mask.len() != rows {
        return Err(Error::Shape(format!(
            "{rows} probability rows, {} labels, {} mask flags",
            labels.len(),
            mask.len()
        )));
    }
    let m = mask.iter().filter(|&&v| v).count();
    if m == 0 {
        return Err(Error::DegenerateBatch);
    }
    let mut grad = Array2::zeros((rows, classes));
    let mut loss = 0.0;
    let scale = 1.0 / m as f64;
    for (r, (&label, &on)) in labels.iter().zip(mask).enumerate() {
        if !on {
            continue;
        }
        if label >= classes {
            return Err(Error::Value(format!("label {label} out of range for {classes} classes")));
        }
        let w = class_weights.map_or(1.0, |cw| cw[label]);
        let p = probs[[r, label]].as_f64().max(f64::MIN_POSITIVE);
        loss -= w * p.ln();
        let ws = F::cast(w * scale);
        for c in 0..classes {
            grad[[r, c]] = probs[[r, c]] * ws;
        }
        grad[[r, label]] -= ws;
    }
    Ok((loss * scale, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn perfect_prediction_has_zero_loss() {
        let probs = array![[1.0f64, 0.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]];
        let (loss, _) = masked_cross_entropy(probs.view(), &[0, 2], &[true, true], None).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn uniform_prediction_costs_ln4() {
        let probs = Array2::from_elem((3, 4), 0.25f64);
        let (loss, grad) = masked_cross_entropy(probs.view(), &[0, 3, 1], &[true, true, true], None).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-12);
        assert!((loss - 1.3863).abs() < 1e-4);
        assert!((grad[[1, 3]] - (0.25 - 1.0) / 3.0).abs() < 1e-12);
    }

    #[test]
    fn masked_rows_have_zero_gradient() {
        let probs = Array2::from_elem((2, 4), 0.25f64);
        let (loss, grad) = masked_cross_entropy(probs.view(), &[1, 2], &[true, false], None).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-12);
        assert!(grad.row(1).iter().all(|&g| g == 0.0));
        assert!((grad[[0, 1]] + 0.75).abs() < 1e-12);
    }

    #[test]
    fn fully_masked_batch_is_rejected() {
        let probs = Array2::from_elem((2, 4), 0.25f64);
        assert!(matches!(
            masked_cross_entropy(probs.view(), &[0, 0], &[false, false], None),
            Err(Error::DegenerateBatch)
        ));
    }

    #[test]
    fn class_weights_scale_rows() {
        let probs = Array2::from_elem((2, 4), 0.25f64);
        let weights = [1.0, 1.0, 3.0, 1.0];
        let (loss, grad) = masked_cross_entropy(probs.view(), &[0, 2], &[true, true], Some(&weights)).unwrap();
        assert!((loss - 2.0 * 4f64.ln()).abs() < 1e-12);
        assert!((grad[[1, 2]] - 3.0 * (0.25 - 1.0) / 2.0).abs() < 1e-12);
    }
}
