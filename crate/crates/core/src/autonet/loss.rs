//! Losses over logits. Each returns the batch-mean loss and its gradient
//! w.r.t. the logits.

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub fn sigmoid<S: Scalar>(z: S) -> S {
    if z >= S::zero() {
        S::one() / (S::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (S::one() + e)
    }
}

/// Mean binary cross-entropy with the sigmoid folded in.
///
/// Per element: `max(z,0) - z*y + log(1 + e^{-|z|})`, averaged over the `K`
/// outputs and then the batch.
pub fn bce_with_logits<S: Scalar>(logits: &Tensor<S>, labels: &Tensor<S>) -> Result<(S, Tensor<S>)> {
    logits.expect_rank(2, "bce_loss logits")?;
    labels.expect_shape(logits.shape())?;
    if let Some(bad) = labels.values().iter().find(|&&y| y != S::zero() && y != S::one()) {
        return Err(Error::invalid(format!("bce_loss labels must be 0 or 1, found {bad}")));
    }
    let n = S::from_usize_lossy(logits.len());
    let mut loss = S::zero();
    let mut grad = Vec::with_capacity(logits.len());
    for (&z, &y) in logits.values().iter().zip(labels.values()) {
        loss += z.max(S::zero()) - z * y + (-z.abs()).exp().ln_1p();
        grad.push((sigmoid(z) - y) / n);
    }
    Ok((loss / n, Tensor::new(logits.shape().to_vec(), grad)?))
}

pub fn softmax_rows<S: Scalar>(logits: &Tensor<S>) -> Result<Tensor<S>> {
    logits.expect_rank(2, "softmax")?;
    let c = logits.shape()[1];
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.values().chunks_exact(c) {
        let m = row.iter().copied().fold(S::neg_infinity(), S::max);
        let e: Vec<S> = row.iter().map(|&z| (z - m).exp()).collect();
        let s: S = e.iter().copied().sum();
        out.extend(e.into_iter().map(|v| v / s));
    }
    Tensor::new(logits.shape().to_vec(), out)
}

/// Mean softmax cross-entropy against integer class targets.
pub fn softmax_ce_loss<S: Scalar>(logits: &Tensor<S>, classes: &[usize]) -> Result<(S, Tensor<S>)> {
    logits.expect_rank(2, "softmax_ce_loss logits")?;
    let (batch, c) = (logits.shape()[0], logits.shape()[1]);
    if classes.len() != batch {
        return Err(Error::invalid(format!(
            "softmax_ce_loss: {} targets for batch of {batch}",
            classes.len()
        )));
    }
    if let Some(&bad) = classes.iter().find(|&&k| k >= c) {
        return Err(Error::invalid(format!(
            "class index {bad} out of range for {c} classes"
        )));
    }
    let nb = S::from_usize_lossy(batch);
    let mut loss = S::zero();
    let mut grad = softmax_rows(logits)?.into_values();
    for (b, (row, &k)) in logits.values().chunks_exact(c).zip(classes).enumerate() {
        let m = row.iter().copied().fold(S::neg_infinity(), S::max);
        let lse = m + row.iter().map(|&z| (z - m).exp()).sum::<S>().ln();
        loss += lse - row[k];
        grad[b * c + k] -= S::one();
    }
    for g in &mut grad {
        *g /= nb;
    }
    Ok((loss / nb, Tensor::new(vec![batch, c], grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), v.to_vec()).unwrap()
    }

    fn logit(p: f64) -> f64 {
        (p / (1.0 - p)).ln()
    }

    #[test]
    fn bce_zero_logits_is_ln2() {
        let (l, _) = bce_with_logits(&t(&[2, 3], &[0.0; 6]), &t(&[2, 3], &[1.0, 0.0, 1.0, 0.0, 0.0, 1.0])).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn bce_closed_form() {
        let z = t(&[1, 2], &[logit(0.8), logit(0.4)]);
        let (l, _) = bce_with_logits(&z, &t(&[1, 2], &[1.0, 0.0])).unwrap();
        let want = -0.5 * (0.8f64.ln() + 0.6f64.ln());
        assert!((l - want).abs() < 1e-12);
        assert!((l - 0.366_984_587_540_100_2).abs() < 1e-12);
    }

    #[test]
    fn bce_saturates_to_zero() {
        let z = t(&[1, 2], &[60.0, -60.0]);
        let (l, _) = bce_with_logits(&z, &t(&[1, 2], &[1.0, 0.0])).unwrap();
        assert!((0.0..1e-25).contains(&l));
    }

    #[test]
    fn bce_rejects_soft_labels() {
        assert!(bce_with_logits(&t(&[1, 1], &[0.0]), &t(&[1, 1], &[0.5])).is_err());
    }

    #[test]
    fn bce_extreme_logits_are_finite() {
        let z = t(&[1, 2], &[1e4, -1e4]);
        let (l, g) = bce_with_logits(&z, &t(&[1, 2], &[0.0, 1.0])).unwrap();
        assert!(l.is_finite() && (l - 1e4).abs() < 1e-6);
        assert!(g.values().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn ce_closed_forms() {
        let (l, _) = softmax_ce_loss(&t(&[1, 4], &[0.3; 4]), &[2]).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-15);
        let (l, _) = softmax_ce_loss(&t(&[1, 2], &[1.0, 0.0]), &[0]).unwrap();
        assert!((l - (1.0 + (-1f64).exp()).ln()).abs() < 1e-15);
        assert!((l - 0.313_261_687_518_222_8).abs() < 1e-12);
        let (l, _) = softmax_ce_loss(&t(&[1, 3], &[80.0, 0.0, 0.0]), &[0]).unwrap();
        assert!(l < 1e-30);
    }

    #[test]
    fn ce_rejects_bad_targets() {
        assert!(softmax_ce_loss(&t(&[1, 2], &[0.0, 0.0]), &[2]).is_err());
        assert!(softmax_ce_loss(&t(&[1, 2], &[0.0, 0.0]), &[0, 1]).is_err());
    }

    #[test]
    fn sigmoid_is_strictly_inside_unit_interval_for_moderate_logits() {
        for z in [-30.0, -1.0, 0.0, 1.0, 30.0] {
            let p = sigmoid(z);
            assert!(p > 0.0 && p < 1.0);
        }
    }
}
