//! Objectives. Goodness models push a sample's goodness above `theta` when
//! the label is right and below when it is wrong, through a softplus:
//! L = softplus(-s * (g - theta)), s = +1 positive, -1 negative.
//! The global variant applies the same form to the layer-summed goodness
//! against a layer-summed threshold.

use crate::error::{Error, Result};
use crate::mat::Mat;

/// ln(1 + e^x), stable on both tails.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Logistic sigmoid (shared with the forward pass, re-stated here so the
/// loss file reads standalone).
#[inline]
fn sigma(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
fn sign(positive: bool) -> f64 {
    if positive {
        1.0
    } else {
        -1.0
    }
}

/// Loss for one goodness value against one threshold.
pub fn goodness_loss(g: f64, positive: bool, theta: f64) -> f64 {
    softplus(-sign(positive) * (g - theta))
}

/// dL/dg for `goodness_loss`.
pub fn goodness_loss_grad(g: f64, positive: bool, theta: f64) -> f64 {
    let s = sign(positive);
    -s * sigma(-s * (g - theta))
}

/// Cross-entropy of softmaxed logits against labels, summed over rows, plus
/// d(sum loss)/dlogits. Callers divide by the full batch size.
pub fn softmax_ce_sum(logits: &Mat, labels: &[u8]) -> Result<(f64, Mat)> {
    if logits.rows() != labels.len() {
        return Err(Error::Consistency(format!(
            "{} logit rows, {} labels",
            logits.rows(),
            labels.len()
        )));
    }
    let classes = logits.cols();
    let mut dlogits = Mat::zeros(logits.rows(), classes);
    let mut loss_sum = 0.0;
    for i in 0..logits.rows() {
        let y = labels[i] as usize;
        if y >= classes {
            return Err(Error::Domain(format!("label {y} outside {classes} classes")));
        }
        let row = logits.row(i);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|&z| (z - m).exp()).sum::<f64>().ln();
        loss_sum += lse - row[y];
        let drow = dlogits.row_mut(i);
        for j in 0..classes {
            drow[j] = (row[j] - lse).exp();
        }
        drow[y] -= 1.0;
    }
    Ok((loss_sum, dlogits))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softplus_stable_and_correct() {
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((softplus(1.0) - (1.0 + 1.0_f64.exp()).ln()).abs() < 1e-12);
        assert!((softplus(-3.0) - (1.0 + (-3.0_f64).exp()).ln()).abs() < 1e-12);
        // tails: no overflow, right asymptotes
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0);
        assert!(softplus(-1000.0) < 1e-300);
        assert!(softplus(-50.0) > 0.0);
    }

    #[test]
    fn goodness_loss_shape() {
        let theta = 0.5;
        // at threshold both polarities pay ln 2
        assert!((goodness_loss(0.5, true, theta) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((goodness_loss(0.5, false, theta) - std::f64::consts::LN_2).abs() < 1e-15);
        // far above: positives cheap, negatives dear
        assert!(goodness_loss(0.99, true, theta) < 0.5);
        assert!(goodness_loss(0.99, false, theta) > 0.9);
        // gradients point the right way
        assert!(goodness_loss_grad(0.7, true, theta) < 0.0);
        assert!(goodness_loss_grad(0.7, false, theta) > 0.0);
    }

    #[test]
    fn goodness_grad_matches_finite_difference() {
        let h = 1e-6;
        for g in [0.1, 0.5, 0.9] {
            for positive in [true, false] {
                let fd = (goodness_loss(g + h, positive, 0.5) - goodness_loss(g - h, positive, 0.5)) / (2.0 * h);
                let an = goodness_loss_grad(g, positive, 0.5);
                assert!((fd - an).abs() < 1e-9, "g={g} pos={positive}");
            }
        }
    }

    #[test]
    fn ce_hand_case_and_grad_rows() {
        // two logits, uniform: loss = ln 2, grad = softmax - onehot
        let logits = Mat::from_vec(1, 2, vec![0.0, 0.0]);
        let (loss, d) = softmax_ce_sum(&logits, &[1]).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((d.get(0, 0) - 0.5).abs() < 1e-15);
        assert!((d.get(0, 1) + 0.5).abs() < 1e-15);

        // rows of dlogits sum to zero; shift invariance
        let logits = Mat::from_vec(2, 3, vec![1.0, -2.0, 0.3, 4.0, 4.0, 4.0]);
        let (l1, d) = softmax_ce_sum(&logits, &[0, 2]).unwrap();
        for i in 0..2 {
            let s: f64 = d.row(i).iter().sum();
            assert!(s.abs() < 1e-12);
        }
        let mut shifted = logits.clone();
        for v in shifted.row_mut(0) {
            *v += 100.0;
        }
        let (l2, _) = softmax_ce_sum(&shifted, &[0, 2]).unwrap();
        assert!((l1 - l2).abs() < 1e-9);
    }

    #[test]
    fn ce_errors() {
        let logits = Mat::zeros(2, 3);
        assert!(softmax_ce_sum(&logits, &[0]).is_err());
        assert!(softmax_ce_sum(&logits, &[0, 3]).is_err());
    }
}
