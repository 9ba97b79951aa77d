//! Softmax cross-entropy.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::Scalar;

/// `-log softmax(logits)[target]`, stabilized by subtracting the max logit.
pub fn cross_entropy<T: Scalar>(logits: &[T], target: usize) -> Result<T> {
    if target >= logits.len() {
        return Err(Error::ClassIndex(target));
    }
    Ok(log_sum_exp(logits) - logits[target])
}

fn log_sum_exp<T: Scalar>(logits: &[T]) -> T {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let sum = logits.iter().fold(T::zero(), |acc, v| acc + (*v - max).exp());
    max + sum.ln()
}

/// Mean cross-entropy over a `rows × classes` batch together with its
/// gradient w.r.t. the logits, `(softmax - onehot) / rows`.
pub fn batch_cross_entropy<T: Scalar>(logits: &[T], targets: &[usize], classes: usize) -> Result<(T, Vec<T>)> {
    let rows = targets.len();
    assert_eq!(logits.len(), rows * classes);
    let scale = T::one() / T::lit(rows.max(1) as f64);
    let mut total = T::zero();
    let mut grad = Vec::with_capacity(logits.len());
    for (row, &target) in logits.chunks_exact(classes).zip(targets) {
        if target >= classes {
            return Err(Error::ClassIndex(target));
        }
        let lse = log_sum_exp(row);
        total = total + (lse - row[target]);
        for (j, v) in row.iter().enumerate() {
            let p = (*v - lse).exp();
            let onehot = if j == target { T::one() } else { T::zero() };
            grad.push((p - onehot) * scale);
        }
    }
    Ok((total * scale, grad))
}
