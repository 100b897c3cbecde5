use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Mean softmax cross-entropy over the batch and its gradient with respect to
/// the logits. Stabilized by subtracting each row's maximum.
pub fn loss_and_grad(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (b, c) = match logits.shape() {
        [b, c] => (*b, *c),
        s => return Err(Error::invalid(format!("logits must be (batch, classes), got {s:?}"))),
    };
    if labels.len() != b {
        return Err(Error::invalid(format!("{} labels for a batch of {b}", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
        return Err(Error::invalid(format!("label {bad} out of range for {c} classes")));
    }
    let x = logits.data();
    let mut grad = vec![0.0; b * c];
    let mut loss = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let row = &x[i * c..(i + 1) * c];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_z = max + sum.ln();
        loss += log_z - row[y];
        for j in 0..c {
            let p = (row[j] - log_z).exp();
            grad[i * c + j] = (p - if j == y { 1.0 } else { 0.0 }) / b as f64;
        }
    }
    Ok((loss / b as f64, Tensor::new(&[b, c], grad)?))
}

/// Index of the largest logit per row.
pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    let c = logits.shape().get(1).copied().unwrap_or(1);
    logits
        .data()
        .chunks(c)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
                .0
        })
        .collect()
}
