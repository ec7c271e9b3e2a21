//! Softmax classifier output and categorical cross-entropy.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Row-wise softmax of N×K logits, computed after subtracting each row's max.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    let (n, k) = logits.dims2()?;
    let mut out = Vec::with_capacity(n * k);
    for row in logits.data().chunks(k) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|&z| (z - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        out.extend(exps.iter().map(|e| e / total));
    }
    let probs = Tensor::new(vec![n, k], out)?;
    probs.ensure_finite("softmax")?;
    Ok(probs)
}

/// Vector-Jacobian product of softmax: `p ⊙ (g − ⟨g, p⟩)` per row.
pub fn softmax_backward(probs: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    let (_, k) = probs.dims2()?;
    if grad_out.shape() != probs.shape() {
        return Err(Error::TapeMismatch(format!(
            "softmax grad shape {:?}, forward was {:?}",
            grad_out.shape(),
            probs.shape()
        )));
    }
    let mut out = Vec::with_capacity(probs.len());
    for (p, g) in probs.data().chunks(k).zip(grad_out.data().chunks(k)) {
        let inner: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
        out.extend(p.iter().zip(g).map(|(pi, gi)| pi * (gi - inner)));
    }
    Tensor::new(probs.shape().to_vec(), out)
}

fn check_labels(labels: &[usize], n: usize, k: usize) -> Result<()> {
    if labels.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for {n} rows",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::LabelOutOfRange {
            label: bad,
            classes: k,
        });
    }
    Ok(())
}

/// Mean negative log-likelihood `−(1/N) Σ ln p[y]` of N×K probabilities.
pub fn cross_entropy(probs: &Tensor, labels: &[usize]) -> Result<f64> {
    let (n, k) = probs.dims2()?;
    check_labels(labels, n, k)?;
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    let total: f64 = probs
        .data()
        .chunks(k)
        .zip(labels)
        .map(|(row, &y)| -row[y].max(f64::MIN_POSITIVE).ln())
        .sum();
    Ok(total / n as f64)
}

/// Loss, probabilities and `∂loss/∂logits = (p − onehot(y)) / N`.
#[derive(Debug, Clone)]
pub struct SoftmaxLoss {
    pub loss: f64,
    pub probs: Tensor,
    pub grad_logits: Tensor,
}

/// Fused softmax + cross-entropy on logits; the loss uses log-sum-exp so it
/// stays finite when a probability underflows.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<SoftmaxLoss> {
    let (n, k) = logits.dims2()?;
    check_labels(labels, n, k)?;
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    let probs = softmax(logits)?;
    let mut loss = 0.0;
    for (row, &y) in logits.data().chunks(k).zip(labels) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
        loss += lse - row[y];
    }
    loss /= n as f64;
    let inv_n = 1.0 / n as f64;
    let mut grad = probs.data().to_vec();
    for (row, &y) in grad.chunks_mut(k).zip(labels) {
        row[y] -= 1.0;
        row.iter_mut().for_each(|v| *v *= inv_n);
    }
    Ok(SoftmaxLoss {
        loss,
        probs,
        grad_logits: Tensor::new(vec![n, k], grad)?,
    })
}
