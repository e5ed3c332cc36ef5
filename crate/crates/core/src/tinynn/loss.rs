use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Output of a softmax cross-entropy evaluation on one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct CrossEntropy {
    pub loss: f32,
    /// Maximum softmax probability.
    pub confidence: f32,
    pub predicted: usize,
    /// d loss / d logits.
    pub grad: Vec<f32>,
}

/// Numerically stable softmax cross-entropy (max-subtracted, f64 accumulation).
pub fn softmax_cross_entropy(logits: &[f32], label: usize) -> Result<CrossEntropy> {
    if logits.is_empty() {
        return Err(Error::invalid("softmax_cross_entropy on empty logits"));
    }
    if label >= logits.len() {
        return Err(Error::invalid(format!(
            "label {label} outside [0, {})",
            logits.len()
        )));
    }
    let (predicted, max) = logits
        .iter()
        .enumerate()
        .fold((0, f32::NEG_INFINITY), |(bi, bv), (i, &v)| {
            if v > bv {
                (i, v)
            } else {
                (bi, bv)
            }
        });
    let shifted: Vec<f64> = logits.iter().map(|&v| (v - max) as f64).collect();
    // sum over non-argmax terms; the argmax contributes exp(0) = 1
    let rest: f64 = shifted
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != predicted)
        .map(|(_, s)| s.exp())
        .sum();
    let log_z = rest.ln_1p();
    let loss = (log_z - shifted[label]).max(0.0);
    let z = 1.0 + rest;
    let grad = shifted
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let p = s.exp() / z;
            (if i == label { p - 1.0 } else { p }) as f32
        })
        .collect();
    Ok(CrossEntropy {
        loss: loss as f32,
        confidence: (1.0 / z) as f32,
        predicted,
        grad,
    })
}

/// Mean cross-entropy over a `[N, K]` batch; returns the loss, the number of
/// correct predictions and the gradient w.r.t. the logits.
pub fn batch_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f32, usize, Tensor)> {
    let shape = logits.shape();
    if shape.len() != 2 || shape[0] != labels.len() {
        return Err(Error::Shape {
            layer: "batch_cross_entropy".into(),
            expected: format!("[{}, K]", labels.len()),
            got: shape.to_vec(),
        });
    }
    let (n, k) = (shape[0], shape[1]);
    let mut grad = Vec::with_capacity(n * k);
    let mut total = 0.0f64;
    let mut correct = 0;
    for (i, &label) in labels.iter().enumerate() {
        let ce = softmax_cross_entropy(logits.row(i), label)?;
        total += ce.loss as f64;
        correct += usize::from(ce.predicted == label);
        grad.extend(ce.grad.iter().map(|g| g / n as f32));
    }
    Ok(((total / n as f64) as f32, correct, Tensor::new(vec![n, k], grad)?))
}

/// `loss = Σ x`; its gradient is all ones.
pub fn sum_loss(x: &Tensor) -> (f32, Tensor) {
    (x.sum(), Tensor::full(x.shape(), 1.0))
}
