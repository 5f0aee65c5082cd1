use crate::error::{LdbError, Result};
use crate::tensor::Tensor;

/// Mean softmax cross-entropy over the batch and its gradient w.r.t. the logits.
pub fn cross_entropy_loss(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    if logits.rank() != 2 || logits.rows() != labels.len() {
        return Err(LdbError::Shape {
            op: "cross_entropy_loss",
            lhs: logits.shape().to_vec(),
            rhs: vec![labels.len()],
        });
    }
    let k = logits.shape()[1];
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(LdbError::Data(format!("label {bad} out of range for {k} classes")));
    }
    let n = labels.len() as f64;
    let mut grad = vec![0.0; logits.len()];
    let mut loss = 0.0;
    for (i, (row, &label)) in logits.data().chunks_exact(k).zip(labels).enumerate() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_z = max + sum.ln();
        loss += log_z - row[label];
        let g = &mut grad[i * k..(i + 1) * k];
        for (gj, &v) in g.iter_mut().zip(row) {
            *gj = (v - log_z).exp() / n;
        }
        g[label] -= 1.0 / n;
    }
    Ok((loss / n, Tensor::new(logits.shape().to_vec(), grad)?))
}
