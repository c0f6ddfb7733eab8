use super::tensor::{ensure_finite, Tensor};
use crate::error::{Error, Result};

/// Mean absolute error over every entry, with its subgradient
/// `sign(pred - target) / len` (zero where they agree).
pub fn l1_loss(pred: &Tensor, target: &Tensor) -> Result<(f64, Vec<f64>)> {
    if pred.shape() != target.shape() {
        return Err(Error::dim(
            "l1_loss",
            format!("pred {:?} vs target {:?}", pred.shape(), target.shape()),
        ));
    }
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let grad = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| {
            let d = p - t;
            loss += d.abs();
            if d > 0.0 {
                1.0 / n
            } else if d < 0.0 {
                -1.0 / n
            } else {
                0.0
            }
        })
        .collect();
    let loss = loss / n;
    ensure_finite(&[loss], "l1_loss")?;
    Ok((loss, grad))
}
