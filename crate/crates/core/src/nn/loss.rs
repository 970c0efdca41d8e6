use crate::error::{Error, Result};
use crate::tensor::{dot, l2_norm, Tensor};

/// Lower bound applied to probabilities inside the logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

pub fn one_hot(labels: &[usize], classes: usize) -> Result<Tensor> {
    let mut t = Tensor::zeros(&[labels.len(), classes]);
    for (i, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(Error::invalid(format!("label {y} out of range for {classes} classes")));
        }
        t.set(i, y, 1.0);
    }
    Ok(t)
}

fn check_ce_inputs(probs: &Tensor, onehot: &Tensor) -> Result<()> {
    if !probs.same_shape(onehot) || probs.shape().len() != 2 {
        return Err(Error::dim(
            "cross-entropy inputs",
            format!("{:?}", probs.shape()),
            format!("{:?}", onehot.shape()),
        ));
    }
    if probs.rows() == 0 {
        return Err(Error::invalid("cross-entropy on an empty batch"));
    }
    for r in 0..probs.rows() {
        let s: f64 = probs.row(r).iter().sum();
        if (s - 1.0).abs() > 1e-9 || probs.row(r).iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(Error::invalid(format!("probability row {r} sums to {s}")));
        }
        let y = onehot.row(r);
        let ones = y.iter().filter(|&&v| v == 1.0).count();
        let zeros = y.iter().filter(|&&v| v == 0.0).count();
        if ones != 1 || ones + zeros != y.len() {
            return Err(Error::invalid(format!("label row {r} is not one-hot")));
        }
    }
    Ok(())
}

/// Mean over the batch of `-Σ_m y_m log p_m`.
pub fn cross_entropy(probs: &Tensor, onehot: &Tensor) -> Result<f64> {
    check_ce_inputs(probs, onehot)?;
    let total: f64 = probs
        .data()
        .iter()
        .zip(onehot.data())
        .filter(|(_, &y)| y != 0.0)
        .map(|(&p, &y)| -y * p.max(PROB_FLOOR).ln())
        .sum();
    Ok(total / probs.rows() as f64)
}

/// Loss and its gradient with respect to `probs`.
pub fn cross_entropy_with_grad(probs: &Tensor, onehot: &Tensor) -> Result<(f64, Tensor)> {
    let loss = cross_entropy(probs, onehot)?;
    let n = probs.rows() as f64;
    let grad = probs.zip_map(onehot, |p, y| {
        if y == 0.0 || p < PROB_FLOOR {
            0.0
        } else {
            -y / (p * n)
        }
    })?;
    Ok((loss, grad))
}

/// Cosine similarity plus a flag set when either input has zero norm (in
/// which case the similarity is defined as 0).
pub fn cosine_similarity_flagged(a: &[f64], b: &[f64]) -> Result<(f64, bool)> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::dim("cosine similarity", a.len(), b.len()));
    }
    let (na, nb) = (l2_norm(a), l2_norm(b));
    if na == 0.0 || nb == 0.0 {
        return Ok((0.0, true));
    }
    Ok(((dot(a, b) / (na * nb)).clamp(-1.0, 1.0), false))
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    let (s, degenerate) = cosine_similarity_flagged(a, b)?;
    if degenerate {
        log::warn!("cosine similarity of a zero-norm vector; using 0");
    }
    Ok(s)
}

/// Gradient of `Sim(a, b)` with respect to `a`: `(b̂ - Sim·â) / ‖a‖`.
/// Zero when either vector has zero norm.
pub fn cosine_similarity_grad(a: &[f64], b: &[f64]) -> Vec<f64> {
    let (na, nb) = (l2_norm(a), l2_norm(b));
    if na == 0.0 || nb == 0.0 {
        return vec![0.0; a.len()];
    }
    let s = dot(a, b) / (na * nb);
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (y / nb - s * x / na) / na)
        .collect()
}
