//! Contrastive objectives over a batch of `2B` views.
//!
//! Views are paired through `pairs`: `pairs[a]` is the index of the other
//! augmentation of the same source sample, so `pairs[pairs[a]] == a`.
//! The usual layout is rows `0..B` for the first view and `B..2B` for the
//! second, built by [`interleaved_pairs`].

use crate::error::{Error, Result};
use crate::nn::loss::{cosine_similarity, cosine_similarity_grad};
use crate::tensor::{dot, l2_norm, Tensor};

/// `pairs` for the stacked `[view_1; view_2]` layout of `b` samples.
pub fn interleaved_pairs(b: usize) -> Vec<usize> {
    (0..2 * b).map(|a| if a < b { a + b } else { a - b }).collect()
}

fn check_pairs(rows: usize, pairs: &[usize]) -> Result<()> {
    if rows < 2 {
        return Err(Error::invalid("contrastive batch needs at least one positive pair"));
    }
    if pairs.len() != rows {
        return Err(Error::dim("pair index", rows, pairs.len()));
    }
    for (a, &p) in pairs.iter().enumerate() {
        if p >= rows || p == a || pairs[p] != a {
            return Err(Error::invalid(format!("view {a} does not have exactly one positive")));
        }
    }
    Ok(())
}

/// Mean InfoNCE loss over every anchor: for anchor `a` with positive
/// `p(a)`, `-log(exp(s(a,p(a))/τ) / Σ_{b≠a} exp(s(a,b)/τ))` with `s` the
/// cosine similarity.
pub fn simclr_loss(z: &Tensor, pairs: &[usize], temperature: f64) -> Result<f64> {
    simclr_loss_with_grad(z, pairs, temperature).map(|(l, _)| l)
}

pub fn simclr_loss_with_grad(z: &Tensor, pairs: &[usize], temperature: f64) -> Result<(f64, Tensor)> {
    let n = z.rows();
    check_pairs(n, pairs)?;
    if temperature <= 0.0 {
        return Err(Error::invalid("temperature must be positive"));
    }
    let d = z.cols();
    let norms: Vec<f64> = (0..n).map(|a| l2_norm(z.row(a))).collect();
    let mut unit = z.clone();
    for (a, &na) in norms.iter().enumerate() {
        let inv = if na > 0.0 { 1.0 / na } else { 0.0 };
        unit.row_mut(a).iter_mut().for_each(|v| *v *= inv);
    }
    let sim = unit.matmul_t(&unit)?;

    let scale = 1.0 / n as f64;
    let mut loss = 0.0;
    // dL/d(sim[a][b]) accumulated into coefficient matrix
    let mut coef = Tensor::zeros(&[n, n]);
    for a in 0..n {
        let logits: Vec<f64> = (0..n).map(|b| sim.get(a, b) / temperature).collect();
        let m = (0..n).filter(|&b| b != a).map(|b| logits[b]).fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = (0..n).filter(|&b| b != a).map(|b| (logits[b] - m).exp()).sum();
        let lse = m + denom.ln();
        loss += lse - logits[pairs[a]];
        for b in (0..n).filter(|&b| b != a) {
            let soft = (logits[b] - m).exp() / denom;
            let target = if b == pairs[a] { 1.0 } else { 0.0 };
            let g = scale * (soft - target) / temperature;
            coef.set(a, b, coef.get(a, b) + g);
            coef.set(b, a, coef.get(b, a) + g);
        }
    }
    // dL/dû_a = Σ_b coef[a][b] û_b
    let dunit = coef.matmul(&unit)?;
    let mut grad = Tensor::zeros(&[n, d]);
    for a in 0..n {
        if norms[a] == 0.0 {
            continue;
        }
        let u = unit.row(a);
        let du = dunit.row(a);
        let proj = dot(u, du);
        for (j, g) in grad.row_mut(a).iter_mut().enumerate() {
            *g = (du[j] - u[j] * proj) / norms[a];
        }
    }
    Ok((loss * scale, grad))
}

/// `2 - 2·Sim(p, z')` for one prediction/target pair.
pub fn byol_loss(prediction: &[f64], target: &[f64]) -> Result<f64> {
    Ok(2.0 - 2.0 * cosine_similarity(prediction, target)?)
}

/// `-Sim(p, z)` for one prediction/projection pair.
pub fn simsiam_loss(prediction: &[f64], projection: &[f64]) -> Result<f64> {
    Ok(-cosine_similarity(prediction, projection)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SiameseObjective {
    /// `2 - 2·Sim(p, z')`
    Byol,
    /// `-Sim(p, z)`
    SimSiam,
}

/// Batch loss of a predictor-based objective, symmetrized over both view
/// orderings: every view's prediction is matched to its partner's
/// (stopped) target and the two orderings are summed per sample, then
/// averaged over the `B` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct SiameseLoss {
    pub loss: f64,
    pub grad_prediction: Tensor,
    /// Always zero: targets sit behind a stop-gradient.
    pub grad_target: Tensor,
}

pub fn siamese_loss_with_grad(
    objective: SiameseObjective,
    predictions: &Tensor,
    targets: &Tensor,
    pairs: &[usize],
) -> Result<SiameseLoss> {
    let n = predictions.rows();
    check_pairs(n, pairs)?;
    if !predictions.same_shape(targets) {
        return Err(Error::dim(
            "prediction/target",
            format!("{:?}", predictions.shape()),
            format!("{:?}", targets.shape()),
        ));
    }
    let samples = n as f64 / 2.0;
    let (offset, factor) = match objective {
        SiameseObjective::Byol => (2.0, -2.0),
        SiameseObjective::SimSiam => (0.0, -1.0),
    };
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(predictions.shape());
    for a in 0..n {
        let p = predictions.row(a);
        let z = targets.row(pairs[a]);
        loss += offset + factor * cosine_similarity(p, z)?;
        let g = cosine_similarity_grad(p, z);
        for (out, gi) in grad.row_mut(a).iter_mut().zip(g) {
            *out = factor * gi / samples;
        }
    }
    Ok(SiameseLoss {
        loss: loss / samples,
        grad_prediction: grad,
        grad_target: Tensor::zeros(targets.shape()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_pair_simclr_is_zero() {
        let z = Tensor::matrix(2, 3, vec![0.3, -1.0, 2.0, 4.0, 0.1, 0.0]).unwrap();
        assert_eq!(simclr_loss(&z, &interleaved_pairs(1), 0.1).unwrap(), 0.0);
    }

    #[test]
    fn identical_projections_give_ln3() {
        let z = Tensor::filled(&[4, 5], 0.7);
        let l = simclr_loss(&z, &interleaved_pairs(2), 0.5).unwrap();
        assert!((l - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn malformed_pairs_rejected() {
        let z = Tensor::filled(&[4, 2], 1.0);
        assert!(simclr_loss(&z, &[1, 0, 3, 3], 0.1).is_err());
        assert!(simclr_loss(&Tensor::filled(&[1, 2], 1.0), &[0], 0.1).is_err());
        assert!(simclr_loss(&z, &interleaved_pairs(2), 0.0).is_err());
    }

    #[test]
    fn byol_and_simsiam_cases() {
        assert!(byol_loss(&[1.0, 2.0], &[2.0, 4.0]).unwrap().abs() < 1e-15);
        assert!((byol_loss(&[1.0, 0.0], &[0.0, 3.0]).unwrap() - 2.0).abs() < 1e-15);
        assert!((simsiam_loss(&[1.0, 2.0], &[3.0, 6.0]).unwrap() + 1.0).abs() < 1e-15);
        assert!((simsiam_loss(&[1.0, 2.0], &[-3.0, -6.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!(byol_loss(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn siamese_target_gradient_is_exactly_zero() {
        let p = Tensor::matrix(2, 2, vec![1.0, 0.5, -0.2, 0.9]).unwrap();
        let z = Tensor::matrix(2, 2, vec![0.3, 0.1, 0.4, -0.8]).unwrap();
        for obj in [SiameseObjective::Byol, SiameseObjective::SimSiam] {
            let out = siamese_loss_with_grad(obj, &p, &z, &interleaved_pairs(1)).unwrap();
            assert!(out.grad_target.data().iter().all(|&g| g == 0.0));
            assert!(out.grad_prediction.data().iter().any(|&g| g != 0.0));
        }
    }
}
