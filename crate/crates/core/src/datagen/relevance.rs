//! Dataset relevance: how close two datasets look through an encoder.

use rand::seq::index::sample;

use crate::error::{Error, Result};
use crate::nn::{cosine_similarity_flagged, ModelParams};
use crate::rng::{rng_for, stream};
use crate::tensor::Tensor;

pub const DEFAULT_SAMPLE_N: usize = 300;

fn draw(features: &Tensor, n: usize, seed: u64, which: u64) -> Result<Tensor> {
    if n > features.rows() {
        return Err(Error::invalid(format!(
            "cannot sample {n} rows from a dataset of {}",
            features.rows()
        )));
    }
    if n == features.rows() {
        return Ok(features.clone());
    }
    let mut idx = sample(&mut rng_for(seed, &[stream::RELEVANCE, which]), features.rows(), n).into_vec();
    idx.sort_unstable();
    Ok(features.gather_rows(&idx))
}

/// Mean cosine similarity between the encoder representations of `n`
/// samples from `a` and `n` samples from `b`, over all `n²` pairs.
/// When `n` equals a dataset's size every row is used.
pub fn relevance_score(model: &ModelParams, a: &Tensor, b: &Tensor, sample_n: usize, seed: u64) -> Result<f64> {
    if sample_n == 0 {
        return Err(Error::invalid("relevance needs at least one sample"));
    }
    let ra = model.encode(&draw(a, sample_n, seed, 0)?)?;
    let rb = model.encode(&draw(b, sample_n, seed, 1)?)?;
    let mut total = 0.0;
    for i in 0..ra.rows() {
        for j in 0..rb.rows() {
            total += cosine_similarity_flagged(ra.row(i), rb.row(j))?.0;
        }
    }
    Ok(total / (ra.rows() * rb.rows()) as f64)
}
