//! Gaussian class-conditional data standing in for image datasets.

use serde::{Deserialize, Serialize};

use crate::datagen::dataset::{LabeledDataset, UnlabeledDataset};
use crate::error::{Error, Result};
use crate::rng::{normal, rng_for, stream, Rng};
use crate::tensor::{dot, l2_norm, Tensor};
use rand::Rng as _;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub classes: usize,
    /// Gaussian components per class; each sample picks one uniformly.
    pub modes_per_class: usize,
    pub dim: usize,
    /// Labeled training-pool samples per class.
    pub per_class: usize,
    /// Held-out labeled samples per class (client test sets come from here).
    pub test_per_class: usize,
    /// Distance between any two component centers (exact when `dim` is at
    /// least the number of components, approximate otherwise).
    pub class_separation: f64,
    pub noise_std: f64,
    /// Constant added to every coordinate, like the mean intensity of
    /// image pixels. Inputs are therefore not centered.
    pub offset: f64,
    pub unlabeled_count: usize,
    /// Each class mean of the unlabeled pool is displaced by a random
    /// vector of this norm, so the pool is similar but not identical.
    pub unlabeled_shift: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            classes: 10,
            modes_per_class: 5,
            dim: 32,
            per_class: 800,
            test_per_class: 800,
            class_separation: 4.0,
            noise_std: 0.8,
            offset: 0.0,
            unlabeled_count: 4000,
            unlabeled_shift: 0.5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    pub unlabeled: UnlabeledDataset,
    /// Component centers; class `k` owns entries `k·m .. (k+1)·m` for
    /// `m = modes_per_class`.
    pub centers: Vec<Vec<f64>>,
}

fn random_unit(dim: usize, rng: &mut Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| normal(rng)).collect();
        let n = l2_norm(&v);
        if n > 1e-9 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Component centers with pairwise distance `separation`: scaled
/// orthonormal directions when they fit in `dim`, otherwise isotropic
/// Gaussian draws whose expected pairwise distance is `separation`.
fn component_centers(spec: &SyntheticSpec, rng: &mut Rng) -> Vec<Vec<f64>> {
    let count = spec.classes * spec.modes_per_class;
    if spec.dim < count {
        let sd = spec.class_separation / (2.0 * spec.dim as f64).sqrt();
        return (0..count)
            .map(|_| (0..spec.dim).map(|_| sd * normal(rng)).collect())
            .collect();
    }
    let mut dirs: Vec<Vec<f64>> = Vec::with_capacity(count);
    for _ in 0..count {
        let mut v = random_unit(spec.dim, rng);
        for d in &dirs {
            let p = dot(&v, d);
            v.iter_mut().zip(d).for_each(|(a, b)| *a -= p * b);
        }
        let n = l2_norm(&v);
        v.iter_mut().for_each(|a| *a /= n);
        dirs.push(v);
    }
    let scale = spec.class_separation / std::f64::consts::SQRT_2;
    dirs.into_iter()
        .map(|d| d.into_iter().map(|x| x * scale).collect())
        .collect()
}

fn sample_around(mean: &[f64], noise: f64, rng: &mut Rng) -> Vec<f64> {
    mean.iter().map(|m| m + noise * normal(rng)).collect()
}

fn add_offset(centers: &mut [Vec<f64>], offset: f64) {
    centers.iter_mut().flatten().for_each(|v| *v += offset);
}

fn draw_from_class(centers: &[Vec<f64>], class: usize, modes: usize, noise: f64, rng: &mut Rng) -> Vec<f64> {
    let m = if modes > 1 { rng.random_range(0..modes) } else { 0 };
    sample_around(&centers[class * modes + m], noise, rng)
}

fn labeled_pool(spec: &SyntheticSpec, centers: &[Vec<f64>], per_class: usize, rng: &mut Rng) -> Result<LabeledDataset> {
    let mut rows = Vec::with_capacity(spec.classes * per_class);
    let mut labels = Vec::with_capacity(spec.classes * per_class);
    for k in 0..spec.classes {
        for _ in 0..per_class {
            rows.push(draw_from_class(centers, k, spec.modes_per_class, spec.noise_std, rng));
            labels.push(k);
        }
    }
    let features = if rows.is_empty() { Tensor::zeros(&[0, spec.dim]) } else { Tensor::from_rows(&rows)? };
    LabeledDataset::new(features, labels, spec.classes)
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    if spec.classes < 2 || spec.dim < 2 {
        return Err(Error::invalid("synthetic data needs at least 2 classes and 2 dimensions"));
    }
    if spec.per_class == 0 || spec.unlabeled_count == 0 || spec.modes_per_class == 0 {
        return Err(Error::invalid("sample counts must be positive"));
    }
    if spec.noise_std < 0.0 || spec.class_separation < 0.0 || spec.unlabeled_shift < 0.0 {
        return Err(Error::invalid("noise, separation and shift must be nonnegative"));
    }
    let mut centers = component_centers(spec, &mut rng_for(spec.seed, &[stream::SYNTHETIC, 0]));
    add_offset(&mut centers, spec.offset);
    let train = labeled_pool(spec, &centers, spec.per_class, &mut rng_for(spec.seed, &[stream::SYNTHETIC, 1]))?;
    let test = labeled_pool(spec, &centers, spec.test_per_class, &mut rng_for(spec.seed, &[stream::SYNTHETIC, 2]))?;

    let mut shift_rng = rng_for(spec.seed, &[stream::SYNTHETIC, 4]);
    let shifted: Vec<Vec<f64>> = centers
        .iter()
        .map(|m| {
            let u = random_unit(spec.dim, &mut shift_rng);
            m.iter().zip(u).map(|(a, b)| a + spec.unlabeled_shift * b).collect()
        })
        .collect();
    let mut rng = rng_for(spec.seed, &[stream::SYNTHETIC, 3]);
    let rows: Vec<Vec<f64>> = (0..spec.unlabeled_count)
        .map(|_| {
            let k = rng.random_range(0..spec.classes);
            draw_from_class(&shifted, k, spec.modes_per_class, spec.noise_std, &mut rng)
        })
        .collect();
    let unlabeled = UnlabeledDataset::new(Tensor::from_rows(&rows)?)?;
    Ok(SyntheticData {
        train,
        test,
        unlabeled,
        centers,
    })
}

/// Moves every sample by the same random offset of norm `offset`, giving
/// a downstream distribution that is unrelated to the original pool.
pub fn translate(features: &Tensor, offset: f64, seed: u64) -> Tensor {
    let u = random_unit(features.cols(), &mut rng_for(seed, &[stream::SYNTHETIC, 5]));
    let mut out = features.clone();
    for r in 0..out.rows() {
        out.row_mut(r).iter_mut().zip(&u).for_each(|(v, d)| *v += offset * d);
    }
    out
}
