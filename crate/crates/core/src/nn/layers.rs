//! Layer kinds and the sequential stack that chains them.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const BATCHNORM_EPS: f64 = 1e-5;
pub const BATCHNORM_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Dense,
    Relu,
    BatchNorm,
    Softmax,
}

/// Shape-level description of a layer. `in_dim`/`out_dim` are `None` for
/// the dimension-preserving activations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_dim: Option<usize>,
    pub out_dim: Option<usize>,
}

/// Affine map `y = x W + b` with `W: [in, out]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Dense {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Dense {
            weight: Tensor::zeros(&[in_dim, out_dim]),
            bias: Tensor::zeros(&[out_dim]),
        }
    }

    /// Uniform weights in `[-limit, limit]`, zero bias.
    pub fn uniform(in_dim: usize, out_dim: usize, limit: f64, rng: &mut Rng) -> Self {
        let mut d = Dense::zeros(in_dim, out_dim);
        for w in d.weight.data_mut() {
            *w = rng.random_range(-limit..=limit);
        }
        d
    }

    /// He-uniform, for layers followed by a ReLU.
    pub fn he_uniform(in_dim: usize, out_dim: usize, rng: &mut Rng) -> Self {
        Dense::uniform(in_dim, out_dim, (6.0 / in_dim as f64).sqrt(), rng)
    }

    /// Glorot-uniform, for linear outputs.
    pub fn glorot_uniform(in_dim: usize, out_dim: usize, rng: &mut Rng) -> Self {
        Dense::uniform(in_dim, out_dim, (6.0 / (in_dim + out_dim) as f64).sqrt(), rng)
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[1]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
}

impl BatchNorm {
    pub fn new(dim: usize) -> Self {
        BatchNorm {
            gamma: Tensor::filled(&[dim], 1.0),
            beta: Tensor::zeros(&[dim]),
            running_mean: Tensor::zeros(&[dim]),
            running_var: Tensor::filled(&[dim], 1.0),
        }
    }

    pub fn dim(&self) -> usize {
        self.gamma.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Layer {
    Dense(Dense),
    Relu,
    #[serde(rename = "batchnorm")]
    BatchNorm(BatchNorm),
    Softmax,
}

#[derive(Debug, Clone)]
enum Cache {
    Dense { input: Tensor },
    Relu { output: Tensor },
    BatchNorm { x_hat: Tensor, inv_std: Vec<f64> },
    Softmax { output: Tensor },
}

/// Activations recorded by a train-mode forward pass, consumed by
/// [`Sequential::backward`]. Eval-mode passes record nothing.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    caches: Vec<Cache>,
}

impl Tape {
    pub fn is_empty(&self) -> bool {
        self.caches.is_empty()
    }
}

impl Layer {
    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Dense(_) => LayerKind::Dense,
            Layer::Relu => LayerKind::Relu,
            Layer::BatchNorm(_) => LayerKind::BatchNorm,
            Layer::Softmax => LayerKind::Softmax,
        }
    }

    pub fn spec(&self) -> LayerSpec {
        let (in_dim, out_dim) = match self {
            Layer::Dense(d) => (Some(d.in_dim()), Some(d.out_dim())),
            Layer::BatchNorm(b) => (Some(b.dim()), Some(b.dim())),
            _ => (None, None),
        };
        LayerSpec {
            kind: self.kind(),
            in_dim,
            out_dim,
        }
    }

    /// Eval-mode output; batchnorm uses running statistics.
    pub fn infer(&self, x: &Tensor) -> Tensor {
        match self {
            Layer::Dense(d) => dense_affine(d, x),
            Layer::Relu => x.map(|v| v.max(0.0)),
            Layer::BatchNorm(bn) => {
                let mut y = x.clone();
                for r in 0..y.rows() {
                    for (j, v) in y.row_mut(r).iter_mut().enumerate() {
                        let inv = 1.0 / (bn.running_var.data()[j] + BATCHNORM_EPS).sqrt();
                        *v = bn.gamma.data()[j] * (*v - bn.running_mean.data()[j]) * inv
                            + bn.beta.data()[j];
                    }
                }
                y
            }
            Layer::Softmax => softmax_rows(x),
        }
    }

    /// Train-mode output plus the cache needed by backward. Batchnorm
    /// normalizes with batch statistics and updates its running stats.
    fn forward_train(&mut self, x: &Tensor) -> (Tensor, Cache) {
        match self {
            Layer::Dense(d) => (dense_affine(d, x), Cache::Dense { input: x.clone() }),
            Layer::Relu => {
                let y = x.map(|v| v.max(0.0));
                (y.clone(), Cache::Relu { output: y })
            }
            Layer::BatchNorm(bn) => {
                let (n, c) = (x.rows(), x.cols());
                let mean = x.sum_rows().scale(1.0 / n as f64);
                let mut var = vec![0.0; c];
                for r in 0..n {
                    for (j, v) in x.row(r).iter().enumerate() {
                        let d = v - mean.data()[j];
                        var[j] += d * d;
                    }
                }
                var.iter_mut().for_each(|v| *v /= n as f64);
                let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BATCHNORM_EPS).sqrt()).collect();
                let mut x_hat = x.clone();
                let mut y = x.clone();
                for r in 0..n {
                    for j in 0..c {
                        let h = (x.get(r, j) - mean.data()[j]) * inv_std[j];
                        x_hat.set(r, j, h);
                        y.set(r, j, bn.gamma.data()[j] * h + bn.beta.data()[j]);
                    }
                }
                let unbias = if n > 1 { n as f64 / (n - 1) as f64 } else { 1.0 };
                for j in 0..c {
                    let rm = &mut bn.running_mean.data_mut()[j];
                    *rm = BATCHNORM_MOMENTUM * *rm + (1.0 - BATCHNORM_MOMENTUM) * mean.data()[j];
                    let rv = &mut bn.running_var.data_mut()[j];
                    *rv = BATCHNORM_MOMENTUM * *rv + (1.0 - BATCHNORM_MOMENTUM) * var[j] * unbias;
                }
                (y, Cache::BatchNorm { x_hat, inv_std })
            }
            Layer::Softmax => {
                let y = softmax_rows(x);
                (y.clone(), Cache::Softmax { output: y })
            }
        }
    }

    /// Returns parameter gradients (in [`Layer::parameters`] order) and the
    /// gradient with respect to the layer input.
    fn backward(&self, cache: &Cache, grad: &Tensor) -> Result<(Vec<Tensor>, Tensor)> {
        match (self, cache) {
            (Layer::Dense(d), Cache::Dense { input }) => {
                let dw = input.t_matmul(grad)?;
                let db = grad.sum_rows();
                let dx = grad.matmul_t(&d.weight)?;
                Ok((vec![dw, db], dx))
            }
            (Layer::Relu, Cache::Relu { output }) => {
                let dx = grad.zip_map(output, |g, y| if y > 0.0 { g } else { 0.0 })?;
                Ok((vec![], dx))
            }
            (Layer::BatchNorm(bn), Cache::BatchNorm { x_hat, inv_std }) => {
                let (n, c) = (grad.rows(), grad.cols());
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for r in 0..n {
                    for j in 0..c {
                        dgamma[j] += grad.get(r, j) * x_hat.get(r, j);
                        dbeta[j] += grad.get(r, j);
                    }
                }
                let nf = n as f64;
                let mut dx = Tensor::zeros(&[n, c]);
                for j in 0..c {
                    let g = bn.gamma.data()[j];
                    // Σ dx̂ and Σ dx̂·x̂ over the batch
                    let sum_dxh = g * dbeta[j];
                    let sum_dxh_xh = g * dgamma[j];
                    for r in 0..n {
                        let dxh = grad.get(r, j) * g;
                        let v = inv_std[j] / nf * (nf * dxh - sum_dxh - x_hat.get(r, j) * sum_dxh_xh);
                        dx.set(r, j, v);
                    }
                }
                Ok((vec![Tensor::vector(dgamma), Tensor::vector(dbeta)], dx))
            }
            (Layer::Softmax, Cache::Softmax { output }) => {
                let mut dx = grad.clone();
                for r in 0..grad.rows() {
                    let y = output.row(r);
                    let g = grad.row(r);
                    let s: f64 = y.iter().zip(g).map(|(a, b)| a * b).sum();
                    for (j, v) in dx.row_mut(r).iter_mut().enumerate() {
                        *v = y[j] * (g[j] - s);
                    }
                }
                Ok((vec![], dx))
            }
            _ => Err(Error::State("tape does not match layer kinds".into())),
        }
    }

    pub fn parameters(&self) -> Vec<&Tensor> {
        match self {
            Layer::Dense(d) => vec![&d.weight, &d.bias],
            Layer::BatchNorm(b) => vec![&b.gamma, &b.beta],
            _ => vec![],
        }
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Layer::Dense(d) => vec![&mut d.weight, &mut d.bias],
            Layer::BatchNorm(b) => vec![&mut b.gamma, &mut b.beta],
            _ => vec![],
        }
    }

    /// Parameters plus batchnorm running statistics, with stable names.
    pub fn state(&self) -> Vec<(&'static str, &Tensor)> {
        match self {
            Layer::Dense(d) => vec![("weight", &d.weight), ("bias", &d.bias)],
            Layer::BatchNorm(b) => vec![
                ("gamma", &b.gamma),
                ("beta", &b.beta),
                ("running_mean", &b.running_mean),
                ("running_var", &b.running_var),
            ],
            _ => vec![],
        }
    }

    pub fn state_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        match self {
            Layer::Dense(d) => vec![("weight", &mut d.weight), ("bias", &mut d.bias)],
            Layer::BatchNorm(b) => vec![
                ("gamma", &mut b.gamma),
                ("beta", &mut b.beta),
                ("running_mean", &mut b.running_mean),
                ("running_var", &mut b.running_var),
            ],
            _ => vec![],
        }
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(x: &Tensor) -> Tensor {
    let mut y = x.clone();
    for r in 0..y.rows() {
        let row = y.row_mut(r);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        row.iter_mut().for_each(|v| *v /= s);
    }
    y
}

/// A chain of layers evaluated in order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Sequential {
    pub layers: Vec<Layer>,
}

impl Sequential {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        let s = Sequential { layers };
        s.validate()?;
        Ok(s)
    }

    /// Consecutive dense/batchnorm layers must agree on dimensions.
    pub fn validate(&self) -> Result<()> {
        let mut width: Option<usize> = None;
        for (i, layer) in self.layers.iter().enumerate() {
            let spec = layer.spec();
            if let (Some(w), Some(inp)) = (width, spec.in_dim) {
                if w != inp {
                    return Err(Error::dim(format!("layer {i} ({:?})", spec.kind), w, inp));
                }
            }
            if spec.in_dim == Some(0) || spec.out_dim == Some(0) {
                return Err(Error::invalid(format!("layer {i} has a zero dimension")));
            }
            if let Some(o) = spec.out_dim {
                width = Some(o);
            }
        }
        Ok(())
    }

    pub fn in_dim(&self) -> Option<usize> {
        self.layers.iter().find_map(|l| l.spec().in_dim)
    }

    pub fn out_dim(&self) -> Option<usize> {
        self.layers.iter().rev().find_map(|l| l.spec().out_dim)
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(Layer::spec).collect()
    }

    /// Runs the stack on a `[batch, in_dim]` matrix. Train mode uses batch
    /// statistics in batchnorm (updating running stats) and records a tape;
    /// eval mode returns an empty tape.
    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<(Tensor, Tape)> {
        if mode == Mode::Eval {
            return Ok((self.infer(x)?, Tape::default()));
        }
        let mut tape = Tape::default();
        let mut cur = x.clone();
        for i in 0..self.layers.len() {
            check_input(i, &self.layers[i], &cur)?;
            let (y, cache) = self.layers[i].forward_train(&cur);
            tape.caches.push(cache);
            cur = y;
        }
        Ok((cur, tape))
    }

    /// Eval-mode forward; never mutates.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        let mut cur = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            check_input(i, layer, &cur)?;
            cur = layer.infer(&cur);
        }
        Ok(cur)
    }

    /// Backpropagates `grad` (gradient w.r.t. the stack output) through a
    /// recorded train-mode tape. Returns parameter gradients aligned with
    /// [`Sequential::parameters`] and the gradient w.r.t. the input.
    pub fn backward(&self, tape: &Tape, grad: &Tensor) -> Result<(Vec<Tensor>, Tensor)> {
        if self.layers.is_empty() {
            return Ok((vec![], grad.clone()));
        }
        if tape.caches.len() != self.layers.len() {
            return Err(Error::State(if tape.is_empty() {
                "backward called without a recorded train-mode forward pass".into()
            } else {
                format!(
                    "tape holds {} entries for {} layers",
                    tape.caches.len(),
                    self.layers.len()
                )
            }));
        }
        let mut per_layer: Vec<Vec<Tensor>> = Vec::with_capacity(self.layers.len());
        let mut g = grad.clone();
        for (layer, cache) in self.layers.iter().zip(&tape.caches).rev() {
            let (pg, dx) = layer.backward(cache, &g)?;
            per_layer.push(pg);
            g = dx;
        }
        per_layer.reverse();
        Ok((per_layer.into_iter().flatten().collect(), g))
    }

    pub fn parameters(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(Layer::parameters).collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(Layer::parameters_mut).collect()
    }

    pub fn zero_grads(&self) -> Vec<Tensor> {
        self.parameters().iter().map(|p| Tensor::zeros(p.shape())).collect()
    }

    /// `(name, tensor)` for every stored tensor, e.g. `"2.weight"`.
    pub fn named_state(&self) -> Vec<(String, &Tensor)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| l.state().into_iter().map(move |(n, t)| (format!("{i}.{n}"), t)))
            .collect()
    }

    pub fn state_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.state_mut().into_iter().map(|(_, t)| t))
            .collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.parameters().iter().map(|p| p.len()).sum()
    }
}

fn check_input(i: usize, layer: &Layer, x: &Tensor) -> Result<()> {
    if let Some(inp) = layer.spec().in_dim {
        if x.cols() != inp || x.shape().len() != 2 {
            return Err(Error::dim(
                format!("layer {i} ({:?}) input", layer.kind()),
                format!("[batch, {inp}]"),
                format!("{:?}", x.shape()),
            ));
        }
    }
    Ok(())
}

fn dense_affine(d: &Dense, x: &Tensor) -> Tensor {
    let mut y = x.matmul(&d.weight).expect("input width checked before dispatch");
    let b = d.bias.data();
    for r in 0..y.rows() {
        for (v, bj) in y.row_mut(r).iter_mut().zip(b) {
            *v += bj;
        }
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;

    fn mat(rows: usize, cols: usize, v: &[f64]) -> Tensor {
        Tensor::matrix(rows, cols, v.to_vec()).unwrap()
    }

    #[test]
    fn zero_weight_dense_gives_zero() {
        let mut s = Sequential::new(vec![Layer::Dense(Dense::zeros(3, 2))]).unwrap();
        let (y, _) = s.forward(&mat(2, 3, &[1., -2., 3., 4., 5., 6.]), Mode::Eval).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_dense_passes_input() {
        let d = Dense {
            weight: Tensor::identity(2),
            bias: Tensor::zeros(&[2]),
        };
        let mut s = Sequential::new(vec![Layer::Dense(d)]).unwrap();
        let (y, _) = s.forward(&mat(1, 2, &[1., 2.]), Mode::Train).unwrap();
        assert_eq!(y.data(), &[1., 2.]);
    }

    #[test]
    fn mismatched_input_names_layer() {
        let mut rng = rng_for(0, &[]);
        let mut s = Sequential::new(vec![
            Layer::Dense(Dense::he_uniform(4, 3, &mut rng)),
            Layer::Relu,
        ])
        .unwrap();
        let err = s.forward(&Tensor::zeros(&[2, 5]), Mode::Eval).unwrap_err();
        assert!(err.to_string().contains("layer 0"), "{err}");
    }

    #[test]
    fn chain_dimension_check() {
        let mut rng = rng_for(0, &[]);
        let r = Sequential::new(vec![
            Layer::Dense(Dense::he_uniform(4, 3, &mut rng)),
            Layer::Relu,
            Layer::Dense(Dense::he_uniform(2, 3, &mut rng)),
        ]);
        assert!(matches!(r, Err(Error::Dimension { .. })));
    }

    #[test]
    fn backward_without_forward_is_state_error() {
        let mut rng = rng_for(0, &[]);
        let mut s = Sequential::new(vec![Layer::Dense(Dense::he_uniform(2, 2, &mut rng))]).unwrap();
        let x = mat(1, 2, &[1., 1.]);
        assert!(matches!(
            s.backward(&Tape::default(), &x),
            Err(Error::State(_))
        ));
        // an eval-mode pass records nothing either
        let (_, tape) = s.forward(&x, Mode::Eval).unwrap();
        assert!(matches!(s.backward(&tape, &x), Err(Error::State(_))));
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let mut rng = rng_for(3, &[]);
        let mut s = Sequential::new(vec![
            Layer::Dense(Dense::he_uniform(3, 4, &mut rng)),
            Layer::BatchNorm(BatchNorm::new(4)),
            Layer::Relu,
            Layer::Dense(Dense::glorot_uniform(4, 2, &mut rng)),
            Layer::Softmax,
        ])
        .unwrap();
        let x = mat(3, 3, &[0.1, 0.2, -0.3, 1.0, -1.0, 0.5, 0.3, 0.3, 0.9]);
        let (y, tape) = s.forward(&x, Mode::Train).unwrap();
        let (grads, dx) = s.backward(&tape, &Tensor::zeros(y.shape())).unwrap();
        assert!(grads.iter().all(|g| g.data().iter().all(|&v| v == 0.0)));
        assert!(dx.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn softmax_rows_sum_to_one_and_shift_invariant() {
        let x = mat(2, 3, &[1., 2., 3., -500., 0., 500.]);
        let y = softmax_rows(&x);
        for r in 0..2 {
            assert!((y.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let shifted = softmax_rows(&x.map(|v| v + 17.25));
        for (a, b) in y.data().iter().zip(shifted.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn batchnorm_train_normalizes() {
        let mut bn = Sequential::new(vec![Layer::BatchNorm(BatchNorm::new(3))]).unwrap();
        let mut rng = rng_for(11, &[]);
        let data: Vec<f64> = (0..3 * 64).map(|_| rng.random_range(-40.0..60.0)).collect();
        let x = mat(64, 3, &data);
        let (y, _) = bn.forward(&x, Mode::Train).unwrap();
        let mean = y.sum_rows().scale(1.0 / 64.0);
        for j in 0..3 {
            assert!(mean.data()[j].abs() < 1e-9);
            let var: f64 = (0..64).map(|r| y.get(r, j).powi(2)).sum::<f64>() / 64.0;
            assert!((var - 1.0).abs() < 1e-6, "var {var}");
        }
    }

    #[test]
    fn batchnorm_eval_is_fixed_affine() {
        let mut bn = BatchNorm::new(2);
        bn.running_mean = Tensor::vector(vec![1.0, -1.0]);
        bn.running_var = Tensor::vector(vec![4.0, 0.25]);
        bn.gamma = Tensor::vector(vec![2.0, 1.0]);
        bn.beta = Tensor::vector(vec![0.5, 0.0]);
        let s = Sequential::new(vec![Layer::BatchNorm(bn)]).unwrap();
        let x = mat(1, 2, &[3.0, 0.0]);
        let y1 = s.infer(&x).unwrap();
        let y2 = s.infer(&x).unwrap();
        assert_eq!(y1, y2);
        let e0 = 2.0 * (3.0 - 1.0) / (4.0 + BATCHNORM_EPS).sqrt() + 0.5;
        assert!((y1.data()[0] - e0).abs() < 1e-12);
    }
}
