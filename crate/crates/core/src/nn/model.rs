//! Model composition: encoder, classifier head, and the optional
//! projector / predictor / momentum copies used during pre-training.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layers::{BatchNorm, Dense, Layer, Mode, Sequential, Tape};
use crate::rng::{rng_for, stream, Rng};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PretrainMethod {
    SimClr,
    Byol,
    SimSiam,
}

impl PretrainMethod {
    pub fn has_predictor(self) -> bool {
        !matches!(self, PretrainMethod::SimClr)
    }

    pub fn has_momentum(self) -> bool {
        matches!(self, PretrainMethod::Byol)
    }

    pub fn name(self) -> &'static str {
        match self {
            PretrainMethod::SimClr => "simclr",
            PretrainMethod::Byol => "byol",
            PretrainMethod::SimSiam => "simsiam",
        }
    }
}

/// Classifier head depth: `C` is a single dense+softmax layer, `C1`..`C3`
/// add one to three hidden ReLU layers in front of it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum HeadVariant {
    #[default]
    #[serde(rename = "c")]
    C,
    #[serde(rename = "c-1")]
    C1,
    #[serde(rename = "c-2")]
    C2,
    #[serde(rename = "c-3")]
    C3,
}

impl HeadVariant {
    pub fn hidden_layers(self) -> usize {
        match self {
            HeadVariant::C => 0,
            HeadVariant::C1 => 1,
            HeadVariant::C2 => 2,
            HeadVariant::C3 => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectionConfig {
    pub method: PretrainMethod,
    /// Width of both projector layers.
    pub projector_dim: usize,
    /// Predictor bottleneck width; `None` means `projector_dim / 4`.
    #[serde(default)]
    pub predictor_hidden: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    pub input_dim: usize,
    #[serde(default = "default_encoder_widths")]
    pub encoder_widths: Vec<usize>,
    #[serde(default = "default_representation_dim")]
    pub representation_dim: usize,
    #[serde(default)]
    pub head: HeadVariant,
    /// Width of hidden head layers; defaults to the representation width.
    #[serde(default)]
    pub head_hidden_width: Option<usize>,
    #[serde(default = "default_classes")]
    pub classes: usize,
    #[serde(default)]
    pub projection: Option<ProjectionConfig>,
}

fn default_encoder_widths() -> Vec<usize> {
    vec![128, 64]
}

fn default_representation_dim() -> usize {
    64
}

fn default_classes() -> usize {
    10
}

impl ArchConfig {
    pub fn new(input_dim: usize, classes: usize) -> Self {
        ArchConfig {
            input_dim,
            encoder_widths: default_encoder_widths(),
            representation_dim: default_representation_dim(),
            head: HeadVariant::C,
            head_hidden_width: None,
            classes,
            projection: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut dims = vec![self.input_dim, self.representation_dim, self.classes];
        dims.extend(&self.encoder_widths);
        dims.extend(self.head_hidden_width);
        if let Some(p) = &self.projection {
            dims.push(p.projector_dim);
            dims.extend(p.predictor_hidden);
        }
        if dims.contains(&0) {
            return Err(Error::invalid(format!("architecture has a nonpositive dimension: {self:?}")));
        }
        Ok(())
    }

    fn predictor_hidden(&self) -> usize {
        self.projection
            .as_ref()
            .map(|p| p.predictor_hidden.unwrap_or((p.projector_dim / 4).max(1)))
            .unwrap_or(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    /// `x → h`
    Encoder,
    /// `x → h → class probabilities`
    Classifier,
    /// `x → h → z`
    Projector,
    /// `z → p`; the input is a projection, not a raw sample.
    Predictor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub arch: ArchConfig,
    pub encoder: Sequential,
    pub classifier: Sequential,
    pub projector: Option<Sequential>,
    pub predictor: Option<Sequential>,
    pub momentum_encoder: Option<Sequential>,
    pub momentum_projector: Option<Sequential>,
}

/// Gradients for every part of a [`ModelParams`], aligned with each
/// part's `parameters()`. Parts off the active branch, and the momentum
/// copies, hold zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub encoder: Vec<Tensor>,
    pub classifier: Vec<Tensor>,
    pub projector: Option<Vec<Tensor>>,
    pub predictor: Option<Vec<Tensor>>,
    pub momentum_encoder: Option<Vec<Tensor>>,
    pub momentum_projector: Option<Vec<Tensor>>,
}

impl ModelGrads {
    pub fn all(&self) -> impl Iterator<Item = &Tensor> {
        self.encoder
            .iter()
            .chain(&self.classifier)
            .chain(self.projector.iter().flatten())
            .chain(self.predictor.iter().flatten())
            .chain(self.momentum_encoder.iter().flatten())
            .chain(self.momentum_projector.iter().flatten())
    }
}

#[derive(Debug, Clone)]
pub struct ModelTape {
    branch: Branch,
    first: Tape,
    second: Option<Tape>,
}

fn encoder_stack(arch: &ArchConfig, rng: &mut Rng) -> Sequential {
    let mut layers = Vec::new();
    let mut width = arch.input_dim;
    for &w in arch.encoder_widths.iter().chain(std::iter::once(&arch.representation_dim)) {
        layers.push(Layer::Dense(Dense::he_uniform(width, w, rng)));
        layers.push(Layer::Relu);
        width = w;
    }
    Sequential { layers }
}

/// A freshly initialized classifier head for `arch`.
pub fn build_classifier(arch: &ArchConfig, rng: &mut Rng) -> Sequential {
    let hidden = arch.head_hidden_width.unwrap_or(arch.representation_dim);
    let mut layers = Vec::new();
    let mut width = arch.representation_dim;
    for _ in 0..arch.head.hidden_layers() {
        layers.push(Layer::Dense(Dense::he_uniform(width, hidden, rng)));
        layers.push(Layer::Relu);
        width = hidden;
    }
    layers.push(Layer::Dense(Dense::glorot_uniform(width, arch.classes, rng)));
    layers.push(Layer::Softmax);
    Sequential { layers }
}

fn projector_stack(arch: &ArchConfig, proj: &ProjectionConfig, rng: &mut Rng) -> Sequential {
    let p = proj.projector_dim;
    let rep = arch.representation_dim;
    let layers = match proj.method {
        PretrainMethod::SimClr => vec![
            Layer::Dense(Dense::he_uniform(rep, p, rng)),
            Layer::Relu,
            Layer::Dense(Dense::glorot_uniform(p, p, rng)),
        ],
        PretrainMethod::Byol | PretrainMethod::SimSiam => vec![
            Layer::Dense(Dense::he_uniform(rep, p, rng)),
            Layer::BatchNorm(BatchNorm::new(p)),
            Layer::Relu,
            Layer::Dense(Dense::glorot_uniform(p, p, rng)),
            Layer::BatchNorm(BatchNorm::new(p)),
        ],
    };
    Sequential { layers }
}

fn predictor_stack(arch: &ArchConfig, proj: &ProjectionConfig, rng: &mut Rng) -> Sequential {
    let p = proj.projector_dim;
    let q = arch.predictor_hidden();
    Sequential {
        layers: vec![
            Layer::Dense(Dense::he_uniform(p, q, rng)),
            Layer::BatchNorm(BatchNorm::new(q)),
            Layer::Relu,
            Layer::Dense(Dense::glorot_uniform(q, p, rng)),
        ],
    }
}

/// Each part draws from its own seed stream, so e.g. adding a projector
/// does not change the encoder's initial weights.
pub fn build_model(arch: &ArchConfig, seed: u64) -> Result<ModelParams> {
    arch.validate()?;
    let part_rng = |part: u64| rng_for(seed, &[stream::INIT, part]);
    let encoder = encoder_stack(arch, &mut part_rng(0));
    let classifier = build_classifier(arch, &mut part_rng(1));
    let (mut projector, mut predictor, mut momentum_encoder, mut momentum_projector) = (None, None, None, None);
    if let Some(proj) = &arch.projection {
        let g = projector_stack(arch, proj, &mut part_rng(2));
        if proj.method.has_predictor() {
            predictor = Some(predictor_stack(arch, proj, &mut part_rng(3)));
        }
        if proj.method.has_momentum() {
            momentum_encoder = Some(encoder.clone());
            momentum_projector = Some(g.clone());
        }
        projector = Some(g);
    }
    Ok(ModelParams {
        arch: arch.clone(),
        encoder,
        classifier,
        projector,
        predictor,
        momentum_encoder,
        momentum_projector,
    })
}

impl ModelParams {
    /// Replaces the classifier head, e.g. when joining a pre-trained
    /// encoder with fresh heads.
    pub fn with_classifier(mut self, classifier: Sequential) -> Result<Self> {
        if classifier.in_dim() != self.encoder.out_dim() {
            return Err(Error::dim("classifier input", format!("{:?}", self.encoder.out_dim()), format!("{:?}", classifier.in_dim())));
        }
        self.classifier = classifier;
        Ok(self)
    }

    /// Drops projector, predictor and momentum copies.
    pub fn without_pretraining_heads(mut self) -> Self {
        self.projector = None;
        self.predictor = None;
        self.momentum_encoder = None;
        self.momentum_projector = None;
        self.arch.projection = None;
        self
    }

    /// The stack that consumes the branch input.
    fn first_stage(&mut self, branch: Branch) -> Result<&mut Sequential> {
        match branch {
            Branch::Predictor => self
                .predictor
                .as_mut()
                .ok_or_else(|| Error::State("model has no predictor".into())),
            _ => Ok(&mut self.encoder),
        }
    }

    pub fn forward(&mut self, branch: Branch, batch: &Tensor, mode: Mode) -> Result<(Tensor, ModelTape)> {
        let (out, first) = self.first_stage(branch)?.forward(batch, mode)?;
        let (out, second) = match branch {
            Branch::Classifier => {
                let (y, t) = self.classifier.forward(&out, mode)?;
                (y, Some(t))
            }
            Branch::Projector => {
                let proj = self.projector.as_mut().ok_or_else(|| Error::State("model has no projector".into()))?;
                let (y, t) = proj.forward(&out, mode)?;
                (y, Some(t))
            }
            Branch::Encoder | Branch::Predictor => (out, None),
        };
        Ok((out, ModelTape { branch, first, second }))
    }

    /// Class probabilities in eval mode.
    pub fn predict_proba(&self, batch: &Tensor) -> Result<Tensor> {
        let h = self.encoder.infer(batch)?;
        self.classifier.infer(&h)
    }

    /// Representations in eval mode.
    pub fn encode(&self, batch: &Tensor) -> Result<Tensor> {
        self.encoder.infer(batch)
    }

    pub fn zero_grads(&self) -> ModelGrads {
        ModelGrads {
            encoder: self.encoder.zero_grads(),
            classifier: self.classifier.zero_grads(),
            projector: self.projector.as_ref().map(Sequential::zero_grads),
            predictor: self.predictor.as_ref().map(Sequential::zero_grads),
            momentum_encoder: self.momentum_encoder.as_ref().map(Sequential::zero_grads),
            momentum_projector: self.momentum_projector.as_ref().map(Sequential::zero_grads),
        }
    }

    /// Backpropagates a gradient w.r.t. the branch output recorded in `tape`.
    pub fn backward(&self, tape: &ModelTape, grad: &Tensor) -> Result<ModelGrads> {
        let mut grads = self.zero_grads();
        match tape.branch {
            Branch::Encoder => {
                grads.encoder = self.encoder.backward(&tape.first, grad)?.0;
            }
            Branch::Classifier | Branch::Projector => {
                let second = tape
                    .second
                    .as_ref()
                    .ok_or_else(|| Error::State("tape is missing the head pass".into()))?;
                let (head_grads, dh) = if tape.branch == Branch::Classifier {
                    self.classifier.backward(second, grad)?
                } else {
                    let proj = self.projector.as_ref().ok_or_else(|| Error::State("model has no projector".into()))?;
                    proj.backward(second, grad)?
                };
                if tape.branch == Branch::Classifier {
                    grads.classifier = head_grads;
                } else {
                    grads.projector = Some(head_grads);
                }
                grads.encoder = self.encoder.backward(&tape.first, &dh)?.0;
            }
            Branch::Predictor => {
                let pred = self.predictor.as_ref().ok_or_else(|| Error::State("model has no predictor".into()))?;
                grads.predictor = Some(pred.backward(&tape.first, grad)?.0);
            }
        }
        Ok(grads)
    }

    /// Every stored tensor with a stable dotted name, e.g.
    /// `"encoder.0.weight"`.
    pub fn named_state(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        let parts: [(&str, Option<&Sequential>); 6] = [
            ("encoder", Some(&self.encoder)),
            ("classifier", Some(&self.classifier)),
            ("projector", self.projector.as_ref()),
            ("predictor", self.predictor.as_ref()),
            ("momentum_encoder", self.momentum_encoder.as_ref()),
            ("momentum_projector", self.momentum_projector.as_ref()),
        ];
        for (name, part) in parts {
            if let Some(seq) = part {
                out.extend(seq.named_state().into_iter().map(|(n, t)| (format!("{name}.{n}"), t)));
            }
        }
        out
    }

    pub fn state_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.encoder.state_mut();
        out.extend(self.classifier.state_mut());
        for part in [
            &mut self.projector,
            &mut self.predictor,
            &mut self.momentum_encoder,
            &mut self.momentum_projector,
        ]
        .into_iter()
        .flatten()
        {
            out.extend(part.state_mut());
        }
        out
    }

    /// Trainable scalars in the encoder and classifier, i.e. the model a
    /// federated client exchanges.
    pub fn transmitted_size(&self) -> usize {
        self.encoder.num_parameters() + self.classifier.num_parameters()
    }

    pub fn same_architecture(&self, other: &ModelParams) -> bool {
        let a = self.named_state();
        let b = other.named_state();
        a.len() == b.len() && a.iter().zip(&b).all(|((na, ta), (nb, tb))| na == nb && ta.same_shape(tb))
    }
}
