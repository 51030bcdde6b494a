//! Transfer-learning classifier: convolutional backbone, global average
//! pooling, and a dense head ending in one sigmoid unit.

mod archive;
pub mod layers;
pub mod zoo;

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, Array4, ArrayD, ArrayViewD, ArrayViewMutD, Axis};
use rand::RngCore;

pub use archive::{read_archive, write_archive, NamedTensorArchive};
use layers::{
    avg_pool2, avg_pool2_backward, dropout_mask, global_average_pool, global_average_pool_backward, relu,
    relu_backward, sigmoid, Conv2d, Dense,
};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BackboneName {
    EfficientNetB0,
    MobileNet,
    DenseNet121,
    NasNetMobile,
    ToyCnn,
}

impl BackboneName {
    pub const ALL: [BackboneName; 5] = [
        BackboneName::EfficientNetB0,
        BackboneName::MobileNet,
        BackboneName::DenseNet121,
        BackboneName::NasNetMobile,
        BackboneName::ToyCnn,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BackboneName::EfficientNetB0 => "efficientnet_b0",
            BackboneName::MobileNet => "mobilenet",
            BackboneName::DenseNet121 => "densenet121",
            BackboneName::NasNetMobile => "nasnet_mobile",
            BackboneName::ToyCnn => "toy_cnn",
        }
    }

    /// Input size the generators feed each reference backbone.
    pub fn reference_input_size(self) -> Option<(usize, usize)> {
        match self {
            BackboneName::EfficientNetB0 | BackboneName::MobileNet | BackboneName::DenseNet121 => Some((224, 224)),
            BackboneName::NasNetMobile => Some((299, 299)),
            BackboneName::ToyCnn => None,
        }
    }

    pub fn reference_feature_dim(self) -> Option<usize> {
        match self {
            BackboneName::EfficientNetB0 => Some(1280),
            BackboneName::MobileNet | BackboneName::DenseNet121 => Some(1024),
            BackboneName::NasNetMobile => Some(1056),
            BackboneName::ToyCnn => None,
        }
    }
}

impl fmt::Display for BackboneName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BackboneName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BackboneName::ALL
            .into_iter()
            .find(|b| b.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown backbone '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Weights {
    PretrainedImagenet,
    Random,
}

impl Weights {
    pub fn as_str(self) -> &'static str {
        match self {
            Weights::PretrainedImagenet => "pretrained_imagenet",
            Weights::Random => "random",
        }
    }
}

impl FromStr for Weights {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pretrained_imagenet" => Ok(Weights::PretrainedImagenet),
            "random" => Ok(Weights::Random),
            _ => Err(Error::InvalidArgument(format!("unknown weights '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BackboneSpec {
    pub name: BackboneName,
    pub input_size: (usize, usize),
    pub feature_dim: usize,
    pub weights: Weights,
    pub trainable: bool,
}

/// Channel widths of the first two toy blocks; the third produces `feature_dim`.
pub const TOY_CHANNELS: [usize; 2] = [8, 16];
const TOY_BLOCKS: usize = 3;

impl BackboneSpec {
    /// One of the reference backbones with its standard input and feature sizes.
    pub fn reference(name: BackboneName) -> Option<BackboneSpec> {
        Some(BackboneSpec {
            name,
            input_size: name.reference_input_size()?,
            feature_dim: name.reference_feature_dim()?,
            weights: Weights::PretrainedImagenet,
            trainable: true,
        })
    }

    /// Three conv blocks (8, 16, `feature_dim` channels), randomly initialized.
    pub fn toy(input_size: (usize, usize), feature_dim: usize) -> BackboneSpec {
        BackboneSpec {
            name: BackboneName::ToyCnn,
            input_size,
            feature_dim,
            weights: Weights::Random,
            trainable: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 {
            return Err(Error::InvalidArgument("feature_dim must be positive".into()));
        }
        match self.name.reference_input_size() {
            Some(size) if size != self.input_size => Err(Error::InvalidArgument(format!(
                "{} expects input {}x{}, got {}x{}",
                self.name, size.0, size.1, self.input_size.0, self.input_size.1
            ))),
            Some(_) => Ok(()),
            None => {
                let min = 1 << TOY_BLOCKS;
                if self.input_size.0 < min || self.input_size.1 < min {
                    return Err(Error::ShapeMismatch(format!(
                        "toy_cnn needs inputs of at least {min}x{min}"
                    )));
                }
                Ok(())
            }
        }
    }

    /// Trainable parameters of the backbone alone (zero when frozen).
    pub fn trainable_param_count(&self) -> usize {
        if !self.trainable {
            return 0;
        }
        match self.name {
            BackboneName::EfficientNetB0 => zoo::efficientnet_b0().trainable,
            BackboneName::MobileNet => zoo::mobilenet_v1().trainable,
            BackboneName::DenseNet121 => zoo::densenet121().trainable,
            BackboneName::NasNetMobile => zoo::nasnet_mobile().trainable,
            BackboneName::ToyCnn => {
                let mut prev = 3;
                let mut total = 0;
                for ch in TOY_CHANNELS.into_iter().chain([self.feature_dim]) {
                    total += 9 * prev * ch + ch;
                    prev = ch;
                }
                total
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadConfig {
    pub dense_widths: Vec<usize>,
    pub dropout_rate: f64,
    /// Multiplier on the summed squared hidden-layer kernel weights.
    pub l2_weight: f64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig {
            dense_widths: vec![128, 64],
            dropout_rate: 0.5,
            l2_weight: 0.01,
        }
    }
}

impl HeadConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dense_widths.contains(&0) {
            return Err(Error::InvalidArgument("dense widths must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidArgument("dropout rate must be in [0, 1)".into()));
        }
        if !(self.l2_weight >= 0.0 && self.l2_weight.is_finite()) {
            return Err(Error::InvalidArgument("l2 weight must be non-negative".into()));
        }
        Ok(())
    }

    /// Kernels plus biases of the hidden layers and the single output unit.
    pub fn param_count(&self, feature_dim: usize) -> usize {
        let mut prev = feature_dim;
        let mut total = 0;
        for &w in self.dense_widths.iter().chain([&1]) {
            total += prev * w + w;
            prev = w;
        }
        total
    }
}

/// Trainable parameter count of backbone plus head, without building weights.
pub fn architecture_trainable_params(backbone: &BackboneSpec, head: &HeadConfig) -> usize {
    backbone.trainable_param_count() + head.param_count(backbone.feature_dim)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    Train,
    #[default]
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel {
    pub backbone: BackboneSpec,
    pub head: HeadConfig,
    pub mode: Mode,
    convs: Vec<Conv2d>,
    hidden: Vec<Dense>,
    output: Dense,
}

/// Assemble the classifier with seeded random initialization.
pub fn build_classifier(backbone: &BackboneSpec, head: &HeadConfig, seed: u64) -> Result<ClassifierModel> {
    backbone.validate()?;
    head.validate()?;
    if backbone.name != BackboneName::ToyCnn {
        return Err(Error::WeightsUnavailable {
            backbone: backbone.name.to_string(),
            message: "only toy_cnn has an executable implementation in this build; \
                      reference backbones are available for parameter accounting"
                .into(),
        });
    }
    if backbone.weights == Weights::PretrainedImagenet {
        return Err(Error::WeightsUnavailable {
            backbone: backbone.name.to_string(),
            message: "toy_cnn has no pretrained weights; use weights = \"random\"".into(),
        });
    }
    let mut rng = rng::seeded(seed);
    let mut convs = Vec::with_capacity(TOY_BLOCKS);
    let mut prev = 3;
    for ch in TOY_CHANNELS.into_iter().chain([backbone.feature_dim]) {
        convs.push(Conv2d::glorot(prev, ch, &mut rng));
        prev = ch;
    }
    let mut hidden = Vec::new();
    let mut prev = backbone.feature_dim;
    for &w in &head.dense_widths {
        hidden.push(Dense::glorot(prev, w, &mut rng));
        prev = w;
    }
    let output = Dense::glorot(prev, 1, &mut rng);
    Ok(ClassifierModel {
        backbone: *backbone,
        head: head.clone(),
        mode: Mode::Eval,
        convs,
        hidden,
        output,
    })
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    input_dim: (usize, usize, usize, usize),
    blocks: Vec<BlockTrace>,
    /// Output of the last convolutional block, `(batch, feature_dim, h, w)`.
    pub features: Array4<f64>,
    pooled: Array2<f64>,
    dense: Vec<DenseTrace>,
    logits: Array1<f64>,
    pub probabilities: Array1<f64>,
}

#[derive(Debug, Clone)]
struct BlockTrace {
    cols: Vec<Array2<f64>>,
    pre: Array4<f64>,
}

#[derive(Debug, Clone)]
struct DenseTrace {
    input: Array2<f64>,
    pre: Array2<f64>,
    mask: Option<Array2<f64>>,
}

/// Gradients of a scalar objective.
#[derive(Debug, Clone)]
pub struct Gradients {
    /// Aligned with [`ClassifierModel::named_params`].
    pub params: Vec<ArrayD<f64>>,
    pub input: Array4<f64>,
    pub features: Array4<f64>,
}

impl ClassifierModel {
    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    /// Parameters in canonical order with stable names.
    pub fn named_params(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        let mut out = Vec::new();
        for (i, c) in self.convs.iter().enumerate() {
            out.push((format!("backbone.conv{i}.kernel"), c.kernel.view().into_dyn()));
            out.push((format!("backbone.conv{i}.bias"), c.bias.view().into_dyn()));
        }
        for (i, d) in self.hidden.iter().enumerate() {
            out.push((format!("head.dense{i}.kernel"), d.kernel.view().into_dyn()));
            out.push((format!("head.dense{i}.bias"), d.bias.view().into_dyn()));
        }
        out.push(("head.output.kernel".into(), self.output.kernel.view().into_dyn()));
        out.push(("head.output.bias".into(), self.output.bias.view().into_dyn()));
        out
    }

    pub fn params_mut(&mut self) -> Vec<ArrayViewMutD<'_, f64>> {
        let mut out = Vec::new();
        for c in &mut self.convs {
            out.push(c.kernel.view_mut().into_dyn());
            out.push(c.bias.view_mut().into_dyn());
        }
        for d in &mut self.hidden {
            out.push(d.kernel.view_mut().into_dyn());
            out.push(d.bias.view_mut().into_dyn());
        }
        out.push(self.output.kernel.view_mut().into_dyn());
        out.push(self.output.bias.view_mut().into_dyn());
        out
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        self.backbone.trainable || !name.starts_with("backbone.")
    }

    /// Names of the hidden dense kernels carrying the L2 penalty.
    fn is_regularized(name: &str) -> bool {
        name.starts_with("head.dense") && name.ends_with(".kernel")
    }

    /// `l2_weight * sum(w^2)` over the hidden dense kernels.
    pub fn l2_penalty(&self) -> f64 {
        self.head.l2_weight
            * self
                .hidden
                .iter()
                .map(|d| d.kernel.iter().map(|w| w * w).sum::<f64>())
                .sum::<f64>()
    }

    /// Add the penalty's gradient to `grads`.
    pub fn add_l2_gradient(&self, grads: &mut Gradients) {
        let names = self.named_params();
        for ((name, value), grad) in names.iter().zip(grads.params.iter_mut()) {
            if Self::is_regularized(name) {
                grad.scaled_add(2.0 * self.head.l2_weight, value);
            }
        }
    }

    fn check_input(&self, x: &Array4<f64>) -> Result<()> {
        let (_, c, h, w) = x.dim();
        if c != 3 || (h, w) != self.backbone.input_size {
            return Err(Error::ShapeMismatch(format!(
                "expected (N, 3, {}, {}), got {:?}",
                self.backbone.input_size.0,
                self.backbone.input_size.1,
                x.dim()
            )));
        }
        Ok(())
    }

    /// Convolutional feature maps, `(batch, feature_dim, h, w)`.
    pub fn features(&self, x: &Array4<f64>) -> Result<Array4<f64>> {
        self.check_input(x)?;
        let mut a = x.clone();
        for conv in &self.convs {
            a = avg_pool2(&relu(&conv.forward(&a).0));
        }
        Ok(a)
    }

    /// Head probabilities from feature maps, dropout disabled.
    pub fn head_probability(&self, features: &Array4<f64>) -> Array1<f64> {
        let mut h = global_average_pool(features);
        for d in &self.hidden {
            h = relu(&d.forward(&h));
        }
        self.output.forward(&h).column(0).mapv(sigmoid)
    }

    /// Probabilities in `(0, 1)`, one per image. Dropout is applied only in
    /// [`Mode::Train`], drawing its masks from `rng`.
    pub fn forward(&self, x: &Array4<f64>, mode: Mode, rng: &mut dyn RngCore) -> Result<Array1<f64>> {
        Ok(self.trace(x, mode, rng)?.probabilities)
    }

    /// Deterministic eval-mode forward.
    pub fn predict(&self, x: &Array4<f64>) -> Result<Array1<f64>> {
        Ok(self.trace(x, Mode::Eval, &mut rng::seeded(0))?.probabilities)
    }

    pub fn trace(&self, x: &Array4<f64>, mode: Mode, rng: &mut dyn RngCore) -> Result<ForwardTrace> {
        self.check_input(x)?;
        let mut blocks = Vec::with_capacity(self.convs.len());
        let mut a = x.clone();
        for conv in &self.convs {
            let (pre, cols) = conv.forward(&a);
            a = avg_pool2(&relu(&pre));
            blocks.push(BlockTrace { cols, pre });
        }
        let features = a;
        let pooled = global_average_pool(&features);
        let mut h = pooled.clone();
        let mut dense = Vec::with_capacity(self.hidden.len());
        for d in &self.hidden {
            let pre = d.forward(&h);
            let mut out = relu(&pre);
            let mask = (mode == Mode::Train && self.head.dropout_rate > 0.0)
                .then(|| dropout_mask(out.dim(), self.head.dropout_rate, &mut *rng));
            if let Some(m) = &mask {
                out *= m;
            }
            dense.push(DenseTrace { input: h, pre, mask });
            h = out;
        }
        let logits = self.output.forward(&h).column(0).to_owned();
        let probabilities = logits.mapv(sigmoid);
        dense.push(DenseTrace {
            input: h,
            pre: Array2::zeros((0, 0)),
            mask: None,
        });
        Ok(ForwardTrace {
            input_dim: x.dim(),
            blocks,
            features,
            pooled,
            dense,
            logits,
            probabilities,
        })
    }

    /// Backpropagate `d_prob` (derivative of the objective w.r.t. each
    /// probability) through the whole network.
    pub fn backward(&self, trace: &ForwardTrace, d_prob: &Array1<f64>) -> Gradients {
        let p = &trace.probabilities;
        let d_logit = d_prob * &p.mapv(|v| v * (1.0 - v));
        let mut grads_rev: Vec<ArrayD<f64>> = Vec::new();

        let last = trace.dense.last().expect("output trace");
        let d_out = d_logit.insert_axis(Axis(1));
        let (mut dh, dk, db) = self.output.backward(&last.input, &d_out);
        grads_rev.push(db.into_dyn());
        grads_rev.push(dk.into_dyn());

        for (d, t) in self.hidden.iter().zip(&trace.dense).rev() {
            if let Some(m) = &t.mask {
                dh *= m;
            }
            let dpre = relu_backward(&t.pre, &dh);
            let (dx, dk, db) = d.backward(&t.input, &dpre);
            grads_rev.push(db.into_dyn());
            grads_rev.push(dk.into_dyn());
            dh = dx;
        }

        let (_, _, fh, fw) = trace.features.dim();
        let d_features = global_average_pool_backward(&dh, fh, fw);
        let mut da = d_features.clone();
        for (conv, t) in self.convs.iter().zip(&trace.blocks).rev() {
            let dpost = avg_pool2_backward(&da, t.pre.dim());
            let dpre = relu_backward(&t.pre, &dpost);
            let (dx, dk, db) = conv.backward(&t.cols, &dpre);
            grads_rev.push(db.into_dyn());
            grads_rev.push(dk.into_dyn());
            da = dx;
        }
        debug_assert_eq!(da.dim(), trace.input_dim);
        grads_rev.reverse();
        Gradients {
            params: grads_rev,
            input: da,
            features: d_features,
        }
    }

    pub fn logits(trace: &ForwardTrace) -> &Array1<f64> {
        &trace.logits
    }

    pub fn pooled(trace: &ForwardTrace) -> &Array2<f64> {
        &trace.pooled
    }

    /// Zero every head weight and bias so the output is `sigmoid(0)`.
    pub fn zero_head(&mut self) {
        for d in &mut self.hidden {
            d.kernel.fill(0.0);
            d.bias.fill(0.0);
        }
        self.output.kernel.fill(0.0);
        self.output.bias.fill(0.0);
    }
}

pub fn trainable_param_count(model: &ClassifierModel) -> usize {
    model
        .named_params()
        .iter()
        .filter(|(name, _)| model.is_trainable(name))
        .map(|(_, v)| v.len())
        .sum()
}
