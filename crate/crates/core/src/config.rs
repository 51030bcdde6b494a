//! Run configuration: a flat, typed key-value file with section prefixes.
//!
//! ```text
//! seed = 42
//! data.annotations = "scenes/annotations.csv"
//! train.initial_lr = 0.001
//! head.dense_widths = [128, 64]
//! ```
//!
//! The syntax is TOML dotted keys, so full TOML tables are accepted as well.
//! Unknown keys are rejected. Relative paths resolve against the directory of
//! the config file.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::augment::{AugmentationPolicy, BatchSpec, ClassMode, FillMode};
use crate::error::{Error, Result};
use crate::ingest::SplitOptions;
use crate::model::{BackboneName, BackboneSpec, HeadConfig, Weights};
use crate::train::{Loss, Optimizer, TrainingConfig};

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Directory of XML files, a CSV file, or a single XML file.
    pub annotations: Option<PathBuf>,
    /// Held-out scenes; their patches form the test partition.
    pub test_annotations: Option<PathBuf>,
    /// Where patches are written; relative to the output directory when not
    /// absolute.
    pub patch_dir: PathBuf,
    pub split_fraction: f64,
    pub stratified: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            annotations: None,
            test_annotations: None,
            patch_dir: PathBuf::from("patches"),
            split_fraction: 0.2,
            stratified: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub enabled: bool,
    pub rescale: f64,
    pub shear_range: f64,
    pub rotation_range_deg: f64,
    pub width_shift_range: f64,
    pub height_shift_range: f64,
    pub horizontal_flip: bool,
    pub vertical_flip: bool,
    pub fill_mode: String,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        let p = AugmentationPolicy::default();
        AugmentConfig {
            enabled: true,
            rescale: p.rescale,
            shear_range: p.shear_range,
            rotation_range_deg: p.rotation_range_deg,
            width_shift_range: p.width_shift_range,
            height_shift_range: p.height_shift_range,
            horizontal_flip: p.horizontal_flip,
            vertical_flip: p.vertical_flip,
            fill_mode: "nearest".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BatchConfig {
    /// Defaults to the backbone's reference size.
    pub target_height: Option<usize>,
    pub target_width: Option<usize>,
    pub batch_size: usize,
    pub class_mode: String,
    pub shuffle: bool,
}

impl Default for BatchConfig {
    fn default() -> Self {
        BatchConfig {
            target_height: None,
            target_width: None,
            batch_size: 128,
            class_mode: "binary".into(),
            shuffle: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub backbone: String,
    pub weights: String,
    pub trainable: bool,
    /// Only meaningful for `toy_cnn`; reference backbones fix their own.
    pub feature_dim: Option<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            backbone: BackboneName::DenseNet121.as_str().into(),
            weights: Weights::PretrainedImagenet.as_str().into(),
            trainable: true,
            feature_dim: None,
        }
    }
}

/// Feature width of `toy_cnn` when none is configured.
pub const TOY_DEFAULT_FEATURE_DIM: usize = 32;
/// Input edge of `toy_cnn` when no target size is configured.
pub const TOY_DEFAULT_INPUT: usize = 32;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadSection {
    pub dense_widths: Vec<usize>,
    pub dropout_rate: f64,
    pub l2_weight: f64,
}

impl Default for HeadSection {
    fn default() -> Self {
        let h = HeadConfig::default();
        HeadSection {
            dense_widths: h.dense_widths,
            dropout_rate: h.dropout_rate,
            l2_weight: h.l2_weight,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub initial_lr: f64,
    pub decay_rate: f64,
    pub decay_every_epochs: usize,
    pub staircase: bool,
    pub epochs: usize,
    pub loss: String,
    pub optimizer: String,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainingConfig::default();
        TrainSection {
            initial_lr: t.initial_lr,
            decay_rate: t.decay_rate,
            decay_every_epochs: t.decay_every_epochs,
            staircase: t.staircase,
            epochs: t.epochs,
            loss: "binary_cross_entropy".into(),
            optimizer: "adam".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSection {
    pub threshold: f64,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        EvaluateSection { threshold: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub data: DataConfig,
    pub augment: AugmentConfig,
    pub batch: BatchConfig,
    pub model: ModelConfig,
    pub head: HeadSection,
    pub train: TrainSection,
    pub evaluate: EvaluateSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            out: PathBuf::from("out"),
            data: DataConfig::default(),
            augment: AugmentConfig::default(),
            batch: BatchConfig::default(),
            model: ModelConfig::default(),
            head: HeadSection::default(),
            train: TrainSection::default(),
            evaluate: EvaluateSection::default(),
        }
    }
}

fn cfg_err(message: impl Into<String>) -> Error {
    Error::Config(message.into())
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    /// Parse config text; relative paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<RunConfig> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| cfg_err(e.message().to_string()))?;
        resolve(base, &mut cfg.out);
        if let Some(p) = cfg.data.annotations.as_mut() {
            resolve(base, p);
        }
        if let Some(p) = cfg.data.test_annotations.as_mut() {
            resolve(base, p);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path).map_err(|e| cfg_err(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new(""));
        let base = std::env::current_dir()
            .map(|cwd| cwd.join(base))
            .unwrap_or_else(|_| base.to_path_buf());
        Self::parse(&text, &crate::ingest::normalize_path(&base))
    }

    /// Check every enum-valued and numeric field by building the typed configs.
    pub fn validate(&self) -> Result<()> {
        self.augmentation_policy()?
            .validate()
            .map_err(|e| cfg_err(e.to_string()))?;
        self.batch_spec()?.validate().map_err(|e| cfg_err(e.to_string()))?;
        self.backbone_spec()?.validate().map_err(|e| cfg_err(e.to_string()))?;
        self.head_config().validate().map_err(|e| cfg_err(e.to_string()))?;
        self.training_config()?.validate().map_err(|e| cfg_err(e.to_string()))?;
        if !(self.data.split_fraction > 0.0 && self.data.split_fraction < 1.0) {
            return Err(cfg_err("data.split_fraction must be in (0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.evaluate.threshold) {
            return Err(cfg_err("evaluate.threshold must be in [0, 1]"));
        }
        Ok(())
    }

    pub fn augmentation_policy(&self) -> Result<AugmentationPolicy> {
        let a = &self.augment;
        if a.fill_mode != "nearest" {
            return Err(cfg_err(format!(
                "augment.fill_mode '{}' unsupported (nearest only)",
                a.fill_mode
            )));
        }
        Ok(AugmentationPolicy {
            rescale: a.rescale,
            shear_range: a.shear_range,
            rotation_range_deg: a.rotation_range_deg,
            width_shift_range: a.width_shift_range,
            height_shift_range: a.height_shift_range,
            horizontal_flip: a.horizontal_flip,
            vertical_flip: a.vertical_flip,
            fill_mode: FillMode::Nearest,
            seed: self.seed,
        })
    }

    fn backbone_name(&self) -> Result<BackboneName> {
        self.model
            .backbone
            .parse()
            .map_err(|_| cfg_err(format!("unknown model.backbone '{}'", self.model.backbone)))
    }

    pub fn input_size(&self) -> Result<(usize, usize)> {
        let default = self
            .backbone_name()?
            .reference_input_size()
            .unwrap_or((TOY_DEFAULT_INPUT, TOY_DEFAULT_INPUT));
        Ok((
            self.batch.target_height.unwrap_or(default.0),
            self.batch.target_width.unwrap_or(default.1),
        ))
    }

    pub fn batch_spec(&self) -> Result<BatchSpec> {
        if self.batch.class_mode != "binary" {
            return Err(cfg_err(format!(
                "batch.class_mode '{}' unsupported",
                self.batch.class_mode
            )));
        }
        Ok(BatchSpec {
            target_size: self.input_size()?,
            batch_size: self.batch.batch_size,
            class_mode: ClassMode::Binary,
            shuffle: self.batch.shuffle,
            rescale: self.augment.rescale,
            seed: self.seed,
        })
    }

    pub fn backbone_spec(&self) -> Result<BackboneSpec> {
        let name = self.backbone_name()?;
        let weights: Weights = self
            .model
            .weights
            .parse()
            .map_err(|_| cfg_err(format!("unknown model.weights '{}'", self.model.weights)))?;
        let feature_dim = match (name.reference_feature_dim(), self.model.feature_dim) {
            (Some(d), Some(f)) if d != f => {
                return Err(cfg_err(format!("{name} has feature_dim {d}, config says {f}")));
            }
            (Some(d), _) => d,
            (None, f) => f.unwrap_or(TOY_DEFAULT_FEATURE_DIM),
        };
        Ok(BackboneSpec {
            name,
            input_size: self.input_size()?,
            feature_dim,
            weights,
            trainable: self.model.trainable,
        })
    }

    pub fn head_config(&self) -> HeadConfig {
        HeadConfig {
            dense_widths: self.head.dense_widths.clone(),
            dropout_rate: self.head.dropout_rate,
            l2_weight: self.head.l2_weight,
        }
    }

    pub fn training_config(&self) -> Result<TrainingConfig> {
        let t = &self.train;
        let loss = match t.loss.as_str() {
            "binary_cross_entropy" => Loss::BinaryCrossEntropy,
            other => return Err(cfg_err(format!("unknown train.loss '{other}'"))),
        };
        let optimizer = match t.optimizer.as_str() {
            "adam" => Optimizer::Adam,
            other => return Err(cfg_err(format!("unknown train.optimizer '{other}'"))),
        };
        Ok(TrainingConfig {
            initial_lr: t.initial_lr,
            decay_rate: t.decay_rate,
            decay_every_epochs: t.decay_every_epochs,
            staircase: t.staircase,
            epochs: t.epochs,
            batch_size: self.batch.batch_size,
            loss,
            optimizer,
            seed: self.seed,
        })
    }

    pub fn split_options(&self) -> SplitOptions {
        SplitOptions {
            fraction: self.data.split_fraction,
            seed: self.seed,
            stratified: self.data.stratified,
        }
    }

    /// Patch directory, resolved against the output directory.
    pub fn patch_dir(&self) -> PathBuf {
        self.out.join(&self.data.patch_dir)
    }

    /// Every key on its own `section.key = value` line, in a fixed order.
    /// Parsing the result yields an equal config.
    pub fn to_flat_text(&self) -> String {
        fn s(v: &str) -> String {
            toml::Value::String(v.to_string()).to_string()
        }
        fn p(v: &Path) -> String {
            s(&v.to_string_lossy())
        }
        fn f(v: f64) -> String {
            toml::Value::Float(v).to_string()
        }
        let mut lines: Vec<(String, String)> =
            vec![("seed".into(), self.seed.to_string()), ("out".into(), p(&self.out))];
        let d = &self.data;
        if let Some(a) = &d.annotations {
            lines.push(("data.annotations".into(), p(a)));
        }
        if let Some(a) = &d.test_annotations {
            lines.push(("data.test_annotations".into(), p(a)));
        }
        lines.push(("data.patch_dir".into(), p(&d.patch_dir)));
        lines.push(("data.split_fraction".into(), f(d.split_fraction)));
        lines.push(("data.stratified".into(), d.stratified.to_string()));
        let a = &self.augment;
        lines.extend([
            ("augment.enabled".into(), a.enabled.to_string()),
            ("augment.rescale".into(), f(a.rescale)),
            ("augment.shear_range".into(), f(a.shear_range)),
            ("augment.rotation_range_deg".into(), f(a.rotation_range_deg)),
            ("augment.width_shift_range".into(), f(a.width_shift_range)),
            ("augment.height_shift_range".into(), f(a.height_shift_range)),
            ("augment.horizontal_flip".into(), a.horizontal_flip.to_string()),
            ("augment.vertical_flip".into(), a.vertical_flip.to_string()),
            ("augment.fill_mode".into(), s(&a.fill_mode)),
        ]);
        let b = &self.batch;
        if let Some(h) = b.target_height {
            lines.push(("batch.target_height".into(), h.to_string()));
        }
        if let Some(w) = b.target_width {
            lines.push(("batch.target_width".into(), w.to_string()));
        }
        lines.extend([
            ("batch.batch_size".into(), b.batch_size.to_string()),
            ("batch.class_mode".into(), s(&b.class_mode)),
            ("batch.shuffle".into(), b.shuffle.to_string()),
        ]);
        let m = &self.model;
        lines.extend([
            ("model.backbone".into(), s(&m.backbone)),
            ("model.weights".into(), s(&m.weights)),
            ("model.trainable".into(), m.trainable.to_string()),
        ]);
        if let Some(fd) = m.feature_dim {
            lines.push(("model.feature_dim".into(), fd.to_string()));
        }
        let widths: Vec<String> = self.head.dense_widths.iter().map(|w| w.to_string()).collect();
        lines.extend([
            ("head.dense_widths".into(), format!("[{}]", widths.join(", "))),
            ("head.dropout_rate".into(), f(self.head.dropout_rate)),
            ("head.l2_weight".into(), f(self.head.l2_weight)),
        ]);
        let t = &self.train;
        lines.extend([
            ("train.initial_lr".into(), f(t.initial_lr)),
            ("train.decay_rate".into(), f(t.decay_rate)),
            ("train.decay_every_epochs".into(), t.decay_every_epochs.to_string()),
            ("train.staircase".into(), t.staircase.to_string()),
            ("train.epochs".into(), t.epochs.to_string()),
            ("train.loss".into(), s(&t.loss)),
            ("train.optimizer".into(), s(&t.optimizer)),
            ("evaluate.threshold".into(), f(self.evaluate.threshold)),
        ]);
        let mut out = String::new();
        for (k, v) in lines {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}
