//! Synthetic two-class scene corpora and finite-difference gradient oracles.
//!
//! Healthy regions are green-dominant, stressed regions yellow/brown; both sit
//! on a soil-colored background with Gaussian noise and a faint sinusoidal
//! texture. Corpora are written in the same XML/CSV/PNG formats that the
//! ingest module reads.

use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage};
use ndarray::{Array1, Array4};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::augment::Pixels;
use crate::error::{Error, Result};
use crate::explain::{to_batch, ScalarModel};
use crate::ingest::{write_annotation_xml, write_annotations_csv, AnnotatedScene, BoundingBox};
use crate::label::Label;
use crate::model::layers::sigmoid;
use crate::model::{ClassifierModel, Mode};
use crate::rng;
use crate::train::binary_cross_entropy;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub n_per_class: usize,
    /// Largest box edge; boxes are between 3/4 of this and this.
    pub patch_size: usize,
    pub boxes_per_scene: usize,
    /// RGB means on the 0..255 scale.
    pub healthy_mean: [f64; 3],
    pub stressed_mean: [f64; 3],
    pub background_mean: [f64; 3],
    pub noise_sigma: f64,
    /// Texture cycles per box edge.
    pub texture_frequency: f64,
    pub texture_amplitude: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_per_class: 100,
            patch_size: 40,
            boxes_per_scene: 16,
            healthy_mean: [60.0, 140.0, 60.0],
            stressed_mean: [170.0, 140.0, 50.0],
            background_mean: [110.0, 85.0, 60.0],
            noise_sigma: 12.0,
            texture_frequency: 3.0,
            texture_amplitude: 8.0,
            seed: 7,
        }
    }
}

/// Minimum separation of the class means, in noise standard deviations.
pub const MIN_SEPARATION_SIGMAS: f64 = 4.0;

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_per_class == 0 || self.patch_size < 4 || self.boxes_per_scene == 0 {
            return Err(Error::InvalidArgument(
                "synthetic corpus needs n_per_class >= 1, patch_size >= 4 and boxes_per_scene >= 1".into(),
            ));
        }
        if !(self.noise_sigma >= 0.0 && self.texture_amplitude >= 0.0) {
            return Err(Error::InvalidArgument("noise and texture must be non-negative".into()));
        }
        if self.separation() < MIN_SEPARATION_SIGMAS {
            return Err(Error::InvalidArgument(format!(
                "class means are only {:.2} sigma apart",
                self.separation()
            )));
        }
        Ok(())
    }

    /// Largest per-channel distance between class means, in units of the
    /// noise standard deviation.
    pub fn separation(&self) -> f64 {
        let gap = (0..3)
            .map(|c| (self.healthy_mean[c] - self.stressed_mean[c]).abs())
            .fold(0.0, f64::max);
        if self.noise_sigma == 0.0 {
            f64::INFINITY
        } else {
            gap / self.noise_sigma
        }
    }

    fn mean(&self, label: Label) -> [f64; 3] {
        match label {
            Label::Healthy => self.healthy_mean,
            Label::Stressed => self.stressed_mean,
        }
    }

    /// Index of the channel separating the classes best, and the midpoint
    /// threshold on it (0..1 scale). Stressed lies above when `above` is set.
    pub fn decision_rule(&self) -> (usize, f64, bool) {
        let c = (0..3)
            .max_by(|&a, &b| {
                let d = |c: usize| (self.healthy_mean[c] - self.stressed_mean[c]).abs();
                d(a).total_cmp(&d(b))
            })
            .unwrap_or(0);
        let mid = (self.healthy_mean[c] + self.stressed_mean[c]) / 2.0 / 255.0;
        (c, mid, self.stressed_mean[c] > self.healthy_mean[c])
    }
}

fn paint(img: &mut RgbImage, region: (u32, u32, u32, u32), mean: [f64; 3], spec: &SynthSpec, rng: &mut impl Rng) {
    let (x0, y0, w, h) = region;
    let noise = Normal::new(0.0, spec.noise_sigma.max(1e-12)).expect("valid sigma");
    let angle: f64 = rng.gen_range(0.0..std::f64::consts::PI);
    let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let k = std::f64::consts::TAU * spec.texture_frequency / w.max(1) as f64;
    for y in 0..h {
        for x in 0..w {
            let along = x as f64 * angle.cos() + y as f64 * angle.sin();
            let texture = spec.texture_amplitude * (k * along + phase).sin();
            let px: [u8; 3] = std::array::from_fn(|c| {
                let n = if spec.noise_sigma > 0.0 { noise.sample(rng) } else { 0.0 };
                (mean[c] + texture + n).round().clamp(0.0, 255.0) as u8
            });
            img.put_pixel(x0 + x, y0 + y, Rgb(px));
        }
    }
}

/// One patch-sized image of the given class, as `(H, W, 3)` in `[0, 1]`.
pub fn render_patch(spec: &SynthSpec, label: Label, size: usize, rng: &mut impl Rng) -> Pixels {
    let mut img = RgbImage::new(size as u32, size as u32);
    paint(&mut img, (0, 0, size as u32, size as u32), spec.mean(label), spec, rng);
    crate::augment::to_image_grid(&img) / 255.0
}

/// Write `scene_NNNN.png` with a matching `scene_NNNN.xml` per scene, plus
/// `annotations.csv` covering all of them, into `out`.
pub fn generate_dataset(spec: &SynthSpec, out: &Path) -> Result<Vec<AnnotatedScene>> {
    spec.validate()?;
    fs::create_dir_all(out).map_err(|e| Error::write(out, e))?;
    let mut rng = rng::seeded(spec.seed);
    let mut labels: Vec<Label> = Label::ALL
        .iter()
        .flat_map(|&l| std::iter::repeat_n(l, spec.n_per_class))
        .collect();
    labels.shuffle(&mut rng);

    let margin = (spec.patch_size / 8).max(2);
    let cell = spec.patch_size + 2 * margin;
    let cols = (spec.boxes_per_scene as f64).sqrt().ceil() as usize;
    let rows = spec.boxes_per_scene.div_ceil(cols);
    let (width, height) = ((cols * cell) as u32, (rows * cell) as u32);
    let min_edge = (spec.patch_size * 3 / 4).max(2);

    let mut scenes = Vec::new();
    for (i, chunk) in labels.chunks(spec.boxes_per_scene).enumerate() {
        let mut img = RgbImage::new(width, height);
        paint(&mut img, (0, 0, width, height), spec.background_mean, spec, &mut rng);
        let mut boxes = Vec::with_capacity(chunk.len());
        for (j, &label) in chunk.iter().enumerate() {
            let bw = rng.gen_range(min_edge..=spec.patch_size);
            let bh = rng.gen_range(min_edge..=spec.patch_size);
            let x0 = (j % cols) * cell + margin + rng.gen_range(0..=spec.patch_size - bw);
            let y0 = (j / cols) * cell + margin + rng.gen_range(0..=spec.patch_size - bh);
            paint(
                &mut img,
                (x0 as u32, y0 as u32, bw as u32, bh as u32),
                spec.mean(label),
                spec,
                &mut rng,
            );
            boxes.push(BoundingBox {
                label,
                xmin: x0 as i64,
                ymin: y0 as i64,
                xmax: (x0 + bw) as i64,
                ymax: (y0 + bh) as i64,
            });
        }
        let image_path = out.join(format!("scene_{i:04}.png"));
        img.save_with_format(&image_path, image::ImageFormat::Png)
            .map_err(|e| Error::write(&image_path, e))?;
        let scene = AnnotatedScene {
            image_path,
            width,
            height,
            boxes,
        };
        write_annotation_xml(&scene, &out.join(format!("scene_{i:04}.xml")))?;
        scenes.push(scene);
    }
    write_annotations_csv(&scenes, &out.join("annotations.csv"))?;
    Ok(scenes)
}

/// `n` distinct `(y, x, c)` coordinates drawn uniformly without replacement.
pub fn sample_coordinates(dims: (usize, usize, usize), n: usize, seed: u64) -> Vec<(usize, usize, usize)> {
    let (h, w, c) = dims;
    let total = h * w * c;
    let mut r = rng::seeded(seed);
    rand::seq::index::sample(&mut r, total, n.min(total))
        .into_iter()
        .map(|i| (i / (w * c), (i / c) % w, i % c))
        .collect()
}

/// Central differences `(θ(ξ + h e) - θ(ξ - h e)) / 2h` at each coordinate.
pub fn brute_force_grad<M: ScalarModel + ?Sized>(
    model: &M,
    image: &Pixels,
    h: f64,
    coords: &[(usize, usize, usize)],
) -> Result<Vec<f64>> {
    let base: Array4<f64> = to_batch(image);
    coords
        .iter()
        .map(|&(y, x, c)| {
            let mut plus = base.clone();
            plus[[0, c, y, x]] += h;
            let mut minus = base.clone();
            minus[[0, c, y, x]] -= h;
            Ok((model.output(&plus)? - model.output(&minus)?) / (2.0 * h))
        })
        .collect()
}

/// Relative error `|a - b| / max(|a|, |b|, 1e-8)`; zero when both are zero.
pub fn relative_error(a: f64, b: f64) -> f64 {
    if a == 0.0 && b == 0.0 {
        return 0.0;
    }
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Per-sample cross-entropy terms and the squared L2-regularized weights of
/// the training objective, with the dropout mask drawn from `mask_seed`. The
/// objective is `mean(bce) + l2_weight * sum(squares)`.
pub fn loss_terms(
    model: &ClassifierModel,
    images: &Array4<f64>,
    labels: &Array1<f64>,
    mask_seed: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let p = model.forward(images, Mode::Train, &mut rng::seeded(mask_seed))?;
    let bce = p
        .iter()
        .zip(labels)
        .map(|(&p, &y)| binary_cross_entropy(&Array1::from(vec![p]), &Array1::from(vec![y])))
        .collect::<Result<Vec<_>>>()?;
    let squares = model
        .named_params()
        .into_iter()
        .filter(|(name, _)| name.starts_with("head.dense") && name.ends_with(".kernel"))
        .flat_map(|(_, v)| v.iter().map(|w| w * w).collect::<Vec<_>>())
        .collect();
    Ok((bce, squares))
}

/// Central difference of the training objective along element `index`
/// (logical order) of parameter tensor `param`.
///
/// The difference is accumulated term by term, so the untouched part of the
/// penalty cancels exactly instead of swamping small derivatives.
pub fn loss_central_difference(
    model: &mut ClassifierModel,
    images: &Array4<f64>,
    labels: &Array1<f64>,
    mask_seed: u64,
    (param, index): (usize, usize),
    h: f64,
) -> Result<f64> {
    let set = |model: &mut ClassifierModel, v: f64| -> Result<f64> {
        let mut params = model.params_mut();
        let slot = params
            .get_mut(param)
            .and_then(|t| t.iter_mut().nth(index))
            .ok_or_else(|| Error::InvalidArgument(format!("no parameter element {param}[{index}]")))?;
        Ok(std::mem::replace(slot, v))
    };
    let original = set(model, 0.0)?;
    set(model, original + h)?;
    let plus = loss_terms(model, images, labels, mask_seed);
    set(model, original - h)?;
    let minus = loss_terms(model, images, labels, mask_seed);
    set(model, original)?;
    let ((bce_p, sq_p), (bce_m, sq_m)) = (plus?, minus?);
    let n = bce_p.len().max(1) as f64;
    let d_bce = bce_p.iter().zip(&bce_m).map(|(a, b)| a - b).sum::<f64>() / n;
    let d_l2 = sq_p.iter().zip(&sq_m).map(|(a, b)| a - b).sum::<f64>() * model.head.l2_weight;
    Ok((d_bce + d_l2) / (2.0 * h))
}

/// Shift every bias by a uniform draw from `[-scale, scale)`. With zero
/// biases an all-zero feature vector puts pre-activations exactly on a ReLU
/// kink, where finite differences and derivatives disagree by definition.
pub fn perturb_biases(model: &mut ClassifierModel, scale: f64, seed: u64) {
    let names: Vec<String> = model.named_params().into_iter().map(|(n, _)| n).collect();
    let mut r = rng::seeded(seed);
    for (name, mut p) in names.iter().zip(model.params_mut()) {
        if name.ends_with(".bias") {
            p.mapv_inplace(|b| b + r.gen_range(-scale..scale));
        }
    }
}

/// θ = constant, independent of the input.
#[derive(Debug, Clone, Copy)]
pub struct ConstantModel {
    pub value: f64,
    pub input_size: (usize, usize),
}

impl ScalarModel for ConstantModel {
    fn input_size(&self) -> (usize, usize) {
        self.input_size
    }

    fn output(&self, _x: &Array4<f64>) -> Result<f64> {
        Ok(self.value)
    }

    fn output_and_gradient(&self, x: &Array4<f64>) -> Result<(f64, Array4<f64>)> {
        Ok((self.value, Array4::zeros(x.raw_dim())))
    }
}

/// θ = sigmoid(Σ_c w_c · mean(ξ_c) + b).
#[derive(Debug, Clone, Copy)]
pub struct LinearProbe {
    pub weights: [f64; 3],
    pub bias: f64,
    pub input_size: (usize, usize),
}

impl LinearProbe {
    fn logit(&self, x: &Array4<f64>) -> f64 {
        let hw = (x.dim().2 * x.dim().3) as f64;
        (0..3)
            .map(|c| self.weights[c] * x.index_axis(ndarray::Axis(1), c).sum() / hw)
            .sum::<f64>()
            + self.bias
    }
}

impl ScalarModel for LinearProbe {
    fn input_size(&self) -> (usize, usize) {
        self.input_size
    }

    fn output(&self, x: &Array4<f64>) -> Result<f64> {
        Ok(sigmoid(self.logit(x)))
    }

    fn output_and_gradient(&self, x: &Array4<f64>) -> Result<(f64, Array4<f64>)> {
        let p = sigmoid(self.logit(x));
        let hw = (x.dim().2 * x.dim().3) as f64;
        let grad = Array4::from_shape_fn(x.raw_dim(), |(_, c, _, _)| p * (1.0 - p) * self.weights[c] / hw);
        Ok((p, grad))
    }
}
