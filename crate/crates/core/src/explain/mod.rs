//! Gradient-based explanations: the input-gradient saliency map (absolute
//! gradient of the predicted probability with respect to every input pixel,
//! reduced over channels and standardized) and a last-conv Grad-CAM variant.

mod render;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use ndarray::{s, Array2, Array3, Array4, Axis};

pub use render::{jet, render_side_by_side, RenderedFiles};

use crate::augment::{resize_bilinear, Pixels};
use crate::error::{Error, Result};
use crate::model::{ClassifierModel, Mode};
use crate::rng;

/// Below this the map is treated as constant; it also keeps the division in
/// [`standardize`] away from zero.
pub const CONSTANT_THRESHOLD: f64 = 1e-12;

/// A differentiable scalar model of one RGB image.
pub trait ScalarModel {
    /// `(height, width)` of the expected input.
    fn input_size(&self) -> (usize, usize);

    /// θ for a `(1, 3, H, W)` input.
    fn output(&self, x: &Array4<f64>) -> Result<f64>;

    /// θ and ∂θ/∂x for a `(1, 3, H, W)` input.
    fn output_and_gradient(&self, x: &Array4<f64>) -> Result<(f64, Array4<f64>)>;

    /// Activations `(F, h, w)` of the last convolutional feature map and the
    /// gradient of θ with respect to them.
    fn last_conv(&self, _x: &Array4<f64>) -> Result<(Array3<f64>, Array3<f64>)> {
        Err(Error::LayerNotFound("model has no convolutional feature map".into()))
    }
}

impl ScalarModel for ClassifierModel {
    fn input_size(&self) -> (usize, usize) {
        self.backbone.input_size
    }

    fn output(&self, x: &Array4<f64>) -> Result<f64> {
        Ok(self.predict(x)?[0])
    }

    fn output_and_gradient(&self, x: &Array4<f64>) -> Result<(f64, Array4<f64>)> {
        let trace = self.trace(x, Mode::Eval, &mut rng::seeded(0))?;
        let grads = self.backward(&trace, &ndarray::Array1::ones(1));
        Ok((trace.probabilities[0], grads.input))
    }

    fn last_conv(&self, x: &Array4<f64>) -> Result<(Array3<f64>, Array3<f64>)> {
        let trace = self.trace(x, Mode::Eval, &mut rng::seeded(0))?;
        let grads = self.backward(&trace, &ndarray::Array1::ones(1));
        Ok((
            trace.features.index_axis(Axis(0), 0).to_owned(),
            grads.features.index_axis(Axis(0), 0).to_owned(),
        ))
    }
}

/// `(H, W, C)` pixels to a `(1, C, H, W)` batch.
pub fn to_batch(image: &Pixels) -> Array4<f64> {
    image.view().permuted_axes([2, 0, 1]).insert_axis(Axis(0)).to_owned()
}

fn check_image<M: ScalarModel + ?Sized>(model: &M, image: &Pixels) -> Result<()> {
    let (h, w, c) = image.dim();
    if (h, w) != model.input_size() || c != 3 {
        return Err(Error::ShapeMismatch(format!(
            "image is {h}x{w}x{c}, model expects {:?}x3",
            model.input_size()
        )));
    }
    Ok(())
}

/// ∂θ/∂ξ as an `(H, W, C)` grid, together with θ.
pub fn input_gradient_saliency<M: ScalarModel + ?Sized>(model: &M, image: &Pixels) -> Result<(f64, Array3<f64>)> {
    check_image(model, image)?;
    let (theta, grad) = model.output_and_gradient(&to_batch(image))?;
    if !theta.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient);
    }
    let hwc = grad.index_axis(Axis(0), 0).permuted_axes([1, 2, 0]).to_owned();
    Ok((theta, hwc))
}

/// Mean over channels of `|grad|`.
pub fn reduce_and_rectify(grad: &Array3<f64>) -> Array2<f64> {
    grad.mapv(f64::abs)
        .mean_axis(Axis(2))
        .unwrap_or_else(|| Array2::zeros((grad.dim().0, grad.dim().1)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SaliencyWarning {
    /// The map had (numerically) zero spread; the zero map was returned.
    ConstantMap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    pub values: Array2<f64>,
    pub standardized: bool,
    pub source_image: Option<PathBuf>,
    /// The explained scalar θ.
    pub model_output: f64,
    pub warning: Option<SaliencyWarning>,
}

/// `(h - mean) / std` with the population standard deviation. Maps whose
/// spread is below [`CONSTANT_THRESHOLD`] become the zero map with a warning.
pub fn standardize(heatmap: &Array2<f64>) -> (Array2<f64>, Option<SaliencyWarning>) {
    let n = heatmap.len().max(1) as f64;
    let mean = heatmap.sum() / n;
    let var = heatmap.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < CONSTANT_THRESHOLD {
        warn!("saliency map is constant; returning the zero map");
        return (Array2::zeros(heatmap.raw_dim()), Some(SaliencyWarning::ConstantMap));
    }
    (heatmap.mapv(|v| (v - mean) / std), None)
}

/// Everything produced for one explained image.
#[derive(Debug, Clone)]
pub struct Explanation {
    /// Rectified channel-mean heatmap before standardization.
    pub heatmap: Array2<f64>,
    pub map: SaliencyMap,
}

pub fn explain_image<M: ScalarModel + ?Sized>(model: &M, image: &Pixels, source: Option<&Path>) -> Result<Explanation> {
    let (theta, grad) = input_gradient_saliency(model, image)?;
    let heatmap = reduce_and_rectify(&grad);
    let (values, warning) = standardize(&heatmap);
    Ok(Explanation {
        heatmap,
        map: SaliencyMap {
            values,
            standardized: true,
            source_image: source.map(Path::to_path_buf),
            model_output: theta,
            warning,
        },
    })
}

/// Grad-CAM from activations `A` and gradients `G`, both `(F, h, w)`:
/// `relu(sum_k mean(G_k) * A_k)`.
pub fn gradcam_from_activations(activations: &Array3<f64>, gradients: &Array3<f64>) -> Result<Array2<f64>> {
    if activations.dim() != gradients.dim() {
        return Err(Error::ShapeMismatch(format!(
            "activations {:?} vs gradients {:?}",
            activations.dim(),
            gradients.dim()
        )));
    }
    let (f, h, w) = activations.dim();
    let mut cam = Array2::zeros((h, w));
    for k in 0..f {
        let alpha = gradients.index_axis(Axis(0), k).mean().unwrap_or(0.0);
        cam.scaled_add(alpha, &activations.index_axis(Axis(0), k));
    }
    Ok(cam.mapv(|v: f64| v.max(0.0)))
}

/// Grad-CAM on the last convolutional feature map, upsampled bilinearly to
/// the input size.
pub fn gradcam_last_conv<M: ScalarModel + ?Sized>(model: &M, image: &Pixels) -> Result<Array2<f64>> {
    check_image(model, image)?;
    let (acts, grads) = model.last_conv(&to_batch(image))?;
    let cam = gradcam_from_activations(&acts, &grads)?;
    let (h, w) = model.input_size();
    let cam3 = cam.insert_axis(Axis(2));
    Ok(resize_bilinear(&cam3, h, w).slice_move(s![.., .., 0]))
}

/// Whitespace-separated rows; values in shortest exact form.
pub fn heatmap_text(heatmap: &Array2<f64>) -> String {
    let mut out = String::new();
    for row in heatmap.rows() {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(out, "{}", cells.join(" "));
    }
    out
}

pub fn parse_heatmap_text(text: &str) -> Result<Array2<f64>> {
    let rows: Vec<Vec<f64>> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split_whitespace()
                .map(|v| {
                    v.parse()
                        .map_err(|_| Error::InvalidArgument(format!("bad heatmap value '{v}'")))
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let w = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != w) {
        return Err(Error::InvalidArgument("ragged heatmap".into()));
    }
    Array2::from_shape_vec((rows.len(), w), rows.concat()).map_err(|e| Error::InvalidArgument(e.to_string()))
}

pub fn write_heatmap(heatmap: &Array2<f64>, path: &Path) -> Result<()> {
    fs::write(path, heatmap_text(heatmap)).map_err(|e| Error::write(path, e))
}
