//! Training-time augmentation and batch streaming.
//!
//! Images are `(height, width, channel)` grids of `f64` in the 0–255 range
//! until rescaled. Transforms compose in a fixed order: rotate, shear, shift
//! (one affine map about the image center, sampled bilinearly with edge
//! replication outside the image), then flips.

mod stream;
mod transform;

pub use stream::{batch_stream, load_image, BatchSpec, BatchStream, ClassMode, ImageBatch};
pub use transform::{apply_transform, resize_bilinear, to_image_grid};

use ndarray::Array3;
use rand::Rng;

/// Pixel grid, `(height, width, channels)`.
pub type Pixels = Array3<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FillMode {
    #[default]
    Nearest,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentationPolicy {
    pub rescale: f64,
    /// Shear angle range in degrees.
    pub shear_range: f64,
    pub rotation_range_deg: f64,
    /// Fraction of image width.
    pub width_shift_range: f64,
    /// Fraction of image height.
    pub height_shift_range: f64,
    pub horizontal_flip: bool,
    pub vertical_flip: bool,
    pub fill_mode: FillMode,
    pub seed: u64,
}

impl Default for AugmentationPolicy {
    fn default() -> Self {
        AugmentationPolicy {
            rescale: 1.0 / 255.0,
            shear_range: 0.2,
            rotation_range_deg: 30.0,
            width_shift_range: 0.2,
            height_shift_range: 0.2,
            horizontal_flip: true,
            vertical_flip: true,
            fill_mode: FillMode::Nearest,
            seed: 42,
        }
    }
}

impl AugmentationPolicy {
    /// No geometric change at all, rescale only.
    pub fn identity() -> Self {
        AugmentationPolicy {
            shear_range: 0.0,
            rotation_range_deg: 0.0,
            width_shift_range: 0.0,
            height_shift_range: 0.0,
            horizontal_flip: false,
            vertical_flip: false,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> crate::Result<()> {
        let ranges = [
            self.shear_range,
            self.rotation_range_deg,
            self.width_shift_range,
            self.height_shift_range,
        ];
        if ranges.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(crate::Error::InvalidArgument(
                "augmentation ranges must be finite and non-negative".into(),
            ));
        }
        if !(self.rescale.is_finite() && self.rescale > 0.0) {
            return Err(crate::Error::InvalidArgument("rescale must be positive".into()));
        }
        Ok(())
    }
}

/// One draw of augmentation parameters.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TransformParams {
    pub rotation_deg: f64,
    pub shear_deg: f64,
    /// Horizontal shift as a fraction of width (positive moves content right).
    pub shift_x: f64,
    /// Vertical shift as a fraction of height (positive moves content down).
    pub shift_y: f64,
    pub flip_horizontal: bool,
    pub flip_vertical: bool,
}

impl TransformParams {
    pub fn identity() -> Self {
        Self::default()
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::default()
    }

    fn has_affine(&self) -> bool {
        self.rotation_deg != 0.0 || self.shear_deg != 0.0 || self.shift_x != 0.0 || self.shift_y != 0.0
    }
}

fn symmetric(rng: &mut impl Rng, range: f64) -> f64 {
    if range > 0.0 {
        rng.gen_range(-range..=range)
    } else {
        0.0
    }
}

/// Draw parameters uniformly from the policy's symmetric ranges; each enabled
/// flip fires with probability one half.
pub fn sample_transform(policy: &AugmentationPolicy, rng: &mut impl Rng) -> TransformParams {
    TransformParams {
        rotation_deg: symmetric(rng, policy.rotation_range_deg),
        shear_deg: symmetric(rng, policy.shear_range),
        shift_x: symmetric(rng, policy.width_shift_range),
        shift_y: symmetric(rng, policy.height_shift_range),
        flip_horizontal: policy.horizontal_flip && rng.gen_bool(0.5),
        flip_vertical: policy.vertical_flip && rng.gen_bool(0.5),
    }
}
