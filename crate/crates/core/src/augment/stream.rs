use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use log::warn;
use ndarray::{Array1, Array4};
use rayon::prelude::*;

use super::transform::{apply_transform, resize_bilinear, to_image_grid};
use super::{sample_transform, AugmentationPolicy, Pixels};
use crate::error::{Error, Result};
use crate::ingest::PatchRecord;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ClassMode {
    #[default]
    Binary,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchSpec {
    /// `(height, width)` every image is resized to.
    pub target_size: (usize, usize),
    pub batch_size: usize,
    pub class_mode: ClassMode,
    pub shuffle: bool,
    /// Multiplier applied after resizing (and augmentation).
    pub rescale: f64,
    /// Seeds the per-epoch shuffle.
    pub seed: u64,
}

impl Default for BatchSpec {
    fn default() -> Self {
        BatchSpec {
            target_size: (224, 224),
            batch_size: 128,
            class_mode: ClassMode::Binary,
            shuffle: true,
            rescale: 1.0 / 255.0,
            seed: 42,
        }
    }
}

impl BatchSpec {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
        }
        if self.target_size.0 == 0 || self.target_size.1 == 0 {
            return Err(Error::InvalidArgument("target size must be positive".into()));
        }
        Ok(())
    }

    pub fn batches_per_epoch(&self, n: usize) -> usize {
        n.div_ceil(self.batch_size)
    }
}

/// Images as `(batch, channel, height, width)` in `[0, 1]`, labels 0/1.
#[derive(Debug, Clone)]
pub struct ImageBatch {
    pub images: Array4<f64>,
    pub labels: Array1<f64>,
    /// Positions of the emitted images in the source record slice.
    pub indices: Vec<usize>,
}

impl ImageBatch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

pub fn load_image(path: &Path) -> Result<Pixels> {
    let img = image::open(path).map_err(|e| Error::ImageRead {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok(to_image_grid(&img.to_rgb8()))
}

/// One epoch over `records`.
pub struct BatchStream<'a> {
    records: &'a [PatchRecord],
    order: Vec<usize>,
    augmentation: Option<AugmentationPolicy>,
    spec: BatchSpec,
    epoch: u64,
    cursor: usize,
    failures: AtomicUsize,
}

/// Stream one epoch of batches. With `augmentation` set every image gets a
/// freshly sampled transform; the transform for the image at position `i` of
/// epoch `e` depends only on `(policy.seed, e, i)`, never on thread count.
pub fn batch_stream<'a>(
    records: &'a [PatchRecord],
    augmentation: Option<&AugmentationPolicy>,
    spec: &BatchSpec,
    epoch: u64,
) -> Result<BatchStream<'a>> {
    spec.validate()?;
    if records.is_empty() {
        return Err(Error::InvalidArgument("cannot stream an empty partition".into()));
    }
    if let Some(p) = augmentation {
        p.validate()?;
    }
    let mut order: Vec<usize> = (0..records.len()).collect();
    if spec.shuffle {
        let mut r = rng::seeded(rng::derive_seed(spec.seed, &[epoch]));
        rng::fisher_yates(&mut order, &mut r);
    }
    Ok(BatchStream {
        records,
        order,
        augmentation: augmentation.copied(),
        spec: *spec,
        epoch,
        cursor: 0,
        failures: AtomicUsize::new(0),
    })
}

impl BatchStream<'_> {
    /// Images skipped so far because they could not be decoded.
    pub fn failures(&self) -> usize {
        self.failures.load(Ordering::Relaxed)
    }

    fn prepare(&self, position: usize, record: &PatchRecord) -> Option<Pixels> {
        let raw = match load_image(&record.patch_path) {
            Ok(img) => img,
            Err(e) => {
                warn!("{e}; skipped");
                self.failures.fetch_add(1, Ordering::Relaxed);
                return None;
            }
        };
        let (h, w) = self.spec.target_size;
        let mut img = resize_bilinear(&raw, h, w);
        if let Some(policy) = &self.augmentation {
            let seed = rng::derive_seed(policy.seed, &[self.epoch, position as u64]);
            let params = sample_transform(policy, &mut rng::seeded(seed));
            img = apply_transform(&img, &params, policy.fill_mode);
        }
        img.mapv_inplace(|v| v * self.spec.rescale);
        Some(img)
    }
}

impl Iterator for BatchStream<'_> {
    type Item = ImageBatch;

    fn next(&mut self) -> Option<ImageBatch> {
        loop {
            if self.cursor >= self.order.len() {
                return None;
            }
            let end = (self.cursor + self.spec.batch_size).min(self.order.len());
            let positions: Vec<usize> = (self.cursor..end).collect();
            self.cursor = end;

            let loaded: Vec<(usize, Pixels)> = positions
                .par_iter()
                .filter_map(|&pos| {
                    let idx = self.order[pos];
                    self.prepare(pos, &self.records[idx]).map(|img| (idx, img))
                })
                .collect();
            if loaded.is_empty() {
                continue;
            }

            let (h, w) = self.spec.target_size;
            let mut images = Array4::zeros((loaded.len(), 3, h, w));
            let mut labels = Array1::zeros(loaded.len());
            let mut indices = Vec::with_capacity(loaded.len());
            for (n, (idx, img)) in loaded.into_iter().enumerate() {
                // (h, w, c) -> (c, h, w)
                images
                    .index_axis_mut(ndarray::Axis(0), n)
                    .assign(&img.permuted_axes([2, 0, 1]));
                labels[n] = self.records[idx].label.target();
                indices.push(idx);
            }
            return Some(ImageBatch {
                images,
                labels,
                indices,
            });
        }
    }
}
