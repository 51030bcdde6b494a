use std::fs;
use std::path::Path;

use log::warn;
use rayon::prelude::*;

use super::{AnnotatedScene, PatchRecord};
use crate::error::{Error, Result};
use crate::label::Label;

/// Patches cut from one or more scenes.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Extraction {
    pub records: Vec<PatchRecord>,
    /// Boxes whose clamped area was zero.
    pub skipped_degenerate: usize,
}

/// Crop every box of `scene` into `out_dir/<label>/<scene-stem>_<index>.png`.
///
/// Boxes are clamped to the image; boxes with nothing left after clamping are
/// skipped and counted.
pub fn extract_patches(scene: &AnnotatedScene, out_dir: &Path) -> Result<Extraction> {
    let img = image::open(&scene.image_path)
        .map_err(|e| Error::ImageRead {
            path: scene.image_path.clone(),
            message: e.to_string(),
        })?
        .to_rgb8();
    let (width, height) = img.dimensions();
    if (width, height) != (scene.width, scene.height) {
        warn!(
            "{}: annotated size {}x{} differs from image size {}x{}; clamping to the image",
            scene.image_path.display(),
            scene.width,
            scene.height,
            width,
            height
        );
    }
    let stem = scene.image_path.file_stem().and_then(|s| s.to_str()).unwrap_or("scene");

    for label in Label::ALL {
        let dir = out_dir.join(label.as_str());
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }

    let mut out = Extraction::default();
    for (index, raw) in scene.boxes.iter().enumerate() {
        let Some(b) = raw.clamp(width, height) else {
            warn!(
                "{}: box {index} has zero area after clamping; skipped",
                scene.image_path.display()
            );
            out.skipped_degenerate += 1;
            continue;
        };
        let crop = image::imageops::crop_imm(&img, b.xmin as u32, b.ymin as u32, b.width() as u32, b.height() as u32)
            .to_image();
        let patch_path = out_dir.join(b.label.as_str()).join(format!("{stem}_{index:03}.png"));
        crop.save(&patch_path).map_err(|e| Error::write(&patch_path, e))?;
        out.records.push(PatchRecord {
            patch_path,
            label: b.label,
            source_scene: scene.image_path.clone(),
            source_box: b,
        });
    }
    Ok(out)
}

/// Extract all scenes in parallel; records keep scene order.
pub fn extract_all(scenes: &[AnnotatedScene], out_dir: &Path) -> Result<Extraction> {
    let parts: Vec<Extraction> = scenes
        .par_iter()
        .map(|s| extract_patches(s, out_dir))
        .collect::<Result<_>>()?;
    let mut all = Extraction::default();
    for part in parts {
        all.records.extend(part.records);
        all.skipped_degenerate += part.skipped_degenerate;
    }
    Ok(all)
}
