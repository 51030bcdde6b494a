//! Annotation parsing, patch extraction and dataset manifests.

mod csv;
mod extract;
mod manifest;
mod xml;

use std::path::{Path, PathBuf};

pub use self::csv::{parse_annotations_csv, write_annotations_csv};
pub use extract::{extract_all, extract_patches, Extraction};
pub use manifest::{
    class_counts, normalize_path, split_manifest, split_manifest_with, ClassCounts, DatasetManifest, Partition,
    SplitOptions,
};
pub use xml::{parse_annotations_xml, parse_xml_dir, write_annotation_xml};

use crate::error::{Error, Result};
use crate::label::Label;

/// Labeled rectangle in pixel coordinates, inclusive-exclusive, origin top-left.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BoundingBox {
    pub label: Label,
    pub xmin: i64,
    pub ymin: i64,
    pub xmax: i64,
    pub ymax: i64,
}

impl BoundingBox {
    pub fn width(&self) -> i64 {
        self.xmax - self.xmin
    }

    pub fn height(&self) -> i64 {
        self.ymax - self.ymin
    }

    pub fn area(&self) -> i64 {
        self.width().max(0) * self.height().max(0)
    }

    /// Clamp to `[0, width] x [0, height]`. Returns `None` when nothing is left.
    pub fn clamp(&self, width: u32, height: u32) -> Option<BoundingBox> {
        let clamped = BoundingBox {
            label: self.label,
            xmin: self.xmin.clamp(0, width as i64),
            ymin: self.ymin.clamp(0, height as i64),
            xmax: self.xmax.clamp(0, width as i64),
            ymax: self.ymax.clamp(0, height as i64),
        };
        (clamped.xmin < clamped.xmax && clamped.ymin < clamped.ymax).then_some(clamped)
    }
}

/// A source image with its ground-truth boxes, as annotated (boxes unclamped).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotatedScene {
    pub image_path: PathBuf,
    pub width: u32,
    pub height: u32,
    pub boxes: Vec<BoundingBox>,
}

impl AnnotatedScene {
    pub fn count(&self, label: Label) -> usize {
        self.boxes.iter().filter(|b| b.label == label).count()
    }
}

/// One extracted patch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchRecord {
    pub patch_path: PathBuf,
    pub label: Label,
    pub source_scene: PathBuf,
    pub source_box: BoundingBox,
}

/// Load every scene under `path`: a `.csv` file, a single `.xml` file, or a
/// directory of `.xml` files.
pub fn load_annotations(path: &Path) -> Result<Vec<AnnotatedScene>> {
    if path.is_dir() {
        return parse_xml_dir(path);
    }
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase) {
        Some(ext) if ext == "csv" => parse_annotations_csv(path),
        Some(ext) if ext == "xml" => Ok(vec![parse_annotations_xml(path)?]),
        _ => Err(Error::InvalidArgument(format!(
            "cannot infer annotation format of {}",
            path.display()
        ))),
    }
}

pub(crate) fn parse_coordinate(raw: &str, path: &Path, field: &str) -> Result<i64> {
    let raw = raw.trim();
    if let Ok(v) = raw.parse::<i64>() {
        return Ok(v);
    }
    // Some tools write "12.0"; accept finite reals by rounding.
    match raw.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v.round() as i64),
        _ => Err(Error::malformed(path, format!("{field} is not numeric: '{raw}'"))),
    }
}

pub(crate) fn make_box(label: Label, coords: [i64; 4], path: &Path) -> Result<BoundingBox> {
    let [xmin, ymin, xmax, ymax] = coords;
    if xmax <= xmin || ymax <= ymin {
        return Err(Error::malformed(
            path,
            format!("degenerate or reversed box ({xmin},{ymin})-({xmax},{ymax})"),
        ));
    }
    Ok(BoundingBox {
        label,
        xmin,
        ymin,
        xmax,
        ymax,
    })
}

pub(crate) fn parse_label(raw: &str, path: &Path) -> Result<Label> {
    raw.parse().map_err(|_| Error::UnknownLabel {
        path: path.to_path_buf(),
        label: raw.to_string(),
    })
}
