//! Single-file CSV annotations, one row per box.
//!
//! Required columns (by header name): `filename`, `label` (or `class`),
//! `xmin`, `ymin`, `xmax`, `ymax`. Optional `width` and `height`; when absent
//! the dimensions are read from the image file header.

use std::collections::HashMap;
use std::path::Path;

use super::{make_box, parse_coordinate, parse_label, AnnotatedScene};
use crate::error::{Error, Result};

struct Columns {
    filename: usize,
    label: usize,
    coords: [usize; 4],
    size: Option<(usize, usize)>,
}

fn locate(headers: &csv::StringRecord, path: &Path) -> Result<Columns> {
    let find = |names: &[&str]| {
        headers
            .iter()
            .position(|h| names.iter().any(|n| h.trim().eq_ignore_ascii_case(n)))
    };
    let need =
        |names: &[&str]| find(names).ok_or_else(|| Error::malformed(path, format!("missing column '{}'", names[0])));
    Ok(Columns {
        filename: need(&["filename", "image", "image_filename"])?,
        label: need(&["label", "class", "name"])?,
        coords: [need(&["xmin"])?, need(&["ymin"])?, need(&["xmax"])?, need(&["ymax"])?],
        size: find(&["width"]).zip(find(&["height"])),
    })
}

/// Parse a CSV annotation file. Scenes appear in order of first mention; rows
/// keep their order within a scene. Image paths are resolved against the
/// directory containing the CSV.
pub fn parse_annotations_csv(file: &Path) -> Result<Vec<AnnotatedScene>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(file)
        .map_err(|e| Error::malformed(file, e.to_string()))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::malformed(file, e.to_string()))?
        .clone();
    let cols = locate(&headers, file)?;
    let base = file.parent().unwrap_or_else(|| Path::new(""));

    let mut scenes: Vec<AnnotatedScene> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();

    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::malformed(file, e.to_string()))?;
        let get = |i: usize| record.get(i).unwrap_or("");
        let filename = get(cols.filename).to_string();
        if filename.is_empty() {
            return Err(Error::malformed(file, format!("row {}: empty filename", row + 1)));
        }
        let label = parse_label(get(cols.label), file)?;
        let mut coords = [0i64; 4];
        for (slot, (&col, name)) in coords
            .iter_mut()
            .zip(cols.coords.iter().zip(["xmin", "ymin", "xmax", "ymax"]))
        {
            *slot = parse_coordinate(get(col), file, name)?;
        }
        let bbox = make_box(label, coords, file)?;

        let dims = match cols.size {
            Some((w, h)) => {
                let w = parse_coordinate(get(w), file, "width")?;
                let h = parse_coordinate(get(h), file, "height")?;
                if w <= 0 || h <= 0 {
                    return Err(Error::malformed(file, "image size must be positive"));
                }
                Some((w as u32, h as u32))
            }
            None => None,
        };

        match index.get(&filename) {
            Some(&i) => {
                let scene = &mut scenes[i];
                if let Some(d) = dims {
                    if d != (scene.width, scene.height) {
                        return Err(Error::InconsistentDimensions {
                            filename,
                            first: (scene.width, scene.height),
                            second: d,
                        });
                    }
                }
                scene.boxes.push(bbox);
            }
            None => {
                let image_path = base.join(&filename);
                let (width, height) = match dims {
                    Some(d) => d,
                    None => image::image_dimensions(&image_path).map_err(|e| Error::ImageRead {
                        path: image_path.clone(),
                        message: e.to_string(),
                    })?,
                };
                index.insert(filename, scenes.len());
                scenes.push(AnnotatedScene {
                    image_path,
                    width,
                    height,
                    boxes: vec![bbox],
                });
            }
        }
    }
    Ok(scenes)
}

/// Write scenes as one CSV with `filename,width,height,label,xmin,ymin,xmax,ymax`.
/// Filenames are written relative to the scene image's directory (file name only).
pub fn write_annotations_csv(scenes: &[AnnotatedScene], file: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(file).map_err(|e| Error::write(file, e))?;
    writer
        .write_record(["filename", "width", "height", "label", "xmin", "ymin", "xmax", "ymax"])
        .map_err(|e| Error::write(file, e))?;
    for scene in scenes {
        let name = scene
            .image_path
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| Error::InvalidArgument("scene image path has no file name".into()))?;
        for b in &scene.boxes {
            writer
                .write_record([
                    name.to_string(),
                    scene.width.to_string(),
                    scene.height.to_string(),
                    b.label.to_string(),
                    b.xmin.to_string(),
                    b.ymin.to_string(),
                    b.xmax.to_string(),
                    b.ymax.to_string(),
                ])
                .map_err(|e| Error::write(file, e))?;
        }
    }
    writer.flush().map_err(|e| Error::io(file, e))
}
