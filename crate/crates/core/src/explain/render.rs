use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use ndarray::Array2;

use super::SaliencyMap;
use crate::augment::Pixels;
use crate::error::{Error, Result};

/// Classic jet colormap; `t` in `[0, 1]`.
pub fn jet(t: f64) -> [u8; 3] {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.5 };
    let channel = |offset: f64| (1.5 - (4.0 * t - offset).abs()).clamp(0.0, 1.0);
    [channel(3.0), channel(2.0), channel(1.0)].map(|c| (c * 255.0).round() as u8)
}

/// Min-max scaled to `[0, 1]`; a constant (or NaN-spread) map becomes
/// uniformly 0.5.
#[allow(clippy::neg_cmp_op_on_partial_ord)]
fn unit_scale(values: &Array2<f64>) -> Array2<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi - lo > 0.0) {
        return Array2::from_elem(values.raw_dim(), 0.5);
    }
    values.mapv(|v| (v - lo) / (hi - lo))
}

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedFiles {
    pub composite: PathBuf,
    pub overlay: PathBuf,
}

fn save_png(img: &RgbImage, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::write(dir, e))?;
    }
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::write(path, e))
}

/// Write the input (left) next to the color-mapped map (right) at `out`, and
/// an alpha-blended overlay at `<stem>_overlay.png` beside it.
pub fn render_side_by_side(image: &Pixels, map: &SaliencyMap, out: &Path) -> Result<RenderedFiles> {
    let (h, w, _) = image.dim();
    if map.values.dim() != (h, w) {
        return Err(Error::ShapeMismatch(format!(
            "map is {:?}, image is {h}x{w}",
            map.values.dim()
        )));
    }
    let t = unit_scale(&map.values);
    let mut composite = RgbImage::new(2 * w as u32, h as u32);
    let mut overlay = RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let px = [image[[y, x, 0]], image[[y, x, 1]], image[[y, x, 2]]];
            composite.put_pixel(x as u32, y as u32, Rgb(px.map(to_byte)));
            let color = jet(t[[y, x]]);
            composite.put_pixel((w + x) as u32, y as u32, Rgb(color));
            let alpha = 0.6 * t[[y, x]];
            let blended: [u8; 3] =
                std::array::from_fn(|c| to_byte((1.0 - alpha) * px[c] + alpha * color[c] as f64 / 255.0));
            overlay.put_pixel(x as u32, y as u32, Rgb(blended));
        }
    }
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("saliency");
    let overlay_path = out.with_file_name(format!("{stem}_overlay.png"));
    save_png(&composite, out)?;
    save_png(&overlay, &overlay_path)?;
    Ok(RenderedFiles {
        composite: out.to_path_buf(),
        overlay: overlay_path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    fn map(values: Array2<f64>) -> SaliencyMap {
        SaliencyMap {
            values,
            standardized: true,
            source_image: None,
            model_output: 0.5,
            warning: None,
        }
    }

    #[test]
    fn jet_endpoints() {
        assert_eq!(jet(0.0), [0, 0, 128]);
        assert_eq!(jet(1.0), [128, 0, 0]);
        assert_eq!(jet(0.5), [128, 255, 128]);
    }

    #[test]
    fn layout_and_uniform_zero_map() {
        let dir = tempfile::tempdir().unwrap();
        let img = Array3::from_shape_fn((24, 20, 3), |(y, x, c)| ((y + x + c) % 7) as f64 / 7.0);
        let files = render_side_by_side(&img, &map(Array2::zeros((24, 20))), &dir.path().join("s.png")).unwrap();
        let out = image::open(&files.composite).unwrap().to_rgb8();
        assert_eq!(out.dimensions(), (40, 24));
        let first = *out.get_pixel(20, 0);
        assert!((20..40).all(|x| (0..24).all(|y| *out.get_pixel(x, y) == first)));
        assert!(files.overlay.is_file());
    }

    #[test]
    fn rerender_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let img = Array3::from_shape_fn((16, 16, 3), |(y, x, _)| (y * 16 + x) as f64 / 256.0);
        let m = map(Array2::from_shape_fn((16, 16), |(y, x)| (y as f64 - x as f64).sin()));
        let a = render_side_by_side(&img, &m, &dir.path().join("a.png")).unwrap();
        let b = render_side_by_side(&img, &m, &dir.path().join("b.png")).unwrap();
        assert_eq!(fs::read(&a.composite).unwrap(), fs::read(&b.composite).unwrap());
        assert_eq!(fs::read(&a.overlay).unwrap(), fs::read(&b.overlay).unwrap());
    }

    #[test]
    fn mismatched_map_rejected() {
        let img = Array3::zeros((4, 4, 3));
        assert!(render_side_by_side(&img, &map(Array2::zeros((3, 4))), Path::new("x.png")).is_err());
    }
}
