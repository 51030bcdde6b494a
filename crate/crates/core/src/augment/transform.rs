use ndarray::{s, Array3};

use super::{FillMode, Pixels, TransformParams};

pub fn to_image_grid(img: &image::RgbImage) -> Pixels {
    let (w, h) = img.dimensions();
    Array3::from_shape_fn((h as usize, w as usize, 3), |(y, x, c)| {
        img.get_pixel(x as u32, y as u32).0[c] as f64
    })
}

/// Bilinear sample at a real-valued position; coordinates outside the grid are
/// clamped, which replicates the nearest edge pixel.
fn sample(img: &Pixels, x: f64, y: f64, out: &mut [f64]) {
    let (h, w, _) = img.dim();
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    for (c, slot) in out.iter_mut().enumerate() {
        let top = img[[y0, x0, c]] * (1.0 - fx) + img[[y0, x1, c]] * fx;
        let bottom = img[[y1, x0, c]] * (1.0 - fx) + img[[y1, x1, c]] * fx;
        *slot = top * (1.0 - fy) + bottom * fy;
    }
}

/// Apply `params` to `image`. Output has the input's dimensions.
pub fn apply_transform(image: &Pixels, params: &TransformParams, fill: FillMode) -> Pixels {
    let FillMode::Nearest = fill;
    let mut out = if params.has_affine() {
        affine(image, params)
    } else {
        image.clone()
    };
    if params.flip_horizontal {
        out = out.slice(s![.., ..;-1, ..]).to_owned();
    }
    if params.flip_vertical {
        out = out.slice(s![..;-1, .., ..]).to_owned();
    }
    out
}

fn affine(image: &Pixels, params: &TransformParams) -> Pixels {
    let (h, w, c) = image.dim();
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    let (sin_r, cos_r) = params.rotation_deg.to_radians().sin_cos();
    let (sin_s, cos_s) = params.shear_deg.to_radians().sin_cos();
    let tx = params.shift_x * w as f64;
    let ty = params.shift_y * h as f64;

    // forward: p_out = t + Shear * Rot * p_in, with Shear = [[1, -sin s], [0, cos s]]
    // inverse: p_in = Rot^-1 * Shear^-1 * (p_out - t)
    let mut out = Array3::zeros((h, w, c));
    let mut px = vec![0.0; c];
    for y in 0..h {
        for x in 0..w {
            let ux = x as f64 - cx - tx;
            let uy = y as f64 - cy - ty;
            let vx = ux + uy * sin_s / cos_s;
            let vy = uy / cos_s;
            let sx = cos_r * vx + sin_r * vy;
            let sy = -sin_r * vx + cos_r * vy;
            sample(image, sx + cx, sy + cy, &mut px);
            for (ch, v) in px.iter().enumerate() {
                out[[y, x, ch]] = *v;
            }
        }
    }
    out
}

/// Resize with bilinear interpolation on half-pixel centers.
pub fn resize_bilinear(image: &Pixels, height: usize, width: usize) -> Pixels {
    let (h, w, c) = image.dim();
    if (h, w) == (height, width) {
        return image.clone();
    }
    let scale_y = h as f64 / height as f64;
    let scale_x = w as f64 / width as f64;
    let mut out = Array3::zeros((height, width, c));
    let mut px = vec![0.0; c];
    for y in 0..height {
        let sy = (y as f64 + 0.5) * scale_y - 0.5;
        for x in 0..width {
            let sx = (x as f64 + 0.5) * scale_x - 0.5;
            sample(image, sx, sy, &mut px);
            for (ch, v) in px.iter().enumerate() {
                out[[y, x, ch]] = *v;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp(h: usize, w: usize) -> Pixels {
        Array3::from_shape_fn((h, w, 3), |(y, x, c)| ((y * 31 + x * 7 + c * 50) % 256) as f64)
    }

    #[test]
    fn identity_is_bit_exact() {
        let img = ramp(13, 17);
        assert_eq!(
            apply_transform(&img, &TransformParams::identity(), FillMode::Nearest),
            img
        );
    }

    #[test]
    fn zero_angle_affine_path_is_exact() {
        // integral shift lands exactly on pixels
        let img = ramp(10, 10);
        let p = TransformParams {
            shift_x: 0.2,
            ..Default::default()
        };
        let out = apply_transform(&img, &p, FillMode::Nearest);
        assert_eq!(out[[4, 5, 0]], img[[4, 3, 0]]);
        // vacated left columns replicate the edge
        assert_eq!(out[[4, 0, 1]], img[[4, 0, 1]]);
        assert_eq!(out[[4, 1, 1]], img[[4, 0, 1]]);
    }

    #[test]
    fn flip_twice_is_identity() {
        let img = ramp(6, 9);
        let p = TransformParams {
            flip_horizontal: true,
            ..Default::default()
        };
        let once = apply_transform(&img, &p, FillMode::Nearest);
        assert_ne!(once, img);
        assert_eq!(apply_transform(&once, &p, FillMode::Nearest), img);
        assert_eq!(once[[2, 0, 0]], img[[2, 8, 0]]);
    }

    #[test]
    fn rotation_by_180_matches_double_flip() {
        let img = ramp(7, 7);
        let rot = TransformParams {
            rotation_deg: 180.0,
            ..Default::default()
        };
        let flips = TransformParams {
            flip_horizontal: true,
            flip_vertical: true,
            ..Default::default()
        };
        let a = apply_transform(&img, &rot, FillMode::Nearest);
        let b = apply_transform(&img, &flips, FillMode::Nearest);
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn resize_constant_and_identity() {
        let img = Array3::from_elem((20, 30, 3), 77.0);
        let r = resize_bilinear(&img, 8, 5);
        assert_eq!(r.dim(), (8, 5, 3));
        assert!(r.iter().all(|&v| (v - 77.0).abs() < 1e-12));
        let img = ramp(5, 5);
        assert_eq!(resize_bilinear(&img, 5, 5), img);
    }

    #[test]
    fn upsample_two_pixels() {
        // 1x2 -> 1x4 with half-pixel centers: 0, .25, .75, 1 of the span
        let img = Array3::from_shape_vec((1, 2, 1), vec![0.0, 100.0]).unwrap();
        let r = resize_bilinear(&img, 1, 4);
        let v: Vec<f64> = r.iter().copied().collect();
        assert_eq!(v, vec![0.0, 25.0, 75.0, 100.0]);
    }

    proptest! {
        #[test]
        fn flips_permute_pixels(h in 1usize..12, w in 1usize..12, fh: bool, fv: bool, seed in 0u64..1000) {
            let img = Array3::from_shape_fn((h, w, 3), |(y, x, c)| ((seed as usize + y * 13 + x * 3 + c) % 256) as f64);
            let p = TransformParams { flip_horizontal: fh, flip_vertical: fv, ..Default::default() };
            let out = apply_transform(&img, &p, FillMode::Nearest);
            let mut a: Vec<f64> = img.iter().copied().collect();
            let mut b: Vec<f64> = out.iter().copied().collect();
            a.sort_by(f64::total_cmp);
            b.sort_by(f64::total_cmp);
            prop_assert_eq!(a, b);
        }

        #[test]
        fn values_stay_in_range(rot in -30.0f64..30.0, shear in -0.2f64..0.2, dx in -0.2f64..0.2, dy in -0.2f64..0.2) {
            let img = ramp(16, 12);
            let p = TransformParams { rotation_deg: rot, shear_deg: shear, shift_x: dx, shift_y: dy, ..Default::default() };
            let out = apply_transform(&img, &p, FillMode::Nearest);
            prop_assert_eq!(out.dim(), img.dim());
            let lo = img.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = img.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(out.iter().all(|&v| v >= lo - 1e-9 && v <= hi + 1e-9));
        }
    }
}
