//! Layer primitives with explicit forward caches and backward passes.
//!
//! Tensors are `(batch, channel, height, width)` for spatial data and
//! `(batch, features)` for dense data.

use ndarray::{s, Array1, Array2, Array3, Array4, ArrayView3, Axis, Zip};
use rand::Rng;

/// 3x3 convolution, stride 1, zero "same" padding.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    /// `(out_channels, in_channels, 3, 3)`
    pub kernel: Array4<f64>,
    pub bias: Array1<f64>,
}

pub const KERNEL: usize = 3;

impl Conv2d {
    pub fn glorot(in_ch: usize, out_ch: usize, rng: &mut impl Rng) -> Self {
        let k2 = KERNEL * KERNEL;
        let limit = (6.0 / ((in_ch * k2 + out_ch * k2) as f64)).sqrt();
        Conv2d {
            kernel: Array4::from_shape_fn((out_ch, in_ch, KERNEL, KERNEL), |_| rng.gen_range(-limit..limit)),
            bias: Array1::zeros(out_ch),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.kernel.dim().1
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.dim().0
    }

    pub fn param_count(&self) -> usize {
        self.kernel.len() + self.bias.len()
    }

    fn kernel_matrix(&self) -> Array2<f64> {
        let (o, c, kh, kw) = self.kernel.dim();
        self.kernel
            .to_owned()
            .into_shape_with_order((o, c * kh * kw))
            .expect("contiguous kernel")
    }

    /// Returns the output and the per-sample column matrices.
    pub fn forward(&self, x: &Array4<f64>) -> (Array4<f64>, Vec<Array2<f64>>) {
        let (n, _, h, w) = x.dim();
        let k = self.kernel_matrix();
        let mut out = Array4::zeros((n, self.out_channels(), h, w));
        let mut cols = Vec::with_capacity(n);
        for (i, sample) in x.outer_iter().enumerate() {
            let col = im2col(sample);
            let mut y = k.dot(&col);
            y += &self.bias.view().insert_axis(Axis(1));
            out.index_axis_mut(Axis(0), i)
                .assign(&y.into_shape_with_order((self.out_channels(), h, w)).expect("shape"));
            cols.push(col);
        }
        (out, cols)
    }

    /// Returns `(d_input, d_kernel, d_bias)`.
    pub fn backward(&self, cols: &[Array2<f64>], d_out: &Array4<f64>) -> (Array4<f64>, Array4<f64>, Array1<f64>) {
        let (n, o, h, w) = d_out.dim();
        let c = self.in_channels();
        let k = self.kernel_matrix();
        let mut dk = Array2::<f64>::zeros(k.dim());
        let mut db = Array1::<f64>::zeros(o);
        let mut dx = Array4::zeros((n, c, h, w));
        for (i, col) in cols.iter().enumerate() {
            let dy = d_out
                .index_axis(Axis(0), i)
                .to_owned()
                .into_shape_with_order((o, h * w))
                .expect("shape");
            dk += &dy.dot(&col.t());
            db += &dy.sum_axis(Axis(1));
            let dcol = k.t().dot(&dy);
            col2im_add(&dcol, dx.index_axis_mut(Axis(0), i), h, w);
        }
        let dk = dk.into_shape_with_order((o, c, KERNEL, KERNEL)).expect("shape");
        (dx, dk, db)
    }
}

fn im2col(x: ArrayView3<f64>) -> Array2<f64> {
    let (c, h, w) = x.dim();
    let mut cols = Array2::zeros((c * KERNEL * KERNEL, h * w));
    for ch in 0..c {
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = ch * KERNEL * KERNEL + ky * KERNEL + kx;
                let mut dst = cols.row_mut(row);
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for xx in 0..w {
                        let sx = xx as isize + kx as isize - 1;
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        dst[y * w + xx] = x[[ch, sy as usize, sx as usize]];
                    }
                }
            }
        }
    }
    cols
}

fn col2im_add(cols: &Array2<f64>, mut dx: ndarray::ArrayViewMut3<f64>, h: usize, w: usize) {
    let c = dx.dim().0;
    for ch in 0..c {
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = cols.row(ch * KERNEL * KERNEL + ky * KERNEL + kx);
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for xx in 0..w {
                        let sx = xx as isize + kx as isize - 1;
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        dx[[ch, sy as usize, sx as usize]] += row[y * w + xx];
                    }
                }
            }
        }
    }
}

/// 2x2 average pooling, stride 2; a trailing odd row/column is dropped.
pub fn avg_pool2(x: &Array4<f64>) -> Array4<f64> {
    let (n, c, h, w) = x.dim();
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Array4::zeros((n, c, oh, ow));
    Zip::indexed(&mut out).for_each(|(i, ch, y, xx), v| {
        *v = 0.25
            * (x[[i, ch, 2 * y, 2 * xx]]
                + x[[i, ch, 2 * y, 2 * xx + 1]]
                + x[[i, ch, 2 * y + 1, 2 * xx]]
                + x[[i, ch, 2 * y + 1, 2 * xx + 1]]);
    });
    out
}

pub fn avg_pool2_backward(d_out: &Array4<f64>, input_dim: (usize, usize, usize, usize)) -> Array4<f64> {
    let mut dx = Array4::zeros(input_dim);
    Zip::indexed(d_out).for_each(|(i, ch, y, xx), &g| {
        let g = 0.25 * g;
        dx[[i, ch, 2 * y, 2 * xx]] = g;
        dx[[i, ch, 2 * y, 2 * xx + 1]] = g;
        dx[[i, ch, 2 * y + 1, 2 * xx]] = g;
        dx[[i, ch, 2 * y + 1, 2 * xx + 1]] = g;
    });
    dx
}

/// Global average pooling: per-channel spatial mean.
pub fn global_average_pool(x: &Array4<f64>) -> Array2<f64> {
    let (n, c, h, w) = x.dim();
    x.to_shape((n, c, h * w))
        .expect("shape")
        .mean_axis(Axis(2))
        .expect("non-empty spatial extent")
}

pub fn global_average_pool_backward(d_out: &Array2<f64>, h: usize, w: usize) -> Array4<f64> {
    let (n, c) = d_out.dim();
    let scale = 1.0 / (h * w) as f64;
    let mut dx = Array4::zeros((n, c, h, w));
    for ((i, ch), &g) in d_out.indexed_iter() {
        dx.slice_mut(s![i, ch, .., ..]).fill(g * scale);
    }
    dx
}

pub fn relu<D: ndarray::Dimension>(x: &ndarray::Array<f64, D>) -> ndarray::Array<f64, D> {
    x.mapv(|v| v.max(0.0))
}

/// Gradient through ReLU given its pre-activation.
pub fn relu_backward<D: ndarray::Dimension>(
    pre: &ndarray::Array<f64, D>,
    d_out: &ndarray::Array<f64, D>,
) -> ndarray::Array<f64, D> {
    let mut d = d_out.clone();
    Zip::from(&mut d).and(pre).for_each(|g, &z| {
        if z <= 0.0 {
            *g = 0.0;
        }
    });
    d
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `(inputs, outputs)`
    pub kernel: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn glorot(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        Dense {
            kernel: Array2::from_shape_fn((inputs, outputs), |_| rng.gen_range(-limit..limit)),
            bias: Array1::zeros(outputs),
        }
    }

    pub fn param_count(&self) -> usize {
        self.kernel.len() + self.bias.len()
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.kernel) + &self.bias
    }

    /// Returns `(d_input, d_kernel, d_bias)`.
    pub fn backward(&self, x: &Array2<f64>, d_out: &Array2<f64>) -> (Array2<f64>, Array2<f64>, Array1<f64>) {
        (d_out.dot(&self.kernel.t()), x.t().dot(d_out), d_out.sum_axis(Axis(0)))
    }
}

/// Inverted-dropout mask: kept units are scaled by `1 / (1 - rate)`.
pub fn dropout_mask<R: Rng + ?Sized>(shape: (usize, usize), rate: f64, rng: &mut R) -> Array2<f64> {
    let keep = 1.0 - rate;
    Array2::from_shape_simple_fn(shape, || if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
}

/// Spatial feature grid of one sample, `(channels, height, width)`.
pub type FeatureMap = Array3<f64>;
