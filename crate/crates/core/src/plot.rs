//! Minimal PNG charts. Nothing here draws text, so no font backend is needed;
//! the accompanying tables carry the numbers.

use std::path::Path;

use plotters::prelude::*;

use crate::error::{Error, Result};

pub const WIDTH: u32 = 640;
pub const HEIGHT: u32 = 400;

/// Distinct series colors, cycled.
pub const PALETTE: [RGBColor; 6] = [
    RGBColor(31, 119, 180),
    RGBColor(255, 127, 14),
    RGBColor(44, 160, 44),
    RGBColor(214, 39, 40),
    RGBColor(148, 103, 189),
    RGBColor(140, 86, 75),
];

fn draw_err<E: std::fmt::Display>(path: &Path) -> impl FnOnce(E) -> Error + '_ {
    move |e| Error::write(path, e.to_string())
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    if !(lo.is_finite() && hi.is_finite()) {
        return (0.0, 1.0);
    }
    if (hi - lo).abs() < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

/// One polyline per series over a shared x axis, with faint horizontal guides.
pub fn line_chart(path: &Path, series: &[Vec<(f64, f64)>]) -> Result<()> {
    let points = series.iter().flatten();
    let (x0, x1) = points
        .clone()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.0), b.max(p.0)));
    let (y0, y1) = points
        .filter(|p| p.1.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.1), b.max(p.1)));
    let (x0, x1) = padded(x0, x1);
    let (y0, y1) = padded(y0, y1);

    let root = BitMapBackend::new(path, (WIDTH, HEIGHT)).into_drawing_area();
    root.fill(&WHITE).map_err(draw_err(path))?;
    let mut chart = ChartBuilder::on(&root)
        .margin(20)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(draw_err(path))?;
    for i in 0..=4 {
        let y = y0 + (y1 - y0) * i as f64 / 4.0;
        chart
            .draw_series(LineSeries::new([(x0, y), (x1, y)], RGBColor(225, 225, 225)))
            .map_err(draw_err(path))?;
    }
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let finite = s.iter().copied().filter(|p| p.1.is_finite());
        chart
            .draw_series(LineSeries::new(finite.clone(), color.stroke_width(2)))
            .map_err(draw_err(path))?;
        chart
            .draw_series(finite.map(|p| Circle::new(p, 3, color.filled())))
            .map_err(draw_err(path))?;
    }
    root.draw(&Rectangle::new([(0, 0), (WIDTH as i32 - 1, HEIGHT as i32 - 1)], BLACK))
        .map_err(draw_err(path))?;
    root.present().map_err(draw_err(path))
}

/// Grouped bars: `groups[g][s]` is the height of series `s` in group `g`.
/// The value axis is fixed to `[0, 1]`.
pub fn grouped_bar_chart(path: &Path, groups: &[Vec<f64>]) -> Result<()> {
    let n_series = groups.iter().map(Vec::len).max().unwrap_or(0).max(1);
    let root = BitMapBackend::new(path, (WIDTH, HEIGHT)).into_drawing_area();
    root.fill(&WHITE).map_err(draw_err(path))?;
    let mut chart = ChartBuilder::on(&root)
        .margin(20)
        .build_cartesian_2d(0.0..groups.len().max(1) as f64, 0.0..1.0f64)
        .map_err(draw_err(path))?;
    for i in 0..=4 {
        let y = i as f64 / 4.0;
        chart
            .draw_series(LineSeries::new(
                [(0.0, y), (groups.len() as f64, y)],
                RGBColor(225, 225, 225),
            ))
            .map_err(draw_err(path))?;
    }
    let bar = 0.8 / n_series as f64;
    for (g, values) in groups.iter().enumerate() {
        for (s, &v) in values.iter().enumerate() {
            let left = g as f64 + 0.1 + s as f64 * bar;
            let height = if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 };
            let color = PALETTE[s % PALETTE.len()];
            chart
                .draw_series([Rectangle::new(
                    [(left, 0.0), (left + bar * 0.9, height)],
                    color.filled(),
                )])
                .map_err(draw_err(path))?;
        }
    }
    root.present().map_err(draw_err(path))
}
