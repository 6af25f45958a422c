//! Minimal PNG output: heatmaps of 2D arrays and log-log scatter plots.

use std::path::Path;

use anyhow::{Context, Result};
use image::{Rgb, RgbImage};

const VIRIDIS: [[f64; 3]; 5] = [
    [68.0, 1.0, 84.0],
    [59.0, 82.0, 139.0],
    [33.0, 145.0, 140.0],
    [94.0, 201.0, 98.0],
    [253.0, 231.0, 37.0],
];

fn colour(v: f64) -> Rgb<u8> {
    let v = if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 };
    let pos = v * (VIRIDIS.len() - 1) as f64;
    let i = (pos.floor() as usize).min(VIRIDIS.len() - 2);
    let f = pos - i as f64;
    let c = |k: usize| (VIRIDIS[i][k] * (1.0 - f) + VIRIDIS[i + 1][k] * f).round() as u8;
    Rgb([c(0), c(1), c(2)])
}

/// `values[row * cols + col]`, row 0 at the top, scaled to `[min, max]`.
pub fn heatmap(path: &Path, values: &[f64], rows: usize, cols: usize) -> Result<()> {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in values.iter().filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let span = if hi > lo { hi - lo } else { 1.0 };
    let img = RgbImage::from_fn(cols as u32, rows as u32, |x, y| colour((values[y as usize * cols + x as usize] - lo) / span));
    img.save(path).with_context(|| format!("writing {}", path.display()))
}

/// One coloured series of `(x, y)` pairs on log axes, joined by lines.
pub struct Series<'a> {
    pub points: &'a [(f64, f64)],
    pub colour: [u8; 3],
}

pub fn loglog(path: &Path, series: &[Series<'_>]) -> Result<()> {
    const W: u32 = 640;
    const H: u32 = 480;
    const PAD: f64 = 40.0;
    let logs: Vec<(f64, f64)> = series
        .iter()
        .flat_map(|s| s.points.iter())
        .filter(|(x, y)| *x > 0.0 && *y > 0.0)
        .map(|(x, y)| (x.log10(), y.log10()))
        .collect();
    let mut img = RgbImage::from_pixel(W, H, Rgb([255, 255, 255]));
    if logs.is_empty() {
        return img.save(path).with_context(|| format!("writing {}", path.display()));
    }
    let bounds = |f: fn(&(f64, f64)) -> f64| {
        let lo = logs.iter().map(f).fold(f64::INFINITY, f64::min);
        let hi = logs.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
        let span = (hi - lo).max(1e-3);
        (lo - 0.05 * span, span * 1.1)
    };
    let (x0, xs) = bounds(|p| p.0);
    let (y0, ys) = bounds(|p| p.1);
    let to_px = |lx: f64, ly: f64| {
        (PAD + (lx - x0) / xs * (W as f64 - 2.0 * PAD), H as f64 - PAD - (ly - y0) / ys * (H as f64 - 2.0 * PAD))
    };
    let grey = Rgb([120, 120, 120]);
    for x in PAD as u32..W - PAD as u32 {
        img.put_pixel(x, H - PAD as u32, grey);
    }
    for y in PAD as u32..H - PAD as u32 {
        img.put_pixel(PAD as u32, y, grey);
    }
    let dot = |img: &mut RgbImage, px: f64, py: f64, c: Rgb<u8>, r: i64| {
        for dx in -r..=r {
            for dy in -r..=r {
                let (x, y) = (px.round() as i64 + dx, py.round() as i64 + dy);
                if (0..W as i64).contains(&x) && (0..H as i64).contains(&y) {
                    img.put_pixel(x as u32, y as u32, c);
                }
            }
        }
    };
    for s in series {
        let c = Rgb(s.colour);
        let pts: Vec<(f64, f64)> = s
            .points
            .iter()
            .filter(|(x, y)| *x > 0.0 && *y > 0.0)
            .map(|(x, y)| to_px(x.log10(), y.log10()))
            .collect();
        for w in pts.windows(2) {
            let steps = ((w[1].0 - w[0].0).abs().max((w[1].1 - w[0].1).abs()).ceil() as usize).max(1);
            for k in 0..=steps {
                let f = k as f64 / steps as f64;
                dot(&mut img, w[0].0 + f * (w[1].0 - w[0].0), w[0].1 + f * (w[1].1 - w[0].1), c, 0);
            }
        }
        for &(px, py) in &pts {
            dot(&mut img, px, py, c, 3);
        }
    }
    img.save(path).with_context(|| format!("writing {}", path.display()))
}
