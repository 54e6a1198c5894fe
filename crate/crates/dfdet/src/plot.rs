//! Minimal PNG line-chart renderer for validation curves. No text; the CSV
//! twin carries the labels, the legend swatches map by series order.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::Result;
use crate::metrics::CurveSeries;

const WIDTH: u32 = 800;
const HEIGHT: u32 = 500;
const MARGIN: u32 = 50;

const PALETTE: [[u8; 3]; 6] = [
    [214, 69, 65],
    [31, 119, 180],
    [44, 160, 44],
    [255, 127, 14],
    [148, 103, 189],
    [23, 190, 207],
];

pub fn render_curves(series: &[CurveSeries], path: &Path) -> Result<()> {
    let mut img = RgbImage::from_pixel(WIDTH, HEIGHT, Rgb([255, 255, 255]));

    let max_epoch = series
        .iter()
        .flat_map(|s| s.points.iter().map(|(e, _)| *e))
        .max()
        .unwrap_or(1)
        .max(1);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for s in series {
        for &(_, v) in &s.points {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if !lo.is_finite() || !hi.is_finite() {
        lo = 0.0;
        hi = 1.0;
    }
    if (hi - lo).abs() < 1e-9 {
        lo -= 0.5;
        hi += 0.5;
    }
    let pad = (hi - lo) * 0.05;
    let (lo, hi) = (lo - pad, hi + pad);

    let to_px = |epoch: f64, value: f64| -> (i64, i64) {
        let x = MARGIN as f64
            + epoch / max_epoch as f64 * (WIDTH - 2 * MARGIN) as f64;
        let y = (HEIGHT - MARGIN) as f64 - (value - lo) / (hi - lo) * (HEIGHT - 2 * MARGIN) as f64;
        (x as i64, y as i64)
    };

    // Frame and light horizontal gridlines.
    let axis = Rgb([40, 40, 40]);
    let grid = Rgb([225, 225, 225]);
    for g in 1..5 {
        let y = MARGIN + g * (HEIGHT - 2 * MARGIN) / 5;
        draw_line(&mut img, (MARGIN as i64, y as i64), ((WIDTH - MARGIN) as i64, y as i64), grid);
    }
    draw_line(
        &mut img,
        (MARGIN as i64, MARGIN as i64),
        (MARGIN as i64, (HEIGHT - MARGIN) as i64),
        axis,
    );
    draw_line(
        &mut img,
        (MARGIN as i64, (HEIGHT - MARGIN) as i64),
        ((WIDTH - MARGIN) as i64, (HEIGHT - MARGIN) as i64),
        axis,
    );

    for (si, s) in series.iter().enumerate() {
        let color = Rgb(PALETTE[si % PALETTE.len()]);
        let mut prev: Option<(i64, i64)> = None;
        for &(e, v) in &s.points {
            let p = to_px(e as f64, v);
            if let Some(q) = prev {
                draw_line(&mut img, q, p, color);
            }
            draw_dot(&mut img, p, color);
            prev = Some(p);
        }
        // Legend swatch, top-left, one per series in order.
        let ly = MARGIN as i64 + 14 * si as i64;
        for dx in 0..22i64 {
            for dy in -2..=2i64 {
                put(&mut img, MARGIN as i64 + 8 + dx, ly + dy, color);
            }
        }
    }

    img.save(path)?;
    Ok(())
}

fn put(img: &mut RgbImage, x: i64, y: i64, color: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, color);
    }
}

fn draw_dot(img: &mut RgbImage, (x, y): (i64, i64), color: Rgb<u8>) {
    for dx in -1..=1 {
        for dy in -1..=1 {
            put(img, x + dx, y + dy, color);
        }
    }
}

fn draw_line(img: &mut RgbImage, (x0, y0): (i64, i64), (x1, y1): (i64, i64), color: Rgb<u8>) {
    // Bresenham.
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    let (mut x, mut y) = (x0, y0);
    loop {
        put(img, x, y, color);
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}
