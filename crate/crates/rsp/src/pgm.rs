//! Binary portable graymap (`P5`) output. Rows run along the grid's x axis
//! and columns along y, so pixel `(row i, col j)` is cell `(i, j)`.

use std::path::Path;

use rsp_core::model::NUM_CLASSES;

use crate::error::{io_err, Result};

/// Gray level per class: free, unknown, occupied, moving.
pub const CLASS_LEVELS: [u8; NUM_CLASSES] = [255, 128, 64, 0];

pub fn encode(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    assert_eq!(pixels.len(), width * height, "pixel count must match dimensions");
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

pub fn write(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    std::fs::write(path, encode(width, height, pixels)).map_err(io_err(path))
}

/// Linear map of `values` onto `0..=255` with `max` as white. Everything is
/// black when `max` is not positive.
pub fn scale(values: &[f64], max: f64) -> Vec<u8> {
    values
        .iter()
        .map(|&v| {
            if max > 0.0 {
                (v / max * 255.0).round().clamp(0.0, 255.0) as u8
            } else {
                0
            }
        })
        .collect()
}

pub fn classes(labels: &[u8]) -> Vec<u8> {
    labels.iter().map(|&c| CLASS_LEVELS[c as usize % NUM_CLASSES]).collect()
}

/// Velocity arrows on a white canvas `upscale` times the grid size. Each cell
/// with speed above `min_speed` gets a black line from its centre, one
/// cell length per `cell_speed` m/s.
pub fn arrows(x: usize, y: usize, v: &[f32], upscale: usize, cell_speed: f64, min_speed: f64) -> (usize, usize, Vec<u8>) {
    let (h, w) = (x * upscale, y * upscale);
    let mut img = vec![255u8; h * w];
    for i in 0..x {
        for j in 0..y {
            let c = i * y + j;
            let (vx, vy) = (v[2 * c] as f64, v[2 * c + 1] as f64);
            if vx.hypot(vy) <= min_speed {
                continue;
            }
            let s = upscale as f64 / cell_speed;
            let r0 = (i * upscale + upscale / 2) as i64;
            let c0 = (j * upscale + upscale / 2) as i64;
            let r1 = r0 + (vx * s).round() as i64;
            let c1 = c0 + (vy * s).round() as i64;
            line(&mut img, h, w, (r0, c0), (r1, c1));
        }
    }
    (w, h, img)
}

/// Bresenham line, clipped to the canvas.
fn line(img: &mut [u8], h: usize, w: usize, from: (i64, i64), to: (i64, i64)) {
    let (mut r, mut c) = from;
    let dr = (to.0 - r).abs();
    let dc = -(to.1 - c).abs();
    let sr = if r < to.0 { 1 } else { -1 };
    let sc = if c < to.1 { 1 } else { -1 };
    let mut err = dr + dc;
    loop {
        if (0..h as i64).contains(&r) && (0..w as i64).contains(&c) {
            img[r as usize * w + c as usize] = 0;
        }
        if (r, c) == to {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dc {
            err += dc;
            r += sr;
        }
        if e2 <= dr {
            err += dr;
            c += sc;
        }
    }
}
