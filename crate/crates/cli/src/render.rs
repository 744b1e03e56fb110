//! Minimal raster plotting: a correlation heatmap and a forecast overlay,
//! drawn pixel by pixel and saved as PNG. No axes or text, just shapes and
//! a fixed color code (documented on the subcommands that emit them).

use std::path::Path;

use image::{Rgb, RgbImage};
use ndarray::ArrayView2;

use dgcformer_core::{Error, Result};

const WHITE: Rgb<u8> = Rgb([255, 255, 255]);
const GRID: Rgb<u8> = Rgb([210, 210, 210]);
const HISTORY: Rgb<u8> = Rgb([30, 30, 30]);
const TRUTH: Rgb<u8> = Rgb([40, 90, 200]);
const FORECAST: Rgb<u8> = Rgb([210, 60, 50]);

fn save(img: &RgbImage, path: &Path) -> Result<()> {
    img.save(path)
        .map_err(|e| Error::Config(format!("failed to write image {}: {e}", path.display())))
}

/// Diverging color for a value in `[-1, 1]`: blue for negative, white for
/// zero, red for positive.
fn diverging(v: f64) -> Rgb<u8> {
    let v = v.clamp(-1.0, 1.0);
    let fade = |full: u8, t: f64| (f64::from(full) + (255.0 - f64::from(full)) * (1.0 - t)) as u8;
    if v < 0.0 {
        let t = -v;
        Rgb([fade(40, t), fade(90, t), fade(200, t)])
    } else {
        Rgb([fade(210, v), fade(60, v), fade(50, v)])
    }
}

/// Renders a square matrix of values in `[-1, 1]` as a cell grid.
pub fn heatmap(matrix: &ArrayView2<'_, f64>, path: &Path) -> Result<()> {
    let n = matrix.nrows();
    if n == 0 || matrix.ncols() != n {
        return Err(Error::Config(format!(
            "heatmap needs a non-empty square matrix, got {}x{}",
            matrix.nrows(),
            matrix.ncols()
        )));
    }
    let cell = (256 / n).clamp(8, 48) as u32;
    let size = cell * n as u32;
    let mut img = RgbImage::from_pixel(size, size, WHITE);
    for ((i, j), &v) in matrix.indexed_iter() {
        let color = diverging(v);
        for dy in 0..cell {
            for dx in 0..cell {
                let border = dx == 0 || dy == 0;
                let pixel = if border { GRID } else { color };
                img.put_pixel(j as u32 * cell + dx, i as u32 * cell + dy, pixel);
            }
        }
    }
    save(&img, path)
}

/// One channel of a forecast plot: the lookback history, the ground truth
/// over the horizon, and the model forecast over the horizon.
pub struct ChannelPanel {
    pub history: Vec<f64>,
    pub truth: Vec<f64>,
    pub forecast: Vec<f64>,
}

fn draw_line(img: &mut RgbImage, a: (i64, i64), b: (i64, i64), color: Rgb<u8>) {
    let (mut x, mut y) = a;
    let dx = (b.0 - a.0).abs();
    let dy = -(b.1 - a.1).abs();
    let sx = if a.0 < b.0 { 1 } else { -1 };
    let sy = if a.1 < b.1 { 1 } else { -1 };
    let mut err = dx + dy;
    loop {
        if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, color);
        }
        if x == b.0 && y == b.1 {
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

fn draw_polyline(
    img: &mut RgbImage,
    values: &[f64],
    x_offset: usize,
    to_px: &dyn Fn(usize, f64) -> (i64, i64),
    color: Rgb<u8>,
) {
    for w in values.windows(2).enumerate() {
        let (i, pair) = w;
        draw_line(
            img,
            to_px(x_offset + i, pair[0]),
            to_px(x_offset + i + 1, pair[1]),
            color,
        );
    }
}

/// Draws stacked per-channel panels. In each panel the history is black,
/// the ground truth blue and the forecast red; a gray vertical line marks
/// the start of the horizon.
pub fn forecast_overlay(panels: &[ChannelPanel], path: &Path) -> Result<()> {
    if panels.is_empty() {
        return Err(Error::Config("forecast plot needs at least one channel".into()));
    }
    let width: u32 = 720;
    let panel_height: u32 = 160;
    let margin: i64 = 10;
    let height = panel_height * panels.len() as u32;
    let mut img = RgbImage::from_pixel(width, height, WHITE);

    for (idx, panel) in panels.iter().enumerate() {
        let steps = panel.history.len() + panel.truth.len().max(panel.forecast.len());
        let top = idx as u32 * panel_height;
        let all = panel
            .history
            .iter()
            .chain(&panel.truth)
            .chain(&panel.forecast);
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &v in all {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !(hi > lo) {
            lo -= 1.0;
            hi += 1.0;
        }
        let to_px = |x: usize, v: f64| -> (i64, i64) {
            let span_x = (f64::from(width) - 2.0 * margin as f64).max(1.0);
            let span_y = (f64::from(panel_height) - 2.0 * margin as f64).max(1.0);
            let fx = margin as f64 + span_x * x as f64 / (steps.max(2) - 1) as f64;
            let fy = margin as f64 + span_y * (1.0 - (v - lo) / (hi - lo));
            (fx as i64, fy as i64 + i64::from(top))
        };

        // Panel separator and the history/horizon boundary.
        if idx > 0 {
            draw_line(&mut img, (0, i64::from(top)), (i64::from(width) - 1, i64::from(top)), GRID);
        }
        if !panel.history.is_empty() {
            let boundary = to_px(panel.history.len() - 1, lo).0;
            draw_line(
                &mut img,
                (boundary, i64::from(top)),
                (boundary, i64::from(top + panel_height) - 1),
                GRID,
            );
        }

        draw_polyline(&mut img, &panel.history, 0, &to_px, HISTORY);
        // Anchor the horizon curves to the last history point so the lines
        // connect across the boundary.
        let offset = panel.history.len().saturating_sub(1);
        let with_anchor = |curve: &[f64]| -> Vec<f64> {
            match panel.history.last() {
                Some(&last) => std::iter::once(last).chain(curve.iter().copied()).collect(),
                None => curve.to_vec(),
            }
        };
        draw_polyline(&mut img, &with_anchor(&panel.truth), offset, &to_px, TRUTH);
        draw_polyline(&mut img, &with_anchor(&panel.forecast), offset, &to_px, FORECAST);
    }
    save(&img, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn heatmap_writes_a_png() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("heat.png");
        let m = Array2::from_shape_fn((4, 4), |(i, j)| if i == j { 1.0 } else { -0.3 });
        heatmap(&m.view(), &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert!(bytes.starts_with(&[0x89, b'P', b'N', b'G']));
    }

    #[test]
    fn heatmap_rejects_non_square_input() {
        let dir = tempfile::tempdir().unwrap();
        let m = Array2::zeros((2, 3));
        assert!(heatmap(&m.view(), &dir.path().join("x.png")).is_err());
    }

    #[test]
    fn overlay_handles_flat_series() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("flat.png");
        let panel = ChannelPanel {
            history: vec![1.0; 16],
            truth: vec![1.0; 4],
            forecast: vec![1.0; 4],
        };
        forecast_overlay(&[panel], &path).unwrap();
        assert!(std::fs::read(&path).unwrap().len() > 100);
    }
}
