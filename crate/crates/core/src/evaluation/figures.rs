//! PNG renderings of the segment heatmap and of sample reconstructions.

use std::path::Path;

use image::{Rgb, RgbImage};

use super::metrics::{SegmentHeatmap, SEGMENTS};
use crate::error::{Error, Result};
use crate::types::PressureMap;

const STOPS: [(f32, [f32; 3]); 5] = [
    (0.0, [68.0, 1.0, 84.0]),
    (0.25, [59.0, 82.0, 139.0]),
    (0.5, [33.0, 145.0, 140.0]),
    (0.75, [94.0, 201.0, 98.0]),
    (1.0, [253.0, 231.0, 37.0]),
];

/// Perceptually ordered colour for `v` in [0, 1].
pub fn colormap(v: f32) -> Rgb<u8> {
    let v = if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 };
    let i = STOPS.iter().position(|s| s.0 >= v).unwrap_or(STOPS.len() - 1).max(1);
    let (a, b) = (STOPS[i - 1], STOPS[i]);
    let t = (v - a.0) / (b.0 - a.0);
    let mix = |k: usize| (a.1[k] + t * (b.1[k] - a.1[k])).round() as u8;
    Rgb([mix(0), mix(1), mix(2)])
}

fn save(img: &RgbImage, path: &Path) -> Result<()> {
    img.save_with_format(path, image::ImageFormat::Png).map_err(Error::from)
}

/// 4x4 heatmap, `cell_px` pixels per cell; empty cells are grey.
pub fn heatmap_image(h: &SegmentHeatmap, cell_px: u32) -> RgbImage {
    let max = h.cells.iter().flatten().flatten().cloned().fold(0.0f64, f64::max);
    let side = cell_px * SEGMENTS as u32;
    RgbImage::from_fn(side, side, |x, y| {
        let (r, c) = ((y / cell_px) as usize, (x / cell_px) as usize);
        if x % cell_px == 0 || y % cell_px == 0 {
            return Rgb([255, 255, 255]);
        }
        match h.cells[r][c] {
            Some(v) if max > 0.0 => colormap((v / max) as f32),
            Some(_) => colormap(0.0),
            None => Rgb([128, 128, 128]),
        }
    })
}

/// Prediction and target side by side on a shared colour scale.
pub fn comparison_image(pred: &PressureMap, target: &PressureMap) -> RgbImage {
    let n = pred.grid() as u32;
    let max = pred.max().max(target.max()).max(f32::MIN_POSITIVE);
    let gap = 4;
    RgbImage::from_fn(2 * n + gap, n, |x, y| {
        if x < n {
            colormap(pred.at(y as usize, x as usize) / max)
        } else if x >= n + gap {
            colormap(target.at(y as usize, (x - n - gap) as usize) / max)
        } else {
            Rgb([255, 255, 255])
        }
    })
}

pub fn write_heatmap(h: &SegmentHeatmap, path: &Path) -> Result<()> {
    save(&heatmap_image(h, 64), path)
}

pub fn write_comparison(pred: &PressureMap, target: &PressureMap, path: &Path) -> Result<()> {
    save(&comparison_image(pred, target), path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn colormap_endpoints() {
        assert_eq!(colormap(0.0), Rgb([68, 1, 84]));
        assert_eq!(colormap(1.0), Rgb([253, 231, 37]));
        assert_eq!(colormap(f32::NAN), colormap(0.0));
    }

    #[test]
    fn heatmap_marks_empty_cells() {
        let mut cells = [[None; SEGMENTS]; SEGMENTS];
        cells[0][0] = Some(2.0);
        let img = heatmap_image(&SegmentHeatmap { cells, counts: [[0; SEGMENTS]; SEGMENTS] }, 8);
        assert_eq!(img.dimensions(), (32, 32));
        assert_eq!(*img.get_pixel(4, 4), colormap(1.0));
        assert_eq!(*img.get_pixel(12, 4), Rgb([128, 128, 128]));
    }
}
