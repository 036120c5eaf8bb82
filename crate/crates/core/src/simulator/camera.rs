//! Real-camera ingestion: equidistant fisheye unwarp and area downsampling
//! onto the sensor grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::SensorGeometry;
use crate::types::Frame;

/// Row-major, RGB-interleaved image of arbitrary size.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::Shape(format!(
                "{width}x{height} RGB image needs {} values, got {}",
                width * height * 3,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height * 3],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * 3 + c]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    /// Bilinear sample at continuous pixel position; zero outside the image.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> [f32; 3] {
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = (x - x0) as f32;
        let fy = (y - y0) as f32;
        let (xi, yi) = (x0 as i64, y0 as i64);
        let at = |xx: i64, yy: i64, c: usize| -> f32 {
            if xx < 0 || yy < 0 || xx >= self.width as i64 || yy >= self.height as i64 {
                0.0
            } else {
                self.get(xx as usize, yy as usize, c)
            }
        };
        std::array::from_fn(|c| {
            let top = at(xi, yi, c) * (1.0 - fx) + at(xi + 1, yi, c) * fx;
            let bottom = at(xi, yi + 1, c) * (1.0 - fx) + at(xi + 1, yi + 1, c) * fx;
            top * (1.0 - fy) + bottom * fy
        })
    }
}

/// Radial projection of the lens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LensModel {
    /// `r = f * theta`, the usual model for 180 degree lenses.
    Equidistant,
    /// `r = f * tan(theta)`: an undistorted pinhole, unwarping is the identity.
    Rectilinear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FisheyeIntrinsics {
    pub model: LensModel,
    /// Focal length in pixels.
    pub focal_px: f64,
    /// Principal point `(x, y)`, pixel centres at integer coordinates.
    pub center_px: (f64, f64),
    /// Full field of view in degrees, at most 180.
    pub fov_deg: f64,
}

impl FisheyeIntrinsics {
    pub fn validate(&self) -> Result<()> {
        if !(self.focal_px.is_finite() && self.focal_px > 0.0) {
            return Err(Error::InvalidValue(format!(
                "focal length must be > 0, got {}",
                self.focal_px
            )));
        }
        if !(self.fov_deg > 0.0 && self.fov_deg <= 180.0) {
            return Err(Error::InvalidValue(format!(
                "field of view must be in (0, 180], got {}",
                self.fov_deg
            )));
        }
        Ok(())
    }

    /// Distorted radius of a ray at angle `theta` from the optical axis.
    pub fn project_radius(&self, theta: f64) -> f64 {
        match self.model {
            LensModel::Equidistant => self.focal_px * theta,
            LensModel::Rectilinear => self.focal_px * theta.tan(),
        }
    }

    /// Inverse of [`Self::project_radius`].
    pub fn unproject_radius(&self, r: f64) -> f64 {
        match self.model {
            LensModel::Equidistant => r / self.focal_px,
            LensModel::Rectilinear => (r / self.focal_px).atan(),
        }
    }
}

/// Rectify a fisheye image into a pinhole view with the same focal length,
/// size and principal point.
pub fn unwarp_fisheye(raw: &RgbImage, intrinsics: &FisheyeIntrinsics) -> Result<RgbImage> {
    intrinsics.validate()?;
    let f = intrinsics.focal_px;
    let (cx, cy) = intrinsics.center_px;
    let half_fov = intrinsics.fov_deg.to_radians() / 2.0;
    let mut out = vec![0.0f32; raw.data.len()];
    for v in 0..raw.height {
        for u in 0..raw.width {
            let dx = u as f64 - cx;
            let dy = v as f64 - cy;
            let (sx, sy) = match intrinsics.model {
                LensModel::Rectilinear => (u as f64, v as f64),
                LensModel::Equidistant => {
                    let r_u = dx.hypot(dy);
                    if r_u == 0.0 {
                        (cx, cy)
                    } else {
                        let theta = (r_u / f).atan();
                        if theta > half_fov {
                            continue;
                        }
                        let scale = intrinsics.project_radius(theta) / r_u;
                        (cx + dx * scale, cy + dy * scale)
                    }
                }
            };
            let px = raw.sample_bilinear(sx, sy);
            out[(v * raw.width + u) * 3..(v * raw.width + u) * 3 + 3].copy_from_slice(&px);
        }
    }
    RgbImage::new(raw.width, raw.height, out)
}

/// Per-output-pixel `(source index, weight)` lists of a box filter that maps
/// `src` samples onto `dst` samples with exact fractional overlaps.
fn area_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let a = i as f64 * scale;
            let b = (i + 1) as f64 * scale;
            let mut w = Vec::new();
            let mut j = a.floor() as usize;
            while (j as f64) < b && j < src {
                let overlap = (b.min(j as f64 + 1.0) - a.max(j as f64)).max(0.0);
                if overlap > 0.0 {
                    w.push((j, overlap / scale));
                }
                j += 1;
            }
            w
        })
        .collect()
}

/// Centre-crop to a square, then area-average onto the sensor grid.
pub fn downsample(raw: &RgbImage, geom: &SensorGeometry, timestamp_s: f64) -> Result<Frame> {
    geom.validate()?;
    let side = raw.width.min(raw.height);
    if side == 0 {
        return Err(Error::Shape("cannot downsample an empty image".into()));
    }
    let x_off = (raw.width - side) / 2;
    let y_off = (raw.height - side) / 2;
    let n = geom.grid;
    let weights = area_weights(side, n);

    // Horizontal pass: side rows x n cols.
    let mut tmp = vec![0.0f64; side * n * 3];
    for y in 0..side {
        for (i, w) in weights.iter().enumerate() {
            for c in 0..3 {
                tmp[(y * n + i) * 3 + c] = w
                    .iter()
                    .map(|&(j, wt)| raw.get(x_off + j, y_off + y, c) as f64 * wt)
                    .sum();
            }
        }
    }
    let mut out = vec![0.0f32; n * n * 3];
    for (row, w) in weights.iter().enumerate() {
        for col in 0..n {
            for c in 0..3 {
                let v: f64 = w
                    .iter()
                    .map(|&(j, wt)| tmp[(j * n + col) * 3 + c] * wt)
                    .sum();
                out[(row * n + col) * 3 + c] = (v as f32).clamp(0.0, 1.0);
            }
        }
    }
    Frame::new(n, out, timestamp_s)
}
