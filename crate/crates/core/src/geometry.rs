//! Sensor geometry and the single sensor coordinate frame.
//!
//! Millimetre coordinates `(x, y)` have their origin at the pad corner; `x`
//! runs along grid columns and `y` along grid rows. Pixel `(row, col)` has its
//! centre at `((col + 0.5) * pitch, (row + 0.5) * pitch)` in millimetres, so
//! the pad corner sits at continuous pixel coordinate `(-0.5, -0.5)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Physical layout of the sensing pad and its sampling grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorGeometry {
    /// Edge length of the square pad in millimetres.
    pub side_mm: f64,
    /// Pixels per pad edge.
    pub grid: usize,
    /// Capture rate in Hz.
    pub frame_hz: f64,
}

impl Default for SensorGeometry {
    fn default() -> Self {
        Self {
            side_mm: 40.0,
            grid: 256,
            frame_hz: 30.0,
        }
    }
}

impl SensorGeometry {
    pub fn new(side_mm: f64, grid: usize, frame_hz: f64) -> Result<Self> {
        let geom = Self {
            side_mm,
            grid,
            frame_hz,
        };
        geom.validate()?;
        Ok(geom)
    }

    /// Default pad with a different grid resolution.
    pub fn with_grid(grid: usize) -> Result<Self> {
        Self::new(40.0, grid, 30.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.side_mm.is_finite() && self.side_mm > 0.0) {
            return Err(Error::Geometry(format!(
                "side_mm must be > 0, got {}",
                self.side_mm
            )));
        }
        if self.grid < 8 {
            return Err(Error::Geometry(format!(
                "grid must be >= 8, got {}",
                self.grid
            )));
        }
        if !(self.frame_hz.is_finite() && self.frame_hz > 0.0) {
            return Err(Error::Geometry(format!(
                "frame_hz must be > 0, got {}",
                self.frame_hz
            )));
        }
        Ok(())
    }

    /// Pixel pitch in millimetres.
    #[inline]
    pub fn pitch_mm(&self) -> f64 {
        self.side_mm / self.grid as f64
    }

    /// Area of one pixel in square metres.
    #[inline]
    pub fn pixel_area_m2(&self) -> f64 {
        let pitch_m = self.pitch_mm() * 1e-3;
        pitch_m * pitch_m
    }

    #[inline]
    pub fn pixel_count(&self) -> usize {
        self.grid * self.grid
    }

    /// Millimetre position to continuous `(row, col)` pixel coordinates.
    #[inline]
    pub fn mm_to_px(&self, p_mm: (f64, f64)) -> (f64, f64) {
        let pitch = self.pitch_mm();
        (p_mm.1 / pitch - 0.5, p_mm.0 / pitch - 0.5)
    }

    /// Continuous `(row, col)` pixel coordinates to millimetre position `(x, y)`.
    #[inline]
    pub fn px_to_mm(&self, p_px: (f64, f64)) -> (f64, f64) {
        let pitch = self.pitch_mm();
        ((p_px.1 + 0.5) * pitch, (p_px.0 + 0.5) * pitch)
    }

    /// Centre of pixel `(row, col)` in millimetres.
    #[inline]
    pub fn pixel_center_mm(&self, row: usize, col: usize) -> (f64, f64) {
        self.px_to_mm((row as f64, col as f64))
    }

    /// Whether a disc lies entirely on the pad.
    pub fn contains_disc(&self, center_mm: (f64, f64), radius_mm: f64) -> bool {
        let (x, y) = center_mm;
        x - radius_mm >= 0.0
            && y - radius_mm >= 0.0
            && x + radius_mm <= self.side_mm
            && y + radius_mm <= self.side_mm
    }
}

/// Free functions mirroring the methods, for call sites that read better that way.
pub fn mm_to_px(p_mm: (f64, f64), geom: &SensorGeometry) -> (f64, f64) {
    geom.mm_to_px(p_mm)
}

pub fn px_to_mm(p_px: (f64, f64), geom: &SensorGeometry) -> (f64, f64) {
    geom.px_to_mm(p_px)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn default_pitch() {
        let g = SensorGeometry::default();
        assert_eq!(g.pitch_mm(), 0.15625);
        assert!((g.pixel_area_m2() - 2.44140625e-8).abs() < 1e-20);
    }

    #[test]
    fn pad_center_and_corner() {
        let g = SensorGeometry::default();
        assert_eq!(g.mm_to_px((20.0, 20.0)), (127.5, 127.5));
        assert_eq!(g.mm_to_px((0.0, 0.0)), (-0.5, -0.5));
        assert_eq!(g.px_to_mm((127.5, 127.5)), (20.0, 20.0));
        assert_eq!(g.px_to_mm((-0.5, -0.5)), (0.0, 0.0));
    }

    #[test]
    fn one_pitch_along_x_moves_one_column() {
        let g = SensorGeometry::default();
        let (row, col) = g.mm_to_px((0.15625, 0.0));
        assert_eq!(col, 0.5);
        assert_eq!(row, -0.5);
        assert_eq!(g.px_to_mm((row, col)), (0.15625, 0.0));
    }

    #[test]
    fn rejects_bad_geometry() {
        assert!(SensorGeometry::new(0.0, 256, 30.0).is_err());
        assert!(SensorGeometry::new(40.0, 7, 30.0).is_err());
        assert!(SensorGeometry::new(40.0, 256, 0.0).is_err());
        assert!(SensorGeometry::new(f64::NAN, 256, 30.0).is_err());
    }

    #[test]
    fn round_trip_random_points() {
        use rand::{Rng, SeedableRng};
        let g = SensorGeometry::default();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let p = (rng.random_range(-10.0..50.0), rng.random_range(-10.0..50.0));
            let q = g.px_to_mm(g.mm_to_px(p));
            assert!((p.0 - q.0).abs() < 1e-12 && (p.1 - q.1).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn px_mm_px_identity(r in -300.0f64..300.0, c in -300.0f64..300.0, grid in 8usize..512) {
            let g = SensorGeometry::with_grid(grid).unwrap();
            let (r2, c2) = g.mm_to_px(g.px_to_mm((r, c)));
            prop_assert!((r - r2).abs() < 1e-12);
            prop_assert!((c - c2).abs() < 1e-12);
        }
    }
}
