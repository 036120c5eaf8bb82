//! Value types shared by every stage of the pipeline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::SensorGeometry;

/// One RGB observation of the bead bag, stored row-major with interleaved
/// channels and intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    grid: usize,
    pixels: Vec<f32>,
    timestamp_s: f64,
}

impl Frame {
    pub fn new(grid: usize, pixels: Vec<f32>, timestamp_s: f64) -> Result<Self> {
        if pixels.len() != grid * grid * 3 {
            return Err(Error::Shape(format!(
                "frame expects {}x{}x3 = {} values, got {}",
                grid,
                grid,
                grid * grid * 3,
                pixels.len()
            )));
        }
        if let Some(v) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidValue(format!(
                "frame intensity {v} outside [0, 1]"
            )));
        }
        if !timestamp_s.is_finite() {
            return Err(Error::InvalidValue("frame timestamp must be finite".into()));
        }
        Ok(Self {
            grid,
            pixels,
            timestamp_s,
        })
    }

    /// Frame from 8-bit RGB bytes, `v / 255`.
    pub fn from_u8(grid: usize, bytes: &[u8], timestamp_s: f64) -> Result<Self> {
        let pixels = bytes.iter().map(|&b| b as f32 / 255.0).collect();
        Self::new(grid, pixels, timestamp_s)
    }

    pub fn constant(grid: usize, value: f32, timestamp_s: f64) -> Result<Self> {
        Self::new(grid, vec![value; grid * grid * 3], timestamp_s)
    }

    #[inline]
    pub fn grid(&self) -> usize {
        self.grid
    }

    #[inline]
    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    #[inline]
    pub fn timestamp_s(&self) -> f64 {
        self.timestamp_s
    }

    #[inline]
    pub fn rgb(&self, row: usize, col: usize) -> [f32; 3] {
        let i = (row * self.grid + col) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    /// Quantize to 8-bit RGB, `round(v * 255)`.
    pub fn to_u8(&self) -> Vec<u8> {
        self.pixels.iter().map(|&v| quantize_unit(v)).collect()
    }

    pub fn into_pixels(self) -> Vec<f32> {
        self.pixels
    }
}

#[inline]
pub fn quantize_unit(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// `H` consecutive frames, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameWindow {
    frames: Vec<Frame>,
}

impl FrameWindow {
    pub fn new(frames: Vec<Frame>, h: usize) -> Result<Self> {
        if frames.len() != h {
            return Err(Error::Shape(format!(
                "window expects {h} frames, got {}",
                frames.len()
            )));
        }
        if h == 0 {
            return Err(Error::Shape("window length must be >= 1".into()));
        }
        let grid = frames[0].grid();
        if frames.iter().any(|f| f.grid() != grid) {
            return Err(Error::Shape("window frames differ in resolution".into()));
        }
        if frames
            .windows(2)
            .any(|w| w[1].timestamp_s() <= w[0].timestamp_s())
        {
            return Err(Error::InvalidValue(
                "window timestamps must be strictly increasing".into(),
            ));
        }
        Ok(Self { frames })
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn grid(&self) -> usize {
        self.frames[0].grid()
    }

    /// Channel-major model input: `3H x grid x grid`, channel `3k + c` is
    /// colour `c` of frame `k`.
    pub fn to_channels(&self) -> Vec<f32> {
        let grid = self.grid();
        let plane = grid * grid;
        let mut out = vec![0.0f32; self.frames.len() * 3 * plane];
        for (k, frame) in self.frames.iter().enumerate() {
            let px = frame.pixels();
            for c in 0..3 {
                let dst = &mut out[(3 * k + c) * plane..(3 * k + c + 1) * plane];
                for (i, d) in dst.iter_mut().enumerate() {
                    *d = px[i * 3 + c];
                }
            }
        }
        out
    }
}

/// Per-pixel normal pressure in kPa, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PressureMap {
    grid: usize,
    data: Vec<f32>,
}

impl PressureMap {
    pub fn new(grid: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != grid * grid {
            return Err(Error::Shape(format!(
                "pressure map expects {} values, got {}",
                grid * grid,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidValue(format!(
                "pressure must be finite and non-negative, got {v}"
            )));
        }
        Ok(Self { grid, data })
    }

    pub fn zeros(grid: usize) -> Self {
        Self {
            grid,
            data: vec![0.0; grid * grid],
        }
    }

    /// Clamp raw model output at zero. Non-finite values are rejected.
    pub fn from_raw_clamped(grid: usize, raw: &[f32]) -> Result<Self> {
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidValue("raw prediction is not finite".into()));
        }
        Self::new(grid, raw.iter().map(|v| v.max(0.0)).collect())
    }

    #[inline]
    pub fn grid(&self) -> usize {
        self.grid
    }

    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.grid + col]
    }

    pub fn max(&self) -> f32 {
        self.data.iter().copied().fold(0.0, f32::max)
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn check_geometry(&self, geom: &SensorGeometry) -> Result<()> {
        if self.grid != geom.grid {
            return Err(Error::Shape(format!(
                "map grid {} does not match geometry grid {}",
                self.grid, geom.grid
            )));
        }
        Ok(())
    }
}

/// One instant of a cylindrical press.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContactSpec {
    pub center_mm: (f64, f64),
    pub radius_mm: f64,
    pub force_n: f64,
}

impl ContactSpec {
    pub fn new(center_mm: (f64, f64), radius_mm: f64, force_n: f64) -> Result<Self> {
        let c = Self {
            center_mm,
            radius_mm,
            force_n,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius_mm.is_finite() && self.radius_mm > 0.0) {
            return Err(Error::InvalidValue(format!(
                "contact radius must be > 0, got {}",
                self.radius_mm
            )));
        }
        if !(self.force_n.is_finite() && self.force_n >= 0.0) {
            return Err(Error::InvalidValue(format!(
                "contact force must be >= 0, got {}",
                self.force_n
            )));
        }
        if !(self.center_mm.0.is_finite() && self.center_mm.1.is_finite()) {
            return Err(Error::InvalidValue("contact center must be finite".into()));
        }
        Ok(())
    }

    pub fn with_force(self, force_n: f64) -> Self {
        Self { force_n, ..self }
    }
}

/// Static press geometry of an episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PressGeometry {
    pub center_mm: (f64, f64),
    pub radius_mm: f64,
}

/// One recorded press: frames, force trace, and the derived pressure maps.
#[derive(Debug, Clone, PartialEq)]
pub struct PressEpisode {
    pub id: String,
    pub contact: PressGeometry,
    pub force_trace: Vec<f32>,
    pub frames: Vec<Frame>,
    pub pressure_maps: Vec<PressureMap>,
}

impl PressEpisode {
    pub fn new(
        id: String,
        contact: PressGeometry,
        force_trace: Vec<f32>,
        frames: Vec<Frame>,
        pressure_maps: Vec<PressureMap>,
    ) -> Result<Self> {
        if frames.len() != force_trace.len() || frames.len() != pressure_maps.len() {
            return Err(Error::Shape(format!(
                "episode `{id}`: {} frames, {} forces, {} maps",
                frames.len(),
                force_trace.len(),
                pressure_maps.len()
            )));
        }
        if !(contact.radius_mm > 0.0) {
            return Err(Error::InvalidValue(format!(
                "episode `{id}`: radius must be > 0"
            )));
        }
        if let Some(f) = force_trace.iter().find(|f| !(f.is_finite() && **f >= 0.0)) {
            return Err(Error::InvalidValue(format!(
                "episode `{id}`: bad force {f}"
            )));
        }
        Ok(Self {
            id,
            contact,
            force_trace,
            frames,
            pressure_maps,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}
