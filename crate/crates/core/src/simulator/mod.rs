//! Deterministic synthetic stand-in for the press rig.
//!
//! A bag of ~100 beads is deformed by a cylindrical finger following a
//! trapezoidal force profile. Every frame is rendered from the deformed bag
//! and paired with a rasterized uniform-pressure ground-truth map. Episodes
//! are a pure function of `(seed, episode_index)`.

pub mod beads;
pub mod camera;
pub mod render;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::SensorGeometry;
use crate::groundtruth::{coverage_to_pressure, disc_coverage};
use crate::types::{quantize_unit, ContactSpec, Frame, PressEpisode, PressGeometry, PressureMap};

pub use beads::{init_beads, init_beads_with, press_response, BeadParams, BeadState};
pub use camera::{downsample, unwarp_fisheye, FisheyeIntrinsics, LensModel, RgbImage};
pub use render::{render, render_clean};

/// Lowest peak force of a randomized press, N.
pub const MIN_PEAK_FORCE_N: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub seed: u64,
    pub n_episodes: usize,
    /// Mean episode length; actual lengths vary by +/-25%.
    pub frames_per_episode: usize,
    pub force_peak_n: f64,
    pub finger_radius_mm: f64,
    pub noise_std: f64,
    pub geom: SensorGeometry,
    pub bead_count: usize,
    pub bead_radius_mm: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_episodes: 500,
            frames_per_episode: 192,
            force_peak_n: 20.0,
            finger_radius_mm: 5.0,
            noise_std: 0.01,
            geom: SensorGeometry::default(),
            bead_count: 100,
            bead_radius_mm: 2.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.geom.validate()?;
        if self.n_episodes == 0 || self.frames_per_episode == 0 || self.bead_count == 0 {
            return Err(Error::InvalidValue(
                "simulator counts must be positive".into(),
            ));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::InvalidValue("noise_std must be >= 0".into()));
        }
        if !(self.force_peak_n > 0.0) {
            return Err(Error::InvalidValue("force_peak_n must be > 0".into()));
        }
        if !(self.finger_radius_mm > 0.0 && 2.0 * self.finger_radius_mm < self.geom.side_mm) {
            return Err(Error::InvalidValue(format!(
                "finger radius {} mm does not fit on the pad",
                self.finger_radius_mm
            )));
        }
        Ok(())
    }

    pub fn bead_params(&self) -> BeadParams {
        BeadParams {
            count: self.bead_count,
            radius_mm: self.bead_radius_mm,
            ..BeadParams::default()
        }
    }
}

/// Identifier of the `index`-th generated episode.
pub fn episode_id(index: usize) -> String {
    format!("ep{index:05}")
}

/// Piecewise-linear ramp / hold / release profile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Trapezoid {
    pub peak_n: f64,
    /// Frame where the ramp starts (force zero up to and including it).
    pub start: usize,
    pub ramp_up: usize,
    pub hold: usize,
    pub ramp_down: usize,
}

impl Trapezoid {
    pub fn force_at(&self, t: usize) -> f64 {
        let up_end = self.start + self.ramp_up;
        let hold_end = up_end + self.hold;
        let down_end = hold_end + self.ramp_down;
        if t <= self.start || t >= down_end {
            0.0
        } else if t < up_end {
            self.peak_n * (t - self.start) as f64 / self.ramp_up as f64
        } else if t <= hold_end {
            self.peak_n
        } else {
            self.peak_n * (down_end - t) as f64 / self.ramp_down as f64
        }
    }

    /// Frames strictly inside the ramp-up phase.
    pub fn ramp_up_range(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.ramp_up + 1
    }
}

/// Randomized press parameters for one episode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PressPlan {
    pub contact: PressGeometry,
    pub profile: Trapezoid,
    pub frames: usize,
}

/// Draw the press location, length and force profile of an episode.
pub fn plan_press(cfg: &SimConfig, rng: &mut ChaCha8Rng) -> PressPlan {
    let side = cfg.geom.side_mm;
    let r = cfg.finger_radius_mm;
    let center_mm = (
        rng.random_range(r..=side - r),
        rng.random_range(r..=side - r),
    );

    let mean = cfg.frames_per_episode as f64;
    let frames = ((mean * rng.random_range(0.75..=1.25)).round() as usize).max(8);
    let lead = ((frames as f64 * rng.random_range(0.05..=0.15)).round() as usize).max(1);
    let tail = ((frames as f64 * rng.random_range(0.05..=0.15)).round() as usize).max(1);
    let active = frames.saturating_sub(lead + tail).max(3);
    let hold = ((active as f64 * rng.random_range(0.2..=0.5)).round() as usize).min(active - 2);
    let ramp_up = ((active - hold) / 2).max(1);
    let ramp_down = (active - hold - ramp_up).max(1);
    let lo = MIN_PEAK_FORCE_N.min(cfg.force_peak_n);
    let peak_n = rng.random_range(lo..=cfg.force_peak_n);

    PressPlan {
        contact: PressGeometry {
            center_mm,
            radius_mm: r,
        },
        profile: Trapezoid {
            peak_n,
            start: lead - 1,
            ramp_up,
            hold,
            ramp_down,
        },
        frames,
    }
}

/// Generate episode `index` of the configured dataset.
pub fn generate_episode(cfg: &SimConfig, index: usize) -> Result<PressEpisode> {
    let bag = init_beads_with(cfg.seed, &cfg.geom, &cfg.bead_params())?;
    generate_episode_with_bag(cfg, index, &bag)
}

/// As [`generate_episode`], reusing an already-initialized bag.
pub fn generate_episode_with_bag(
    cfg: &SimConfig,
    index: usize,
    bag: &BeadState,
) -> Result<PressEpisode> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64 + 1);
    let plan = plan_press(cfg, &mut rng);
    let geom = &cfg.geom;
    let coverage = disc_coverage(plan.contact.center_mm, plan.contact.radius_mm, geom);

    let mut force_trace = Vec::with_capacity(plan.frames);
    let mut frames = Vec::with_capacity(plan.frames);
    let mut maps = Vec::with_capacity(plan.frames);
    for t in 0..plan.frames {
        let force = plan.profile.force_at(t);
        let contact = ContactSpec::new(plan.contact.center_mm, plan.contact.radius_mm, force)?;
        let state = press_response(bag, &contact);
        let ts = t as f64 / geom.frame_hz;
        let frame = render(&state, geom, cfg.noise_std, &mut rng, ts);
        // Quantize now so the stored 8-bit form round-trips exactly.
        let pixels = frame
            .pixels()
            .iter()
            .map(|&v| quantize_unit(v) as f32 / 255.0)
            .collect();
        frames.push(Frame::new(geom.grid, pixels, ts)?);
        maps.push(if force > 0.0 {
            coverage_to_pressure(&coverage, force, plan.contact.radius_mm, geom.grid)
        } else {
            PressureMap::zeros(geom.grid)
        });
        force_trace.push(force as f32);
    }
    PressEpisode::new(episode_id(index), plan.contact, force_trace, frames, maps)
}

/// The profile that [`generate_episode`] uses for an episode.
pub fn episode_plan(cfg: &SimConfig, index: usize) -> PressPlan {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64 + 1);
    plan_press(cfg, &mut rng)
}
