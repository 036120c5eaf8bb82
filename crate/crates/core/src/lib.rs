//! Bead-bag visuo-tactile sensing pipeline.

pub mod error;
pub mod geometry;
pub mod groundtruth;
pub mod simulator;
pub mod types;

pub use error::{Error, Result};
pub use geometry::SensorGeometry;
pub use types::{ContactSpec, Frame, FrameWindow, PressEpisode, PressGeometry, PressureMap};
pub mod dataset;
pub mod model;
pub mod training;
pub mod evaluation;
