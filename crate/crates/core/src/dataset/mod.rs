//! Episode storage, episode-level splits, window sampling and dihedral augmentation.

pub mod augment;
pub mod split;
pub mod storage;

use std::collections::HashMap;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::SensorGeometry;
use crate::types::{Frame, FrameWindow, PressEpisode, PressGeometry, PressureMap};

pub use augment::{apply_dihedral, Dihedral};
pub use split::{split_counts, split_episodes, Split, DEFAULT_FRACTIONS};
pub use storage::{read_episode, read_record, DatasetManifest, DatasetWriter, EpisodeMeta};

/// An episode held in its stored form: 8-bit frames, f32 forces and maps.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub id: String,
    pub contact: PressGeometry,
    pub geom: SensorGeometry,
    frames: Vec<u8>,
    force: Vec<f32>,
    pressure: Vec<f32>,
}

impl EpisodeRecord {
    pub fn new(
        id: String,
        contact: PressGeometry,
        geom: SensorGeometry,
        frames: Vec<u8>,
        force: Vec<f32>,
        pressure: Vec<f32>,
    ) -> Result<Self> {
        let plane = geom.pixel_count();
        let t = force.len();
        if frames.len() != t * plane * 3 || pressure.len() != t * plane {
            return Err(Error::Shape(format!(
                "episode `{id}` arrays disagree on frame count"
            )));
        }
        Ok(Self {
            id,
            contact,
            geom,
            frames,
            force,
            pressure,
        })
    }

    pub fn from_episode(ep: &PressEpisode, geom: SensorGeometry) -> Result<Self> {
        let mut frames = Vec::with_capacity(ep.len() * geom.pixel_count() * 3);
        for f in &ep.frames {
            if f.grid() != geom.grid {
                return Err(Error::Shape(format!("episode `{}` grid mismatch", ep.id)));
            }
            frames.extend(f.to_u8());
        }
        let pressure = ep
            .pressure_maps
            .iter()
            .flat_map(|m| m.data().iter().copied())
            .collect();
        Self::new(
            ep.id.clone(),
            ep.contact,
            geom,
            frames,
            ep.force_trace.clone(),
            pressure,
        )
    }

    pub fn len(&self) -> usize {
        self.force.len()
    }

    pub fn is_empty(&self) -> bool {
        self.force.is_empty()
    }

    pub fn force(&self, t: usize) -> f32 {
        self.force[t]
    }

    pub fn force_trace(&self) -> &[f32] {
        &self.force
    }

    pub fn frame_bytes(&self, t: usize) -> &[u8] {
        let n = self.geom.pixel_count() * 3;
        &self.frames[t * n..(t + 1) * n]
    }

    pub fn timestamp(&self, t: usize) -> f64 {
        t as f64 / self.geom.frame_hz
    }

    pub fn frame(&self, t: usize) -> Frame {
        Frame::from_u8(self.geom.grid, self.frame_bytes(t), self.timestamp(t))
            .expect("stored frame has the record geometry")
    }

    pub fn pressure(&self, t: usize) -> &[f32] {
        let n = self.geom.pixel_count();
        &self.pressure[t * n..(t + 1) * n]
    }

    pub fn pressure_map(&self, t: usize) -> PressureMap {
        PressureMap::new(self.geom.grid, self.pressure(t).to_vec())
            .expect("stored pressure map is valid")
    }

    /// Frames `(t - h, t]`, oldest first.
    pub fn window(&self, t: usize, h: usize) -> Result<FrameWindow> {
        if h == 0 || t + 1 < h || t >= self.len() {
            return Err(Error::InvalidValue(format!(
                "no window of length {h} ending at frame {t} in episode `{}` ({} frames)",
                self.id,
                self.len()
            )));
        }
        FrameWindow::new((t + 1 - h..=t).map(|i| self.frame(i)).collect(), h)
    }

    pub fn to_episode(&self) -> Result<PressEpisode> {
        PressEpisode::new(
            self.id.clone(),
            self.contact,
            self.force.clone(),
            (0..self.len()).map(|t| self.frame(t)).collect(),
            (0..self.len()).map(|t| self.pressure_map(t)).collect(),
        )
    }
}

/// A dataset loaded into memory.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    records: Vec<EpisodeRecord>,
    index: HashMap<String, usize>,
}

impl Dataset {
    pub fn from_parts(manifest: DatasetManifest, records: Vec<EpisodeRecord>) -> Result<Self> {
        manifest.validate()?;
        if manifest.episodes.len() != records.len()
            || manifest
                .episodes
                .iter()
                .zip(&records)
                .any(|(id, r)| *id != r.id)
        {
            return Err(Error::Dataset(
                "records do not follow the manifest order".into(),
            ));
        }
        let index = records
            .iter()
            .enumerate()
            .map(|(i, r)| (r.id.clone(), i))
            .collect();
        Ok(Self {
            manifest,
            records,
            index,
        })
    }

    /// Build an in-memory dataset from generated episodes and a split.
    pub fn from_episodes(
        geom: SensorGeometry,
        episodes: &[PressEpisode],
        split: std::collections::BTreeMap<String, Split>,
        provenance: &str,
    ) -> Result<Self> {
        let mut manifest = DatasetManifest::new(geom, provenance);
        manifest.episodes = episodes.iter().map(|e| e.id.clone()).collect();
        manifest.split = split;
        let records = episodes
            .iter()
            .map(|e| EpisodeRecord::from_episode(e, geom))
            .collect::<Result<Vec<_>>>()?;
        Self::from_parts(manifest, records)
    }

    pub fn load(root: &Path) -> Result<Self> {
        let manifest = DatasetManifest::read(root)?;
        let geom = manifest.geometry;
        let records = manifest
            .episodes
            .par_iter()
            .map(|id| read_record(root, id, &geom))
            .collect::<Result<Vec<_>>>()?;
        Self::from_parts(manifest, records)
    }

    pub fn geometry(&self) -> SensorGeometry {
        self.manifest.geometry
    }

    pub fn records(&self) -> &[EpisodeRecord] {
        &self.records
    }

    pub fn get(&self, id: &str) -> Option<&EpisodeRecord> {
        self.index.get(id).map(|&i| &self.records[i])
    }

    pub fn split_of(&self, id: &str) -> Option<Split> {
        self.manifest.split.get(id).copied()
    }

    /// Records of one split in manifest order.
    pub fn records_in(&self, split: Split) -> Vec<&EpisodeRecord> {
        self.records
            .iter()
            .filter(|r| self.split_of(&r.id) == Some(split))
            .collect()
    }
}

/// One training example after augmentation.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedSample {
    pub episode_id: String,
    /// Index of the newest frame in the window.
    pub t: usize,
    pub window: FrameWindow,
    pub target: PressureMap,
    pub transform_id: u8,
}

impl AugmentedSample {
    /// Window and target after applying a dihedral transform.
    pub fn build(record: &EpisodeRecord, t: usize, h: usize, transform_id: u8) -> Result<Self> {
        let d = Dihedral::from_id(transform_id);
        let n = record.geom.grid;
        let window = record.window(t, h)?;
        let frames = window
            .frames()
            .iter()
            .map(|f| Frame::new(n, d.apply(f.pixels(), n, 3), f.timestamp_s()))
            .collect::<Result<Vec<_>>>()?;
        let target = PressureMap::new(n, d.apply(record.pressure(t), n, 1))?;
        Ok(Self {
            episode_id: record.id.clone(),
            t,
            window: FrameWindow::new(frames, h)?,
            target,
            transform_id,
        })
    }
}

/// Uniform window sampler over the training split.
#[derive(Debug, Clone)]
pub struct Sampler<'a> {
    dataset: &'a Dataset,
    eligible: Vec<&'a EpisodeRecord>,
    h: usize,
}

impl<'a> Sampler<'a> {
    /// Training episodes shorter than `h` are skipped with a warning.
    pub fn new(dataset: &'a Dataset, h: usize) -> Result<Self> {
        let mut eligible = Vec::new();
        for r in dataset.records_in(Split::Train) {
            if r.len() >= h {
                eligible.push(r);
            } else {
                log::warn!(
                    "skipping training episode `{}`: {} frames is shorter than the window {h}",
                    r.id,
                    r.len()
                );
            }
        }
        if eligible.is_empty() {
            return Err(Error::Dataset(format!(
                "no training episode has at least {h} frames"
            )));
        }
        Ok(Self {
            dataset,
            eligible,
            h,
        })
    }

    pub fn dataset(&self) -> &Dataset {
        self.dataset
    }

    pub fn eligible(&self) -> &[&'a EpisodeRecord] {
        &self.eligible
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<AugmentedSample> {
        let record = self.eligible[rng.random_range(0..self.eligible.len())];
        let t = rng.random_range(self.h - 1..record.len());
        let transform_id = rng.random_range(0..8u8);
        AugmentedSample::build(record, t, self.h, transform_id)
    }
}

/// Draw one augmented training window.
pub fn sample_training_item<R: Rng + ?Sized>(
    dataset: &Dataset,
    h: usize,
    rng: &mut R,
) -> Result<AugmentedSample> {
    Sampler::new(dataset, h)?.sample(rng)
}
