//! On-disk dataset layout.
//!
//! ```text
//! <root>/manifest.json
//! <root>/episodes/<id>/meta.json
//! <root>/episodes/<id>/frames.u8      T * grid * grid * 3 bytes, RGB interleaved
//! <root>/episodes/<id>/force.f32      T little-endian f32, newtons
//! <root>/episodes/<id>/pressure.f32   T * grid * grid little-endian f32, kPa
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::split::Split;
use crate::dataset::EpisodeRecord;
use crate::error::{Error, Result};
use crate::geometry::SensorGeometry;
use crate::types::{PressEpisode, PressGeometry};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub geometry: SensorGeometry,
    pub episodes: Vec<String>,
    pub split: BTreeMap<String, Split>,
    pub provenance: String,
}

impl DatasetManifest {
    pub fn new(geometry: SensorGeometry, provenance: impl Into<String>) -> Self {
        Self {
            version: FORMAT_VERSION,
            geometry,
            episodes: Vec::new(),
            split: BTreeMap::new(),
            provenance: provenance.into(),
        }
    }

    /// Structural checks; the split, once assigned, must cover every episode exactly once.
    pub fn validate(&self) -> Result<()> {
        if self.version != FORMAT_VERSION {
            return Err(Error::Dataset(format!(
                "unsupported dataset version {} (expected {FORMAT_VERSION})",
                self.version
            )));
        }
        self.geometry.validate()?;
        let mut seen = std::collections::HashSet::new();
        for id in &self.episodes {
            if !seen.insert(id) {
                return Err(Error::Dataset(format!("episode `{id}` listed twice")));
            }
        }
        if !self.split.is_empty() {
            if self.split.len() != self.episodes.len()
                || self.episodes.iter().any(|id| !self.split.contains_key(id))
            {
                return Err(Error::Dataset(
                    "split must assign every episode exactly once".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn ids_in(&self, split: Split) -> Vec<String> {
        self.episodes
            .iter()
            .filter(|id| self.split.get(*id) == Some(&split))
            .cloned()
            .collect()
    }

    pub fn read(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: Self = serde_json::from_str(&text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn write(&self, root: &Path) -> Result<()> {
        let path = root.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMeta {
    pub center_mm: [f64; 2],
    pub radius_mm: f64,
    pub frame_count: usize,
}

pub fn episode_dir(root: &Path, id: &str) -> PathBuf {
    root.join("episodes").join(id)
}

fn check_id(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == '.')
        && id != "."
        && id != "..";
    if ok {
        Ok(())
    } else {
        Err(Error::Dataset(format!("invalid episode id `{id}`")))
    }
}

fn write_file(path: PathBuf, bytes: &[u8]) -> Result<()> {
    fs::write(&path, bytes).map_err(|e| Error::io(path, e))
}

fn read_file(path: PathBuf) -> Result<Vec<u8>> {
    fs::read(&path).map_err(|e| Error::io(path, e))
}

fn f32s_to_le(values: impl Iterator<Item = f32>) -> Vec<u8> {
    values.flat_map(|v| v.to_le_bytes()).collect()
}

fn le_to_f32s(bytes: &[u8], what: &str) -> Result<Vec<f32>> {
    if bytes.len() % 4 != 0 {
        return Err(Error::Dataset(format!(
            "{what}: length {} is not a multiple of 4",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

/// Single writer for a dataset root; the manifest is rewritten after every episode.
#[derive(Debug)]
pub struct DatasetWriter {
    root: PathBuf,
    manifest: DatasetManifest,
}

impl DatasetWriter {
    /// Start a new dataset. Fails if a manifest already exists.
    pub fn create(
        root: impl Into<PathBuf>,
        geometry: SensorGeometry,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        let root = root.into();
        geometry.validate()?;
        if root.join(MANIFEST_FILE).exists() {
            return Err(Error::Dataset(format!(
                "{} already holds a dataset",
                root.display()
            )));
        }
        let episodes = root.join("episodes");
        fs::create_dir_all(&episodes).map_err(|e| Error::io(&episodes, e))?;
        let manifest = DatasetManifest::new(geometry, provenance);
        manifest.write(&root)?;
        Ok(Self { root, manifest })
    }

    /// Append to an existing dataset.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        let manifest = DatasetManifest::read(&root)?;
        Ok(Self { root, manifest })
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Persist one episode; refuses ids already present.
    pub fn write_episode(&mut self, ep: &PressEpisode) -> Result<String> {
        check_id(&ep.id)?;
        let dir = episode_dir(&self.root, &ep.id);
        if self.manifest.episodes.contains(&ep.id) || dir.exists() {
            return Err(Error::DuplicateEpisode(ep.id.clone()));
        }
        let grid = self.manifest.geometry.grid;
        if ep.frames.iter().any(|f| f.grid() != grid)
            || ep.pressure_maps.iter().any(|m| m.grid() != grid)
        {
            return Err(Error::Shape(format!(
                "episode `{}` does not match grid {grid}",
                ep.id
            )));
        }
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;

        let meta = EpisodeMeta {
            center_mm: [ep.contact.center_mm.0, ep.contact.center_mm.1],
            radius_mm: ep.contact.radius_mm,
            frame_count: ep.len(),
        };
        let mut meta_text = serde_json::to_string_pretty(&meta)?;
        meta_text.push('\n');
        write_file(dir.join("meta.json"), meta_text.as_bytes())?;

        let mut frames = Vec::with_capacity(ep.len() * grid * grid * 3);
        for f in &ep.frames {
            frames.extend(f.to_u8());
        }
        write_file(dir.join("frames.u8"), &frames)?;
        write_file(
            dir.join("force.f32"),
            &f32s_to_le(ep.force_trace.iter().copied()),
        )?;
        write_file(
            dir.join("pressure.f32"),
            &f32s_to_le(
                ep.pressure_maps
                    .iter()
                    .flat_map(|m| m.data().iter().copied()),
            ),
        )?;

        self.manifest.episodes.push(ep.id.clone());
        // A partial split would violate the manifest invariant; it is reassigned on finish.
        self.manifest.split.clear();
        self.manifest.write(&self.root)?;
        Ok(ep.id.clone())
    }

    /// Record the split and write the final manifest.
    pub fn set_split(&mut self, split: BTreeMap<String, Split>) -> Result<()> {
        let mut m = self.manifest.clone();
        m.split = split;
        m.validate()?;
        m.write(&self.root)?;
        self.manifest = m;
        Ok(())
    }
}

/// Load one episode in its compact stored form.
pub fn read_record(root: &Path, id: &str, geom: &SensorGeometry) -> Result<EpisodeRecord> {
    check_id(id)?;
    let dir = episode_dir(root, id);
    let meta_path = dir.join("meta.json");
    let meta_text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: EpisodeMeta = serde_json::from_str(&meta_text)?;
    let t = meta.frame_count;
    let plane = geom.grid * geom.grid;

    let frames = read_file(dir.join("frames.u8"))?;
    if frames.len() != t * plane * 3 {
        return Err(Error::Dataset(format!(
            "episode `{id}`: frames.u8 has {} bytes, expected {}",
            frames.len(),
            t * plane * 3
        )));
    }
    let force = le_to_f32s(&read_file(dir.join("force.f32"))?, "force.f32")?;
    if force.len() != t {
        return Err(Error::Dataset(format!(
            "episode `{id}`: {} forces for {t} frames",
            force.len()
        )));
    }
    let pressure = le_to_f32s(&read_file(dir.join("pressure.f32"))?, "pressure.f32")?;
    if pressure.len() != t * plane {
        return Err(Error::Dataset(format!(
            "episode `{id}`: pressure.f32 has {} values, expected {}",
            pressure.len(),
            t * plane
        )));
    }
    EpisodeRecord::new(
        id.to_string(),
        PressGeometry {
            center_mm: (meta.center_mm[0], meta.center_mm[1]),
            radius_mm: meta.radius_mm,
        },
        *geom,
        frames,
        force,
        pressure,
    )
}

/// Load one episode as a [`PressEpisode`].
pub fn read_episode(root: &Path, id: &str, geom: &SensorGeometry) -> Result<PressEpisode> {
    read_record(root, id, geom)?.to_episode()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::{generate_episode, SimConfig};

    fn cfg() -> SimConfig {
        SimConfig {
            seed: 5,
            n_episodes: 3,
            frames_per_episode: 12,
            geom: SensorGeometry::with_grid(16).unwrap(),
            ..SimConfig::default()
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let c = cfg();
        let mut w = DatasetWriter::create(dir.path(), c.geom, "test").unwrap();
        for i in 0..3 {
            let ep = generate_episode(&c, i).unwrap();
            w.write_episode(&ep).unwrap();
            assert_eq!(w.manifest().episodes.len(), i + 1);
            assert_eq!(
                DatasetManifest::read(dir.path()).unwrap().episodes.len(),
                i + 1
            );
            let back = read_episode(dir.path(), &ep.id, &c.geom).unwrap();
            assert_eq!(back, ep);
        }
    }

    #[test]
    fn duplicate_ids_are_refused() {
        let dir = tempfile::tempdir().unwrap();
        let c = cfg();
        let mut w = DatasetWriter::create(dir.path(), c.geom, "test").unwrap();
        let ep = generate_episode(&c, 0).unwrap();
        w.write_episode(&ep).unwrap();
        assert!(matches!(
            w.write_episode(&ep),
            Err(Error::DuplicateEpisode(_))
        ));
        assert!(DatasetWriter::create(dir.path(), c.geom, "again").is_err());
        let mut reopened = DatasetWriter::open(dir.path()).unwrap();
        assert!(matches!(
            reopened.write_episode(&ep),
            Err(Error::DuplicateEpisode(_))
        ));
    }

    #[test]
    fn manifest_rejects_partial_split() {
        let mut m = DatasetManifest::new(SensorGeometry::default(), "x");
        m.episodes = vec!["a".into(), "b".into()];
        m.split.insert("a".into(), Split::Train);
        assert!(m.validate().is_err());
        m.split.insert("b".into(), Split::Test);
        assert!(m.validate().is_ok());
        m.episodes.push("a".into());
        assert!(m.validate().is_err());
    }

    #[test]
    fn truncated_files_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        let c = cfg();
        let mut w = DatasetWriter::create(dir.path(), c.geom, "test").unwrap();
        let ep = generate_episode(&c, 0).unwrap();
        w.write_episode(&ep).unwrap();
        let p = episode_dir(dir.path(), &ep.id).join("force.f32");
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 4]).unwrap();
        assert!(matches!(
            read_episode(dir.path(), &ep.id, &c.geom),
            Err(Error::Dataset(_))
        ));
    }

    #[test]
    fn manifest_keys() {
        let m = DatasetManifest::new(SensorGeometry::default(), "sim");
        let v: serde_json::Value = serde_json::to_value(&m).unwrap();
        let keys: Vec<&str> = v.as_object().unwrap().keys().map(|k| k.as_str()).collect();
        for k in ["version", "geometry", "episodes", "split", "provenance"] {
            assert!(keys.contains(&k));
        }
        assert_eq!(v["geometry"]["side_mm"], 40.0);
        assert_eq!(v["geometry"]["grid"], 256);
        assert_eq!(v["geometry"]["frame_hz"], 30.0);
    }
}
