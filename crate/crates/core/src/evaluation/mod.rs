//! Test-split metric suite, reports and streaming inference.

pub mod figures;
pub mod metrics;
pub mod stream;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, EpisodeRecord, Split};
use crate::error::{Error, Result};
use crate::model::{predict_frames, UNetParams};
use crate::types::{Frame, PressureMap};

pub use metrics::{
    contact_iou, cop_distance, force_percent_mae, pixel_mae, segment_heatmap, segment_of, Aggregate, ExactSum,
    FrameStats, GatedMean, SegmentHeatmap, DEFAULT_GATE_N, FORCE_EPS_N, SEGMENTS,
};
pub use stream::{stream_infer, StreamInfer, StreamOutput};

/// Anything that maps `H` frames to a raw pressure map.
pub trait Predictor: Sync {
    fn window_len(&self) -> usize;
    fn grid(&self) -> usize;
    fn predict_raw(&self, frames: &[Frame]) -> Result<Vec<f32>>;
}

impl Predictor for UNetParams<f32> {
    fn window_len(&self) -> usize {
        self.config.h
    }

    fn grid(&self) -> usize {
        self.config.grid
    }

    fn predict_raw(&self, frames: &[Frame]) -> Result<Vec<f32>> {
        predict_frames(self, frames)
    }
}

/// Baseline that always predicts zero pressure.
#[derive(Debug, Clone, Copy)]
pub struct ZeroBaseline {
    pub h: usize,
    pub grid: usize,
}

impl Predictor for ZeroBaseline {
    fn window_len(&self) -> usize {
        self.h
    }

    fn grid(&self) -> usize {
        self.grid
    }

    fn predict_raw(&self, frames: &[Frame]) -> Result<Vec<f32>> {
        if frames.len() != self.h {
            return Err(Error::Shape(format!("{} frames, baseline expects {}", frames.len(), self.h)));
        }
        Ok(vec![0.0; self.grid * self.grid])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub id: String,
    pub center_mm: [f64; 2],
    pub segment: [usize; 2],
    pub frames: usize,
    pub mae_kpa: f64,
    pub force_pct_mae: Option<f64>,
    pub cop_err_mm: Option<f64>,
    pub mean_iou: Option<f64>,
}

/// Metric suite over one split. Metrics with no qualifying frames are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mae_kpa: f64,
    pub force_pct_mae: Option<f64>,
    pub cop_err_mm: Option<f64>,
    pub mean_iou: Option<f64>,
    pub segment_mae: SegmentHeatmap,
    pub per_episode: Vec<EpisodeRow>,
    pub gate_n: f64,
    pub frames: usize,
    pub force_frames: usize,
    pub cop_frames: usize,
    pub cop_misses: usize,
    pub iou_frames: usize,
    pub iou_misses: usize,
    pub predictor: String,
    pub checkpoint_sha256: Option<String>,
    pub config: Option<serde_json::Value>,
}

/// A reconstruction kept for the figures.
#[derive(Debug, Clone)]
pub struct SampleMap {
    pub episode_id: String,
    pub t: usize,
    pub pred: PressureMap,
    pub target: PressureMap,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: EvalReport,
    pub samples: Vec<SampleMap>,
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub split: Split,
    pub gate_n: f64,
    /// Number of episodes whose peak-force frame is kept as a sample figure.
    pub samples: usize,
    pub predictor: String,
    pub checkpoint_sha256: Option<String>,
    pub config: Option<serde_json::Value>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            split: Split::Test,
            gate_n: DEFAULT_GATE_N,
            samples: 4,
            predictor: "unet".into(),
            checkpoint_sha256: None,
            config: None,
        }
    }
}

fn opt(r: Result<f64>) -> Option<f64> {
    r.ok()
}

/// Per-frame predictions for every full window (`t >= H - 1`) of an episode.
pub fn episode_predictions<P: Predictor + ?Sized>(p: &P, rec: &EpisodeRecord) -> Result<Vec<(usize, PressureMap)>> {
    let h = p.window_len();
    (h.saturating_sub(1)..rec.len())
        .map(|t| {
            let w = rec.window(t, h)?;
            let raw = p.predict_raw(w.frames())?;
            Ok((t, PressureMap::from_raw_clamped(p.grid(), &raw)?))
        })
        .collect()
}

fn evaluate_episode<P: Predictor + ?Sized>(
    p: &P,
    rec: &EpisodeRecord,
    gate_n: f64,
    keep_sample: bool,
) -> Result<(Aggregate, Option<SampleMap>)> {
    let geom = rec.geom;
    let mut agg = Aggregate::default();
    let mut best: Option<(f32, usize, PressureMap)> = None;
    for (t, pred) in episode_predictions(p, rec)? {
        let target = rec.pressure_map(t);
        agg.push(&FrameStats::new(&pred, &target, &geom, gate_n)?, gate_n);
        if keep_sample && best.as_ref().is_none_or(|b| rec.force(t) > b.0) {
            best = Some((rec.force(t), t, pred));
        }
    }
    let sample = best.map(|(_, t, pred)| SampleMap {
        episode_id: rec.id.clone(),
        t,
        pred,
        target: rec.pressure_map(t),
    });
    Ok((agg, sample))
}

/// Run the metric suite on one split; episodes are processed in parallel and
/// combined in manifest order.
pub fn evaluate<P: Predictor + ?Sized>(p: &P, dataset: &Dataset, opts: &EvalOptions) -> Result<Evaluation> {
    let geom = dataset.geometry();
    if p.grid() != geom.grid {
        return Err(Error::Shape(format!("predictor grid {} on a grid-{} dataset", p.grid(), geom.grid)));
    }
    let h = p.window_len();
    let records: Vec<&EpisodeRecord> = dataset
        .records_in(opts.split)
        .into_iter()
        .filter(|r| {
            let ok = r.len() >= h;
            if !ok {
                log::warn!("skipping episode `{}`: shorter than the window", r.id);
            }
            ok
        })
        .collect();
    if records.is_empty() {
        return Err(Error::UndefinedMetric("no evaluable episodes in split"));
    }
    let results: Vec<Result<(Aggregate, Option<SampleMap>)>> = records
        .par_iter()
        .enumerate()
        .map(|(i, r)| evaluate_episode(p, r, opts.gate_n, i < opts.samples))
        .collect();

    let mut total = Aggregate::default();
    let mut rows = Vec::with_capacity(records.len());
    let mut samples = Vec::new();
    for (rec, res) in records.iter().zip(results) {
        let (agg, sample) = res?;
        let c = rec.contact.center_mm;
        let seg = segment_of(c, &geom);
        rows.push(EpisodeRow {
            id: rec.id.clone(),
            center_mm: [c.0, c.1],
            segment: [seg.0, seg.1],
            frames: agg.frames,
            mae_kpa: agg.mae_kpa()?,
            force_pct_mae: opt(agg.force_pct_mae()),
            cop_err_mm: opt(agg.cop_err_mm()),
            mean_iou: opt(agg.mean_iou()),
        });
        total.merge(&agg);
        samples.extend(sample);
    }
    let maes: Vec<f64> = rows.iter().map(|r| r.mae_kpa).collect();
    let centers: Vec<(f64, f64)> = rows.iter().map(|r| (r.center_mm[0], r.center_mm[1])).collect();
    let report = EvalReport {
        mae_kpa: total.mae_kpa()?,
        force_pct_mae: opt(total.force_pct_mae()),
        cop_err_mm: opt(total.cop_err_mm()),
        mean_iou: opt(total.mean_iou()),
        segment_mae: segment_heatmap(&maes, &centers, &geom)?,
        per_episode: rows,
        gate_n: opts.gate_n,
        frames: total.frames,
        force_frames: total.force_frames,
        cop_frames: total.cop_frames,
        cop_misses: total.cop_misses,
        iou_frames: total.iou_frames,
        iou_misses: total.iou_misses,
        predictor: opts.predictor.clone(),
        checkpoint_sha256: opts.checkpoint_sha256.clone(),
        config: opts.config.clone(),
    };
    Ok(Evaluation { report, samples })
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.digits$}"))
}

/// Plain-text rendering of a report.
pub fn report_text(r: &EvalReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "predictor          {}", r.predictor);
    if let Some(h) = &r.checkpoint_sha256 {
        let _ = writeln!(s, "checkpoint sha256  {h}");
    }
    let _ = writeln!(s, "frames             {}", r.frames);
    let _ = writeln!(s, "pixel MAE (kPa)    {:.4}", r.mae_kpa);
    let _ = writeln!(s, "force error (%)    {}  over {} frames", fmt_opt(r.force_pct_mae, 3), r.force_frames);
    let _ = writeln!(
        s,
        "CoP error (mm)     {}  over {} frames, {} misses (gate {} N)",
        fmt_opt(r.cop_err_mm, 4),
        r.cop_frames,
        r.cop_misses,
        r.gate_n
    );
    let _ = writeln!(
        s,
        "contact IOU        {}  over {} frames, {} misses",
        fmt_opt(r.mean_iou, 4),
        r.iou_frames,
        r.iou_misses
    );
    let _ = writeln!(s, "\nsegment MAE (kPa), rows along y");
    for row in &r.segment_mae.cells {
        let cells: Vec<String> = row.iter().map(|c| format!("{:>9}", fmt_opt(*c, 3))).collect();
        let _ = writeln!(s, "  {}", cells.join(" "));
    }
    let _ = writeln!(s, "\n{:<10} {:>8} {:>8} {:>7} {:>10} {:>9} {:>8} {:>7}", "episode", "x_mm", "y_mm", "frames", "mae_kpa", "force_%", "cop_mm", "iou");
    for e in &r.per_episode {
        let _ = writeln!(
            s,
            "{:<10} {:>8.3} {:>8.3} {:>7} {:>10.4} {:>9} {:>8} {:>7}",
            e.id,
            e.center_mm[0],
            e.center_mm[1],
            e.frames,
            e.mae_kpa,
            fmt_opt(e.force_pct_mae, 2),
            fmt_opt(e.cop_err_mm, 3),
            fmt_opt(e.mean_iou, 3)
        );
    }
    s
}

pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TXT: &str = "report.txt";
pub const HEATMAP_PNG: &str = "segment_heatmap.png";

/// Write `report.json`, `report.txt`, the heatmap and one comparison image per sample.
pub fn write_outputs(eval: &Evaluation, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut json = serde_json::to_string_pretty(&eval.report)?;
    json.push('\n');
    let path = dir.join(REPORT_JSON);
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    let path = dir.join(REPORT_TXT);
    fs::write(&path, report_text(&eval.report)).map_err(|e| Error::io(&path, e))?;
    figures::write_heatmap(&eval.report.segment_mae, &dir.join(HEATMAP_PNG))?;
    for s in &eval.samples {
        figures::write_comparison(&s.pred, &s.target, &dir.join(format!("sample_{}_t{:04}.png", s.episode_id, s.t)))?;
    }
    Ok(())
}
