//! Per-frame statistics and the metrics built from them.
//!
//! Sums run in 2^-64 fixed point, so every metric is independent of pixel
//! order and exactly invariant under the dihedral symmetries of the grid.

use crate::error::{Error, Result};
use crate::geometry::SensorGeometry;
use crate::groundtruth::{binarize, iou, otsu_threshold, support, OTSU_BINS};
use crate::types::PressureMap;

/// Ground-truth force above which a frame counts as loaded.
pub const FORCE_EPS_N: f64 = 0.01;
/// Default contact gate for centre-of-pressure and IOU.
pub const DEFAULT_GATE_N: f64 = 2.0;

const FIX_SCALE: f64 = 18_446_744_073_709_551_616.0;

#[inline]
fn fix(v: f64) -> i128 {
    (v * FIX_SCALE).round() as i128
}

#[inline]
fn unfix(s: i128) -> f64 {
    s as f64 / FIX_SCALE
}

/// Order-independent accumulator.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ExactSum(i128);

impl ExactSum {
    #[inline]
    pub fn add(&mut self, v: f64) {
        self.0 += fix(v);
    }

    pub fn merge(&mut self, other: ExactSum) {
        self.0 += other.0;
    }

    pub fn value(&self) -> f64 {
        unfix(self.0)
    }
}

/// Weighted moments of a map about the grid centre, in pixel units.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct Moments {
    w: ExactSum,
    sx: ExactSum,
    sy: ExactSum,
}

impl Moments {
    fn of(map: &PressureMap) -> Self {
        let n = map.grid();
        let c = (n as f64 - 1.0) / 2.0;
        let mut m = Moments::default();
        for (i, &p) in map.data().iter().enumerate() {
            if p > 0.0 {
                let p = p as f64;
                m.w.add(p);
                m.sx.add(p * ((i % n) as f64 - c));
                m.sy.add(p * ((i / n) as f64 - c));
            }
        }
        m
    }

    /// Centre of pressure relative to the grid centre, in pixels.
    fn centroid(&self) -> Option<(f64, f64)> {
        let w = self.w.value();
        (w > 0.0).then(|| (self.sx.value() / w, self.sy.value() / w))
    }
}

/// Everything the metric suite needs from one (prediction, target) pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameStats {
    pub abs_err: ExactSum,
    pub pixels: usize,
    pub force_pred_n: f64,
    pub force_gt_n: f64,
    /// Pixel offsets of the two centres of pressure from the grid centre.
    cop_pred: Option<(f64, f64)>,
    cop_gt: Option<(f64, f64)>,
    /// `None` for frames below the gate; `Some(None)` for a degenerate Otsu split.
    pub iou: Option<Option<f64>>,
    pitch_mm: f64,
}

impl FrameStats {
    /// `pred` must already be clamped (a [`PressureMap`] is non-negative).
    pub fn new(pred: &PressureMap, target: &PressureMap, geom: &SensorGeometry, gate_n: f64) -> Result<Self> {
        if pred.grid() != target.grid() || pred.grid() != geom.grid {
            return Err(Error::Shape(format!(
                "prediction grid {}, target grid {}, sensor grid {}",
                pred.grid(),
                target.grid(),
                geom.grid
            )));
        }
        let mut abs_err = ExactSum::default();
        for (&p, &t) in pred.data().iter().zip(target.data()) {
            abs_err.add((p as f64 - t as f64).abs());
        }
        let mp = Moments::of(pred);
        let mt = Moments::of(target);
        let to_n = 1e3 * geom.pixel_area_m2();
        let force_gt_n = mt.w.value() * to_n;
        let iou = (force_gt_n >= gate_n).then(|| match otsu_threshold(pred, OTSU_BINS) {
            Ok(th) => iou(&binarize(pred, th), &support(target)).ok(),
            Err(_) => None,
        });
        Ok(Self {
            abs_err,
            pixels: pred.data().len(),
            force_pred_n: mp.w.value() * to_n,
            force_gt_n,
            cop_pred: mp.centroid(),
            cop_gt: mt.centroid(),
            iou,
            pitch_mm: geom.pitch_mm(),
        })
    }

    /// Percent force error on loaded frames.
    pub fn force_pct(&self) -> Option<f64> {
        (self.force_gt_n > FORCE_EPS_N).then(|| (self.force_pred_n - self.force_gt_n).abs() / self.force_gt_n * 100.0)
    }

    /// Centre-of-pressure distance in mm: `None` below the gate,
    /// `Some(None)` when the prediction carries no force.
    pub fn cop_err(&self, gate_n: f64) -> Option<Option<f64>> {
        if self.force_gt_n < gate_n {
            return None;
        }
        let gt = self.cop_gt?;
        Some(self.cop_pred.map(|p| {
            let (dx, dy) = (p.0 - gt.0, p.1 - gt.1);
            self.pitch_mm * (dx * dx + dy * dy).sqrt()
        }))
    }
}

/// Running means over many frames.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Aggregate {
    pub abs_err: ExactSum,
    pub pixels: usize,
    pub frames: usize,
    pub force_pct: ExactSum,
    pub force_frames: usize,
    pub cop: ExactSum,
    pub cop_frames: usize,
    pub cop_misses: usize,
    pub iou: ExactSum,
    pub iou_frames: usize,
    pub iou_misses: usize,
}

impl Aggregate {
    pub fn push(&mut self, s: &FrameStats, gate_n: f64) {
        self.abs_err.merge(s.abs_err);
        self.pixels += s.pixels;
        self.frames += 1;
        if let Some(f) = s.force_pct() {
            self.force_pct.add(f);
            self.force_frames += 1;
        }
        match s.cop_err(gate_n) {
            Some(Some(d)) => {
                self.cop.add(d);
                self.cop_frames += 1;
            }
            Some(None) => self.cop_misses += 1,
            None => {}
        }
        match s.iou {
            Some(Some(v)) => {
                self.iou.add(v);
                self.iou_frames += 1;
            }
            Some(None) => self.iou_misses += 1,
            None => {}
        }
    }

    pub fn merge(&mut self, o: &Aggregate) {
        self.abs_err.merge(o.abs_err);
        self.pixels += o.pixels;
        self.frames += o.frames;
        self.force_pct.merge(o.force_pct);
        self.force_frames += o.force_frames;
        self.cop.merge(o.cop);
        self.cop_frames += o.cop_frames;
        self.cop_misses += o.cop_misses;
        self.iou.merge(o.iou);
        self.iou_frames += o.iou_frames;
        self.iou_misses += o.iou_misses;
    }

    pub fn mae_kpa(&self) -> Result<f64> {
        mean(self.abs_err, self.pixels, "pixel_mae")
    }

    pub fn force_pct_mae(&self) -> Result<f64> {
        mean(self.force_pct, self.force_frames, "force_percent_mae")
    }

    pub fn cop_err_mm(&self) -> Result<f64> {
        mean(self.cop, self.cop_frames, "cop_distance")
    }

    pub fn mean_iou(&self) -> Result<f64> {
        mean(self.iou, self.iou_frames, "contact_iou")
    }
}

fn mean(sum: ExactSum, n: usize, name: &'static str) -> Result<f64> {
    if n == 0 {
        Err(Error::UndefinedMetric(name))
    } else {
        Ok(sum.value() / n as f64)
    }
}

fn aggregate(preds: &[PressureMap], targets: &[PressureMap], geom: &SensorGeometry, gate_n: f64) -> Result<Aggregate> {
    if preds.len() != targets.len() {
        return Err(Error::Shape(format!("{} predictions for {} targets", preds.len(), targets.len())));
    }
    let mut agg = Aggregate::default();
    for (p, t) in preds.iter().zip(targets) {
        agg.push(&FrameStats::new(p, t, geom, gate_n)?, gate_n);
    }
    Ok(agg)
}

fn geom_of(maps: &[PressureMap]) -> Result<SensorGeometry> {
    let grid = maps.first().ok_or(Error::UndefinedMetric("empty frame set"))?.grid();
    SensorGeometry::with_grid(grid)
}

/// Pooled mean absolute error over all pixels of all frames, in kPa.
pub fn pixel_mae(preds: &[PressureMap], targets: &[PressureMap]) -> Result<f64> {
    aggregate(preds, targets, &geom_of(targets)?, f64::INFINITY)?.mae_kpa()
}

/// Mean percent error of total force over frames loaded above [`FORCE_EPS_N`].
pub fn force_percent_mae(preds: &[PressureMap], targets: &[PressureMap], geom: &SensorGeometry) -> Result<f64> {
    aggregate(preds, targets, geom, f64::INFINITY)?.force_pct_mae()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GatedMean {
    pub mean: f64,
    pub frames: usize,
    pub misses: usize,
}

/// Mean centre-of-pressure distance over frames with ground-truth force at
/// least `gate_n`; frames whose prediction carries no force are misses.
pub fn cop_distance(
    preds: &[PressureMap],
    targets: &[PressureMap],
    geom: &SensorGeometry,
    gate_n: f64,
) -> Result<GatedMean> {
    let a = aggregate(preds, targets, geom, gate_n)?;
    Ok(GatedMean {
        mean: a.cop_err_mm()?,
        frames: a.cop_frames,
        misses: a.cop_misses,
    })
}

/// Mean IOU of Otsu-binarized predictions against target support on gated
/// frames; constant predictions are misses.
pub fn contact_iou(
    preds: &[PressureMap],
    targets: &[PressureMap],
    geom: &SensorGeometry,
    gate_n: f64,
) -> Result<GatedMean> {
    let a = aggregate(preds, targets, geom, gate_n)?;
    Ok(GatedMean {
        mean: a.mean_iou()?,
        frames: a.iou_frames,
        misses: a.iou_misses,
    })
}

/// Side of the segment grid.
pub const SEGMENTS: usize = 4;

/// Mean episode MAE per sensor segment, indexed `[row][col]` with rows along y.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SegmentHeatmap {
    pub cells: [[Option<f64>; SEGMENTS]; SEGMENTS],
    pub counts: [[usize; SEGMENTS]; SEGMENTS],
}

impl SegmentHeatmap {
    pub fn empty_cells(&self) -> usize {
        self.cells.iter().flatten().filter(|c| c.is_none()).count()
    }
}

/// Segment containing a point; points on the far edge join the last segment.
pub fn segment_of(center_mm: (f64, f64), geom: &SensorGeometry) -> (usize, usize) {
    let cell = geom.side_mm / SEGMENTS as f64;
    let idx = |v: f64| ((v / cell).floor().max(0.0) as usize).min(SEGMENTS - 1);
    (idx(center_mm.1), idx(center_mm.0))
}

pub fn segment_heatmap(per_episode_mae: &[f64], centers_mm: &[(f64, f64)], geom: &SensorGeometry) -> Result<SegmentHeatmap> {
    if per_episode_mae.len() != centers_mm.len() {
        return Err(Error::Shape(format!(
            "{} episode errors for {} press centres",
            per_episode_mae.len(),
            centers_mm.len()
        )));
    }
    let mut sums = [[ExactSum::default(); SEGMENTS]; SEGMENTS];
    let mut counts = [[0usize; SEGMENTS]; SEGMENTS];
    for (&mae, &c) in per_episode_mae.iter().zip(centers_mm) {
        let (r, col) = segment_of(c, geom);
        sums[r][col].add(mae);
        counts[r][col] += 1;
    }
    let mut cells = [[None; SEGMENTS]; SEGMENTS];
    for r in 0..SEGMENTS {
        for c in 0..SEGMENTS {
            if counts[r][c] > 0 {
                cells[r][c] = Some(sums[r][c].value() / counts[r][c] as f64);
            }
        }
    }
    Ok(SegmentHeatmap { cells, counts })
}
