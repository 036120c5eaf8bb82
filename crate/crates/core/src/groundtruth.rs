//! Ground-truth pressure maps and the contact metrology shared by training
//! and evaluation: total force, centre of pressure, Otsu threshold, IOU.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::geometry::SensorGeometry;
use crate::types::{ContactSpec, PressureMap};

/// Subsamples per pixel edge used for disc coverage.
pub const SUBSAMPLES: usize = 4;

/// Histogram bins used by [`otsu_threshold`] unless told otherwise.
pub const OTSU_BINS: usize = 256;

/// Rasterized press plus a flag set when the disc extends past the pad.
#[derive(Debug, Clone, PartialEq)]
pub struct Rasterized {
    pub map: PressureMap,
    /// Part of the disc fell off the pad; force conservation does not hold.
    pub clipped: bool,
}

/// Uniform contact pressure `F / (pi r^2)` in kPa.
#[inline]
pub fn plateau_kpa(force_n: f64, radius_mm: f64) -> f64 {
    // N / mm^2 = MPa = 1e3 kPa
    force_n / (PI * radius_mm * radius_mm) * 1e3
}

/// Number of covered subsamples (0..=16) per pixel for a disc.
///
/// Positions are measured in quarter-pixel units from the grid centre, so
/// every subsample sits on a half-integer and the pattern is mapped onto
/// itself by the dihedral group of the grid.
pub fn disc_coverage(center_mm: (f64, f64), radius_mm: f64, geom: &SensorGeometry) -> Vec<u8> {
    let n = geom.grid;
    let s = SUBSAMPLES as f64;
    let pitch = geom.pitch_mm();
    let half = (n * SUBSAMPLES) as f64 / 2.0;
    let cx = center_mm.0 / pitch * s - half;
    let cy = center_mm.1 / pitch * s - half;
    let r = radius_mm / pitch * s;
    let r2 = r * r;

    let mut cov = vec![0u8; n * n];
    // Pixel range touched by the disc bounding box.
    let lo = |c: f64| (((c - r + half) / s).floor() - 1.0).max(0.0) as usize;
    let hi = |c: f64| ((((c + r + half) / s).ceil() + 1.0).max(0.0) as usize).min(n);
    let (c0, c1) = (lo(cx), hi(cx));
    let (r0, r1) = (lo(cy), hi(cy));
    for row in r0..r1 {
        for col in c0..c1 {
            let mut count = 0u8;
            for sy in 0..SUBSAMPLES {
                let dy = (row * SUBSAMPLES + sy) as f64 + 0.5 - half - cy;
                for sx in 0..SUBSAMPLES {
                    let dx = (col * SUBSAMPLES + sx) as f64 + 0.5 - half - cx;
                    if dx * dx + dy * dy <= r2 {
                        count += 1;
                    }
                }
            }
            cov[row * n + col] = count;
        }
    }
    cov
}

/// Scale a coverage mask into a pressure map for the given force.
pub fn coverage_to_pressure(
    coverage: &[u8],
    force_n: f64,
    radius_mm: f64,
    grid: usize,
) -> PressureMap {
    let p = plateau_kpa(force_n, radius_mm);
    let denom = (SUBSAMPLES * SUBSAMPLES) as f64;
    let data = coverage
        .iter()
        .map(|&c| {
            if c == 0 {
                0.0
            } else {
                (c as f64 / denom * p) as f32
            }
        })
        .collect();
    PressureMap::new(grid, data).expect("coverage scaling yields valid pressure")
}

/// Rasterize a uniform-pressure cylindrical press.
pub fn rasterize_press(contact: &ContactSpec, geom: &SensorGeometry) -> Result<Rasterized> {
    contact.validate()?;
    geom.validate()?;
    let clipped = !geom.contains_disc(contact.center_mm, contact.radius_mm);
    if contact.force_n == 0.0 {
        return Ok(Rasterized {
            map: PressureMap::zeros(geom.grid),
            clipped,
        });
    }
    let cov = disc_coverage(contact.center_mm, contact.radius_mm, geom);
    Ok(Rasterized {
        map: coverage_to_pressure(&cov, contact.force_n, contact.radius_mm, geom.grid),
        clipped,
    })
}

/// Integral of the map over the pad, in newtons.
pub fn total_force(map: &PressureMap, geom: &SensorGeometry) -> f64 {
    let sum_kpa: f64 = map.data().iter().map(|&p| p as f64).sum();
    sum_kpa * 1e3 * geom.pixel_area_m2()
}

/// Pressure-weighted mean of pixel centres, in millimetres.
pub fn center_of_pressure(map: &PressureMap, geom: &SensorGeometry) -> Result<(f64, f64)> {
    let n = map.grid();
    let mut w = 0.0f64;
    let mut sx = 0.0f64;
    let mut sy = 0.0f64;
    for row in 0..n {
        for col in 0..n {
            let p = map.at(row, col) as f64;
            if p > 0.0 {
                let (x, y) = geom.pixel_center_mm(row, col);
                w += p;
                sx += p * x;
                sy += p * y;
            }
        }
    }
    if w <= 0.0 {
        return Err(Error::UndefinedCenterOfPressure);
    }
    Ok((sx / w, sy / w))
}

/// Bin index of every value for an equal-width histogram over `[min, max]`.
fn histogram(values: &[f32], bins: usize) -> Result<(Vec<u64>, f64, f64)> {
    if bins < 2 {
        return Err(Error::InvalidValue("Otsu needs at least 2 bins".into()));
    }
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in values {
        let v = v as f64;
        if !v.is_finite() {
            return Err(Error::InvalidValue("non-finite value in histogram".into()));
        }
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if values.is_empty() || hi <= lo {
        return Err(Error::ConstantMap);
    }
    let mut hist = vec![0u64; bins];
    for &v in values {
        hist[bin_index(v as f64, lo, hi, bins)] += 1;
    }
    Ok((hist, lo, hi))
}

#[inline]
fn bin_index(v: f64, lo: f64, hi: f64, bins: usize) -> usize {
    let i = ((v - lo) / (hi - lo) * bins as f64).floor();
    (i.max(0.0) as usize).min(bins - 1)
}

/// Between-class variance of a split as an exact fraction `num / den`, up to
/// a positive factor shared by all splits of the same histogram.
#[inline]
fn split_score(n0: u64, s0: u64, n1: u64, s1: u64) -> (u128, u128) {
    let d = (n1 as i128) * (s0 as i128) - (n0 as i128) * (s1 as i128);
    let num = d.unsigned_abs();
    (num.saturating_mul(num), (n0 as u128) * (n1 as u128))
}

/// `a > b` for fractions; falls back to floating point on overflow.
#[inline]
fn fraction_gt(a: (u128, u128), b: (u128, u128)) -> bool {
    match (a.0.checked_mul(b.1), b.0.checked_mul(a.1)) {
        (Some(l), Some(r)) if a.0 != u128::MAX && b.0 != u128::MAX => l > r,
        _ => (a.0 as f64 / a.1 as f64) > (b.0 as f64 / b.1 as f64),
    }
}

/// Otsu threshold of arbitrary values over `bins` equal-width bins.
///
/// Candidates are the interior bin edges; the lowest edge wins ties.
pub fn otsu_threshold_values(values: &[f32], bins: usize) -> Result<f64> {
    let (hist, lo, hi) = histogram(values, bins)?;
    let total_n: u64 = hist.iter().sum();
    let total_s: u64 = hist.iter().enumerate().map(|(i, &h)| i as u64 * h).sum();

    let mut best: Option<(usize, (u128, u128))> = None;
    let (mut n0, mut s0) = (0u64, 0u64);
    for k in 1..bins {
        n0 += hist[k - 1];
        s0 += (k as u64 - 1) * hist[k - 1];
        let n1 = total_n - n0;
        if n0 == 0 || n1 == 0 {
            continue;
        }
        let score = split_score(n0, s0, n1, total_s - s0);
        match best {
            Some((_, b)) if !fraction_gt(score, b) => {}
            _ => best = Some((k, score)),
        }
    }
    let (k, _) = best.ok_or(Error::ConstantMap)?;
    Ok(lo + (hi - lo) * k as f64 / bins as f64)
}

/// Otsu threshold of a pressure map in kPa.
pub fn otsu_threshold(map: &PressureMap, bins: usize) -> Result<f64> {
    otsu_threshold_values(map.data(), bins)
}

/// Contact mask of a pressure map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryContactMap {
    grid: usize,
    mask: Vec<bool>,
}

impl BinaryContactMap {
    pub fn new(grid: usize, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != grid * grid {
            return Err(Error::Shape(format!(
                "mask expects {} cells, got {}",
                grid * grid,
                mask.len()
            )));
        }
        Ok(Self { grid, mask })
    }

    pub fn grid(&self) -> usize {
        self.grid
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// `mask = pressure > threshold`.
pub fn binarize(map: &PressureMap, threshold: f64) -> BinaryContactMap {
    BinaryContactMap {
        grid: map.grid(),
        mask: map.data().iter().map(|&p| p as f64 > threshold).collect(),
    }
}

/// Support of a map, `pressure > 0`.
pub fn support(map: &PressureMap) -> BinaryContactMap {
    binarize(map, 0.0)
}

/// Intersection over union; 1 when both masks are empty.
pub fn iou(a: &BinaryContactMap, b: &BinaryContactMap) -> Result<f64> {
    if a.grid != b.grid {
        return Err(Error::Shape(format!(
            "iou of {} and {} grids",
            a.grid, b.grid
        )));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.mask.iter().zip(&b.mask) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}
