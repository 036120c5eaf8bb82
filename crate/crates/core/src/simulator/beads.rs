//! Bead-bag state and its response to a cylindrical press.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::SensorGeometry;
use crate::types::ContactSpec;

/// Minimum allowed centre distance as a fraction of the radius sum.
pub const MIN_GAP_FACTOR: f64 = 0.9;

/// Parameters of the bead population.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeadParams {
    pub count: usize,
    /// Nominal swollen bead radius.
    pub radius_mm: f64,
    /// Radii are drawn uniformly from `radius_mm * (1 +/- jitter)`.
    pub radius_jitter: f64,
}

impl Default for BeadParams {
    fn default() -> Self {
        Self {
            count: 100,
            radius_mm: 2.0,
            radius_jitter: 0.05,
        }
    }
}

/// Positions of the beads, their rest configuration and how squashed each one is.
#[derive(Debug, Clone, PartialEq)]
pub struct BeadState {
    pub centers_mm: Vec<(f64, f64)>,
    pub radii_mm: Vec<f64>,
    pub rest_centers_mm: Vec<(f64, f64)>,
    /// Flattening of each bead in `[0, 1)`; zero at rest.
    pub compression: Vec<f64>,
}

impl BeadState {
    /// State with no beads.
    pub fn empty() -> Self {
        Self {
            centers_mm: Vec::new(),
            radii_mm: Vec::new(),
            rest_centers_mm: Vec::new(),
            compression: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.centers_mm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers_mm.is_empty()
    }

    /// Smallest `distance / (r_i + r_j)` over all pairs.
    pub fn min_gap_ratio(&self) -> f64 {
        min_gap_ratio(&self.centers_mm, &self.radii_mm)
    }
}

fn min_gap_ratio(centers: &[(f64, f64)], radii: &[f64]) -> f64 {
    let mut worst = f64::INFINITY;
    for i in 0..centers.len() {
        for j in i + 1..centers.len() {
            let d = dist(centers[i], centers[j]);
            worst = worst.min(d / (radii[i] + radii[j]));
        }
    }
    worst
}

#[inline]
fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

/// Default bag for a seed.
pub fn init_beads(seed: u64, geom: &SensorGeometry) -> Result<BeadState> {
    init_beads_with(seed, geom, &BeadParams::default())
}

/// Place beads by dart throwing, then settle any beads that did not fit with
/// a bounded pairwise push-apart relaxation.
pub fn init_beads_with(seed: u64, geom: &SensorGeometry, params: &BeadParams) -> Result<BeadState> {
    if params.count == 0 || !(params.radius_mm > 0.0) || !(0.0..1.0).contains(&params.radius_jitter)
    {
        return Err(Error::BeadPlacement(format!(
            "invalid bead parameters {params:?}"
        )));
    }
    let side = geom.side_mm;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let radii: Vec<f64> = (0..params.count)
        .map(|_| {
            let j = params.radius_jitter;
            params.radius_mm * (1.0 + rng.random_range(-j..=j))
        })
        .collect();
    if radii.iter().any(|&r| 2.0 * r >= side) {
        return Err(Error::BeadPlacement("beads larger than the pad".into()));
    }

    let sample = |rng: &mut ChaCha8Rng, r: f64| {
        (
            rng.random_range(r..=side - r),
            rng.random_range(r..=side - r),
        )
    };

    // Dart throwing with full separation.
    let mut centers: Vec<(f64, f64)> = Vec::with_capacity(params.count);
    const DART_ATTEMPTS: usize = 200;
    for &r in &radii {
        let mut placed = None;
        for _ in 0..DART_ATTEMPTS {
            let p = sample(&mut rng, r);
            if centers
                .iter()
                .zip(&radii)
                .all(|(&q, &rq)| dist(p, q) >= r + rq)
            {
                placed = Some(p);
                break;
            }
        }
        match placed {
            Some(p) => centers.push(p),
            None => break,
        }
    }
    while centers.len() < params.count {
        let r = radii[centers.len()];
        centers.push(sample(&mut rng, r));
    }

    // Push overlapping pairs apart until the packing is loose enough.
    const TARGET: f64 = 0.93;
    const MAX_SWEEPS: usize = 5000;
    let mut settled = min_gap_ratio(&centers, &radii) >= MIN_GAP_FACTOR;
    let mut sweep = 0;
    while !settled && sweep < MAX_SWEEPS {
        sweep += 1;
        for i in 0..centers.len() {
            for j in i + 1..centers.len() {
                let want = TARGET * (radii[i] + radii[j]);
                let (a, b) = (centers[i], centers[j]);
                let d = dist(a, b);
                if d >= want {
                    continue;
                }
                let (ux, uy) = if d > 1e-12 {
                    ((b.0 - a.0) / d, (b.1 - a.1) / d)
                } else {
                    let t = rng.random_range(0.0..std::f64::consts::TAU);
                    (t.cos(), t.sin())
                };
                let push = 0.5 * (want - d);
                centers[i] = (a.0 - ux * push, a.1 - uy * push);
                centers[j] = (b.0 + ux * push, b.1 + uy * push);
            }
        }
        for (c, &r) in centers.iter_mut().zip(&radii) {
            c.0 = c.0.clamp(r, side - r);
            c.1 = c.1.clamp(r, side - r);
        }
        settled = min_gap_ratio(&centers, &radii) >= MIN_GAP_FACTOR;
    }
    if !settled {
        return Err(Error::BeadPlacement(format!(
            "could not fit {} beads of radius {} mm after {MAX_SWEEPS} relaxation sweeps",
            params.count, params.radius_mm
        )));
    }

    Ok(BeadState {
        rest_centers_mm: centers.clone(),
        compression: vec![0.0; centers.len()],
        centers_mm: centers,
        radii_mm: radii,
    })
}

/// Peak radial displacement as a function of force, mm.
const DISPLACEMENT_MAX_MM: f64 = 2.5;
/// Force scale of the displacement saturation, N.
const DISPLACEMENT_FORCE_N: f64 = 8.0;
/// Force at which compression reaches one half, N.
const COMPRESSION_FORCE_N: f64 = 15.0;

/// Radial displacement magnitude of a bead at distance `d` from the press centre.
///
/// `A(F) * s * exp(-s^2)` with `s = d / r`: zero at the centre, largest at
/// `s = 1/sqrt(2)`, negligible beyond `3r`.
pub fn displacement_mm(force_n: f64, d_mm: f64, radius_mm: f64) -> f64 {
    if force_n <= 0.0 {
        return 0.0;
    }
    let amp = DISPLACEMENT_MAX_MM * (1.0 - (-force_n / DISPLACEMENT_FORCE_N).exp());
    let s = d_mm / radius_mm;
    amp * s * (-s * s).exp()
}

/// Flattening of a bead whose rest centre is `d` from the press centre.
pub fn compression(force_n: f64, d_mm: f64, radius_mm: f64) -> f64 {
    if force_n <= 0.0 {
        return 0.0;
    }
    let s = d_mm / radius_mm;
    force_n / (force_n + COMPRESSION_FORCE_N) * (-(s * s * s * s)).exp()
}

/// Deform the rest configuration under a press. Deterministic and continuous
/// in both the bead state and the contact; zero force returns the input.
pub fn press_response(beads: &BeadState, contact: &ContactSpec) -> BeadState {
    if contact.force_n <= 0.0 {
        return beads.clone();
    }
    let (cx, cy) = contact.center_mm;
    let mut out = beads.clone();
    for i in 0..beads.len() {
        let (rx, ry) = beads.rest_centers_mm[i];
        let (dx, dy) = (rx - cx, ry - cy);
        let d = dx.hypot(dy);
        let u = displacement_mm(contact.force_n, d, contact.radius_mm);
        if d > 1e-12 {
            out.centers_mm[i] = (rx + u * dx / d, ry + u * dy / d);
        } else {
            out.centers_mm[i] = (rx, ry);
        }
        out.compression[i] = compression(contact.force_n, d, contact.radius_mm);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_bag() {
        let g = SensorGeometry::default();
        assert_eq!(init_beads(42, &g).unwrap(), init_beads(42, &g).unwrap());
        assert_ne!(init_beads(42, &g).unwrap(), init_beads(43, &g).unwrap());
    }

    #[test]
    fn separation_and_containment() {
        let g = SensorGeometry::default();
        for seed in 0..5 {
            let b = init_beads(seed, &g).unwrap();
            assert_eq!(b.len(), 100);
            for i in 0..b.len() {
                let (x, y) = b.centers_mm[i];
                let r = b.radii_mm[i];
                assert!(x >= r && x <= 40.0 - r && y >= r && y <= 40.0 - r);
                for j in i + 1..b.len() {
                    let d = dist(b.centers_mm[i], b.centers_mm[j]);
                    assert!(d >= 0.9 * (r + b.radii_mm[j]), "pair {i},{j}: {d}");
                }
            }
        }
    }

    #[test]
    fn overfull_pad_fails() {
        let g = SensorGeometry::default();
        let p = BeadParams {
            count: 400,
            ..BeadParams::default()
        };
        assert!(matches!(
            init_beads_with(1, &g, &p),
            Err(Error::BeadPlacement(_))
        ));
    }

    #[test]
    fn zero_force_is_identity() {
        let g = SensorGeometry::default();
        let b = init_beads(1, &g).unwrap();
        let c = ContactSpec::new((20.0, 20.0), 5.0, 0.0).unwrap();
        assert_eq!(press_response(&b, &c), b);
    }

    #[test]
    fn doubling_force_never_shrinks_displacement() {
        let g = SensorGeometry::default();
        let b = init_beads(9, &g).unwrap();
        for f in [0.5, 2.0, 5.0, 10.0, 20.0] {
            let c = ContactSpec::new((14.0, 23.0), 5.0, f).unwrap();
            let one = press_response(&b, &c);
            let two = press_response(&b, &c.with_force(2.0 * f));
            for i in 0..b.len() {
                let d1 = dist(one.centers_mm[i], b.rest_centers_mm[i]);
                let d2 = dist(two.centers_mm[i], b.rest_centers_mm[i]);
                assert!(d2 >= d1);
                assert!(two.compression[i] >= one.compression[i]);
            }
        }
    }

    #[test]
    fn far_beads_barely_move() {
        // Largest amplitude at unbounded force, evaluated at 3r.
        assert!(displacement_mm(1e9, 15.0, 5.0) < 0.01);
        assert!(displacement_mm(1e9, 30.0, 5.0) < 0.01);
        let g = SensorGeometry::default();
        let b = init_beads(2, &g).unwrap();
        let c = ContactSpec::new((10.0, 10.0), 5.0, 20.0).unwrap();
        let moved = press_response(&b, &c);
        for i in 0..b.len() {
            if dist(b.rest_centers_mm[i], c.center_mm) > 15.0 {
                assert!(dist(moved.centers_mm[i], b.rest_centers_mm[i]) < 0.01);
            }
        }
    }
}
