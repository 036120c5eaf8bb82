//! Camera view of the bead bag: shaded discs on a dim, LED-lit background.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::geometry::SensorGeometry;
use crate::simulator::beads::BeadState;
use crate::types::Frame;

const BEAD_COLOR: [f32; 3] = [0.20, 0.45, 0.65];
const SQUASHED_COLOR: [f32; 3] = [0.95, 0.72, 0.30];
/// Apparent radius growth of a fully flattened bead.
const SQUASH_GROWTH: f64 = 0.35;
const HIGHLIGHT: f32 = 0.45;

fn background(geom: &SensorGeometry, row: usize, col: usize) -> [f32; 3] {
    let n = geom.grid as f64;
    let u = (col as f64 + 0.5) / n - 0.5;
    let v = (row as f64 + 0.5) / n - 0.5;
    let falloff = (1.0 - 2.0 * (u * u + v * v)) as f32;
    let b = 0.07 + 0.05 * falloff;
    [b, b * 1.05, b * 1.15]
}

/// Noise-free rendering in linear intensities.
pub fn render_clean(beads: &BeadState, geom: &SensorGeometry) -> Vec<f32> {
    let n = geom.grid;
    let pitch = geom.pitch_mm();
    let mut img = vec![0.0f32; n * n * 3];
    for row in 0..n {
        for col in 0..n {
            let bg = background(geom, row, col);
            img[(row * n + col) * 3..(row * n + col) * 3 + 3].copy_from_slice(&bg);
        }
    }

    for i in 0..beads.len() {
        let (bx, by) = beads.centers_mm[i];
        let squash = beads.compression[i];
        let radius = beads.radii_mm[i] * (1.0 + SQUASH_GROWTH * squash);
        let (hx, hy) = (bx - 0.3 * radius, by - 0.3 * radius);
        let hs2 = 2.0 * (0.3 * radius).powi(2) * (1.0 + squash);
        let color: [f32; 3] = std::array::from_fn(|c| {
            let t = squash as f32;
            BEAD_COLOR[c] * (1.0 - t) + SQUASHED_COLOR[c] * t
        });

        let (r0, c0) = geom.mm_to_px((bx - radius, by - radius));
        let (r1, c1) = geom.mm_to_px((bx + radius, by + radius));
        let rows = (r0.floor().max(0.0) as usize)..((r1.ceil() + 1.0).max(0.0) as usize).min(n);
        let cols = (c0.floor().max(0.0) as usize)..((c1.ceil() + 1.0).max(0.0) as usize).min(n);
        for row in rows {
            for col in cols.clone() {
                let (x, y) = geom.pixel_center_mm(row, col);
                let d = (x - bx).hypot(y - by);
                // Soft edge one pixel wide keeps frames continuous in bead motion.
                let alpha = ((radius - d) / pitch + 0.5).clamp(0.0, 1.0) as f32;
                if alpha <= 0.0 {
                    continue;
                }
                let rho = (d / radius).min(1.0);
                let shade = (0.55 + 0.45 * (1.0 - rho * rho).sqrt()) as f32;
                let spec = HIGHLIGHT * (-((x - hx).powi(2) + (y - hy).powi(2)) / hs2).exp() as f32;
                let px = &mut img[(row * n + col) * 3..(row * n + col) * 3 + 3];
                for c in 0..3 {
                    let v = (color[c] * shade + spec).min(1.0);
                    px[c] = px[c] * (1.0 - alpha) + v * alpha;
                }
            }
        }
    }
    img
}

/// Render a frame with additive Gaussian pixel noise, clipped to `[0, 1]`.
pub fn render<R: Rng + ?Sized>(
    beads: &BeadState,
    geom: &SensorGeometry,
    noise_std: f64,
    rng: &mut R,
    timestamp_s: f64,
) -> Frame {
    let mut img = render_clean(beads, geom);
    if noise_std > 0.0 {
        let normal = Normal::new(0.0f32, noise_std as f32).expect("noise_std is finite");
        for v in img.iter_mut() {
            *v += normal.sample(rng);
        }
    }
    for v in img.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }
    Frame::new(geom.grid, img, timestamp_s).expect("rendered frame is in range")
}
