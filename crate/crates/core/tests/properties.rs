//! Property tests for the cross-module invariants.

use std::collections::BTreeSet;

use beadnet::dataset::{split_counts, split_episodes, Dihedral, Split, DEFAULT_FRACTIONS};
use beadnet::evaluation::metrics::{contact_iou, cop_distance, pixel_mae};
use beadnet::groundtruth::{center_of_pressure, iou, otsu_threshold, rasterize_press, support, total_force, OTSU_BINS};
use beadnet::model::checkpoint::Checkpoint;
use beadnet::model::{mse_loss, UNetConfig, UNetParams};
use beadnet::types::quantize_unit;
use beadnet::{ContactSpec, PressureMap, SensorGeometry};
use proptest::prelude::*;

fn geom(grid: usize) -> SensorGeometry {
    SensorGeometry::with_grid(grid).unwrap()
}

/// Interior press on the default pad: radius, centre, force.
fn interior_press() -> impl Strategy<Value = ContactSpec> {
    (1.5f64..12.0, 0.0f64..1.0, 0.0f64..1.0, 0.1f64..40.0).prop_map(|(r, u, v, f)| {
        let span = 40.0 - 2.0 * r;
        ContactSpec::new((r + u * span, r + v * span), r, f).unwrap()
    })
}

fn grid_map(grid: usize) -> impl Strategy<Value = PressureMap> {
    prop::collection::vec(prop_oneof![Just(0.0f32), 0.0f32..200.0], grid * grid)
        .prop_map(move |d| PressureMap::new(grid, d).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn interior_presses_conserve_force(c in interior_press()) {
        let g = geom(256);
        let out = rasterize_press(&c, &g).unwrap();
        prop_assert!(!out.clipped);
        let f = total_force(&out.map, &g);
        prop_assert!((f - c.force_n).abs() / c.force_n < 0.005, "{} vs {}", f, c.force_n);
    }

    #[test]
    fn press_cop_is_the_disc_centre(c in interior_press()) {
        let g = geom(128);
        let map = rasterize_press(&c, &g).unwrap().map;
        let (x, y) = center_of_pressure(&map, &g).unwrap();
        // Subsample quantization moves the centroid by a small fraction of a pixel.
        prop_assert!((x - c.center_mm.0).abs() < 0.1 * g.pitch_mm());
        prop_assert!((y - c.center_mm.1).abs() < 0.1 * g.pitch_mm());
    }

    #[test]
    fn dihedral_images_of_a_press_move_its_cop(
        r in 2.0f64..6.0,
        // Centres on the 1/8-pitch lattice keep the rasterizer exactly equivariant.
        i in 56i32..200,
        j in 56i32..200,
    ) {
        let g = geom(32);
        let step = g.pitch_mm() / 8.0;
        let c = ContactSpec::new((i as f64 * step, j as f64 * step), r, 5.0).unwrap();
        let map = rasterize_press(&c, &g).unwrap().map;
        let cop = center_of_pressure(&map, &g).unwrap();
        let mut seen = BTreeSet::new();
        for d in Dihedral::all() {
            let moved = PressureMap::new(32, d.apply(map.data(), 32, 1)).unwrap();
            let want = d.map_point_mm(cop, g.side_mm);
            let got = center_of_pressure(&moved, &g).unwrap();
            prop_assert!((got.0 - want.0).abs() < 1e-9 && (got.1 - want.1).abs() < 1e-9);
            seen.insert(moved.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
            let direct = rasterize_press(
                &ContactSpec::new(d.map_point_mm(c.center_mm, g.side_mm), r, 5.0).unwrap(),
                &g,
            ).unwrap().map;
            prop_assert_eq!(direct, moved);
        }
        let off_axis = i != j && i + j != 256 && i != 128 && j != 128;
        if off_axis {
            prop_assert_eq!(seen.len(), 8);
        }
    }

    #[test]
    fn dihedral_inverse_and_composition(a in 0u8..8, b in 0u8..8, data in prop::collection::vec(any::<u16>(), 5 * 5 * 2)) {
        let (a, b) = (Dihedral::from_id(a), Dihedral::from_id(b));
        prop_assert_eq!(a.inverse().apply(&a.apply(&data, 5, 2), 5, 2), data.clone());
        prop_assert_eq!(b.apply(&a.apply(&data, 5, 2), 5, 2), a.then(b).apply(&data, 5, 2));
        prop_assert_eq!(a.then(a.inverse()), Dihedral::IDENTITY);
    }

    #[test]
    fn otsu_threshold_lies_inside_the_range(m in grid_map(12)) {
        match otsu_threshold(&m, OTSU_BINS) {
            Ok(t) => {
                let lo = m.data().iter().cloned().fold(f32::INFINITY, f32::min) as f64;
                prop_assert!(t > lo && t <= m.max() as f64);
            }
            Err(_) => prop_assert!(m.data().iter().all(|&v| v == m.data()[0])),
        }
    }

    #[test]
    fn iou_is_symmetric_and_reflexive(a in grid_map(8), b in grid_map(8)) {
        let (sa, sb) = (support(&a), support(&b));
        prop_assert_eq!(iou(&sa, &sb).unwrap(), iou(&sb, &sa).unwrap());
        prop_assert_eq!(iou(&sa, &sa).unwrap(), 1.0);
        let v = iou(&sa, &sb).unwrap();
        prop_assert!((0.0..=1.0).contains(&v));
    }

    #[test]
    fn gate_is_monotone(preds in prop::collection::vec(grid_map(16), 4), targets in prop::collection::vec(grid_map(16), 4), gate in 0.0f64..5.0) {
        let g = geom(16);
        let count = |gate_n: f64| {
            let c = cop_distance(&preds, &targets, &g, gate_n).map(|m| m.frames + m.misses).unwrap_or(0);
            let i = contact_iou(&preds, &targets, &g, gate_n).map(|m| m.frames + m.misses).unwrap_or(0);
            (c, i)
        };
        let (open, gated) = (count(0.0), count(gate));
        prop_assert!(open.0 >= gated.0 && open.1 >= gated.1);
    }

    #[test]
    fn mae_is_a_metric(a in grid_map(8), b in grid_map(8)) {
        let ab = pixel_mae(std::slice::from_ref(&a), std::slice::from_ref(&b)).unwrap();
        let ba = pixel_mae(std::slice::from_ref(&b), std::slice::from_ref(&a)).unwrap();
        prop_assert_eq!(ab, ba);
        prop_assert_eq!(pixel_mae(std::slice::from_ref(&a), std::slice::from_ref(&a)).unwrap(), 0.0);
        prop_assert!(ab >= 0.0);
    }

    #[test]
    fn mse_vanishes_only_on_equal_inputs(a in prop::collection::vec(-50.0f32..50.0, 1..64), shift in -3.0f32..3.0) {
        let b: Vec<f32> = a.iter().map(|v| v + shift).collect();
        let l = mse_loss(&b, &a).unwrap();
        prop_assert!(l >= 0.0);
        prop_assert_eq!(l == 0.0, b == a);
    }

    #[test]
    fn quantization_is_idempotent(v in 0.0f32..=1.0) {
        let q = quantize_unit(v);
        prop_assert_eq!(quantize_unit(q as f32 / 255.0), q);
        prop_assert!(((q as f32 / 255.0) - v).abs() <= 0.5 / 255.0 + 1e-7);
    }

    #[test]
    fn split_is_an_exact_partition(n in 1usize..300, seed in any::<u64>()) {
        let ids: Vec<String> = (0..n).map(|i| format!("ep{i:05}")).collect();
        let split = split_episodes(&ids, DEFAULT_FRACTIONS, seed).unwrap();
        prop_assert_eq!(split.len(), n);
        prop_assert!(ids.iter().all(|id| split.contains_key(id)));
        let (tr, va, te) = split_counts(&split);
        prop_assert_eq!(tr + va + te, n);
        prop_assert_eq!(split_episodes(&ids, DEFAULT_FRACTIONS, seed).unwrap(), split.clone());
        prop_assert_eq!(split.values().filter(|&&s| s == Split::Train).count(), tr);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn checkpoints_round_trip(seed in any::<u64>(), h in 1usize..4, base in 1usize..4) {
        let params = UNetParams::<f32>::init(UNetConfig::tiny(h, 8, base), seed).unwrap();
        let bytes = Checkpoint::params_only(params.clone()).to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        prop_assert_eq!(&back.params, &params);
        prop_assert_eq!(back.to_bytes().unwrap(), bytes);
        prop_assert_eq!(back.params.hash(), params.hash());
    }
}
