//! Property-based invariants of tiling, transforms, metrics, I/O and the schedule.

mod common;

use afnet::geodata::{
    compute_ndvi, decode_labels, encode_labels, read_raster_from, slice, stitch, write_raster_to, Dihedral, Palette, RasterImage,
    Role, StitchMode, TileGrid, IGNORE_LABEL,
};
use afnet::metrics::{boundary_ignore_mask, ConfusionMatrix};
use afnet::train::LrSchedule;
use afnet::Tensor;
use proptest::prelude::*;

fn raster(w: usize, h: usize, c: usize, seed: u64) -> RasterImage {
    common::random_raster(&mut common::rng(seed), w, h, c)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn slice_then_stitch_is_identity(w in 1usize..40, h in 1usize..40, c in 1usize..4, q in 1usize..5, seed: u64) {
        let tile = 4 * q;
        // the padded raster must hold at least one tile
        prop_assume!(w.min(h) >= 2 * q);
        let img = raster(w, h, c, seed);
        let grid = TileGrid::new(w, h, tile, tile / 2).unwrap();
        let tiles = slice(&img, &grid).unwrap();
        prop_assert_eq!(tiles.len(), grid.len());
        prop_assert!(tiles.iter().all(|t| t.width == tile && t.height == tile));
        let back = stitch(&tiles, &grid, StitchMode::Crop).unwrap();
        prop_assert_eq!(back, img);
    }

    #[test]
    fn dihedral_inverse_restores(flip: bool, rot in 0u8..4, h in 1usize..7, w in 1usize..7, seed: u64) {
        let d = Dihedral { flip, rot };
        let t = Tensor::from_fn([1, 2, h, w], |i| (i as u64 ^ seed) as f32);
        let there = d.apply_tensor(&t).unwrap();
        prop_assert_eq!(d.inverse().apply_tensor(&there).unwrap(), t);
        prop_assert_eq!(d.name().parse::<Dihedral>().unwrap(), d);
    }

    #[test]
    fn confusion_totals_and_bounds(pairs in prop::collection::vec((0u8..5, 0u8..5, any::<bool>()), 1..300)) {
        let pred: Vec<u8> = pairs.iter().map(|p| p.0).collect();
        let gt: Vec<u8> = pairs.iter().map(|p| p.1).collect();
        let mask: Vec<bool> = pairs.iter().map(|p| p.2).collect();
        let cm = ConfusionMatrix::from_maps(&pred, &gt, 5, Some(&mask)).unwrap();
        prop_assert_eq!(cm.total(), mask.iter().filter(|m| !**m).count() as u64);
        prop_assert!(cm.trace() <= cm.total());
        if cm.total() > 0 {
            let oa = cm.overall_accuracy().unwrap();
            prop_assert!((0.0..=1.0).contains(&oa));
        }
        for c in 0..5 {
            let p = cm.class_prf(c);
            prop_assert!(p.f1 >= 0.0 && p.f1 <= 1.0);
            prop_assert!(p.f1 <= p.precision.max(p.recall) + 1e-12);
        }
    }

    #[test]
    fn larger_erosion_masks_more(labels in prop::collection::vec(0u8..3, 64), r in 0usize..3) {
        let small = boundary_ignore_mask(&labels, 8, 8, r).unwrap();
        let big = boundary_ignore_mask(&labels, 8, 8, r + 1).unwrap();
        prop_assert!(small.iter().zip(&big).all(|(s, b)| !s || *b));
    }

    #[test]
    fn ndvi_stays_in_range(pairs in prop::collection::vec((0f32..300.0, 0f32..300.0), 1..64)) {
        let nir: Vec<f32> = pairs.iter().map(|p| p.0).collect();
        let red: Vec<f32> = pairs.iter().map(|p| p.1).collect();
        let v = compute_ndvi(&nir, &red).unwrap();
        prop_assert!(v.iter().all(|x| (-1.0..=1.0).contains(x)));
    }

    #[test]
    fn label_colors_round_trip(classes in prop::collection::vec(prop_oneof![0u8..6, Just(IGNORE_LABEL)], 12)) {
        let palette = Palette::default();
        let labels = RasterImage::label(4, 3, classes, 6).unwrap();
        let color = encode_labels(&labels, &palette).unwrap();
        prop_assert_eq!(decode_labels(&color, &palette).unwrap(), labels);
    }

    #[test]
    fn rasters_round_trip_through_bytes(w in 1usize..9, h in 1usize..9, kind in 0usize..3, seed: u64) {
        let img = match kind {
            0 => raster(w, h, 2, seed),
            1 => RasterImage::from_u8(w, h, 1, Role::Label, (0..w * h).map(|i| (i as u64 ^ seed) as u8).collect()).unwrap(),
            _ => RasterImage::from_u8(w, h, 3, Role::Optical, (0..3 * w * h).map(|i| (i as u64 ^ seed) as u8).collect()).unwrap(),
        };
        let mut bytes = Vec::new();
        write_raster_to(&img, &mut bytes).unwrap();
        let back = read_raster_from(&bytes).unwrap();
        prop_assert_eq!((back.width, back.height, back.channels), (w, h, img.channels));
        prop_assert_eq!(back.data, img.data);
    }

    #[test]
    fn warmup_rises_then_plateaus(warm in 1usize..50, interval in 1usize..50, ipe in 1usize..6) {
        let s = LrSchedule { warmup_epochs: warm, step_interval: interval, iters_per_epoch: ipe, ..LrSchedule::default() };
        let mut prev = 0.0;
        for e in 0..warm + 3 * interval {
            for i in 0..ipe {
                let lr = s.lr(e, i);
                if e < warm || (e == warm && i == 0) {
                    prop_assert!(lr > prev);
                } else {
                    prop_assert!(lr <= prev * (1.0 + 1e-12));
                }
                prev = lr;
            }
        }
    }
}
