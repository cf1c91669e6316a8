//! Property tests for the contracts that hold over randomized
//! inputs: windowed reads equal full-load slices, label resizing never
//! invents classes, pool membership matches brute force, window plans
//! cover every pixel, and confusion accumulation is a commutative monoid.

use longtile::eval::{iou_miou, plan_windows, ConfusionMatrix};
use longtile::mask::{connected_components, mask_to_bbox};
use longtile::msar::{build_pools, MsarConfig};
use longtile::raster::{resize_tile, LabeledRaster, Window, DEFAULT_IGNORE_ID};
use longtile::stats::{balance_residual, pixel_histogram, softmax};
use longtile::synth::synth_longtail;
use proptest::prelude::*;

fn arb_raster(max: usize) -> impl Strategy<Value = LabeledRaster> {
    ((1..max), (1..max), 1usize..4, any::<u64>()).prop_map(|(h, w, c, seed)| {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
        LabeledRaster::new(
            "prop",
            h,
            w,
            c,
            0.5,
            DEFAULT_IGNORE_ID,
            (0..h * w * c).map(|_| rng.gen()).collect(),
            (0..h * w).map(|_| rng.gen_range(0..6u16)).collect(),
        )
        .unwrap()
    })
}

proptest! {
    #[test]
    fn windowed_read_equals_full_load_slice(
        raster in arb_raster(48),
        sel in any::<(u64, u64, u64, u64)>(),
    ) {
        let h = 1 + (sel.0 as usize) % raster.height;
        let w = 1 + (sel.1 as usize) % raster.width;
        let row = (sel.2 as usize) % (raster.height - h + 1);
        let col = (sel.3 as usize) % (raster.width - w + 1);
        let win = Window::new(row, col, h, w);
        let tile = raster.read_window(&win).unwrap();
        for r in 0..h {
            for c in 0..w {
                prop_assert_eq!(
                    tile.labels[r * w + c],
                    raster.labels[(row + r) * raster.width + col + c]
                );
                for ch in 0..raster.channels {
                    prop_assert_eq!(
                        tile.image[(r * w + c) * raster.channels + ch],
                        raster.image[((row + r) * raster.width + col + c) * raster.channels + ch]
                    );
                }
            }
        }
    }

    #[test]
    fn label_resize_never_invents_classes(
        raster in arb_raster(24),
        out_h in 1usize..32,
        out_w in 1usize..32,
    ) {
        let tile = raster.read_window(&raster.full_window()).unwrap();
        let resized = resize_tile(&tile, out_h, out_w).unwrap();
        let present: std::collections::HashSet<u16> = tile.labels.iter().copied().collect();
        for l in &resized.labels {
            prop_assert!(present.contains(l));
        }
    }

    #[test]
    fn pool_membership_matches_brute_force(
        dims in (1usize..6, 1usize..6),
        extent in (0usize..48, 0usize..48),
        pos in any::<(u64, u64)>(),
        k in 2u32..5,
    ) {
        let (h, w) = dims;
        let height = h + extent.0;
        let width = w + extent.1;
        let anchor = Window::new(
            (pos.0 as usize) % (height - h + 1),
            (pos.1 as usize) % (width - w + 1),
            h,
            w,
        );
        let cfg = MsarConfig { anchor_h: h, anchor_w: w, scales: vec![k], seed: 0 };
        let pools = build_pools(height, width, &anchor, &cfg).unwrap();
        let kh = k as usize * h;
        let kw = k as usize * w;
        let mut brute = Vec::new();
        if kh <= height && kw <= width {
            let mut i = 0;
            while i <= height - kh {
                let mut j = 0;
                while j <= width - kw {
                    let win = Window::new(i, j, kh, kw);
                    if win.contains(&anchor) {
                        brute.push(win);
                    }
                    j += w;
                }
                i += h;
            }
        }
        if brute.is_empty() {
            prop_assert!(pools[0].clamped);
            prop_assert_eq!(pools[0].windows.len(), 1);
            prop_assert!(pools[0].windows[0].contains(&anchor));
        } else {
            prop_assert!(!pools[0].clamped);
            prop_assert_eq!(&pools[0].windows, &brute);
        }
    }

    #[test]
    fn window_plans_cover_every_pixel(
        extra in (0usize..700, 0usize..700),
        win in (8usize..64, 8usize..64),
        stride_sel in any::<(u64, u64)>(),
    ) {
        let height = win.0 + extra.0;
        let width = win.1 + extra.1;
        let stride = (
            1 + (stride_sel.0 as usize) % win.0,
            1 + (stride_sel.1 as usize) % win.1,
        );
        let plan = plan_windows(height, width, win, stride).unwrap();
        let mut covered = vec![false; height * width];
        for w in &plan.windows {
            for r in w.row..w.row + w.h {
                for c in w.col..w.col + w.w {
                    covered[r * width + c] = true;
                }
            }
        }
        prop_assert!(covered.iter().all(|&c| c));
    }

    #[test]
    fn confusion_accumulation_is_a_commutative_monoid(
        planes in proptest::collection::vec(
            proptest::collection::vec(0u16..4, 16),
            1..5
        ),
        seed in any::<u64>(),
    ) {
        use rand::{seq::SliceRandom, SeedableRng};
        // Pair up consecutive planes as (gt, pred) chunks.
        let chunks: Vec<(Vec<u16>, Vec<u16>)> = planes
            .iter()
            .map(|p| {
                let mid = p.len() / 2;
                (p[..mid].to_vec(), p[mid..].to_vec())
            })
            .collect();
        let mut ordered = ConfusionMatrix::new(4);
        for (gt, pred) in &chunks {
            ordered.accumulate(gt, pred, DEFAULT_IGNORE_ID).unwrap();
        }
        // Any permutation of per-chunk matrices merges to the same result,
        // and merging the empty matrix is the identity.
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
        let mut parts: Vec<ConfusionMatrix> = chunks
            .iter()
            .map(|(gt, pred)| ConfusionMatrix::from_planes(gt, pred, 4, DEFAULT_IGNORE_ID).unwrap())
            .collect();
        parts.shuffle(&mut rng);
        let mut merged = ConfusionMatrix::new(4);
        for p in &parts {
            merged.merge(p);
        }
        merged.merge(&ConfusionMatrix::new(4));
        prop_assert_eq!(merged, ordered);
    }

    #[test]
    fn miou_stays_in_unit_interval(
        gt in proptest::collection::vec(0u16..5, 64),
        pred in proptest::collection::vec(0u16..5, 64),
    ) {
        let cm = ConfusionMatrix::from_planes(&gt, &pred, 5, DEFAULT_IGNORE_ID).unwrap();
        let (_, miou) = iou_miou(&cm, &[]).unwrap();
        prop_assert!((0.0..=1.0).contains(&miou));
    }

    #[test]
    fn residual_always_sums_to_zero(
        seed in any::<u64>(),
        b in 1usize..8,
        c in 2usize..6,
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
        let mut probs = Vec::with_capacity(b * c);
        for _ in 0..b {
            let z: Vec<f64> = (0..c).map(|_| rng.gen_range(-4.0..4.0)).collect();
            probs.extend(softmax(&z).unwrap());
        }
        let mut onehot = vec![0.0; b * c];
        for n in 0..b {
            onehot[n * c + rng.gen_range(0..c)] = 1.0;
        }
        let r = balance_residual(&probs, &onehot, b, c).unwrap();
        prop_assert!(r.iter().sum::<f64>().abs() < 1e-9);
    }
}

#[test]
fn synthetic_scenes_are_pure_functions_of_seed_and_params() {
    for seed in [0u64, 1, 99] {
        let a = synth_longtail(seed, 96, 80, &[0.5, 0.3, 0.2]).unwrap();
        let b = synth_longtail(seed, 96, 80, &[0.5, 0.3, 0.2]).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn component_masks_have_tight_boxes_on_synthetic_scenes() {
    let raster = synth_longtail(5, 160, 160, &[0.6, 0.25, 0.1, 0.05]).unwrap();
    let masks = connected_components(&raster.labels, 160, 160, raster.ignore_id, 8).unwrap();
    assert!(
        masks.len() > 3,
        "expected several blobs, got {}",
        masks.len()
    );
    for m in &masks {
        let bbox = mask_to_bbox(m).unwrap();
        // Every foreground pixel falls inside the box and the box rows /
        // columns at the extremes touch foreground.
        let mut touch_top = false;
        let mut touch_left = false;
        for (r, c) in m.foreground() {
            assert!(bbox.contains_pixel(r, c));
            touch_top |= r == bbox.row;
            touch_left |= c == bbox.col;
        }
        assert!(touch_top && touch_left);
    }
}

#[test]
fn synthetic_histogram_obeys_the_generator_contract() {
    let freqs = [0.5, 0.5];
    let raster = synth_longtail(11, 256, 256, &freqs).unwrap();
    let hist = pixel_histogram(&raster.labels, 2, raster.ignore_id).unwrap();
    for (c, &f) in freqs.iter().enumerate() {
        assert!((hist.share(c) - f).abs() <= 0.02);
    }
}
