//! Deterministic synthetic long-tail scenes.
//!
//! The generator partitions the pixel grid into contiguous blobs via
//! multi-source region growth with per-class pixel budgets, so the realized
//! class shares match the requested frequencies to within rounding while
//! still producing object-like regions that region extraction can pick up.
//! Output is a pure function of `(seed, parameters)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::raster::{LabeledRaster, DEFAULT_IGNORE_ID};
use crate::seed::splitmix64;

/// Optional knobs for [`synth_longtail_with`].
#[derive(Debug, Clone)]
pub struct SynthOptions {
    pub channels: usize,
    pub gsd: f64,
    pub ignore_id: u16,
    pub scene_id: Option<String>,
    /// Approximate blob size in pixels; blob count per class is its budget
    /// divided by this.
    pub blob_pixels: usize,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            channels: 3,
            gsd: 1.0,
            ignore_id: DEFAULT_IGNORE_ID,
            scene_id: None,
            blob_pixels: 0, // 0 = derive from scene size
        }
    }
}

/// Generates a labeled scene whose per-class pixel shares match
/// `class_freqs` (which must be positive and sum to 1).
pub fn synth_longtail(seed: u64, h: usize, w: usize, class_freqs: &[f64]) -> Result<LabeledRaster> {
    synth_longtail_with(seed, h, w, class_freqs, &SynthOptions::default())
}

pub fn synth_longtail_with(
    seed: u64,
    h: usize,
    w: usize,
    class_freqs: &[f64],
    opts: &SynthOptions,
) -> Result<LabeledRaster> {
    if h == 0 || w == 0 {
        return Err(Error::argument("scene dimensions must be positive"));
    }
    if class_freqs.is_empty() {
        return Err(Error::argument("at least one class frequency is required"));
    }
    if class_freqs
        .iter()
        .any(|&f| f.is_nan() || f <= 0.0 || !f.is_finite())
    {
        return Err(Error::argument(format!(
            "class frequencies must be positive, got {class_freqs:?}"
        )));
    }
    let sum: f64 = class_freqs.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::argument(format!(
            "class frequencies must sum to 1, got {sum}"
        )));
    }
    let num_classes = class_freqs.len();
    if num_classes >= usize::from(u16::MAX) {
        return Err(Error::argument("too many classes for 16-bit labels"));
    }

    let total = h * w;
    let budgets = integer_budgets(class_freqs, total);
    let labels = grow_blobs(seed, h, w, &budgets, opts);
    let image = paint_image(seed, &labels, opts.channels, num_classes);

    LabeledRaster::new(
        opts.scene_id
            .clone()
            .unwrap_or_else(|| format!("synth-{seed}")),
        h,
        w,
        opts.channels,
        opts.gsd,
        opts.ignore_id,
        image,
        labels,
    )
}

/// Largest-remainder split of `total` pixels across classes: budgets sum to
/// `total` exactly, each within one pixel of `freq * total`.
fn integer_budgets(freqs: &[f64], total: usize) -> Vec<usize> {
    let mut budgets: Vec<usize> = freqs.iter().map(|f| (f * total as f64) as usize).collect();
    let assigned: usize = budgets.iter().sum();
    let mut rema: Vec<(f64, usize)> = freqs
        .iter()
        .enumerate()
        .map(|(i, f)| (f * total as f64 - budgets[i] as f64, i))
        .collect();
    rema.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    for k in 0..total - assigned {
        budgets[rema[k % rema.len()].1] += 1;
    }
    budgets
}

const UNCLAIMED: u16 = u16::MAX;

/// Multi-source growth: each class claims pixels from randomized frontiers
/// seeded at random sites until its budget is spent. Budgets sum to the
/// pixel count, so the grid is covered exactly.
fn grow_blobs(seed: u64, h: usize, w: usize, budgets: &[usize], opts: &SynthOptions) -> Vec<u16> {
    let total = h * w;
    let num_classes = budgets.len();
    let mut rng = ChaCha12Rng::seed_from_u64(splitmix64(seed));
    let mut labels = vec![UNCLAIMED; total];
    let mut remaining: Vec<usize> = budgets.to_vec();
    let mut frontiers: Vec<Vec<u32>> = vec![Vec::new(); num_classes];

    let blob_pixels = if opts.blob_pixels > 0 {
        opts.blob_pixels
    } else {
        (total / 196).clamp(16, 32_768)
    };

    // Seed sites. Collisions just leave the earlier class in place.
    for (c, &budget) in budgets.iter().enumerate() {
        let seeds = budget.div_ceil(blob_pixels).max(1);
        for _ in 0..seeds {
            frontiers[c].push(rng.gen_range(0..total) as u32);
        }
    }

    let mut unclaimed = total;
    let steps: Vec<usize> = budgets.iter().map(|&b| (b / 256).max(1)).collect();
    while unclaimed > 0 {
        let mut progressed = false;
        for c in 0..num_classes {
            if remaining[c] == 0 {
                continue;
            }
            let mut step = steps[c].min(remaining[c]);
            while step > 0 {
                let idx = match pop_random(&mut frontiers[c], &mut rng) {
                    Some(idx) => idx,
                    None => match respawn(&labels, total, &mut rng) {
                        Some(idx) => idx,
                        None => break,
                    },
                };
                if labels[idx as usize] != UNCLAIMED {
                    continue;
                }
                labels[idx as usize] = c as u16;
                remaining[c] -= 1;
                unclaimed -= 1;
                progressed = true;
                step -= 1;
                push_neighbors(idx, h, w, &labels, &mut frontiers[c]);
                if remaining[c] == 0 {
                    break;
                }
            }
        }
        debug_assert!(progressed || unclaimed == 0, "blob growth stalled");
        if !progressed {
            break;
        }
    }
    debug_assert!(labels.iter().all(|&l| l != UNCLAIMED));
    labels
}

fn pop_random(bag: &mut Vec<u32>, rng: &mut ChaCha12Rng) -> Option<u32> {
    if bag.is_empty() {
        return None;
    }
    let i = rng.gen_range(0..bag.len());
    Some(bag.swap_remove(i))
}

/// Picks an unclaimed pixel to restart a frontier that grew itself into a
/// corner. Random probes first, then a linear scan from a random offset.
fn respawn(labels: &[u16], total: usize, rng: &mut ChaCha12Rng) -> Option<u32> {
    for _ in 0..64 {
        let idx = rng.gen_range(0..total);
        if labels[idx] == UNCLAIMED {
            return Some(idx as u32);
        }
    }
    let start = rng.gen_range(0..total);
    for off in 0..total {
        let idx = (start + off) % total;
        if labels[idx] == UNCLAIMED {
            return Some(idx as u32);
        }
    }
    None
}

fn push_neighbors(idx: u32, h: usize, w: usize, labels: &[u16], bag: &mut Vec<u32>) {
    let (row, col) = ((idx as usize) / w, (idx as usize) % w);
    let mut push = |r: usize, c: usize| {
        let n = r * w + c;
        if labels[n] == UNCLAIMED {
            bag.push(n as u32);
        }
    };
    if row > 0 {
        push(row - 1, col);
    }
    if row + 1 < h {
        push(row + 1, col);
    }
    if col > 0 {
        push(row, col - 1);
    }
    if col + 1 < w {
        push(row, col + 1);
    }
}

/// Per-class base colors with order-independent per-pixel noise, so the
/// image depends only on the label plane and the seed.
fn paint_image(seed: u64, labels: &[u16], channels: usize, num_classes: usize) -> Vec<u8> {
    let mut base = vec![0u8; num_classes * channels.max(1)];
    let mut rng = ChaCha12Rng::seed_from_u64(splitmix64(seed ^ 0xC010_0000));
    for b in base.iter_mut() {
        *b = rng.gen_range(32..=223);
    }
    let mut image = vec![0u8; labels.len() * channels];
    for (i, &label) in labels.iter().enumerate() {
        for ch in 0..channels {
            let noise = (splitmix64(seed ^ ((i as u64) << 8) ^ ch as u64) % 17) as i32 - 8;
            let v = base[label as usize * channels + ch] as i32 + noise;
            image[i * channels + ch] = v.clamp(0, 255) as u8;
        }
    }
    image
}
