//! Multi-scale anchored region sampling.
//!
//! A training sample starts from a randomly placed anchor crop of shape
//! `(h, w)`. For each scale factor `k`, the raster is divided into a grid of
//! `(k*h, k*w)` windows on a stride of `(h, w)`; the windows that fully
//! contain the anchor form that scale's crop pool. One pool member is drawn
//! uniformly per scale, downscaled back to `(h, w)`, and emitted after the
//! anchor in ascending scale order. Unlike centric multi-crop, the anchor
//! can land anywhere inside each larger crop, which varies the surrounding
//! context instead of re-centering it.

use rand::Rng;

use crate::error::{Error, Result};
use crate::raster::{resize_tile, Provenance, Tile, Window};

/// Anchor geometry, scale set, and seed for one sampling run.
#[derive(Debug, Clone, PartialEq)]
pub struct MsarConfig {
    pub anchor_h: usize,
    pub anchor_w: usize,
    /// Strictly ascending scale factors, each > 1.
    pub scales: Vec<u32>,
    pub seed: u64,
}

impl Default for MsarConfig {
    fn default() -> Self {
        MsarConfig {
            anchor_h: 512,
            anchor_w: 512,
            scales: vec![2, 3, 4],
            seed: 0,
        }
    }
}

impl MsarConfig {
    /// Checks scale ordering and that the anchor fits a raster of the given
    /// extent.
    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        if self.anchor_h == 0 || self.anchor_w == 0 {
            return Err(Error::argument("anchor dimensions must be positive"));
        }
        if self.anchor_h > height || self.anchor_w > width {
            return Err(Error::argument(format!(
                "anchor {}x{} larger than raster {}x{}",
                self.anchor_h, self.anchor_w, height, width
            )));
        }
        let mut prev = 1;
        for &k in &self.scales {
            if k <= prev {
                return Err(Error::argument(format!(
                    "scales must be strictly ascending and > 1, got {:?}",
                    self.scales
                )));
            }
            prev = k;
        }
        Ok(())
    }
}

/// All grid-aligned scale-`k` windows containing the anchor, or the single
/// clamped fallback when the grid offers none.
#[derive(Debug, Clone, PartialEq)]
pub struct CropPool {
    pub k: u32,
    pub windows: Vec<Window>,
    /// True when the pool is the clamped fallback rather than grid windows.
    pub clamped: bool,
}

/// One multi-scale training sample: the anchor tile followed by one
/// downscaled tile per scale, ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub anchor: Window,
    pub tiles: Vec<Tile>,
}

/// Draws the anchor position uniformly over all valid top-left corners.
pub fn pick_anchor(
    height: usize,
    width: usize,
    cfg: &MsarConfig,
    rng: &mut impl Rng,
) -> Result<Window> {
    cfg.validate(height, width)?;
    let row = rng.gen_range(0..=height - cfg.anchor_h);
    let col = rng.gen_range(0..=width - cfg.anchor_w);
    Ok(Window::new(row, col, cfg.anchor_h, cfg.anchor_w))
}

/// Builds the crop pool for every configured scale.
///
/// Pool membership is computed arithmetically: grid offsets are multiples
/// of the anchor stride, and the containment condition pins each axis to
/// the multiples inside `[anchor_end - k*len, anchor_start]`. An empty pool
/// (anchor near an off-grid edge, or `k*len` exceeding the raster) is
/// replaced by one clamped maximal window that still contains the anchor,
/// flagged via [`CropPool::clamped`].
pub fn build_pools(
    height: usize,
    width: usize,
    anchor: &Window,
    cfg: &MsarConfig,
) -> Result<Vec<CropPool>> {
    cfg.validate(height, width)?;
    anchor.check_bounds(height, width)?;
    let mut pools = Vec::with_capacity(cfg.scales.len());
    for &k in &cfg.scales {
        let kh = k as usize * cfg.anchor_h;
        let kw = k as usize * cfg.anchor_w;
        let rows = grid_starts_containing(anchor.row, anchor.h, cfg.anchor_h, kh, height);
        let cols = grid_starts_containing(anchor.col, anchor.w, cfg.anchor_w, kw, width);
        let mut windows = Vec::with_capacity(rows.len() * cols.len());
        for &i in &rows {
            for &j in &cols {
                windows.push(Window::new(i, j, kh, kw));
            }
        }
        if windows.is_empty() {
            pools.push(CropPool {
                k,
                windows: vec![clamped_window(anchor, kh, kw, height, width)],
                clamped: true,
            });
        } else {
            pools.push(CropPool {
                k,
                windows,
                clamped: false,
            });
        }
    }
    Ok(pools)
}

/// Multiples of `stride` in `[max(0, anchor_end - span), min(anchor_start,
/// extent - span)]` — exactly the grid offsets whose `span`-long window
/// contains `[anchor_start, anchor_end)`.
fn grid_starts_containing(
    anchor_start: usize,
    anchor_len: usize,
    stride: usize,
    span: usize,
    extent: usize,
) -> Vec<usize> {
    if span > extent {
        return Vec::new();
    }
    let anchor_end = anchor_start + anchor_len;
    let lo = anchor_end.saturating_sub(span);
    let hi = anchor_start.min(extent - span);
    if lo > hi {
        return Vec::new();
    }
    let first = lo.div_ceil(stride) * stride;
    (first..=hi).step_by(stride).collect()
}

/// Largest legal window containing the anchor when the stride grid offers
/// none: extent-clamped size, shifted up-left only as far as bounds demand.
fn clamped_window(anchor: &Window, kh: usize, kw: usize, height: usize, width: usize) -> Window {
    let h = kh.min(height);
    let w = kw.min(width);
    Window::new(anchor.row.min(height - h), anchor.col.min(width - w), h, w)
}

/// Raster-like sources multi-scale sampling can draw from. Methods take
/// `&mut self` because file-backed sources seek.
pub trait WindowSource {
    fn extent(&mut self) -> Result<(usize, usize)>;
    fn fetch(&mut self, win: &Window) -> Result<Tile>;
}

impl WindowSource for crate::raster::LabeledRaster {
    fn extent(&mut self) -> Result<(usize, usize)> {
        Ok((self.height, self.width))
    }
    fn fetch(&mut self, win: &Window) -> Result<Tile> {
        self.read_window(win)
    }
}

impl WindowSource for crate::io::SceneReader {
    fn extent(&mut self) -> Result<(usize, usize)> {
        Ok((self.height(), self.width()))
    }
    fn fetch(&mut self, win: &Window) -> Result<Tile> {
        self.read_window(win)
    }
}

/// Draws one full multi-scale sample: anchor, pools, one uniform pick per
/// pool, downscale to anchor size. Tile order is the anchor followed by
/// ascending scale; every source window contains the anchor.
pub fn sample_msar<S: WindowSource>(
    source: &mut S,
    cfg: &MsarConfig,
    rng: &mut impl Rng,
) -> Result<TrainingSample> {
    let (height, width) = source.extent()?;
    let anchor = pick_anchor(height, width, cfg, rng)?;
    sample_msar_at(source, &anchor, cfg, rng)
}

/// As [`sample_msar`] but with the anchor already chosen.
pub fn sample_msar_at<S: WindowSource>(
    source: &mut S,
    anchor: &Window,
    cfg: &MsarConfig,
    rng: &mut impl Rng,
) -> Result<TrainingSample> {
    let (height, width) = source.extent()?;
    let pools = build_pools(height, width, anchor, cfg)?;
    let mut tiles = Vec::with_capacity(1 + pools.len());
    tiles.push(source.fetch(anchor)?);
    for pool in &pools {
        let win = pool.windows[rng.gen_range(0..pool.windows.len())];
        let crop = source.fetch(&win)?;
        let mut tile = resize_tile(&crop, cfg.anchor_h, cfg.anchor_w)?;
        tile.provenance = Provenance::Msar;
        tile.scale = pool.k;
        tiles.push(tile);
    }
    Ok(TrainingSample {
        anchor: *anchor,
        tiles,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::{LabeledRaster, DEFAULT_IGNORE_ID};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn cfg(h: usize, w: usize, scales: &[u32]) -> MsarConfig {
        MsarConfig {
            anchor_h: h,
            anchor_w: w,
            scales: scales.to_vec(),
            seed: 0,
        }
    }

    fn toy_raster(h: usize, w: usize, seed: u64) -> LabeledRaster {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        LabeledRaster::new(
            "toy",
            h,
            w,
            1,
            1.0,
            DEFAULT_IGNORE_ID,
            (0..h * w).map(|_| rng.gen()).collect(),
            (0..h * w).map(|_| rng.gen_range(0..4u16)).collect(),
        )
        .unwrap()
    }

    /// Exhaustive enumeration of all grid windows filtered by rectangle
    /// containment — the reference the fast arithmetic must match.
    fn enumerate_pool(
        height: usize,
        width: usize,
        anchor: &Window,
        stride_h: usize,
        stride_w: usize,
        kh: usize,
        kw: usize,
    ) -> Vec<Window> {
        let mut out = Vec::new();
        if kh > height || kw > width {
            return out;
        }
        let mut i = 0;
        while i <= height - kh {
            let mut j = 0;
            while j <= width - kw {
                let win = Window::new(i, j, kh, kw);
                if win.contains(anchor) {
                    out.push(win);
                }
                j += stride_w;
            }
            i += stride_h;
        }
        out
    }

    #[test]
    fn full_size_anchor_has_single_position() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let c = cfg(512, 512, &[]);
        let a = pick_anchor(512, 512, &c, &mut rng).unwrap();
        assert_eq!(a, Window::new(0, 0, 512, 512));
    }

    #[test]
    fn anchor_is_uniform_over_positions() {
        // 8x8 raster, 2x2 anchor: 49 positions; chi-square over 1e5 draws.
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let c = cfg(2, 2, &[]);
        let mut counts = [0u64; 49];
        let draws = 100_000;
        for _ in 0..draws {
            let a = pick_anchor(8, 8, &c, &mut rng).unwrap();
            counts[a.row * 7 + a.col] += 1;
        }
        let expected = draws as f64 / 49.0;
        let chi2: f64 = counts
            .iter()
            .map(|&o| {
                let d = o as f64 - expected;
                d * d / expected
            })
            .sum();
        // 0.99 quantile of chi-square with 48 degrees of freedom.
        assert!(chi2 < 73.683, "chi-square statistic {chi2} too large");
    }

    #[test]
    fn anchor_is_deterministic_for_a_seed() {
        let c = cfg(3, 4, &[]);
        let a = pick_anchor(32, 32, &c, &mut ChaCha12Rng::seed_from_u64(9)).unwrap();
        let b = pick_anchor(32, 32, &c, &mut ChaCha12Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn oversize_anchor_is_an_argument_error() {
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        assert!(matches!(
            pick_anchor(16, 16, &cfg(17, 4, &[]), &mut rng),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn hand_checked_pool_on_an_8x8_raster() {
        // H=W=8, h=w=2, anchor at (2,2), k=2: the four 4x4 grid windows
        // starting at {0,2} x {0,2} all contain the anchor.
        let anchor = Window::new(2, 2, 2, 2);
        let pools = build_pools(8, 8, &anchor, &cfg(2, 2, &[2])).unwrap();
        assert_eq!(pools.len(), 1);
        assert!(!pools[0].clamped);
        let expect: Vec<Window> = [(0, 0), (0, 2), (2, 0), (2, 2)]
            .iter()
            .map(|&(r, c)| Window::new(r, c, 4, 4))
            .collect();
        assert_eq!(pools[0].windows, expect);
    }

    #[test]
    fn origin_anchor_keeps_origin_window() {
        for k in [2u32, 3, 4] {
            let anchor = Window::new(0, 0, 2, 2);
            let pools = build_pools(16, 16, &anchor, &cfg(2, 2, &[k])).unwrap();
            let kh = 2 * k as usize;
            assert!(pools[0].windows.contains(&Window::new(0, 0, kh, kh)));
        }
    }

    #[test]
    fn oversized_scale_falls_back_to_clamped_window() {
        // k*h exceeds the raster: single full-height clamped window.
        let anchor = Window::new(1, 1, 3, 3);
        let pools = build_pools(8, 8, &anchor, &cfg(3, 3, &[4])).unwrap();
        assert!(pools[0].clamped);
        assert_eq!(pools[0].windows, vec![Window::new(0, 0, 8, 8)]);
    }

    #[test]
    fn off_grid_edge_anchor_falls_back_and_still_contains() {
        // H=8, h=3, k=2 -> kh=6; grid rows {0}; anchor at row 4 is not
        // contained by any grid window.
        let anchor = Window::new(4, 4, 3, 3);
        let pools = build_pools(8, 8, &anchor, &cfg(3, 3, &[2])).unwrap();
        assert!(pools[0].clamped);
        assert_eq!(pools[0].windows.len(), 1);
        assert!(pools[0].windows[0].contains(&anchor));
    }

    #[test]
    fn pools_match_exhaustive_enumeration() {
        let mut rng = ChaCha12Rng::seed_from_u64(77);
        for _ in 0..300 {
            let h = rng.gen_range(1..=8);
            let w = rng.gen_range(1..=8);
            let height = rng.gen_range(h..=64);
            let width = rng.gen_range(w..=64);
            let anchor = Window::new(
                rng.gen_range(0..=height - h),
                rng.gen_range(0..=width - w),
                h,
                w,
            );
            let c = cfg(h, w, &[2, 3, 4]);
            let pools = build_pools(height, width, &anchor, &c).unwrap();
            for pool in pools {
                let brute = enumerate_pool(
                    height,
                    width,
                    &anchor,
                    h,
                    w,
                    pool.k as usize * h,
                    pool.k as usize * w,
                );
                if brute.is_empty() {
                    assert!(pool.clamped);
                    assert_eq!(pool.windows.len(), 1);
                    assert!(pool.windows[0].contains(&anchor));
                } else {
                    assert!(!pool.clamped);
                    assert_eq!(pool.windows, brute);
                }
            }
        }
    }

    #[test]
    fn empty_scales_yield_anchor_only() {
        let mut raster = toy_raster(32, 32, 5);
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let sample = sample_msar(&mut raster, &cfg(8, 8, &[]), &mut rng).unwrap();
        assert_eq!(sample.tiles.len(), 1);
        assert_eq!(sample.tiles[0].provenance, Provenance::Anchor);
    }

    #[test]
    fn three_scales_yield_four_anchor_sized_tiles() {
        let mut raster = toy_raster(64, 64, 6);
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let sample = sample_msar(&mut raster, &cfg(8, 8, &[2, 3, 4]), &mut rng).unwrap();
        assert_eq!(sample.tiles.len(), 4);
        for tile in &sample.tiles {
            assert_eq!((tile.h, tile.w), (8, 8));
        }
        assert_eq!(
            sample.tiles.iter().map(|t| t.scale).collect::<Vec<_>>(),
            vec![1, 2, 3, 4]
        );
    }

    #[test]
    fn anchor_tile_is_bit_identical_and_sources_contain_anchor() {
        let mut raster = toy_raster(64, 64, 7);
        let expected = raster.clone();
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        for _ in 0..200 {
            let sample = sample_msar(&mut raster, &cfg(8, 8, &[2, 3, 4]), &mut rng).unwrap();
            let anchor_tile = &sample.tiles[0];
            let reference = expected.read_window(&sample.anchor).unwrap();
            assert_eq!(anchor_tile.image, reference.image);
            assert_eq!(anchor_tile.labels, reference.labels);
            for tile in &sample.tiles[1..] {
                assert!(tile.window.contains(&sample.anchor));
            }
        }
    }

    #[test]
    fn pool_sampling_is_uniform_within_3_sigma() {
        // Anchor fixed at (2,2) on an 8x8 raster with k=2: 4 pool windows.
        let mut raster = toy_raster(8, 8, 9);
        let anchor = Window::new(2, 2, 2, 2);
        let c = cfg(2, 2, &[2]);
        let mut counts = std::collections::HashMap::new();
        let draws = 100_000;
        let mut rng = ChaCha12Rng::seed_from_u64(10);
        for _ in 0..draws {
            let s = sample_msar_at(&mut raster, &anchor, &c, &mut rng).unwrap();
            *counts.entry(s.tiles[1].window).or_insert(0u64) += 1;
        }
        assert_eq!(counts.len(), 4);
        let p = 0.25;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        for (&win, &n) in &counts {
            let dev = (n as f64 - draws as f64 * p).abs();
            assert!(
                dev <= 3.0 * sigma,
                "window {win:?} count {n} deviates {dev}"
            );
        }
    }

    /// Centric multi-crop baseline: one window per scale centered on the
    /// anchor, clamped to bounds. Kept test-local as a comparison point.
    fn centric_window(anchor: &Window, k: u32, height: usize, width: usize) -> Window {
        let kh = (k as usize * anchor.h).min(height);
        let kw = (k as usize * anchor.w).min(width);
        let center_r = anchor.row + anchor.h / 2;
        let center_c = anchor.col + anchor.w / 2;
        let row = center_r.saturating_sub(kh / 2).min(height - kh);
        let col = center_c.saturating_sub(kw / 2).min(width - kw);
        Window::new(row, col, kh, kw)
    }

    #[test]
    fn anchored_pools_offer_more_perspectives_than_centric_crops() {
        // For a fixed anchor, centric multi-crop always re-centers the same
        // window, while the anchored pool admits every grid window that
        // contains the anchor.
        let anchor = Window::new(24, 24, 8, 8);
        let c = cfg(8, 8, &[2, 3, 4]);
        let pools = build_pools(64, 64, &anchor, &c).unwrap();
        let mut raster = toy_raster(64, 64, 12);
        let mut rng = ChaCha12Rng::seed_from_u64(13);
        for pool in &pools {
            let centric = centric_window(&anchor, pool.k, 64, 64);
            assert!(centric.contains(&anchor));
            // The centered window is available to the pool's scale, but the
            // pool is strictly richer.
            assert!(pool.windows.len() > 1);
            let mut seen = std::collections::HashSet::new();
            for _ in 0..200 {
                let s = sample_msar_at(&mut raster, &anchor, &c, &mut rng).unwrap();
                for t in &s.tiles[1..] {
                    if t.scale == pool.k {
                        seen.insert(t.window);
                    }
                }
            }
            assert!(
                seen.len() > 1,
                "scale {} drew a single perspective, like centric cropping",
                pool.k
            );
        }
    }

    #[test]
    fn sample_stream_is_reproducible() {
        let mut raster = toy_raster(64, 64, 11);
        let c = cfg(8, 8, &[2, 3]);
        let run = |seed: u64, raster: &mut LabeledRaster| {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            (0..20)
                .map(|_| sample_msar(raster, &c, &mut rng).unwrap())
                .collect::<Vec<_>>()
        };
        let a = run(123, &mut raster);
        let b = run(123, &mut raster);
        assert_eq!(a, b);
    }
}
