//! Region records and tail-first resampling.
//!
//! A region record reduces one pre-extracted object mask to its bounding
//! box, per-class pixel counts, primary class, and category richness.
//! Ranking orders records so that regions whose primary class is globally
//! rare come first, richer regions win ties, and the remaining ties break
//! lexicographically — a deterministic total order.
//!
//! Three samplers turn ranked records into training tiles:
//!
//! - GSD-preserving: a train-size window cut verbatim from the source
//!   raster (random placement inside large boxes, top-left anchored with
//!   clamping for small ones) — pixels are never resampled.
//! - Resize: the whole bounding box resized to the training dimensions.
//! - Weighted resampling: records drawn with replacement under weights
//!   `1 / (rank + n * arr_len_factor)`, each draw emitting both a resized
//!   and a cropped tile.

use rand::Rng;

use crate::error::{Error, Result};
use crate::io::SceneSet;
use crate::mask::{mask_to_bbox, Mask};
use crate::msar::{sample_msar, MsarConfig};
use crate::raster::{resize_tile, Provenance, Tile, Window};
use crate::stats::{BatchDiagnostics, ClassHistogram};

/// Where a region record came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegionSource {
    MaskFile,
    Synthetic,
}

/// One pre-extracted object region.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionRecord {
    pub scene_id: String,
    pub bbox: Window,
    /// Pixel counts per class inside the mask foreground (ignore excluded).
    pub class_counts: Vec<u64>,
    /// Majority class; ties break to the lowest class id.
    pub primary_class: u16,
    /// Number of distinct non-ignore classes present.
    pub richness: usize,
    /// Position after reranking (0 = sampled most eagerly).
    pub rank: usize,
    pub source: RegionSource,
}

/// How region tiles are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleMode {
    GsdPreserving,
    Resize,
    WeightedResCrop,
}

impl SampleMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "gsd" => Ok(SampleMode::GsdPreserving),
            "resize" => Ok(SampleMode::Resize),
            "wgrescro" => Ok(SampleMode::WeightedResCrop),
            other => Err(Error::argument(format!(
                "unknown sample mode {other:?} (expected gsd|resize|wgrescro)"
            ))),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            SampleMode::GsdPreserving => "gsd",
            SampleMode::Resize => "resize",
            SampleMode::WeightedResCrop => "wgrescro",
        }
    }
}

/// Where a GSD-preserving window lands inside a box that exceeds the
/// training size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Placement {
    /// Uniformly random position fully inside the box.
    #[default]
    Random,
    /// Deterministic position at the box's top-left corner.
    TopLeft,
}

/// Region sampler configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub mode: SampleMode,
    pub train_h: usize,
    pub train_w: usize,
    /// Ranked regions consumed per batch (weighted mode draws this many).
    pub top_k: usize,
    /// Weight offset factor for weighted resampling.
    pub arr_len_factor: f64,
    /// Window placement inside boxes larger than the training size.
    pub placement: Placement,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            mode: SampleMode::GsdPreserving,
            train_h: 512,
            train_w: 512,
            top_k: 4,
            arr_len_factor: 0.07,
            placement: Placement::Random,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.train_h == 0 || self.train_w == 0 {
            return Err(Error::argument("training dimensions must be positive"));
        }
        if self.top_k == 0 {
            return Err(Error::argument("top_k must be at least 1"));
        }
        if self.arr_len_factor.is_nan() || self.arr_len_factor <= 0.0 {
            return Err(Error::argument(format!(
                "arr_len_factor must be positive, got {}",
                self.arr_len_factor
            )));
        }
        Ok(())
    }
}

/// Reduces a mask over its scene's label plane to a region record.
/// `labels` must cover the same extent as the mask; counts are taken over
/// mask-foreground pixels only, ignore pixels excluded. A region whose
/// foreground is empty or entirely ignored is an error.
pub fn annotate_region(
    scene_id: &str,
    mask: &Mask,
    labels: &[u16],
    ignore_id: u16,
    global_hist: &ClassHistogram,
) -> Result<RegionRecord> {
    if labels.len() != mask.h * mask.w {
        return Err(Error::argument(format!(
            "labels cover {} pixels but mask is {}x{}",
            labels.len(),
            mask.h,
            mask.w
        )));
    }
    let bbox = mask_to_bbox(mask)?;
    let num_classes = global_hist.num_classes();
    let mut counts = vec![0u64; num_classes];
    for (r, c) in mask.foreground() {
        let l = labels[r * mask.w + c];
        if l == ignore_id {
            continue;
        }
        let idx = l as usize;
        if idx >= num_classes {
            return Err(Error::data(format!(
                "label {l} outside class range 0..{num_classes}"
            )));
        }
        counts[idx] += 1;
    }
    let richness = counts.iter().filter(|&&c| c > 0).count();
    if richness == 0 {
        return Err(Error::EmptyRegion(
            "mask foreground contains only ignore pixels".into(),
        ));
    }
    // argmax with lowest-id tie-break
    let primary_class = counts
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i as u16)
        .unwrap();
    Ok(RegionRecord {
        scene_id: scene_id.to_string(),
        bbox,
        class_counts: counts,
        primary_class,
        richness,
        rank: 0,
        source: RegionSource::MaskFile,
    })
}

/// Orders records tail-first: ascending global pixel count of the primary
/// class, then descending richness, then ascending `(scene_id, bbox row,
/// bbox col)`. Rank fields are assigned 0..n-1. The order is total, so any
/// permutation of the input produces the same output.
pub fn rank_regions(
    mut records: Vec<RegionRecord>,
    global_hist: &ClassHistogram,
) -> Result<Vec<RegionRecord>> {
    for r in &records {
        if r.primary_class as usize >= global_hist.num_classes() {
            return Err(Error::data(format!(
                "record primary class {} not covered by the global histogram",
                r.primary_class
            )));
        }
    }
    // Comparing raw counts is equivalent to comparing shares (same
    // denominator) and avoids float ties.
    records.sort_by(|a, b| {
        let share_a = global_hist.counts[a.primary_class as usize];
        let share_b = global_hist.counts[b.primary_class as usize];
        share_a
            .cmp(&share_b)
            .then(b.richness.cmp(&a.richness))
            .then(a.scene_id.cmp(&b.scene_id))
            .then(a.bbox.row.cmp(&b.bbox.row))
            .then(a.bbox.col.cmp(&b.bbox.col))
    });
    for (i, r) in records.iter_mut().enumerate() {
        r.rank = i;
    }
    Ok(records)
}

/// GSD-preserving region sample: a train-size window, always a verbatim
/// sub-array of the source raster.
///
/// Boxes at least as large as the training size take a uniformly random
/// train-size window fully inside the box. Smaller boxes anchor the window
/// at the box's top-left corner, clamped to raster bounds, so context
/// beyond the region may be included but no pixel is ever resampled.
pub fn sample_region_gsd(
    scenes: &mut SceneSet,
    record: &RegionRecord,
    cfg: &SamplerConfig,
    rng: &mut impl Rng,
) -> Result<Tile> {
    cfg.validate()?;
    let info = scenes.info(&record.scene_id)?;
    if cfg.train_h > info.height || cfg.train_w > info.width {
        return Err(Error::argument(format!(
            "training size {}x{} larger than raster {}x{}",
            cfg.train_h, cfg.train_w, info.height, info.width
        )));
    }
    let bbox = record.bbox;
    let win = if bbox.h >= cfg.train_h && bbox.w >= cfg.train_w {
        match cfg.placement {
            Placement::Random => Window::new(
                rng.gen_range(bbox.row..=bbox.row + bbox.h - cfg.train_h),
                rng.gen_range(bbox.col..=bbox.col + bbox.w - cfg.train_w),
                cfg.train_h,
                cfg.train_w,
            ),
            Placement::TopLeft => Window::new(bbox.row, bbox.col, cfg.train_h, cfg.train_w),
        }
    } else {
        Window::new(
            bbox.row.min(info.height - cfg.train_h),
            bbox.col.min(info.width - cfg.train_w),
            cfg.train_h,
            cfg.train_w,
        )
    };
    let mut tile = scenes.read_window(&record.scene_id, &win)?;
    tile.provenance = Provenance::SrrtaGsd;
    Ok(tile)
}

/// Resize region sample: the whole bounding box resampled to the training
/// dimensions (area-average image, nearest-neighbor labels).
pub fn sample_region_resize(
    scenes: &mut SceneSet,
    record: &RegionRecord,
    cfg: &SamplerConfig,
) -> Result<Tile> {
    cfg.validate()?;
    let crop = scenes.read_window(&record.scene_id, &record.bbox)?;
    let mut tile = resize_tile(&crop, cfg.train_h, cfg.train_w)?;
    tile.provenance = Provenance::SrrtaResize;
    Ok(tile)
}

/// Normalized sampling weights over `n` ranks: `w_i = 1 / (i + n * factor)`.
/// Strictly decreasing in rank; sums to 1.
pub fn rank_weights(n: usize, arr_len_factor: f64) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::argument("cannot weight an empty record list"));
    }
    if arr_len_factor.is_nan() || arr_len_factor <= 0.0 {
        return Err(Error::argument(format!(
            "arr_len_factor must be positive, got {arr_len_factor}"
        )));
    }
    let offset = n as f64 * arr_len_factor;
    let raw: Vec<f64> = (0..n).map(|i| 1.0 / (i as f64 + offset)).collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|w| w / total).collect())
}

/// Draws indices with replacement from an explicit distribution via
/// inverse-CDF binary search. Hand-rolled so the draw sequence depends only
/// on the generator stream, not on any library's internal algorithm.
#[derive(Debug, Clone)]
pub struct WeightedIndexSampler {
    cumulative: Vec<f64>,
}

impl WeightedIndexSampler {
    pub fn new(probabilities: &[f64]) -> Result<Self> {
        if probabilities.is_empty() {
            return Err(Error::argument("empty probability vector"));
        }
        let mut cumulative = Vec::with_capacity(probabilities.len());
        let mut acc = 0.0;
        for &p in probabilities {
            if p.is_nan() || p < 0.0 || !p.is_finite() {
                return Err(Error::Numeric(format!("invalid probability {p}")));
            }
            acc += p;
            cumulative.push(acc);
        }
        if (acc - 1.0).abs() > 1e-9 {
            return Err(Error::Numeric(format!(
                "probabilities sum to {acc}, expected 1"
            )));
        }
        // Guard the final bucket against rounding in the partial sums.
        *cumulative.last_mut().unwrap() = f64::INFINITY;
        Ok(WeightedIndexSampler { cumulative })
    }

    pub fn sample(&self, rng: &mut impl Rng) -> usize {
        let u: f64 = rng.gen();
        self.cumulative.partition_point(|&c| c <= u)
    }
}

/// Weighted GSD-preserving resize-and-crop sampling.
///
/// Records must already be ranked (descending sampling priority). `x`
/// records are drawn with replacement under [`rank_weights`]; each draw
/// emits two tiles: the whole bounding box resized to the training size,
/// then a train-size crop of the box region (random inside large boxes,
/// top-left anchored otherwise). Draws and crops interleave per record, so
/// a smaller `x` yields a prefix of a larger run under the same seed.
pub fn wg_rescro(
    scenes: &mut SceneSet,
    ranked: &[RegionRecord],
    x: usize,
    cfg: &SamplerConfig,
    rng: &mut impl Rng,
) -> Result<Vec<Tile>> {
    Ok(wg_rescro_traced(scenes, ranked, x, cfg, rng)?
        .into_iter()
        .map(|(_, tile)| tile)
        .collect())
}

/// As [`wg_rescro`], additionally reporting each tile's source scene id
/// (records may point at different scenes under dataset-level indexes).
pub fn wg_rescro_traced(
    scenes: &mut SceneSet,
    ranked: &[RegionRecord],
    x: usize,
    cfg: &SamplerConfig,
    rng: &mut impl Rng,
) -> Result<Vec<(String, Tile)>> {
    cfg.validate()?;
    if ranked.is_empty() {
        return Err(Error::argument("cannot sample from an empty record list"));
    }
    if x == 0 {
        return Err(Error::argument("sample count x must be at least 1"));
    }
    let probs = rank_weights(ranked.len(), cfg.arr_len_factor)?;
    let sampler = WeightedIndexSampler::new(&probs)?;
    let mut tiles = Vec::with_capacity(2 * x);
    for _ in 0..x {
        let record = &ranked[sampler.sample(rng)];
        tiles.push((
            record.scene_id.clone(),
            sample_region_resize(scenes, record, cfg)?,
        ));
        tiles.push((
            record.scene_id.clone(),
            sample_region_gsd(scenes, record, cfg, rng)?,
        ));
    }
    Ok(tiles)
}

/// A composed training batch with balance diagnostics attached.
#[derive(Debug, Clone)]
pub struct Batch {
    pub tiles: Vec<Tile>,
    /// Source scene id per tile (parallel to `tiles`); differs from the
    /// batch's target scene for tiles pulled in by dataset-level indexes.
    pub source_scenes: Vec<String>,
    /// Ranked regions requested but unavailable (fewer records than top_k).
    pub shortfall: usize,
    pub hist: ClassHistogram,
    pub diagnostics: BatchDiagnostics,
}

/// Composes one training batch for `scene_id`.
///
/// Under the GSD-preserving and resize modes the batch is a multi-scale
/// sample (anchor plus one tile per scale) followed by tiles for the
/// `top_k` best-ranked records. The weighted mode replaces the whole batch
/// with `2 * top_k` weighted resample tiles and draws no multi-scale
/// sample. Records may reference other scenes (dataset-level
/// augmentation); tiles are cut from whichever scene a record names.
pub fn compose_batch(
    scenes: &mut SceneSet,
    scene_id: &str,
    ranked: &[RegionRecord],
    msar_cfg: &MsarConfig,
    sampler_cfg: &SamplerConfig,
    num_classes: usize,
    rng: &mut impl Rng,
) -> Result<Batch> {
    sampler_cfg.validate()?;
    let mut tiles = Vec::new();
    let mut source_scenes = Vec::new();
    let mut shortfall = 0;
    match sampler_cfg.mode {
        SampleMode::WeightedResCrop => {
            if ranked.is_empty() {
                shortfall = sampler_cfg.top_k;
            } else {
                for (scene, tile) in
                    wg_rescro_traced(scenes, ranked, sampler_cfg.top_k, sampler_cfg, rng)?
                {
                    source_scenes.push(scene);
                    tiles.push(tile);
                }
            }
        }
        SampleMode::GsdPreserving | SampleMode::Resize => {
            let sample = {
                let mut scene = ScenesetSource {
                    scenes,
                    scene_id: scene_id.to_string(),
                };
                sample_msar(&mut scene, msar_cfg, rng)?
            };
            for tile in sample.tiles {
                source_scenes.push(scene_id.to_string());
                tiles.push(tile);
            }
            let take = sampler_cfg.top_k.min(ranked.len());
            shortfall = sampler_cfg.top_k - take;
            for record in &ranked[..take] {
                let tile = match sampler_cfg.mode {
                    SampleMode::GsdPreserving => {
                        sample_region_gsd(scenes, record, sampler_cfg, rng)?
                    }
                    SampleMode::Resize => sample_region_resize(scenes, record, sampler_cfg)?,
                    SampleMode::WeightedResCrop => unreachable!(),
                };
                source_scenes.push(record.scene_id.clone());
                tiles.push(tile);
            }
        }
    }
    let mut hist = ClassHistogram::new(num_classes);
    for tile in &tiles {
        hist.accumulate(&tile.labels, tile.ignore_id)?;
    }
    let diagnostics = BatchDiagnostics::from_histogram(&hist);
    Ok(Batch {
        tiles,
        source_scenes,
        shortfall,
        hist,
        diagnostics,
    })
}

/// Adapter exposing one scene of a [`SceneSet`] as a sampling source.
struct ScenesetSource<'a> {
    scenes: &'a mut SceneSet,
    scene_id: String,
}

impl crate::msar::WindowSource for ScenesetSource<'_> {
    fn extent(&mut self) -> Result<(usize, usize)> {
        let info = self.scenes.info(&self.scene_id)?;
        Ok((info.height, info.width))
    }
    fn fetch(&mut self, win: &Window) -> Result<Tile> {
        self.scenes.read_window(&self.scene_id, win)
    }
}

// ---------------------------------------------------------------------------
// Region index file: tab-separated lines
//   scene_id, row, col, h, w, primary, richness, rank, count_0 .. count_{C-1}
// ---------------------------------------------------------------------------

/// Writes records in order; per-class counts become trailing columns.
pub fn write_region_index(records: &[RegionRecord], path: &std::path::Path) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        write!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.scene_id,
            r.bbox.row,
            r.bbox.col,
            r.bbox.h,
            r.bbox.w,
            r.primary_class,
            r.richness,
            r.rank
        )?;
        for c in &r.class_counts {
            write!(out, "\t{c}")?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a region index; every line must carry the same class count.
pub fn read_region_index(path: &std::path::Path) -> Result<Vec<RegionRecord>> {
    let text = std::fs::read_to_string(path)?;
    let mut records = Vec::new();
    let mut num_classes: Option<usize> = None;
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 9 {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected at least 9 fields, got {}", fields.len()),
            });
        }
        let c = fields.len() - 8;
        if let Some(expect) = num_classes {
            if c != expect {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("class count {c} differs from earlier lines ({expect})"),
                });
            }
        } else {
            num_classes = Some(c);
        }
        let parse = |s: &str, what: &str| -> Result<u64> {
            s.parse().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("bad {what} {s:?}"),
            })
        };
        let bbox = Window::new(
            parse(fields[1], "row")? as usize,
            parse(fields[2], "col")? as usize,
            parse(fields[3], "height")? as usize,
            parse(fields[4], "width")? as usize,
        );
        let class_counts = fields[8..]
            .iter()
            .map(|s| parse(s, "class count"))
            .collect::<Result<Vec<u64>>>()?;
        records.push(RegionRecord {
            scene_id: fields[0].to_string(),
            bbox,
            class_counts,
            primary_class: parse(fields[5], "primary class")? as u16,
            richness: parse(fields[6], "richness")? as usize,
            rank: parse(fields[7], "rank")? as usize,
            source: RegionSource::MaskFile,
        });
    }
    Ok(records)
}
