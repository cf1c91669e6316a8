//! `batch`: compose mixed training batches and report balance.
//!
//! Batch `b` targets scene `b mod n_scenes` and draws from a generator
//! derived from `(seed, b)`. Records default to the target scene's own
//! entries (rank order preserved); `--dataset-level` instead offers the
//! globally ranked index to every batch, so tail regions can be pulled in
//! from any scene. A balance report (class shares, imbalance ratio, and
//! the per-class gradient under a uniform-probability probe) is written
//! alongside the archive; the report is a pure function of the archive.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use longtile::io::TileArchiveWriter;
use longtile::msar::MsarConfig;
use longtile::raster::Tile;
use longtile::regions::{compose_batch, read_region_index, SampleMode, SamplerConfig};
use longtile::seed::rng_for;

use super::regions_sample::tile_log_line;
use super::report::balance_report;
use crate::echo::{join, Echo};
use crate::par::parallel_ordered;
use crate::scenes::{ensure_out_dir, resolve, scene_set};

#[derive(clap::Args, Debug)]
pub struct Args {
    #[arg(long = "scene")]
    pub scenes: Vec<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Ranked region index produced by regions-build.
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long)]
    pub classes: usize,
    /// Anchor height (and width unless --anchor-w is given).
    #[arg(long)]
    pub anchor: usize,
    #[arg(long)]
    pub anchor_w: Option<usize>,
    /// Comma-separated scale factors; an empty string disables the
    /// multi-scale part.
    #[arg(long, default_value = "2,3,4")]
    pub scales: String,
    /// Ranked regions per batch.
    #[arg(long, default_value_t = 4)]
    pub topk: usize,
    /// gsd | resize | wgrescro
    #[arg(long, default_value = "gsd")]
    pub mode: String,
    /// Training tile height (defaults to the anchor height).
    #[arg(long)]
    pub train: Option<usize>,
    #[arg(long)]
    pub train_w: Option<usize>,
    #[arg(long, default_value_t = 0.07)]
    pub factor: f64,
    /// Window placement inside oversized boxes: random | top-left.
    #[arg(long, default_value = "random")]
    pub placement: String,
    /// Number of batches to compose.
    #[arg(long)]
    pub batches: usize,
    /// Offer globally ranked records to every batch instead of per-scene
    /// records.
    #[arg(long, default_value_t = false)]
    pub dataset_level: bool,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: &Args) -> Result<()> {
    let metas = resolve(&args.scenes, &args.manifest)?;
    ensure_out_dir(&args.out)?;
    let mode = SampleMode::parse(&args.mode)?;
    let records = read_region_index(&args.index)
        .with_context(|| format!("reading region index {}", args.index.display()))?;
    if args.batches == 0 {
        bail!("--batches must be at least 1");
    }
    let msar_cfg = MsarConfig {
        anchor_h: args.anchor,
        anchor_w: args.anchor_w.unwrap_or(args.anchor),
        scales: crate::scenes::parse_scales(&args.scales)?,
        seed: args.seed,
    };
    let sampler_cfg = SamplerConfig {
        mode,
        train_h: args.train.unwrap_or(args.anchor),
        train_w: args
            .train_w
            .or(args.train)
            .unwrap_or(args.anchor_w.unwrap_or(args.anchor)),
        top_k: args.topk,
        arr_len_factor: args.factor,
        placement: super::regions_sample::parse_placement(&args.placement)?,
        seed: args.seed,
    };
    sampler_cfg.validate()?;

    let batches = parallel_ordered(
        args.batches,
        args.workers,
        || Ok(scene_set(&metas)),
        |scenes, b| {
            let scene_id = &metas[b % metas.len()].scene_id;
            let ranked: Vec<_> = if args.dataset_level {
                records.clone()
            } else {
                records
                    .iter()
                    .filter(|r| &r.scene_id == scene_id)
                    .cloned()
                    .collect()
            };
            let mut rng = rng_for(args.seed, b as u64);
            let batch = compose_batch(
                scenes,
                scene_id,
                &ranked,
                &msar_cfg,
                &sampler_cfg,
                args.classes,
                &mut rng,
            )?;
            Ok((scene_id.clone(), batch))
        },
    )?;

    let archive_path = args.out.join("tiles.bin");
    let mut writer = TileArchiveWriter::create(&archive_path)?;
    let mut log = String::new();
    let mut tile_groups: Vec<Vec<Tile>> = Vec::with_capacity(batches.len());
    for (b, (_, batch)) in batches.iter().enumerate() {
        for (tile, source) in batch.tiles.iter().zip(&batch.source_scenes) {
            writer.append(tile)?;
            log.push_str(&format!("{b}\t{}\n", tile_log_line(tile, source)));
        }
        if batch.shortfall > 0 {
            eprintln!(
                "batch {b}: only {} of {} requested regions available",
                args.topk - batch.shortfall,
                args.topk
            );
        }
        tile_groups.push(batch.tiles.clone());
    }
    let total = writer.len();
    writer.finish()?;
    std::fs::write(args.out.join("provenance.tsv"), log)?;

    let report = balance_report(&tile_groups, args.classes)?;
    std::fs::write(args.out.join("balance_report.tsv"), report)?;

    let mut echo = Echo::new("batch");
    echo.set("anchor_h", msar_cfg.anchor_h)
        .set("anchor_w", msar_cfg.anchor_w)
        .set("scales", join(&msar_cfg.scales))
        .set("mode", mode.label())
        .set("topk", args.topk)
        .set("train_h", sampler_cfg.train_h)
        .set("train_w", sampler_cfg.train_w)
        .set("factor", args.factor)
        .set("placement", &args.placement)
        .set("classes", args.classes)
        .set("batches", args.batches)
        .set("dataset_level", args.dataset_level)
        .set("seed", args.seed)
        .set("workers", args.workers)
        .set("index", args.index.display())
        .set("out", args.out.display());
    echo.write(&args.out)?;
    println!(
        "wrote {} batches ({total} tiles) to {}",
        args.batches,
        archive_path.display()
    );
    Ok(())
}
