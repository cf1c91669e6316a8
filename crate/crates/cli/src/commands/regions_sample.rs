//! `regions-sample`: cut region tiles from a ranked index.
//!
//! `gsd` and `resize` modes take the `top_k` best-ranked records, one tile
//! each. `wgrescro` draws `count` records with replacement under the
//! rank-weighted distribution and emits a resize/crop tile pair per draw.
//! Every draw unit uses a generator derived from `(seed, unit)`, so output
//! is worker-independent and a smaller run is a prefix of a larger one.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use longtile::io::TileArchiveWriter;
use longtile::raster::Tile;
use longtile::regions::{
    rank_weights, read_region_index, sample_region_gsd, sample_region_resize, Placement,
    RegionRecord, SampleMode, SamplerConfig, WeightedIndexSampler,
};
use longtile::seed::rng_for;

use crate::echo::Echo;
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
    /// gsd | resize | wgrescro
    #[arg(long)]
    pub mode: String,
    /// Ranked records consumed (gsd/resize modes).
    #[arg(long, default_value_t = 4)]
    pub topk: usize,
    /// Weighted draws for wgrescro (defaults to --topk).
    #[arg(long)]
    pub count: Option<usize>,
    /// Training tile height (and width unless --train-w is given).
    #[arg(long)]
    pub train: usize,
    #[arg(long)]
    pub train_w: Option<usize>,
    /// Array length factor for the weighted mode.
    #[arg(long, default_value_t = 0.07)]
    pub factor: f64,
    /// Window placement inside oversized boxes: random | top-left.
    #[arg(long, default_value = "random")]
    pub placement: String,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn parse_placement(s: &str) -> Result<Placement> {
    match s {
        "random" => Ok(Placement::Random),
        "top-left" => Ok(Placement::TopLeft),
        other => bail!("unknown placement {other:?} (expected random|top-left)"),
    }
}

pub fn tile_log_line(tile: &Tile, scene_id: &str) -> String {
    format!(
        "{}\t{}\t{}\t{}\t{}\t{}\t{}",
        scene_id,
        tile.provenance.label(),
        tile.scale,
        tile.window.row,
        tile.window.col,
        tile.window.h,
        tile.window.w
    )
}

pub fn run(args: &Args) -> Result<()> {
    let metas = resolve(&args.scenes, &args.manifest)?;
    ensure_out_dir(&args.out)?;
    let mode = SampleMode::parse(&args.mode)?;
    let records = read_region_index(&args.index)
        .with_context(|| format!("reading region index {}", args.index.display()))?;
    if records.is_empty() {
        bail!("region index {} is empty", args.index.display());
    }
    let cfg = SamplerConfig {
        mode,
        train_h: args.train,
        train_w: args.train_w.unwrap_or(args.train),
        top_k: args.topk,
        arr_len_factor: args.factor,
        placement: parse_placement(&args.placement)?,
        seed: args.seed,
    };
    cfg.validate()?;

    let units: Vec<Vec<&RegionRecord>> = match mode {
        SampleMode::GsdPreserving | SampleMode::Resize => {
            let take = args.topk.min(records.len());
            records.iter().take(take).map(|r| vec![r]).collect()
        }
        SampleMode::WeightedResCrop => {
            let draws = args.count.unwrap_or(args.topk);
            (0..draws).map(|_| records.iter().collect()).collect()
        }
    };

    let tiles_per_unit = parallel_ordered(
        units.len(),
        args.workers,
        || Ok(scene_set(&metas)),
        |scenes, i| -> Result<Vec<(String, Tile)>> {
            let mut rng = rng_for(args.seed, i as u64);
            match mode {
                SampleMode::GsdPreserving => {
                    let record = units[i][0];
                    let tile = sample_region_gsd(scenes, record, &cfg, &mut rng)?;
                    Ok(vec![(record.scene_id.clone(), tile)])
                }
                SampleMode::Resize => {
                    let record = units[i][0];
                    let tile = sample_region_resize(scenes, record, &cfg)?;
                    Ok(vec![(record.scene_id.clone(), tile)])
                }
                SampleMode::WeightedResCrop => {
                    let probs = rank_weights(records.len(), cfg.arr_len_factor)?;
                    let sampler = WeightedIndexSampler::new(&probs)?;
                    let record = units[i][sampler.sample(&mut rng)];
                    let resized = sample_region_resize(scenes, record, &cfg)?;
                    let cropped = sample_region_gsd(scenes, record, &cfg, &mut rng)?;
                    Ok(vec![
                        (record.scene_id.clone(), resized),
                        (record.scene_id.clone(), cropped),
                    ])
                }
            }
        },
    )?;

    let archive_path = args.out.join("tiles.bin");
    let mut writer = TileArchiveWriter::create(&archive_path)?;
    let mut log = String::new();
    for unit in &tiles_per_unit {
        for (scene_id, tile) in unit {
            writer.append(tile)?;
            log.push_str(&tile_log_line(tile, scene_id));
            log.push('\n');
        }
    }
    let total = writer.len();
    writer.finish()?;
    std::fs::write(args.out.join("provenance.tsv"), log)?;

    let mut echo = Echo::new("regions-sample");
    echo.set("mode", mode.label())
        .set("topk", args.topk)
        .set("count", args.count.unwrap_or(args.topk))
        .set("train_h", cfg.train_h)
        .set("train_w", cfg.train_w)
        .set("factor", args.factor)
        .set("placement", &args.placement)
        .set("seed", args.seed)
        .set("workers", args.workers)
        .set("index", args.index.display())
        .set("records", records.len())
        .set("out", args.out.display());
    echo.write(&args.out)?;
    println!("wrote {total} tiles to {}", archive_path.display());
    Ok(())
}
