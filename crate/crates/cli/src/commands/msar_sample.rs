//! `msar-sample`: draw multi-scale anchored samples into a tile archive.
//!
//! Sample `i` draws from its own generator derived from `(seed, i)` and
//! scenes rotate round-robin, so the archive is byte-identical for any
//! worker count. The provenance log records `scene_id, k, row, col, h, w`
//! per tile.

use std::path::PathBuf;

use anyhow::{Context, Result};
use longtile::io::{SceneReader, TileArchiveWriter};
use longtile::msar::{sample_msar, MsarConfig};
use longtile::raster::Tile;
use longtile::seed::rng_for;

use crate::echo::{join, Echo};
use crate::par::parallel_ordered;
use crate::scenes::{ensure_out_dir, resolve};

#[derive(clap::Args, Debug)]
pub struct Args {
    #[arg(long = "scene")]
    pub scenes: Vec<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Anchor height (and width unless --anchor-w is given).
    #[arg(long)]
    pub anchor: usize,
    #[arg(long)]
    pub anchor_w: Option<usize>,
    /// Comma-separated scale factors; an empty string means anchor-only
    /// samples.
    #[arg(long, default_value = "2,3,4")]
    pub scales: String,
    /// Number of samples to draw.
    #[arg(long)]
    pub count: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn provenance_line(scene_id: &str, tile: &Tile) -> String {
    format!(
        "{}\t{}\t{}\t{}\t{}\t{}",
        scene_id, tile.scale, tile.window.row, tile.window.col, tile.window.h, tile.window.w
    )
}

pub fn run(args: &Args) -> Result<()> {
    let metas = resolve(&args.scenes, &args.manifest)?;
    ensure_out_dir(&args.out)?;
    let cfg = MsarConfig {
        anchor_h: args.anchor,
        anchor_w: args.anchor_w.unwrap_or(args.anchor),
        scales: crate::scenes::parse_scales(&args.scales)?,
        seed: args.seed,
    };

    // One reader per worker per scene index would reopen constantly;
    // instead each worker keeps its own lazily opened readers.
    let samples = parallel_ordered(
        args.count,
        args.workers,
        || {
            Ok((0..metas.len())
                .map(|_| None::<SceneReader>)
                .collect::<Vec<_>>())
        },
        |readers, i| {
            let scene_idx = i % metas.len();
            if readers[scene_idx].is_none() {
                readers[scene_idx] = Some(
                    SceneReader::open_with_id(
                        &metas[scene_idx].path,
                        metas[scene_idx].scene_id.clone(),
                    )
                    .with_context(|| format!("opening {}", metas[scene_idx].path.display()))?,
                );
            }
            let reader = readers[scene_idx].as_mut().unwrap();
            let mut rng = rng_for(args.seed, i as u64);
            let sample = sample_msar(reader, &cfg, &mut rng)?;
            Ok((metas[scene_idx].scene_id.clone(), sample))
        },
    )?;

    let archive_path = args.out.join("tiles.bin");
    let log_path = args.out.join("provenance.tsv");
    let mut writer = TileArchiveWriter::create(&archive_path)?;
    let mut log = String::new();
    for (scene_id, sample) in &samples {
        for tile in &sample.tiles {
            writer.append(tile)?;
            log.push_str(&provenance_line(scene_id, tile));
            log.push('\n');
        }
    }
    let tiles = writer.len();
    writer.finish()?;
    std::fs::write(&log_path, log)?;

    let mut echo = Echo::new("msar-sample");
    echo.set("anchor_h", cfg.anchor_h)
        .set("anchor_w", cfg.anchor_w)
        .set("scales", join(&cfg.scales))
        .set("count", args.count)
        .set("seed", args.seed)
        .set("workers", args.workers)
        .set("scenes", metas.len())
        .set("out", args.out.display());
    echo.write(&args.out)?;
    println!("wrote {tiles} tiles to {}", archive_path.display());
    Ok(())
}
