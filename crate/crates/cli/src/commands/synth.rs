//! `synth`: deterministic synthetic long-tail scene generation.

use std::path::PathBuf;

use anyhow::{Context, Result};
use longtile::io::{write_manifest, write_scene, SceneMeta};
use longtile::synth::{synth_longtail_with, SynthOptions};

use crate::echo::{join, Echo};
use crate::scenes::ensure_out_dir;

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Generator seed (the scene is a pure function of seed and parameters).
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub height: usize,
    #[arg(long)]
    pub width: usize,
    /// Per-class pixel frequencies; must be positive and sum to 1.
    #[arg(long, value_delimiter = ',', required = true)]
    pub freqs: Vec<f64>,
    #[arg(long, default_value_t = 3)]
    pub channels: usize,
    /// Ground sampling distance in meters per pixel.
    #[arg(long, default_value_t = 1.0)]
    pub gsd: f64,
    /// Scene id; defaults to `synth-<seed>`.
    #[arg(long)]
    pub scene_id: Option<String>,
    /// Output directory (scene file plus a one-line manifest).
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: &Args) -> Result<()> {
    ensure_out_dir(&args.out)?;
    let opts = SynthOptions {
        channels: args.channels,
        gsd: args.gsd,
        scene_id: args.scene_id.clone(),
        ..Default::default()
    };
    let raster = synth_longtail_with(args.seed, args.height, args.width, &args.freqs, &opts)?;
    let scene_path = args.out.join(format!("{}.lrs", raster.scene_id));
    write_scene(&raster, &scene_path)
        .with_context(|| format!("writing scene {}", scene_path.display()))?;
    let meta = SceneMeta {
        scene_id: raster.scene_id.clone(),
        path: PathBuf::from(format!("{}.lrs", raster.scene_id)),
        height: raster.height,
        width: raster.width,
        gsd: raster.gsd,
    };
    write_manifest(&[meta], &args.out.join("manifest.tsv"))?;

    let mut echo = Echo::new("synth");
    echo.set("seed", args.seed)
        .set("height", args.height)
        .set("width", args.width)
        .set("freqs", join(&args.freqs))
        .set("channels", args.channels)
        .set("gsd", args.gsd)
        .set("scene_id", &raster.scene_id)
        .set("out", args.out.display());
    echo.write(&args.out)?;
    println!("wrote {}", scene_path.display());
    Ok(())
}
