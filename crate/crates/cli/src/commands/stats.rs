//! `stats`: streamed class histogram with a sorted tail report.
//!
//! Scenes are read label-band by label-band, so whole-scene pixel data is
//! never resident; per-scene partial histograms merge associatively.

use std::path::PathBuf;

use anyhow::{Context, Result};
use longtile::io::{SceneMeta, SceneReader};
use longtile::stats::ClassHistogram;

use crate::echo::Echo;
use crate::par::parallel_ordered;
use crate::scenes::{ensure_out_dir, resolve};

/// Rows per streamed band.
pub const BAND_ROWS: usize = 512;

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Scene file(s); repeatable.
    #[arg(long = "scene")]
    pub scenes: Vec<PathBuf>,
    /// Manifest of scenes (mutually exclusive with --scene).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Number of classes.
    #[arg(long)]
    pub classes: usize,
    /// Classes with a share strictly below this are flagged as tail.
    #[arg(long, default_value_t = 0.05)]
    pub tail_threshold: f64,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Optional output directory (stats.tsv plus config echo).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Streamed histogram of one scene's label plane.
pub fn scene_histogram(meta: &SceneMeta, classes: usize) -> Result<ClassHistogram> {
    let mut reader = SceneReader::open_with_id(&meta.path, meta.scene_id.clone())
        .with_context(|| format!("opening scene {}", meta.path.display()))?;
    let header = *reader.header();
    let mut hist = ClassHistogram::new(classes);
    let mut band = Vec::new();
    let mut row = 0;
    while row < header.height {
        let rows = BAND_ROWS.min(header.height - row);
        reader.read_label_band(row, rows, &mut band)?;
        hist.accumulate(&band, header.ignore_id)
            .with_context(|| format!("scene {}", meta.scene_id))?;
        row += rows;
    }
    Ok(hist)
}

pub fn render(hist: &ClassHistogram, tail_threshold: f64) -> String {
    let mut text = String::new();
    for (c, &n) in hist.counts.iter().enumerate() {
        text.push_str(&format!("class\t{c}\t{n}\t{:.6}\n", hist.share(c)));
    }
    text.push_str(&format!("total\t{}\n", hist.total));
    for (c, share) in hist.tail_classes(tail_threshold) {
        text.push_str(&format!("tail\t{c}\t{share:.6}\n"));
    }
    text
}

pub fn run(args: &Args) -> Result<()> {
    let metas = resolve(&args.scenes, &args.manifest)?;
    let partials = parallel_ordered(
        metas.len(),
        args.workers,
        || Ok(()),
        |_, i| scene_histogram(&metas[i], args.classes),
    )?;
    let mut hist = ClassHistogram::new(args.classes);
    for p in &partials {
        hist.merge(p);
    }
    let text = render(&hist, args.tail_threshold);
    print!("{text}");
    if let Some(out) = &args.out {
        ensure_out_dir(out)?;
        std::fs::write(out.join("stats.tsv"), &text)?;
        let mut echo = Echo::new("stats");
        echo.set("classes", args.classes)
            .set("tail_threshold", args.tail_threshold)
            .set("workers", args.workers)
            .set("scenes", metas.len())
            .set("out", out.display());
        echo.write(out)?;
    }
    Ok(())
}
