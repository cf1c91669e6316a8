//! `regions-build`: construct a ranked region index.
//!
//! Masks come either from a pre-extracted mask archive (`--masks`, one
//! scene) or from the scenes' own label planes via connected components
//! (`--from-labels`), which stands in for an external segmenter. Records
//! are ranked tail-first against the global class histogram of all input
//! scenes and written with their rank assigned.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use longtile::io::SceneReader;
use longtile::mask::{connected_components, read_mask_archive};
use longtile::regions::{annotate_region, rank_regions, write_region_index, RegionRecord};
use longtile::stats::ClassHistogram;

use crate::echo::Echo;
use crate::scenes::{ensure_out_dir, resolve};

#[derive(clap::Args, Debug)]
pub struct Args {
    #[arg(long = "scene")]
    pub scenes: Vec<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub classes: usize,
    /// Mask archive for the (single) input scene.
    #[arg(long)]
    pub masks: Option<PathBuf>,
    /// Derive single-class region masks from the label planes.
    #[arg(long, default_value_t = false)]
    pub from_labels: bool,
    /// Minimum component size in pixels for --from-labels.
    #[arg(long, default_value_t = 8)]
    pub min_pixels: usize,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: &Args) -> Result<()> {
    let metas = resolve(&args.scenes, &args.manifest)?;
    ensure_out_dir(&args.out)?;
    if args.masks.is_some() == args.from_labels {
        bail!("exactly one of --masks or --from-labels is required");
    }
    if args.masks.is_some() && metas.len() != 1 {
        bail!("--masks applies to a single scene; got {}", metas.len());
    }

    // Global class distribution first: ranking needs it, and per-scene
    // labels are loaded once and reused for annotation.
    let mut global = ClassHistogram::new(args.classes);
    let mut scene_labels = Vec::with_capacity(metas.len());
    for meta in &metas {
        let mut reader = SceneReader::open_with_id(&meta.path, meta.scene_id.clone())
            .with_context(|| format!("opening scene {}", meta.path.display()))?;
        let raster = reader.read_all()?;
        global
            .accumulate(&raster.labels, raster.ignore_id)
            .with_context(|| format!("scene {}", meta.scene_id))?;
        scene_labels.push(raster);
    }

    let mut records: Vec<RegionRecord> = Vec::new();
    for raster in &scene_labels {
        let masks = if let Some(mask_path) = &args.masks {
            let masks = read_mask_archive(mask_path)
                .with_context(|| format!("reading masks {}", mask_path.display()))?;
            for m in &masks {
                if m.h != raster.height || m.w != raster.width {
                    bail!(
                        "mask extent {}x{} does not match scene {} ({}x{})",
                        m.h,
                        m.w,
                        raster.scene_id,
                        raster.height,
                        raster.width
                    );
                }
            }
            masks
        } else {
            connected_components(
                &raster.labels,
                raster.height,
                raster.width,
                raster.ignore_id,
                args.min_pixels,
            )?
        };
        for mask in &masks {
            records.push(annotate_region(
                &raster.scene_id,
                mask,
                &raster.labels,
                raster.ignore_id,
                &global,
            )?);
        }
    }
    let ranked = rank_regions(records, &global)?;
    let index_path = args.out.join("regions.tsv");
    write_region_index(&ranked, &index_path)?;

    let mut echo = Echo::new("regions-build");
    echo.set("classes", args.classes)
        .set("scenes", metas.len())
        .set("records", ranked.len())
        .set(
            "mask_source",
            if args.from_labels {
                "from-labels".to_string()
            } else {
                format!("{}", args.masks.as_ref().unwrap().display())
            },
        )
        .set("min_pixels", args.min_pixels)
        .set("out", args.out.display());
    echo.write(&args.out)?;
    println!(
        "wrote {} region records to {}",
        ranked.len(),
        index_path.display()
    );
    Ok(())
}
