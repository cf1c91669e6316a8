//! `eval`: confusion-driven per-class IoU and mIoU.
//!
//! Ground truth and prediction planes are `.lrs` files (predictions may be
//! label-plane-only files with zero image channels). Both are streamed in
//! row bands sized by the protocol window, so whole scenes are never
//! resident; the result is independent of the banding.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use longtile::eval::{iou_miou, ConfusionMatrix};
use longtile::io::SceneReader;

use crate::echo::Echo;
use crate::scenes::ensure_out_dir;

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Prediction label plane (.lrs; image channels may be 0).
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground-truth scene (.lrs).
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub classes: usize,
    /// Protocol window edge; also the streamed band height.
    #[arg(long, default_value_t = 512)]
    pub window: usize,
    /// Protocol stride (recorded in the echo; accumulation is exact and
    /// stride-independent).
    #[arg(long, default_value_t = 341)]
    pub stride: usize,
    /// Class id excluded from the mean (still reported per class).
    #[arg(long)]
    pub exclude_class: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn render(ious: &[Option<f64>], miou: f64, excluded: &[usize]) -> String {
    let mut text = String::new();
    for (c, iou) in ious.iter().enumerate() {
        let value = match iou {
            Some(v) => format!("{v:.6}"),
            None => "NA".to_string(),
        };
        if excluded.contains(&c) {
            text.push_str(&format!("iou\t{c}\t{value}\texcluded\n"));
        } else {
            text.push_str(&format!("iou\t{c}\t{value}\n"));
        }
    }
    text.push_str(&format!("miou\t{miou:.6}\n"));
    text
}

pub fn run(args: &Args) -> Result<()> {
    let mut gt = SceneReader::open(&args.gt)
        .with_context(|| format!("opening ground truth {}", args.gt.display()))?;
    let mut pred = SceneReader::open(&args.pred)
        .with_context(|| format!("opening prediction {}", args.pred.display()))?;
    let (gh, gw) = (gt.height(), gt.width());
    if (pred.height(), pred.width()) != (gh, gw) {
        bail!(
            "extent mismatch: gt {}x{} vs pred {}x{}",
            gh,
            gw,
            pred.height(),
            pred.width()
        );
    }
    if args.window == 0 {
        bail!("--window must be positive");
    }
    let ignore_id = gt.header().ignore_id;
    let mut cm = ConfusionMatrix::new(args.classes);
    let band_rows = args.window.min(gh);
    let mut gt_band = Vec::new();
    let mut pred_band = Vec::new();
    let mut row = 0;
    while row < gh {
        let rows = band_rows.min(gh - row);
        gt.read_label_band(row, rows, &mut gt_band)?;
        pred.read_label_band(row, rows, &mut pred_band)?;
        cm.accumulate(&gt_band, &pred_band, ignore_id)?;
        row += rows;
    }
    let excluded: Vec<usize> = args.exclude_class.into_iter().collect();
    let (ious, miou) = iou_miou(&cm, &excluded)?;
    let text = render(&ious, miou, &excluded);
    print!("{text}");
    if let Some(out) = &args.out {
        ensure_out_dir(out)?;
        std::fs::write(out.join("iou.tsv"), &text)?;
        let mut echo = Echo::new("eval");
        echo.set("pred", args.pred.display())
            .set("gt", args.gt.display())
            .set("classes", args.classes)
            .set("window", args.window)
            .set("stride", args.stride)
            .set(
                "exclude_class",
                args.exclude_class
                    .map(|c| c.to_string())
                    .unwrap_or_else(|| "none".to_string()),
            )
            .set("out", out.display());
        echo.write(out)?;
    }
    Ok(())
}
