//! `plan`: dump the sliding-window cover for a raster extent.

use std::path::PathBuf;

use anyhow::Result;
use longtile::eval::plan_windows;

use crate::echo::Echo;
use crate::scenes::ensure_out_dir;

#[derive(clap::Args, Debug)]
pub struct Args {
    #[arg(long)]
    pub height: usize,
    #[arg(long)]
    pub width: usize,
    #[arg(long, default_value_t = 512)]
    pub window: usize,
    #[arg(long)]
    pub window_w: Option<usize>,
    #[arg(long, default_value_t = 341)]
    pub stride: usize,
    #[arg(long)]
    pub stride_w: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(args: &Args) -> Result<()> {
    let win = (args.window, args.window_w.unwrap_or(args.window));
    let stride = (args.stride, args.stride_w.unwrap_or(args.stride));
    let plan = plan_windows(args.height, args.width, win, stride)?;
    let mut text = String::new();
    for w in &plan.windows {
        text.push_str(&format!("{}\t{}\t{}\t{}\n", w.row, w.col, w.h, w.w));
    }
    print!("{text}");
    if let Some(out) = &args.out {
        ensure_out_dir(out)?;
        std::fs::write(out.join("plan.tsv"), &text)?;
        let mut echo = Echo::new("plan");
        echo.set("height", args.height)
            .set("width", args.width)
            .set("window_h", win.0)
            .set("window_w", win.1)
            .set("stride_h", stride.0)
            .set("stride_w", stride.1)
            .set("windows", plan.windows.len())
            .set("out", out.display());
        echo.write(out)?;
    }
    Ok(())
}
