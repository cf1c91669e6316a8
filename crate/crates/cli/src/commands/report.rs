//! Balance reporting over composed batches.
//!
//! The report is computed from tile label payloads alone, so regenerating
//! it from a written archive reproduces it byte for byte.

use anyhow::Result;
use longtile::raster::Tile;
use longtile::stats::{BatchDiagnostics, ClassHistogram};

/// Renders one line per batch: tile and pixel counts, imbalance ratio
/// (max share over min nonzero share), per-class shares, and the per-class
/// gradient under a uniform-probability probe model.
pub fn balance_report(batches: &[Vec<Tile>], classes: usize) -> Result<String> {
    let mut text = String::from("#batch\ttiles\tpixels\timbalance");
    for c in 0..classes {
        text.push_str(&format!("\tshare_{c}"));
    }
    for c in 0..classes {
        text.push_str(&format!("\tgrad_{c}"));
    }
    text.push('\n');
    for (b, tiles) in batches.iter().enumerate() {
        let mut hist = ClassHistogram::new(classes);
        for tile in tiles {
            hist.accumulate(&tile.labels, tile.ignore_id)?;
        }
        let diag = BatchDiagnostics::from_histogram(&hist);
        text.push_str(&format!(
            "{b}\t{}\t{}\t{:.6}",
            tiles.len(),
            hist.total,
            diag.imbalance_ratio
        ));
        for c in 0..classes {
            text.push_str(&format!("\t{:.6}", hist.share(c)));
        }
        for g in &diag.grad {
            text.push_str(&format!("\t{g:+.6e}"));
        }
        text.push('\n');
    }
    Ok(text)
}

/// Groups a flat archive back into batches of `batch_len` tiles, for
/// recomputing a report from disk.
pub fn group_tiles(tiles: Vec<Tile>, batch_len: usize) -> Vec<Vec<Tile>> {
    if batch_len == 0 {
        return vec![tiles];
    }
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(batch_len);
    for t in tiles {
        cur.push(t);
        if cur.len() == batch_len {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}
