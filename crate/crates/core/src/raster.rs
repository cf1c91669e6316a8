//! Core raster types: labeled scenes, windows, tiles, and resizing.
//!
//! A scene couples an 8-bit interleaved image plane with a 16-bit per-pixel
//! class-label plane of the same extent. All cropping, pooling, and
//! stitching is expressed through [`Window`], an axis-aligned pixel
//! rectangle. Image resampling is an exact box filter (area average);
//! labels are categorical and resample by nearest neighbor.

use crate::error::{Error, Result};

/// Class id used to mark pixels excluded from all statistics.
pub const DEFAULT_IGNORE_ID: u16 = u16::MAX;

/// An axis-aligned pixel rectangle: `h` rows starting at `row`, `w` columns
/// starting at `col`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Window {
    pub row: usize,
    pub col: usize,
    pub h: usize,
    pub w: usize,
}

impl Window {
    pub fn new(row: usize, col: usize, h: usize, w: usize) -> Self {
        Window { row, col, h, w }
    }

    /// Number of pixels covered.
    pub fn area(&self) -> usize {
        self.h * self.w
    }

    /// True if `other` lies fully inside `self`.
    pub fn contains(&self, other: &Window) -> bool {
        self.row <= other.row
            && self.col <= other.col
            && other.row + other.h <= self.row + self.h
            && other.col + other.w <= self.col + self.w
    }

    /// True if the pixel `(row, col)` lies inside the window.
    pub fn contains_pixel(&self, row: usize, col: usize) -> bool {
        row >= self.row && row < self.row + self.h && col >= self.col && col < self.col + self.w
    }

    /// Validates that the window is non-degenerate and fits a raster of
    /// `height` x `width` pixels.
    pub fn check_bounds(&self, height: usize, width: usize) -> Result<()> {
        if self.h == 0 || self.w == 0 {
            return Err(Error::argument(format!(
                "window {}x{} has a zero dimension",
                self.h, self.w
            )));
        }
        let bottom = self.row.checked_add(self.h).ok_or(Error::Bounds {
            edge: "bottom",
            end: usize::MAX,
            limit: height,
        })?;
        if bottom > height {
            return Err(Error::Bounds {
                edge: "bottom",
                end: bottom,
                limit: height,
            });
        }
        let right = self.col.checked_add(self.w).ok_or(Error::Bounds {
            edge: "right",
            end: usize::MAX,
            limit: width,
        })?;
        if right > width {
            return Err(Error::Bounds {
                edge: "right",
                end: right,
                limit: width,
            });
        }
        Ok(())
    }
}

/// Where a tile's pixels came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    /// Verbatim crop of the source raster (the anchor of a multi-scale
    /// sample, or any plain windowed read).
    Anchor,
    /// Downscaled scale-`k` crop from a multi-scale pool.
    Msar,
    /// GSD-preserving region crop; pixels are bit-identical to the source.
    SrrtaGsd,
    /// Region bounding box resized to the training dimensions.
    SrrtaResize,
}

impl Provenance {
    /// Single-byte archive encoding. Multi-scale tiles fold the scale factor
    /// into the byte (`0x10 + k`) so archives round-trip without an extra
    /// field.
    pub fn encode(self, scale: u32) -> Result<u8> {
        match self {
            Provenance::Anchor => Ok(0x00),
            Provenance::SrrtaGsd => Ok(0x02),
            Provenance::SrrtaResize => Ok(0x03),
            Provenance::Msar => {
                if !(2..=0xEF).contains(&scale) {
                    return Err(Error::argument(format!(
                        "multi-scale provenance byte cannot encode scale {scale}"
                    )));
                }
                Ok(0x10 + scale as u8)
            }
        }
    }

    /// Inverse of [`Provenance::encode`]; returns `(provenance, scale)`.
    pub fn decode(byte: u8) -> Result<(Self, u32)> {
        match byte {
            0x00 => Ok((Provenance::Anchor, 1)),
            0x02 => Ok((Provenance::SrrtaGsd, 1)),
            0x03 => Ok((Provenance::SrrtaResize, 1)),
            b if b >= 0x10 => Ok((Provenance::Msar, (b - 0x10) as u32)),
            b => Err(Error::data(format!("unknown provenance byte 0x{b:02x}"))),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Provenance::Anchor => "anchor",
            Provenance::Msar => "msar",
            Provenance::SrrtaGsd => "srrta_gsd",
            Provenance::SrrtaResize => "srrta_resize",
        }
    }
}

/// A fixed-size training crop together with its source location and
/// provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct Tile {
    /// Source rectangle on the originating raster.
    pub window: Window,
    /// Tile extent (may differ from `window` after resizing).
    pub h: usize,
    pub w: usize,
    pub channels: usize,
    /// Effective ground sampling distance: source GSD scaled by the
    /// vertical resampling ratio.
    pub gsd: f64,
    pub ignore_id: u16,
    /// Scale factor `k` for multi-scale crops; 1 otherwise.
    pub scale: u32,
    pub provenance: Provenance,
    /// Interleaved image block, `h * w * channels` bytes, row-major.
    pub image: Vec<u8>,
    /// Label block, `h * w` entries, row-major.
    pub labels: Vec<u16>,
}

impl Tile {
    /// Label value at `(row, col)`.
    pub fn label_at(&self, row: usize, col: usize) -> u16 {
        self.labels[row * self.w + col]
    }
}

/// A fully in-memory labeled scene.
///
/// Image and label planes share the same `height` x `width` extent; the
/// image plane is 8-bit channel-interleaved, the label plane one 16-bit
/// class id per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledRaster {
    pub scene_id: String,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Meters per pixel; must be positive.
    pub gsd: f64,
    pub ignore_id: u16,
    pub image: Vec<u8>,
    pub labels: Vec<u16>,
}

impl LabeledRaster {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        scene_id: impl Into<String>,
        height: usize,
        width: usize,
        channels: usize,
        gsd: f64,
        ignore_id: u16,
        image: Vec<u8>,
        labels: Vec<u16>,
    ) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::argument("raster dimensions must be positive"));
        }
        if gsd.is_nan() || gsd <= 0.0 {
            return Err(Error::argument(format!("gsd must be positive, got {gsd}")));
        }
        if image.len() != height * width * channels {
            return Err(Error::argument(format!(
                "image plane has {} bytes, expected {}",
                image.len(),
                height * width * channels
            )));
        }
        if labels.len() != height * width {
            return Err(Error::argument(format!(
                "label plane has {} entries, expected {}",
                labels.len(),
                height * width
            )));
        }
        Ok(LabeledRaster {
            scene_id: scene_id.into(),
            height,
            width,
            channels,
            gsd,
            ignore_id,
            image,
            labels,
        })
    }

    /// Verbatim crop of the raster at `win`. Pixels and labels equal the
    /// source sub-arrays exactly; provenance is [`Provenance::Anchor`].
    pub fn read_window(&self, win: &Window) -> Result<Tile> {
        win.check_bounds(self.height, self.width)?;
        let mut image = Vec::with_capacity(win.h * win.w * self.channels);
        let mut labels = Vec::with_capacity(win.h * win.w);
        for r in 0..win.h {
            let src = win.row + r;
            let img_off = (src * self.width + win.col) * self.channels;
            image.extend_from_slice(&self.image[img_off..img_off + win.w * self.channels]);
            let lab_off = src * self.width + win.col;
            labels.extend_from_slice(&self.labels[lab_off..lab_off + win.w]);
        }
        Ok(Tile {
            window: *win,
            h: win.h,
            w: win.w,
            channels: self.channels,
            gsd: self.gsd,
            ignore_id: self.ignore_id,
            scale: 1,
            provenance: Provenance::Anchor,
            image,
            labels,
        })
    }

    /// Window covering the whole raster.
    pub fn full_window(&self) -> Window {
        Window::new(0, 0, self.height, self.width)
    }
}

/// Resamples a tile to `out_h` x `out_w`.
///
/// The image plane uses an exact box filter: each output pixel averages the
/// source area it covers, with fractional edge coverage weighted by overlap.
/// Labels are categorical and map by nearest neighbor with source index
/// `floor(out_idx * in_dim / out_dim)`. Provenance and scale are preserved.
pub fn resize_tile(tile: &Tile, out_h: usize, out_w: usize) -> Result<Tile> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::argument(format!(
            "resize target {out_h}x{out_w} has a zero dimension"
        )));
    }
    if out_h == tile.h && out_w == tile.w {
        return Ok(tile.clone());
    }

    let mut image = vec![0u8; out_h * out_w * tile.channels];
    if tile.channels > 0 {
        let row_spans = box_spans(tile.h, out_h);
        let col_spans = box_spans(tile.w, out_w);
        for (oy, row_span) in row_spans.iter().enumerate() {
            for (ox, col_span) in col_spans.iter().enumerate() {
                for ch in 0..tile.channels {
                    let mut acc = 0.0f64;
                    for &(sy, wy) in &row_span.parts {
                        let row_base = (sy * tile.w) * tile.channels + ch;
                        for &(sx, wx) in &col_span.parts {
                            acc += wy * wx * tile.image[row_base + sx * tile.channels] as f64;
                        }
                    }
                    let norm = row_span.total * col_span.total;
                    image[(oy * out_w + ox) * tile.channels + ch] =
                        (acc / norm).round().clamp(0.0, 255.0) as u8;
                }
            }
        }
    }

    let mut labels = vec![0u16; out_h * out_w];
    for oy in 0..out_h {
        let sy = oy * tile.h / out_h;
        for ox in 0..out_w {
            let sx = ox * tile.w / out_w;
            labels[oy * out_w + ox] = tile.labels[sy * tile.w + sx];
        }
    }

    Ok(Tile {
        window: tile.window,
        h: out_h,
        w: out_w,
        channels: tile.channels,
        gsd: tile.gsd * tile.h as f64 / out_h as f64,
        ignore_id: tile.ignore_id,
        scale: tile.scale,
        provenance: tile.provenance,
        image,
        labels,
    })
}

struct Span {
    /// (source index, overlap length) pairs covered by one output cell.
    parts: Vec<(usize, f64)>,
    total: f64,
}

/// Source coverage of each output cell for a 1-D box filter from `n_in`
/// to `n_out` samples. Output cell `i` covers `[i*s, (i+1)*s)` in source
/// coordinates with `s = n_in / n_out`.
fn box_spans(n_in: usize, n_out: usize) -> Vec<Span> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|i| {
            let lo = i as f64 * scale;
            let hi = (i + 1) as f64 * scale;
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(n_in);
            let mut parts = Vec::with_capacity(last - first);
            let mut total = 0.0;
            for s in first..last {
                let overlap = (hi.min((s + 1) as f64) - lo.max(s as f64)).max(0.0);
                if overlap > 0.0 {
                    parts.push((s, overlap));
                    total += overlap;
                }
            }
            Span { parts, total }
        })
        .collect()
}
