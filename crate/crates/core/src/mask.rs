//! Binary region masks and their plumbing.
//!
//! Masks arrive from external segmenters as per-scene archives (one full
//! binary plane per region) and are reduced here to bounding boxes and
//! per-class statistics. The archive format is, per region, a 16-byte
//! header (`magic "MSK1" | H u32 LE | W u32 LE | pad`) followed by the
//! row-major bit-packed plane (bit `r*W + c`, most significant bit first).
//!
//! For pipelines without an external segmenter, [`connected_components`]
//! derives single-class region masks from a label plane, and
//! [`prompt_grid`] emits the uniform point grid such a segmenter would be
//! prompted with.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::raster::Window;

const MASK_MAGIC: &[u8; 4] = b"MSK1";
const MASK_HEADER_LEN: usize = 16;

/// A binary plane, bit-packed row-major (MSB first).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub h: usize,
    pub w: usize,
    bits: Vec<u8>,
}

impl Mask {
    pub fn new(h: usize, w: usize) -> Self {
        Mask {
            h,
            w,
            bits: vec![0; (h * w).div_ceil(8)],
        }
    }

    pub fn from_bools(h: usize, w: usize, values: &[bool]) -> Result<Self> {
        if values.len() != h * w {
            return Err(Error::argument(format!(
                "mask plane has {} values, expected {}",
                values.len(),
                h * w
            )));
        }
        let mut mask = Mask::new(h, w);
        for (i, &v) in values.iter().enumerate() {
            if v {
                mask.set_index(i);
            }
        }
        Ok(mask)
    }

    #[inline]
    fn set_index(&mut self, i: usize) {
        self.bits[i / 8] |= 0x80 >> (i % 8);
    }

    #[inline]
    fn get_index(&self, i: usize) -> bool {
        self.bits[i / 8] & (0x80 >> (i % 8)) != 0
    }

    pub fn set(&mut self, row: usize, col: usize) {
        self.set_index(row * self.w + col);
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.get_index(row * self.w + col)
    }

    /// Number of foreground pixels.
    pub fn count(&self) -> usize {
        self.bits.iter().map(|b| b.count_ones() as usize).sum()
    }

    /// Row-major foreground coordinates.
    pub fn foreground(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.h * self.w)
            .filter(move |&i| self.get_index(i))
            .map(move |i| (i / self.w, i % self.w))
    }
}

/// Tight bounding box of the mask foreground: minimum and maximum row and
/// column, inclusive. An empty mask is an error.
pub fn mask_to_bbox(mask: &Mask) -> Result<Window> {
    let mut min_r = usize::MAX;
    let mut max_r = 0;
    let mut min_c = usize::MAX;
    let mut max_c = 0;
    let mut any = false;
    for (r, c) in mask.foreground() {
        any = true;
        min_r = min_r.min(r);
        max_r = max_r.max(r);
        min_c = min_c.min(c);
        max_c = max_c.max(c);
    }
    if !any {
        return Err(Error::EmptyRegion("mask has no foreground pixels".into()));
    }
    Ok(Window::new(
        min_r,
        min_c,
        max_r - min_r + 1,
        max_c - min_c + 1,
    ))
}

/// Appends masks to an archive file.
pub struct MaskArchiveWriter {
    out: BufWriter<File>,
}

impl MaskArchiveWriter {
    pub fn create(path: &Path) -> Result<Self> {
        Ok(MaskArchiveWriter {
            out: BufWriter::new(File::create(path)?),
        })
    }

    pub fn append(&mut self, mask: &Mask) -> Result<()> {
        let mut header = [0u8; MASK_HEADER_LEN];
        header[0..4].copy_from_slice(MASK_MAGIC);
        header[4..8].copy_from_slice(&(mask.h as u32).to_le_bytes());
        header[8..12].copy_from_slice(&(mask.w as u32).to_le_bytes());
        self.out.write_all(&header)?;
        self.out.write_all(&mask.bits)?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

/// Reads every mask in an archive.
pub fn read_mask_archive(path: &Path) -> Result<Vec<Mask>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut masks = Vec::new();
    let mut record = 0usize;
    loop {
        let mut header = [0u8; MASK_HEADER_LEN];
        match r.read_exact(&mut header) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        }
        record += 1;
        if &header[0..4] != MASK_MAGIC {
            return Err(Error::Parse {
                line: record,
                msg: format!("bad mask magic {:02x?}", &header[0..4]),
            });
        }
        let h = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
        let w = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
        if h == 0 || w == 0 {
            return Err(Error::Parse {
                line: record,
                msg: format!("degenerate mask extent {h}x{w}"),
            });
        }
        let mut bits = vec![0u8; (h * w).div_ceil(8)];
        r.read_exact(&mut bits).map_err(|_| Error::Parse {
            line: record,
            msg: "truncated mask plane".to_string(),
        })?;
        masks.push(Mask { h, w, bits });
    }
    Ok(masks)
}

/// Extracts 4-connected same-class components of a label plane as masks,
/// in row-major discovery order. Ignore pixels form no components;
/// components below `min_pixels` are dropped. This stands in for an
/// external segmenter when building region indexes from labeled scenes.
pub fn connected_components(
    labels: &[u16],
    h: usize,
    w: usize,
    ignore_id: u16,
    min_pixels: usize,
) -> Result<Vec<Mask>> {
    if labels.len() != h * w {
        return Err(Error::argument(format!(
            "label plane has {} entries, expected {}",
            labels.len(),
            h * w
        )));
    }
    let mut seen = vec![false; h * w];
    let mut masks = Vec::new();
    let mut queue = Vec::new();
    for start in 0..h * w {
        if seen[start] || labels[start] == ignore_id {
            continue;
        }
        let class = labels[start];
        let mut mask = Mask::new(h, w);
        let mut count = 0usize;
        queue.clear();
        queue.push(start);
        seen[start] = true;
        while let Some(i) = queue.pop() {
            mask.set_index(i);
            count += 1;
            let (r, c) = (i / w, i % w);
            let mut visit = |n: usize| {
                if !seen[n] && labels[n] == class {
                    seen[n] = true;
                    queue.push(n);
                }
            };
            if r > 0 {
                visit(i - w);
            }
            if r + 1 < h {
                visit(i + w);
            }
            if c > 0 {
                visit(i - 1);
            }
            if c + 1 < w {
                visit(i + 1);
            }
        }
        if count >= min_pixels {
            masks.push(mask);
        }
    }
    Ok(masks)
}

/// Uniform `rows` x `cols` grid of prompt points (cell centers) over an
/// `h` x `w` plane, row-major. These are the coordinates an external
/// promptable segmenter would be queried with.
pub fn prompt_grid(h: usize, w: usize, rows: usize, cols: usize) -> Result<Vec<(usize, usize)>> {
    if rows == 0 || cols == 0 || rows > h || cols > w {
        return Err(Error::argument(format!(
            "prompt grid {rows}x{cols} invalid for plane {h}x{w}"
        )));
    }
    let mut points = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            points.push(((2 * i + 1) * h / (2 * rows), (2 * j + 1) * w / (2 * cols)));
        }
    }
    Ok(points)
}
