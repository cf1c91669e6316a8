//! On-disk formats: `.lrs` scenes, scene manifests, and tile archives.
//!
//! The `.lrs` container is a fixed 32-byte header followed by the raw
//! image plane (row-major, channel-interleaved u8) and the raw label plane
//! (row-major u16 little-endian):
//!
//! ```text
//! magic "LRS1" (4B) | H u32 LE | W u32 LE | channels u8 | pad (3B)
//! | gsd f64 LE | ignore_id u16 LE | pad (6B)
//! ```
//!
//! The layout makes windowed reads pure seek arithmetic, so scenes never
//! need to be materialized in memory. A manifest is a UTF-8 file of
//! tab-separated lines `scene_id, path, H, W, gsd`. A tile archive is a
//! concatenation of tiles, each preceded by the same 32-byte header plus a
//! single provenance byte.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::raster::{LabeledRaster, Provenance, Tile, Window};

const MAGIC: &[u8; 4] = b"LRS1";
pub const HEADER_LEN: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneHeader {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub gsd: f64,
    pub ignore_id: u16,
}

impl SceneHeader {
    fn encode(&self) -> [u8; HEADER_LEN] {
        let mut buf = [0u8; HEADER_LEN];
        buf[0..4].copy_from_slice(MAGIC);
        buf[4..8].copy_from_slice(&(self.height as u32).to_le_bytes());
        buf[8..12].copy_from_slice(&(self.width as u32).to_le_bytes());
        buf[12] = self.channels as u8;
        buf[16..24].copy_from_slice(&self.gsd.to_le_bytes());
        buf[24..26].copy_from_slice(&self.ignore_id.to_le_bytes());
        buf
    }

    fn decode(buf: &[u8; HEADER_LEN], record: usize) -> Result<Self> {
        if &buf[0..4] != MAGIC {
            return Err(Error::Parse {
                line: record,
                msg: format!("bad magic {:02x?}, expected \"LRS1\"", &buf[0..4]),
            });
        }
        let height = u32::from_le_bytes(buf[4..8].try_into().unwrap()) as usize;
        let width = u32::from_le_bytes(buf[8..12].try_into().unwrap()) as usize;
        let channels = buf[12] as usize;
        let gsd = f64::from_le_bytes(buf[16..24].try_into().unwrap());
        let ignore_id = u16::from_le_bytes(buf[24..26].try_into().unwrap());
        if height == 0 || width == 0 {
            return Err(Error::Parse {
                line: record,
                msg: format!("degenerate extent {height}x{width}"),
            });
        }
        if gsd.is_nan() || gsd <= 0.0 || !gsd.is_finite() {
            return Err(Error::Parse {
                line: record,
                msg: format!("gsd must be positive and finite, got {gsd}"),
            });
        }
        Ok(SceneHeader {
            height,
            width,
            channels,
            gsd,
            ignore_id,
        })
    }

    fn image_bytes(&self) -> u64 {
        (self.height * self.width * self.channels) as u64
    }
}

/// Writes an in-memory raster as a `.lrs` scene file.
pub fn write_scene(raster: &LabeledRaster, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let header = SceneHeader {
        height: raster.height,
        width: raster.width,
        channels: raster.channels,
        gsd: raster.gsd,
        ignore_id: raster.ignore_id,
    };
    w.write_all(&header.encode())?;
    w.write_all(&raster.image)?;
    let mut buf = Vec::with_capacity(raster.width * 2);
    for row in raster.labels.chunks(raster.width) {
        buf.clear();
        for &l in row {
            buf.extend_from_slice(&l.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

/// Streaming reader over a `.lrs` scene file.
///
/// Windows and row bands are fetched with seeks; nothing close to the full
/// image is ever resident.
#[derive(Debug)]
pub struct SceneReader {
    file: File,
    header: SceneHeader,
    scene_id: String,
}

impl SceneReader {
    pub fn open(path: &Path) -> Result<Self> {
        let scene_id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "scene".to_string());
        Self::open_with_id(path, scene_id)
    }

    pub fn open_with_id(path: &Path, scene_id: impl Into<String>) -> Result<Self> {
        let mut file = File::open(path)?;
        let mut buf = [0u8; HEADER_LEN];
        file.read_exact(&mut buf)?;
        let header = SceneHeader::decode(&buf, 0)?;
        Ok(SceneReader {
            file,
            header,
            scene_id: scene_id.into(),
        })
    }

    pub fn header(&self) -> &SceneHeader {
        &self.header
    }

    pub fn scene_id(&self) -> &str {
        &self.scene_id
    }

    pub fn height(&self) -> usize {
        self.header.height
    }

    pub fn width(&self) -> usize {
        self.header.width
    }

    fn label_offset(&self, row: usize, col: usize) -> u64 {
        HEADER_LEN as u64 + self.header.image_bytes() + 2 * (row * self.header.width + col) as u64
    }

    fn image_offset(&self, row: usize, col: usize) -> u64 {
        HEADER_LEN as u64 + ((row * self.header.width + col) * self.header.channels) as u64
    }

    /// Reads a window without touching pixels outside it.
    pub fn read_window(&mut self, win: &Window) -> Result<Tile> {
        let h = &self.header;
        win.check_bounds(h.height, h.width)?;
        let mut image = vec![0u8; win.h * win.w * h.channels];
        let row_bytes = win.w * h.channels;
        for r in 0..win.h {
            self.file
                .seek(SeekFrom::Start(self.image_offset(win.row + r, win.col)))?;
            self.file
                .read_exact(&mut image[r * row_bytes..(r + 1) * row_bytes])?;
        }
        let mut labels = vec![0u16; win.h * win.w];
        let mut lab_buf = vec![0u8; win.w * 2];
        for r in 0..win.h {
            self.file
                .seek(SeekFrom::Start(self.label_offset(win.row + r, win.col)))?;
            self.file.read_exact(&mut lab_buf)?;
            for (dst, src) in labels[r * win.w..(r + 1) * win.w]
                .iter_mut()
                .zip(lab_buf.chunks_exact(2))
            {
                *dst = u16::from_le_bytes([src[0], src[1]]);
            }
        }
        Ok(Tile {
            window: *win,
            h: win.h,
            w: win.w,
            channels: h.channels,
            gsd: h.gsd,
            ignore_id: h.ignore_id,
            scale: 1,
            provenance: Provenance::Anchor,
            image,
            labels,
        })
    }

    /// Reads `rows` full label rows starting at `row0` into `out`
    /// (`rows * width` entries). The buffer can be reused across bands and
    /// conversion happens row by row, so peak memory stays at one band plus
    /// a single row of raw bytes.
    pub fn read_label_band(&mut self, row0: usize, rows: usize, out: &mut Vec<u16>) -> Result<()> {
        let h = self.header;
        if row0 + rows > h.height {
            return Err(Error::Bounds {
                edge: "bottom",
                end: row0 + rows,
                limit: h.height,
            });
        }
        out.clear();
        out.resize(rows * h.width, 0);
        self.file
            .seek(SeekFrom::Start(self.label_offset(row0, 0)))?;
        let mut raw = vec![0u8; h.width * 2];
        for r in 0..rows {
            self.file.read_exact(&mut raw)?;
            for (dst, src) in out[r * h.width..(r + 1) * h.width]
                .iter_mut()
                .zip(raw.chunks_exact(2))
            {
                *dst = u16::from_le_bytes([src[0], src[1]]);
            }
        }
        Ok(())
    }

    /// Loads the whole scene. Intended for small scenes and tests.
    pub fn read_all(&mut self) -> Result<LabeledRaster> {
        let h = self.header;
        let tile = self.read_window(&Window::new(0, 0, h.height, h.width))?;
        LabeledRaster::new(
            self.scene_id.clone(),
            h.height,
            h.width,
            h.channels,
            h.gsd,
            h.ignore_id,
            tile.image,
            tile.labels,
        )
    }
}

/// One manifest line: where a scene lives and its basic geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneMeta {
    pub scene_id: String,
    pub path: PathBuf,
    pub height: usize,
    pub width: usize,
    pub gsd: f64,
}

/// Reads a tab-separated manifest (`scene_id, path, H, W, gsd` per line).
/// Relative scene paths are resolved against the manifest's directory.
pub fn read_manifest(path: &Path) -> Result<Vec<SceneMeta>> {
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    let text = std::fs::read_to_string(path)?;
    let mut scenes = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 5 {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected 5 tab-separated fields, got {}", fields.len()),
            });
        }
        let parse_usize = |s: &str, what: &str| -> Result<usize> {
            s.parse().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("bad {what} {s:?}"),
            })
        };
        let gsd: f64 = fields[4].parse().map_err(|_| Error::Parse {
            line: lineno,
            msg: format!("bad gsd {:?}", fields[4]),
        })?;
        let rel = PathBuf::from(fields[1]);
        let resolved = if rel.is_absolute() {
            rel
        } else {
            base.join(rel)
        };
        scenes.push(SceneMeta {
            scene_id: fields[0].to_string(),
            path: resolved,
            height: parse_usize(fields[2], "height")?,
            width: parse_usize(fields[3], "width")?,
            gsd,
        });
    }
    Ok(scenes)
}

/// Writes a manifest; scene paths are written as given.
pub fn write_manifest(scenes: &[SceneMeta], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for s in scenes {
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}",
            s.scene_id,
            s.path.display(),
            s.height,
            s.width,
            s.gsd
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Appends tiles to an archive: per tile a 32-byte scene header (tile
/// extent, channels, effective gsd, ignore id) plus one provenance byte,
/// then the raw image and label planes.
pub struct TileArchiveWriter {
    out: BufWriter<File>,
    count: usize,
}

impl TileArchiveWriter {
    pub fn create(path: &Path) -> Result<Self> {
        Ok(TileArchiveWriter {
            out: BufWriter::new(File::create(path)?),
            count: 0,
        })
    }

    pub fn append(&mut self, tile: &Tile) -> Result<()> {
        let header = SceneHeader {
            height: tile.h,
            width: tile.w,
            channels: tile.channels,
            gsd: tile.gsd,
            ignore_id: tile.ignore_id,
        };
        self.out.write_all(&header.encode())?;
        self.out.write_all(&[tile.provenance.encode(tile.scale)?])?;
        self.out.write_all(&tile.image)?;
        let mut buf = Vec::with_capacity(tile.labels.len() * 2);
        for &l in &tile.labels {
            buf.extend_from_slice(&l.to_le_bytes());
        }
        self.out.write_all(&buf)?;
        self.count += 1;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

/// Reads all tiles from an archive. Source windows are not stored in the
/// archive (they live in the provenance log), so `window` is zeroed except
/// for the tile extent.
pub fn read_tile_archive(path: &Path) -> Result<Vec<Tile>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut tiles = Vec::new();
    let mut record = 0usize;
    loop {
        let mut head = [0u8; HEADER_LEN];
        match r.read_exact(&mut head) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        }
        record += 1;
        let header = SceneHeader::decode(&head, record)?;
        let mut prov = [0u8; 1];
        r.read_exact(&mut prov).map_err(|_| Error::Parse {
            line: record,
            msg: "truncated provenance byte".to_string(),
        })?;
        let (provenance, scale) = Provenance::decode(prov[0])?;
        let mut image = vec![0u8; header.height * header.width * header.channels];
        r.read_exact(&mut image).map_err(|_| Error::Parse {
            line: record,
            msg: "truncated image plane".to_string(),
        })?;
        let mut raw = vec![0u8; header.height * header.width * 2];
        r.read_exact(&mut raw).map_err(|_| Error::Parse {
            line: record,
            msg: "truncated label plane".to_string(),
        })?;
        let labels = raw
            .chunks_exact(2)
            .map(|b| u16::from_le_bytes([b[0], b[1]]))
            .collect();
        tiles.push(Tile {
            window: Window::new(0, 0, header.height, header.width),
            h: header.height,
            w: header.width,
            channels: header.channels,
            gsd: header.gsd,
            ignore_id: header.ignore_id,
            scale,
            provenance,
            image,
            labels,
        });
    }
    Ok(tiles)
}

/// A collection of scenes addressed by id, each either in memory or backed
/// by a `.lrs` file opened on demand.
///
/// File-backed entries keep at most one open reader; batch composition can
/// therefore pull tiles from any scene named in a region index without
/// loading whole rasters.
pub struct SceneSet {
    entries: BTreeMap<String, SceneEntry>,
}

enum SceneEntry {
    Mem(LabeledRaster),
    File {
        meta: SceneMeta,
        reader: Option<SceneReader>,
    },
}

/// Geometry and metadata of one scene in a [`SceneSet`].
#[derive(Debug, Clone, Copy)]
pub struct SceneInfo {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub gsd: f64,
    pub ignore_id: u16,
}

impl SceneSet {
    pub fn new() -> Self {
        SceneSet {
            entries: BTreeMap::new(),
        }
    }

    pub fn from_manifest(path: &Path) -> Result<Self> {
        let mut set = SceneSet::new();
        for meta in read_manifest(path)? {
            set.entries.insert(
                meta.scene_id.clone(),
                SceneEntry::File { meta, reader: None },
            );
        }
        Ok(set)
    }

    pub fn insert_mem(&mut self, raster: LabeledRaster) {
        self.entries
            .insert(raster.scene_id.clone(), SceneEntry::Mem(raster));
    }

    pub fn insert_file(&mut self, meta: SceneMeta) {
        self.entries.insert(
            meta.scene_id.clone(),
            SceneEntry::File { meta, reader: None },
        );
    }

    pub fn scene_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn entry_mut(&mut self, scene_id: &str) -> Result<&mut SceneEntry> {
        self.entries
            .get_mut(scene_id)
            .ok_or_else(|| Error::data(format!("unknown scene id {scene_id:?}")))
    }

    fn ensure_open(entry: &mut SceneEntry) -> Result<()> {
        if let SceneEntry::File { meta, reader } = entry {
            if reader.is_none() {
                *reader = Some(SceneReader::open_with_id(
                    &meta.path,
                    meta.scene_id.clone(),
                )?);
            }
        }
        Ok(())
    }

    pub fn info(&mut self, scene_id: &str) -> Result<SceneInfo> {
        let entry = self.entry_mut(scene_id)?;
        Self::ensure_open(entry)?;
        Ok(match entry {
            SceneEntry::Mem(r) => SceneInfo {
                height: r.height,
                width: r.width,
                channels: r.channels,
                gsd: r.gsd,
                ignore_id: r.ignore_id,
            },
            SceneEntry::File { reader, .. } => {
                let h = reader.as_ref().unwrap().header();
                SceneInfo {
                    height: h.height,
                    width: h.width,
                    channels: h.channels,
                    gsd: h.gsd,
                    ignore_id: h.ignore_id,
                }
            }
        })
    }

    pub fn read_window(&mut self, scene_id: &str, win: &Window) -> Result<Tile> {
        let entry = self.entry_mut(scene_id)?;
        Self::ensure_open(entry)?;
        match entry {
            SceneEntry::Mem(r) => r.read_window(win),
            SceneEntry::File { reader, .. } => reader.as_mut().unwrap().read_window(win),
        }
    }
}

impl Default for SceneSet {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::DEFAULT_IGNORE_ID;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn sample_raster(seed: u64) -> LabeledRaster {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let (h, w, c) = (20, 17, 3);
        LabeledRaster::new(
            format!("s{seed}"),
            h,
            w,
            c,
            0.25,
            DEFAULT_IGNORE_ID,
            (0..h * w * c).map(|_| rng.gen()).collect(),
            (0..h * w).map(|_| rng.gen_range(0..9u16)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn scene_file_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s7.lrs");
        let raster = sample_raster(7);
        write_scene(&raster, &path).unwrap();
        let mut reader = SceneReader::open(&path).unwrap();
        let back = reader.read_all().unwrap();
        assert_eq!(back, raster);
    }

    #[test]
    fn streamed_windows_match_memory_reads() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s8.lrs");
        let raster = sample_raster(8);
        write_scene(&raster, &path).unwrap();
        let mut reader = SceneReader::open(&path).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(99);
        for _ in 0..50 {
            let h = rng.gen_range(1..=raster.height);
            let w = rng.gen_range(1..=raster.width);
            let win = Window::new(
                rng.gen_range(0..=raster.height - h),
                rng.gen_range(0..=raster.width - w),
                h,
                w,
            );
            assert_eq!(
                reader.read_window(&win).unwrap(),
                raster.read_window(&win).unwrap()
            );
        }
    }

    #[test]
    fn label_band_reads_rows_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s9.lrs");
        let raster = sample_raster(9);
        write_scene(&raster, &path).unwrap();
        let mut reader = SceneReader::open(&path).unwrap();
        let mut band = Vec::new();
        reader.read_label_band(3, 4, &mut band).unwrap();
        assert_eq!(band, raster.labels[3 * raster.width..7 * raster.width]);
    }

    #[test]
    fn corrupt_magic_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.lrs");
        std::fs::write(&path, b"NOPE------------------------------------").unwrap();
        assert!(matches!(SceneReader::open(&path), Err(Error::Parse { .. })));
    }

    #[test]
    fn empty_manifest_is_an_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.tsv");
        std::fs::write(&path, "").unwrap();
        assert!(read_manifest(&path).unwrap().is_empty());
        assert!(SceneSet::from_manifest(&path).unwrap().is_empty());
    }

    #[test]
    fn manifest_round_trips_three_scenes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.tsv");
        let scenes: Vec<SceneMeta> = (0..3)
            .map(|i| SceneMeta {
                scene_id: format!("scene{i}"),
                path: PathBuf::from(format!("scene{i}.lrs")),
                height: 100 + i,
                width: 200 + i,
                gsd: 0.5 * (i + 1) as f64,
            })
            .collect();
        write_manifest(&scenes, &path).unwrap();
        let back = read_manifest(&path).unwrap();
        assert_eq!(back.len(), 3);
        for (a, b) in back.iter().zip(&scenes) {
            assert_eq!(a.scene_id, b.scene_id);
            assert_eq!(a.height, b.height);
            assert_eq!(a.width, b.width);
            assert_eq!(a.gsd, b.gsd);
            // Relative paths resolve against the manifest directory.
            assert_eq!(a.path, dir.path().join(&b.path));
        }
    }

    #[test]
    fn malformed_manifest_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.tsv");
        std::fs::write(&path, "ok\ta.lrs\t8\t8\t1.0\nbroken line\n").unwrap();
        match read_manifest(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn tile_archive_round_trips_payloads() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tiles.bin");
        let raster = sample_raster(11);
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let mut writer = TileArchiveWriter::create(&path).unwrap();
        let mut originals = Vec::new();
        for i in 0..100 {
            let h = rng.gen_range(1..=8);
            let w = rng.gen_range(1..=8);
            let win = Window::new(
                rng.gen_range(0..=raster.height - h),
                rng.gen_range(0..=raster.width - w),
                h,
                w,
            );
            let mut tile = raster.read_window(&win).unwrap();
            tile.provenance = match i % 4 {
                0 => Provenance::Anchor,
                1 => Provenance::Msar,
                2 => Provenance::SrrtaGsd,
                _ => Provenance::SrrtaResize,
            };
            tile.scale = if tile.provenance == Provenance::Msar {
                3
            } else {
                1
            };
            writer.append(&tile).unwrap();
            originals.push(tile);
        }
        writer.finish().unwrap();

        let back = read_tile_archive(&path).unwrap();
        assert_eq!(back.len(), originals.len());
        for (a, b) in back.iter().zip(&originals) {
            assert_eq!(a.image, b.image, "image payload must be bit-identical");
            assert_eq!(a.labels, b.labels, "label payload must be bit-identical");
            assert_eq!(a.provenance, b.provenance);
            assert_eq!(a.scale, b.scale);
            assert_eq!((a.h, a.w), (b.h, b.w));
        }
    }

    #[test]
    fn scene_set_serves_windows_from_files_and_memory() {
        let dir = tempfile::tempdir().unwrap();
        let raster = sample_raster(13);
        let path = dir.path().join("s13.lrs");
        write_scene(&raster, &path).unwrap();

        let mut set = SceneSet::new();
        set.insert_file(SceneMeta {
            scene_id: "s13".into(),
            path,
            height: raster.height,
            width: raster.width,
            gsd: raster.gsd,
        });
        set.insert_mem(sample_raster(14));

        let win = Window::new(2, 3, 5, 4);
        assert_eq!(
            set.read_window("s13", &win).unwrap().labels,
            raster.read_window(&win).unwrap().labels
        );
        assert!(set.read_window("missing", &win).is_err());
        let info = set.info("s14").unwrap();
        assert_eq!(info.height, 20);
    }
}
