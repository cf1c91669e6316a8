//! Sampling and evaluation engine for ultra-high-resolution labeled rasters
//! with long-tail class distributions.
//!
//! The crate covers everything around the segmentation network itself:
//!
//! - [`raster`]: windowed access to scenes without whole-image loads and
//!   categorical-aware resizing.
//! - [`io`]: the `.lrs` scene container, scene manifests, and tile archives.
//! - [`synth`]: deterministic synthetic long-tail scene generation for tests
//!   and benchmarks.
//! - [`stats`]: class histograms and softmax cross-entropy diagnostics used
//!   to score batch balance.
//! - [`msar`]: multi-scale anchored region sampling (anchor crop plus one
//!   containing crop per scale).
//! - [`mask`]: binary region masks, bounding boxes, connected components,
//!   and prompt grids.
//! - [`regions`]: region records ranked tail-first, GSD-preserving / resize
//!   samplers, weighted resampling, and mixed batch composition.
//! - [`fusion`]: text-feature fusion kernels (align, cosine similarity,
//!   concat, 1x1 classify) with analytic gradients.
//! - [`eval`]: confusion matrices, per-class IoU / mIoU, sliding-window
//!   planning, and overlap stitching.

pub mod error;
pub mod eval;
pub mod fusion;
pub mod io;
pub mod mask;
pub mod msar;
pub mod raster;
pub mod regions;
pub mod seed;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
pub use raster::{LabeledRaster, Provenance, Tile, Window};
pub use stats::ClassHistogram;
