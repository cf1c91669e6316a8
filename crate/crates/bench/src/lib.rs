//! Shared fixtures for the criterion benches.

use longtile::raster::LabeledRaster;
use longtile::synth::synth_longtail;

/// A long-tail scene matching the shape the samplers see in practice.
pub fn bench_scene(side: usize) -> LabeledRaster {
    synth_longtail(42, side, side, &[0.7, 0.2, 0.07, 0.03]).expect("bench scene")
}
