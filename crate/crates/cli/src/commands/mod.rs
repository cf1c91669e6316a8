pub mod batch;
pub mod eval;
pub mod msar_sample;
pub mod plan;
pub mod regions_build;
pub mod regions_sample;
pub mod report;
pub mod selfcheck;
pub mod stats;
pub mod synth;
