//! Shared stream builders for the benchmark suite.

use driftforest::dataset::SnapshotSample;
use driftforest::synth::{generate_stream, SynthConfig};

/// Stationary desk-scale stream (64-wide vectors).
pub fn stationary_stream(n_instances: usize, seed: u64) -> Vec<SnapshotSample> {
    generate_stream(&SynthConfig {
        n_instances,
        seed,
        ..SynthConfig::default()
    })
    .expect("stationary stream")
}

/// Stream with one mid-point concept shift.
pub fn drifting_stream(n_instances: usize, seed: u64) -> Vec<SnapshotSample> {
    generate_stream(&SynthConfig {
        n_instances,
        concept_shifts: vec![(n_instances / 2, 1)],
        seed,
        ..SynthConfig::default()
    })
    .expect("drifting stream")
}
