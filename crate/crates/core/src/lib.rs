//! Online malware detection from process resource-utilization telemetry.
//!
//! The pipeline: raw per-process metric tables are parsed and flattened into
//! per-timestamp system-state vectors ([`dataset`]), arranged into experiment
//! streams ([`stream`]), classified by either a frozen batch random forest or
//! an incrementally updated adaptive random forest ([`forest`], built on
//! [`hoeffding`] trees with [`drift`] detection), and scored in a
//! test-then-train loop ([`eval`]). A synthetic generator ([`synth`]) stands
//! in for the proprietary telemetry corpus so every experiment runs at desk
//! scale.
//!
//! All randomness flows from a single master seed through [`rng::derive_seed`],
//! so every run is exactly reproducible.

pub mod dataset;
pub mod drift;
pub mod eval;
pub mod forest;
pub mod hoeffding;
pub mod rng;
pub mod stats;
pub mod stream;
pub mod synth;

#[cfg(test)]
pub(crate) mod test_oracle;

pub use dataset::{DatasetSchema, Label, MetadataMap, ProcessRecord, SnapshotSample};
pub use drift::Adwin;
pub use eval::{compare_reports, compute_metrics, prequential_run, ConfusionCounts, MetricsReport};
pub use forest::{batch_fit, ForestConfig, ForestMode, ForestModel};
pub use hoeffding::{hoeffding_bound, HoeffdingTree, TreeConfig};
pub use stream::{mask_labels, random_split, temporal_split, StreamPlan};
pub use synth::{generate_stream, majority_oracle, SynthConfig};
