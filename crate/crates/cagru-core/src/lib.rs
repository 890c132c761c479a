//! Customer purchase-intention prediction: shape-based clustering of
//! purchase-pattern sequences, one attention-GRU forecaster per cluster,
//! and top-N evaluation, plus a deterministic synthetic data generator and
//! survey analytics.
//!
//! The crate is organized around the pipeline stages:
//!
//! - [`data`]: transaction ingestion, the binary activity matrix,
//!   chronological splits, supervised windows.
//! - [`synth`]: seeded archetype-based event-log generation.
//! - [`survey`]: activeness, Hamming distances, engagement k-means.
//! - [`encoder`]: the behavior-pattern dictionary and integer sequences.
//! - [`kshape`]: shape-based distance and k-shape clustering.
//! - [`neural`]: the attention-GRU forecaster and its trainer.
//! - [`metrics`]: top-N thresholding, AUC, and classification metrics.
//! - [`pipeline`]: end-to-end runs, ablations, sweeps, and persistence.

pub mod data;
pub mod encoder;
pub mod error;
pub mod kshape;
pub mod metrics;
pub mod neural;
pub mod pipeline;
pub mod survey;
pub mod synth;

pub use data::{ActivityMatrix, DatasetSplit, PurchaseEvent, SupervisedWindow};
pub use error::{Error, ErrorKind, Result};
pub use kshape::{ClusterModel, SbdResult, ZNormSeries};
pub use metrics::MetricsReport;
pub use neural::{ForecastModel, ModelConfig};
pub use pipeline::{PipelineReport, RunConfig, Variant};
pub use synth::GeneratorConfig;
