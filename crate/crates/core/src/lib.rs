//! Evaluation toolkit for re-query in referring expression comprehension.
//!
//! The crate decides when to ask a user again (multimodal re-query, scored by
//! confidence measures over candidate distributions) and how to use repeated
//! natural-language answers (rephrase re-query via smart or combined replacement),
//! and computes the coverage-curve metrics for both settings over real or
//! synthetic score files.

pub mod accuracy;
pub mod confidence;
pub mod dataset;
pub mod error;
pub mod geometry;
pub mod multimodal;
pub mod rephrase;
pub mod report;
pub mod stats;
pub mod synth;

pub use confidence::{Distribution, DistributionChoice, Measure, RequeryPriority};
pub use dataset::{load_benchmark, save_benchmark, Benchmark, ExpressionEvidence, Instance};
pub use error::{Error, Result};
pub use geometry::BBox;
pub use multimodal::CoverageCurve;
pub use rephrase::{Selection, SelectionPolicy};
