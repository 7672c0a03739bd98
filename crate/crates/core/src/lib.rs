//! Training-free CNN recommendation.
//!
//! * [`ingest`] decodes IDX, CIFAR binary and image-directory datasets.
//! * [`descriptor`] turns each image into a 64-d whole-image descriptor.
//! * [`complexity`] scores how well a nearest-centroid classifier separates
//!   the training data (`c_all`; higher means easier).
//! * [`archgen`] generates rule-based CNN specs and counts their cost.
//! * [`ability`] scores a spec's capacity and calibrates the score.
//! * [`matcher`] maps complexity to required ability, picks a model, and
//!   fits the accuracy-vs-time curve.

pub mod ability;
pub mod archgen;
pub mod cli;
pub mod complexity;
pub mod descriptor;
pub mod ingest;
pub mod matcher;

pub use ability::{ability_score, AbilityParams};
pub use archgen::{expand_layers, make_spec, CnnSpec};
pub use complexity::{dataset_complexity, ComplexityReport};
pub use descriptor::{extract_global_descriptor, FeatureVector};
pub use ingest::{GrayImage, LabeledDataset};
pub use matcher::{fit_matching, recommend, MatchingFunction, PerformanceCurve};
