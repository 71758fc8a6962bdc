//! Group-based out-of-distribution detection.
//!
//! A linear head is trained over precomputed features with a group-wise
//! softmax in which every group carries an extra `others` slot. The minimum
//! `others` probability across groups (negated) is the OOD score. The crate
//! also ships the usual baseline scores, evaluation metrics, three class
//! grouping strategies and a synthetic Gaussian benchmark.

pub mod classifier;
pub mod data;
pub mod error;
pub mod grouping;
pub mod io;
pub mod metrics;
pub mod scoring;
pub mod synthbench;

pub use classifier::{HeadLayout, LinearHead, OptimizerState, TrainConfig, TrainingLog};
pub use data::{FeatureDataset, GroupPartition, GroupTargets, LabelSpace};
pub use error::{Error, Result};
pub use metrics::{EvalReport, RocCurve};
pub use scoring::{Method, ScoreVector};
