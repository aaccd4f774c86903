//! Hierarchical labelling toolkit for point-cloud semantic segmentation.
//!
//! The crate covers label hierarchies and their consistency metrics, the
//! path decoder that turns per-level class distributions into consistent
//! labels, multi-level training losses with gradients, large-cloud
//! samplers, file formats, and a synthetic data generator.

pub mod cli;
pub mod cloud;
pub mod ensemble;
pub mod error;
pub mod hierarchy;
pub mod io;
pub mod loss;
pub mod metrics;
pub mod report;
pub mod sampling;
pub mod synth;

pub use cloud::{CloudLabels, PointCloud};
pub use ensemble::{hierarchical_ensemble, hierarchical_ensemble_weighted, mc_decision, LevelDistributions};
pub use error::{Error, Result};
pub use hierarchy::{ClassRef, HierLabel, LabelHierarchy};
pub use loss::{total_loss, total_loss_grad, LevelScores, LossValue, LossWeights};
pub use metrics::{consistency_proportion, consistency_rate, wcov, Cp, InstanceSet, LevelConfusion};
pub use report::MetricReport;
pub use sampling::{rbs, rc_knn, voxel_downsample, SampleMethod, SampleSpec};
pub use synth::{SynthSpec, Geometry};
