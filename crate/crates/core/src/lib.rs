//! Robust feature space for binary malware features.
//!
//! The pipeline learns a correlation graph over input features, partitions it
//! into an optimum-path forest rooted at the most correlated features, and maps
//! every sample onto one thresholded activation per cluster. Linear detectors
//! trained in either space can then be probed with addition-only evasion
//! attacks and compared with the metrics in [`evaluation`].

pub mod attacks;
pub mod classifier;
pub mod config;
pub mod corpus;
pub mod depgraph;
mod error;
pub mod evaluation;
pub mod rng;
pub mod transform;

pub use error::{Error, ErrorKind, Result};

pub use attacks::{AttackKind, AttackResult, ScoreOracle};
pub use classifier::{Hyperparams, LinearModel, Pipeline, Variant};
pub use config::ExperimentConfig;
pub use corpus::{
    Dataset, DatasetFormat, GroundTruth, Label, SyntheticSpec, TransformationLibrary,
};
pub use depgraph::{CorrelationMatrix, FeatureForest};
pub use transform::RobustTransform;
