//! Cross-camera label estimation for unlabeled video tracklets.
//!
//! Tracklets from two cameras form two graphs. A bipartite matching with a
//! dummy node proposes identity correspondences, the matches are turned into
//! soft labels, and a Mahalanobis metric is learned from them. The metric then
//! reshapes the matching costs and the loop repeats; see [`driver::dgm_run`].

pub mod cost;
pub mod driver;
pub mod error;
pub mod eval;
pub mod io;
pub mod matcher;
pub mod metric;
pub mod model;
pub mod preprocess;
pub mod reweight;
pub mod synth;

pub use error::{DgmError, Result};
pub use model::{
    validate_bundle, Assignment, CameraGraph, CostMatrix, DgmConfig, DummyCostMode, FrameFeature,
    Metric, SoftLabelMatrix, Target, Tracklet,
};
