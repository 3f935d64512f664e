//! Multi-person tracking by detector fusion and a deformable spatial model.
//!
//! Detections from several region detectors (full body, head, ...) are
//! grouped per frame, and person boxes are inferred by minimizing an energy
//! over detection fit, spatial consistency between regions, mutual
//! exclusion, person count, trajectory smoothness and appearance.

pub mod appearance;
pub mod assignment;
pub mod config;
pub mod energy;
pub mod error;
pub mod geometry;
pub mod grouping;
pub mod io;
pub mod kmeans;
pub mod metrics;
pub mod optimizer;
pub mod par;
pub mod pipeline;
pub mod simulator;
pub mod spatial;
pub mod tracker;

pub use config::RunConfig;
pub use error::{Error, Result};
pub use geometry::{BoundingBox, DepthStats, Detection};
pub use metrics::{evaluate, EvalConfig, MotReport};
pub use par::Execution;
pub use spatial::SpatialModel;
pub use tracker::{FrameOutput, Tracker, TrackerConfig};
