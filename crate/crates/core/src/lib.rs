//! Tracking-by-detection toolkit for crowded video scenes.
//!
//! The crate covers the post-network half of a pose-tracking pipeline:
//! detections, appearance embeddings, keypoints and optical-flow fields come
//! in as data files, and the modules here turn them into identity tracks and
//! temporally smoothed poses, then score the results.
//!
//! - [`types`] / [`io`]: shared domain types and the on-disk formats
//!   (MOT text, Middlebury `.flo`, JSON-lines pose records, binary sidecars).
//! - [`flow`]: dense flow sampling, point propagation, and a block-matching
//!   estimator for self-contained testing.
//! - [`detpost`]: IoU, NMS, Set-NMS, multi-model fusion, and flow-based
//!   detection smoothing.
//! - [`assignment`]: minimum-cost bipartite assignment with forbidden pairs.
//! - [`kalman`] / [`tracker`]: constant-velocity Kalman filtering and the
//!   appearance-gallery matching cascade with track lifecycle management.
//! - [`posetrack`]: heatmap fusion/decoding, flow-based pose propagation and
//!   three-term temporal smoothing, identity transfer onto poses.
//! - [`eval`]: detection AP, log-average miss rate, CLEAR-MOT, and OKS-based
//!   pose AP.
//! - [`harness`]: deterministic synthetic scenarios with exact ground truth
//!   for end-to-end property testing.

pub mod assignment;
pub mod detpost;
pub mod error;
pub mod eval;
pub mod flow;
pub mod harness;
pub mod io;
pub mod kalman;
pub mod posetrack;
pub mod tracker;
pub mod types;

pub use error::{Error, Result};
