//! Ground-plane multi-target tracking with motion learned from detections.
//!
//! The crate is organized around the stages of the pipeline:
//!
//! 1. [`domain`] – grids, heatmaps, offset fields, detections, trajectories,
//!    camera homographies and their file formats.
//! 2. [`warp`] – the differentiable reconstruction-from-motion operator and its
//!    analytic gradients.
//! 3. [`loss`] – motion consistency, detection, forward/backward and spatial
//!    extent losses, plus the decay-parameter schedule.
//! 4. [`fit`] – gradient-based fitting of offset fields and a finite-difference
//!    gradient checker.
//! 5. [`sim`] – deterministic synthetic crowd scenes.
//! 6. [`detect`] – heatmap non-maximum suppression and 2-means confidence split.
//! 7. [`track`] – min-cost-flow tracking and online association baselines.
//! 8. [`eval`] – CLEAR MOT, identity and offset error metrics.
//! 9. [`experiment`] – configuration, end-to-end runs, sweeps and plots used by
//!    the command line tool.

// negated comparisons reject NaN on purpose
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::should_implement_trait)]

pub mod detect;
pub mod domain;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod fit;
pub mod loss;
pub mod sim;
pub mod track;
pub mod warp;

pub use error::{Error, Result};
