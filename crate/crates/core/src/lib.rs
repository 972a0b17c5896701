//! Batch toolkit for building a vision-language-action driving dataset from
//! raw synchronized logs (camera frame index, CAN, GNSS, IMU).
//!
//! The crate is organized as a pipeline of pure stages:
//!
//! 1. [`ingest`] parses per-recording JSONL streams and aligns them to the
//!    20 Hz camera clock.
//! 2. [`estimation`] fuses GNSS and IMU into per-frame ego poses with a
//!    loosely-coupled Kalman filter.
//! 3. [`trajectory`] expresses each frame's 3 s future as 60 ego-frame
//!    waypoints and projects them onto the camera image.
//! 4. [`trajfilter`] rejects scenes whose estimated trajectories jump or
//!    vibrate beyond physical plausibility.
//! 5. [`sampler`] draws a diverse subset of scenes via inverse-frequency
//!    weighting over (speed band, curvature band) cells.
//! 6. [`captioning`] produces rule-based captions from vehicle signals and
//!    optionally augments them with captions from a vision-language model
//!    behind an HTTP interface.
//! 7. [`dataset`] serializes per-frame records and dataset-level stats.
//! 8. [`eval`] scores predicted trajectories with ADE/FDE against a
//!    constant-velocity baseline and attributes errors to caption words.
//! 9. [`synth`] generates labeled synthetic recordings used for testing and
//!    for exercising the full pipeline end to end.

pub mod captioning;
pub mod dataset;
pub mod error;
pub mod estimation;
pub mod eval;
pub mod geodesy;
pub mod ingest;
pub mod sampler;
pub mod synth;
pub mod trajectory;
pub mod trajfilter;

pub use error::{Error, Result};

/// Camera frame rate all streams are aligned to.
pub const FRAME_HZ: f64 = 20.0;

/// Scene length in frames (30 s at 20 Hz).
pub const SCENE_FRAMES: usize = 600;

/// Future-trajectory horizon in frames (3 s at 20 Hz).
pub const TRAJECTORY_LEN: usize = 60;
