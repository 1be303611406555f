//! Domain types shared by every stage: the ground grid, heatmaps, offset
//! fields, detections, trajectories and camera calibration.
//!
//! Grid cells are addressed as `(x, y)` with `x` in `[0, w)` and `y` in
//! `[0, h)`, stored row-major by `y`. Continuous positions use the cell-center
//! convention: the integer coordinate `k` is the center of cell `k`.

mod camera;
mod grid;
pub mod io;
mod tracks;

pub use camera::{homography_from_calib, project_point, CameraModel};
pub use grid::{BilinearStencil, GroundGrid, Heatmap, OffsetField, Point};
pub use tracks::{Detection, TrackPoint, Trajectory};
