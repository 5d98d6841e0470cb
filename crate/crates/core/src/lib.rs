//! Event-based 3D motion estimation with per-pixel NURBS trajectories.
//!
//! The crate covers event projections (voxel and kymograph), spatial and
//! temporal cost volumes, density-adaptive rational B-spline trajectories,
//! motion-in-depth and scene flow recovery, loss evaluation and a
//! network-free trajectory refinement loop.

pub mod correlation;
pub mod error;
pub mod events;
pub mod fitting;
pub mod io;
pub mod motion;
pub mod nurbs;
pub mod projection;

pub use error::{Error, Result};
