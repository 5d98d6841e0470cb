//! Clamped NURBS trajectories: basis functions, rational evaluation, analytic
//! derivatives and density-driven knot/weight adaptation.

mod adapt;
mod basis;
mod trajectory;

pub use adapt::{adapt_from_profile, density_adapt, AdaptationResult, KNOT_EPSILON};
pub use basis::KnotVector;
pub use trajectory::{eval_trajectory, eval_velocity, Trajectory};

/// Default degree of the trajectory curves.
pub const DEFAULT_DEGREE: usize = 3;
/// Default number of control points per pixel.
pub const DEFAULT_CONTROL_POINTS: usize = 5;
