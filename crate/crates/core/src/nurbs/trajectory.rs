use ndarray::{Array3, Array4, Axis};

use super::KnotVector;
use crate::error::{Error, Result};

/// Per-pixel rational B-spline displacement curves sharing one knot vector
/// and one weight vector.
///
/// `control` has shape `(n, height, width, 2)` holding `(dx, dy)` in pixels.
/// The first control point is pinned to zero so that the displacement at
/// `t = 0` vanishes.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    control: Array4<f64>,
    weights: Vec<f64>,
    knots: KnotVector,
}

impl Trajectory {
    pub fn new(control: Array4<f64>, weights: Vec<f64>, knots: KnotVector) -> Result<Self> {
        let n = knots.control_count();
        let shape = control.shape();
        if shape[0] != n || shape[3] != 2 {
            return Err(Error::InvalidTrajectory(format!(
                "control grid shape {shape:?} does not match {n} control points"
            )));
        }
        if weights.len() != n {
            return Err(Error::InvalidTrajectory(format!(
                "{} weights for {n} control points",
                weights.len()
            )));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::InvalidTrajectory(
                "weights must be positive and finite".into(),
            ));
        }
        if control.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidTrajectory("non-finite control point".into()));
        }
        if control.index_axis(Axis(0), 0).iter().any(|&v| v != 0.0) {
            return Err(Error::InvalidTrajectory(
                "first control point must be zero".into(),
            ));
        }
        Ok(Self {
            control,
            weights,
            knots,
        })
    }

    /// Zero trajectory on a `height x width` control grid.
    pub fn zeros(knots: KnotVector, weights: Vec<f64>, height: usize, width: usize) -> Result<Self> {
        let n = knots.control_count();
        Self::new(Array4::zeros((n, height, width, 2)), weights, knots)
    }

    pub fn control(&self) -> &Array4<f64> {
        &self.control
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn knots(&self) -> &KnotVector {
        &self.knots
    }

    pub fn degree(&self) -> usize {
        self.knots.degree()
    }

    pub fn control_count(&self) -> usize {
        self.knots.control_count()
    }

    /// `(height, width)` of the control grid.
    pub fn grid(&self) -> (usize, usize) {
        (self.control.shape()[1], self.control.shape()[2])
    }

    /// Sets control point `i` (0-based) at one pixel. `i = 0` is pinned.
    pub fn set_control(&mut self, i: usize, y: usize, x: usize, value: [f64; 2]) -> Result<()> {
        if i == 0 {
            return Err(Error::InvalidTrajectory(
                "first control point is pinned to zero".into(),
            ));
        }
        if !(value[0].is_finite() && value[1].is_finite()) {
            return Err(Error::InvalidTrajectory("non-finite control point".into()));
        }
        self.control[[i, y, x, 0]] = value[0];
        self.control[[i, y, x, 1]] = value[1];
        Ok(())
    }

    /// Returns a copy with `delta` added to every control point.
    pub fn with_increment(&self, delta: &Array4<f64>) -> Result<Self> {
        if delta.shape() != self.control.shape() {
            return Err(Error::ShapeMismatch(format!(
                "increment {:?} vs control {:?}",
                delta.shape(),
                self.control.shape()
            )));
        }
        Self::new(&self.control + delta, self.weights.clone(), self.knots.clone())
    }

    /// Rational basis `R_i(t) = N_i w_i / sum_j N_j w_j`.
    pub fn rational_basis(&self, t: f64) -> Vec<f64> {
        let basis = self.knots.basis_all(t);
        let denom: f64 = basis.iter().zip(&self.weights).map(|(n, w)| n * w).sum();
        basis
            .iter()
            .zip(&self.weights)
            .map(|(n, w)| n * w / denom)
            .collect()
    }

    /// `R'_i(t)`, so that the curve velocity is `sum_i R'_i(t) P_i`.
    pub fn rational_basis_derivative(&self, t: f64) -> Vec<f64> {
        let basis = self.knots.basis_all(t);
        let deriv = self.knots.basis_derivative_all(t);
        let denom: f64 = basis.iter().zip(&self.weights).map(|(n, w)| n * w).sum();
        let denom_d: f64 = deriv.iter().zip(&self.weights).map(|(n, w)| n * w).sum();
        (0..basis.len())
            .map(|i| {
                let nw = basis[i] * self.weights[i];
                let dw = deriv[i] * self.weights[i];
                (dw - nw * denom_d / denom) / denom
            })
            .collect()
    }

    fn combine(&self, coeffs: &[f64]) -> Array3<f64> {
        let (h, w) = self.grid();
        let mut out = Array3::zeros((h, w, 2));
        for (i, &c) in coeffs.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            out.scaled_add(c, &self.control.index_axis(Axis(0), i));
        }
        out
    }

    /// Displacement field `(height, width, 2)` at normalized time `t`.
    pub fn eval(&self, t: f64) -> Array3<f64> {
        self.combine(&self.rational_basis(t))
    }

    /// Time derivative of the displacement field at `t`.
    pub fn velocity(&self, t: f64) -> Array3<f64> {
        self.combine(&self.rational_basis_derivative(t))
    }

    /// Displacement of a single pixel's curve.
    pub fn eval_at(&self, t: f64, y: usize, x: usize) -> [f64; 2] {
        self.pixel_combine(&self.rational_basis(t), y, x)
    }

    pub fn velocity_at(&self, t: f64, y: usize, x: usize) -> [f64; 2] {
        self.pixel_combine(&self.rational_basis_derivative(t), y, x)
    }

    fn pixel_combine(&self, coeffs: &[f64], y: usize, x: usize) -> [f64; 2] {
        let mut out = [0.0; 2];
        for (i, &c) in coeffs.iter().enumerate() {
            out[0] += c * self.control[[i, y, x, 0]];
            out[1] += c * self.control[[i, y, x, 1]];
        }
        out
    }
}

/// Displacement field of `traj` at `t`.
pub fn eval_trajectory(traj: &Trajectory, t: f64) -> Array3<f64> {
    traj.eval(t)
}

/// Velocity field of `traj` at `t`.
pub fn eval_velocity(traj: &Trajectory, t: f64) -> Array3<f64> {
    traj.velocity(t)
}
