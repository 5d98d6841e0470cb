use ndarray::{Array2, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CameraIntrinsics, Event, EventStream, SensorSize};
use crate::error::{Error, Result};
use crate::motion::{FlowField, MiDField};
use crate::nurbs::{KnotVector, Trajectory};

/// Sub-steps per contrast threshold when tracing a projected path.
const STEPS_PER_THRESHOLD: f64 = 16.0;
const MIN_STEPS: usize = 64;

/// Rigid set of points translating with constant velocity in front of a
/// pinhole camera.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigidSceneConfig {
    /// Camera-frame `(X, Y, Z)` at time 0.
    pub points: Vec<[f64; 3]>,
    /// `(V_x, V_y, V_z)` in length units per second.
    pub velocity: [f64; 3],
    /// Seconds.
    pub duration: f64,
    pub intrinsics: CameraIntrinsics,
    /// Projected displacement in pixels that triggers one event.
    pub contrast_threshold: f64,
    pub sensor: SensorSize,
}

impl RigidSceneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(Error::InvalidScene(format!("duration {} must be positive", self.duration)));
        }
        if !(self.contrast_threshold > 0.0 && self.contrast_threshold.is_finite()) {
            return Err(Error::InvalidScene(format!(
                "contrast threshold {} must be positive",
                self.contrast_threshold
            )));
        }
        if self.sensor.height == 0 || self.sensor.width == 0 {
            return Err(Error::InvalidScene("sensor has zero size".into()));
        }
        if self.velocity.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidScene("velocity is not finite".into()));
        }
        self.intrinsics.validate()?;
        for (index, p) in self.points.iter().enumerate() {
            if p.iter().any(|c| !c.is_finite()) {
                return Err(Error::InvalidScene(format!("point {index} is not finite")));
            }
            // Depth is linear in time, so checking both ends covers the window.
            for time in [0.0, self.duration] {
                let depth = p[2] + self.velocity[2] * time;
                if depth <= 0.0 {
                    return Err(Error::PointBehindCamera { index, depth, time });
                }
            }
        }
        Ok(())
    }
}

/// Analytic ground truth of a rigid scene. Times `tau` are normalized to
/// the scene duration, `tau in [0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    config: RigidSceneConfig,
}

impl GroundTruth {
    pub fn new(config: RigidSceneConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn config(&self) -> &RigidSceneConfig {
        &self.config
    }

    pub fn point_count(&self) -> usize {
        self.config.points.len()
    }

    fn point_at(&self, i: usize, tau: f64) -> [f64; 3] {
        let p = self.config.points[i];
        let v = self.config.velocity;
        let s = tau * self.config.duration;
        [p[0] + v[0] * s, p[1] + v[1] * s, p[2] + v[2] * s]
    }

    pub fn depth(&self, i: usize, tau: f64) -> f64 {
        self.point_at(i, tau)[2]
    }

    /// Pixel position of point `i` at `tau`.
    pub fn projection(&self, i: usize, tau: f64) -> [f64; 2] {
        self.config.intrinsics.project(self.point_at(i, tau))
    }

    /// Displacement from time 0 to `tau`.
    pub fn flow(&self, i: usize, tau: f64) -> [f64; 2] {
        let a = self.projection(i, 0.0);
        let b = self.projection(i, tau);
        [b[0] - a[0], b[1] - a[1]]
    }

    /// `Z(tau) / Z(0)`.
    pub fn mid(&self, i: usize, tau: f64) -> f64 {
        self.depth(i, tau) / self.depth(i, 0.0)
    }

    /// Image velocity in pixels per unit of normalized time,
    /// `D (f V - (x - c) V_z) / Z`.
    pub fn image_velocity(&self, i: usize, tau: f64) -> [f64; 2] {
        let k = &self.config.intrinsics;
        let v = self.config.velocity;
        let z = self.depth(i, tau);
        let [x, y] = self.projection(i, tau);
        let d = self.config.duration;
        [
            d * (k.fx * v[0] - (x - k.cx) * v[2]) / z,
            d * (k.fy * v[1] - (y - k.cy) * v[2]) / z,
        ]
    }

    /// `K S_f / Z(0)` evaluated from the 3D displacement.
    pub fn normalized_scene_flow(&self, i: usize, tau: f64) -> [f64; 3] {
        let k = &self.config.intrinsics;
        let s = tau * self.config.duration;
        let v = self.config.velocity;
        let (dx, dy, dz) = (v[0] * s, v[1] * s, v[2] * s);
        let z0 = self.depth(i, 0.0);
        [
            (k.fx * dx + k.cx * dz) / z0,
            (k.fy * dy + k.cy * dz) / z0,
            dz / z0,
        ]
    }

    /// Shared initial depth of all points.
    pub fn common_depth(&self) -> Result<f64> {
        let mut depths = self.config.points.iter().map(|p| p[2]);
        let Some(first) = depths.next() else {
            return Err(Error::InvalidScene("scene has no points".into()));
        };
        if depths.any(|z| z != first) {
            return Err(Error::NonUniformDepth);
        }
        Ok(first)
    }

    /// Rounded initial pixel of every point, `None` outside the sensor or
    /// when an earlier point already claimed the pixel.
    pub fn point_pixels(&self) -> Vec<Option<(usize, usize)>> {
        let sensor = self.config.sensor;
        let mut taken = Array2::from_elem((sensor.height, sensor.width), false);
        (0..self.point_count())
            .map(|i| {
                let [x, y] = self.projection(i, 0.0);
                let (xr, yr) = (x.round() as i64, y.round() as i64);
                if !sensor.contains(xr, yr) {
                    return None;
                }
                let (yu, xu) = (yr as usize, xr as usize);
                if taken[[yu, xu]] {
                    return None;
                }
                taken[[yu, xu]] = true;
                Some((yu, xu))
            })
            .collect()
    }

    /// Weights `Z(xi_i) / Z(0)` at the Greville abscissae; with these a
    /// NURBS reproduces every projected path of a common-depth scene exactly.
    pub fn exact_weights(&self, knots: &KnotVector) -> Result<Vec<f64>> {
        let z0 = self.common_depth()?;
        let vz = self.config.velocity[2] * self.config.duration;
        Ok(knots.greville().iter().map(|xi| (z0 + vz * xi) / z0).collect())
    }

    /// Exact trajectory on the sensor grid: controls are the displacements
    /// at the Greville abscissae. Pixels without a point keep zero controls.
    pub fn exact_trajectory(&self, knots: &KnotVector) -> Result<Trajectory> {
        let weights = self.exact_weights(knots)?;
        let sensor = self.config.sensor;
        let greville = knots.greville();
        let mut control = Array4::zeros((greville.len(), sensor.height, sensor.width, 2));
        for (i, pixel) in self.point_pixels().into_iter().enumerate() {
            let Some((y, x)) = pixel else { continue };
            for (j, &xi) in greville.iter().enumerate().skip(1) {
                let d = self.flow(i, xi);
                control[[j, y, x, 0]] = d[0];
                control[[j, y, x, 1]] = d[1];
            }
        }
        Trajectory::new(control, weights, knots.clone())
    }

    /// Flow raster at `tau`, valid only at point pixels.
    pub fn flow_field(&self, tau: f64) -> FlowField {
        let sensor = self.config.sensor;
        let mut field = FlowField::zeros(sensor.height, sensor.width);
        field.valid.fill(false);
        for (i, pixel) in self.point_pixels().into_iter().enumerate() {
            if let Some((y, x)) = pixel {
                let d = self.flow(i, tau);
                field.u[[y, x]] = d[0];
                field.v[[y, x]] = d[1];
                field.valid[[y, x]] = true;
            }
        }
        field
    }

    /// Motion-in-depth raster at `tau`, valid only at point pixels.
    pub fn mid_field(&self, tau: f64) -> MiDField {
        let sensor = self.config.sensor;
        let mut field = MiDField::constant(sensor.height, sensor.width, 1.0);
        field.valid.fill(false);
        for (i, pixel) in self.point_pixels().into_iter().enumerate() {
            if let Some((y, x)) = pixel {
                field.m[[y, x]] = self.mid(i, tau);
                field.valid[[y, x]] = true;
            }
        }
        field
    }
}

/// Emits events along each point's projected path: whenever the travelled
/// image distance crosses the contrast threshold an event fires at the
/// rounded position, with polarity given by the sign of the dominant motion
/// component. The seed only sets each point's initial threshold phase.
pub fn synth_rigid_scene(cfg: &RigidSceneConfig, seed: u64) -> Result<(EventStream, GroundTruth)> {
    let gt = GroundTruth::new(cfg.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let thr = cfg.contrast_threshold;
    let mut events = Vec::new();

    for i in 0..gt.point_count() {
        let phase: f64 = rng.random_range(0.0..thr);
        let length = path_length_bound(&gt, i);
        if length == 0.0 {
            continue;
        }
        let steps = ((length / thr * STEPS_PER_THRESHOLD).ceil() as usize).max(MIN_STEPS);
        let mut acc = phase;
        let mut prev = gt.projection(i, 0.0);
        for k in 1..=steps {
            let tau_prev = (k - 1) as f64 / steps as f64;
            let tau = k as f64 / steps as f64;
            let cur = gt.projection(i, tau);
            let (dx, dy) = (cur[0] - prev[0], cur[1] - prev[1]);
            let step = dx.hypot(dy);
            if step > 0.0 {
                let polarity = if dx.abs() >= dy.abs() { dx.signum() } else { dy.signum() } as i8;
                let mut used = 0.0;
                while acc + (step - used) >= thr {
                    used += thr - acc;
                    acc = 0.0;
                    let f = used / step;
                    let x = (prev[0] + f * dx).round();
                    let y = (prev[1] + f * dy).round();
                    let secs = (tau_prev + f * (tau - tau_prev)) * cfg.duration;
                    if cfg.sensor.contains(x as i64, y as i64) {
                        events.push(Event::new((secs * 1e6).round() as u64, x as u16, y as u16, polarity));
                    }
                }
                acc += step - used;
            }
            prev = cur;
        }
    }

    let end = (cfg.duration * 1e6).round() as u64;
    let stream = EventStream::from_unsorted(events, cfg.sensor, (0, end))?;
    Ok((stream, gt))
}

/// Straight-line distance between the endpoints; projected paths of
/// constant-velocity points are straight, so this is the path length.
fn path_length_bound(gt: &GroundTruth, i: usize) -> f64 {
    let d = gt.flow(i, 1.0);
    d[0].hypot(d[1])
}
