//! Loss evaluation, least-squares trajectory fitting and the iterative
//! control-point refinement loop.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use ndarray::{Array3, Array4};
use serde::{Deserialize, Serialize};

use crate::correlation::{query_neighborhood, CostPatch, CostQuery, CostVolumes, DEFAULT_RADIUS};
use crate::error::{Error, Result};
use crate::events::GroundTruth;
use crate::motion::{FlowField, MiDField};
use crate::nurbs::{AdaptationResult, KnotVector, Trajectory};

pub const DEFAULT_GAMMA: f64 = 0.8;
pub const DEFAULT_LAMBDA: f64 = 1e-7;
pub const DEFAULT_ITERS: usize = 6;
pub const DEFAULT_RIDGE: f64 = 1e-6;
/// Eigenvalue ratio below which a normal matrix counts as singular.
const SINGULAR_RATIO: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub gamma: f64,
    pub lambda: f64,
    pub iters: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            gamma: DEFAULT_GAMMA,
            lambda: DEFAULT_LAMBDA,
            iters: DEFAULT_ITERS,
        }
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::InvalidParameter(format!("gamma {gamma} outside (0, 1]")));
    }
    Ok(())
}

/// `sum_k gamma^(N-k) (mean |du| + mean |dv|)` over pixels valid in `gt`.
pub fn flow_loss(preds: &[FlowField], gt: &FlowField, gamma: f64) -> Result<f64> {
    check_gamma(gamma)?;
    if preds.is_empty() {
        return Err(Error::InvalidParameter("no predictions".into()));
    }
    let count = gt.valid.iter().filter(|&&v| v).count();
    if count == 0 {
        return Err(Error::EmptyValidMask);
    }
    let n = preds.len();
    let mut total = 0.0;
    for (k, pred) in preds.iter().enumerate() {
        if pred.dim() != gt.dim() {
            return Err(Error::ShapeMismatch(format!("prediction {k} {:?} vs {:?}", pred.dim(), gt.dim())));
        }
        let mut err = 0.0;
        for ((y, x), &ok) in gt.valid.indexed_iter() {
            if ok {
                err += (pred.u[[y, x]] - gt.u[[y, x]]).abs() + (pred.v[[y, x]] - gt.v[[y, x]]).abs();
            }
        }
        total += gamma.powi((n - 1 - k) as i32) * err / count as f64;
    }
    Ok(total)
}

/// Motion-in-depth counterpart of [`flow_loss`].
pub fn depth_loss(preds: &[MiDField], gt: &MiDField, gamma: f64) -> Result<f64> {
    check_gamma(gamma)?;
    if preds.is_empty() {
        return Err(Error::InvalidParameter("no predictions".into()));
    }
    let count = gt.valid.iter().filter(|&&v| v).count();
    if count == 0 {
        return Err(Error::EmptyValidMask);
    }
    let n = preds.len();
    let mut total = 0.0;
    for (k, pred) in preds.iter().enumerate() {
        if pred.dim() != gt.dim() {
            return Err(Error::ShapeMismatch(format!("prediction {k} {:?} vs {:?}", pred.dim(), gt.dim())));
        }
        let mut err = 0.0;
        for ((y, x), &ok) in gt.valid.indexed_iter() {
            if ok {
                err += (pred.m[[y, x]] - gt.m[[y, x]]).abs();
            }
        }
        total += gamma.powi((n - 1 - k) as i32) * err / count as f64;
    }
    Ok(total)
}

/// Mean over pixels of `sum_i |T'(t_{i+1}) - T'(t_i)|_1`.
pub fn temporal_regularizer(traj: &Trajectory, grid: &[f64]) -> Result<f64> {
    if grid.len() < 2 {
        return Err(Error::GridTooShort(grid.len()));
    }
    if grid.windows(2).any(|w| w[1] < w[0]) || grid.iter().any(|t| !(0.0..=1.0).contains(t)) {
        return Err(Error::InvalidParameter("time grid must be sorted inside [0, 1]".into()));
    }
    let (h, w) = traj.grid();
    if h * w == 0 {
        return Ok(0.0);
    }
    let velocities: Vec<Array3<f64>> = grid.iter().map(|&t| traj.velocity(t)).collect();
    let total: f64 = velocities
        .windows(2)
        .map(|pair| (&pair[1] - &pair[0]).mapv(f64::abs).sum())
        .sum();
    Ok(total / (h * w) as f64)
}

/// One observed displacement of a pixel's curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub x: usize,
    pub y: usize,
    pub tau: f64,
    /// `(dx, dy)` in pixels.
    pub disp: [f64; 2],
    #[serde(default = "unit_weight")]
    pub weight: f64,
}

fn unit_weight() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrespondenceSet {
    pub height: usize,
    pub width: usize,
    pub samples: Vec<Correspondence>,
}

impl CorrespondenceSet {
    pub fn new(height: usize, width: usize, samples: Vec<Correspondence>) -> Result<Self> {
        let set = Self { height, width, samples };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, s) in self.samples.iter().enumerate() {
            if s.x >= self.width || s.y >= self.height {
                return Err(Error::IndexOutOfRange {
                    index: i,
                    count: self.samples.len(),
                });
            }
            if !(s.tau > 0.0 && s.tau <= 1.0) {
                return Err(Error::InvalidParameter(format!("sample {i}: tau {} outside (0, 1]", s.tau)));
            }
            if !(s.disp[0].is_finite() && s.disp[1].is_finite()) {
                return Err(Error::InvalidParameter(format!("sample {i}: displacement not finite")));
            }
            if !(s.weight > 0.0 && s.weight.is_finite()) {
                return Err(Error::InvalidParameter(format!("sample {i}: weight must be positive")));
            }
        }
        Ok(())
    }

    /// Exact displacements of every point of a synthetic scene at `times`.
    pub fn from_ground_truth(gt: &GroundTruth, times: &[f64]) -> Result<Self> {
        let sensor = gt.config().sensor;
        let mut samples = Vec::new();
        for (i, pixel) in gt.point_pixels().into_iter().enumerate() {
            let Some((y, x)) = pixel else { continue };
            for &tau in times {
                samples.push(Correspondence {
                    x,
                    y,
                    tau,
                    disp: gt.flow(i, tau),
                    weight: 1.0,
                });
            }
        }
        Self::new(sensor.height, sensor.width, samples)
    }

    /// Samples drawn from a trajectory at the given times for every pixel.
    pub fn from_trajectory(traj: &Trajectory, times: &[f64]) -> Result<Self> {
        let (h, w) = traj.grid();
        let mut samples = Vec::with_capacity(h * w * times.len());
        let fields: Vec<Array3<f64>> = times.iter().map(|&t| traj.eval(t)).collect();
        for y in 0..h {
            for x in 0..w {
                for (field, &tau) in fields.iter().zip(times) {
                    samples.push(Correspondence {
                        x,
                        y,
                        tau,
                        disp: [field[[y, x, 0]], field[[y, x, 1]]],
                        weight: 1.0,
                    });
                }
            }
        }
        Self::new(h, w, samples)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LsqOptions {
    /// Weight of the velocity-difference smoothness term.
    pub smoothness: f64,
    /// Diagonal load added to singular per-pixel systems; 0 makes them errors.
    pub ridge: f64,
    /// Number of grid points for the smoothness term.
    pub smoothness_grid: usize,
}

impl Default for LsqOptions {
    fn default() -> Self {
        Self {
            smoothness: 0.0,
            ridge: DEFAULT_RIDGE,
            smoothness_grid: 16,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LsqDiagnostics {
    /// Mean endpoint residual over samples.
    pub mean_residual: f64,
    pub max_residual: f64,
    pub fitted_pixels: usize,
    /// Pixels whose system needed the ridge term.
    pub ridged_pixels: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LsqFit {
    pub trajectory: Trajectory,
    pub diagnostics: LsqDiagnostics,
}

/// Per-pixel least squares for `P_2..P_n` with `P_1 = 0`:
/// `min sum_s w_s |sum_i R_i(tau_s) P_i - d_s|^2 + smoothness * sum_j |T'(g_{j+1}) - T'(g_j)|^2`.
pub fn fit_trajectory_lsq(
    corr: &CorrespondenceSet,
    knots: &KnotVector,
    weights: &[f64],
    opts: &LsqOptions,
) -> Result<LsqFit> {
    corr.validate()?;
    if !(opts.smoothness >= 0.0 && opts.ridge >= 0.0) {
        return Err(Error::InvalidParameter("negative regularization".into()));
    }
    let n = knots.control_count();
    let free = n - 1;
    let (h, w) = (corr.height, corr.width);
    let basis = Trajectory::zeros(knots.clone(), weights.to_vec(), 1, 1)?;

    let mut smooth = DMatrix::<f64>::zeros(free, free);
    if opts.smoothness > 0.0 && opts.smoothness_grid >= 2 {
        let g = opts.smoothness_grid;
        let derivs: Vec<Vec<f64>> = (0..g)
            .map(|j| basis.rational_basis_derivative(j as f64 / (g - 1) as f64))
            .collect();
        for pair in derivs.windows(2) {
            let d = DVector::from_iterator(free, (1..n).map(|i| pair[1][i] - pair[0][i]));
            smooth += opts.smoothness * &d * d.transpose();
        }
    }

    let mut by_pixel: Vec<Vec<usize>> = vec![Vec::new(); h * w];
    for (s, sample) in corr.samples.iter().enumerate() {
        by_pixel[sample.y * w + sample.x].push(s);
    }

    let rows: Vec<Vec<f64>> = corr.samples.iter().map(|s| basis.rational_basis(s.tau)).collect();
    let mut control = Array4::zeros((n, h, w, 2));
    let mut fitted = 0;
    let mut ridged = 0;
    for (pixel, members) in by_pixel.iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        let (y, x) = (pixel / w, pixel % w);
        let mut a = smooth.clone();
        let mut b = DMatrix::<f64>::zeros(free, 2);
        for &s in members {
            let sample = &corr.samples[s];
            let r = DVector::from_iterator(free, rows[s][1..].iter().copied());
            a += sample.weight * &r * r.transpose();
            for c in 0..2 {
                b.column_mut(c).axpy(sample.weight * sample.disp[c], &r, 1.0);
            }
        }
        if is_singular(&a) {
            if opts.ridge == 0.0 {
                return Err(Error::SingularSystem { x, y });
            }
            for i in 0..free {
                a[(i, i)] += opts.ridge;
            }
            ridged += 1;
        }
        let solution = a
            .cholesky()
            .ok_or(Error::SingularSystem { x, y })?
            .solve(&b);
        for i in 0..free {
            control[[i + 1, y, x, 0]] = solution[(i, 0)];
            control[[i + 1, y, x, 1]] = solution[(i, 1)];
        }
        fitted += 1;
    }

    let trajectory = Trajectory::new(control, weights.to_vec(), knots.clone())?;
    let mut sum = 0.0;
    let mut max: f64 = 0.0;
    for (s, sample) in corr.samples.iter().enumerate() {
        let mut p = [0.0; 2];
        for (i, &r) in rows[s].iter().enumerate() {
            p[0] += r * trajectory.control()[[i, sample.y, sample.x, 0]];
            p[1] += r * trajectory.control()[[i, sample.y, sample.x, 1]];
        }
        let e = (p[0] - sample.disp[0]).hypot(p[1] - sample.disp[1]);
        sum += e;
        max = max.max(e);
    }
    let mean_residual = if corr.samples.is_empty() { 0.0 } else { sum / corr.samples.len() as f64 };
    Ok(LsqFit {
        trajectory,
        diagnostics: LsqDiagnostics {
            mean_residual,
            max_residual: max,
            fitted_pixels: fitted,
            ridged_pixels: ridged,
        },
    })
}

fn is_singular(a: &DMatrix<f64>) -> bool {
    let eig = SymmetricEigen::new(a.clone()).eigenvalues;
    let max = eig.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let min = eig.iter().fold(f64::INFINITY, |m, &v| m.min(v));
    max == 0.0 || min <= SINGULAR_RATIO * max
}

/// Everything an updater sees in one iteration: cost patches sampled along
/// the current trajectory and the times they were taken at.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedFeatures {
    /// Temporal patches, one query per entry of `temporal_times`.
    pub temporal: CostPatch,
    pub temporal_times: Vec<f64>,
    /// Spatial patch, a single query at `tau = 1`.
    pub spatial: CostPatch,
    /// Sensor pixels per grid cell.
    pub scale: usize,
}

/// Produces a control-point increment from the fused features and the
/// current trajectory. Implementations must be deterministic.
pub trait Updater {
    fn increment(&self, features: &FusedFeatures, traj: &Trajectory) -> Result<Array4<f64>>;
}

/// Leaves the trajectory unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroUpdater;

impl Updater for ZeroUpdater {
    fn increment(&self, _features: &FusedFeatures, traj: &Trajectory) -> Result<Array4<f64>> {
        Ok(Array4::zeros(traj.control().raw_dim()))
    }
}

/// Gradient step on the least-squares data term using the argmax of every
/// query patch as a pseudo-correspondence: `dP_i = clip(step * sum_q R_i(tau_q) delta_q)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientStepUpdater {
    pub step: f64,
    pub clip: f64,
}

impl Default for GradientStepUpdater {
    fn default() -> Self {
        Self { step: 0.5, clip: 2.0 }
    }
}

/// Offset `(dx, dy)` in level-0 grid units of the strongest response in a
/// query's neighborhood. Ties prefer the smallest offset, then patch order.
/// Level 0 is used unless it is flat or non-positive; then level 1 is tried
/// with its offsets doubled. `None` when no level has a usable peak.
pub fn patch_peak(patch: &CostPatch, y: usize, x: usize, query: usize) -> Option<[f64; 2]> {
    let r = patch.radius as isize;
    for level in 0..patch.levels.min(2) {
        let window = patch.window(y, x, query, level);
        let mut best: Option<(f64, isize, [isize; 2])> = None;
        let mut min = f64::INFINITY;
        for ((dy, dx), &v) in window.indexed_iter() {
            let off = [dx as isize - r, dy as isize - r];
            let dist = off[0] * off[0] + off[1] * off[1];
            min = min.min(v);
            let better = match best {
                None => true,
                Some((bv, bd, _)) => v > bv || (v == bv && dist < bd),
            };
            if better {
                best = Some((v, dist, off));
            }
        }
        let (peak, _, off) = best?;
        if peak > 0.0 && peak > min {
            let s = (1usize << level) as f64;
            return Some([off[0] as f64 * s, off[1] as f64 * s]);
        }
    }
    None
}

impl Updater for GradientStepUpdater {
    fn increment(&self, features: &FusedFeatures, traj: &Trajectory) -> Result<Array4<f64>> {
        let n = traj.control_count();
        let (h, w) = traj.grid();
        let scale = features.scale as f64;
        let mut queries: Vec<(&CostPatch, usize, Vec<f64>)> = features
            .temporal_times
            .iter()
            .enumerate()
            .map(|(q, &t)| (&features.temporal, q, traj.rational_basis(t)))
            .collect();
        queries.push((&features.spatial, 0, traj.rational_basis(1.0)));

        let mut delta = Array4::<f64>::zeros((n, h, w, 2));
        for y in 0..h {
            for x in 0..w {
                for (patch, q, basis) in &queries {
                    let Some(off) = patch_peak(patch, y, x, *q) else { continue };
                    for i in 1..n {
                        for c in 0..2 {
                            delta[[i, y, x, c]] += basis[i] * off[c] * scale;
                        }
                    }
                }
            }
        }
        let clip = self.clip;
        delta.mapv_inplace(|d| (self.step * d).clamp(-clip, clip));
        Ok(delta)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Refinement {
    pub trajectory: Trajectory,
    /// Flow at `tau = 1` after each iteration.
    pub history: Vec<FlowField>,
}

/// Temporal lookup times and their stored block indices: anchor `i` at
/// `t = i / N_a` pairs with block `i + 1`, stored at index `i - 1`. The last
/// block has no successor, so an anchor at `t = 1` is skipped.
fn temporal_queries(adapt: &AdaptationResult, volumes: &CostVolumes) -> Vec<(f64, usize)> {
    let stored = volumes.temporal.block_count();
    adapt
        .anchor_indices
        .iter()
        .zip(&adapt.anchor_times)
        .filter(|(&i, _)| i >= 1 && i - 1 < stored)
        .map(|(&i, &t)| (t, i - 1))
        .collect()
}

fn positions(traj: &Trajectory, t: f64, scale: f64) -> Array3<f64> {
    let disp = traj.eval(t);
    let (h, w) = traj.grid();
    Array3::from_shape_fn((h, w, 2), |(y, x, c)| {
        let base = if c == 0 { x } else { y } as f64;
        base + disp[[y, x, c]] / scale
    })
}

/// Gathers the fused features for the current trajectory.
pub fn fused_features(
    traj: &Trajectory,
    volumes: &CostVolumes,
    adapt: &AdaptationResult,
    radius: usize,
) -> Result<FusedFeatures> {
    let scale = volumes.scale as f64;
    let temporal = temporal_queries(adapt, volumes);
    let queries: Vec<CostQuery> = temporal
        .iter()
        .map(|&(t, block)| CostQuery {
            block,
            positions: positions(traj, t, scale),
        })
        .collect();
    let temporal_patch = query_neighborhood(&volumes.temporal, &queries, radius)?;
    let spatial_patch = query_neighborhood(
        &volumes.spatial,
        &[CostQuery {
            block: 0,
            positions: positions(traj, 1.0, scale),
        }],
        radius,
    )?;
    Ok(FusedFeatures {
        temporal: temporal_patch,
        temporal_times: temporal.iter().map(|&(t, _)| t).collect(),
        spatial: spatial_patch,
        scale: volumes.scale,
    })
}

/// Runs `cfg.iters` rounds of query, update and record.
pub fn refine_trajectory(
    traj0: &Trajectory,
    volumes: &CostVolumes,
    adapt: &AdaptationResult,
    updater: &dyn Updater,
    cfg: &LossConfig,
) -> Result<Refinement> {
    refine_trajectory_with(traj0, volumes, adapt, updater, cfg, DEFAULT_RADIUS)
}

/// [`refine_trajectory`] with an explicit lookup radius.
pub fn refine_trajectory_with(
    traj0: &Trajectory,
    volumes: &CostVolumes,
    adapt: &AdaptationResult,
    updater: &dyn Updater,
    cfg: &LossConfig,
    radius: usize,
) -> Result<Refinement> {
    if traj0.grid() != volumes.grid() {
        return Err(Error::ShapeMismatch(format!(
            "trajectory grid {:?} vs cost grid {:?}",
            traj0.grid(),
            volumes.grid()
        )));
    }
    let mut traj = traj0.clone();
    let mut history = Vec::with_capacity(cfg.iters);
    for _ in 0..cfg.iters {
        let features = fused_features(&traj, volumes, adapt, radius)?;
        let delta = updater.increment(&features, &traj)?;
        if delta.shape() != traj.control().shape() {
            return Err(Error::InvalidIncrement(format!(
                "shape {:?} vs {:?}",
                delta.shape(),
                traj.control().shape()
            )));
        }
        if delta.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidIncrement("non-finite increment".into()));
        }
        if delta.index_axis(ndarray::Axis(0), 0).iter().any(|&v| v != 0.0) {
            return Err(Error::InvalidIncrement("increment moves the pinned control point".into()));
        }
        traj = traj.with_increment(&delta)?;
        history.push(FlowField::from_displacement(&traj.eval(1.0)));
    }
    Ok(Refinement {
        trajectory: traj,
        history,
    })
}
