//! Optical flow, motion-in-depth and normalized scene flow derived from
//! trajectories, depth-warp labels, and evaluation metrics.

use ndarray::{Array2, Array3, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::CameraIntrinsics;
use crate::nurbs::Trajectory;

/// Below this magnitude the motion-in-depth denominator of an axis is
/// considered degenerate.
pub const MID_EPSILON: f64 = 1e-6;
/// Relative depth range inside a 3x3 window that marks a discontinuity.
pub const DEPTH_EDGE_RATIO: f64 = 0.1;
/// Outlier rule: endpoint error above 3 px and above 5% of the GT magnitude.
pub const OUTLIER_PIXELS: f64 = 3.0;
pub const OUTLIER_RATIO: f64 = 0.05;
/// Scale applied to the mean absolute log depth-ratio error.
pub const LOG_MID_SCALE: f64 = 1e4;

#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub u: Array2<f64>,
    pub v: Array2<f64>,
    pub valid: Array2<bool>,
}

impl FlowField {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            u: Array2::zeros((height, width)),
            v: Array2::zeros((height, width)),
            valid: Array2::from_elem((height, width), true),
        }
    }

    /// All-valid flow from a `(H, W, 2)` displacement field.
    pub fn from_displacement(field: &Array3<f64>) -> Self {
        let (h, w, _) = field.dim();
        Self {
            u: field.index_axis(ndarray::Axis(2), 0).to_owned(),
            v: field.index_axis(ndarray::Axis(2), 1).to_owned(),
            valid: Array2::from_elem((h, w), true),
        }
    }

    pub fn dim(&self) -> (usize, usize) {
        self.u.dim()
    }

    /// Flow with every component multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            u: &self.u * factor,
            v: &self.v * factor,
            valid: self.valid.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiDField {
    /// Depth ratio `Z(t) / Z(0)`.
    pub m: Array2<f64>,
    pub valid: Array2<bool>,
}

impl MiDField {
    pub fn constant(height: usize, width: usize, value: f64) -> Self {
        Self {
            m: Array2::from_elem((height, width), value),
            valid: Array2::from_elem((height, width), true),
        }
    }

    pub fn dim(&self) -> (usize, usize) {
        self.m.dim()
    }
}

/// `(H, W, 3)` depth-normalized scene flow `K S_f / Z`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedSceneFlow {
    pub s: Array3<f64>,
    pub valid: Array2<bool>,
}

/// Bilinear resampling of a grid onto a finer raster; pixel centers are
/// aligned and samples past the border clamp to the edge.
pub fn upsample_bilinear(grid: &Array2<f64>, height: usize, width: usize) -> Array2<f64> {
    let (gh, gw) = grid.dim();
    if (gh, gw) == (height, width) {
        return grid.clone();
    }
    let sy = gh as f64 / height as f64;
    let sx = gw as f64 / width as f64;
    Array2::from_shape_fn((height, width), |(y, x)| {
        let gy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (gh - 1) as f64);
        let gx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (gw - 1) as f64);
        let (y0, x0) = (gy.floor() as usize, gx.floor() as usize);
        let (y1, x1) = ((y0 + 1).min(gh - 1), (x0 + 1).min(gw - 1));
        let (fy, fx) = (gy - y0 as f64, gx - x0 as f64);
        (1.0 - fy) * ((1.0 - fx) * grid[[y0, x0]] + fx * grid[[y0, x1]])
            + fy * ((1.0 - fx) * grid[[y1, x0]] + fx * grid[[y1, x1]])
    })
}

/// Nearest-cell resampling for masks.
pub fn upsample_nearest<T: Clone>(grid: &Array2<T>, height: usize, width: usize) -> Array2<T> {
    let (gh, gw) = grid.dim();
    Array2::from_shape_fn((height, width), |(y, x)| {
        let gy = (y * gh / height).min(gh - 1);
        let gx = (x * gw / width).min(gw - 1);
        grid[[gy, gx]].clone()
    })
}

/// Flow at `tau`, upsampled to `out` when the control grid is coarser.
pub fn optical_flow(traj: &Trajectory, tau: f64, out: Option<(usize, usize)>) -> Result<FlowField> {
    check_time(tau, true)?;
    let field = traj.eval(tau);
    let flow = FlowField::from_displacement(&field);
    match out {
        Some((h, w)) if (h, w) != flow.dim() => Ok(FlowField {
            u: upsample_bilinear(&flow.u, h, w),
            v: upsample_bilinear(&flow.v, h, w),
            valid: Array2::from_elem((h, w), true),
        }),
        _ => Ok(flow),
    }
}

fn check_time(t: f64, allow_zero: bool) -> Result<()> {
    let ok = if allow_zero { (0.0..=1.0).contains(&t) } else { t > 0.0 && t <= 1.0 };
    if !ok {
        return Err(Error::InvalidTimestamps(format!("time {t} outside the trajectory domain")));
    }
    Ok(())
}

/// `M = (v0 t1 + x1) / (v1 t1 + x1)` for one pixel, with displacement `x1`,
/// initial velocity `v0` and velocity `v1` at `t1`. Uses the x component,
/// falling back to y when the x denominator is degenerate; `None` when both
/// are degenerate or the ratio is not a positive depth ratio.
pub fn mid_from_motion(disp: [f64; 2], v0: [f64; 2], v1: [f64; 2], t1: f64) -> Option<f64> {
    for axis in 0..2 {
        let den = v1[axis] * t1 + disp[axis];
        if den.abs() >= MID_EPSILON {
            let m = (v0[axis] * t1 + disp[axis]) / den;
            return (m.is_finite() && m > 0.0).then_some(m);
        }
    }
    None
}

/// Single-view motion-in-depth at `t1` from the trajectory's displacement
/// and its velocities at 0 and `t1`. Degenerate pixels read 1 and are invalid.
pub fn motion_in_depth_single(traj: &Trajectory, t1: f64) -> Result<MiDField> {
    check_time(t1, false)?;
    let disp = traj.eval(t1);
    let vel0 = traj.velocity(0.0);
    let vel1 = traj.velocity(t1);
    let (h, w) = traj.grid();
    let mut field = MiDField::constant(h, w, 1.0);
    for y in 0..h {
        for x in 0..w {
            let d = [disp[[y, x, 0]], disp[[y, x, 1]]];
            let v0 = [vel0[[y, x, 0]], vel0[[y, x, 1]]];
            let v1 = [vel1[[y, x, 0]], vel1[[y, x, 1]]];
            match mid_from_motion(d, v0, v1, t1) {
                Some(m) => field.m[[y, x]] = m,
                None => field.valid[[y, x]] = false,
            }
        }
    }
    Ok(field)
}

/// Moves a depth ratio observed at `from` to time `to` under constant
/// depth velocity: `M_to = (to / from)(M_from - 1) + 1`.
pub fn transport_mid(m: f64, from: f64, to: f64) -> f64 {
    if from == to {
        return m;
    }
    (to / from) * (m - 1.0) + 1.0
}

/// Multi-view estimate at the last timestamp: each view's single-view
/// estimate is transported to `t_k` and the valid ones averaged.
pub fn motion_in_depth_multiview(traj: &Trajectory, timestamps: &[f64]) -> Result<MiDField> {
    let Some(&t_k) = timestamps.last() else {
        return Err(Error::EmptyTimestamps);
    };
    for &t in timestamps {
        check_time(t, false)?;
    }
    if timestamps.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidTimestamps("timestamps must increase strictly".into()));
    }
    let views = timestamps
        .iter()
        .map(|&t| motion_in_depth_single(traj, t))
        .collect::<Result<Vec<_>>>()?;
    let (h, w) = traj.grid();
    let mut out = MiDField::constant(h, w, 1.0);
    for y in 0..h {
        for x in 0..w {
            let mut sum = 0.0;
            let mut count = 0usize;
            for (view, &t) in views.iter().zip(timestamps) {
                if view.valid[[y, x]] {
                    sum += transport_mid(view.m[[y, x]], t, t_k);
                    count += 1;
                }
            }
            if count == 0 {
                out.valid[[y, x]] = false;
            } else {
                let m = sum / count as f64;
                if m > 0.0 {
                    out.m[[y, x]] = m;
                } else {
                    out.valid[[y, x]] = false;
                }
            }
        }
    }
    Ok(out)
}

/// `(M - 1) u + M (O_x, O_y, 0)` for homogeneous pixel `u = (x, y, 1)`.
pub fn normalized_scene_flow_at(pixel: [f64; 2], flow: [f64; 2], m: f64) -> [f64; 3] {
    [
        (m - 1.0) * pixel[0] + m * flow[0],
        (m - 1.0) * pixel[1] + m * flow[1],
        m - 1.0,
    ]
}

pub fn normalized_scene_flow(flow: &FlowField, mid: &MiDField) -> Result<NormalizedSceneFlow> {
    if flow.dim() != mid.dim() {
        return Err(Error::ShapeMismatch(format!(
            "flow {:?} vs motion-in-depth {:?}",
            flow.dim(),
            mid.dim()
        )));
    }
    let (h, w) = flow.dim();
    let mut s = Array3::zeros((h, w, 3));
    for y in 0..h {
        for x in 0..w {
            let v = normalized_scene_flow_at(
                [x as f64, y as f64],
                [flow.u[[y, x]], flow.v[[y, x]]],
                mid.m[[y, x]],
            );
            for c in 0..3 {
                s[[y, x, c]] = v[c];
            }
        }
    }
    let valid = &flow.valid & &mid.valid;
    Ok(NormalizedSceneFlow { s, valid })
}

/// Metric scene flow `S_f = Z K^-1 S_hat` given the initial depth map.
pub fn metric_scene_flow(
    nsf: &NormalizedSceneFlow,
    depth: &Array2<f64>,
    intrinsics: &CameraIntrinsics,
) -> Result<Array3<f64>> {
    let (h, w, _) = nsf.s.dim();
    if depth.dim() != (h, w) {
        return Err(Error::ShapeMismatch(format!(
            "scene flow ({h}, {w}) vs depth {:?}",
            depth.dim()
        )));
    }
    intrinsics.validate()?;
    let mut out = Array3::zeros((h, w, 3));
    for y in 0..h {
        for x in 0..w {
            let z = depth[[y, x]];
            let [a, b, c] = [nsf.s[[y, x, 0]], nsf.s[[y, x, 1]], nsf.s[[y, x, 2]]];
            out[[y, x, 0]] = z * (a - intrinsics.cx * c) / intrinsics.fx;
            out[[y, x, 1]] = z * (b - intrinsics.cy * c) / intrinsics.fy;
            out[[y, x, 2]] = z * c;
        }
    }
    Ok(out)
}

fn depth_edges(depth: &Array2<f64>) -> Array2<bool> {
    let (h, w) = depth.dim();
    Array2::from_shape_fn((h, w), |(y, x)| {
        let (lo, hi) = window_range(depth, y as isize, x as isize);
        hi - lo > DEPTH_EDGE_RATIO * depth[[y, x]]
    })
}

/// Min and max over the in-bounds 3x3 neighborhood.
fn window_range(depth: &Array2<f64>, y: isize, x: isize) -> (f64, f64) {
    let (h, w) = depth.dim();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for dy in -1..=1 {
        for dx in -1..=1 {
            let (yy, xx) = (y + dy, x + dx);
            if yy >= 0 && xx >= 0 && (yy as usize) < h && (xx as usize) < w {
                let v = depth[[yy as usize, xx as usize]];
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
    }
    (lo, hi)
}

fn dilate(mask: &Array2<bool>, margin: usize) -> Array2<bool> {
    if margin == 0 {
        return mask.clone();
    }
    let (h, w) = mask.dim();
    let m = margin as isize;
    Array2::from_shape_fn((h, w), |(y, x)| {
        for dy in -m..=m {
            for dx in -m..=m {
                let (yy, xx) = (y as isize + dy, x as isize + dx);
                if yy >= 0 && xx >= 0 && (yy as usize) < h && (xx as usize) < w && mask[[yy as usize, xx as usize]] {
                    return true;
                }
            }
        }
        false
    })
}

/// Motion-in-depth label `Z1(x + flow(x)) / Z0(x)`.
///
/// Pixels are masked when the warped point leaves the image, when `Z1`
/// varies by more than 10% of its center value in the 3x3 window around the
/// warped point, or when they lie within `boundary_margin` pixels of an
/// object edge. Edges come from the instance map when given, otherwise from
/// depth discontinuities of `Z0`.
pub fn mid_label_from_depth(
    z0: &Array2<f64>,
    z1: &Array2<f64>,
    flow: &FlowField,
    boundary_margin: usize,
    instances: Option<&Array2<u32>>,
) -> Result<MiDField> {
    let (h, w) = z0.dim();
    if z1.dim() != (h, w) || flow.dim() != (h, w) {
        return Err(Error::ShapeMismatch("depth maps and flow differ in shape".into()));
    }
    for (map, name) in [(z0, 0usize), (z1, 1usize)] {
        if let Some(((y, x), &d)) = map.indexed_iter().find(|(_, &d)| !(d > 0.0 && d.is_finite())) {
            let _ = name;
            return Err(Error::NonPositiveDepth { x, y, depth: d });
        }
    }
    let edges = match instances {
        Some(ids) => {
            if ids.dim() != (h, w) {
                return Err(Error::ShapeMismatch("instance map shape".into()));
            }
            Array2::from_shape_fn((h, w), |(y, x)| {
                let id = ids[[y, x]];
                let (y, x) = (y as isize, x as isize);
                (-1..=1).any(|dy| {
                    (-1..=1).any(|dx| {
                        let (yy, xx) = (y + dy, x + dx);
                        yy >= 0
                            && xx >= 0
                            && (yy as usize) < h
                            && (xx as usize) < w
                            && ids[[yy as usize, xx as usize]] != id
                    })
                })
            })
        }
        None => depth_edges(z0),
    };
    let near_edge = dilate(&edges, boundary_margin);

    let mut out = MiDField::constant(h, w, 1.0);
    for y in 0..h {
        for x in 0..w {
            if !flow.valid[[y, x]] || near_edge[[y, x]] {
                out.valid[[y, x]] = false;
                continue;
            }
            let wx = x as f64 + flow.u[[y, x]];
            let wy = y as f64 + flow.v[[y, x]];
            if !(wx >= 0.0 && wy >= 0.0 && wx <= (w - 1) as f64 && wy <= (h - 1) as f64) {
                out.valid[[y, x]] = false;
                continue;
            }
            let (cy, cx) = (wy.round() as isize, wx.round() as isize);
            let (lo, hi) = window_range(z1, cy, cx);
            let center = z1[[cy as usize, cx as usize]];
            if hi - lo > DEPTH_EDGE_RATIO * center {
                out.valid[[y, x]] = false;
                continue;
            }
            let sampled = crate::correlation::bilinear_zero(z1.view(), wy, wx);
            out.m[[y, x]] = sampled / z0[[y, x]];
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Mean endpoint error in pixels.
    pub epe: f64,
    /// Percentage of outlier pixels.
    pub f1: f64,
    /// `1e4 * mean |ln(M_pred) - ln(M_gt)|`.
    pub logmid: f64,
    pub pixels: usize,
}

impl MetricsReport {
    /// `epe=... f1=... logmid=...` key-value block, one key per line.
    pub fn to_text(&self) -> String {
        format!(
            "epe={}\nf1={}\nlogmid={}\npixels={}\n",
            self.epe, self.f1, self.logmid, self.pixels
        )
    }
}

/// Mean endpoint error over `valid`.
pub fn flow_epe(pred: &FlowField, gt: &FlowField, valid: &Array2<bool>) -> Result<f64> {
    if pred.dim() != gt.dim() || valid.dim() != gt.dim() {
        return Err(Error::ShapeMismatch("flow fields differ in shape".into()));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    Zip::from(&pred.u)
        .and(&pred.v)
        .and(&gt.u)
        .and(&gt.v)
        .and(valid)
        .for_each(|&pu, &pv, &gu, &gv, &ok| {
            if ok {
                sum += (pu - gu).hypot(pv - gv);
                count += 1;
            }
        });
    if count == 0 {
        return Err(Error::EmptyValidMask);
    }
    Ok(sum / count as f64)
}

pub fn metrics(
    pred_flow: &FlowField,
    gt_flow: &FlowField,
    pred_mid: &MiDField,
    gt_mid: &MiDField,
    valid: &Array2<bool>,
) -> Result<MetricsReport> {
    let dim = gt_flow.dim();
    if pred_flow.dim() != dim || pred_mid.dim() != dim || gt_mid.dim() != dim || valid.dim() != dim {
        return Err(Error::ShapeMismatch("metric inputs differ in shape".into()));
    }
    let mut epe = 0.0;
    let mut outliers = 0usize;
    let mut log_err = 0.0;
    let mut count = 0usize;
    for ((y, x), &ok) in valid.indexed_iter() {
        if !ok {
            continue;
        }
        let du = pred_flow.u[[y, x]] - gt_flow.u[[y, x]];
        let dv = pred_flow.v[[y, x]] - gt_flow.v[[y, x]];
        let err = du.hypot(dv);
        let mag = gt_flow.u[[y, x]].hypot(gt_flow.v[[y, x]]);
        epe += err;
        if err > OUTLIER_PIXELS && err > OUTLIER_RATIO * mag {
            outliers += 1;
        }
        log_err += (pred_mid.m[[y, x]].ln() - gt_mid.m[[y, x]].ln()).abs();
        count += 1;
    }
    if count == 0 {
        return Err(Error::EmptyValidMask);
    }
    let n = count as f64;
    Ok(MetricsReport {
        epe: epe / n,
        f1: 100.0 * outliers as f64 / n,
        logmid: LOG_MID_SCALE * log_err / n,
        pixels: count,
    })
}
