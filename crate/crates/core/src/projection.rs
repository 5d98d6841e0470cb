//! Event voxel and event kymograph projections, and the block density field
//! used to adapt trajectory knots.

use ndarray::{Array2, Array3, Axis};

use crate::error::{Error, Result};
use crate::events::EventStream;

pub const DEFAULT_VOXEL_BINS: usize = 7;
pub const DEFAULT_TIME_BINS: usize = 120;
pub const DEFAULT_SIGMA: f64 = 10.0;
pub const DEFAULT_ANCHORS: usize = 6;
pub const DEFAULT_POOL: [usize; 3] = [3, 3, 3];

/// Gaussian support used when truncation is enabled, in units of sigma.
pub const TRUNCATION_SIGMAS: f64 = 4.0;

/// `max(0, 1 - |a|)`.
pub fn triangular_kernel(a: f64) -> f64 {
    (1.0 - a.abs()).max(0.0)
}

/// Unnormalized Gaussian `exp(-(a / sigma)^2)`.
pub fn gaussian_kernel(a: f64, sigma: f64) -> Result<f64> {
    if sigma.is_nan() || sigma <= 0.0 {
        return Err(Error::NonPositiveSigma(sigma));
    }
    let z = a / sigma;
    Ok((-z * z).exp())
}

/// `B x H x W` tensor of signed, triangularly splatted event mass.
#[derive(Debug, Clone, PartialEq)]
pub struct Voxel {
    pub data: Array3<f64>,
    /// Bin spacing `T_B` in seconds.
    pub bin_duration: f64,
    pub window: (u64, u64),
}

impl Voxel {
    pub fn bins(&self) -> usize {
        self.data.shape()[0]
    }
}

/// Voxel grid with bin centers at `0..B-1`; the window start maps to bin 0
/// and the window end to bin `B-1`.
pub fn event_voxel(stream: &EventStream, bins: usize) -> Result<Voxel> {
    if bins == 0 {
        return Err(Error::InvalidBins(bins));
    }
    let sensor = stream.sensor();
    let (t0, t1) = stream.window();
    let span = (t1 - t0) as f64;
    let mut data = Array3::zeros((bins, sensor.height, sensor.width));
    let bin_duration = if bins > 1 {
        span * 1e-6 / (bins - 1) as f64
    } else {
        span * 1e-6
    };
    if stream.is_empty() {
        return Ok(Voxel {
            data,
            bin_duration,
            window: (t0, t1),
        });
    }
    if bins > 1 && span == 0.0 {
        return Err(Error::InvalidWindow { start: t0, end: t1 });
    }

    let scale = if bins > 1 { (bins - 1) as f64 / span } else { 0.0 };
    for e in stream.events() {
        let t_star = (e.t - t0) as f64 * scale;
        let lower = (t_star.floor() as usize).min(bins - 1);
        let frac = t_star - lower as f64;
        let p = e.p as f64;
        let (x, y) = (e.x as usize, e.y as usize);
        data[[lower, y, x]] += p * triangular_kernel(frac);
        if frac > 0.0 && lower + 1 < bins {
            data[[lower + 1, y, x]] += p * triangular_kernel(1.0 - frac);
        }
    }
    Ok(Voxel {
        data,
        bin_duration,
        window: (t0, t1),
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct KymographOptions {
    /// Skip Gaussian samples further than four sigma from the event; the
    /// dropped mass is below `exp(-16)` per sample.
    pub truncate: bool,
}

/// Decoupled x-t and y-t projections. `kx` is `T x W`, `ky` is `T x H`.
#[derive(Debug, Clone, PartialEq)]
pub struct Kymograph {
    pub kx: Array2<f64>,
    pub ky: Array2<f64>,
    /// Gaussian scale in time bins.
    pub sigma: f64,
    pub window: (u64, u64),
}

impl Kymograph {
    pub fn time_bins(&self) -> usize {
        self.kx.shape()[0]
    }
}

pub fn event_kymograph(stream: &EventStream, t_bins: usize, sigma: f64) -> Result<Kymograph> {
    event_kymograph_with(stream, t_bins, sigma, KymographOptions::default())
}

/// Kymograph sampled at bin centers: event time rescaled to `[0, T-1]`,
/// Gaussian evaluated at every integer bin.
pub fn event_kymograph_with(
    stream: &EventStream,
    t_bins: usize,
    sigma: f64,
    options: KymographOptions,
) -> Result<Kymograph> {
    if sigma.is_nan() || sigma <= 0.0 {
        return Err(Error::NonPositiveSigma(sigma));
    }
    if t_bins < 2 {
        return Err(Error::InvalidBins(t_bins));
    }
    let sensor = stream.sensor();
    let (t0, t1) = stream.window();
    let span = (t1 - t0) as f64;
    if !stream.is_empty() && span == 0.0 {
        return Err(Error::InvalidWindow { start: t0, end: t1 });
    }

    // Accumulate with time contiguous, then transpose.
    let mut kx_t = Array2::<f64>::zeros((sensor.width, t_bins));
    let mut ky_t = Array2::<f64>::zeros((sensor.height, t_bins));
    let mut row = vec![0.0; t_bins];
    let scale = (t_bins - 1) as f64 / span.max(1.0);
    let inv_var = 1.0 / (sigma * sigma);
    let reach = if options.truncate {
        (TRUNCATION_SIGMAS * sigma).floor() as usize
    } else {
        t_bins
    };

    for e in stream.events() {
        let center = (e.t - t0) as f64 * scale;
        let (lo, hi) = gaussian_row(center, inv_var, reach, &mut row);
        let p = e.p as f64;
        let mut xrow = kx_t.row_mut(e.x as usize);
        let xs = xrow.as_slice_mut().expect("contiguous row");
        for b in lo..hi {
            xs[b] += p * row[b];
        }
        let mut yrow = ky_t.row_mut(e.y as usize);
        let ys = yrow.as_slice_mut().expect("contiguous row");
        for b in lo..hi {
            ys[b] += p * row[b];
        }
    }

    Ok(Kymograph {
        kx: kx_t.reversed_axes().as_standard_layout().into_owned(),
        ky: ky_t.reversed_axes().as_standard_layout().into_owned(),
        sigma,
        window: (t0, t1),
    })
}

/// Fills `row[lo..hi]` with `exp(-(b - center)^2 / sigma^2)`, stepping out
/// from the nearest bin with the exact ratio recurrence of the Gaussian.
fn gaussian_row(center: f64, inv_var: f64, reach: usize, row: &mut [f64]) -> (usize, usize) {
    let n = row.len();
    let peak = (center.round().max(0.0) as usize).min(n - 1);
    let lo = peak.saturating_sub(reach);
    let hi = (peak + reach + 1).min(n);
    let d0 = peak as f64 - center;
    let g0 = (-d0 * d0 * inv_var).exp();
    let q = (-2.0 * inv_var).exp();
    row[peak] = g0;

    let mut g = g0;
    let mut ratio = (-(2.0 * d0 + 1.0) * inv_var).exp();
    for slot in row.iter_mut().take(hi).skip(peak + 1) {
        g *= ratio;
        ratio *= q;
        *slot = g;
    }
    let mut g = g0;
    let mut ratio = (-(1.0 - 2.0 * d0) * inv_var).exp();
    for slot in row[lo..peak].iter_mut().rev() {
        g *= ratio;
        ratio *= q;
        *slot = g;
    }
    (lo, hi)
}

/// Block-wise event distribution `E_s` and its pooled density `D_s`, both
/// `N_a x H x W`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityField {
    pub es: Array3<f64>,
    pub ds: Array3<f64>,
    /// Averaging window `(blocks, rows, cols)`.
    pub pool: [usize; 3],
    pub n_a: usize,
}

impl DensityField {
    /// Spatial mean of `D_s` for each temporal block.
    pub fn temporal_profile(&self) -> Vec<f64> {
        self.ds
            .axis_iter(Axis(0))
            .map(|slice| slice.mean().unwrap_or(0.0))
            .collect()
    }
}

/// Sums each of `n_a` equal temporal blocks of the kymograph (zero bins are
/// appended when `T` is not a multiple of `n_a`).
pub fn kymograph_blocks(kymo: &Kymograph, n_a: usize) -> Result<(Array2<f64>, Array2<f64>)> {
    if n_a < 1 {
        return Err(Error::BadAnchorCount(n_a));
    }
    let t_bins = kymo.time_bins();
    let block_len = t_bins.div_ceil(n_a);
    let reduce = |k: &Array2<f64>| -> Array2<f64> {
        let mut out = Array2::zeros((n_a, k.shape()[1]));
        for (b, row) in k.axis_iter(Axis(0)).enumerate() {
            let mut target = out.row_mut(b / block_len);
            target += &row;
        }
        out
    };
    Ok((reduce(&kymo.kx), reduce(&kymo.ky)))
}

/// `E_s(k, y, x) = Kx_k(x) * Ky_k(y)` per block, `D_s` its same-size box
/// mean with edge replication.
pub fn density_field(kymo: &Kymograph, n_a: usize, pool: [usize; 3]) -> Result<DensityField> {
    if pool.contains(&0) {
        return Err(Error::InvalidParameter(format!("pool size {pool:?}")));
    }
    let (bx, by) = kymograph_blocks(kymo, n_a)?;
    let (h, w) = (by.shape()[1], bx.shape()[1]);
    let mut es = Array3::zeros((n_a, h, w));
    for k in 0..n_a {
        for y in 0..h {
            let ky = by[[k, y]];
            for x in 0..w {
                es[[k, y, x]] = bx[[k, x]] * ky;
            }
        }
    }
    let ds = box_mean_replicate(&es, pool);
    Ok(DensityField { es, ds, pool, n_a })
}

/// Same-size box mean where out-of-range indices clamp to the edge. The
/// window for index `i` spans `i - (k-1)/2 ..= i - (k-1)/2 + k - 1`.
pub fn box_mean_replicate(input: &Array3<f64>, pool: [usize; 3]) -> Array3<f64> {
    let mut out = input.clone();
    for (axis, &k) in pool.iter().enumerate() {
        if k == 1 {
            continue;
        }
        let len = out.shape()[axis];
        let before = (k - 1) / 2;
        let mut next = Array3::zeros(out.raw_dim());
        for (src, mut dst) in out
            .lanes(Axis(axis))
            .into_iter()
            .zip(next.lanes_mut(Axis(axis)))
        {
            for i in 0..len {
                let mut acc = 0.0;
                for d in 0..k {
                    let j = (i + d).saturating_sub(before).min(len - 1);
                    acc += src[j];
                }
                dst[i] = acc / k as f64;
            }
        }
        out = next;
    }
    out
}
