//! Spatial and temporal cost-volume pyramids and trajectory-guided
//! neighborhood lookup.

use ndarray::{s, Array2, Array3, Array4, Array5, ArrayD, ArrayView2, Axis, Ix4, Ix5};

use crate::error::{Error, Result};
use crate::projection::{Kymograph, Voxel};

pub const DEFAULT_LEVELS: usize = 2;
pub const DEFAULT_RADIUS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureAxis {
    /// 2D map over rows and columns.
    Xy,
    /// Per-row features of one temporal block.
    Ht,
    /// Per-column features of one temporal block.
    Wt,
}

/// Channel-major features: `data` is `D x S` where `S = extent.0 * extent.1`.
/// 2D maps use `extent = (H, W)`; axis features use `(len, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    data: Array2<f64>,
    extent: (usize, usize),
    axis: FeatureAxis,
    block: usize,
}

impl FeatureMap {
    /// 2D features from a `(D, H, W)` tensor.
    pub fn spatial(data: Array3<f64>) -> Result<Self> {
        let (d, h, w) = data.dim();
        Self::checked(
            data.into_shape_with_order((d, h * w))
                .map_err(|e| Error::ShapeMismatch(e.to_string()))?,
            (h, w),
            FeatureAxis::Xy,
            0,
        )
    }

    /// Axis features `(D, S)` of temporal block `block` (1-based).
    pub fn axis(data: Array2<f64>, axis: FeatureAxis, block: usize) -> Result<Self> {
        if axis == FeatureAxis::Xy {
            return Err(Error::ShapeMismatch("axis features need Ht or Wt".into()));
        }
        let len = data.shape()[1];
        Self::checked(data, (len, 1), axis, block)
    }

    fn checked(data: Array2<f64>, extent: (usize, usize), axis: FeatureAxis, block: usize) -> Result<Self> {
        if data.shape()[0] == 0 {
            return Err(Error::ShapeMismatch("features need at least one channel".into()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::ShapeMismatch("features must be finite".into()));
        }
        Ok(Self {
            data,
            extent,
            axis,
            block,
        })
    }

    pub fn channels(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn extent(&self) -> (usize, usize) {
        self.extent
    }

    pub fn axis_kind(&self) -> FeatureAxis {
        self.axis
    }

    pub fn block(&self) -> usize {
        self.block
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    /// Non-overlapping mean pooling with window `k` per spatial dimension
    /// (axis features pool their single dimension); remainders are dropped.
    pub fn pooled(&self, k: usize) -> FeatureMap {
        if k == 1 {
            return self.clone();
        }
        let (h, w) = self.extent;
        let (oh, ow, kh, kw) = match self.axis {
            FeatureAxis::Xy => (h / k, w / k, k, k),
            _ => (h / k, 1, k, 1),
        };
        let d = self.channels();
        let mut out = Array2::zeros((d, oh * ow));
        let norm = 1.0 / (kh * kw) as f64;
        for c in 0..d {
            let src = self.data.row(c);
            let mut dst = out.row_mut(c);
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = 0.0;
                    for a in 0..kh {
                        for b in 0..kw {
                            acc += src[(i * kh + a) * w + (j * kw + b)];
                        }
                    }
                    dst[i * ow + j] = acc * norm;
                }
            }
        }
        FeatureMap {
            data: out,
            extent: (oh, ow),
            axis: self.axis,
            block: self.block,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PyramidKind {
    Spatial,
    TemporalHt,
    TemporalWt,
    TemporalFused,
}

/// Correlation volumes, one tensor per level. Shapes at level `m` with
/// `s = 2^m`:
/// - `Spatial`: `(H, W, H/s, W/s)`
/// - `TemporalHt` / `TemporalWt`: `(N_a - 1, S, S/s)`
/// - `TemporalFused`: `(N_a - 1, H, W, H/s, W/s)`
#[derive(Debug, Clone, PartialEq)]
pub struct CostPyramid {
    pub kind: PyramidKind,
    pub levels: Vec<ArrayD<f64>>,
}

impl CostPyramid {
    pub fn level_count(&self) -> usize {
        self.levels.len()
    }

    /// Number of temporal blocks stored (blocks 2..=N_a); 1 for spatial.
    pub fn block_count(&self) -> usize {
        match self.kind {
            PyramidKind::Spatial => 1,
            _ => self.levels.first().map_or(0, |l| l.shape()[0]),
        }
    }

    /// `(H, W)` of the reference grid for 2D pyramids.
    pub fn reference_grid(&self) -> Option<(usize, usize)> {
        let level = self.levels.first()?;
        match self.kind {
            PyramidKind::Spatial => Some((level.shape()[0], level.shape()[1])),
            PyramidKind::TemporalFused => Some((level.shape()[1], level.shape()[2])),
            _ => None,
        }
    }
}

fn check_levels(levels: usize) -> Result<()> {
    if levels == 0 || levels > 16 {
        return Err(Error::InvalidParameter(format!("{levels} pyramid levels")));
    }
    Ok(())
}

/// `C^m(i, j, k, l) = (1/D) sum_c prev(c, i, j) * pool_{2^m}(next)(c, k, l)`.
pub fn spatial_cost_pyramid(prev: &FeatureMap, next: &FeatureMap, levels: usize) -> Result<CostPyramid> {
    check_levels(levels)?;
    if prev.axis != FeatureAxis::Xy || next.axis != FeatureAxis::Xy {
        return Err(Error::ShapeMismatch("spatial correlation needs Xy features".into()));
    }
    if prev.channels() != next.channels() || prev.extent != next.extent {
        return Err(Error::ShapeMismatch(format!(
            "features {}x{:?} vs {}x{:?}",
            prev.channels(),
            prev.extent,
            next.channels(),
            next.extent
        )));
    }
    let (h, w) = prev.extent;
    let d = prev.channels() as f64;
    let mut out = Vec::with_capacity(levels);
    for m in 0..levels {
        let pooled = next.pooled(1 << m);
        let (ph, pw) = pooled.extent;
        let corr = prev.data.t().dot(&pooled.data) / d;
        let level = corr
            .into_shape_with_order((h, w, ph, pw))
            .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        out.push(level.into_dyn());
    }
    Ok(CostPyramid {
        kind: PyramidKind::Spatial,
        levels: out,
    })
}

/// Cross-block correlation of axis features against the first block:
/// entry `(n - 2, i, j) = (1/D) sum_c f_1(c, i) * pool_{2^m}(f_n)(c, j)` for
/// blocks `n = 2..=N_a`.
pub fn temporal_cost_pyramid(blocks: &[FeatureMap], levels: usize) -> Result<CostPyramid> {
    check_levels(levels)?;
    if blocks.len() < 2 {
        return Err(Error::FewerThanTwoBlocks(blocks.len()));
    }
    let reference = &blocks[0];
    let kind = match reference.axis {
        FeatureAxis::Ht => PyramidKind::TemporalHt,
        FeatureAxis::Wt => PyramidKind::TemporalWt,
        FeatureAxis::Xy => {
            return Err(Error::ShapeMismatch("temporal correlation needs axis features".into()))
        }
    };
    if blocks
        .iter()
        .any(|b| b.axis != reference.axis || b.channels() != reference.channels() || b.extent != reference.extent)
    {
        return Err(Error::ShapeMismatch("temporal blocks differ in shape or axis".into()));
    }
    let len = reference.extent.0;
    let d = reference.channels() as f64;
    let mut out = Vec::with_capacity(levels);
    for m in 0..levels {
        let plen = len >> m;
        let mut level = Array3::zeros((blocks.len() - 1, len, plen));
        for (n, block) in blocks.iter().enumerate().skip(1) {
            let pooled = block.pooled(1 << m);
            let corr = reference.data.t().dot(&pooled.data) / d;
            level.index_axis_mut(Axis(0), n - 1).assign(&corr);
        }
        out.push(level.into_dyn());
    }
    Ok(CostPyramid { kind, levels: out })
}

/// Outer product of row and column temporal costs:
/// `C_t(n, i, k, j, l) = C_ht(n, i, j) * C_wt(n, k, l)`.
pub fn fuse_temporal(c_ht: &CostPyramid, c_wt: &CostPyramid) -> Result<CostPyramid> {
    if c_ht.kind != PyramidKind::TemporalHt || c_wt.kind != PyramidKind::TemporalWt {
        return Err(Error::ShapeMismatch("fusion needs Ht and Wt pyramids".into()));
    }
    if c_ht.level_count() != c_wt.level_count() || c_ht.block_count() != c_wt.block_count() {
        return Err(Error::LevelMismatch);
    }
    let mut out = Vec::with_capacity(c_ht.level_count());
    for (ht, wt) in c_ht.levels.iter().zip(&c_wt.levels) {
        let (nb, h, ph) = (ht.shape()[0], ht.shape()[1], ht.shape()[2]);
        let (w, pw) = (wt.shape()[1], wt.shape()[2]);
        let mut level = Array5::zeros((nb, h, w, ph, pw));
        for n in 0..nb {
            for i in 0..h {
                for k in 0..w {
                    for j in 0..ph {
                        let a = ht[[n, i, j]];
                        for l in 0..pw {
                            level[[n, i, k, j, l]] = a * wt[[n, k, l]];
                        }
                    }
                }
            }
        }
        out.push(level.into_dyn());
    }
    Ok(CostPyramid {
        kind: PyramidKind::TemporalFused,
        levels: out,
    })
}

/// One lookup: for every reference pixel, the `(x, y)` point to sample
/// around, in level-0 grid units. `block` selects the stored temporal block
/// (0-based over blocks `2..=N_a`); it must be 0 for spatial pyramids.
#[derive(Debug, Clone, PartialEq)]
pub struct CostQuery {
    pub block: usize,
    pub positions: Array3<f64>,
}

/// Sampled neighborhoods, `(H, W, queries, levels * (2r+1)^2)`. Within a
/// query the layout is `[level][dy][dx]` with offsets running `-r..=r`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostPatch {
    pub values: Array4<f64>,
    pub radius: usize,
    pub levels: usize,
}

impl CostPatch {
    pub fn side(&self) -> usize {
        2 * self.radius + 1
    }

    /// The `(2r+1) x (2r+1)` window of one query at one level.
    pub fn window(&self, y: usize, x: usize, query: usize, level: usize) -> ArrayView2<'_, f64> {
        let side = self.side();
        let start = level * side * side;
        self.values
            .slice(s![y, x, query, start..start + side * side])
            .into_shape_with_order((side, side))
            .expect("contiguous patch")
    }
}

/// Bilinear read with zero outside the grid. Corners with zero weight are
/// not read, so integer coordinates return the stored value bit-exactly.
pub fn bilinear_zero(grid: ArrayView2<f64>, y: f64, x: f64) -> f64 {
    let (h, w) = grid.dim();
    if !(y.is_finite() && x.is_finite()) {
        return 0.0;
    }
    let y0 = y.floor();
    let x0 = x.floor();
    let fy = y - y0;
    let fx = x - x0;
    let read = |yy: f64, xx: f64| -> f64 {
        if yy < 0.0 || xx < 0.0 || yy >= h as f64 || xx >= w as f64 {
            0.0
        } else {
            grid[[yy as usize, xx as usize]]
        }
    };
    if fy == 0.0 && fx == 0.0 {
        return read(y0, x0);
    }
    let mut acc = 0.0;
    for (wgt, yy, xx) in [
        ((1.0 - fy) * (1.0 - fx), y0, x0),
        ((1.0 - fy) * fx, y0, x0 + 1.0),
        (fy * (1.0 - fx), y0 + 1.0, x0),
        (fy * fx, y0 + 1.0, x0 + 1.0),
    ] {
        if wgt != 0.0 {
            acc += wgt * read(yy, xx);
        }
    }
    acc
}

/// Samples every level's `(2r+1)^2` neighborhood around each query point;
/// at level `m` the point is scaled by `2^-m` before the integer offsets
/// are added.
pub fn query_neighborhood(pyr: &CostPyramid, queries: &[CostQuery], radius: usize) -> Result<CostPatch> {
    let (h, w) = pyr
        .reference_grid()
        .ok_or_else(|| Error::ShapeMismatch("lookup needs a spatial or fused pyramid".into()))?;
    let levels = pyr.level_count();
    let side = 2 * radius + 1;
    let per_level = side * side;
    let r = radius as f64;
    let mut values = Array4::zeros((h, w, queries.len(), levels * per_level));

    for (q, query) in queries.iter().enumerate() {
        if query.positions.dim() != (h, w, 2) {
            return Err(Error::ShapeMismatch(format!(
                "positions {:?} vs grid ({h}, {w})",
                query.positions.dim()
            )));
        }
        if query.block >= pyr.block_count() {
            return Err(Error::ShapeMismatch(format!(
                "block {} of {}",
                query.block,
                pyr.block_count()
            )));
        }
        for (m, level) in pyr.levels.iter().enumerate() {
            let scale = 1.0 / (1u64 << m) as f64;
            for y in 0..h {
                for x in 0..w {
                    let slice = match pyr.kind {
                        PyramidKind::Spatial => level
                            .view()
                            .into_dimensionality::<Ix4>()
                            .expect("4D spatial level")
                            .slice_move(s![y, x, .., ..]),
                        _ => level
                            .view()
                            .into_dimensionality::<Ix5>()
                            .expect("5D fused level")
                            .slice_move(s![query.block, y, x, .., ..]),
                    };
                    let px = query.positions[[y, x, 0]] * scale;
                    let py = query.positions[[y, x, 1]] * scale;
                    let mut out = values.slice_mut(s![y, x, q, m * per_level..(m + 1) * per_level]);
                    let mut idx = 0;
                    for dy in 0..side {
                        for dx in 0..side {
                            out[idx] = bilinear_zero(slice, py + dy as f64 - r, px + dx as f64 - r);
                            idx += 1;
                        }
                    }
                }
            }
        }
    }
    Ok(CostPatch {
        values,
        radius,
        levels,
    })
}

/// Reference-block and target-block features derived directly from the
/// projections, in place of learned encoders.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionFeatures {
    /// First voxel bin (window start), single channel.
    pub prev: FeatureMap,
    /// Last voxel bin (window end), single channel.
    pub next: FeatureMap,
    /// Per-block row features from `K_y`; channels are the block's bins.
    pub ht: Vec<FeatureMap>,
    /// Per-block column features from `K_x`; channels are the block's bins.
    pub wt: Vec<FeatureMap>,
    /// Sensor pixels per feature cell.
    pub scale: usize,
}

pub fn features_from_projections(
    voxel: &Voxel,
    kymo: &Kymograph,
    n_a: usize,
    scale: usize,
) -> Result<ProjectionFeatures> {
    if scale == 0 {
        return Err(Error::InvalidParameter("downsampling scale 0".into()));
    }
    if n_a < 2 {
        return Err(Error::FewerThanTwoBlocks(n_a));
    }
    let bins = voxel.bins();
    let slice_map = |b: usize| -> Result<FeatureMap> {
        let v = voxel.data.index_axis(Axis(0), b).to_owned();
        let (h, w) = v.dim();
        Ok(FeatureMap::spatial(v.into_shape_with_order((1, h, w)).expect("reshape"))?.pooled(scale))
    };
    let prev = slice_map(0)?;
    let next = slice_map(bins - 1)?;

    let t_bins = kymo.time_bins();
    let block_len = t_bins.div_ceil(n_a);
    let axis_blocks = |k: &Array2<f64>, axis: FeatureAxis| -> Result<Vec<FeatureMap>> {
        let len = k.shape()[1];
        (0..n_a)
            .map(|b| {
                let mut data = Array2::zeros((block_len, len));
                for c in 0..block_len {
                    let bin = b * block_len + c;
                    if bin < t_bins {
                        data.row_mut(c).assign(&k.row(bin));
                    }
                }
                Ok(FeatureMap::axis(data, axis, b + 1)?.pooled(scale))
            })
            .collect()
    };
    Ok(ProjectionFeatures {
        prev,
        next,
        ht: axis_blocks(&kymo.ky, FeatureAxis::Ht)?,
        wt: axis_blocks(&kymo.kx, FeatureAxis::Wt)?,
        scale,
    })
}

/// The spatial pyramid and the fused temporal pyramid a refinement queries.
#[derive(Debug, Clone, PartialEq)]
pub struct CostVolumes {
    pub spatial: CostPyramid,
    pub temporal: CostPyramid,
    /// Temporal block count `N_a`.
    pub n_blocks: usize,
    /// Sensor pixels per grid cell.
    pub scale: usize,
}

impl CostVolumes {
    pub fn build(features: &ProjectionFeatures, levels: usize) -> Result<Self> {
        let spatial = spatial_cost_pyramid(&features.prev, &features.next, levels)?;
        let c_ht = temporal_cost_pyramid(&features.ht, levels)?;
        let c_wt = temporal_cost_pyramid(&features.wt, levels)?;
        let temporal = fuse_temporal(&c_ht, &c_wt)?;
        if spatial.reference_grid() != temporal.reference_grid() {
            return Err(Error::ShapeMismatch("spatial and temporal grids differ".into()));
        }
        Ok(Self {
            spatial,
            temporal,
            n_blocks: features.ht.len(),
            scale: features.scale,
        })
    }

    pub fn grid(&self) -> (usize, usize) {
        self.spatial.reference_grid().unwrap_or((0, 0))
    }
}
