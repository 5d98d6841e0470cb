use super::KnotVector;
use crate::error::{Error, Result};
use crate::projection::DensityField;

/// Minimum distance of interior knots from each other and from 0 and 1.
pub const KNOT_EPSILON: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptationResult {
    pub knots: KnotVector,
    /// Softmax of the selected block densities, one per control point.
    pub weights: Vec<f64>,
    /// `i / N_a` for each selected block, ascending.
    pub anchor_times: Vec<f64>,
    /// 1-based temporal block indices, ascending.
    pub anchor_indices: Vec<usize>,
}

/// Knots and weights from a pooled density field. The field is reduced to one
/// value per temporal block by its spatial mean.
pub fn density_adapt(density: &DensityField, n: usize, degree: usize) -> Result<AdaptationResult> {
    adapt_from_profile(&density.temporal_profile(), n, degree)
}

/// Adaptation from a per-block density profile of length `N_a`.
///
/// The `n` densest blocks (ties to the lower index) become anchors at
/// `t = i / N_a`; interior knots are `p`-wide moving averages of the sorted
/// anchor times and weights are the softmax of the selected densities.
pub fn adapt_from_profile(profile: &[f64], n: usize, degree: usize) -> Result<AdaptationResult> {
    let blocks = profile.len();
    if blocks < n {
        return Err(Error::TooFewBlocks {
            needed: n,
            got: blocks,
        });
    }
    if degree == 0 || n < degree + 1 {
        return Err(Error::InvalidParameter(format!(
            "degree {degree} with {n} control points cannot be adapted"
        )));
    }
    if profile.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("density profile is not finite".into()));
    }

    let mut order: Vec<usize> = (0..blocks).collect();
    order.sort_by(|&a, &b| profile[b].total_cmp(&profile[a]).then(a.cmp(&b)));
    let mut selected: Vec<usize> = order[..n].to_vec();
    selected.sort_unstable();

    let anchor_indices: Vec<usize> = selected.iter().map(|i| i + 1).collect();
    let anchor_times: Vec<f64> = anchor_indices
        .iter()
        .map(|&i| i as f64 / blocks as f64)
        .collect();

    let interior_count = n - degree - 1;
    let mut interior: Vec<f64> = (0..interior_count)
        .map(|i| anchor_times[i..i + degree].iter().sum::<f64>() / degree as f64)
        .collect();
    separate_knots(&mut interior, KNOT_EPSILON);
    let knots = KnotVector::clamped(n, degree, &interior)?;

    let values: Vec<f64> = selected.iter().map(|&i| profile[i]).collect();
    let weights = softmax(&values);

    Ok(AdaptationResult {
        knots,
        weights,
        anchor_times,
        anchor_indices,
    })
}

/// Clamps knots into `[eps, 1 - eps]` with consecutive gaps of at least `eps`.
fn separate_knots(knots: &mut [f64], eps: f64) {
    let Some(last) = knots.len().checked_sub(1) else {
        return;
    };
    let mut floor = eps;
    for k in knots.iter_mut() {
        *k = k.max(floor);
        floor = *k + eps;
    }
    let mut ceil = 1.0 - eps;
    for i in (0..=last).rev() {
        knots[i] = knots[i].min(ceil);
        ceil = knots[i] - eps;
    }
}

fn softmax(values: &[f64]) -> Vec<f64> {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    // Exponentials are floored so that extreme profiles keep every weight positive.
    let exps: Vec<f64> = values
        .iter()
        .map(|v| (v - max).exp().max(f64::MIN_POSITIVE))
        .collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|e| e / total).collect()
}
