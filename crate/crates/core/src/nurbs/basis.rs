use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Clamped knot vector on the normalized time interval `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnotVector {
    knots: Vec<f64>,
    degree: usize,
}

impl KnotVector {
    /// `[0; p+1] ++ interior ++ [1; p+1]` for a curve with `n` control points.
    /// `interior` must hold exactly `n - p - 1` sorted values in `(0, 1)`.
    pub fn clamped(n: usize, degree: usize, interior: &[f64]) -> Result<Self> {
        if n < degree + 1 {
            return Err(Error::InvalidKnots(format!(
                "{n} control points cannot carry degree {degree}"
            )));
        }
        let expected = n - degree - 1;
        if interior.len() != expected {
            return Err(Error::WrongInteriorCount {
                expected,
                got: interior.len(),
            });
        }
        let inside = interior.iter().all(|&k| k > 0.0 && k < 1.0);
        let sorted = interior.windows(2).all(|w| w[0] <= w[1]);
        if !inside || !sorted {
            return Err(Error::UnsortedInterior);
        }
        let mut knots = vec![0.0; degree + 1];
        knots.extend_from_slice(interior);
        knots.extend(std::iter::repeat_n(1.0, degree + 1));
        Ok(Self { knots, degree })
    }

    /// Clamped vector with evenly spaced interior knots.
    pub fn uniform(n: usize, degree: usize) -> Result<Self> {
        if n < degree + 1 {
            return Err(Error::InvalidKnots(format!(
                "{n} control points cannot carry degree {degree}"
            )));
        }
        let spans = n - degree;
        let interior: Vec<f64> = (1..spans).map(|i| i as f64 / spans as f64).collect();
        Self::clamped(n, degree, &interior)
    }

    /// Validates a full knot sequence, e.g. one read back from a file.
    pub fn from_knots(knots: Vec<f64>, degree: usize) -> Result<Self> {
        let m = knots.len();
        if m < 2 * (degree + 1) {
            return Err(Error::InvalidKnots(format!(
                "{m} knots are too few for degree {degree}"
            )));
        }
        let n = m - degree - 1;
        let clamped_ends = knots[..=degree].iter().all(|&k| k == 0.0)
            && knots[m - degree - 1..].iter().all(|&k| k == 1.0);
        if !clamped_ends {
            return Err(Error::InvalidKnots("knot vector is not clamped to [0, 1]".into()));
        }
        Self::clamped(n, degree, &knots[degree + 1..m - degree - 1])
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    /// Number of control points `n = m - p - 1`.
    pub fn control_count(&self) -> usize {
        self.knots.len() - self.degree - 1
    }

    pub fn interior(&self) -> &[f64] {
        &self.knots[self.degree + 1..self.knots.len() - self.degree - 1]
    }

    /// Greville abscissae: the averages of `p` consecutive knots. Linear
    /// functions of `t` have these points' values as B-spline coefficients.
    pub fn greville(&self) -> Vec<f64> {
        let p = self.degree;
        if p == 0 {
            return (0..self.control_count())
                .map(|i| 0.5 * (self.knots[i] + self.knots[i + 1]))
                .collect();
        }
        (0..self.control_count())
            .map(|i| self.knots[i + 1..=i + p].iter().sum::<f64>() / p as f64)
            .collect()
    }

    /// Index `s` of the knot span `[t_s, t_{s+1})` containing `t`. At `t = 1`
    /// the last non-empty span is closed on the right.
    pub fn span(&self, t: f64) -> usize {
        let k = &self.knots;
        let m = k.len();
        if t >= k[m - 1] {
            let mut s = m - 2;
            while s > 0 && k[s] >= k[s + 1] {
                s -= 1;
            }
            return s;
        }
        let t = t.max(k[0]);
        k.partition_point(|&v| v <= t) - 1
    }

    /// Non-zero basis functions of degree `q` at `t`: returns the span `s`
    /// and the values `N_{s-q..=s, q}(t)` (Cox-de Boor triangle).
    fn nonzero_basis(&self, q: usize, t: f64) -> (usize, Vec<f64>) {
        let k = &self.knots;
        let s = self.span(t);
        let mut values = vec![0.0; q + 1];
        let mut left = vec![0.0; q + 1];
        let mut right = vec![0.0; q + 1];
        values[0] = 1.0;
        for j in 1..=q {
            left[j] = t - k[s + 1 - j];
            right[j] = k[s + j] - t;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = values[r] / (right[r + 1] + left[j - r]);
                values[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            values[j] = saved;
        }
        (s, values)
    }

    fn check_degree(&self, q: usize) -> Result<()> {
        if q > self.degree {
            return Err(Error::InvalidParameter(format!(
                "degree {q} exceeds the knot vector degree {}",
                self.degree
            )));
        }
        Ok(())
    }

    /// `N_{i,q}(t)` with 0-based `i`, for any `q` up to the curve degree.
    pub fn basis(&self, i: usize, q: usize, t: f64) -> Result<f64> {
        self.check_degree(q)?;
        let count = self.knots.len() - q - 1;
        if i >= count {
            return Err(Error::IndexOutOfRange { index: i, count });
        }
        let (s, values) = self.nonzero_basis(q, t);
        Ok(if i + q >= s && i <= s {
            values[i + q - s]
        } else {
            0.0
        })
    }

    /// `N'_{i,q}(t) = q/(t_{i+q}-t_i) N_{i,q-1} - q/(t_{i+q+1}-t_{i+1}) N_{i+1,q-1}`,
    /// zero-width spans contributing nothing.
    pub fn basis_derivative(&self, i: usize, q: usize, t: f64) -> Result<f64> {
        self.check_degree(q)?;
        let count = self.knots.len() - q - 1;
        if i >= count {
            return Err(Error::IndexOutOfRange { index: i, count });
        }
        if q == 0 {
            return Ok(0.0);
        }
        let k = &self.knots;
        let qf = q as f64;
        let mut d = 0.0;
        let w1 = k[i + q] - k[i];
        if w1 > 0.0 {
            d += qf / w1 * self.basis(i, q - 1, t)?;
        }
        let w2 = k[i + q + 1] - k[i + 1];
        if w2 > 0.0 {
            d -= qf / w2 * self.basis(i + 1, q - 1, t)?;
        }
        Ok(d)
    }

    /// All `n` basis functions of the curve degree at `t`.
    pub fn basis_all(&self, t: f64) -> Vec<f64> {
        let p = self.degree;
        let (s, values) = self.nonzero_basis(p, t);
        let mut out = vec![0.0; self.control_count()];
        out[s - p..=s].copy_from_slice(&values);
        out
    }

    /// All `n` first derivatives of the curve-degree basis at `t`.
    pub fn basis_derivative_all(&self, t: f64) -> Vec<f64> {
        let p = self.degree;
        let n = self.control_count();
        let mut out = vec![0.0; n];
        if p == 0 {
            return out;
        }
        let k = &self.knots;
        // Degree p-1 values N_{s-p+1..=s, p-1}, indexed by absolute basis index.
        let (s, lower) = self.nonzero_basis(p - 1, t);
        let lower_at = |j: usize| -> f64 {
            if j + (p - 1) >= s && j <= s {
                lower[j + p - 1 - s]
            } else {
                0.0
            }
        };
        let pf = p as f64;
        for (i, slot) in out.iter_mut().enumerate().take(s + 1).skip(s.saturating_sub(p)) {
            let mut d = 0.0;
            let w1 = k[i + p] - k[i];
            if w1 > 0.0 {
                d += pf / w1 * lower_at(i);
            }
            let w2 = k[i + p + 1] - k[i + 1];
            if w2 > 0.0 {
                d -= pf / w2 * lower_at(i + 1);
            }
            *slot = d;
        }
        out
    }
}
