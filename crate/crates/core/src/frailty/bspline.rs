//! B-spline bases on equally spaced knots.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Regression-spline basis of a given degree with `df` columns.
///
/// Uses `df - degree` equally spaced interior knots and repeated boundary
/// knots; of the `df + 1` B-splines the first is dropped so the block stays
/// identifiable next to an intercept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BSplineBasis {
    pub degree: usize,
    pub knots: Vec<f64>,
}

impl BSplineBasis {
    pub fn new(degree: usize, df: usize, lo: f64, hi: f64) -> Result<Self> {
        if degree < 1 {
            return Err(invalid("spline order", "must be >= 1"));
        }
        if df < degree + 1 {
            return Err(invalid("spline df", format!("must be >= order + 1 = {}, got {df}", degree + 1)));
        }
        if !(lo.is_finite() && hi.is_finite() && hi > lo) {
            return Err(invalid("spline range", format!("needs lo < hi, got [{lo}, {hi}]")));
        }
        let interior = df - degree;
        let mut knots = vec![lo; degree + 1];
        for k in 1..=interior {
            knots.push(lo + (hi - lo) * k as f64 / (interior + 1) as f64);
        }
        knots.extend(std::iter::repeat_n(hi, degree + 1));
        Ok(Self { degree, knots })
    }

    /// Total number of B-splines before the first is dropped.
    fn n_full(&self) -> usize {
        self.knots.len() - self.degree - 1
    }

    pub fn df(&self) -> usize {
        self.n_full() - 1
    }

    pub fn range(&self) -> (f64, f64) {
        (self.knots[0], self.knots[self.knots.len() - 1])
    }

    /// All `df + 1` basis values at `x`; `x` is clamped to the boundary knots.
    pub fn eval_full(&self, x: f64) -> Vec<f64> {
        let (lo, hi) = self.range();
        let x = x.clamp(lo, hi);
        let p = self.degree;
        let t = &self.knots;
        let n = self.n_full();
        // knot span with t[span] <= x < t[span+1]; the right boundary uses the last span
        let mut span = p;
        while span + 1 < n && x >= t[span + 1] {
            span += 1;
        }
        // Cox–de Boor, triangular table
        let mut vals = vec![0.0; p + 1];
        vals[0] = 1.0;
        for d in 1..=p {
            let mut saved = 0.0;
            for r in 0..d {
                let left = t[span + 1 + r - d];
                let right = t[span + 1 + r];
                let denom = right - left;
                let temp = if denom > 0.0 { vals[r] / denom } else { 0.0 };
                vals[r] = saved + (right - x) * temp;
                saved = (x - left) * temp;
            }
            vals[d] = saved;
        }
        let mut out = vec![0.0; n];
        for (r, v) in vals.into_iter().enumerate() {
            out[span - p + r] = v;
        }
        out
    }

    /// The `df` retained columns at `x`.
    pub fn eval(&self, x: f64) -> Vec<f64> {
        let mut full = self.eval_full(x);
        full.remove(0);
        full
    }
}
