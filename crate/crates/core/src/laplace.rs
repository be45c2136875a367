//! Forward Laplace transforms of duration densities and numerical inversion.
//!
//! Inversion follows the Valsa–Brančík scheme: `e^{ut}` inside the Bromwich
//! integral is replaced by `e^a / (2 sinh(a - ut))`, which turns the integral
//! into an alternating series over `u_n = (a + i n pi) / t`. The series is
//! truncated after `n_t` terms and the next `n_e` terms are summed with Euler
//! (binomial) weights.
//!
//! The approximation returns `f(t) + sum_{n>=1} e^{-2na} f((2n+1) t)`. With
//! [`InversionSettings::aliasing_correction`] the leading `e^{-2a} f(3t)`
//! term is removed by a second inversion at `3t`.

use num_complex::Complex64;

use crate::error::{invalid, Error, Result};
use crate::gauss::gl16;
use crate::survival::{shifted_cumulative_hazard, shifted_duration_for_hazard, WeibullParams};

/// Probability outputs outside `[-PROB_BAND, 1 + PROB_BAND]` are failures.
pub const PROB_BAND: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct InversionSettings {
    pub a: f64,
    pub n_t: usize,
    pub n_e: usize,
    pub aliasing_correction: bool,
}

impl Default for InversionSettings {
    fn default() -> Self {
        Self { a: 6.0, n_t: 64, n_e: 12, aliasing_correction: true }
    }
}

impl InversionSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.a.is_finite() && self.a > 0.0) {
            return Err(invalid("a", format!("must be > 0, got {}", self.a)));
        }
        if self.n_t < 1 {
            return Err(invalid("n_t", "must be >= 1"));
        }
        if !(1..=60).contains(&self.n_e) {
            return Err(invalid("n_e", format!("must be in 1..=60, got {}", self.n_e)));
        }
        Ok(())
    }

    /// Number of transform evaluations per inversion point.
    pub fn terms(&self) -> usize {
        self.n_t + self.n_e + 1
    }
}

/// A Laplace-domain function `u -> f~(u)`.
///
/// Implementations must be reentrant; inversion of distinct points may run
/// concurrently against the same evaluator.
pub trait TransformEvaluator: Sync {
    fn eval(&self, u: Complex64) -> Result<Complex64>;

    /// Values at `re + i k im_step` for `k = 0..count`.
    fn eval_line(&self, re: f64, im_step: f64, count: usize) -> Result<Vec<Complex64>> {
        (0..count)
            .map(|k| self.eval(Complex64::new(re, k as f64 * im_step)))
            .collect()
    }
}

/// Closure-backed evaluator, mostly for analytic transforms.
pub struct FnTransform<F>(pub F);

impl<F> TransformEvaluator for FnTransform<F>
where
    F: Fn(Complex64) -> Complex64 + Sync,
{
    fn eval(&self, u: Complex64) -> Result<Complex64> {
        Ok((self.0)(u))
    }
}

/// Tolerance on the neglected tail `e^{-Re(u) X} S(X)` of a grid.
const TAIL_TOL: f64 = 1e-13;
/// Smallest graded breakpoint relative to the grid extent.
const GRADING_FLOOR: f64 = 1e-14;
const GRADING_RATIO: f64 = 2.0;
/// Oscillation periods covered by one 16-point panel.
const PERIODS_PER_PANEL: f64 = 2.0;

/// Quadrature nodes for `integral f(x) phi(x) dx` where `f` is the density of
/// the residual Weibull duration after `d0` minutes.
///
/// Each panel is integrated in cumulative-hazard coordinates, where the
/// density becomes `e^{-H} dH`; this removes the `x^{alpha-1}` singularity at
/// the origin for fresh spells.
#[derive(Debug, Clone)]
pub struct DensityGrid {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub extent: f64,
}

impl DensityGrid {
    /// Grid accurate for `e^{-ux}` with `Re(u) >= re_min` and `|Im(u)| <= omega_max`.
    pub fn build(p: &WeibullParams, d0: f64, re_min: f64, omega_max: f64) -> Result<Self> {
        if !(d0.is_finite() && d0 >= 0.0) {
            return Err(invalid("d0", format!("must be >= 0, got {d0}")));
        }
        if !(re_min >= 0.0) || !omega_max.is_finite() {
            return Err(invalid("u", "real part must be >= 0 and imaginary part finite"));
        }
        let extent = grid_extent(p, d0, re_min)?;
        let cap = if omega_max > 0.0 {
            PERIODS_PER_PANEL * 2.0 * std::f64::consts::PI / omega_max
        } else {
            f64::INFINITY
        };

        let mut breaks = vec![0.0];
        let mut x = extent * GRADING_FLOOR;
        while x < extent {
            breaks.push(x);
            x *= GRADING_RATIO;
        }
        breaks.push(extent);

        let (gx, gw) = gl16();
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        for w in breaks.windows(2) {
            let (lo, hi) = (w[0], w[1]);
            let pieces = ((hi - lo) / cap).ceil().max(1.0) as usize;
            let step = (hi - lo) / pieces as f64;
            for k in 0..pieces {
                let xa = lo + k as f64 * step;
                let xb = if k + 1 == pieces { hi } else { xa + step };
                let ha = shifted_cumulative_hazard(p, d0, xa);
                let hb = shifted_cumulative_hazard(p, d0, xb);
                let half = 0.5 * (hb - ha);
                let mid = 0.5 * (hb + ha);
                if half <= 0.0 {
                    continue;
                }
                for (s, ws) in gx.iter().zip(gw) {
                    let h = mid + half * s;
                    nodes.push(shifted_duration_for_hazard(p, d0, h));
                    weights.push(half * ws * (-h).exp());
                }
            }
        }
        Ok(Self { nodes, weights, extent })
    }

    pub fn eval(&self, u: Complex64) -> Complex64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * (-u * x).exp())
            .sum()
    }

    /// Values at `re + i k im_step`, `k = 0..count`, by a per-node phasor
    /// recurrence (one complex multiply per node and term).
    pub fn eval_line(&self, re: f64, im_step: f64, count: usize) -> Vec<Complex64> {
        let mut acc = vec![Complex64::new(0.0, 0.0); count];
        for (&x, &w) in self.nodes.iter().zip(&self.weights) {
            let mut term = Complex64::new(w * (-re * x).exp(), 0.0);
            let rot = Complex64::from_polar(1.0, -im_step * x);
            for a in acc.iter_mut() {
                *a += term;
                term *= rot;
            }
        }
        acc
    }
}

/// Smallest `X` with `Re(u) X + H(X) >= ln(1/TAIL_TOL)`.
fn grid_extent(p: &WeibullParams, d0: f64, re: f64) -> Result<f64> {
    let target = (1.0 / TAIL_TOL).ln();
    let g = |x: f64| re * x + shifted_cumulative_hazard(p, d0, x);
    let mut hi = 1.0;
    let mut guard = 0;
    while g(hi) < target {
        hi *= 2.0;
        guard += 1;
        if guard > 1100 || !hi.is_finite() {
            return Err(Error::Quadrature { estimate: f64::INFINITY });
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-12 * hi {
            break;
        }
    }
    Ok(hi)
}

/// Laplace transform of the residual Weibull density after `d0` minutes.
#[derive(Debug, Clone, Copy)]
pub struct WeibullDensityTransform {
    pub params: WeibullParams,
    pub d0: f64,
}

impl WeibullDensityTransform {
    pub fn new(params: WeibullParams, d0: f64) -> Self {
        Self { params, d0 }
    }
}

impl TransformEvaluator for WeibullDensityTransform {
    fn eval(&self, u: Complex64) -> Result<Complex64> {
        density_transform(&self.params, self.d0, u)
    }

    fn eval_line(&self, re: f64, im_step: f64, count: usize) -> Result<Vec<Complex64>> {
        let omega = im_step.abs() * count.saturating_sub(1) as f64;
        let grid = DensityGrid::build(&self.params, self.d0, re, omega)?;
        Ok(grid.eval_line(re, im_step, count))
    }
}

/// `integral_0^inf f(x) e^{-ux} dx` for the residual density after `d0`.
pub fn density_transform(p: &WeibullParams, d0: f64, u: Complex64) -> Result<Complex64> {
    if !(u.re > 0.0) {
        return Err(invalid("u", format!("real part must be > 0, got {}", u.re)));
    }
    let grid = DensityGrid::build(p, d0, u.re, u.im.abs())?;
    let v = grid.eval(u);
    if !(v.re.is_finite() && v.im.is_finite()) || v.norm() > 1.0 + 1e-8 {
        return Err(Error::Quadrature { estimate: (v.norm() - 1.0).max(0.0) });
    }
    Ok(v)
}

/// Transform of the survival function `1 - F` given the density transform:
/// `(1 - f~(u)) / u`.
pub fn cdf_transform_term(f_tilde: Complex64, u: Complex64) -> Result<Complex64> {
    if u == Complex64::new(0.0, 0.0) {
        return Err(Error::Domain("cdf transform term undefined at u = 0".into()));
    }
    Ok((1.0 - f_tilde) / u)
}

/// Tail sums `sum_{k=m}^{n_e} C(n_e, k)` for `m = 1..=n_e`.
pub fn euler_weights(n_e: usize) -> Result<Vec<f64>> {
    if !(1..=60).contains(&n_e) {
        return Err(invalid("n_e", format!("must be in 1..=60, got {n_e}")));
    }
    let mut binom = vec![1.0f64; n_e + 1];
    for k in 1..=n_e {
        binom[k] = binom[k - 1] * (n_e + 1 - k) as f64 / k as f64;
    }
    let mut out = vec![0.0; n_e];
    let mut acc = 0.0;
    for m in (1..=n_e).rev() {
        acc += binom[m];
        out[m - 1] = acc;
    }
    Ok(out)
}

/// Valsa–Brančík sum from precomputed transform values at
/// `u_n = (a + i n pi)/t`, `n = 0..=n_t+n_e`.
pub fn valsa_sum(values: &[Complex64], t: f64, settings: &InversionSettings) -> Result<f64> {
    let n_t = settings.n_t;
    let n_e = settings.n_e;
    if values.len() < n_t + n_e + 1 {
        return Err(Error::DimensionMismatch { expected: n_t + n_e + 1, got: values.len() });
    }
    let weights = euler_weights(n_e)?;
    let sign = |n: usize| if n.is_multiple_of(2) { 1.0 } else { -1.0 };
    let mut head = 0.5 * values[0].re;
    for (n, v) in values.iter().enumerate().take(n_t + 1).skip(1) {
        head += sign(n) * v.re;
    }
    let mut tail = 0.0;
    for m in 1..=n_e {
        let n = n_t + m;
        tail += sign(n) * weights[m - 1] * values[n].re;
    }
    tail *= 2f64.powi(-(n_e as i32));
    let out = settings.a.exp() / t * (head + tail);
    if !out.is_finite() {
        return Err(Error::Inversion(format!("non-finite partial sum at t = {t}")));
    }
    Ok(out)
}

fn invert_raw<E: TransformEvaluator + ?Sized>(f: &E, t: f64, s: &InversionSettings) -> Result<f64> {
    let values = f.eval_line(s.a / t, std::f64::consts::PI / t, s.terms())?;
    valsa_sum(&values, t, s)
}

/// Numerical inverse Laplace transform of `f` at `t > 0`.
pub fn invert<E: TransformEvaluator + ?Sized>(f: &E, t: f64, settings: &InversionSettings) -> Result<f64> {
    settings.validate()?;
    if !(t.is_finite() && t > 0.0) {
        return Err(invalid("t", format!("must be > 0, got {t}")));
    }
    let main = invert_raw(f, t, settings)?;
    if !settings.aliasing_correction {
        return Ok(main);
    }
    let alias = invert_raw(f, 3.0 * t, settings)?;
    Ok(main - (-2.0 * settings.a).exp() * alias)
}

/// Accept a raw inverted probability inside the tolerance band and clamp it.
pub fn clamp_probability(raw: f64) -> Result<f64> {
    if !(-PROB_BAND..=1.0 + PROB_BAND).contains(&raw) {
        return Err(Error::Inversion(format!(
            "probability {raw:.6} outside tolerance band [-{PROB_BAND}, 1+{PROB_BAND}]"
        )));
    }
    Ok(raw.clamp(0.0, 1.0))
}

/// Inversion of a transform known to be a probability.
pub fn invert_probability<E: TransformEvaluator + ?Sized>(
    f: &E,
    t: f64,
    settings: &InversionSettings,
) -> Result<f64> {
    clamp_probability(invert(f, t, settings)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn euler_weight_examples() {
        assert_eq!(euler_weights(1).unwrap(), vec![1.0]);
        assert_eq!(euler_weights(3).unwrap(), vec![7.0, 4.0, 1.0]);
        assert_eq!(euler_weights(12).unwrap()[0], 4095.0);
        assert!(euler_weights(0).is_err());
        assert!(euler_weights(61).is_err());
        let w = euler_weights(60).unwrap();
        assert!(w.iter().all(|x| x.is_finite() && *x > 0.0));
        assert!(w.windows(2).all(|p| p[0] >= p[1]));
    }

    #[test]
    fn cdf_term_examples() {
        let u = c(1.3, 0.4);
        assert_eq!(cdf_transform_term(c(1.0, 0.0), u).unwrap(), c(0.0, 0.0));
        assert!((cdf_transform_term(c(0.5, 0.0), c(1.0, 0.0)).unwrap() - c(0.5, 0.0)).norm() < 1e-15);
        assert!((cdf_transform_term(c(0.0, 0.0), u).unwrap() - 1.0 / u).norm() < 1e-15);
        assert!(cdf_transform_term(c(0.5, 0.0), c(0.0, 0.0)).is_err());
    }

    #[test]
    fn exponential_density_transform_matches_analytic() {
        let p = WeibullParams::exponential(1.0).unwrap();
        let v = density_transform(&p, 3.0, c(1.0, 0.0)).unwrap();
        assert!((v - c(0.5, 0.0)).norm() < 1e-8);
        for (lambda, u) in [(0.2, c(0.3, 40.0)), (5.0, c(0.01, 2.0)), (0.5, c(2.0, -7.0))] {
            let p = WeibullParams::exponential(lambda).unwrap();
            let v = density_transform(&p, 11.0, u).unwrap();
            let exact = lambda / (u + lambda);
            assert!((v - exact).norm() < 1e-10, "{v} vs {exact}");
        }
    }

    #[test]
    fn density_transform_near_zero_is_total_mass() {
        let p = WeibullParams::new(0.55, 1.0).unwrap();
        let v = density_transform(&p, 0.0, c(1e-6, 0.0)).unwrap();
        assert!((v - c(1.0, 0.0)).norm() < 1e-5, "{v}");
    }

    #[test]
    fn density_transform_rejects_bad_u() {
        let p = WeibullParams::new(0.55, 0.2).unwrap();
        assert!(density_transform(&p, 0.0, c(0.0, 1.0)).is_err());
        assert!(density_transform(&p, 0.0, c(-1.0, 0.0)).is_err());
    }

    #[test]
    fn line_evaluation_matches_pointwise() {
        let p = WeibullParams::new(0.7, 0.15).unwrap();
        let ev = WeibullDensityTransform::new(p, 4.0);
        let line = ev.eval_line(0.6, 0.3, 40).unwrap();
        for (k, v) in line.iter().enumerate() {
            let direct = density_transform(&p, 4.0, c(0.6, 0.3 * k as f64)).unwrap();
            assert!((v - direct).norm() < 1e-11, "k={k}");
        }
    }

    #[test]
    fn inversion_examples() {
        let s = InversionSettings::default();
        for t in [0.5, 1.0, 10.0, 60.0] {
            let v = invert(&FnTransform(|u: Complex64| 1.0 / u), t, &s).unwrap();
            assert!((v - 1.0).abs() < 1e-6, "t={t}: {v}");
        }
        let v = invert(&FnTransform(|u: Complex64| 1.0 / (u + 1.0)), 1.0, &s).unwrap();
        assert!((v - (-1f64).exp()).abs() < 1e-6);
        let v = invert(&FnTransform(|u: Complex64| 1.0 / (u * u)), 3.0, &s).unwrap();
        assert!((v - 3.0).abs() < 3e-6);
    }

    #[test]
    fn uncorrected_inversion_carries_alias_term() {
        let s = InversionSettings { aliasing_correction: false, ..Default::default() };
        let v = invert(&FnTransform(|u: Complex64| 1.0 / (u * u)), 2.0, &s).unwrap();
        // f(t;a) - f(t) = sum e^{-2na} (2n+1) t
        let alias: f64 = (1..5).map(|n| (-12.0 * n as f64).exp() * (2 * n + 1) as f64 * 2.0).sum();
        assert!((v - 2.0 - alias).abs() < 1e-7, "{}", v - 2.0);
    }

    #[test]
    fn probability_band() {
        assert_eq!(clamp_probability(1.0005).unwrap(), 1.0);
        assert_eq!(clamp_probability(-0.0002).unwrap(), 0.0);
        assert!(clamp_probability(1.01).is_err());
        assert!(clamp_probability(-0.1).is_err());
    }

    #[test]
    fn settings_validation() {
        assert!(InversionSettings { a: 0.0, ..Default::default() }.validate().is_err());
        assert!(InversionSettings { n_t: 0, ..Default::default() }.validate().is_err());
        assert!(InversionSettings { n_e: 61, ..Default::default() }.validate().is_err());
        assert!(invert(&FnTransform(|u: Complex64| 1.0 / u), 0.0, &Default::default()).is_err());
    }
}
