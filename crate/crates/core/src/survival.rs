//! Weibull duration primitives and the Kaplan–Meier estimator.
//!
//! All durations are in minutes. The hazard of a Weibull duration with shape
//! `alpha` and scale multiplier `b` is `b * alpha * d^(alpha - 1)`; the
//! "shifted" variants describe the residual duration of a spell that has
//! already lasted `d0` minutes.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Shape/scale pair of a Weibull proportional-hazards duration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeibullParams {
    alpha: f64,
    b: f64,
}

impl WeibullParams {
    pub fn new(alpha: f64, b: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(invalid("alpha", format!("must be finite and > 0, got {alpha}")));
        }
        if !(b.is_finite() && b > 0.0) {
            return Err(invalid("b", format!("must be finite and > 0, got {b}")));
        }
        Ok(Self { alpha, b })
    }

    /// Exponential special case with constant rate `lambda`.
    pub fn exponential(lambda: f64) -> Result<Self> {
        Self::new(1.0, lambda)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn is_exponential(&self) -> bool {
        self.alpha == 1.0
    }
}

fn check_duration(name: &'static str, d: f64) -> Result<()> {
    if !(d.is_finite() && d >= 0.0) {
        return Err(invalid(name, format!("must be finite and >= 0, got {d}")));
    }
    Ok(())
}

/// `b * alpha * d^(alpha-1)`. Undefined at `d = 0` unless `alpha = 1`.
pub fn hazard(p: &WeibullParams, d: f64) -> Result<f64> {
    check_duration("d", d)?;
    if p.alpha == 1.0 {
        return Ok(p.b);
    }
    if d == 0.0 {
        return Err(Error::Domain(format!(
            "hazard at d = 0 is not finite-valued for alpha = {}",
            p.alpha
        )));
    }
    Ok(p.b * p.alpha * d.powf(p.alpha - 1.0))
}

pub fn cumulative_hazard(p: &WeibullParams, d: f64) -> f64 {
    if d <= 0.0 {
        return 0.0;
    }
    p.b * d.powf(p.alpha)
}

pub fn cdf(p: &WeibullParams, d: f64) -> f64 {
    1.0 - (-cumulative_hazard(p, d)).exp()
}

pub fn survival(p: &WeibullParams, d: f64) -> f64 {
    (-cumulative_hazard(p, d)).exp()
}

pub fn pdf(p: &WeibullParams, d: f64) -> Result<f64> {
    let h = hazard(p, d)?;
    Ok(h * survival(p, d))
}

/// Cumulative hazard accrued between elapsed durations `d0` and `d0 + d`.
///
/// Written as `b d0^a expm1(a ln1p(d/d0))` so that short horizons after a
/// long elapsed duration keep full precision.
pub fn shifted_cumulative_hazard(p: &WeibullParams, d0: f64, d: f64) -> f64 {
    if d <= 0.0 {
        return 0.0;
    }
    if d0 <= 0.0 {
        return cumulative_hazard(p, d);
    }
    p.b * d0.powf(p.alpha) * (p.alpha * (d / d0).ln_1p()).exp_m1()
}

/// Inverse of [`shifted_cumulative_hazard`] in `d`.
pub fn shifted_duration_for_hazard(p: &WeibullParams, d0: f64, h: f64) -> f64 {
    if h <= 0.0 {
        return 0.0;
    }
    if d0 <= 0.0 {
        return (h / p.b).powf(1.0 / p.alpha);
    }
    let base = p.b * d0.powf(p.alpha);
    d0 * ((h / base).ln_1p() / p.alpha).exp_m1()
}

/// Probability that a spell already `d0` minutes old lasts at least `d` more.
pub fn shifted_survival(p: &WeibullParams, d0: f64, d: f64) -> Result<f64> {
    check_duration("d0", d0)?;
    check_duration("d", d)?;
    if d0 == 0.0 {
        return Ok(1.0 - cdf(p, d));
    }
    Ok((-shifted_cumulative_hazard(p, d0, d)).exp())
}

/// Density of the residual duration of a spell already `d0` minutes old.
pub fn shifted_pdf(p: &WeibullParams, d0: f64, d: f64) -> Result<f64> {
    check_duration("d0", d0)?;
    check_duration("d", d)?;
    let h = hazard(p, d0 + d)?;
    Ok(h * (-shifted_cumulative_hazard(p, d0, d)).exp())
}

/// One (possibly right-censored) duration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DurationRecord {
    pub duration: f64,
    pub observed: bool,
}

impl DurationRecord {
    pub fn new(duration: f64, observed: bool) -> Self {
        Self { duration, observed }
    }
}

/// Right-continuous step survival curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSurvival {
    pub times: Vec<f64>,
    pub survival: Vec<f64>,
}

impl StepSurvival {
    /// Survival at `t`: the value at the most recent knot `<= t`, 1 before the first.
    pub fn at(&self, t: f64) -> f64 {
        let idx = self.times.partition_point(|&x| x <= t);
        if idx == 0 {
            1.0
        } else {
            self.survival[idx - 1]
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Product-limit estimator. Knots are placed at distinct observed event
/// times; censorings tied with events leave the risk set after the events.
pub fn kaplan_meier(records: &[DurationRecord]) -> Result<StepSurvival> {
    if records.is_empty() {
        return Err(Error::EmptyInput("kaplan_meier needs at least one record"));
    }
    for r in records {
        check_duration("duration", r.duration)?;
    }
    let mut sorted: Vec<DurationRecord> = records.to_vec();
    // events before censorings at equal times
    sorted.sort_by(|a, b| {
        a.duration
            .total_cmp(&b.duration)
            .then_with(|| b.observed.cmp(&a.observed))
    });

    let mut at_risk = sorted.len();
    let mut s = 1.0;
    let mut times = Vec::new();
    let mut survival = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].duration;
        let mut events = 0usize;
        let mut removed = 0usize;
        while i < sorted.len() && sorted[i].duration == t {
            if sorted[i].observed {
                events += 1;
            }
            removed += 1;
            i += 1;
        }
        if events > 0 {
            s *= 1.0 - events as f64 / at_risk as f64;
            times.push(t);
            survival.push(s);
        }
        at_risk -= removed;
    }
    Ok(StepSurvival { times, survival })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wp(a: f64, b: f64) -> WeibullParams {
        WeibullParams::new(a, b).unwrap()
    }

    #[test]
    fn constructor_rejects_nonpositive() {
        assert!(WeibullParams::new(0.0, 1.0).is_err());
        assert!(WeibullParams::new(1.0, -1.0).is_err());
        assert!(WeibullParams::new(f64::NAN, 1.0).is_err());
    }

    #[test]
    fn hazard_examples() {
        assert_eq!(hazard(&wp(1.0, 0.5), 7.0).unwrap(), 0.5);
        assert_eq!(hazard(&wp(1.0, 0.5), 0.0).unwrap(), 0.5);
        assert!((hazard(&wp(2.0, 1.0), 3.0).unwrap() - 6.0).abs() < 1e-15);
        let h = hazard(&wp(0.65, 0.066), 10.0).unwrap();
        assert!((h - 0.066 * 0.65 * 10f64.powf(-0.35)).abs() < 1e-15);
        assert!((h - 0.01916).abs() < 1e-5);
        assert!(matches!(hazard(&wp(0.65, 0.066), 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn cumulative_hazard_examples() {
        assert!((cumulative_hazard(&wp(1.0, 0.5), 2.0) - 1.0).abs() < 1e-15);
        assert_eq!(cumulative_hazard(&wp(0.3, 9.0), 0.0), 0.0);
        // 0.174 * 30^0.55
        assert!((cumulative_hazard(&wp(0.55, 0.174), 30.0) - 1.129_707_308_5).abs() < 1e-9);
    }

    #[test]
    fn cdf_examples() {
        assert_eq!(cdf(&wp(1.0, 1.0), 0.0), 0.0);
        assert!((cdf(&wp(1.0, 1.0), 2f64.ln()) - 0.5).abs() < 1e-15);
        // 1 - exp(-0.1 * 20^0.65)
        assert!((cdf(&wp(0.65, 0.1), 20.0) - 0.503_872_181_3).abs() < 1e-9);
    }

    #[test]
    fn pdf_examples() {
        assert!((pdf(&wp(1.0, 1.0), 1.0).unwrap() - (-1f64).exp()).abs() < 1e-15);
        assert!((pdf(&wp(2.0, 1.0), 1.0).unwrap() - 2.0 * (-1f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn shifted_examples() {
        let p = wp(0.7, 0.2);
        assert_eq!(shifted_survival(&p, 5.0, 0.0).unwrap(), 1.0);
        let s = shifted_survival(&wp(1.0, 0.3), 10.0, 4.0).unwrap();
        assert!((s - (-1.2f64).exp()).abs() < 1e-14);
        let s = shifted_survival(&wp(0.5, 1.0), 9.0, 7.0).unwrap();
        assert!((s - (-1f64).exp()).abs() < 1e-14);
        let f = shifted_pdf(&wp(1.0, 0.3), 10.0, 4.0).unwrap();
        assert!((f - 0.3 * (-1.2f64).exp()).abs() < 1e-14);
        for d in [0.1, 1.0, 5.0, 40.0] {
            let a = shifted_pdf(&p, 0.0, d).unwrap();
            let b = pdf(&p, d).unwrap();
            assert!((a - b).abs() <= 1e-15 * b);
            assert_eq!(shifted_survival(&p, 0.0, d).unwrap(), 1.0 - cdf(&p, d));
        }
    }

    #[test]
    fn shifted_hazard_inverse_roundtrip() {
        let p = wp(0.55, 0.3);
        for d0 in [0.0, 1e-6, 3.0, 500.0] {
            for d in [1e-9, 0.5, 20.0, 1e4] {
                let h = shifted_cumulative_hazard(&p, d0, d);
                let back = shifted_duration_for_hazard(&p, d0, h);
                assert!((back - d).abs() <= 1e-10 * d, "d0={d0} d={d} back={back}");
            }
        }
    }

    #[test]
    fn kaplan_meier_examples() {
        let recs = [
            DurationRecord::new(2.0, true),
            DurationRecord::new(3.0, false),
            DurationRecord::new(5.0, true),
        ];
        let km = kaplan_meier(&recs).unwrap();
        assert!((km.at(2.0) - 2.0 / 3.0).abs() < 1e-15);
        assert!((km.at(4.0) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(km.at(5.0), 0.0);
        assert_eq!(km.at(1.9), 1.0);

        let all_censored = [DurationRecord::new(1.0, false), DurationRecord::new(4.0, false)];
        let km = kaplan_meier(&all_censored).unwrap();
        assert!(km.is_empty());
        assert_eq!(km.at(100.0), 1.0);

        let km = kaplan_meier(&[DurationRecord::new(1.0, true)]).unwrap();
        assert_eq!(km.at(0.999), 1.0);
        assert_eq!(km.at(1.0), 0.0);

        assert!(matches!(kaplan_meier(&[]), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn kaplan_meier_tie_events_before_censoring() {
        let recs = [
            DurationRecord::new(2.0, false),
            DurationRecord::new(2.0, true),
            DurationRecord::new(3.0, true),
        ];
        let km = kaplan_meier(&recs).unwrap();
        // the censored record at 2 is still at risk for the event at 2
        assert!((km.at(2.0) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(km.at(3.0), 0.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn pdf_is_hazard_times_survival(a in 0.2f64..3.0, b in 0.001f64..5.0, h in 1e-6f64..5.0) {
                let p = wp(a, b);
                // sample through the cumulative hazard: 1 - cdf only carries
                // relative precision while survival is not tiny
                let d = (h / b).powf(1.0 / a);
                let lhs = pdf(&p, d).unwrap();
                let rhs = hazard(&p, d).unwrap() * (1.0 - cdf(&p, d));
                prop_assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1e-300));
            }

            #[test]
            fn exponential_is_memoryless(b in 0.001f64..5.0, d0 in 0.0f64..300.0, d in 0.0f64..100.0) {
                let p = wp(1.0, b);
                let s = shifted_survival(&p, d0, d).unwrap();
                let s0 = shifted_survival(&p, 0.0, d).unwrap();
                prop_assert!((s - s0).abs() <= 1e-12);
            }

            #[test]
            fn cdf_monotone(a in 0.2f64..3.0, b in 0.001f64..5.0, mut grid in proptest::collection::vec(0.0f64..500.0, 2..30)) {
                let p = wp(a, b);
                grid.sort_by(f64::total_cmp);
                for w in grid.windows(2) {
                    prop_assert!(cdf(&p, w[0]) <= cdf(&p, w[1]));
                }
            }

            #[test]
            fn km_without_censoring_is_empirical(ds in proptest::collection::vec(0.0f64..50.0, 1..40)) {
                let recs: Vec<_> = ds.iter().map(|&d| DurationRecord::new(d, true)).collect();
                let km = kaplan_meier(&recs).unwrap();
                let n = ds.len() as f64;
                for &t in &ds {
                    let emp = ds.iter().filter(|&&d| d > t).count() as f64 / n;
                    prop_assert!((km.at(t) - emp).abs() < 1e-12);
                }
            }
        }
    }
}
