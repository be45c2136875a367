//! Gamma-frailty marginal log-likelihood of Weibull proportional hazards.

use rayon::prelude::*;

use super::design::Design;
use crate::error::{Error, Result};

/// Spells grouped by lot with their design rows, ready for likelihood
/// evaluation. Rows of one lot are contiguous.
#[derive(Debug, Clone)]
pub struct FitData {
    pub n_cols: usize,
    x: Vec<f64>,
    log_d: Vec<f64>,
    observed: Vec<bool>,
    lots: Vec<LotBlock>,
}

#[derive(Debug, Clone)]
struct LotBlock {
    id: String,
    start: usize,
    end: usize,
    events: usize,
    /// Σ δ·log d over the lot.
    sum_event_log_d: f64,
}

/// Per-lot contribution with derivatives.
struct LotTerms {
    value: f64,
    d_theta: Vec<f64>,
    d_alpha: f64,
    d_gamma: f64,
}

impl FitData {
    /// `lot_ids[i]`, `durations[i]` and `observed[i]` describe design row `i`.
    pub fn new(design: &Design, lot_ids: &[&str], durations: &[f64], observed: &[bool]) -> Result<Self> {
        let n = design.n_rows;
        for len in [lot_ids.len(), durations.len(), observed.len()] {
            if len != n {
                return Err(Error::DimensionMismatch { expected: n, got: len });
            }
        }
        if n == 0 {
            return Err(Error::EmptyInput("likelihood data"));
        }
        if let Some(d) = durations.iter().find(|d| !(d.is_finite() && **d > 0.0)) {
            return Err(Error::Data(format!("durations must be positive and finite, got {d}")));
        }
        // Stable grouping by lot id keeps the row order within each lot.
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| lot_ids[a].cmp(lot_ids[b]));
        let p = design.n_cols;
        let mut x = Vec::with_capacity(n * p);
        let mut log_d = Vec::with_capacity(n);
        let mut obs = Vec::with_capacity(n);
        let mut lots: Vec<LotBlock> = Vec::new();
        for (pos, &i) in order.iter().enumerate() {
            x.extend_from_slice(design.row(i));
            let ld = durations[i].ln();
            log_d.push(ld);
            obs.push(observed[i]);
            let same = lots.last().is_some_and(|l| l.id == lot_ids[i]);
            if !same {
                lots.push(LotBlock {
                    id: lot_ids[i].to_string(),
                    start: pos,
                    end: pos,
                    events: 0,
                    sum_event_log_d: 0.0,
                });
            }
            let lot = lots.last_mut().expect("lot block exists");
            lot.end = pos + 1;
            if observed[i] {
                lot.events += 1;
                lot.sum_event_log_d += ld;
            }
        }
        Ok(Self { n_cols: p, x, log_d, observed: obs, lots })
    }

    pub fn n_lots(&self) -> usize {
        self.lots.len()
    }

    pub fn n_spells(&self) -> usize {
        self.log_d.len()
    }

    pub fn n_events(&self) -> usize {
        self.lots.iter().map(|l| l.events).sum()
    }

    pub fn lot_ids(&self) -> impl Iterator<Item = &str> {
        self.lots.iter().map(|l| l.id.as_str())
    }

    fn row(&self, k: usize) -> &[f64] {
        &self.x[k * self.n_cols..(k + 1) * self.n_cols]
    }

    /// Event count and cumulative hazard Σ exp(η)·d^α per lot.
    pub fn lot_hazards(&self, alpha: f64, theta: &[f64]) -> Vec<(usize, f64)> {
        self.lots
            .iter()
            .map(|lot| {
                let h = (lot.start..lot.end)
                    .map(|k| (dot(self.row(k), theta) + alpha * self.log_d[k]).exp())
                    .sum();
                (lot.events, h)
            })
            .collect()
    }

    fn lot_terms(&self, lot: &LotBlock, alpha: f64, theta: &[f64], gamma: f64, grad: bool) -> LotTerms {
        let p = self.n_cols;
        let mut h = 0.0;
        let mut event_eta = 0.0;
        let mut dh_theta = vec![0.0; if grad { p } else { 0 }];
        let mut d_theta = vec![0.0; if grad { p } else { 0 }];
        let mut dh_alpha = 0.0;
        for k in lot.start..lot.end {
            let row = self.row(k);
            let eta = dot(row, theta);
            let c = (eta + alpha * self.log_d[k]).exp();
            h += c;
            if self.observed[k] {
                event_eta += eta;
            }
            if grad {
                for j in 0..p {
                    dh_theta[j] += c * row[j];
                    if self.observed[k] {
                        d_theta[j] += row[j];
                    }
                }
                dh_alpha += c * self.log_d[k];
            }
        }
        let events = lot.events as f64;
        let mut value = event_eta + events * alpha.ln() + (alpha - 1.0) * lot.sum_event_log_d;
        // weight of ∂H in ∂ℓ/∂H, equal to (1/γ + Δ)·γ/(1 + γH)
        let w;
        let mut d_gamma = 0.0;
        if gamma == 0.0 {
            value -= h;
            w = 1.0;
        } else {
            let x = gamma * h;
            for m in 1..lot.events {
                let mg = m as f64 * gamma;
                value += mg.ln_1p();
                if grad {
                    d_gamma += m as f64 / (1.0 + mg);
                }
            }
            value -= (1.0 / gamma + events) * x.ln_1p();
            w = (1.0 + events * gamma) / (1.0 + x);
            if grad {
                d_gamma += log1p_minus_ratio(x) / (gamma * gamma) - events * h / (1.0 + x);
            }
        }
        if grad {
            for j in 0..p {
                d_theta[j] -= w * dh_theta[j];
            }
        }
        let d_alpha = events / alpha + lot.sum_event_log_d - w * dh_alpha;
        LotTerms { value, d_theta, d_alpha, d_gamma }
    }

    fn accumulate(&self, alpha: f64, theta: &[f64], gamma: f64, grad: bool) -> Result<LotTerms> {
        validate(alpha, theta.len(), self.n_cols, gamma)?;
        // Per-lot terms are computed in parallel but summed in a fixed order so
        // the result does not depend on the thread count.
        let parts: Vec<LotTerms> =
            self.lots.par_iter().map(|lot| self.lot_terms(lot, alpha, theta, gamma, grad)).collect();
        let mut total = LotTerms {
            value: 0.0,
            d_theta: vec![0.0; if grad { self.n_cols } else { 0 }],
            d_alpha: 0.0,
            d_gamma: 0.0,
        };
        for part in parts {
            total.value += part.value;
            total.d_alpha += part.d_alpha;
            total.d_gamma += part.d_gamma;
            for (t, v) in total.d_theta.iter_mut().zip(&part.d_theta) {
                *t += v;
            }
        }
        if !total.value.is_finite() {
            return Err(Error::Domain(format!(
                "marginal log-likelihood is not finite at alpha={alpha}, gamma={gamma}"
            )));
        }
        Ok(total)
    }

    /// Marginal log-likelihood; `gamma == 0` gives the frailty-free limit.
    pub fn loglik(&self, alpha: f64, theta: &[f64], gamma: f64) -> Result<f64> {
        Ok(self.accumulate(alpha, theta, gamma, false)?.value)
    }

    /// Log-likelihood with its gradient in (α, θ, γ).
    pub fn loglik_grad(&self, alpha: f64, theta: &[f64], gamma: f64) -> Result<Gradient> {
        let t = self.accumulate(alpha, theta, gamma, true)?;
        Ok(Gradient { value: t.value, alpha: t.d_alpha, theta: t.d_theta, gamma: t.d_gamma })
    }

    /// Posterior frailty means (1 + γΔ)/(1 + γH) keyed by lot, in lot order.
    pub fn posterior_means(&self, alpha: f64, theta: &[f64], gamma: f64) -> Vec<(String, f64)> {
        self.lots
            .iter()
            .zip(self.lot_hazards(alpha, theta))
            .map(|(lot, (events, h))| (lot.id.clone(), posterior_mean(gamma, events, h)))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct Gradient {
    pub value: f64,
    pub alpha: f64,
    pub theta: Vec<f64>,
    pub gamma: f64,
}

/// Gamma posterior mean of a lot's frailty given its event count and
/// cumulative hazard.
pub fn posterior_mean(gamma: f64, events: usize, cumulative_hazard: f64) -> f64 {
    (1.0 + gamma * events as f64) / (1.0 + gamma * cumulative_hazard)
}

fn validate(alpha: f64, got: usize, expected: usize, gamma: f64) -> Result<()> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::Domain(format!("alpha must be positive, got {alpha}")));
    }
    if !(gamma.is_finite() && gamma >= 0.0) {
        return Err(Error::Domain(format!("gamma must be non-negative, got {gamma}")));
    }
    if got != expected {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// log(1 + x) − x/(1 + x), accurate for small x.
fn log1p_minus_ratio(x: f64) -> f64 {
    if x < 1e-3 {
        x * x * (0.5 - x * (2.0 / 3.0 - x * (0.75 - 0.8 * x)))
    } else {
        x.ln_1p() - x / (1.0 + x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frailty::design::{build_design, PredictorSpec};
    use crate::spell::{Covariates, Spell};
    use chrono::NaiveDate;

    fn spells(ds: &[(&str, f64, bool)]) -> Vec<Spell> {
        let start = NaiveDate::from_ymd_opt(2019, 6, 3).unwrap().and_hms_opt(9, 0, 0).unwrap();
        ds.iter()
            .map(|(lot, d, obs)| Spell {
                lot_id: lot.to_string(),
                state: 0,
                start,
                duration: *d,
                observed: *obs,
                covariates: Covariates::at(start, "west", Some(0.5)),
            })
            .collect()
    }

    fn data(ds: &[(&str, f64, bool)]) -> FitData {
        let s = spells(ds);
        let design = build_design(&s, &PredictorSpec::intercept_only()).unwrap();
        let ids: Vec<&str> = s.iter().map(|s| s.lot_id.as_str()).collect();
        let d: Vec<f64> = s.iter().map(|s| s.duration).collect();
        let o: Vec<bool> = s.iter().map(|s| s.observed).collect();
        FitData::new(&design, &ids, &d, &o).unwrap()
    }

    #[test]
    fn single_spell_closed_form() {
        // 4∫v² e^{-3v} dv = 8/27 for α=1, θ=0, γ=0.5, d=1, δ=1
        let fd = data(&[("A", 1.0, true)]);
        let ll = fd.loglik(1.0, &[0.0], 0.5).unwrap();
        assert!((ll - (8.0f64 / 27.0).ln()).abs() < 1e-12, "{ll}");
    }

    #[test]
    fn gamma_zero_is_weibull_loglik() {
        let fd = data(&[("A", 2.0, true), ("A", 5.0, false), ("B", 0.5, true)]);
        let (alpha, b0) = (0.7, -1.2);
        let ll = fd.loglik(alpha, &[b0], 0.0).unwrap();
        let b = f64::exp(b0);
        let mut expect = 0.0;
        for (d, obs) in [(2.0f64, true), (5.0, false), (0.5, true)] {
            expect -= b * d.powf(alpha);
            if obs {
                expect += (b * alpha * d.powf(alpha - 1.0)).ln();
            }
        }
        assert!((ll - expect).abs() < 1e-12);
        let near = fd.loglik(alpha, &[b0], 1e-6).unwrap();
        assert!((near - expect).abs() < 1e-3);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let fd = data(&[("A", 2.0, true), ("A", 5.0, false), ("A", 1.5, true), ("B", 0.5, true), ("C", 7.0, false)]);
        for gamma in [1e-7, 0.3, 2.5] {
            let (alpha, theta) = (0.8, [-0.9]);
            let g = fd.loglik_grad(alpha, &theta, gamma).unwrap();
            let h = 1e-6;
            let fa = (fd.loglik(alpha + h, &theta, gamma).unwrap() - fd.loglik(alpha - h, &theta, gamma).unwrap())
                / (2.0 * h);
            let ft = (fd.loglik(alpha, &[theta[0] + h], gamma).unwrap()
                - fd.loglik(alpha, &[theta[0] - h], gamma).unwrap())
                / (2.0 * h);
            let hg = h * gamma.max(1e-3);
            let fg = (fd.loglik(alpha, &theta, gamma + hg).unwrap()
                - fd.loglik(alpha, &theta, (gamma - hg).max(0.0)).unwrap())
                / (gamma + hg - (gamma - hg).max(0.0));
            assert!((g.alpha - fa).abs() < 1e-6, "alpha {} {}", g.alpha, fa);
            assert!((g.theta[0] - ft).abs() < 1e-6, "theta {} {}", g.theta[0], ft);
            assert!((g.gamma - fg).abs() < 1e-4 * (1.0 + fg.abs()), "gamma {} {}", g.gamma, fg);
        }
    }

    #[test]
    fn permuting_spells_within_lot_is_invariant() {
        let a = data(&[("A", 2.0, true), ("A", 5.0, false), ("B", 1.0, true), ("A", 1.5, true)]);
        let b = data(&[("A", 1.5, true), ("B", 1.0, true), ("A", 5.0, false), ("A", 2.0, true)]);
        let la = a.loglik(0.6, &[-0.4], 0.8).unwrap();
        let lb = b.loglik(0.6, &[-0.4], 0.8).unwrap();
        assert!((la - lb).abs() < 1e-12);
        assert_eq!(a.n_lots(), 2);
        assert_eq!(a.n_events(), 3);
    }

    #[test]
    fn posterior_mean_examples() {
        assert_eq!(posterior_mean(0.4, 0, 0.0), 1.0);
        let fd = data(&[("A", 1.0, true)]);
        let means = fd.posterior_means(1.0, &[0.0], 1.0);
        assert_eq!(means, vec![("A".to_string(), 1.0)]);
    }

    #[test]
    fn rejects_bad_parameters() {
        let fd = data(&[("A", 1.0, true)]);
        assert!(fd.loglik(0.0, &[0.0], 0.5).is_err());
        assert!(fd.loglik(1.0, &[0.0], -0.1).is_err());
        assert!(fd.loglik(1.0, &[0.0, 1.0], 0.5).is_err());
    }
}
