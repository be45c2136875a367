//! Maximum-likelihood fitting of the per-state frailty models.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::design::{build_design, DesignLayout, PredictorSpec};
use super::likelihood::{dot, posterior_mean, FitData};
use super::optimize::{minimize, OptimizeOptions};
use crate::error::{invalid, Error, Result};
use crate::spell::{Covariates, Spell};
use crate::survival::WeibullParams;

/// Lower bound on the frailty variance; γ = GAMMA_FLOOR + exp(ψ).
pub const GAMMA_FLOOR: f64 = 1e-8;
/// Fits with γ̂ below this report no detectable frailty.
pub const NO_FRAILTY_THRESHOLD: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartValues {
    pub alpha: f64,
    pub theta: Vec<f64>,
    pub gamma: f64,
}

#[derive(Debug, Clone)]
pub struct FitOptions {
    /// Minutes; longer spells are right-censored here.
    pub censor_horizon: f64,
    /// Holds α at this value (α = 1 gives the exponential/Markov model).
    pub fixed_alpha: Option<f64>,
    pub max_iter: usize,
    pub compute_covariance: bool,
    pub start: Option<StartValues>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { censor_horizon: 60.0, fixed_alpha: None, max_iter: 500, compute_covariance: true, start: None }
    }
}

impl FitOptions {
    pub fn markov() -> Self {
        Self { fixed_alpha: Some(1.0), ..Self::default() }
    }
}

/// Fitted Weibull gamma-frailty model for transitions out of one state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedStateModel {
    pub state: u8,
    pub alpha: f64,
    pub alpha_fixed: bool,
    pub theta: Vec<f64>,
    pub gamma: f64,
    pub no_frailty: bool,
    pub frailty_means: BTreeMap<String, f64>,
    pub layout: DesignLayout,
    pub censor_horizon: f64,
    /// Covariance of `theta`, when the Hessian was invertible.
    pub covariance: Option<Vec<Vec<f64>>>,
    pub alpha_se: Option<f64>,
    pub gamma_se: Option<f64>,
    pub loglik: f64,
    pub n_spells: usize,
    pub n_events: usize,
    pub n_imputed: usize,
    pub converged: bool,
    pub iterations: usize,
    /// Central-difference gradient norm of the mean log-likelihood at the optimum.
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelativeRisk {
    pub name: String,
    pub coefficient: f64,
    pub relative_risk: f64,
    pub se: Option<f64>,
    /// Delta-method standard error of the relative risk.
    pub relative_risk_se: Option<f64>,
}

/// exp(β).
pub fn relative_risk(beta: f64) -> f64 {
    beta.exp()
}

impl FittedStateModel {
    pub fn spec(&self) -> &PredictorSpec {
        &self.layout.spec
    }

    pub fn column_names(&self) -> Vec<String> {
        self.layout.column_names()
    }

    pub fn standard_errors(&self) -> Option<Vec<f64>> {
        self.covariance
            .as_ref()
            .map(|c| (0..c.len()).map(|i| c[i][i].max(0.0).sqrt()).collect())
    }

    pub fn linear_predictor(&self, row: &[f64]) -> Result<f64> {
        linear_predictor(&self.theta, row)
    }

    /// Linear predictor for raw covariates.
    pub fn eta(&self, covariates: &Covariates) -> Result<f64> {
        let (row, _) = self.layout.encode(covariates)?;
        self.linear_predictor(&row)
    }

    /// Posterior frailty mean of a training lot; unseen lots get the prior mean 1.
    pub fn frailty_mean(&self, lot_id: &str) -> f64 {
        self.frailty_means.get(lot_id).copied().unwrap_or(1.0)
    }

    /// Conditional Weibull law of the next sojourn for `lot_id` under `covariates`.
    pub fn weibull_params(&self, lot_id: &str, covariates: &Covariates) -> Result<WeibullParams> {
        let b = (self.eta(covariates)? + self.frailty_mean(lot_id).ln()).exp();
        WeibullParams::new(self.alpha, b)
    }

    /// Recomputes the posterior frailty mean of a known lot from `spells`
    /// (other lots and other states are ignored).
    pub fn frailty_posterior_mean(&self, lot_id: &str, spells: &[Spell]) -> Result<f64> {
        if !self.frailty_means.contains_key(lot_id) {
            return Err(Error::UnknownLot(lot_id.to_string()));
        }
        let mut events = 0;
        let mut h = 0.0;
        for s in spells.iter().filter(|s| s.lot_id == lot_id && s.state == self.state) {
            let s = s.clone().censored_at(self.censor_horizon);
            h += (self.eta(&s.covariates)? + self.alpha * s.duration.ln()).exp();
            events += s.observed as usize;
        }
        Ok(posterior_mean(self.gamma, events, h))
    }

    /// exp of every non-spline coefficient, with delta-method errors when
    /// the covariance is available.
    pub fn relative_risk(&self) -> Vec<RelativeRisk> {
        let names = self.column_names();
        let se = self.standard_errors();
        self.layout
            .linear_columns()
            .into_iter()
            .map(|j| {
                let coef = self.theta[j];
                let rr = relative_risk(coef);
                let s = se.as_ref().map(|v| v[j]);
                RelativeRisk {
                    name: names[j].clone(),
                    coefficient: coef,
                    relative_risk: rr,
                    se: s,
                    relative_risk_se: s.map(|s| s * rr),
                }
            })
            .collect()
    }
}

pub fn linear_predictor(theta: &[f64], row: &[f64]) -> Result<f64> {
    if theta.len() != row.len() {
        return Err(Error::DimensionMismatch { expected: theta.len(), got: row.len() });
    }
    Ok(dot(theta, row))
}

/// Maps between the optimiser vector (log α?, θ, ψ) and model parameters.
struct Param {
    fixed_alpha: Option<f64>,
    p: usize,
}

impl Param {
    fn len(&self) -> usize {
        self.p + 1 + usize::from(self.fixed_alpha.is_none())
    }

    fn offset(&self) -> usize {
        usize::from(self.fixed_alpha.is_none())
    }

    fn unpack<'a>(&self, x: &'a [f64]) -> (f64, &'a [f64], f64) {
        let o = self.offset();
        let alpha = self.fixed_alpha.unwrap_or_else(|| x[0].exp());
        (alpha, &x[o..o + self.p], GAMMA_FLOOR + x[o + self.p].exp())
    }

    fn pack(&self, alpha: f64, theta: &[f64], gamma: f64) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.len());
        if self.fixed_alpha.is_none() {
            x.push(alpha.ln());
        }
        x.extend_from_slice(theta);
        x.push((gamma - GAMMA_FLOOR).max(GAMMA_FLOOR).ln());
        x
    }

    /// Log-likelihood and its gradient with respect to the optimiser vector.
    fn eval(&self, data: &FitData, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (alpha, theta, gamma) = self.unpack(x);
        let g = data.loglik_grad(alpha, theta, gamma)?;
        let mut grad = Vec::with_capacity(self.len());
        if self.fixed_alpha.is_none() {
            grad.push(g.alpha * alpha);
        }
        grad.extend_from_slice(&g.theta);
        grad.push(g.gamma * (gamma - GAMMA_FLOOR));
        Ok((g.value, grad))
    }
}

/// Fits the model for transitions out of `state` from `spells`; spells of
/// the other state are never read.
pub fn fit(spells: &[Spell], state: u8, spec: &PredictorSpec, options: &FitOptions) -> Result<FittedStateModel> {
    if state > 1 {
        return Err(invalid("state", format!("must be 0 or 1, got {state}")));
    }
    if !(options.censor_horizon > 0.0) {
        return Err(invalid("censor_horizon", "must be positive"));
    }
    if let Some(a) = options.fixed_alpha {
        if !(a.is_finite() && a > 0.0) {
            return Err(invalid("fixed_alpha", format!("must be positive, got {a}")));
        }
    }
    let own: Vec<Spell> = spells
        .iter()
        .filter(|s| s.state == state)
        .map(|s| s.clone().censored_at(options.censor_horizon))
        .collect();
    if own.is_empty() {
        return Err(Error::EmptyInput("no spells for the requested state"));
    }
    let design = build_design(&own, spec)?;
    design.check_rank()?;
    let ids: Vec<&str> = own.iter().map(|s| s.lot_id.as_str()).collect();
    let durations: Vec<f64> = own.iter().map(|s| s.duration).collect();
    let observed: Vec<bool> = own.iter().map(|s| s.observed).collect();
    let data = FitData::new(&design, &ids, &durations, &observed)?;
    if data.n_lots() < 2 {
        return Err(Error::Data(format!("need at least 2 lots, got {}", data.n_lots())));
    }
    if data.n_events() == 0 {
        return Err(Error::Data("no observed (uncensored) durations".into()));
    }

    let param = Param { fixed_alpha: options.fixed_alpha, p: design.n_cols };
    let x0 = match &options.start {
        Some(s) if s.theta.len() == design.n_cols && s.alpha > 0.0 && s.gamma >= 0.0 => {
            param.pack(s.alpha, &s.theta, s.gamma.max(1e-4))
        }
        _ => param.pack(1.0, &vec![0.0; design.n_cols], 0.5),
    };
    let n = data.n_spells() as f64;
    let objective = |x: &[f64]| -> Option<(f64, Vec<f64>)> {
        let (v, g) = param.eval(&data, x).ok()?;
        Some((-v / n, g.into_iter().map(|gi| -gi / n).collect()))
    };
    let opts = OptimizeOptions { max_iter: options.max_iter, grad_tol: 1e-8 };
    let result = minimize(objective, &x0, &opts);
    if !result.value.is_finite() {
        return Err(Error::Convergence { iterations: result.iterations, grad_norm: result.grad_norm });
    }
    let x = result.x;
    let (alpha, theta, gamma) = param.unpack(&x);
    let theta = theta.to_vec();
    let loglik = data.loglik(alpha, &theta, gamma)?;
    let grad_norm = fd_gradient_norm(&param, &data, &x) / n;
    let no_frailty = gamma < NO_FRAILTY_THRESHOLD;

    let (covariance, alpha_se, gamma_se) = if options.compute_covariance {
        covariance(&param, &data, &x, no_frailty)
    } else {
        (None, None, None)
    };

    let frailty_means = data.posterior_means(alpha, &theta, gamma).into_iter().collect();
    Ok(FittedStateModel {
        state,
        alpha,
        alpha_fixed: options.fixed_alpha.is_some(),
        theta,
        gamma,
        no_frailty,
        frailty_means,
        layout: design.layout.clone(),
        censor_horizon: options.censor_horizon,
        covariance,
        alpha_se,
        gamma_se,
        loglik,
        n_spells: data.n_spells(),
        n_events: data.n_events(),
        n_imputed: design.imputed.iter().filter(|v| **v).count(),
        converged: result.converged,
        iterations: result.iterations,
        grad_norm,
    })
}

fn fd_step(v: f64) -> f64 {
    1e-5 * v.abs().max(1.0)
}

/// Infinity norm of the central-difference gradient of ℓ.
fn fd_gradient_norm(param: &Param, data: &FitData, x: &[f64]) -> f64 {
    let mut norm: f64 = 0.0;
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        let h = fd_step(x[i]);
        xp[i] = x[i] + h;
        let (a, t, g) = param.unpack(&xp);
        let up = data.loglik(a, t, g);
        xp[i] = x[i] - h;
        let (a, t, g) = param.unpack(&xp);
        let down = data.loglik(a, t, g);
        xp[i] = x[i];
        match (up, down) {
            (Ok(u), Ok(d)) => norm = norm.max(((u - d) / (2.0 * h)).abs()),
            _ => return f64::INFINITY,
        }
    }
    norm
}

type CovarianceParts = (Option<Vec<Vec<f64>>>, Option<f64>, Option<f64>);

/// Inverse of the central-difference Hessian of −ℓ (differencing the analytic
/// gradient). When no frailty is detectable the γ coordinate is left out.
fn covariance(param: &Param, data: &FitData, x: &[f64], no_frailty: bool) -> CovarianceParts {
    let dim = if no_frailty { x.len() - 1 } else { x.len() };
    let mut hess = DMatrix::<f64>::zeros(dim, dim);
    let mut xp = x.to_vec();
    for i in 0..dim {
        let h = fd_step(x[i]);
        xp[i] = x[i] + h;
        let up = param.eval(data, &xp);
        xp[i] = x[i] - h;
        let down = param.eval(data, &xp);
        xp[i] = x[i];
        let (Ok((_, gu)), Ok((_, gd))) = (up, down) else {
            return (None, None, None);
        };
        for j in 0..dim {
            hess[(i, j)] = -(gu[j] - gd[j]) / (2.0 * h);
        }
    }
    let sym = (&hess + hess.transpose()) * 0.5;
    let Some(chol) = sym.cholesky() else {
        return (None, None, None);
    };
    let cov = chol.inverse();
    let o = param.offset();
    let p = param.p;
    let theta_cov = (0..p).map(|i| (0..p).map(|j| cov[(o + i, o + j)]).collect()).collect();
    let (alpha, _, gamma) = param.unpack(x);
    let alpha_se = (o == 1).then(|| alpha * cov[(0, 0)].max(0.0).sqrt());
    let gamma_se = (!no_frailty).then(|| (gamma - GAMMA_FLOOR) * cov[(o + p, o + p)].max(0.0).sqrt());
    (Some(theta_cov), alpha_se, gamma_se)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frailty::design::Term;
    use chrono::{Duration, NaiveDate};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Gamma};

    /// Independent Weibull durations with a lot frailty and a binary
    /// side covariate, no dependence between consecutive spells.
    fn simulate(seed: u64, lots: usize, per_lot: usize, alpha: f64, beta: [f64; 2], gamma: f64) -> Vec<Spell> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frailty = Gamma::new(1.0 / gamma, gamma).unwrap();
        let base = NaiveDate::from_ymd_opt(2019, 6, 3).unwrap().and_hms_opt(8, 0, 0).unwrap();
        let mut out = Vec::new();
        for lot in 0..lots {
            let v: f64 = frailty.sample(&mut rng);
            let side = if lot % 2 == 0 { "west" } else { "east" };
            let eta = beta[0] + if side == "east" { beta[1] } else { 0.0 };
            let b = eta.exp() * v;
            for k in 0..per_lot {
                let u: f64 = rng.gen();
                let d = (-u.ln() / b).powf(1.0 / alpha);
                let start = base + Duration::minutes((k * 37 % 600) as i64);
                out.push(Spell {
                    lot_id: format!("L{lot:03}"),
                    state: 0,
                    start,
                    duration: d,
                    observed: true,
                    covariates: Covariates::at(start, side, Some(0.3)),
                });
            }
        }
        out
    }

    fn side_spec() -> PredictorSpec {
        PredictorSpec { terms: vec![Term::Linear("side".into())] }
    }

    #[test]
    fn recovers_exponential_with_frailty() {
        let spells = simulate(7, 200, 50, 1.0, [-1.0, 0.0], 0.25);
        let opts = FitOptions { censor_horizon: f64::INFINITY, ..FitOptions::default() };
        let m = fit(&spells, 0, &PredictorSpec::intercept_only(), &opts).unwrap();
        assert!(m.converged);
        assert!((m.alpha - 1.0).abs() < 0.05, "alpha {}", m.alpha);
        assert!((m.theta[0] + 1.0).abs() < 0.15, "intercept {}", m.theta[0]);
        assert!((m.gamma - 0.25).abs() < 0.1, "gamma {}", m.gamma);
        assert!(m.grad_norm < 1e-3);
        assert!(m.frailty_means.values().all(|v| *v > 0.0));
    }

    #[test]
    fn recovers_weibull_shape_and_effect_under_censoring() {
        let spells = simulate(11, 150, 40, 0.65, [-2.0, 0.4], 0.3);
        let m = fit(&spells, 0, &side_spec(), &FitOptions::default()).unwrap();
        assert!(m.converged);
        assert!((m.alpha - 0.65).abs() < 0.05, "alpha {}", m.alpha);
        let se = m.standard_errors().unwrap();
        assert!((m.theta[1] - 0.4).abs() < 3.0 * se[1] + 1e-9, "beta {} se {}", m.theta[1], se[1]);
        assert!(m.alpha_se.unwrap() > 0.0);
        let rr = m.relative_risk();
        assert_eq!(rr.len(), 2);
        assert_eq!(rr[1].name, "east");
        assert!((rr[1].relative_risk - m.theta[1].exp()).abs() < 1e-15);
    }

    #[test]
    fn fixed_alpha_fit_keeps_shape() {
        let spells = simulate(3, 40, 20, 0.7, [-1.5, 0.0], 0.2);
        let m = fit(&spells, 0, &PredictorSpec::intercept_only(), &FitOptions::markov()).unwrap();
        assert_eq!(m.alpha, 1.0);
        assert!(m.alpha_fixed);
        assert!(m.alpha_se.is_none());
    }

    #[test]
    fn no_frailty_is_detected() {
        let mut spells = simulate(5, 100, 30, 1.0, [-1.0, 0.0], 1.0);
        // Reassign durations so that all lots share one rate.
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for s in &mut spells {
            let u: f64 = rng.gen();
            s.duration = -u.ln() / f64::exp(-1.0);
        }
        let opts = FitOptions { censor_horizon: f64::INFINITY, ..FitOptions::default() };
        let m = fit(&spells, 0, &PredictorSpec::intercept_only(), &opts).unwrap();
        assert!(m.gamma < 0.05, "gamma {}", m.gamma);
        assert!(m.covariance.is_some());
    }

    #[test]
    fn other_state_rows_are_never_read() {
        let spells = simulate(13, 30, 20, 0.8, [-1.0, 0.0], 0.3);
        let clean = fit(&spells, 0, &side_spec(), &FitOptions::default()).unwrap();
        let mut corrupted = spells.clone();
        for k in 0..50 {
            let mut s = spells[k].clone();
            s.state = 1;
            s.duration = 1e9 * (k as f64 + 1.0);
            s.covariates.side = "nowhere".into();
            s.covariates.hour = f64::NAN;
            s.lot_id = format!("bogus{k}");
            corrupted.push(s);
        }
        let dirty = fit(&corrupted, 0, &side_spec(), &FitOptions::default()).unwrap();
        assert_eq!(clean, dirty);
    }

    #[test]
    fn fit_preconditions() {
        let spells = simulate(1, 1, 10, 1.0, [-1.0, 0.0], 0.3);
        assert!(fit(&spells, 0, &PredictorSpec::intercept_only(), &FitOptions::default()).is_err());
        let mut spells = simulate(1, 3, 10, 1.0, [-1.0, 0.0], 0.3);
        for s in &mut spells {
            s.observed = false;
        }
        assert!(fit(&spells, 0, &PredictorSpec::intercept_only(), &FitOptions::default()).is_err());
        assert!(fit(&spells, 2, &PredictorSpec::intercept_only(), &FitOptions::default()).is_err());
    }

    #[test]
    fn posterior_mean_of_training_lot_matches_stored_value() {
        let spells = simulate(21, 20, 15, 0.9, [-1.0, 0.3], 0.5);
        let m = fit(&spells, 0, &side_spec(), &FitOptions::default()).unwrap();
        let v = m.frailty_posterior_mean("L004", &spells).unwrap();
        assert!((v - m.frailty_means["L004"]).abs() < 1e-12);
        assert!(matches!(m.frailty_posterior_mean("nope", &spells), Err(Error::UnknownLot(_))));
        // no spells: prior mean
        assert_eq!(m.frailty_posterior_mean("L004", &[]).unwrap(), 1.0);
    }

    #[test]
    fn linear_predictor_examples() {
        assert_eq!(linear_predictor(&[1.0, 2.0], &[1.0, 3.0]).unwrap(), 7.0);
        assert_eq!(linear_predictor(&[0.0; 3], &[1.0, 0.4, 2.0]).unwrap(), 0.0);
        assert_eq!(linear_predictor(&[-2.721, 0.0, 0.0], &[1.0, 0.0, 0.0]).unwrap(), -2.721);
        assert!(linear_predictor(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn relative_risk_values() {
        assert_eq!(relative_risk(0.0), 1.0);
        // published effects carry three decimals, so exp of the rounded
        // effect can miss the published risk by up to about 5e-4 * RR
        assert!((relative_risk(1.078) - 2.940).abs() < 2e-3);
        assert!((relative_risk(-0.371) - 0.690).abs() < 5e-4);
    }
}
