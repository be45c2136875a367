//! Rolling prediction experiment comparing the predictors on held-out days.

use std::collections::BTreeMap;
use std::io::Write;

use chrono::{Duration, NaiveDate, NaiveDateTime};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::roc::{roc, RocCurve, Thresholds, DEFAULT_GRID};
use crate::data::events::{csv_field, format_timestamp, EventRecord};
use crate::data::spells::{build_spells, GapPolicy, RecordIndex, SpellOptions};
use crate::error::{invalid, Error, Result};
use crate::frailty::{fit, FitOptions, FittedStateModel, PredictorSpec, StartValues};
use crate::laplace::InversionSettings;
use crate::network::{nearby_fraction, Network};
use crate::semimarkov::{predict_free, LotSnapshot, PredictorKind};
use crate::spell::Covariates;

/// How evaluation days are assigned to replications.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum DayMode {
    /// Replication r uses day r mod D, covering every day evenly.
    Cycle,
    /// Each replication draws its day uniformly.
    Uniform,
}

impl std::str::FromStr for DayMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cycle" | "exhaustive" => Ok(Self::Cycle),
            "uniform" => Ok(Self::Uniform),
            other => Err(invalid("day-mode", format!("expected `cycle` or `uniform`, got `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub replications: usize,
    /// First and last (inclusive) evaluation day.
    pub eval_days: (NaiveDate, NaiveDate),
    pub day_mode: DayMode,
    /// Hours of day within which t0 is drawn uniformly.
    pub t0_window: (f64, f64),
    /// Prediction horizons in minutes.
    pub horizons: Vec<f64>,
    pub radius_m: f64,
    pub center_shift_m: f64,
    pub nearby_radius_m: f64,
    pub lookback_days: i64,
    pub kinds: Vec<PredictorKind>,
    pub spec: PredictorSpec,
    pub fit_window_hours: (f64, f64),
    pub censor_horizon: f64,
    #[serde(serialize_with = "serialize_gap_policy")]
    pub gap_policy: GapPolicy,
    #[serde(serialize_with = "serialize_inversion")]
    pub inversion: InversionSettings,
    pub roc_grid: usize,
    /// Scenario redraws allowed per replication when no lot is active.
    pub max_redraws: usize,
}

fn serialize_gap_policy<S: serde::Serializer>(g: &GapPolicy, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&g.to_string())
}

fn serialize_inversion<S: serde::Serializer>(i: &InversionSettings, s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeStruct;
    let mut st = s.serialize_struct("InversionSettings", 4)?;
    st.serialize_field("a", &i.a)?;
    st.serialize_field("n_t", &i.n_t)?;
    st.serialize_field("n_e", &i.n_e)?;
    st.serialize_field("aliasing_correction", &i.aliasing_correction)?;
    st.end()
}

impl ExperimentConfig {
    /// Defaults for evaluating `eval_days` with the standard model.
    pub fn new(eval_days: (NaiveDate, NaiveDate)) -> Self {
        Self {
            seed: 1,
            replications: 100,
            eval_days,
            day_mode: DayMode::Cycle,
            t0_window: (10.0, 12.0),
            horizons: vec![10.0, 30.0],
            radius_m: 250.0,
            center_shift_m: 50.0,
            nearby_radius_m: 50.0,
            lookback_days: 30,
            kinds: PredictorKind::ALL.to_vec(),
            spec: PredictorSpec::standard(2, 10),
            fit_window_hours: (8.0, 20.0),
            censor_horizon: 60.0,
            gap_policy: GapPolicy::Censor,
            inversion: InversionSettings::default(),
            roc_grid: DEFAULT_GRID,
            max_redraws: 20,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(invalid("replications", "must be at least 1"));
        }
        if self.eval_days.1 < self.eval_days.0 {
            return Err(invalid("eval_days", "last day precedes first day"));
        }
        let (a, b) = self.t0_window;
        if !(0.0..=24.0).contains(&a) || !(0.0..=24.0).contains(&b) || b <= a {
            return Err(invalid("t0_window", format!("needs 0 <= from < to <= 24, got ({a}, {b})")));
        }
        if self.horizons.is_empty() || self.horizons.iter().any(|h| !(*h > 0.0 && h.is_finite())) {
            return Err(invalid("horizons", "need at least one positive horizon"));
        }
        if self.kinds.is_empty() {
            return Err(invalid("kinds", "need at least one predictor"));
        }
        if self.lookback_days < 1 {
            return Err(invalid("lookback_days", "must be at least 1"));
        }
        self.inversion.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionOutcome {
    pub scenario_id: usize,
    pub lot: usize,
    pub marker: String,
    pub kind: PredictorKind,
    pub t0: NaiveDateTime,
    pub tf: f64,
    pub p_free: f64,
    pub truth: u8,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ExperimentDiagnostics {
    pub scenario_redraws: usize,
    pub inactive_lots: usize,
    /// Predictions without a record covering t0 + tf.
    pub missing_truth: usize,
    pub fits: usize,
    pub unconverged_fits: usize,
    pub prediction_failures: usize,
}

#[derive(Debug, Clone)]
pub struct CurveSummary {
    pub kind: PredictorKind,
    pub tf: f64,
    pub curve: RocCurve,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub outcomes: Vec<PredictionOutcome>,
    pub curves: Vec<CurveSummary>,
    pub diagnostics: ExperimentDiagnostics,
}

impl ExperimentResult {
    pub fn auc(&self, kind: PredictorKind, tf: f64) -> Option<f64> {
        self.curves.iter().find(|c| c.kind == kind && c.tf == tf).map(|c| c.curve.auc)
    }
}

/// Everything needed to describe a lot at a prediction instant.
pub struct SnapshotContext<'a> {
    pub index: &'a RecordIndex<'a>,
    pub network: &'a Network,
    neighbors: Vec<Vec<usize>>,
}

impl<'a> SnapshotContext<'a> {
    pub fn new(index: &'a RecordIndex<'a>, network: &'a Network, nearby_radius: f64) -> Self {
        Self { index, network, neighbors: network.neighbors(nearby_radius) }
    }

    /// Covariates at `t0` for the model of durations in `model_state`.
    pub fn covariates(&self, lot: usize, t0: NaiveDateTime, model_state: u8) -> Covariates {
        let state_of = |k: usize| self.index.state_at(&self.network.placements[k].lot_id, t0);
        let nearby = nearby_fraction(&self.neighbors[lot], 1 - model_state, state_of);
        Covariates::at(t0, self.network.placements[lot].side.clone(), nearby)
    }

    /// Snapshot of placed lot `lot` at `t0` under `models`, or `None` when
    /// no record covers `t0`. Intensities are frozen at `t0`.
    pub fn snapshot(&self, lot: usize, t0: NaiveDateTime, models: &[FittedStateModel; 2]) -> Result<Option<LotSnapshot>> {
        let marker = self.network.placements[lot].lot_id.as_str();
        let Some(current) = self.index.covering(marker, t0) else {
            return Ok(None);
        };
        let elapsed = (t0 - current.start).num_seconds() as f64 / 60.0;
        let params = [
            models[0].weibull_params(marker, &self.covariates(lot, t0, 0))?,
            models[1].weibull_params(marker, &self.covariates(lot, t0, 1))?,
        ];
        LotSnapshot::new(marker, current.state, elapsed, params).map(Some)
    }
}

struct Scenario {
    id: usize,
    day: NaiveDate,
    t0: NaiveDateTime,
    lots: Vec<usize>,
}

/// The fitted models for one training window.
struct DayModels {
    weibull: Option<[FittedStateModel; 2]>,
    markov: Option<[FittedStateModel; 2]>,
}

fn fit_pair(
    spells: &[crate::spell::Spell],
    spec: &PredictorSpec,
    base: &FitOptions,
    warm: Option<&[FittedStateModel; 2]>,
) -> Result<[FittedStateModel; 2]> {
    let one = |state: u8| {
        let start = warm.map(|w| {
            let m = &w[state as usize];
            StartValues { alpha: m.alpha, theta: m.theta.clone(), gamma: m.gamma }
        });
        fit(spells, state, spec, &FitOptions { start, ..base.clone() })
    };
    Ok([one(0)?, one(1)?])
}

/// Runs the experiment on `records` observed on `network`.
pub fn run_experiment(records: &[EventRecord], network: &Network, cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let index = RecordIndex::new(records);
    let lot_index = network.lot_index();
    let ctx = SnapshotContext::new(&index, network, cfg.nearby_radius_m);
    let first_record = records
        .iter()
        .map(|r| r.start)
        .min()
        .ok_or(Error::EmptyInput("no event records"))?;
    let earliest_eval = first_record.date() + Duration::days(cfg.lookback_days);
    if cfg.eval_days.0 < earliest_eval {
        return Err(Error::Data(format!(
            "insufficient history: evaluation starts {} but {} days of lookback need data from {}",
            cfg.eval_days.0,
            cfg.lookback_days,
            cfg.eval_days.0 - Duration::days(cfg.lookback_days)
        )));
    }
    let days: Vec<NaiveDate> = cfg.eval_days.0.iter_days().take_while(|d| *d <= cfg.eval_days.1).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut diag = ExperimentDiagnostics::default();

    // Scenario draws are sequential so they do not depend on the thread count.
    let mut scenarios = Vec::with_capacity(cfg.replications);
    for id in 0..cfg.replications {
        let mut found = None;
        for _ in 0..=cfg.max_redraws {
            let day = match cfg.day_mode {
                DayMode::Cycle => days[id % days.len()],
                DayMode::Uniform => days[rng.gen_range(0..days.len())],
            };
            let (a, b) = cfg.t0_window;
            let secs = (a * 3600.0 + rng.gen::<f64>() * (b - a) * 3600.0).floor() as i64;
            let t0 = day.and_hms_opt(0, 0, 0).expect("midnight") + Duration::seconds(secs);
            let center = network.sample_scenario_center(cfg.center_shift_m, &mut rng)?;
            let mut lots = Vec::new();
            for (lot_id, _) in network.lots_within(center, cfg.radius_m) {
                if index.covering(&lot_id, t0).is_some() {
                    lots.push(lot_index[lot_id.as_str()]);
                } else {
                    diag.inactive_lots += 1;
                }
            }
            if lots.is_empty() {
                diag.scenario_redraws += 1;
                continue;
            }
            found = Some(Scenario { id, day, t0, lots });
            break;
        }
        match found {
            Some(s) => scenarios.push(s),
            None => return Err(Error::Data(format!("replication {id}: no active lots after redraws"))),
        }
    }

    // Fits per training window, in day order so each warm-starts the next.
    let needs_weibull = cfg.kinds.iter().any(|k| *k != PredictorKind::Markov);
    let needs_markov = cfg.kinds.contains(&PredictorKind::Markov);
    let spell_opts = SpellOptions {
        window_hours: cfg.fit_window_hours,
        dates: (None, None),
        censor_horizon: cfg.censor_horizon,
        gap_policy: cfg.gap_policy,
        nearby_radius: cfg.nearby_radius_m,
    };
    let all_spells = build_spells(records, Some(network), &spell_opts);
    let base = FitOptions { censor_horizon: cfg.censor_horizon, compute_covariance: false, ..FitOptions::default() };
    let mut needed: Vec<NaiveDate> = scenarios.iter().map(|s| s.day).collect();
    needed.sort();
    needed.dedup();
    let mut models: BTreeMap<NaiveDate, DayModels> = BTreeMap::new();
    let mut prev: Option<NaiveDate> = None;
    for day in needed {
        let from = day - Duration::days(cfg.lookback_days);
        let train: Vec<_> = all_spells
            .iter()
            .filter(|s| s.start.date() >= from && s.start.date() < day)
            .cloned()
            .collect();
        let warm = prev.and_then(|p| models.get(&p));
        let weibull = if needs_weibull {
            Some(fit_pair(&train, &cfg.spec, &base, warm.and_then(|m| m.weibull.as_ref()))?)
        } else {
            None
        };
        let markov = if needs_markov {
            let opts = FitOptions { fixed_alpha: Some(1.0), ..base.clone() };
            Some(fit_pair(&train, &cfg.spec, &opts, warm.and_then(|m| m.markov.as_ref()))?)
        } else {
            None
        };
        for pair in [&weibull, &markov].into_iter().flatten() {
            diag.fits += 2;
            diag.unconverged_fits += pair.iter().filter(|m| !m.converged).count();
        }
        models.insert(day, DayModels { weibull, markov });
        prev = Some(day);
    }

    // Predictions parallelise over scenarios; results keep scenario order.
    type Row = (Vec<PredictionOutcome>, usize, usize);
    let rows: Vec<Result<Row>> = scenarios
        .par_iter()
        .map(|sc| {
            let day_models = &models[&sc.day];
            let mut out = Vec::new();
            let mut missing = 0;
            let mut failures = 0;
            for &lot in &sc.lots {
                let marker = network.placements[lot].lot_id.as_str();
                let weibull = day_models.weibull.as_ref().map(|m| ctx.snapshot(lot, sc.t0, m)).transpose()?.flatten();
                let markov = day_models.markov.as_ref().map(|m| ctx.snapshot(lot, sc.t0, m)).transpose()?.flatten();
                for &tf in &cfg.horizons {
                    let t_end = sc.t0 + Duration::milliseconds((tf * 60_000.0).round() as i64);
                    let Some(truth) = index.state_at(marker, t_end) else {
                        missing += cfg.kinds.len();
                        continue;
                    };
                    for &kind in &cfg.kinds {
                        let snapshot = if kind == PredictorKind::Markov { &markov } else { &weibull };
                        let snapshot = snapshot.as_ref().expect("active lot with fitted models");
                        match predict_free(snapshot, tf, kind, &cfg.inversion) {
                            Ok(p_free) => out.push(PredictionOutcome {
                                scenario_id: sc.id,
                                lot,
                                marker: marker.to_string(),
                                kind,
                                t0: sc.t0,
                                tf,
                                p_free,
                                truth,
                            }),
                            Err(_) => failures += 1,
                        }
                    }
                }
            }
            Ok((out, missing, failures))
        })
        .collect();
    let mut outcomes = Vec::new();
    for row in rows {
        let (o, missing, failures) = row?;
        outcomes.extend(o);
        diag.missing_truth += missing;
        diag.prediction_failures += failures;
    }

    let mut curves = Vec::new();
    for &tf in &cfg.horizons {
        for &kind in &cfg.kinds {
            let pairs: Vec<(f64, u8)> =
                outcomes.iter().filter(|o| o.kind == kind && o.tf == tf).map(|o| (o.p_free, o.truth)).collect();
            curves.push(CurveSummary { kind, tf, curve: roc(&pairs, Thresholds::Grid(cfg.roc_grid)) });
        }
    }
    Ok(ExperimentResult { outcomes, curves, diagnostics: diag })
}

pub fn write_outcomes<W: Write>(mut out: W, outcomes: &[PredictionOutcome]) -> Result<()> {
    writeln!(out, "scenario_id,lot,marker,kind,t0,tf,p_free,truth")?;
    for o in outcomes {
        writeln!(
            out,
            "{},{},{},{},{},{},{:.10},{}",
            o.scenario_id,
            o.lot,
            csv_field(&o.marker),
            o.kind,
            format_timestamp(o.t0),
            o.tf,
            o.p_free,
            o.truth
        )?;
    }
    Ok(())
}

/// ROC rows `kind,tf,threshold,tnr,tpr`, then an AUC section `kind,tf,auc`.
pub fn write_roc<W: Write>(mut out: W, curves: &[CurveSummary]) -> Result<()> {
    writeln!(out, "kind,tf,threshold,tnr,tpr")?;
    for c in curves {
        for k in 0..c.curve.thresholds.len() {
            writeln!(
                out,
                "{},{},{},{:.10},{:.10}",
                c.kind,
                c.tf,
                format_threshold(c.curve.thresholds[k]),
                c.curve.tnr[k],
                c.curve.tpr[k]
            )?;
        }
    }
    writeln!(out)?;
    writeln!(out, "kind,tf,auc")?;
    for c in curves {
        writeln!(out, "{},{},{:.10}", c.kind, c.tf, c.curve.auc)?;
    }
    Ok(())
}

fn format_threshold(c: f64) -> String {
    if c == f64::NEG_INFINITY {
        "-inf".into()
    } else if c == f64::INFINITY {
        "inf".into()
    } else {
        format!("{c:.6}")
    }
}
