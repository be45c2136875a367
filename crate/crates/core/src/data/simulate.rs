//! Seeded simulation of interacting lots from a known semi-Markov truth.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};

use chrono::{Duration, NaiveDate, NaiveDateTime};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use super::events::EventRecord;
use crate::error::{invalid, Error, Result};
use crate::network::{nearby_fraction, street_grid, Network};
use crate::spell::{Covariates, WEEKDAY_NAMES};

/// Generating parameters of the durations in one state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateTruth {
    pub alpha: f64,
    pub gamma: f64,
    pub intercept: f64,
    /// Effects of Tuesday..Sunday relative to Monday.
    pub weekday: [f64; 6],
    /// Effects of side-of-street levels; unlisted levels have effect 0.
    #[serde(default)]
    pub side: BTreeMap<String, f64>,
    pub nearby: f64,
    /// Smooth daytime effect `amplitude * cos(2π (hour - peak) / 24)`.
    #[serde(default)]
    pub hour_amplitude: f64,
    #[serde(default = "default_peak")]
    pub hour_peak: f64,
}

fn default_peak() -> f64 {
    13.0
}

impl StateTruth {
    pub fn hour_effect(&self, hour: f64) -> f64 {
        self.hour_amplitude * (std::f64::consts::TAU * (hour - self.hour_peak) / 24.0).cos()
    }

    /// Linear predictor at `covariates`; a missing `nearby` counts as 0.
    pub fn eta(&self, c: &Covariates) -> f64 {
        let weekday = if c.weekday == 0 { 0.0 } else { self.weekday[c.weekday as usize - 1] };
        self.intercept
            + weekday
            + self.side.get(&c.side).copied().unwrap_or(0.0)
            + self.nearby * c.nearby.unwrap_or(0.0)
            + self.hour_effect(c.hour)
    }

    /// Named linear coefficients in design-column order
    /// (intercept, Tuesday..Sunday, side levels, nearby).
    pub fn named_coefficients(&self) -> Vec<(String, f64)> {
        let mut out = vec![("(Intercept)".to_string(), self.intercept)];
        out.extend(WEEKDAY_NAMES[1..].iter().zip(self.weekday).map(|(n, v)| (n.to_string(), v)));
        out.extend(self.side.iter().map(|(k, v)| (k.clone(), *v)));
        out.push(("nearby".into(), self.nearby));
        out
    }

    fn validate(&self, name: &'static str) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(invalid(name, format!("alpha must be positive, got {}", self.alpha)));
        }
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(invalid(name, format!("gamma must be non-negative, got {}", self.gamma)));
        }
        let all = [self.intercept, self.nearby, self.hour_amplitude, self.hour_peak];
        if all.iter().chain(&self.weekday).chain(self.side.values()).any(|v| !v.is_finite()) {
            return Err(invalid(name, "coefficients must be finite"));
        }
        Ok(())
    }
}

/// Street grid used when no network file is given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub block_m: f64,
    pub lots_per_edge: usize,
    pub sides: Vec<String>,
}

/// Sensor dropout: each record starts a run of missing records with
/// probability `rate`; run lengths are geometric with mean `mean_run`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GapConfig {
    pub rate: f64,
    pub mean_run: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub seed: u64,
    pub n_lots: usize,
    pub horizon_days: u32,
    pub start_date: NaiveDate,
    pub nearby_radius_m: f64,
    pub grid: GridConfig,
    pub gaps: GapConfig,
    pub state0: StateTruth,
    pub state1: StateTruth,
}

fn side_effects(central: f64, south: f64) -> BTreeMap<String, f64> {
    BTreeMap::from([("central".to_string(), central), ("south".to_string(), south)])
}

impl Default for SimulationConfig {
    /// Shapes α₀ = 0.65, α₁ = 0.55 with the published effect sizes.
    fn default() -> Self {
        Self {
            seed: 1,
            n_lots: 300,
            horizon_days: 60,
            start_date: NaiveDate::from_ymd_opt(2019, 4, 1).expect("valid date"),
            nearby_radius_m: 50.0,
            grid: GridConfig {
                block_m: 100.0,
                lots_per_edge: 5,
                sides: vec!["west".into(), "central".into(), "south".into()],
            },
            gaps: GapConfig { rate: 0.0, mean_run: 3.0 },
            state0: StateTruth {
                alpha: 0.65,
                gamma: 0.3,
                intercept: -2.721,
                weekday: [0.050, 0.091, 0.124, 0.098, -0.139, 0.126],
                side: side_effects(0.159, 0.129),
                nearby: 1.451,
                hour_amplitude: 0.2,
                hour_peak: 13.0,
            },
            state1: StateTruth {
                alpha: 0.55,
                gamma: 0.3,
                intercept: -1.751,
                weekday: [0.037, 0.025, 0.005, 0.024, -0.032, -0.371],
                side: side_effects(-0.764, 0.218),
                nearby: 1.078,
                hour_amplitude: 0.2,
                hour_peak: 13.0,
            },
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_lots == 0 {
            return Err(invalid("n_lots", "must be at least 1"));
        }
        if self.horizon_days == 0 {
            return Err(invalid("horizon_days", "must be at least 1"));
        }
        if !(self.nearby_radius_m > 0.0) {
            return Err(invalid("nearby_radius_m", "must be positive"));
        }
        if !(self.grid.block_m > 0.0) || self.grid.lots_per_edge == 0 || self.grid.sides.is_empty() {
            return Err(invalid("grid", "needs block_m > 0, lots_per_edge >= 1 and at least one side"));
        }
        if !(0.0..1.0).contains(&self.gaps.rate) || !(self.gaps.mean_run >= 1.0) {
            return Err(invalid("gaps", "needs 0 <= rate < 1 and mean_run >= 1"));
        }
        self.state0.validate("state0")?;
        self.state1.validate("state1")
    }

    pub fn truth(&self, state: u8) -> &StateTruth {
        if state == 0 {
            &self.state0
        } else {
            &self.state1
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Data(format!("simulation config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("simulation config serialises")
    }

    /// Square-ish street grid with room for `n_lots`, keeping the first `n_lots`.
    pub fn network(&self) -> Result<Network> {
        let per_edge = self.grid.lots_per_edge;
        let mut n = 2;
        while 2 * n * (n - 1) * per_edge < self.n_lots {
            n += 1;
        }
        let sides: Vec<&str> = self.grid.sides.iter().map(String::as_str).collect();
        let mut net = street_grid(n, n, self.grid.block_m, per_edge, &sides)?;
        net.placements.truncate(self.n_lots);
        Ok(net)
    }
}

/// Inverse-CDF draw from F(d) = 1 − exp(−b d^α).
pub fn draw_weibull<R: Rng + ?Sized>(alpha: f64, b: f64, rng: &mut R) -> f64 {
    let u: f64 = 1.0 - rng.gen::<f64>();
    (-u.ln() / b).powf(1.0 / alpha)
}

/// Lot frailties, mean 1 and variance γ (all ones when γ = 0).
fn draw_frailty<R: Rng + ?Sized>(gamma: f64, rng: &mut R) -> f64 {
    if gamma == 0.0 {
        1.0
    } else {
        Gamma::new(1.0 / gamma, gamma).expect("valid gamma parameters").sample(rng)
    }
}

/// Simulates alternating clear/occupied records for every placed lot.
/// Lots interact through `nearby`, evaluated from the concurrent states
/// at each state entry. Transition instants are rounded to whole seconds
/// (at least one second apart) while `duration_min` keeps the exact draw,
/// so fits on simulated data are free of rounding bias.
pub fn simulate(config: &SimulationConfig, network: &Network) -> Result<Vec<EventRecord>> {
    config.validate()?;
    let n = network.placements.len();
    if n == 0 {
        return Err(Error::EmptyInput("network has no lots to simulate"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let neighbors = network.neighbors(config.nearby_radius_m);
    let frailty: Vec<[f64; 2]> = (0..n)
        .map(|_| [draw_frailty(config.state0.gamma, &mut rng), draw_frailty(config.state1.gamma, &mut rng)])
        .collect();
    let origin: NaiveDateTime = config.start_date.and_hms_opt(0, 0, 0).expect("midnight");
    let horizon = i64::from(config.horizon_days) * 86_400;
    let mut state: Vec<u8> = (0..n).map(|_| u8::from(rng.gen_bool(0.5))).collect();
    let mut entered = vec![0i64; n];
    let mut queue = BinaryHeap::new();

    let draw = |lot: usize, s: u8, at: i64, states: &[u8], rng: &mut ChaCha8Rng| -> (i64, f64) {
        let time = origin + Duration::seconds(at);
        let nearby = nearby_fraction(&neighbors[lot], 1 - s, |k| Some(states[k]));
        let cov = Covariates::at(time, network.placements[lot].side.clone(), nearby);
        let truth = config.truth(s);
        let b = (truth.eta(&cov)).exp() * frailty[lot][s as usize];
        let minutes = draw_weibull(truth.alpha, b, rng);
        let secs = (minutes * 60.0).round().clamp(1.0, (horizon + 1) as f64);
        (at + secs as i64, minutes)
    };
    let mut exact = vec![0.0; n];
    for lot in 0..n {
        let (until, minutes) = draw(lot, state[lot], 0, &state, &mut rng);
        exact[lot] = minutes;
        queue.push(Reverse((until, lot)));
    }
    let mut per_lot: Vec<Vec<EventRecord>> = vec![Vec::new(); n];
    while let Some(Reverse((t, lot))) = queue.pop() {
        if t > horizon {
            continue;
        }
        let s = state[lot];
        per_lot[lot].push(EventRecord {
            start: origin + Duration::seconds(entered[lot]),
            end: origin + Duration::seconds(t),
            duration_min: exact[lot],
            state: s,
            marker: network.placements[lot].lot_id.clone(),
            side: network.placements[lot].side.clone(),
        });
        state[lot] = 1 - s;
        entered[lot] = t;
        let (until, minutes) = draw(lot, state[lot], t, &state, &mut rng);
        exact[lot] = minutes;
        queue.push(Reverse((until, lot)));
    }
    if config.gaps.rate > 0.0 {
        let continue_run = 1.0 - 1.0 / config.gaps.mean_run;
        for recs in &mut per_lot {
            let mut kept = Vec::with_capacity(recs.len());
            let mut skipping = false;
            for r in recs.drain(..) {
                skipping = if skipping { rng.gen_bool(continue_run) } else { rng.gen_bool(config.gaps.rate) };
                if !skipping {
                    kept.push(r);
                }
            }
            *recs = kept;
        }
    }
    let mut out: Vec<EventRecord> = per_lot.into_iter().flatten().collect();
    out.sort_by(|a, b| a.marker.cmp(&b.marker).then(a.start.cmp(&b.start)));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::events::{parse_events, write_events};

    fn small() -> SimulationConfig {
        SimulationConfig { n_lots: 12, horizon_days: 2, ..SimulationConfig::default() }
    }

    #[test]
    fn exponential_mean_duration() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let b = 0.2;
        let n = 100_000;
        let mean = (0..n).map(|_| draw_weibull(1.0, b, &mut rng)).sum::<f64>() / n as f64;
        assert!((mean * b - 1.0).abs() < 0.02, "{mean}");
    }

    #[test]
    fn weibull_draws_pass_ks() {
        let (alpha, b) = (0.55, 0.174);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 10_000;
        let mut d: Vec<f64> = (0..n).map(|_| draw_weibull(alpha, b, &mut rng)).collect();
        d.sort_by(f64::total_cmp);
        let ks = d
            .iter()
            .enumerate()
            .map(|(i, x)| {
                let f = 1.0 - (-b * x.powf(alpha)).exp();
                (f - i as f64 / n as f64).abs().max(((i + 1) as f64 / n as f64 - f).abs())
            })
            .fold(0.0, f64::max);
        assert!(ks < 1.628 / (n as f64).sqrt(), "KS statistic {ks}");
    }

    #[test]
    fn records_alternate_and_are_contiguous() {
        let cfg = small();
        let recs = simulate(&cfg, &cfg.network().unwrap()).unwrap();
        assert!(!recs.is_empty());
        for w in recs.windows(2) {
            if w[0].marker == w[1].marker {
                assert_eq!(w[0].end, w[1].start);
                assert_ne!(w[0].state, w[1].state);
            }
        }
        for r in &recs {
            assert!(r.end > r.start);
            assert!((r.duration_min - r.timestamp_minutes()).abs() < 0.02);
        }
    }

    #[test]
    fn deterministic_and_round_trips() {
        let cfg = SimulationConfig { gaps: GapConfig { rate: 0.05, mean_run: 2.0 }, ..small() };
        let net = cfg.network().unwrap();
        let a = simulate(&cfg, &net).unwrap();
        let b = simulate(&cfg, &net).unwrap();
        assert_eq!(a, b);
        let mut buf = Vec::new();
        write_events(&mut buf, &a).unwrap();
        let (back, diag) = parse_events(buf.as_slice()).unwrap();
        assert_eq!(back, a);
        assert!(diag.gaps > 0);
        assert_eq!(diag.overlaps, 0);
        let other = simulate(&SimulationConfig { seed: 2, ..cfg }, &net).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn config_toml_round_trip_and_validation() {
        let cfg = SimulationConfig::default();
        assert_eq!(SimulationConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        let mut bad = cfg.clone();
        bad.state1.alpha = 0.0;
        let err = SimulationConfig::from_toml(&bad.to_toml()).unwrap_err().to_string();
        assert!(err.contains("state1") && err.contains("alpha"), "{err}");
    }

    #[test]
    fn grid_has_requested_lots() {
        let cfg = SimulationConfig::default();
        assert_eq!(cfg.network().unwrap().placements.len(), 300);
        let cfg = SimulationConfig { n_lots: 1, ..SimulationConfig::default() };
        assert_eq!(cfg.network().unwrap().placements.len(), 1);
    }

    #[test]
    fn truth_linear_predictor() {
        let t = &SimulationConfig::default().state0;
        let monday_noon = NaiveDate::from_ymd_opt(2019, 6, 3).unwrap().and_hms_opt(13, 0, 0).unwrap();
        let c = Covariates::at(monday_noon, "west", Some(0.0));
        assert!((t.eta(&c) - (-2.721 + 0.2)).abs() < 1e-12);
        let c = Covariates::at(monday_noon + Duration::days(6), "south", Some(1.0));
        assert!((t.eta(&c) - (-2.721 + 0.126 + 0.129 + 1.451 + 0.2)).abs() < 1e-12);
    }
}
