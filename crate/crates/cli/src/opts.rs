//! Argument groups and file helpers shared by the subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use chrono::{NaiveDate, NaiveDateTime};
use clap::Args;
use serde::{Deserialize, Serialize};

use lotstate::data::{parse_events, EventRecord, GapPolicy, SpellOptions};
use lotstate::frailty::{PredictorSpec, Term};
use lotstate::laplace::InversionSettings;
use lotstate::network::{parse_network, Network};

use crate::error::{file_error, CliError};

pub fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once('-').ok_or_else(|| format!("expected FROM-TO, got `{s}`"))?;
    let a: f64 = a.trim().parse().map_err(|_| format!("bad number `{a}`"))?;
    let b: f64 = b.trim().parse().map_err(|_| format!("bad number `{b}`"))?;
    if !(a < b) {
        return Err(format!("range `{s}` is empty"));
    }
    Ok((a, b))
}

/// `covariate:order:df`, e.g. `hour:2:10`.
pub fn parse_spline(s: &str) -> Result<Term, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let [covariate, order, df] = parts[..] else {
        return Err(format!("expected COVARIATE:ORDER:DF, got `{s}`"));
    };
    let order = order.parse().map_err(|_| format!("bad spline order `{order}`"))?;
    let df = df.parse().map_err(|_| format!("bad spline df `{df}`"))?;
    Ok(Term::Spline { covariate: covariate.to_string(), order, df })
}

pub fn parse_date(s: &str) -> Result<NaiveDate, String> {
    NaiveDate::parse_from_str(s, "%Y-%m-%d").map_err(|e| format!("`{s}`: {e} (expected YYYY-MM-DD)"))
}

pub fn parse_datetime(s: &str) -> Result<NaiveDateTime, String> {
    lotstate::data::events::parse_timestamp(s)
        .or_else(|| NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S").ok())
        .ok_or_else(|| format!("`{s}`: expected YYYY-MM-DD HH:MM:SS"))
}

/// Model terms.
#[derive(Debug, Clone, Args)]
pub struct SpecArgs {
    /// Linear covariates (weekday, side, nearby, hour).
    #[arg(long, value_delimiter = ',', default_value = "weekday,side,nearby")]
    pub terms: Vec<String>,

    /// Spline terms as COVARIATE:ORDER:DF.
    #[arg(long, value_parser = parse_spline, default_value = "hour:2:10")]
    pub spline: Vec<Term>,

    /// Drop all spline terms.
    #[arg(long)]
    pub no_spline: bool,
}

impl SpecArgs {
    pub fn spec(&self) -> Result<PredictorSpec, CliError> {
        let mut terms: Vec<Term> = self.terms.iter().filter(|t| !t.is_empty()).map(|t| Term::Linear(t.clone())).collect();
        if !self.no_spline {
            terms.extend(self.spline.iter().cloned());
        }
        let spec = PredictorSpec { terms };
        spec.validate()?;
        Ok(spec)
    }
}

/// How records become spells.
#[derive(Debug, Clone, Args)]
pub struct SpellArgs {
    /// Hours of day in which spells must start.
    #[arg(long, value_parser = parse_range, default_value = "8-20")]
    pub window: (f64, f64),

    /// First date of spell starts (inclusive).
    #[arg(long, value_parser = parse_date)]
    pub from: Option<NaiveDate>,

    /// Last date of spell starts (exclusive).
    #[arg(long, value_parser = parse_date)]
    pub to: Option<NaiveDate>,

    /// Durations beyond this many minutes are censored.
    #[arg(long, default_value_t = 60.0)]
    pub censor: f64,

    /// Treatment of records whose successor is missing: censor or drop.
    #[arg(long, default_value = "censor")]
    pub gap_policy: GapPolicy,

    /// Network distance (metres) defining neighbouring lots.
    #[arg(long, default_value_t = 50.0)]
    pub nearby_radius: f64,
}

impl SpellArgs {
    pub fn options(&self) -> Result<SpellOptions, CliError> {
        if !(self.censor > 0.0) {
            return Err(CliError::Usage(format!("--censor must be positive, got {}", self.censor)));
        }
        if !(self.nearby_radius > 0.0) {
            return Err(CliError::Usage(format!("--nearby-radius must be positive, got {}", self.nearby_radius)));
        }
        Ok(SpellOptions {
            window_hours: self.window,
            dates: (self.from, self.to),
            censor_horizon: self.censor,
            gap_policy: self.gap_policy,
            nearby_radius: self.nearby_radius,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpellEcho {
    pub window_hours: (f64, f64),
    pub from: Option<NaiveDate>,
    pub to: Option<NaiveDate>,
    pub censor_horizon: f64,
    pub gap_policy: String,
    pub nearby_radius: f64,
}

impl From<&SpellArgs> for SpellEcho {
    fn from(a: &SpellArgs) -> Self {
        Self {
            window_hours: a.window,
            from: a.from,
            to: a.to,
            censor_horizon: a.censor,
            gap_policy: a.gap_policy.to_string(),
            nearby_radius: a.nearby_radius,
        }
    }
}

pub fn read_events(path: &Path) -> Result<Vec<EventRecord>, CliError> {
    let file = fs::File::open(path).map_err(file_error(path))?;
    let (records, diag) = parse_events(std::io::BufReader::new(file))?;
    if diag.duration_mismatches > 0 || diag.overlaps > 0 {
        eprintln!(
            "warning: {}: dropped {} records with inconsistent durations; {} overlaps",
            path.display(),
            diag.duration_mismatches,
            diag.overlaps
        );
    }
    Ok(records)
}

pub fn read_network(path: &Path) -> Result<Network, CliError> {
    let text = fs::read_to_string(path).map_err(file_error(path))?;
    parse_network(&text).map_err(|e| CliError::Document { path: path.into(), message: e.to_string() })
}

pub fn write_file(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(file_error(dir))?;
    }
    fs::write(path, contents).map_err(file_error(path))
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serialisable document");
    s.push('\n');
    s
}

/// Writes `value` as JSON next to `out` (`out` + `.config.json`).
pub fn write_config_sidecar<T: Serialize>(out: &Path, value: &T) -> Result<(), CliError> {
    let mut name = out.as_os_str().to_owned();
    name.push(".config.json");
    write_file(&PathBuf::from(name), to_json(value).as_bytes())
}

/// Writes CSV bytes to `out`, or stdout when absent.
pub fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<(), CliError> {
    use std::io::Write;
    match out {
        Some(p) => write_file(p, bytes),
        None => std::io::stdout().write_all(bytes).map_err(file_error("<stdout>")),
    }
}

/// Numerical inversion settings.
#[derive(Debug, Clone, Args)]
pub struct InversionArgs {
    /// Bromwich contour abscissa parameter.
    #[arg(long = "inversion-a", default_value_t = 6.0)]
    pub a: f64,

    /// Terms summed before acceleration.
    #[arg(long = "inversion-terms", default_value_t = 64)]
    pub n_t: usize,

    /// Euler acceleration terms.
    #[arg(long = "inversion-euler", default_value_t = 12)]
    pub n_e: usize,
}

impl InversionArgs {
    pub fn settings(&self) -> Result<InversionSettings, CliError> {
        let s = InversionSettings { a: self.a, n_t: self.n_t, n_e: self.n_e, ..InversionSettings::default() };
        s.validate()?;
        Ok(s)
    }
}
