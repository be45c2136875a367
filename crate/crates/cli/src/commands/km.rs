use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use chrono::NaiveDate;
use clap::Args as ClapArgs;
use serde::Serialize;

use lotstate::data::{build_spells, GapPolicy, SpellOptions};
use lotstate::survival::{kaplan_meier, DurationRecord};

use crate::error::CliError;
use crate::opts::{emit, parse_date, parse_range, read_events, write_config_sidecar};

#[derive(Debug, ClapArgs)]
pub struct Args {
    #[arg(long)]
    events: PathBuf,

    /// Only durations in this state (0 clear, 1 occupied).
    #[arg(long, value_parser = clap::value_parser!(u8).range(0..=1))]
    state: Option<u8>,

    /// One curve per side-of-street tag.
    #[arg(long)]
    by_side: bool,

    /// Hours of day in which spells must start.
    #[arg(long, value_parser = parse_range, default_value = "0-24")]
    window: (f64, f64),

    #[arg(long, value_parser = parse_date)]
    from: Option<NaiveDate>,

    /// Exclusive.
    #[arg(long, value_parser = parse_date)]
    to: Option<NaiveDate>,

    /// Censor durations beyond this many minutes (no limit by default).
    #[arg(long)]
    censor: Option<f64>,

    #[arg(long, default_value = "censor")]
    gap_policy: GapPolicy,

    /// Output CSV (stdout when omitted); the resolved config goes to OUT.config.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct Echo<'a> {
    events: &'a PathBuf,
    state: Option<u8>,
    by_side: bool,
    window_hours: (f64, f64),
    from: Option<NaiveDate>,
    to: Option<NaiveDate>,
    censor: Option<f64>,
    gap_policy: String,
}

pub fn run(args: Args) -> Result<(), CliError> {
    if args.censor.is_some_and(|c| !(c > 0.0)) {
        return Err(CliError::Usage("--censor must be positive".into()));
    }
    let options = SpellOptions {
        window_hours: args.window,
        dates: (args.from, args.to),
        censor_horizon: args.censor.unwrap_or(f64::INFINITY),
        gap_policy: args.gap_policy,
        ..SpellOptions::default()
    };
    let records = read_events(&args.events)?;
    let spells = build_spells(&records, None, &options);

    let mut groups: BTreeMap<(u8, String), Vec<DurationRecord>> = BTreeMap::new();
    for s in spells.iter().filter(|s| args.state.is_none_or(|st| s.state == st)) {
        let side = if args.by_side { s.covariates.side.clone() } else { String::new() };
        groups.entry((s.state, side)).or_default().push(DurationRecord::new(s.duration, s.observed));
    }
    if groups.is_empty() {
        return Err(lotstate::Error::EmptyInput("no durations match the filters").into());
    }

    let mut csv = String::from(if args.by_side { "state,side,time,survival\n" } else { "state,time,survival\n" });
    for ((state, side), durations) in &groups {
        let curve = kaplan_meier(durations)?;
        let prefix = if args.by_side { format!("{state},{}", lotstate::data::events::csv_field(side)) } else { state.to_string() };
        let _ = writeln!(csv, "{prefix},0,1");
        for (t, s) in curve.times.iter().zip(&curve.survival) {
            let _ = writeln!(csv, "{prefix},{t},{s:.10}");
        }
    }
    emit(args.out.as_deref(), csv.as_bytes())?;

    let echo = Echo {
        events: &args.events,
        state: args.state,
        by_side: args.by_side,
        window_hours: args.window,
        from: args.from,
        to: args.to,
        censor: args.censor,
        gap_policy: args.gap_policy.to_string(),
    };
    match &args.out {
        Some(out) => write_config_sidecar(out, &echo)?,
        None => eprintln!("config: {}", serde_json::to_string(&echo).expect("serialisable config")),
    }
    Ok(())
}
