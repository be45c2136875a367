use std::path::PathBuf;

use chrono::NaiveDate;
use clap::Args as ClapArgs;
use serde::Serialize;

use lotstate::evaluation::{run_experiment, write_outcomes, write_roc, DayMode, ExperimentConfig, ExperimentDiagnostics, ExperimentResult};
use lotstate::semimarkov::PredictorKind;

use crate::error::CliError;
use crate::opts::{parse_date, parse_range, read_events, read_network, to_json, write_file, InversionArgs, SpecArgs};

#[derive(Debug, ClapArgs)]
pub struct Args {
    #[arg(long)]
    events: PathBuf,

    #[arg(long)]
    network: PathBuf,

    /// First evaluation day.
    #[arg(long, value_parser = parse_date)]
    first_day: NaiveDate,

    /// Last evaluation day (inclusive).
    #[arg(long, value_parser = parse_date)]
    last_day: NaiveDate,

    #[arg(long, default_value_t = 1)]
    seed: u64,

    /// Replications R.
    #[arg(long, default_value_t = 100)]
    replications: usize,

    /// `exhaustive` cycles through the evaluation days; `uniform` draws them.
    #[arg(long, default_value = "exhaustive")]
    day_mode: DayMode,

    /// Hours of day in which t0 is drawn.
    #[arg(long, value_parser = parse_range, default_value = "10-12")]
    t0_window: (f64, f64),

    /// Horizons in minutes.
    #[arg(long, value_delimiter = ',', default_value = "10,30")]
    horizon: Vec<f64>,

    /// Scenario radius (metres).
    #[arg(long, default_value_t = 250.0)]
    radius: f64,

    /// Maximum random-walk shift of the scenario centre (metres).
    #[arg(long, default_value_t = 50.0)]
    center_shift: f64,

    #[arg(long, default_value_t = 50.0)]
    nearby_radius: f64,

    /// Training window length in days.
    #[arg(long, default_value_t = 30)]
    lookback: i64,

    #[arg(long, value_delimiter = ',', default_value = "semimarkov4,semimarkov2,markov")]
    kind: Vec<PredictorKind>,

    #[command(flatten)]
    spec: SpecArgs,

    /// Hours of day in which training spells must start.
    #[arg(long, value_parser = parse_range, default_value = "8-20")]
    fit_window: (f64, f64),

    #[arg(long, default_value_t = 60.0)]
    censor: f64,

    #[arg(long, default_value = "censor")]
    gap_policy: lotstate::data::GapPolicy,

    /// Interior ROC thresholds P.
    #[arg(long, default_value_t = lotstate::evaluation::DEFAULT_GRID)]
    roc_grid: usize,

    #[command(flatten)]
    inversion: InversionArgs,

    /// Directory for outcomes.csv, roc.csv and metadata.json.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Serialize)]
struct AucLine {
    kind: String,
    tf: f64,
    auc: f64,
    degenerate: bool,
}

#[derive(Serialize)]
struct Metadata<'a> {
    events: &'a PathBuf,
    network: &'a PathBuf,
    config: &'a ExperimentConfig,
    diagnostics: &'a ExperimentDiagnostics,
    auc: Vec<AucLine>,
}

pub fn run(args: Args) -> Result<(), CliError> {
    let spec = args.spec.spec()?;
    let cfg = ExperimentConfig {
        seed: args.seed,
        replications: args.replications,
        eval_days: (args.first_day, args.last_day),
        day_mode: args.day_mode,
        t0_window: args.t0_window,
        horizons: args.horizon.clone(),
        radius_m: args.radius,
        center_shift_m: args.center_shift,
        nearby_radius_m: args.nearby_radius,
        lookback_days: args.lookback,
        kinds: args.kind.clone(),
        spec,
        fit_window_hours: args.fit_window,
        censor_horizon: args.censor,
        gap_policy: args.gap_policy,
        inversion: args.inversion.settings()?,
        roc_grid: args.roc_grid,
        ..ExperimentConfig::new((args.first_day, args.last_day))
    };
    let records = read_events(&args.events)?;
    let network = read_network(&args.network)?;
    let result = run_experiment(&records, &network, &cfg)?;

    let mut outcomes = Vec::new();
    write_outcomes(&mut outcomes, &result.outcomes)?;
    write_file(&args.out_dir.join("outcomes.csv"), &outcomes)?;
    let mut roc = Vec::new();
    write_roc(&mut roc, &result.curves)?;
    write_file(&args.out_dir.join("roc.csv"), &roc)?;
    let meta = Metadata {
        events: &args.events,
        network: &args.network,
        config: &cfg,
        diagnostics: &result.diagnostics,
        auc: auc_lines(&result),
    };
    write_file(&args.out_dir.join("metadata.json"), to_json(&meta).as_bytes())?;

    for line in &meta.auc {
        println!("auc {} tf={} {:.4}{}", line.kind, line.tf, line.auc, if line.degenerate { " (degenerate)" } else { "" });
    }
    let d = &result.diagnostics;
    eprintln!(
        "{} outcomes; {} fits ({} unconverged); {} redraws, {} inactive lots, {} missing truths, {} failed predictions",
        result.outcomes.len(),
        d.fits,
        d.unconverged_fits,
        d.scenario_redraws,
        d.inactive_lots,
        d.missing_truth,
        d.prediction_failures
    );
    Ok(())
}

fn auc_lines(result: &ExperimentResult) -> Vec<AucLine> {
    result
        .curves
        .iter()
        .map(|c| AucLine { kind: c.kind.to_string(), tf: c.tf, auc: c.curve.auc, degenerate: c.curve.degenerate })
        .collect()
}
