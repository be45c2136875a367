use std::fmt::Write as _;
use std::path::PathBuf;

use chrono::NaiveDateTime;
use clap::Args as ClapArgs;
use rayon::prelude::*;
use serde::Serialize;

use lotstate::data::events::{csv_field, format_timestamp};
use lotstate::data::RecordIndex;
use lotstate::evaluation::SnapshotContext;
use lotstate::laplace::InversionSettings;
use lotstate::semimarkov::{predict_free, LotSnapshot, PredictorKind};
use lotstate::Error;

use super::fit::ModelDocument;
use crate::error::CliError;
use crate::opts::{emit, parse_datetime, read_events, read_network, write_config_sidecar, InversionArgs};

#[derive(Debug, ClapArgs)]
pub struct Args {
    /// Model document from `fit`.
    #[arg(long)]
    model: PathBuf,

    /// Model document from `fit --markov`, used by the markov predictor.
    #[arg(long)]
    markov_model: Option<PathBuf>,

    /// Event CSV holding the history up to the prediction instant.
    #[arg(long)]
    events: PathBuf,

    #[arg(long)]
    network: PathBuf,

    /// Prediction instant, YYYY-MM-DD HH:MM:SS.
    #[arg(long, value_parser = parse_datetime)]
    at: NaiveDateTime,

    /// Horizons in minutes.
    #[arg(long, value_delimiter = ',', required = true)]
    horizon: Vec<f64>,

    /// Select lots around EDGE:OFFSET.
    #[arg(long, conflicts_with = "lots")]
    center: Option<String>,

    /// Network radius (metres) around --center.
    #[arg(long, default_value_t = 250.0)]
    radius: f64,

    /// Explicit lot ids; all placed lots when neither this nor --center is given.
    #[arg(long, value_delimiter = ',')]
    lots: Vec<String>,

    /// Predictors; defaults to every predictor the given models support.
    #[arg(long, value_delimiter = ',')]
    kind: Vec<PredictorKind>,

    #[command(flatten)]
    inversion: InversionArgs,

    /// Output CSV (stdout when omitted); the resolved config goes to OUT.config.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct Echo<'a> {
    model: &'a PathBuf,
    markov_model: &'a Option<PathBuf>,
    events: &'a PathBuf,
    network: &'a PathBuf,
    at: String,
    horizons: &'a [f64],
    lots: &'a [String],
    kinds: Vec<String>,
    inversion: InversionSettings,
}

pub const COLUMNS: &str = "lot,kind,t0,tf,state,elapsed,p_free,status";

pub fn run(args: Args) -> Result<(), CliError> {
    if args.horizon.iter().any(|h| !(*h > 0.0 && h.is_finite())) {
        return Err(CliError::Usage("--horizon values must be positive".into()));
    }
    let settings = args.inversion.settings()?;
    let main = ModelDocument::read(&args.model)?;
    let markov = match &args.markov_model {
        Some(p) => {
            let doc = ModelDocument::read(p)?;
            if !doc.is_markov() {
                return Err(CliError::Usage(format!("{}: not fitted with --markov", p.display())));
            }
            Some(doc)
        }
        None => main.is_markov().then(|| main.clone()),
    };
    let kinds = if args.kind.is_empty() {
        PredictorKind::ALL.iter().copied().filter(|k| *k != PredictorKind::Markov || markov.is_some()).collect()
    } else {
        args.kind.clone()
    };
    if kinds.contains(&PredictorKind::Markov) && markov.is_none() {
        return Err(CliError::Usage("the markov predictor needs --markov-model (a `fit --markov` document)".into()));
    }

    let records = read_events(&args.events)?;
    let network = read_network(&args.network)?;
    let lot_index = network.lot_index();
    let lots: Vec<String> = if let Some(center) = &args.center {
        let (edge, offset) = center
            .rsplit_once(':')
            .ok_or_else(|| CliError::Usage(format!("--center expects EDGE:OFFSET, got `{center}`")))?;
        let offset: f64 = offset.parse().map_err(|_| CliError::Usage(format!("bad offset `{offset}`")))?;
        let e = network.graph.edge_by_id(edge).ok_or_else(|| Error::Network(format!("unknown edge `{edge}`")))?;
        let point = network.graph.point(e, offset)?;
        network.lots_within(point, args.radius).into_iter().map(|(id, _)| id).collect()
    } else if args.lots.is_empty() {
        network.placements.iter().map(|p| p.lot_id.clone()).collect()
    } else {
        args.lots.clone()
    };
    let lot_positions = lots
        .iter()
        .map(|id| lot_index.get(id.as_str()).copied().ok_or_else(|| Error::UnknownLot(id.clone())))
        .collect::<Result<Vec<usize>, Error>>()?;

    let index = RecordIndex::new(&records);
    let main_ctx = SnapshotContext::new(&index, &network, main.config.spells.nearby_radius);
    let markov_ctx = markov.as_ref().map(|m| SnapshotContext::new(&index, &network, m.config.spells.nearby_radius));

    let blocks: Vec<Result<String, Error>> = lot_positions
        .par_iter()
        .map(|&lot| {
            let weibull = main_ctx.snapshot(lot, args.at, &main.states)?;
            let exp = match (&markov, &markov_ctx) {
                (Some(m), Some(ctx)) => ctx.snapshot(lot, args.at, &m.states)?,
                _ => None,
            };
            prediction_rows(&network.placements[lot].lot_id, args.at, &args.horizon, &kinds, weibull.as_ref(), exp.as_ref(), &settings)
        })
        .collect();
    let mut csv = format!("{COLUMNS}\n");
    for b in blocks {
        csv.push_str(&b?);
    }
    emit(args.out.as_deref(), csv.as_bytes())?;

    let echo = Echo {
        model: &args.model,
        markov_model: &args.markov_model,
        events: &args.events,
        network: &args.network,
        at: format_timestamp(args.at),
        horizons: &args.horizon,
        lots: &lots,
        kinds: kinds.iter().map(|k| k.to_string()).collect(),
        inversion: settings,
    };
    match &args.out {
        Some(out) => write_config_sidecar(out, &echo)?,
        None => eprintln!("config: {}", serde_json::to_string(&echo).expect("serialisable config")),
    }
    Ok(())
}

/// Rows for one lot; `weibull` is `None` when no record covers the instant.
fn prediction_rows(
    lot: &str,
    at: NaiveDateTime,
    horizons: &[f64],
    kinds: &[PredictorKind],
    weibull: Option<&LotSnapshot>,
    markov: Option<&LotSnapshot>,
    settings: &InversionSettings,
) -> Result<String, Error> {
    let mut out = String::new();
    let t0 = format_timestamp(at);
    let lot_field = csv_field(lot);
    for &tf in horizons {
        for &kind in kinds {
            let snapshot = if kind == PredictorKind::Markov { markov } else { weibull };
            match snapshot {
                None => {
                    let _ = writeln!(out, "{lot_field},{kind},{t0},{tf},,,,unknown");
                }
                Some(s) => {
                    let p = predict_free(s, tf, kind, settings)?;
                    let _ = writeln!(out, "{lot_field},{kind},{t0},{tf},{},{:.4},{p:.10},ok", s.current_state, s.elapsed);
                }
            }
        }
    }
    Ok(out)
}
