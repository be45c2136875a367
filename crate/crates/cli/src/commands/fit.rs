use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::Args as ClapArgs;
use serde::{Deserialize, Serialize};

use lotstate::data::build_spells;
use lotstate::frailty::{fit, FitOptions, FittedStateModel, PredictorSpec};

use crate::error::{file_error, CliError};
use crate::opts::{read_events, read_network, to_json, write_file, SpecArgs, SpellArgs, SpellEcho};

#[derive(Debug, ClapArgs)]
pub struct Args {
    /// Event CSV.
    #[arg(long)]
    events: PathBuf,

    /// Street network with lot placements; required for the nearby covariate.
    #[arg(long)]
    network: Option<PathBuf>,

    #[command(flatten)]
    spec: SpecArgs,

    #[command(flatten)]
    spells: SpellArgs,

    /// Fix α = 1 (exponential durations, Markov model).
    #[arg(long)]
    markov: bool,

    #[arg(long, default_value_t = 500)]
    max_iter: usize,

    /// Output model document (JSON).
    #[arg(long)]
    out: PathBuf,
}

/// Inputs that produced a model, echoed into its document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitEcho {
    pub events: PathBuf,
    pub network: Option<PathBuf>,
    pub spec: PredictorSpec,
    pub spells: SpellEcho,
    pub markov: bool,
    pub max_iter: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelDocument {
    pub config: FitEcho,
    pub states: [FittedStateModel; 2],
}

impl ModelDocument {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(file_error(path))?;
        serde_json::from_str(&text).map_err(|e| CliError::Document { path: path.into(), message: e.to_string() })
    }

    pub fn is_markov(&self) -> bool {
        self.states.iter().all(|m| m.alpha_fixed && m.alpha == 1.0)
    }
}

pub fn run(args: Args) -> Result<(), CliError> {
    let spec = args.spec.spec()?;
    let uses_nearby = spec.terms.iter().any(|t| t.covariate() == "nearby");
    if uses_nearby && args.network.is_none() {
        return Err(CliError::Usage("the nearby covariate needs --network (or drop it from --terms)".into()));
    }
    let options = args.spells.options()?;
    let records = read_events(&args.events)?;
    let network = args.network.as_deref().map(read_network).transpose()?;
    let spells = build_spells(&records, network.as_ref(), &options);

    let fit_options = FitOptions {
        censor_horizon: options.censor_horizon,
        fixed_alpha: args.markov.then_some(1.0),
        max_iter: args.max_iter,
        ..FitOptions::default()
    };
    let m0 = fit(&spells, 0, &spec, &fit_options)?;
    let m1 = fit(&spells, 1, &spec, &fit_options)?;
    let doc = ModelDocument {
        config: FitEcho {
            events: args.events.clone(),
            network: args.network.clone(),
            spec,
            spells: SpellEcho::from(&args.spells),
            markov: args.markov,
            max_iter: args.max_iter,
        },
        states: [m0, m1],
    };
    write_file(&args.out, to_json(&doc).as_bytes())?;
    print!("{}", report(&doc.states));

    let stuck: Vec<String> = doc
        .states
        .iter()
        .filter(|m| !m.converged)
        .map(|m| format!("state {} ({} iterations, gradient norm {:.3e})", m.state, m.iterations, m.grad_norm))
        .collect();
    if !stuck.is_empty() {
        return Err(CliError::NotConverged(format!("fit did not converge: {}", stuck.join("; "))));
    }
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("-".to_string(), |x| format!("{x:.4}"))
}

/// Coefficient table with relative risks, one block per state.
pub fn report(models: &[FittedStateModel]) -> String {
    let mut out = String::new();
    for m in models {
        let label = if m.state == 0 { "clear" } else { "occupied" };
        let _ = writeln!(out, "state {} ({label}): {} spells, {} events, {} nearby imputed", m.state, m.n_spells, m.n_events, m.n_imputed);
        let alpha = if m.alpha_fixed { format!("{:.4} (fixed)", m.alpha) } else { format!("{:.4} (se {})", m.alpha, fmt_opt(m.alpha_se)) };
        let gamma = if m.no_frailty { format!("{:.3e} (no frailty)", m.gamma) } else { format!("{:.4} (se {})", m.gamma, fmt_opt(m.gamma_se)) };
        let _ = writeln!(out, "  alpha {alpha}, gamma {gamma}");
        let _ = writeln!(
            out,
            "  loglik {:.4}, {} iterations, converged {}",
            m.loglik, m.iterations, m.converged
        );
        let _ = writeln!(out, "  {:<16} {:>10} {:>9} {:>10} {:>9}", "term", "effect", "se", "rel.risk", "rr.se");
        for rr in m.relative_risk() {
            let _ = writeln!(
                out,
                "  {:<16} {:>10.4} {:>9} {:>10.4} {:>9}",
                rr.name,
                rr.coefficient,
                fmt_opt(rr.se),
                rr.relative_risk,
                fmt_opt(rr.relative_risk_se)
            );
        }
    }
    out
}

