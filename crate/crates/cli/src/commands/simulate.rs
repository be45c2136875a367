use std::fs;
use std::path::PathBuf;

use clap::Args as ClapArgs;

use lotstate::data::{simulate, write_events, SimulationConfig};

use crate::error::{file_error, CliError};
use crate::opts::write_file;

#[derive(Debug, ClapArgs)]
pub struct Args {
    /// TOML simulation config; omitted fields are not allowed, see --print-defaults for a template.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Directory for events.csv, truth.toml and network.txt.
    #[arg(long)]
    out_dir: PathBuf,
}

pub fn run(args: Args) -> Result<(), CliError> {
    let mut config = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(file_error(path))?;
            SimulationConfig::from_toml(&text)?
        }
        None => SimulationConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    config.validate()?;
    let network = config.network()?;
    let records = simulate(&config, &network)?;

    let mut csv = Vec::new();
    write_events(&mut csv, &records)?;
    write_file(&args.out_dir.join("events.csv"), &csv)?;
    write_file(&args.out_dir.join("truth.toml"), config.to_toml().as_bytes())?;
    write_file(&args.out_dir.join("network.txt"), network.to_text().as_bytes())?;
    eprintln!(
        "simulated {} records for {} lots over {} days (seed {})",
        records.len(),
        network.placements.len(),
        config.horizon_days,
        config.seed
    );
    Ok(())
}
