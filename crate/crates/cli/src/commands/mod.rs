pub mod evaluate;
pub mod fit;
pub mod km;
pub mod predict;
pub mod simulate;

use std::fmt::Write as _;

use chrono::NaiveDate;

use lotstate::data::{SimulationConfig, SpellOptions};
use lotstate::evaluation::ExperimentConfig;
use lotstate::frailty::FitOptions;
use lotstate::laplace::InversionSettings;

/// Numeric defaults of every command, read from the library defaults.
pub fn defaults_table() -> String {
    let inv = InversionSettings::default();
    let spells = SpellOptions::default();
    let fit = FitOptions::default();
    let day = NaiveDate::from_ymd_opt(2019, 6, 1).expect("valid date");
    let ex = ExperimentConfig::new((day, day));
    let mut out = String::new();
    let mut row = |name: &str, value: String| {
        let _ = writeln!(out, "{name:<28} {value}");
    };
    row("inversion.a", inv.a.to_string());
    row("inversion.terms", inv.n_t.to_string());
    row("inversion.euler", inv.n_e.to_string());
    row("spells.window_hours", format!("{}-{}", spells.window_hours.0, spells.window_hours.1));
    row("spells.censor_min", spells.censor_horizon.to_string());
    row("spells.gap_policy", spells.gap_policy.to_string());
    row("spells.nearby_radius_m", spells.nearby_radius.to_string());
    row("fit.max_iter", fit.max_iter.to_string());
    row("fit.spline", "hour:2:10".into());
    row("experiment.replications", ex.replications.to_string());
    row("experiment.t0_window", format!("{}-{}", ex.t0_window.0, ex.t0_window.1));
    row("experiment.horizons_min", ex.horizons.iter().map(|h| h.to_string()).collect::<Vec<_>>().join(","));
    row("experiment.radius_m", ex.radius_m.to_string());
    row("experiment.center_shift_m", ex.center_shift_m.to_string());
    row("experiment.lookback_days", ex.lookback_days.to_string());
    row("experiment.roc_grid", ex.roc_grid.to_string());
    row("experiment.max_redraws", ex.max_redraws.to_string());
    out.push_str("\n# simulation config (simulate --config)\n");
    out.push_str(&SimulationConfig::default().to_toml());
    out
}
