//! Weibull proportional-hazards models with shared gamma frailty.

pub mod bspline;
pub mod design;
pub mod fit;
pub mod likelihood;
pub mod optimize;

pub use design::{build_design, Design, DesignLayout, PredictorSpec, Term};
pub use fit::{fit, linear_predictor, relative_risk, FitOptions, FittedStateModel, RelativeRisk, StartValues};
pub use likelihood::{posterior_mean, FitData};
