//! Interval transition probabilities of the two-state occupancy process.
//!
//! The state space is augmented with the initial states `0*` and `1*`, whose
//! sojourn is the residual duration of the spell in progress at prediction
//! time. Entries of the Laplace-domain matrix are assembled from the density
//! transforms of the four sojourn distributions and inverted numerically.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::laplace::{
    clamp_probability, invert, InversionSettings, TransformEvaluator, WeibullDensityTransform,
};
use crate::survival::{shifted_survival, WeibullParams};

/// Guard on `|1 - f0~ f1~|`; only reached as `u -> 0`.
const SINGULAR_DENOMINATOR: f64 = 1e-12;

/// States of the augmented process, in matrix order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StarState {
    Star0,
    Star1,
    Zero,
    One,
}

impl StarState {
    pub const ALL: [StarState; 4] = [StarState::Star0, StarState::Star1, StarState::Zero, StarState::One];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn initial(state: u8) -> Self {
        if state == 0 {
            StarState::Star0
        } else {
            StarState::Star1
        }
    }

    pub fn is_initial(self) -> bool {
        matches!(self, StarState::Star0 | StarState::Star1)
    }

    /// Occupancy (0 clear, 1 occupied) the state stands for.
    pub fn occupancy(self) -> u8 {
        match self {
            StarState::Star0 | StarState::Zero => 0,
            StarState::Star1 | StarState::One => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PredictorKind {
    /// Four-state model using the observed elapsed duration.
    SemiMarkov4,
    /// Same model with the elapsed duration forced to zero.
    SemiMarkov2,
    /// Exponential sojourns, closed-form two-state chain.
    Markov,
}

impl PredictorKind {
    pub const ALL: [PredictorKind; 3] =
        [PredictorKind::SemiMarkov4, PredictorKind::SemiMarkov2, PredictorKind::Markov];

    pub fn name(self) -> &'static str {
        match self {
            PredictorKind::SemiMarkov4 => "semimarkov4",
            PredictorKind::SemiMarkov2 => "semimarkov2",
            PredictorKind::Markov => "markov",
        }
    }
}

impl std::str::FromStr for PredictorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "semimarkov4" | "sm4" => Ok(PredictorKind::SemiMarkov4),
            "semimarkov2" | "sm2" => Ok(PredictorKind::SemiMarkov2),
            "markov" => Ok(PredictorKind::Markov),
            other => Err(invalid("kind", format!("unknown predictor kind `{other}`"))),
        }
    }
}

impl std::fmt::Display for PredictorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A lot at prediction time.
///
/// The initial-state sojourn of the current state uses `elapsed`; the other
/// initial state is never occupied and is given a fresh (zero-elapsed) sojourn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LotSnapshot {
    pub lot_id: String,
    pub current_state: u8,
    pub elapsed: f64,
    pub params: [WeibullParams; 2],
}

impl LotSnapshot {
    pub fn new(lot_id: impl Into<String>, current_state: u8, elapsed: f64, params: [WeibullParams; 2]) -> Result<Self> {
        if current_state > 1 {
            return Err(invalid("current_state", format!("must be 0 or 1, got {current_state}")));
        }
        if !(elapsed.is_finite() && elapsed >= 0.0) {
            return Err(invalid("elapsed", format!("must be >= 0, got {elapsed}")));
        }
        Ok(Self { lot_id: lot_id.into(), current_state, elapsed, params })
    }

    fn star_elapsed(&self, state: u8) -> f64 {
        if state == self.current_state {
            self.elapsed
        } else {
            0.0
        }
    }

    fn with_elapsed(&self, elapsed: f64) -> Self {
        Self { elapsed, ..self.clone() }
    }
}

/// Transform values of the four sojourn densities at one `u`.
#[derive(Debug, Clone, Copy)]
struct Densities {
    star: [Complex64; 2],
    fresh: [Complex64; 2],
}

fn assemble(d: &Densities, u: Complex64) -> Result<[[Complex64; 4]; 4]> {
    let zero = Complex64::new(0.0, 0.0);
    let denom = 1.0 - d.fresh[0] * d.fresh[1];
    if denom.norm() <= SINGULAR_DENOMINATOR {
        return Err(Error::Inversion(format!("near-singular renewal denominator at u = {u}")));
    }
    let g = 1.0 / denom;
    // survival transforms 1/u - F~(u)
    let s0 = (1.0 - d.fresh[0]) / u;
    let s1 = (1.0 - d.fresh[1]) / u;
    let s0s = (1.0 - d.star[0]) / u;
    let s1s = (1.0 - d.star[1]) / u;
    let (f0, f1) = (d.fresh[0], d.fresh[1]);
    let (f0s, f1s) = (d.star[0], d.star[1]);
    Ok([
        [s0s, zero, g * f0s * f1 * s0, g * f0s * s1],
        [zero, s1s, g * f1s * s0, g * f1s * f0 * s1],
        [zero, zero, g * s0, g * f0 * s1],
        [zero, zero, g * f1 * s0, g * s1],
    ])
}

fn entry(m: &[[Complex64; 4]; 4], row: StarState, col: StarState) -> Complex64 {
    m[row.index()][col.index()]
}

/// Laplace-domain transition matrix over `(0*, 1*, 0, 1)`.
pub fn ptilde_matrix(snapshot: &LotSnapshot, u: Complex64) -> Result<[[Complex64; 4]; 4]> {
    if !(u.re > 0.0) {
        return Err(invalid("u", format!("real part must be > 0, got {}", u.re)));
    }
    let tr = |state: u8, d0: f64| {
        WeibullDensityTransform::new(snapshot.params[state as usize], d0).eval(u)
    };
    let d = Densities {
        star: [tr(0, snapshot.star_elapsed(0))?, tr(1, snapshot.star_elapsed(1))?],
        fresh: [tr(0, 0.0)?, tr(1, 0.0)?],
    };
    assemble(&d, u)
}

/// One entry of the Laplace-domain matrix as an invertible transform.
///
/// Line evaluation builds one quadrature grid per distinct sojourn density
/// and reuses it across all inversion abscissae.
pub struct PtildeEntry<'a> {
    snapshot: &'a LotSnapshot,
    row: StarState,
    col: StarState,
}

impl<'a> PtildeEntry<'a> {
    pub fn new(snapshot: &'a LotSnapshot, row: StarState, col: StarState) -> Self {
        Self { snapshot, row, col }
    }
}

impl TransformEvaluator for PtildeEntry<'_> {
    fn eval(&self, u: Complex64) -> Result<Complex64> {
        Ok(entry(&ptilde_matrix(self.snapshot, u)?, self.row, self.col))
    }

    fn eval_line(&self, re: f64, im_step: f64, count: usize) -> Result<Vec<Complex64>> {
        let line = |state: u8, d0: f64| {
            WeibullDensityTransform::new(self.snapshot.params[state as usize], d0).eval_line(re, im_step, count)
        };
        let fresh0 = line(0, 0.0)?;
        let fresh1 = line(1, 0.0)?;
        let star_line = |state: u8, fresh: &Vec<Complex64>| -> Result<Vec<Complex64>> {
            let d0 = self.snapshot.star_elapsed(state);
            if d0 == 0.0 {
                Ok(fresh.clone())
            } else {
                line(state, d0)
            }
        };
        let zeros = vec![Complex64::new(0.0, 0.0); count];
        let star0 = if self.row == StarState::Star0 { star_line(0, &fresh0)? } else { zeros.clone() };
        let star1 = if self.row == StarState::Star1 { star_line(1, &fresh1)? } else { zeros };
        (0..count)
            .map(|k| {
                let u = Complex64::new(re, k as f64 * im_step);
                let d = Densities { star: [star0[k], star1[k]], fresh: [fresh0[k], fresh1[k]] };
                Ok(entry(&assemble(&d, u)?, self.row, self.col))
            })
            .collect()
    }
}

fn structural_zero(row: StarState, col: StarState) -> bool {
    col.is_initial() && row != col
}

fn check_horizon(t: f64) -> Result<()> {
    if !(t.is_finite() && t > 0.0) {
        return Err(invalid("t", format!("must be > 0, got {t}")));
    }
    Ok(())
}

/// Raw (unclamped) inverted entry; diagonal initial entries use the closed form.
fn transition_raw(snapshot: &LotSnapshot, row: StarState, col: StarState, t: f64, settings: &InversionSettings) -> Result<f64> {
    if structural_zero(row, col) {
        return Ok(0.0);
    }
    if row == col && row.is_initial() {
        let state = row.occupancy();
        return shifted_survival(&snapshot.params[state as usize], snapshot.star_elapsed(state), t);
    }
    invert(&PtildeEntry::new(snapshot, row, col), t, settings)
        .map_err(|e| Error::Inversion(format!("P[{row:?},{col:?}]({t}): {e}")))
}

/// `P_{jk}(t)` over the augmented state space.
pub fn transition_probability(
    snapshot: &LotSnapshot,
    row: StarState,
    col: StarState,
    t: f64,
    settings: &InversionSettings,
) -> Result<f64> {
    check_horizon(t)?;
    let raw = transition_raw(snapshot, row, col, t, settings)?;
    clamp_probability(raw).map_err(|e| Error::Inversion(format!("P[{row:?},{col:?}]({t}): {e}")))
}

/// Full inverted 4x4 matrix, for diagnostics.
pub fn transition_matrix(snapshot: &LotSnapshot, t: f64, settings: &InversionSettings) -> Result<[[f64; 4]; 4]> {
    check_horizon(t)?;
    let mut out = [[0.0; 4]; 4];
    for row in StarState::ALL {
        for col in StarState::ALL {
            out[row.index()][col.index()] = transition_probability(snapshot, row, col, t, settings)?;
        }
    }
    Ok(out)
}

/// Closed-form two-state Markov transition matrix.
pub fn markov_matrix(lambda0: f64, lambda1: f64, t: f64) -> Result<[[f64; 2]; 2]> {
    if !(lambda0 > 0.0 && lambda0.is_finite()) {
        return Err(invalid("lambda0", format!("must be > 0, got {lambda0}")));
    }
    if !(lambda1 > 0.0 && lambda1.is_finite()) {
        return Err(invalid("lambda1", format!("must be > 0, got {lambda1}")));
    }
    if !(t >= 0.0) {
        return Err(invalid("t", format!("must be >= 0, got {t}")));
    }
    let total = lambda0 + lambda1;
    let e = (-t * total).exp();
    let stay0 = (lambda1 + lambda0 * e) / total;
    let stay1 = (lambda0 + lambda1 * e) / total;
    Ok([[stay0, 1.0 - stay0], [1.0 - stay1, stay1]])
}

/// Probability that the lot is clear `t_f` minutes after the snapshot.
pub fn predict_free(
    snapshot: &LotSnapshot,
    t_f: f64,
    kind: PredictorKind,
    settings: &InversionSettings,
) -> Result<f64> {
    check_horizon(t_f)?;
    match kind {
        PredictorKind::Markov => {
            let [p0, p1] = snapshot.params;
            if !(p0.is_exponential() && p1.is_exponential()) {
                return Err(invalid(
                    "kind",
                    format!("markov predictor needs alpha = 1, got ({}, {})", p0.alpha(), p1.alpha()),
                ));
            }
            let m = markov_matrix(p0.b(), p1.b(), t_f)?;
            Ok(m[snapshot.current_state as usize][0])
        }
        PredictorKind::SemiMarkov4 => semi_markov_free(snapshot, t_f, settings),
        PredictorKind::SemiMarkov2 => semi_markov_free(&snapshot.with_elapsed(0.0), t_f, settings),
    }
}

fn semi_markov_free(snapshot: &LotSnapshot, t_f: f64, settings: &InversionSettings) -> Result<f64> {
    let raw = if snapshot.current_state == 0 {
        transition_raw(snapshot, StarState::Star0, StarState::Star0, t_f, settings)?
            + transition_raw(snapshot, StarState::Star0, StarState::Zero, t_f, settings)?
    } else {
        transition_raw(snapshot, StarState::Star1, StarState::Zero, t_f, settings)?
    };
    clamp_probability(raw)
}
