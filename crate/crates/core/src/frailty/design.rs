//! Design matrices for the linear predictor.

use serde::{Deserialize, Serialize};

use super::bspline::BSplineBasis;
use crate::error::{invalid, Error, Result};
use crate::spell::{Covariates, Spell, WEEKDAY_NAMES};

/// Preferred reference levels for side-of-street, in order.
pub const SIDE_REFERENCE_PREFERENCE: [&str; 3] = ["west", "north", "curbside"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Term {
    Linear(String),
    Spline { covariate: String, order: usize, df: usize },
}

impl Term {
    pub fn covariate(&self) -> &str {
        match self {
            Term::Linear(c) => c,
            Term::Spline { covariate, .. } => covariate,
        }
    }
}

/// Ordered model terms; the intercept is implicit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct PredictorSpec {
    pub terms: Vec<Term>,
}

impl PredictorSpec {
    pub fn intercept_only() -> Self {
        Self::default()
    }

    /// weekday + side + nearby + spline(hour, order, df).
    pub fn standard(order: usize, df: usize) -> Self {
        Self {
            terms: vec![
                Term::Linear("weekday".into()),
                Term::Linear("side".into()),
                Term::Linear("nearby".into()),
                Term::Spline { covariate: "hour".into(), order, df },
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for term in &self.terms {
            let name = term.covariate();
            if !seen.insert(name.to_string()) {
                return Err(invalid("spec", format!("covariate `{name}` appears in more than one term")));
            }
            covariate_kind(name)?;
            if let Term::Spline { order, df, .. } = term {
                if covariate_kind(name)? == Kind::Categorical {
                    return Err(invalid("spec", format!("spline requested on categorical covariate `{name}`")));
                }
                if *order < 1 || *df < order + 1 {
                    return Err(invalid("spec", format!("spline on `{name}` needs df >= order + 1")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Categorical,
    Numeric,
}

fn covariate_kind(name: &str) -> Result<Kind> {
    match name {
        "weekday" | "side" => Ok(Kind::Categorical),
        "nearby" | "hour" => Ok(Kind::Numeric),
        other => Err(invalid("spec", format!("unknown covariate `{other}`"))),
    }
}

/// Fitted encoding of one term, sufficient to encode new covariate rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TermLayout {
    Weekday,
    Side { reference: String, levels: Vec<String> },
    Numeric { covariate: String, impute: f64 },
    Spline { covariate: String, basis: BSplineBasis, means: Vec<f64> },
}

impl TermLayout {
    fn width(&self) -> usize {
        match self {
            TermLayout::Weekday => 6,
            TermLayout::Side { levels, .. } => levels.len(),
            TermLayout::Numeric { .. } => 1,
            TermLayout::Spline { means, .. } => means.len(),
        }
    }

    fn names(&self) -> Vec<String> {
        match self {
            TermLayout::Weekday => WEEKDAY_NAMES[1..].iter().map(|s| s.to_string()).collect(),
            TermLayout::Side { levels, .. } => levels.clone(),
            TermLayout::Numeric { covariate, .. } => vec![covariate.clone()],
            TermLayout::Spline { covariate, means, .. } => {
                (1..=means.len()).map(|k| format!("{covariate}[{k}]")).collect()
            }
        }
    }

    fn is_linear(&self) -> bool {
        !matches!(self, TermLayout::Spline { .. })
    }
}

/// Column layout of a design, reusable at prediction time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignLayout {
    pub spec: PredictorSpec,
    pub terms: Vec<TermLayout>,
}

fn numeric_value(c: &Covariates, name: &str) -> Option<f64> {
    match name {
        "nearby" => c.nearby,
        "hour" => Some(c.hour),
        _ => None,
    }
}

impl DesignLayout {
    pub fn width(&self) -> usize {
        1 + self.terms.iter().map(TermLayout::width).sum::<usize>()
    }

    pub fn column_names(&self) -> Vec<String> {
        let mut names = vec!["(Intercept)".to_string()];
        for t in &self.terms {
            names.extend(t.names());
        }
        names
    }

    /// Indices of the intercept and all non-spline columns.
    pub fn linear_columns(&self) -> Vec<usize> {
        let mut out = vec![0];
        let mut col = 1;
        for t in &self.terms {
            let w = t.width();
            if t.is_linear() {
                out.extend(col..col + w);
            }
            col += w;
        }
        out
    }

    /// Encoded row; the second value flags an imputed missing `nearby`.
    pub fn encode(&self, c: &Covariates) -> Result<(Vec<f64>, bool)> {
        let mut row = Vec::with_capacity(self.width());
        let mut imputed = false;
        row.push(1.0);
        for term in &self.terms {
            match term {
                TermLayout::Weekday => {
                    if c.weekday > 6 {
                        return Err(invalid("weekday", format!("must be 0..=6, got {}", c.weekday)));
                    }
                    for day in 1..7u8 {
                        row.push(if c.weekday == day { 1.0 } else { 0.0 });
                    }
                }
                TermLayout::Side { levels, .. } => {
                    for level in levels {
                        row.push(if &c.side == level { 1.0 } else { 0.0 });
                    }
                }
                TermLayout::Numeric { covariate, impute } => match numeric_value(c, covariate) {
                    Some(v) if v.is_finite() => row.push(v),
                    _ => {
                        imputed = true;
                        row.push(*impute);
                    }
                },
                TermLayout::Spline { covariate, basis, means } => {
                    let v = numeric_value(c, covariate)
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| Error::Data(format!("missing covariate `{covariate}`")))?;
                    for (b, m) in basis.eval(v).into_iter().zip(means) {
                        row.push(b - m);
                    }
                }
            }
        }
        Ok((row, imputed))
    }
}

/// Row-major design matrix with its layout.
#[derive(Debug, Clone)]
pub struct Design {
    pub layout: DesignLayout,
    pub n_rows: usize,
    pub n_cols: usize,
    pub values: Vec<f64>,
    /// Rows whose `nearby` value was imputed.
    pub imputed: Vec<bool>,
}

impl Design {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn column_names(&self) -> Vec<String> {
        self.layout.column_names()
    }

    pub fn column_mean(&self, j: usize) -> f64 {
        (0..self.n_rows).map(|i| self.values[i * self.n_cols + j]).sum::<f64>() / self.n_rows as f64
    }

    /// Rejects designs whose scaled Gram matrix is numerically singular.
    pub fn check_rank(&self) -> Result<()> {
        let p = self.n_cols;
        let mut gram = nalgebra::DMatrix::<f64>::zeros(p, p);
        for i in 0..self.n_rows {
            let r = self.row(i);
            for a in 0..p {
                if r[a] == 0.0 {
                    continue;
                }
                for b in a..p {
                    gram[(a, b)] += r[a] * r[b];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                gram[(a, b)] = gram[(b, a)];
            }
        }
        let names = self.column_names();
        let scale: Vec<f64> = (0..p).map(|a| gram[(a, a)].sqrt()).collect();
        if let Some(a) = scale.iter().position(|s| *s == 0.0) {
            return Err(Error::Data(format!("design column `{}` is identically zero", names[a])));
        }
        for a in 0..p {
            for b in 0..p {
                gram[(a, b)] /= scale[a] * scale[b];
            }
        }
        let eig = gram.symmetric_eigen();
        let max = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
        let (imin, min) = eig
            .eigenvalues
            .iter()
            .cloned()
            .enumerate()
            .min_by(|x, y| x.1.total_cmp(&y.1))
            .unwrap_or((0, 0.0));
        if min <= 1e-10 * max {
            let v = eig.eigenvectors.column(imin);
            let involved: Vec<&str> = (0..p)
                .filter(|&a| v[a].abs() > 0.1)
                .map(|a| names[a].as_str())
                .collect();
            return Err(Error::Data(format!(
                "design is rank deficient (collinear columns: {})",
                involved.join(", ")
            )));
        }
        Ok(())
    }
}

fn choose_side_reference(levels: &[String]) -> String {
    for pref in SIDE_REFERENCE_PREFERENCE {
        if levels.iter().any(|l| l == pref) {
            return pref.to_string();
        }
    }
    levels[0].clone()
}

/// Builds the design for `spells`, fixing categorical levels, imputation
/// values, spline knots and spline centering from the data.
pub fn build_design(spells: &[Spell], spec: &PredictorSpec) -> Result<Design> {
    spec.validate()?;
    if spells.is_empty() {
        return Err(Error::EmptyInput("build_design needs at least one spell"));
    }
    let mut terms = Vec::with_capacity(spec.terms.len());
    for term in &spec.terms {
        let layout = match term {
            Term::Linear(name) if name == "weekday" => TermLayout::Weekday,
            Term::Linear(name) if name == "side" => {
                let mut levels: Vec<String> = spells.iter().map(|s| s.covariates.side.clone()).collect();
                levels.sort();
                levels.dedup();
                let reference = choose_side_reference(&levels);
                levels.retain(|l| *l != reference);
                TermLayout::Side { reference, levels }
            }
            Term::Linear(name) => {
                let observed: Vec<f64> = spells
                    .iter()
                    .filter_map(|s| numeric_value(&s.covariates, name))
                    .filter(|v| v.is_finite())
                    .collect();
                if observed.is_empty() {
                    return Err(Error::Data(format!("covariate `{name}` is missing on every spell")));
                }
                let impute = observed.iter().sum::<f64>() / observed.len() as f64;
                TermLayout::Numeric { covariate: name.clone(), impute }
            }
            Term::Spline { covariate, order, df } => {
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                for s in spells {
                    let v = numeric_value(&s.covariates, covariate)
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| Error::Data(format!("missing covariate `{covariate}` on a spell")))?;
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
                let basis = BSplineBasis::new(*order, *df, lo, hi)?;
                let mut means = vec![0.0; basis.df()];
                for s in spells {
                    let v = numeric_value(&s.covariates, covariate).unwrap_or(lo);
                    for (m, b) in means.iter_mut().zip(basis.eval(v)) {
                        *m += b;
                    }
                }
                for m in &mut means {
                    *m /= spells.len() as f64;
                }
                TermLayout::Spline { covariate: covariate.clone(), basis, means }
            }
        };
        terms.push(layout);
    }
    let layout = DesignLayout { spec: spec.clone(), terms };
    let n_cols = layout.width();
    let mut values = Vec::with_capacity(spells.len() * n_cols);
    let mut imputed = Vec::with_capacity(spells.len());
    for s in spells {
        let (row, imp) = layout.encode(&s.covariates)?;
        values.extend(row);
        imputed.push(imp);
    }
    Ok(Design { layout, n_rows: spells.len(), n_cols, values, imputed })
}
