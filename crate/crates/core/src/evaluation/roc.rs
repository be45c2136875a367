//! Threshold classification, ROC curves and AUC with "clear" as the
//! positive class.

/// Interior thresholds used by the experiment.
pub const DEFAULT_GRID: usize = 99;

/// Predicted state: 0 (clear) when `p_free >= c`.
pub fn classify(p_free: f64, c: f64) -> u8 {
    if p_free >= c {
        0
    } else {
        1
    }
}

/// Where the thresholds are placed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Thresholds {
    /// `P` equally spaced interior thresholds k/(P+1).
    Grid(usize),
    /// Every distinct score.
    Exact,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    /// Ascending, starting at −∞ and ending at +∞.
    pub thresholds: Vec<f64>,
    pub tnr: Vec<f64>,
    pub tpr: Vec<f64>,
    pub auc: f64,
    /// Set when the outcomes contain only one class; rates of the missing
    /// class are reported as NaN and the AUC is NaN.
    pub degenerate: bool,
}

/// ROC over `(p_free, truth)` pairs.
pub fn roc(outcomes: &[(f64, u8)], thresholds: Thresholds) -> RocCurve {
    let mut cs = vec![f64::NEG_INFINITY];
    match thresholds {
        Thresholds::Grid(p) => cs.extend((1..=p).map(|k| k as f64 / (p + 1) as f64)),
        Thresholds::Exact => {
            let mut scores: Vec<f64> = outcomes.iter().map(|o| o.0).collect();
            scores.sort_by(f64::total_cmp);
            scores.dedup();
            cs.extend(scores);
        }
    }
    cs.push(f64::INFINITY);

    let positives = outcomes.iter().filter(|o| o.1 == 0).count();
    let negatives = outcomes.len() - positives;
    // scores sorted once; counts of p >= c by binary search
    let mut pos_scores: Vec<f64> = outcomes.iter().filter(|o| o.1 == 0).map(|o| o.0).collect();
    let mut neg_scores: Vec<f64> = outcomes.iter().filter(|o| o.1 != 0).map(|o| o.0).collect();
    pos_scores.sort_by(f64::total_cmp);
    neg_scores.sort_by(f64::total_cmp);
    let at_least = |v: &[f64], c: f64| v.len() - v.partition_point(|s| *s < c);

    let mut tpr = Vec::with_capacity(cs.len());
    let mut tnr = Vec::with_capacity(cs.len());
    for &c in &cs {
        tpr.push(at_least(&pos_scores, c) as f64 / positives as f64);
        tnr.push(1.0 - at_least(&neg_scores, c) as f64 / negatives as f64);
    }
    let degenerate = positives == 0 || negatives == 0;
    let mut curve = RocCurve { thresholds: cs, tnr, tpr, auc: f64::NAN, degenerate };
    if !degenerate {
        curve.auc = auc(&curve);
    }
    curve
}

/// Trapezoidal area under TPR against 1 − TNR.
pub fn auc(curve: &RocCurve) -> f64 {
    let mut area = 0.0;
    for k in 1..curve.thresholds.len() {
        let fpr_prev = 1.0 - curve.tnr[k - 1];
        let fpr = 1.0 - curve.tnr[k];
        area += (fpr_prev - fpr) * (curve.tpr[k - 1] + curve.tpr[k]) / 2.0;
    }
    area
}

/// P(score of a positive > score of a negative) + ½ P(tie), by enumeration.
pub fn mann_whitney(outcomes: &[(f64, u8)]) -> f64 {
    let mut total = 0.0;
    let mut pairs = 0usize;
    for a in outcomes.iter().filter(|o| o.1 == 0) {
        for b in outcomes.iter().filter(|o| o.1 != 0) {
            pairs += 1;
            total += match a.0.total_cmp(&b.0) {
                std::cmp::Ordering::Greater => 1.0,
                std::cmp::Ordering::Equal => 0.5,
                std::cmp::Ordering::Less => 0.0,
            };
        }
    }
    total / pairs as f64
}
