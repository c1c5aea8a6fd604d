//! IPCW-weighted performance metrics, logistic calibration curves, fairness
//! summaries and stratified percentile bootstrap intervals.
//!
//! Every metric takes unnormalised nonnegative sample weights and normalises
//! them over the samples it is computed on, so multiplying all weights by a
//! constant never changes a result. With uniform weights each metric reduces
//! to its ordinary unweighted counterpart.

use std::fmt::Write as _;
use std::io::Write;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::math::{clip_prob, logit, sigmoid};

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("metric is undefined: {0}")]
    Undefined(String),
    #[error("input lengths differ: {0}")]
    Length(String),
    #[error("calibration fit did not converge (a = {intercept}, b = {slope}, |grad| = {grad_norm:e})")]
    NonConvergence {
        intercept: f64,
        slope: f64,
        grad_norm: f64,
    },
    #[error("calibration curve with slope {0} is not invertible")]
    NonInvertible(f64),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("stratification error: {0}")]
    Stratification(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn check_lengths(scores: &[f64], y: &[bool], weights: &[f64]) -> Result<(), MetricError> {
    if scores.len() != y.len() || scores.len() != weights.len() {
        return Err(MetricError::Length(format!(
            "scores {}, outcomes {}, weights {}",
            scores.len(),
            y.len(),
            weights.len()
        )));
    }
    Ok(())
}

/// Censoring-adjusted AUC: the weight of positive/negative pairs ordered
/// correctly, with ties counted as one half.
///
/// Runs in `O(n log n)` by sweeping tie blocks in ascending score order.
pub fn ipcw_auc(scores: &[f64], y: &[bool], weights: &[f64]) -> Result<f64, MetricError> {
    check_lengths(scores, y, weights)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[i].total_cmp(&scores[j]));
    let (mut pos_total, mut neg_total) = (0.0, 0.0);
    for i in 0..scores.len() {
        if y[i] {
            pos_total += weights[i];
        } else {
            neg_total += weights[i];
        }
    }
    if !(pos_total > 0.0) || !(neg_total > 0.0) {
        return Err(MetricError::Undefined("AUC needs weighted positives and negatives".into()));
    }
    let mut neg_below = 0.0;
    let mut concordant = 0.0;
    let mut k = 0;
    while k < order.len() {
        let s = scores[order[k]];
        let (mut pos_block, mut neg_block) = (0.0, 0.0);
        while k < order.len() && scores[order[k]] == s {
            let i = order[k];
            if y[i] {
                pos_block += weights[i];
            } else {
                neg_block += weights[i];
            }
            k += 1;
        }
        concordant += pos_block * (neg_below + 0.5 * neg_block);
        neg_below += neg_block;
    }
    Ok((concordant / (pos_total * neg_total)).clamp(0.0, 1.0))
}

/// Weighted mean binary cross-entropy with probabilities clipped at `1e-15`.
pub fn ipcw_log_loss(scores: &[f64], y: &[bool], weights: &[f64]) -> Result<f64, MetricError> {
    check_lengths(scores, y, weights)?;
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(MetricError::Undefined("log-loss needs positive total weight".into()));
    }
    let loss: f64 = scores
        .iter()
        .zip(y)
        .zip(weights)
        .map(|((&s, &yi), &w)| {
            let s = clip_prob(s);
            w * if yi { -s.ln() } else { -(1.0 - s).ln() }
        })
        .sum();
    Ok(loss / total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RateKind {
    Tpr,
    Fpr,
}

impl RateKind {
    pub fn name(self) -> &'static str {
        match self {
            RateKind::Tpr => "tpr",
            RateKind::Fpr => "fpr",
        }
    }

    fn class(self) -> bool {
        matches!(self, RateKind::Tpr)
    }
}

/// Weighted share of the positive (TPR) or negative (FPR) class with `s >= threshold`.
pub fn ipcw_rate(scores: &[f64], y: &[bool], weights: &[f64], threshold: f64, kind: RateKind) -> Result<f64, MetricError> {
    check_lengths(scores, y, weights)?;
    let class = kind.class();
    let (mut above, mut total) = (0.0, 0.0);
    for i in 0..scores.len() {
        if y[i] == class {
            total += weights[i];
            if scores[i] >= threshold {
                above += weights[i];
            }
        }
    }
    if !(total > 0.0) {
        return Err(MetricError::Undefined(format!("{} needs a weighted {} class", kind.name(), if class { "positive" } else { "negative" })));
    }
    Ok(above / total)
}

/// Logistic recalibration curve `c(s) = sigmoid(a + b·logit(s))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationModel {
    pub intercept: f64,
    pub slope: f64,
}

impl CalibrationModel {
    pub const IDENTITY: CalibrationModel = CalibrationModel {
        intercept: 0.0,
        slope: 1.0,
    };

    pub fn is_identity(&self) -> bool {
        self.intercept == 0.0 && self.slope == 1.0
    }

    /// `c(s)`; the identity curve returns `s` unchanged.
    pub fn evaluate(&self, s: f64) -> f64 {
        if self.is_identity() {
            return s;
        }
        sigmoid(self.intercept + self.slope * logit(s))
    }

    /// The score `s` with `c(s) = target`.
    pub fn invert(&self, target: f64) -> Result<f64, MetricError> {
        invert_calibration(self, target)
    }
}

pub fn invert_calibration(model: &CalibrationModel, target: f64) -> Result<f64, MetricError> {
    if !(model.slope > 0.0) {
        return Err(MetricError::NonInvertible(model.slope));
    }
    if !(target > 0.0 && target < 1.0) {
        return Err(MetricError::Domain(format!("calibration target must lie in (0, 1), got {target}")));
    }
    if model.is_identity() {
        return Ok(target);
    }
    Ok(sigmoid((logit(target) - model.intercept) / model.slope))
}

const CALIBRATION_TOL: f64 = 1e-8;
const CALIBRATION_MAX_ITER: usize = 100;

/// Weighted maximum-likelihood fit of `y ~ sigmoid(a + b·logit(s))` by Newton's method.
pub fn fit_calibration_curve(scores: &[f64], y: &[bool], weights: &[f64]) -> Result<CalibrationModel, MetricError> {
    check_lengths(scores, y, weights)?;
    let total: f64 = weights.iter().sum();
    let pos: f64 = weights.iter().zip(y).filter(|(_, &yi)| yi).map(|(w, _)| w).sum();
    if !(pos > 0.0) || !(total - pos > 0.0) {
        return Err(MetricError::Undefined("calibration curve needs weighted positives and negatives".into()));
    }
    let rows: Vec<(f64, f64, f64)> = scores
        .iter()
        .zip(y)
        .zip(weights)
        .filter(|(_, &w)| w > 0.0)
        .map(|((&s, &yi), &w)| (logit(s), if yi { 1.0 } else { 0.0 }, w / total))
        .collect();
    let nll = |a: f64, b: f64| -> f64 {
        rows.iter()
            .map(|&(z, t, w)| {
                let eta = a + b * z;
                w * (crate::math::softplus(eta) - t * eta)
            })
            .sum()
    };
    let (mut a, mut b) = (0.0, 1.0);
    let mut current = nll(a, b);
    let mut grad_norm = f64::INFINITY;
    for _ in 0..CALIBRATION_MAX_ITER {
        let (mut ga, mut gb, mut haa, mut hab, mut hbb) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for &(z, t, w) in &rows {
            let p = sigmoid(a + b * z);
            let r = w * (p - t);
            let h = w * p * (1.0 - p);
            ga += r;
            gb += r * z;
            haa += h;
            hab += h * z;
            hbb += h * z * z;
        }
        grad_norm = ga.hypot(gb);
        if grad_norm < CALIBRATION_TOL {
            return Ok(CalibrationModel { intercept: a, slope: b });
        }
        let det = haa * hbb - hab * hab;
        let (da, db) = if det > 1e-300 {
            ((hbb * ga - hab * gb) / det, (haa * gb - hab * ga) / det)
        } else {
            (ga, gb)
        };
        let mut t = 1.0;
        let mut moved = false;
        while t > 1e-12 {
            let (na, nb) = (a - t * da, b - t * db);
            let val = nll(na, nb);
            if val <= current {
                moved = val < current || (na, nb) != (a, b);
                a = na;
                b = nb;
                current = val;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            break;
        }
    }
    Err(MetricError::NonConvergence {
        intercept: a,
        slope: b,
        grad_norm,
    })
}

/// Weighted mean of `|s - c(s)|`.
pub fn ace(scores: &[f64], y: &[bool], weights: &[f64], calibration: &CalibrationModel) -> Result<f64, MetricError> {
    check_lengths(scores, y, weights)?;
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(MetricError::Undefined("ACE needs positive total weight".into()));
    }
    let gap: f64 = scores
        .iter()
        .zip(weights)
        .map(|(&s, &w)| w * (s - calibration.evaluate(s)).abs())
        .sum();
    Ok(gap / total)
}

/// Population variance (divide by `K`) of per-group metric values.
pub fn intergroup_variance(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / k
}

/// Percentile interval of a bootstrap distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapCI {
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
    pub n_replicates: usize,
    pub seed: u64,
}

/// Linear-interpolation empirical quantile of sorted data.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// 2.5% and 97.5% quantiles of the finite values; `None` when there are none.
pub fn percentile_interval(values: &[f64]) -> Option<(f64, f64)> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    Some((quantile_sorted(&v, 0.025), quantile_sorted(&v, 0.975)))
}

/// Resampling plan that draws with replacement inside each stratum,
/// preserving stratum sizes. Replicate `r` uses its own ChaCha stream so
/// replicates can be generated in any order.
#[derive(Debug, Clone)]
pub struct StratifiedBootstrap {
    strata: Vec<Vec<usize>>,
    n_replicates: usize,
    seed: u64,
}

impl StratifiedBootstrap {
    /// `labels[i]` is the stratum of sample `i`; every stratum in `0..n_strata` must be nonempty.
    pub fn new(labels: &[usize], n_strata: usize, n_replicates: usize, seed: u64) -> Result<Self, MetricError> {
        if n_replicates == 0 {
            return Err(MetricError::Domain("n_replicates must be positive".into()));
        }
        let mut strata = vec![Vec::new(); n_strata];
        for (i, &l) in labels.iter().enumerate() {
            strata
                .get_mut(l)
                .ok_or_else(|| MetricError::Stratification(format!("label {l} outside 0..{n_strata}")))?
                .push(i);
        }
        if let Some(empty) = strata.iter().position(Vec::is_empty) {
            return Err(MetricError::Stratification(format!("stratum {empty} is empty")));
        }
        Ok(Self {
            strata,
            n_replicates,
            seed,
        })
    }

    /// Strata are the distinct labels that occur.
    pub fn from_present_labels(labels: &[usize], n_replicates: usize, seed: u64) -> Result<Self, MetricError> {
        let mut distinct: Vec<usize> = labels.to_vec();
        distinct.sort_unstable();
        distinct.dedup();
        let compact: Vec<usize> = labels.iter().map(|l| distinct.binary_search(l).unwrap()).collect();
        Self::new(&compact, distinct.len(), n_replicates, seed)
    }

    pub fn n_replicates(&self) -> usize {
        self.n_replicates
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Sample indices of replicate `r`.
    pub fn resample(&self, r: usize) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(r as u64 + 1);
        let mut out = Vec::with_capacity(self.strata.iter().map(Vec::len).sum());
        for stratum in &self.strata {
            for _ in 0..stratum.len() {
                out.push(*stratum.choose(&mut rng).expect("strata are nonempty"));
            }
        }
        out
    }

    /// Evaluates `statistic` on every replicate, in parallel, returning
    /// results in replicate order.
    pub fn map<T, F>(&self, statistic: F) -> Vec<T>
    where
        T: Send,
        F: Fn(&[usize]) -> T + Sync,
    {
        (0..self.n_replicates)
            .into_par_iter()
            .map(|r| statistic(&self.resample(r)))
            .collect()
    }

    /// Percentile CI of a scalar statistic; `estimate` is evaluated on all samples.
    /// Returns `None` bounds (NaN) when the statistic is undefined on every replicate.
    pub fn interval<F>(&self, statistic: F) -> BootstrapCI
    where
        F: Fn(&[usize]) -> f64 + Sync,
    {
        let n: usize = self.strata.iter().map(Vec::len).sum();
        let all: Vec<usize> = (0..n).collect();
        let estimate = statistic(&all);
        let values = self.map(&statistic);
        self.ci_from(estimate, &values)
    }

    pub fn ci_from(&self, estimate: f64, values: &[f64]) -> BootstrapCI {
        let (lower, upper) = percentile_interval(values).unwrap_or((f64::NAN, f64::NAN));
        BootstrapCI {
            estimate,
            lower,
            upper,
            n_replicates: self.n_replicates,
            seed: self.seed,
        }
    }
}

/// Convenience wrapper around [`StratifiedBootstrap::interval`].
pub fn stratified_bootstrap<F>(labels: &[usize], n_replicates: usize, seed: u64, statistic: F) -> Result<BootstrapCI, MetricError>
where
    F: Fn(&[usize]) -> f64 + Sync,
{
    Ok(StratifiedBootstrap::from_present_labels(labels, n_replicates, seed)?.interval(statistic))
}

/// One row of a metric report; `NaN` estimates are written as `NA`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub metric: String,
    pub group: String,
    pub threshold: Option<f64>,
    pub estimate: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
}

fn fmt_value(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else {
        "NA".into()
    }
}

impl MetricReport {
    pub fn push(&mut self, metric: &str, group: &str, threshold: Option<f64>, ci: BootstrapCI) {
        self.rows.push(MetricRow {
            metric: metric.to_string(),
            group: group.to_string(),
            threshold,
            estimate: ci.estimate,
            ci_lower: ci.lower,
            ci_upper: ci.upper,
        });
    }

    pub fn get(&self, metric: &str, group: &str, threshold: Option<f64>) -> Option<&MetricRow> {
        self.rows
            .iter()
            .find(|r| r.metric == metric && r.group == group && r.threshold == threshold)
    }

    /// `metric,group,threshold,estimate,ci_lower,ci_upper`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "metric,group,threshold,estimate,ci_lower,ci_upper")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                r.metric,
                r.group,
                r.threshold.map(|t| format!("{t}")).unwrap_or_default(),
                fmt_value(r.estimate),
                fmt_value(r.ci_lower),
                fmt_value(r.ci_upper)
            )?;
        }
        Ok(())
    }

    /// Human-readable aligned table.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<24} {:<16} {:>9} {:>12} {:>12} {:>12}", "metric", "group", "threshold", "estimate", "lower", "upper");
        for r in &self.rows {
            let th = r.threshold.map(|t| format!("{t}")).unwrap_or_else(|| "-".into());
            let f = |v: f64| if v.is_finite() { format!("{v:.6}") } else { "NA".into() };
            let _ = writeln!(
                s,
                "{:<24} {:<16} {:>9} {:>12} {:>12} {:>12}",
                r.metric,
                r.group,
                th,
                f(r.estimate),
                f(r.ci_lower),
                f(r.ci_upper)
            );
        }
        s
    }
}
