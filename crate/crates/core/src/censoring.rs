//! Horizon-truncated binary outcomes and inverse probability of censoring
//! weights.
//!
//! The censoring survival function `G(t, x) = P(C > t | X = x)` is modelled in
//! discrete time: the time axis is cut at empirical quantiles of the observed
//! censoring times and each interval carries its own logistic hazard
//! `h_j(x) = sigmoid(b_j + β_j·x)`. Censoring is the "event" of this model and
//! outcome events censor it. Because the likelihood factorises over intervals,
//! every interval is an independent (ridge-penalised) logistic regression on
//! its risk set and is fitted with damped Newton steps.

use std::fmt::Write as _;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::{Cohort, Partition};
use crate::math::sigmoid;

#[derive(Debug, Error)]
pub enum CensoringError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("no sample has an uncensored binary outcome")]
    NoUncensored,
    #[error("malformed censoring model: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Binary outcome at the horizon together with its follow-up and censoring status.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompositeOutcome {
    /// `1[T <= horizon]`; carried as `false` when `delta_y` is false.
    pub y: bool,
    /// `min(T, C, horizon)`.
    pub u_y: f64,
    /// `true` when the binary outcome is observed.
    pub delta_y: bool,
}

/// Builds `(Y, U^y, Δ^y)` from one right-censored observation.
///
/// An event observation reveals `T = t` with `C > T`; a censored one reveals
/// `C = t` with `T > C`. The binary outcome is censored iff `C < T` and `C < horizon`.
pub fn derive_composite_outcome(
    followup_time: f64,
    event: bool,
    horizon: f64,
) -> Result<CompositeOutcome, CensoringError> {
    if !(followup_time >= 0.0) {
        return Err(CensoringError::Domain(format!("negative follow-up time {followup_time}")));
    }
    if !(horizon > 0.0) {
        return Err(CensoringError::Domain(format!("horizon must be positive, got {horizon}")));
    }
    let u_y = followup_time.min(horizon);
    Ok(if event {
        CompositeOutcome {
            y: followup_time <= horizon,
            u_y,
            delta_y: true,
        }
    } else {
        CompositeOutcome {
            y: false,
            u_y,
            delta_y: followup_time >= horizon,
        }
    })
}

pub fn composite_outcomes(cohort: &Cohort) -> Vec<CompositeOutcome> {
    cohort
        .samples()
        .iter()
        .map(|s| {
            derive_composite_outcome(s.followup_time, s.event, cohort.horizon())
                .expect("cohort invariants guarantee valid times")
        })
        .collect()
}

/// Settings for [`fit_censoring_model`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CensoringFitConfig {
    pub n_intervals: usize,
    /// Freeze feature coefficients at zero.
    pub intercept_only: bool,
    /// Ridge penalty on feature coefficients (intercepts are not penalised).
    pub l2: f64,
    pub max_iter: usize,
    /// Stop when the gradient norm of an interval falls below this value.
    pub tol: f64,
}

impl Default for CensoringFitConfig {
    fn default() -> Self {
        Self {
            n_intervals: 20,
            intercept_only: false,
            l2: 1.0,
            max_iter: 100,
            tol: 1e-10,
        }
    }
}

const MAX_LOGIT: f64 = 35.0;

/// Discrete-time logistic hazard model of the censoring distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct CensoringModel {
    /// `B + 1` strictly increasing edges starting at 0; empty for the
    /// degenerate model `G ≡ 1`.
    boundaries: Vec<f64>,
    feature_dim: usize,
    intercepts: Vec<f64>,
    coefs: Vec<Vec<f64>>,
    loss_trace: Vec<f64>,
}

impl CensoringModel {
    /// The model used when no censoring was observed.
    pub fn degenerate(feature_dim: usize) -> Self {
        Self {
            boundaries: Vec::new(),
            feature_dim,
            intercepts: Vec::new(),
            coefs: Vec::new(),
            loss_trace: Vec::new(),
        }
    }

    /// Builds a model from explicit parameters.
    pub fn from_parts(
        boundaries: Vec<f64>,
        intercepts: Vec<f64>,
        coefs: Vec<Vec<f64>>,
        feature_dim: usize,
    ) -> Result<Self, CensoringError> {
        if boundaries.is_empty() && intercepts.is_empty() {
            return Ok(Self::degenerate(feature_dim));
        }
        if boundaries.len() < 2 || boundaries.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(CensoringError::Format("boundaries must be strictly increasing with at least 2 edges".into()));
        }
        let b = boundaries.len() - 1;
        if intercepts.len() != b || coefs.len() != b || coefs.iter().any(|c| c.len() != feature_dim) {
            return Err(CensoringError::Format("parameter shapes do not match the interval grid".into()));
        }
        Ok(Self {
            boundaries,
            feature_dim,
            intercepts,
            coefs,
            loss_trace: Vec::new(),
        })
    }

    pub fn is_degenerate(&self) -> bool {
        self.boundaries.is_empty()
    }

    pub fn boundaries(&self) -> &[f64] {
        &self.boundaries
    }

    pub fn n_intervals(&self) -> usize {
        self.boundaries.len().saturating_sub(1)
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    /// Total penalised negative log-likelihood after each Newton iteration.
    pub fn loss_trace(&self) -> &[f64] {
        &self.loss_trace
    }

    /// Hazard of interval `j` for features `x`.
    pub fn hazard(&self, j: usize, x: &[f64]) -> f64 {
        let eta = self.intercepts[j] + self.coefs[j].iter().zip(x).map(|(c, v)| c * v).sum::<f64>();
        sigmoid(eta.clamp(-MAX_LOGIT, MAX_LOGIT))
    }

    /// `G(t, x)`: product of `1 - h_j(x)` over every interval that starts
    /// before `t`. An interval containing `t` counts in full.
    pub fn survival(&self, t: f64, x: &[f64]) -> Result<f64, CensoringError> {
        if !(t >= 0.0) {
            return Err(CensoringError::Domain(format!("time must be nonnegative, got {t}")));
        }
        let mut g = 1.0;
        for j in 0..self.n_intervals() {
            if self.boundaries[j] < t {
                g *= 1.0 - self.hazard(j, x);
            } else {
                break;
            }
        }
        Ok(g)
    }

    /// Flat text form: a `censoring-model` header, `feature_dim`,
    /// `boundaries` and one `interval <j> <intercept> <coefs...>` line per interval.
    pub fn to_text(&self) -> String {
        let mut s = String::from("censoring-model v1\n");
        let _ = writeln!(s, "feature_dim {}", self.feature_dim);
        let _ = write!(s, "boundaries");
        for b in &self.boundaries {
            let _ = write!(s, " {b}");
        }
        s.push('\n');
        for j in 0..self.n_intervals() {
            let _ = write!(s, "interval {j} {}", self.intercepts[j]);
            for c in &self.coefs[j] {
                let _ = write!(s, " {c}");
            }
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, CensoringError> {
        let bad = |m: &str| CensoringError::Format(m.to_string());
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        if lines.next().map(str::trim) != Some("censoring-model v1") {
            return Err(bad("missing `censoring-model v1` header"));
        }
        let parse = |t: &str| t.parse::<f64>().map_err(|_| bad(&format!("`{t}` is not a number")));
        let dim_line = lines.next().ok_or_else(|| bad("missing feature_dim"))?;
        let feature_dim = dim_line
            .strip_prefix("feature_dim ")
            .and_then(|v| v.trim().parse::<usize>().ok())
            .ok_or_else(|| bad("bad feature_dim line"))?;
        let b_line = lines.next().ok_or_else(|| bad("missing boundaries"))?;
        let mut toks = b_line.split_whitespace();
        if toks.next() != Some("boundaries") {
            return Err(bad("bad boundaries line"));
        }
        let boundaries = toks.map(parse).collect::<Result<Vec<_>, _>>()?;
        let mut intercepts = Vec::new();
        let mut coefs = Vec::new();
        for (j, line) in lines.enumerate() {
            let mut toks = line.split_whitespace();
            if toks.next() != Some("interval") || toks.next().and_then(|t| t.parse::<usize>().ok()) != Some(j) {
                return Err(bad(&format!("bad interval line {j}")));
            }
            let vals = toks.map(parse).collect::<Result<Vec<_>, _>>()?;
            let (b, c) = vals.split_first().ok_or_else(|| bad("interval without intercept"))?;
            intercepts.push(*b);
            coefs.push(c.to_vec());
        }
        Self::from_parts(boundaries, intercepts, coefs, feature_dim)
    }
}

/// Type-1 empirical quantiles of the censoring times at `j / n_intervals`,
/// prefixed by 0 and de-duplicated.
fn quantile_edges(mut cens_times: Vec<f64>, n_intervals: usize) -> Vec<f64> {
    cens_times.sort_by(f64::total_cmp);
    let n = cens_times.len();
    let mut edges = vec![0.0];
    for j in 1..=n_intervals {
        let rank = ((j as f64 / n_intervals as f64) * n as f64).ceil() as usize;
        let q = cens_times[rank.clamp(1, n) - 1];
        if q > *edges.last().unwrap() {
            edges.push(q);
        }
    }
    edges
}

/// Interval index of time `u`: `(e_j, e_{j+1}]` maps to `j`, clamped to the grid.
fn interval_of(edges: &[f64], u: f64) -> usize {
    let b = edges.len() - 1;
    let interior = &edges[1..b];
    interior.partition_point(|&e| e < u).min(b - 1)
}

struct IntervalFit {
    params: Vec<f64>,
    trace: Vec<f64>,
}

/// Penalised logistic regression on one risk set by damped Newton iterations.
fn fit_interval(rows: &[(&[f64], bool)], dim: usize, cfg: &CensoringFitConfig) -> IntervalFit {
    let p = dim + 1;
    let objective = |theta: &[f64]| -> f64 {
        let mut nll = 0.0;
        for (x, target) in rows {
            let eta = (theta[0] + theta[1..].iter().zip(x.iter()).map(|(c, v)| c * v).sum::<f64>())
                .clamp(-MAX_LOGIT, MAX_LOGIT);
            // -log-likelihood of a Bernoulli with logit eta
            nll += crate::math::softplus(eta) - if *target { eta } else { 0.0 };
        }
        nll + 0.5 * cfg.l2 * theta[1..].iter().map(|c| c * c).sum::<f64>()
    };
    let mut theta = vec![0.0; p];
    let mut current = objective(&theta);
    let mut trace = vec![current];
    for _ in 0..cfg.max_iter {
        let mut grad = DVector::<f64>::zeros(p);
        let mut hess = DMatrix::<f64>::zeros(p, p);
        for (x, target) in rows {
            let eta = (theta[0] + theta[1..].iter().zip(x.iter()).map(|(c, v)| c * v).sum::<f64>())
                .clamp(-MAX_LOGIT, MAX_LOGIT);
            let h = sigmoid(eta);
            let r = h - if *target { 1.0 } else { 0.0 };
            let w = h * (1.0 - h);
            grad[0] += r;
            hess[(0, 0)] += w;
            for a in 0..dim {
                grad[a + 1] += r * x[a];
                hess[(0, a + 1)] += w * x[a];
                for b in 0..=a {
                    hess[(a + 1, b + 1)] += w * x[a] * x[b];
                }
            }
        }
        for a in 0..dim {
            hess[(a + 1, 0)] = hess[(0, a + 1)];
            for b in 0..a {
                hess[(b + 1, a + 1)] = hess[(a + 1, b + 1)];
            }
            grad[a + 1] += cfg.l2 * theta[a + 1];
            hess[(a + 1, a + 1)] += cfg.l2;
        }
        if grad.norm() < cfg.tol {
            break;
        }
        // Levenberg-style floor keeps the system solvable when a risk set is separable.
        let mut damped = hess.clone();
        for a in 0..p {
            damped[(a, a)] += 1e-12 * (1.0 + hess[(a, a)]);
        }
        let step = match damped.cholesky() {
            Some(ch) => ch.solve(&grad),
            None => grad.clone(),
        };
        let mut t = 1.0;
        let mut accepted = false;
        while t > 1e-10 {
            let cand: Vec<f64> = theta.iter().zip(step.iter()).map(|(v, s)| v - t * s).collect();
            let val = objective(&cand);
            if val <= current {
                theta = cand;
                accepted = val < current;
                current = val;
                break;
            }
            t *= 0.5;
        }
        trace.push(current);
        if !accepted {
            break;
        }
    }
    IntervalFit { params: theta, trace }
}

/// Fits the discrete-time censoring model on `train`.
///
/// Returns the degenerate model `G ≡ 1` (with a warning) when `train` holds
/// no censoring events. An outcome event inside an interval is at risk of
/// censoring in that interval only when it reaches the interval's right edge,
/// so with one interval per distinct censoring time the intercept-only
/// survival at the edges is the Kaplan-Meier estimate.
pub fn fit_censoring_model(train: &Cohort, cfg: &CensoringFitConfig) -> Result<CensoringModel, CensoringError> {
    if cfg.n_intervals == 0 {
        return Err(CensoringError::Domain("n_intervals must be at least 1".into()));
    }
    let cens_times: Vec<f64> = train
        .samples()
        .iter()
        .filter(|s| !s.event && s.followup_time > 0.0)
        .map(|s| s.followup_time)
        .collect();
    if cens_times.is_empty() {
        log::warn!("no censoring events observed; using G(t, x) = 1");
        return Ok(CensoringModel::degenerate(train.feature_dim()));
    }
    let edges = quantile_edges(cens_times, cfg.n_intervals);
    let b = edges.len() - 1;
    let dim = if cfg.intercept_only { 0 } else { train.feature_dim() };
    let idx: Vec<usize> = train.samples().iter().map(|s| interval_of(&edges, s.followup_time)).collect();

    let mut intercepts = Vec::with_capacity(b);
    let mut coefs = Vec::with_capacity(b);
    let mut traces = Vec::with_capacity(b);
    for j in 0..b {
        let rows: Vec<(&[f64], bool)> = train
            .samples()
            .iter()
            .zip(&idx)
            .filter(|(s, &k)| k > j || (k == j && (!s.event || s.followup_time >= edges[j + 1])))
            .map(|(s, &k)| (&s.features[..dim], k == j && !s.event))
            .collect();
        let fit = fit_interval(&rows, dim, cfg);
        intercepts.push(fit.params[0]);
        let mut c = vec![0.0; train.feature_dim()];
        c[..dim].copy_from_slice(&fit.params[1..]);
        coefs.push(c);
        traces.push(fit.trace);
    }
    let longest = traces.iter().map(Vec::len).max().unwrap_or(0);
    let loss_trace = (0..longest)
        .map(|i| traces.iter().map(|t| t[i.min(t.len() - 1)]).sum())
        .collect();
    let mut model = CensoringModel::from_parts(edges, intercepts, coefs, train.feature_dim())?;
    model.loss_trace = loss_trace;
    Ok(model)
}

/// Survival values below this floor are raised to it before inversion.
pub const SURVIVAL_FLOOR: f64 = 1e-3;

/// IPCW weights aligned with a cohort.
#[derive(Debug, Clone, PartialEq)]
pub struct IpcwWeights {
    /// `δ / max(G, floor)`, zero where the binary outcome is censored.
    pub raw: Vec<f64>,
    /// `raw` normalised to sum to one.
    pub weights: Vec<f64>,
    /// Number of uncensored samples whose survival estimate hit the floor.
    pub clipped: usize,
}

impl IpcwWeights {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Weights of `indices`, renormalised; the clip count is not carried over.
    pub fn subset(&self, indices: &[usize]) -> Result<IpcwWeights, CensoringError> {
        normalise(indices.iter().map(|&i| self.raw[i]).collect(), 0)
    }

    /// Writes `id,weight` rows for the cohort these weights belong to.
    pub fn write_csv<W: Write>(&self, cohort: &Cohort, mut out: W) -> Result<(), CensoringError> {
        writeln!(out, "id,weight")?;
        for (s, w) in cohort.samples().iter().zip(&self.weights) {
            writeln!(out, "{},{}", s.id, w)?;
        }
        Ok(())
    }
}

fn normalise(raw: Vec<f64>, clipped: usize) -> Result<IpcwWeights, CensoringError> {
    let total: f64 = raw.iter().sum();
    if !(total > 0.0) {
        return Err(CensoringError::NoUncensored);
    }
    let weights = raw.iter().map(|w| w / total).collect();
    Ok(IpcwWeights { raw, weights, clipped })
}

/// Weights `δ_i / G(u_i, x_i)` normalised to sum to one, from precomputed survival values.
pub fn weights_from_survival(outcomes: &[CompositeOutcome], survival: &[f64]) -> Result<IpcwWeights, CensoringError> {
    let mut clipped = 0;
    let raw = outcomes
        .iter()
        .zip(survival)
        .map(|(o, &g)| {
            if !o.delta_y {
                return 0.0;
            }
            if g < SURVIVAL_FLOOR {
                clipped += 1;
            }
            1.0 / g.max(SURVIVAL_FLOOR)
        })
        .collect();
    if clipped > 0 {
        log::warn!("{clipped} survival estimates clipped at {SURVIVAL_FLOOR}");
    }
    normalise(raw, clipped)
}

/// Survival of every sample at its composite follow-up time under `models`,
/// averaged over models.
pub fn averaged_survival(models: &[CensoringModel], cohort: &Cohort) -> Vec<f64> {
    let outcomes = composite_outcomes(cohort);
    cohort
        .samples()
        .iter()
        .zip(&outcomes)
        .map(|(s, o)| {
            let total: f64 = models
                .iter()
                .map(|m| m.survival(o.u_y, &s.features).expect("u_y is nonnegative"))
                .sum();
            total / models.len() as f64
        })
        .collect()
}

pub fn ipcw_weights(model: &CensoringModel, cohort: &Cohort) -> Result<IpcwWeights, CensoringError> {
    let survival = averaged_survival(std::slice::from_ref(model), cohort);
    weights_from_survival(&composite_outcomes(cohort), &survival)
}

/// Weights for every part of a partition.
#[derive(Debug, Clone)]
pub struct PartitionWeights {
    /// One model per train fold, fitted on the other folds (or on the fold
    /// itself when there is a single fold).
    pub models: Vec<CensoringModel>,
    pub train_folds: Vec<IpcwWeights>,
    pub validation: IpcwWeights,
    pub test: IpcwWeights,
}

/// Cross-fitted weights: each train fold is weighted by the model that did not
/// see it; validation and test use the survival averaged over all fold models.
pub fn cross_fit_weights(partition: &Partition, cfg: &CensoringFitConfig) -> Result<PartitionWeights, CensoringError> {
    let k = partition.train_folds.len();
    let models = (0..k)
        .map(|f| fit_censoring_model(&partition.train_without(f), cfg))
        .collect::<Result<Vec<_>, _>>()?;
    let train_folds = partition
        .train_folds
        .iter()
        .zip(&models)
        .map(|(fold, m)| ipcw_weights(m, fold))
        .collect::<Result<Vec<_>, _>>()?;
    let averaged = |c: &Cohort| weights_from_survival(&composite_outcomes(c), &averaged_survival(&models, c));
    Ok(PartitionWeights {
        validation: averaged(&partition.validation)?,
        test: averaged(&partition.test)?,
        models,
        train_folds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::Sample;

    fn cohort(rows: &[(f64, bool)]) -> Cohort {
        let samples = rows
            .iter()
            .enumerate()
            .map(|(i, &(t, e))| Sample {
                id: format!("{i}"),
                group: 0,
                features: vec![(i as f64 * 0.37).sin()],
                followup_time: t,
                event: e,
            })
            .collect();
        Cohort::new(samples, vec!["g".into()], 10.0, 1).unwrap()
    }

    #[test]
    fn composite_outcome_cases() {
        let o = derive_composite_outcome(5.0, true, 10.0).unwrap();
        assert_eq!((o.y, o.u_y, o.delta_y), (true, 5.0, true));
        let o = derive_composite_outcome(8.0, false, 10.0).unwrap();
        assert_eq!((o.u_y, o.delta_y), (8.0, false));
        let o = derive_composite_outcome(12.0, false, 10.0).unwrap();
        assert_eq!((o.y, o.u_y, o.delta_y), (false, 10.0, true));
        let o = derive_composite_outcome(12.0, true, 10.0).unwrap();
        assert_eq!((o.y, o.u_y, o.delta_y), (false, 10.0, true));
        assert!(derive_composite_outcome(-1.0, true, 10.0).is_err());
        assert!(derive_composite_outcome(1.0, true, 0.0).is_err());
    }

    #[test]
    fn no_censoring_gives_unit_survival_and_uniform_weights() {
        let c = cohort(&[(1.0, true), (3.0, true), (12.0, true), (20.0, true)]);
        let m = fit_censoring_model(&c, &CensoringFitConfig::default()).unwrap();
        assert!(m.is_degenerate());
        for t in [0.0, 1.0, 100.0] {
            assert_eq!(m.survival(t, &[0.3]).unwrap(), 1.0);
        }
        let w = ipcw_weights(&m, &c).unwrap();
        assert!(w.weights.iter().all(|&v| v == 0.25));
    }

    #[test]
    fn single_interval_product() {
        let logit = (0.3f64 / 0.7).ln();
        let m = CensoringModel::from_parts(vec![0.0, 2.0], vec![logit], vec![vec![0.0]], 1).unwrap();
        assert_eq!(m.survival(0.0, &[1.0]).unwrap(), 1.0);
        assert!((m.survival(5.0, &[1.0]).unwrap() - 0.7).abs() < 1e-15);
        assert!((m.survival(1.0, &[1.0]).unwrap() - 0.7).abs() < 1e-15);
        assert!(m.survival(-1.0, &[1.0]).is_err());
    }

    #[test]
    fn hand_weights_from_survival() {
        let outcomes = [
            derive_composite_outcome(2.0, true, 10.0).unwrap(),
            derive_composite_outcome(11.0, false, 10.0).unwrap(),
            derive_composite_outcome(3.0, true, 10.0).unwrap(),
            derive_composite_outcome(4.0, false, 10.0).unwrap(),
        ];
        let w = weights_from_survival(&outcomes, &[1.0, 0.5, 1.0, 0.9]).unwrap();
        assert_eq!(w.raw, vec![1.0, 2.0, 1.0, 0.0]);
        assert_eq!(w.weights, vec![0.25, 0.5, 0.25, 0.0]);
    }

    #[test]
    fn floor_is_applied_and_counted() {
        let outcomes = [derive_composite_outcome(2.0, true, 10.0).unwrap(); 2];
        let w = weights_from_survival(&outcomes, &[1e-5, 1.0]).unwrap();
        assert_eq!(w.clipped, 1);
        assert_eq!(w.raw, vec![1000.0, 1.0]);
    }

    #[test]
    fn all_censored_is_an_error() {
        let outcomes = [derive_composite_outcome(2.0, false, 10.0).unwrap()];
        assert!(matches!(weights_from_survival(&outcomes, &[0.5]), Err(CensoringError::NoUncensored)));
    }

    #[test]
    fn fitted_survival_is_monotone_and_loss_nonincreasing() {
        let rows: Vec<(f64, bool)> = (0..60)
            .map(|i| (((i * 7919) % 97) as f64 / 5.0 + 0.1, i % 3 != 0))
            .collect();
        let c = cohort(&rows);
        let cfg = CensoringFitConfig {
            n_intervals: 6,
            l2: 0.1,
            ..Default::default()
        };
        let m = fit_censoring_model(&c, &cfg).unwrap();
        assert!(m.loss_trace().windows(2).all(|w| w[1] <= w[0] + 1e-12));
        for x in [-2.0, -0.5, 0.0, 0.7, 3.0] {
            let mut prev = 1.0;
            for k in 0..200 {
                let g = m.survival(k as f64 * 0.1, &[x]).unwrap();
                assert!(g <= prev && g > 0.0);
                prev = g;
            }
        }
    }

    #[test]
    fn intercept_only_matches_kaplan_meier() {
        let c = cohort(&[
            (1.0, false),
            (2.0, true),
            (2.5, false),
            (3.0, true),
            (3.0, false),
            (4.0, false),
            (5.0, true),
            (6.0, false),
            (7.0, true),
            (8.0, true),
        ]);
        let cfg = CensoringFitConfig {
            intercept_only: true,
            ..Default::default()
        };
        let m = fit_censoring_model(&c, &cfg).unwrap();
        assert_eq!(m.boundaries(), &[0.0, 1.0, 2.5, 3.0, 4.0, 6.0]);
        // at-risk counts 10, 8, 7, 5, 3 with one censoring each
        let km = [(1.0, 0.9), (2.5, 0.7875), (3.0, 0.675), (4.0, 0.54), (6.0, 0.36)];
        for (t, g) in km {
            assert!((m.survival(t, &[0.0]).unwrap() - g).abs() < 1e-6, "G({t})");
        }
    }

    #[test]
    fn text_round_trip() {
        let rows: Vec<(f64, bool)> = (0..30).map(|i| (1.0 + i as f64 * 0.3, i % 2 == 0)).collect();
        let m = fit_censoring_model(&cohort(&rows), &CensoringFitConfig::default()).unwrap();
        let back = CensoringModel::from_text(&m.to_text()).unwrap();
        assert_eq!(back.boundaries(), m.boundaries());
        assert_eq!(back.to_text(), m.to_text());
        let d = CensoringModel::degenerate(3);
        assert_eq!(CensoringModel::from_text(&d.to_text()).unwrap(), d);
        assert!(CensoringModel::from_text("nonsense").is_err());
    }

    #[test]
    fn quantile_edges_are_strictly_increasing() {
        let e = quantile_edges(vec![1.0, 1.0, 1.0, 2.0, 5.0], 4);
        assert_eq!(e, vec![0.0, 1.0, 2.0, 5.0]);
        assert_eq!(interval_of(&e, 0.0), 0);
        assert_eq!(interval_of(&e, 1.0), 0);
        assert_eq!(interval_of(&e, 1.5), 1);
        assert_eq!(interval_of(&e, 9.0), 2);
    }
}
