//! Utility-based decision analysis: conditional and aggregate utility,
//! optimal thresholds, fixed-cost and risk-reduction net benefit, calibrated
//! net benefit and decision curves.
//!
//! Probabilities are IPCW-weighted sample proportions. Both net benefit
//! formulations are normalised so that treating nobody scores exactly zero.

use std::io::Write;

use thiserror::Error;

use crate::metrics::{check_lengths, CalibrationModel, MetricError};

#[derive(Debug, Error)]
pub enum DecisionError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Expected utility of each classification cell.
#[derive(Debug, Clone, Copy, PartialEq, serde::Deserialize, serde::Serialize)]
pub struct FixedCostUtility {
    pub u_tp: f64,
    pub u_fp: f64,
    pub u_tn: f64,
    pub u_fn: f64,
}

impl FixedCostUtility {
    /// Expected utility of treating a patient whose outcome probability is `c`.
    pub fn treated(&self, c: f64) -> f64 {
        self.u_tp * c + self.u_fp * (1.0 - c)
    }

    /// Expected utility of not treating a patient whose outcome probability is `c`.
    pub fn untreated(&self, c: f64) -> f64 {
        self.u_fn * c + self.u_tn * (1.0 - c)
    }
}

/// Gain of treating over not treating at outcome probability `c`.
pub fn conditional_utility_fixed(c_of_s: f64, u: &FixedCostUtility) -> f64 {
    (u.u_tp - u.u_fn) * c_of_s + (u.u_fp - u.u_tn) * (1.0 - c_of_s)
}

/// Threshold at which a calibrated model's treat and no-treat utilities balance.
pub fn optimal_threshold_fixed(u: &FixedCostUtility) -> Result<f64, DecisionError> {
    let harm = u.u_tn - u.u_fp;
    let denom = harm + u.u_tp - u.u_fn;
    if !(denom > 0.0) {
        return Err(DecisionError::Domain(format!("utility denominator must be positive, got {denom}")));
    }
    let t = harm / denom;
    if !(0.0..=1.0).contains(&t) {
        return Err(DecisionError::Domain(format!("implied threshold {t} lies outside [0, 1]")));
    }
    Ok(t)
}

fn check_tau_star(tau_star: f64) -> Result<(), DecisionError> {
    if !(tau_star > 0.0 && tau_star < 1.0) {
        return Err(DecisionError::Domain(format!("tau_star must lie in (0, 1), got {tau_star}")));
    }
    Ok(())
}

/// Weighted joint proportions at one threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Cells {
    /// `P(Y = 1, S >= tau)`
    pos_treated: f64,
    /// `P(Y = 0, S >= tau)`
    neg_treated: f64,
}

fn cells(scores: &[f64], y: &[bool], weights: &[f64], tau: f64) -> Result<Cells, DecisionError> {
    check_lengths(scores, y, weights)?;
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(MetricError::Undefined("net benefit needs positive total weight".into()).into());
    }
    let (mut pos, mut neg) = (0.0, 0.0);
    for i in 0..scores.len() {
        if scores[i] >= tau {
            if y[i] {
                pos += weights[i];
            } else {
                neg += weights[i];
            }
        }
    }
    Ok(Cells {
        pos_treated: pos / total,
        neg_treated: neg / total,
    })
}

/// Fixed-cost net benefit of treating `S >= tau` when the benefit-harm trade-off is `tau_star`.
pub fn net_benefit_fixed(scores: &[f64], y: &[bool], weights: &[f64], tau: f64, tau_star: f64) -> Result<f64, DecisionError> {
    check_tau_star(tau_star)?;
    let c = cells(scores, y, weights, tau)?;
    Ok(c.pos_treated - c.neg_treated * tau_star / (1.0 - tau_star))
}

/// Relative risk reduction `1 - 0.78^kappa` for an LDL-C reduction of `kappa` mmol/L.
pub fn relative_risk_reduction(kappa: f64) -> Result<f64, DecisionError> {
    if !(kappa > 0.0) || !kappa.is_finite() {
        return Err(DecisionError::Domain(format!("kappa must be positive, got {kappa}")));
    }
    if kappa == 1.0 {
        return Ok(0.22);
    }
    Ok(1.0 - 0.78f64.powf(kappa))
}

/// Treatment that multiplies outcome risk by `1 - r` at a fixed harm,
/// parameterised by the threshold `tau_star` a calibrated model would use.
#[derive(Debug, Clone, Copy, PartialEq, serde::Deserialize, serde::Serialize)]
pub struct RiskReductionUtility {
    pub tau_star: f64,
    pub r: f64,
}

impl RiskReductionUtility {
    pub fn new(tau_star: f64, r: f64) -> Result<Self, DecisionError> {
        let u = Self { tau_star, r };
        u.validate()?;
        Ok(u)
    }

    pub fn validate(&self) -> Result<(), DecisionError> {
        check_tau_star(self.tau_star)?;
        if !(self.r > 0.0 && self.r < 1.0) {
            return Err(DecisionError::Domain(format!("r must lie in (0, 1), got {}", self.r)));
        }
        Ok(())
    }
}

/// Risk-reduction net benefit.
///
/// The expected outcome rate under the policy is
/// `(1 - NPV)·P(S < tau) + P(S >= tau)·[(1 - r)·PPV + r·tau_star]`, and the net
/// benefit is `P(Y = 1)` minus that rate. Expanding the predictive values,
/// this equals `r·[P(Y = 1, S >= tau) - tau_star·P(S >= tau)]`, which is the
/// form evaluated here.
pub fn net_benefit_rr(scores: &[f64], y: &[bool], weights: &[f64], tau: f64, spec: &RiskReductionUtility) -> Result<f64, DecisionError> {
    spec.validate()?;
    let c = cells(scores, y, weights, tau)?;
    let treated = c.pos_treated + c.neg_treated;
    Ok(spec.r * (c.pos_treated - spec.tau_star * treated))
}

/// Which net benefit formulation to evaluate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NetBenefitSpec {
    FixedCost { tau_star: f64 },
    RiskReduction(RiskReductionUtility),
}

impl NetBenefitSpec {
    /// Fixed-cost formulation at the optimal threshold implied by `u`.
    pub fn from_utility(u: &FixedCostUtility) -> Result<Self, DecisionError> {
        Ok(NetBenefitSpec::FixedCost {
            tau_star: optimal_threshold_fixed(u)?,
        })
    }

    pub fn tau_star(&self) -> f64 {
        match self {
            NetBenefitSpec::FixedCost { tau_star } => *tau_star,
            NetBenefitSpec::RiskReduction(u) => u.tau_star,
        }
    }

    /// The same formulation with a different `tau_star`.
    pub fn with_tau_star(&self, tau_star: f64) -> Self {
        match self {
            NetBenefitSpec::FixedCost { .. } => NetBenefitSpec::FixedCost { tau_star },
            NetBenefitSpec::RiskReduction(u) => NetBenefitSpec::RiskReduction(RiskReductionUtility { tau_star, r: u.r }),
        }
    }

    pub fn net_benefit(&self, scores: &[f64], y: &[bool], weights: &[f64], tau: f64) -> Result<f64, DecisionError> {
        match self {
            NetBenefitSpec::FixedCost { tau_star } => net_benefit_fixed(scores, y, weights, tau, *tau_star),
            NetBenefitSpec::RiskReduction(u) => net_benefit_rr(scores, y, weights, tau, u),
        }
    }
}

/// Net benefit evaluated at the score threshold `c⁻¹(tau)`.
pub fn calibrated_net_benefit(
    scores: &[f64],
    y: &[bool],
    weights: &[f64],
    tau: f64,
    spec: &NetBenefitSpec,
    calibration: &CalibrationModel,
) -> Result<f64, DecisionError> {
    let threshold = calibration.invert(tau)?;
    spec.net_benefit(scores, y, weights, threshold)
}

/// How `tau_star` relates to the evaluated threshold along a decision curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CurveMode {
    /// `tau_star = tau` at every point.
    Standard,
    /// `tau_star` held fixed while `tau` sweeps the grid.
    Parameterized(f64),
}

impl CurveMode {
    pub fn name(&self) -> &'static str {
        match self {
            CurveMode::Standard => "standard",
            CurveMode::Parameterized(_) => "parameterized",
        }
    }
}

/// Net benefit formulation of a decision curve; `tau_star` comes from the [`CurveMode`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CurveKind {
    FixedCost,
    RiskReduction { r: f64 },
}

impl CurveKind {
    fn spec(&self, tau_star: f64) -> NetBenefitSpec {
        match self {
            CurveKind::FixedCost => NetBenefitSpec::FixedCost { tau_star },
            CurveKind::RiskReduction { r } => NetBenefitSpec::RiskReduction(RiskReductionUtility { tau_star, r: *r }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub tau: f64,
    pub tau_star: f64,
    pub nb: f64,
    pub cnb: f64,
    pub treat_all_nb: f64,
    /// Always zero; kept so the reference series is explicit.
    pub treat_none_nb: f64,
    /// Weighted share of samples with `S >= tau`.
    pub treated_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionCurve {
    pub group: String,
    pub mode: CurveMode,
    pub points: Vec<CurvePoint>,
}

impl DecisionCurve {
    /// Grid point with the largest value of `key`; the first one on ties.
    pub fn argmax_by(&self, key: impl Fn(&CurvePoint) -> f64) -> Option<&CurvePoint> {
        let mut best: Option<&CurvePoint> = None;
        for p in &self.points {
            if best.is_none_or(|b| key(p) > key(b)) {
                best = Some(p);
            }
        }
        best
    }
}

/// The 199-point grid `0.005, 0.010, ..., 0.995`.
pub fn default_grid() -> Vec<f64> {
    (1..200).map(|i| i as f64 / 200.0).collect()
}

pub fn validate_grid(grid: &[f64]) -> Result<(), DecisionError> {
    if grid.is_empty() {
        return Err(DecisionError::Domain("threshold grid is empty".into()));
    }
    if grid.iter().any(|&t| !(t > 0.0 && t < 1.0)) {
        return Err(DecisionError::Domain("threshold grid must lie in (0, 1)".into()));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(DecisionError::Domain("threshold grid must be strictly increasing".into()));
    }
    Ok(())
}

/// Evaluates NB, cNB and the treat-all reference at every grid threshold.
#[allow(clippy::too_many_arguments)]
pub fn decision_curve(
    group: &str,
    scores: &[f64],
    y: &[bool],
    weights: &[f64],
    grid: &[f64],
    mode: CurveMode,
    kind: CurveKind,
    calibration: &CalibrationModel,
) -> Result<DecisionCurve, DecisionError> {
    validate_grid(grid)?;
    if let CurveMode::Parameterized(t) = mode {
        check_tau_star(t)?;
    }
    let total: f64 = weights.iter().sum();
    let mut points = Vec::with_capacity(grid.len());
    for &tau in grid {
        let tau_star = match mode {
            CurveMode::Standard => tau,
            CurveMode::Parameterized(t) => t,
        };
        let spec = kind.spec(tau_star);
        let nb = spec.net_benefit(scores, y, weights, tau)?;
        let cnb = calibrated_net_benefit(scores, y, weights, tau, &spec, calibration)?;
        let treat_all_nb = spec.net_benefit(scores, y, weights, f64::NEG_INFINITY)?;
        let treated: f64 = scores.iter().zip(weights).filter(|(&s, _)| s >= tau).map(|(_, &w)| w).sum();
        points.push(CurvePoint {
            tau,
            tau_star,
            nb,
            cnb,
            treat_all_nb,
            treat_none_nb: 0.0,
            treated_fraction: treated / total,
        });
    }
    Ok(DecisionCurve {
        group: group.to_string(),
        mode,
        points,
    })
}

/// `group,mode,tau,tau_star,nb,cnb,treat_all_nb`, one row per curve point.
pub fn write_decision_curves<W: Write>(curves: &[DecisionCurve], mut out: W) -> std::io::Result<()> {
    writeln!(out, "group,mode,tau,tau_star,nb,cnb,treat_all_nb")?;
    for c in curves {
        for p in &c.points {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                c.group,
                c.mode.name(),
                p.tau,
                p.tau_star,
                p.nb,
                p.cnb,
                p.treat_all_nb
            )?;
        }
    }
    Ok(())
}

/// Population-average utility of treating `S >= tau`, estimated from a
/// weighted sample with outcome probabilities given by the calibration curve `c`.
pub fn aggregate_utility_empirical(
    scores: &[f64],
    weights: &[f64],
    c: impl Fn(f64) -> f64,
    u: &FixedCostUtility,
    tau: f64,
) -> Result<f64, DecisionError> {
    if scores.len() != weights.len() {
        return Err(MetricError::Length(format!("scores {}, weights {}", scores.len(), weights.len())).into());
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(DecisionError::Domain("aggregate utility needs positive total weight".into()));
    }
    let sum: f64 = scores
        .iter()
        .zip(weights)
        .map(|(&s, &w)| {
            let p = c(s);
            w * if s >= tau { u.treated(p) } else { u.untreated(p) }
        })
        .sum();
    Ok(sum / total)
}

/// Realised average utility of treating `S >= tau` on a weighted sample with observed outcomes.
pub fn aggregate_utility_observed(scores: &[f64], y: &[bool], weights: &[f64], u: &FixedCostUtility, tau: f64) -> Result<f64, DecisionError> {
    check_lengths(scores, y, weights)?;
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(DecisionError::Domain("aggregate utility needs positive total weight".into()));
    }
    let sum: f64 = (0..scores.len())
        .map(|i| {
            let p = if y[i] { 1.0 } else { 0.0 };
            weights[i] * if scores[i] >= tau { u.treated(p) } else { u.untreated(p) }
        })
        .sum();
    Ok(sum / total)
}

/// Trapezoid integral of `f` over `[lo, hi]` where `f` is sampled on the
/// increasing grid `xs`; partial cells at the ends are linearly interpolated.
pub fn trapezoid_between(xs: &[f64], f: &[f64], lo: f64, hi: f64) -> f64 {
    let mut acc = 0.0;
    for k in 0..xs.len().saturating_sub(1) {
        let (x0, x1) = (xs[k], xs[k + 1]);
        let a = x0.max(lo);
        let b = x1.min(hi);
        if b <= a {
            continue;
        }
        let lerp = |x: f64| f[k] + (f[k + 1] - f[k]) * (x - x0) / (x1 - x0);
        acc += 0.5 * (b - a) * (lerp(a) + lerp(b));
    }
    acc
}

/// Population-average utility of treating `S >= tau` for a score density
/// sampled on `grid`, with outcome probabilities `calibration[k] = c(grid[k])`.
pub fn aggregate_utility_quadrature(grid: &[f64], density: &[f64], calibration: &[f64], u: &FixedCostUtility, tau: f64) -> f64 {
    let treated: Vec<f64> = density.iter().zip(calibration).map(|(&d, &c)| d * u.treated(c)).collect();
    let untreated: Vec<f64> = density.iter().zip(calibration).map(|(&d, &c)| d * u.untreated(c)).collect();
    let lo = grid[0];
    let hi = grid[grid.len() - 1];
    trapezoid_between(grid, &untreated, lo, tau) + trapezoid_between(grid, &treated, tau, hi)
}
