//! Analytic simulation of how subgroup miscalibration, recalibration and
//! equalized-odds constraints shift utility-maximising thresholds.
//!
//! A subgroup is a density `p(u)` tabulated on a grid over `[0, 1]`, a
//! strictly increasing score map `m(u)` giving the reported score, and an
//! outcome probability `q(u) = P(Y = 1 | U = u)`. Before any transform the
//! score map is the identity and `q` is the subgroup's calibration curve.
//! Recalibration replaces the score map by `q`, which is the change of
//! variables `S' = c(S)`; all integrals are taken over `u`, so total mass
//! and incidence are preserved exactly.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, Continuous};
use thiserror::Error;

use crate::decision::{aggregate_utility_quadrature, trapezoid_between, FixedCostUtility};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Shape of a subgroup calibration curve `c(s)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveShape {
    Identity,
    /// `c(s) = -(s - 1)² + 1`, risk underestimated.
    Under,
    /// `c(s) = 2s + (s - 1)² - 1`, risk overestimated.
    Over,
    /// `c(s) = value` everywhere.
    Constant(f64),
}

impl CurveShape {
    pub fn eval(self, s: f64) -> f64 {
        match self {
            CurveShape::Identity => s,
            CurveShape::Under => -(s - 1.0).powi(2) + 1.0,
            CurveShape::Over => 2.0 * s + (s - 1.0).powi(2) - 1.0,
            CurveShape::Constant(v) => v,
        }
    }

    pub fn derivative(self, s: f64) -> f64 {
        match self {
            CurveShape::Identity => 1.0,
            CurveShape::Under => -2.0 * (s - 1.0),
            CurveShape::Over => 2.0 + 2.0 * (s - 1.0),
            CurveShape::Constant(_) => 0.0,
        }
    }
}

/// Integrates `f` over the whole grid with the trapezoid rule.
fn trapezoid(xs: &[f64], f: &[f64]) -> f64 {
    xs.windows(2).zip(f.windows(2)).map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1])).sum()
}

/// Linear interpolation of `ys` at `x` over the increasing grid `xs`, clamped at the ends.
fn interp(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    if x <= xs[0] {
        return ys[0];
    }
    let last = xs.len() - 1;
    if x >= xs[last] {
        return ys[last];
    }
    let k = xs.partition_point(|&v| v <= x) - 1;
    let t = (x - xs[k]) / (xs[k + 1] - xs[k]);
    ys[k] + t * (ys[k + 1] - ys[k])
}

/// Point `u` with `ys(u) = target` for increasing `ys`, clamped to the grid.
fn inverse_interp(xs: &[f64], ys: &[f64], target: f64) -> f64 {
    interp(ys, xs, target)
}

fn strictly_increasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] > w[0])
}

/// Distribution of a score `S = m(U)` where `U` has a tabulated density.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreDistribution {
    /// Base coordinate grid over `[0, 1]`.
    pub grid: Vec<f64>,
    /// Density of `U` on the grid.
    pub density: Vec<f64>,
    /// Score reported at each grid point.
    pub score_map: Vec<f64>,
    /// Derivative of the score map at each grid point.
    pub score_slope: Vec<f64>,
    identity: bool,
}

impl ScoreDistribution {
    /// Tabulated density normalised to integrate to one with the trapezoid rule.
    pub fn tabulated(grid: Vec<f64>, density: Vec<f64>) -> Result<Self, SimError> {
        if grid.len() < 2 || grid.len() != density.len() {
            return Err(SimError::Domain("density grid needs at least two points and matching values".into()));
        }
        if !strictly_increasing(&grid) {
            return Err(SimError::Domain("density grid must be strictly increasing".into()));
        }
        if density.iter().any(|&d| !(d >= 0.0) || !d.is_finite()) {
            return Err(SimError::Domain("density values must be finite and nonnegative".into()));
        }
        let mass = trapezoid(&grid, &density);
        if !(mass > 0.0) {
            return Err(SimError::Domain("density has no mass".into()));
        }
        let density = density.into_iter().map(|d| d / mass).collect();
        Ok(Self {
            score_map: grid.clone(),
            score_slope: vec![1.0; grid.len()],
            grid,
            density,
            identity: true,
        })
    }

    /// `Beta(alpha, beta)` tabulated on `n_points` equally spaced points of `[0, 1]`.
    pub fn beta(alpha: f64, beta: f64, n_points: usize) -> Result<Self, SimError> {
        if !(alpha >= 1.0 && beta >= 1.0) {
            return Err(SimError::Domain(format!("Beta({alpha}, {beta}) needs both shapes at least 1 to be bounded")));
        }
        if n_points < 2 {
            return Err(SimError::Domain("need at least two grid points".into()));
        }
        let dist = Beta::new(alpha, beta).map_err(|e| SimError::Domain(e.to_string()))?;
        let grid: Vec<f64> = (0..n_points).map(|k| k as f64 / (n_points - 1) as f64).collect();
        let density = grid
            .iter()
            .map(|&x| {
                let d = dist.pdf(x);
                if d.is_finite() {
                    d
                } else {
                    0.0
                }
            })
            .collect();
        Self::tabulated(grid, density)
    }

    /// Total probability mass.
    pub fn mass(&self) -> f64 {
        trapezoid(&self.grid, &self.density)
    }

    /// Mean score `E[m(U)]`.
    pub fn mean(&self) -> f64 {
        let f: Vec<f64> = self.density.iter().zip(&self.score_map).map(|(p, m)| p * m).collect();
        trapezoid(&self.grid, &f)
    }

    /// Base point whose score is `s`.
    pub fn base_point(&self, s: f64) -> f64 {
        if self.identity {
            return s.clamp(self.grid[0], self.grid[self.grid.len() - 1]);
        }
        inverse_interp(&self.grid, &self.score_map, s)
    }

    /// Density of the score at `s`; zero outside the score range.
    pub fn density_at(&self, s: f64) -> f64 {
        if self.identity {
            return interp(&self.grid, &self.density, s);
        }
        let lo = self.score_map[0];
        let hi = self.score_map[self.score_map.len() - 1];
        if s < lo || s > hi {
            return 0.0;
        }
        let u = self.base_point(s);
        let p = interp(&self.grid, &self.density, u);
        let slope = interp(&self.grid, &self.score_slope, u);
        if p == 0.0 {
            0.0
        } else if slope > 0.0 {
            p / slope
        } else {
            f64::INFINITY
        }
    }

    /// `P(S >= s)`.
    pub fn survival(&self, s: f64) -> f64 {
        let u = self.base_point(s);
        trapezoid_between(&self.grid, &self.density, u, 1.0)
    }

    /// Same mass relabelled by `S' = c(U)`.
    fn remapped(&self, curve: &[f64], slope: &[f64]) -> Self {
        Self {
            grid: self.grid.clone(),
            density: self.density.clone(),
            score_map: curve.to_vec(),
            score_slope: slope.to_vec(),
            identity: false,
        }
    }
}

/// Configuration of one simulated subgroup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubgroupSpec {
    pub label: String,
    pub alpha: f64,
    pub beta: f64,
    pub curve: CurveShape,
}

/// A subgroup with its score distribution and outcome probabilities on the base grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Subgroup {
    pub label: String,
    pub distribution: ScoreDistribution,
    /// `P(Y = 1 | U = u)` on the base grid.
    pub outcome: Vec<f64>,
    /// Derivative of `outcome` on the base grid.
    pub outcome_slope: Vec<f64>,
}

impl Subgroup {
    pub fn from_spec(spec: &SubgroupSpec, n_points: usize) -> Result<Self, SimError> {
        let distribution = ScoreDistribution::beta(spec.alpha, spec.beta, n_points)?;
        let outcome: Vec<f64> = distribution.grid.iter().map(|&u| spec.curve.eval(u)).collect();
        if outcome.iter().any(|&c| !(0.0..=1.0).contains(&c)) {
            return Err(SimError::Domain(format!("calibration curve of '{}' leaves [0, 1]", spec.label)));
        }
        let outcome_slope = distribution.grid.iter().map(|&u| spec.curve.derivative(u)).collect();
        Ok(Self {
            label: spec.label.clone(),
            distribution,
            outcome,
            outcome_slope,
        })
    }

    /// Calibration curve `c(s) = q(m⁻¹(s))` of the reported score.
    pub fn calibration_at(&self, s: f64) -> f64 {
        let d = &self.distribution;
        if s < d.score_map[0] || s > d.score_map[d.score_map.len() - 1] {
            return f64::NAN;
        }
        interp(&d.grid, &self.outcome, d.base_point(s))
    }

    fn joint(&self, positive: bool) -> Vec<f64> {
        self.distribution
            .density
            .iter()
            .zip(&self.outcome)
            .map(|(p, q)| if positive { p * q } else { p * (1.0 - q) })
            .collect()
    }
}

/// `∫ c(s)·p(s) ds`.
pub fn subgroup_incidence(group: &Subgroup) -> f64 {
    trapezoid(&group.distribution.grid, &group.joint(true))
}

/// Reports each score as its calibration-curve value, making the subgroup
/// calibrated. The curve must be strictly increasing.
pub fn recalibrate_scores(group: &Subgroup) -> Result<Subgroup, SimError> {
    if !strictly_increasing(&group.outcome) {
        return Err(SimError::Domain(format!("calibration curve of '{}' is not strictly increasing", group.label)));
    }
    Ok(Subgroup {
        label: group.label.clone(),
        distribution: group.distribution.remapped(&group.outcome, &group.outcome_slope),
        outcome: group.outcome.clone(),
        outcome_slope: group.outcome_slope.clone(),
    })
}

/// Gives every subgroup the class-conditional score densities of the
/// calibrated `reference`, keeping each subgroup's incidence.
pub fn equalize_odds_transform(groups: &[Subgroup], reference: &Subgroup) -> Result<Vec<Subgroup>, SimError> {
    let rd = &reference.distribution;
    if !rd.identity || reference.outcome.iter().zip(&rd.grid).any(|(q, u)| q != u) {
        return Err(SimError::Domain(format!("reference subgroup '{}' is not calibrated", reference.label)));
    }
    let pi = subgroup_incidence(reference);
    let pos: Vec<f64> = reference.joint(true).into_iter().map(|v| v / pi).collect();
    let neg: Vec<f64> = reference.joint(false).into_iter().map(|v| v / (1.0 - pi)).collect();
    groups
        .iter()
        .map(|g| {
            if g.distribution.grid != rd.grid {
                return Err(SimError::Domain(format!("subgroup '{}' uses a different grid", g.label)));
            }
            let p = subgroup_incidence(g);
            let density: Vec<f64> = pos.iter().zip(&neg).map(|(a, b)| a * p + b * (1.0 - p)).collect();
            let outcome: Vec<f64> = reference
                .outcome
                .iter()
                .map(|&q| {
                    let a = q / pi * p;
                    let b = (1.0 - q) / (1.0 - pi) * (1.0 - p);
                    a / (a + b)
                })
                .collect();
            let outcome_slope = finite_difference(&rd.grid, &outcome);
            Ok(Subgroup {
                label: g.label.clone(),
                distribution: ScoreDistribution {
                    grid: rd.grid.clone(),
                    density,
                    score_map: rd.grid.clone(),
                    score_slope: vec![1.0; rd.grid.len()],
                    identity: true,
                },
                outcome,
                outcome_slope,
            })
        })
        .collect()
}

fn finite_difference(xs: &[f64], ys: &[f64]) -> Vec<f64> {
    let n = xs.len();
    (0..n)
        .map(|k| {
            let (a, b) = if k == 0 {
                (0, 1)
            } else if k == n - 1 {
                (n - 2, n - 1)
            } else {
                (k - 1, k + 1)
            };
            (ys[b] - ys[a]) / (xs[b] - xs[a])
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    /// Shared score distribution, subgroup-specific calibration curves.
    DemographicParity,
    /// Each subgroup's scores replaced by its calibration-curve values.
    Recalibrated,
    /// Each subgroup given the reference subgroup's score distributions conditional on the outcome.
    EqualizedOdds,
}

impl Setting {
    pub fn name(self) -> &'static str {
        match self {
            Setting::DemographicParity => "demographic_parity",
            Setting::Recalibrated => "recalibrated",
            Setting::EqualizedOdds => "equalized_odds",
        }
    }

    pub const ALL: [Setting; 3] = [Setting::DemographicParity, Setting::Recalibrated, Setting::EqualizedOdds];
}

/// Inputs of one simulated setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimScenario {
    pub setting: Setting,
    pub subgroups: Vec<SubgroupSpec>,
    pub utility: FixedCostUtility,
    pub tau_star: f64,
    /// Quadrature points on `[0, 1]`.
    pub n_points: usize,
    /// Spacing of the reported threshold grid.
    pub step: f64,
}

impl SimScenario {
    /// Calibrated, underestimating and overestimating subgroups sharing `Beta(2.5, 7.5)` scores.
    pub fn standard(setting: Setting) -> Self {
        let group = |label: &str, curve| SubgroupSpec {
            label: label.into(),
            alpha: 2.5,
            beta: 7.5,
            curve,
        };
        Self {
            setting,
            subgroups: vec![
                group("calibrated", CurveShape::Identity),
                group("under", CurveShape::Under),
                group("over", CurveShape::Over),
            ],
            utility: FixedCostUtility {
                u_tp: 0.8,
                u_fp: 0.0,
                u_tn: 0.2,
                u_fn: 0.0,
            },
            tau_star: 0.2,
            n_points: 4001,
            step: 0.001,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.subgroups.is_empty() {
            return Err(SimError::Domain("scenario has no subgroups".into()));
        }
        if !(self.tau_star > 0.0 && self.tau_star < 1.0) {
            return Err(SimError::Domain(format!("tau_star must lie in (0, 1), got {}", self.tau_star)));
        }
        if !(self.step > 0.0 && self.step <= 0.5) {
            return Err(SimError::Domain(format!("threshold step must lie in (0, 0.5], got {}", self.step)));
        }
        if ((1.0 / self.step).round() * self.step - 1.0).abs() > 1e-9 {
            return Err(SimError::Domain(format!("threshold step {} does not divide 1", self.step)));
        }
        if self.n_points < 3 {
            return Err(SimError::Domain("need at least three quadrature points".into()));
        }
        Ok(())
    }

    /// Thresholds `0, step, 2·step, ..., 1`.
    pub fn thresholds(&self) -> Vec<f64> {
        let n = (1.0 / self.step).round() as usize;
        (0..=n).map(|k| k as f64 / n as f64).collect()
    }
}

/// Series and optimal thresholds of one subgroup.
#[derive(Debug, Clone, PartialEq)]
pub struct SubgroupResult {
    pub label: String,
    pub incidence: f64,
    /// Series name to values on the threshold grid.
    pub series: BTreeMap<&'static str, Vec<f64>>,
    /// Metric name to grid threshold maximising it.
    pub argmax: BTreeMap<&'static str, f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub setting: Setting,
    pub thresholds: Vec<f64>,
    pub subgroups: Vec<SubgroupResult>,
}

impl SimResult {
    pub fn subgroup(&self, label: &str) -> Option<&SubgroupResult> {
        self.subgroups.iter().find(|g| g.label == label)
    }
}

fn argmax(xs: &[f64], values: &[f64]) -> f64 {
    let mut best = 0;
    for k in 1..values.len() {
        if values[k] > values[best] {
            best = k;
        }
    }
    xs[best]
}

/// Subgroups of `scenario` after its setting's transform.
pub fn build_subgroups(scenario: &SimScenario) -> Result<Vec<Subgroup>, SimError> {
    scenario.validate()?;
    let base = scenario
        .subgroups
        .iter()
        .map(|s| Subgroup::from_spec(s, scenario.n_points))
        .collect::<Result<Vec<_>, _>>()?;
    match scenario.setting {
        Setting::DemographicParity => Ok(base),
        Setting::Recalibrated => base.iter().map(recalibrate_scores).collect(),
        Setting::EqualizedOdds => {
            let reference = scenario
                .subgroups
                .iter()
                .position(|s| s.curve == CurveShape::Identity)
                .ok_or_else(|| SimError::Domain("equalized odds needs a calibrated reference subgroup".into()))?;
            equalize_odds_transform(&base, &base[reference])
        }
    }
}

/// Evaluates every series of every subgroup on the threshold grid.
pub fn run_simulation(scenario: &SimScenario) -> Result<SimResult, SimError> {
    let groups = build_subgroups(scenario)?;
    let thresholds = scenario.thresholds();
    let odds = scenario.tau_star / (1.0 - scenario.tau_star);
    let mut out = Vec::with_capacity(groups.len());
    for g in &groups {
        let d = &g.distribution;
        let incidence = subgroup_incidence(g);
        let pos = g.joint(true);
        let neg = g.joint(false);
        let outcome_monotone = strictly_increasing(&g.outcome);
        let mut series: BTreeMap<&'static str, Vec<f64>> = BTreeMap::new();
        for &name in &["density", "calibration", "tpr", "fpr", "utility", "net_benefit", "calibrated_net_benefit"] {
            series.insert(name, Vec::with_capacity(thresholds.len()));
        }
        for &tau in &thresholds {
            let u = d.base_point(tau);
            let tp = trapezoid_between(&d.grid, &pos, u, 1.0);
            let fp = trapezoid_between(&d.grid, &neg, u, 1.0);
            let cnb = if outcome_monotone {
                let uc = inverse_interp(&d.grid, &g.outcome, tau);
                trapezoid_between(&d.grid, &pos, uc, 1.0) - trapezoid_between(&d.grid, &neg, uc, 1.0) * odds
            } else {
                f64::NAN
            };
            let push = |series: &mut BTreeMap<&'static str, Vec<f64>>, k: &'static str, v: f64| series.get_mut(k).unwrap().push(v);
            push(&mut series, "density", d.density_at(tau));
            push(&mut series, "calibration", g.calibration_at(tau));
            push(&mut series, "tpr", tp / incidence);
            push(&mut series, "fpr", fp / (1.0 - incidence));
            push(
                &mut series,
                "utility",
                aggregate_utility_quadrature(&d.grid, &d.density, &g.outcome, &scenario.utility, u),
            );
            push(&mut series, "net_benefit", tp - fp * odds);
            push(&mut series, "calibrated_net_benefit", cnb);
        }
        let mut best = BTreeMap::new();
        best.insert("utility", argmax(&thresholds, &series["utility"]));
        best.insert("net_benefit", argmax(&thresholds, &series["net_benefit"]));
        if outcome_monotone {
            best.insert("calibrated_net_benefit", argmax(&thresholds, &series["calibrated_net_benefit"]));
        }
        out.push(SubgroupResult {
            label: g.label.clone(),
            incidence,
            series,
            argmax: best,
        });
    }
    Ok(SimResult {
        setting: scenario.setting,
        thresholds,
        subgroups: out,
    })
}

fn fmt(v: f64) -> String {
    if v.is_finite() {
        v.to_string()
    } else {
        "NA".into()
    }
}

/// `setting,subgroup,series,s,value`.
pub fn write_series_csv<W: Write>(results: &[SimResult], mut out: W) -> std::io::Result<()> {
    writeln!(out, "setting,subgroup,series,s,value")?;
    for r in results {
        for g in &r.subgroups {
            for (name, values) in &g.series {
                for (s, v) in r.thresholds.iter().zip(values) {
                    writeln!(out, "{},{},{},{},{}", r.setting.name(), g.label, name, s, fmt(*v))?;
                }
            }
        }
    }
    Ok(())
}

/// `setting,subgroup,metric,threshold`.
pub fn write_argmax_csv<W: Write>(results: &[SimResult], mut out: W) -> std::io::Result<()> {
    writeln!(out, "setting,subgroup,metric,threshold")?;
    for r in results {
        for g in &r.subgroups {
            for (metric, t) in &g.argmax {
                writeln!(out, "{},{},{},{}", r.setting.name(), g.label, metric, t)?;
            }
        }
    }
    Ok(())
}
