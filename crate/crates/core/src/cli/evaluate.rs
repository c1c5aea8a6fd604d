//! Test-set evaluation: model files, weight files, bootstrap metric reports
//! and per-group decision curves.

use std::collections::BTreeMap;
use std::path::Path;

use super::CliError;
use crate::cohort::Cohort;
use crate::decision::{
    calibrated_net_benefit, decision_curve, net_benefit_fixed, CurveKind, CurveMode, DecisionCurve, NetBenefitSpec, RiskReductionUtility,
};
use crate::metrics::{
    ace, fit_calibration_curve, intergroup_variance, ipcw_auc, ipcw_log_loss, ipcw_rate, CalibrationModel, MetricReport, RateKind,
    StratifiedBootstrap,
};
use crate::train::{Dataset, RiskModel, StratifiedModel, TrainError};

const STRATIFIED_HEADER: &str = "stratified-model v1";

/// A trained scorer: one pooled model or one model per group.
#[derive(Debug, Clone)]
pub enum FittedModel {
    Pooled(RiskModel),
    Stratified(StratifiedModel),
}

impl FittedModel {
    pub fn input_dim(&self) -> Option<usize> {
        match self {
            FittedModel::Pooled(m) => Some(m.architecture.input_dim),
            FittedModel::Stratified(s) => s.models.iter().flatten().map(|m| m.architecture.input_dim).next(),
        }
    }

    pub fn predict(&self, data: &Dataset) -> Result<Vec<f64>, TrainError> {
        match self {
            FittedModel::Pooled(m) => Ok(m.predict(data.x.view())),
            FittedModel::Stratified(s) => s.predict(data),
        }
    }

    /// Pooled models use the `risk-model v1` format; stratified models wrap
    /// one such block per group between `group <label>` and `end` lines.
    pub fn to_text(&self) -> String {
        match self {
            FittedModel::Pooled(m) => m.to_text(),
            FittedModel::Stratified(s) => {
                let mut out = format!("{STRATIFIED_HEADER}\n");
                for (label, m) in s.group_labels.iter().zip(&s.models) {
                    out.push_str(&format!("group {label}\n"));
                    match m {
                        Some(m) => out.push_str(&m.to_text()),
                        None => out.push_str("none\n"),
                    }
                    out.push_str("end\n");
                }
                out
            }
        }
    }

    pub fn from_text(text: &str) -> Result<Self, TrainError> {
        if text.lines().next().map(str::trim) != Some(STRATIFIED_HEADER) {
            return RiskModel::from_text(text).map(FittedModel::Pooled);
        }
        let mut group_labels = Vec::new();
        let mut models = Vec::new();
        let mut current: Option<(String, Vec<&str>)> = None;
        for line in text.lines().skip(1) {
            match &mut current {
                None => {
                    let label = line
                        .strip_prefix("group ")
                        .ok_or_else(|| TrainError::Format(format!("expected 'group <label>', found '{line}'")))?;
                    current = Some((label.to_string(), Vec::new()));
                }
                Some((label, body)) => {
                    if line.trim() == "end" {
                        let block = body.join("\n");
                        let model = if block.trim() == "none" {
                            None
                        } else {
                            Some(RiskModel::from_text(&block)?)
                        };
                        group_labels.push(std::mem::take(label));
                        models.push(model);
                        current = None;
                    } else {
                        body.push(line);
                    }
                }
            }
        }
        if current.is_some() {
            return Err(TrainError::Format("unterminated group block".into()));
        }
        Ok(FittedModel::Stratified(StratifiedModel { models, group_labels }))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read model {}: {e}", path.display())))?;
        Self::from_text(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

/// Builds the evaluation dataset matching `model`'s input layout.
pub fn dataset_for(model: &FittedModel, cohort: &Cohort, weights: &[f64]) -> Result<Dataset, CliError> {
    let plain = cohort.feature_dim();
    let encode = match model.input_dim() {
        Some(d) if d == plain => false,
        Some(d) if d == plain + cohort.n_groups() => true,
        Some(d) => {
            return Err(CliError::Config(format!(
                "model expects {d} inputs but the cohort has {plain} features and {} groups",
                cohort.n_groups()
            )))
        }
        None => false,
    };
    if let FittedModel::Stratified(s) = model {
        if s.group_labels != cohort.groups() {
            return Err(CliError::Config("stratified model groups differ from the cohort groups".into()));
        }
    }
    Dataset::from_cohort(cohort, weights, encode).map_err(|e| CliError::Config(e.to_string()))
}

/// Reads `id,weight` rows and aligns them with `cohort`.
pub fn read_weights(path: &Path, cohort: &Cohort) -> Result<Vec<f64>, CliError> {
    let bad = |m: String| CliError::Config(format!("{}: {m}", path.display()));
    let mut reader = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let mut by_id = BTreeMap::new();
    for row in reader.deserialize::<(String, f64)>() {
        let (id, w) = row.map_err(|e| bad(e.to_string()))?;
        if !(w >= 0.0 && w.is_finite()) {
            return Err(bad(format!("weight of '{id}' must be finite and nonnegative")));
        }
        by_id.insert(id, w);
    }
    cohort
        .samples()
        .iter()
        .map(|s| by_id.get(&s.id).copied().ok_or_else(|| bad(format!("no weight for sample '{}'", s.id))))
        .collect()
}

/// Evaluation labels shared by every model.
#[derive(Debug, Clone, Copy)]
pub struct EvalData<'a> {
    pub y: &'a [bool],
    pub weights: &'a [f64],
    pub groups: &'a [usize],
    pub group_labels: &'a [String],
}

/// Thresholds and utilities of a metric report.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSettings {
    pub thresholds: Vec<f64>,
    /// Fixed `tau_star`; each threshold is its own when `None`.
    pub tau_star: Option<f64>,
    pub risk_reduction: Option<f64>,
    pub n_replicates: usize,
    pub seed: u64,
}

type Key = (String, String, Option<f64>);

fn or_nan<E>(r: Result<f64, E>) -> f64 {
    r.unwrap_or(f64::NAN)
}

fn lower_is_worse(metric: &str) -> bool {
    !matches!(metric, "log_loss" | "ace" | "fpr")
}

/// Every metric of one score vector restricted to `idx`, in a fixed order.
fn metric_values(scores: &[f64], data: &EvalData, settings: &EvalSettings, idx: &[usize]) -> Vec<(Key, f64)> {
    let k = data.group_labels.len();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for &i in idx {
        members[data.groups[i]].push(i);
    }
    let mut per_group: Vec<Vec<(String, Option<f64>, f64)>> = Vec::with_capacity(k + 1);
    for set in members.iter().chain(std::iter::once(&idx.to_vec())) {
        let s: Vec<f64> = set.iter().map(|&i| scores[i]).collect();
        let y: Vec<bool> = set.iter().map(|&i| data.y[i]).collect();
        let w: Vec<f64> = set.iter().map(|&i| data.weights[i]).collect();
        let mut rows = Vec::new();
        let calibration: Option<CalibrationModel> = fit_calibration_curve(&s, &y, &w).ok();
        rows.push(("auc".to_string(), None, or_nan(ipcw_auc(&s, &y, &w))));
        rows.push(("log_loss".to_string(), None, or_nan(ipcw_log_loss(&s, &y, &w))));
        rows.push(("ace".to_string(), None, calibration.as_ref().map_or(f64::NAN, |c| or_nan(ace(&s, &y, &w, c)))));
        for &tau in &settings.thresholds {
            let tau_star = settings.tau_star.unwrap_or(tau);
            let t = Some(tau);
            rows.push(("tpr".into(), t, or_nan(ipcw_rate(&s, &y, &w, tau, RateKind::Tpr))));
            rows.push(("fpr".into(), t, or_nan(ipcw_rate(&s, &y, &w, tau, RateKind::Fpr))));
            rows.push(("nb".into(), t, or_nan(net_benefit_fixed(&s, &y, &w, tau, tau_star))));
            let fixed = NetBenefitSpec::FixedCost { tau_star };
            let cnb = calibration.as_ref().map_or(f64::NAN, |c| or_nan(calibrated_net_benefit(&s, &y, &w, tau, &fixed, c)));
            rows.push(("cnb".into(), t, cnb));
            if let Some(r) = settings.risk_reduction {
                let rr = NetBenefitSpec::RiskReduction(RiskReductionUtility { tau_star, r });
                rows.push(("nb_rr".into(), t, or_nan(rr.net_benefit(&s, &y, &w, tau))));
                let cnb_rr = calibration.as_ref().map_or(f64::NAN, |c| or_nan(calibrated_net_benefit(&s, &y, &w, tau, &rr, c)));
                rows.push(("cnb_rr".into(), t, cnb_rr));
            }
        }
        per_group.push(rows);
    }
    let mut out = Vec::new();
    let labels = data.group_labels.iter().map(String::as_str).chain(std::iter::once("overall"));
    for (label, rows) in labels.zip(&per_group) {
        for (metric, t, v) in rows {
            out.push(((metric.clone(), label.to_string(), *t), *v));
        }
    }
    let groups = &per_group[..k];
    for (j, (metric, t, _)) in per_group[k].iter().enumerate() {
        let values: Vec<f64> = groups.iter().map(|rows| rows[j].2).collect();
        let worst = if values.iter().any(|v| v.is_nan()) {
            f64::NAN
        } else if lower_is_worse(metric) {
            values.iter().copied().fold(f64::INFINITY, f64::min)
        } else {
            values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        };
        out.push(((metric.clone(), "worst".into(), *t), worst));
        out.push(((metric.clone(), "ig_var".into(), *t), intergroup_variance(&values)));
    }
    out
}

/// Bootstrap distribution of every metric for one model: estimate on all
/// samples and one value vector per replicate.
fn model_distribution(scores: &[f64], data: &EvalData, settings: &EvalSettings, boot: &StratifiedBootstrap) -> (Vec<Key>, Vec<f64>, Vec<Vec<f64>>) {
    let all: Vec<usize> = (0..data.y.len()).collect();
    let (keys, full): (Vec<Key>, Vec<f64>) = metric_values(scores, data, settings, &all).into_iter().unzip();
    let reps = boot.map(|idx| metric_values(scores, data, settings, idx).into_iter().map(|(_, v)| v).collect::<Vec<f64>>());
    (keys, full, reps)
}

/// Metric report pooled over `models` and bootstrap replicates stratified by
/// group and outcome. With a baseline, `delta_<metric>` rows hold differences
/// computed on the same bootstrap samples, pairing model `m` with baseline
/// model `m mod n_baseline`.
pub fn evaluate_scores(
    models: &[Vec<f64>],
    baseline: Option<&[Vec<f64>]>,
    data: &EvalData,
    settings: &EvalSettings,
) -> Result<MetricReport, CliError> {
    if models.is_empty() {
        return Err(CliError::Config("no models to evaluate".into()));
    }
    let n = data.y.len();
    if data.weights.len() != n || data.groups.len() != n || models.iter().any(|m| m.len() != n) {
        return Err(CliError::Runtime("evaluation inputs differ in length".into()));
    }
    let strata: Vec<usize> = (0..n).map(|i| 2 * data.groups[i] + usize::from(data.y[i])).collect();
    let boot = StratifiedBootstrap::from_present_labels(&strata, settings.n_replicates, settings.seed).map_err(|e| CliError::Runtime(e.to_string()))?;
    let dists: Vec<_> = models.iter().map(|s| model_distribution(s, data, settings, &boot)).collect();
    let keys = dists[0].0.clone();
    let mut report = MetricReport::default();
    let pool = |report: &mut MetricReport, prefix: &str, values: &dyn Fn(usize, usize) -> (f64, Vec<f64>)| {
        for (j, (metric, group, t)) in keys.iter().enumerate() {
            let mut estimates = Vec::new();
            let mut pooled = Vec::new();
            for m in 0..models.len() {
                let (e, reps) = values(m, j);
                estimates.push(e);
                pooled.extend(reps);
            }
            let estimate = estimates.iter().sum::<f64>() / estimates.len() as f64;
            if !estimate.is_finite() {
                log::warn!("{prefix}{metric} undefined for group '{group}'");
            }
            report.push(&format!("{prefix}{metric}"), group, *t, boot.ci_from(estimate, &pooled));
        }
    };
    pool(&mut report, "", &|m, j| (dists[m].1[j], dists[m].2.iter().map(|r| r[j]).collect()));
    if let Some(base) = baseline {
        if base.is_empty() {
            return Err(CliError::Config("baseline has no models".into()));
        }
        let base_dists: Vec<_> = base.iter().map(|s| model_distribution(s, data, settings, &boot)).collect();
        pool(&mut report, "delta_", &|m, j| {
            let b = &base_dists[m % base_dists.len()];
            let d = &dists[m];
            (d.1[j] - b.1[j], d.2.iter().zip(&b.2).map(|(x, y)| x[j] - y[j]).collect())
        });
    }
    Ok(report)
}

/// Standard and parameterized decision curves per group and overall, each
/// with its own fitted calibration curve.
pub fn group_decision_curves(scores: &[f64], data: &EvalData, grid: &[f64], tau_star: f64, kind: CurveKind) -> Result<Vec<DecisionCurve>, CliError> {
    let k = data.group_labels.len();
    let mut sets: Vec<(String, Vec<usize>)> = (0..k)
        .map(|g| (data.group_labels[g].clone(), (0..scores.len()).filter(|&i| data.groups[i] == g).collect()))
        .collect();
    sets.push(("overall".into(), (0..scores.len()).collect()));
    let mut curves = Vec::new();
    for (label, idx) in sets {
        if idx.is_empty() {
            log::warn!("group '{label}' has no samples; decision curve skipped");
            continue;
        }
        let s: Vec<f64> = idx.iter().map(|&i| scores[i]).collect();
        let y: Vec<bool> = idx.iter().map(|&i| data.y[i]).collect();
        let w: Vec<f64> = idx.iter().map(|&i| data.weights[i]).collect();
        let calibration = match fit_calibration_curve(&s, &y, &w) {
            Ok(c) => c,
            Err(e) => {
                log::warn!("calibration of group '{label}' failed ({e}); cNB uses the identity");
                CalibrationModel::IDENTITY
            }
        };
        for mode in [CurveMode::Standard, CurveMode::Parameterized(tau_star)] {
            match decision_curve(&label, &s, &y, &w, grid, mode, kind, &calibration) {
                Ok(c) => curves.push(c),
                Err(e) => log::warn!("{} decision curve of group '{label}' failed: {e}", mode.name()),
            }
        }
    }
    Ok(curves)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::Architecture;

    fn data_fixture() -> (Vec<f64>, Vec<bool>, Vec<f64>, Vec<usize>, Vec<String>) {
        let scores = vec![0.9, 0.8, 0.7, 0.6, 0.3, 0.25, 0.2, 0.15, 0.1, 0.05];
        let y = vec![true, true, false, true, false, true, false, false, true, false];
        let w = vec![1.0, 2.0, 1.0, 1.0, 1.0, 1.0, 2.0, 1.0, 1.0, 1.0];
        let groups = vec![0, 1, 0, 1, 0, 1, 0, 1, 0, 1];
        (scores, y, w, groups, vec!["a".into(), "b".into()])
    }

    fn settings(n_replicates: usize) -> EvalSettings {
        EvalSettings {
            thresholds: vec![0.2],
            tau_star: None,
            risk_reduction: Some(0.275),
            n_replicates,
            seed: 5,
        }
    }

    #[test]
    fn net_benefit_matches_hand_arithmetic() {
        let (s, y, w, g, labels) = data_fixture();
        let data = EvalData {
            y: &y,
            weights: &w,
            groups: &g,
            group_labels: &labels,
        };
        let report = evaluate_scores(&[s], None, &data, &settings(5)).unwrap();
        // total weight 12; treated (s >= 0.2): rows 0..=6, weights 1,2,1,1,1,1,2
        // TP weight 1+2+1+1 = 5, FP weight 1+1+2 = 4; odds 0.25
        let expect = (5.0 - 4.0 * 0.25) / 12.0;
        let nb = report.get("nb", "overall", Some(0.2)).unwrap().estimate;
        assert!((nb - expect).abs() < 1e-12, "{nb} vs {expect}");
        // group a: rows 0,2,4,6,8 with weights 1,1,1,2,1 -> TP {0} = 1, FP {2,4,6} = 4
        let nb_a = report.get("nb", "a", Some(0.2)).unwrap().estimate;
        assert!((nb_a - (1.0 - 4.0 * 0.25) / 6.0).abs() < 1e-12);
    }

    #[test]
    fn self_baseline_gives_zero_deltas() {
        let (s, y, w, g, labels) = data_fixture();
        let data = EvalData {
            y: &y,
            weights: &w,
            groups: &g,
            group_labels: &labels,
        };
        let scores = vec![s];
        let report = evaluate_scores(&scores, Some(&scores), &data, &settings(20)).unwrap();
        let deltas: Vec<_> = report.rows.iter().filter(|r| r.metric.starts_with("delta_")).collect();
        assert!(!deltas.is_empty());
        for r in deltas {
            if r.estimate.is_finite() {
                assert_eq!(r.estimate, 0.0, "{}", r.metric);
                assert_eq!((r.ci_lower, r.ci_upper), (0.0, 0.0), "{}", r.metric);
            }
        }
    }

    #[test]
    fn single_replicate_interval_is_degenerate() {
        let (s, y, w, g, labels) = data_fixture();
        let data = EvalData {
            y: &y,
            weights: &w,
            groups: &g,
            group_labels: &labels,
        };
        let report = evaluate_scores(&[s], None, &data, &settings(1)).unwrap();
        for r in &report.rows {
            if r.ci_lower.is_finite() {
                assert_eq!(r.ci_lower, r.ci_upper, "{} {}", r.metric, r.group);
            }
        }
    }

    #[test]
    fn worst_and_variance_rows() {
        let (s, y, w, g, labels) = data_fixture();
        let data = EvalData {
            y: &y,
            weights: &w,
            groups: &g,
            group_labels: &labels,
        };
        let report = evaluate_scores(&[s], None, &data, &settings(3)).unwrap();
        let a = report.get("tpr", "a", Some(0.2)).unwrap().estimate;
        let b = report.get("tpr", "b", Some(0.2)).unwrap().estimate;
        assert_eq!(report.get("tpr", "worst", Some(0.2)).unwrap().estimate, a.min(b));
        let var = report.get("tpr", "ig_var", Some(0.2)).unwrap().estimate;
        assert!((var - (a - b).powi(2) / 4.0).abs() < 1e-15);
        let la = report.get("log_loss", "a", None).unwrap().estimate;
        let lb = report.get("log_loss", "b", None).unwrap().estimate;
        assert_eq!(report.get("log_loss", "worst", None).unwrap().estimate, la.max(lb));
    }

    #[test]
    fn model_text_round_trip() {
        let m = RiskModel::from_params(Architecture::logistic(2), vec![0.1, -0.2, 0.3]).unwrap();
        let pooled = FittedModel::Pooled(m.clone());
        assert!(matches!(FittedModel::from_text(&pooled.to_text()).unwrap(), FittedModel::Pooled(p) if p == m));
        let strat = FittedModel::Stratified(StratifiedModel {
            models: vec![Some(m.clone()), None],
            group_labels: vec!["a b".into(), "c".into()],
        });
        match FittedModel::from_text(&strat.to_text()).unwrap() {
            FittedModel::Stratified(s) => {
                assert_eq!(s.group_labels, vec!["a b", "c"]);
                assert_eq!(s.models[0].as_ref(), Some(&m));
                assert!(s.models[1].is_none());
            }
            _ => panic!("expected stratified"),
        }
        assert!(FittedModel::from_text("stratified-model v1\ngroup a\nnone\n").is_err());
    }
}
