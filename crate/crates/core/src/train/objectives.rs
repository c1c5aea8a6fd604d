//! Minibatch training objectives and their gradients with respect to the
//! model logits: weighted log-loss, the weighted MMD penalty between each
//! group's outcome-conditional score distribution and the population's, and
//! squared-difference penalties on surrogate-relaxed metrics.

use serde::{Deserialize, Serialize};

use crate::math::{clip_prob, sigmoid, softplus, PROB_EPS};

/// Step function and its smooth stand-ins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Surrogate {
    Step,
    Hinge,
    #[default]
    Softplus,
    Sigmoid,
}

impl Surrogate {
    pub fn value(self, z: f64) -> f64 {
        match self {
            Surrogate::Step => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Surrogate::Hinge => (1.0 + z).max(0.0),
            Surrogate::Softplus => softplus(z) / std::f64::consts::LN_2,
            Surrogate::Sigmoid => sigmoid(z),
        }
    }

    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Surrogate::Step => 0.0,
            Surrogate::Hinge => {
                if z > -1.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Surrogate::Softplus => sigmoid(z) / std::f64::consts::LN_2,
            Surrogate::Sigmoid => {
                let s = sigmoid(z);
                s * (1.0 - s)
            }
        }
    }
}

pub fn surrogate(kind: Surrogate, z: f64) -> f64 {
    kind.value(z)
}

/// Laplacian kernel `exp(-γ|a - b|)`.
pub fn kernel(a: f64, b: f64, gamma: f64) -> f64 {
    (-gamma * (a - b).abs()).exp()
}

/// Weighted log-loss from logits, normalised by the total weight, and its
/// gradient with respect to each logit. Zero total weight gives zero.
pub fn weighted_log_loss(logits: &[f64], y: &[bool], weights: &[f64]) -> (f64, Vec<f64>) {
    let total: f64 = weights.iter().sum();
    let mut grad = vec![0.0; logits.len()];
    if !(total > 0.0) {
        return (0.0, grad);
    }
    let mut loss = 0.0;
    for i in 0..logits.len() {
        let t = if y[i] { 1.0 } else { 0.0 };
        loss += weights[i] * (softplus(logits[i]) - t * logits[i]);
        grad[i] = weights[i] * (sigmoid(logits[i]) - t) / total;
    }
    (loss / total, grad)
}

/// A penalty value with its gradient with respect to the scores.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyValue {
    pub value: f64,
    pub grad: Vec<f64>,
    /// Cells or group terms left out because they had no weighted samples.
    pub skipped: usize,
}

/// How the sum of MMD terms over groups and outcome values is scaled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MmdNormalization {
    /// `1/K` over the `2K` group-outcome terms.
    #[default]
    PerGroup,
    /// `1/(2K)`, a plain mean of the terms.
    PerCell,
}

/// Normalised weighted kernel sum between index sets `a` and `b`; adds
/// `coef` times its score gradient into `grad`.
fn kernel_mean(s: &[f64], w: &[f64], a: &[usize], b: &[usize], gamma: f64, coef: f64, grad: &mut [f64]) -> f64 {
    let wa: f64 = a.iter().map(|&i| w[i]).sum();
    let wb: f64 = b.iter().map(|&j| w[j]).sum();
    let norm = 1.0 / (wa * wb);
    let mut acc = 0.0;
    for &i in a {
        for &j in b {
            let k = kernel(s[i], s[j], gamma);
            let t = w[i] * w[j] * k;
            acc += t;
            if coef != 0.0 && s[i] != s[j] {
                let d = -gamma * (s[i] - s[j]).signum() * t * norm * coef;
                grad[i] += d;
                grad[j] -= d;
            }
        }
    }
    acc * norm
}

/// Weighted V-statistic estimate of the squared MMD between two weighted samples.
pub fn mmd_two_sample(a: &[f64], wa: &[f64], b: &[f64], wb: &[f64], gamma: f64) -> f64 {
    let s: Vec<f64> = a.iter().chain(b).copied().collect();
    let w: Vec<f64> = wa.iter().chain(wb).copied().collect();
    let ia: Vec<usize> = (0..a.len()).collect();
    let ib: Vec<usize> = (a.len()..s.len()).collect();
    let mut g = vec![0.0; s.len()];
    kernel_mean(&s, &w, &ia, &ia, gamma, 0.0, &mut g) - 2.0 * kernel_mean(&s, &w, &ia, &ib, gamma, 0.0, &mut g)
        + kernel_mean(&s, &w, &ib, &ib, gamma, 0.0, &mut g)
}

/// MMD between each group's scores and the population's, within each outcome
/// class, averaged over the cells that have weighted samples.
pub fn mmd_penalty(
    scores: &[f64],
    y: &[bool],
    groups: &[usize],
    weights: &[f64],
    n_groups: usize,
    gamma: f64,
    normalization: MmdNormalization,
) -> PenaltyValue {
    let n = scores.len();
    let mut cells: Vec<(Vec<usize>, Vec<usize>)> = Vec::new();
    let mut skipped = 0;
    for outcome in [false, true] {
        let pop: Vec<usize> = (0..n).filter(|&i| y[i] == outcome && weights[i] > 0.0).collect();
        for k in 0..n_groups {
            let g: Vec<usize> = pop.iter().copied().filter(|&i| groups[i] == k).collect();
            if g.is_empty() {
                skipped += 1;
            } else {
                cells.push((g, pop.clone()));
            }
        }
    }
    let mut grad = vec![0.0; n];
    if cells.is_empty() {
        return PenaltyValue { value: 0.0, grad, skipped };
    }
    let scale = match normalization {
        MmdNormalization::PerGroup => 2.0,
        MmdNormalization::PerCell => 1.0,
    } / cells.len() as f64;
    let mut total = 0.0;
    for (g, pop) in &cells {
        let own = kernel_mean(scores, weights, g, g, gamma, scale, &mut grad);
        let cross = kernel_mean(scores, weights, g, pop, gamma, -2.0 * scale, &mut grad);
        let base = kernel_mean(scores, weights, pop, pop, gamma, scale, &mut grad);
        total += own - 2.0 * cross + base;
    }
    PenaltyValue {
        value: scale * total,
        grad,
        skipped,
    }
}

/// A metric whose subgroup differences can be penalised.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ParityMetric {
    Tpr(f64),
    Fpr(f64),
    Auc,
    LogLoss,
}

impl ParityMetric {
    pub fn name(&self) -> String {
        match self {
            ParityMetric::Tpr(t) => format!("tpr@{t}"),
            ParityMetric::Fpr(t) => format!("fpr@{t}"),
            ParityMetric::Auc => "auc".into(),
            ParityMetric::LogLoss => "log_loss".into(),
        }
    }
}

/// Surrogate-relaxed metric over the samples `idx`; `None` when a class the
/// metric needs has no weight. Adds `coef` times its score gradient into `grad`.
pub fn relaxed_metric(
    metric: ParityMetric,
    surrogate: Surrogate,
    scores: &[f64],
    y: &[bool],
    weights: &[f64],
    idx: &[usize],
    coef: f64,
    grad: &mut [f64],
) -> Option<f64> {
    match metric {
        ParityMetric::Tpr(tau) | ParityMetric::Fpr(tau) => {
            let class = matches!(metric, ParityMetric::Tpr(_));
            let total: f64 = idx.iter().filter(|&&i| y[i] == class).map(|&i| weights[i]).sum();
            if !(total > 0.0) {
                return None;
            }
            let mut acc = 0.0;
            for &i in idx.iter().filter(|&&i| y[i] == class) {
                acc += weights[i] * surrogate.value(scores[i] - tau);
                if coef != 0.0 {
                    grad[i] += coef * weights[i] * surrogate.derivative(scores[i] - tau) / total;
                }
            }
            Some(acc / total)
        }
        ParityMetric::Auc => {
            let pos: Vec<usize> = idx.iter().copied().filter(|&i| y[i] && weights[i] > 0.0).collect();
            let neg: Vec<usize> = idx.iter().copied().filter(|&i| !y[i] && weights[i] > 0.0).collect();
            let wp: f64 = pos.iter().map(|&i| weights[i]).sum();
            let wn: f64 = neg.iter().map(|&i| weights[i]).sum();
            if pos.is_empty() || neg.is_empty() {
                return None;
            }
            let norm = 1.0 / (wp * wn);
            let mut acc = 0.0;
            for &i in &pos {
                for &j in &neg {
                    let z = scores[i] - scores[j];
                    let pw = weights[i] * weights[j];
                    acc += pw * surrogate.value(z);
                    if coef != 0.0 {
                        let d = coef * pw * norm * surrogate.derivative(z);
                        grad[i] += d;
                        grad[j] -= d;
                    }
                }
            }
            Some(acc * norm)
        }
        ParityMetric::LogLoss => {
            let total: f64 = idx.iter().map(|&i| weights[i]).sum();
            if !(total > 0.0) {
                return None;
            }
            let mut acc = 0.0;
            for &i in idx {
                let s = clip_prob(scores[i]);
                acc += weights[i] * if y[i] { -s.ln() } else { -(1.0 - s).ln() };
                let inside = scores[i] > PROB_EPS && scores[i] < 1.0 - PROB_EPS;
                if coef != 0.0 && inside {
                    let d = if y[i] { -1.0 / s } else { 1.0 / (1.0 - s) };
                    grad[i] += coef * weights[i] * d / total;
                }
            }
            Some(acc / total)
        }
    }
}

/// `Σ_j Σ_k (ĝ_j(group k) − ĝ_j(all))²` over the relaxed metrics `metrics`.
pub fn parity_penalty(
    scores: &[f64],
    y: &[bool],
    groups: &[usize],
    weights: &[f64],
    n_groups: usize,
    metrics: &[ParityMetric],
    surrogate: Surrogate,
) -> PenaltyValue {
    let n = scores.len();
    let all: Vec<usize> = (0..n).collect();
    let members: Vec<Vec<usize>> = (0..n_groups).map(|k| all.iter().copied().filter(|&i| groups[i] == k).collect()).collect();
    let mut grad = vec![0.0; n];
    let mut scratch = vec![0.0; n];
    let mut value = 0.0;
    let mut skipped = 0;
    for &metric in metrics {
        let Some(overall) = relaxed_metric(metric, surrogate, scores, y, weights, &all, 0.0, &mut scratch) else {
            skipped += n_groups;
            continue;
        };
        let mut overall_coef = 0.0;
        for idx in &members {
            let Some(gk) = relaxed_metric(metric, surrogate, scores, y, weights, idx, 0.0, &mut scratch) else {
                skipped += 1;
                continue;
            };
            let diff = gk - overall;
            value += diff * diff;
            relaxed_metric(metric, surrogate, scores, y, weights, idx, 2.0 * diff, &mut grad);
            overall_coef -= 2.0 * diff;
        }
        relaxed_metric(metric, surrogate, scores, y, weights, &all, overall_coef, &mut grad);
    }
    PenaltyValue { value, grad, skipped }
}

/// Fairness penalty added to the log-loss.
#[derive(Debug, Clone, PartialEq)]
pub enum Penalty {
    None,
    Mmd {
        gamma: f64,
        normalization: MmdNormalization,
    },
    Parity {
        metrics: Vec<ParityMetric>,
        surrogate: Surrogate,
    },
}

/// Value and logit gradient of one minibatch objective.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchObjective {
    pub value: f64,
    pub loss: f64,
    pub penalty: f64,
    pub grad: Vec<f64>,
    pub skipped: usize,
}

/// Weighted log-loss plus `lambda` times the penalty. With `lambda = 0` the
/// penalty is not evaluated at all.
pub fn penalized_objective(
    logits: &[f64],
    y: &[bool],
    groups: &[usize],
    weights: &[f64],
    n_groups: usize,
    lambda: f64,
    penalty: &Penalty,
) -> BatchObjective {
    let (loss, mut grad) = weighted_log_loss(logits, y, weights);
    if lambda == 0.0 || matches!(penalty, Penalty::None) {
        return BatchObjective {
            value: loss,
            loss,
            penalty: 0.0,
            grad,
            skipped: 0,
        };
    }
    let scores: Vec<f64> = logits.iter().map(|&z| sigmoid(z)).collect();
    let p = match penalty {
        Penalty::Mmd { gamma, normalization } => mmd_penalty(&scores, y, groups, weights, n_groups, *gamma, *normalization),
        Penalty::Parity { metrics, surrogate } => parity_penalty(&scores, y, groups, weights, n_groups, metrics, *surrogate),
        Penalty::None => unreachable!(),
    };
    for i in 0..grad.len() {
        grad[i] += lambda * p.grad[i] * scores[i] * (1.0 - scores[i]);
    }
    BatchObjective {
        value: loss + lambda * p.value,
        loss,
        penalty: p.value,
        grad,
        skipped: p.skipped,
    }
}

/// Per-group weighted log-loss, each normalised by its group's weight; `None` for weightless groups.
pub fn group_log_losses(logits: &[f64], y: &[bool], groups: &[usize], weights: &[f64], n_groups: usize) -> Vec<Option<f64>> {
    let mut num = vec![0.0; n_groups];
    let mut den = vec![0.0; n_groups];
    for i in 0..logits.len() {
        let t = if y[i] { 1.0 } else { 0.0 };
        num[groups[i]] += weights[i] * (softplus(logits[i]) - t * logits[i]);
        den[groups[i]] += weights[i];
    }
    num.iter().zip(&den).map(|(&a, &b)| if b > 0.0 { Some(a / b) } else { None }).collect()
}

/// `Σ_k λ_k · L_k` over groups with weight in the batch, where `L_k` is the
/// group-normalised weighted log-loss.
pub fn dro_objective(logits: &[f64], y: &[bool], groups: &[usize], weights: &[f64], lambdas: &[f64]) -> BatchObjective {
    let k = lambdas.len();
    let mut den = vec![0.0; k];
    for i in 0..logits.len() {
        den[groups[i]] += weights[i];
    }
    let mut num = vec![0.0; k];
    let mut grad = vec![0.0; logits.len()];
    for i in 0..logits.len() {
        let g = groups[i];
        if den[g] > 0.0 {
            let t = if y[i] { 1.0 } else { 0.0 };
            num[g] += weights[i] * (softplus(logits[i]) - t * logits[i]);
            grad[i] = lambdas[g] * weights[i] * (sigmoid(logits[i]) - t) / den[g];
        }
    }
    let value: f64 = (0..k).filter(|&g| den[g] > 0.0).map(|g| lambdas[g] * num[g] / den[g]).sum();
    BatchObjective {
        value,
        loss: value,
        penalty: 0.0,
        grad,
        skipped: den.iter().filter(|&&d| !(d > 0.0)).count(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{ipcw_rate, RateKind};
    use proptest::prelude::*;

    #[test]
    fn surrogate_values_at_zero() {
        assert_eq!(surrogate(Surrogate::Hinge, 0.0), 1.0);
        assert!((surrogate(Surrogate::Softplus, 0.0) - 1.0).abs() < 1e-15);
        assert_eq!(surrogate(Surrogate::Sigmoid, 0.0), 0.5);
        assert_eq!(surrogate(Surrogate::Step, 0.0), 0.0);
        let tiny = surrogate(Surrogate::Softplus, -20.0);
        let exact = (-20f64).exp().ln_1p() / std::f64::consts::LN_2;
        assert!(tiny > 0.0 && (tiny - exact).abs() < 1e-22);
        assert!(surrogate(Surrogate::Softplus, 30.0).is_finite());
        assert!(surrogate(Surrogate::Softplus, 800.0).is_finite());
    }

    #[test]
    fn upper_bounds_on_probe_grid() {
        for k in -4000..=4000 {
            let z = k as f64 / 1000.0;
            let step = surrogate(Surrogate::Step, z);
            assert!(surrogate(Surrogate::Hinge, z) >= step);
            assert!(surrogate(Surrogate::Softplus, z) >= step);
        }
    }

    #[test]
    fn kernel_self_value() {
        assert_eq!(kernel(0.3, 0.3, 1.0), 1.0);
    }

    #[test]
    fn mmd_hand_case() {
        // A = {0.1, 0.5} weights (1, 3); B = {0.2, 0.4} weights (2, 2); gamma = 1
        let k = |a: f64, b: f64| (-(a - b).abs()).exp();
        let aa = (1.0 * 1.0 * 1.0 + 2.0 * 1.0 * 3.0 * k(0.1, 0.5) + 9.0) / 16.0;
        let bb = (4.0 + 2.0 * 4.0 * k(0.2, 0.4) + 4.0) / 16.0;
        let ab = (2.0 * k(0.1, 0.2) + 2.0 * k(0.1, 0.4) + 6.0 * k(0.5, 0.2) + 6.0 * k(0.5, 0.4)) / 16.0;
        let v = mmd_two_sample(&[0.1, 0.5], &[1.0, 3.0], &[0.2, 0.4], &[2.0, 2.0], 1.0);
        assert!((v - (aa - 2.0 * ab + bb)).abs() < 1e-15);
    }

    #[test]
    fn mmd_zero_when_group_is_population() {
        let s = [0.1, 0.3, 0.7, 0.2, 0.9];
        let y = [false, true, true, false, false];
        let w = [1.0, 2.0, 0.5, 1.5, 1.0];
        let p = mmd_penalty(&s, &y, &[0; 5], &w, 1, 1.0, MmdNormalization::PerGroup);
        assert_eq!(p.value, 0.0);
        assert_eq!(p.skipped, 0);
        let v = mmd_two_sample(&s, &w, &s, &w, 1.0);
        assert_eq!(v, 0.0);
    }

    #[test]
    fn mmd_skips_empty_cells() {
        let s = [0.1, 0.3, 0.7, 0.2];
        let y = [false, true, false, false];
        let groups = [0, 0, 1, 1];
        let p = mmd_penalty(&s, &y, &groups, &[1.0; 4], 2, 1.0, MmdNormalization::PerCell);
        assert_eq!(p.skipped, 1);
        // live cells: (y=0,g=0), (y=0,g=1), (y=1,g=0); the last is the whole positive set
        let d0 = mmd_two_sample(&[0.1], &[1.0], &[0.1, 0.7, 0.2], &[1.0; 3], 1.0);
        let d1 = mmd_two_sample(&[0.7, 0.2], &[1.0; 2], &[0.1, 0.7, 0.2], &[1.0; 3], 1.0);
        assert!((p.value - (d0 + d1 + 0.0) / 3.0).abs() < 1e-15);
    }

    #[test]
    fn parity_single_group_is_zero() {
        let s = [0.1, 0.3, 0.7, 0.2, 0.9];
        let y = [false, true, true, false, false];
        let metrics = [ParityMetric::Tpr(0.075), ParityMetric::Fpr(0.2), ParityMetric::Auc, ParityMetric::LogLoss];
        let p = parity_penalty(&s, &y, &[0; 5], &[1.0; 5], 1, &metrics, Surrogate::Softplus);
        assert_eq!(p.value, 0.0);
    }

    #[test]
    fn parity_two_group_tpr_hand_case() {
        // positives: group 0 has scores 0.1, 0.3 (weights 1, 1); group 1 has 0.05 (weight 2)
        let s = [0.1, 0.3, 0.05, 0.6];
        let y = [true, true, true, false];
        let groups = [0, 0, 1, 1];
        let w = [1.0, 1.0, 2.0, 1.0];
        let h = |z: f64| (1.0 + z.exp()).ln() / 2f64.ln();
        let g0 = (h(0.1 - 0.075) + h(0.3 - 0.075)) / 2.0;
        let g1 = h(0.05 - 0.075);
        let all = (h(0.1 - 0.075) + h(0.3 - 0.075) + 2.0 * h(0.05 - 0.075)) / 4.0;
        let expect = (g0 - all).powi(2) + (g1 - all).powi(2);
        let p = parity_penalty(&s, &y, &groups, &w, 2, &[ParityMetric::Tpr(0.075)], Surrogate::Softplus);
        assert!((p.value - expect).abs() < 1e-15);
    }

    #[test]
    fn dro_single_group_equals_log_loss() {
        let z = [0.3, -1.0, 2.0, 0.1];
        let y = [true, false, true, false];
        let w = [1.0, 2.0, 0.5, 1.5];
        let (l, g) = weighted_log_loss(&z, &y, &w);
        let d = dro_objective(&z, &y, &[0; 4], &w, &[1.0]);
        assert_eq!(d.value, l);
        assert_eq!(d.grad, g);
    }

    proptest! {
        #[test]
        fn mmd_is_nonnegative(
            data in proptest::collection::vec((0.0f64..1.0, any::<bool>(), 0usize..3, 0.0f64..2.0), 2..40),
            gamma in 0.1f64..5.0,
        ) {
            let s: Vec<f64> = data.iter().map(|d| d.0).collect();
            let y: Vec<bool> = data.iter().map(|d| d.1).collect();
            let g: Vec<usize> = data.iter().map(|d| d.2).collect();
            let w: Vec<f64> = data.iter().map(|d| d.3).collect();
            let p = mmd_penalty(&s, &y, &g, &w, 3, gamma, MmdNormalization::PerGroup);
            prop_assert!(p.value >= -1e-14, "{}", p.value);
        }

        #[test]
        fn step_relaxed_rates_match_metric(
            data in proptest::collection::vec((0.0f64..1.0, any::<bool>(), 0.1f64..2.0), 2..60),
            tau in 0.01f64..0.99,
        ) {
            let s: Vec<f64> = data.iter().map(|d| d.0).collect();
            let mut y: Vec<bool> = data.iter().map(|d| d.1).collect();
            y[0] = true;
            y[1] = false;
            let w: Vec<f64> = data.iter().map(|d| d.2).collect();
            prop_assume!(s.iter().all(|&v| v != tau));
            let idx: Vec<usize> = (0..s.len()).collect();
            let mut g = vec![0.0; s.len()];
            for (m, kind) in [(ParityMetric::Tpr(tau), RateKind::Tpr), (ParityMetric::Fpr(tau), RateKind::Fpr)] {
                let relaxed = relaxed_metric(m, Surrogate::Step, &s, &y, &w, &idx, 0.0, &mut g).unwrap();
                prop_assert_eq!(relaxed, ipcw_rate(&s, &y, &w, tau, kind).unwrap());
            }
        }
    }
}
