//! Minibatch training loops with early stopping, per-group ERM and model
//! selection across hyperparameter candidates.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::dro::{dro_update, DroState};
use super::model::RiskModel;
use super::objectives::{dro_objective, mmd_penalty, parity_penalty, penalized_objective, Penalty};
use super::{Dataset, DroMetric, Objective, OptimizerKind, TrainConfig, TrainError};
use crate::math::sigmoid;
use crate::metrics::{ipcw_auc, ipcw_log_loss};

/// One row of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub epoch: usize,
    pub fold: usize,
    /// Mean minibatch objective over the epoch; `NaN` before the first epoch.
    pub objective_value: f64,
    /// Development metric used for early stopping.
    pub dev_metric: f64,
    /// Group with the largest development log-loss (or DRO metric).
    pub worst_group: String,
}

/// `epoch,fold,objective_value,dev_metric,worst_group`.
pub fn write_training_log<W: Write>(rows: &[LogRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "epoch,fold,objective_value,dev_metric,worst_group")?;
    for r in rows {
        let obj = if r.objective_value.is_finite() {
            r.objective_value.to_string()
        } else {
            "NA".into()
        };
        writeln!(out, "{},{},{},{},{}", r.epoch, r.fold, obj, r.dev_metric, r.worst_group)?;
    }
    Ok(())
}

/// Result of one training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Checkpoint with the best development metric.
    pub model: RiskModel,
    pub best_epoch: usize,
    pub best_dev_metric: f64,
    pub log: Vec<LogRow>,
    /// Final group weights of a DRO run.
    pub dro_state: Option<DroState>,
    /// Minibatch cells or groups skipped by the penalty because they were empty.
    pub skipped_terms: usize,
}

enum Optimizer {
    Sgd,
    Adam { m: Vec<f64>, v: Vec<f64>, t: i32 },
}

impl Optimizer {
    fn new(kind: OptimizerKind, n: usize) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd,
            OptimizerKind::Adam => Optimizer::Adam {
                m: vec![0.0; n],
                v: vec![0.0; n],
                t: 0,
            },
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64, weight_decay: f64) {
        match self {
            Optimizer::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= lr * (g + weight_decay * *p);
                }
            }
            Optimizer::Adam { m, v, t } => {
                const B1: f64 = 0.9;
                const B2: f64 = 0.999;
                const EPS: f64 = 1e-8;
                *t += 1;
                let c1 = 1.0 - B1.powi(*t);
                let c2 = 1.0 - B2.powi(*t);
                for k in 0..params.len() {
                    let g = grad[k] + weight_decay * params[k];
                    m[k] = B1 * m[k] + (1.0 - B1) * g;
                    v[k] = B2 * v[k] + (1.0 - B2) * g * g;
                    params[k] -= lr * (m[k] / c1) / ((v[k] / c2).sqrt() + EPS);
                }
            }
        }
    }
}

/// Objective evaluated on a whole dataset, used for gradient checks.
#[derive(Debug, Clone, PartialEq)]
pub enum ObjectiveSpec {
    Penalized { lambda: f64, penalty: Penalty },
    Dro { lambda: Vec<f64> },
}

/// Objective value and parameter gradient in evaluation mode.
pub fn objective_gradient(model: &RiskModel, params: &[f64], data: &Dataset, spec: &ObjectiveSpec) -> (f64, Vec<f64>) {
    let cache = model.forward_with::<ChaCha8Rng>(params, data.x.view(), None);
    let obj = match spec {
        ObjectiveSpec::Penalized { lambda, penalty } => {
            penalized_objective(&cache.logits, &data.y, &data.groups, &data.weights, data.n_groups(), *lambda, penalty)
        }
        ObjectiveSpec::Dro { lambda } => dro_objective(&cache.logits, &data.y, &data.groups, &data.weights, lambda),
    };
    let grad = model.backward(params, &cache, &obj.grad);
    (obj.value, grad)
}

/// Index lists of one epoch's minibatches.
fn epoch_batches(data: &Dataset, batch_size: usize, balanced: bool, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let n = data.len();
    if !balanced {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        return order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    }
    let mut members: Vec<Vec<usize>> = (0..data.n_groups()).map(|k| data.group_members(k)).filter(|m| !m.is_empty()).collect();
    for m in &mut members {
        m.shuffle(rng);
    }
    let per_group = (batch_size / members.len()).max(1);
    let n_batches = n.div_ceil(batch_size);
    let mut cursors = vec![0usize; members.len()];
    (0..n_batches)
        .map(|_| {
            let mut batch = Vec::with_capacity(per_group * members.len());
            for (g, m) in members.iter().enumerate() {
                for _ in 0..per_group {
                    batch.push(m[cursors[g] % m.len()]);
                    cursors[g] += 1;
                }
            }
            batch
        })
        .collect()
}

fn scores_of(model: &RiskModel, data: &Dataset) -> Vec<f64> {
    model.predict(data.x.view())
}

/// Per-group value of `metric`, `None` where it is undefined.
fn group_values(data: &Dataset, scores: &[f64], metric: DroMetric) -> Vec<Option<f64>> {
    (0..data.n_groups())
        .map(|k| {
            let idx = data.group_members(k);
            let s: Vec<f64> = idx.iter().map(|&i| scores[i]).collect();
            let y: Vec<bool> = idx.iter().map(|&i| data.y[i]).collect();
            let w: Vec<f64> = idx.iter().map(|&i| data.weights[i]).collect();
            match metric {
                DroMetric::LogLoss => ipcw_log_loss(&s, &y, &w).ok(),
                DroMetric::OneMinusAuc => ipcw_auc(&s, &y, &w).ok().map(|a| 1.0 - a),
            }
        })
        .collect()
}

fn worst(values: &[Option<f64>], labels: &[String]) -> (f64, String) {
    let mut best: Option<(f64, usize)> = None;
    for (k, v) in values.iter().enumerate() {
        if let Some(v) = v {
            if best.is_none_or(|(b, _)| *v > b) {
                best = Some((*v, k));
            }
        }
    }
    match best {
        Some((v, k)) => (v, labels[k].clone()),
        None => (f64::NAN, "NA".into()),
    }
}

enum Mode {
    Penalized { lambda: f64, penalty: Penalty },
    Dro { metric: DroMetric, eta: f64 },
}

/// Development metric and worst group.
fn dev_evaluation(model: &RiskModel, dev: &Dataset, mode: &Mode) -> Result<(f64, String), TrainError> {
    let scores = scores_of(model, dev);
    match mode {
        Mode::Penalized { lambda, penalty } => {
            let loss = ipcw_log_loss(&scores, &dev.y, &dev.weights)?;
            let (_, worst_group) = worst(&group_values(dev, &scores, DroMetric::LogLoss), &dev.group_labels);
            if *lambda == 0.0 {
                return Ok((loss, worst_group));
            }
            let p = match penalty {
                Penalty::None => 0.0,
                Penalty::Mmd { gamma, normalization } => {
                    mmd_penalty(&scores, &dev.y, &dev.groups, &dev.weights, dev.n_groups(), *gamma, *normalization).value
                }
                Penalty::Parity { metrics, surrogate } => {
                    parity_penalty(&scores, &dev.y, &dev.groups, &dev.weights, dev.n_groups(), metrics, *surrogate).value
                }
            };
            Ok((loss + lambda * p, worst_group))
        }
        Mode::Dro { metric, .. } => {
            let (v, g) = worst(&group_values(dev, &scores, *metric), &dev.group_labels);
            if v.is_nan() {
                return Err(TrainError::Data("development metric undefined for every group".into()));
            }
            Ok((v, g))
        }
    }
}

fn run(train: &Dataset, dev: &Dataset, cfg: &TrainConfig, fold: usize, mode: Mode) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if train.is_empty() || dev.is_empty() {
        return Err(TrainError::Data("training and development data must be nonempty".into()));
    }
    if train.feature_dim() != dev.feature_dim() || train.group_labels != dev.group_labels {
        return Err(TrainError::Data("training and development data disagree on features or groups".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = RiskModel::init(cfg.architecture(train.feature_dim()), &mut rng)?;
    let mut opt = Optimizer::new(cfg.optimizer, model.params.len());
    let mut dro_state = match mode {
        Mode::Dro { .. } => Some(DroState::uniform(train.n_groups())),
        Mode::Penalized { .. } => None,
    };
    let (dev0, worst0) = dev_evaluation(&model, dev, &mode)?;
    let mut log = vec![LogRow {
        epoch: 0,
        fold,
        objective_value: f64::NAN,
        dev_metric: dev0,
        worst_group: worst0,
    }];
    let mut best = (dev0, model.clone(), 0usize);
    let mut since_best = 0;
    let mut skipped_terms = 0;
    for epoch in 1..=cfg.max_epochs {
        let batches = epoch_batches(train, cfg.batch_size, cfg.balanced_sampling, &mut rng);
        let mut objective_sum = 0.0;
        for (b, idx) in batches.iter().enumerate() {
            let batch = train.subset(idx);
            let cache = model.forward_with(&model.params, batch.x.view(), Some(&mut rng));
            let obj = match &mode {
                Mode::Penalized { lambda, penalty } => {
                    penalized_objective(&cache.logits, &batch.y, &batch.groups, &batch.weights, batch.n_groups(), *lambda, penalty)
                }
                Mode::Dro { metric, eta } => {
                    let state = dro_state.as_mut().expect("DRO state");
                    let scores: Vec<f64> = cache.logits.iter().map(|&z| sigmoid(z)).collect();
                    let g = group_values(&batch, &scores, *metric);
                    *state = dro_update(state, &g, *eta);
                    dro_objective(&cache.logits, &batch.y, &batch.groups, &batch.weights, &state.lambda)
                }
            };
            if !obj.value.is_finite() || obj.grad.iter().any(|g| !g.is_finite()) {
                return Err(TrainError::Divergence {
                    epoch,
                    batch: b,
                    value: obj.value,
                });
            }
            skipped_terms += obj.skipped;
            objective_sum += obj.value;
            let grad = model.backward(&model.params, &cache, &obj.grad);
            opt.step(&mut model.params, &grad, cfg.learning_rate, cfg.weight_decay);
        }
        let (dev_metric, worst_group) = dev_evaluation(&model, dev, &mode)?;
        if !dev_metric.is_finite() {
            return Err(TrainError::Divergence {
                epoch,
                batch: batches.len(),
                value: dev_metric,
            });
        }
        log.push(LogRow {
            epoch,
            fold,
            objective_value: objective_sum / batches.len() as f64,
            dev_metric,
            worst_group,
        });
        if dev_metric < best.0 {
            best = (dev_metric, model.clone(), epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    if skipped_terms > 0 {
        log::debug!("fold {fold}: {skipped_terms} empty minibatch penalty terms skipped");
    }
    Ok(TrainOutcome {
        model: best.1,
        best_epoch: best.2,
        best_dev_metric: best.0,
        log,
        dro_state,
        skipped_terms,
    })
}

/// Weighted log-loss minimisation with early stopping on development log-loss.
pub fn train_erm(train: &Dataset, dev: &Dataset, cfg: &TrainConfig, fold: usize) -> Result<TrainOutcome, TrainError> {
    run(
        train,
        dev,
        cfg,
        fold,
        Mode::Penalized {
            lambda: 0.0,
            penalty: Penalty::None,
        },
    )
}

/// Log-loss plus `cfg.lambda` times the configured penalty, with early
/// stopping on the penalised development loss.
pub fn train_regularized(train: &Dataset, dev: &Dataset, cfg: &TrainConfig, fold: usize) -> Result<TrainOutcome, TrainError> {
    run(
        train,
        dev,
        cfg,
        fold,
        Mode::Penalized {
            lambda: cfg.lambda,
            penalty: cfg.penalty(),
        },
    )
}

/// Group DRO with early stopping on the worst development group metric.
pub fn train_dro(train: &Dataset, dev: &Dataset, cfg: &TrainConfig, fold: usize) -> Result<TrainOutcome, TrainError> {
    for k in 0..train.n_groups() {
        if train.group_members(k).is_empty() {
            return Err(TrainError::Data(format!("group '{}' has no training samples", train.group_labels[k])));
        }
    }
    run(
        train,
        dev,
        cfg,
        fold,
        Mode::Dro {
            metric: cfg.dro_metric,
            eta: cfg.eta,
        },
    )
}

/// Dispatches on `cfg.objective`; per-group ERM goes through [`train_stratified`].
pub fn train(train: &Dataset, dev: &Dataset, cfg: &TrainConfig, fold: usize) -> Result<TrainOutcome, TrainError> {
    match cfg.objective {
        Objective::Erm => train_erm(train, dev, cfg, fold),
        Objective::RegMmd | Objective::RegParity => train_regularized(train, dev, cfg, fold),
        Objective::Dro => train_dro(train, dev, cfg, fold),
        Objective::StratifiedErm => Err(TrainError::Config("stratified_erm trains one model per group".into())),
    }
}

/// One ERM model per group; samples are scored by their group's model.
#[derive(Debug, Clone)]
pub struct StratifiedModel {
    pub models: Vec<Option<RiskModel>>,
    pub group_labels: Vec<String>,
}

impl StratifiedModel {
    /// Scores each sample with its group's model.
    pub fn predict(&self, data: &Dataset) -> Result<Vec<f64>, TrainError> {
        let mut out = vec![0.0; data.len()];
        for k in 0..data.n_groups() {
            let idx = data.group_members(k);
            if idx.is_empty() {
                continue;
            }
            let model = self.models[k]
                .as_ref()
                .ok_or_else(|| TrainError::Data(format!("no model for group '{}'", data.group_labels[k])))?;
            let part = data.subset(&idx);
            for (i, s) in idx.iter().zip(model.predict(part.x.view())) {
                out[*i] = s;
            }
        }
        Ok(out)
    }
}

/// Trains an independent ERM model per group. Groups that fail keep a `None`
/// model and their error; the others are still trained.
pub fn train_stratified(
    train: &Dataset,
    dev: &Dataset,
    cfg: &TrainConfig,
    fold: usize,
) -> (StratifiedModel, Vec<(String, TrainError)>, Vec<LogRow>) {
    let mut models = Vec::with_capacity(train.n_groups());
    let mut errors = Vec::new();
    let mut log = Vec::new();
    for k in 0..train.n_groups() {
        let tr = train.subset(&train.group_members(k));
        let dv = dev.subset(&dev.group_members(k));
        match train_erm(&tr, &dv, cfg, fold) {
            Ok(out) => {
                log.extend(out.log);
                models.push(Some(out.model));
            }
            Err(e) => {
                errors.push((train.group_labels[k].clone(), e));
                models.push(None);
            }
        }
    }
    (
        StratifiedModel {
            models,
            group_labels: train.group_labels.clone(),
        },
        errors,
        log,
    )
}

/// Validation metrics of one candidate on one fold.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldMetrics {
    pub pooled_log_loss: f64,
    /// Per-group AUC; `NaN` where undefined.
    pub group_auc: Vec<f64>,
    pub group_log_loss: Vec<f64>,
}

/// A hyperparameter configuration with its per-fold validation metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub key: String,
    pub lambda: f64,
    pub folds: Vec<FoldMetrics>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionCriterion {
    PooledLogLoss,
    WorstCaseAuc,
    WorstCaseLogLoss,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub index: usize,
    /// Criterion value, oriented so that smaller is better.
    pub score: f64,
}

fn mean_finite(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0);
    for v in values.filter(|v| v.is_finite()) {
        sum += v;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

/// Selection criterion of one candidate, oriented so that smaller is better.
pub fn candidate_score(c: &Candidate, criterion: SelectionCriterion) -> f64 {
    let per_group = |f: &dyn Fn(&FoldMetrics) -> &Vec<f64>| -> Vec<f64> {
        let k = c.folds.iter().map(|m| f(m).len()).max().unwrap_or(0);
        (0..k)
            .filter_map(|g| mean_finite(c.folds.iter().filter_map(|m| f(m).get(g).copied())))
            .collect()
    };
    match criterion {
        SelectionCriterion::PooledLogLoss => mean_finite(c.folds.iter().map(|m| m.pooled_log_loss)).unwrap_or(f64::INFINITY),
        SelectionCriterion::WorstCaseAuc => {
            let v = per_group(&|m| &m.group_auc);
            v.iter().copied().fold(None, |acc: Option<f64>, x| Some(acc.map_or(x, |a| a.min(x)))).map_or(f64::INFINITY, |m| -m)
        }
        SelectionCriterion::WorstCaseLogLoss => {
            let v = per_group(&|m| &m.group_log_loss);
            v.iter().copied().fold(None, |acc: Option<f64>, x| Some(acc.map_or(x, |a| a.max(x)))).unwrap_or(f64::INFINITY)
        }
    }
}

/// Averages each metric over folds, then picks the best candidate; ties go to
/// the smaller `lambda`, then the lexicographically smaller key.
pub fn select_model(candidates: &[Candidate], criterion: SelectionCriterion) -> Result<Selection, TrainError> {
    let mut best: Option<Selection> = None;
    for (i, c) in candidates.iter().enumerate() {
        let score = candidate_score(c, criterion);
        let better = match &best {
            None => true,
            Some(b) => {
                let other = &candidates[b.index];
                score
                    .total_cmp(&b.score)
                    .then(c.lambda.total_cmp(&other.lambda))
                    .then(c.key.cmp(&other.key))
                    .is_lt()
            }
        };
        if better {
            best = Some(Selection { index: i, score });
        }
    }
    best.ok_or_else(|| TrainError::Data("no candidates to select from".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::{ObjectiveSpec, Penalty};
    use ndarray::Array2;
    use rand::Rng;

    fn dataset(x: Array2<f64>, y: Vec<bool>, w: Vec<f64>, groups: Vec<usize>, k: usize) -> Dataset {
        Dataset {
            x,
            y,
            weights: w,
            groups,
            group_labels: (0..k).map(|g| format!("g{g}")).collect(),
        }
    }

    fn random_data(n: usize, d: usize, k: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((n, d), |_| rng.random_range(-2.0..2.0));
        let groups: Vec<usize> = (0..n).map(|i| i % k).collect();
        let y: Vec<bool> = (0..n).map(|i| rng.random::<f64>() < sigmoid(x[[i, 0]] - 0.5 + groups[i] as f64)).collect();
        let w: Vec<f64> = (0..n).map(|_| if rng.random::<f64>() < 0.1 { 0.0 } else { rng.random_range(0.5..2.0) }).collect();
        dataset(x, y, w, groups, k)
    }

    fn base_cfg() -> TrainConfig {
        TrainConfig {
            batch_size: 32,
            max_epochs: 20,
            patience: 100,
            seed: 3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn intercept_only_recovers_weighted_base_rate() {
        let n = 400;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let y: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < 0.3).collect();
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..1.5)).collect();
        let rate = y.iter().zip(&w).filter(|(&t, _)| t).map(|(_, &v)| v).sum::<f64>() / w.iter().sum::<f64>();
        let data = dataset(Array2::zeros((n, 0)), y, w, vec![0; n], 1);
        let cfg = TrainConfig {
            optimizer: OptimizerKind::Sgd,
            learning_rate: 2.0,
            batch_size: n,
            max_epochs: 300,
            ..base_cfg()
        };
        let out = train_erm(&data, &data, &cfg, 0).unwrap();
        let p = sigmoid(out.model.params[0]);
        assert!((p - rate).abs() < 1e-4, "{p} vs {rate}");
    }

    #[test]
    fn separable_data_reaches_small_loss() {
        let n = 200;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Array2::from_shape_fn((n, 2), |_| rng.random_range(-1.0..1.0));
        let y: Vec<bool> = (0..n).map(|i| x[[i, 0]] + x[[i, 1]] > 0.0).collect();
        let x = Array2::from_shape_fn((n, 2), |(i, j)| x[[i, j]] + if y[i] { 0.5 } else { -0.5 });
        let data = dataset(x, y, vec![1.0; n], vec![0; n], 1);
        let cfg = TrainConfig {
            learning_rate: 0.1,
            max_epochs: 200,
            ..base_cfg()
        };
        let out = train_erm(&data, &data, &cfg, 0).unwrap();
        let s = out.model.predict(data.x.view());
        assert!(ipcw_log_loss(&s, &data.y, &data.weights).unwrap() < 0.01);
    }

    /// Newton iterations on the weighted logistic likelihood.
    fn irls(data: &Dataset) -> Vec<f64> {
        let d = data.feature_dim();
        let mut beta = vec![0.0; d + 1];
        for _ in 0..50 {
            let mut grad = nalgebra::DVector::<f64>::zeros(d + 1);
            let mut hess = nalgebra::DMatrix::<f64>::zeros(d + 1, d + 1);
            for i in 0..data.len() {
                let mut row: Vec<f64> = data.x.row(i).to_vec();
                row.push(1.0);
                let z: f64 = row.iter().zip(&beta).map(|(a, b)| a * b).sum();
                let p = sigmoid(z);
                let t = if data.y[i] { 1.0 } else { 0.0 };
                for a in 0..=d {
                    grad[a] += data.weights[i] * (p - t) * row[a];
                    for b in 0..=d {
                        hess[(a, b)] += data.weights[i] * p * (1.0 - p) * row[a] * row[b];
                    }
                }
            }
            let step = hess.lu().solve(&grad).unwrap();
            for a in 0..=d {
                beta[a] -= step[a];
            }
        }
        beta
    }

    #[test]
    fn logistic_fit_matches_irls() {
        let data = random_data(50, 2, 1, 11);
        let cfg = TrainConfig {
            optimizer: OptimizerKind::Sgd,
            learning_rate: 2.0,
            batch_size: 50,
            max_epochs: 5000,
            patience: 5000,
            encode_group: false,
            ..base_cfg()
        };
        let out = train_erm(&data, &data, &cfg, 0).unwrap();
        let oracle = irls(&data);
        for (a, b) in out.model.params.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-3, "{:?} vs {:?}", out.model.params, oracle);
        }
    }

    #[test]
    fn zero_lambda_matches_erm_bitwise() {
        let data = random_data(120, 3, 2, 4);
        let dev = random_data(60, 3, 2, 5);
        let erm = train_erm(&data, &dev, &base_cfg(), 0).unwrap();
        for objective in [Objective::RegMmd, Objective::RegParity] {
            let cfg = TrainConfig {
                objective,
                lambda: 0.0,
                ..base_cfg()
            };
            let reg = train_regularized(&data, &dev, &cfg, 0).unwrap();
            assert_eq!(reg.model.params, erm.model.params);
            assert_eq!(format!("{:?}", reg.log), format!("{:?}", erm.log));
        }
    }

    #[test]
    fn single_group_dro_matches_erm() {
        let data = random_data(120, 3, 1, 6);
        let dev = random_data(60, 3, 1, 7);
        let erm = train_erm(&data, &dev, &base_cfg(), 0).unwrap();
        let cfg = TrainConfig {
            objective: Objective::Dro,
            eta: 0.5,
            ..base_cfg()
        };
        let dro = train_dro(&data, &dev, &cfg, 0).unwrap();
        assert_eq!(dro.model.params, erm.model.params);
        assert_eq!(dro.dro_state.unwrap().lambda, vec![1.0]);
    }

    #[test]
    fn early_stopping_never_worse_than_initial() {
        let data = random_data(150, 3, 2, 8);
        let dev = random_data(80, 3, 2, 9);
        for (objective, lambda) in [(Objective::Erm, 0.0), (Objective::RegMmd, 1.0), (Objective::Dro, 0.0)] {
            let cfg = TrainConfig {
                objective,
                lambda,
                eta: 0.1,
                patience: 3,
                learning_rate: 0.5,
                ..base_cfg()
            };
            let out = train(&data, &dev, &cfg, 0).unwrap();
            assert!(out.best_dev_metric <= out.log[0].dev_metric);
            let again = dev_evaluation(
                &out.model,
                &dev,
                &match objective {
                    Objective::Dro => Mode::Dro {
                        metric: DroMetric::LogLoss,
                        eta: 0.1,
                    },
                    _ => Mode::Penalized {
                        lambda,
                        penalty: cfg.penalty(),
                    },
                },
            )
            .unwrap()
            .0;
            assert_eq!(again, out.best_dev_metric);
        }
    }

    #[test]
    fn dro_upweights_the_harder_group() {
        // group 1 labels are nearly random, group 0 is easy
        let n = 400;
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = Array2::from_shape_fn((n, 1), |_| rng.random_range(-3.0..3.0));
        let groups: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let y: Vec<bool> = (0..n)
            .map(|i| if groups[i] == 0 { x[[i, 0]] > 0.0 } else { rng.random::<f64>() < 0.5 })
            .collect();
        let data = dataset(x, y, vec![1.0; n], groups, 2);
        let cfg = TrainConfig {
            objective: Objective::Dro,
            eta: 0.5,
            learning_rate: 0.05,
            ..base_cfg()
        };
        let out = train_dro(&data, &data, &cfg, 0).unwrap();
        let lambda = out.dro_state.unwrap().lambda;
        assert!(lambda[1] > 0.5, "{lambda:?}");
    }

    #[test]
    fn stratified_routes_and_recovers_group_rates() {
        let n = 600;
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let groups: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let y: Vec<bool> = (0..n).map(|i| rng.random::<f64>() < if groups[i] == 0 { 0.1 } else { 0.4 }).collect();
        let data = dataset(Array2::zeros((n, 0)), y, vec![1.0; n], groups, 2);
        let cfg = TrainConfig {
            optimizer: OptimizerKind::Sgd,
            learning_rate: 2.0,
            batch_size: n,
            max_epochs: 400,
            ..base_cfg()
        };
        let (model, errors, _) = train_stratified(&data, &data, &cfg, 0);
        assert!(errors.is_empty());
        let scores = model.predict(&data).unwrap();
        for k in 0..2 {
            let idx = data.group_members(k);
            let rate = idx.iter().filter(|&&i| data.y[i]).count() as f64 / idx.len() as f64;
            assert!((scores[idx[0]] - rate).abs() < 1e-4);
            let own = model.models[k].as_ref().unwrap().predict(data.subset(&idx).x.view());
            for (j, &i) in idx.iter().enumerate() {
                assert_eq!(scores[i], own[j]);
            }
        }
    }

    #[test]
    fn stratified_reports_empty_groups() {
        let data = random_data(40, 2, 2, 14);
        let only0 = data.subset(&data.group_members(0));
        let (model, errors, _) = train_stratified(&only0, &only0, &base_cfg(), 0);
        assert_eq!(errors.len(), 1);
        assert!(model.models[0].is_some() && model.models[1].is_none());
    }

    #[test]
    fn penalized_gradients_match_finite_differences() {
        let data = random_data(30, 2, 2, 15);
        let arch = super::super::Architecture {
            input_dim: 2,
            hidden: vec![4],
            activation: super::super::Activation::Tanh,
            dropout: 0.0,
        };
        let model = RiskModel::init(arch, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let spec = ObjectiveSpec::Penalized {
            lambda: 0.7,
            penalty: Penalty::Mmd {
                gamma: 1.0,
                normalization: super::super::MmdNormalization::PerGroup,
            },
        };
        let (_, g) = objective_gradient(&model, &model.params, &data, &spec);
        let h = 1e-6;
        for k in 0..model.params.len() {
            let mut p = model.params.clone();
            p[k] += h;
            let up = objective_gradient(&model, &p, &data, &spec).0;
            p[k] -= 2.0 * h;
            let down = objective_gradient(&model, &p, &data, &spec).0;
            let fd = (up - down) / (2.0 * h);
            assert!((fd - g[k]).abs() <= 1e-6 * (1.0 + g[k].abs()), "param {k}: {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn selection_rules() {
        let fm = |ll: f64, auc: Vec<f64>, gll: Vec<f64>| FoldMetrics {
            pooled_log_loss: ll,
            group_auc: auc,
            group_log_loss: gll,
        };
        let a = Candidate {
            key: "a".into(),
            lambda: 1.0,
            folds: vec![fm(0.30, vec![0.80, 0.70], vec![0.2, 0.5]), fm(0.32, vec![0.82, 0.72], vec![0.2, 0.5])],
        };
        let b = Candidate {
            key: "b".into(),
            lambda: 0.1,
            folds: vec![fm(0.31, vec![0.75, 0.74], vec![0.3, 0.4]), fm(0.33, vec![0.77, 0.76], vec![0.3, 0.4])],
        };
        let cands = vec![a.clone(), b.clone()];
        assert_eq!(select_model(&cands, SelectionCriterion::PooledLogLoss).unwrap().index, 0);
        assert_eq!(select_model(&cands, SelectionCriterion::WorstCaseAuc).unwrap().index, 1);
        assert_eq!(select_model(&cands, SelectionCriterion::WorstCaseLogLoss).unwrap().index, 1);
        assert_eq!(select_model(&cands[..1], SelectionCriterion::WorstCaseAuc).unwrap().index, 0);
        let mut tie = b.clone();
        tie.folds = a.folds.clone();
        tie.key = "z".into();
        assert_eq!(select_model(&[a.clone(), tie], SelectionCriterion::PooledLogLoss).unwrap().index, 1);
        assert!(select_model(&[], SelectionCriterion::PooledLogLoss).is_err());
    }

    #[test]
    fn balanced_batches_draw_every_group() {
        let data = random_data(90, 1, 3, 16);
        let sub: Vec<usize> = (0..90).filter(|&i| data.groups[i] != 2 || i < 12).collect();
        let data = data.subset(&sub);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for b in epoch_batches(&data, 30, true, &mut rng) {
            for k in 0..3 {
                assert_eq!(b.iter().filter(|&&i| data.groups[i] == k).count(), 10);
            }
        }
    }

    #[test]
    fn log_csv_format() {
        let rows = vec![LogRow {
            epoch: 0,
            fold: 1,
            objective_value: f64::NAN,
            dev_metric: 0.5,
            worst_group: "b".into(),
        }];
        let mut out = Vec::new();
        write_training_log(&rows, &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "epoch,fold,objective_value,dev_metric,worst_group\n0,1,NA,0.5,b\n");
    }
}
