//! Gradient-based training of risk models: weighted ERM, penalised
//! objectives that push towards equalized odds, group-weighted DRO, per-group
//! ERM, early stopping and model selection.

mod dro;
mod model;
mod objectives;
mod trainer;

use std::collections::BTreeSet;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::censoring::composite_outcomes;
use crate::cohort::Cohort;
use crate::metrics::MetricError;

pub use dro::{dro_update, DroState};
pub use model::{Activation, Architecture, ForwardCache, RiskModel};
pub use objectives::{
    dro_objective, group_log_losses, kernel, mmd_penalty, mmd_two_sample, parity_penalty, penalized_objective, relaxed_metric, surrogate,
    weighted_log_loss, BatchObjective, MmdNormalization, ParityMetric, Penalty, PenaltyValue, Surrogate,
};
pub use trainer::{
    candidate_score, objective_gradient, select_model, train, train_dro, train_erm, train_regularized, train_stratified, write_training_log, Candidate,
    FoldMetrics, LogRow, ObjectiveSpec, Selection, SelectionCriterion, StratifiedModel, TrainOutcome,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("invalid training data: {0}")]
    Data(String),
    #[error("training diverged at epoch {epoch}, batch {batch}: objective {value}")]
    Divergence { epoch: usize, batch: usize, value: f64 },
    #[error("malformed model file: {0}")]
    Format(String),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    #[default]
    Erm,
    StratifiedErm,
    RegMmd,
    RegParity,
    Dro,
}

/// Group metric driving the DRO weights and its early stopping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DroMetric {
    #[default]
    LogLoss,
    OneMinusAuc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ParityKind {
    #[default]
    Tpr,
    Fpr,
    Auc,
    LogLoss,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

/// Flat training configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub objective: Objective,
    /// Penalty weight.
    pub lambda: f64,
    /// DRO step size.
    pub eta: f64,
    /// Kernel bandwidth of the MMD penalty.
    pub gamma: f64,
    pub mmd_normalization: MmdNormalization,
    pub surrogate: Surrogate,
    /// Metrics whose group differences the parity penalty targets.
    pub parity_metrics: Vec<ParityKind>,
    /// Thresholds for the rate metrics in `parity_metrics`.
    pub parity_thresholds: Vec<f64>,
    pub dro_metric: DroMetric,
    /// Draw minibatches with an equal share of every group.
    pub balanced_sampling: bool,
    /// Hidden layer widths; empty for logistic regression.
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub dropout: f64,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without development improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Append a one-hot encoding of the group to the features.
    pub encode_group: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            objective: Objective::Erm,
            lambda: 0.0,
            eta: 0.01,
            gamma: 1.0,
            mmd_normalization: MmdNormalization::PerGroup,
            surrogate: Surrogate::Softplus,
            parity_metrics: vec![ParityKind::Tpr, ParityKind::Fpr],
            parity_thresholds: vec![0.075, 0.2],
            dro_metric: DroMetric::LogLoss,
            balanced_sampling: false,
            hidden: Vec::new(),
            activation: Activation::Relu,
            dropout: 0.0,
            optimizer: OptimizerKind::Adam,
            learning_rate: 0.01,
            weight_decay: 0.0,
            batch_size: 256,
            max_epochs: 50,
            patience: 5,
            seed: 0,
            encode_group: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return bad(format!("lambda must be nonnegative, got {}", self.lambda));
        }
        if !(self.eta >= 0.0) || !self.eta.is_finite() {
            return bad(format!("eta must be nonnegative, got {}", self.eta));
        }
        if !(self.gamma > 0.0) {
            return bad(format!("gamma must be positive, got {}", self.gamma));
        }
        if self.batch_size < 2 {
            return bad(format!("batch_size must be at least 2, got {}", self.batch_size));
        }
        if !(self.learning_rate > 0.0) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.weight_decay >= 0.0) {
            return bad(format!("weight_decay must be nonnegative, got {}", self.weight_decay));
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be positive".into());
        }
        if self.parity_thresholds.iter().any(|&t| !(t > 0.0 && t < 1.0)) {
            return bad("parity thresholds must lie in (0, 1)".into());
        }
        if self.objective == Objective::RegParity && self.parity_metrics.is_empty() {
            return bad("reg_parity needs at least one parity metric".into());
        }
        self.architecture(0).validate()
    }

    pub fn architecture(&self, input_dim: usize) -> Architecture {
        Architecture {
            input_dim,
            hidden: self.hidden.clone(),
            activation: self.activation,
            dropout: self.dropout,
        }
    }

    /// Parity metrics expanded over the configured thresholds.
    pub fn expanded_parity_metrics(&self) -> Vec<ParityMetric> {
        let kinds: BTreeSet<ParityKind> = self.parity_metrics.iter().copied().collect();
        let mut out = Vec::new();
        for kind in kinds {
            match kind {
                ParityKind::Tpr => out.extend(self.parity_thresholds.iter().map(|&t| ParityMetric::Tpr(t))),
                ParityKind::Fpr => out.extend(self.parity_thresholds.iter().map(|&t| ParityMetric::Fpr(t))),
                ParityKind::Auc => out.push(ParityMetric::Auc),
                ParityKind::LogLoss => out.push(ParityMetric::LogLoss),
            }
        }
        out
    }

    /// Penalty implied by the objective.
    pub fn penalty(&self) -> Penalty {
        match self.objective {
            Objective::RegMmd => Penalty::Mmd {
                gamma: self.gamma,
                normalization: self.mmd_normalization,
            },
            Objective::RegParity => Penalty::Parity {
                metrics: self.expanded_parity_metrics(),
                surrogate: self.surrogate,
            },
            _ => Penalty::None,
        }
    }
}

/// Feature matrix, targets, weights and group labels for training or evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Array2<f64>,
    pub y: Vec<bool>,
    pub weights: Vec<f64>,
    pub groups: Vec<usize>,
    pub group_labels: Vec<String>,
}

impl Dataset {
    /// Targets are the horizon outcomes; a group one-hot is appended when `encode_group` is set.
    pub fn from_cohort(cohort: &Cohort, weights: &[f64], encode_group: bool) -> Result<Self, TrainError> {
        if weights.len() != cohort.len() {
            return Err(TrainError::Data(format!("{} weights for {} samples", weights.len(), cohort.len())));
        }
        let k = cohort.n_groups();
        let d = cohort.feature_dim() + if encode_group { k } else { 0 };
        let mut x = Array2::zeros((cohort.len(), d));
        for (i, s) in cohort.samples().iter().enumerate() {
            for (j, &v) in s.features.iter().enumerate() {
                x[[i, j]] = v;
            }
            if encode_group {
                x[[i, cohort.feature_dim() + s.group]] = 1.0;
            }
        }
        Ok(Self {
            x,
            y: composite_outcomes(cohort).iter().map(|o| o.y).collect(),
            weights: weights.to_vec(),
            groups: cohort.group_indices(),
            group_labels: cohort.groups().to_vec(),
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn n_groups(&self) -> usize {
        self.group_labels.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select(ndarray::Axis(0), idx),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            weights: idx.iter().map(|&i| self.weights[i]).collect(),
            groups: idx.iter().map(|&i| self.groups[i]).collect(),
            group_labels: self.group_labels.clone(),
        }
    }

    /// Indices of the samples in group `k`.
    pub fn group_members(&self, k: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.groups[i] == k).collect()
    }

    pub fn concat(parts: &[&Dataset]) -> Result<Dataset, TrainError> {
        let first = parts.first().ok_or_else(|| TrainError::Data("nothing to concatenate".into()))?;
        if parts.iter().any(|p| p.group_labels != first.group_labels || p.feature_dim() != first.feature_dim()) {
            return Err(TrainError::Data("datasets disagree on groups or features".into()));
        }
        let views: Vec<_> = parts.iter().map(|p| p.x.view()).collect();
        let x = ndarray::concatenate(ndarray::Axis(0), &views).map_err(|e| TrainError::Data(e.to_string()))?;
        Ok(Dataset {
            x,
            y: parts.iter().flat_map(|p| p.y.iter().copied()).collect(),
            weights: parts.iter().flat_map(|p| p.weights.iter().copied()).collect(),
            groups: parts.iter().flat_map(|p| p.groups.iter().copied()).collect(),
            group_labels: first.group_labels.clone(),
        })
    }
}
