//! TOML run configuration shared by every subcommand.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::CliError;
use crate::censoring::CensoringFitConfig;
use crate::cohort::{SplitSpec, SynthConfig};
use crate::decision::{validate_grid, FixedCostUtility, RiskReductionUtility};
use crate::sim::{SimScenario, Setting, SubgroupSpec};
use crate::train::{Objective, SelectionCriterion, TrainConfig};

/// A cohort CSV on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CohortSource {
    pub path: PathBuf,
    pub horizon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub settings: Vec<Setting>,
    pub subgroups: Vec<SubgroupSpec>,
    pub utility: FixedCostUtility,
    pub tau_star: f64,
    pub n_points: usize,
    pub step: f64,
}

impl Default for SimulateSection {
    fn default() -> Self {
        let s = SimScenario::standard(Setting::DemographicParity);
        Self {
            settings: Setting::ALL.to_vec(),
            subgroups: s.subgroups,
            utility: s.utility,
            tau_star: s.tau_star,
            n_points: s.n_points,
            step: s.step,
        }
    }
}

impl SimulateSection {
    pub fn scenarios(&self) -> Vec<SimScenario> {
        let mut settings = self.settings.clone();
        settings.sort();
        settings.dedup();
        settings
            .into_iter()
            .map(|setting| SimScenario {
                setting,
                subgroups: self.subgroups.clone(),
                utility: self.utility,
                tau_star: self.tau_star,
                n_points: self.n_points,
                step: self.step,
            })
            .collect()
    }
}

/// Hyperparameter grid searched by `pipeline`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    /// Penalty weights for `reg_mmd` and `reg_parity`.
    pub lambdas: Vec<f64>,
    /// DRO step sizes.
    pub etas: Vec<f64>,
    /// Defaults to pooled log-loss for ERM objectives and worst-case log-loss otherwise.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub selection: Option<SelectionCriterion>,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            lambdas: vec![0.01, 0.0562, 0.316, 1.78, 10.0],
            etas: vec![0.01, 0.1, 1.0],
            selection: None,
        }
    }
}

/// Test-set evaluation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSection {
    /// Model files to evaluate; metrics pool over them.
    pub models: Vec<PathBuf>,
    /// Baseline model files for difference rows.
    pub baseline: Vec<PathBuf>,
    /// `id,weight` file aligned with the cohort.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weights: Option<PathBuf>,
    /// Decision thresholds for rates and net benefit.
    pub thresholds: Vec<f64>,
    /// Fixed `tau_star` for net benefit; each threshold is its own `tau_star` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau_star: Option<f64>,
    /// Relative risk reduction for the risk-reduction net benefit rows.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub risk_reduction: Option<f64>,
    pub n_replicates: usize,
    pub seed: u64,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        Self {
            models: Vec::new(),
            baseline: Vec::new(),
            weights: None,
            thresholds: vec![0.075, 0.2],
            tau_star: None,
            risk_reduction: None,
            n_replicates: 1000,
            seed: 0,
        }
    }
}

/// Decision-curve settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DcaSection {
    pub models: Vec<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weights: Option<PathBuf>,
    /// Threshold grid; the 199-point default grid when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<Vec<f64>>,
    /// `tau_star` of the parameterized curves.
    pub tau_star: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub risk_reduction: Option<f64>,
}

impl Default for DcaSection {
    fn default() -> Self {
        Self {
            models: Vec::new(),
            weights: None,
            grid: None,
            tau_star: 0.075,
            risk_reduction: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Overrides every section seed when set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Output directory.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cohort: Option<CohortSource>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthConfig>,
    pub split: SplitSpec,
    pub censoring: CensoringFitConfig,
    pub train: TrainConfig,
    pub grid: GridSection,
    pub evaluate: EvaluateSection,
    pub dca: DcaSection,
    pub simulate: SimulateSection,
}

/// Seeds in effect for a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Seeds {
    pub synth: u64,
    pub split: u64,
    pub train: u64,
    pub bootstrap: u64,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(format!("invalid config: {e}")))
    }

    /// Reads `path`, or returns the defaults when no path is given.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("cannot read config {}: {e}", p.display())))?;
                Self::parse(&text)
            }
        }
    }

    /// Applies command-line overrides and propagates the top-level seed.
    pub fn with_overrides(mut self, seed: Option<u64>, out: Option<PathBuf>) -> Self {
        if seed.is_some() {
            self.seed = seed;
        }
        if out.is_some() {
            self.out = out;
        }
        if let Some(s) = self.seed {
            if let Some(synth) = self.synth.as_mut() {
                synth.seed = s;
            }
            self.split.seed = s;
            self.train.seed = s;
            self.evaluate.seed = s;
        }
        self
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    pub fn seeds(&self) -> Seeds {
        Seeds {
            synth: self.synth.as_ref().map_or(0, |s| s.seed),
            split: self.split.seed,
            train: self.train.seed,
            bootstrap: self.evaluate.seed,
        }
    }

    /// Canonical TOML of the effective configuration.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("run configuration serialises")
    }

    /// SHA-256 of [`RunConfig::canonical`], hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }

    pub fn selection(&self) -> SelectionCriterion {
        self.grid.selection.unwrap_or(match self.train.objective {
            Objective::Erm | Objective::StratifiedErm => SelectionCriterion::PooledLogLoss,
            _ => SelectionCriterion::WorstCaseLogLoss,
        })
    }

    /// Training configurations searched by `pipeline`, keyed by a stable label.
    pub fn candidates(&self) -> Vec<(String, TrainConfig)> {
        let base = &self.train;
        match base.objective {
            Objective::RegMmd | Objective::RegParity => self
                .grid
                .lambdas
                .iter()
                .map(|&l| (format!("lambda={l}"), TrainConfig { lambda: l, ..base.clone() }))
                .collect(),
            Objective::Dro => self
                .grid
                .etas
                .iter()
                .map(|&e| (format!("eta={e}"), TrainConfig { eta: e, ..base.clone() }))
                .collect(),
            _ => vec![("base".to_string(), base.clone())],
        }
    }

    pub fn validate_cohort_source(&self) -> Result<(), CliError> {
        match (&self.cohort, &self.synth) {
            (Some(_), Some(_)) => Err(CliError::Config("give either [cohort] or [synth], not both".into())),
            (None, None) => Err(CliError::Config("a [cohort] or [synth] section is required".into())),
            (Some(c), None) => {
                if !(c.horizon > 0.0) {
                    return Err(CliError::Config(format!("cohort horizon must be positive, got {}", c.horizon)));
                }
                require_file(&c.path)
            }
            (None, Some(s)) => s.validate().map_err(|e| CliError::Config(e.to_string())),
        }
    }

    pub fn validate_training(&self) -> Result<(), CliError> {
        self.split.validate().map_err(|e| CliError::Config(e.to_string()))?;
        for (_, cfg) in self.candidates() {
            cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
        }
        if self.candidates().is_empty() {
            return Err(CliError::Config("hyperparameter grid is empty".into()));
        }
        if self.censoring.n_intervals == 0 {
            return Err(CliError::Config("censoring n_intervals must be positive".into()));
        }
        Ok(())
    }

    pub fn validate_evaluation(&self) -> Result<(), CliError> {
        let e = &self.evaluate;
        validate_grid(&e.thresholds).map_err(|err| CliError::Config(format!("evaluate thresholds: {err}")))?;
        if e.n_replicates == 0 {
            return Err(CliError::Config("n_replicates must be positive".into()));
        }
        check_tau_star(e.tau_star)?;
        check_risk_reduction(e.risk_reduction)
    }

    pub fn validate_dca(&self) -> Result<(), CliError> {
        if let Some(grid) = &self.dca.grid {
            validate_grid(grid).map_err(|err| CliError::Config(format!("dca grid: {err}")))?;
        }
        check_tau_star(Some(self.dca.tau_star))?;
        check_risk_reduction(self.dca.risk_reduction)
    }
}

fn check_tau_star(t: Option<f64>) -> Result<(), CliError> {
    match t {
        Some(t) if !(t > 0.0 && t < 1.0) => Err(CliError::Config(format!("tau_star must lie in (0, 1), got {t}"))),
        _ => Ok(()),
    }
}

fn check_risk_reduction(r: Option<f64>) -> Result<(), CliError> {
    if let Some(r) = r {
        RiskReductionUtility::new(0.5, r).map_err(|e| CliError::Config(e.to_string()))?;
    }
    Ok(())
}

pub fn require_file(path: &Path) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Config(format!("file not found: {}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        let back = RunConfig::parse(&cfg.canonical()).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn hash_tracks_keys() {
        let a = RunConfig::parse("[train]\nlambda = 0.5\n").unwrap();
        let b = RunConfig::parse("[train]\nlambda = 0.5\n").unwrap();
        let c = RunConfig::parse("[train]\nlambda = 0.25\n").unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
        assert_ne!(a.hash(), a.clone().with_overrides(Some(3), None).hash());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::parse("[train]\nlamda = 0.5\n").is_err());
        assert!(RunConfig::parse("bogus = 1\n").is_err());
    }

    #[test]
    fn seed_override_propagates() {
        let cfg = RunConfig::parse(
            "[synth]\nfeature_dim = 1\nhorizon = 1.0\nseed = 4\n[[synth.groups]]\nlabel = \"a\"\ncount = 10\nhorizon_risk = 0.1\ncensoring_rate = 0.0\n",
        )
        .unwrap()
        .with_overrides(Some(9), None);
        let s = cfg.seeds();
        assert_eq!((s.synth, s.split, s.train, s.bootstrap), (9, 9, 9, 9));
    }

    #[test]
    fn candidates_follow_objective() {
        let mut cfg = RunConfig::default();
        assert_eq!(cfg.candidates().len(), 1);
        cfg.train.objective = Objective::RegMmd;
        cfg.grid.lambdas = vec![0.0, 1.0];
        let keys: Vec<String> = cfg.candidates().into_iter().map(|c| c.0).collect();
        assert_eq!(keys, vec!["lambda=0", "lambda=1"]);
    }
}
