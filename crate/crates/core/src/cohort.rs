//! Cohort data model, synthetic cohort generation, CSV ingestion and
//! train/validation/test partitioning.
//!
//! A [`Cohort`] holds right-censored observations `(x, a, u, δ)`: a feature
//! vector, a group label, an observed follow-up time `u = min(T, C)` and an
//! indicator `δ = 1[T <= C]`. The horizon `τ` used to build binary outcomes
//! is attached to the cohort but never stored in the CSV file.
//!
//! The synthetic generator draws exponential event times with a log-linear
//! rate in the features plus a per-group offset, and exponential censoring
//! times that depend on the features only, so `T ⊥ C | X` holds exactly and
//! the horizon risk of each sample is known in closed form.

use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors raised while building, reading or splitting cohorts.
#[derive(Debug, Error)]
pub enum CohortError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("parse error at row {row}, column `{column}`: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },
    #[error("invalid cohort: {0}")]
    Invalid(String),
    #[error("cannot split {n} samples into {parts} non-empty parts")]
    Sizing { n: usize, parts: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// One observed individual.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    /// Index into the owning cohort's group vocabulary.
    pub group: usize,
    pub features: Vec<f64>,
    /// Observed follow-up time `min(T, C)`.
    pub followup_time: f64,
    /// `true` when the follow-up time is an outcome event, `false` for censoring.
    pub event: bool,
}

/// An immutable collection of samples sharing a group vocabulary and horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    samples: Vec<Sample>,
    groups: Vec<String>,
    horizon: f64,
    feature_dim: usize,
}

impl Cohort {
    pub fn new(
        samples: Vec<Sample>,
        groups: Vec<String>,
        horizon: f64,
        feature_dim: usize,
    ) -> Result<Self, CohortError> {
        if groups.is_empty() {
            return Err(CohortError::Invalid("group vocabulary is empty".into()));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(CohortError::Invalid(format!("horizon must be positive, got {horizon}")));
        }
        let distinct: BTreeSet<&String> = groups.iter().collect();
        if distinct.len() != groups.len() {
            return Err(CohortError::Invalid("duplicate group labels".into()));
        }
        for s in &samples {
            if s.group >= groups.len() {
                return Err(CohortError::Invalid(format!("sample {} has unknown group index {}", s.id, s.group)));
            }
            if s.features.len() != feature_dim {
                return Err(CohortError::Invalid(format!(
                    "sample {} has {} features, expected {feature_dim}",
                    s.id,
                    s.features.len()
                )));
            }
            if !(s.followup_time >= 0.0) {
                return Err(CohortError::Invalid(format!("sample {} has negative follow-up time", s.id)));
            }
        }
        Ok(Self {
            samples,
            groups,
            horizon,
            feature_dim,
        })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn groups(&self) -> &[String] {
        &self.groups
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn group_label(&self, sample: &Sample) -> &str {
        &self.groups[sample.group]
    }

    /// Group index of every sample, in sample order.
    pub fn group_indices(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.group).collect()
    }

    /// A new cohort with the selected samples and the same vocabulary.
    pub fn subset(&self, indices: &[usize]) -> Cohort {
        Cohort {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            groups: self.groups.clone(),
            horizon: self.horizon,
            feature_dim: self.feature_dim,
        }
    }

    /// Concatenation of several cohorts sharing one vocabulary.
    pub fn concat(parts: &[&Cohort]) -> Result<Cohort, CohortError> {
        let first = parts
            .first()
            .ok_or_else(|| CohortError::Invalid("nothing to concatenate".into()))?;
        let mut samples = Vec::new();
        for p in parts {
            if p.groups != first.groups || p.feature_dim != first.feature_dim {
                return Err(CohortError::Invalid("cohorts have different vocabularies or dimensions".into()));
            }
            samples.extend(p.samples.iter().cloned());
        }
        Ok(Cohort {
            samples,
            groups: first.groups.clone(),
            horizon: first.horizon,
            feature_dim: first.feature_dim,
        })
    }

    /// Same samples evaluated against another horizon.
    pub fn with_horizon(&self, horizon: f64) -> Result<Cohort, CohortError> {
        Cohort::new(self.samples.clone(), self.groups.clone(), horizon, self.feature_dim)
    }
}

/// Per-group parameters of the synthetic generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthGroup {
    pub label: String,
    pub count: usize,
    /// `P(T <= horizon)` for a sample whose features are all zero.
    pub horizon_risk: f64,
    /// Censoring hazard per time unit for a sample whose features are all zero.
    /// Zero disables censoring for the group.
    pub censoring_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub groups: Vec<SynthGroup>,
    pub feature_dim: usize,
    /// Log-rate coefficients of the event time; empty means all zero.
    #[serde(default)]
    pub event_coefs: Vec<f64>,
    /// Log-rate coefficients of the censoring time; empty means all zero.
    #[serde(default)]
    pub censoring_coefs: Vec<f64>,
    pub horizon: f64,
    pub seed: u64,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), CohortError> {
        let err = |m: String| Err(CohortError::Config(m));
        if self.groups.is_empty() {
            return err("at least one group is required".into());
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return err(format!("horizon must be positive, got {}", self.horizon));
        }
        for coefs in [&self.event_coefs, &self.censoring_coefs] {
            if !coefs.is_empty() && coefs.len() != self.feature_dim {
                return err(format!(
                    "coefficient vector has length {}, expected feature_dim = {}",
                    coefs.len(),
                    self.feature_dim
                ));
            }
            if coefs.iter().any(|c| !c.is_finite()) {
                return err("coefficients must be finite".into());
            }
        }
        let mut labels = BTreeSet::new();
        for g in &self.groups {
            if !labels.insert(&g.label) {
                return err(format!("duplicate group label `{}`", g.label));
            }
            if g.count == 0 {
                return err(format!("group `{}` has zero samples", g.label));
            }
            if !(g.horizon_risk > 0.0 && g.horizon_risk < 1.0) {
                return err(format!(
                    "group `{}` horizon_risk must lie in (0, 1), got {}",
                    g.label, g.horizon_risk
                ));
            }
            if !(g.censoring_rate >= 0.0 && g.censoring_rate.is_finite()) {
                return err(format!("group `{}` censoring_rate must be >= 0", g.label));
            }
        }
        Ok(())
    }

    fn coef(coefs: &[f64], x: &[f64]) -> f64 {
        coefs.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// Closed-form `P(T <= horizon | x, group)`.
    pub fn horizon_risk(&self, group: usize, x: &[f64]) -> f64 {
        let base = -(1.0 - self.groups[group].horizon_risk).ln();
        let cum_hazard = base * Self::coef(&self.event_coefs, x).exp();
        -(-cum_hazard).exp_m1()
    }
}

/// A generated cohort with the true horizon risk of each sample.
#[derive(Debug, Clone)]
pub struct SyntheticCohort {
    pub cohort: Cohort,
    pub true_risk: Vec<f64>,
}

/// Draws a cohort from the exponential event/censoring model of `config`.
///
/// Per sample the generator consumes, in order: `feature_dim` standard
/// normals, one uniform for the event time and one uniform for the censoring
/// time (drawn even when censoring is disabled so event times do not depend
/// on the censoring settings).
pub fn generate_synthetic_cohort(config: &SynthConfig) -> Result<SyntheticCohort, CohortError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let horizon = config.horizon;
    let mut samples = Vec::new();
    let mut true_risk = Vec::new();
    let mut next_id = 0usize;
    for (gi, g) in config.groups.iter().enumerate() {
        let base_rate = -(1.0 - g.horizon_risk).ln() / horizon;
        for _ in 0..g.count {
            let x: Vec<f64> = (0..config.feature_dim).map(|_| rng.sample(StandardNormal)).collect();
            let u_event: f64 = 1.0 - rng.random::<f64>();
            let u_cens: f64 = 1.0 - rng.random::<f64>();
            let event_rate = base_rate * SynthConfig::coef(&config.event_coefs, &x).exp();
            let t_event = -u_event.ln() / event_rate;
            let cens_rate = g.censoring_rate * SynthConfig::coef(&config.censoring_coefs, &x).exp();
            let t_cens = if cens_rate > 0.0 { -u_cens.ln() / cens_rate } else { f64::INFINITY };
            true_risk.push(config.horizon_risk(gi, &x));
            samples.push(Sample {
                id: format!("s{next_id:06}"),
                group: gi,
                features: x,
                followup_time: t_event.min(t_cens),
                event: t_event <= t_cens,
            });
            next_id += 1;
        }
    }
    let groups = config.groups.iter().map(|g| g.label.clone()).collect();
    let cohort = Cohort::new(samples, groups, horizon, config.feature_dim)?;
    Ok(SyntheticCohort { cohort, true_risk })
}

const GROUPS_DIRECTIVE: &str = "# groups:";

/// Writes `id,group,t,event,f0,...` rows preceded by a `# groups:` directive
/// that pins the vocabulary order.
pub fn write_cohort<W: Write>(cohort: &Cohort, out: W) -> Result<(), CohortError> {
    let mut out = out;
    writeln!(out, "{GROUPS_DIRECTIVE} {}", cohort.groups.join(","))?;
    let mut w = csv::WriterBuilder::new().from_writer(out);
    let mut header = vec!["id".to_string(), "group".into(), "t".into(), "event".into()];
    header.extend((0..cohort.feature_dim).map(|j| format!("f{j}")));
    w.write_record(&header)?;
    for s in &cohort.samples {
        let mut rec = vec![
            s.id.clone(),
            cohort.groups[s.group].clone(),
            format!("{}", s.followup_time),
            if s.event { "1".into() } else { "0".into() },
        ];
        rec.extend(s.features.iter().map(|v| format!("{v}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_cohort(path: &Path, horizon: f64) -> Result<Cohort, CohortError> {
    let file = std::fs::File::open(path)?;
    read_cohort(file, horizon)
}

/// Parses the cohort CSV format. Rows are numbered from 1 for the first data row.
pub fn read_cohort<R: Read>(mut input: R, horizon: f64) -> Result<Cohort, CohortError> {
    let mut text = String::new();
    input.read_to_string(&mut text)?;
    let mut declared: Option<Vec<String>> = None;
    let mut body = String::with_capacity(text.len());
    for line in text.lines() {
        let trimmed = line.trim_start();
        if let Some(rest) = trimmed.strip_prefix(GROUPS_DIRECTIVE) {
            declared = Some(rest.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect());
        } else if trimmed.starts_with('#') {
            continue;
        } else {
            body.push_str(line);
            body.push('\n');
        }
    }

    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(body.as_bytes());
    let headers = reader.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let missing = |name: &str| CohortError::Parse {
        row: 0,
        column: name.to_string(),
        message: "missing column".into(),
    };
    let id_col = col("id").ok_or_else(|| missing("id"))?;
    let group_col = col("group").ok_or_else(|| missing("group"))?;
    let t_col = col("t").ok_or_else(|| missing("t"))?;
    let event_col = col("event").ok_or_else(|| missing("event"))?;
    let mut feature_cols = Vec::new();
    while let Some(c) = col(&format!("f{}", feature_cols.len())) {
        feature_cols.push(c);
    }

    let mut raw = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i + 1;
        let rec = rec?;
        let field = |c: usize, name: &str| {
            rec.get(c).ok_or_else(|| CohortError::Parse {
                row,
                column: name.to_string(),
                message: "missing field".into(),
            })
        };
        let number = |c: usize, name: &str| -> Result<f64, CohortError> {
            let s = field(c, name)?;
            s.parse::<f64>().map_err(|_| CohortError::Parse {
                row,
                column: name.to_string(),
                message: format!("`{s}` is not a number"),
            })
        };
        let t = number(t_col, "t")?;
        if !(t >= 0.0) {
            return Err(CohortError::Parse {
                row,
                column: "t".into(),
                message: format!("follow-up time must be nonnegative, got {t}"),
            });
        }
        let event = match field(event_col, "event")? {
            "1" => true,
            "0" => false,
            other => {
                return Err(CohortError::Parse {
                    row,
                    column: "event".into(),
                    message: format!("expected 0 or 1, got `{other}`"),
                })
            }
        };
        let mut features = Vec::with_capacity(feature_cols.len());
        for (j, &c) in feature_cols.iter().enumerate() {
            let v = number(c, &format!("f{j}"))?;
            if !v.is_finite() {
                return Err(CohortError::Parse {
                    row,
                    column: format!("f{j}"),
                    message: "feature must be finite".into(),
                });
            }
            features.push(v);
        }
        raw.push((field(id_col, "id")?.to_string(), field(group_col, "group")?.to_string(), t, event, features));
    }

    let groups: Vec<String> = match declared {
        Some(g) => g,
        None => raw.iter().map(|r| r.1.clone()).collect::<BTreeSet<_>>().into_iter().collect(),
    };
    let mut samples = Vec::with_capacity(raw.len());
    for (i, (id, label, t, event, features)) in raw.into_iter().enumerate() {
        let group = groups.iter().position(|g| *g == label).ok_or_else(|| CohortError::Parse {
            row: i + 1,
            column: "group".into(),
            message: format!("group `{label}` is not in the declared vocabulary"),
        })?;
        samples.push(Sample {
            id,
            group,
            features,
            followup_time: t,
            event,
        });
    }
    if groups.is_empty() {
        return Err(CohortError::Invalid("cohort has no groups".into()));
    }
    Cohort::new(samples, groups, horizon, feature_cols.len())
}

/// Proportions and seed of a train/validation/test split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
    pub n_train_folds: usize,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train: 0.625,
            validation: 0.125,
            test: 0.25,
            n_train_folds: 5,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<(), CohortError> {
        for (name, f) in [("train", self.train), ("validation", self.validation), ("test", self.test)] {
            if !(f > 0.0 && f < 1.0) {
                return Err(CohortError::Config(format!("{name} fraction must lie in (0, 1), got {f}")));
            }
        }
        let total = self.train + self.validation + self.test;
        if (total - 1.0).abs() > 1e-9 {
            return Err(CohortError::Config(format!("fractions sum to {total}, expected 1")));
        }
        if self.n_train_folds == 0 {
            return Err(CohortError::Config("n_train_folds must be positive".into()));
        }
        Ok(())
    }
}

/// Disjoint train folds, validation and test cohorts.
#[derive(Debug, Clone)]
pub struct Partition {
    pub train_folds: Vec<Cohort>,
    pub validation: Cohort,
    pub test: Cohort,
}

impl Partition {
    /// All train folds except `held_out`, concatenated.
    pub fn train_without(&self, held_out: usize) -> Cohort {
        let parts: Vec<&Cohort> = self
            .train_folds
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != held_out)
            .map(|(_, c)| c)
            .collect();
        if parts.is_empty() {
            return self.train_folds[held_out].clone();
        }
        Cohort::concat(&parts).expect("folds share a vocabulary")
    }

    pub fn train_all(&self) -> Cohort {
        let parts: Vec<&Cohort> = self.train_folds.iter().collect();
        Cohort::concat(&parts).expect("folds share a vocabulary")
    }
}

/// Seeded shuffle followed by contiguous slicing: train, validation, test.
/// The train slice is cut into `n_train_folds` folds whose sizes differ by at most one.
pub fn partition(cohort: &Cohort, spec: &SplitSpec) -> Result<Partition, CohortError> {
    spec.validate()?;
    let n = cohort.len();
    let parts = spec.n_train_folds + 2;
    let n_train = (spec.train * n as f64).round() as usize;
    let n_val = (spec.validation * n as f64).round() as usize;
    if n < parts || n_train < spec.n_train_folds || n_val == 0 || n_train + n_val >= n {
        return Err(CohortError::Sizing { n, parts });
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    order.shuffle(&mut rng);

    let (train_idx, rest) = order.split_at(n_train);
    let (val_idx, test_idx) = rest.split_at(n_val);
    let k = spec.n_train_folds;
    let mut train_folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = n_train / k + usize::from(f < n_train % k);
        train_folds.push(cohort.subset(&train_idx[start..start + size]));
        start += size;
    }
    Ok(Partition {
        train_folds,
        validation: cohort.subset(val_idx),
        test: cohort.subset(test_idx),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(censoring_rate: f64) -> SynthConfig {
        SynthConfig {
            groups: vec![
                SynthGroup {
                    label: "b".into(),
                    count: 40,
                    horizon_risk: 0.25,
                    censoring_rate,
                },
                SynthGroup {
                    label: "a".into(),
                    count: 30,
                    horizon_risk: 0.1,
                    censoring_rate,
                },
            ],
            feature_dim: 3,
            event_coefs: vec![0.5, -0.3, 0.0],
            censoring_coefs: vec![0.2, 0.0, 0.1],
            horizon: 10.0,
            seed: 17,
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_synthetic_cohort(&config(0.05)).unwrap();
        let b = generate_synthetic_cohort(&config(0.05)).unwrap();
        let (mut wa, mut wb) = (Vec::new(), Vec::new());
        write_cohort(&a.cohort, &mut wa).unwrap();
        write_cohort(&b.cohort, &mut wb).unwrap();
        assert_eq!(wa, wb);
        assert_eq!(a.true_risk, b.true_risk);
    }

    #[test]
    fn zero_censoring_means_every_followup_is_an_event() {
        let c = generate_synthetic_cohort(&config(0.0)).unwrap().cohort;
        assert!(c.samples().iter().all(|s| s.event));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut c = config(0.1);
        c.groups[0].count = 0;
        assert!(matches!(generate_synthetic_cohort(&c), Err(CohortError::Config(_))));
        let mut c = config(0.1);
        c.groups[1].horizon_risk = 1.0;
        assert!(matches!(generate_synthetic_cohort(&c), Err(CohortError::Config(_))));
        let mut c = config(0.1);
        c.event_coefs = vec![1.0];
        assert!(c.validate().is_err());
    }

    #[test]
    fn reads_three_rows_and_sorts_vocabulary() {
        let text = "id,group,t,event,f0\nx1,b,1.5,1,0.1\nx2,a,3,0,0.2\nx3,b,12,0,-1\n";
        let c = read_cohort(text.as_bytes(), 10.0).unwrap();
        assert_eq!(c.len(), 3);
        assert_eq!(c.groups(), &["a".to_string(), "b".to_string()]);
        assert_eq!(c.samples()[1].group, 0);
        assert_eq!(c.feature_dim(), 1);
    }

    #[test]
    fn declared_vocabulary_wins() {
        let text = "# groups: z,b,a\nid,group,t,event\n1,a,1,1\n";
        let c = read_cohort(text.as_bytes(), 1.0).unwrap();
        assert_eq!(c.groups(), &["z".to_string(), "b".into(), "a".into()]);
        assert_eq!(c.samples()[0].group, 2);
    }

    #[test]
    fn negative_time_is_a_parse_error_at_its_row() {
        let text = "id,group,t,event\n1,a,1,1\n2,a,-0.5,0\n";
        match read_cohort(text.as_bytes(), 1.0) {
            Err(CohortError::Parse { row, column, .. }) => {
                assert_eq!(row, 2);
                assert_eq!(column, "t");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_numeric_and_missing_columns() {
        let text = "id,group,t,event,f0\n1,a,1,1,abc\n";
        assert!(matches!(
            read_cohort(text.as_bytes(), 1.0),
            Err(CohortError::Parse { ref column, .. }) if column == "f0"
        ));
        let text = "id,group,event\n1,a,1\n";
        assert!(matches!(
            read_cohort(text.as_bytes(), 1.0),
            Err(CohortError::Parse { ref column, .. }) if column == "t"
        ));
    }

    #[test]
    fn five_eight_split_of_eight() {
        let c = generate_synthetic_cohort(&SynthConfig {
            groups: vec![SynthGroup {
                label: "g".into(),
                count: 8,
                horizon_risk: 0.3,
                censoring_rate: 0.0,
            }],
            feature_dim: 1,
            event_coefs: vec![],
            censoring_coefs: vec![],
            horizon: 1.0,
            seed: 1,
        })
        .unwrap()
        .cohort;
        let spec = SplitSpec {
            n_train_folds: 1,
            ..SplitSpec::default()
        };
        let p = partition(&c, &spec).unwrap();
        assert_eq!((p.train_folds[0].len(), p.validation.len(), p.test.len()), (5, 1, 2));
    }

    #[test]
    fn degenerate_fractions_and_tiny_cohorts() {
        let spec = SplitSpec {
            train: 1.0,
            validation: 0.0,
            test: 0.0,
            n_train_folds: 1,
            seed: 0,
        };
        assert!(matches!(spec.validate(), Err(CohortError::Config(_))));
        let c = generate_synthetic_cohort(&config(0.1)).unwrap().cohort.subset(&[0, 1, 2]);
        assert!(matches!(partition(&c, &SplitSpec::default()), Err(CohortError::Sizing { .. })));
    }

    #[test]
    fn partition_is_a_bijection_with_balanced_folds() {
        let c = generate_synthetic_cohort(&config(0.1)).unwrap().cohort;
        let p = partition(&c, &SplitSpec::default()).unwrap();
        let mut ids: Vec<&str> = p
            .train_folds
            .iter()
            .chain([&p.validation, &p.test])
            .flat_map(|c| c.samples().iter().map(|s| s.id.as_str()))
            .collect();
        assert_eq!(ids.len(), c.len());
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), c.len());
        let sizes: Vec<usize> = p.train_folds.iter().map(Cohort::len).collect();
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }
}
