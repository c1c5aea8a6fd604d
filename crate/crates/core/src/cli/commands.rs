//! Subcommand implementations.

use std::fmt::Write as _;

use rayon::prelude::*;

use super::config::RunConfig;
use super::evaluate::{dataset_for, evaluate_scores, group_decision_curves, read_weights, EvalData, EvalSettings, FittedModel};
use super::output::{OutputDir, RunRecord};
use super::CliError;
use crate::censoring::{cross_fit_weights, IpcwWeights, PartitionWeights};
use crate::cohort::{generate_synthetic_cohort, load_cohort, partition, write_cohort, Cohort};
use crate::decision::{default_grid, write_decision_curves, CurveKind};
use crate::metrics::{ipcw_auc, ipcw_log_loss};
use crate::sim::{run_simulation, write_argmax_csv, write_series_csv};
use crate::train::{
    candidate_score, select_model, train, train_stratified, write_training_log, Candidate, Dataset, FoldMetrics, LogRow, Objective, TrainConfig,
};

fn runtime<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Runtime(e.to_string())
}

fn io(e: std::io::Error) -> CliError {
    CliError::Runtime(e.to_string())
}

/// Validates, creates the output directory, runs `body` and writes the
/// manifest whether or not `body` succeeds.
fn execute<F>(name: &str, cfg: &RunConfig, validate: impl FnOnce(&RunConfig) -> Result<(), CliError>, body: F) -> Result<(), CliError>
where
    F: FnOnce(&RunConfig, &mut OutputDir, &mut RunRecord) -> Result<(), CliError>,
{
    validate(cfg)?;
    let mut out = OutputDir::create(&cfg.out_dir())?;
    let mut record = RunRecord::new(name);
    let result = body(cfg, &mut out, &mut record);
    record.write(&mut out, cfg, result.as_ref().err())?;
    result
}

pub fn cmd_simulate(cfg: &RunConfig) -> Result<(), CliError> {
    let validate = |cfg: &RunConfig| {
        if cfg.simulate.settings.is_empty() {
            return Err(CliError::Config("simulate.settings is empty".into()));
        }
        for s in cfg.simulate.scenarios() {
            s.validate().map_err(|e| CliError::Config(e.to_string()))?;
        }
        Ok(())
    };
    execute("simulate", cfg, validate, |cfg, out, record| {
        let results = cfg
            .simulate
            .scenarios()
            .iter()
            .map(run_simulation)
            .collect::<Result<Vec<_>, _>>()
            .map_err(runtime)?;
        record.stage("simulate");
        let mut series = Vec::new();
        write_series_csv(&results, &mut series).map_err(io)?;
        let mut argmax = Vec::new();
        write_argmax_csv(&results, &mut argmax).map_err(io)?;
        out.write("sim_series.csv", &series)?;
        out.write("sim_argmax.csv", &argmax)?;
        record.stage("write");
        Ok(())
    })
}

/// Loads or generates the cohort, returning the true risks of synthetic cohorts.
fn obtain_cohort(cfg: &RunConfig) -> Result<(Cohort, Option<Vec<f64>>), CliError> {
    match (&cfg.cohort, &cfg.synth) {
        (Some(src), _) => Ok((load_cohort(&src.path, src.horizon).map_err(|e| CliError::Config(e.to_string()))?, None)),
        (None, Some(synth)) => {
            let s = generate_synthetic_cohort(synth).map_err(|e| CliError::Config(e.to_string()))?;
            Ok((s.cohort, Some(s.true_risk)))
        }
        (None, None) => Err(CliError::Config("a [cohort] or [synth] section is required".into())),
    }
}

fn cohort_bytes(cohort: &Cohort) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    write_cohort(cohort, &mut buf).map_err(runtime)?;
    Ok(buf)
}

pub fn cmd_synth(cfg: &RunConfig) -> Result<(), CliError> {
    let validate = |cfg: &RunConfig| match &cfg.synth {
        Some(s) => s.validate().map_err(|e| CliError::Config(e.to_string())),
        None => Err(CliError::Config("synth needs a [synth] section".into())),
    };
    execute("synth", cfg, validate, |cfg, out, record| {
        let (cohort, risk) = obtain_cohort(cfg)?;
        record.stage("generate");
        out.write("cohort.csv", &cohort_bytes(&cohort)?)?;
        let mut text = String::from("id,true_risk\n");
        for (s, r) in cohort.samples().iter().zip(risk.unwrap_or_default()) {
            let _ = writeln!(text, "{},{}", s.id, r);
        }
        out.write("true_risk.csv", text.as_bytes())?;
        record.stage("write");
        Ok(())
    })
}

/// Partitioned cohort with cross-fitted weights and datasets.
struct Prepared {
    folds: Vec<Dataset>,
    validation: Dataset,
    test: Dataset,
}

fn weights_bytes(w: &IpcwWeights, cohort: &Cohort) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    w.write_csv(cohort, &mut buf).map_err(runtime)?;
    Ok(buf)
}

fn prepare(cfg: &RunConfig, out: &mut OutputDir, record: &mut RunRecord) -> Result<Prepared, CliError> {
    let (cohort, _) = obtain_cohort(cfg)?;
    out.write("cohort.csv", &cohort_bytes(&cohort)?)?;
    record.stage("cohort");

    let partition = partition(&cohort, &cfg.split).map_err(runtime)?;
    let mut assignment = String::from("id,part\n");
    for (k, fold) in partition.train_folds.iter().enumerate() {
        for s in fold.samples() {
            let _ = writeln!(assignment, "{},train_{k}", s.id);
        }
    }
    for (name, part) in [("validation", &partition.validation), ("test", &partition.test)] {
        for s in part.samples() {
            let _ = writeln!(assignment, "{},{name}", s.id);
        }
    }
    out.write("partition.csv", assignment.as_bytes())?;
    out.write("cohort_test.csv", &cohort_bytes(&partition.test)?)?;
    record.stage("partition");

    let weights: PartitionWeights = cross_fit_weights(&partition, &cfg.censoring).map_err(runtime)?;
    for (k, m) in weights.models.iter().enumerate() {
        out.write(&format!("censoring_fold{k}.txt"), m.to_text().as_bytes())?;
    }
    record.stage("censoring");

    for (k, (w, fold)) in weights.train_folds.iter().zip(&partition.train_folds).enumerate() {
        out.write(&format!("weights_train_fold{k}.csv"), &weights_bytes(w, fold)?)?;
    }
    out.write("weights_validation.csv", &weights_bytes(&weights.validation, &partition.validation)?)?;
    out.write("weights_test.csv", &weights_bytes(&weights.test, &partition.test)?)?;
    record.stage("weights");

    let encode = cfg.train.encode_group;
    let folds = weights
        .train_folds
        .iter()
        .zip(&partition.train_folds)
        .map(|(w, c)| Dataset::from_cohort(c, &w.raw, encode))
        .collect::<Result<Vec<_>, _>>()
        .map_err(runtime)?;
    let validation = Dataset::from_cohort(&partition.validation, &weights.validation.weights, encode).map_err(runtime)?;
    let test = Dataset::from_cohort(&partition.test, &weights.test.weights, encode).map_err(runtime)?;
    Ok(Prepared {
        folds,
        validation,
        test,
    })
}

/// Trains on every fold but `k`, early stopping on fold `k`.
fn train_fold(folds: &[Dataset], k: usize, cfg: &TrainConfig) -> Result<(FittedModel, Vec<LogRow>), CliError> {
    let others: Vec<&Dataset> = folds.iter().enumerate().filter(|(j, _)| *j != k).map(|(_, d)| d).collect();
    let train_set = if others.is_empty() {
        folds[k].clone()
    } else {
        Dataset::concat(&others).map_err(runtime)?
    };
    let dev = &folds[k];
    if cfg.objective == Objective::StratifiedErm {
        let (model, errors, log) = train_stratified(&train_set, dev, cfg, k);
        for (group, e) in &errors {
            log::warn!("fold {k}: group '{group}' has no model: {e}");
        }
        if model.models.iter().all(Option::is_none) {
            return Err(CliError::Runtime(format!("fold {k}: no group could be trained")));
        }
        return Ok((FittedModel::Stratified(model), log));
    }
    let outcome = train(&train_set, dev, cfg, k).map_err(|e| CliError::Runtime(format!("fold {k}: {e}")))?;
    Ok((FittedModel::Pooled(outcome.model), outcome.log))
}

fn log_bytes(rows: &[LogRow]) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    write_training_log(rows, &mut buf).map_err(io)?;
    Ok(buf)
}

pub fn cmd_train(cfg: &RunConfig) -> Result<(), CliError> {
    let validate = |cfg: &RunConfig| {
        cfg.validate_cohort_source()?;
        cfg.split.validate().map_err(|e| CliError::Config(e.to_string()))?;
        cfg.train.validate().map_err(|e| CliError::Config(e.to_string()))
    };
    execute("train", cfg, validate, |cfg, out, record| {
        let prep = prepare(cfg, out, record)?;
        let results = (0..prep.folds.len())
            .into_par_iter()
            .map(|k| train_fold(&prep.folds, k, &cfg.train))
            .collect::<Result<Vec<_>, _>>()?;
        let mut log = Vec::new();
        for (k, (model, rows)) in results.into_iter().enumerate() {
            out.write(&format!("model_fold{k}.txt"), model.to_text().as_bytes())?;
            log.extend(rows);
        }
        out.write("training_log.csv", &log_bytes(&log)?)?;
        record.stage("training");
        Ok(())
    })
}

fn fold_metrics(scores: &[f64], data: &Dataset) -> FoldMetrics {
    let pooled_log_loss = ipcw_log_loss(scores, &data.y, &data.weights).unwrap_or(f64::NAN);
    let mut group_auc = Vec::new();
    let mut group_log_loss = Vec::new();
    for g in 0..data.n_groups() {
        let idx = data.group_members(g);
        let s: Vec<f64> = idx.iter().map(|&i| scores[i]).collect();
        let y: Vec<bool> = idx.iter().map(|&i| data.y[i]).collect();
        let w: Vec<f64> = idx.iter().map(|&i| data.weights[i]).collect();
        group_auc.push(ipcw_auc(&s, &y, &w).unwrap_or(f64::NAN));
        group_log_loss.push(ipcw_log_loss(&s, &y, &w).unwrap_or(f64::NAN));
    }
    FoldMetrics {
        pooled_log_loss,
        group_auc,
        group_log_loss,
    }
}

fn fmt(v: f64) -> String {
    if v.is_finite() {
        v.to_string()
    } else {
        "NA".into()
    }
}

fn eval_settings(cfg: &RunConfig) -> EvalSettings {
    EvalSettings {
        thresholds: cfg.evaluate.thresholds.clone(),
        tau_star: cfg.evaluate.tau_star,
        risk_reduction: cfg.evaluate.risk_reduction,
        n_replicates: cfg.evaluate.n_replicates,
        seed: cfg.evaluate.seed,
    }
}

fn curve_kind(r: Option<f64>) -> CurveKind {
    match r {
        Some(r) => CurveKind::RiskReduction { r },
        None => CurveKind::FixedCost,
    }
}

fn mean_scores(scores: &[Vec<f64>]) -> Vec<f64> {
    let n = scores[0].len();
    (0..n).map(|i| scores.iter().map(|s| s[i]).sum::<f64>() / scores.len() as f64).collect()
}

fn decision_curve_bytes(scores: &[Vec<f64>], data: &EvalData, cfg: &RunConfig) -> Result<Vec<u8>, CliError> {
    let grid = cfg.dca.grid.clone().unwrap_or_else(default_grid);
    let curves = group_decision_curves(&mean_scores(scores), data, &grid, cfg.dca.tau_star, curve_kind(cfg.dca.risk_reduction))?;
    let mut buf = Vec::new();
    write_decision_curves(&curves, &mut buf).map_err(io)?;
    Ok(buf)
}

pub fn cmd_pipeline(cfg: &RunConfig) -> Result<(), CliError> {
    let validate = |cfg: &RunConfig| {
        cfg.validate_cohort_source()?;
        cfg.validate_training()?;
        cfg.validate_evaluation()?;
        cfg.validate_dca()
    };
    execute("pipeline", cfg, validate, |cfg, out, record| {
        let prep = prepare(cfg, out, record)?;
        let candidates = cfg.candidates();
        let n_folds = prep.folds.len();
        let jobs: Vec<(usize, usize)> = (0..candidates.len()).flat_map(|c| (0..n_folds).map(move |k| (c, k))).collect();
        let trained = jobs
            .par_iter()
            .map(|&(c, k)| train_fold(&prep.folds, k, &candidates[c].1))
            .collect::<Result<Vec<_>, _>>()?;
        let mut summary = String::from("candidate,key,fold,group,auc,log_loss\n");
        let mut scored = Vec::with_capacity(candidates.len());
        for (c, (key, tc)) in candidates.iter().enumerate() {
            let mut log = Vec::new();
            let mut folds = Vec::new();
            for k in 0..n_folds {
                let (model, rows) = &trained[c * n_folds + k];
                log.extend(rows.iter().cloned());
                let scores = model.predict(&prep.validation).map_err(runtime)?;
                let m = fold_metrics(&scores, &prep.validation);
                let _ = writeln!(summary, "{c},{key},{k},pooled,NA,{}", fmt(m.pooled_log_loss));
                for (g, label) in prep.validation.group_labels.iter().enumerate() {
                    let _ = writeln!(summary, "{c},{key},{k},{label},{},{}", fmt(m.group_auc[g]), fmt(m.group_log_loss[g]));
                }
                folds.push(m);
            }
            out.write(&format!("training_log_c{c}.csv"), &log_bytes(&log)?)?;
            scored.push(Candidate {
                key: key.clone(),
                lambda: tc.lambda,
                folds,
            });
        }
        out.write("validation_metrics.csv", summary.as_bytes())?;
        record.stage("training");

        let selection = select_model(&scored, cfg.selection()).map_err(runtime)?;
        let chosen = selection.index;
        let mut sel = String::from("candidate,key,score,selected\n");
        for (c, cand) in scored.iter().enumerate() {
            let _ = writeln!(sel, "{c},{},{},{}", cand.key, fmt(candidate_score(cand, cfg.selection())), c == chosen);
        }
        out.write("selection.csv", sel.as_bytes())?;
        let models: Vec<&FittedModel> = (0..n_folds).map(|k| &trained[chosen * n_folds + k].0).collect();
        for (k, m) in models.iter().enumerate() {
            out.write(&format!("model_fold{k}.txt"), m.to_text().as_bytes())?;
        }
        record.stage("selection");

        let test = &prep.test;
        let scores = models.iter().map(|m| m.predict(test)).collect::<Result<Vec<_>, _>>().map_err(runtime)?;
        let data = EvalData {
            y: &test.y,
            weights: &test.weights,
            groups: &test.groups,
            group_labels: &test.group_labels,
        };
        let report = evaluate_scores(&scores, None, &data, &eval_settings(cfg))?;
        out.write_with("metric_report.csv", |buf| report.write_csv(buf).map_err(io))?;
        record.stage("evaluation");

        out.write("decision_curves.csv", &decision_curve_bytes(&scores, &data, cfg)?)?;
        record.stage("decision_curves");
        Ok(())
    })
}

/// Cohort, weights and model scores for `evaluate` and `dca`.
fn scored_cohort(cfg: &RunConfig, models: &[std::path::PathBuf], weights: &std::path::Path) -> Result<(Dataset, Vec<Vec<f64>>), CliError> {
    let src = cfg.cohort.as_ref().ok_or_else(|| CliError::Config("a [cohort] section is required".into()))?;
    let cohort = load_cohort(&src.path, src.horizon).map_err(|e| CliError::Config(e.to_string()))?;
    let w = read_weights(weights, &cohort)?;
    let mut data = None;
    let mut scores = Vec::new();
    for path in models {
        let model = FittedModel::load(path)?;
        let d = dataset_for(&model, &cohort, &w)?;
        scores.push(model.predict(&d).map_err(runtime)?);
        data.get_or_insert(d);
    }
    let data = data.ok_or_else(|| CliError::Config("no model files given".into()))?;
    Ok((data, scores))
}

fn validate_scoring(cfg: &RunConfig, models: &[std::path::PathBuf], weights: Option<&std::path::Path>) -> Result<(), CliError> {
    let src = cfg.cohort.as_ref().ok_or_else(|| CliError::Config("a [cohort] section is required".into()))?;
    super::config::require_file(&src.path)?;
    if models.is_empty() {
        return Err(CliError::Config("no model files given".into()));
    }
    for m in models {
        super::config::require_file(m)?;
    }
    let w = weights.ok_or_else(|| CliError::Config("a weights file is required".into()))?;
    super::config::require_file(w)
}

pub fn cmd_evaluate(cfg: &RunConfig) -> Result<(), CliError> {
    let validate = |cfg: &RunConfig| {
        validate_scoring(cfg, &cfg.evaluate.models, cfg.evaluate.weights.as_deref())?;
        for m in &cfg.evaluate.baseline {
            super::config::require_file(m)?;
        }
        cfg.validate_evaluation()
    };
    execute("evaluate", cfg, validate, |cfg, out, record| {
        let e = &cfg.evaluate;
        let weights = e.weights.as_deref().expect("validated");
        let (data, scores) = scored_cohort(cfg, &e.models, weights)?;
        let baseline = if e.baseline.is_empty() {
            None
        } else {
            Some(scored_cohort(cfg, &e.baseline, weights)?.1)
        };
        record.stage("scoring");
        let eval = EvalData {
            y: &data.y,
            weights: &data.weights,
            groups: &data.groups,
            group_labels: &data.group_labels,
        };
        let report = evaluate_scores(&scores, baseline.as_deref(), &eval, &eval_settings(cfg))?;
        out.write_with("metric_report.csv", |buf| report.write_csv(buf).map_err(io))?;
        record.stage("evaluation");
        Ok(())
    })
}

pub fn cmd_dca(cfg: &RunConfig) -> Result<(), CliError> {
    let validate = |cfg: &RunConfig| {
        validate_scoring(cfg, &cfg.dca.models, cfg.dca.weights.as_deref())?;
        cfg.validate_dca()
    };
    execute("dca", cfg, validate, |cfg, out, record| {
        let weights = cfg.dca.weights.as_deref().expect("validated");
        let (data, scores) = scored_cohort(cfg, &cfg.dca.models, weights)?;
        record.stage("scoring");
        let eval = EvalData {
            y: &data.y,
            weights: &data.weights,
            groups: &data.groups,
            group_labels: &data.group_labels,
        };
        out.write("decision_curves.csv", &decision_curve_bytes(&scores, &eval, cfg)?)?;
        record.stage("decision_curves");
        Ok(())
    })
}
