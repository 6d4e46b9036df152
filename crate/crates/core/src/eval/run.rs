//! Fold-wise training and evaluation with leakage assertions and an
//! ordered merge into one result vector.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::plan::{ExperimentPlan, Fold};
use super::results::{ResultRecord, ResultVector};
use crate::data::Frame;
use crate::error::{Error, Result};
use crate::nn::Checkpoint;
use crate::outcome::{Method, DEFAULT_THRESHOLD};
use crate::patch::{predict_frame, train_ppf, PpfConfig, PpfTrainLog};
use crate::seed;
use crate::wholeimage::{preprocess_image, train_image, ImageTrainConfig, ImageTrainLog};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub method: Method,
    pub seed: u64,
    pub threshold: f64,
    pub ppf: PpfConfig,
    pub image: ImageTrainConfig,
    /// Train folds concurrently; results are merged in fold order either way.
    pub parallel_folds: bool,
}

impl ExperimentConfig {
    /// Settings used for the synthetic desk dataset.
    pub fn desk(method: Method, seed: u64) -> Self {
        ExperimentConfig {
            method,
            seed,
            threshold: DEFAULT_THRESHOLD,
            ppf: PpfConfig::default(),
            image: ImageTrainConfig::desk(),
            parallel_folds: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum FoldTraining {
    Ppf(PpfTrainLog),
    Image(ImageTrainLog),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub seed: u64,
    pub train_patients: Vec<String>,
    pub test_patients: Vec<String>,
    pub validation_patients: Vec<String>,
    pub train_frames: usize,
    pub test_frames: usize,
    pub training: FoldTraining,
}

impl FoldReport {
    pub fn image_log(&self) -> Option<&ImageTrainLog> {
        match &self.training {
            FoldTraining::Image(l) => Some(l),
            FoldTraining::Ppf(_) => None,
        }
    }
}

pub struct ExperimentOutcome {
    pub plan: ExperimentPlan,
    pub results: ResultVector,
    pub folds: Vec<FoldReport>,
    /// One trained model per fold, in fold order.
    pub checkpoints: Vec<Checkpoint>,
}

struct FoldOutput {
    report: FoldReport,
    checkpoint: Checkpoint,
    records: Vec<ResultRecord>,
}

pub fn fold_seed(base: u64, plan: &ExperimentPlan, method: Method, fold: usize) -> u64 {
    seed::derive(
        base,
        &[seed::key(plan.experiment.cli_name()), seed::key(method.as_str()), fold as u64],
    )
}

pub fn run_experiment(plan: &ExperimentPlan, frames: &[Frame], config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    plan.check_leakage()?;
    let known: BTreeSet<&str> = frames.iter().map(|f| f.patient_id.as_str()).collect();
    for fold in &plan.folds {
        if let Some(p) = fold.train.iter().chain(&fold.test).find(|p| !known.contains(p.as_str())) {
            return Err(Error::Config(format!("fold {}: patient {p} is not in the dataset", fold.id)));
        }
    }
    let run = |fold: &Fold| run_fold(plan, fold, frames, config);
    let outputs: Vec<Result<FoldOutput>> = if config.parallel_folds {
        plan.folds.par_iter().map(run).collect()
    } else {
        plan.folds.iter().map(run).collect()
    };
    let mut results = ResultVector::default();
    let mut folds = Vec::new();
    let mut checkpoints = Vec::new();
    for out in outputs {
        let out = out?;
        results.records.extend(out.records);
        folds.push(out.report);
        checkpoints.push(out.checkpoint);
    }
    let tested: Vec<&Frame> = frames
        .iter()
        .filter(|f| plan.folds.iter().any(|fold| fold.test.contains(&f.patient_id)))
        .collect();
    results.check_coverage(tested)?;
    Ok(ExperimentOutcome {
        plan: plan.clone(),
        results,
        folds,
        checkpoints,
    })
}

fn run_fold(plan: &ExperimentPlan, fold: &Fold, frames: &[Frame], config: &ExperimentConfig) -> Result<FoldOutput> {
    let failed = |reason: String| Error::FoldFailed { fold: fold.id, reason };
    let train: Vec<&Frame> = frames.iter().filter(|f| fold.train.contains(&f.patient_id)).collect();
    let test: Vec<&Frame> = frames.iter().filter(|f| fold.test.contains(&f.patient_id)).collect();
    let labels: BTreeSet<_> = train.iter().map(|f| f.label).collect();
    if labels.len() < 2 {
        return Err(failed("training data contains a single class".into()));
    }
    let seed = fold_seed(config.seed, plan, config.method, fold.id);
    log::info!(
        "{} {} fold {}: {} training frames, {} test frames",
        plan.experiment,
        config.method,
        fold.id,
        train.len(),
        test.len()
    );
    let (training, validation, checkpoint, scores) = match config.method {
        Method::Ppf => {
            let cfg = PpfConfig { seed, ..config.ppf.clone() };
            let (model, log) = train_ppf(&train, &cfg).map_err(|e| failed(e.to_string()))?;
            let scores = test
                .iter()
                .map(|f| {
                    let (_, verdict) = predict_frame(&model, f, cfg.stride)?;
                    verdict
                        .probability()
                        .ok_or_else(|| failed(format!("frame {} has no patch inside the field of view", f.id)))
                })
                .collect::<Result<Vec<f64>>>()?;
            let ck = model.to_checkpoint(seed, log.adam_steps);
            (FoldTraining::Ppf(log), Vec::new(), ck, scores)
        }
        Method::Image => {
            let cfg = ImageTrainConfig {
                seed,
                ..config.image.clone()
            };
            let (model, log) = train_image(&train, &cfg).map_err(|e| failed(e.to_string()))?;
            // validation is carved out of the training patients only
            if let Some(p) = log.validation_patients.iter().find(|p| !fold.train.contains(p) || fold.test.contains(p)) {
                return Err(failed(format!("validation patient {p} leaks outside the training set")));
            }
            if log.early_stop.epochs.len() > cfg.max_epochs {
                return Err(failed(format!("ran {} epochs", log.early_stop.epochs.len())));
            }
            let scores = test
                .iter()
                .map(|f| {
                    let image = preprocess_image(f, cfg.stem.input_size, None)?;
                    Ok(model.classify(&image)?.probabilities[1])
                })
                .collect::<Result<Vec<f64>>>()?;
            let ck = model.to_checkpoint(seed, log.early_stop.final_epoch as u64)?;
            let val = log.validation_patients.clone();
            (FoldTraining::Image(log), val, ck, scores)
        }
    };
    let records = test
        .iter()
        .zip(scores)
        .map(|(f, p)| ResultRecord {
            frame_id: f.id.clone(),
            patient_id: f.patient_id.clone(),
            true_label: f.label,
            p_carcinoma: p,
            fold: fold.id,
        })
        .collect();
    Ok(FoldOutput {
        report: FoldReport {
            fold: fold.id,
            seed,
            train_patients: fold.train.clone(),
            test_patients: fold.test.clone(),
            validation_patients: validation,
            train_frames: train.len(),
            test_frames: test.len(),
            training,
        },
        checkpoint,
        records,
    })
}
