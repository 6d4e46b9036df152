//! Whole-image training: dual learning rates, rotation augmentation and
//! early stopping with restore on validation-accuracy decrease.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::model::{load_stem_weights, StemContract, WholeImageModel};
use super::preprocess::{preprocess_image, PreprocessedImage};
use crate::data::{Frame, Label};
use crate::error::{Error, Result};
use crate::nn::{Adam, AdamConfig, Checkpoint};
use crate::outcome::predicts_carcinoma;
use crate::seed;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageTrainConfig {
    pub stem: StemContract,
    /// Optional pretrained stem in the checkpoint container.
    pub stem_weights: Option<PathBuf>,
    pub head_learning_rate: f64,
    /// Epochs always run before the first comparison.
    pub initial_epochs: usize,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub rotation_augmentation: bool,
    /// Validation patients; `None` picks by [`default_validation_count`].
    pub validation_patients: Option<usize>,
    pub seed: u64,
}

impl Default for ImageTrainConfig {
    fn default() -> Self {
        ImageTrainConfig {
            stem: StemContract::default(),
            stem_weights: None,
            head_learning_rate: 1e-4,
            initial_epochs: 2,
            max_epochs: 10,
            batch_size: 1,
            rotation_augmentation: true,
            validation_patients: None,
            seed: 0,
        }
    }
}

impl ImageTrainConfig {
    /// Rates for a stem trained from scratch: ten times the default head
    /// rate, and no stem reduction since there is no pretrained stem to preserve.
    pub fn desk() -> Self {
        let mut c = ImageTrainConfig {
            head_learning_rate: 1e-3,
            ..Default::default()
        };
        c.stem.lr_multiplier = 1.0;
        c
    }

    pub fn stem_learning_rate(&self) -> f64 {
        self.head_learning_rate * self.stem.lr_multiplier
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopLog {
    pub epochs: Vec<ImageEpoch>,
    /// Epoch whose weights were reinstated after a decrease.
    pub restored_epoch: Option<usize>,
    /// Epoch whose weights the final model carries.
    pub final_epoch: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageTrainLog {
    pub validation_patients: Vec<String>,
    pub head_learning_rate: f64,
    pub stem_learning_rate: f64,
    pub early_stop: EarlyStopLog,
}

/// Runs `initial` epochs, then continues while validation accuracy does not
/// decrease, up to `max` epochs. On a decrease the previous state is restored.
pub fn run_early_stopping<S: Clone>(
    state: &mut S,
    initial: usize,
    max: usize,
    mut train_epoch: impl FnMut(&mut S, usize) -> Result<f64>,
    mut validate: impl FnMut(&S) -> Result<f64>,
) -> Result<EarlyStopLog> {
    if initial == 0 || initial > max {
        return Err(Error::Config(format!("need 1 <= initial epochs ({initial}) <= max ({max})")));
    }
    let mut log = EarlyStopLog {
        epochs: Vec::new(),
        restored_epoch: None,
        final_epoch: 0,
    };
    let mut previous: Option<(S, f64)> = None;
    for epoch in 1..=max {
        let train_loss = train_epoch(state, epoch)?;
        let acc = validate(state)?;
        log.epochs.push(ImageEpoch {
            epoch,
            train_loss,
            validation_accuracy: acc,
        });
        log::debug!("image epoch {epoch}: loss {train_loss:.4}, validation accuracy {acc:.4}");
        if epoch > initial {
            if let Some((prev_state, prev_acc)) = &previous {
                if acc < *prev_acc {
                    *state = prev_state.clone();
                    log.restored_epoch = Some(epoch - 1);
                    log.final_epoch = epoch - 1;
                    return Ok(log);
                }
            }
        }
        log.final_epoch = epoch;
        if epoch >= initial && epoch < max {
            previous = Some((state.clone(), acc));
        }
    }
    Ok(log)
}

/// One validation patient for small training sets (fewer than six patients), two otherwise.
pub fn default_validation_count(train_patients: usize) -> usize {
    if train_patients < 6 {
        1
    } else {
        2
    }
}

fn classes(frames: &[&Frame]) -> BTreeSet<Label> {
    frames.iter().map(|f| f.label).collect()
}

/// Picks the `count` patients with most frames (ties by id) such that both
/// the validation and remaining training sets contain both classes.
pub fn select_validation_patients(frames: &[&Frame], count: usize) -> Result<Vec<String>> {
    let mut per_patient: BTreeMap<&str, Vec<&Frame>> = BTreeMap::new();
    for f in frames {
        per_patient.entry(&f.patient_id).or_default().push(f);
    }
    let mut ranked: Vec<(&str, usize)> = per_patient.iter().map(|(p, fs)| (*p, fs.len())).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    if count == 0 || count >= ranked.len() {
        return Err(Error::Config(format!(
            "cannot hold out {count} of {} patients for validation",
            ranked.len()
        )));
    }
    let both = |set: &BTreeSet<Label>| set.len() == 2;
    // greedy in rank order, skipping patients that would break class coverage
    let mut chosen: Vec<&str> = Vec::new();
    for (pid, _) in &ranked {
        if chosen.len() == count {
            break;
        }
        let mut trial = chosen.clone();
        trial.push(pid);
        let rest: Vec<&Frame> = frames.iter().copied().filter(|f| !trial.contains(&f.patient_id.as_str())).collect();
        if !both(&classes(&rest)) {
            continue;
        }
        let remaining_slots = count - trial.len();
        let val: Vec<&Frame> = frames.iter().copied().filter(|f| trial.contains(&f.patient_id.as_str())).collect();
        if remaining_slots == 0 && !both(&classes(&val)) {
            continue;
        }
        chosen = trial;
    }
    if chosen.len() != count {
        return Err(Error::Config("no validation split keeps both classes on both sides".into()));
    }
    let mut out: Vec<String> = chosen.into_iter().map(String::from).collect();
    out.sort();
    log::info!("validation patients: {}", out.join(", "));
    Ok(out)
}

/// Holds out validation patients per the default rule, then trains.
pub fn train_image(frames: &[&Frame], config: &ImageTrainConfig) -> Result<(WholeImageModel, ImageTrainLog)> {
    let patients: BTreeSet<&str> = frames.iter().map(|f| f.patient_id.as_str()).collect();
    let count = config
        .validation_patients
        .unwrap_or_else(|| default_validation_count(patients.len()));
    let val_ids = select_validation_patients(frames, count)?;
    let (val, train): (Vec<&Frame>, Vec<&Frame>) = frames.iter().partition(|f| val_ids.contains(&f.patient_id));
    train_image_with_validation(&train, &val, config)
}

pub fn train_image_with_validation(
    train: &[&Frame],
    val: &[&Frame],
    config: &ImageTrainConfig,
) -> Result<(WholeImageModel, ImageTrainLog)> {
    let train_patients: BTreeSet<&str> = train.iter().map(|f| f.patient_id.as_str()).collect();
    let val_patients: BTreeSet<&str> = val.iter().map(|f| f.patient_id.as_str()).collect();
    if let Some(p) = train_patients.intersection(&val_patients).next() {
        return Err(Error::Config(format!("validation patient {p} is also a training patient")));
    }
    if classes(train).len() != 2 || classes(val).len() != 2 {
        return Err(Error::Config("training and validation sets both need both classes".into()));
    }
    if config.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let mut init_rng = seed::rng(config.seed, &[seed::key("init")]);
    let mut model = WholeImageModel::<f32>::build(config.stem.clone(), &mut init_rng)?;
    if let Some(path) = &config.stem_weights {
        let ck = Checkpoint::load(path)?;
        model.set_stem_params(load_stem_weights(&config.stem, &ck)?)?;
    }
    let stem_tensors = config.stem.param_tensors();
    let stem_lr = if config.stem.trainable { config.stem_learning_rate() } else { 0.0 };
    let shapes: Vec<Vec<usize>> = model.params().iter().map(|p| p.shape().to_vec()).collect();
    let groups: Vec<(&[usize], f64)> = shapes
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_slice(), if i < stem_tensors { stem_lr } else { config.head_learning_rate }))
        .collect();
    let adam = Adam::<f32>::new(AdamConfig::default(), &groups);

    let input = config.stem.input_size;
    let val_images: Vec<(PreprocessedImage, Label)> = val
        .iter()
        .map(|f| Ok((preprocess_image(f, input, None)?, f.label)))
        .collect::<Result<_>>()?;
    let fixed_train: Option<Vec<PreprocessedImage>> = if config.rotation_augmentation {
        None
    } else {
        Some(train.iter().map(|f| preprocess_image(f, input, None)).collect::<Result<_>>()?)
    };

    let mut state = (model, adam);
    let early_stop = run_early_stopping(
        &mut state,
        config.initial_epochs,
        config.max_epochs,
        |(model, adam), epoch| {
            let mut rng = seed::rng(config.seed, &[seed::key("epoch"), epoch as u64]);
            let mut order: Vec<usize> = (0..train.len()).collect();
            order.shuffle(&mut rng);
            let mut total = 0.0;
            for batch in order.chunks(config.batch_size) {
                let mut acc: Option<Vec<Tensor<f32>>> = None;
                for &i in batch {
                    let rotated;
                    let image = match &fixed_train {
                        Some(images) => &images[i],
                        None => {
                            let angle = rng.gen_range(0.0..std::f64::consts::TAU);
                            rotated = preprocess_image(train[i], input, Some(angle))?;
                            &rotated
                        }
                    };
                    let mask = model.feature_mask(image.fov_radius)?;
                    let fwd = model.forward(&image.tensor, &mask)?;
                    let (loss, grads) = model.backward(&fwd, train[i].label.index())?;
                    total += loss;
                    match &mut acc {
                        None => acc = Some(grads),
                        Some(sum) => {
                            for (s, g) in sum.iter_mut().zip(&grads) {
                                s.add_assign(g)?;
                            }
                        }
                    }
                }
                let mut grads = acc.expect("non-empty batch");
                let scale = 1.0 / batch.len() as f32;
                grads.iter_mut().for_each(|g| g.scale(scale));
                adam.step(&mut model.params_mut(), &grads)?;
            }
            Ok(total / train.len() as f64)
        },
        |(model, _)| {
            let mut correct = 0usize;
            for (image, label) in &val_images {
                let p = model.classify(image)?.probabilities[1];
                if predicts_carcinoma(p, 0.5) == label.is_positive() {
                    correct += 1;
                }
            }
            Ok(correct as f64 / val_images.len() as f64)
        },
    )?;
    let log = ImageTrainLog {
        validation_patients: val_patients.into_iter().map(String::from).collect(),
        head_learning_rate: config.head_learning_rate,
        stem_learning_rate: stem_lr,
        early_stop,
    };
    Ok((state.0, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Domain, Site};

    fn run(accs: &[f64], initial: usize, max: usize) -> (i64, EarlyStopLog) {
        let mut state = 0i64;
        let log = run_early_stopping(
            &mut state,
            initial,
            max,
            |s, epoch| {
                *s = epoch as i64 * 100;
                Ok(0.0)
            },
            |s| Ok(accs[(*s / 100 - 1) as usize]),
        )
        .unwrap();
        (state, log)
    }

    #[test]
    fn increasing_accuracy_runs_to_the_cap() {
        let accs: Vec<f64> = (0..10).map(|i| 0.5 + i as f64 * 0.05).collect();
        let (state, log) = run(&accs, 2, 10);
        assert_eq!(state, 1000);
        assert_eq!(log.epochs.len(), 10);
        assert_eq!(log.restored_epoch, None);
    }

    #[test]
    fn decrease_at_epoch_three_restores_epoch_two() {
        let (state, log) = run(&[0.6, 0.7, 0.65, 0.9], 2, 10);
        assert_eq!(state, 200);
        assert_eq!(log.restored_epoch, Some(2));
        assert_eq!(log.final_epoch, 2);
        assert_eq!(log.epochs.len(), 3);
    }

    #[test]
    fn initial_epochs_are_never_compared() {
        let (state, log) = run(&[0.9, 0.1, 0.1, 0.2, 0.0], 2, 10);
        assert_eq!(log.restored_epoch, Some(4));
        assert_eq!(state, 400);
    }

    #[test]
    fn default_rates_are_head_1e4_stem_1e6() {
        let c = ImageTrainConfig::default();
        assert_eq!(c.head_learning_rate, 1e-4);
        assert_eq!(c.stem.lr_multiplier, 1e-2);
        assert!((c.stem_learning_rate() - 1e-6).abs() < 1e-18);
        assert_eq!((c.initial_epochs, c.max_epochs), (2, 10));
    }

    #[test]
    fn ties_do_not_stop() {
        let (_, log) = run(&[0.5; 10], 2, 10);
        assert_eq!(log.epochs.len(), 10);
    }

    fn frame(pid: &str, k: usize, label: Label) -> Frame {
        Frame {
            id: format!("{pid}/{k}"),
            width: 4,
            height: 4,
            raw: vec![0; 16],
            fov_radius: 2.0,
            patient_id: pid.into(),
            sequence_id: pid.into(),
            label,
            site: Site::Synthetic,
            domain: Domain::SyntheticA,
        }
    }

    #[test]
    fn validation_selection_prefers_large_patients_with_both_classes() {
        let mut frames = Vec::new();
        for (pid, n) in [("a", 2), ("b", 6), ("c", 4), ("d", 4)] {
            for k in 0..n {
                frames.push(frame(pid, k, if k % 2 == 0 { Label::Carcinoma } else { Label::ClinicallyNormal }));
            }
        }
        // "e" is the largest but normal-only, so it cannot be the only validation patient
        for k in 0..8 {
            frames.push(frame("e", k, Label::ClinicallyNormal));
        }
        let refs: Vec<&Frame> = frames.iter().collect();
        assert_eq!(select_validation_patients(&refs, 1).unwrap(), vec!["b"]);
        assert_eq!(select_validation_patients(&refs, 2).unwrap(), vec!["b", "e"]);
        assert!(select_validation_patients(&refs, 5).is_err());
        assert_eq!(default_validation_count(4), 1);
        assert_eq!(default_validation_count(11), 2);
    }

    #[test]
    fn overlapping_validation_is_a_configuration_error() {
        let a = frame("a", 0, Label::Carcinoma);
        let b = frame("a", 1, Label::ClinicallyNormal);
        let err = train_image_with_validation(&[&a, &b], &[&a, &b], &ImageTrainConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }
}
