use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clefov_core::data::{
    frame_to_8bit, generate_synthetic, heatmap, load_manifest, overlay, save_png, DatasetManifest, Frame,
    ManifestRecord, SynthSpec,
};
use clefov_core::eval::{
    compute_metrics, make_plan, roc_curve, run_experiment, ExperimentConfig, ExperimentId, OutputLock, RunDir,
};
use clefov_core::fov::{circular_extrapolate, median_histogram, median_raw_value, LogBins};
use clefov_core::nn::Checkpoint;
use clefov_core::patch::{predict_frame, train_ppf, PatchModel, PATCH_MODEL};
use clefov_core::wholeimage::{preprocess_image, train_image, WholeImageModel, IMAGE_MODEL};
use clefov_core::{Error, Method, Result};
use serde_json::{json, Value};

use crate::ModelArgs;

const VERSION: &str = concat!("clefov ", env!("CARGO_PKG_VERSION"));

fn load_dataset(path: &Path) -> Result<(DatasetManifest, Vec<Frame>)> {
    let manifest = load_manifest(path)?;
    let frames = manifest.load_frames()?;
    Ok((manifest, frames))
}

/// Effective configuration after applying command-line overrides.
fn experiment_config(model: &ModelArgs, threshold: f64) -> Result<ExperimentConfig> {
    let mut config = ExperimentConfig::desk(model.method, model.seed);
    config.threshold = threshold;
    if let Some(p) = model.patch_size {
        config.ppf.topology.patch_size = p;
    }
    if let Some(s) = model.stride {
        if s == 0 {
            return Err(Error::Usage("--stride must be positive".into()));
        }
        config.ppf.stride = s;
    }
    if let Some(e) = model.epochs {
        config.ppf.epochs = e;
    }
    if let Some(lr) = model.head_lr {
        config.image.head_learning_rate = lr;
    }
    if let Some(m) = model.stem_lr_multiplier {
        config.image.stem.lr_multiplier = m;
    }
    config.image.stem_weights = model.stem_weights.clone();
    config.ppf.topology.layers()?;
    Ok(config)
}

fn provenance(run: &RunDir, command: &str, seed: u64) -> Result<()> {
    run.write_json(
        "run.json",
        &json!({
            "version": VERSION,
            "command": command,
            "seed": seed,
            "args": std::env::args().skip(1).collect::<Vec<_>>(),
        }),
    )?;
    run.write("version.txt", format!("{VERSION}\n").as_bytes())?;
    Ok(())
}

fn save_checkpoint(run: &RunDir, stem: &str, ck: &Checkpoint) -> Result<()> {
    run.write(&format!("{stem}.ckpt"), &ck.to_bytes()?)?;
    run.write(&format!("{stem}.manifest.json"), format!("{}\n", ck.manifest_json()?).as_bytes())?;
    Ok(())
}

pub fn gen(out: PathBuf, seed: u64, patients: Option<usize>, frames: Option<usize>) -> Result<Value> {
    let _lock = OutputLock::acquire(&out)?;
    if out.join("manifest.tsv").exists() {
        return Err(Error::Config(format!("{} already holds a dataset", out.display())));
    }
    let mut spec = SynthSpec {
        seed,
        ..SynthSpec::default()
    };
    for d in &mut spec.domains {
        if let Some(p) = patients {
            d.patients = p;
            d.normal_only_patient = d.normal_only_patient.filter(|&k| k < p);
        }
        if let Some(f) = frames {
            d.frames_per_patient = f;
        }
    }
    let manifest = generate_synthetic(&spec, &out)?;
    std::fs::write(out.join("synth_spec.json"), serde_json::to_string_pretty(&spec)?)
        .map_err(|e| Error::io(&out, e))?;
    Ok(json!({
        "manifest": out.join("manifest.tsv"),
        "frames": manifest.records.len(),
        "seed": seed,
    }))
}

pub fn stats(dataset: PathBuf, by_site: bool, bins: usize, out: Option<PathBuf>) -> Result<Value> {
    let (manifest, frames) = load_dataset(&dataset)?;
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for ((domain, label, patient), n) in manifest.counts() {
        *counts.entry(format!("{domain}/{label}")).or_default() += n;
        *counts.entry(format!("{domain}/{patient}")).or_default() += n;
    }
    let mut summary = json!({ "frames": frames.len(), "counts": counts });
    if by_site {
        let edges = LogBins::log_spaced(10.0, 65536.0, bins)?;
        let hists = median_histogram(&frames, &edges)?;
        summary["bin_edges"] = json!(edges.edges);
        summary["sites"] = serde_json::to_value(
            hists
                .iter()
                .map(|h| {
                    json!({
                        "site": h.site.to_string(),
                        "frames": h.frames,
                        "mass": h.total_mass(),
                        "underflow": h.underflow,
                        "bins": h.bins,
                        "overflow": h.overflow,
                    })
                })
                .collect::<Vec<_>>(),
        )?;
    } else {
        let mut medians: Vec<f64> = frames.iter().map(median_raw_value).collect::<Result<_>>()?;
        medians.sort_by(f64::total_cmp);
        summary["median_of_medians"] = json!(clefov_core::fov::median(&mut medians));
    }
    if let Some(dir) = out {
        let _lock = OutputLock::acquire(&dir)?;
        let path = dir.join("stats.json");
        std::fs::write(&path, serde_json::to_string_pretty(&summary)?).map_err(|e| Error::io(&path, e))?;
    }
    Ok(summary)
}

pub fn preprocess(dataset: PathBuf, out: PathBuf) -> Result<Value> {
    let (manifest, frames) = load_dataset(&dataset)?;
    if out.canonicalize().ok().is_some_and(|o| manifest.root.canonicalize().ok() == Some(o)) {
        return Err(Error::Usage("--out must differ from the dataset directory".into()));
    }
    let _lock = OutputLock::acquire(&out)?;
    let mut records = Vec::with_capacity(frames.len());
    for (frame, record) in frames.iter().zip(&manifest.records) {
        let filled = circular_extrapolate(frame, frame.fov_radius, None)?;
        let path = out.join(&record.path);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let bytes = clefov_core::data::encode_pgm(filled.width, filled.height, &filled.raw)?;
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        records.push(ManifestRecord { ..record.clone() });
    }
    let written = DatasetManifest { root: out.clone(), records };
    written.save(&out.join("manifest.tsv"))?;
    Ok(json!({ "frames": frames.len(), "manifest": out.join("manifest.tsv") }))
}

pub fn train(dataset: PathBuf, model: ModelArgs, out: PathBuf) -> Result<Value> {
    let config = experiment_config(&model, 0.5)?;
    let (_, frames) = load_dataset(&dataset)?;
    let refs: Vec<&Frame> = frames.iter().collect();
    let run = RunDir::create(&out, "train", model.method.as_str(), model.seed)?;
    provenance(&run, "train", model.seed)?;
    run.write_json("config.json", &json!({ "dataset": dataset, "config": config }))?;
    let mut summary = json!({ "run_dir": run.path(), "method": model.method, "frames": frames.len() });
    match model.method {
        Method::Ppf => {
            let cfg = clefov_core::patch::PpfConfig {
                seed: model.seed,
                ..config.ppf.clone()
            };
            let (net, log) = train_ppf(&refs, &cfg)?;
            save_checkpoint(&run, "model", &net.to_checkpoint(model.seed, log.adam_steps))?;
            summary["final_loss"] = json!(log.epochs.last().map(|e| e.mean_loss));
            run.write_json("training.json", &log)?;
        }
        Method::Image => {
            let cfg = clefov_core::wholeimage::ImageTrainConfig {
                seed: model.seed,
                ..config.image.clone()
            };
            let (net, log) = train_image(&refs, &cfg)?;
            save_checkpoint(&run, "model", &net.to_checkpoint(model.seed, log.early_stop.final_epoch as u64)?)?;
            summary["epochs"] = json!(log.early_stop.epochs.len());
            summary["restored_epoch"] = json!(log.early_stop.restored_epoch);
            run.write_json("training.json", &log)?;
        }
    }
    Ok(summary)
}

pub fn eval(
    dataset: PathBuf,
    experiment: ExperimentId,
    model: ModelArgs,
    threshold: f64,
    out: PathBuf,
    sequential: bool,
) -> Result<Value> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::Usage(format!("--threshold {threshold} is outside [0, 1]")));
    }
    let mut config = experiment_config(&model, threshold)?;
    config.parallel_folds = !sequential;
    let (_, frames) = load_dataset(&dataset)?;
    let plan = make_plan(experiment, &frames)?;
    let run = RunDir::create(&out, experiment.cli_name(), model.method.as_str(), model.seed)?;
    provenance(&run, "eval", model.seed)?;
    run.write_json(
        "config.json",
        &json!({ "dataset": dataset, "experiment": experiment, "config": config }),
    )?;
    run.write_json("plan.json", &plan)?;
    let outcome = run_experiment(&plan, &frames, &config)?;
    let metrics = compute_metrics(&outcome.results, threshold)?;
    run.write("results.tsv", outcome.results.to_tsv().as_bytes())?;
    run.write_json("folds.json", &outcome.folds)?;
    run.write_json("metrics.json", &metrics)?;
    let scores: Vec<f64> = outcome.results.records.iter().map(|r| r.p_carcinoma).collect();
    let positives: Vec<bool> = outcome.results.records.iter().map(|r| r.true_label.is_positive()).collect();
    let mut roc = String::from("threshold\tfpr\ttpr\n");
    for p in roc_curve(&scores, &positives)? {
        roc.push_str(&format!("{}\t{}\t{}\n", p.threshold, p.fpr, p.tpr));
    }
    run.write("roc.tsv", roc.as_bytes())?;
    for (fold, ck) in outcome.folds.iter().zip(&outcome.checkpoints) {
        save_checkpoint(&run, &format!("checkpoints/fold-{:02}", fold.fold), ck)?;
    }
    let restored = outcome
        .folds
        .iter()
        .filter(|f| f.image_log().is_some_and(|l| l.early_stop.restored_epoch.is_some()))
        .count();
    Ok(json!({
        "run_dir": run.path(),
        "experiment": experiment.label(),
        "method": model.method,
        "seed": model.seed,
        "folds": outcome.folds.len(),
        "frames": metrics.frames,
        "accuracy": metrics.accuracy,
        "precision": metrics.precision,
        "recall": metrics.recall,
        "roc_auc": metrics.roc_auc,
        "restored_folds": restored,
    }))
}

pub fn cam(checkpoint: PathBuf, dataset: PathBuf, frame_id: String, out: PathBuf, alpha: f64) -> Result<Value> {
    let ck = Checkpoint::load(&checkpoint)?;
    let (_, frames) = load_dataset(&dataset)?;
    let frame = frames
        .iter()
        .find(|f| f.id == frame_id)
        .ok_or_else(|| Error::Usage(format!("frame {frame_id:?} is not in the dataset")))?;
    let _lock = OutputLock::acquire(&out)?;
    let write = |name: &str, text: String| -> Result<()> {
        let path = out.join(name);
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    };
    let base = frame_to_8bit(frame)?;
    match ck.manifest.model.as_str() {
        IMAGE_MODEL => {
            let model = WholeImageModel::from_checkpoint(&ck)?;
            let image = preprocess_image(frame, model.stem.input_size, None)?;
            let eval = model.classify(&image)?;
            let cam = &eval.cam;
            let s = cam.size;
            let carcinoma = cam.class_plane(1);
            let grid: String = (0..s)
                .map(|y| {
                    let row: Vec<String> = (0..s).map(|x| format!("{:.6}", carcinoma[y * s + x])).collect();
                    row.join("\t") + "\n"
                })
                .collect();
            write("cam_grid.tsv", grid)?;
            write("cam_values.tsv", cam.to_tsv())?;
            let heat = heatmap(carcinoma, s, s, frame.width, frame.height);
            save_png(&heat, &out.join("cam_heatmap.png"))?;
            save_png(&overlay(&base, &heat, alpha), &out.join("cam_overlay.png"))?;
            let mask = model.feature_mask(image.fov_radius)?;
            let masked_mean: Vec<f64> = (0..cam.classes)
                .map(|k| {
                    let inside: Vec<f64> = cam
                        .score_plane(k)
                        .iter()
                        .zip(mask.grid())
                        .filter(|(_, &m)| m)
                        .map(|(&v, _)| v)
                        .collect();
                    inside.iter().sum::<f64>() / inside.len() as f64
                })
                .collect();
            Ok(json!({
                "frame": frame.id,
                "model": IMAGE_MODEL,
                "p_carcinoma": eval.probabilities[1],
                "logits": eval.logits,
                "cam_masked_mean_scores": masked_mean,
                "cam_size": s,
                "flat_corners": eval.flat_corners,
            }))
        }
        PATCH_MODEL => {
            let model = PatchModel::from_checkpoint(&ck)?;
            let stride = (model.topology.patch_size / 2).max(1);
            let (map, verdict) = predict_frame(&model, frame, stride)?;
            write("patch_map.tsv", map.to_tsv())?;
            save_png(&map.overlay(frame, alpha)?, &out.join("patch_overlay.png"))?;
            Ok(json!({
                "frame": frame.id,
                "model": PATCH_MODEL,
                "p_carcinoma": verdict.probability(),
                "patches": map.entries.len(),
            }))
        }
        other => Err(Error::Decode(format!("unsupported checkpoint model {other:?}"))),
    }
}
