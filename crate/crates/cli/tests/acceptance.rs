//! End-to-end acceptance checks. Prints one line per criterion and exits
//! nonzero if any criterion fails.

use std::collections::BTreeSet;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use clefov_core::data::{render_dataset, Domain, Frame, Label, Site, SynthSpec};
use clefov_core::eval::{compute_metrics, make_plan, rank_auc, run_experiment, ExperimentConfig, ExperimentId, MetricsReport};
use clefov_core::fov::{circular_extrapolate, inside, median_histogram, FovMask, LogBins};
use clefov_core::nn::{gradient_check, Checkpoint, GradCheckReport, Sequential};
use clefov_core::patch::PatchNetTopology;
use clefov_core::wholeimage::{
    global_average_pool, masked_gap, masked_gap_backward, ImageObjective, StemContract, WholeImageModel, CLASSES,
};
use clefov_core::{Method, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CAM_REL_TOL: f64 = 1e-5;
const GRAD_REL_TOL: f64 = 1e-3;
const GRAD_SEEDS: u64 = 20;
const RAMP_TOL: f64 = 1.0;
const RAMP_FRACTION: f64 = 0.99;
const AUC_TOL: f64 = 1e-12;
const LOPO_ACCURACY: f64 = 0.95;
const MAX_EPOCHS: usize = 10;
const MASS_TOL: f64 = 1e-9;
const EXPERIMENT_SEED: u64 = 7;

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn within(elapsed: Duration, limit: Duration) -> bool {
    elapsed <= limit
}

fn masked_gap_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    let mut bitwise = true;
    for _ in 0..200 {
        let c = rng.gen_range(1..6);
        let s = rng.gen_range(1..20);
        let u = Tensor::<f32>::from_fn(&[c, s, s], |_| rng.gen_range(-10.0..10.0));
        let gap = global_average_pool(&u).unwrap();
        let ones = masked_gap(&u, &FovMask::all_ones(s, s)).unwrap();
        bitwise &= gap
            .data()
            .iter()
            .zip(ones.data())
            .all(|(a, b)| a.to_bits() == b.to_bits());

        let mut grid: Vec<bool> = (0..s * s).map(|_| rng.gen_bool(0.6)).collect();
        grid[rng.gen_range(0..s * s)] = true;
        let mask = FovMask::from_grid(s, s, grid.clone()).unwrap();
        let pooled = masked_gap(&u, &mask).unwrap();
        for ch in 0..c {
            let plane = &u.data()[ch * s * s..(ch + 1) * s * s];
            let (mut sum, mut n) = (0.0f64, 0usize);
            for (v, &m) in plane.iter().zip(&grid) {
                if m {
                    sum += *v as f64;
                    n += 1;
                }
            }
            worst = worst.max((pooled.data()[ch] as f64 - sum / n as f64).abs());
        }
    }
    check(
        bitwise && worst <= 1e-6,
        format!("200 maps, all-ones bitwise={bitwise}, random-mask max |err|={worst:.2e} (tol 1e-6)"),
    )
}

fn random_checkpoint(seed: u64) -> Checkpoint {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = WholeImageModel::<f32>::build(StemContract::default(), &mut rng).unwrap();
    for p in model.params_mut() {
        if p.shape().len() == 1 {
            p.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-0.5..0.5));
        }
    }
    model.to_checkpoint(seed, 0).unwrap()
}

fn cam_consistency() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..100u64 {
        let bytes = random_checkpoint(seed).to_bytes().unwrap();
        let model = WholeImageModel::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let size = model.stem.input_size;
        let x = Tensor::<f32>::from_fn(&[1, size, size], |_| rng.gen_range(-2.0..2.0));
        let r = rng.gen_range(0.3..0.5) * size as f64;
        let eval = model.evaluate(&x, r).unwrap();
        let mask = model.feature_mask(r).unwrap();
        for k in 0..CLASSES {
            let inside: Vec<f64> = eval
                .cam
                .score_plane(k)
                .iter()
                .zip(mask.grid())
                .filter(|(_, &m)| m)
                .map(|(&v, _)| v)
                .collect();
            let avg = inside.iter().sum::<f64>() / inside.len() as f64;
            let rel = (avg - eval.logits[k]).abs() / avg.abs().max(eval.logits[k].abs()).max(1e-12);
            worst = worst.max(rel);
        }
    }
    check(
        worst <= CAM_REL_TOL,
        format!("100 checkpoints at 272->17x17x64, max relative error {worst:.2e} (tol {CAM_REL_TOL:e})"),
    )
}

fn summarize(reports: &[GradCheckReport]) -> (f64, usize, usize) {
    let worst = reports.iter().map(|r| r.max_rel_error()).fold(0.0, f64::max);
    let checked = reports.iter().flat_map(|r| &r.tensors).map(|t| t.checked).sum();
    let skipped = reports.iter().flat_map(|r| &r.tensors).map(|t| t.skipped_kinks).sum();
    (worst, checked, skipped)
}

fn gradient_correctness() -> Outcome {
    let topology = PatchNetTopology {
        patch_size: 16,
        conv1: 3,
        conv2: 4,
        hidden: 8,
        kernel: 3,
    };
    let mut patch_reports = Vec::new();
    let mut image_reports = Vec::new();
    let mut outside_exact = true;
    for seed in 0..GRAD_SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net: Sequential<f64> = topology.build(&mut rng).unwrap();
        let x = Tensor::from_fn(&topology.input_shape(), |_| rng.gen_range(-1.0..1.0));
        patch_reports.push(gradient_check(&mut net, &x, (seed % 2) as usize, 1e-5, GRAD_REL_TOL).unwrap());

        let stem = StemContract::desk(24, &[3, 4]).unwrap();
        let model = WholeImageModel::<f64>::build(stem, &mut rng).unwrap();
        let r = rng.gen_range(7.0..12.0);
        let mask = model.feature_mask(r).unwrap();
        let x = Tensor::from_fn(&[1, 24, 24], |_| rng.gen_range(-1.0..1.0));
        let mut objective = ImageObjective { model, mask };
        image_reports.push(gradient_check(&mut objective, &x, (seed % 2) as usize, 1e-5, GRAD_REL_TOL).unwrap());

        let s = objective.model.feature_size();
        let c = 4;
        let g = Tensor::<f64>::from_fn(&[c], |_| rng.gen_range(-3.0..3.0));
        let back = masked_gap_backward(&g, &objective.mask, c).unwrap();
        for ch in 0..c {
            for (v, &m) in back.data()[ch * s * s..(ch + 1) * s * s].iter().zip(objective.mask.grid()) {
                outside_exact &= m || v.to_bits() == 0.0f64.to_bits();
            }
        }
    }
    let (pw, pc, ps) = summarize(&patch_reports);
    let (iw, ic, is) = summarize(&image_reports);
    check(
        pw <= GRAD_REL_TOL && iw <= GRAD_REL_TOL && outside_exact && pc > 0 && ic > 0,
        format!(
            "{GRAD_SEEDS} seeds; patch net max rel {pw:.2e} ({pc} checked, {ps} kinks skipped); \
             image head max rel {iw:.2e} ({ic} checked, {is} kinks skipped); zero outside mask: {outside_exact}"
        ),
    )
}

fn ramp_frame(width: usize, r: f64, slope: f64, base: f64) -> Frame {
    let c = width as f64 / 2.0;
    let raw = (0..width * width)
        .map(|i| {
            let (x, y) = ((i % width) as f64, (i / width) as f64);
            if inside(x, y, width, width, r) {
                (base + slope * (x - c).hypot(y - c)).round() as u16
            } else {
                0
            }
        })
        .collect();
    Frame {
        id: "ramp".into(),
        width,
        height: width,
        raw,
        fov_radius: r,
        patient_id: "p".into(),
        sequence_id: "s".into(),
        label: Label::ClinicallyNormal,
        site: Site::Synthetic,
        domain: Domain::SyntheticA,
    }
}

/// Fraction of exterior pixels within the tolerance of `base + slope * (2r - rho)`,
/// and whether every interior pixel came through unchanged.
fn ramp_fidelity(width: usize, r: f64, slope: f64) -> (f64, bool) {
    let frame = ramp_frame(width, r, slope, 0.0);
    let out = circular_extrapolate(&frame, r, None).unwrap();
    let c = width as f64 / 2.0;
    let (mut exterior, mut good, mut interior_exact) = (0usize, 0usize, true);
    for i in 0..width * width {
        let (x, y) = ((i % width) as f64, (i / width) as f64);
        if inside(x, y, width, width, r) {
            interior_exact &= out.raw[i] == frame.raw[i];
            continue;
        }
        let expected = slope * (2.0 * r - (x - c).hypot(y - c));
        exterior += 1;
        if (out.raw[i] as f64 - expected).abs() <= RAMP_TOL {
            good += 1;
        }
    }
    (good as f64 / exterior as f64, interior_exact)
}

fn preprocessing_fidelity() -> Outcome {
    let mut pass = true;
    let mut lines = Vec::new();
    // f(rho) = rho on several geometries decides the criterion
    for (width, r) in [(576, 270.0), (272, 128.0), (240, 100.0), (101, 37.5)] {
        let (fraction, exact) = ramp_fidelity(width, r, 1.0);
        pass &= exact && fraction >= RAMP_FRACTION;
        lines.push(format!("{width}/r{r}: {:.2}% interior exact={exact}", 100.0 * fraction));
    }
    // Steeper ramps only show how wide the seam at the mirror axis is.
    let steep: Vec<String> = [(576, 270.0, 100.0), (272, 128.0, 20.0)]
        .into_iter()
        .map(|(w, r, slope)| format!("{w}/r{r} slope {slope}: {:.2}%", 100.0 * ramp_fidelity(w, r, slope).0))
        .collect();
    check(
        pass,
        format!(
            "f(rho)=rho within ±{RAMP_TOL} gray (need {:.0}%): {}; info: {}",
            100.0 * RAMP_FRACTION,
            lines.join(", "),
            steep.join(", ")
        ),
    )
}

fn pairwise_auc(scores: &[f64], positives: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &p) in scores.iter().enumerate() {
        if !positives[i] {
            continue;
        }
        for (j, &n) in scores.iter().enumerate() {
            if positives[j] {
                continue;
            }
            pairs += 1.0;
            if p > n {
                wins += 1.0;
            } else if p == n {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

fn auc_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let mut worst = 0.0f64;
    let mut tied_sets = 0;
    for set in 0..50 {
        let n = rng.gen_range(2..=200);
        // every other set draws from a handful of levels so ties are common
        let levels = if set % 2 == 0 { rng.gen_range(2..6) } else { 0 };
        let scores: Vec<f64> = (0..n)
            .map(|_| if levels > 0 { rng.gen_range(0..levels) as f64 / levels as f64 } else { rng.gen() })
            .collect();
        let mut positives: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
        positives[0] = true;
        positives[1] = false;
        let distinct: BTreeSet<u64> = scores.iter().map(|s| s.to_bits()).collect();
        if distinct.len() < n {
            tied_sets += 1;
        }
        let auc = rank_auc(&scores, &positives).unwrap();
        worst = worst.max((auc - pairwise_auc(&scores, &positives)).abs());
    }
    check(
        worst <= AUC_TOL,
        format!("50 sets ({tied_sets} with ties), max |rank - pairwise| = {worst:.2e} (tol {AUC_TOL:e})"),
    )
}

struct MatrixRun {
    experiment: ExperimentId,
    method: Method,
    metrics: MetricsReport,
    covered: bool,
    leakage_free: bool,
    max_epochs: usize,
    restored: usize,
}

fn run_matrix(frames: &[Frame]) -> Vec<MatrixRun> {
    let mut runs = Vec::new();
    for method in [Method::Ppf, Method::Image] {
        for experiment in ExperimentId::ALL {
            let t = Instant::now();
            let plan = make_plan(experiment, frames).unwrap();
            let config = ExperimentConfig::desk(method, EXPERIMENT_SEED);
            let outcome = run_experiment(&plan, frames, &config).unwrap();
            let tested: Vec<&str> = frames
                .iter()
                .filter(|f| plan.folds.iter().any(|fold| fold.test.contains(&f.patient_id)))
                .map(|f| f.id.as_str())
                .collect();
            let mut seen: Vec<&str> = outcome.results.records.iter().map(|r| r.frame_id.as_str()).collect();
            seen.sort_unstable();
            let mut expected = tested.clone();
            expected.sort_unstable();
            let covered = seen == expected;
            let leakage_free = outcome.folds.iter().all(|f| {
                let train: BTreeSet<&String> = f.train_patients.iter().collect();
                f.test_patients.iter().all(|p| !train.contains(p))
                    && f.validation_patients.iter().all(|p| train.contains(p))
            });
            let logs: Vec<_> = outcome.folds.iter().filter_map(|f| f.image_log()).collect();
            let max_epochs = logs.iter().map(|l| l.early_stop.epochs.len()).max().unwrap_or(0);
            let restored = logs.iter().filter(|l| l.early_stop.restored_epoch.is_some()).count();
            let metrics = compute_metrics(&outcome.results, config.threshold).unwrap();
            eprintln!(
                "  {method} {}: {} folds, acc {:.3}, precision {:?}, {:.0?}",
                experiment.label(),
                outcome.folds.len(),
                metrics.accuracy,
                metrics.precision,
                t.elapsed()
            );
            runs.push(MatrixRun {
                experiment,
                method,
                metrics,
                covered,
                leakage_free,
                max_epochs,
                restored,
            });
        }
    }
    runs
}

fn harness_integrity(runs: &[MatrixRun], elapsed: Duration) -> Outcome {
    let covered = runs.iter().all(|r| r.covered);
    let leakage_free = runs.iter().all(|r| r.leakage_free);
    let max_epochs = runs.iter().map(|r| r.max_epochs).max().unwrap_or(0);
    let restored: usize = runs.iter().map(|r| r.restored).sum();
    let limit = Duration::from_secs(15 * 60);
    check(
        runs.len() == 10 && covered && leakage_free && max_epochs <= MAX_EPOCHS && restored >= 1 && within(elapsed, limit),
        format!(
            "{} runs, coverage exact={covered}, no leakage={leakage_free}, max epochs {max_epochs} (cap {MAX_EPOCHS}), \
             restore fired in {restored} folds, {:.0?} (limit 15 min)",
            runs.len(),
            elapsed
        ),
    )
}

fn learnability(runs: &[MatrixRun], elapsed: Duration) -> Outcome {
    let find = |method, experiment| {
        runs.iter()
            .find(|r| r.method == method && r.experiment == experiment)
            .map(|r| &r.metrics)
            .unwrap()
    };
    let mut pass = within(elapsed, Duration::from_secs(15 * 60));
    let mut parts = Vec::new();
    for method in [Method::Ppf, Method::Image] {
        let oc = find(method, ExperimentId::Oc);
        let vc = find(method, ExperimentId::Vc);
        let into_a = find(method, ExperimentId::Vc2oc);
        let into_b = find(method, ExperimentId::Oc2vc);
        let lopo_ok = oc.accuracy >= LOPO_ACCURACY && vc.accuracy >= LOPO_ACCURACY;
        let prec = |m: &MetricsReport| m.precision.unwrap_or(0.0);
        // the model trained without A's faint-site texture loses precision on A
        let asymmetry = prec(into_a) < prec(oc) && prec(into_a) < prec(into_b);
        pass &= lopo_ok && asymmetry;
        parts.push(format!(
            "{method}: LOPO acc A {:.3} B {:.3}; precision A {:.3}, B->A {:.3}, A->B {:.3}",
            oc.accuracy,
            vc.accuracy,
            prec(oc),
            prec(into_a),
            prec(into_b)
        ));
    }
    check(pass, format!("{} (need acc >= {LOPO_ACCURACY}, B->A precision lowest)", parts.join("; ")))
}

fn clefov(args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_clefov")).args(args).output().unwrap();
    assert!(out.status.success(), "clefov {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn manifests(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if path.to_string_lossy().ends_with(".manifest.json") {
                out.push((path.strip_prefix(dir).unwrap().display().to_string(), read(&path)));
            }
        }
    }
    out.sort();
    out
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    clefov(&["gen", "--out", data.to_str().unwrap(), "--patients", "3", "--frames-per-patient", "4"]);
    let manifest = data.join("manifest.tsv");
    let manifest = manifest.to_str().unwrap();
    let mut compared = 0;
    let mut identical = true;
    let commands: [&[&str]; 4] = [
        &["eval", "--experiment", "OC+VC", "--method", "image", "--seed", "7"],
        &["eval", "--experiment", "oc", "--method", "ppf", "--seed", "7", "--epochs", "4"],
        &["train", "--method", "image", "--seed", "3"],
        &["train", "--method", "ppf", "--seed", "3", "--epochs", "4"],
    ];
    for (k, cmd) in commands.iter().enumerate() {
        let mut dirs = Vec::new();
        for rep in 0..2 {
            let out = tmp.path().join(format!("runs-{k}-{rep}"));
            let mut args = cmd.to_vec();
            args.extend(["--dataset", manifest, "--out", out.to_str().unwrap()]);
            let summary: serde_json::Value = serde_json::from_str(&clefov(&args)).unwrap();
            dirs.push(std::path::PathBuf::from(summary["run_dir"].as_str().unwrap()));
        }
        let files: &[&str] = if cmd[0] == "eval" { &["metrics.json", "results.tsv"] } else { &["training.json"] };
        for f in files {
            identical &= read(&dirs[0].join(f)) == read(&dirs[1].join(f));
            compared += 1;
        }
        let (a, b) = (manifests(&dirs[0]), manifests(&dirs[1]));
        identical &= !a.is_empty() && a == b;
        compared += a.len();
    }
    check(
        identical,
        format!("4 commands run twice, {compared} metrics/log/manifest files byte-identical={identical}"),
    )
}

fn statistics() -> Outcome {
    let spec = SynthSpec::default();
    let frames = render_dataset(&spec).unwrap();
    let bins = LogBins::log_spaced(10.0, 65536.0, 48).unwrap();
    let hists = median_histogram(&frames, &bins).unwrap();
    let mass_ok = hists.iter().all(|h| (h.total_mass() - 1.0).abs() <= MASS_TOL);
    let configured: Vec<(Site, f64)> = spec.domains.iter().flat_map(|d| d.sites.iter().map(|s| (s.site, s.median))).collect();
    let split = 500.0;
    let mut separated = true;
    let mut parts = Vec::new();
    for h in &hists {
        let target = configured.iter().find(|(s, _)| *s == h.site).map(|(_, m)| *m).unwrap();
        let lo = h.medians.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = h.medians.iter().cloned().fold(0.0, f64::max);
        separated &= if target < split { hi < split } else { lo > split };
        parts.push(format!("{} [{lo:.0}, {hi:.0}]", h.site));
    }
    let low: Vec<_> = hists.iter().filter(|h| h.medians[0] < split).collect();
    let high: Vec<_> = hists.iter().filter(|h| h.medians[0] >= split).collect();
    let overlap = low
        .iter()
        .flat_map(|a| high.iter().map(move |b| a.overlap(b)))
        .fold(0.0, f64::max);
    check(
        mass_ok && separated && overlap == 0.0 && !low.is_empty() && !high.is_empty(),
        format!(
            "mass 1 +/- {MASS_TOL:e} per site={mass_ok}; median ranges {}; low/high overlap {overlap}",
            parts.join(", ")
        ),
    )
}

fn timed(limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> Outcome {
    let t = Instant::now();
    let mut out = f();
    let elapsed = t.elapsed();
    if let Some(limit) = limit {
        out.pass &= within(elapsed, limit);
        out.detail.push_str(&format!("; {elapsed:.2?} (limit {limit:?})"));
    } else {
        out.detail.push_str(&format!("; {elapsed:.2?}"));
    }
    out
}

fn main() {
    // libtest flags such as --nocapture are accepted and ignored
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let wanted = |n: usize| filter.is_empty() || filter.iter().any(|f| f == &n.to_string());
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut record = |n: usize, name: &'static str, outcome: Outcome| {
        println!("criterion {n} [{}] {name}: {}", if outcome.pass { "PASS" } else { "FAIL" }, outcome.detail);
        results.push((n, name, outcome));
    };
    if wanted(1) {
        record(1, "masked GAP equivalence", timed(Some(Duration::from_secs(1)), masked_gap_equivalence));
    }
    if wanted(2) {
        record(2, "CAM-classifier consistency", timed(Some(Duration::from_secs(10)), cam_consistency));
    }
    if wanted(3) {
        record(3, "gradient correctness", timed(Some(Duration::from_secs(120)), gradient_correctness));
    }
    if wanted(4) {
        record(4, "preprocessing fidelity", timed(Some(Duration::from_secs(10)), preprocessing_fidelity));
    }
    if wanted(5) {
        record(5, "ROC-AUC oracle equivalence", timed(Some(Duration::from_secs(5)), auc_oracle));
    }
    if wanted(6) || wanted(7) {
        let frames = render_dataset(&SynthSpec::default()).unwrap();
        let t = Instant::now();
        let runs = run_matrix(&frames);
        let elapsed = t.elapsed();
        if wanted(6) {
            record(6, "harness integrity", harness_integrity(&runs, elapsed));
        }
        if wanted(7) {
            record(7, "synthetic learnability", learnability(&runs, elapsed));
        }
    }
    if wanted(8) {
        record(8, "determinism", timed(None, determinism));
    }
    if wanted(9) {
        record(9, "median statistics", timed(None, statistics));
    }
    let failed: Vec<usize> = results.iter().filter(|(_, _, o)| !o.pass).map(|(n, _, _)| *n).collect();
    println!(
        "acceptance: {}/{} criteria passed{}",
        results.len() - failed.len(),
        results.len(),
        if failed.is_empty() { String::new() } else { format!(", failed {failed:?}") }
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
