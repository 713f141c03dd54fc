//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each
//! and exits non-zero if any failed.
//!
//! `cargo test -p rfi-cli --test acceptance`

use std::collections::BTreeSet;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::Rng;
use rfi_core::dataset::{balance_by_downsampling, class_counts, stratified_split, LabeledDataset, SplitSpec};
use rfi_core::loss::{class_weights, one_hot, weighted_cross_entropy, ClassWeights};
use rfi_core::metrics::{accuracy, macro_precision, macro_recall, ConfusionMatrix};
use rfi_core::nn::{grad_check, softmax, GradCheckOptions, ModelConfig, ModelParams};
use rfi_core::preprocess::{amplitude_scale, fit_standardizer, preprocess_all, PreprocessConfig};
use rfi_core::rng::rng_from_seed;
use rfi_core::synth::{scaled_counts, synth_dataset, DEFAULT_CLASS_COUNTS};
use rfi_core::train::{pretrain_cnn, run_experiment, train_full, Batchable, ImbalanceMode, TrainConfig};

const DESK_CONFIG: &str = include_str!("../../../configs/desk.json");
const DESK_SEED: u64 = 7;

const BALANCED_CONFUSION: [[u64; 8]; 8] = [
    [44, 0, 2, 0, 2, 0, 2, 2],
    [2, 38, 1, 1, 0, 1, 0, 9],
    [3, 0, 36, 1, 0, 4, 1, 7],
    [2, 0, 0, 49, 0, 1, 0, 0],
    [4, 0, 0, 1, 45, 1, 1, 0],
    [1, 0, 4, 0, 0, 47, 0, 0],
    [1, 0, 0, 1, 1, 1, 48, 0],
    [1, 3, 3, 1, 0, 1, 0, 43],
];

const WEIGHTED_CONFUSION: [[u64; 8]; 8] = [
    [120, 1, 7, 0, 2, 0, 0, 2],
    [1, 88, 6, 2, 2, 3, 0, 6],
    [9, 4, 1035, 0, 1, 19, 5, 31],
    [0, 1, 1, 50, 0, 0, 0, 0],
    [43, 4, 9, 2, 3117, 13, 13, 0],
    [2, 9, 166, 0, 18, 6957, 22, 12],
    [1, 0, 11, 0, 4, 3, 716, 0],
    [2, 3, 16, 0, 0, 3, 0, 81],
];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn within(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn matrix(rows: &[[u64; 8]; 8]) -> ConfusionMatrix {
    ConfusionMatrix::from_counts(rows.iter().map(|r| r.to_vec()).collect()).unwrap()
}

fn timed(limit: Duration, o: Outcome, start: Instant) -> Outcome {
    let t = start.elapsed();
    let detail = format!("{} ({:.2}s)", o.detail, t.as_secs_f64());
    outcome(o.pass && t < limit, detail)
}

fn metrics_balanced() -> Outcome {
    let start = Instant::now();
    let cm = matrix(&BALANCED_CONFUSION);
    let (a, p, r) = (accuracy(&cm).unwrap(), macro_precision(&cm), macro_recall(&cm).unwrap());
    let ok = within(a, 0.8413, 5e-5) && within(p, 0.8475, 5e-5) && within(r, 0.8413, 5e-5);
    timed(Duration::from_secs(1), outcome(ok, format!("accuracy {a:.5} precision {p:.5} recall {r:.5}")), start)
}

fn metrics_weighted() -> Outcome {
    let start = Instant::now();
    let cm = matrix(&WEIGHTED_CONFUSION);
    let (a, p, r) = (accuracy(&cm).unwrap(), macro_precision(&cm), macro_recall(&cm).unwrap());
    let recalls = cm.recalls().unwrap();
    let ok = within(a, 0.9636, 5e-5)
        && within(p, 0.8467, 5e-5)
        && within(r, 0.9138, 5e-5)
        && within(recalls[3], 0.9615, 5e-5)
        && within(recalls[7], 0.7714, 5e-5);
    let detail = format!(
        "accuracy {a:.5} precision {p:.5} recall {r:.5} cable {:.5} PSU {:.5}",
        recalls[3], recalls[7]
    );
    timed(Duration::from_secs(1), outcome(ok, detail), start)
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let cfg = ModelConfig {
        input_len: 64,
        kernel_len: 8,
        stride: 4,
        num_filters: 4,
        hidden: 4,
        num_classes: 4,
        ..ModelConfig::default()
    };
    let weights = class_weights(&[40, 5, 20, 10]).unwrap();
    let mut worst: f64 = 0.0;
    for seed in 0..20u64 {
        let model = ModelParams::init(&cfg, seed).unwrap();
        let mut rng = rng_from_seed(1000 + seed);
        let xs: Vec<Vec<f64>> =
            (0..4).map(|_| (0..64).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let refs: Vec<&[f64]> = xs.iter().map(|x| x.as_slice()).collect();
        let classes: Vec<usize> = (0..4).map(|_| rng.random_range(0..4)).collect();
        let opts = GradCheckOptions { seed, ..GradCheckOptions::default() };
        let r = grad_check(&model, &refs, &classes, &weights, &opts).unwrap();
        worst = worst.max(r.max_rel_error);
    }
    let o = outcome(worst < 1e-4, format!("20 seeds, worst max relative error {worst:.2e}"));
    timed(Duration::from_secs(120), o, start)
}

fn loss_reductions() -> Outcome {
    let mut rng = rng_from_seed(44);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(1..16);
        let m = rng.random_range(2..9);
        let classes: Vec<usize> = (0..n).map(|_| rng.random_range(0..m)).collect();
        let probs: Vec<Vec<f64>> = (0..n)
            .map(|_| softmax(&(0..m).map(|_| rng.random_range(-5.0..5.0)).collect::<Vec<_>>()))
            .collect();
        let weighted = weighted_cross_entropy(&one_hot(&classes, m), &probs, &ClassWeights::uniform(m)).unwrap();
        let plain = -classes.iter().zip(&probs).map(|(&c, p)| p[c].ln()).sum::<f64>() / n as f64;
        worst = worst.max((weighted - plain).abs());
    }
    let w = class_weights(&DEFAULT_CLASS_COUNTS).unwrap().0;
    let (imin, min) = w.iter().enumerate().fold((0, f64::INFINITY), |a, (i, &v)| if v < a.1 { (i, v) } else { a });
    let (imax, max) = w.iter().enumerate().fold((0, 0.0), |a, (i, &v)| if v > a.1 { (i, v) } else { a });
    let ok = worst <= 1e-12 && min == 1.0 && imin == 5 && imax == 3 && max == 35932.0 / 264.0;
    outcome(
        ok,
        format!("max |weighted - plain| {worst:.1e}; min {min} at class {}, max {max:.4} at class {}", imin + 1, imax + 1),
    )
}

fn preprocessing_invariants() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;

    let mut rng = rng_from_seed(55);
    let mut affine: f64 = 0.0;
    for _ in 0..200 {
        let x: Vec<f64> = (0..300).map(|_| rng.random_range(-3.0..3.0)).collect();
        let a = rng.random_range(0.1..10.0);
        let b = rng.random_range(-5.0..5.0);
        let y: Vec<f64> = x.iter().map(|v| a * v + b).collect();
        let (sx, sy) = (amplitude_scale(&x), amplitude_scale(&y));
        affine = sx.iter().zip(&sy).fold(affine, |m, (p, q)| m.max((p - q).abs()));
    }
    ok &= affine <= 1e-12;
    notes.push(format!("affine {affine:.1e}"));

    let data = LabeledDataset::with_default_classes(synth_dataset(&scaled_counts(0.02).unwrap(), 3).unwrap()).unwrap();
    let (train, _, _) = stratified_split(&data, &SplitSpec::standard(3)).unwrap();
    let raw = preprocess_all(train.items(), &PreprocessConfig::default()).unwrap();
    let s = fit_standardizer(&raw).unwrap();
    let z = s.apply_all(&raw).unwrap();
    let n = z.len() as f64;
    let (mut worst_mu, mut worst_sd): (f64, f64) = (0.0, 0.0);
    for j in 0..s.length {
        if s.sigma[j] <= rfi_core::preprocess::SIGMA_EPS {
            continue;
        }
        let mu = z.iter().map(|v| v.values[j]).sum::<f64>() / n;
        let var = z.iter().map(|v| (v.values[j] - mu).powi(2)).sum::<f64>() / n;
        worst_mu = worst_mu.max(mu.abs());
        worst_sd = worst_sd.max((var.sqrt() - 1.0).abs());
    }
    ok &= worst_mu < 1e-9 && worst_sd <= 1e-9;
    notes.push(format!("standardized |mu| {worst_mu:.1e} |sd-1| {worst_sd:.1e}"));

    let full = LabeledDataset::with_default_classes(synth_dataset(&scaled_counts(0.02).unwrap(), 5).unwrap()).unwrap();
    let counts = class_counts(&full).unwrap();
    let spec = SplitSpec::standard(5);
    let (tr, va, te) = stratified_split(&full, &spec).unwrap();
    let mut all: Vec<usize> = tr.ids().into_iter().chain(va.ids()).chain(te.ids()).collect();
    all.sort_unstable();
    let partition = all == full.ids();
    let mut frac_ok = true;
    for (k, &l) in counts.iter().enumerate() {
        for (part, f) in [(&tr, 0.6), (&va, 0.2), (&te, 0.2)] {
            let got = part.histogram()[k] as f64 / l as f64;
            frac_ok &= (got - f).abs() <= 1.0 / l as f64 + 1e-12;
        }
    }
    ok &= partition && frac_ok;
    notes.push(format!("split partition {partition} fractions {frac_ok}"));

    let balanced = balance_by_downsampling(&full, 5).unwrap();
    let min = *counts.iter().min().unwrap();
    let exact = balanced.histogram().iter().all(|&c| c == min);
    ok &= exact;
    notes.push(format!("downsampled to {min} per class {exact}"));
    outcome(ok, notes.join("; "))
}

fn desk_config() -> TrainConfig {
    serde_json::from_str(DESK_CONFIG).expect("configs/desk.json")
}

fn desk_learnability() -> Outcome {
    let start = Instant::now();
    let items = synth_dataset(&scaled_counts(0.02).unwrap(), DESK_SEED).unwrap();
    let data = LabeledDataset::with_default_classes(items).unwrap();
    let run = |mode| {
        let cfg = TrainConfig { imbalance_mode: mode, seed: DESK_SEED, ..desk_config() };
        run_experiment(&data, &cfg).unwrap()
    };
    let weighted = run(ImbalanceMode::ClassWeighted);
    let downsampled = run(ImbalanceMode::Downsample);
    let control = run(ImbalanceMode::Unweighted);
    let cable = |o: &rfi_core::train::ExperimentOutcome| o.metrics.per_class[3].recall;
    let ok = weighted.metrics.accuracy >= 0.80
        && downsampled.metrics.accuracy >= 0.80
        && cable(&weighted) > cable(&control);
    let detail = format!(
        "{} transients; accuracy weighted {:.4} downsample {:.4}; cable recall weighted {:.3} vs unweighted {:.3}",
        data.len(),
        weighted.metrics.accuracy,
        downsampled.metrics.accuracy,
        cable(&weighted),
        cable(&control)
    );
    timed(Duration::from_secs(600), outcome(ok, detail), start)
}

fn two_stage_contracts() -> Outcome {
    let items = synth_dataset(&scaled_counts(0.02).unwrap(), 9).unwrap();
    let data = LabeledDataset::with_default_classes(items).unwrap();
    let cfg = TrainConfig { max_epochs: 3, seed: 9, ..desk_config() };

    let (train, val, _) = stratified_split(&data, &SplitSpec::standard(9)).unwrap();
    let raw = preprocess_all(train.items(), &cfg.preprocess).unwrap();
    let s = rfi_core::train::fit_audited(&raw).unwrap();
    let tb = Batchable::from_vectors(&s.apply_all(&raw).unwrap());
    let vb = Batchable::from_vectors(&s.apply_all(&preprocess_all(val.items(), &cfg.preprocess).unwrap()).unwrap());
    let mc = cfg.model_config(8);
    let w = ClassWeights::uniform(8);
    let (conv, _) = pretrain_cnn(&tb, &vb, &mc, &cfg, &w).unwrap();
    let before: Vec<u64> = conv.filters.data.iter().chain(&conv.bias.data).map(|v| v.to_bits()).collect();
    let (model, _) = train_full(&conv, &tb, &vb, &mc, &cfg, &w).unwrap();
    let after: Vec<u64> = model.conv.filters.data.iter().chain(&model.conv.bias.data).map(|v| v.to_bits()).collect();
    let frozen = before == after;

    let mut audit = true;
    for merge in [false, true] {
        let out = run_experiment(&data, &TrainConfig { merge_train_val: merge, ..cfg.clone() }).unwrap();
        let mut expected: BTreeSet<usize> = out.train.ids().into_iter().collect();
        if merge {
            expected.extend(out.validation.ids());
        }
        let fitted: BTreeSet<usize> = out.standardizer.fitted_on.iter().copied().collect();
        audit &= fitted == expected && out.test.ids().iter().all(|i| !fitted.contains(i));
    }
    outcome(frozen && audit, format!("conv bit-identical {frozen}; standardizer id audit {audit}"))
}

fn rfi(args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_rfi"))
        .args(args)
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn same_bytes(a: &Path, b: &Path, names: &[&str]) -> bool {
    names.iter().all(|n| match (std::fs::read(a.join(n)), std::fs::read(b.join(n))) {
        (Ok(x), Ok(y)) => x == y,
        _ => false,
    })
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let desk = root.join("desk.json");
    let cfg = TrainConfig { max_epochs: 2, ..desk_config() };
    std::fs::write(&desk, serde_json::to_string(&cfg).unwrap()).unwrap();
    let mut ok = true;
    let mut notes = Vec::new();
    for run in ["a", "b"] {
        let dir = root.join(run);
        std::fs::create_dir_all(&dir).unwrap();
        let p = |s: &str| dir.join(s).to_string_lossy().into_owned();
        ok &= rfi(&["synth", "--scale", "0.02", "--seed", "3", "--out", &p("data.jsonl")]);
        ok &= rfi(&["split", "--input", &p("data.jsonl"), "--seed", "3", "--out-dir", &p("split")]);
        ok &= rfi(&[
            "train", "--config", &desk.to_string_lossy(), "--data", &p("data.jsonl"),
            "--seed", "3", "--deterministic", "--out-dir", &p("train"),
        ]);
        ok &= rfi(&[
            "evaluate", "--checkpoint", &p("train/checkpoint.json"), "--test", &p("train/test.jsonl"),
            "--standardizer", &p("train/standardizer.json"), "--out-dir", &p("eval"),
        ]);
    }
    let (a, b) = (root.join("a"), root.join("b"));
    let checks = [
        ("synth", same_bytes(&a, &b, &["data.jsonl"])),
        ("split", same_bytes(&a.join("split"), &b.join("split"), &["train.jsonl", "validation.jsonl", "test.jsonl"])),
        (
            "train",
            same_bytes(&a.join("train"), &b.join("train"), &["checkpoint.json", "report.json", "metrics.json", "standardizer.json"]),
        ),
        ("evaluate", same_bytes(&a.join("eval"), &b.join("eval"), &["metrics.json", "confusion.csv"])),
    ];
    for (name, same) in checks {
        ok &= same;
        notes.push(format!("{name} {}", if same { "identical" } else { "DIFFERS" }));
    }
    outcome(ok, notes.join(", "))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("1 metrics oracle, balanced confusion", metrics_balanced),
        ("2 metrics oracle, weighted confusion", metrics_weighted),
        ("3 gradient correctness", gradient_correctness),
        ("4 loss reductions", loss_reductions),
        ("5 preprocessing invariants", preprocessing_invariants),
        ("6 desk-scale learnability", desk_learnability),
        ("7 two-stage contracts", two_stage_contracts),
        ("8 determinism", determinism),
    ];
    let only: Option<String> = std::env::args().nth(1).filter(|a| !a.starts_with('-'));
    let mut failed = 0;
    for (name, run) in criteria {
        if let Some(f) = &only {
            if !name.starts_with(f.as_str()) {
                continue;
            }
        }
        let o = run();
        println!("{} criterion {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
