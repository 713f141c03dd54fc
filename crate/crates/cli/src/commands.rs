use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use rfi_core::io::{load_jsonl, save_jsonl};
use rfi_core::nn::{grad_check, GradCheckOptions, ModelConfig, Parameters};
use rfi_core::preprocess::preprocess_all;
use rfi_core::rng::{derive_seed, rng_from_seed, stream};
use rfi_core::synth::{default_archetypes, scaled_counts, synth_dataset_with, CLASS_NAMES, DEFAULT_CLASS_COUNTS};
use rfi_core::train::{evaluate_model, fit_audited, run_experiment, Batchable, TrainReport};
use rfi_core::{
    balance_by_downsampling, class_weights, confusion, stratified_split, Checkpoint, ClassArchetype,
    ConfusionMatrix, Error, FixedVector, LabeledDataset, MetricsReport, PreprocessConfig, SplitSpec,
    Standardizer, TrainConfig,
};

use crate::manifest::{write_json, RunManifest};
use crate::{EvaluateArgs, FiltersDumpArgs, GradcheckArgs, PreprocessArgs, SplitArgs, SynthArgs, TrainArgs};

#[derive(Debug)]
pub enum CliError {
    Core(Error),
    GradCheckFailed { max_rel_error: f64, tolerance: f64 },
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::GradCheckFailed { max_rel_error, tolerance } => write!(
                f,
                "gradient check failed: max relative error {max_rel_error:.3e} >= {tolerance:.0e}"
            ),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(Error::Json(e))
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(Error::Io(e))
    }
}

type CliResult = Result<(), CliError>;

fn read_config<T: for<'de> Deserialize<'de> + Default>(path: Option<&Path>) -> Result<T, Error> {
    let Some(path) = path else { return Ok(T::default()) };
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn create_dir(dir: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(dir)
        .map_err(|e| Error::Config(format!("cannot create {}: {e}", dir.display())))
}

fn load_dataset(path: &Path) -> Result<LabeledDataset, Error> {
    let items = load_jsonl(path)?;
    if items.is_empty() {
        return Err(Error::Data(format!("{} contains no transients", path.display())));
    }
    LabeledDataset::with_default_classes(items)
}

fn write_vectors(path: &Path, vs: &[FixedVector]) -> Result<(), Error> {
    let mut w = BufWriter::new(File::create(path)?);
    for v in vs {
        serde_json::to_writer(&mut w, v)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn write_compact<T: Serialize>(path: &Path, value: &T) -> Result<(), Error> {
    let mut s = serde_json::to_string(value)?;
    s.push('\n');
    std::fs::write(path, s)?;
    Ok(())
}

fn class_names() -> Vec<&'static str> {
    CLASS_NAMES.to_vec()
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SynthConfig {
    scale: Option<f64>,
    seed: u64,
    counts: Option<Vec<usize>>,
    archetypes: Option<Vec<ClassArchetype>>,
}

pub fn synth(args: SynthArgs) -> CliResult {
    let mut cfg: SynthConfig = read_config(args.config.as_deref())?;
    if let Some(s) = args.scale {
        cfg.scale = Some(s);
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let counts = match (&cfg.counts, cfg.scale) {
        (Some(_), Some(_)) => {
            return Err(Error::Config("give either counts or scale, not both".into()).into())
        }
        (Some(c), None) => c.clone(),
        (None, Some(s)) => scaled_counts(s)?,
        (None, None) => DEFAULT_CLASS_COUNTS.to_vec(),
    };
    let archetypes = cfg.archetypes.clone().unwrap_or_else(default_archetypes);
    let items = synth_dataset_with(&archetypes, &counts, cfg.seed)?;
    save_jsonl(&args.out, &items)?;
    for (k, n) in counts.iter().enumerate() {
        println!("class {}: {n}", k + 1);
    }
    println!("total: {}", items.len());
    Ok(())
}

pub fn split(args: SplitArgs) -> CliResult {
    let spec = SplitSpec::new(args.fractions[0], args.fractions[1], args.fractions[2], args.seed)?;
    let mut data = load_dataset(&args.input)?;
    if args.downsample {
        data = balance_by_downsampling(&data, args.seed)?;
    }
    let (train, val, test) = stratified_split(&data, &spec)?;
    create_dir(&args.out_dir)?;
    let names = ["train.jsonl", "validation.jsonl", "test.jsonl"];
    for (name, part) in names.iter().zip([&train, &val, &test]) {
        save_jsonl(&args.out_dir.join(name), part.items())?;
        println!("{name}: {} items {:?}", part.len(), part.histogram());
    }
    let config = serde_json::json!({ "fractions": args.fractions, "downsample": args.downsample });
    let mut m = RunManifest::new("split", Some(args.seed), config);
    m.input(&args.input)?;
    m.artifacts(&args.out_dir, &names)?;
    m.write(&args.out_dir)?;
    Ok(())
}

pub fn preprocess(args: PreprocessArgs) -> CliResult {
    let mut cfg = PreprocessConfig::default();
    if let Some(t) = args.length {
        cfg.length = t;
    }
    if let Some(a) = args.anchor {
        cfg.anchor = a;
    }
    let train = load_dataset(&args.train)?;
    let raw = preprocess_all(train.items(), &cfg)?;
    let standardizer = fit_audited(&raw)?;
    create_dir(&args.out_dir)?;
    write_compact(&args.out_dir.join("standardizer.json"), &standardizer)?;
    let mut artifacts = vec!["standardizer.json".to_string(), "train.std.jsonl".to_string()];
    write_vectors(&args.out_dir.join("train.std.jsonl"), &standardizer.apply_all(&raw)?)?;

    let mut m = RunManifest::new("preprocess", None, serde_json::to_value(cfg)?);
    m.input(&args.train)?;
    for path in &args.apply {
        let items = load_jsonl(path)?;
        let vs = standardizer.apply_all(&preprocess_all(&items, &cfg)?)?;
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("data");
        let name = format!("{stem}.std.jsonl");
        write_vectors(&args.out_dir.join(&name), &vs)?;
        artifacts.push(name);
        m.input(path)?;
    }
    let names: Vec<&str> = artifacts.iter().map(|s| s.as_str()).collect();
    m.artifacts(&args.out_dir, &names)?;
    m.write(&args.out_dir)?;
    println!("standardizer fitted on {} items, T = {}", raw.len(), cfg.length);
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    train: &'a TrainReport,
    final_val_accuracy: Option<f64>,
    pretrain_test_accuracy: f64,
    test_accuracy: f64,
    split_sizes: [usize; 3],
}

fn apply_overrides(cfg: &mut TrainConfig, a: &TrainArgs) {
    macro_rules! set {
        ($($field:ident),*) => { $( if let Some(v) = a.$field { cfg.$field = v; } )* };
    }
    set!(seed, imbalance_mode, batch_size, learning_rate, optimizer, max_epochs, patience,
         kernel_len, stride, num_filters, hidden_size, merge_train_val);
}

pub fn train(args: TrainArgs) -> CliResult {
    let mut cfg: TrainConfig = read_config(args.config.as_deref())?;
    apply_overrides(&mut cfg, &args);
    cfg.validate()?;
    let data = load_dataset(&args.data)?;
    let out = run_experiment(&data, &cfg)?;

    let dir = &args.out_dir;
    create_dir(dir)?;
    write_json(&dir.join("config.json"), &cfg)?;
    Checkpoint::from_model(&out.model, &cfg.preprocess).save(&dir.join("checkpoint.json"))?;
    write_compact(&dir.join("standardizer.json"), &out.standardizer)?;
    let summary = TrainSummary {
        train: &out.report,
        final_val_accuracy: out.report.final_val_accuracy(),
        pretrain_test_accuracy: out.pretrain_test_accuracy,
        test_accuracy: out.metrics.accuracy,
        split_sizes: [out.train.len(), out.validation.len(), out.test.len()],
    };
    write_json(&dir.join("report.json"), &summary)?;
    write_json(&dir.join("metrics.json"), &out.metrics)?;
    std::fs::write(dir.join("confusion.csv"), out.confusion.to_csv(&class_names()))?;
    save_jsonl(&dir.join("test.jsonl"), out.test.items())?;

    let mut m = RunManifest::new("train", Some(cfg.seed), serde_json::to_value(&cfg)?);
    m.input(&args.data)?;
    m.artifacts(
        dir,
        &["config.json", "checkpoint.json", "standardizer.json", "report.json", "metrics.json", "confusion.csv", "test.jsonl"],
    )?;
    m.write(dir)?;
    println!("{}", out.metrics.summary_line());
    Ok(())
}

fn write_metrics(dir: &Path, cm: &ConfusionMatrix, report: &MetricsReport) -> Result<(), Error> {
    create_dir(dir)?;
    write_json(&dir.join("metrics.json"), report)?;
    std::fs::write(dir.join("confusion.csv"), cm.to_csv(&class_names()))?;
    for w in &report.warnings {
        log::warn!("{w}");
    }
    Ok(())
}

fn parse_predictions(path: &Path) -> Result<(Vec<usize>, Vec<usize>), Error> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    let (mut truth, mut pred) = (Vec::new(), Vec::new());
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (i == 0 && line.starts_with(|c: char| c.is_alphabetic())) {
            continue;
        }
        let bad = || Error::Data(format!("{}:{}: expected `true,predicted`", path.display(), i + 1));
        let (a, b) = line.split_once(',').ok_or_else(bad)?;
        truth.push(a.trim().parse().map_err(|_| bad())?);
        pred.push(b.trim().parse().map_err(|_| bad())?);
    }
    Ok((truth, pred))
}

pub fn evaluate(args: EvaluateArgs) -> CliResult {
    let mut m;
    let (cm, report) = if let Some(path) = &args.from_predictions {
        let (truth, pred) = parse_predictions(path)?;
        if truth.is_empty() {
            return Err(Error::Data(format!("{} has no predictions", path.display())).into());
        }
        let cm = confusion(&truth, &pred, args.num_classes)?;
        let names = class_names();
        let report = MetricsReport::from_confusion(&cm, &names[..args.num_classes.min(names.len())])?;
        m = RunManifest::new("evaluate", None, serde_json::json!({ "num_classes": args.num_classes }));
        m.input(path)?;
        (cm, report)
    } else {
        let (ck_path, test_path, std_path) = (
            args.checkpoint.as_ref().expect("required by clap"),
            args.test.as_ref().expect("required by clap"),
            args.standardizer.as_ref().expect("required by clap"),
        );
        let ck = Checkpoint::load(ck_path)?;
        let model = ck.to_model()?;
        let text = std::fs::read_to_string(std_path)
            .map_err(|e| Error::Data(format!("cannot read {}: {e}", std_path.display())))?;
        let standardizer: Standardizer = serde_json::from_str(&text)?;
        standardizer.validate()?;
        if standardizer.length != model.config.input_len {
            return Err(Error::Config(format!(
                "standardizer length {} does not match model input length {}",
                standardizer.length, model.config.input_len
            ))
            .into());
        }
        let items = load_jsonl(test_path)?;
        if items.is_empty() {
            return Err(Error::Data(format!("{} contains no transients", test_path.display())).into());
        }
        let vs = standardizer.apply_all(&preprocess_all(&items, &ck.preprocess)?)?;
        let data = Batchable::from_vectors(&vs);
        let (cm, report) = evaluate_model(&model, &data)?;
        m = RunManifest::new("evaluate", None, serde_json::to_value(ck.model)?);
        for p in [ck_path, test_path, std_path] {
            m.input(p)?;
        }
        (cm, report)
    };
    write_metrics(&args.out_dir, &cm, &report)?;
    m.artifacts(&args.out_dir, &["metrics.json", "confusion.csv"])?;
    m.write(&args.out_dir)?;
    println!("{}", report.summary_line());
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct GradcheckConfig {
    model: ModelConfig,
    batch: usize,
    seed: u64,
    /// Class counts from which the loss weights are derived.
    class_counts: Vec<usize>,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            model: ModelConfig {
                input_len: 64,
                kernel_len: 8,
                stride: 4,
                num_filters: 4,
                hidden: 4,
                num_classes: 4,
                ..ModelConfig::default()
            },
            batch: 4,
            seed: 0,
            class_counts: vec![40, 20, 10, 5],
        }
    }
}

/// `conv_bias` style names map to `conv.bias`; full tensor names pass through.
fn tensor_name(s: &str) -> String {
    if s.contains('.') {
        s.to_string()
    } else {
        s.replacen('_', ".", 1)
    }
}

pub fn gradcheck(args: GradcheckArgs) -> CliResult {
    let mut cfg: GradcheckConfig = read_config(args.config.as_deref())?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let mc = cfg.model;
    if cfg.class_counts.len() != mc.num_classes {
        return Err(Error::Config("class_counts must have one entry per class".into()).into());
    }
    let model = rfi_core::ModelParams::init(&mc, cfg.seed)?;
    let mut rng = rng_from_seed(derive_seed(cfg.seed, &[stream::GRADCHECK, 1]));
    let inputs: Vec<Vec<f64>> = (0..cfg.batch)
        .map(|_| (0..mc.input_len).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect();
    let classes: Vec<usize> = (0..cfg.batch).map(|i| i % mc.num_classes).collect();
    let weights = class_weights(&cfg.class_counts)?;
    let refs: Vec<&[f64]> = inputs.iter().map(|x| x.as_slice()).collect();
    let opts = GradCheckOptions {
        eps: args.eps,
        samples: args.samples,
        zero_grad: args.mutate.as_deref().map(tensor_name),
        seed: cfg.seed,
        ..GradCheckOptions::default()
    };
    let report = grad_check(&model, &refs, &classes, &weights, &opts)?;
    println!("{}", serde_json::to_string(&report)?);
    println!(
        "checked {} of {} parameters, max relative error {:.3e} ({} [{}])",
        report.checked,
        model.num_params(),
        report.max_rel_error,
        report.worst_tensor,
        report.worst_index
    );
    if report.max_rel_error < args.tolerance {
        println!("PASS");
        Ok(())
    } else {
        println!("FAIL");
        Err(CliError::GradCheckFailed { max_rel_error: report.max_rel_error, tolerance: args.tolerance })
    }
}

pub fn filters_dump(args: FiltersDumpArgs) -> CliResult {
    let model = Checkpoint::load(&args.checkpoint)?.to_model()?;
    let f = &model.conv.filters;
    let (rows, k) = (f.shape[0], f.shape[1]);
    let mut w = BufWriter::new(File::create(&args.out)?);
    for row in f.data.chunks(k) {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    println!("{rows} filters of length {k}");
    Ok(())
}
