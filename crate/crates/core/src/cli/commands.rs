use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use anyhow::{anyhow, Context};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use super::{
    BenchArgs, BenchVariant, ClassesArgs, CliError, CliResult, CompareArgs, ConfigFile, EvalArgs, FloatWidth,
    PredictArgs, ServeArgs, SynthArgs, TrainArgs,
};
use crate::dataset::{
    load_dataset, save_dataset, stratified_split, synth_generate, ClassTable, GestureSequence, LandmarkFrame,
    SynthConfig, NUM_CLASSES,
};
use crate::engine::{self, Engine, Ingest, NoteEvent, ServeConfig, Server, DEFAULT_STRIDE, DEFAULT_THRESHOLD};
use crate::evaluation::{compare_report, evaluate, svg, EvalReport, RunSummary};
use crate::io_util::{sha256_file, write_atomic};
use crate::manifest::{Artifact, RunManifest};
use crate::model::{Architecture, GestureClassifier, Variant};
use crate::numerics::Real;
use crate::training::{self, curves_csv, examples, EpochRecord, TrainConfig, TrainError};

/// Nominal capture rate used to stamp offline events.
const NOMINAL_FPS: u64 = 30;

static SHUTDOWN: AtomicBool = AtomicBool::new(false);

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn required(v: Option<PathBuf>, flag: &str) -> CliResult<PathBuf> {
    v.ok_or_else(|| usage(format!("--{flag} is required (flag, MLAGRU_* variable or config file)")))
}

fn emit_json(out: &mut dyn Write, value: &impl Serialize) -> CliResult<()> {
    let line = serde_json::to_string(value).context("serializing output")?;
    writeln!(out, "{line}").context("writing to stdout")?;
    out.flush().context("writing to stdout")?;
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    write_atomic(path, bytes).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let mut s = serde_json::to_string_pretty(value).context("serializing")?;
    s.push('\n');
    write_file(path, s.as_bytes())
}

fn hashed(path: &Path) -> CliResult<Artifact> {
    Ok(Artifact::hashed(path).with_context(|| format!("hashing {}", path.display()))?)
}

fn finish(
    mut manifest: RunManifest,
    results: impl Serialize,
    path: &Path,
) -> CliResult<RunManifest> {
    manifest.results = serde_json::to_value(results).context("serializing results")?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    manifest
        .write(path)
        .with_context(|| format!("writing manifest {}", path.display()))?;
    tracing::info!(path = %path.display(), "manifest written");
    Ok(manifest)
}

fn new_manifest(subcommand: &str, seed: u64, settings: &impl Serialize) -> CliResult<RunManifest> {
    let value = serde_json::to_value(settings).context("serializing settings")?;
    Ok(RunManifest::new(subcommand, seed, value))
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn check_unit(name: &str, v: f64) -> CliResult<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(usage(format!("--{name} must lie in [0, 1], got {v}")))
    }
}

fn class_table(classes: Option<&Path>, audio_dir: &Path) -> CliResult<ClassTable> {
    match classes {
        Some(p) => Ok(ClassTable::load_manifest(p).with_context(|| format!("loading class manifest {}", p.display()))?),
        None => Ok(ClassTable::canonical(audio_dir)),
    }
}

fn load_model<T: Real>(path: &Path) -> CliResult<GestureClassifier<T>> {
    Ok(GestureClassifier::<T>::load(path).with_context(|| format!("loading model {}", path.display()))?)
}

// ---------------------------------------------------------------- synth-data

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSettings {
    pub out: PathBuf,
    pub per_class: usize,
    pub noise: f64,
    pub absent_hand_fraction: f64,
    pub seed: u64,
}

impl SynthSettings {
    pub fn resolve(a: &SynthArgs, f: &ConfigFile) -> CliResult<Self> {
        let s = SynthSettings {
            out: f.pick(a.out.clone(), "out", PathBuf::from("data.gld"))?,
            per_class: f.pick(a.per_class, "per-class", 30u64)? as usize,
            noise: f.pick(a.noise, "noise", 0.02)?,
            absent_hand_fraction: f.pick(a.absent_hand_fraction, "absent-hand-fraction", 0.2)?,
            seed: f.pick(a.seed, "seed", 0)?,
        };
        if s.per_class == 0 {
            return Err(usage("--per-class must be at least 1"));
        }
        if !(s.noise.is_finite() && s.noise >= 0.0) {
            return Err(usage(format!("--noise must be a finite non-negative number, got {}", s.noise)));
        }
        check_unit("absent-hand-fraction", s.absent_hand_fraction)?;
        Ok(s)
    }
}

pub fn synth(s: SynthSettings, manifest: Option<PathBuf>, out: &mut dyn Write) -> CliResult<RunManifest> {
    let mut cfg = SynthConfig::new(s.per_class, s.noise, s.seed);
    cfg.absent_hand_fraction = s.absent_hand_fraction;
    let samples = synth_generate(&cfg);
    if let Some(dir) = s.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    save_dataset(&samples, &s.out).with_context(|| format!("writing {}", s.out.display()))?;
    let data = hashed(&s.out)?;
    tracing::info!(path = %s.out.display(), samples = samples.len(), "synthetic dataset written");

    let mut m = new_manifest("synth-data", s.seed, &s)?;
    m.outputs.insert("data".into(), data.clone());
    let results = serde_json::json!({
        "samples": samples.len(),
        "histogram": crate::dataset::class_histogram(&samples, NUM_CLASSES),
    });
    emit_json(
        out,
        &serde_json::json!({"out": data.path, "samples": samples.len(), "sha256": data.sha256}),
    )?;
    finish(m, results, &manifest.unwrap_or_else(|| sibling(&s.out, ".manifest.json")))
}

// ---------------------------------------------------------------- train

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSettings {
    pub data: PathBuf,
    pub out_dir: PathBuf,
    pub classes: Option<PathBuf>,
    pub train_fraction: f64,
    pub plots: bool,
    #[serde(flatten)]
    pub training: TrainConfig,
}

impl TrainSettings {
    pub fn resolve(a: &TrainArgs, f: &ConfigFile) -> CliResult<Self> {
        let d = TrainConfig::default();
        let training = TrainConfig {
            epochs: f.pick(a.epochs, "epochs", d.epochs as u64)? as usize,
            batch_size: f.pick(a.batch_size, "batch-size", d.batch_size as u64)? as usize,
            learning_rate: f.pick(a.learning_rate, "learning-rate", d.learning_rate)?,
            beta1: f.pick(a.beta1, "beta1", d.beta1)?,
            beta2: f.pick(a.beta2, "beta2", d.beta2)?,
            epsilon: f.pick(a.epsilon, "epsilon", d.epsilon)?,
            seed: f.pick(a.seed, "seed", d.seed)?,
            variant: f.pick(a.variant, "variant", d.variant)?,
            clip_norm: f.pick_opt(a.clip_norm, "clip-norm")?,
        };
        training.validate().map_err(|e| usage(e.to_string()))?;
        let s = TrainSettings {
            data: required(f.pick_opt(a.data.clone(), "data")?, "data")?,
            out_dir: f.pick(a.out_dir.clone(), "out-dir", PathBuf::from("run"))?,
            classes: f.pick_opt(a.classes.clone(), "classes")?,
            train_fraction: f.pick(a.train_fraction, "train-fraction", 0.8)?,
            plots: f.pick(a.plots, "plots", false)?,
            training,
        };
        if !(s.train_fraction > 0.0 && s.train_fraction < 1.0) {
            return Err(usage(format!(
                "--train-fraction must lie strictly between 0 and 1, got {}",
                s.train_fraction
            )));
        }
        Ok(s)
    }
}

fn curve_plots(dir: &Path, history: &[EpochRecord]) -> CliResult<()> {
    let epochs = history.len().max(2) as f64;
    let pts = |f: &dyn Fn(&EpochRecord) -> Option<f64>| -> Vec<(f64, f64)> {
        history.iter().filter_map(|r| f(r).map(|v| (r.epoch as f64, v))).collect()
    };
    let train_loss = pts(&|r| Some(r.train_loss));
    let val_loss = pts(&|r| r.val_loss);
    let max_loss = train_loss
        .iter()
        .chain(&val_loss)
        .map(|p| p.1)
        .fold(0.0_f64, f64::max)
        .max(1e-3);
    let loss = svg::line_chart(
        "Loss",
        "epoch",
        "cross-entropy",
        (1.0, epochs),
        (0.0, max_loss * 1.05),
        &[
            svg::Series { name: "train", points: train_loss },
            svg::Series { name: "validation", points: val_loss },
        ],
    );
    let acc = svg::line_chart(
        "Accuracy",
        "epoch",
        "accuracy",
        (1.0, epochs),
        (0.0, 1.0),
        &[
            svg::Series { name: "train", points: pts(&|r| Some(r.train_accuracy)) },
            svg::Series { name: "validation", points: pts(&|r| r.val_accuracy) },
        ],
    );
    write_file(&dir.join("loss.svg"), loss.as_bytes())?;
    write_file(&dir.join("accuracy.svg"), acc.as_bytes())
}

pub fn train(s: TrainSettings, manifest: Option<PathBuf>, out: &mut dyn Write) -> CliResult<RunManifest> {
    let ds = load_dataset(&s.data).with_context(|| format!("loading dataset {}", s.data.display()))?;
    let table = class_table(s.classes.as_deref(), Path::new("sounds"))?;
    if table.len() != NUM_CLASSES {
        return Err(usage(format!(
            "class manifest lists {} classes; the model has {NUM_CLASSES}",
            table.len()
        )));
    }
    let split = stratified_split(&ds.samples, s.train_fraction, s.training.seed).context("splitting dataset")?;
    let (train_refs, test_refs) = split.select(&ds.samples);
    let train_set = examples(train_refs.iter().copied());
    let val_set = examples(test_refs.iter().copied());
    tracing::info!(
        train = train_set.len(),
        test = val_set.len(),
        variant = %s.training.variant,
        "starting training"
    );

    let arch = Architecture::standard(s.training.variant);
    let outcome = match training::train(arch, table.names().to_vec(), &train_set, &val_set, &s.training) {
        Ok(o) => o,
        Err(TrainError::Config(m)) => return Err(usage(m)),
        Err(e) => return Err(anyhow!(e).context("training failed").into()),
    };

    fs::create_dir_all(&s.out_dir).with_context(|| format!("creating {}", s.out_dir.display()))?;
    let model_path = s.out_dir.join("model.gmd");
    outcome
        .model
        .save(&model_path)
        .with_context(|| format!("writing {}", model_path.display()))?;
    let test_path = s.out_dir.join("test.gld");
    let test_samples: Vec<GestureSequence> = test_refs.into_iter().cloned().collect();
    save_dataset(&test_samples, &test_path).with_context(|| format!("writing {}", test_path.display()))?;
    let curves_path = s.out_dir.join("curves.csv");
    write_file(&curves_path, curves_csv(&outcome.history).as_bytes())?;
    let history_path = s.out_dir.join("history.json");
    write_json(&history_path, &outcome.history)?;

    let mut m = new_manifest("train", s.training.seed, &s)?;
    m.inputs.insert("data".into(), hashed(&s.data)?);
    if let Some(c) = &s.classes {
        m.inputs.insert("classes".into(), hashed(c)?);
    }
    m.outputs.insert("model".into(), hashed(&model_path)?);
    m.outputs.insert("test_set".into(), hashed(&test_path)?);
    m.outputs.insert("curves".into(), Artifact::unhashed(&curves_path));
    m.outputs.insert("history".into(), Artifact::unhashed(&history_path));
    if s.plots {
        curve_plots(&s.out_dir, &outcome.history)?;
        m.outputs.insert("loss_plot".into(), Artifact::unhashed(&s.out_dir.join("loss.svg")));
        m.outputs.insert("accuracy_plot".into(), Artifact::unhashed(&s.out_dir.join("accuracy.svg")));
    }

    let summary = outcome.summary();
    let results = serde_json::json!({
        "model": s.training.variant.label(),
        "parameters": outcome.model.num_params(),
        "train_samples": train_set.len(),
        "test_samples": val_set.len(),
        "summary": summary,
    });
    emit_json(out, &results)?;
    finish(m, results, &manifest.unwrap_or_else(|| s.out_dir.join("manifest.json")))
}

// ---------------------------------------------------------------- eval

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    pub model: PathBuf,
    pub data: PathBuf,
    pub out_dir: PathBuf,
    pub history: Option<PathBuf>,
    pub float: FloatWidth,
    pub seed: u64,
    pub plots: bool,
}

impl EvalSettings {
    pub fn resolve(a: &EvalArgs, f: &ConfigFile) -> CliResult<Self> {
        Ok(EvalSettings {
            model: required(f.pick_opt(a.model.clone(), "model")?, "model")?,
            data: required(f.pick_opt(a.data.clone(), "data")?, "data")?,
            out_dir: f.pick(a.out_dir.clone(), "out-dir", PathBuf::from("eval"))?,
            history: f.pick_opt(a.history.clone(), "history")?,
            float: pick_float(a.float, f, FloatWidth::F64)?,
            seed: f.pick(a.seed, "seed", 0)?,
            plots: f.pick(a.plots, "plots", false)?,
        })
    }
}

fn pick_float(flag: Option<FloatWidth>, f: &ConfigFile, default: FloatWidth) -> CliResult<FloatWidth> {
    if let Some(v) = flag {
        return Ok(v);
    }
    match f.raw("float") {
        None => Ok(default),
        Some("f32") => Ok(FloatWidth::F32),
        Some("f64") => Ok(FloatWidth::F64),
        Some(other) => Err(usage(format!("invalid value `{other}` for `float`: expected f32 or f64"))),
    }
}

fn evaluate_as<T: Real>(model_path: &Path, test: &[GestureSequence]) -> CliResult<(Variant, Vec<String>, crate::evaluation::Evaluation)> {
    let model = load_model::<T>(model_path)?;
    let e = evaluate(&model, test).context("evaluation failed")?;
    Ok((model.variant(), model.class_names().to_vec(), e))
}

pub fn eval(s: EvalSettings, manifest: Option<PathBuf>, out: &mut dyn Write) -> CliResult<RunManifest> {
    let ds = load_dataset(&s.data).with_context(|| format!("loading dataset {}", s.data.display()))?;
    let (variant, names, evaluation) = match s.float {
        FloatWidth::F32 => evaluate_as::<f32>(&s.model, &ds.samples)?,
        FloatWidth::F64 => evaluate_as::<f64>(&s.model, &ds.samples)?,
    };
    let model_hash = sha256_file(&s.model).with_context(|| format!("hashing {}", s.model.display()))?;
    let data_hash = sha256_file(&s.data).with_context(|| format!("hashing {}", s.data.display()))?;
    let report = EvalReport::new(variant.label(), &names, &evaluation, data_hash, Some(model_hash));
    let history: Vec<EpochRecord> = match &s.history {
        Some(p) => serde_json::from_str(
            &fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        )
        .with_context(|| format!("parsing {}", p.display()))?,
        None => Vec::new(),
    };

    let report_path = s.out_dir.join("report.json");
    write_json(&report_path, &report)?;
    let csv_path = s.out_dir.join("per_class.csv");
    write_file(&csv_path, report.per_class_csv().as_bytes())?;
    let summary_path = s.out_dir.join("summary.json");
    write_json(&summary_path, &RunSummary { report: report.clone(), history })?;

    let mut m = new_manifest("eval", s.seed, &s)?;
    m.inputs.insert("model".into(), hashed(&s.model)?);
    m.inputs.insert("data".into(), hashed(&s.data)?);
    if let Some(h) = &s.history {
        m.inputs.insert("history".into(), Artifact::unhashed(h));
    }
    m.outputs.insert("report".into(), hashed(&report_path)?);
    m.outputs.insert("per_class".into(), hashed(&csv_path)?);
    let summary_artifact = if s.history.is_some() {
        Artifact::unhashed(&summary_path)
    } else {
        hashed(&summary_path)?
    };
    m.outputs.insert("summary".into(), summary_artifact);
    if s.plots {
        let cm = svg::confusion_heatmap(&format!("{} confusion matrix", report.model), &report.confusion, &names);
        let roc = svg::roc_chart(&format!("{} ROC", report.model), &report.roc, &names);
        let (cm_path, roc_path) = (s.out_dir.join("confusion.svg"), s.out_dir.join("roc.svg"));
        write_file(&cm_path, cm.as_bytes())?;
        write_file(&roc_path, roc.as_bytes())?;
        m.outputs.insert("confusion_plot".into(), hashed(&cm_path)?);
        m.outputs.insert("roc_plot".into(), hashed(&roc_path)?);
    }

    let results = serde_json::json!({
        "model": report.model,
        "samples": report.samples,
        "accuracy": report.accuracy,
        "micro_auc": report.micro_auc,
        "macro_auc": report.macro_auc,
        "absent_classes": report.absent_classes,
    });
    emit_json(out, &results)?;
    finish(m, results, &manifest.unwrap_or_else(|| s.out_dir.join("manifest.json")))
}

// ---------------------------------------------------------------- compare

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareSettings {
    pub a: PathBuf,
    pub b: PathBuf,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub plots: bool,
}

impl CompareSettings {
    pub fn resolve(a: &CompareArgs, f: &ConfigFile) -> CliResult<Self> {
        Ok(CompareSettings {
            a: required(f.pick_opt(a.a.clone(), "a")?, "a")?,
            b: required(f.pick_opt(a.b.clone(), "b")?, "b")?,
            out_dir: f.pick(a.out_dir.clone(), "out-dir", PathBuf::from("compare"))?,
            seed: f.pick(a.seed, "seed", 0)?,
            plots: f.pick(a.plots, "plots", false)?,
        })
    }
}

fn read_summary(p: &Path) -> CliResult<RunSummary> {
    let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
    Ok(serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?)
}

pub fn compare(s: CompareSettings, manifest: Option<PathBuf>, out: &mut dyn Write) -> CliResult<RunManifest> {
    let (a, b) = (read_summary(&s.a)?, read_summary(&s.b)?);
    let cmp = compare_report(&a, &b).context("summaries are not comparable")?;
    let json_path = s.out_dir.join("comparison.json");
    write_json(&json_path, &cmp)?;
    let csv_path = s.out_dir.join("per_class.csv");
    write_file(&csv_path, cmp.per_class_csv().as_bytes())?;

    let mut m = new_manifest("compare", s.seed, &s)?;
    m.inputs.insert("a".into(), hashed(&s.a)?);
    m.inputs.insert("b".into(), hashed(&s.b)?);
    m.outputs.insert("comparison".into(), hashed(&json_path)?);
    m.outputs.insert("per_class".into(), hashed(&csv_path)?);
    if s.plots && !cmp.curves.is_empty() {
        let epochs = cmp.curves.len().max(2) as f64;
        let series = |pick: &dyn Fn(&crate::evaluation::CurvePoint) -> Option<f64>| -> Vec<(f64, f64)> {
            cmp.curves
                .iter()
                .filter_map(|c| pick(c).map(|v| (c.epoch as f64, v)))
                .collect()
        };
        let acc = svg::line_chart(
            "Validation accuracy",
            "epoch",
            "accuracy",
            (1.0, epochs),
            (0.0, 1.0),
            &[
                svg::Series { name: &cmp.model_a, points: series(&|c| c.val_accuracy_a) },
                svg::Series { name: &cmp.model_b, points: series(&|c| c.val_accuracy_b) },
            ],
        );
        let (la, lb) = (series(&|c| c.train_loss_a), series(&|c| c.train_loss_b));
        let max_loss = la.iter().chain(&lb).map(|p| p.1).fold(1e-3_f64, f64::max);
        let loss = svg::line_chart(
            "Training loss",
            "epoch",
            "cross-entropy",
            (1.0, epochs),
            (0.0, max_loss * 1.05),
            &[
                svg::Series { name: &cmp.model_a, points: la },
                svg::Series { name: &cmp.model_b, points: lb },
            ],
        );
        let (acc_path, loss_path) = (s.out_dir.join("val_accuracy.svg"), s.out_dir.join("train_loss.svg"));
        write_file(&acc_path, acc.as_bytes())?;
        write_file(&loss_path, loss.as_bytes())?;
        m.outputs.insert("accuracy_plot".into(), hashed(&acc_path)?);
        m.outputs.insert("loss_plot".into(), hashed(&loss_path)?);
    }

    let table = cmp.render_table();
    write!(out, "{table}").context("writing to stdout")?;
    let results = serde_json::json!({
        "model_a": cmp.model_a,
        "model_b": cmp.model_b,
        "accuracy_delta": cmp.accuracy_delta,
        "micro_auc_delta": cmp.micro_auc_delta,
        "macro_auc_delta": cmp.macro_auc_delta,
    });
    finish(m, results, &manifest.unwrap_or_else(|| s.out_dir.join("manifest.json")))
}

// ---------------------------------------------------------------- bench

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSettings {
    pub variant: BenchVariant,
    pub model: Option<PathBuf>,
    pub iterations: usize,
    pub warmup: usize,
    pub float: FloatWidth,
    pub seed: u64,
    pub out: PathBuf,
}

impl BenchSettings {
    pub fn resolve(a: &BenchArgs, f: &ConfigFile) -> CliResult<Self> {
        let variant = match (a.variant, f.raw("variant")) {
            (Some(v), _) => v,
            (None, None) => BenchVariant::Both,
            (None, Some(raw)) => match raw {
                "both" => BenchVariant::Both,
                other => match other.parse::<Variant>().map_err(usage)? {
                    Variant::MlaGru => BenchVariant::MlaGru,
                    Variant::ClassicalGru => BenchVariant::ClassicalGru,
                },
            },
        };
        let s = BenchSettings {
            variant,
            model: f.pick_opt(a.model.clone(), "model")?,
            iterations: f.pick(a.iterations, "iterations", 200)?,
            warmup: f.pick(a.warmup, "warmup", 10)?,
            float: pick_float(a.float, f, FloatWidth::F32)?,
            seed: f.pick(a.seed, "seed", 0)?,
            out: f.pick(a.out.clone(), "out", PathBuf::from("bench.json"))?,
        };
        if s.iterations < engine::bench::MIN_ITERATIONS {
            return Err(usage(format!(
                "--iterations must be at least {}",
                engine::bench::MIN_ITERATIONS
            )));
        }
        if s.warmup < engine::bench::MIN_WARMUP {
            return Err(usage(format!("--warmup must be at least {}", engine::bench::MIN_WARMUP)));
        }
        Ok(s)
    }
}

fn bench_as<T: Real>(s: &BenchSettings) -> CliResult<Vec<engine::BenchReport>> {
    let models: Vec<GestureClassifier<T>> = match &s.model {
        Some(p) => vec![load_model::<T>(p)?],
        None => {
            let variants: &[Variant] = match s.variant {
                BenchVariant::Both => &[Variant::ClassicalGru, Variant::MlaGru],
                BenchVariant::MlaGru => &[Variant::MlaGru],
                BenchVariant::ClassicalGru => &[Variant::ClassicalGru],
            };
            let names = ClassTable::default().names().to_vec();
            variants
                .iter()
                .map(|&v| GestureClassifier::<T>::new(Architecture::standard(v), names.clone(), s.seed))
                .collect::<Result<_, _>>()
                .context("building model")?
        }
    };
    let mut reports = Vec::new();
    for m in &models {
        tracing::info!(model = m.variant().label(), iterations = s.iterations, "benchmarking");
        reports.push(engine::bench(m, s.iterations, s.warmup, s.seed).context("benchmark failed")?);
    }
    Ok(reports)
}

pub fn bench(s: BenchSettings, manifest: Option<PathBuf>, out: &mut dyn Write) -> CliResult<RunManifest> {
    let reports = match s.float {
        FloatWidth::F32 => bench_as::<f32>(&s)?,
        FloatWidth::F64 => bench_as::<f64>(&s)?,
    };
    write_json(&s.out, &reports)?;
    write!(out, "{}", engine::render_bench_table(&reports)).context("writing to stdout")?;

    let mut m = new_manifest("bench", s.seed, &s)?;
    if let Some(p) = &s.model {
        m.inputs.insert("model".into(), hashed(p)?);
    }
    m.outputs.insert("report".into(), Artifact::unhashed(&s.out));
    let results: Vec<_> = reports
        .iter()
        .map(|r| {
            serde_json::json!({
                "model": r.model,
                "float_bits": r.float_bits,
                "mean_ms": r.mean_ms,
                "throughput_sps": r.throughput_sps,
            })
        })
        .collect();
    finish(m, results, &manifest.unwrap_or_else(|| sibling(&s.out, ".manifest.json")))
}

// ---------------------------------------------------------------- serve

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServeSettings {
    pub model: PathBuf,
    pub classes: Option<PathBuf>,
    pub audio_dir: PathBuf,
    pub listen: String,
    pub threshold: f64,
    pub stride: usize,
    pub queue_capacity: usize,
    pub seed: u64,
}

impl ServeSettings {
    pub fn resolve(a: &ServeArgs, f: &ConfigFile) -> CliResult<Self> {
        let s = ServeSettings {
            model: required(f.pick_opt(a.model.clone(), "model")?, "model")?,
            classes: f.pick_opt(a.classes.clone(), "classes")?,
            audio_dir: f.pick(a.audio_dir.clone(), "audio-dir", PathBuf::from("sounds"))?,
            listen: f.pick(a.listen.clone(), "listen", "127.0.0.1:7878".to_owned())?,
            threshold: f.pick(a.threshold, "threshold", DEFAULT_THRESHOLD)?,
            stride: f.pick(a.stride, "stride", DEFAULT_STRIDE as u64)? as usize,
            queue_capacity: f.pick(a.queue_capacity, "queue-capacity", 256u64)? as usize,
            seed: f.pick(a.seed, "seed", 0)?,
        };
        check_unit("threshold", s.threshold)?;
        if s.stride == 0 || s.queue_capacity == 0 {
            return Err(usage("--stride and --queue-capacity must be at least 1"));
        }
        Ok(s)
    }
}

pub fn serve(s: ServeSettings, manifest: Option<PathBuf>, out: &mut dyn Write) -> CliResult<RunManifest> {
    let model = Arc::new(load_model::<f32>(&s.model)?);
    let table = Arc::new(class_table(s.classes.as_deref(), &s.audio_dir)?);
    let config = ServeConfig {
        threshold: s.threshold,
        stride: s.stride,
        queue_capacity: s.queue_capacity,
    };
    let server = Server::bind(s.listen.as_str(), model, table, config).context("cannot start server")?;
    let addr = server.local_addr().context("reading bound address")?;
    if let Err(e) = ctrlc::set_handler(|| SHUTDOWN.store(true, Ordering::SeqCst)) {
        tracing::warn!(error = %e, "no interrupt handler installed");
    }
    tracing::info!(%addr, "listening");
    emit_json(out, &serde_json::json!({"listening": addr.to_string()}))?;
    let stats = server.run(&SHUTDOWN).context("server failed")?;

    let mut m = new_manifest("serve", s.seed, &s)?;
    m.inputs.insert("model".into(), hashed(&s.model)?);
    if let Some(c) = &s.classes {
        m.inputs.insert("classes".into(), hashed(c)?);
    }
    finish(m, stats, &manifest.unwrap_or_else(|| PathBuf::from("serve.manifest.json")))
}

// ---------------------------------------------------------------- predict

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictSettings {
    pub model: PathBuf,
    pub data: PathBuf,
    pub classes: Option<PathBuf>,
    pub audio_dir: PathBuf,
    pub threshold: f64,
    pub stride: usize,
    pub float: FloatWidth,
    pub seed: u64,
    pub out: PathBuf,
}

impl PredictSettings {
    pub fn resolve(a: &PredictArgs, f: &ConfigFile) -> CliResult<Self> {
        let s = PredictSettings {
            model: required(f.pick_opt(a.model.clone(), "model")?, "model")?,
            data: required(f.pick_opt(a.data.clone(), "data")?, "data")?,
            classes: f.pick_opt(a.classes.clone(), "classes")?,
            audio_dir: f.pick(a.audio_dir.clone(), "audio-dir", PathBuf::from("sounds"))?,
            threshold: f.pick(a.threshold, "threshold", DEFAULT_THRESHOLD)?,
            stride: f.pick(a.stride, "stride", DEFAULT_STRIDE as u64)? as usize,
            float: pick_float(a.float, f, FloatWidth::F32)?,
            seed: f.pick(a.seed, "seed", 0)?,
            out: f.pick(a.out.clone(), "out", PathBuf::from("events.jsonl"))?,
        };
        check_unit("threshold", s.threshold)?;
        if s.stride == 0 {
            return Err(usage("--stride must be at least 1"));
        }
        Ok(s)
    }
}

#[derive(Debug, Clone, Default, Serialize)]
struct PredictCounts {
    frames: u64,
    predictions: u64,
    events: u64,
}

fn predict_as<T: Real>(
    s: &PredictSettings,
    table: Arc<ClassTable>,
    frames: Vec<LandmarkFrame>,
) -> CliResult<(Vec<NoteEvent>, PredictCounts)> {
    let model = Arc::new(load_model::<T>(&s.model)?);
    let mut engine = Engine::new(model, table, s.threshold, s.stride).context("cannot start engine")?;
    let mut events = Vec::new();
    for frame in frames {
        if let Ingest::Event(mut ev) = engine.ingest(frame).context("inference failed")? {
            // Offline streams have no capture clock; stamp with nominal stream time.
            ev.timestamp_us = (ev.frame - 1) * 1_000_000 / NOMINAL_FPS;
            events.push(ev);
        }
    }
    let st = engine.stats();
    Ok((
        events,
        PredictCounts {
            frames: st.frames,
            predictions: st.predictions,
            events: st.events,
        },
    ))
}

pub fn predict(s: PredictSettings, manifest: Option<PathBuf>, out: &mut dyn Write) -> CliResult<RunManifest> {
    let ds = load_dataset(&s.data).with_context(|| format!("loading dataset {}", s.data.display()))?;
    let frames: Vec<LandmarkFrame> = ds.samples.iter().flat_map(|q| q.frames().iter().cloned()).collect();
    let table = Arc::new(class_table(s.classes.as_deref(), &s.audio_dir)?);
    let (events, counts) = match s.float {
        FloatWidth::F32 => predict_as::<f32>(&s, table, frames)?,
        FloatWidth::F64 => predict_as::<f64>(&s, table, frames)?,
    };
    let mut lines = String::new();
    for ev in &events {
        lines.push_str(&serde_json::to_string(ev).context("serializing event")?);
        lines.push('\n');
    }
    write_file(&s.out, lines.as_bytes())?;
    out.write_all(lines.as_bytes()).context("writing to stdout")?;
    out.flush().context("writing to stdout")?;

    let mut m = new_manifest("predict", s.seed, &s)?;
    m.inputs.insert("model".into(), hashed(&s.model)?);
    m.inputs.insert("data".into(), hashed(&s.data)?);
    if let Some(c) = &s.classes {
        m.inputs.insert("classes".into(), hashed(c)?);
    }
    m.outputs.insert("events".into(), hashed(&s.out)?);
    finish(m, counts, &manifest.unwrap_or_else(|| sibling(&s.out, ".manifest.json")))
}

// ---------------------------------------------------------------- classes

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassesSettings {
    pub audio_dir: PathBuf,
    pub out: PathBuf,
    pub seed: u64,
}

impl ClassesSettings {
    pub fn resolve(a: &ClassesArgs, f: &ConfigFile) -> CliResult<Self> {
        Ok(ClassesSettings {
            audio_dir: f.pick(a.audio_dir.clone(), "audio-dir", PathBuf::from("sounds"))?,
            out: f.pick(a.out.clone(), "out", PathBuf::from("classes.tsv"))?,
            seed: f.pick(a.seed, "seed", 0)?,
        })
    }
}

pub fn classes(s: ClassesSettings, manifest: Option<PathBuf>, out: &mut dyn Write) -> CliResult<RunManifest> {
    let text = ClassTable::canonical(&s.audio_dir).to_manifest();
    write_file(&s.out, text.as_bytes())?;
    write!(out, "{text}").context("writing to stdout")?;
    let mut m = new_manifest("classes", s.seed, &s)?;
    m.outputs.insert("classes".into(), hashed(&s.out)?);
    finish(m, serde_json::json!({"classes": NUM_CLASSES}), &manifest.unwrap_or_else(|| sibling(&s.out, ".manifest.json")))
}

// ---------------------------------------------------------------- rerun

fn settings<T: DeserializeOwned>(m: &RunManifest) -> CliResult<T> {
    Ok(serde_json::from_value(m.settings.clone()).context("manifest settings do not match this version")?)
}

/// Outputs whose recorded hash differs between two manifests.
fn mismatches(old: &RunManifest, new: &RunManifest) -> Vec<String> {
    old.outputs
        .iter()
        .filter(|(_, a)| a.sha256.is_some())
        .filter(|(k, a)| new.outputs.get(*k).map(|b| &b.sha256) != Some(&a.sha256))
        .map(|(k, _)| k.clone())
        .collect()
}

pub fn rerun(path: &Path, write_to: Option<PathBuf>, out: &mut dyn Write) -> CliResult<()> {
    let old = RunManifest::load(path).with_context(|| format!("reading manifest {}", path.display()))?;
    for (name, a) in &old.inputs {
        let Some(want) = &a.sha256 else { continue };
        let have = sha256_file(Path::new(&a.path)).ok();
        if have.as_ref() != Some(want) {
            tracing::warn!(input = %name, path = %a.path, "input differs from the recorded run");
        }
    }
    let target = Some(write_to.unwrap_or_else(|| path.to_owned()));
    let mut sink = Vec::new();
    let new = match old.subcommand.as_str() {
        "synth-data" => synth(settings(&old)?, target, &mut sink)?,
        "train" => train(settings(&old)?, target, &mut sink)?,
        "eval" => eval(settings(&old)?, target, &mut sink)?,
        "compare" => compare(settings(&old)?, target, &mut sink)?,
        "bench" => bench(settings(&old)?, target, &mut sink)?,
        "predict" => predict(settings(&old)?, target, &mut sink)?,
        "classes" => classes(settings(&old)?, target, &mut sink)?,
        "serve" => serve(settings(&old)?, target, &mut sink)?,
        other => return Err(anyhow!("manifest names unknown subcommand `{other}`").into()),
    };
    out.write_all(&sink).context("writing to stdout")?;
    let diff = mismatches(&old, &new);
    if !diff.is_empty() {
        return Err(anyhow!("rerun did not reproduce: {}", diff.join(", ")).into());
    }
    tracing::info!(subcommand = %old.subcommand, "rerun reproduced every hashed output");
    Ok(())
}
