//! Subcommand implementations.
//!
//! Every stage reads upstream artifacts from the layout, writes its own
//! outputs plus a manifest (config hash, seed, input and output content
//! hashes), and never touches anything another stage produced. Missing
//! upstream artifacts surface as `CliError::MissingArtifact` so the binary
//! can exit with the dedicated code.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use evgest_core::eval::{
    bench_latency, match_and_score, score_units, sliding_inference, ConfusionMatrix, EvalError,
    LatencyStats, MetricsReport, TrialRecord, UnitScore,
};
use evgest_core::events::evt2;
use evgest_core::model::net::infer;
use evgest_core::model::{EpochMetrics, ModelConfig, Parameters};
use evgest_core::quant::{
    calibrate, integer_forward, load_quantized, prepare_quantized, save_quantized, QuantState,
    QuantizedParameters,
};
use evgest_core::surface::{build_time_surface, TimeSurface};
use evgest_core::window::slice_windows;
use evgest_core::GestureClass;

use crate::artifacts::{
    hash_tree, require, sha256_file, write_json, write_npy, CliError, Layout, Manifest,
};
use crate::config::PipelineConfig;
use crate::dataset::{
    self, class_histogram, dataset_script, extract_windows, generate_sequence, load_samples,
    read_windows_jsonl, surface_tensor, trial_prompt, trial_script, write_windows_jsonl,
    EncodedWindow, SequenceMeta, TrialMeta, ALL_SPLITS, SPLIT_TRAIN, SPLIT_TRAIN_ROT,
    SPLIT_TRIALS, SPLIT_TRIALS_ROT, SPLIT_VAL,
};

/// Spacing between trials when a unit's independent 2 s recordings are laid
/// onto one scoring timeline; leaves a half-second gap after each match
/// window so trials can never overlap.
const TRIAL_SPACING_NS: u64 = 2_500_000_000;

/// Splits that get window-label encoding (trial splits are consumed raw by
/// `evaluate`).
const ENCODED_SPLITS: [&str; 3] = [SPLIT_TRAIN, SPLIT_VAL, SPLIT_TRAIN_ROT];

fn manifest(
    config: &PipelineConfig,
    subcommand: &str,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
) -> Manifest {
    Manifest {
        subcommand: subcommand.to_string(),
        config_hash: config.content_hash(),
        seed: config.seed,
        inputs,
        outputs,
    }
}

fn ensure_parent(path: &Path) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .map_err(|e| CliError::Failure(format!("cannot create {}: {e}", parent.display())))?;
    }
    Ok(())
}

fn hash_entry(
    map: &mut BTreeMap<String, String>,
    layout: &Layout,
    path: &Path,
) -> Result<(), CliError> {
    let rel = path
        .strip_prefix(&layout.root)
        .unwrap_or(path)
        .to_string_lossy()
        .into_owned();
    map.insert(rel, sha256_file(path)?);
    Ok(())
}

// ---------------------------------------------------------------------------
// simulate

fn split_count(config: &PipelineConfig, split: &str) -> usize {
    match split {
        SPLIT_TRAIN => config.train_sequences(),
        SPLIT_VAL => config.val_sequences(),
        SPLIT_TRAIN_ROT => config.finetune_sequences(),
        _ => config.dataset.trial_units * config.dataset.trials_per_unit,
    }
}

fn simulate_split(
    config: &PipelineConfig,
    layout: &Layout,
    split: &str,
) -> Result<usize, CliError> {
    let dir = layout.data_split(split);
    if dir.exists() {
        std::fs::remove_dir_all(&dir)
            .map_err(|e| CliError::Failure(format!("cannot clear {}: {e}", dir.display())))?;
    }
    let rotated = matches!(split, SPLIT_TRAIN_ROT | SPLIT_TRIALS_ROT);
    let trial_split = matches!(split, SPLIT_TRIALS | SPLIT_TRIALS_ROT);
    let count = split_count(config, split);
    for index in 0..count {
        let seed = dataset::derive_seed(config.seed, split, index as u64);
        if trial_split {
            let unit = index / config.dataset.trials_per_unit;
            let trial = index % config.dataset.trials_per_unit;
            let prompt = trial_prompt(trial);
            let script = trial_script(config, prompt, seed)?;
            let generated = generate_sequence(config, seed, rotated, &script)?;
            let meta = TrialMeta {
                unit,
                trial,
                seed,
                prompt_code: prompt.code(),
                prompt_ns: 0,
                duration_ns: generated.stream.duration_ns(),
                rotation_deg: generated.rotation_deg,
            };
            let dir = layout.trial_dir(split, unit, trial);
            dataset::write_sequence_files(&dir, &generated, "trial.json", &meta)?;
        } else {
            let script = dataset_script(config, seed)?;
            let generated = generate_sequence(config, seed, rotated, &script)?;
            let meta = SequenceMeta {
                index,
                seed,
                width: config.scene.width,
                height: config.scene.height,
                duration_ns: generated.stream.duration_ns(),
                event_count: generated.stream.events().len(),
                rotation_deg: generated.rotation_deg,
            };
            let dir = layout.sequence_dir(split, index);
            dataset::write_sequence_files(&dir, &generated, "seq.json", &meta)?;
        }
    }
    Ok(count)
}

pub fn run_simulate(config: &PipelineConfig, only: Option<&str>) -> Result<(), CliError> {
    let layout = Layout::new(&config.out_dir);
    let splits: Vec<&str> = match only {
        Some(name) => {
            if !ALL_SPLITS.contains(&name) {
                return Err(CliError::Config(format!(
                    "unknown split {name:?}; expected one of {ALL_SPLITS:?}"
                )));
            }
            vec![name]
        }
        None => ALL_SPLITS.to_vec(),
    };
    let mut outputs = BTreeMap::new();
    for split in splits {
        let start = Instant::now();
        let count = simulate_split(config, &layout, split)?;
        println!(
            "simulate: {split}: {count} sequences ({:.1}s)",
            start.elapsed().as_secs_f64()
        );
        outputs.extend(hash_tree(&layout.root, &layout.data_split(split))?);
    }
    manifest(config, "simulate", BTreeMap::new(), outputs).write(&layout)
}

// ---------------------------------------------------------------------------
// encode

#[derive(Debug, Serialize, Deserialize)]
pub struct EncodeStats {
    pub sequences: usize,
    pub windows: usize,
    pub hand_fraction: f64,
    pub classes: BTreeMap<String, usize>,
}

fn encode_split(
    config: &PipelineConfig,
    layout: &Layout,
    split: &str,
    dump_surfaces: bool,
) -> Result<EncodeStats, CliError> {
    let seq_dirs = dataset::split_sequence_dirs(&layout.root, split)?;
    let mut records: Vec<EncodedWindow> = Vec::new();
    for seq_rel in &seq_dirs {
        let dir = layout.root.join(seq_rel);
        let stream = evt2::read_file(dir.join("events.evt2")).map_err(CliError::failure)?;
        let annotations = evgest_core::synth::read_labels_jsonl(dir.join("labels.jsonl"))
            .map_err(CliError::failure)?;
        let windows = extract_windows(config, seq_rel, stream.duration_ns(), &annotations)?;
        if dump_surfaces {
            let grid = slice_windows(stream.duration_ns(), &config.window)
                .map_err(CliError::failure)?;
            let mut data =
                Vec::with_capacity(grid.len() * 2 * config.scene.height * config.scene.width);
            for w in &grid {
                let surface = build_time_surface(&stream, w.end_ns, &config.window)
                    .map_err(CliError::failure)?;
                data.extend_from_slice(surface.values().as_slice());
            }
            let name = dir
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| "seq".into());
            write_npy(
                &layout.surface_dump_dir(split).join(format!("{name}.npy")),
                &[grid.len(), 2, config.scene.height, config.scene.width],
                &data,
            )?;
        }
        records.extend(windows);
    }
    let stats = EncodeStats {
        sequences: seq_dirs.len(),
        windows: records.len(),
        hand_fraction: records.iter().filter(|r| r.hand).count() as f64
            / records.len().max(1) as f64,
        classes: class_histogram(&records),
    };
    write_windows_jsonl(&layout.encoded(split), &records)?;
    write_json(&layout.encoded_stats(split), &stats)?;
    Ok(stats)
}

pub fn run_encode(config: &PipelineConfig, dump_surfaces: bool) -> Result<(), CliError> {
    let layout = Layout::new(&config.out_dir);
    require(&layout.manifest("simulate"), "simulate")?;
    let mut inputs = BTreeMap::new();
    hash_entry(&mut inputs, &layout, &layout.manifest("simulate"))?;
    let mut outputs = BTreeMap::new();
    for split in ENCODED_SPLITS {
        require(&layout.data_split(split), "simulate")?;
        let start = Instant::now();
        let stats = encode_split(config, &layout, split, dump_surfaces)?;
        println!(
            "encode: {split}: {} windows from {} sequences, hand {:.3} ({:.1}s)",
            stats.windows,
            stats.sequences,
            stats.hand_fraction,
            start.elapsed().as_secs_f64()
        );
        hash_entry(&mut outputs, &layout, &layout.encoded(split))?;
        hash_entry(&mut outputs, &layout, &layout.encoded_stats(split))?;
        if dump_surfaces {
            outputs.extend(hash_tree(&layout.root, &layout.surface_dump_dir(split))?);
        }
    }
    manifest(config, "encode", inputs, outputs).write(&layout)
}

// ---------------------------------------------------------------------------
// train / finetune / qat

#[derive(Debug, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub gesture_loss: f32,
    pub bbox_loss: f32,
    pub presence_loss: f32,
    pub total_loss: f32,
    pub accuracy: f64,
}

// Wall time is printed but kept out of the report so same-seed runs write
// byte-identical artifacts.
#[derive(Debug, Serialize, Deserialize)]
pub struct TrainReport {
    pub stage: String,
    pub samples: usize,
    pub epochs: Vec<EpochRow>,
}

fn epoch_rows(history: &[EpochMetrics]) -> Vec<EpochRow> {
    history
        .iter()
        .enumerate()
        .map(|(i, m)| EpochRow {
            epoch: i + 1,
            gesture_loss: m.gesture_loss,
            bbox_loss: m.bbox_loss,
            presence_loss: m.presence_loss,
            total_loss: m.total_loss,
            accuracy: m.accuracy,
        })
        .collect()
}

fn print_epochs(stage: &str, rows: &[EpochRow]) {
    for row in rows {
        println!(
            "{stage}: epoch {:2}: loss {:.4} (gesture {:.4}, bbox {:.4}, presence {:.4}), accuracy {:.3}",
            row.epoch, row.total_loss, row.gesture_loss, row.bbox_loss, row.presence_loss,
            row.accuracy
        );
    }
}

fn load_split_samples(
    config: &PipelineConfig,
    layout: &Layout,
    split: &str,
    producer: &'static str,
) -> Result<Vec<evgest_core::model::TrainSample>, CliError> {
    let path = layout.encoded(split);
    require(&path, producer)?;
    let records = read_windows_jsonl(&path)?;
    load_samples(config, &layout.root, &records)
}

fn finish_train_stage(
    config: &PipelineConfig,
    layout: &Layout,
    stage: &str,
    model_name: &str,
    report: &TrainReport,
    inputs: BTreeMap<String, String>,
) -> Result<(), CliError> {
    let report_path = layout.report(&format!("train-{model_name}.json"));
    write_json(&report_path, report)?;
    let mut outputs = BTreeMap::new();
    hash_entry(&mut outputs, layout, &layout.model(model_name))?;
    hash_entry(&mut outputs, layout, &report_path)?;
    manifest(config, stage, inputs, outputs).write(layout)
}

pub fn run_train(config: &PipelineConfig) -> Result<(), CliError> {
    let layout = Layout::new(&config.out_dir);
    require(&layout.encoded(SPLIT_TRAIN), "encode")?;
    let mut inputs = BTreeMap::new();
    hash_entry(&mut inputs, &layout, &layout.encoded(SPLIT_TRAIN))?;
    let samples = load_split_samples(config, &layout, SPLIT_TRAIN, "encode")?;
    println!("train: {} samples loaded", samples.len());
    let mut params = Parameters::init(&config.model, dataset::derive_seed(config.seed, "init", 0))
        .map_err(CliError::failure)?;
    let tcfg = config.train_config(
        config.train.epochs,
        config.train.learning_rate,
        dataset::derive_seed(config.seed, "train-loop", 0),
    );
    let start = Instant::now();
    let history = evgest_core::model::train_epochs(&config.model, &tcfg, &mut params, &samples, None)
        .map_err(CliError::failure)?;
    let report = TrainReport {
        stage: "train".into(),
        samples: samples.len(),
        epochs: epoch_rows(&history),
    };
    print_epochs("train", &report.epochs);
    println!("train: {:.1}s", start.elapsed().as_secs_f64());
    ensure_parent(&layout.model("float"))?;
    params
        .save(&layout.model("float"), &config.model)
        .map_err(CliError::failure)?;
    finish_train_stage(config, &layout, "train", "float", &report, inputs)
}

/// Load a float-family model container, insisting its embedded architecture
/// matches the active configuration.
fn load_float_model(
    config: &PipelineConfig,
    layout: &Layout,
    name: &str,
    producer: &'static str,
) -> Result<Parameters, CliError> {
    let path = layout.model(name);
    require(&path, producer)?;
    let (loaded_config, params) = Parameters::load(&path).map_err(CliError::failure)?;
    if loaded_config != config.model {
        return Err(CliError::Config(format!(
            "model {} was trained with a different architecture; re-run its stage",
            path.display()
        )));
    }
    Ok(params)
}

pub fn run_finetune(config: &PipelineConfig) -> Result<(), CliError> {
    let layout = Layout::new(&config.out_dir);
    let mut inputs = BTreeMap::new();
    let mut params = load_float_model(config, &layout, "float", "train")?;
    hash_entry(&mut inputs, &layout, &layout.model("float"))?;
    let samples = load_split_samples(config, &layout, SPLIT_TRAIN_ROT, "encode")?;
    hash_entry(&mut inputs, &layout, &layout.encoded(SPLIT_TRAIN_ROT))?;
    println!("finetune: {} rotated samples loaded", samples.len());
    let tcfg = config.train_config(
        config.finetune.epochs,
        config.train.learning_rate,
        dataset::derive_seed(config.seed, "finetune-loop", 0),
    );
    let start = Instant::now();
    let history =
        evgest_core::model::finetune_epochs(&config.model, &tcfg, &mut params, &samples, None)
            .map_err(CliError::failure)?;
    let report = TrainReport {
        stage: "finetune".into(),
        samples: samples.len(),
        epochs: epoch_rows(&history),
    };
    print_epochs("finetune", &report.epochs);
    println!("finetune: {:.1}s", start.elapsed().as_secs_f64());
    ensure_parent(&layout.model("finetuned"))?;
    params
        .save(&layout.model("finetuned"), &config.model)
        .map_err(CliError::failure)?;
    finish_train_stage(config, &layout, "finetune", "finetuned", &report, inputs)
}

/// How many calibration passes seed the activation observers before
/// quantization-aware epochs refine them.
const CALIBRATION_SAMPLES: usize = 256;

pub fn run_qat(config: &PipelineConfig, from: &str) -> Result<(), CliError> {
    let layout = Layout::new(&config.out_dir);
    let producer: &'static str = match from {
        "float" => "train",
        "finetuned" => "finetune",
        other => {
            return Err(CliError::Config(format!(
                "qat starts from \"float\" or \"finetuned\", not {other:?}"
            )))
        }
    };
    let mut inputs = BTreeMap::new();
    let mut params = load_float_model(config, &layout, from, producer)?;
    hash_entry(&mut inputs, &layout, &layout.model(from))?;
    let samples = load_split_samples(config, &layout, SPLIT_TRAIN, "encode")?;
    hash_entry(&mut inputs, &layout, &layout.encoded(SPLIT_TRAIN))?;
    println!("qat: {} samples loaded (from {from})", samples.len());

    let mut state = QuantState::new(&config.model);
    let calibration: Vec<_> = samples
        .iter()
        .take(CALIBRATION_SAMPLES)
        .map(|s| s.input.clone())
        .collect();
    calibrate(&config.model, &params, &mut state, &calibration).map_err(CliError::failure)?;

    let tcfg = config.train_config(
        config.qat.epochs,
        config.qat.learning_rate,
        dataset::derive_seed(config.seed, "qat-loop", 0),
    );
    let start = Instant::now();
    let history = evgest_core::model::train_epochs(
        &config.model,
        &tcfg,
        &mut params,
        &samples,
        Some(&mut state),
    )
    .map_err(CliError::failure)?;
    let report = TrainReport {
        stage: "qat".into(),
        samples: samples.len(),
        epochs: epoch_rows(&history),
    };
    print_epochs("qat", &report.epochs);
    println!("qat: {:.1}s", start.elapsed().as_secs_f64());

    let quantized = prepare_quantized(&config.model, &params, &state).map_err(CliError::failure)?;
    ensure_parent(&layout.model("quantized"))?;
    save_quantized(&layout.model("quantized"), &quantized).map_err(CliError::failure)?;
    let report_path = layout.report("train-qat.json");
    write_json(&report_path, &report)?;
    let mut outputs = BTreeMap::new();
    hash_entry(&mut outputs, &layout, &layout.model("quantized"))?;
    hash_entry(&mut outputs, &layout, &report_path)?;
    manifest(config, "qat", inputs, outputs).write(&layout)
}

// ---------------------------------------------------------------------------
// evaluate

enum LoadedModel {
    Float {
        config: ModelConfig,
        params: Parameters,
    },
    Quantized(Box<QuantizedParameters>),
}

impl LoadedModel {
    fn load(config: &PipelineConfig, layout: &Layout, name: &str) -> Result<Self, CliError> {
        match name {
            "float" => Ok(LoadedModel::Float {
                config: config.model.clone(),
                params: load_float_model(config, layout, "float", "train")?,
            }),
            "finetuned" => Ok(LoadedModel::Float {
                config: config.model.clone(),
                params: load_float_model(config, layout, "finetuned", "finetune")?,
            }),
            "quantized" => {
                let path = layout.model("quantized");
                require(&path, "qat")?;
                let qp = load_quantized(&path).map_err(CliError::failure)?;
                if qp.config != config.model {
                    return Err(CliError::Config(format!(
                        "model {} was trained with a different architecture; re-run qat",
                        path.display()
                    )));
                }
                Ok(LoadedModel::Quantized(Box::new(qp)))
            }
            other => Err(CliError::Config(format!(
                "unknown model {other:?}; expected float, finetuned, or quantized"
            ))),
        }
    }

    fn combined(&self, surface: &TimeSurface) -> Result<Vec<f64>, EvalError> {
        let input = surface_tensor(surface);
        let output = match self {
            LoadedModel::Float { config, params } => {
                infer(config, params, &input).map_err(|e| EvalError::Inference(e.to_string()))?
            }
            LoadedModel::Quantized(qp) => integer_forward(&qp.config, qp, &input)
                .map_err(|e| EvalError::Inference(e.to_string()))?,
        };
        Ok(output.combined.iter().map(|&p| p as f64).collect())
    }
}

fn argmax(values: &[f32]) -> usize {
    values
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .expect("probabilities are non-empty")
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub split: String,
    pub units: usize,
    pub trials: usize,
    pub metrics: MetricsReport,
    /// Average class-wise precision over the encoded validation windows,
    /// never-predicted classes excluded.
    pub val_average_precision: f64,
    pub confusion_csv: String,
}

/// Score one unit: its trials laid on a shared timeline with disjoint
/// match windows.
fn score_unit(
    config: &PipelineConfig,
    model: &LoadedModel,
    trial_dirs: &[std::path::PathBuf],
) -> Result<(UnitScore, usize), CliError> {
    let mut predictions = Vec::new();
    let mut trials = Vec::new();
    for (k, dir) in trial_dirs.iter().enumerate() {
        let meta: TrialMeta = crate::artifacts::read_json(&dir.join("trial.json"))?;
        let stream = evt2::read_file(dir.join("events.evt2")).map_err(CliError::failure)?;
        let offset = k as u64 * TRIAL_SPACING_NS;
        let events = sliding_inference(
            &stream,
            &config.window,
            config.eval.emit_threshold,
            |surface| model.combined(surface),
        )
        .map_err(CliError::failure)?;
        for mut event in events {
            event.t_ns += offset;
            predictions.push(event);
        }
        trials.push(TrialRecord {
            prompt: GestureClass::from_code(meta.prompt_code).map_err(CliError::failure)?,
            prompt_ns: meta.prompt_ns + offset,
        });
    }
    let count = trials.len();
    let score = match_and_score(&predictions, &trials, config.eval.match_window_ns)
        .map_err(CliError::failure)?;
    Ok((score, count))
}

/// Windowed-classification confusion over the encoded validation split.
fn validation_confusion(
    config: &PipelineConfig,
    layout: &Layout,
    model: &LoadedModel,
) -> Result<ConfusionMatrix, CliError> {
    let records = read_windows_jsonl(&layout.encoded(SPLIT_VAL))?;
    let samples = load_samples(config, &layout.root, &records)?;
    let mut pairs = Vec::with_capacity(samples.len());
    for sample in &samples {
        let combined = match model {
            LoadedModel::Float { config, params } => {
                infer(config, params, &sample.input)
                    .map_err(CliError::failure)?
                    .combined
            }
            LoadedModel::Quantized(qp) => integer_forward(&qp.config, qp, &sample.input)
                .map_err(CliError::failure)?
                .combined,
        };
        let predicted = GestureClass::from_code(argmax(&combined) as u8 + 1)
            .map_err(CliError::failure)?;
        pairs.push((sample.class, predicted));
    }
    Ok(ConfusionMatrix::from_pairs(&pairs))
}

pub fn run_evaluate(config: &PipelineConfig, model_name: &str, split: &str) -> Result<(), CliError> {
    if split != SPLIT_TRIALS && split != SPLIT_TRIALS_ROT {
        return Err(CliError::Config(format!(
            "unknown trial split {split:?}; expected {SPLIT_TRIALS} or {SPLIT_TRIALS_ROT}"
        )));
    }
    let layout = Layout::new(&config.out_dir);
    let model = LoadedModel::load(config, &layout, model_name)?;
    require(&layout.data_split(split), "simulate")?;
    require(&layout.encoded(SPLIT_VAL), "encode")?;

    let mut inputs = BTreeMap::new();
    hash_entry(&mut inputs, &layout, &layout.model(model_name))?;
    hash_entry(&mut inputs, &layout, &layout.encoded(SPLIT_VAL))?;
    if layout.manifest("simulate").exists() {
        hash_entry(&mut inputs, &layout, &layout.manifest("simulate"))?;
    }

    let start = Instant::now();
    let units = dataset::split_trial_dirs(&layout.root, split)?;
    let mut scores = Vec::with_capacity(units.len());
    let mut trial_count = 0;
    for trial_dirs in &units {
        let (score, count) = score_unit(config, &model, trial_dirs)?;
        scores.push(score);
        trial_count += count;
    }
    let metrics = score_units(&scores);

    let confusion = validation_confusion(config, &layout, &model)?;
    let csv_path = layout.report(&format!("confusion-{model_name}-{split}.csv"));
    ensure_parent(&csv_path)?;
    std::fs::write(&csv_path, confusion.to_csv()).map_err(CliError::failure)?;

    let report = EvalReport {
        model: model_name.to_string(),
        split: split.to_string(),
        units: units.len(),
        trials: trial_count,
        metrics,
        val_average_precision: confusion.average_precision(),
        confusion_csv: csv_path
            .strip_prefix(&layout.root)
            .unwrap_or(&csv_path)
            .to_string_lossy()
            .into_owned(),
    };
    let report_path = layout.report(&format!("evaluate-{model_name}-{split}.json"));
    write_json(&report_path, &report)?;

    for family in &report.metrics.families {
        println!(
            "evaluate: {model_name}/{split}: {}: f1 {:.3} (tp {} fp {} fn {})",
            family.family, family.f1, family.counts.tp, family.counts.fp, family.counts.fn_
        );
    }
    println!(
        "evaluate: {model_name}/{split}: mean f1 {:.3}, median {:.3}, val precision {:.3} ({:.1}s)",
        report.metrics.mean_f1,
        report.metrics.median_f1,
        report.val_average_precision,
        start.elapsed().as_secs_f64()
    );

    let mut outputs = BTreeMap::new();
    hash_entry(&mut outputs, &layout, &report_path)?;
    hash_entry(&mut outputs, &layout, &csv_path)?;
    manifest(
        config,
        &format!("evaluate-{model_name}-{split}"),
        inputs,
        outputs,
    )
    .write(&layout)
}

// ---------------------------------------------------------------------------
// bench

#[derive(Debug, Serialize, Deserialize)]
pub struct BenchReport {
    pub iterations: usize,
    pub float: LatencyStats,
    pub integer: LatencyStats,
    /// Float mean latency over integer mean latency.
    pub speedup: f64,
}

pub fn run_bench(config: &PipelineConfig, iterations: Option<usize>) -> Result<(), CliError> {
    let layout = Layout::new(&config.out_dir);
    let iterations = iterations.unwrap_or(config.bench.iterations);
    if iterations < 100 {
        return Err(CliError::Config(format!(
            "bench iterations must be >= 100, got {iterations}"
        )));
    }
    let float_params = load_float_model(config, &layout, "float", "train")?;
    let quantized_path = layout.model("quantized");
    require(&quantized_path, "qat")?;
    let quantized = load_quantized(&quantized_path).map_err(CliError::failure)?;
    require(&layout.encoded(SPLIT_VAL), "encode")?;
    let records = read_windows_jsonl(&layout.encoded(SPLIT_VAL))?;
    if records.is_empty() {
        return Err(CliError::Failure("validation split has no windows".into()));
    }
    let sample = load_samples(config, &layout.root, &records[..1])?
        .pop()
        .expect("one record loaded");

    let input = sample.input;
    let float = bench_latency(
        || {
            infer(&config.model, &float_params, &input).expect("float inference");
        },
        iterations,
    );
    let integer = bench_latency(
        || {
            integer_forward(&quantized.config, &quantized, &input).expect("integer inference");
        },
        iterations,
    );
    let report = BenchReport {
        iterations,
        speedup: float.mean_ns / integer.mean_ns,
        float,
        integer,
    };
    println!(
        "bench: float mean {:.2}ms p50 {:.2}ms p99 {:.2}ms",
        report.float.mean_ns / 1e6,
        report.float.p50_ns as f64 / 1e6,
        report.float.p99_ns as f64 / 1e6
    );
    println!(
        "bench: integer mean {:.2}ms p50 {:.2}ms p99 {:.2}ms ({:.2}x)",
        report.integer.mean_ns / 1e6,
        report.integer.p50_ns as f64 / 1e6,
        report.integer.p99_ns as f64 / 1e6,
        report.speedup
    );

    let report_path = layout.report("bench.json");
    write_json(&report_path, &report)?;
    let mut inputs = BTreeMap::new();
    hash_entry(&mut inputs, &layout, &layout.model("float"))?;
    hash_entry(&mut inputs, &layout, &quantized_path)?;
    let mut outputs = BTreeMap::new();
    hash_entry(&mut outputs, &layout, &report_path)?;
    manifest(config, "bench", inputs, outputs).write(&layout)
}

// ---------------------------------------------------------------------------
// report

fn report_train_section(out: &mut String, path: &Path) {
    let Ok(report) = crate::artifacts::read_json::<TrainReport>(path) else {
        return;
    };
    let _ = writeln!(out, "{}:", report.stage);
    let _ = writeln!(out, "  samples: {}", report.samples);
    if let (Some(first), Some(last)) = (report.epochs.first(), report.epochs.last()) {
        let _ = writeln!(
            out,
            "  loss {:.4} -> {:.4}, accuracy {:.3} -> {:.3} over {} epochs",
            first.total_loss,
            last.total_loss,
            first.accuracy,
            last.accuracy,
            report.epochs.len()
        );
    }
}

fn report_eval_section(out: &mut String, path: &Path) {
    let Ok(report) = crate::artifacts::read_json::<EvalReport>(path) else {
        return;
    };
    let _ = writeln!(out, "evaluate {} on {}:", report.model, report.split);
    for family in &report.metrics.families {
        let _ = writeln!(
            out,
            "  {}: f1 {:.3} (tp {} fp {} fn {})",
            family.family, family.f1, family.counts.tp, family.counts.fp, family.counts.fn_
        );
    }
    let _ = writeln!(
        out,
        "  mean f1 {:.3}, median {:.3} over {} units / {} trials",
        report.metrics.mean_f1, report.metrics.median_f1, report.units, report.trials
    );
    let _ = writeln!(
        out,
        "  validation average precision: {:.3}",
        report.val_average_precision
    );
}

fn report_bench_section(out: &mut String, path: &Path) {
    let Ok(report) = crate::artifacts::read_json::<BenchReport>(path) else {
        return;
    };
    let _ = writeln!(out, "bench ({} iterations):", report.iterations);
    let _ = writeln!(
        out,
        "  float:   mean {:.2}ms p50 {:.2}ms p99 {:.2}ms",
        report.float.mean_ns / 1e6,
        report.float.p50_ns as f64 / 1e6,
        report.float.p99_ns as f64 / 1e6
    );
    let _ = writeln!(
        out,
        "  integer: mean {:.2}ms p50 {:.2}ms p99 {:.2}ms ({:.2}x)",
        report.integer.mean_ns / 1e6,
        report.integer.p50_ns as f64 / 1e6,
        report.integer.p99_ns as f64 / 1e6,
        report.speedup
    );
}

fn encode_stats_section(out: &mut String, layout: &Layout) {
    let mut lines = Vec::new();
    for split in ENCODED_SPLITS {
        if let Ok(stats) = crate::artifacts::read_json::<EncodeStats>(&layout.encoded_stats(split))
        {
            lines.push(format!(
                "  {split}: {} windows from {} sequences, hand fraction {:.3}",
                stats.windows, stats.sequences, stats.hand_fraction
            ));
        }
    }
    if !lines.is_empty() {
        let _ = writeln!(out, "encoded:");
        for line in lines {
            let _ = writeln!(out, "{line}");
        }
    }
}

pub fn run_report(config: &PipelineConfig) -> Result<(), CliError> {
    let layout = Layout::new(&config.out_dir);
    let manifests_dir = layout.root.join("manifests");
    require(&manifests_dir, "simulate")?;

    let mut out = String::new();
    let _ = writeln!(out, "pipeline report");
    let _ = writeln!(out, "===============");
    let _ = writeln!(out, "seed: {}", config.seed);
    let _ = writeln!(out, "config: {}", config.content_hash());
    let _ = writeln!(out);

    encode_stats_section(&mut out, &layout);
    for name in ["train-float", "train-finetuned", "train-qat"] {
        report_train_section(&mut out, &layout.report(&format!("{name}.json")));
    }
    let reports_dir = layout.root.join("reports");
    if let Ok(entries) = std::fs::read_dir(&reports_dir) {
        let mut names: Vec<String> = entries
            .filter_map(|e| e.ok())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .filter(|n| n.starts_with("evaluate-") && n.ends_with(".json"))
            .collect();
        names.sort();
        for name in names {
            report_eval_section(&mut out, &reports_dir.join(name));
        }
    }
    report_bench_section(&mut out, &layout.report("bench.json"));

    let report_path = layout.report("report.txt");
    ensure_parent(&report_path)?;
    std::fs::write(&report_path, &out).map_err(CliError::failure)?;
    print!("{out}");

    let mut inputs = BTreeMap::new();
    if let Ok(entries) = std::fs::read_dir(&manifests_dir) {
        for entry in entries.filter_map(|e| e.ok()) {
            if entry.path().extension().is_some_and(|e| e == "json") {
                hash_entry(&mut inputs, &layout, &entry.path())?;
            }
        }
    }
    let mut outputs = BTreeMap::new();
    hash_entry(&mut outputs, &layout, &report_path)?;
    manifest(config, "report", inputs, outputs).write(&layout)
}
