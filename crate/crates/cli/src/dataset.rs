//! Dataset synthesis and window encoding.
//!
//! A sequence is synthesized from a derived seed tree (script, scene,
//! render jitter, rotation, sensor noise all draw from independent
//! sub-seeds), converted to events, and persisted as an EVT2 file plus a
//! labels JSONL and a small metadata JSON. Encoding walks the window grid
//! over a persisted sequence and emits one record per window: aggregated
//! label, normalized bbox target, and hand-presence flag.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use evgest_core::events::evt2;
use evgest_core::labels::aggregate_window_label;
use evgest_core::model::{Tensor, TrainSample};
use evgest_core::sim::generate_events;
use evgest_core::surface::{build_time_surface, TimeSurface};
use evgest_core::synth::{
    read_labels_jsonl, rotate_sequence, sample_script, synthesize_sequence, write_labels_jsonl,
    FrameAnnotation, GestureScript, MarkovChain, SceneConfig, ScriptEntry,
};
use evgest_core::window::slice_windows;
use evgest_core::{EventStream, GestureClass};

use crate::artifacts::{write_json, CliError};
use crate::config::PipelineConfig;

pub const SPLIT_TRAIN: &str = "train";
pub const SPLIT_VAL: &str = "val";
pub const SPLIT_TRAIN_ROT: &str = "train_rot";
pub const SPLIT_TRIALS: &str = "trials";
pub const SPLIT_TRIALS_ROT: &str = "trials_rot";

/// Every dataset split, in generation order.
pub const ALL_SPLITS: [&str; 5] = [
    SPLIT_TRAIN,
    SPLIT_VAL,
    SPLIT_TRAIN_ROT,
    SPLIT_TRIALS,
    SPLIT_TRIALS_ROT,
];

/// Derive a child seed from a root seed, a domain string, and an index.
/// First eight little-endian bytes of sha256(root || domain || index), so
/// any sequence can be regenerated in isolation.
pub fn derive_seed(root: u64, domain: &str, index: u64) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(root.to_le_bytes());
    hasher.update(domain.as_bytes());
    hasher.update(index.to_le_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}

/// Sidecar metadata for one persisted sequence.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SequenceMeta {
    pub index: usize,
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub duration_ns: u64,
    pub event_count: usize,
    pub rotation_deg: Option<f64>,
}

/// Sidecar metadata for one prompted trial.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialMeta {
    pub unit: usize,
    pub trial: usize,
    pub seed: u64,
    pub prompt_code: u8,
    pub prompt_ns: u64,
    pub duration_ns: u64,
    pub rotation_deg: Option<f64>,
}

pub struct GeneratedSequence {
    pub stream: EventStream,
    pub annotations: Vec<FrameAnnotation>,
    pub rotation_deg: Option<f64>,
}

fn scene_for(config: &PipelineConfig, seed: u64) -> SceneConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "scene", 0));
    let brightness = rng.gen_range(config.scene.brightness_min..=config.scene.brightness_max);
    SceneConfig::procedural(
        config.scene.width,
        config.scene.height,
        brightness,
        derive_seed(seed, "texture", 0),
        derive_seed(seed, "camera", 0),
    )
}

/// Render a script into an event stream with this sequence's seed tree.
pub fn generate_sequence(
    config: &PipelineConfig,
    seed: u64,
    rotated: bool,
    script: &GestureScript,
) -> Result<GeneratedSequence, CliError> {
    let scene = scene_for(config, seed);
    let (frames, annotations) = synthesize_sequence(
        script,
        &scene,
        &config.motion,
        config.script.blend_ns,
        derive_seed(seed, "render", 0),
    )
    .map_err(CliError::failure)?;
    let (frames, annotations, rotation_deg) = if rotated {
        let (f, a, angle) = rotate_sequence(&frames, &annotations, derive_seed(seed, "rotate", 0))
            .map_err(CliError::failure)?;
        (f, a, Some(angle))
    } else {
        (frames, annotations, None)
    };
    let stream = generate_events(&frames, &config.sim, derive_seed(seed, "sim", 0))
        .map_err(CliError::failure)?;
    Ok(GeneratedSequence {
        stream,
        annotations,
        rotation_deg,
    })
}

/// Sample a multi-gesture script for a dataset sequence.
pub fn dataset_script(config: &PipelineConfig, seed: u64) -> Result<GestureScript, CliError> {
    sample_script(
        &MarkovChain::desk_default(),
        &config.script,
        derive_seed(seed, "script", 0),
    )
    .map_err(CliError::failure)
}

/// The prompted class for a trial: units cycle through the emittable
/// gestures so each unit sees a balanced protocol.
pub fn trial_prompt(trial: usize) -> GestureClass {
    const PROMPTS: [GestureClass; 4] = [
        GestureClass::SwipeRight,
        GestureClass::SwipeLeft,
        GestureClass::Pinch,
        GestureClass::DoublePinch,
    ];
    PROMPTS[trial % PROMPTS.len()]
}

/// One prompted gesture (plus its return) inside an otherwise-rest
/// sequence. The gesture starts in a band early enough that the emission
/// always lands inside the match window.
pub fn trial_script(
    config: &PipelineConfig,
    prompt: GestureClass,
    seed: u64,
) -> Result<GestureScript, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "script", 0));
    let script_cfg = &config.script;
    let lo = match prompt {
        GestureClass::DoublePinch => script_cfg.min_gesture_ns.max(220_000_000),
        _ => script_cfg.min_gesture_ns,
    };
    let start_ns = rng.gen_range(250_000_000..=700_000_000u64);
    let duration_ns = rng.gen_range(lo..=script_cfg.max_gesture_ns);
    let profile = |rng: &mut ChaCha8Rng| {
        script_cfg.profile_steepness[rng.gen_range(0..script_cfg.profile_steepness.len())]
    };
    let mut entries = vec![ScriptEntry {
        class: prompt,
        start_ns,
        duration_ns,
        profile_m: profile(&mut rng),
    }];
    let ret = prompt.return_class().expect("prompts are emittable");
    let ret_duration = rng.gen_range(script_cfg.min_gesture_ns..=script_cfg.max_gesture_ns);
    entries.push(ScriptEntry {
        class: ret,
        start_ns: start_ns + duration_ns,
        duration_ns: ret_duration,
        profile_m: profile(&mut rng),
    });
    GestureScript::new(entries, script_cfg.sequence_ns).map_err(CliError::failure)
}

/// Persist a generated sequence: events.evt2 + labels.jsonl + meta json.
pub fn write_sequence_files<M: Serialize>(
    dir: &Path,
    generated: &GeneratedSequence,
    meta_name: &str,
    meta: &M,
) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Failure(format!("cannot create {}: {e}", dir.display())))?;
    evt2::write_file(dir.join("events.evt2"), &generated.stream).map_err(CliError::failure)?;
    write_labels_jsonl(dir.join("labels.jsonl"), &generated.annotations)
        .map_err(CliError::failure)?;
    write_json(&dir.join(meta_name), meta)
}

/// One encoded window of one sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedWindow {
    /// Sequence directory relative to the artifact root.
    pub seq: String,
    pub window: usize,
    pub end_ns: u64,
    /// Gesture class code (the on-disk label encoding).
    pub class: u8,
    /// Normalized (cx, cy, side) crop target; absent when no hand.
    pub bbox: Option<[f64; 3]>,
    pub hand: bool,
}

/// Walk the window grid over one sequence's annotations and aggregate
/// frame labels into window records.
pub fn extract_windows(
    config: &PipelineConfig,
    seq_rel: &str,
    duration_ns: u64,
    annotations: &[FrameAnnotation],
) -> Result<Vec<EncodedWindow>, CliError> {
    let windows = slice_windows(duration_ns, &config.window).map_err(CliError::failure)?;
    let mut previous: Option<GestureClass> = None;
    let mut out = Vec::with_capacity(windows.len());
    for window in &windows {
        // Frames beyond start and up to the window end, matching the
        // surface builder's (end - T_s, end] event span.
        let frames: Vec<&FrameAnnotation> = annotations
            .iter()
            .filter(|a| a.t_ns > window.start_ns && a.t_ns <= window.end_ns)
            .collect();
        if frames.is_empty() {
            return Err(CliError::Failure(format!(
                "{seq_rel}: window {} covers no frames",
                window.index
            )));
        }
        let labels: Vec<GestureClass> = frames.iter().map(|a| a.label).collect();
        let label =
            aggregate_window_label(&labels, previous, config.labels.aggregation_threshold)
                .map_err(CliError::failure)?;
        previous = Some(label);
        let bbox = if label == GestureClass::Untracked {
            None
        } else {
            frames.iter().rev().find_map(|a| a.bbox).map(|b| {
                let (cx, cy, side) = b.normalized(config.scene.width, config.scene.height);
                [cx, cy, side]
            })
        };
        out.push(EncodedWindow {
            seq: seq_rel.to_string(),
            window: window.index,
            end_ns: window.end_ns,
            class: label.code(),
            hand: bbox.is_some(),
            bbox,
        });
    }
    Ok(out)
}

pub fn write_windows_jsonl(path: &Path, records: &[EncodedWindow]) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .map_err(|e| CliError::Failure(format!("cannot create {}: {e}", parent.display())))?;
    }
    let mut text = String::new();
    for record in records {
        text.push_str(&serde_json::to_string(record).map_err(CliError::failure)?);
        text.push('\n');
    }
    std::fs::write(path, text)
        .map_err(|e| CliError::Failure(format!("cannot write {}: {e}", path.display())))
}

pub fn read_windows_jsonl(path: &Path) -> Result<Vec<EncodedWindow>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Failure(format!("cannot read {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(line).map_err(CliError::failure)?);
    }
    Ok(out)
}

/// Per-class window counts for a split.
pub fn class_histogram(records: &[EncodedWindow]) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for record in records {
        let name = GestureClass::from_code(record.class)
            .map(|c| c.name().to_string())
            .unwrap_or_else(|_| format!("code{}", record.class));
        *counts.entry(name).or_insert(0) += 1;
    }
    counts
}

/// The (2, h, w) model input for a surface: positive plane first, then
/// negative, matching the surface's stacked storage exactly.
pub fn surface_tensor(surface: &TimeSurface) -> Tensor<f32> {
    let w = surface.sensor_width();
    let h = surface.sensor_height();
    Tensor::from_vec(&[2, h, w], surface.values().as_slice().to_vec())
}

/// Materialize training samples for encoded windows, one sequence's events
/// read per group of records.
pub fn load_samples(
    config: &PipelineConfig,
    root: &Path,
    records: &[EncodedWindow],
) -> Result<Vec<TrainSample>, CliError> {
    let mut samples = Vec::with_capacity(records.len());
    let mut current: Option<(String, EventStream)> = None;
    for record in records {
        let reload = match &current {
            Some((seq, _)) => seq != &record.seq,
            None => true,
        };
        if reload {
            let path = root.join(&record.seq).join("events.evt2");
            let stream = evt2::read_file(&path).map_err(|e| {
                CliError::Failure(format!("cannot read {}: {e}", path.display()))
            })?;
            current = Some((record.seq.clone(), stream));
        }
        let (_, stream) = current.as_ref().expect("stream loaded above");
        let surface = build_time_surface(stream, record.end_ns, &config.window)
            .map_err(CliError::failure)?;
        let bbox = record
            .bbox
            .map(|b| [b[0] as f32, b[1] as f32, b[2] as f32])
            .unwrap_or([0.0; 3]);
        samples.push(TrainSample {
            input: surface_tensor(&surface),
            class: GestureClass::from_code(record.class).map_err(CliError::failure)?,
            bbox,
            hand_present: record.hand,
        });
    }
    Ok(samples)
}

/// Read back one persisted sequence's annotations and duration.
pub fn read_sequence(
    root: &Path,
    seq_rel: &str,
) -> Result<(u64, Vec<FrameAnnotation>), CliError> {
    let dir = root.join(seq_rel);
    let annotations =
        read_labels_jsonl(dir.join("labels.jsonl")).map_err(CliError::failure)?;
    let stream = evt2::read_file(dir.join("events.evt2")).map_err(CliError::failure)?;
    Ok((stream.duration_ns(), annotations))
}

/// Relative sequence directories of a split, ordered by index.
pub fn split_sequence_dirs(root: &Path, split: &str) -> Result<Vec<String>, CliError> {
    let dir = root.join("data").join(split);
    let mut names = Vec::new();
    let entries = std::fs::read_dir(&dir)
        .map_err(|e| CliError::Failure(format!("cannot list {}: {e}", dir.display())))?;
    for entry in entries {
        let entry = entry.map_err(|e| CliError::Failure(e.to_string()))?;
        if entry.path().is_dir() {
            names.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    names.sort();
    Ok(names
        .into_iter()
        .map(|n| format!("data/{split}/{n}"))
        .collect())
}

/// Relative trial directories of a split, grouped by unit, ordered.
pub fn split_trial_dirs(root: &Path, split: &str) -> Result<Vec<Vec<PathBuf>>, CliError> {
    let dir = root.join("data").join(split);
    let mut units: Vec<String> = Vec::new();
    let entries = std::fs::read_dir(&dir)
        .map_err(|e| CliError::Failure(format!("cannot list {}: {e}", dir.display())))?;
    for entry in entries {
        let entry = entry.map_err(|e| CliError::Failure(e.to_string()))?;
        if entry.path().is_dir() {
            units.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    units.sort();
    let mut out = Vec::with_capacity(units.len());
    for unit in units {
        let unit_dir = dir.join(&unit);
        let mut trials: Vec<String> = Vec::new();
        for entry in std::fs::read_dir(&unit_dir)
            .map_err(|e| CliError::Failure(format!("cannot list {}: {e}", unit_dir.display())))?
        {
            let entry = entry.map_err(|e| CliError::Failure(e.to_string()))?;
            if entry.path().is_dir() {
                trials.push(entry.file_name().to_string_lossy().into_owned());
            }
        }
        trials.sort();
        out.push(
            trials
                .into_iter()
                .map(|t| dir.join(&unit).join(t))
                .collect(),
        );
    }
    Ok(out)
}
