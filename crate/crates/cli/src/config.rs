//! Pipeline configuration.
//!
//! One TOML file with full defaulting: an empty file (or no file at all) is
//! the desk-scale configuration. Every pipeline constant — aggregation
//! threshold 0.6, emission threshold 0.65, 240 ms windows at 80 ms steps,
//! decay 5, learning rate 5e-4, dropout 0.2, 10 epochs — is a named key
//! here or in the nested core config it embeds.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use evgest_core::model::net::ModelConfig;
use evgest_core::sim::SimConfig;
use evgest_core::synth::{MotionConfig, ScriptConfig};
use evgest_core::window::WindowConfig;

use crate::artifacts::CliError;

/// Environment variable that overrides `out_dir` (itself overridden by the
/// `--out-dir` flag).
pub const OUT_DIR_ENV: &str = "EVGEST_OUT_DIR";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSection {
    pub width: usize,
    pub height: usize,
    /// Per-sequence lighting multiplier band, within the scene's [0.5, 4.0].
    pub brightness_min: f64,
    pub brightness_max: f64,
}

impl Default for SceneSection {
    fn default() -> Self {
        Self {
            width: 64,
            height: 64,
            brightness_min: 0.7,
            brightness_max: 1.6,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelSection {
    /// Fraction of a window a challenger label needs to displace the
    /// previous window's label.
    pub aggregation_threshold: f64,
}

impl Default for LabelSection {
    fn default() -> Self {
        Self {
            aggregation_threshold: 0.6,
        }
    }
}

/// Sequence counts at scale 1.0; the effective counts are these times
/// `scale`, rounded, floored at 1. Trial counts are protocol sizes and do
/// not scale.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub train_sequences_full: usize,
    pub val_sequences_full: usize,
    /// Rotated training sequences for fine-tuning, also at scale 1.0.
    pub finetune_sequences_full: usize,
    pub trial_units: usize,
    pub trials_per_unit: usize,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            train_sequences_full: 11_000,
            val_sequences_full: 2_200,
            finetune_sequences_full: 6_000,
            trial_units: 10,
            trials_per_unit: 20,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lr_hold_fraction: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub presence_loss_weight: f32,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 64,
            learning_rate: 5e-4,
            lr_hold_fraction: 0.3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            presence_loss_weight: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneSection {
    /// Epochs over the rotated split; stages 1-3 stay frozen and the
    /// learning rate runs at a tenth of the base rate.
    pub epochs: usize,
}

impl Default for FinetuneSection {
    fn default() -> Self {
        Self { epochs: 6 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QatSection {
    pub epochs: usize,
    /// Quantization-aware passes run at a reduced rate on top of the
    /// already-trained model.
    pub learning_rate: f64,
}

impl Default for QatSection {
    fn default() -> Self {
        Self {
            epochs: 4,
            learning_rate: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// A window emits only when an emittable class clears this strictly.
    pub emit_threshold: f64,
    /// Time allowed between a prompt and the matching prediction.
    pub match_window_ns: u64,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            emit_threshold: 0.65,
            match_window_ns: 2_000_000_000,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    pub iterations: usize,
}

impl Default for BenchSection {
    fn default() -> Self {
        Self { iterations: 300 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Root seed; every sequence, shuffle, and augmentation seed derives
    /// from it.
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Dataset size multiplier (1.0 is full scale; desk default 0.05).
    pub scale: f64,
    pub scene: SceneSection,
    pub script: ScriptConfig,
    pub motion: MotionConfig,
    pub sim: SimConfig,
    pub window: WindowConfig,
    pub labels: LabelSection,
    pub dataset: DatasetSection,
    pub model: ModelConfig,
    pub train: TrainSection,
    pub finetune: FinetuneSection,
    pub qat: QatSection,
    pub eval: EvalSection,
    pub bench: BenchSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            out_dir: PathBuf::from("runs/desk"),
            scale: 0.05,
            scene: SceneSection::default(),
            script: ScriptConfig::default(),
            motion: MotionConfig::default(),
            sim: SimConfig::default(),
            window: WindowConfig::default(),
            labels: LabelSection::default(),
            dataset: DatasetSection::default(),
            model: ModelConfig::default(),
            train: TrainSection::default(),
            finetune: FinetuneSection::default(),
            qat: QatSection::default(),
            eval: EvalSection::default(),
            bench: BenchSection::default(),
        }
    }
}

fn scaled(full: usize, scale: f64) -> usize {
    ((full as f64 * scale).round() as usize).max(1)
}

impl PipelineConfig {
    /// Load from TOML; `None` means "all defaults". `out_dir_flag` beats the
    /// environment override beats the file value.
    pub fn load(path: Option<&Path>, out_dir_flag: Option<&Path>) -> Result<Self, CliError> {
        let mut config = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| {
                    CliError::Config(format!("cannot read config {}: {e}", p.display()))
                })?;
                toml::from_str(&text).map_err(|e| {
                    CliError::Config(format!("cannot parse config {}: {e}", p.display()))
                })?
            }
            None => Self::default(),
        };
        if let Ok(env_dir) = std::env::var(OUT_DIR_ENV) {
            if !env_dir.is_empty() {
                config.out_dir = PathBuf::from(env_dir);
            }
        }
        if let Some(dir) = out_dir_flag {
            config.out_dir = dir.to_path_buf();
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Config(msg));
        if !(self.scale > 0.0) {
            return bad(format!("scale must be positive, got {}", self.scale));
        }
        if self.scene.width != self.model.input_size || self.scene.height != self.model.input_size {
            return bad(format!(
                "scene {}x{} must match the model input size {}",
                self.scene.width, self.scene.height, self.model.input_size
            ));
        }
        if !(self.scene.brightness_min <= self.scene.brightness_max)
            || self.scene.brightness_min < 0.5
            || self.scene.brightness_max > 4.0
        {
            return bad("brightness band must sit inside [0.5, 4.0]".into());
        }
        if !(self.labels.aggregation_threshold > 0.0 && self.labels.aggregation_threshold <= 1.0) {
            return bad(format!(
                "aggregation threshold {} outside (0, 1]",
                self.labels.aggregation_threshold
            ));
        }
        if !(self.eval.emit_threshold > 0.0 && self.eval.emit_threshold < 1.0) {
            return bad(format!(
                "emit threshold {} outside (0, 1)",
                self.eval.emit_threshold
            ));
        }
        if self.dataset.trial_units == 0 || self.dataset.trials_per_unit == 0 {
            return bad("trial protocol needs at least one unit and one trial".into());
        }
        if self.bench.iterations < 100 {
            return bad(format!(
                "bench iterations must be >= 100, got {}",
                self.bench.iterations
            ));
        }
        self.script
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        self.motion
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        self.sim
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        self.window
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        self.model
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn train_sequences(&self) -> usize {
        scaled(self.dataset.train_sequences_full, self.scale)
    }

    pub fn val_sequences(&self) -> usize {
        scaled(self.dataset.val_sequences_full, self.scale)
    }

    pub fn finetune_sequences(&self) -> usize {
        scaled(self.dataset.finetune_sequences_full, self.scale)
    }

    /// Hash of the fully-resolved configuration (canonical JSON of the
    /// struct, stable field order). Recorded in every manifest.
    pub fn content_hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(&canonical);
        format!("{:x}", hasher.finalize())
    }

    /// Training section materialized for the core trainer.
    pub fn train_config(&self, epochs: usize, lr: f64, seed: u64) -> evgest_core::model::TrainConfig {
        evgest_core::model::TrainConfig {
            epochs,
            batch_size: self.train.batch_size,
            learning_rate: lr,
            beta1: self.train.beta1,
            beta2: self.train.beta2,
            adam_eps: self.train.adam_eps,
            lr_hold_fraction: self.train.lr_hold_fraction,
            presence_loss_weight: self.train.presence_loss_weight,
            seed,
        }
    }
}
