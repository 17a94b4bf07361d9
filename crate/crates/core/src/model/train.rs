//! Training loops: deterministic shuffling, per-sample dropout masks,
//! batch-averaged gradients, Adam with the hold/decay schedule. The same
//! loop drives float training and QAT (pass a `QuantState`); fine-tuning
//! freezes stages 1-3 and scales the learning rate down.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::labels::GestureClass;
use crate::quant::{FakeQuantSession, QuantState};

use super::net::{backward, forward, DropoutMasks, ForwardCtx, LossTargets, ModelConfig};
use super::optim::{lr_at, Adam};
use super::params::Parameters;
use super::tensor::Tensor;
use super::ModelError;

/// Tensor-name prefixes of everything in stages 1-3 (stage 1 has no
/// parameters; the presence head belongs to stage 2).
pub const STAGE123_PREFIXES: [&str; 3] = ["s2_", "presence", "s3_"];

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub lr_hold_fraction: f64,
    pub presence_loss_weight: f32,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 64,
            learning_rate: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            lr_hold_fraction: 0.3,
            presence_loss_weight: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), ModelError> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(ModelError::BadConfig(
                "epochs and batch_size must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0) || !(0.0..=1.0).contains(&self.lr_hold_fraction) {
            return Err(ModelError::BadConfig(
                "learning_rate must be positive, lr_hold_fraction in [0,1]".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainSample {
    pub input: Tensor<f32>,
    pub class: GestureClass,
    /// Normalized (cx, cy, side) crop target; only read when hand_present.
    pub bbox: [f32; 3],
    pub hand_present: bool,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct EpochMetrics {
    pub gesture_loss: f32,
    pub bbox_loss: f32,
    pub presence_loss: f32,
    /// bbox + gesture + weighted presence, averaged over samples.
    pub total_loss: f32,
    pub accuracy: f64,
}

fn dropout_masks(rng: &mut ChaCha8Rng, dim: usize, rate: f32) -> DropoutMasks {
    let scale = 1.0 / (1.0 - rate);
    let mut draw = |n: usize| -> Vec<f32> {
        (0..n)
            .map(|_| if rng.gen::<f32>() < rate { 0.0 } else { scale })
            .collect()
    };
    DropoutMasks {
        s2: draw(dim),
        s4: draw(dim),
    }
}

fn frozen_flags(params: &Parameters, prefixes: &[&str]) -> Vec<bool> {
    let mut flags = Vec::new();
    params.visit(&mut |name, _| {
        flags.push(prefixes.iter().any(|p| name.starts_with(p)));
    });
    flags
}

fn run_epochs(
    config: &ModelConfig,
    tcfg: &TrainConfig,
    params: &mut Parameters,
    samples: &[TrainSample],
    mut quant: Option<&mut QuantState>,
    frozen_prefixes: &[&str],
    lr_scale: f64,
) -> Result<Vec<EpochMetrics>, ModelError> {
    config.validate()?;
    tcfg.validate()?;
    if samples.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let frozen = frozen_flags(params, frozen_prefixes);
    let mut adam = Adam::new(params, tcfg.beta1, tcfg.beta2, tcfg.adam_eps);
    let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed);
    let batches_per_epoch = samples.len().div_ceil(tcfg.batch_size);
    let total_steps = tcfg.epochs * batches_per_epoch;
    let base_lr = tcfg.learning_rate * lr_scale;

    let mut history = Vec::with_capacity(tcfg.epochs);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut step = 0usize;
    for _ in 0..tcfg.epochs {
        order.shuffle(&mut rng);
        let mut sums = EpochMetrics::default();
        let mut correct = 0usize;
        for batch in order.chunks(tcfg.batch_size) {
            let mut grads = params.zeros_like();
            for &idx in batch {
                let sample = &samples[idx];
                let masks = if config.dropout > 0.0 {
                    Some(dropout_masks(&mut rng, config.feature_dim, config.dropout))
                } else {
                    None
                };
                let mut ctx = ForwardCtx {
                    dropout: masks,
                    quant: quant.as_deref_mut().map(|state| FakeQuantSession {
                        state,
                        observe: true,
                    }),
                };
                let (output, tape) = forward(config, params, &sample.input, &mut ctx)?;
                let targets = LossTargets {
                    class: sample.class,
                    bbox: sample.bbox,
                    hand_present: sample.hand_present,
                };
                let (sample_grads, breakdown) = backward(
                    config,
                    params,
                    &sample.input,
                    &tape,
                    &targets,
                    tcfg.presence_loss_weight,
                );
                let mut flat: Vec<&Tensor<f32>> = Vec::new();
                sample_grads.visit(&mut |_, t| flat.push(t));
                let mut i = 0;
                grads.visit_mut(&mut |_, t| {
                    t.add_assign(flat[i]);
                    i += 1;
                });
                sums.gesture_loss += breakdown.gesture;
                sums.bbox_loss += breakdown.bbox;
                sums.presence_loss += breakdown.presence;
                sums.total_loss += breakdown.optimized;
                let arg = output
                    .combined
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .map(|(i, _)| i)
                    .unwrap();
                if arg == sample.class.index() {
                    correct += 1;
                }
            }
            let inv = 1.0 / batch.len() as f32;
            grads.visit_mut(&mut |_, t| t.scale(inv));
            let lr = lr_at(step, total_steps, base_lr, tcfg.lr_hold_fraction);
            adam.step(params, &grads, lr, &frozen);
            step += 1;
        }
        let n = samples.len() as f32;
        history.push(EpochMetrics {
            gesture_loss: sums.gesture_loss / n,
            bbox_loss: sums.bbox_loss / n,
            presence_loss: sums.presence_loss / n,
            total_loss: sums.total_loss / n,
            accuracy: correct as f64 / samples.len() as f64,
        });
    }
    Ok(history)
}

/// Full training: all stages trainable.
pub fn train_epochs(
    config: &ModelConfig,
    tcfg: &TrainConfig,
    params: &mut Parameters,
    samples: &[TrainSample],
    quant: Option<&mut QuantState>,
) -> Result<Vec<EpochMetrics>, ModelError> {
    run_epochs(config, tcfg, params, samples, quant, &[], 1.0)
}

/// Fine-tuning: stages 1-3 frozen, learning rate scaled by 0.1.
pub fn finetune_epochs(
    config: &ModelConfig,
    tcfg: &TrainConfig,
    params: &mut Parameters,
    samples: &[TrainSample],
    quant: Option<&mut QuantState>,
) -> Result<Vec<EpochMetrics>, ModelError> {
    run_epochs(config, tcfg, params, samples, quant, &STAGE123_PREFIXES, 0.1)
}
