//! The five-stage network.
//!
//! Stage 1 average-pools the input surface. Stage 2 runs the conv/dense
//! trunk and feeds the hand-presence head. Stage 3 regresses a square crop
//! box, which is applied to the ORIGINAL full-resolution input (not the
//! pooled one). Stage 4 runs the crop trunk, stage 5 the gesture head.
//!
//! Stages 2 and 4 are the quantizable ones; the heads (presence, bbox,
//! gesture) stay float. The optional `FakeQuantSession` in the forward
//! context inserts fake-quantization at the tensor taps during QAT; the
//! tape records the straight-through masks so backward sees them.

use serde::{Deserialize, Serialize};

use crate::labels::GestureClass;
use crate::quant::{fake_quant_weights, FakeQuantSession};

use super::layers::{
    avgpool2_forward, conv2d_backward, conv2d_forward, conv_out_dim, crop_resize_backward,
    crop_resize_forward, dense_backward, dense_forward, relu_backward, relu_forward,
};
use super::loss::{bce_with_logits, cross_entropy_from_logits, mse, sigmoid, softmax};
use super::params::Parameters;
use super::tensor::Tensor;
use super::ModelError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// 2 for a single polarity-split surface, 6 for a three-window stack.
    pub input_channels: usize,
    pub input_size: usize,
    pub crop_size: usize,
    pub s2_channels: Vec<usize>,
    pub s2_strides: Vec<usize>,
    pub s4_channels: Vec<usize>,
    pub s4_strides: Vec<usize>,
    pub feature_dim: usize,
    pub dropout: f32,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_channels: 2,
            input_size: 64,
            crop_size: 32,
            s2_channels: vec![8, 16, 32, 32],
            s2_strides: vec![2, 2, 1, 1],
            s4_channels: vec![16, 32, 32],
            s4_strides: vec![2, 2, 2],
            feature_dim: 64,
            dropout: 0.2,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.input_channels == 0 {
            return Err(ModelError::BadConfig("input_channels must be > 0".into()));
        }
        if self.input_size < 8 || self.input_size % 2 != 0 {
            return Err(ModelError::BadConfig(
                "input_size must be even and at least 8".into(),
            ));
        }
        if self.crop_size < 2 {
            return Err(ModelError::BadConfig("crop_size must be at least 2".into()));
        }
        if self.s2_channels.is_empty() || self.s2_channels.len() != self.s2_strides.len() {
            return Err(ModelError::BadConfig(
                "s2_channels/s2_strides must be non-empty and same length".into(),
            ));
        }
        if self.s4_channels.is_empty() || self.s4_channels.len() != self.s4_strides.len() {
            return Err(ModelError::BadConfig(
                "s4_channels/s4_strides must be non-empty and same length".into(),
            ));
        }
        for &s in self.s2_strides.iter().chain(self.s4_strides.iter()) {
            if s != 1 && s != 2 {
                return Err(ModelError::BadConfig("conv strides must be 1 or 2".into()));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::BadConfig("dropout must be in [0, 1)".into()));
        }
        if self.feature_dim == 0 {
            return Err(ModelError::BadConfig("feature_dim must be > 0".into()));
        }
        if self.s2_spatial() == 0 || self.s4_spatial() == 0 {
            return Err(ModelError::BadConfig(
                "conv stack reduces spatial extent to zero".into(),
            ));
        }
        Ok(())
    }

    pub fn class_count(&self) -> usize {
        GestureClass::COUNT
    }

    pub fn s2_spatial(&self) -> usize {
        let mut d = self.input_size / 2;
        for &s in &self.s2_strides {
            d = conv_out_dim(d, s);
        }
        d
    }

    pub fn s2_flat_dim(&self) -> usize {
        self.s2_channels.last().unwrap() * self.s2_spatial() * self.s2_spatial()
    }

    pub fn s4_spatial(&self) -> usize {
        let mut d = self.crop_size;
        for &s in &self.s4_strides {
            d = conv_out_dim(d, s);
        }
        d
    }

    pub fn s4_flat_dim(&self) -> usize {
        self.s4_channels.last().unwrap() * self.s4_spatial() * self.s4_spatial()
    }
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub bbox: [f32; 3],
    pub presence_logit: f32,
    pub presence: f32,
    pub class_logits: Vec<f32>,
    /// Presence-combined, renormalized class probabilities.
    pub combined: Vec<f32>,
}

/// Per-site inverted dropout multipliers (0 or 1/(1-rate)).
#[derive(Debug, Clone)]
pub struct DropoutMasks {
    pub s2: Vec<f32>,
    pub s4: Vec<f32>,
}

#[derive(Default)]
pub struct ForwardCtx<'a> {
    pub dropout: Option<DropoutMasks>,
    pub quant: Option<FakeQuantSession<'a>>,
}

impl ForwardCtx<'static> {
    pub fn inference() -> Self {
        ForwardCtx::default()
    }
}

/// Fake-quantized weights and straight-through masks, kept when QAT is on.
pub struct FqWeights {
    pub s2_conv: Vec<(Tensor<f32>, Tensor<f32>)>,
    pub s2_dense: (Tensor<f32>, Tensor<f32>),
    pub s4_conv: Vec<(Tensor<f32>, Tensor<f32>)>,
    pub s4_dense: (Tensor<f32>, Tensor<f32>),
}

impl FqWeights {
    fn compute(params: &Parameters) -> FqWeights {
        FqWeights {
            s2_conv: params
                .s2_conv
                .iter()
                .map(|l| fake_quant_weights(&l.weight))
                .collect(),
            s2_dense: fake_quant_weights(&params.s2_dense.weight),
            s4_conv: params
                .s4_conv
                .iter()
                .map(|l| fake_quant_weights(&l.weight))
                .collect(),
            s4_dense: fake_quant_weights(&params.s4_dense.weight),
        }
    }
}

/// Straight-through masks for the activation taps.
pub struct FqActMasks {
    pub s2_input: Tensor<f32>,
    pub s2_conv: Vec<Tensor<f32>>,
    pub s2_dense: Tensor<f32>,
    pub s4_input: Tensor<f32>,
    pub s4_conv: Vec<Tensor<f32>>,
    pub s4_dense: Tensor<f32>,
}

pub struct FqTape {
    pub weights: FqWeights,
    pub acts: FqActMasks,
}

/// Activation cache from one forward pass; everything backward needs
/// besides the parameters and the original input.
pub struct Tape {
    pub s1_out: Tensor<f32>,
    pub s2_pre: Vec<Tensor<f32>>,
    pub s2_act: Vec<Tensor<f32>>,
    pub s2_dense_pre: Tensor<f32>,
    pub s2_feat: Tensor<f32>,
    pub presence_logit: f32,
    pub bbox_pre: [f32; 3],
    pub bbox: [f32; 3],
    pub crop: Tensor<f32>,
    pub s4_pre: Vec<Tensor<f32>>,
    pub s4_act: Vec<Tensor<f32>>,
    pub s4_dense_pre: Tensor<f32>,
    pub s4_feat: Tensor<f32>,
    pub class_logits: Vec<f32>,
    pub dropout: Option<DropoutMasks>,
    pub fq: Option<FqTape>,
}

fn check_finite(t: &Tensor<f32>, stage: &'static str) -> Result<(), ModelError> {
    if t.all_finite() {
        Ok(())
    } else {
        Err(ModelError::NonFinite { stage })
    }
}

fn apply_mask(t: &mut Tensor<f32>, mask: &[f32]) {
    for (v, m) in t.data_mut().iter_mut().zip(mask.iter()) {
        *v *= m;
    }
}

/// Presence-combined class probabilities: gesture classes are scaled by the
/// presence probability, the untracked slot is replaced by 1 - presence,
/// and the result is renormalized.
pub fn combine_probabilities(class_logits: &[f32], presence: f32) -> Vec<f32> {
    let s = softmax(class_logits);
    let u = GestureClass::Untracked.index();
    let mut out: Vec<f32> = s.iter().map(|&p| presence * p).collect();
    out[u] = 1.0 - presence;
    let sum: f32 = out.iter().sum();
    if sum > 0.0 {
        for v in out.iter_mut() {
            *v /= sum;
        }
    }
    out
}

pub fn forward(
    config: &ModelConfig,
    params: &Parameters,
    input: &Tensor<f32>,
    ctx: &mut ForwardCtx,
) -> Result<(ForwardOutput, Tape), ModelError> {
    let expected = [config.input_channels, config.input_size, config.input_size];
    if input.shape() != expected {
        return Err(ModelError::InputShape {
            expected: expected.to_vec(),
            got: input.shape().to_vec(),
        });
    }

    let fq_weights = ctx.quant.as_ref().map(|_| FqWeights::compute(params));
    let mut fq_act = ctx.quant.as_ref().map(|_| FqActMasks {
        s2_input: Tensor::zeros(&[0]),
        s2_conv: Vec::new(),
        s2_dense: Tensor::zeros(&[0]),
        s4_input: Tensor::zeros(&[0]),
        s4_conv: Vec::new(),
        s4_dense: Tensor::zeros(&[0]),
    });

    // Stage 1: average-pool.
    let mut s1_out = avgpool2_forward(input);
    if let (Some(session), Some(acts)) = (ctx.quant.as_mut(), fq_act.as_mut()) {
        let (fq, mask) = session.activation(session.taps().s2_input(), &s1_out)?;
        s1_out = fq;
        acts.s2_input = mask;
    }

    // Stage 2 conv trunk.
    let mut s2_pre = Vec::with_capacity(params.s2_conv.len());
    let mut s2_act = Vec::with_capacity(params.s2_conv.len());
    let mut cursor = s1_out.clone();
    for (i, layer) in params.s2_conv.iter().enumerate() {
        let weight = fq_weights
            .as_ref()
            .map(|w| &w.s2_conv[i].0)
            .unwrap_or(&layer.weight);
        let pre = conv2d_forward(&cursor, weight, &layer.bias, config.s2_strides[i]);
        check_finite(&pre, "stage2 conv")?;
        let mut act = relu_forward(&pre);
        if let (Some(session), Some(acts)) = (ctx.quant.as_mut(), fq_act.as_mut()) {
            let (fq, mask) = session.activation(session.taps().s2_conv(i), &act)?;
            act = fq;
            acts.s2_conv.push(mask);
        }
        s2_pre.push(pre);
        cursor = act.clone();
        s2_act.push(act);
    }

    // Stage 2 dense + feature dropout.
    let weight = fq_weights
        .as_ref()
        .map(|w| &w.s2_dense.0)
        .unwrap_or(&params.s2_dense.weight);
    let s2_dense_pre = dense_forward(&cursor, weight, &params.s2_dense.bias);
    check_finite(&s2_dense_pre, "stage2 dense")?;
    let mut s2_feat = relu_forward(&s2_dense_pre);
    if let (Some(session), Some(acts)) = (ctx.quant.as_mut(), fq_act.as_mut()) {
        let (fq, mask) = session.activation(session.taps().s2_dense(), &s2_feat)?;
        s2_feat = fq;
        acts.s2_dense = mask;
    }
    if let Some(masks) = &ctx.dropout {
        apply_mask(&mut s2_feat, &masks.s2);
    }

    // Presence head and stage 3 bbox head (always float).
    let presence_logit = dense_forward(&s2_feat, &params.presence.weight, &params.presence.bias)
        .data()[0];
    let bbox_pre_t = dense_forward(&s2_feat, &params.s3_bbox.weight, &params.s3_bbox.bias);
    check_finite(&bbox_pre_t, "stage3 bbox")?;
    let bbox_pre = [
        bbox_pre_t.data()[0],
        bbox_pre_t.data()[1],
        bbox_pre_t.data()[2],
    ];
    let bbox = [
        sigmoid(bbox_pre[0]),
        sigmoid(bbox_pre[1]),
        sigmoid(bbox_pre[2]),
    ];

    // Crop the ORIGINAL input at the predicted box.
    let mut crop = crop_resize_forward(input, &bbox, config.crop_size);
    if let (Some(session), Some(acts)) = (ctx.quant.as_mut(), fq_act.as_mut()) {
        let (fq, mask) = session.activation(session.taps().s4_input(), &crop)?;
        crop = fq;
        acts.s4_input = mask;
    }

    // Stage 4 conv trunk.
    let mut s4_pre = Vec::with_capacity(params.s4_conv.len());
    let mut s4_act = Vec::with_capacity(params.s4_conv.len());
    let mut cursor4 = crop.clone();
    for (i, layer) in params.s4_conv.iter().enumerate() {
        let weight = fq_weights
            .as_ref()
            .map(|w| &w.s4_conv[i].0)
            .unwrap_or(&layer.weight);
        let pre = conv2d_forward(&cursor4, weight, &layer.bias, config.s4_strides[i]);
        check_finite(&pre, "stage4 conv")?;
        let mut act = relu_forward(&pre);
        if let (Some(session), Some(acts)) = (ctx.quant.as_mut(), fq_act.as_mut()) {
            let (fq, mask) = session.activation(session.taps().s4_conv(i), &act)?;
            act = fq;
            acts.s4_conv.push(mask);
        }
        s4_pre.push(pre);
        cursor4 = act.clone();
        s4_act.push(act);
    }

    // Stage 4 dense.
    let weight = fq_weights
        .as_ref()
        .map(|w| &w.s4_dense.0)
        .unwrap_or(&params.s4_dense.weight);
    let s4_dense_pre = dense_forward(&cursor4, weight, &params.s4_dense.bias);
    check_finite(&s4_dense_pre, "stage4 dense")?;
    let mut s4_feat = relu_forward(&s4_dense_pre);
    if let (Some(session), Some(acts)) = (ctx.quant.as_mut(), fq_act.as_mut()) {
        let (fq, mask) = session.activation(session.taps().s4_dense(), &s4_feat)?;
        s4_feat = fq;
        acts.s4_dense = mask;
    }
    if let Some(masks) = &ctx.dropout {
        apply_mask(&mut s4_feat, &masks.s4);
    }

    // Stage 5 gesture head.
    let logits_t = dense_forward(&s4_feat, &params.s5_gesture.weight, &params.s5_gesture.bias);
    check_finite(&logits_t, "stage5")?;
    let class_logits = logits_t.data().to_vec();
    if !presence_logit.is_finite() {
        return Err(ModelError::NonFinite { stage: "presence" });
    }

    let presence = sigmoid(presence_logit);
    let combined = combine_probabilities(&class_logits, presence);
    let output = ForwardOutput {
        bbox,
        presence_logit,
        presence,
        class_logits: class_logits.clone(),
        combined,
    };
    let fq = match (fq_weights, fq_act) {
        (Some(weights), Some(acts)) => Some(FqTape { weights, acts }),
        _ => None,
    };
    let tape = Tape {
        s1_out,
        s2_pre,
        s2_act,
        s2_dense_pre,
        s2_feat,
        presence_logit,
        bbox_pre,
        bbox,
        crop,
        s4_pre,
        s4_act,
        s4_dense_pre,
        s4_feat,
        class_logits,
        dropout: ctx.dropout.clone(),
        fq,
    };
    Ok((output, tape))
}

/// Forward without gradient bookkeeping or dropout.
pub fn infer(
    config: &ModelConfig,
    params: &Parameters,
    input: &Tensor<f32>,
) -> Result<ForwardOutput, ModelError> {
    let mut ctx = ForwardCtx::inference();
    forward(config, params, input, &mut ctx).map(|(out, _)| out)
}

#[derive(Debug, Clone, Copy)]
pub struct LossTargets {
    pub class: GestureClass,
    /// Normalized (cx, cy, side); ignored when hand_present is false.
    pub bbox: [f32; 3],
    pub hand_present: bool,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LossBreakdown {
    pub gesture: f32,
    pub bbox: f32,
    pub presence: f32,
    /// What the optimizer minimizes: bbox + gesture + presence.
    pub optimized: f32,
}

/// The reported task loss: bbox MSE (masked by hand presence) plus gesture
/// cross-entropy. Presence BCE is a training-only auxiliary term and is not
/// part of this sum.
pub fn compute_loss(output: &ForwardOutput, targets: &LossTargets) -> (f32, f32, f32) {
    let (gesture, _) = cross_entropy_from_logits(&output.class_logits, targets.class.index());
    let bbox = if targets.hand_present {
        mse(&output.bbox, &targets.bbox).0
    } else {
        0.0
    };
    (bbox, gesture, bbox + gesture)
}

/// Backpropagate one sample. Returns parameter-shaped gradients and the
/// loss breakdown. `input` must be the tensor the forward pass saw.
pub fn backward(
    config: &ModelConfig,
    params: &Parameters,
    input: &Tensor<f32>,
    tape: &Tape,
    targets: &LossTargets,
    presence_weight: f32,
) -> (Parameters, LossBreakdown) {
    let mut grads = params.zeros_like();

    // Stage 5 head.
    let (gesture_loss, g_logits) =
        cross_entropy_from_logits(&tape.class_logits, targets.class.index());
    let g_logits = Tensor::from_vec(&[tape.class_logits.len()], g_logits);
    let (mut g_feat4, gw5, gb5) = dense_backward(&tape.s4_feat, &params.s5_gesture.weight, &g_logits);
    grads.s5_gesture.weight = gw5;
    grads.s5_gesture.bias = gb5;

    // Stage 4 dense, back through dropout / STE / ReLU.
    if let Some(masks) = &tape.dropout {
        apply_mask(&mut g_feat4, &masks.s4);
    }
    if let Some(fq) = &tape.fq {
        apply_mask(&mut g_feat4, fq.acts.s4_dense.data());
    }
    let g_pre4 = relu_backward(&tape.s4_dense_pre, &g_feat4);
    let s4_dense_w = tape
        .fq
        .as_ref()
        .map(|f| &f.weights.s4_dense.0)
        .unwrap_or(&params.s4_dense.weight);
    let s4_in = tape.s4_act.last().unwrap_or(&tape.crop);
    let (g_flat4, mut gw4d, gb4d) = dense_backward(s4_in, s4_dense_w, &g_pre4);
    if let Some(fq) = &tape.fq {
        for (g, m) in gw4d.data_mut().iter_mut().zip(fq.weights.s4_dense.1.data()) {
            *g *= m;
        }
    }
    grads.s4_dense.weight = gw4d;
    grads.s4_dense.bias = gb4d;

    // Stage 4 conv trunk in reverse.
    let spatial_shapes: Vec<Vec<usize>> = tape.s4_pre.iter().map(|t| t.shape().to_vec()).collect();
    let mut g_act = g_flat4.reshaped(&spatial_shapes[spatial_shapes.len() - 1]);
    for i in (0..params.s4_conv.len()).rev() {
        if let Some(fq) = &tape.fq {
            apply_mask(&mut g_act, fq.acts.s4_conv[i].data());
        }
        let g_pre = relu_backward(&tape.s4_pre[i], &g_act);
        let conv_in = if i == 0 { &tape.crop } else { &tape.s4_act[i - 1] };
        let weight = tape
            .fq
            .as_ref()
            .map(|f| &f.weights.s4_conv[i].0)
            .unwrap_or(&params.s4_conv[i].weight);
        let (g_in, mut gw, gb) = conv2d_backward(conv_in, weight, &g_pre, config.s4_strides[i]);
        if let Some(fq) = &tape.fq {
            for (g, m) in gw.data_mut().iter_mut().zip(fq.weights.s4_conv[i].1.data()) {
                *g *= m;
            }
        }
        grads.s4_conv[i].weight = gw;
        grads.s4_conv[i].bias = gb;
        g_act = g_in;
    }
    if let Some(fq) = &tape.fq {
        apply_mask(&mut g_act, fq.acts.s4_input.data());
    }

    // Crop box gradient from the stage-4 path, plus the direct bbox MSE.
    let (_, g_bbox_crop) =
        crop_resize_backward(input, &tape.bbox, &g_act, config.crop_size, false);
    let (bbox_loss, g_bbox_mse) = if targets.hand_present {
        let (l, g) = mse(&tape.bbox, &targets.bbox);
        (l, g)
    } else {
        (0.0, vec![0.0; 3])
    };
    let mut g_bbox_pre = Tensor::zeros(&[3]);
    for j in 0..3 {
        let b = tape.bbox[j];
        let upstream = g_bbox_crop[j] + g_bbox_mse[j];
        g_bbox_pre.data_mut()[j] = upstream * b * (1.0 - b);
    }
    let (g_feat_bbox, gw3, gb3) = dense_backward(&tape.s2_feat, &params.s3_bbox.weight, &g_bbox_pre);
    grads.s3_bbox.weight = gw3;
    grads.s3_bbox.bias = gb3;

    // Presence head.
    let presence_target = if targets.hand_present { 1.0 } else { 0.0 };
    let (presence_loss, g_plogit) = bce_with_logits(tape.presence_logit, presence_target);
    let g_plogit = Tensor::from_vec(&[1], vec![g_plogit * presence_weight]);
    let (g_feat_presence, gwp, gbp) =
        dense_backward(&tape.s2_feat, &params.presence.weight, &g_plogit);
    grads.presence.weight = gwp;
    grads.presence.bias = gbp;

    // Stage 2 dense, back through dropout / STE / ReLU.
    let mut g_feat2 = g_feat_bbox;
    g_feat2.add_assign(&g_feat_presence);
    if let Some(masks) = &tape.dropout {
        apply_mask(&mut g_feat2, &masks.s2);
    }
    if let Some(fq) = &tape.fq {
        apply_mask(&mut g_feat2, fq.acts.s2_dense.data());
    }
    let g_pre2 = relu_backward(&tape.s2_dense_pre, &g_feat2);
    let s2_dense_w = tape
        .fq
        .as_ref()
        .map(|f| &f.weights.s2_dense.0)
        .unwrap_or(&params.s2_dense.weight);
    let s2_in = tape.s2_act.last().unwrap_or(&tape.s1_out);
    let (g_flat2, mut gw2d, gb2d) = dense_backward(s2_in, s2_dense_w, &g_pre2);
    if let Some(fq) = &tape.fq {
        for (g, m) in gw2d.data_mut().iter_mut().zip(fq.weights.s2_dense.1.data()) {
            *g *= m;
        }
    }
    grads.s2_dense.weight = gw2d;
    grads.s2_dense.bias = gb2d;

    // Stage 2 conv trunk in reverse; input gradients stop at stage 1.
    let shapes2: Vec<Vec<usize>> = tape.s2_pre.iter().map(|t| t.shape().to_vec()).collect();
    let mut g_act2 = g_flat2.reshaped(&shapes2[shapes2.len() - 1]);
    for i in (0..params.s2_conv.len()).rev() {
        if let Some(fq) = &tape.fq {
            apply_mask(&mut g_act2, fq.acts.s2_conv[i].data());
        }
        let g_pre = relu_backward(&tape.s2_pre[i], &g_act2);
        let conv_in = if i == 0 { &tape.s1_out } else { &tape.s2_act[i - 1] };
        let weight = tape
            .fq
            .as_ref()
            .map(|f| &f.weights.s2_conv[i].0)
            .unwrap_or(&params.s2_conv[i].weight);
        let (g_in, mut gw, gb) = conv2d_backward(conv_in, weight, &g_pre, config.s2_strides[i]);
        if let Some(fq) = &tape.fq {
            for (g, m) in gw.data_mut().iter_mut().zip(fq.weights.s2_conv[i].1.data()) {
                *g *= m;
            }
        }
        grads.s2_conv[i].weight = gw;
        grads.s2_conv[i].bias = gb;
        g_act2 = g_in;
    }

    let breakdown = LossBreakdown {
        gesture: gesture_loss,
        bbox: bbox_loss,
        presence: presence_loss,
        optimized: gesture_loss + bbox_loss + presence_weight * presence_loss,
    };
    (grads, breakdown)
}
