//! Int8 quantization: per-channel symmetric weights, per-tensor asymmetric
//! activations, EMA range observers, fake-quantization for QAT, and the
//! fully integer inference path for stages 2 and 4.
//!
//! Activation ranges always include zero, so the real value 0 maps exactly
//! onto the zero point — that is what makes integer ReLU (`max(q, zp)`) and
//! zero padding exact.

mod integer;

pub use integer::{accumulator_bounds, integer_forward, BoundsReport};

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::model::container::{
    read_container, write_container, ContainerPayload, TensorRecord,
};
use crate::model::net::ModelConfig;
use crate::model::params::{LayerParam, Parameters};
use crate::model::tensor::Tensor;
use thiserror::Error;

pub const EMA_MOMENTUM: f64 = 0.99;

#[derive(Debug, Error)]
pub enum QuantError {
    #[error("activation tap {tap} has never been observed")]
    Uncalibrated { tap: usize },
    #[error("degenerate quantization range: {0}")]
    BadRange(String),
    #[error("int32 accumulator could overflow in {layer} (worst case {worst})")]
    AccumulatorBound { layer: String, worst: i64 },
    #[error("quantized container: {0}")]
    Container(String),
    #[error("input shape {got:?} does not match config expectation {expected:?}")]
    BadInput { expected: Vec<usize>, got: Vec<usize> },
    #[error("non-finite value in float stage {0}")]
    NonFinite(&'static str),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Flat indices of the activation taps, derived from the conv counts.
/// Order: stage-2 input, stage-2 convs, stage-2 dense, stage-4 input,
/// stage-4 convs, stage-4 dense.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TapLayout {
    n2: usize,
    n4: usize,
}

impl TapLayout {
    pub fn new(config: &ModelConfig) -> TapLayout {
        TapLayout {
            n2: config.s2_channels.len(),
            n4: config.s4_channels.len(),
        }
    }

    pub fn s2_input(&self) -> usize {
        0
    }

    pub fn s2_conv(&self, i: usize) -> usize {
        assert!(i < self.n2);
        1 + i
    }

    pub fn s2_dense(&self) -> usize {
        1 + self.n2
    }

    pub fn s4_input(&self) -> usize {
        2 + self.n2
    }

    pub fn s4_conv(&self, i: usize) -> usize {
        assert!(i < self.n4);
        3 + self.n2 + i
    }

    pub fn s4_dense(&self) -> usize {
        3 + self.n2 + self.n4
    }

    pub fn count(&self) -> usize {
        4 + self.n2 + self.n4
    }
}

/// Running min/max with EMA momentum; the tracked range always includes 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observer {
    pub min: f64,
    pub max: f64,
    pub initialized: bool,
}

impl Observer {
    pub fn new() -> Observer {
        Observer {
            min: 0.0,
            max: 0.0,
            initialized: false,
        }
    }

    pub fn observe(&mut self, data: &[f32], momentum: f64) {
        let mut lo = 0.0f64;
        let mut hi = 0.0f64;
        for &v in data {
            let v = v as f64;
            if v < lo {
                lo = v;
            }
            if v > hi {
                hi = v;
            }
        }
        if self.initialized {
            self.min = momentum * self.min + (1.0 - momentum) * lo;
            self.max = momentum * self.max + (1.0 - momentum) * hi;
        } else {
            self.min = lo;
            self.max = hi;
            self.initialized = true;
        }
    }

    /// (scale, zero_point) for u8; zero is exactly representable because the
    /// range brackets it.
    pub fn qparams(&self) -> (f32, i32) {
        let range = self.max - self.min;
        if range <= 0.0 {
            return (1.0, 0);
        }
        let scale = range / 255.0;
        let zp = (-self.min / scale).round() as i32;
        (scale as f32, zp.clamp(0, 255))
    }
}

impl Default for Observer {
    fn default() -> Self {
        Observer::new()
    }
}

/// All activation observers for one model.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantState {
    layout: TapLayout,
    observers: Vec<Observer>,
    pub momentum: f64,
}

impl QuantState {
    pub fn new(config: &ModelConfig) -> QuantState {
        let layout = TapLayout::new(config);
        QuantState {
            layout,
            observers: vec![Observer::new(); layout.count()],
            momentum: EMA_MOMENTUM,
        }
    }

    pub fn layout(&self) -> TapLayout {
        self.layout
    }

    pub fn observer(&self, tap: usize) -> &Observer {
        &self.observers[tap]
    }

    pub fn qparams(&self, tap: usize) -> Result<(f32, i32), QuantError> {
        let obs = &self.observers[tap];
        if !obs.initialized {
            return Err(QuantError::Uncalibrated { tap });
        }
        Ok(obs.qparams())
    }

    pub fn is_calibrated(&self) -> bool {
        self.observers.iter().all(|o| o.initialized)
    }

    /// Range tensors for the container: shape [taps] each.
    pub fn to_records(&self) -> Vec<(String, TensorRecord)> {
        let mins: Vec<f32> = self.observers.iter().map(|o| o.min as f32).collect();
        let maxs: Vec<f32> = self.observers.iter().map(|o| o.max as f32).collect();
        let n = self.observers.len();
        vec![
            (
                "quant.range_min".into(),
                TensorRecord::F32 {
                    shape: vec![n],
                    data: mins,
                },
            ),
            (
                "quant.range_max".into(),
                TensorRecord::F32 {
                    shape: vec![n],
                    data: maxs,
                },
            ),
        ]
    }

    pub fn from_ranges(
        config: &ModelConfig,
        mins: &[f32],
        maxs: &[f32],
    ) -> Result<QuantState, QuantError> {
        let layout = TapLayout::new(config);
        if mins.len() != layout.count() || maxs.len() != layout.count() {
            return Err(QuantError::Container(format!(
                "expected {} observer ranges, got {}/{}",
                layout.count(),
                mins.len(),
                maxs.len()
            )));
        }
        let observers = mins
            .iter()
            .zip(maxs.iter())
            .map(|(&lo, &hi)| Observer {
                min: lo as f64,
                max: hi as f64,
                initialized: true,
            })
            .collect();
        Ok(QuantState {
            layout,
            observers,
            momentum: EMA_MOMENTUM,
        })
    }
}

/// Forward-pass hook for QAT: observes (when `observe`) and fake-quantizes
/// activations at every tap.
pub struct FakeQuantSession<'a> {
    pub state: &'a mut QuantState,
    pub observe: bool,
}

impl FakeQuantSession<'_> {
    pub fn taps(&self) -> TapLayout {
        self.state.layout
    }

    /// Returns the quantize-dequantize image of `t` and the straight-through
    /// mask (1 where the value stayed inside the representable range).
    pub fn activation(
        &mut self,
        tap: usize,
        t: &Tensor<f32>,
    ) -> Result<(Tensor<f32>, Tensor<f32>), QuantError> {
        if self.observe {
            let momentum = self.state.momentum;
            self.state.observers[tap].observe(t.data(), momentum);
        }
        let (scale, zp) = self.state.qparams(tap)?;
        let mut fq = Vec::with_capacity(t.len());
        let mut mask = Vec::with_capacity(t.len());
        for &v in t.data() {
            let q = (v / scale).round() + zp as f32;
            let inside = (0.0..=255.0).contains(&q);
            let qc = q.clamp(0.0, 255.0);
            fq.push((qc - zp as f32) * scale);
            mask.push(if inside { 1.0 } else { 0.0 });
        }
        Ok((
            Tensor::from_vec(t.shape(), fq),
            Tensor::from_vec(t.shape(), mask),
        ))
    }
}

/// Per-channel symmetric int8 weights; channel = dim 0.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedWeights {
    pub shape: Vec<usize>,
    pub q: Vec<i8>,
    pub scales: Vec<f32>,
}

pub fn quantize_weights(w: &Tensor<f32>) -> QuantizedWeights {
    let channels = w.shape()[0];
    let per_channel = w.len() / channels;
    let mut scales = Vec::with_capacity(channels);
    let mut q = Vec::with_capacity(w.len());
    for c in 0..channels {
        let slice = &w.data()[c * per_channel..(c + 1) * per_channel];
        let max_abs = slice.iter().fold(0.0f32, |m, &v| m.max(v.abs()));
        // An all-zero channel gets scale 1 so dequantization stays exact.
        let scale = if max_abs == 0.0 { 1.0 } else { max_abs / 127.0 };
        scales.push(scale);
        for &v in slice {
            // f32::round ties away from zero, which is the convention here.
            let qi = (v / scale).round().clamp(-127.0, 127.0) as i8;
            q.push(qi);
        }
    }
    QuantizedWeights {
        shape: w.shape().to_vec(),
        q,
        scales,
    }
}

/// Quantize-dequantize image of the weights plus the straight-through mask.
/// With per-channel scales derived from the same tensor the clamp never
/// binds, but the mask is produced anyway so the QAT backward is uniform.
pub fn fake_quant_weights(w: &Tensor<f32>) -> (Tensor<f32>, Tensor<f32>) {
    let qw = quantize_weights(w);
    let channels = w.shape()[0];
    let per_channel = w.len() / channels;
    let mut fq = Vec::with_capacity(w.len());
    let mut mask = Vec::with_capacity(w.len());
    for c in 0..channels {
        let scale = qw.scales[c];
        for i in 0..per_channel {
            let v = w.data()[c * per_channel + i];
            let raw = (v / scale).round();
            fq.push(qw.q[c * per_channel + i] as f32 * scale);
            mask.push(if raw.abs() <= 127.0 { 1.0 } else { 0.0 });
        }
    }
    (
        Tensor::from_vec(w.shape(), fq),
        Tensor::from_vec(w.shape(), mask),
    )
}

/// Fixed-point requantization factor: real multiplier m == multiplier /
/// 2^(31 + shift), with multiplier in [2^30, 2^31).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Requant {
    pub multiplier: i32,
    pub shift: i32,
}

pub fn quantize_multiplier(m: f64) -> Result<Requant, QuantError> {
    if !(m > 0.0) || !m.is_finite() {
        return Err(QuantError::BadRange(format!("requant multiplier {m}")));
    }
    let mut mm = m;
    let mut shift = 0i32;
    while mm < 0.5 {
        mm *= 2.0;
        shift += 1;
    }
    while mm >= 1.0 {
        mm /= 2.0;
        shift -= 1;
    }
    let mut q = (mm * (1i64 << 31) as f64).round() as i64;
    if q == 1i64 << 31 {
        q >>= 1;
        shift -= 1;
    }
    if 31 + shift <= 0 {
        return Err(QuantError::BadRange(format!(
            "requant multiplier {m} too large for fixed point"
        )));
    }
    Ok(Requant {
        multiplier: q as i32,
        shift,
    })
}

/// x / 2^exp with round-half-to-even, matching what a shift-based integer
/// implementation does.
pub fn rounding_shift_right(x: i64, exp: u32) -> i64 {
    if exp == 0 {
        return x;
    }
    let mask = (1i64 << exp) - 1;
    let rem = x & mask;
    let base = x >> exp;
    let half = 1i64 << (exp - 1);
    if rem > half || (rem == half && (base & 1) == 1) {
        base + 1
    } else {
        base
    }
}

pub fn requantize(acc: i32, r: Requant) -> i32 {
    let prod = acc as i64 * r.multiplier as i64;
    rounding_shift_right(prod, (31 + r.shift) as u32) as i32
}

/// One integer conv or dense layer: quantized weights, int32 bias at scale
/// s_w * s_in, io quantization parameters, per-channel requant factors.
#[derive(Debug, Clone, PartialEq)]
pub struct IntLayer {
    pub weights: QuantizedWeights,
    pub bias_q: Vec<i32>,
    pub input_scale: f32,
    pub input_zp: i32,
    pub output_scale: f32,
    pub output_zp: i32,
    pub requant: Vec<Requant>,
    /// Weights pre-widened to i16 for the dot-product kernels; derived from
    /// `weights`, never serialized.
    pub(crate) w16: Vec<i16>,
}

fn prepare_layer(
    name: &str,
    layer: &LayerParam,
    input_qp: (f32, i32),
    output_qp: (f32, i32),
) -> Result<IntLayer, QuantError> {
    let weights = quantize_weights(&layer.weight);
    let (input_scale, input_zp) = input_qp;
    let (output_scale, output_zp) = output_qp;
    let mut bias_q = Vec::with_capacity(layer.bias.len());
    let mut requant = Vec::with_capacity(weights.scales.len());
    for (c, &ws) in weights.scales.iter().enumerate() {
        let bias_scale = ws as f64 * input_scale as f64;
        let b = layer.bias.data()[c] as f64 / bias_scale;
        if b.abs() > i32::MAX as f64 {
            return Err(QuantError::BadRange(format!("bias overflow in {name}")));
        }
        bias_q.push(b.round() as i32);
        requant.push(quantize_multiplier(bias_scale / output_scale as f64)?);
    }
    let w16 = weights.q.iter().map(|&v| v as i16).collect();
    let out = IntLayer {
        weights,
        bias_q,
        input_scale,
        input_zp,
        output_scale,
        output_zp,
        requant,
        w16,
    };
    integer::check_accumulator_bound(name, &out)?;
    Ok(out)
}

/// Heads that stay float at inference.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatHeads {
    pub presence: LayerParam,
    pub s3_bbox: LayerParam,
    pub s5_gesture: LayerParam,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedParameters {
    pub config: ModelConfig,
    pub s2_conv: Vec<IntLayer>,
    pub s2_dense: IntLayer,
    pub s4_conv: Vec<IntLayer>,
    pub s4_dense: IntLayer,
    pub heads: FloatHeads,
}

/// Freeze observers + float weights into a fully integer stage-2/4 model.
pub fn prepare_quantized(
    config: &ModelConfig,
    params: &Parameters,
    state: &QuantState,
) -> Result<QuantizedParameters, QuantError> {
    let taps = state.layout();
    let mut s2_conv = Vec::with_capacity(params.s2_conv.len());
    for (i, layer) in params.s2_conv.iter().enumerate() {
        let input_qp = if i == 0 {
            state.qparams(taps.s2_input())?
        } else {
            state.qparams(taps.s2_conv(i - 1))?
        };
        let output_qp = state.qparams(taps.s2_conv(i))?;
        s2_conv.push(prepare_layer(
            &format!("s2_conv{i}"),
            layer,
            input_qp,
            output_qp,
        )?);
    }
    let s2_dense = prepare_layer(
        "s2_dense",
        &params.s2_dense,
        state.qparams(taps.s2_conv(params.s2_conv.len() - 1))?,
        state.qparams(taps.s2_dense())?,
    )?;
    let mut s4_conv = Vec::with_capacity(params.s4_conv.len());
    for (i, layer) in params.s4_conv.iter().enumerate() {
        let input_qp = if i == 0 {
            state.qparams(taps.s4_input())?
        } else {
            state.qparams(taps.s4_conv(i - 1))?
        };
        let output_qp = state.qparams(taps.s4_conv(i))?;
        s4_conv.push(prepare_layer(
            &format!("s4_conv{i}"),
            layer,
            input_qp,
            output_qp,
        )?);
    }
    let s4_dense = prepare_layer(
        "s4_dense",
        &params.s4_dense,
        state.qparams(taps.s4_conv(params.s4_conv.len() - 1))?,
        state.qparams(taps.s4_dense())?,
    )?;
    Ok(QuantizedParameters {
        config: config.clone(),
        s2_conv,
        s2_dense,
        s4_conv,
        s4_dense,
        heads: FloatHeads {
            presence: params.presence.clone(),
            s3_bbox: params.s3_bbox.clone(),
            s5_gesture: params.s5_gesture.clone(),
        },
    })
}

/// Observe activation ranges by running inference over `inputs` with the
/// fake-quant taps live. QAT training does this continuously; this is for
/// calibrating without weight updates.
pub fn calibrate(
    config: &ModelConfig,
    params: &Parameters,
    state: &mut QuantState,
    inputs: &[Tensor<f32>],
) -> Result<(), crate::model::ModelError> {
    for input in inputs {
        let mut ctx = crate::model::net::ForwardCtx {
            dropout: None,
            quant: Some(FakeQuantSession {
                state,
                observe: true,
            }),
        };
        crate::model::net::forward(config, params, input, &mut ctx)?;
    }
    Ok(())
}

fn layer_records(name: &str, layer: &IntLayer, out: &mut Vec<(String, TensorRecord)>) {
    out.push((
        format!("{name}.q_weight"),
        TensorRecord::I8 {
            shape: layer.weights.shape.clone(),
            data: layer.weights.q.clone(),
        },
    ));
    out.push((
        format!("{name}.w_scales"),
        TensorRecord::F32 {
            shape: vec![layer.weights.scales.len()],
            data: layer.weights.scales.clone(),
        },
    ));
    out.push((
        format!("{name}.bias_q"),
        TensorRecord::I32 {
            shape: vec![layer.bias_q.len()],
            data: layer.bias_q.clone(),
        },
    ));
    out.push((
        format!("{name}.io_params"),
        TensorRecord::F32 {
            shape: vec![4],
            data: vec![
                layer.input_scale,
                layer.input_zp as f32,
                layer.output_scale,
                layer.output_zp as f32,
            ],
        },
    ));
    let mut rq = Vec::with_capacity(2 * layer.requant.len());
    rq.extend(layer.requant.iter().map(|r| r.multiplier));
    rq.extend(layer.requant.iter().map(|r| r.shift));
    out.push((
        format!("{name}.requant"),
        TensorRecord::I32 {
            shape: vec![2, layer.requant.len()],
            data: rq,
        },
    ));
}

pub fn save_quantized(path: &Path, qp: &QuantizedParameters) -> Result<(), QuantError> {
    let meta = serde_json::json!({
        "kind": "quantized_model",
        "model_config": qp.config,
    });
    let mut tensors = Vec::new();
    for (i, layer) in qp.s2_conv.iter().enumerate() {
        layer_records(&format!("s2_conv{i}"), layer, &mut tensors);
    }
    layer_records("s2_dense", &qp.s2_dense, &mut tensors);
    for (i, layer) in qp.s4_conv.iter().enumerate() {
        layer_records(&format!("s4_conv{i}"), layer, &mut tensors);
    }
    layer_records("s4_dense", &qp.s4_dense, &mut tensors);
    for (name, head) in [
        ("presence", &qp.heads.presence),
        ("s3_bbox", &qp.heads.s3_bbox),
        ("s5_gesture", &qp.heads.s5_gesture),
    ] {
        tensors.push((
            format!("{name}.weight"),
            TensorRecord::F32 {
                shape: head.weight.shape().to_vec(),
                data: head.weight.data().to_vec(),
            },
        ));
        tensors.push((
            format!("{name}.bias"),
            TensorRecord::F32 {
                shape: head.bias.shape().to_vec(),
                data: head.bias.data().to_vec(),
            },
        ));
    }
    write_container(path, &ContainerPayload { meta, tensors })
        .map_err(|e| QuantError::Container(e.to_string()))
}

struct RecordMap {
    records: std::collections::HashMap<String, TensorRecord>,
}

impl RecordMap {
    fn take_f32(&mut self, name: &str) -> Result<(Vec<usize>, Vec<f32>), QuantError> {
        match self.records.remove(name) {
            Some(TensorRecord::F32 { shape, data }) => Ok((shape, data)),
            Some(_) => Err(QuantError::Container(format!("{name}: wrong dtype"))),
            None => Err(QuantError::Container(format!("{name}: missing"))),
        }
    }

    fn take_i8(&mut self, name: &str) -> Result<(Vec<usize>, Vec<i8>), QuantError> {
        match self.records.remove(name) {
            Some(TensorRecord::I8 { shape, data }) => Ok((shape, data)),
            Some(_) => Err(QuantError::Container(format!("{name}: wrong dtype"))),
            None => Err(QuantError::Container(format!("{name}: missing"))),
        }
    }

    fn take_i32(&mut self, name: &str) -> Result<(Vec<usize>, Vec<i32>), QuantError> {
        match self.records.remove(name) {
            Some(TensorRecord::I32 { shape, data }) => Ok((shape, data)),
            Some(_) => Err(QuantError::Container(format!("{name}: wrong dtype"))),
            None => Err(QuantError::Container(format!("{name}: missing"))),
        }
    }

    fn take_layer(&mut self, name: &str) -> Result<IntLayer, QuantError> {
        let (w_shape, q) = self.take_i8(&format!("{name}.q_weight"))?;
        let (_, scales) = self.take_f32(&format!("{name}.w_scales"))?;
        let (_, bias_q) = self.take_i32(&format!("{name}.bias_q"))?;
        let (_, io) = self.take_f32(&format!("{name}.io_params"))?;
        let (rq_shape, rq) = self.take_i32(&format!("{name}.requant"))?;
        if io.len() != 4 || rq_shape.len() != 2 || rq_shape[0] != 2 {
            return Err(QuantError::Container(format!("{name}: malformed records")));
        }
        let n = rq_shape[1];
        let requant = (0..n)
            .map(|c| Requant {
                multiplier: rq[c],
                shift: rq[n + c],
            })
            .collect();
        let w16 = q.iter().map(|&v| v as i16).collect();
        Ok(IntLayer {
            weights: QuantizedWeights {
                shape: w_shape,
                q,
                scales,
            },
            bias_q,
            input_scale: io[0],
            input_zp: io[1] as i32,
            output_scale: io[2],
            output_zp: io[3] as i32,
            requant,
            w16,
        })
    }

    fn take_head(&mut self, name: &str) -> Result<LayerParam, QuantError> {
        let (w_shape, w) = self.take_f32(&format!("{name}.weight"))?;
        let (b_shape, b) = self.take_f32(&format!("{name}.bias"))?;
        Ok(LayerParam {
            weight: Tensor::from_vec(&w_shape, w),
            bias: Tensor::from_vec(&b_shape, b),
        })
    }
}

pub fn load_quantized(path: &Path) -> Result<QuantizedParameters, QuantError> {
    let payload = read_container(path).map_err(|e| QuantError::Container(e.to_string()))?;
    let config: ModelConfig = serde_json::from_value(payload.meta["model_config"].clone())
        .map_err(|e| QuantError::Container(format!("model_config: {e}")))?;
    let mut map = RecordMap {
        records: payload.tensors.into_iter().collect(),
    };
    let mut s2_conv = Vec::new();
    for i in 0..config.s2_channels.len() {
        s2_conv.push(map.take_layer(&format!("s2_conv{i}"))?);
    }
    let s2_dense = map.take_layer("s2_dense")?;
    let mut s4_conv = Vec::new();
    for i in 0..config.s4_channels.len() {
        s4_conv.push(map.take_layer(&format!("s4_conv{i}"))?);
    }
    let s4_dense = map.take_layer("s4_dense")?;
    let heads = FloatHeads {
        presence: map.take_head("presence")?,
        s3_bbox: map.take_head("s3_bbox")?,
        s5_gesture: map.take_head("s5_gesture")?,
    };
    Ok(QuantizedParameters {
        config,
        s2_conv,
        s2_dense,
        s4_conv,
        s4_dense,
        heads,
    })
}

/// u8 quantization of a float tensor under the given parameters.
pub fn quantize_tensor(t: &Tensor<f32>, scale: f32, zp: i32) -> Vec<u8> {
    t.data()
        .iter()
        .map(|&v| ((v / scale).round() as i32 + zp).clamp(0, 255) as u8)
        .collect()
}

pub fn dequantize(q: &[u8], scale: f32, zp: i32) -> Vec<f32> {
    q.iter().map(|&v| (v as i32 - zp) as f32 * scale).collect()
}
