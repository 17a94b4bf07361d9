//! Fully integer stage-2/4 inference.
//!
//! Convs run as im2col + i16 dot products accumulated in i32 — the centered
//! activations (q - zp, at most +-255) and the int8 weights both fit i16, so
//! the inner loops are plain widening multiply-accumulate that the compiler
//! can turn into packed integer dot products. Accumulator safety is not
//! checked per MAC: `check_accumulator_bound` proves at preparation time
//! that the worst-case sum of any output element fits i32.
//!
//! Zero padding is exact: skipping an out-of-bounds tap adds nothing, and a
//! real zero is exactly the input zero point.

use crate::model::layers::{avgpool2_forward, conv_out_dim, crop_resize_forward, dense_forward};
use crate::model::loss::sigmoid;
use crate::model::net::{combine_probabilities, ForwardOutput, ModelConfig};
use crate::model::tensor::Tensor;

use super::{
    dequantize, quantize_tensor, requantize, IntLayer, QuantError, QuantizedParameters,
};

/// Worst-case |accumulator| per layer, proved at preparation time.
#[derive(Debug, Clone)]
pub struct BoundsReport {
    pub layer: String,
    pub worst_abs: i64,
}

/// The largest |q - zp| an input element can take.
fn max_centered(zp: i32) -> i64 {
    zp.max(255 - zp) as i64
}

pub(super) fn check_accumulator_bound(name: &str, layer: &IntLayer) -> Result<(), QuantError> {
    let worst = worst_abs_accumulator(layer);
    if worst > i32::MAX as i64 {
        return Err(QuantError::AccumulatorBound {
            layer: name.to_string(),
            worst,
        });
    }
    Ok(())
}

fn worst_abs_accumulator(layer: &IntLayer) -> i64 {
    let channels = layer.weights.shape[0];
    let per_channel = layer.weights.q.len() / channels;
    let max_in = max_centered(layer.input_zp);
    let mut worst = 0i64;
    for c in 0..channels {
        let wsum: i64 = layer.weights.q[c * per_channel..(c + 1) * per_channel]
            .iter()
            .map(|&w| (w as i64).abs())
            .sum();
        worst = worst.max(wsum * max_in + (layer.bias_q[c] as i64).abs());
    }
    worst
}

pub fn accumulator_bounds(qp: &QuantizedParameters) -> Vec<BoundsReport> {
    let mut out = Vec::new();
    for (i, layer) in qp.s2_conv.iter().enumerate() {
        out.push(BoundsReport {
            layer: format!("s2_conv{i}"),
            worst_abs: worst_abs_accumulator(layer),
        });
    }
    out.push(BoundsReport {
        layer: "s2_dense".into(),
        worst_abs: worst_abs_accumulator(&qp.s2_dense),
    });
    for (i, layer) in qp.s4_conv.iter().enumerate() {
        out.push(BoundsReport {
            layer: format!("s4_conv{i}"),
            worst_abs: worst_abs_accumulator(layer),
        });
    }
    out.push(BoundsReport {
        layer: "s4_dense".into(),
        worst_abs: worst_abs_accumulator(&qp.s4_dense),
    });
    out
}

#[inline]
fn dot_i16(a: &[i16], b: &[i16]) -> i32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0i32;
    for (&x, &y) in a.iter().zip(b.iter()) {
        acc += x as i32 * y as i32;
    }
    acc
}

fn center(q: &[u8], zp: i32) -> Vec<i16> {
    q.iter().map(|&v| v as i16 - zp as i16).collect()
}

/// Requantize an accumulator into the output u8 domain with fused ReLU
/// (clamping below at the output zero point, which is real zero).
#[inline]
fn finish(acc: i32, layer: &IntLayer, channel: usize) -> u8 {
    let q = requantize(acc, layer.requant[channel]) + layer.output_zp;
    q.clamp(layer.output_zp, 255) as u8
}

/// im2col over centered input: one row of c_in*9 taps per output pixel.
fn patches(
    centered: &[i16],
    c_in: usize,
    h: usize,
    w: usize,
    stride: usize,
) -> (Vec<i16>, usize, usize) {
    let h_out = conv_out_dim(h, stride);
    let w_out = conv_out_dim(w, stride);
    let cols = c_in * 9;
    let mut out = vec![0i16; h_out * w_out * cols];
    for oy in 0..h_out {
        for ox in 0..w_out {
            let row = &mut out[(oy * w_out + ox) * cols..(oy * w_out + ox + 1) * cols];
            for ic in 0..c_in {
                let plane = &centered[ic * h * w..(ic + 1) * h * w];
                for ky in 0..3 {
                    let iy = (oy * stride + ky) as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..3 {
                        let ix = (ox * stride + kx) as isize - 1;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        row[(ic * 3 + ky) * 3 + kx] = plane[iy as usize * w + ix as usize];
                    }
                }
            }
        }
    }
    (out, h_out, w_out)
}

/// Integer conv + ReLU: u8 in, u8 out.
fn conv2d_int(
    q_in: &[u8],
    c_in: usize,
    h: usize,
    w: usize,
    layer: &IntLayer,
    stride: usize,
) -> (Vec<u8>, usize, usize, usize) {
    let c_out = layer.weights.shape[0];
    let centered = center(q_in, layer.input_zp);
    let (patch, h_out, w_out) = patches(&centered, c_in, h, w, stride);
    let cols = c_in * 9;
    let pixels = h_out * w_out;
    let mut out = vec![0u8; c_out * pixels];
    for oc in 0..c_out {
        let w_row = &layer.w16[oc * cols..(oc + 1) * cols];
        let bias = layer.bias_q[oc];
        let out_plane = &mut out[oc * pixels..(oc + 1) * pixels];
        for (p, slot) in out_plane.iter_mut().enumerate() {
            let acc = bias + dot_i16(w_row, &patch[p * cols..(p + 1) * cols]);
            *slot = finish(acc, layer, oc);
        }
    }
    (out, c_out, h_out, w_out)
}

/// Integer dense + ReLU: u8 in, u8 out.
fn dense_int(q_in: &[u8], layer: &IntLayer) -> Vec<u8> {
    let o_dim = layer.weights.shape[0];
    let i_dim = layer.weights.q.len() / o_dim;
    assert_eq!(q_in.len(), i_dim);
    let centered = center(q_in, layer.input_zp);
    let mut out = vec![0u8; o_dim];
    for o in 0..o_dim {
        let acc = layer.bias_q[o] + dot_i16(&layer.w16[o * i_dim..(o + 1) * i_dim], &centered);
        out[o] = finish(acc, layer, o);
    }
    out
}

fn dequant_tensor(q: &[u8], scale: f32, zp: i32, shape: &[usize]) -> Tensor<f32> {
    Tensor::from_vec(shape, dequantize(q, scale, zp))
}

/// End-to-end inference with integer stages 2 and 4. Stage 1 (average
/// pool), the crop, and the three heads run float, mirroring the training
/// graph.
pub fn integer_forward(
    config: &ModelConfig,
    qp: &QuantizedParameters,
    input: &Tensor<f32>,
) -> Result<ForwardOutput, QuantError> {
    let expected = [config.input_channels, config.input_size, config.input_size];
    if input.shape() != expected {
        return Err(QuantError::BadInput {
            expected: expected.to_vec(),
            got: input.shape().to_vec(),
        });
    }

    // Stage 1 float, then enter the integer domain.
    let s1 = avgpool2_forward(input);
    let first = &qp.s2_conv[0];
    let mut q = quantize_tensor(&s1, first.input_scale, first.input_zp);
    let mut c = config.input_channels;
    let mut h = config.input_size / 2;
    let mut w = h;
    for (i, layer) in qp.s2_conv.iter().enumerate() {
        let (next, nc, nh, nw) = conv2d_int(&q, c, h, w, layer, config.s2_strides[i]);
        q = next;
        c = nc;
        h = nh;
        w = nw;
    }
    let feat_q = dense_int(&q, &qp.s2_dense);
    let feat = dequant_tensor(
        &feat_q,
        qp.s2_dense.output_scale,
        qp.s2_dense.output_zp,
        &[config.feature_dim],
    );

    // Float heads.
    let presence_logit =
        dense_forward(&feat, &qp.heads.presence.weight, &qp.heads.presence.bias).data()[0];
    let bbox_pre = dense_forward(&feat, &qp.heads.s3_bbox.weight, &qp.heads.s3_bbox.bias);
    if !presence_logit.is_finite() || !bbox_pre.all_finite() {
        return Err(QuantError::NonFinite("stage3"));
    }
    let bbox = [
        sigmoid(bbox_pre.data()[0]),
        sigmoid(bbox_pre.data()[1]),
        sigmoid(bbox_pre.data()[2]),
    ];

    // Crop the original float input, then the integer stage-4 trunk.
    let crop = crop_resize_forward(input, &bbox, config.crop_size);
    let first4 = &qp.s4_conv[0];
    let mut q4 = quantize_tensor(&crop, first4.input_scale, first4.input_zp);
    let mut c4 = config.input_channels;
    let mut h4 = config.crop_size;
    let mut w4 = config.crop_size;
    for (i, layer) in qp.s4_conv.iter().enumerate() {
        let (next, nc, nh, nw) = conv2d_int(&q4, c4, h4, w4, layer, config.s4_strides[i]);
        q4 = next;
        c4 = nc;
        h4 = nh;
        w4 = nw;
    }
    let feat4_q = dense_int(&q4, &qp.s4_dense);
    let feat4 = dequant_tensor(
        &feat4_q,
        qp.s4_dense.output_scale,
        qp.s4_dense.output_zp,
        &[config.feature_dim],
    );

    let logits_t = dense_forward(
        &feat4,
        &qp.heads.s5_gesture.weight,
        &qp.heads.s5_gesture.bias,
    );
    if !logits_t.all_finite() {
        return Err(QuantError::NonFinite("stage5"));
    }
    let class_logits = logits_t.data().to_vec();
    let presence = sigmoid(presence_logit);
    let combined = combine_probabilities(&class_logits, presence);
    Ok(ForwardOutput {
        bbox,
        presence_logit,
        presence,
        class_logits,
        combined,
    })
}
