//! Forward and backward passes for the structural layers.
//!
//! All convolutions are 3x3 with padding 1; only the stride varies. That is
//! the only geometry the network uses, and fixing it keeps the inner loops
//! simple enough for the compiler to vectorize.
//!
//! Backward functions recompute index geometry rather than caching it; the
//! activation caches the network keeps are exactly the tensors passed back in.

use num_traits::Float;

use super::tensor::Tensor;

const KERNEL: usize = 3;
const PAD: usize = 1;

/// Output side length of a 3x3/pad-1 conv over `in_dim` at `stride`.
pub fn conv_out_dim(in_dim: usize, stride: usize) -> usize {
    (in_dim + 2 * PAD - KERNEL) / stride + 1
}

/// Range of output indices whose input index `o*stride + k - 1` stays in
/// bounds, as [start, end).
fn valid_range(k: usize, stride: usize, in_dim: usize, out_dim: usize) -> (usize, usize) {
    let start = if k == 0 { 1 } else { 0 };
    let end = ((in_dim - k) / stride + 1).min(out_dim);
    (start.min(end), end)
}

/// input (C_in, H, W), weight (C_out, C_in, 3, 3), bias (C_out) -> (C_out, H', W').
pub fn conv2d_forward<F: Float>(
    input: &Tensor<F>,
    weight: &Tensor<F>,
    bias: &Tensor<F>,
    stride: usize,
) -> Tensor<F> {
    let (c_in, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let c_out = weight.shape()[0];
    assert_eq!(weight.shape(), &[c_out, c_in, KERNEL, KERNEL]);
    assert_eq!(bias.shape(), &[c_out]);
    let h_out = conv_out_dim(h, stride);
    let w_out = conv_out_dim(w, stride);

    let mut out = vec![F::zero(); c_out * h_out * w_out];
    let in_data = input.data();
    let w_data = weight.data();
    for oc in 0..c_out {
        let out_plane = &mut out[oc * h_out * w_out..(oc + 1) * h_out * w_out];
        let b = bias.data()[oc];
        for v in out_plane.iter_mut() {
            *v = b;
        }
        for ic in 0..c_in {
            let in_plane = &in_data[ic * h * w..(ic + 1) * h * w];
            for ky in 0..KERNEL {
                let (oy0, oy1) = valid_range(ky, stride, h, h_out);
                for kx in 0..KERNEL {
                    let wv = w_data[((oc * c_in + ic) * KERNEL + ky) * KERNEL + kx];
                    let (ox0, ox1) = valid_range(kx, stride, w, w_out);
                    for oy in oy0..oy1 {
                        let iy = oy * stride + ky - PAD;
                        let in_row = &in_plane[iy * w..(iy + 1) * w];
                        let out_row = &mut out_plane[oy * w_out..(oy + 1) * w_out];
                        for ox in ox0..ox1 {
                            let ix = ox * stride + kx - PAD;
                            out_row[ox] = out_row[ox] + wv * in_row[ix];
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[c_out, h_out, w_out], out)
}

/// Returns (grad_input, grad_weight, grad_bias).
pub fn conv2d_backward<F: Float>(
    input: &Tensor<F>,
    weight: &Tensor<F>,
    grad_out: &Tensor<F>,
    stride: usize,
) -> (Tensor<F>, Tensor<F>, Tensor<F>) {
    let (c_in, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let c_out = weight.shape()[0];
    let (h_out, w_out) = (grad_out.shape()[1], grad_out.shape()[2]);
    assert_eq!(grad_out.shape()[0], c_out);
    assert_eq!(h_out, conv_out_dim(h, stride));

    let mut grad_in = vec![F::zero(); c_in * h * w];
    let mut grad_w = vec![F::zero(); weight.len()];
    let mut grad_b = vec![F::zero(); c_out];
    let in_data = input.data();
    let w_data = weight.data();
    let g_data = grad_out.data();

    for oc in 0..c_out {
        let g_plane = &g_data[oc * h_out * w_out..(oc + 1) * h_out * w_out];
        grad_b[oc] = g_plane.iter().fold(F::zero(), |acc, &v| acc + v);
        for ic in 0..c_in {
            let in_plane = &in_data[ic * h * w..(ic + 1) * h * w];
            let gi_plane = &mut grad_in[ic * h * w..(ic + 1) * h * w];
            for ky in 0..KERNEL {
                let (oy0, oy1) = valid_range(ky, stride, h, h_out);
                for kx in 0..KERNEL {
                    let widx = ((oc * c_in + ic) * KERNEL + ky) * KERNEL + kx;
                    let wv = w_data[widx];
                    let (ox0, ox1) = valid_range(kx, stride, w, w_out);
                    let mut wsum = F::zero();
                    for oy in oy0..oy1 {
                        let iy = oy * stride + ky - PAD;
                        let in_row = &in_plane[iy * w..(iy + 1) * w];
                        let gi_row = &mut gi_plane[iy * w..(iy + 1) * w];
                        let g_row = &g_plane[oy * w_out..(oy + 1) * w_out];
                        for ox in ox0..ox1 {
                            let ix = ox * stride + kx - PAD;
                            let g = g_row[ox];
                            wsum = wsum + g * in_row[ix];
                            gi_row[ix] = gi_row[ix] + wv * g;
                        }
                    }
                    grad_w[widx] = grad_w[widx] + wsum;
                }
            }
        }
    }
    (
        Tensor::from_vec(&[c_in, h, w], grad_in),
        Tensor::from_vec(weight.shape(), grad_w),
        Tensor::from_vec(&[c_out], grad_b),
    )
}

/// input (I), weight (O, I), bias (O) -> (O).
pub fn dense_forward<F: Float>(input: &Tensor<F>, weight: &Tensor<F>, bias: &Tensor<F>) -> Tensor<F> {
    let i_dim = input.len();
    let o_dim = weight.shape()[0];
    assert_eq!(weight.shape()[1], i_dim);
    assert_eq!(bias.len(), o_dim);
    let x = input.data();
    let mut out = Vec::with_capacity(o_dim);
    for o in 0..o_dim {
        let row = &weight.data()[o * i_dim..(o + 1) * i_dim];
        let mut acc = F::zero();
        for (wv, xv) in row.iter().zip(x.iter()) {
            acc = acc + *wv * *xv;
        }
        out.push(acc + bias.data()[o]);
    }
    Tensor::from_vec(&[o_dim], out)
}

pub fn dense_backward<F: Float>(
    input: &Tensor<F>,
    weight: &Tensor<F>,
    grad_out: &Tensor<F>,
) -> (Tensor<F>, Tensor<F>, Tensor<F>) {
    let i_dim = input.len();
    let o_dim = weight.shape()[0];
    assert_eq!(grad_out.len(), o_dim);
    let x = input.data();
    let mut grad_in = vec![F::zero(); i_dim];
    let mut grad_w = vec![F::zero(); o_dim * i_dim];
    for o in 0..o_dim {
        let g = grad_out.data()[o];
        let w_row = &weight.data()[o * i_dim..(o + 1) * i_dim];
        let gw_row = &mut grad_w[o * i_dim..(o + 1) * i_dim];
        for i in 0..i_dim {
            grad_in[i] = grad_in[i] + g * w_row[i];
            gw_row[i] = g * x[i];
        }
    }
    (
        Tensor::from_vec(&[i_dim], grad_in),
        Tensor::from_vec(weight.shape(), grad_w),
        Tensor::from_vec(&[o_dim], grad_out.data().to_vec()),
    )
}

pub fn relu_forward<F: Float>(input: &Tensor<F>) -> Tensor<F> {
    input.map(|v| if v > F::zero() { v } else { F::zero() })
}

/// `pre` is the pre-activation input to the ReLU.
pub fn relu_backward<F: Float>(pre: &Tensor<F>, grad_out: &Tensor<F>) -> Tensor<F> {
    assert_eq!(pre.shape(), grad_out.shape());
    let data = pre
        .data()
        .iter()
        .zip(grad_out.data().iter())
        .map(|(&p, &g)| if p > F::zero() { g } else { F::zero() })
        .collect();
    Tensor::from_vec(pre.shape(), data)
}

/// 2x2 average pool, stride 2. H and W must be even.
pub fn avgpool2_forward<F: Float>(input: &Tensor<F>) -> Tensor<F> {
    let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    assert!(h % 2 == 0 && w % 2 == 0, "avgpool2 needs even dims");
    let (ho, wo) = (h / 2, w / 2);
    let quarter = F::from(0.25).unwrap();
    let mut out = vec![F::zero(); c * ho * wo];
    for ci in 0..c {
        let in_plane = &input.data()[ci * h * w..(ci + 1) * h * w];
        let out_plane = &mut out[ci * ho * wo..(ci + 1) * ho * wo];
        for oy in 0..ho {
            let r0 = &in_plane[(2 * oy) * w..(2 * oy + 1) * w];
            let r1 = &in_plane[(2 * oy + 1) * w..(2 * oy + 2) * w];
            let out_row = &mut out_plane[oy * wo..(oy + 1) * wo];
            for ox in 0..wo {
                out_row[ox] =
                    (r0[2 * ox] + r0[2 * ox + 1] + r1[2 * ox] + r1[2 * ox + 1]) * quarter;
            }
        }
    }
    Tensor::from_vec(&[c, ho, wo], out)
}

pub fn avgpool2_backward<F: Float>(grad_out: &Tensor<F>, in_shape: &[usize]) -> Tensor<F> {
    let (c, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
    let (ho, wo) = (h / 2, w / 2);
    assert_eq!(grad_out.shape(), &[c, ho, wo]);
    let quarter = F::from(0.25).unwrap();
    let mut grad_in = vec![F::zero(); c * h * w];
    for ci in 0..c {
        let g_plane = &grad_out.data()[ci * ho * wo..(ci + 1) * ho * wo];
        let gi_plane = &mut grad_in[ci * h * w..(ci + 1) * h * w];
        for oy in 0..ho {
            for ox in 0..wo {
                let g = g_plane[oy * wo + ox] * quarter;
                gi_plane[(2 * oy) * w + 2 * ox] = g;
                gi_plane[(2 * oy) * w + 2 * ox + 1] = g;
                gi_plane[(2 * oy + 1) * w + 2 * ox] = g;
                gi_plane[(2 * oy + 1) * w + 2 * ox + 1] = g;
            }
        }
    }
    Tensor::from_vec(in_shape, grad_in)
}

/// Sampling geometry shared by the crop forward and backward passes.
///
/// The box is square in pixel space: side_px = side * (min(H,W)-1), floored
/// at 2 px. Output index i samples x0 + i*side_px/(res-1), so side = 1 with
/// center 0.5 and res == W reproduces the input exactly. Samples outside the
/// image clamp to the edge pixel (zero gradient into the coordinate there).
struct CropGeometry<F> {
    sx: Vec<F>,
    sy: Vec<F>,
    // d sample / d side per output index; zero when the 2 px floor is active.
    dsx_dside: Vec<F>,
    dsy_dside: Vec<F>,
    dsx_dcx: F,
    dsy_dcy: F,
}

fn crop_geometry<F: Float>(h: usize, w: usize, bbox: &[F; 3], res: usize) -> CropGeometry<F> {
    assert!(res >= 2);
    let fw = F::from(w - 1).unwrap();
    let fh = F::from(h - 1).unwrap();
    let min_dim = F::from(w.min(h) - 1).unwrap();
    let two = F::from(2.0).unwrap();
    let span_raw = bbox[2] * min_dim;
    let (span, dspan) = if span_raw > two {
        (span_raw, min_dim)
    } else {
        (two, F::zero())
    };
    let cx = bbox[0] * fw;
    let cy = bbox[1] * fh;
    let denom = F::from(res - 1).unwrap();
    let half = F::from(0.5).unwrap();
    let mut sx = Vec::with_capacity(res);
    let mut sy = Vec::with_capacity(res);
    let mut dsx = Vec::with_capacity(res);
    let mut dsy = Vec::with_capacity(res);
    for i in 0..res {
        let frac = F::from(i).unwrap() / denom;
        sx.push(cx - span * half + frac * span);
        sy.push(cy - span * half + frac * span);
        dsx.push(dspan * (frac - half));
        dsy.push(dspan * (frac - half));
    }
    CropGeometry {
        sx,
        sy,
        dsx_dside: dsx,
        dsy_dside: dsy,
        dsx_dcx: fw,
        dsy_dcy: fh,
    }
}

/// Clamped bilinear lookup support: (i0, i1, frac, d_frac) where d_frac is 0
/// if the coordinate was clamped.
fn bilinear_axis<F: Float>(coord: F, dim: usize) -> (usize, usize, F, F) {
    let max = F::from(dim - 1).unwrap();
    if coord <= F::zero() {
        (0, 0, F::zero(), F::zero())
    } else if coord >= max {
        (dim - 1, dim - 1, F::zero(), F::zero())
    } else {
        let floor = coord.floor();
        let i0 = floor.to_usize().unwrap();
        let i1 = (i0 + 1).min(dim - 1);
        (i0, i1, coord - floor, F::one())
    }
}

/// image (C, H, W), bbox (cx, cy, side) normalized to [0,1] -> (C, res, res).
pub fn crop_resize_forward<F: Float>(image: &Tensor<F>, bbox: &[F; 3], res: usize) -> Tensor<F> {
    let (c, h, w) = (image.shape()[0], image.shape()[1], image.shape()[2]);
    let geo = crop_geometry(h, w, bbox, res);
    let one = F::one();
    let mut out = vec![F::zero(); c * res * res];
    for oy in 0..res {
        let (y0, y1, fy, _) = bilinear_axis(geo.sy[oy], h);
        for ox in 0..res {
            let (x0, x1, fx, _) = bilinear_axis(geo.sx[ox], w);
            for ci in 0..c {
                let plane = &image.data()[ci * h * w..(ci + 1) * h * w];
                let v00 = plane[y0 * w + x0];
                let v01 = plane[y0 * w + x1];
                let v10 = plane[y1 * w + x0];
                let v11 = plane[y1 * w + x1];
                let top = v00 * (one - fx) + v01 * fx;
                let bot = v10 * (one - fx) + v11 * fx;
                out[(ci * res + oy) * res + ox] = top * (one - fy) + bot * fy;
            }
        }
    }
    Tensor::from_vec(&[c, res, res], out)
}

/// Returns (grad_image, grad_bbox). grad_image may be skipped by passing
/// `want_image_grad = false` (the training path never needs it).
pub fn crop_resize_backward<F: Float>(
    image: &Tensor<F>,
    bbox: &[F; 3],
    grad_out: &Tensor<F>,
    res: usize,
    want_image_grad: bool,
) -> (Option<Tensor<F>>, [F; 3]) {
    let (c, h, w) = (image.shape()[0], image.shape()[1], image.shape()[2]);
    assert_eq!(grad_out.shape(), &[c, res, res]);
    let geo = crop_geometry(h, w, bbox, res);
    let one = F::one();
    let mut grad_img = if want_image_grad {
        vec![F::zero(); c * h * w]
    } else {
        Vec::new()
    };
    let mut g_cx = F::zero();
    let mut g_cy = F::zero();
    let mut g_side = F::zero();
    for oy in 0..res {
        let (y0, y1, fy, dy_live) = bilinear_axis(geo.sy[oy], h);
        for ox in 0..res {
            let (x0, x1, fx, dx_live) = bilinear_axis(geo.sx[ox], w);
            let mut d_dsx = F::zero();
            let mut d_dsy = F::zero();
            for ci in 0..c {
                let plane = &image.data()[ci * h * w..(ci + 1) * h * w];
                let v00 = plane[y0 * w + x0];
                let v01 = plane[y0 * w + x1];
                let v10 = plane[y1 * w + x0];
                let v11 = plane[y1 * w + x1];
                let g = grad_out.data()[(ci * res + oy) * res + ox];
                // d value / d sx = (1-fy)(v01-v00) + fy(v11-v10), zero when clamped.
                d_dsx = d_dsx + g * ((one - fy) * (v01 - v00) + fy * (v11 - v10));
                d_dsy = d_dsy + g * ((one - fx) * (v10 - v00) + fx * (v11 - v01));
                if want_image_grad {
                    let gi = &mut grad_img[ci * h * w..(ci + 1) * h * w];
                    gi[y0 * w + x0] = gi[y0 * w + x0] + g * (one - fy) * (one - fx);
                    gi[y0 * w + x1] = gi[y0 * w + x1] + g * (one - fy) * fx;
                    gi[y1 * w + x0] = gi[y1 * w + x0] + g * fy * (one - fx);
                    gi[y1 * w + x1] = gi[y1 * w + x1] + g * fy * fx;
                }
            }
            d_dsx = d_dsx * dx_live;
            d_dsy = d_dsy * dy_live;
            g_cx = g_cx + d_dsx * geo.dsx_dcx;
            g_cy = g_cy + d_dsy * geo.dsy_dcy;
            g_side = g_side + d_dsx * geo.dsx_dside[ox] + d_dsy * geo.dsy_dside[oy];
        }
    }
    let grad_image = if want_image_grad {
        Some(Tensor::from_vec(&[c, h, w], grad_img))
    } else {
        None
    };
    (grad_image, [g_cx, g_cy, g_side])
}
