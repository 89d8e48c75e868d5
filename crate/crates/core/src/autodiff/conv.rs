//! Convolution and spatial resampling ops for the image branch.
//!
//! Feature maps are laid out [C, H, W]. Convolution is realized as a
//! window-unrolled matrix product (im2col + the matmul kernel), strides 1
//! and 2, square kernels.

use super::linalg::{mm_abt_acc, mm_acc, mm_atb_acc};
use super::{GradSink, Inner, Tensor};
use crate::scalar::Scalar;

fn conv_out_len(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - kernel) / stride + 1
}

// Padding replicates the border (clamped indexing): convolving a constant
// image stays constant at every pixel, which the segmentation invariants
// rely on.
fn im2col<T: Scalar>(
    x: &[T],
    c_in: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> Vec<T> {
    let ho = conv_out_len(h, k, stride, pad);
    let wo = conv_out_len(w, k, stride, pad);
    let mut cols = vec![T::ZERO; c_in * k * k * ho * wo];
    for ci in 0..c_in {
        for dy in 0..k {
            for dx in 0..k {
                let row = ((ci * k + dy) * k + dx) * ho * wo;
                for oy in 0..ho {
                    let iy = ((oy * stride + dy) as isize - pad as isize)
                        .clamp(0, h as isize - 1) as usize;
                    for ox in 0..wo {
                        let ix = ((ox * stride + dx) as isize - pad as isize)
                            .clamp(0, w as isize - 1) as usize;
                        cols[row + oy * wo + ox] = x[(ci * h + iy) * w + ix];
                    }
                }
            }
        }
    }
    cols
}

fn col2im_acc<T: Scalar>(
    dcols: &[T],
    c_in: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    dx_out: &mut [T],
) {
    let ho = conv_out_len(h, k, stride, pad);
    let wo = conv_out_len(w, k, stride, pad);
    for ci in 0..c_in {
        for dy in 0..k {
            for dx in 0..k {
                let row = ((ci * k + dy) * k + dx) * ho * wo;
                for oy in 0..ho {
                    let iy = ((oy * stride + dy) as isize - pad as isize)
                        .clamp(0, h as isize - 1) as usize;
                    for ox in 0..wo {
                        let ix = ((ox * stride + dx) as isize - pad as isize)
                            .clamp(0, w as isize - 1) as usize;
                        let t = (ci * h + iy) * w + ix;
                        dx_out[t] = dx_out[t] + dcols[row + oy * wo + ox];
                    }
                }
            }
        }
    }
}

/// 2D convolution: x [Cin, H, W], weight [Cout, Cin, k, k], bias [Cout].
/// Stride must be 1 or 2.
pub fn conv2d<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Tensor<T> {
    assert!(stride == 1 || stride == 2, "conv2d supports stride 1 or 2");
    assert_eq!(x.rank(), 3, "conv2d input must be [C, H, W]");
    assert_eq!(weight.rank(), 4, "conv2d weight must be [Cout, Cin, k, k]");
    let (c_in, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (c_out, wc_in, k, k2) = (
        weight.shape()[0],
        weight.shape()[1],
        weight.shape()[2],
        weight.shape()[3],
    );
    assert_eq!(k, k2, "conv2d kernel must be square");
    assert_eq!(wc_in, c_in, "conv2d: input channels {c_in} vs weight {wc_in}");
    assert_eq!(bias.shape(), &[c_out]);
    let ho = conv_out_len(h, k, stride, pad);
    let wo = conv_out_len(w, k, stride, pad);

    let cols = im2col(&x.values(), c_in, h, w, k, stride, pad);
    let mut data = vec![T::ZERO; c_out * ho * wo];
    mm_acc(&weight.values(), &cols, c_out, c_in * k * k, ho * wo, &mut data);
    {
        let bv = bias.values();
        for co in 0..c_out {
            let row = &mut data[co * ho * wo..(co + 1) * ho * wo];
            for v in row.iter_mut() {
                *v = *v + bv[co];
            }
        }
    }

    Tensor::node(
        data,
        vec![c_out, ho, wo],
        vec![x.clone(), weight.clone(), bias.clone()],
        move |inner: &Inner<T>, g: &[T], sink: &GradSink<T>| {
            let px = &inner.parents[0];
            let pw = &inner.parents[1];
            let pb = &inner.parents[2];
            let xv = px.values();
            let wv = pw.values();
            let cols = im2col(&xv, c_in, h, w, k, stride, pad);
            // dW = G [Cout, HoWo] x cols^T
            let mut dw = vec![T::ZERO; pw.numel()];
            mm_abt_acc(g, &cols, c_out, ho * wo, c_in * k * k, &mut dw);
            // db = row sums of G
            let mut db = vec![T::ZERO; c_out];
            for co in 0..c_out {
                let mut acc = T::ZERO;
                for v in &g[co * ho * wo..(co + 1) * ho * wo] {
                    acc = acc + *v;
                }
                db[co] = acc;
            }
            // dcols = W^T x G, then scatter back
            let mut dcols = vec![T::ZERO; cols.len()];
            mm_atb_acc(&wv, g, c_out, c_in * k * k, ho * wo, &mut dcols);
            let mut dx = vec![T::ZERO; px.numel()];
            col2im_acc(&dcols, c_in, h, w, k, stride, pad, &mut dx);
            drop(xv);
            drop(wv);
            sink.accum(px, &dx);
            sink.accum(pw, &dw);
            sink.accum(pb, &db);
        },
    )
}

/// Bilinear resize of x [C, H, W] to [C, out_h, out_w].
pub fn bilinear_upsample<T: Scalar>(x: &Tensor<T>, out_h: usize, out_w: usize) -> Tensor<T> {
    assert_eq!(x.rank(), 3, "bilinear_upsample input must be [C, H, W]");
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    // taps shared across channels: (src offset within a channel plane, weight)
    let mut taps: Vec<[(usize, f64); 4]> = Vec::with_capacity(out_h * out_w);
    for oy in 0..out_h {
        let sy = ((oy as f64 + 0.5) * h as f64 / out_h as f64 - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let fy = sy - y0 as f64;
        for ox in 0..out_w {
            let sx =
                ((ox as f64 + 0.5) * w as f64 / out_w as f64 - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let fx = sx - x0 as f64;
            taps.push([
                (y0 * w + x0, (1.0 - fy) * (1.0 - fx)),
                (y0 * w + x1, (1.0 - fy) * fx),
                (y1 * w + x0, fy * (1.0 - fx)),
                (y1 * w + x1, fy * fx),
            ]);
        }
    }

    let xv = x.values();
    let mut data = vec![T::ZERO; c * out_h * out_w];
    for ch in 0..c {
        let plane = &xv[ch * h * w..(ch + 1) * h * w];
        let out_plane = &mut data[ch * out_h * out_w..(ch + 1) * out_h * out_w];
        for (o, tap) in taps.iter().enumerate() {
            let mut acc = T::ZERO;
            for &(src, wgt) in tap {
                acc = acc + T::from_f64(wgt) * plane[src];
            }
            out_plane[o] = acc;
        }
    }
    drop(xv);

    Tensor::node(
        data,
        vec![c, out_h, out_w],
        vec![x.clone()],
        move |inner: &Inner<T>, g: &[T], sink: &GradSink<T>| {
            let p = &inner.parents[0];
            let mut gp = vec![T::ZERO; p.numel()];
            for ch in 0..c {
                let gplane = &g[ch * out_h * out_w..(ch + 1) * out_h * out_w];
                let dplane = &mut gp[ch * h * w..(ch + 1) * h * w];
                for (o, tap) in taps.iter().enumerate() {
                    for &(src, wgt) in tap {
                        dplane[src] = dplane[src] + T::from_f64(wgt) * gplane[o];
                    }
                }
            }
            sink.accum(p, &gp);
        },
    )
}

/// Adaptive average pooling of x [C, H, W] to a [C, gh, gw] grid.
pub fn adaptive_avg_pool<T: Scalar>(x: &Tensor<T>, gh: usize, gw: usize) -> Tensor<T> {
    assert_eq!(x.rank(), 3);
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    assert!(gh >= 1 && gw >= 1 && gh <= h && gw <= w);
    let bounds = |i: usize, g: usize, n: usize| -> (usize, usize) {
        (i * n / g, ((i + 1) * n).div_ceil(g))
    };

    let xv = x.values();
    let mut data = vec![T::ZERO; c * gh * gw];
    for ch in 0..c {
        for gy in 0..gh {
            let (y0, y1) = bounds(gy, gh, h);
            for gx in 0..gw {
                let (x0, x1) = bounds(gx, gw, w);
                let mut acc = T::ZERO;
                for y in y0..y1 {
                    for xx in x0..x1 {
                        acc = acc + xv[(ch * h + y) * w + xx];
                    }
                }
                let count = T::from_usize((y1 - y0) * (x1 - x0));
                data[(ch * gh + gy) * gw + gx] = acc / count;
            }
        }
    }
    drop(xv);

    Tensor::node(
        data,
        vec![c, gh, gw],
        vec![x.clone()],
        move |inner: &Inner<T>, g: &[T], sink: &GradSink<T>| {
            let p = &inner.parents[0];
            let mut gp = vec![T::ZERO; p.numel()];
            for ch in 0..c {
                for gy in 0..gh {
                    let (y0, y1) = bounds(gy, gh, h);
                    for gx in 0..gw {
                        let (x0, x1) = bounds(gx, gw, w);
                        let count = T::from_usize((y1 - y0) * (x1 - x0));
                        let share = g[(ch * gh + gy) * gw + gx] / count;
                        for y in y0..y1 {
                            for xx in x0..x1 {
                                let t = (ch * h + y) * w + xx;
                                gp[t] = gp[t] + share;
                            }
                        }
                    }
                }
            }
            sink.accum(p, &gp);
        },
    )
}

/// Global average pool: [C, H, W] -> [C].
pub fn global_average_pool<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    adaptive_avg_pool(x, 1, 1).reshape(&[x.shape()[0]])
}
