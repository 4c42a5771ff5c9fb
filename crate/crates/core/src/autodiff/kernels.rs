//! Dense convolution and pooling kernels shared by the forward and backward
//! passes. Inner loops run over contiguous rows so the compiler can
//! vectorize them; these are the hot paths of training.

use crate::tensor::{Real, Tensor};

pub fn conv2d_out_dim(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - kernel) / stride + 1
}

/// input (Ci, H, W) * kernel (Co, Ci, kh, kw) -> (Co, Ho, Wo).
pub fn conv2d<T: Real>(input: &Tensor<T>, kernel: &Tensor<T>, stride: usize, pad: usize) -> Tensor<T> {
    let (ci, h, w) = input.dims3();
    let (co, kci, kh, kw) = kernel.dims4();
    assert_eq!(ci, kci, "conv2d channel mismatch");
    let ho = conv2d_out_dim(h, kh, stride, pad);
    let wo = conv2d_out_dim(w, kw, stride, pad);
    let mut out = Tensor::zeros(&[co, ho, wo]);

    let kdata = kernel.data();
    for oc in 0..co {
        let out_plane = &mut out.data_mut()[oc * ho * wo..(oc + 1) * ho * wo];
        for ic in 0..ci {
            let in_plane = input.plane(ic);
            for ky in 0..kh {
                for kx in 0..kw {
                    let kval = kdata[((oc * ci + ic) * kh + ky) * kw + kx];
                    if kval == T::zero() {
                        continue;
                    }
                    accumulate_shifted(
                        out_plane, ho, wo, in_plane, h, w, ky, kx, stride, pad, kval,
                    );
                }
            }
        }
    }
    out
}

/// out[oy, ox] += k * in[oy*s + ky - p, ox*s + kx - p] over the valid range.
#[inline]
fn accumulate_shifted<T: Real>(
    out: &mut [T],
    ho: usize,
    wo: usize,
    input: &[T],
    h: usize,
    w: usize,
    ky: usize,
    kx: usize,
    stride: usize,
    pad: usize,
    k: T,
) {
    for oy in 0..ho {
        let iy = (oy * stride + ky) as isize - pad as isize;
        if iy < 0 || iy >= h as isize {
            continue;
        }
        let iy = iy as usize;
        // valid ox: 0 <= ox*s + kx - p < w
        let (ox_lo, ox_hi) = valid_range(wo, w, kx, stride, pad);
        if ox_lo >= ox_hi {
            continue;
        }
        let out_row = &mut out[oy * wo..(oy + 1) * wo];
        let in_row = &input[iy * w..(iy + 1) * w];
        if stride == 1 {
            let shift = (ox_lo + kx) as isize - pad as isize;
            let in_seg = &in_row[shift as usize..shift as usize + (ox_hi - ox_lo)];
            for (o, i) in out_row[ox_lo..ox_hi].iter_mut().zip(in_seg) {
                *o = *o + k * *i;
            }
        } else {
            for ox in ox_lo..ox_hi {
                let ix = (ox * stride + kx) - pad;
                out_row[ox] = out_row[ox] + k * in_row[ix];
            }
        }
    }
}

#[inline]
fn valid_range(wo: usize, w: usize, kx: usize, stride: usize, pad: usize) -> (usize, usize) {
    // smallest ox with ox*s + kx - p >= 0
    let lo = if kx >= pad {
        0
    } else {
        (pad - kx + stride - 1) / stride
    };
    // largest ox with ox*s + kx - p <= w - 1
    let hi = if w + pad > kx {
        (((w + pad - kx - 1) / stride) + 1).min(wo)
    } else {
        0
    };
    (lo.min(wo), hi)
}

/// Gradient w.r.t. the convolution input.
pub fn conv2d_grad_input<T: Real>(
    grad_out: &Tensor<T>,
    kernel: &Tensor<T>,
    input_shape: (usize, usize, usize),
    stride: usize,
    pad: usize,
) -> Tensor<T> {
    let (ci, h, w) = input_shape;
    let (co, kci, kh, kw) = kernel.dims4();
    assert_eq!(ci, kci);
    let (gco, ho, wo) = grad_out.dims3();
    assert_eq!(gco, co);
    let mut grad_in = Tensor::zeros(&[ci, h, w]);

    let kdata = kernel.data();
    for oc in 0..co {
        let g_plane = grad_out.plane(oc);
        for ic in 0..ci {
            let gi_plane = &mut grad_in.data_mut()[ic * h * w..(ic + 1) * h * w];
            for ky in 0..kh {
                for kx in 0..kw {
                    let kval = kdata[((oc * ci + ic) * kh + ky) * kw + kx];
                    if kval == T::zero() {
                        continue;
                    }
                    // grad_in[oy*s+ky-p, ox*s+kx-p] += k * g[oy, ox]
                    for oy in 0..ho {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let iy = iy as usize;
                        let (ox_lo, ox_hi) = valid_range(wo, w, kx, stride, pad);
                        let g_row = &g_plane[oy * wo..(oy + 1) * wo];
                        let gi_row = &mut gi_plane[iy * w..(iy + 1) * w];
                        for ox in ox_lo..ox_hi {
                            let ix = (ox * stride + kx) - pad;
                            gi_row[ix] = gi_row[ix] + kval * g_row[ox];
                        }
                    }
                }
            }
        }
    }
    grad_in
}

/// Gradient w.r.t. the convolution kernel.
pub fn conv2d_grad_kernel<T: Real>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    kernel_shape: (usize, usize, usize, usize),
    stride: usize,
    pad: usize,
) -> Tensor<T> {
    let (co, ci, kh, kw) = kernel_shape;
    let (ici, h, w) = input.dims3();
    assert_eq!(ici, ci);
    let (gco, ho, wo) = grad_out.dims3();
    assert_eq!(gco, co);
    let mut grad_k = Tensor::zeros(&[co, ci, kh, kw]);

    for oc in 0..co {
        let g_plane = grad_out.plane(oc);
        for ic in 0..ci {
            let in_plane = input.plane(ic);
            for ky in 0..kh {
                for kx in 0..kw {
                    let mut acc = T::zero();
                    for oy in 0..ho {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let iy = iy as usize;
                        let (ox_lo, ox_hi) = valid_range(wo, w, kx, stride, pad);
                        if ox_lo >= ox_hi {
                            continue;
                        }
                        let g_row = &g_plane[oy * wo..(oy + 1) * wo];
                        let in_row = &in_plane[iy * w..(iy + 1) * w];
                        if stride == 1 {
                            let shift = (ox_lo + kx) - pad;
                            let in_seg = &in_row[shift..shift + (ox_hi - ox_lo)];
                            let mut s = T::zero();
                            for (g, i) in g_row[ox_lo..ox_hi].iter().zip(in_seg) {
                                s = s + *g * *i;
                            }
                            acc = acc + s;
                        } else {
                            for ox in ox_lo..ox_hi {
                                let ix = (ox * stride + kx) - pad;
                                acc = acc + g_row[ox] * in_row[ix];
                            }
                        }
                    }
                    let idx = ((oc * ci + ic) * kh + ky) * kw + kx;
                    grad_k.data_mut()[idx] = grad_k.data()[idx] + acc;
                }
            }
        }
    }
    grad_k
}

/// Nearest-neighbor 2x upsample.
pub fn upsample2<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    let (c, h, w) = input.dims3();
    let mut out = Tensor::zeros(&[c, 2 * h, 2 * w]);
    for ch in 0..c {
        let src = input.plane(ch);
        let dst = out.plane_mut(ch);
        for y in 0..2 * h {
            let sy = y / 2;
            for x in 0..2 * w {
                dst[y * 2 * w + x] = src[sy * w + x / 2];
            }
        }
    }
    out
}

pub fn upsample2_grad<T: Real>(grad_out: &Tensor<T>, in_shape: (usize, usize, usize)) -> Tensor<T> {
    let (c, h, w) = in_shape;
    let mut grad_in = Tensor::zeros(&[c, h, w]);
    for ch in 0..c {
        let g = grad_out.plane(ch);
        let gi = grad_in.plane_mut(ch);
        for y in 0..2 * h {
            for x in 0..2 * w {
                gi[(y / 2) * w + x / 2] = gi[(y / 2) * w + x / 2] + g[y * 2 * w + x];
            }
        }
    }
    grad_in
}
