//! Forward operations. Each op validates shapes, computes its result in
//! binary64, and records itself on the graph when any input is tracked.

use super::backward::Op;
use super::{debug_check_finite, Tensor};
use crate::error::{Error, Result};

/// Zero-padding scheme for [`conv2d`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Output keeps the input's spatial size (requires odd kernel).
    Same,
    /// No padding; output shrinks by `k - 1` per axis.
    Valid,
}

/// Forward-pass mode, distinguishing batch statistics from running statistics
/// in [`batchnorm`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

pub(crate) const BN_EPSILON: f64 = 1e-5;
pub(crate) const BN_MOMENTUM: f64 = 0.9;

/// Per-channel running statistics owned by a batch-norm layer.
///
/// The buffers live in ordinary (non-trainable) tensors so they ride along
/// in checkpoints but stay out of the parameter count.
pub struct BnStats {
    pub mean: Tensor,
    pub var: Tensor,
}

impl BnStats {
    pub fn new(channels: usize) -> BnStats {
        BnStats {
            mean: Tensor::zeros(&[channels]),
            var: Tensor::full(&[channels], 1.0),
        }
    }
}

/// `out[m x n] += a[m x k] . b[k x n]`, all row-major.
pub(crate) fn matmul_acc(a: &[f64], m: usize, k: usize, b: &[f64], n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (p, &av) in a_row.iter().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

fn transpose(src: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; src.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = src[r * cols + c];
        }
    }
    out
}

/// Expands one image into patch rows: `cols[(oy*wo+ox), (ky*k+kx)*cin + c]`.
/// Out-of-bounds taps are zero-filled; only clipped segments are written twice.
pub(crate) fn im2col(
    img: &[f64],
    h: usize,
    w: usize,
    cin: usize,
    k: usize,
    pad: usize,
    ho: usize,
    wo: usize,
    cols: &mut [f64],
) {
    let row_len = k * k * cin;
    debug_assert_eq!(cols.len(), ho * wo * row_len);
    for oy in 0..ho {
        let iy0 = oy as isize - pad as isize;
        for ox in 0..wo {
            let ix0 = ox as isize - pad as isize;
            let dst_base = (oy * wo + ox) * row_len;
            for ky in 0..k {
                let iy = iy0 + ky as isize;
                let dst = &mut cols[dst_base + ky * k * cin..dst_base + (ky + 1) * k * cin];
                if iy < 0 || iy >= h as isize {
                    dst.fill(0.0);
                    continue;
                }
                // Columns ix0 .. ix0+k clipped against [0, w).
                let lo = ix0.max(0) as usize;
                let hi = ((ix0 + k as isize).min(w as isize)).max(0) as usize;
                let left_pad = (lo as isize - ix0) as usize * cin;
                dst[..left_pad].fill(0.0);
                if hi > lo {
                    let src_base = (iy as usize * w + lo) * cin;
                    let len = (hi - lo) * cin;
                    dst[left_pad..left_pad + len].copy_from_slice(&img[src_base..src_base + len]);
                    dst[left_pad + len..].fill(0.0);
                } else {
                    dst[left_pad..].fill(0.0);
                }
            }
        }
    }
}

/// Scatters patch-row cotangents back onto an image (inverse of [`im2col`],
/// accumulating where patches overlap).
pub(crate) fn col2im_acc(
    cols: &[f64],
    h: usize,
    w: usize,
    cin: usize,
    k: usize,
    pad: usize,
    ho: usize,
    wo: usize,
    img: &mut [f64],
) {
    let row_len = k * k * cin;
    for oy in 0..ho {
        let iy0 = oy as isize - pad as isize;
        for ox in 0..wo {
            let ix0 = ox as isize - pad as isize;
            let src_base = (oy * wo + ox) * row_len;
            for ky in 0..k {
                let iy = iy0 + ky as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                let lo = ix0.max(0) as usize;
                let hi = ((ix0 + k as isize).min(w as isize)).max(0) as usize;
                if hi <= lo {
                    continue;
                }
                let skip = (lo as isize - ix0) as usize * cin;
                let src = &cols[src_base + ky * k * cin + skip..];
                let dst_base = (iy as usize * w + lo) * cin;
                let len = (hi - lo) * cin;
                for (d, s) in img[dst_base..dst_base + len].iter_mut().zip(&src[..len]) {
                    *d += s;
                }
            }
        }
    }
}

fn conv_out_size(h: usize, w: usize, k: usize, padding: Padding) -> (usize, usize, usize) {
    match padding {
        Padding::Same => ((k - 1) / 2, h, w),
        Padding::Valid => (0, h - k + 1, w - k + 1),
    }
}

/// Discrete cross-correlation over NHWC input with an `[k,k,Cin,Cout]` kernel
/// plus per-channel bias.
pub fn conv2d(input: &Tensor, kernel: &Tensor, bias: &Tensor, padding: Padding) -> Result<Tensor> {
    let ishape = input.shape();
    let kshape = kernel.shape();
    if ishape.len() != 4 {
        return Err(Error::shape(
            "conv2d",
            format!("input must be [N,H,W,Cin], got {:?}", ishape),
        ));
    }
    if kshape.len() != 4 || kshape[0] != kshape[1] {
        return Err(Error::shape(
            "conv2d",
            format!("kernel must be [k,k,Cin,Cout], got {:?}", kshape),
        ));
    }
    let (n, h, w, cin) = (ishape[0], ishape[1], ishape[2], ishape[3]);
    let (k, kcin, cout) = (kshape[0], kshape[2], kshape[3]);
    if k % 2 == 0 {
        return Err(Error::invalid(format!("conv2d: kernel size {} must be odd", k)));
    }
    if kcin != cin {
        return Err(Error::shape(
            "conv2d",
            format!("input {:?} has {} channels but kernel {:?} expects {}", ishape, cin, kshape, kcin),
        ));
    }
    if bias.shape() != [cout] {
        return Err(Error::shape(
            "conv2d",
            format!("bias {:?} must be [{}]", bias.shape(), cout),
        ));
    }
    if padding == Padding::Valid && (h < k || w < k) {
        return Err(Error::shape(
            "conv2d",
            format!("valid padding needs H,W >= k: input {:?}, k={}", ishape, k),
        ));
    }
    let (pad, ho, wo) = conv_out_size(h, w, k, padding);
    let row_len = k * k * cin;
    let m = ho * wo;

    let idata = input.data();
    let kdata = kernel.data();
    let bdata = bias.data();
    let mut out = vec![0.0; n * m * cout];
    let mut cols = if k > 1 { vec![0.0; m * row_len] } else { Vec::new() };
    for img_idx in 0..n {
        let img = &idata[img_idx * h * w * cin..(img_idx + 1) * h * w * cin];
        let out_img = &mut out[img_idx * m * cout..(img_idx + 1) * m * cout];
        for row in out_img.chunks_exact_mut(cout) {
            row.copy_from_slice(&bdata);
        }
        if k == 1 {
            matmul_acc(img, m, cin, &kdata, cout, out_img);
        } else {
            im2col(img, h, w, cin, k, pad, ho, wo, &mut cols);
            matmul_acc(&cols, m, row_len, &kdata, cout, out_img);
        }
    }
    drop(idata);
    drop(kdata);
    drop(bdata);

    debug_check_finite("conv2d", &[input, kernel, bias], &out);
    Ok(Tensor::from_op(
        out,
        vec![n, ho, wo, cout],
        Op::Conv2d {
            input: input.clone(),
            kernel: kernel.clone(),
            bias: bias.clone(),
            padding,
        },
    ))
}

pub(crate) fn conv2d_backward(
    input: &Tensor,
    kernel: &Tensor,
    padding: Padding,
    cot: &[f64],
    d_input: Option<&mut Vec<f64>>,
    d_kernel: Option<&mut Vec<f64>>,
    d_bias: Option<&mut Vec<f64>>,
) {
    let ishape = input.shape();
    let kshape = kernel.shape();
    let (n, h, w, cin) = (ishape[0], ishape[1], ishape[2], ishape[3]);
    let (k, cout) = (kshape[0], kshape[3]);
    let (pad, ho, wo) = conv_out_size(h, w, k, padding);
    let row_len = k * k * cin;
    let m = ho * wo;

    let idata = input.data();
    let kdata = kernel.data();
    let k_t = if d_input.is_some() {
        transpose(&kdata, row_len, cout)
    } else {
        Vec::new()
    };

    let mut d_input = d_input;
    let mut d_kernel = d_kernel;
    let mut d_bias = d_bias;
    let mut cols = if k > 1 { vec![0.0; m * row_len] } else { Vec::new() };
    let mut d_cols = vec![0.0; m * row_len];
    for img_idx in 0..n {
        let img = &idata[img_idx * h * w * cin..(img_idx + 1) * h * w * cin];
        let cot_img = &cot[img_idx * m * cout..(img_idx + 1) * m * cout];
        let patches: &[f64] = if k == 1 {
            img
        } else {
            im2col(img, h, w, cin, k, pad, ho, wo, &mut cols);
            &cols
        };
        if let Some(db) = d_bias.as_deref_mut() {
            for row in cot_img.chunks_exact(cout) {
                for (b, &c) in db.iter_mut().zip(row) {
                    *b += c;
                }
            }
        }
        if let Some(dk) = d_kernel.as_deref_mut() {
            // dK += patches^T . cot
            for r in 0..m {
                let p_row = &patches[r * row_len..(r + 1) * row_len];
                let c_row = &cot_img[r * cout..(r + 1) * cout];
                for (p, &pv) in p_row.iter().enumerate() {
                    if pv != 0.0 {
                        let dk_row = &mut dk[p * cout..(p + 1) * cout];
                        for (d, &c) in dk_row.iter_mut().zip(c_row) {
                            *d += pv * c;
                        }
                    }
                }
            }
        }
        if let Some(di) = d_input.as_deref_mut() {
            let img_grad = &mut di[img_idx * h * w * cin..(img_idx + 1) * h * w * cin];
            if k == 1 {
                matmul_acc(cot_img, m, cout, &k_t, cin, img_grad);
            } else {
                d_cols.fill(0.0);
                matmul_acc(cot_img, m, cout, &k_t, row_len, &mut d_cols);
                col2im_acc(&d_cols, h, w, cin, k, pad, ho, wo, img_grad);
            }
        }
    }
}

/// 2x2 max pooling with stride 2. Ties resolve to the first element in
/// row-major order so the backward pass is deterministic.
pub fn maxpool2(input: &Tensor) -> Result<Tensor> {
    let shape = input.shape();
    if shape.len() != 4 {
        return Err(Error::shape(
            "maxpool2",
            format!("input must be [N,H,W,C], got {:?}", shape),
        ));
    }
    let (n, h, w, c) = (shape[0], shape[1], shape[2], shape[3]);
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::invalid(format!(
            "maxpool2: H and W must be even, got {}x{}",
            h, w
        )));
    }
    let (ho, wo) = (h / 2, w / 2);
    let data = input.data();
    let mut out = vec![0.0; n * ho * wo * c];
    let mut argmax = vec![0u32; out.len()];
    for img in 0..n {
        let base = img * h * w * c;
        for oy in 0..ho {
            for ox in 0..wo {
                let out_base = ((img * ho + oy) * wo + ox) * c;
                for ch in 0..c {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0usize;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let idx = base + (((2 * oy + dy) * w) + (2 * ox + dx)) * c + ch;
                            if data[idx] > best {
                                best = data[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    out[out_base + ch] = best;
                    argmax[out_base + ch] = best_idx as u32;
                }
            }
        }
    }
    drop(data);
    debug_check_finite("maxpool2", &[input], &out);
    Ok(Tensor::from_op(
        out,
        vec![n, ho, wo, c],
        Op::MaxPool2 {
            input: input.clone(),
            argmax,
        },
    ))
}

/// Per-channel batch normalization over an NHWC tensor.
///
/// Train mode normalizes with the batch statistics and folds them into the
/// running statistics; eval mode normalizes with the running statistics.
pub fn batchnorm(
    input: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    mode: Mode,
    stats: &BnStats,
) -> Result<Tensor> {
    let shape = input.shape();
    if shape.len() != 4 {
        return Err(Error::shape(
            "batchnorm",
            format!("input must be [N,H,W,C], got {:?}", shape),
        ));
    }
    let c = shape[3];
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(Error::shape(
            "batchnorm",
            format!(
                "gamma {:?} / beta {:?} must be [{}] for input {:?}",
                gamma.shape(),
                beta.shape(),
                c,
                shape
            ),
        ));
    }
    if stats.mean.shape() != [c] || stats.var.shape() != [c] {
        return Err(Error::shape(
            "batchnorm",
            format!("running stats must be [{}]", c),
        ));
    }
    let m = shape[0] * shape[1] * shape[2];
    if mode == Mode::Train && m < 2 {
        return Err(Error::invalid(
            "batchnorm: train mode needs at least 2 values per channel".to_string(),
        ));
    }

    let data = input.data();
    let (mean, var) = match mode {
        Mode::Train => {
            let mut mean = vec![0.0; c];
            let mut ch = 0usize;
            for &v in data.iter() {
                mean[ch] += v;
                ch += 1;
                if ch == c {
                    ch = 0;
                }
            }
            for mu in mean.iter_mut() {
                *mu /= m as f64;
            }
            let mut var = vec![0.0; c];
            ch = 0;
            for &v in data.iter() {
                let d = v - mean[ch];
                var[ch] += d * d;
                ch += 1;
                if ch == c {
                    ch = 0;
                }
            }
            for s in var.iter_mut() {
                *s /= m as f64;
            }
            {
                let mut rm = stats.mean.data_mut();
                let mut rv = stats.var.data_mut();
                for i in 0..c {
                    rm[i] = BN_MOMENTUM * rm[i] + (1.0 - BN_MOMENTUM) * mean[i];
                    rv[i] = BN_MOMENTUM * rv[i] + (1.0 - BN_MOMENTUM) * var[i];
                }
            }
            (mean, var)
        }
        Mode::Eval => (stats.mean.data().clone(), stats.var.data().clone()),
    };
    let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + BN_EPSILON).sqrt()).collect();

    let g = gamma.data();
    let b = beta.data();
    let mut out = vec![0.0; data.len()];
    let mut ch = 0usize;
    for (o, &v) in out.iter_mut().zip(data.iter()) {
        *o = g[ch] * (v - mean[ch]) * inv_std[ch] + b[ch];
        ch += 1;
        if ch == c {
            ch = 0;
        }
    }
    drop(data);
    drop(g);
    drop(b);
    debug_check_finite("batchnorm", &[input, gamma, beta], &out);
    Ok(Tensor::from_op(
        out,
        shape.to_vec(),
        Op::BatchNorm {
            input: input.clone(),
            gamma: gamma.clone(),
            beta: beta.clone(),
            mean,
            inv_std,
            train: mode == Mode::Train,
        },
    ))
}

/// Affine map `input . weights + bias` over `[N,F]`.
pub fn dense(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let ishape = input.shape();
    let wshape = weights.shape();
    if ishape.len() != 2 || wshape.len() != 2 {
        return Err(Error::shape(
            "dense",
            format!("expected [N,F] x [F,G], got {:?} x {:?}", ishape, wshape),
        ));
    }
    let (n, f) = (ishape[0], ishape[1]);
    let (wf, g) = (wshape[0], wshape[1]);
    if f != wf {
        return Err(Error::shape(
            "dense",
            format!("inner dimensions disagree: input {:?} vs weights {:?}", ishape, wshape),
        ));
    }
    if bias.shape() != [g] {
        return Err(Error::shape(
            "dense",
            format!("bias {:?} must be [{}]", bias.shape(), g),
        ));
    }
    let idata = input.data();
    let wdata = weights.data();
    let bdata = bias.data();
    let mut out = vec![0.0; n * g];
    for row in out.chunks_exact_mut(g) {
        row.copy_from_slice(&bdata);
    }
    matmul_acc(&idata, n, f, &wdata, g, &mut out);
    drop(idata);
    drop(wdata);
    drop(bdata);
    debug_check_finite("dense", &[input, weights, bias], &out);
    Ok(Tensor::from_op(
        out,
        vec![n, g],
        Op::Dense {
            input: input.clone(),
            weights: weights.clone(),
            bias: bias.clone(),
        },
    ))
}

/// Elementwise `max(0, x)`.
pub fn relu(input: &Tensor) -> Tensor {
    let out: Vec<f64> = input.data().iter().map(|&v| v.max(0.0)).collect();
    Tensor::from_op(
        out,
        input.shape().to_vec(),
        Op::Relu {
            input: input.clone(),
        },
    )
}

/// Elementwise logistic function.
pub fn sigmoid(input: &Tensor) -> Tensor {
    let out: Vec<f64> = input
        .data()
        .iter()
        .map(|&v| 1.0 / (1.0 + (-v).exp()))
        .collect();
    Tensor::from_op(
        out,
        input.shape().to_vec(),
        Op::Sigmoid {
            input: input.clone(),
        },
    )
}

/// Nearest-neighbor 2x upsampling: every pixel becomes a 2x2 block.
pub fn upsample2_nearest(input: &Tensor) -> Result<Tensor> {
    let shape = input.shape();
    if shape.len() != 4 {
        return Err(Error::shape(
            "upsample2_nearest",
            format!("input must be [N,H,W,C], got {:?}", shape),
        ));
    }
    let (n, h, w, c) = (shape[0], shape[1], shape[2], shape[3]);
    let data = input.data();
    let mut out = vec![0.0; n * 4 * h * w * c];
    let (ho, wo) = (2 * h, 2 * w);
    for img in 0..n {
        for y in 0..h {
            for x in 0..w {
                let src = ((img * h + y) * w + x) * c;
                let px = &data[src..src + c];
                for dy in 0..2 {
                    let dst = ((img * ho + 2 * y + dy) * wo + 2 * x) * c;
                    out[dst..dst + c].copy_from_slice(px);
                    out[dst + c..dst + 2 * c].copy_from_slice(px);
                }
            }
        }
    }
    drop(data);
    Ok(Tensor::from_op(
        out,
        vec![n, ho, wo, c],
        Op::Upsample2 {
            input: input.clone(),
        },
    ))
}

/// Concatenates two NHWC tensors along the channel axis.
pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.len() != 4 || sb.len() != 4 || sa[..3] != sb[..3] {
        return Err(Error::shape(
            "concat_channels",
            format!("spatial/batch dims must match: {:?} vs {:?}", sa, sb),
        ));
    }
    let (n, h, w) = (sa[0], sa[1], sa[2]);
    let (ca, cb) = (sa[3], sb[3]);
    let da = a.data();
    let db = b.data();
    let mut out = vec![0.0; n * h * w * (ca + cb)];
    let sites = n * h * w;
    for s in 0..sites {
        let dst = s * (ca + cb);
        out[dst..dst + ca].copy_from_slice(&da[s * ca..(s + 1) * ca]);
        out[dst + ca..dst + ca + cb].copy_from_slice(&db[s * cb..(s + 1) * cb]);
    }
    drop(da);
    drop(db);
    Ok(Tensor::from_op(
        out,
        vec![n, h, w, ca + cb],
        Op::ConcatChannels {
            a: a.clone(),
            b: b.clone(),
        },
    ))
}

/// Reinterprets the buffer under a new shape with the same element count.
pub fn reshape(input: &Tensor, shape: &[usize]) -> Result<Tensor> {
    let numel: usize = shape.iter().product();
    if numel != input.numel() {
        return Err(Error::shape(
            "reshape",
            format!("cannot reshape {:?} into {:?}", input.shape(), shape),
        ));
    }
    Ok(Tensor::from_op(
        input.data().clone(),
        shape.to_vec(),
        Op::Reshape {
            input: input.clone(),
        },
    ))
}

fn check_same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            op,
            format!("shapes differ: {:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

/// Mean squared error over all elements, as a rank-0 tensor.
pub fn mse_loss(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    check_same_shape("mse_loss", pred, target)?;
    let p = pred.data();
    let t = target.data();
    let n = p.len() as f64;
    let sum: f64 = p.iter().zip(t.iter()).map(|(&a, &b)| (a - b) * (a - b)).sum();
    drop(p);
    drop(t);
    Ok(Tensor::from_op(
        vec![sum / n],
        Vec::new(),
        Op::MseLoss {
            pred: pred.clone(),
            target: target.clone(),
        },
    ))
}

/// Mean absolute error over all elements, as a rank-0 tensor.
pub fn mae_loss(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    check_same_shape("mae_loss", pred, target)?;
    let p = pred.data();
    let t = target.data();
    let n = p.len() as f64;
    let sum: f64 = p.iter().zip(t.iter()).map(|(&a, &b)| (a - b).abs()).sum();
    drop(p);
    drop(t);
    Ok(Tensor::from_op(
        vec![sum / n],
        Vec::new(),
        Op::MaeLoss {
            pred: pred.clone(),
            target: target.clone(),
        },
    ))
}

/// Sum of all elements, as a rank-0 tensor.
pub fn sum_all(input: &Tensor) -> Tensor {
    let sum: f64 = input.data().iter().sum();
    Tensor::from_op(
        vec![sum],
        Vec::new(),
        Op::SumAll {
            input: input.clone(),
        },
    )
}
