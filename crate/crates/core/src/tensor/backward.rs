//! Reverse-mode pass over the recorded graph.

use std::collections::{HashMap, HashSet};

use super::ops::{conv2d_backward, Padding};
use super::Tensor;
use crate::error::{Error, Result};

/// Recorded operation linking an output tensor to its inputs, together with
/// whatever forward-pass context the backward rule needs.
pub(crate) enum Op {
    Conv2d {
        input: Tensor,
        kernel: Tensor,
        bias: Tensor,
        padding: Padding,
    },
    MaxPool2 {
        input: Tensor,
        /// Flat input index of each output's maximum.
        argmax: Vec<u32>,
    },
    BatchNorm {
        input: Tensor,
        gamma: Tensor,
        beta: Tensor,
        /// Statistics the forward pass normalized with.
        mean: Vec<f64>,
        inv_std: Vec<f64>,
        /// In train mode the statistics are functions of the input and the
        /// full Jacobian applies; in eval mode they are constants.
        train: bool,
    },
    Dense {
        input: Tensor,
        weights: Tensor,
        bias: Tensor,
    },
    Relu {
        input: Tensor,
    },
    Sigmoid {
        input: Tensor,
    },
    Upsample2 {
        input: Tensor,
    },
    ConcatChannels {
        a: Tensor,
        b: Tensor,
    },
    Reshape {
        input: Tensor,
    },
    MseLoss {
        pred: Tensor,
        target: Tensor,
    },
    MaeLoss {
        pred: Tensor,
        target: Tensor,
    },
    SumAll {
        input: Tensor,
    },
}

impl Op {
    pub(crate) fn parents(&self) -> Vec<&Tensor> {
        match self {
            Op::Conv2d { input, kernel, bias, .. } => vec![input, kernel, bias],
            Op::MaxPool2 { input, .. } => vec![input],
            Op::BatchNorm { input, gamma, beta, .. } => vec![input, gamma, beta],
            Op::Dense { input, weights, bias } => vec![input, weights, bias],
            Op::Relu { input } => vec![input],
            Op::Sigmoid { input } => vec![input],
            Op::Upsample2 { input } => vec![input],
            Op::ConcatChannels { a, b } => vec![a, b],
            Op::Reshape { input } => vec![input],
            Op::MseLoss { pred, target } => vec![pred, target],
            Op::MaeLoss { pred, target } => vec![pred, target],
            Op::SumAll { input } => vec![input],
        }
    }
}

/// Runs reverse-mode differentiation from a scalar loss.
///
/// Every trainable leaf reachable from `loss` receives d(loss)/d(leaf),
/// added into its `grad` buffer; repeated calls without zeroing accumulate.
pub fn backward(loss: &Tensor) -> Result<()> {
    if loss.numel() != 1 {
        return Err(Error::invalid(format!(
            "backward: loss must be scalar, got shape {:?}",
            loss.shape()
        )));
    }
    if !loss.tracked() {
        return Err(Error::invalid(
            "backward: loss is not connected to any tensor with requires_grad".to_string(),
        ));
    }

    // Post-order DFS (iterative) yields children before parents; walking it
    // in reverse propagates cotangents parent-ward exactly once per node.
    let mut order: Vec<Tensor> = Vec::new();
    let mut visited: HashSet<u64> = HashSet::new();
    let mut stack: Vec<(Tensor, bool)> = vec![(loss.clone(), false)];
    while let Some((node, expanded)) = stack.pop() {
        if expanded {
            order.push(node);
            continue;
        }
        if !visited.insert(node.id()) {
            continue;
        }
        let children: Vec<Tensor> = node
            .parent_op()
            .map(|op| op.parents().into_iter().filter(|p| p.tracked()).cloned().collect())
            .unwrap_or_default();
        stack.push((node, true));
        for child in children {
            if !visited.contains(&child.id()) {
                stack.push((child, false));
            }
        }
    }

    let mut cotangents: HashMap<u64, Vec<f64>> = HashMap::new();
    cotangents.insert(loss.id(), vec![1.0]);

    for node in order.iter().rev() {
        let Some(cot) = cotangents.remove(&node.id()) else {
            continue;
        };
        if node.is_trainable_leaf() {
            node.accumulate_grad(&cot);
        }
        let Some(op) = node.parent_op() else {
            continue;
        };
        propagate(node, op, &cot, &mut cotangents);
    }
    Ok(())
}

fn sink(map: &mut HashMap<u64, Vec<f64>>, t: &Tensor, delta: Vec<f64>) {
    if !t.tracked() {
        return;
    }
    match map.get_mut(&t.id()) {
        Some(acc) => {
            for (a, d) in acc.iter_mut().zip(&delta) {
                *a += d;
            }
        }
        None => {
            map.insert(t.id(), delta);
        }
    }
}

fn propagate(node: &Tensor, op: &Op, cot: &[f64], map: &mut HashMap<u64, Vec<f64>>) {
    match op {
        Op::Conv2d {
            input,
            kernel,
            bias,
            padding,
        } => {
            let mut d_input = input.tracked().then(|| vec![0.0; input.numel()]);
            let mut d_kernel = kernel.tracked().then(|| vec![0.0; kernel.numel()]);
            let mut d_bias = bias.tracked().then(|| vec![0.0; bias.numel()]);
            conv2d_backward(
                input,
                kernel,
                *padding,
                cot,
                d_input.as_mut(),
                d_kernel.as_mut(),
                d_bias.as_mut(),
            );
            if let Some(d) = d_input {
                sink(map, input, d);
            }
            if let Some(d) = d_kernel {
                sink(map, kernel, d);
            }
            if let Some(d) = d_bias {
                sink(map, bias, d);
            }
        }
        Op::MaxPool2 { input, argmax } => {
            let mut d = vec![0.0; input.numel()];
            for (i, &src) in argmax.iter().enumerate() {
                d[src as usize] += cot[i];
            }
            sink(map, input, d);
        }
        Op::BatchNorm {
            input,
            gamma,
            beta,
            mean,
            inv_std,
            train,
        } => {
            let c = gamma.numel();
            let x = input.data();
            let g = gamma.data();
            let m = (x.len() / c) as f64;

            if gamma.tracked() || beta.tracked() {
                let mut d_gamma = vec![0.0; c];
                let mut d_beta = vec![0.0; c];
                let mut ch = 0usize;
                for (i, &dy) in cot.iter().enumerate() {
                    let xhat = (x[i] - mean[ch]) * inv_std[ch];
                    d_gamma[ch] += dy * xhat;
                    d_beta[ch] += dy;
                    ch += 1;
                    if ch == c {
                        ch = 0;
                    }
                }
                if gamma.tracked() {
                    sink(map, gamma, d_gamma);
                }
                if beta.tracked() {
                    sink(map, beta, d_beta);
                }
            }
            if input.tracked() {
                let mut d = vec![0.0; x.len()];
                if *train {
                    // dx = istd/m * (m*dxhat - sum(dxhat) - xhat * sum(dxhat*xhat))
                    let mut sum_dxhat = vec![0.0; c];
                    let mut sum_dxhat_xhat = vec![0.0; c];
                    let mut ch = 0usize;
                    for (i, &dy) in cot.iter().enumerate() {
                        let dxhat = dy * g[ch];
                        let xhat = (x[i] - mean[ch]) * inv_std[ch];
                        sum_dxhat[ch] += dxhat;
                        sum_dxhat_xhat[ch] += dxhat * xhat;
                        ch += 1;
                        if ch == c {
                            ch = 0;
                        }
                    }
                    ch = 0;
                    for (i, &dy) in cot.iter().enumerate() {
                        let dxhat = dy * g[ch];
                        let xhat = (x[i] - mean[ch]) * inv_std[ch];
                        d[i] = inv_std[ch] / m
                            * (m * dxhat - sum_dxhat[ch] - xhat * sum_dxhat_xhat[ch]);
                        ch += 1;
                        if ch == c {
                            ch = 0;
                        }
                    }
                } else {
                    let mut ch = 0usize;
                    for (i, &dy) in cot.iter().enumerate() {
                        d[i] = dy * g[ch] * inv_std[ch];
                        ch += 1;
                        if ch == c {
                            ch = 0;
                        }
                    }
                }
                sink(map, input, d);
            }
        }
        Op::Dense {
            input,
            weights,
            bias,
        } => {
            let (n, f) = (input.shape()[0], input.shape()[1]);
            let g = weights.shape()[1];
            if bias.tracked() {
                let mut db = vec![0.0; g];
                for row in cot.chunks_exact(g) {
                    for (b, &cv) in db.iter_mut().zip(row) {
                        *b += cv;
                    }
                }
                sink(map, bias, db);
            }
            if weights.tracked() {
                // dW += X^T . dY
                let x = input.data();
                let mut dw = vec![0.0; f * g];
                for r in 0..n {
                    let x_row = &x[r * f..(r + 1) * f];
                    let c_row = &cot[r * g..(r + 1) * g];
                    for (p, &xv) in x_row.iter().enumerate() {
                        if xv != 0.0 {
                            let dw_row = &mut dw[p * g..(p + 1) * g];
                            for (d, &cv) in dw_row.iter_mut().zip(c_row) {
                                *d += xv * cv;
                            }
                        }
                    }
                }
                sink(map, weights, dw);
            }
            if input.tracked() {
                // dX += dY . W^T
                let w = weights.data();
                let mut wt = vec![0.0; f * g];
                for r in 0..f {
                    for cidx in 0..g {
                        wt[cidx * f + r] = w[r * g + cidx];
                    }
                }
                let mut dx = vec![0.0; n * f];
                super::ops::matmul_acc(cot, n, g, &wt, f, &mut dx);
                sink(map, input, dx);
            }
        }
        Op::Relu { input } => {
            let x = input.data();
            let d: Vec<f64> = cot
                .iter()
                .zip(x.iter())
                .map(|(&dy, &xv)| if xv > 0.0 { dy } else { 0.0 })
                .collect();
            drop(x);
            sink(map, input, d);
        }
        Op::Sigmoid { input } => {
            let y = node.data();
            let d: Vec<f64> = cot
                .iter()
                .zip(y.iter())
                .map(|(&dy, &yv)| dy * yv * (1.0 - yv))
                .collect();
            drop(y);
            sink(map, input, d);
        }
        Op::Upsample2 { input } => {
            let shape = input.shape();
            let (n, h, w, c) = (shape[0], shape[1], shape[2], shape[3]);
            let wo = 2 * w;
            let mut d = vec![0.0; input.numel()];
            for img in 0..n {
                for y in 0..h {
                    for x in 0..w {
                        let dst = ((img * h + y) * w + x) * c;
                        for dy in 0..2 {
                            let src = ((img * 2 * h + 2 * y + dy) * wo + 2 * x) * c;
                            for ch in 0..c {
                                d[dst + ch] += cot[src + ch] + cot[src + c + ch];
                            }
                        }
                    }
                }
            }
            sink(map, input, d);
        }
        Op::ConcatChannels { a, b } => {
            let (ca, cb) = (a.shape()[3], b.shape()[3]);
            let sites = a.numel() / ca;
            if a.tracked() {
                let mut da = vec![0.0; a.numel()];
                for s in 0..sites {
                    da[s * ca..(s + 1) * ca].copy_from_slice(&cot[s * (ca + cb)..s * (ca + cb) + ca]);
                }
                sink(map, a, da);
            }
            if b.tracked() {
                let mut db = vec![0.0; b.numel()];
                for s in 0..sites {
                    db[s * cb..(s + 1) * cb]
                        .copy_from_slice(&cot[s * (ca + cb) + ca..(s + 1) * (ca + cb)]);
                }
                sink(map, b, db);
            }
        }
        Op::Reshape { input } => {
            sink(map, input, cot.to_vec());
        }
        Op::MseLoss { pred, target } => {
            let p = pred.data();
            let t = target.data();
            let scale = 2.0 * cot[0] / p.len() as f64;
            if pred.tracked() {
                let d: Vec<f64> = p.iter().zip(t.iter()).map(|(&a, &b)| scale * (a - b)).collect();
                sink(map, pred, d);
            }
            if target.tracked() {
                let d: Vec<f64> = p.iter().zip(t.iter()).map(|(&a, &b)| -scale * (a - b)).collect();
                sink(map, target, d);
            }
        }
        Op::MaeLoss { pred, target } => {
            let p = pred.data();
            let t = target.data();
            let scale = cot[0] / p.len() as f64;
            let sign = |a: f64, b: f64| {
                if a > b {
                    1.0
                } else if a < b {
                    -1.0
                } else {
                    0.0
                }
            };
            if pred.tracked() {
                let d: Vec<f64> = p.iter().zip(t.iter()).map(|(&a, &b)| scale * sign(a, b)).collect();
                sink(map, pred, d);
            }
            if target.tracked() {
                let d: Vec<f64> = p.iter().zip(t.iter()).map(|(&a, &b)| -scale * sign(a, b)).collect();
                sink(map, target, d);
            }
        }
        Op::SumAll { input } => {
            sink(map, input, vec![cot[0]; input.numel()]);
        }
    }
}
