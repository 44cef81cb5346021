//! Independent reference implementations used as test oracles. Nothing
//! here calls into the kernels or noise code under test.

#![allow(dead_code)]

use std::path::PathBuf;

use anb::{LayerKind, ModelGraph, Tensor};

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests").join("data")
}

pub fn fixture(name: &str) -> PathBuf {
    data_dir().join(name)
}

/// Deterministic pseudo-random values in [-1, 1) from a 64-bit LCG.
pub fn lcg_values(seed: u64, n: usize) -> Vec<f32> {
    let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    (0..n)
        .map(|_| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 40) as f64 / (1u64 << 24) as f64 * 2.0 - 1.0) as f32
        })
        .collect()
}

pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), lcg_values(seed, n)).unwrap()
}

/// Seven nested loops, accumulating in f64.
pub fn conv2d_naive(
    input: &Tensor,
    kernel: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    padding: usize,
) -> Tensor {
    let [n, c, h, w] = <[usize; 4]>::try_from(input.shape()).unwrap();
    let [o, _, kh, kw] = <[usize; 4]>::try_from(kernel.shape()).unwrap();
    let oh = (h + 2 * padding - kh) / stride + 1;
    let ow = (w + 2 * padding - kw) / stride + 1;
    let x = input.data();
    let k = kernel.data();
    let mut out = vec![0.0f32; n * o * oh * ow];
    for b in 0..n {
        for oc in 0..o {
            for y in 0..oh {
                for xo in 0..ow {
                    let mut acc = bias.map_or(0.0, |t| f64::from(t.data()[oc]));
                    for ic in 0..c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (y * stride + ky) as isize - padding as isize;
                                let ix = (xo * stride + kx) as isize - padding as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                let xv = x[((b * c + ic) * h + iy as usize) * w + ix as usize];
                                let kv = k[((oc * c + ic) * kh + ky) * kw + kx];
                                acc += f64::from(xv) * f64::from(kv);
                            }
                        }
                    }
                    out[((b * o + oc) * oh + y) * ow + xo] = acc as f32;
                }
            }
        }
    }
    Tensor::new(vec![n, o, oh, ow], out).unwrap()
}

pub fn dense_naive(input: &Tensor, weight: &Tensor, bias: Option<&Tensor>) -> Tensor {
    let n = input.shape()[0];
    let f = input.len() / n;
    let g = weight.shape()[1];
    let mut out = vec![0.0f32; n * g];
    for i in 0..n {
        for j in 0..g {
            let mut acc = bias.map_or(0.0, |b| f64::from(b.data()[j]));
            for k in 0..f {
                acc += f64::from(input.data()[i * f + k]) * f64::from(weight.data()[k * g + j]);
            }
            out[i * g + j] = acc as f32;
        }
    }
    Tensor::new(vec![n, g], out).unwrap()
}

pub fn batch_norm_naive(
    input: &Tensor,
    gamma: &[f32],
    beta: &[f32],
    mean: &[f32],
    var: &[f32],
    eps: f32,
) -> Tensor {
    let n = input.shape()[0];
    let c = input.shape()[1];
    let inner = input.len() / (n * c);
    let mut out = input.data().to_vec();
    for b in 0..n {
        for ch in 0..c {
            for s in 0..inner {
                let idx = (b * c + ch) * inner + s;
                let x = f64::from(out[idx]);
                let y = (x - f64::from(mean[ch])) / (f64::from(var[ch]) + f64::from(eps)).sqrt() * f64::from(gamma[ch])
                    + f64::from(beta[ch]);
                out[idx] = y as f32;
            }
        }
    }
    Tensor::new(input.shape().to_vec(), out).unwrap()
}

pub fn max_pool_naive(input: &Tensor, k: usize, stride: usize) -> Tensor {
    let [n, c, h, w] = <[usize; 4]>::try_from(input.shape()).unwrap();
    let oh = (h - k) / stride + 1;
    let ow = (w - k) / stride + 1;
    let mut out = Vec::new();
    for b in 0..n {
        for ch in 0..c {
            for y in 0..oh {
                for x in 0..ow {
                    let mut m = f32::NEG_INFINITY;
                    for dy in 0..k {
                        for dx in 0..k {
                            m = m.max(input.data()[((b * c + ch) * h + y * stride + dy) * w + x * stride + dx]);
                        }
                    }
                    out.push(m);
                }
            }
        }
    }
    Tensor::new(vec![n, c, oh, ow], out).unwrap()
}

pub fn gap_naive(input: &Tensor) -> Tensor {
    let [n, c, h, w] = <[usize; 4]>::try_from(input.shape()).unwrap();
    let mut out = Vec::new();
    for b in 0..n {
        for ch in 0..c {
            let mut acc = 0.0f64;
            for i in 0..h * w {
                acc += f64::from(input.data()[(b * c + ch) * h * w + i]);
            }
            out.push((acc / (h * w) as f64) as f32);
        }
    }
    Tensor::new(vec![n, c], out).unwrap()
}

/// Forward pass built from the naive kernels above.
pub fn forward_naive(model: &ModelGraph, batch: &Tensor) -> Tensor {
    let mut outputs: Vec<Tensor> = Vec::new();
    let mut x = batch.clone();
    for node in model.nodes() {
        let p = |name: &str| node.param(name).unwrap();
        x = match node.kind {
            LayerKind::Conv { stride, padding } => conv2d_naive(&x, p("weight"), node.param("bias"), stride, padding),
            LayerKind::Dense => dense_naive(&x, p("weight"), node.param("bias")),
            LayerKind::BatchNorm { epsilon } => batch_norm_naive(
                &x,
                p("gamma").data(),
                p("beta").data(),
                p("moving_mean").data(),
                p("moving_var").data(),
                epsilon,
            ),
            LayerKind::Relu => Tensor::new(x.shape().to_vec(), x.data().iter().map(|v| v.max(0.0)).collect()).unwrap(),
            LayerKind::MaxPool { kernel, stride } => max_pool_naive(&x, kernel, stride),
            LayerKind::GlobalAvgPool => gap_naive(&x),
            LayerKind::ResidualAdd { source } => {
                let other = &outputs[source];
                Tensor::new(x.shape().to_vec(), x.data().iter().zip(other.data()).map(|(a, b)| a + b).collect()).unwrap()
            }
            LayerKind::Softmax => {
                let k = x.shape()[1];
                let mut out = Vec::new();
                for row in x.data().chunks(k) {
                    let m = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
                    let e: Vec<f64> = row.iter().map(|v| f64::from(v - m).exp()).collect();
                    let s: f64 = e.iter().sum();
                    out.extend(e.iter().map(|v| (v / s) as f32));
                }
                Tensor::new(x.shape().to_vec(), out).unwrap()
            }
        };
        outputs.push(x.clone());
    }
    x
}

/// Two-pass population standard deviation in f64.
pub fn two_pass_std(values: &[f32]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
    let ss = values.iter().map(|&v| (f64::from(v) - mean).powi(2)).sum::<f64>();
    (ss / n).sqrt()
}

pub fn max_rel_err(a: &[f32], b: &[f32]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let (x, y) = (f64::from(x), f64::from(y));
            (x - y).abs() / y.abs().max(1.0)
        })
        .fold(0.0, f64::max)
}

/// All parameter values of a model group, concatenated.
pub fn group_values(model: &ModelGraph, index: usize) -> Vec<f32> {
    let g = model.group(index).unwrap();
    model.get_params(&g).unwrap().iter().flat_map(|t| t.data().to_vec()).collect()
}

/// One dense layer with the given `[f, g]` weight and no bias.
pub fn dense_only_model(weight: Tensor) -> ModelGraph {
    let [f, g] = <[usize; 2]>::try_from(weight.shape()).unwrap();
    ModelGraph::new(
        "dense_only",
        vec![f],
        g,
        vec![anb::Node::new(LayerKind::Dense, vec![anb::Param::new("weight", weight)])],
    )
    .unwrap()
}

/// Applied noise `after - before` in f64, over one group.
pub fn applied_noise(before: &ModelGraph, after: &ModelGraph, index: usize) -> Vec<f64> {
    group_values(after, index)
        .iter()
        .zip(group_values(before, index))
        .map(|(&a, b)| f64::from(a) - f64::from(b))
        .collect()
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}
