//! Forward-pass kernels. Every kernel allocates its output and is
//! single-threaded, so results depend only on the inputs.

use crate::tensor::{Tensor, TensorError};

fn expect_rank(op: &'static str, t: &Tensor, rank: usize) -> Result<(), TensorError> {
    if t.rank() == rank {
        Ok(())
    } else {
        Err(TensorError::InvalidArgument {
            op,
            reason: format!("expected rank {rank}, got shape {:?}", t.shape()),
        })
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

/// Output spatial size of a sliding window, or `None` if the window does not fit.
pub fn window_output_len(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    if stride == 0 || kernel == 0 {
        return None;
    }
    let padded = input.checked_add(padding.checked_mul(2)?)?;
    if padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Unfold one `C×H×W` sample into a `(C·KH·KW) × (OH·OW)` column matrix.
#[allow(clippy::too_many_arguments)]
fn im2col(
    sample: &[f32],
    channels: usize,
    height: usize,
    width: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
    out_h: usize,
    out_w: usize,
    cols: &mut [f32],
) {
    let positions = out_h * out_w;
    for c in 0..channels {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (c * kh + ky) * kw + kx;
                let dst = &mut cols[row * positions..(row + 1) * positions];
                for oy in 0..out_h {
                    let iy = (oy * stride + ky) as isize - padding as isize;
                    for ox in 0..out_w {
                        let ix = (ox * stride + kx) as isize - padding as isize;
                        dst[oy * out_w + ox] = if iy < 0
                            || ix < 0
                            || iy as usize >= height
                            || ix as usize >= width
                        {
                            0.0
                        } else {
                            sample[(c * height + iy as usize) * width + ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// 2-D cross-correlation of an `N×C×H×W` input with an `O×C×KH×KW` kernel.
pub fn conv2d(
    input: &Tensor,
    kernel: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    padding: usize,
) -> Result<Tensor, TensorError> {
    expect_rank("conv2d", input, 4)?;
    expect_rank("conv2d", kernel, 4)?;
    let &[n, c, h, w] = input.shape() else { unreachable!() };
    let &[o, kc, kh, kw] = kernel.shape() else { unreachable!() };
    if c != kc {
        return Err(mismatch("conv2d", input, kernel));
    }
    if let Some(b) = bias {
        if b.shape() != [o] {
            return Err(mismatch("conv2d bias", kernel, b));
        }
    }
    let (out_h, out_w) = match (
        window_output_len(h, kh, stride, padding),
        window_output_len(w, kw, stride, padding),
    ) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(TensorError::InvalidArgument {
                op: "conv2d",
                reason: format!(
                    "kernel {kh}x{kw} with stride {stride} and padding {padding} does not fit input {h}x{w}"
                ),
            })
        }
    };

    let positions = out_h * out_w;
    let depth = c * kh * kw;
    let mut cols = vec![0.0f32; depth * positions];
    let mut out = vec![0.0f32; n * o * positions];
    let weights = kernel.data();
    for (sample, dst) in input
        .data()
        .chunks_exact(c * h * w)
        .zip(out.chunks_exact_mut(o * positions))
    {
        im2col(sample, c, h, w, kh, kw, stride, padding, out_h, out_w, &mut cols);
        for (oc, acc) in dst.chunks_exact_mut(positions).enumerate() {
            let row = &weights[oc * depth..(oc + 1) * depth];
            for (k, &wk) in row.iter().enumerate() {
                let col = &cols[k * positions..(k + 1) * positions];
                for (a, &x) in acc.iter_mut().zip(col) {
                    *a += wk * x;
                }
            }
            if let Some(b) = bias {
                let bv = b.data()[oc];
                acc.iter_mut().for_each(|a| *a += bv);
            }
        }
    }
    Tensor::new(vec![n, o, out_h, out_w], out)
}

/// `N×F` times `F×G` plus an optional length-`G` bias. Inputs of higher
/// rank are flattened to `N×F` first.
pub fn dense(input: &Tensor, weight: &Tensor, bias: Option<&Tensor>) -> Result<Tensor, TensorError> {
    expect_rank("dense", weight, 2)?;
    if input.rank() < 2 {
        return Err(TensorError::InvalidArgument {
            op: "dense",
            reason: format!("input needs a batch dimension, got shape {:?}", input.shape()),
        });
    }
    let x = if input.rank() == 2 { input.clone() } else { input.flatten_batch() };
    let (n, f) = (x.shape()[0], x.shape()[1]);
    let (wf, g) = (weight.shape()[0], weight.shape()[1]);
    if f != wf {
        return Err(mismatch("dense", input, weight));
    }
    if let Some(b) = bias {
        if b.shape() != [g] {
            return Err(mismatch("dense bias", weight, b));
        }
    }
    let wd = weight.data();
    let mut out = vec![0.0f32; n * g];
    for (row, dst) in x.data().chunks_exact(f).zip(out.chunks_exact_mut(g)) {
        for (k, &xk) in row.iter().enumerate() {
            let wrow = &wd[k * g..(k + 1) * g];
            for (d, &wv) in dst.iter_mut().zip(wrow) {
                *d += xk * wv;
            }
        }
        if let Some(b) = bias {
            for (d, &bv) in dst.iter_mut().zip(b.data()) {
                *d += bv;
            }
        }
    }
    Tensor::new(vec![n, g], out)
}

/// Batch normalization with stored statistics, channel axis 1.
///
/// Rejects any negative entry in `moving_var`.
pub fn batch_norm_inference(
    input: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    moving_mean: &Tensor,
    moving_var: &Tensor,
    epsilon: f32,
) -> Result<Tensor, TensorError> {
    if let Some((channel, &value)) = moving_var.data().iter().enumerate().find(|(_, v)| **v < 0.0) {
        return Err(TensorError::NegativeVariance { channel, value });
    }
    batch_norm_inference_unchecked(input, gamma, beta, moving_mean, moving_var, epsilon)
}

/// Like [`batch_norm_inference`] but lets a negative variance through.
///
/// Weight noise can push a stored variance below zero; the affected channel
/// then evaluates to NaN, the same as a conventional framework would produce.
pub fn batch_norm_inference_unchecked(
    input: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    moving_mean: &Tensor,
    moving_var: &Tensor,
    epsilon: f32,
) -> Result<Tensor, TensorError> {
    if input.rank() < 2 {
        return Err(TensorError::InvalidArgument {
            op: "batch_norm",
            reason: format!("input needs N×C[×...], got shape {:?}", input.shape()),
        });
    }
    let c = input.shape()[1];
    for p in [gamma, beta, moving_mean, moving_var] {
        if p.shape() != [c] {
            return Err(mismatch("batch_norm", input, p));
        }
    }
    let inner: usize = input.shape()[2..].iter().product();
    let scale: Vec<f32> = gamma
        .data()
        .iter()
        .zip(moving_var.data())
        .map(|(&g, &v)| g / (v + epsilon).sqrt())
        .collect();
    let mut out = input.data().to_vec();
    for (i, x) in out.iter_mut().enumerate() {
        let ch = (i / inner) % c;
        *x = (*x - moving_mean.data()[ch]) * scale[ch] + beta.data()[ch];
    }
    Tensor::new(input.shape().to_vec(), out)
}

pub fn relu(input: &Tensor) -> Tensor {
    let data = input.data().iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect();
    Tensor::new(input.shape().to_vec(), data).expect("same shape")
}

/// Max pooling over `k×k` windows without padding.
pub fn max_pool2d(input: &Tensor, k: usize, stride: usize) -> Result<Tensor, TensorError> {
    expect_rank("max_pool2d", input, 4)?;
    let &[n, c, h, w] = input.shape() else { unreachable!() };
    let (out_h, out_w) = match (window_output_len(h, k, stride, 0), window_output_len(w, k, stride, 0)) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(TensorError::InvalidArgument {
                op: "max_pool2d",
                reason: format!("window {k} with stride {stride} does not fit input {h}x{w}"),
            })
        }
    };
    let src = input.data();
    let mut out = Vec::with_capacity(n * c * out_h * out_w);
    for plane in src.chunks_exact(h * w) {
        for oy in 0..out_h {
            for ox in 0..out_w {
                let mut best = f32::NEG_INFINITY;
                for ky in 0..k {
                    let row = &plane[(oy * stride + ky) * w + ox * stride..][..k];
                    for &v in row {
                        // NaN wins so that corrupted activations stay visible downstream.
                        if v > best || v.is_nan() {
                            best = v;
                        }
                    }
                }
                out.push(best);
            }
        }
    }
    Tensor::new(vec![n, c, out_h, out_w], out)
}

/// Mean over the spatial axes: `N×C×H×W` becomes `N×C`.
pub fn global_avg_pool(input: &Tensor) -> Result<Tensor, TensorError> {
    expect_rank("global_avg_pool", input, 4)?;
    let &[n, c, h, w] = input.shape() else { unreachable!() };
    let area = (h * w) as f32;
    let out = input
        .data()
        .chunks_exact(h * w)
        .map(|plane| plane.iter().sum::<f32>() / area)
        .collect();
    Tensor::new(vec![n, c], out)
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    if a.shape() != b.shape() {
        return Err(mismatch("add", a, b));
    }
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Tensor::new(a.shape().to_vec(), data)
}

/// Row-wise softmax of an `N×K` tensor.
pub fn softmax(input: &Tensor) -> Result<Tensor, TensorError> {
    expect_rank("softmax", input, 2)?;
    let k = input.shape()[1];
    let mut out = Vec::with_capacity(input.len());
    for row in input.data().chunks_exact(k) {
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let exps: Vec<f64> = row.iter().map(|&x| f64::from(x - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        out.extend(exps.iter().map(|e| (e / total) as f32));
    }
    Tensor::new(input.shape().to_vec(), out)
}

/// Index of the largest entry in each row of an `N×K` tensor.
///
/// Ties go to the lowest index. NaN entries never win; an all-NaN row maps to 0.
pub fn argmax_row(input: &Tensor) -> Result<Vec<usize>, TensorError> {
    expect_rank("argmax_row", input, 2)?;
    let k = input.shape()[1];
    Ok(input
        .data()
        .chunks_exact(k)
        .map(|row| {
            let mut best: Option<(usize, f32)> = None;
            for (i, &v) in row.iter().enumerate() {
                if v.is_nan() {
                    continue;
                }
                match best {
                    Some((_, b)) if v <= b => {}
                    _ => best = Some((i, v)),
                }
            }
            best.map_or(0, |(i, _)| i)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f32]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn conv_scalar_kernel_doubles() {
        let x = t(&[1, 1, 3, 3], &[1.0; 9]);
        let k = t(&[1, 1, 1, 1], &[2.0]);
        let y = conv2d(&x, &k, None, 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 3, 3]);
        assert!(y.data().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn conv_sum_reduction() {
        let x = t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let k = t(&[1, 1, 2, 2], &[1.0; 4]);
        let y = conv2d(&x, &k, None, 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[10.0]);
    }

    #[test]
    fn conv_channel_mismatch_names_both_shapes() {
        let x = t(&[1, 2, 3, 3], &[0.0; 18]);
        let k = t(&[1, 3, 1, 1], &[0.0; 3]);
        let err = conv2d(&x, &k, None, 1, 0).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[1, 2, 3, 3]") && msg.contains("[1, 3, 1, 1]"), "{msg}");
    }

    #[test]
    fn conv_kernel_larger_than_input() {
        let x = t(&[1, 1, 2, 2], &[0.0; 4]);
        let k = t(&[1, 1, 3, 3], &[0.0; 9]);
        assert!(conv2d(&x, &k, None, 1, 0).is_err());
        assert!(conv2d(&x, &k, None, 1, 1).is_ok());
    }

    #[test]
    fn dense_identity_and_hand_values() {
        let eye = t(&[3, 3], &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let zero = t(&[3], &[0.0; 3]);
        let y = dense(&t(&[1, 3], &[1.0, 2.0, 3.0]), &eye, Some(&zero)).unwrap();
        assert_eq!(y.data(), &[1.0, 2.0, 3.0]);

        let w = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let b = t(&[2], &[10.0, 10.0]);
        let y = dense(&t(&[1, 2], &[1.0, 1.0]), &w, Some(&b)).unwrap();
        assert_eq!(y.data(), &[14.0, 16.0]);
    }

    #[test]
    fn dense_dimension_mismatch() {
        let w = t(&[3, 2], &[0.0; 6]);
        assert!(matches!(
            dense(&t(&[1, 2], &[0.0; 2]), &w, None),
            Err(TensorError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn batch_norm_hand_values() {
        let one = |v: f32| t(&[1], &[v]);
        let x = t(&[1, 1], &[5.0]);
        let y = batch_norm_inference(&x, &one(2.0), &one(1.0), &one(3.0), &one(4.0), 0.0).unwrap();
        assert_eq!(y.data(), &[3.0]);

        let x = t(&[2, 1, 2, 1], &[-1.5, 0.0, 2.0, 7.25]);
        let y = batch_norm_inference(&x, &one(1.0), &one(0.0), &one(0.0), &one(1.0), 0.0).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn batch_norm_rejects_negative_variance() {
        let one = |v: f32| t(&[1], &[v]);
        let x = t(&[1, 1], &[5.0]);
        let err = batch_norm_inference(&x, &one(1.0), &one(0.0), &one(0.0), &one(-0.5), 1e-5).unwrap_err();
        assert_eq!(err, TensorError::NegativeVariance { channel: 0, value: -0.5 });
        let y = batch_norm_inference_unchecked(&x, &one(1.0), &one(0.0), &one(0.0), &one(-0.5), 1e-5).unwrap();
        assert!(y.data()[0].is_nan());
    }

    #[test]
    fn relu_softmax_argmax() {
        assert_eq!(relu(&t(&[3], &[-1.0, 0.0, 2.0])).data(), &[0.0, 0.0, 2.0]);
        assert_eq!(softmax(&t(&[1, 2], &[0.0, 0.0])).unwrap().data(), &[0.5, 0.5]);
        let scores = t(&[3, 3], &[1.0, 3.0, 3.0, f32::NAN, -1.0, -2.0, f32::NAN, f32::NAN, f32::NAN]);
        assert_eq!(argmax_row(&scores).unwrap(), vec![1, 1, 0]);
    }

    #[test]
    fn pooling() {
        let x = t(&[1, 2, 2, 2], &[1.0, 2.0, 3.0, 4.0, -1.0, -2.0, -3.0, -4.0]);
        assert_eq!(global_avg_pool(&x).unwrap().data(), &[2.5, -2.5]);
        assert_eq!(max_pool2d(&x, 2, 2).unwrap().data(), &[4.0, -1.0]);
        assert!(max_pool2d(&x, 3, 1).is_err());
    }

    #[test]
    fn add_requires_equal_shapes() {
        let a = t(&[2], &[1.0, 2.0]);
        assert_eq!(add(&a, &a).unwrap().data(), &[2.0, 4.0]);
        assert!(add(&a, &t(&[1, 2], &[1.0, 2.0])).is_err());
    }
}
