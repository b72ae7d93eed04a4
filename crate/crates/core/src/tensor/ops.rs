//! Elementwise and reduction helpers: ReLU, 3D max pooling, softmax
//! cross-entropy, mean, argmax.

use super::Tensor;
use crate::error::{CoreError, Result};
use rayon::prelude::*;

pub fn relu_forward(input: &Tensor) -> Tensor {
    let mut out = input.clone();
    for v in out.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    out
}

/// Gradient routed through positive inputs only.
pub fn relu_backward(grad_out: &Tensor, input: &Tensor) -> Result<Tensor> {
    if grad_out.shape() != input.shape() {
        return Err(CoreError::ShapeMismatch {
            op: "relu_backward",
            detail: format!("{:?} vs {:?}", grad_out.shape(), input.shape()),
        });
    }
    let data = grad_out
        .data()
        .iter()
        .zip(input.data())
        .map(|(&g, &x)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::from_vec(input.shape(), data)
}

/// Argmax source index per pooled voxel, needed by the backward pass.
#[derive(Clone, Debug)]
pub struct MaxPoolCache {
    pub input_shape: Vec<usize>,
    pub argmax: Vec<u32>,
}

/// 3D max pooling with SAME padding: output dims are ceil(dim / stride) and
/// out-of-range positions read as -infinity. The odd pad voxel trails.
pub fn max_pool3d_forward(
    input: &Tensor,
    window: (usize, usize, usize),
    stride: (usize, usize, usize),
) -> Result<(Tensor, MaxPoolCache)> {
    let shape = input.shape();
    if shape.len() != 5 {
        return Err(CoreError::ShapeMismatch {
            op: "max_pool3d",
            detail: format!("expected 5-d input, got {shape:?}"),
        });
    }
    let (n, c) = (shape[0], shape[1]);
    let (id, ih, iw) = (shape[2], shape[3], shape[4]);
    let (wz, wy, wx) = window;
    let (sz, sy, sx) = stride;
    if wz == 0 || wy == 0 || wx == 0 || sz == 0 || sy == 0 || sx == 0 {
        return Err(CoreError::InvalidArgument("pool window/stride must be >= 1".into()));
    }
    let od = id.div_ceil(sz);
    let oh = ih.div_ceil(sy);
    let ow = iw.div_ceil(sx);
    let pad = |odim: usize, s: usize, w: usize, dim: usize| -> usize {
        (((odim - 1) * s + w).saturating_sub(dim)) / 2
    };
    let (pz, py, px) = (pad(od, sz, wz, id), pad(oh, sy, wy, ih), pad(ow, sx, wx, iw));

    let mut out = Tensor::zeros(&[n, c, od, oh, ow]);
    let mut argmax = vec![0u32; n * c * od * oh * ow];
    let in_plane = id * ih * iw;
    let out_plane = od * oh * ow;
    let src = input.data();

    out.data_mut()
        .par_chunks_mut(out_plane)
        .zip(argmax.par_chunks_mut(out_plane))
        .enumerate()
        .for_each(|(ch, (dst, amax))| {
            let base = ch * in_plane;
            for zo in 0..od {
                for yo in 0..oh {
                    for xo in 0..ow {
                        let mut best = f32::NEG_INFINITY;
                        let mut best_idx = 0usize;
                        for dz in 0..wz {
                            let z = (zo * sz + dz) as isize - pz as isize;
                            if z < 0 || z >= id as isize {
                                continue;
                            }
                            for dy in 0..wy {
                                let y = (yo * sy + dy) as isize - py as isize;
                                if y < 0 || y >= ih as isize {
                                    continue;
                                }
                                for dx in 0..wx {
                                    let x = (xo * sx + dx) as isize - px as isize;
                                    if x < 0 || x >= iw as isize {
                                        continue;
                                    }
                                    let idx = (z as usize * ih + y as usize) * iw + x as usize;
                                    let v = src[base + idx];
                                    if v > best {
                                        best = v;
                                        best_idx = idx;
                                    }
                                }
                            }
                        }
                        let o = (zo * oh + yo) * ow + xo;
                        dst[o] = best;
                        amax[o] = best_idx as u32;
                    }
                }
            }
        });

    Ok((
        out,
        MaxPoolCache {
            input_shape: shape.to_vec(),
            argmax,
        },
    ))
}

/// Routes each pooled gradient to the voxel that won the max.
pub fn max_pool3d_backward(grad_out: &Tensor, cache: &MaxPoolCache) -> Result<Tensor> {
    if grad_out.len() != cache.argmax.len() {
        return Err(CoreError::ShapeMismatch {
            op: "max_pool3d_backward",
            detail: format!(
                "grad_out has {} elements, cache has {}",
                grad_out.len(),
                cache.argmax.len()
            ),
        });
    }
    let shape = &cache.input_shape;
    let (id, ih, iw) = (shape[2], shape[3], shape[4]);
    let in_plane = id * ih * iw;
    let out_plane = grad_out.len() / (shape[0] * shape[1]);
    let mut grad_input = Tensor::zeros(shape);
    let go = grad_out.data();
    grad_input
        .data_mut()
        .par_chunks_mut(in_plane)
        .enumerate()
        .for_each(|(ch, dst)| {
            let base = ch * out_plane;
            for o in 0..out_plane {
                dst[cache.argmax[base + o] as usize] += go[base + o];
            }
        });
    Ok(grad_input)
}

/// Mean of all elements.
pub fn mean(t: &Tensor) -> Result<f32> {
    if t.is_empty() {
        return Err(CoreError::InvalidArgument("mean of empty tensor".into()));
    }
    Ok(t.data().iter().sum::<f32>() / t.len() as f32)
}

/// Index of the largest element (first on ties).
pub fn argmax(values: &[f32]) -> Result<usize> {
    if values.is_empty() {
        return Err(CoreError::InvalidArgument("argmax of empty slice".into()));
    }
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Row-wise softmax of logits [n, k], stabilized by max subtraction.
pub fn softmax_probs(logits: &Tensor) -> Result<Tensor> {
    let shape = logits.shape();
    if shape.len() != 2 {
        return Err(CoreError::ShapeMismatch {
            op: "softmax",
            detail: format!("expected [n, k], got {shape:?}"),
        });
    }
    let k = shape[1];
    let mut out = logits.clone();
    for row in out.data_mut().chunks_mut(k) {
        let m = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    Ok(out)
}

/// Mean cross-entropy over the batch, computed from logits, plus its
/// gradient with respect to the logits.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f32, Tensor)> {
    let shape = logits.shape();
    if shape.len() != 2 || shape[0] != labels.len() {
        return Err(CoreError::ShapeMismatch {
            op: "softmax_cross_entropy",
            detail: format!("logits {shape:?} vs {} labels", labels.len()),
        });
    }
    let (n, k) = (shape[0], shape[1]);
    if labels.iter().any(|&l| l >= k) {
        return Err(CoreError::InvalidArgument("label out of range".into()));
    }
    let mut grad = softmax_probs(logits)?;
    let mut loss = 0.0f64;
    for (i, row) in grad.data_mut().chunks_mut(k).enumerate() {
        loss -= (row[labels[i]].max(1e-30) as f64).ln();
        row[labels[i]] -= 1.0;
        for v in row.iter_mut() {
            *v /= n as f32;
        }
    }
    Ok(((loss / n as f64) as f32, grad))
}
