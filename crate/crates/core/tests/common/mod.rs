//! Test-only reference implementations in f64, written independently of the
//! library's compute paths, plus the central finite-difference harness. The
//! convolution here is a naive seven-deep loop; the library's patch-gather
//! path is checked against it, never the other way around.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, PartialEq, Eq)]
pub enum RefPadding {
    Valid,
    Same,
}

/// Output extent and leading pad for one axis, per the library contract:
/// VALID shrinks, SAME gives ceil(dim/stride) with the odd pad trailing.
fn ref_axis(dim: usize, k: usize, s: usize, padding: RefPadding) -> (usize, usize) {
    match padding {
        RefPadding::Valid => ((dim - k) / s + 1, 0),
        RefPadding::Same => {
            let out = dim.div_ceil(s);
            let total = ((out - 1) * s + k).saturating_sub(dim);
            (out, total / 2)
        }
    }
}

/// Naive 3D cross-correlation in f64.
/// input [n, ci, d, h, w], filters [co, ci, kz, ky, kx] both flat row-major.
pub fn conv3d_f64(
    input: &[f64],
    ishape: (usize, usize, usize, usize, usize),
    filters: &[f64],
    fshape: (usize, usize, usize, usize, usize),
    stride: (usize, usize, usize),
    padding: RefPadding,
) -> (Vec<f64>, (usize, usize, usize, usize, usize)) {
    let (n, ci, id, ih, iw) = ishape;
    let (co, fci, kz, ky, kx) = fshape;
    assert_eq!(ci, fci);
    let (sz, sy, sx) = stride;
    let (od, pz) = ref_axis(id, kz, sz, padding);
    let (oh, py) = ref_axis(ih, ky, sy, padding);
    let (ow, px) = ref_axis(iw, kx, sx, padding);
    let mut out = vec![0.0f64; n * co * od * oh * ow];
    for b in 0..n {
        for o in 0..co {
            for zo in 0..od {
                for yo in 0..oh {
                    for xo in 0..ow {
                        let mut acc = 0.0f64;
                        for c in 0..ci {
                            for dz in 0..kz {
                                let z = (zo * sz + dz) as isize - pz as isize;
                                if z < 0 || z >= id as isize {
                                    continue;
                                }
                                for dy in 0..ky {
                                    let y = (yo * sy + dy) as isize - py as isize;
                                    if y < 0 || y >= ih as isize {
                                        continue;
                                    }
                                    for dx in 0..kx {
                                        let x = (xo * sx + dx) as isize - px as isize;
                                        if x < 0 || x >= iw as isize {
                                            continue;
                                        }
                                        let iv = input[(((b * ci + c) * id + z as usize) * ih
                                            + y as usize)
                                            * iw
                                            + x as usize];
                                        let fv = filters
                                            [(((o * ci + c) * kz + dz) * ky + dy) * kx + dx];
                                        acc += iv * fv;
                                    }
                                }
                            }
                        }
                        out[(((b * co + o) * od + zo) * oh + yo) * ow + xo] = acc;
                    }
                }
            }
        }
    }
    (out, (n, co, od, oh, ow))
}

/// Naive max pooling with SAME padding (-inf outside), window == stride use.
pub fn maxpool3d_f64(
    input: &[f64],
    ishape: (usize, usize, usize, usize, usize),
    window: (usize, usize, usize),
    stride: (usize, usize, usize),
) -> (Vec<f64>, (usize, usize, usize, usize, usize)) {
    let (n, c, id, ih, iw) = ishape;
    let (wz, wy, wx) = window;
    let (sz, sy, sx) = stride;
    let od = id.div_ceil(sz);
    let oh = ih.div_ceil(sy);
    let ow = iw.div_ceil(sx);
    let pad = |odim: usize, s: usize, w: usize, dim: usize| -> usize {
        (((odim - 1) * s + w).saturating_sub(dim)) / 2
    };
    let (pz, py, px) = (pad(od, sz, wz, id), pad(oh, sy, wy, ih), pad(ow, sx, wx, iw));
    let mut out = vec![0.0f64; n * c * od * oh * ow];
    for ch in 0..n * c {
        for zo in 0..od {
            for yo in 0..oh {
                for xo in 0..ow {
                    let mut best = f64::NEG_INFINITY;
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
                                let v = input
                                    [((ch * id + z as usize) * ih + y as usize) * iw + x as usize];
                                if v > best {
                                    best = v;
                                }
                            }
                        }
                    }
                    out[((ch * od + zo) * oh + yo) * ow + xo] = best;
                }
            }
        }
    }
    (out, (n, c, od, oh, ow))
}

/// Training-mode batch norm in f64 with per-feature statistics over
/// (batch, orientation, space).
pub fn bn_train_f64(
    input: &[f64],
    shape: (usize, usize, usize),
    order: usize,
    gamma: &[f64],
    beta: &[f64],
    eps: f64,
) -> Vec<f64> {
    let (n, channels, vox) = shape;
    let features = channels / order;
    let group_len = order * vox;
    let sample_len = channels * vox;
    let mut out = vec![0.0f64; input.len()];
    for f in 0..features {
        let mut sum = 0.0;
        let mut sq = 0.0;
        for b in 0..n {
            let base = b * sample_len + f * group_len;
            for &v in &input[base..base + group_len] {
                sum += v;
                sq += v * v;
            }
        }
        let m = (n * group_len) as f64;
        let mean = sum / m;
        let var = (sq / m - mean * mean).max(0.0);
        let inv = 1.0 / (var + eps).sqrt();
        for b in 0..n {
            let base = b * sample_len + f * group_len;
            for i in base..base + group_len {
                out[i] = (input[i] - mean) * inv * gamma[f] + beta[f];
            }
        }
    }
    out
}

pub fn relu_f64(input: &[f64]) -> Vec<f64> {
    input.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect()
}

/// Max over each feature's orientation block.
pub fn orientation_pool_f64(
    input: &[f64],
    shape: (usize, usize, usize),
    order: usize,
) -> Vec<f64> {
    let (n, channels, vox) = shape;
    let features = channels / order;
    let mut out = vec![f64::NEG_INFINITY; n * features * vox];
    for b in 0..n {
        for f in 0..features {
            for s in 0..order {
                let base = (b * channels + f * order + s) * vox;
                let obase = (b * features + f) * vox;
                for v in 0..vox {
                    if input[base + v] > out[obase + v] {
                        out[obase + v] = input[base + v];
                    }
                }
            }
        }
    }
    out
}

pub fn dense_f64(input: &[f64], batch: usize, w: &[f64], b: &[f64], n_out: usize) -> Vec<f64> {
    let n_in = input.len() / batch;
    let mut out = vec![0.0f64; batch * n_out];
    for n in 0..batch {
        for o in 0..n_out {
            let mut acc = b[o];
            for i in 0..n_in {
                acc += input[n * n_in + i] * w[o * n_in + i];
            }
            out[n * n_out + o] = acc;
        }
    }
    out
}

/// Mean softmax cross-entropy from logits, f64.
pub fn softmax_ce_f64(logits: &[f64], n_classes: usize, labels: &[usize]) -> f64 {
    let mut loss = 0.0;
    for (n, row) in logits.chunks(n_classes).enumerate() {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|&v| (v - m).exp()).sum();
        loss -= (row[labels[n]] - m) - z.ln();
    }
    loss / labels.len() as f64
}

/// Gather expansion in f64 through precomputed index maps (one map per
/// group element over the canonical filter's slots).
pub fn expand_gather_f64(
    canonical: &[f64],
    n_out: usize,
    n_in: usize,
    slots: usize,
    maps: &[Vec<usize>],
) -> Vec<f64> {
    let order = maps.len();
    let canon_len = n_in * slots;
    let mut out = vec![0.0f64; n_out * order * canon_len];
    for i in 0..n_out {
        let canon = &canonical[i * canon_len..(i + 1) * canon_len];
        for (j, map) in maps.iter().enumerate() {
            let obase = (i * order + j) * canon_len;
            for ci in 0..n_in {
                for (p, &m) in map.iter().enumerate() {
                    out[obase + ci * slots + p] = canon[ci * slots + m];
                }
            }
        }
    }
    out
}

/// Weighted sum of an output buffer, the scalar objective for gradient
/// checks: L = sum_i weights[i] * out[i].
pub fn weighted_sum(out: &[f64], weights: &[f64]) -> f64 {
    out.iter().zip(weights).map(|(a, b)| a * b).sum()
}

pub fn fixed_weights(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect()
}

pub fn random_f32(len: usize, seed: u64, scale: f32) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| (rng.gen::<f32>() * 2.0 - 1.0) * scale).collect()
}

/// Integer-valued f32 buffer in [-3, 3], for exact-arithmetic tests.
pub fn random_int_f32(len: usize, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.gen_range(-3i32..=3) as f32).collect()
}

/// Pairwise-distinct values with a minimum gap well above the FD step, for
/// gradient checks through max operators: a near-tie inside a pooling window
/// would make the central difference straddle the argmax switch.
pub fn random_separated_f32(len: usize, seed: u64, step: f32) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ranks: Vec<usize> = (0..len).collect();
    for i in (1..len).rev() {
        let j = rng.gen_range(0..=i);
        ranks.swap(i, j);
    }
    ranks
        .into_iter()
        .map(|r| (r as f32 - len as f32 / 2.0) * step)
        .collect()
}

pub fn to_f64(xs: &[f32]) -> Vec<f64> {
    xs.iter().map(|&v| v as f64).collect()
}

/// Central finite differences of `f` at `x`, f64 throughout.
pub fn central_diff(f: &dyn Fn(&[f64]) -> f64, x: &[f64], eps: f64) -> Vec<f64> {
    let mut grad = vec![0.0f64; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + eps;
        let hi = f(&probe);
        probe[i] = orig - eps;
        let lo = f(&probe);
        probe[i] = orig;
        grad[i] = (hi - lo) / (2.0 * eps);
    }
    grad
}

/// Relative comparison with a floor so near-zero entries do not blow up the
/// ratio: |a - b| <= rel * max(|a|, |b|, floor).
pub fn max_rel_error(analytic: &[f32], reference: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), reference.len());
    let mut worst = 0.0f64;
    for (&a, &r) in analytic.iter().zip(reference) {
        let denom = (a as f64).abs().max(r.abs()).max(floor);
        let err = ((a as f64) - r).abs() / denom;
        if err > worst {
            worst = err;
        }
    }
    worst
}

pub fn assert_grad_close(analytic: &[f32], reference: &[f64], rel_tol: f64, context: &str) {
    let err = max_rel_error(analytic, reference, 1e-4);
    assert!(
        err <= rel_tol,
        "{context}: max relative gradient error {err:.3e} exceeds {rel_tol:.1e}"
    );
}

// ---------------------------------------------------------------------------
// Shared gradient-check suite: f32 analytic backward passes against central
// finite differences of the f64 reference forward, objective L = <W, out>.

use octoconv_core::group::{GroupName, SymmetryGroup};
use octoconv_core::layers::{
    conv_spec_3x3x3_same, Dense, EqBatchNorm, GConvLayer, MaxPoolLayer, OrientationPool,
};
use octoconv_core::tensor::{
    conv3d_backward, conv3d_forward, softmax_cross_entropy, Conv3dSpec, Padding, Tensor,
};
use octoconv_core::transform::build_plan;
use std::sync::Arc;

pub const GRAD_EPS: f64 = 1e-3;
pub const GRAD_REL_TOL: f64 = 1e-3;

/// Worst relative error of conv3d_backward (input and filter grads).
pub fn gradcheck_conv3d(seed: u64) -> f64 {
    let ishape = (2usize, 2usize, 3usize, 4usize, 4usize);
    let fshape = (2usize, 2usize, 3usize, 3usize, 3usize);
    let ilen = ishape.0 * ishape.1 * ishape.2 * ishape.3 * ishape.4;
    let flen = fshape.0 * fshape.1 * fshape.2 * fshape.3 * fshape.4;
    let input = random_f32(ilen, seed, 1.0);
    let filters = random_f32(flen, seed ^ 0xA1, 0.5);
    let spec = Conv3dSpec::unit((3, 3, 3), Padding::Same);

    let it = Tensor::from_vec(&[ishape.0, ishape.1, ishape.2, ishape.3, ishape.4], input.clone())
        .unwrap();
    let ft = Tensor::from_vec(&[fshape.0, fshape.1, fshape.2, fshape.3, fshape.4], filters.clone())
        .unwrap();
    let out = conv3d_forward(&it, &ft, &spec).unwrap();
    let weights = fixed_weights(out.len(), seed ^ 0xB2);
    let wt = Tensor::from_vec(out.shape(), weights.iter().map(|&w| w as f32).collect()).unwrap();
    let (grad_input, grad_filters) = conv3d_backward(&wt, &it, &ft, &spec).unwrap();

    let i64v = to_f64(&input);
    let f64v = to_f64(&filters);
    let loss_wrt_input = |x: &[f64]| {
        let (o, _) = conv3d_f64(x, ishape, &f64v, fshape, (1, 1, 1), RefPadding::Same);
        weighted_sum(&o, &weights)
    };
    let loss_wrt_filters = |f: &[f64]| {
        let (o, _) = conv3d_f64(&i64v, ishape, f, fshape, (1, 1, 1), RefPadding::Same);
        weighted_sum(&o, &weights)
    };
    let fd_input = central_diff(&loss_wrt_input, &i64v, GRAD_EPS);
    let fd_filters = central_diff(&loss_wrt_filters, &f64v, GRAD_EPS);
    max_rel_error(grad_input.data(), &fd_input, 1e-4)
        .max(max_rel_error(grad_filters.data(), &fd_filters, 1e-4))
}

/// Worst relative error of the gconv backward pass: canonical filters, bias,
/// and input, pulled back through the expansion.
pub fn gradcheck_gconv(seed: u64, gname: GroupName, first_layer: bool) -> f64 {
    let g = Arc::new(SymmetryGroup::build(gname).unwrap());
    let order = g.order();
    // Large groups get a single output feature; the f64 reference forward is
    // a naive loop and the FD sweep reruns it per canonical parameter.
    let (n_out, n_in) = (if order >= 24 { 1 } else { 2 }, 1usize);
    let slots = if first_layer { 27 } else { order * 27 };
    let canonical_shape: Vec<usize> = if first_layer {
        vec![n_out, n_in, 3, 3, 3]
    } else {
        vec![n_out, n_in, order, 3, 3, 3]
    };
    let clen = n_out * n_in * slots;
    let canonical = random_f32(clen, seed, 0.4);
    let bias = random_f32(n_out, seed ^ 0xC3, 0.2);
    let c_channels = if first_layer { n_in } else { n_in * order };
    let dims = if order >= 24 {
        (1usize, 3usize, 3usize)
    } else {
        (2usize, 3usize, 3usize)
    };
    let ilen = c_channels * dims.0 * dims.1 * dims.2;
    let input = random_f32(ilen, seed ^ 0xD4, 1.0);

    let mut layer = GConvLayer::new(
        g.clone(),
        first_layer,
        Tensor::from_vec(&canonical_shape, canonical.clone()).unwrap(),
        conv_spec_3x3x3_same(),
    )
    .unwrap();
    layer.bias = bias.clone();
    let it = Tensor::from_vec(&[1, c_channels, dims.0, dims.1, dims.2], input.clone()).unwrap();
    let out = layer.forward_train(&it).unwrap();
    let weights = fixed_weights(out.len(), seed ^ 0xE5);
    let wt = Tensor::from_vec(out.shape(), weights.iter().map(|&w| w as f32).collect()).unwrap();
    let grad_input = layer.backward(&wt).unwrap();

    let plan = build_plan(&g, &g.rho, (3, 3, 3), first_layer).unwrap();
    let maps: Vec<Vec<usize>> = plan.maps.clone();
    let vox = dims.0 * dims.1 * dims.2;
    let ishape = (1usize, c_channels, dims.0, dims.1, dims.2);

    let forward64 = |canon: &[f64], inp: &[f64], b: &[f64]| -> Vec<f64> {
        let expanded = expand_gather_f64(canon, n_out, n_in, slots, &maps);
        let fshape = (n_out * order, c_channels, 3, 3, 3);
        let (mut o, _) = conv3d_f64(inp, ishape, &expanded, fshape, (1, 1, 1), RefPadding::Same);
        for (c, chunk) in o.chunks_mut(vox).enumerate() {
            for v in chunk {
                *v += b[c / order];
            }
        }
        o
    };

    let c64 = to_f64(&canonical);
    let i64v = to_f64(&input);
    let b64 = to_f64(&bias);
    let loss_canon = |c: &[f64]| weighted_sum(&forward64(c, &i64v, &b64), &weights);
    let loss_input = |x: &[f64]| weighted_sum(&forward64(&c64, x, &b64), &weights);
    let loss_bias = |b: &[f64]| weighted_sum(&forward64(&c64, &i64v, b), &weights);

    let fd_canon = central_diff(&loss_canon, &c64, GRAD_EPS);
    let fd_input = central_diff(&loss_input, &i64v, GRAD_EPS);
    let fd_bias = central_diff(&loss_bias, &b64, GRAD_EPS);
    max_rel_error(layer.grad_filters.data(), &fd_canon, 1e-4)
        .max(max_rel_error(grad_input.data(), &fd_input, 1e-4))
        .max(max_rel_error(&layer.grad_bias, &fd_bias, 1e-4))
}

/// Worst relative error of batch-norm backward: input, gamma, beta.
pub fn gradcheck_batchnorm(seed: u64) -> f64 {
    let (n_features, order) = (2usize, 2usize);
    let (batch, vox) = (3usize, 8usize);
    let channels = n_features * order;
    let ilen = batch * channels * vox;
    let input = random_f32(ilen, seed, 1.0);
    let gamma = random_f32(n_features, seed ^ 0x11, 0.5)
        .iter()
        .map(|v| v + 1.0)
        .collect::<Vec<_>>();
    let beta = random_f32(n_features, seed ^ 0x22, 0.3);

    let mut bn = EqBatchNorm::new(n_features, order);
    bn.gamma = gamma.clone();
    bn.beta = beta.clone();
    let it = Tensor::from_vec(&[batch, channels, 2, 2, 2], input.clone()).unwrap();
    let out = bn.forward_train(&it).unwrap();
    let weights = fixed_weights(out.len(), seed ^ 0x33);
    let wt = Tensor::from_vec(out.shape(), weights.iter().map(|&w| w as f32).collect()).unwrap();
    let grad_input = bn.backward(&wt).unwrap();

    let shape = (batch, channels, vox);
    let g64 = to_f64(&gamma);
    let b64 = to_f64(&beta);
    let i64v = to_f64(&input);
    let eps = 1e-5f64;
    let loss_input =
        |x: &[f64]| weighted_sum(&bn_train_f64(x, shape, order, &g64, &b64, eps), &weights);
    let loss_gamma =
        |g: &[f64]| weighted_sum(&bn_train_f64(&i64v, shape, order, g, &b64, eps), &weights);
    let loss_beta =
        |b: &[f64]| weighted_sum(&bn_train_f64(&i64v, shape, order, &g64, b, eps), &weights);

    let fd_input = central_diff(&loss_input, &i64v, GRAD_EPS);
    let fd_gamma = central_diff(&loss_gamma, &g64, GRAD_EPS);
    let fd_beta = central_diff(&loss_beta, &b64, GRAD_EPS);
    max_rel_error(grad_input.data(), &fd_input, 1e-4)
        .max(max_rel_error(&bn.grad_gamma, &fd_gamma, 1e-4))
        .max(max_rel_error(&bn.grad_beta, &fd_beta, 1e-4))
}

/// Worst relative error of the dense backward pass.
pub fn gradcheck_dense(seed: u64) -> f64 {
    let (batch, n_in, n_out) = (3usize, 7usize, 2usize);
    let input = random_f32(batch * n_in, seed, 1.0);
    let weight = random_f32(n_out * n_in, seed ^ 0x44, 0.5);
    let bias = random_f32(n_out, seed ^ 0x55, 0.2);
    let mut dense = Dense::new(Tensor::from_vec(&[n_out, n_in], weight.clone()).unwrap()).unwrap();
    dense.bias = bias.clone();
    let it = Tensor::from_vec(&[batch, n_in], input.clone()).unwrap();
    let out = dense.forward_train(&it).unwrap();
    let weights = fixed_weights(out.len(), seed ^ 0x66);
    let wt = Tensor::from_vec(out.shape(), weights.iter().map(|&w| w as f32).collect()).unwrap();
    let grad_input = dense.backward(&wt).unwrap();

    let i64v = to_f64(&input);
    let w64 = to_f64(&weight);
    let b64 = to_f64(&bias);
    let loss_input = |x: &[f64]| weighted_sum(&dense_f64(x, batch, &w64, &b64, n_out), &weights);
    let loss_weight = |w: &[f64]| weighted_sum(&dense_f64(&i64v, batch, w, &b64, n_out), &weights);
    let loss_bias = |b: &[f64]| weighted_sum(&dense_f64(&i64v, batch, &w64, b, n_out), &weights);
    let fd_input = central_diff(&loss_input, &i64v, GRAD_EPS);
    let fd_weight = central_diff(&loss_weight, &w64, GRAD_EPS);
    let fd_bias = central_diff(&loss_bias, &b64, GRAD_EPS);
    max_rel_error(grad_input.data(), &fd_input, 1e-4)
        .max(max_rel_error(dense.grad_weight.data(), &fd_weight, 1e-4))
        .max(max_rel_error(&dense.grad_bias, &fd_bias, 1e-4))
}

/// Worst relative error of max-pool backward (gradient routed to argmax).
pub fn gradcheck_maxpool(seed: u64) -> f64 {
    let ishape = (1usize, 2usize, 3usize, 4usize, 5usize);
    let ilen = ishape.0 * ishape.1 * ishape.2 * ishape.3 * ishape.4;
    let input = random_separated_f32(ilen, seed, 0.01);
    let mut pool = MaxPoolLayer::new();
    let it = Tensor::from_vec(&[ishape.0, ishape.1, ishape.2, ishape.3, ishape.4], input.clone())
        .unwrap();
    let out = pool.forward_train(&it).unwrap();
    let weights = fixed_weights(out.len(), seed ^ 0x77);
    let wt = Tensor::from_vec(out.shape(), weights.iter().map(|&w| w as f32).collect()).unwrap();
    let grad_input = pool.backward(&wt).unwrap();

    let i64v = to_f64(&input);
    let loss = |x: &[f64]| {
        let (o, _) = maxpool3d_f64(x, ishape, (2, 2, 2), (2, 2, 2));
        weighted_sum(&o, &weights)
    };
    let fd = central_diff(&loss, &i64v, GRAD_EPS);
    max_rel_error(grad_input.data(), &fd, 1e-4)
}

/// Worst relative error of orientation-pool backward.
pub fn gradcheck_orientation_pool(seed: u64) -> f64 {
    let order = 4usize;
    let (batch, features, vox) = (2usize, 2usize, 8usize);
    let channels = features * order;
    let input = random_separated_f32(batch * channels * vox, seed, 0.01);
    let mut pool = OrientationPool::new(order);
    let it = Tensor::from_vec(&[batch, channels, 2, 2, 2], input.clone()).unwrap();
    let out = pool.forward_train(&it).unwrap();
    let weights = fixed_weights(out.len(), seed ^ 0x88);
    let wt = Tensor::from_vec(out.shape(), weights.iter().map(|&w| w as f32).collect()).unwrap();
    let grad_input = pool.backward(&wt).unwrap();

    let i64v = to_f64(&input);
    let loss = |x: &[f64]| {
        weighted_sum(
            &orientation_pool_f64(x, (batch, channels, vox), order),
            &weights,
        )
    };
    let fd = central_diff(&loss, &i64v, GRAD_EPS);
    max_rel_error(grad_input.data(), &fd, 1e-4)
}

/// Worst relative error of the softmax cross-entropy gradient.
pub fn gradcheck_softmax_ce(seed: u64) -> f64 {
    let (batch, k) = (4usize, 2usize);
    let logits = random_f32(batch * k, seed, 2.0);
    let labels: Vec<usize> = (0..batch).map(|i| i % k).collect();
    let lt = Tensor::from_vec(&[batch, k], logits.clone()).unwrap();
    let (_, grad) = softmax_cross_entropy(&lt, &labels).unwrap();

    let l64 = to_f64(&logits);
    let loss = |x: &[f64]| softmax_ce_f64(x, k, &labels);
    let fd = central_diff(&loss, &l64, GRAD_EPS);
    max_rel_error(grad.data(), &fd, 1e-4)
}

/// Every layer backward at one seed; returns the worst error observed.
pub fn gradcheck_all_layers(seed: u64) -> f64 {
    let mut worst = gradcheck_conv3d(seed);
    worst = worst.max(gradcheck_gconv(seed, GroupName::D4, true));
    worst = worst.max(gradcheck_gconv(seed, GroupName::D4, false));
    worst = worst.max(gradcheck_batchnorm(seed));
    worst = worst.max(gradcheck_dense(seed));
    worst = worst.max(gradcheck_maxpool(seed));
    worst = worst.max(gradcheck_orientation_pool(seed));
    worst = worst.max(gradcheck_softmax_ce(seed));
    worst
}
