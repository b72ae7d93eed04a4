//! Equivariant layers with manual forward/backward passes: group
//! convolution, batch norm with per-feature parameters shared across
//! orientation channels, orientation max-pooling, dropout, dense head, and
//! thin ReLU / max-pool / flatten wrappers used to assemble models.
//!
//! Every layer exposes `forward_eval(&self, ..)`, a pure function safe for
//! concurrent use on a frozen model, and `forward_train(&mut self, ..)`,
//! which additionally caches what `backward` needs. Backward accumulates
//! parameter gradients into the layer's grad buffers.

use crate::error::{CoreError, Result};
use crate::group::SymmetryGroup;
use crate::tensor::{
    conv3d_backward, conv3d_forward, matmul_abt, max_pool3d_backward, max_pool3d_forward,
    relu_backward, relu_forward, Conv3dSpec, MaxPoolCache, Padding, Tensor,
};
use crate::transform::{build_plan, expand_filters, fold_filter_grads, FilterTransformPlan};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

/// Group-convolution layer holding one canonical filter bank. The forward
/// pass expands the bank into its `|H|` transformed copies and runs a plain
/// spatial convolution; the backward pass folds the expanded-filter gradient
/// back onto the canonical parameters, so each parameter collects gradient
/// from all of its copies.
pub struct GConvLayer {
    pub group: Arc<SymmetryGroup>,
    pub first_layer: bool,
    /// Canonical filters: [n_out, n_in, kz, ky, kx] for a first layer,
    /// [n_out, n_in, |H|, kz, ky, kx] for higher layers.
    pub filters: Tensor,
    /// One bias per feature, shared across the feature's orientation channels.
    pub bias: Vec<f32>,
    pub spec: Conv3dSpec,
    plan: FilterTransformPlan,
    pub grad_filters: Tensor,
    pub grad_bias: Vec<f32>,
    cache: Option<(Tensor, Tensor)>, // (input, expanded filters)
}

impl GConvLayer {
    pub fn new(
        group: Arc<SymmetryGroup>,
        first_layer: bool,
        filters: Tensor,
        spec: Conv3dSpec,
    ) -> Result<GConvLayer> {
        let expected_ndim = if first_layer { 5 } else { 6 };
        if filters.ndim() != expected_ndim {
            return Err(CoreError::ShapeMismatch {
                op: "gconv",
                detail: format!(
                    "canonical filters must have {expected_ndim} dims, got {:?}",
                    filters.shape()
                ),
            });
        }
        let plan = build_plan(&group, &group.rho, spec.kernel, first_layer)?;
        let n_out = filters.shape()[0];
        let grad_filters = Tensor::zeros(filters.shape());
        Ok(GConvLayer {
            group,
            first_layer,
            filters,
            bias: vec![0.0; n_out],
            spec,
            plan,
            grad_filters,
            grad_bias: vec![0.0; n_out],
            cache: None,
        })
    }

    pub fn n_out(&self) -> usize {
        self.filters.shape()[0]
    }

    pub fn order(&self) -> usize {
        self.group.order()
    }

    /// Canonical parameters plus one bias per feature.
    pub fn param_count(&self) -> usize {
        self.filters.len() + self.bias.len()
    }

    pub fn expanded_filters(&self) -> Result<Tensor> {
        expand_filters(&self.plan, &self.filters)
    }

    fn compute(&self, input: &Tensor) -> Result<(Tensor, Tensor)> {
        let expanded = expand_filters(&self.plan, &self.filters)?;
        let mut out = conv3d_forward(input, &expanded, &self.spec)?;
        let order = self.order();
        let shape = out.shape().to_vec();
        let vox = shape[2] * shape[3] * shape[4];
        let channels = shape[1];
        for sample in out.data_mut().chunks_mut(channels * vox) {
            for (c, chunk) in sample.chunks_mut(vox).enumerate() {
                let b = self.bias[c / order];
                if b != 0.0 {
                    for v in chunk {
                        *v += b;
                    }
                }
            }
        }
        Ok((out, expanded))
    }

    pub fn forward_eval(&self, input: &Tensor) -> Result<Tensor> {
        Ok(self.compute(input)?.0)
    }

    pub fn forward_train(&mut self, input: &Tensor) -> Result<Tensor> {
        let (out, expanded) = self.compute(input)?;
        self.cache = Some((input.clone(), expanded));
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let (input, expanded) = self.cache.take().ok_or_else(|| {
            CoreError::InvalidArgument("gconv backward without cached forward".into())
        })?;
        let order = self.order();
        let shape = grad_out.shape();
        let vox = shape[2] * shape[3] * shape[4];
        let channels = shape[1];
        for sample in grad_out.data().chunks(channels * vox) {
            for (c, chunk) in sample.chunks(vox).enumerate() {
                self.grad_bias[c / order] += chunk.iter().sum::<f32>();
            }
        }
        let (grad_input, grad_expanded) = conv3d_backward(grad_out, &input, &expanded, &self.spec)?;
        let folded = fold_filter_grads(&self.plan, &grad_expanded, self.filters.shape())?;
        self.grad_filters.add_assign(&folded)?;
        Ok(grad_input)
    }
}

struct BnCache {
    normalized: Tensor,
    inv_std: Vec<f32>,
}

/// Batch normalization with one (gamma, beta) pair per feature, shared
/// across the feature's `|H|` orientation channels. Statistics are computed
/// over batch, orientation, and space, which keeps the layer equivariant.
///
/// Eval mode applies `y = (x - mean) * inv_std * gamma + beta` with running
/// statistics, elementwise in exactly that order.
pub struct EqBatchNorm {
    pub n_features: usize,
    pub order: usize,
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub running_mean: Vec<f32>,
    pub running_var: Vec<f32>,
    pub momentum: f32,
    pub eps: f32,
    pub grad_gamma: Vec<f32>,
    pub grad_beta: Vec<f32>,
    cache: Option<BnCache>,
}

impl EqBatchNorm {
    pub fn new(n_features: usize, order: usize) -> EqBatchNorm {
        EqBatchNorm {
            n_features,
            order,
            gamma: vec![1.0; n_features],
            beta: vec![0.0; n_features],
            running_mean: vec![0.0; n_features],
            running_var: vec![1.0; n_features],
            momentum: 0.1,
            eps: 1e-5,
            grad_gamma: vec![0.0; n_features],
            grad_beta: vec![0.0; n_features],
            cache: None,
        }
    }

    pub fn param_count(&self) -> usize {
        2 * self.n_features
    }

    fn check_shape(&self, input: &Tensor) -> Result<(usize, usize)> {
        let shape = input.shape();
        if shape.len() != 5 || shape[1] != self.n_features * self.order {
            return Err(CoreError::ShapeMismatch {
                op: "batchnorm",
                detail: format!(
                    "expected {} channels ({} features x {} orientations), got {:?}",
                    self.n_features * self.order,
                    self.n_features,
                    self.order,
                    shape
                ),
            });
        }
        if shape[0] == 0 {
            return Err(CoreError::InvalidArgument("batchnorm on empty batch".into()));
        }
        Ok((shape[0], shape[2] * shape[3] * shape[4]))
    }

    pub fn forward_eval(&self, input: &Tensor) -> Result<Tensor> {
        let (batch, vox) = self.check_shape(input)?;
        let group_len = self.order * vox;
        let sample_len = self.n_features * group_len;
        let mut out = input.clone();
        for f in 0..self.n_features {
            let inv_std = 1.0 / (self.running_var[f] + self.eps).sqrt();
            let (mean, gamma, beta) = (self.running_mean[f], self.gamma[f], self.beta[f]);
            for n in 0..batch {
                let base = n * sample_len + f * group_len;
                for v in &mut out.data_mut()[base..base + group_len] {
                    *v = (*v - mean) * inv_std * gamma + beta;
                }
            }
        }
        Ok(out)
    }

    pub fn forward_train(&mut self, input: &Tensor) -> Result<Tensor> {
        let (batch, vox) = self.check_shape(input)?;
        let group_len = self.order * vox;
        let sample_len = self.n_features * group_len;
        let m = (batch * group_len) as f64;
        let mut out = input.clone();
        let mut inv_stds = vec![0.0f32; self.n_features];
        for f in 0..self.n_features {
            let mut sum = 0.0f64;
            let mut sq_sum = 0.0f64;
            for n in 0..batch {
                let base = n * sample_len + f * group_len;
                for &v in &input.data()[base..base + group_len] {
                    sum += v as f64;
                    sq_sum += (v as f64) * (v as f64);
                }
            }
            let mean = sum / m;
            let var = (sq_sum / m - mean * mean).max(0.0);
            let inv_std = 1.0 / ((var + self.eps as f64).sqrt());
            inv_stds[f] = inv_std as f32;
            self.running_mean[f] =
                (1.0 - self.momentum) * self.running_mean[f] + self.momentum * mean as f32;
            self.running_var[f] =
                (1.0 - self.momentum) * self.running_var[f] + self.momentum * var as f32;
            let (mean, inv_std) = (mean as f32, inv_std as f32);
            for n in 0..batch {
                let base = n * sample_len + f * group_len;
                for v in &mut out.data_mut()[base..base + group_len] {
                    *v = (*v - mean) * inv_std;
                }
            }
        }
        let normalized = out.clone();
        for f in 0..self.n_features {
            let (gamma, beta) = (self.gamma[f], self.beta[f]);
            for n in 0..batch {
                let base = n * sample_len + f * group_len;
                for v in &mut out.data_mut()[base..base + group_len] {
                    *v = *v * gamma + beta;
                }
            }
        }
        self.cache = Some(BnCache {
            normalized,
            inv_std: inv_stds,
        });
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let cache = self.cache.take().ok_or_else(|| {
            CoreError::InvalidArgument("batchnorm backward without cached forward".into())
        })?;
        let (batch, vox) = self.check_shape(grad_out)?;
        let group_len = self.order * vox;
        let sample_len = self.n_features * group_len;
        let m = (batch * group_len) as f64;
        let mut grad_input = Tensor::zeros(grad_out.shape());
        let go = grad_out.data();
        let xn = cache.normalized.data();
        for f in 0..self.n_features {
            let mut g_sum = 0.0f64;
            let mut gx_sum = 0.0f64;
            for n in 0..batch {
                let base = n * sample_len + f * group_len;
                for i in base..base + group_len {
                    g_sum += go[i] as f64;
                    gx_sum += go[i] as f64 * xn[i] as f64;
                }
            }
            self.grad_beta[f] += g_sum as f32;
            self.grad_gamma[f] += gx_sum as f32;
            let g_mean = (g_sum / m) as f32;
            let gx_mean = (gx_sum / m) as f32;
            let scale = self.gamma[f] * cache.inv_std[f];
            for n in 0..batch {
                let base = n * sample_len + f * group_len;
                for i in base..base + group_len {
                    grad_input.data_mut()[i] = scale * (go[i] - g_mean - xn[i] * gx_mean);
                }
            }
        }
        Ok(grad_input)
    }
}

/// Inverted dropout with a seeded generator: kept voxels are scaled by
/// 1/(1-p) during training; evaluation is the identity.
pub struct Dropout {
    pub p: f32,
    rng: ChaCha8Rng,
    mask: Option<Vec<f32>>,
}

impl Dropout {
    pub fn new(p: f32, rng: ChaCha8Rng) -> Result<Dropout> {
        if !(0.0..1.0).contains(&p) {
            return Err(CoreError::InvalidArgument(format!(
                "dropout probability must be in [0, 1), got {p}"
            )));
        }
        Ok(Dropout { p, rng, mask: None })
    }

    pub fn forward_eval(&self, input: &Tensor) -> Result<Tensor> {
        Ok(input.clone())
    }

    pub fn forward_train(&mut self, input: &Tensor) -> Result<Tensor> {
        let keep_scale = 1.0 / (1.0 - self.p);
        let mask: Vec<f32> = (0..input.len())
            .map(|_| {
                if self.rng.gen::<f32>() < self.p {
                    0.0
                } else {
                    keep_scale
                }
            })
            .collect();
        let data = input.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let out = Tensor::from_vec(input.shape(), data)?;
        self.mask = Some(mask);
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let mask = self.mask.take().ok_or_else(|| {
            CoreError::InvalidArgument("dropout backward without cached forward".into())
        })?;
        let data = grad_out.data().iter().zip(&mask).map(|(g, m)| g * m).collect();
        Tensor::from_vec(grad_out.shape(), data)
    }
}

/// Max over each feature's orientation channels; the output has one channel
/// per feature and is invariant to the group action on its input.
pub struct OrientationPool {
    pub order: usize,
    cache: Option<(Vec<usize>, Vec<usize>)>, // (winning orientation per output slot, input shape)
}

impl OrientationPool {
    pub fn new(order: usize) -> OrientationPool {
        OrientationPool { order, cache: None }
    }

    fn compute(&self, input: &Tensor) -> Result<(Tensor, Vec<usize>)> {
        let shape = input.shape();
        if shape.len() != 5 || shape[1] % self.order != 0 {
            return Err(CoreError::ShapeMismatch {
                op: "orientation_pool",
                detail: format!("channels {:?} not divisible by group order {}", shape, self.order),
            });
        }
        let features = shape[1] / self.order;
        let vox = shape[2] * shape[3] * shape[4];
        let mut out = Tensor::zeros(&[shape[0], features, shape[2], shape[3], shape[4]]);
        let mut argmax = vec![0usize; out.len()];
        let src = input.data();
        let dst = out.data_mut();
        for n in 0..shape[0] {
            for f in 0..features {
                let in_base = (n * shape[1] + f * self.order) * vox;
                let out_base = (n * features + f) * vox;
                for v in 0..vox {
                    let mut best = f32::NEG_INFINITY;
                    let mut best_s = 0;
                    for s in 0..self.order {
                        let val = src[in_base + s * vox + v];
                        if val > best {
                            best = val;
                            best_s = s;
                        }
                    }
                    dst[out_base + v] = best;
                    argmax[out_base + v] = best_s;
                }
            }
        }
        Ok((out, argmax))
    }

    pub fn forward_eval(&self, input: &Tensor) -> Result<Tensor> {
        Ok(self.compute(input)?.0)
    }

    pub fn forward_train(&mut self, input: &Tensor) -> Result<Tensor> {
        let (out, argmax) = self.compute(input)?;
        self.cache = Some((argmax, input.shape().to_vec()));
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let (argmax, in_shape) = self.cache.take().ok_or_else(|| {
            CoreError::InvalidArgument("orientation_pool backward without cached forward".into())
        })?;
        let features = in_shape[1] / self.order;
        let vox = in_shape[2] * in_shape[3] * in_shape[4];
        let mut grad_input = Tensor::zeros(&in_shape);
        let gi = grad_input.data_mut();
        let go = grad_out.data();
        for n in 0..in_shape[0] {
            for f in 0..features {
                let in_base = (n * in_shape[1] + f * self.order) * vox;
                let out_base = (n * features + f) * vox;
                for v in 0..vox {
                    gi[in_base + argmax[out_base + v] * vox + v] += go[out_base + v];
                }
            }
        }
        Ok(grad_input)
    }
}

/// Fully-connected head: an affine map on flattened feature vectors.
pub struct Dense {
    /// [n_out, n_in]
    pub weight: Tensor,
    pub bias: Vec<f32>,
    pub grad_weight: Tensor,
    pub grad_bias: Vec<f32>,
    cache: Option<Tensor>,
}

impl Dense {
    pub fn new(weight: Tensor) -> Result<Dense> {
        if weight.ndim() != 2 {
            return Err(CoreError::ShapeMismatch {
                op: "dense",
                detail: format!("weight must be [out, in], got {:?}", weight.shape()),
            });
        }
        let n_out = weight.shape()[0];
        let grad_weight = Tensor::zeros(weight.shape());
        Ok(Dense {
            weight,
            bias: vec![0.0; n_out],
            grad_weight,
            grad_bias: vec![0.0; n_out],
            cache: None,
        })
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn forward_eval(&self, input: &Tensor) -> Result<Tensor> {
        let (n_out, n_in) = (self.weight.shape()[0], self.weight.shape()[1]);
        let shape = input.shape();
        if shape.len() != 2 || shape[1] != n_in {
            return Err(CoreError::ShapeMismatch {
                op: "dense",
                detail: format!("input {shape:?} vs weight [{n_out}, {n_in}]"),
            });
        }
        let batch = shape[0];
        let mut out = matmul_abt(input.data(), self.weight.data(), batch, n_out, n_in);
        for row in out.chunks_mut(n_out) {
            for (v, b) in row.iter_mut().zip(&self.bias) {
                *v += b;
            }
        }
        Tensor::from_vec(&[batch, n_out], out)
    }

    pub fn forward_train(&mut self, input: &Tensor) -> Result<Tensor> {
        let out = self.forward_eval(input)?;
        self.cache = Some(input.clone());
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let input = self.cache.take().ok_or_else(|| {
            CoreError::InvalidArgument("dense backward without cached forward".into())
        })?;
        let (n_out, n_in) = (self.weight.shape()[0], self.weight.shape()[1]);
        let batch = input.shape()[0];
        let go = grad_out.data();
        let x = input.data();
        let w = self.weight.data();
        let mut grad_input = Tensor::zeros(input.shape());
        let gi = grad_input.data_mut();
        for n in 0..batch {
            let grow = &go[n * n_out..(n + 1) * n_out];
            let xrow = &x[n * n_in..(n + 1) * n_in];
            for (o, &g) in grow.iter().enumerate() {
                self.grad_bias[o] += g;
                if g != 0.0 {
                    let wrow = &w[o * n_in..(o + 1) * n_in];
                    let gwrow = &mut self.grad_weight.data_mut()[o * n_in..(o + 1) * n_in];
                    let girow = &mut gi[n * n_in..(n + 1) * n_in];
                    for i in 0..n_in {
                        gwrow[i] += g * xrow[i];
                        girow[i] += g * wrow[i];
                    }
                }
            }
        }
        Ok(grad_input)
    }
}

/// ReLU with a cached pre-activation for the backward pass.
#[derive(Default)]
pub struct ReluLayer {
    cache: Option<Tensor>,
}

impl ReluLayer {
    pub fn new() -> ReluLayer {
        ReluLayer { cache: None }
    }

    pub fn forward_eval(&self, input: &Tensor) -> Result<Tensor> {
        Ok(relu_forward(input))
    }

    pub fn forward_train(&mut self, input: &Tensor) -> Result<Tensor> {
        self.cache = Some(input.clone());
        Ok(relu_forward(input))
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let input = self.cache.take().ok_or_else(|| {
            CoreError::InvalidArgument("relu backward without cached forward".into())
        })?;
        relu_backward(grad_out, &input)
    }
}

/// 2x2x2, stride-2 max pooling with SAME padding.
pub struct MaxPoolLayer {
    pub window: (usize, usize, usize),
    pub stride: (usize, usize, usize),
    cache: Option<MaxPoolCache>,
}

impl MaxPoolLayer {
    pub fn new() -> MaxPoolLayer {
        MaxPoolLayer {
            window: (2, 2, 2),
            stride: (2, 2, 2),
            cache: None,
        }
    }

    pub fn forward_eval(&self, input: &Tensor) -> Result<Tensor> {
        Ok(max_pool3d_forward(input, self.window, self.stride)?.0)
    }

    pub fn forward_train(&mut self, input: &Tensor) -> Result<Tensor> {
        let (out, cache) = max_pool3d_forward(input, self.window, self.stride)?;
        self.cache = Some(cache);
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let cache = self.cache.take().ok_or_else(|| {
            CoreError::InvalidArgument("maxpool backward without cached forward".into())
        })?;
        max_pool3d_backward(grad_out, &cache)
    }
}

impl Default for MaxPoolLayer {
    fn default() -> Self {
        Self::new()
    }
}

/// Collapses [n, c, d, h, w] to [n, c*d*h*w].
#[derive(Default)]
pub struct Flatten {
    cache: Option<Vec<usize>>,
}

impl Flatten {
    pub fn new() -> Flatten {
        Flatten { cache: None }
    }

    pub fn forward_eval(&self, input: &Tensor) -> Result<Tensor> {
        let shape = input.shape();
        let batch = shape[0];
        let rest: usize = shape[1..].iter().product();
        input.clone().reshape(&[batch, rest])
    }

    pub fn forward_train(&mut self, input: &Tensor) -> Result<Tensor> {
        self.cache = Some(input.shape().to_vec());
        self.forward_eval(input)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let shape = self.cache.take().ok_or_else(|| {
            CoreError::InvalidArgument("flatten backward without cached forward".into())
        })?;
        grad_out.clone().reshape(&shape)
    }
}

/// Gather orientation channels within each feature block: output channel
/// `f*|H| + i` reads input channel `f*|H| + perm[i]`. This is how `rho(h)`
/// acts on feature maps in the equivariance law.
pub fn permute_orientation_channels(input: &Tensor, perm: &[usize]) -> Result<Tensor> {
    let shape = input.shape();
    let order = perm.len();
    if shape.len() != 5 || shape[1] % order != 0 {
        return Err(CoreError::ShapeMismatch {
            op: "permute_orientation_channels",
            detail: format!("channels {:?} not divisible by {}", shape, order),
        });
    }
    let vox = shape[2] * shape[3] * shape[4];
    let features = shape[1] / order;
    let mut out = Tensor::zeros(shape);
    let src = input.data();
    let dst = out.data_mut();
    for n in 0..shape[0] {
        for f in 0..features {
            let base = (n * shape[1] + f * order) * vox;
            for (i, &p) in perm.iter().enumerate() {
                let d = base + i * vox;
                let s = base + p * vox;
                dst[d..d + vox].copy_from_slice(&src[s..s + vox]);
            }
        }
    }
    Ok(out)
}

/// Convenience constructor for the conv spec every model layer uses.
pub fn conv_spec_3x3x3_same() -> Conv3dSpec {
    Conv3dSpec::unit((3, 3, 3), Padding::Same)
}
