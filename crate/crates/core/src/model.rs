//! The baseline 6-layer 3D CNN and its group-convolutional variants, the
//! width rule that keeps parameter counts comparable, Xavier initialization,
//! Adam, the training loop with validation-based early stopping, and the
//! checkpoint format.

use crate::error::{CoreError, Result};
use crate::group::{GroupName, SymmetryGroup};
use crate::layers::{
    conv_spec_3x3x3_same, Dense, Dropout, EqBatchNorm, Flatten, GConvLayer, MaxPoolLayer,
    OrientationPool, ReluLayer,
};
use crate::synth::{augment, sample_rng, AugmentPolicy, PatchSample};
use crate::tensor::{softmax_cross_entropy, softmax_probs, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fs;
use std::path::Path;
use std::sync::Arc;

/// Architecture description: group choice, per-layer widths, placement of
/// pooling and dropout, input geometry.
#[derive(Clone, Debug)]
pub struct ModelConfig {
    pub group_name: GroupName,
    /// Baseline channel widths of the six conv layers. Group variants divide
    /// these by sqrt(|H|) (rounded, floor 1).
    pub base_widths: [usize; 6],
    pub kernel: (usize, usize, usize),
    /// 1-based conv layer indices followed by 2x2x2/stride-2 max pooling.
    pub pool_after: Vec<usize>,
    /// 1-based conv layer indices followed by dropout.
    pub dropout_after: Vec<usize>,
    pub dropout_p: f32,
    /// (c, d, h, w) of one input patch.
    pub input_shape: (usize, usize, usize, usize),
    pub n_classes: usize,
    /// Update rate of the batch-norm running statistics. Small training
    /// sets see few optimizer steps per epoch, so desk-scale runs want this
    /// higher than the usual 0.1.
    pub bn_momentum: f32,
}

impl ModelConfig {
    /// Desk-scale profile: 6x24x24 patches, widths 8..32.
    pub fn desk(group_name: GroupName) -> ModelConfig {
        ModelConfig {
            group_name,
            base_widths: [8, 8, 16, 16, 32, 32],
            kernel: (3, 3, 3),
            pool_after: vec![1, 3, 5],
            dropout_after: vec![2, 4],
            dropout_p: 0.3,
            input_shape: (1, 6, 24, 24),
            n_classes: 2,
            bn_momentum: 0.3,
        }
    }

    /// Full-geometry profile: 12x72x72 patches, widths 16..64.
    pub fn paper_shape(group_name: GroupName) -> ModelConfig {
        ModelConfig {
            group_name,
            base_widths: [16, 16, 32, 32, 64, 64],
            kernel: (3, 3, 3),
            pool_after: vec![1, 3, 5],
            dropout_after: vec![2, 4],
            dropout_p: 0.3,
            input_shape: (1, 12, 72, 72),
            n_classes: 2,
            bn_momentum: 0.1,
        }
    }

    /// Channel width of conv layer `i` (0-based) after the sqrt(|H|) rule.
    pub fn layer_width(&self, i: usize) -> usize {
        let base = self.base_widths[i];
        let order = self.group_name.order();
        if order == 1 {
            base
        } else {
            ((base as f64 / (order as f64).sqrt()).round() as usize).max(1)
        }
    }

    /// Spatial dims entering the dense head, after all pooling stages.
    pub fn head_spatial(&self) -> (usize, usize, usize) {
        let (_, mut d, mut h, mut w) = self.input_shape;
        for _ in &self.pool_after {
            d = d.div_ceil(2);
            h = h.div_ceil(2);
            w = w.div_ceil(2);
        }
        (d, h, w)
    }

    fn validate(&self) -> Result<()> {
        if self.base_widths.iter().any(|&w| w == 0) {
            return Err(CoreError::InvalidArgument("zero layer width".into()));
        }
        if self.n_classes < 2 {
            return Err(CoreError::InvalidArgument("need at least 2 classes".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(CoreError::InvalidArgument("dropout_p outside [0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(CoreError::InvalidArgument("bn_momentum outside [0, 1]".into()));
        }
        // Each pooling stage must see spatial extents of at least 2; a
        // deeper pyramid means the input is too small.
        let (_, mut d, mut h, mut w) = self.input_shape;
        for _ in &self.pool_after {
            if d < 2 || h < 2 || w < 2 {
                return Err(CoreError::InvalidArgument(format!(
                    "input {:?} too small for {} pooling stages",
                    self.input_shape,
                    self.pool_after.len()
                )));
            }
            d = d.div_ceil(2);
            h = h.div_ceil(2);
            w = w.div_ceil(2);
        }
        Ok(())
    }
}

/// Uniform Xavier sample on +-sqrt(6 / (fan_in + fan_out)).
pub fn xavier_init(
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
    rng: &mut ChaCha8Rng,
) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt() as f32;
    let len: usize = shape.iter().product();
    let data = (0..len)
        .map(|_| (2.0 * rng.gen::<f32>() - 1.0) * bound)
        .collect();
    Tensor::from_vec(shape, data).expect("shape/data length agree")
}

#[derive(Clone, Copy, Debug)]
pub struct AdamHyper {
    pub alpha: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            alpha: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First/second-moment state for one parameter buffer.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub m: Vec<f32>,
    pub v: Vec<f32>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> AdamState {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step(
    params: &mut [f32],
    grads: &[f32],
    state: &mut AdamState,
    hyper: &AdamHyper,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(CoreError::ShapeMismatch {
            op: "adam_step",
            detail: format!(
                "params {}, grads {}, state {}",
                params.len(),
                grads.len(),
                state.m.len()
            ),
        });
    }
    state.t += 1;
    let b1 = hyper.beta1;
    let b2 = hyper.beta2;
    let bc1 = 1.0 - (b1 as f64).powi(state.t as i32);
    let bc2 = 1.0 - (b2 as f64).powi(state.t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
        let m_hat = (state.m[i] as f64 / bc1) as f32;
        let v_hat = (state.v[i] as f64 / bc2) as f32;
        params[i] -= hyper.alpha * m_hat / (v_hat.sqrt() + hyper.epsilon);
    }
    Ok(())
}

/// One stage of the assembled network.
pub enum Block {
    GConv(GConvLayer),
    Norm(EqBatchNorm),
    Relu(ReluLayer),
    Pool(MaxPoolLayer),
    Drop(Dropout),
    OrientPool(OrientationPool),
    Flatten(Flatten),
    Dense(Dense),
}

impl Block {
    fn forward_eval(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            Block::GConv(l) => l.forward_eval(x),
            Block::Norm(l) => l.forward_eval(x),
            Block::Relu(l) => l.forward_eval(x),
            Block::Pool(l) => l.forward_eval(x),
            Block::Drop(l) => l.forward_eval(x),
            Block::OrientPool(l) => l.forward_eval(x),
            Block::Flatten(l) => l.forward_eval(x),
            Block::Dense(l) => l.forward_eval(x),
        }
    }

    fn forward_train(&mut self, x: &Tensor) -> Result<Tensor> {
        match self {
            Block::GConv(l) => l.forward_train(x),
            Block::Norm(l) => l.forward_train(x),
            Block::Relu(l) => l.forward_train(x),
            Block::Pool(l) => l.forward_train(x),
            Block::Drop(l) => l.forward_train(x),
            Block::OrientPool(l) => l.forward_train(x),
            Block::Flatten(l) => l.forward_train(x),
            Block::Dense(l) => l.forward_train(x),
        }
    }

    fn backward(&mut self, g: &Tensor) -> Result<Tensor> {
        match self {
            Block::GConv(l) => l.backward(g),
            Block::Norm(l) => l.backward(g),
            Block::Relu(l) => l.backward(g),
            Block::Pool(l) => l.backward(g),
            Block::Drop(l) => l.backward(g),
            Block::OrientPool(l) => l.backward(g),
            Block::Flatten(l) => l.backward(g),
            Block::Dense(l) => l.backward(g),
        }
    }
}

/// An assembled network: [gconv -> BN -> ReLU] x6 with pooling and dropout
/// placed per config, then orientation pooling, flatten, and a dense head.
pub struct Model {
    pub config: ModelConfig,
    pub group: Arc<SymmetryGroup>,
    pub blocks: Vec<Block>,
}

/// Build and initialize a model. The same seed always produces identical
/// parameters and dropout streams.
pub fn build_model(config: &ModelConfig, seed: u64) -> Result<Model> {
    config.validate()?;
    let group = Arc::new(SymmetryGroup::build(config.group_name)?);
    let order = group.order();
    let (kz, ky, kx) = config.kernel;
    let kvol = kz * ky * kx;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut blocks = Vec::new();
    let mut prev_width = 0usize;

    for i in 0..6 {
        let n_out = config.layer_width(i);
        let first = i == 0;
        let filters = if first {
            let c_in = config.input_shape.0;
            let fan_in = c_in * kvol;
            let fan_out = n_out * order;
            xavier_init(&[n_out, c_in, kz, ky, kx], fan_in, fan_out, &mut rng)
        } else {
            let fan_in = prev_width * order * kvol;
            let fan_out = n_out * order;
            xavier_init(&[n_out, prev_width, order, kz, ky, kx], fan_in, fan_out, &mut rng)
        };
        blocks.push(Block::GConv(GConvLayer::new(
            group.clone(),
            first,
            filters,
            conv_spec_3x3x3_same(),
        )?));
        let mut bn = EqBatchNorm::new(n_out, order);
        bn.momentum = config.bn_momentum;
        blocks.push(Block::Norm(bn));
        blocks.push(Block::Relu(ReluLayer::new()));
        let layer_no = i + 1;
        if config.pool_after.contains(&layer_no) {
            blocks.push(Block::Pool(MaxPoolLayer::new()));
        }
        if config.dropout_after.contains(&layer_no) {
            let drop_rng = ChaCha8Rng::seed_from_u64(rng.gen());
            blocks.push(Block::Drop(Dropout::new(config.dropout_p, drop_rng)?));
        }
        prev_width = n_out;
    }

    blocks.push(Block::OrientPool(OrientationPool::new(order)));
    blocks.push(Block::Flatten(Flatten::new()));
    let (hd, hh, hw) = config.head_spatial();
    let in_features = prev_width * hd * hh * hw;
    let weight = xavier_init(
        &[config.n_classes, in_features],
        in_features,
        config.n_classes,
        &mut rng,
    );
    blocks.push(Block::Dense(Dense::new(weight)?));

    Ok(Model {
        config: config.clone(),
        group,
        blocks,
    })
}

impl Model {
    /// Pure forward pass (eval mode: running BN statistics, no dropout).
    pub fn forward_eval(&self, input: &Tensor) -> Result<Tensor> {
        let mut x = input.clone();
        for b in &self.blocks {
            x = b.forward_eval(&x)?;
        }
        Ok(x)
    }

    /// Forward pass in training mode, caching what backward needs.
    pub fn forward_train(&mut self, input: &Tensor) -> Result<Tensor> {
        let mut x = input.clone();
        for b in &mut self.blocks {
            x = b.forward_train(&x)?;
        }
        Ok(x)
    }

    /// Backpropagate from the logits gradient, accumulating parameter grads.
    pub fn backward(&mut self, grad_logits: &Tensor) -> Result<()> {
        let mut g = grad_logits.clone();
        for b in self.blocks.iter_mut().rev() {
            g = b.backward(&g)?;
        }
        Ok(())
    }

    /// Visit trainable (parameter, gradient) buffer pairs in a fixed order.
    pub fn visit_params(&mut self, f: &mut impl FnMut(&mut [f32], &mut [f32])) {
        for b in &mut self.blocks {
            match b {
                Block::GConv(l) => {
                    f(l.filters.data_mut(), l.grad_filters.data_mut());
                    f(&mut l.bias, &mut l.grad_bias);
                }
                Block::Norm(l) => {
                    f(&mut l.gamma, &mut l.grad_gamma);
                    f(&mut l.beta, &mut l.grad_beta);
                }
                Block::Dense(l) => {
                    f(l.weight.data_mut(), l.grad_weight.data_mut());
                    f(&mut l.bias, &mut l.grad_bias);
                }
                _ => {}
            }
        }
    }

    /// Visit every state buffer that a checkpoint must carry: trainable
    /// parameters plus batch-norm running statistics, with stable names.
    pub fn visit_state(&mut self, f: &mut impl FnMut(&str, &mut [f32])) {
        let mut conv = 0usize;
        let mut norm = 0usize;
        let mut dense = 0usize;
        for b in &mut self.blocks {
            match b {
                Block::GConv(l) => {
                    conv += 1;
                    f(&format!("conv{conv}.filters"), l.filters.data_mut());
                    f(&format!("conv{conv}.bias"), &mut l.bias);
                }
                Block::Norm(l) => {
                    norm += 1;
                    f(&format!("bn{norm}.gamma"), &mut l.gamma);
                    f(&format!("bn{norm}.beta"), &mut l.beta);
                    f(&format!("bn{norm}.running_mean"), &mut l.running_mean);
                    f(&format!("bn{norm}.running_var"), &mut l.running_var);
                }
                Block::Dense(l) => {
                    dense += 1;
                    f(&format!("dense{dense}.weight"), l.weight.data_mut());
                    f(&format!("dense{dense}.bias"), &mut l.bias);
                }
                _ => {}
            }
        }
    }

    pub fn zero_grads(&mut self) {
        self.visit_params(&mut |_, g| {
            for v in g {
                *v = 0.0;
            }
        });
    }

    /// Trainable parameter count.
    pub fn param_count(&self) -> usize {
        let mut count = 0;
        for b in &self.blocks {
            count += match b {
                Block::GConv(l) => l.param_count(),
                Block::Norm(l) => l.param_count(),
                Block::Dense(l) => l.param_count(),
                _ => 0,
            };
        }
        count
    }

    fn snapshot(&mut self) -> Vec<Vec<f32>> {
        let mut out = Vec::new();
        self.visit_state(&mut |_, buf| out.push(buf.to_vec()));
        out
    }

    fn restore(&mut self, snapshot: &[Vec<f32>]) {
        let mut i = 0;
        self.visit_state(&mut |_, buf| {
            buf.copy_from_slice(&snapshot[i]);
            i += 1;
        });
    }
}

/// Adam over every trainable buffer of a model.
pub struct Adam {
    pub hyper: AdamHyper,
    states: Vec<AdamState>,
}

impl Adam {
    pub fn new(hyper: AdamHyper) -> Adam {
        Adam {
            hyper,
            states: Vec::new(),
        }
    }

    /// Apply one update from the accumulated gradients, then zero them.
    pub fn step(&mut self, model: &mut Model) -> Result<()> {
        if self.states.is_empty() {
            let mut lens = Vec::new();
            model.visit_params(&mut |p, _| lens.push(p.len()));
            self.states = lens.into_iter().map(AdamState::new).collect();
        }
        let mut idx = 0usize;
        let mut first_err: Option<CoreError> = None;
        let states = &mut self.states;
        let hyper = self.hyper;
        model.visit_params(&mut |p, g| {
            if first_err.is_some() {
                return;
            }
            match states.get_mut(idx) {
                Some(state) => {
                    if let Err(e) = adam_step(p, g, state, &hyper) {
                        first_err = Some(e);
                        return;
                    }
                    for v in g.iter_mut() {
                        *v = 0.0;
                    }
                    idx += 1;
                }
                None => {
                    first_err = Some(CoreError::InvalidArgument(
                        "optimizer state count drifted from model parameters".into(),
                    ));
                }
            }
        });
        match first_err {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }
}

/// Training-run settings.
#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub adam: AdamHyper,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub augment: bool,
    pub policy: AugmentPolicy,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 30,
            adam: AdamHyper::default(),
            max_epochs: 100,
            patience: 10,
            seed: 0,
            augment: true,
            policy: AugmentPolicy::all(),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f32,
    pub val_loss: f32,
}

/// Per-epoch losses plus where validation bottomed out.
#[derive(Clone, Debug)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f32,
}

impl TrainReport {
    /// First epoch whose validation loss is at or below `reference`.
    pub fn epochs_to_reach(&self, reference: f32) -> Option<usize> {
        self.epochs
            .iter()
            .find(|e| e.val_loss <= reference)
            .map(|e| e.epoch)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss\n");
        for e in &self.epochs {
            out.push_str(&format!("{},{},{}\n", e.epoch, e.train_loss, e.val_loss));
        }
        out
    }
}

fn batch_tensor(samples: &[&PatchSample]) -> Result<(Tensor, Vec<usize>)> {
    if samples.is_empty() {
        return Err(CoreError::EmptyDataset("empty batch".into()));
    }
    let shape = samples[0].volume.shape();
    let (c, d, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let mut data = Vec::with_capacity(samples.len() * c * d * h * w);
    let mut labels = Vec::with_capacity(samples.len());
    for s in samples {
        data.extend_from_slice(s.volume.data());
        labels.push(s.label as usize);
    }
    Ok((
        Tensor::from_vec(&[samples.len(), c, d, h, w], data)?,
        labels,
    ))
}

/// Mean cross-entropy of a frozen model over a sample set.
pub fn evaluate_loss(model: &Model, samples: &[PatchSample], batch_size: usize) -> Result<f32> {
    if samples.is_empty() {
        return Err(CoreError::EmptyDataset("evaluation set".into()));
    }
    let mut total = 0.0f64;
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&PatchSample> = chunk.iter().collect();
        let (batch, labels) = batch_tensor(&refs)?;
        let logits = model.forward_eval(&batch)?;
        let (loss, _) = softmax_cross_entropy(&logits, &labels)?;
        total += loss as f64 * chunk.len() as f64;
    }
    Ok((total / samples.len() as f64) as f32)
}

/// Positive-class probability for each sample.
pub fn predict_positive_probs(
    model: &Model,
    samples: &[PatchSample],
    batch_size: usize,
) -> Result<Vec<f32>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&PatchSample> = chunk.iter().collect();
        let (batch, _) = batch_tensor(&refs)?;
        let logits = model.forward_eval(&batch)?;
        let probs = softmax_probs(&logits)?;
        let k = probs.shape()[1];
        for row in probs.data().chunks(k) {
            out.push(row[1]);
        }
    }
    Ok(out)
}

const AUGMENT_STREAM_TAG: u64 = 4;

/// Train with shuffled mini-batches, optional augmentation, and
/// validation-based early stopping; the best-validation parameters are
/// restored before returning.
pub fn train(
    model: &mut Model,
    train_set: &[PatchSample],
    val_set: &[PatchSample],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    if train_set.is_empty() {
        return Err(CoreError::EmptyDataset("training set".into()));
    }
    if val_set.is_empty() {
        return Err(CoreError::EmptyDataset("validation set".into()));
    }
    let mut optimizer = Adam::new(cfg.adam);
    let mut records = Vec::new();
    let mut best_val = f32::INFINITY;
    let mut best_epoch = 0usize;
    let mut best_state = model.snapshot();
    let mut since_best = 0usize;

    for epoch in 1..=cfg.max_epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        shuffle_rng.set_stream(0xE70C ^ epoch as u64);
        for i in (1..order.len()).rev() {
            let j = shuffle_rng.gen_range(0..=i);
            order.swap(i, j);
        }

        let mut epoch_loss = 0.0f64;
        for (step, chunk) in order.chunks(cfg.batch_size.max(1)).enumerate() {
            let samples: Vec<PatchSample> = if cfg.augment {
                chunk
                    .iter()
                    .map(|&i| {
                        let mut rng = sample_rng(
                            cfg.seed,
                            AUGMENT_STREAM_TAG,
                            ((epoch as u64) << 20) | i as u64,
                        );
                        augment(&train_set[i], &mut rng, &cfg.policy)
                    })
                    .collect::<Result<_>>()?
            } else {
                chunk.iter().map(|&i| train_set[i].clone()).collect()
            };
            let refs: Vec<&PatchSample> = samples.iter().collect();
            let (batch, labels) = batch_tensor(&refs)?;
            let logits = model.forward_train(&batch)?;
            let (loss, grad) = softmax_cross_entropy(&logits, &labels)?;
            if !loss.is_finite() {
                return Err(CoreError::NonFiniteLoss { epoch, step });
            }
            model.backward(&grad)?;
            optimizer.step(model)?;
            epoch_loss += loss as f64 * chunk.len() as f64;
        }
        let train_loss = (epoch_loss / train_set.len() as f64) as f32;
        let val_loss = evaluate_loss(model, val_set, cfg.batch_size)?;
        if !val_loss.is_finite() {
            return Err(CoreError::NonFiniteLoss { epoch, step: usize::MAX });
        }
        records.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });

        if val_loss < best_val {
            best_val = val_loss;
            best_epoch = epoch;
            best_state = model.snapshot();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }

    model.restore(&best_state);
    Ok(TrainReport {
        epochs: records,
        best_epoch,
        best_val_loss: best_val,
    })
}

const CHECKPOINT_MAGIC: &str = "octoconv-checkpoint v1";

fn join_usize(values: &[usize]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Serialize a model: a text manifest (config plus named buffer lengths)
/// followed by the raw little-endian f32 buffers in manifest order.
pub fn save_checkpoint(model: &mut Model, path: &Path) -> Result<()> {
    let cfg = &model.config;
    let mut manifest = String::new();
    manifest.push_str(CHECKPOINT_MAGIC);
    manifest.push('\n');
    manifest.push_str(&format!("group: {}\n", cfg.group_name));
    let (c, d, h, w) = cfg.input_shape;
    manifest.push_str(&format!("input_shape: {c} {d} {h} {w}\n"));
    manifest.push_str(&format!("n_classes: {}\n", cfg.n_classes));
    manifest.push_str(&format!("base_widths: {}\n", join_usize(&cfg.base_widths)));
    manifest.push_str(&format!(
        "kernel: {} {} {}\n",
        cfg.kernel.0, cfg.kernel.1, cfg.kernel.2
    ));
    manifest.push_str(&format!("pool_after: {}\n", join_usize(&cfg.pool_after)));
    manifest.push_str(&format!("dropout_after: {}\n", join_usize(&cfg.dropout_after)));
    manifest.push_str(&format!("dropout_p: {}\n", cfg.dropout_p));
    manifest.push_str(&format!("bn_momentum: {}\n", cfg.bn_momentum));

    let mut buffers: Vec<(String, Vec<f32>)> = Vec::new();
    model.visit_state(&mut |name, buf| buffers.push((name.to_string(), buf.to_vec())));
    for (name, buf) in &buffers {
        manifest.push_str(&format!("buffer: {name} {}\n", buf.len()));
    }
    manifest.push_str("data:\n");

    let mut bytes = manifest.into_bytes();
    for (_, buf) in &buffers {
        for v in buf {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, bytes).map_err(|e| CoreError::io(path.display().to_string(), e))
}

fn manifest_err(path: &Path, line: usize, msg: impl Into<String>) -> CoreError {
    CoreError::MalformedRecord {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

/// Rebuild a model from a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let bytes = fs::read(path).map_err(|e| CoreError::io(path.display().to_string(), e))?;
    let data_marker = b"data:\n";
    let split = bytes
        .windows(data_marker.len())
        .position(|w| w == data_marker)
        .ok_or_else(|| manifest_err(path, 0, "missing data marker"))?;
    let manifest = std::str::from_utf8(&bytes[..split])
        .map_err(|_| manifest_err(path, 0, "manifest is not utf-8"))?;
    let raw = &bytes[split + data_marker.len()..];

    let mut lines = manifest.lines().enumerate();
    let (_, magic) = lines
        .next()
        .ok_or_else(|| manifest_err(path, 1, "empty manifest"))?;
    if magic != CHECKPOINT_MAGIC {
        return Err(manifest_err(path, 1, format!("bad magic: {magic}")));
    }

    let mut group_name = None;
    let mut input_shape = None;
    let mut n_classes = None;
    let mut base_widths = None;
    let mut kernel = None;
    let mut pool_after = None;
    let mut dropout_after = None;
    let mut dropout_p = None;
    let mut bn_momentum = None;
    let mut buffer_specs: Vec<(String, usize)> = Vec::new();

    for (lineno, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once(':')
            .ok_or_else(|| manifest_err(path, lineno + 1, "expected key: value"))?;
        let value = value.trim();
        let parse_usizes = |v: &str| -> Result<Vec<usize>> {
            v.split_whitespace()
                .map(|t| t.parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| manifest_err(path, lineno + 1, format!("bad integer list: {e}")))
        };
        match key {
            "group" => group_name = Some(GroupName::parse(value)?),
            "input_shape" => {
                let v = parse_usizes(value)?;
                if v.len() != 4 {
                    return Err(manifest_err(path, lineno + 1, "input_shape needs 4 ints"));
                }
                input_shape = Some((v[0], v[1], v[2], v[3]));
            }
            "n_classes" => {
                n_classes = Some(value.parse::<usize>().map_err(|e| {
                    manifest_err(path, lineno + 1, format!("bad n_classes: {e}"))
                })?)
            }
            "base_widths" => {
                let v = parse_usizes(value)?;
                if v.len() != 6 {
                    return Err(manifest_err(path, lineno + 1, "base_widths needs 6 ints"));
                }
                base_widths = Some([v[0], v[1], v[2], v[3], v[4], v[5]]);
            }
            "kernel" => {
                let v = parse_usizes(value)?;
                if v.len() != 3 {
                    return Err(manifest_err(path, lineno + 1, "kernel needs 3 ints"));
                }
                kernel = Some((v[0], v[1], v[2]));
            }
            "pool_after" => pool_after = Some(parse_usizes(value)?),
            "dropout_after" => dropout_after = Some(parse_usizes(value)?),
            "dropout_p" => {
                dropout_p = Some(value.parse::<f32>().map_err(|e| {
                    manifest_err(path, lineno + 1, format!("bad dropout_p: {e}"))
                })?)
            }
            "bn_momentum" => {
                bn_momentum = Some(value.parse::<f32>().map_err(|e| {
                    manifest_err(path, lineno + 1, format!("bad bn_momentum: {e}"))
                })?)
            }
            "buffer" => {
                let mut parts = value.rsplitn(2, ' ');
                let len: usize = parts
                    .next()
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| manifest_err(path, lineno + 1, "bad buffer length"))?;
                let name = parts
                    .next()
                    .ok_or_else(|| manifest_err(path, lineno + 1, "missing buffer name"))?;
                buffer_specs.push((name.to_string(), len));
            }
            other => {
                return Err(manifest_err(path, lineno + 1, format!("unknown key {other}")));
            }
        }
    }

    let config = ModelConfig {
        group_name: group_name.ok_or_else(|| manifest_err(path, 0, "missing group"))?,
        base_widths: base_widths.ok_or_else(|| manifest_err(path, 0, "missing base_widths"))?,
        kernel: kernel.ok_or_else(|| manifest_err(path, 0, "missing kernel"))?,
        pool_after: pool_after.ok_or_else(|| manifest_err(path, 0, "missing pool_after"))?,
        dropout_after: dropout_after.ok_or_else(|| manifest_err(path, 0, "missing dropout_after"))?,
        dropout_p: dropout_p.ok_or_else(|| manifest_err(path, 0, "missing dropout_p"))?,
        input_shape: input_shape.ok_or_else(|| manifest_err(path, 0, "missing input_shape"))?,
        n_classes: n_classes.ok_or_else(|| manifest_err(path, 0, "missing n_classes"))?,
        bn_momentum: bn_momentum.ok_or_else(|| manifest_err(path, 0, "missing bn_momentum"))?,
    };
    let mut model = build_model(&config, 0)?;

    let total: usize = buffer_specs.iter().map(|(_, l)| l).sum();
    if raw.len() != total * 4 {
        return Err(manifest_err(
            path,
            0,
            format!("raw section has {} bytes, manifest needs {}", raw.len(), total * 4),
        ));
    }
    let mut offset = 0usize;
    let mut spec_idx = 0usize;
    let mut fill_err: Option<CoreError> = None;
    model.visit_state(&mut |name, buf| {
        if fill_err.is_some() {
            return;
        }
        if spec_idx >= buffer_specs.len() {
            fill_err = Some(manifest_err(path, 0, "manifest lists too few buffers"));
            return;
        }
        let (spec_name, spec_len) = &buffer_specs[spec_idx];
        if spec_name != name || *spec_len != buf.len() {
            fill_err = Some(manifest_err(
                path,
                0,
                format!(
                    "buffer mismatch: manifest {spec_name}({spec_len}) vs model {name}({})",
                    buf.len()
                ),
            ));
            return;
        }
        for (i, v) in buf.iter_mut().enumerate() {
            let b = &raw[(offset + i) * 4..(offset + i) * 4 + 4];
            *v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
        }
        offset += buf.len();
        spec_idx += 1;
    });
    if let Some(e) = fill_err {
        return Err(e);
    }
    if spec_idx != buffer_specs.len() {
        return Err(manifest_err(path, 0, "manifest lists too many buffers"));
    }
    Ok(model)
}
