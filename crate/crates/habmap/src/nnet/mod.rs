//! Center-pixel patch classifier: a small residual convolutional network
//! with a hand-written forward/backward pass, Adam training loop,
//! augmentations, transfer to a new class set, and layer freezing.
//!
//! The network labels only the center pixel of a square patch. Reflect
//! padding plus global average pooling make the forward pass accept any
//! odd patch side ≥ 3, so the training loop can vary the crop size per
//! batch and inference can use a different size than training.

mod augment;
mod io;
mod layers;
mod ops;
mod tensor;

pub use augment::{
    augment, center_crop, gaussian_blur, gaussian_kernel, hflip, sample_crop_size, vflip,
    AugmentSpec, BLUR_SIGMA_RANGE, CROP_MIN, FLIP_PROB,
};
pub use io::{
    network_digest, read_network, read_network_from, write_network, write_network_to,
    NETWORK_MAGIC, NETWORK_VERSION,
};
pub use layers::{
    kaiming_normal, reflect, BatchNorm2d, Conv2d, GlobalAvgPool, Linear, Relu, BN_EPS, BN_MOMENTUM,
};
pub use ops::{
    adam_update, cross_entropy, cross_entropy_grad, softmax, AdamSlot, AdamState, Targets,
    ADAM_BETA1, ADAM_BETA2, ADAM_EPS,
};
pub use tensor::{Element, Param, Tensor};

use crate::metrics;
use crate::raster::Patch;
use crate::rng::{derive_seed, permutation, rng_from_seed};
use thiserror::Error;

/// Input channels of the standard satellite feature stack.
pub const DEFAULT_IN_CHANNELS: usize = 14;
/// Default residual stage widths.
pub const DEFAULT_STAGE_WIDTHS: [usize; 3] = [32, 64, 128];
/// Default training batch size.
pub const DEFAULT_BATCH_SIZE: usize = 128;
/// Default Adam learning rate.
pub const DEFAULT_LEARNING_RATE: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum NnetError {
    #[error("invalid network config: {0}")]
    InvalidConfig(String),
    #[error("input must be (B,C,S,S) with B ≥ 1, got shape {0:?}")]
    BadInputShape(Vec<usize>),
    #[error("input has {got} channels, network expects {expected}")]
    ChannelMismatch { got: usize, expected: usize },
    #[error("spatial size must be square, odd, and at least 3, got {0}x{1}")]
    BadSpatialSize(usize, usize),
    #[error("logits must be (B,K), got shape {0:?}")]
    LogitsShape(Vec<usize>),
    #[error("NaN input to {0}")]
    NanInput(&'static str),
    #[error("batch size mismatch: {logits} logit rows vs {targets} targets")]
    BatchMismatch { logits: usize, targets: usize },
    #[error("target class {class} out of range for {n_classes} classes")]
    ClassOutOfRange { class: usize, n_classes: usize },
    #[error("soft target row {row} has width {got}, expected {expected}")]
    SoftTargetWidth { row: usize, got: usize, expected: usize },
    #[error("soft target row {row} is not a distribution (sum {sum})")]
    SoftTargetNotDistribution { row: usize, sum: f64 },
    #[error("training diverged: non-finite loss at optimizer step {step}")]
    NonFiniteLoss { step: u64 },
    #[error("empty training set")]
    EmptyTrainSet,
    #[error("inconsistent batch: {0}")]
    InconsistentBatch(String),
    #[error("network needs at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("crop size {crop} does not fit patch size {patch} (odd, ≤ patch)")]
    BadCropSize { crop: usize, patch: usize },
    #[error("metrics: {0}")]
    Metrics(#[from] metrics::MetricsError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid network file: {0}")]
    InvalidFile(String),
}

// ── Configuration ───────────────────────────────────────────────────────

/// Architecture hyperparameters. `downsample` selects stride-2 first
/// blocks between stages (the standard setting); all-stride-1 stages keep
/// the spatial size end to end.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkConfig {
    pub in_channels: usize,
    pub stage_widths: Vec<usize>,
    pub blocks_per_stage: usize,
    pub n_classes: usize,
    pub downsample: bool,
}

impl NetworkConfig {
    pub fn new(n_classes: usize) -> Self {
        Self {
            in_channels: DEFAULT_IN_CHANNELS,
            stage_widths: DEFAULT_STAGE_WIDTHS.to_vec(),
            blocks_per_stage: 1,
            n_classes,
            downsample: true,
        }
    }

    pub fn validate(&self) -> Result<(), NnetError> {
        if self.n_classes < 2 {
            return Err(NnetError::TooFewClasses(self.n_classes));
        }
        if self.in_channels == 0 {
            return Err(NnetError::InvalidConfig("in_channels must be ≥ 1".into()));
        }
        if self.stage_widths.is_empty() || self.stage_widths.iter().any(|&w| w == 0) {
            return Err(NnetError::InvalidConfig(
                "stage_widths must be nonempty and positive".into(),
            ));
        }
        if self.blocks_per_stage == 0 {
            return Err(NnetError::InvalidConfig("blocks_per_stage must be ≥ 1".into()));
        }
        Ok(())
    }

    pub fn last_width(&self) -> usize {
        *self.stage_widths.last().expect("validated nonempty")
    }
}

/// Forward-pass mode: train uses batch statistics in normalization layers
/// and keeps backward caches; eval uses running statistics and is pure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

// ── Residual block ──────────────────────────────────────────────────────

/// conv3×3 → norm → relu → conv3×3 → norm, plus a shortcut (identity, or
/// a 1×1 projection when shape changes), then relu.
#[derive(Debug, Clone)]
pub(crate) struct ResBlock<E> {
    pub(crate) conv1: Conv2d<E>,
    pub(crate) bn1: BatchNorm2d<E>,
    relu1: Relu<E>,
    pub(crate) conv2: Conv2d<E>,
    pub(crate) bn2: BatchNorm2d<E>,
    pub(crate) proj: Option<(Conv2d<E>, BatchNorm2d<E>)>,
    relu_out: Relu<E>,
}

impl<E: Element> ResBlock<E> {
    fn new(in_width: usize, out_width: usize, stride: usize, rng: &mut crate::rng::SeededRng) -> Self {
        let proj = (stride != 1 || in_width != out_width).then(|| {
            (
                Conv2d::new(in_width, out_width, 1, stride, rng),
                BatchNorm2d::new(out_width),
            )
        });
        Self {
            conv1: Conv2d::new(in_width, out_width, 3, stride, rng),
            bn1: BatchNorm2d::new(out_width),
            relu1: Relu::new(),
            conv2: Conv2d::new(out_width, out_width, 3, 1, rng),
            bn2: BatchNorm2d::new(out_width),
            proj,
            relu_out: Relu::new(),
        }
    }

    fn forward(&mut self, x: &Tensor<E>, batch_stats: bool, keep_cache: bool) -> Tensor<E> {
        let a = self.conv1.forward(x, keep_cache);
        let a = self.bn1.forward(&a, batch_stats, keep_cache);
        let a = self.relu1.forward(&a, keep_cache);
        let a = self.conv2.forward(&a, keep_cache);
        let mut main = self.bn2.forward(&a, batch_stats, keep_cache);
        let shortcut = match &mut self.proj {
            Some((conv, bn)) => {
                let s = conv.forward(x, keep_cache);
                bn.forward(&s, batch_stats, keep_cache)
            }
            None => x.clone(),
        };
        for (m, s) in main.data_mut().iter_mut().zip(shortcut.data()) {
            *m += *s;
        }
        self.relu_out.forward(&main, keep_cache)
    }

    fn backward(&mut self, grad_out: &Tensor<E>) -> Tensor<E> {
        let g = self.relu_out.backward(grad_out);
        let gm = self.bn2.backward(&g);
        let gm = self.conv2.backward(&gm);
        let gm = self.relu1.backward(&gm);
        let gm = self.bn1.backward(&gm);
        let mut grad_x = self.conv1.backward(&gm);
        let grad_short = match &mut self.proj {
            Some((conv, bn)) => {
                let gs = bn.backward(&g);
                conv.backward(&gs)
            }
            None => g,
        };
        for (a, b) in grad_x.data_mut().iter_mut().zip(grad_short.data()) {
            *a += *b;
        }
        grad_x
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<E>)) {
        f(&mut self.conv1.weight);
        f(&mut self.bn1.gamma);
        f(&mut self.bn1.beta);
        f(&mut self.conv2.weight);
        f(&mut self.bn2.gamma);
        f(&mut self.bn2.beta);
        if let Some((conv, bn)) = &mut self.proj {
            f(&mut conv.weight);
            f(&mut bn.gamma);
            f(&mut bn.beta);
        }
    }

    fn visit_params(&self, f: &mut dyn FnMut(&Param<E>)) {
        f(&self.conv1.weight);
        f(&self.bn1.gamma);
        f(&self.bn1.beta);
        f(&self.conv2.weight);
        f(&self.bn2.gamma);
        f(&self.bn2.beta);
        if let Some((conv, bn)) = &self.proj {
            f(&conv.weight);
            f(&bn.gamma);
            f(&bn.beta);
        }
    }
}

// ── Network ─────────────────────────────────────────────────────────────

/// Residual center-pixel classifier: 3×3 stem, residual stages, global
/// average pooling, linear head.
#[derive(Debug, Clone)]
pub struct Network<E> {
    config: NetworkConfig,
    pub(crate) stem_conv: Conv2d<E>,
    pub(crate) stem_bn: BatchNorm2d<E>,
    stem_relu: Relu<E>,
    pub(crate) stages: Vec<Vec<ResBlock<E>>>,
    pool: GlobalAvgPool,
    pub(crate) head: Linear<E>,
    conv_frozen: bool,
}

impl<E: Element> Network<E> {
    /// Seeded initialization: Kaiming-scaled convolution and head weights,
    /// unit/zero normalization parameters, zero head bias.
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self, NnetError> {
        config.validate()?;
        let mut rng = rng_from_seed(seed);
        let stem_conv = Conv2d::new(config.in_channels, config.stage_widths[0], 3, 1, &mut rng);
        let stem_bn = BatchNorm2d::new(config.stage_widths[0]);
        let mut stages = Vec::with_capacity(config.stage_widths.len());
        let mut in_width = config.stage_widths[0];
        for (s, &width) in config.stage_widths.iter().enumerate() {
            let mut blocks = Vec::with_capacity(config.blocks_per_stage);
            for b in 0..config.blocks_per_stage {
                let stride = if s > 0 && b == 0 && config.downsample { 2 } else { 1 };
                blocks.push(ResBlock::new(in_width, width, stride, &mut rng));
                in_width = width;
            }
            stages.push(blocks);
        }
        let head = Linear::new(config.last_width(), config.n_classes, &mut rng);
        Ok(Self {
            config,
            stem_conv,
            stem_bn,
            stem_relu: Relu::new(),
            stages,
            pool: GlobalAvgPool::new(),
            head,
            conv_frozen: false,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn conv_frozen(&self) -> bool {
        self.conv_frozen
    }

    fn validate_input(&self, batch: &Tensor<E>) -> Result<(), NnetError> {
        let [b, c, h, w] = batch.shape() else {
            return Err(NnetError::BadInputShape(batch.shape().to_vec()));
        };
        if *b == 0 {
            return Err(NnetError::BadInputShape(batch.shape().to_vec()));
        }
        if *c != self.config.in_channels {
            return Err(NnetError::ChannelMismatch { got: *c, expected: self.config.in_channels });
        }
        if h != w || *h < 3 || *h % 2 == 0 {
            return Err(NnetError::BadSpatialSize(*h, *w));
        }
        Ok(())
    }

    /// Run the convolutional stack and pooling, returning (B, last_width)
    /// features. A frozen stack runs its normalization on running
    /// statistics even in train mode.
    pub fn features(&mut self, batch: &Tensor<E>, mode: Mode) -> Result<Tensor<E>, NnetError> {
        self.validate_input(batch)?;
        let stack_train = mode == Mode::Train && !self.conv_frozen;
        let x = self.stem_conv.forward(batch, stack_train);
        let x = self.stem_bn.forward(&x, stack_train, stack_train);
        let mut x = self.stem_relu.forward(&x, stack_train);
        for stage in &mut self.stages {
            for block in stage {
                x = block.forward(&x, stack_train, stack_train);
            }
        }
        Ok(self.pool.forward(&x, stack_train))
    }

    /// Logits for a (B, C, S, S) batch, S odd ≥ 3.
    pub fn forward(&mut self, batch: &Tensor<E>, mode: Mode) -> Result<Tensor<E>, NnetError> {
        let pooled = self.features(batch, mode)?;
        Ok(self.head.forward(&pooled, mode == Mode::Train))
    }

    /// Accumulate parameter gradients from the logit gradient of the last
    /// train-mode forward. Frozen parameters receive no gradient; a fully
    /// frozen stack is skipped outright.
    pub fn backward(&mut self, grad_logits: &Tensor<E>) {
        let g = self.head.backward(grad_logits);
        if self.conv_frozen {
            return;
        }
        let mut g = self.pool.backward(&g);
        for stage in self.stages.iter_mut().rev() {
            for block in stage.iter_mut().rev() {
                g = block.backward(&g);
            }
        }
        let g = self.stem_relu.backward(&g);
        let g = self.stem_bn.backward(&g);
        self.stem_conv.backward(&g);
    }

    /// Visit parameters in declaration order: stem, stages (block order),
    /// head. The order is the serialization and optimizer-slot order.
    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<E>)) {
        self.visit_stack_params_mut(f);
        f(&mut self.head.weight);
        f(&mut self.head.bias);
    }

    pub fn visit_params(&self, f: &mut dyn FnMut(&Param<E>)) {
        f(&self.stem_conv.weight);
        f(&self.stem_bn.gamma);
        f(&self.stem_bn.beta);
        for stage in &self.stages {
            for block in stage {
                block.visit_params(f);
            }
        }
        f(&self.head.weight);
        f(&self.head.bias);
    }

    fn visit_stack_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<E>)) {
        f(&mut self.stem_conv.weight);
        f(&mut self.stem_bn.gamma);
        f(&mut self.stem_bn.beta);
        for stage in &mut self.stages {
            for block in stage {
                block.visit_params_mut(f);
            }
        }
    }

    pub fn zero_grads(&mut self) {
        self.visit_params_mut(&mut |p| p.zero_grad());
    }

    pub fn param_sizes(&self) -> Vec<usize> {
        let mut sizes = Vec::new();
        self.visit_params(&mut |p| sizes.push(p.value.numel()));
        sizes
    }

    pub fn n_params(&self) -> usize {
        self.param_sizes().iter().sum()
    }

    /// Freeze or unfreeze the convolutional stack (everything but the
    /// head). Frozen stacks also normalize with running statistics during
    /// training, so the pre-trained features are used verbatim.
    pub fn set_conv_trainable(&mut self, trainable: bool) {
        self.visit_stack_params_mut(&mut |p| p.trainable = trainable);
        self.conv_frozen = !trainable;
    }

    pub(crate) fn set_conv_frozen_flag(&mut self, frozen: bool) {
        self.conv_frozen = frozen;
    }
}

/// Replace the head with a freshly initialized one sized to
/// `n_new_classes`, copying every other weight and running statistic.
/// `freeze_conv` sets the stack's trainable flags for subsequent training.
pub fn transfer<E: Element>(
    net: &Network<E>,
    n_new_classes: usize,
    freeze_conv: bool,
    seed: u64,
) -> Result<Network<E>, NnetError> {
    if n_new_classes < 2 {
        return Err(NnetError::TooFewClasses(n_new_classes));
    }
    let mut out = net.clone();
    let mut rng = rng_from_seed(seed);
    out.head = Linear::new(out.config.last_width(), n_new_classes, &mut rng);
    out.config.n_classes = n_new_classes;
    out.set_conv_trainable(!freeze_conv);
    Ok(out)
}

// ── Batching ────────────────────────────────────────────────────────────

/// Stack same-shaped patches into a (B, C, S, S) tensor.
pub fn batch_from_patches<E: Element>(patches: &[&Patch]) -> Result<Tensor<E>, NnetError> {
    let first = patches.first().ok_or(NnetError::EmptyTrainSet)?;
    let (c, s) = (first.channels(), first.size());
    let mut data = Vec::with_capacity(patches.len() * c * s * s);
    for p in patches {
        if p.channels() != c || p.size() != s {
            return Err(NnetError::InconsistentBatch(format!(
                "patch {}x{}x{} in a {}x{}x{} batch",
                p.channels(),
                p.size(),
                p.size(),
                c,
                s,
                s
            )));
        }
        data.extend(p.values().iter().map(|&v| E::from_f32(v)));
    }
    Ok(Tensor::new(vec![patches.len(), c, s, s], data))
}

// ── Optimizer ───────────────────────────────────────────────────────────

/// Adam with one slot per parameter tensor, paired by visit order.
#[derive(Debug, Clone)]
pub struct Optimizer {
    state: AdamState,
    pub learning_rate: f64,
}

impl Optimizer {
    pub fn new<E: Element>(net: &Network<E>, learning_rate: f64) -> Self {
        Self { state: AdamState::new(&net.param_sizes()), learning_rate }
    }

    pub fn step_count(&self) -> u64 {
        self.state.step
    }

    /// One optimization step over all trainable parameters using the
    /// gradients currently stored in the network.
    pub fn apply<E: Element>(&mut self, net: &mut Network<E>) -> u64 {
        let step = self.state.begin_step();
        let slots = &mut self.state.slots;
        let lr = self.learning_rate;
        let mut i = 0usize;
        net.visit_params_mut(&mut |p| {
            if p.trainable {
                adam_update(p.value.data_mut(), p.grad.data(), &mut slots[i], step, lr);
            }
            i += 1;
        });
        step
    }
}

/// One training step: zero grads, forward in train mode, cross-entropy,
/// backward, Adam. Returns the batch loss; a non-finite loss aborts.
pub fn train_step<E: Element>(
    net: &mut Network<E>,
    opt: &mut Optimizer,
    batch: &Tensor<E>,
    targets: &Targets<'_, E>,
) -> Result<f64, NnetError> {
    net.zero_grads();
    let logits = net.forward(batch, Mode::Train)?;
    let loss = cross_entropy(&logits, targets)?;
    if !loss.is_finite() {
        return Err(NnetError::NonFiniteLoss { step: opt.step_count() + 1 });
    }
    let grad = cross_entropy_grad(&logits, targets)?;
    net.backward(&grad);
    opt.apply(net);
    Ok(loss)
}

// ── Prediction ──────────────────────────────────────────────────────────

fn validated_center_crop(patch: &Patch, crop_size: usize) -> Result<Patch, NnetError> {
    if crop_size % 2 == 0 || crop_size < CROP_MIN || crop_size > patch.size() {
        return Err(NnetError::BadCropSize { crop: crop_size, patch: patch.size() });
    }
    Ok(center_crop(patch, crop_size))
}

/// Eval-mode softmax probabilities for each patch, center-cropped to
/// `crop_size`, processed in mini-batches.
pub fn predict_proba<E: Element>(
    net: &mut Network<E>,
    patches: &[Patch],
    crop_size: usize,
    batch_size: usize,
) -> Result<Vec<Vec<f64>>, NnetError> {
    let k = net.config.n_classes;
    let mut out = Vec::with_capacity(patches.len());
    for chunk in patches.chunks(batch_size.max(1)) {
        let cropped: Vec<Patch> = chunk
            .iter()
            .map(|p| validated_center_crop(p, crop_size))
            .collect::<Result<_, _>>()?;
        let refs: Vec<&Patch> = cropped.iter().collect();
        let batch = batch_from_patches::<E>(&refs)?;
        let logits = net.forward(&batch, Mode::Eval)?;
        for bi in 0..chunk.len() {
            let row = &logits.data()[bi * k..(bi + 1) * k];
            let probs = softmax(row)?;
            out.push(probs.iter().map(|&v| v.to_f64()).collect());
        }
    }
    Ok(out)
}

/// Argmax class predictions (ties toward the lower index).
pub fn predict_classes<E: Element>(
    net: &mut Network<E>,
    patches: &[Patch],
    crop_size: usize,
    batch_size: usize,
) -> Result<Vec<usize>, NnetError> {
    Ok(predict_proba(net, patches, crop_size, batch_size)?
        .iter()
        .map(|row| metrics::argmax_tie_low(row))
        .collect())
}

// ── Training loop ───────────────────────────────────────────────────────

/// Training hyperparameters. Defaults: batch 128, learning rate 1e-4.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub augment: AugmentSpec,
    pub freeze_conv: bool,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(epochs: usize, augment: AugmentSpec, seed: u64) -> Self {
        Self {
            epochs,
            batch_size: DEFAULT_BATCH_SIZE,
            learning_rate: DEFAULT_LEARNING_RATE,
            augment,
            freeze_conv: false,
            seed,
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_weighted_f1: Option<f64>,
}

/// Weighted-F1 of eval-mode predictions on a labeled patch set.
pub fn weighted_f1<E: Element>(
    net: &mut Network<E>,
    patches: &[Patch],
    labels: &[usize],
    crop_size: usize,
    batch_size: usize,
) -> Result<f64, NnetError> {
    let preds = predict_classes(net, patches, crop_size, batch_size)?;
    let cm = metrics::confusion_matrix(labels, &preds, net.config.n_classes)?;
    Ok(metrics::precision_recall_f1(&cm, metrics::Averaging::Weighted).2)
}

/// Supervised training: seeded shuffled mini-batches, per-batch crop size,
/// per-sample augmentation, Adam updates, per-epoch validation weighted-F1.
///
/// `freeze_conv` trains only the head on frozen pre-trained features. A
/// non-finite loss aborts with [`NnetError::NonFiniteLoss`].
pub fn train<E: Element>(
    net: &mut Network<E>,
    patches: &[Patch],
    labels: &[usize],
    val: Option<(&[Patch], &[usize])>,
    config: &TrainConfig,
) -> Result<Vec<EpochLog>, NnetError> {
    if patches.is_empty() {
        return Err(NnetError::EmptyTrainSet);
    }
    if patches.len() != labels.len() {
        return Err(NnetError::BatchMismatch { logits: patches.len(), targets: labels.len() });
    }
    let k = net.config.n_classes;
    for &l in labels {
        if l >= k {
            return Err(NnetError::ClassOutOfRange { class: l, n_classes: k });
        }
    }
    for p in patches {
        if p.size() < config.augment.crop_max {
            return Err(NnetError::BadCropSize { crop: config.augment.crop_max, patch: p.size() });
        }
    }
    net.set_conv_trainable(!config.freeze_conv);
    let mut opt = Optimizer::new(net, config.learning_rate);
    let mut logs = Vec::with_capacity(config.epochs);
    let val_crop = val
        .map(|(vp, _)| {
            vp.iter()
                .map(|p| p.size())
                .min()
                .unwrap_or(config.augment.crop_max)
                .min(config.augment.crop_max)
        })
        .unwrap_or(config.augment.crop_max);
    for epoch in 0..config.epochs {
        let mut rng = rng_from_seed(derive_seed(config.seed, epoch as u64));
        let order = permutation(patches.len(), &mut rng);
        let mut loss_sum = 0.0f64;
        let mut n_batches = 0usize;
        for chunk in order.chunks(config.batch_size.max(1)) {
            let crop = sample_crop_size(&config.augment, &mut rng);
            let augmented: Vec<Patch> = chunk
                .iter()
                .map(|&i| augment(&patches[i], &config.augment, crop, &mut rng))
                .collect();
            let refs: Vec<&Patch> = augmented.iter().collect();
            let batch = batch_from_patches::<E>(&refs)?;
            let targets: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            loss_sum += train_step(net, &mut opt, &batch, &Targets::Hard(&targets))?;
            n_batches += 1;
        }
        let val_weighted_f1 = match val {
            Some((vp, vl)) => Some(weighted_f1(net, vp, vl, val_crop, config.batch_size)?),
            None => None,
        };
        logs.push(EpochLog {
            epoch,
            train_loss: loss_sum / n_batches as f64,
            val_weighted_f1,
        });
    }
    Ok(logs)
}
