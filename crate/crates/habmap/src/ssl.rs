//! Self- and semi-supervised training: unsupervised pretraining that
//! maximizes mutual information between a patch and an augmented view of
//! it (invariant information clustering), teacher pseudo-labeling, and
//! Noisy Student distillation on the mixed labeled/pseudo-labeled stream.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use rayon::prelude::*;
use thiserror::Error;

use crate::inference::{tta_predict, InferenceError, TtaOps};
use crate::nnet::{
    augment, batch_from_patches, center_crop, network_digest, sample_crop_size, train, train_step,
    transfer, AugmentSpec, EpochLog, Mode, Network, NnetError, Optimizer, Targets, Tensor,
    TrainConfig, DEFAULT_BATCH_SIZE, DEFAULT_LEARNING_RATE,
};
use crate::raster::Patch;
use crate::rng::{derive_seed, permutation, rng_from_seed};

/// Joint-matrix entries are clamped below at this value before the logs.
pub const JOINT_CLAMP: f64 = 1e-12;
/// Tolerance on probability-row sums.
pub const ROW_SUM_TOLERANCE: f64 = 1e-6;
/// Default cluster count: the coarse-taxonomy class count.
pub const DEFAULT_CLUSTERS: usize = 44;
/// Default clustering pretraining epochs.
pub const DEFAULT_IIC_EPOCHS: usize = 50;

/// Seed stream for the student's fresh initialization; high stream ids
/// never collide with per-epoch streams.
pub const NS_STUDENT_STREAM: u64 = (1 << 32) + 1;
/// Seed stream for teacher pseudo-labeling.
pub const NS_PSEUDO_STREAM: u64 = (1 << 32) + 2;

pub const PSEUDO_LABEL_MAGIC: &[u8; 4] = b"PLBS";
pub const PSEUDO_LABEL_VERSION: u16 = 1;
const MAX_PL_CLASSES: usize = 1024;
const MAX_DIGEST_LEN: usize = 256;

#[derive(Debug, Error)]
pub enum SslError {
    #[error("batch is empty")]
    EmptyBatch,
    #[error("row {row} is not a probability distribution (sum {sum})")]
    NotDistribution { row: usize, sum: f64 },
    #[error("view matrices disagree in shape")]
    ShapeMismatch,
    #[error("clustering needs at least 2 clusters, got {0}")]
    TooFewClusters(usize),
    #[error("network head is sized {head} but the config asks for {clusters} clusters")]
    HeadMismatch { head: usize, clusters: usize },
    #[error("unlabeled corpus is empty")]
    EmptyCorpus,
    #[error("labeled set is empty")]
    EmptyLabeledSet,
    #[error("pseudo-label set and unlabeled corpus sizes differ: {set} vs {corpus}")]
    SetSizeMismatch { set: usize, corpus: usize },
    #[error("invalid pseudo-label file: {0}")]
    InvalidFile(String),
    #[error(transparent)]
    Network(#[from] NnetError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

// ── Mutual-information loss ─────────────────────────────────────────────

fn validate_views(z: &[Vec<f64>], z_prime: &[Vec<f64>]) -> Result<usize, SslError> {
    if z.is_empty() || z_prime.is_empty() {
        return Err(SslError::EmptyBatch);
    }
    if z.len() != z_prime.len() {
        return Err(SslError::ShapeMismatch);
    }
    let c = z[0].len();
    if c < 2 {
        return Err(SslError::TooFewClusters(c));
    }
    for rows in [z, z_prime] {
        for (i, row) in rows.iter().enumerate() {
            if row.len() != c {
                return Err(SslError::ShapeMismatch);
            }
            let sum: f64 = row.iter().sum();
            if !sum.is_finite()
                || (sum - 1.0).abs() > ROW_SUM_TOLERANCE
                || row.iter().any(|&v| v < 0.0 || !v.is_finite())
            {
                return Err(SslError::NotDistribution { row: i, sum });
            }
        }
    }
    Ok(c)
}

/// Symmetrized joint distribution over cluster pairs estimated from a
/// batch of paired soft assignments: P = (1/B)·Σ_b z_b ⊗ z'_b, then
/// (P + Pᵀ)/2. Entries are ≥ 0 and sum to 1.
pub fn iic_joint(z: &[Vec<f64>], z_prime: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, SslError> {
    let c = validate_views(z, z_prime)?;
    let mut p = vec![vec![0.0f64; c]; c];
    for (zb, zpb) in z.iter().zip(z_prime) {
        for (k, &zk) in zb.iter().enumerate() {
            for (l, &zl) in zpb.iter().enumerate() {
                p[k][l] += zk * zl;
            }
        }
    }
    let b = z.len() as f64;
    for row in &mut p {
        for v in row.iter_mut() {
            *v /= b;
        }
    }
    let mut s = vec![vec![0.0f64; c]; c];
    for k in 0..c {
        for l in 0..c {
            s[k][l] = (p[k][l] + p[l][k]) / 2.0;
        }
    }
    Ok(s)
}

struct JointTerms {
    /// Clamped symmetrized joint.
    s: Vec<Vec<f64>>,
    /// Which entries sat below the clamp (zero gradient there).
    clamped: Vec<Vec<bool>>,
    /// Row sums of the clamped joint (== column sums by symmetry).
    marginals: Vec<f64>,
}

fn joint_terms(z: &[Vec<f64>], z_prime: &[Vec<f64>]) -> Result<JointTerms, SslError> {
    let mut s = iic_joint(z, z_prime)?;
    let c = s.len();
    let mut clamped = vec![vec![false; c]; c];
    for (row, crow) in s.iter_mut().zip(&mut clamped) {
        for (v, cl) in row.iter_mut().zip(crow.iter_mut()) {
            if *v < JOINT_CLAMP {
                *v = JOINT_CLAMP;
                *cl = true;
            }
        }
    }
    let marginals: Vec<f64> = s.iter().map(|row| row.iter().sum()).collect();
    Ok(JointTerms { s, clamped, marginals })
}

fn loss_of(terms: &JointTerms) -> f64 {
    let c = terms.s.len();
    let mut loss = 0.0f64;
    for k in 0..c {
        for l in 0..c {
            let s = terms.s[k][l];
            loss -= s * (s.ln() - terms.marginals[k].ln() - terms.marginals[l].ln());
        }
    }
    loss
}

/// Negated mutual information between paired soft cluster assignments.
/// Zero when the estimated joint factorizes; −loss ∈ [0, ln C].
/// Exactly invariant to swapping the two views.
pub fn iic_loss(z: &[Vec<f64>], z_prime: &[Vec<f64>]) -> Result<f64, SslError> {
    Ok(loss_of(&joint_terms(z, z_prime)?))
}

/// Loss plus its gradients with respect to each soft-assignment row of
/// both views (not the logits; chain through softmax separately).
pub fn iic_loss_and_grad(
    z: &[Vec<f64>],
    z_prime: &[Vec<f64>],
) -> Result<(f64, Vec<Vec<f64>>, Vec<Vec<f64>>), SslError> {
    let terms = joint_terms(z, z_prime)?;
    let loss = loss_of(&terms);
    let c = terms.s.len();
    let b = z.len();

    // dL/dS_kl = 1 + ln r_k + ln c_l − ln S_kl for live entries; the
    // clamp zeroes the gradient of entries it replaced. Symmetric, so it
    // also serves as dL/dP.
    let mut g = vec![vec![0.0f64; c]; c];
    for k in 0..c {
        for l in 0..c {
            if !terms.clamped[k][l] {
                g[k][l] =
                    1.0 + terms.marginals[k].ln() + terms.marginals[l].ln() - terms.s[k][l].ln();
            }
        }
    }

    let bf = b as f64;
    let mut grad_z = vec![vec![0.0f64; c]; b];
    let mut grad_zp = vec![vec![0.0f64; c]; b];
    for bi in 0..b {
        for k in 0..c {
            let mut acc = 0.0f64;
            for l in 0..c {
                acc += g[k][l] * z_prime[bi][l];
            }
            grad_z[bi][k] = acc / bf;
        }
        for l in 0..c {
            let mut acc = 0.0f64;
            for k in 0..c {
                acc += g[k][l] * z[bi][k];
            }
            grad_zp[bi][l] = acc / bf;
        }
    }
    Ok((loss, grad_z, grad_zp))
}

// ── Clustering pretraining ──────────────────────────────────────────────

/// Hyperparameters for mutual-information pretraining. The augmentation
/// set defaults to flips and blur with no cropping, so both views keep
/// the patch's full extent.
#[derive(Debug, Clone)]
pub struct IICConfig {
    pub n_clusters: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub augment: AugmentSpec,
}

impl IICConfig {
    pub fn new(n_clusters: usize, patch_size: usize) -> Self {
        Self {
            n_clusters,
            epochs: DEFAULT_IIC_EPOCHS,
            batch_size: DEFAULT_BATCH_SIZE,
            learning_rate: DEFAULT_LEARNING_RATE,
            augment: AugmentSpec {
                hflip: true,
                vflip: true,
                blur: true,
                crop_random: false,
                crop_max: patch_size,
            },
        }
    }
}

fn softmax_rows_f64(logits: &Tensor<f32>, from: usize, to: usize, k: usize) -> Vec<Vec<f64>> {
    (from..to)
        .map(|bi| {
            let row = &logits.data()[bi * k..(bi + 1) * k];
            let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(f64::from(v)));
            let exps: Vec<f64> = row.iter().map(|&v| (f64::from(v) - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            exps.into_iter().map(|e| e / sum).collect()
        })
        .collect()
}

/// Softmax backward: given dL/dz for z = softmax(logits), produce
/// dL/dlogits, row by row.
fn softmax_backward_row(z: &[f64], grad_z: &[f64]) -> Vec<f64> {
    let dot: f64 = grad_z.iter().zip(z).map(|(&g, &p)| g * p).sum();
    z.iter().zip(grad_z).map(|(&p, &g)| p * (g - dot)).collect()
}

/// Unsupervised pretraining: every batch pairs each patch with an
/// independently augmented view, minimizes [`iic_loss`] over one shared
/// forward pass of both towers, and steps Adam. Returns the mean batch
/// loss per epoch; the network is left ready for [`transfer`].
pub fn iic_pretrain(
    net: &mut Network<f32>,
    patches: &[Patch],
    config: &IICConfig,
    seed: u64,
) -> Result<Vec<f64>, SslError> {
    if config.n_clusters < 2 {
        return Err(SslError::TooFewClusters(config.n_clusters));
    }
    let k = net.config().n_classes;
    if k != config.n_clusters {
        return Err(SslError::HeadMismatch { head: k, clusters: config.n_clusters });
    }
    if patches.is_empty() {
        return Err(SslError::EmptyCorpus);
    }
    for p in patches {
        if p.size() < config.augment.crop_max {
            return Err(SslError::Network(NnetError::BadCropSize {
                crop: config.augment.crop_max,
                patch: p.size(),
            }));
        }
    }
    net.set_conv_trainable(true);
    let mut opt = Optimizer::new(net, config.learning_rate);
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut rng = rng_from_seed(derive_seed(seed, epoch as u64));
        let order = permutation(patches.len(), &mut rng);
        let mut loss_sum = 0.0f64;
        let mut n_batches = 0usize;
        for chunk in order.chunks(config.batch_size.max(1)) {
            let crop = sample_crop_size(&config.augment, &mut rng);
            let b = chunk.len();
            // tower 1: the patch itself; tower 2: an augmented view
            let mut views: Vec<Patch> = chunk
                .iter()
                .map(|&i| center_crop(&patches[i], crop))
                .collect();
            views.extend(
                chunk
                    .iter()
                    .map(|&i| augment(&patches[i], &config.augment, crop, &mut rng)),
            );
            let refs: Vec<&Patch> = views.iter().collect();
            let batch = batch_from_patches::<f32>(&refs)?;

            net.zero_grads();
            let logits = net.forward(&batch, Mode::Train)?;
            let z = softmax_rows_f64(&logits, 0, b, k);
            let zp = softmax_rows_f64(&logits, b, 2 * b, k);
            let (loss, grad_z, grad_zp) = iic_loss_and_grad(&z, &zp)?;
            if !loss.is_finite() {
                return Err(SslError::Network(NnetError::NonFiniteLoss {
                    step: opt.step_count() + 1,
                }));
            }
            let mut grad = Tensor::<f32>::zeros(vec![2 * b, k]);
            for bi in 0..b {
                for (j, &g) in softmax_backward_row(&z[bi], &grad_z[bi]).iter().enumerate() {
                    grad.data_mut()[bi * k + j] = g as f32;
                }
                for (j, &g) in softmax_backward_row(&zp[bi], &grad_zp[bi]).iter().enumerate() {
                    grad.data_mut()[(b + bi) * k + j] = g as f32;
                }
            }
            net.backward(&grad);
            opt.apply(net);
            loss_sum += loss;
            n_batches += 1;
        }
        epoch_losses.push(loss_sum / n_batches as f64);
    }
    Ok(epoch_losses)
}

// ── Pseudo-labels ───────────────────────────────────────────────────────

/// Soft teacher predictions for an unlabeled corpus, tagged with the
/// teacher's content digest.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabelSet {
    ids: Vec<String>,
    distributions: Vec<Vec<f32>>,
    n_classes: usize,
    teacher_digest: String,
}

impl PseudoLabelSet {
    pub fn new(
        ids: Vec<String>,
        distributions: Vec<Vec<f32>>,
        n_classes: usize,
        teacher_digest: String,
    ) -> Result<Self, SslError> {
        if ids.len() != distributions.len() {
            return Err(SslError::SetSizeMismatch { set: distributions.len(), corpus: ids.len() });
        }
        for (i, row) in distributions.iter().enumerate() {
            let sum: f64 = row.iter().map(|&v| f64::from(v)).sum();
            if row.len() != n_classes
                || (sum - 1.0).abs() > ROW_SUM_TOLERANCE
                || row.iter().any(|&v| !(v >= 0.0))
            {
                return Err(SslError::NotDistribution { row: i, sum });
            }
        }
        Ok(Self { ids, distributions, n_classes, teacher_digest })
    }

    pub fn len(&self) -> usize {
        self.distributions.len()
    }
    pub fn is_empty(&self) -> bool {
        self.distributions.is_empty()
    }
    pub fn ids(&self) -> &[String] {
        &self.ids
    }
    pub fn distributions(&self) -> &[Vec<f32>] {
        &self.distributions
    }
    pub fn n_classes(&self) -> usize {
        self.n_classes
    }
    pub fn teacher_digest(&self) -> &str {
        &self.teacher_digest
    }

    /// Argmax of each row (ties toward the lower class index).
    pub fn hard_labels(&self) -> Vec<usize> {
        self.distributions
            .iter()
            .map(|row| {
                let as_f64: Vec<f64> = row.iter().map(|&v| f64::from(v)).collect();
                crate::metrics::argmax_tie_low(&as_f64)
            })
            .collect()
    }
}

/// Teacher predictions over an unlabeled corpus: per patch, the mean
/// softmax over `tta_rounds` augmented copies (rounds = 1 with no ops is
/// the plain forward pass). No confidence filtering. Deterministic given
/// (teacher, patches, seed); patches are labeled in parallel.
pub fn pseudo_label(
    teacher: &Network<f32>,
    patches: &[Patch],
    tta_rounds: usize,
    tta: &TtaOps,
    seed: u64,
) -> Result<PseudoLabelSet, SslError> {
    let expected = teacher.config().in_channels;
    for p in patches {
        if p.channels() != expected {
            return Err(SslError::Network(NnetError::ChannelMismatch {
                got: p.channels(),
                expected,
            }));
        }
    }
    let k = teacher.config().n_classes;
    let rows: Vec<Vec<f32>> = patches
        .par_iter()
        .enumerate()
        .map_init(
            || teacher.clone(),
            |net, (i, patch)| -> Result<Vec<f32>, SslError> {
                let row = tta_predict(net, patch, tta_rounds, tta, derive_seed(seed, i as u64))?;
                let sum: f64 = row.iter().sum();
                Ok(row.iter().map(|&v| (v / sum) as f32).collect())
            },
        )
        .collect::<Result<_, _>>()?;
    let ids = patches
        .iter()
        .enumerate()
        .map(|(i, p)| p.source_point.clone().unwrap_or_else(|| format!("patch_{i:06}")))
        .collect();
    PseudoLabelSet::new(ids, rows, k, network_digest(teacher)?)
}

// ── Pseudo-label files ──────────────────────────────────────────────────
//
// Layout (little-endian): magic "PLBS" | version u16 | n_classes u16 |
// count u32 | digest_len u16 | digest UTF-8 | per record: id_len u16 |
// id UTF-8 | f32 × n_classes.

pub fn write_pseudo_labels_to<W: Write>(mut w: W, set: &PseudoLabelSet) -> Result<(), SslError> {
    if set.n_classes > MAX_PL_CLASSES {
        return Err(SslError::InvalidFile(format!(
            "n_classes {} exceeds the format cap {MAX_PL_CLASSES}",
            set.n_classes
        )));
    }
    w.write_all(PSEUDO_LABEL_MAGIC)?;
    w.write_u16::<LE>(PSEUDO_LABEL_VERSION)?;
    w.write_u16::<LE>(set.n_classes as u16)?;
    w.write_u32::<LE>(u32::try_from(set.len()).map_err(|_| {
        SslError::InvalidFile(format!("{} records exceed the format cap", set.len()))
    })?)?;
    let digest = set.teacher_digest.as_bytes();
    if digest.len() > MAX_DIGEST_LEN {
        return Err(SslError::InvalidFile("teacher digest too long".into()));
    }
    w.write_u16::<LE>(digest.len() as u16)?;
    w.write_all(digest)?;
    for (id, row) in set.ids.iter().zip(&set.distributions) {
        let bytes = id.as_bytes();
        let len = u16::try_from(bytes.len())
            .map_err(|_| SslError::InvalidFile(format!("patch id too long: {id:?}")))?;
        w.write_u16::<LE>(len)?;
        w.write_all(bytes)?;
        for &v in row {
            w.write_f32::<LE>(v)?;
        }
    }
    Ok(())
}

pub fn write_pseudo_labels(
    path: impl AsRef<Path>,
    set: &PseudoLabelSet,
) -> Result<(), SslError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_pseudo_labels_to(&mut w, set)?;
    w.flush()?;
    Ok(())
}

fn read_string<R: Read>(r: &mut R, len: usize, what: &str) -> Result<String, SslError> {
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| SslError::InvalidFile(format!("{what} is not UTF-8")))
}

/// Decode a pseudo-label set from a reader. Validates shape caps, UTF-8
/// ids, and that every row is a distribution; allocation is proportional
/// to the bytes actually read.
pub fn read_pseudo_labels_from<R: Read>(mut r: R) -> Result<PseudoLabelSet, SslError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != PSEUDO_LABEL_MAGIC {
        return Err(SslError::InvalidFile("bad magic".into()));
    }
    let version = r.read_u16::<LE>()?;
    if version != PSEUDO_LABEL_VERSION {
        return Err(SslError::InvalidFile(format!("unsupported version {version}")));
    }
    let n_classes = r.read_u16::<LE>()? as usize;
    if n_classes == 0 || n_classes > MAX_PL_CLASSES {
        return Err(SslError::InvalidFile(format!("n_classes {n_classes} out of range")));
    }
    let count = r.read_u32::<LE>()? as usize;
    let digest_len = r.read_u16::<LE>()? as usize;
    if digest_len > MAX_DIGEST_LEN {
        return Err(SslError::InvalidFile("teacher digest too long".into()));
    }
    let digest = read_string(&mut r, digest_len, "teacher digest")?;
    let mut ids = Vec::new();
    let mut rows = Vec::new();
    let mut value_bytes = vec![0u8; n_classes * 4];
    for _ in 0..count {
        let id_len = r.read_u16::<LE>()? as usize;
        ids.push(read_string(&mut r, id_len, "patch id")?);
        r.read_exact(&mut value_bytes)?;
        rows.push(
            value_bytes
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect(),
        );
    }
    PseudoLabelSet::new(ids, rows, n_classes, digest)
}

pub fn read_pseudo_labels(path: impl AsRef<Path>) -> Result<PseudoLabelSet, SslError> {
    let mut r = BufReader::new(File::open(path)?);
    let set = read_pseudo_labels_from(&mut r)?;
    let mut probe = [0u8; 1];
    if r.read(&mut probe)? != 0 {
        return Err(SslError::InvalidFile("trailing bytes after the last record".into()));
    }
    Ok(set)
}

// ── Noisy Student ───────────────────────────────────────────────────────

/// Distillation hyperparameters: the student's training config plus how
/// the teacher labels the unlabeled corpus.
#[derive(Debug, Clone)]
pub struct NoisyStudentConfig {
    pub train: TrainConfig,
    /// Teacher prediction rounds per unlabeled patch (1 = plain forward).
    pub pseudo_tta_rounds: usize,
    pub pseudo_tta: TtaOps,
}

impl NoisyStudentConfig {
    pub fn new(train: TrainConfig) -> Self {
        Self { train, pseudo_tta_rounds: 1, pseudo_tta: TtaOps::none() }
    }
}

/// The student the distillation run starts from: a fresh network of the
/// teacher's architecture, or — when the conv stack is frozen — the
/// teacher's stack with a freshly initialized head.
pub fn init_student(
    teacher: &Network<f32>,
    freeze_conv: bool,
    seed: u64,
) -> Result<Network<f32>, SslError> {
    let init_seed = derive_seed(seed, NS_STUDENT_STREAM);
    if freeze_conv {
        Ok(transfer(teacher, teacher.config().n_classes, true, init_seed)?)
    } else {
        Ok(Network::new(teacher.config().clone(), init_seed)?)
    }
}

/// Noisy Student distillation: the teacher soft-labels the unlabeled
/// corpus, then a fresh student trains on labeled batches (hard targets)
/// and pseudo-labeled batches (soft targets) interleaved 1:1, with both
/// streams passed through the augmentation pipeline as noise. An empty
/// unlabeled corpus degenerates to plain [`train`] on the labeled data.
pub fn noisy_student_train(
    teacher: &Network<f32>,
    labeled: &[Patch],
    labels: &[usize],
    unlabeled: &[Patch],
    config: &NoisyStudentConfig,
) -> Result<(Network<f32>, Vec<EpochLog>), SslError> {
    if labeled.is_empty() {
        return Err(SslError::EmptyLabeledSet);
    }
    let tc = &config.train;
    let mut student = init_student(teacher, tc.freeze_conv, tc.seed)?;
    if unlabeled.is_empty() {
        let logs = train(&mut student, labeled, labels, None, tc)?;
        return Ok((student, logs));
    }
    if labeled.len() != labels.len() {
        return Err(SslError::Network(NnetError::BatchMismatch {
            logits: labeled.len(),
            targets: labels.len(),
        }));
    }
    let k = student.config().n_classes;
    for &l in labels {
        if l >= k {
            return Err(SslError::Network(NnetError::ClassOutOfRange {
                class: l,
                n_classes: k,
            }));
        }
    }
    for p in labeled.iter().chain(unlabeled) {
        if p.size() < tc.augment.crop_max {
            return Err(SslError::Network(NnetError::BadCropSize {
                crop: tc.augment.crop_max,
                patch: p.size(),
            }));
        }
    }

    let pseudo = pseudo_label(
        teacher,
        unlabeled,
        config.pseudo_tta_rounds,
        &config.pseudo_tta,
        derive_seed(tc.seed, NS_PSEUDO_STREAM),
    )?;

    student.set_conv_trainable(!tc.freeze_conv);
    let mut opt = Optimizer::new(&student, tc.learning_rate);
    let batch_size = tc.batch_size.max(1);
    let mut logs = Vec::with_capacity(tc.epochs);
    for epoch in 0..tc.epochs {
        let mut rng = rng_from_seed(derive_seed(tc.seed, epoch as u64));
        let order_l = permutation(labeled.len(), &mut rng);
        let order_u = permutation(unlabeled.len(), &mut rng);
        let chunks_l: Vec<&[usize]> = order_l.chunks(batch_size).collect();
        let chunks_u: Vec<&[usize]> = order_u.chunks(batch_size).collect();
        let mut loss_sum = 0.0f64;
        let mut n_batches = 0usize;
        for i in 0..chunks_l.len().max(chunks_u.len()) {
            if let Some(chunk) = chunks_l.get(i) {
                let crop = sample_crop_size(&tc.augment, &mut rng);
                let views: Vec<Patch> = chunk
                    .iter()
                    .map(|&ix| augment(&labeled[ix], &tc.augment, crop, &mut rng))
                    .collect();
                let refs: Vec<&Patch> = views.iter().collect();
                let batch = batch_from_patches::<f32>(&refs)?;
                let hard: Vec<usize> = chunk.iter().map(|&ix| labels[ix]).collect();
                loss_sum += train_step(&mut student, &mut opt, &batch, &Targets::Hard(&hard))?;
                n_batches += 1;
            }
            if let Some(chunk) = chunks_u.get(i) {
                let crop = sample_crop_size(&tc.augment, &mut rng);
                let views: Vec<Patch> = chunk
                    .iter()
                    .map(|&ix| augment(&unlabeled[ix], &tc.augment, crop, &mut rng))
                    .collect();
                let refs: Vec<&Patch> = views.iter().collect();
                let batch = batch_from_patches::<f32>(&refs)?;
                let soft: Vec<Vec<f32>> = chunk
                    .iter()
                    .map(|&ix| pseudo.distributions()[ix].clone())
                    .collect();
                loss_sum += train_step(&mut student, &mut opt, &batch, &Targets::Soft(&soft))?;
                n_batches += 1;
            }
        }
        logs.push(EpochLog {
            epoch,
            train_loss: loss_sum / n_batches as f64,
            val_weighted_f1: None,
        });
    }
    Ok((student, logs))
}
