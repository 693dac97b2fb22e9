//! Random forest over single-pixel feature vectors: Gini-impurity splits,
//! bootstrap aggregation, and soft-vote probability prediction.
//!
//! Determinism contract: thresholds are midpoints between consecutive
//! distinct sorted values; impurity ties break toward the lower feature
//! index, then the lower threshold; every tree derives its own sub-seed
//! from the forest seed, so tree training parallelizes without changing
//! results.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rayon::prelude::*;
use thiserror::Error;

use crate::rng::{derive_seed, rng_from_seed, SeededRng};
use rand::Rng;

#[derive(Debug, Error)]
pub enum ForestError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("sample {index} has {got} features, expected {expected}")]
    FeatureDim { index: usize, got: usize, expected: usize },
    #[error("label {label} out of range for {n_classes} classes")]
    LabelOutOfRange { label: usize, n_classes: usize },
    #[error("feature vector has {got} features, model expects {expected}")]
    PredictDim { got: usize, expected: usize },
    #[error("model file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

// ── Trees ───────────────────────────────────────────────────────────────

/// Binary decision tree node. Split nodes send `value <= threshold` left;
/// leaves hold empirical class distributions (soft votes).
#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf {
        distribution: Vec<f64>,
    },
}

impl TreeNode {
    /// The leaf distribution reached by one feature vector.
    pub fn decide<'a>(&'a self, features: &[f32]) -> &'a [f64] {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { distribution } => return distribution,
                TreeNode::Split { feature, threshold, left, right } => {
                    node = if f64::from(features[*feature]) <= *threshold {
                        left
                    } else {
                        right
                    };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }
}

/// Gini impurity `1 − Σ (cᵢ/Σc)²`. Panics on all-zero counts.
pub fn gini(counts: &[u64]) -> f64 {
    let total: u64 = counts.iter().sum();
    assert!(total > 0, "gini of all-zero counts is undefined");
    let t = total as f64;
    1.0 - counts
        .iter()
        .map(|&c| {
            let p = c as f64 / t;
            p * p
        })
        .sum::<f64>()
}

/// A candidate split and its impurity decrease.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Split {
    pub feature: usize,
    pub threshold: f64,
    pub decrease: f64,
}

fn class_counts(labels: &[usize], indices: &[usize], n_classes: usize) -> Vec<u64> {
    let mut counts = vec![0u64; n_classes];
    for &i in indices {
        counts[labels[i]] += 1;
    }
    counts
}

/// Exhaustive scan over `candidate_features` and the midpoints between
/// consecutive distinct sorted values; returns the split maximizing the
/// weighted Gini decrease, or `None` when no split strictly improves
/// impurity. Ties break toward (lower feature index, lower threshold).
fn best_split_indexed(
    features: &[Vec<f32>],
    labels: &[usize],
    indices: &[usize],
    candidate_features: &[usize],
    n_classes: usize,
) -> Option<Split> {
    let n = indices.len();
    if n < 2 {
        return None;
    }
    let parent_counts = class_counts(labels, indices, n_classes);
    let parent_gini = gini(&parent_counts);
    if parent_gini == 0.0 {
        return None;
    }
    let mut best: Option<Split> = None;
    let mut sorted: Vec<usize> = Vec::with_capacity(n);
    for &f in candidate_features {
        sorted.clear();
        sorted.extend_from_slice(indices);
        sorted.sort_by(|&a, &b| {
            features[a][f]
                .partial_cmp(&features[b][f])
                .expect("feature values are finite")
        });
        // walk the sorted order once, moving samples left as the
        // threshold passes each distinct-value boundary
        let mut left_counts = vec![0u64; n_classes];
        let mut right_counts = parent_counts.clone();
        let mut moved = 0usize;
        let mut i = 0usize;
        while i < n {
            let v = features[sorted[i]][f];
            // move the whole tie group of value v to the left side
            while i < n && features[sorted[i]][f] == v {
                let c = labels[sorted[i]];
                left_counts[c] += 1;
                right_counts[c] -= 1;
                moved += 1;
                i += 1;
            }
            if i == n {
                break; // no next distinct value: nothing on the right
            }
            let next = features[sorted[i]][f];
            let threshold = (f64::from(v) + f64::from(next)) / 2.0;
            let nl = moved as f64;
            let nr = (n - moved) as f64;
            let decrease = parent_gini
                - (nl * gini(&left_counts) + nr * gini(&right_counts)) / n as f64;
            let better = match &best {
                None => decrease > 0.0,
                Some(b) => decrease > b.decrease,
            };
            if better {
                best = Some(Split { feature: f, threshold, decrease });
            }
        }
    }
    best
}

/// Public wrapper of the split scan over a full dataset.
pub fn best_split(
    features: &[Vec<f32>],
    labels: &[usize],
    candidate_features: &[usize],
    n_classes: usize,
) -> Option<Split> {
    let indices: Vec<usize> = (0..features.len()).collect();
    best_split_indexed(features, labels, &indices, candidate_features, n_classes)
}

/// Tree growth parameters. `features_per_split = None` considers every
/// feature at every node.
#[derive(Debug, Clone)]
pub struct TreeParams {
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub features_per_split: Option<usize>,
    pub seed: u64,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            max_depth: None,
            min_samples_split: 2,
            features_per_split: None,
            seed: 0,
        }
    }
}

fn leaf_from(labels: &[usize], indices: &[usize], n_classes: usize) -> TreeNode {
    let counts = class_counts(labels, indices, n_classes);
    let total: u64 = counts.iter().sum();
    TreeNode::Leaf {
        distribution: counts.iter().map(|&c| c as f64 / total as f64).collect(),
    }
}

/// Draw `k` distinct feature indices, returned in ascending order so the
/// split scan keeps its tie-break contract.
fn sample_features(d: usize, k: usize, rng: &mut SeededRng) -> Vec<usize> {
    if k >= d {
        return (0..d).collect();
    }
    // partial Fisher-Yates over an index pool
    let mut pool: Vec<usize> = (0..d).collect();
    for i in 0..k {
        let j = rng.gen_range(i..d);
        pool.swap(i, j);
    }
    let mut chosen = pool[..k].to_vec();
    chosen.sort_unstable();
    chosen
}

fn grow(
    features: &[Vec<f32>],
    labels: &[usize],
    indices: &[usize],
    n_classes: usize,
    params: &TreeParams,
    depth: usize,
    rng: &mut SeededRng,
) -> TreeNode {
    let stop = indices.len() < params.min_samples_split
        || params.max_depth.is_some_and(|d| depth >= d);
    if stop {
        return leaf_from(labels, indices, n_classes);
    }
    let d = features[0].len();
    let candidates = match params.features_per_split {
        Some(k) => sample_features(d, k, rng),
        None => (0..d).collect(),
    };
    let split = match best_split_indexed(features, labels, indices, &candidates, n_classes) {
        Some(s) => s,
        None => return leaf_from(labels, indices, n_classes),
    };
    let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = indices
        .iter()
        .partition(|&&i| f64::from(features[i][split.feature]) <= split.threshold);
    let left = grow(features, labels, &left_idx, n_classes, params, depth + 1, rng);
    let right = grow(features, labels, &right_idx, n_classes, params, depth + 1, rng);
    TreeNode::Split {
        feature: split.feature,
        threshold: split.threshold,
        left: Box::new(left),
        right: Box::new(right),
    }
}

fn validate_dataset(
    features: &[Vec<f32>],
    labels: &[usize],
    n_classes: usize,
) -> Result<usize, ForestError> {
    if features.is_empty() || labels.len() != features.len() {
        return Err(ForestError::EmptyDataset);
    }
    let d = features[0].len();
    for (i, row) in features.iter().enumerate() {
        if row.len() != d {
            return Err(ForestError::FeatureDim { index: i, got: row.len(), expected: d });
        }
    }
    for &l in labels {
        if l >= n_classes {
            return Err(ForestError::LabelOutOfRange { label: l, n_classes });
        }
    }
    Ok(d)
}

/// Grow one tree over the full dataset (no bootstrap).
pub fn fit_tree(
    features: &[Vec<f32>],
    labels: &[usize],
    n_classes: usize,
    params: &TreeParams,
) -> Result<TreeNode, ForestError> {
    validate_dataset(features, labels, n_classes)?;
    let indices: Vec<usize> = (0..features.len()).collect();
    let mut rng = rng_from_seed(params.seed);
    Ok(grow(features, labels, &indices, n_classes, params, 0, &mut rng))
}

/// Forest configuration; defaults are 100 trees, Gini, unrestricted depth,
/// floor(sqrt(d)) features per split, bootstrap on.
#[derive(Debug, Clone)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// None → floor(sqrt(d)).
    pub features_per_split: Option<usize>,
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    /// Test hook: disable the bootstrap resample to make a 1-tree forest
    /// identical to `fit_tree`.
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            features_per_split: None,
            max_depth: None,
            min_samples_split: 2,
            bootstrap: true,
            seed: 0,
        }
    }
}

/// A trained forest. Immutable and safe for concurrent prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomForestModel {
    trees: Vec<TreeNode>,
    n_classes: usize,
    n_features: usize,
    features_per_split: usize,
    seed: u64,
}

impl RandomForestModel {
    pub fn trees(&self) -> &[TreeNode] {
        &self.trees
    }
    pub fn n_classes(&self) -> usize {
        self.n_classes
    }
    pub fn n_features(&self) -> usize {
        self.n_features
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Mean of the leaf distributions reached in each tree; sums to 1.
    pub fn predict_proba(&self, features: &[f32]) -> Result<Vec<f64>, ForestError> {
        if features.len() != self.n_features {
            return Err(ForestError::PredictDim {
                got: features.len(),
                expected: self.n_features,
            });
        }
        let mut acc = vec![0.0f64; self.n_classes];
        for tree in &self.trees {
            for (a, &p) in acc.iter_mut().zip(tree.decide(features)) {
                *a += p;
            }
        }
        let nt = self.trees.len() as f64;
        for a in &mut acc {
            *a /= nt;
        }
        Ok(acc)
    }
}

/// Train a forest of bootstrapped trees; tree `i` uses sub-seed
/// `derive_seed(seed, i)` for both its resample and its feature sampling.
pub fn fit_forest(
    features: &[Vec<f32>],
    labels: &[usize],
    n_classes: usize,
    config: &ForestConfig,
) -> Result<RandomForestModel, ForestError> {
    let d = validate_dataset(features, labels, n_classes)?;
    if config.n_trees == 0 {
        return Err(ForestError::EmptyDataset);
    }
    let features_per_split = config
        .features_per_split
        .unwrap_or_else(|| (d as f64).sqrt().floor().max(1.0) as usize)
        .min(d);
    let n = features.len();
    let trees: Vec<TreeNode> = (0..config.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng_from_seed(derive_seed(config.seed, t as u64));
            let indices: Vec<usize> = if config.bootstrap {
                (0..n).map(|_| rng.gen_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            let params = TreeParams {
                max_depth: config.max_depth,
                min_samples_split: config.min_samples_split,
                features_per_split: Some(features_per_split),
                seed: 0, // rng carries the per-tree state
            };
            grow(features, labels, &indices, n_classes, &params, 0, &mut rng)
        })
        .collect();
    Ok(RandomForestModel {
        trees,
        n_classes,
        n_features: d,
        features_per_split,
        seed: config.seed,
    })
}

// ── Model file ──────────────────────────────────────────────────────────

pub const FOREST_MAGIC: &[u8; 4] = b"RFOR";
const FOREST_VERSION: u16 = 1;
const TAG_SPLIT: u8 = 0;
const TAG_LEAF: u8 = 1;
/// Upper bound on nodes accepted per tree when decoding.
const MAX_NODES: usize = 1 << 22;

fn fmt_err<T>(msg: impl Into<String>) -> Result<T, ForestError> {
    Err(ForestError::Format(msg.into()))
}

fn write_node<W: Write>(w: &mut W, node: &TreeNode) -> Result<(), ForestError> {
    // explicit stack: model trees can be deeper than the call stack is tall
    let mut stack = vec![node];
    while let Some(n) = stack.pop() {
        match n {
            TreeNode::Split { feature, threshold, left, right } => {
                w.write_u8(TAG_SPLIT)?;
                w.write_u16::<LittleEndian>(
                    u16::try_from(*feature)
                        .map_err(|_| ForestError::Format("feature index exceeds u16".into()))?,
                )?;
                w.write_f64::<LittleEndian>(*threshold)?;
                // preorder: left subtree first
                stack.push(right);
                stack.push(left);
            }
            TreeNode::Leaf { distribution } => {
                w.write_u8(TAG_LEAF)?;
                for &p in distribution {
                    w.write_f32::<LittleEndian>(p as f32)?;
                }
            }
        }
    }
    Ok(())
}

fn read_node<R: Read>(
    r: &mut R,
    n_classes: usize,
    n_features: usize,
) -> Result<TreeNode, ForestError> {
    // iterative preorder decode: a pending stack of hole-filling closures
    // would obscure the invariant, so build with an explicit frame stack
    enum Frame {
        NeedLeft { feature: usize, threshold: f64 },
        NeedRight { feature: usize, threshold: f64, left: TreeNode },
    }
    let mut frames: Vec<Frame> = Vec::new();
    let mut nodes_read = 0usize;
    loop {
        nodes_read += 1;
        if nodes_read > MAX_NODES {
            return fmt_err("tree exceeds maximum node count");
        }
        let tag = r.read_u8()?;
        let mut done: TreeNode = match tag {
            TAG_SPLIT => {
                let feature = r.read_u16::<LittleEndian>()? as usize;
                if feature >= n_features {
                    return fmt_err(format!("split feature {feature} out of range"));
                }
                let threshold = r.read_f64::<LittleEndian>()?;
                if !threshold.is_finite() {
                    return fmt_err("non-finite split threshold");
                }
                frames.push(Frame::NeedLeft { feature, threshold });
                continue;
            }
            TAG_LEAF => {
                let mut distribution = Vec::with_capacity(n_classes);
                let mut sum = 0.0f64;
                for _ in 0..n_classes {
                    let p = f64::from(r.read_f32::<LittleEndian>()?);
                    if !(0.0..=1.0 + 1e-6).contains(&p) {
                        return fmt_err(format!("leaf probability {p} out of range"));
                    }
                    sum += p;
                    distribution.push(p);
                }
                if (sum - 1.0).abs() > 1e-3 {
                    return fmt_err(format!("leaf distribution sums to {sum}"));
                }
                // renormalize away f32 quantization so the sum-to-1
                // invariant holds exactly in f64
                for p in &mut distribution {
                    *p /= sum;
                }
                TreeNode::Leaf { distribution }
            }
            t => return fmt_err(format!("unknown node tag {t}")),
        };
        loop {
            match frames.pop() {
                None => return Ok(done),
                Some(Frame::NeedLeft { feature, threshold }) => {
                    frames.push(Frame::NeedRight { feature, threshold, left: done });
                    break;
                }
                Some(Frame::NeedRight { feature, threshold, left }) => {
                    done = TreeNode::Split {
                        feature,
                        threshold,
                        left: Box::new(left),
                        right: Box::new(done),
                    };
                }
            }
        }
    }
}

pub fn write_forest(path: &Path, model: &RandomForestModel) -> Result<(), ForestError> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(FOREST_MAGIC)?;
    w.write_u16::<LittleEndian>(FOREST_VERSION)?;
    w.write_u16::<LittleEndian>(
        u16::try_from(model.n_classes)
            .map_err(|_| ForestError::Format("too many classes".into()))?,
    )?;
    w.write_u32::<LittleEndian>(
        u32::try_from(model.trees.len())
            .map_err(|_| ForestError::Format("too many trees".into()))?,
    )?;
    w.write_u16::<LittleEndian>(
        u16::try_from(model.n_features)
            .map_err(|_| ForestError::Format("too many features".into()))?,
    )?;
    w.write_u16::<LittleEndian>(
        u16::try_from(model.features_per_split)
            .map_err(|_| ForestError::Format("features_per_split exceeds u16".into()))?,
    )?;
    w.write_u64::<LittleEndian>(model.seed)?;
    for tree in &model.trees {
        write_node(&mut w, tree)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_forest(path: &Path) -> Result<RandomForestModel, ForestError> {
    let file = File::open(path)?;
    let mut r = BufReader::new(file);
    let model = read_forest_from(&mut r)?;
    let mut probe = [0u8; 1];
    if r.read(&mut probe)? != 0 {
        return fmt_err("trailing bytes after last tree");
    }
    Ok(model)
}

/// Decode a forest from any reader. Exposed for fuzzing.
pub fn read_forest_from<R: Read>(r: &mut R) -> Result<RandomForestModel, ForestError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != FOREST_MAGIC {
        return fmt_err(format!("bad magic {magic:02x?}"));
    }
    let version = r.read_u16::<LittleEndian>()?;
    if version != FOREST_VERSION {
        return fmt_err(format!("unsupported version {version}"));
    }
    let n_classes = r.read_u16::<LittleEndian>()? as usize;
    let n_trees = r.read_u32::<LittleEndian>()? as usize;
    let n_features = r.read_u16::<LittleEndian>()? as usize;
    let features_per_split = r.read_u16::<LittleEndian>()? as usize;
    if n_classes == 0 || n_trees == 0 || n_features == 0 {
        return fmt_err("degenerate model header");
    }
    if features_per_split > n_features {
        return fmt_err("features_per_split exceeds feature count");
    }
    let seed = r.read_u64::<LittleEndian>()?;
    let mut trees = Vec::new();
    for _ in 0..n_trees {
        trees.push(read_node(r, n_classes, n_features)?);
    }
    Ok(RandomForestModel { trees, n_classes, n_features, features_per_split, seed })
}
