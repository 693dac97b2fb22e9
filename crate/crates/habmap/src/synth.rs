//! Seeded synthetic benchmark data: a multi-channel raster tiled with
//! textured class regions plus long-tailed point annotations.
//!
//! Classes 0 and 1 are a *context pair*: both mix the same two value
//! levels fifty-fifty, so their per-pixel distributions are identical and
//! only the spatial grain separates them — class 0 flips a coin per
//! pixel, class 1 per block. A per-pixel classifier is at chance on the
//! pair; a neighborhood classifier is not. Classes ≥ 2 sit at distinct
//! constant levels and are separable from single pixels.

use rand::Rng;
use thiserror::Error;

use crate::dataset::{AnnotationPoint, Taxonomy};
use crate::raster::{GeoTransform, RasterError, RasterStack};
use crate::rng::{derive_seed, permutation, rng_from_seed};

/// Class index of the fine-grained context texture.
pub const CONTEXT_FINE_CLASS: usize = 0;
/// Class index of the coarse-grained context texture.
pub const CONTEXT_COARSE_CLASS: usize = 1;
/// Default largest:smallest annotation-count ratio.
pub const DEFAULT_IMBALANCE_RATIO: f64 = 472.0;

const LEVEL_LOW: f32 = -1.0;
const LEVEL_HIGH: f32 = 1.0;
/// Pixel level of separable class k (≥ 2): SEPARABLE_BASE + spacing·(k−2).
const SEPARABLE_BASE: f32 = 3.0;
const SEPARABLE_SPACING: f32 = 1.5;
/// Per-channel additive offset so channels carry distinct values.
const CHANNEL_OFFSET: f32 = 0.2;

const CELL_STREAM: u64 = 0;
const BLOCK_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;
const POINT_STREAM_BASE: u64 = 16;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("raster of {cells} cells cannot host {classes} classes")]
    TooManyClasses { cells: usize, classes: usize },
    #[error("need at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("cell side {cell} cannot fit a point margin of {margin}")]
    MarginTooLarge { cell: usize, margin: usize },
    #[error("class {class} has {candidates} candidate pixels but needs {requested} points")]
    NotEnoughPixels { class: usize, candidates: usize, requested: usize },
    #[error("{0} must be nonzero")]
    ZeroParameter(&'static str),
    #[error("imbalance ratio must be ≥ 1, got {0}")]
    BadRatio(f64),
    #[error(transparent)]
    Raster(#[from] RasterError),
}

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Total classes; the first two are the context pair.
    pub n_classes: usize,
    /// Side of the square single-class regions the raster is tiled with.
    pub cell: usize,
    /// Block side of the coarse context texture.
    pub coarse_grain: usize,
    /// Half-range of the uniform per-sample noise.
    pub noise: f32,
    /// Approximate total annotation count before the 1-per-class floor.
    pub n_points: usize,
    /// Largest:smallest class count ratio of the annotation long tail.
    pub imbalance_ratio: f64,
    /// Points keep this pixel distance from their cell's border, so a
    /// patch of side ≤ 2·margin+1 stays inside one class region.
    pub point_margin: usize,
    pub seed: u64,
}

impl SynthConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            height: 128,
            width: 128,
            channels: 4,
            n_classes: 6,
            cell: 16,
            coarse_grain: 4,
            noise: 0.15,
            n_points: 240,
            imbalance_ratio: DEFAULT_IMBALANCE_RATIO,
            point_margin: 4,
            seed,
        }
    }

    fn validate(&self) -> Result<(), SynthError> {
        for (value, name) in [
            (self.height, "height"),
            (self.width, "width"),
            (self.channels, "channels"),
            (self.cell, "cell"),
            (self.coarse_grain, "coarse_grain"),
        ] {
            if value == 0 {
                return Err(SynthError::ZeroParameter(name));
            }
        }
        if self.n_classes < 2 {
            return Err(SynthError::TooFewClasses(self.n_classes));
        }
        let cells = self.height.div_ceil(self.cell) * self.width.div_ceil(self.cell);
        if cells < self.n_classes {
            return Err(SynthError::TooManyClasses { cells, classes: self.n_classes });
        }
        if 2 * self.point_margin >= self.cell {
            return Err(SynthError::MarginTooLarge { cell: self.cell, margin: self.point_margin });
        }
        if !(self.imbalance_ratio >= 1.0) {
            return Err(SynthError::BadRatio(self.imbalance_ratio));
        }
        Ok(())
    }
}

/// A generated benchmark: the raster (raw, not standardized), the exact
/// per-pixel class image behind it, the sampled annotations, and the
/// class taxonomy (`s00`, `s01`, …).
#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub raster: RasterStack,
    pub truth: Vec<usize>,
    pub points: Vec<AnnotationPoint>,
    pub taxonomy: Taxonomy,
}

impl SynthDataset {
    pub fn truth_at(&self, row: usize, col: usize) -> usize {
        self.truth[row * self.raster.width() + col]
    }
}

/// Per-class annotation counts decaying geometrically from the largest
/// class to `largest/ratio`, scaled to roughly `total` points with a
/// floor of one point per class.
pub fn long_tail_counts(n_classes: usize, total: usize, ratio: f64) -> Vec<usize> {
    if n_classes == 0 {
        return Vec::new();
    }
    if n_classes == 1 {
        return vec![total.max(1)];
    }
    let weights: Vec<f64> = (0..n_classes)
        .map(|i| ratio.powf(-(i as f64) / (n_classes as f64 - 1.0)))
        .collect();
    let sum: f64 = weights.iter().sum();
    weights
        .iter()
        .map(|w| ((total as f64 * w / sum).round() as usize).max(1))
        .collect()
}

/// Two-sample Kolmogorov–Smirnov distance: the maximum gap between the
/// empirical CDFs.
pub fn ks_distance(a: &[f32], b: &[f32]) -> f64 {
    assert!(!a.is_empty() && !b.is_empty(), "KS distance needs samples");
    let mut a: Vec<f32> = a.to_vec();
    let mut b: Vec<f32> = b.to_vec();
    a.sort_by(f32::total_cmp);
    b.sort_by(f32::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut max_gap = 0.0f64;
    while i < a.len() && j < b.len() {
        let value = a[i].min(b[j]);
        while i < a.len() && a[i] <= value {
            i += 1;
        }
        while j < b.len() && b[j] <= value {
            j += 1;
        }
        max_gap = max_gap.max((i as f64 / na - j as f64 / nb).abs());
    }
    max_gap
}

/// Render annotations in the `id,x,y,class_code` CSV format the
/// annotation loader reads back.
pub fn annotations_csv(points: &[AnnotationPoint]) -> String {
    let mut out = String::from("id,x,y,class_code\n");
    for p in points {
        out.push_str(&format!("{},{},{},{}\n", p.id, p.x, p.y, p.class_code));
    }
    out
}

/// Generate the benchmark raster, truth image, and annotations. Fully
/// determined by the config (including its seed).
pub fn generate(config: &SynthConfig) -> Result<SynthDataset, SynthError> {
    config.validate()?;
    let (h, w, ch, k) = (config.height, config.width, config.channels, config.n_classes);
    let cells_y = h.div_ceil(config.cell);
    let cells_x = w.div_ceil(config.cell);
    let n_cells = cells_y * cells_x;

    // assign classes to cells: balanced round-robin, then shuffled
    let mut cell_rng = rng_from_seed(derive_seed(config.seed, CELL_STREAM));
    let order = permutation(n_cells, &mut cell_rng);
    let mut cell_class = vec![0usize; n_cells];
    for (rank, &cell) in order.iter().enumerate() {
        cell_class[cell] = rank % k;
    }

    // one coin per coarse block of the global block grid
    let blocks_x = w.div_ceil(config.coarse_grain);
    let blocks_y = h.div_ceil(config.coarse_grain);
    let mut block_rng = rng_from_seed(derive_seed(config.seed, BLOCK_STREAM));
    let block_high: Vec<bool> = (0..blocks_y * blocks_x).map(|_| block_rng.gen_bool(0.5)).collect();

    let mut noise_rng = rng_from_seed(derive_seed(config.seed, NOISE_STREAM));
    let mut truth = vec![0usize; h * w];
    // build sample-major (row, col, channel), then transpose into the
    // raster's channel-major layout
    let mut data = vec![0.0f32; ch * h * w];
    for row in 0..h {
        for col in 0..w {
            let cell = (row / config.cell) * cells_x + (col / config.cell);
            let class = cell_class[cell];
            truth[row * w + col] = class;
            let base = match class {
                CONTEXT_FINE_CLASS => {
                    if noise_rng.gen_bool(0.5) {
                        LEVEL_HIGH
                    } else {
                        LEVEL_LOW
                    }
                }
                CONTEXT_COARSE_CLASS => {
                    let block = (row / config.coarse_grain) * blocks_x + col / config.coarse_grain;
                    if block_high[block] {
                        LEVEL_HIGH
                    } else {
                        LEVEL_LOW
                    }
                }
                _ => SEPARABLE_BASE + SEPARABLE_SPACING * (class - 2) as f32,
            };
            for c in 0..ch {
                let noise = if config.noise > 0.0 {
                    noise_rng.gen_range(-config.noise..config.noise)
                } else {
                    0.0
                };
                data[(c * h + row) * w + col] = base + CHANNEL_OFFSET * c as f32 + noise;
            }
        }
    }

    let names = (0..ch).map(|c| format!("ch{c:02}")).collect();
    let raster = RasterStack::new(ch, h, w, data, GeoTransform::unit(), -9999.0, names)?;

    let taxonomy = Taxonomy::new("synthetic", (0..k).map(|i| format!("s{i:02}")).collect())
        .expect("generated codes are unique");

    // candidate pixels per class: cell interiors of complete cells only,
    // inset by the point margin
    let mut candidates: Vec<Vec<(usize, usize)>> = vec![Vec::new(); k];
    for cy in 0..cells_y {
        for cx in 0..cells_x {
            let (y0, x0) = (cy * config.cell, cx * config.cell);
            if y0 + config.cell > h || x0 + config.cell > w {
                continue;
            }
            let class = cell_class[cy * cells_x + cx];
            for row in y0 + config.point_margin..y0 + config.cell - config.point_margin {
                for col in x0 + config.point_margin..x0 + config.cell - config.point_margin {
                    candidates[class].push((row, col));
                }
            }
        }
    }

    let counts = long_tail_counts(k, config.n_points, config.imbalance_ratio);
    let mut points = Vec::new();
    for (class, &count) in counts.iter().enumerate() {
        let pool = &candidates[class];
        if pool.len() < count {
            return Err(SynthError::NotEnoughPixels {
                class,
                candidates: pool.len(),
                requested: count,
            });
        }
        let mut point_rng = rng_from_seed(derive_seed(config.seed, POINT_STREAM_BASE + class as u64));
        let order = permutation(pool.len(), &mut point_rng);
        for &pick in order.iter().take(count) {
            let (row, col) = pool[pick];
            let (x, y) = raster.geotransform().pixel_center_to_world(row as i64, col as i64);
            points.push(AnnotationPoint {
                id: format!("pt_{:05}", points.len()),
                x,
                y,
                class_code: taxonomy.code(class).to_string(),
            });
        }
    }

    Ok(SynthDataset { raster, truth, points, taxonomy })
}
