//! Test-time augmentation, forest+network ensembling, and full-raster map
//! production (class map, per-class probability rasters, max-confidence).

use rayon::prelude::*;
use thiserror::Error;

use crate::forest::{ForestError, RandomForestModel};
use crate::metrics::argmax_tie_low;
use crate::nnet::{augment, reflect, softmax, AugmentSpec, Mode, Network, NnetError};
use crate::raster::{GeoTransform, Patch, RasterError, RasterStack};
use crate::nnet::batch_from_patches;
use crate::rng::{derive_seed, rng_from_seed};

/// Class-map value for pixels whose center is nodata.
pub const UNCLASSIFIED: f32 = 255.0;
/// Largest class count representable next to the sentinel.
pub const MAX_MAP_CLASSES: usize = 255;
/// Default ensemble weight on the forest.
pub const DEFAULT_ALPHA: f64 = 0.5;
/// Default test-time augmentation rounds.
pub const DEFAULT_TTA_ROUNDS: usize = 5;

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error("no model configured")]
    NoModel,
    #[error("class-count mismatch: forest has {forest}, network has {network}")]
    ClassCountMismatch { forest: usize, network: usize },
    #[error("ensemble weight must be in [0, 1], got {0}")]
    BadAlpha(f64),
    #[error("test-time augmentation needs at least 1 round")]
    BadRounds,
    #[error("stride must be ≥ 1")]
    BadStride,
    #[error("class map supports at most {MAX_MAP_CLASSES} classes, got {0}")]
    TooManyClasses(usize),
    #[error("raster must be standardized before map production")]
    NotStandardized,
    #[error("class index {index} out of range for {n_classes} classes")]
    ClassOutOfRange { index: usize, n_classes: usize },
    #[error("invalid class index file: {0}")]
    InvalidIndexFile(String),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Forest(#[from] ForestError),
    #[error(transparent)]
    Network(#[from] NnetError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

// ── Test-time augmentation ──────────────────────────────────────────────

/// Which augmentations test-time inference draws from. Cropping is
/// excluded: it would change the receptive field between rounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TtaOps {
    pub hflip: bool,
    pub vflip: bool,
    pub blur: bool,
}

impl Default for TtaOps {
    fn default() -> Self {
        Self { hflip: true, vflip: true, blur: true }
    }
}

impl TtaOps {
    pub fn none() -> Self {
        Self { hflip: false, vflip: false, blur: false }
    }

    fn spec(&self, patch_size: usize) -> AugmentSpec {
        AugmentSpec {
            hflip: self.hflip,
            vflip: self.vflip,
            blur: self.blur,
            crop_random: false,
            crop_max: patch_size,
        }
    }
}

/// Mean of the softmax outputs over `rounds` independently augmented
/// copies of the patch, evaluated in eval mode.
pub fn tta_predict(
    net: &mut Network<f32>,
    patch: &Patch,
    rounds: usize,
    ops: &TtaOps,
    seed: u64,
) -> Result<Vec<f64>, InferenceError> {
    if rounds == 0 {
        return Err(InferenceError::BadRounds);
    }
    let spec = ops.spec(patch.size());
    let mut rng = rng_from_seed(seed);
    let k = net.config().n_classes;
    let mut mean = vec![0.0f64; k];
    for _ in 0..rounds {
        let view = augment(patch, &spec, patch.size(), &mut rng);
        let batch = batch_from_patches::<f32>(&[&view])?;
        let logits = net.forward(&batch, Mode::Eval)?;
        let probs = softmax(logits.data())?;
        for (m, p) in mean.iter_mut().zip(&probs) {
            *m += f64::from(*p);
        }
    }
    for m in &mut mean {
        *m /= rounds as f64;
    }
    Ok(mean)
}

// ── Ensemble ────────────────────────────────────────────────────────────

/// Ensemble weights and test-time augmentation settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnsembleConfig {
    /// Weight on the forest; the network gets 1 − alpha.
    pub alpha: f64,
    pub tta_rounds: usize,
    pub tta: TtaOps,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self { alpha: DEFAULT_ALPHA, tta_rounds: DEFAULT_TTA_ROUNDS, tta: TtaOps::default() }
    }
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<(), InferenceError> {
        if !(0.0..=1.0).contains(&self.alpha) || self.alpha.is_nan() {
            return Err(InferenceError::BadAlpha(self.alpha));
        }
        if self.tta_rounds == 0 {
            return Err(InferenceError::BadRounds);
        }
        Ok(())
    }
}

/// Elementwise convex combination α·y_forest + (1−α)·y_network.
pub fn combine(alpha: f64, y_forest: &[f64], y_network: &[f64]) -> Vec<f64> {
    y_forest
        .iter()
        .zip(y_network)
        .map(|(&a, &b)| alpha * a + (1.0 - alpha) * b)
        .collect()
}

/// Forest prediction on the pixel features combined with the
/// test-time-augmented network prediction on the patch.
pub fn ensemble_predict(
    forest: &RandomForestModel,
    net: &mut Network<f32>,
    pixel_features: &[f32],
    patch: &Patch,
    config: &EnsembleConfig,
    seed: u64,
) -> Result<Vec<f64>, InferenceError> {
    config.validate()?;
    if forest.n_classes() != net.config().n_classes {
        return Err(InferenceError::ClassCountMismatch {
            forest: forest.n_classes(),
            network: net.config().n_classes,
        });
    }
    let y_forest = forest.predict_proba(pixel_features)?;
    let y_network = tta_predict(net, patch, config.tta_rounds, &config.tta, seed)?;
    Ok(combine(config.alpha, &y_forest, &y_network))
}

// ── Map production ──────────────────────────────────────────────────────

/// Models driving map production: at least one of forest/network. With
/// both present the ensemble combination is used.
pub struct MapModels<'a> {
    pub forest: Option<&'a RandomForestModel>,
    pub network: Option<&'a Network<f32>>,
    pub ensemble: EnsembleConfig,
}

impl MapModels<'_> {
    fn n_classes(&self) -> Result<usize, InferenceError> {
        match (self.forest, self.network) {
            (Some(f), Some(n)) => {
                if f.n_classes() != n.config().n_classes {
                    return Err(InferenceError::ClassCountMismatch {
                        forest: f.n_classes(),
                        network: n.config().n_classes,
                    });
                }
                Ok(f.n_classes())
            }
            (Some(f), None) => Ok(f.n_classes()),
            (None, Some(n)) => Ok(n.config().n_classes),
            (None, None) => Err(InferenceError::NoModel),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MapConfig {
    /// Side of the square patch fed to the network (odd).
    pub patch_size: usize,
    /// Output pixel spacing; 1 classifies every pixel.
    pub stride: usize,
    /// Output tile side for parallel production.
    pub tile_size: usize,
    pub seed: u64,
}

impl MapConfig {
    pub fn new(patch_size: usize, seed: u64) -> Self {
        Self { patch_size, stride: 1, tile_size: 64, seed }
    }
}

/// Class map, per-class probability rasters, and max-confidence raster on
/// a shared grid.
#[derive(Debug, Clone)]
pub struct ClassificationMaps {
    pub class_map: RasterStack,
    pub probabilities: RasterStack,
    pub max_confidence: RasterStack,
}

/// Extract a reflect-padded patch centered at (row, col): border taps
/// mirror back into the raster, nodata samples become 0 (the standardized
/// mean).
fn extract_patch_reflect(raster: &RasterStack, row: usize, col: usize, size: usize) -> Patch {
    let (c_count, h, w) = (raster.channels(), raster.height(), raster.width());
    let half = (size as i64 - 1) / 2;
    let mut values = vec![0.0f32; c_count * size * size];
    for c in 0..c_count {
        for dy in 0..size {
            let ry = reflect(row as i64 + dy as i64 - half, h);
            for dx in 0..size {
                let rx = reflect(col as i64 + dx as i64 - half, w);
                if !raster.pixel_is_nodata(ry, rx) {
                    values[(c * size + dy) * size + dx] = raster.value(c, ry, rx);
                }
            }
        }
    }
    Patch::new(c_count, size, values, 0.0).expect("reflect patch dimensions are valid")
}

fn predict_pixel(
    models: &MapModels<'_>,
    net: &mut Option<Network<f32>>,
    raster: &RasterStack,
    row: usize,
    col: usize,
    config: &MapConfig,
    pixel_seed: u64,
) -> Result<Vec<f64>, InferenceError> {
    match (models.forest, net) {
        (Some(forest), Some(net)) => {
            let features = raster.pixel_features(row, col);
            let patch = extract_patch_reflect(raster, row, col, config.patch_size);
            let y_f = forest.predict_proba(&features)?;
            let y_n = tta_predict(
                net,
                &patch,
                models.ensemble.tta_rounds,
                &models.ensemble.tta,
                pixel_seed,
            )?;
            Ok(combine(models.ensemble.alpha, &y_f, &y_n))
        }
        (Some(forest), None) => Ok(forest.predict_proba(&raster.pixel_features(row, col))?),
        (None, Some(net)) => {
            let patch = extract_patch_reflect(raster, row, col, config.patch_size);
            tta_predict(net, &patch, models.ensemble.tta_rounds, &models.ensemble.tta, pixel_seed)
        }
        (None, None) => Err(InferenceError::NoModel),
    }
}

/// Classify every `stride`-th pixel of a standardized raster. Borders are
/// reflect-padded; pixels whose center is nodata are marked
/// [`UNCLASSIFIED`] in the class map and nodata elsewhere. Production is
/// tile-parallel with per-pixel augmentation seeds, so the tiling never
/// affects the output bytes.
pub fn classify_map(
    models: &MapModels<'_>,
    raster: &RasterStack,
    config: &MapConfig,
) -> Result<ClassificationMaps, InferenceError> {
    let k = models.n_classes()?;
    models.ensemble.validate()?;
    if k > MAX_MAP_CLASSES {
        return Err(InferenceError::TooManyClasses(k));
    }
    if !raster.is_standardized() {
        return Err(InferenceError::NotStandardized);
    }
    if config.stride == 0 {
        return Err(InferenceError::BadStride);
    }
    if config.patch_size % 2 == 0 || config.patch_size < 3 {
        return Err(InferenceError::Raster(RasterError::BadPatchSize {
            size: config.patch_size,
        }));
    }
    if let Some(net) = models.network {
        if net.config().in_channels != raster.channels() {
            return Err(InferenceError::Network(NnetError::ChannelMismatch {
                got: raster.channels(),
                expected: net.config().in_channels,
            }));
        }
    }

    let stride = config.stride;
    let out_h = raster.height().div_ceil(stride);
    let out_w = raster.width().div_ceil(stride);
    let tile = config.tile_size.max(1);
    let tiles_y = out_h.div_ceil(tile);
    let tiles_x = out_w.div_ceil(tile);

    struct TileResult {
        y0: usize,
        x0: usize,
        h: usize,
        w: usize,
        class: Vec<f32>,
        probs: Vec<f32>, // (k, h, w) channel-major within the tile
        conf: Vec<f32>,
    }

    let nodata = raster.nodata();
    let results: Vec<TileResult> = (0..tiles_y * tiles_x)
        .into_par_iter()
        .map(|t| -> Result<TileResult, InferenceError> {
            let (ty, tx) = (t / tiles_x, t % tiles_x);
            let y0 = ty * tile;
            let x0 = tx * tile;
            let h = tile.min(out_h - y0);
            let w = tile.min(out_w - x0);
            let mut net = models.network.cloned();
            let mut class = vec![UNCLASSIFIED; h * w];
            let mut probs = vec![nodata; k * h * w];
            let mut conf = vec![nodata; h * w];
            for oy in 0..h {
                for ox in 0..w {
                    let (row, col) = ((y0 + oy) * stride, (x0 + ox) * stride);
                    if raster.pixel_is_nodata(row, col) {
                        continue;
                    }
                    let pixel_index = ((y0 + oy) * out_w + (x0 + ox)) as u64;
                    let pixel_seed = derive_seed(config.seed, pixel_index);
                    let y = predict_pixel(models, &mut net, raster, row, col, config, pixel_seed)?;
                    let best = argmax_tie_low(&y);
                    class[oy * w + ox] = best as f32;
                    conf[oy * w + ox] = y[best] as f32;
                    for (ci, &p) in y.iter().enumerate() {
                        probs[(ci * h + oy) * w + ox] = p as f32;
                    }
                }
            }
            Ok(TileResult { y0, x0, h, w, class, probs, conf })
        })
        .collect::<Result<_, _>>()?;

    let mut class = vec![UNCLASSIFIED; out_h * out_w];
    let mut probs = vec![nodata; k * out_h * out_w];
    let mut conf = vec![nodata; out_h * out_w];
    for r in &results {
        for oy in 0..r.h {
            for ox in 0..r.w {
                let dst = (r.y0 + oy) * out_w + (r.x0 + ox);
                class[dst] = r.class[oy * r.w + ox];
                conf[dst] = r.conf[oy * r.w + ox];
                for ci in 0..k {
                    probs[ci * out_h * out_w + dst] = r.probs[(ci * r.h + oy) * r.w + ox];
                }
            }
        }
    }

    let src = raster.geotransform();
    let gt = GeoTransform::new(
        src.origin_x,
        src.origin_y,
        src.pixel_size_x * stride as f64,
        src.pixel_size_y * stride as f64,
    )?;
    let prob_names = (0..k).map(|c| format!("class_{c}")).collect();
    Ok(ClassificationMaps {
        class_map: RasterStack::new(1, out_h, out_w, class, gt, nodata, vec!["class".into()])?,
        probabilities: RasterStack::new(k, out_h, out_w, probs, gt, nodata, prob_names)?,
        max_confidence: RasterStack::new(
            1,
            out_h,
            out_w,
            conf,
            gt,
            nodata,
            vec!["max_confidence".into()],
        )?,
    })
}

/// One class's probability raster.
pub fn class_heatmap(
    maps: &ClassificationMaps,
    class_index: usize,
) -> Result<RasterStack, InferenceError> {
    let k = maps.probabilities.channels();
    if class_index >= k {
        return Err(InferenceError::ClassOutOfRange { index: class_index, n_classes: k });
    }
    let (h, w) = (maps.probabilities.height(), maps.probabilities.width());
    let plane = h * w;
    let data = maps.probabilities.data()[class_index * plane..(class_index + 1) * plane].to_vec();
    Ok(RasterStack::new(
        1,
        h,
        w,
        data,
        *maps.probabilities.geotransform(),
        maps.probabilities.nodata(),
        vec![maps.probabilities.channel_names()[class_index].clone()],
    )?)
}

// ── Class-index sidecar ─────────────────────────────────────────────────

/// Render the class index → taxonomy code table stored next to map files.
pub fn format_class_index(codes: &[String]) -> String {
    let mut out = String::new();
    for (i, code) in codes.iter().enumerate() {
        out.push_str(&format!("{i}\t{code}\n"));
    }
    out
}

pub fn write_class_index(
    path: impl AsRef<std::path::Path>,
    codes: &[String],
) -> Result<(), InferenceError> {
    std::fs::write(path, format_class_index(codes))?;
    Ok(())
}

/// Parse a class index sidecar: `<index>\t<code>` lines, indices 0..K in
/// order, codes nonempty without whitespace.
pub fn parse_class_index(text: &str) -> Result<Vec<String>, InferenceError> {
    let mut codes = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let Some((idx, code)) = line.split_once('\t') else {
            return Err(InferenceError::InvalidIndexFile(format!(
                "line {}: expected <index>\\t<code>",
                lineno + 1
            )));
        };
        let parsed: usize = idx.parse().map_err(|_| {
            InferenceError::InvalidIndexFile(format!("line {}: bad index {idx:?}", lineno + 1))
        })?;
        if parsed != codes.len() {
            return Err(InferenceError::InvalidIndexFile(format!(
                "line {}: index {parsed} out of order (expected {})",
                lineno + 1,
                codes.len()
            )));
        }
        if code.is_empty() || code.chars().any(char::is_whitespace) {
            return Err(InferenceError::InvalidIndexFile(format!(
                "line {}: invalid code {code:?}",
                lineno + 1
            )));
        }
        if codes.len() >= MAX_MAP_CLASSES {
            return Err(InferenceError::InvalidIndexFile("too many classes".into()));
        }
        codes.push(code.to_string());
    }
    if codes.is_empty() {
        return Err(InferenceError::InvalidIndexFile("empty index".into()));
    }
    Ok(codes)
}

pub fn read_class_index(path: impl AsRef<std::path::Path>) -> Result<Vec<String>, InferenceError> {
    parse_class_index(&std::fs::read_to_string(path)?)
}
