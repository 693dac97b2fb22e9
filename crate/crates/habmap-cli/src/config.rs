//! Run configuration: a plain-text `key = value` file, merged with CLI
//! overrides. Every hyperparameter default matches the reference training
//! setup (500 training epochs, 50 pretraining epochs, batch 128, learning
//! rate 1e-4, 49-pixel patches, 19-pixel training crops, 5 TTA rounds,
//! ensemble weight 0.5, 100 trees, 5 folds, 0.2 test fraction).

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::error::CliError;

/// Environment variable naming the default config file path.
pub const ENV_CONFIG: &str = "HABMAP_CONFIG";

/// Pretraining mode; exactly one is in effect.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pretraining {
    None,
    /// Clustering-based unsupervised pretraining on unlabeled patches.
    Unsupervised,
    /// Supervised pretraining on a coarse-labeled annotation set.
    Coarse,
}

impl fmt::Display for Pretraining {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Pretraining::None => "none",
            Pretraining::Unsupervised => "unsupervised",
            Pretraining::Coarse => "coarse",
        };
        f.write_str(s)
    }
}

impl FromStr for Pretraining {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(Pretraining::None),
            "unsupervised" => Ok(Pretraining::Unsupervised),
            "coarse" => Ok(Pretraining::Coarse),
            other => Err(format!(
                "unknown pretraining mode {other:?} (expected none, unsupervised, or coarse)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    // paths
    /// Raster input: a binary container path, or a comma-separated list of
    /// single-channel text matrices stacked in order.
    pub raster: Option<PathBuf>,
    pub annotations: Option<PathBuf>,
    pub output_dir: PathBuf,
    /// Raster for coarse pretraining; defaults to the ingested raster.
    pub pretrain_raster: Option<PathBuf>,
    /// Coarse-labeled annotation CSV (required for coarse pretraining).
    pub pretrain_annotations: Option<PathBuf>,
    /// `natura2000`, `corine`, or `infer` (codes read from the CSV).
    pub taxonomy: String,
    /// Nodata sentinel used when importing text matrices.
    pub nodata: f32,

    // model attributes
    pub pretraining: Pretraining,
    pub freeze_conv: bool,
    pub crop_augment: bool,
    pub semi_supervised: bool,

    // hyperparameters
    pub epochs: usize,
    pub pretrain_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub patch_size: usize,
    pub crop_max: usize,
    pub tta_rounds: usize,
    pub alpha: f64,
    pub n_trees: usize,
    pub k_folds: usize,
    pub test_fraction: f64,
    pub seed: u64,
    pub n_clusters: usize,
    pub unlabeled_count: usize,
    pub pseudo_tta_rounds: usize,
    pub conv_widths: Vec<usize>,
    pub downsample: bool,
    pub map_stride: usize,
    pub map_tile: usize,

    // synthetic benchmark generation
    pub synth_height: usize,
    pub synth_width: usize,
    pub synth_channels: usize,
    pub synth_classes: usize,
    pub synth_cell: usize,
    pub synth_coarse_grain: usize,
    pub synth_noise: f64,
    pub synth_points: usize,
    pub synth_coarse_points: usize,
    pub synth_imbalance: f64,
    pub synth_margin: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            raster: None,
            annotations: None,
            output_dir: PathBuf::from("out"),
            pretrain_raster: None,
            pretrain_annotations: None,
            taxonomy: "infer".into(),
            nodata: -9999.0,
            pretraining: Pretraining::None,
            freeze_conv: false,
            crop_augment: false,
            semi_supervised: false,
            epochs: 500,
            pretrain_epochs: 50,
            batch_size: 128,
            learning_rate: 1e-4,
            patch_size: 49,
            crop_max: 19,
            tta_rounds: 5,
            alpha: 0.5,
            n_trees: 100,
            k_folds: 5,
            test_fraction: 0.2,
            seed: 0,
            n_clusters: 44,
            unlabeled_count: 1000,
            pseudo_tta_rounds: 1,
            conv_widths: vec![16, 32],
            downsample: true,
            map_stride: 1,
            map_tile: 64,
            synth_height: 128,
            synth_width: 128,
            synth_channels: 4,
            synth_classes: 6,
            synth_cell: 16,
            synth_coarse_grain: 4,
            synth_noise: 0.15,
            synth_points: 240,
            synth_coarse_points: 480,
            synth_imbalance: 472.0,
            synth_margin: 4,
        }
    }
}

/// Parse the key-value config text into ordered pairs. Blank lines and
/// full-line `#` comments are skipped; each remaining line must be
/// `key = value` with a nonempty key and value; duplicate keys are
/// rejected. Never panics on arbitrary input.
pub fn parse_run_config(text: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut pairs: Vec<(String, String)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(CliError::data(format!(
                "config line {}: expected `key = value`, got {line:?}",
                i + 1
            )));
        };
        let key = key.trim();
        let value = value.trim();
        if key.is_empty() || key.contains(char::is_whitespace) {
            return Err(CliError::data(format!("config line {}: bad key {key:?}", i + 1)));
        }
        if value.is_empty() {
            return Err(CliError::data(format!("config line {}: empty value for {key:?}", i + 1)));
        }
        if pairs.iter().any(|(k, _)| k == key) {
            return Err(CliError::data(format!("config line {}: duplicate key {key:?}", i + 1)));
        }
        pairs.push((key.to_string(), value.to_string()));
    }
    Ok(pairs)
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T, CliError>
where
    T::Err: fmt::Display,
{
    value
        .parse::<T>()
        .map_err(|e| CliError::usage(format!("config key {key:?}: bad value {value:?} ({e})")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, CliError> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(CliError::usage(format!(
            "config key {key:?}: expected true or false, got {other:?}"
        ))),
    }
}

fn parse_widths(key: &str, value: &str) -> Result<Vec<usize>, CliError> {
    value
        .split(',')
        .map(|tok| parse_value::<usize>(key, tok.trim()))
        .collect()
}

impl RunConfig {
    /// Apply one `key = value` setting.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        match key {
            "raster" => self.raster = Some(PathBuf::from(value)),
            "annotations" => self.annotations = Some(PathBuf::from(value)),
            "output_dir" => self.output_dir = PathBuf::from(value),
            "pretrain_raster" => self.pretrain_raster = Some(PathBuf::from(value)),
            "pretrain_annotations" => self.pretrain_annotations = Some(PathBuf::from(value)),
            "taxonomy" => self.taxonomy = value.to_string(),
            "nodata" => self.nodata = parse_value(key, value)?,
            "pretraining" => {
                self.pretraining = value.parse().map_err(CliError::Usage)?;
            }
            "freeze_conv" => self.freeze_conv = parse_bool(key, value)?,
            "crop_augment" => self.crop_augment = parse_bool(key, value)?,
            "semi_supervised" => self.semi_supervised = parse_bool(key, value)?,
            "epochs" => self.epochs = parse_value(key, value)?,
            "pretrain_epochs" => self.pretrain_epochs = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "learning_rate" => self.learning_rate = parse_value(key, value)?,
            "patch_size" => self.patch_size = parse_value(key, value)?,
            "crop_max" => self.crop_max = parse_value(key, value)?,
            "tta_rounds" => self.tta_rounds = parse_value(key, value)?,
            "alpha" => self.alpha = parse_value(key, value)?,
            "n_trees" => self.n_trees = parse_value(key, value)?,
            "k_folds" => self.k_folds = parse_value(key, value)?,
            "test_fraction" => self.test_fraction = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "n_clusters" => self.n_clusters = parse_value(key, value)?,
            "unlabeled_count" => self.unlabeled_count = parse_value(key, value)?,
            "pseudo_tta_rounds" => self.pseudo_tta_rounds = parse_value(key, value)?,
            "conv_widths" => self.conv_widths = parse_widths(key, value)?,
            "downsample" => self.downsample = parse_bool(key, value)?,
            "map_stride" => self.map_stride = parse_value(key, value)?,
            "map_tile" => self.map_tile = parse_value(key, value)?,
            "synth_height" => self.synth_height = parse_value(key, value)?,
            "synth_width" => self.synth_width = parse_value(key, value)?,
            "synth_channels" => self.synth_channels = parse_value(key, value)?,
            "synth_classes" => self.synth_classes = parse_value(key, value)?,
            "synth_cell" => self.synth_cell = parse_value(key, value)?,
            "synth_coarse_grain" => self.synth_coarse_grain = parse_value(key, value)?,
            "synth_noise" => self.synth_noise = parse_value(key, value)?,
            "synth_points" => self.synth_points = parse_value(key, value)?,
            "synth_coarse_points" => self.synth_coarse_points = parse_value(key, value)?,
            "synth_imbalance" => self.synth_imbalance = parse_value(key, value)?,
            "synth_margin" => self.synth_margin = parse_value(key, value)?,
            other => {
                return Err(CliError::usage(format!("unknown config key {other:?}")));
            }
        }
        Ok(())
    }

    /// Defaults overlaid with the pairs of a config file text.
    pub fn from_text(text: &str) -> Result<Self, CliError> {
        let mut cfg = RunConfig::default();
        for (key, value) in parse_run_config(text)? {
            cfg.apply(&key, &value)?;
        }
        Ok(cfg)
    }

    /// Sanity-check the merged configuration.
    pub fn validate(&self) -> Result<(), CliError> {
        let usage = |msg: String| Err(CliError::Usage(msg));
        if self.patch_size % 2 == 0 || self.patch_size < 3 {
            return usage(format!("patch_size must be odd and ≥ 3, got {}", self.patch_size));
        }
        if self.crop_max % 2 == 0 || self.crop_max < 3 || self.crop_max > self.patch_size {
            return usage(format!(
                "crop_max must be odd, ≥ 3, and ≤ patch_size, got {} (patch_size {})",
                self.crop_max, self.patch_size
            ));
        }
        if !(self.alpha.is_finite() && (0.0..=1.0).contains(&self.alpha)) {
            return usage(format!("alpha must lie in [0, 1], got {}", self.alpha));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return usage(format!("test_fraction must lie in (0, 1), got {}", self.test_fraction));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return usage(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        for (name, v) in [
            ("epochs", self.epochs),
            ("pretrain_epochs", self.pretrain_epochs),
            ("batch_size", self.batch_size),
            ("tta_rounds", self.tta_rounds),
            ("n_trees", self.n_trees),
            ("unlabeled_count", self.unlabeled_count),
            ("pseudo_tta_rounds", self.pseudo_tta_rounds),
            ("map_stride", self.map_stride),
            ("map_tile", self.map_tile),
        ] {
            if v == 0 {
                return usage(format!("{name} must be ≥ 1"));
            }
        }
        if self.k_folds < 2 {
            return usage(format!("k_folds must be ≥ 2, got {}", self.k_folds));
        }
        if self.n_clusters < 2 {
            return usage(format!("n_clusters must be ≥ 2, got {}", self.n_clusters));
        }
        if self.conv_widths.is_empty() || self.conv_widths.iter().any(|&w| w == 0) {
            return usage("conv_widths must be a nonempty list of positive integers".into());
        }
        if !matches!(self.taxonomy.as_str(), "natura2000" | "corine" | "infer") {
            return usage(format!(
                "taxonomy must be natura2000, corine, or infer, got {:?}",
                self.taxonomy
            ));
        }
        if self.freeze_conv && self.pretraining == Pretraining::None {
            return usage(
                "freeze_conv requires a pretraining mode (freezing randomly initialized \
                 convolution layers trains nothing useful)"
                    .into(),
            );
        }
        Ok(())
    }

    /// Stable snapshot of every resolved setting, for the run manifest.
    pub fn to_pairs(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        if let Some(p) = path(&self.raster) {
            m.insert("raster".into(), p);
        }
        if let Some(p) = path(&self.annotations) {
            m.insert("annotations".into(), p);
        }
        m.insert("output_dir".into(), self.output_dir.display().to_string());
        if let Some(p) = path(&self.pretrain_raster) {
            m.insert("pretrain_raster".into(), p);
        }
        if let Some(p) = path(&self.pretrain_annotations) {
            m.insert("pretrain_annotations".into(), p);
        }
        m.insert("taxonomy".into(), self.taxonomy.clone());
        m.insert("nodata".into(), self.nodata.to_string());
        m.insert("pretraining".into(), self.pretraining.to_string());
        m.insert("freeze_conv".into(), self.freeze_conv.to_string());
        m.insert("crop_augment".into(), self.crop_augment.to_string());
        m.insert("semi_supervised".into(), self.semi_supervised.to_string());
        m.insert("epochs".into(), self.epochs.to_string());
        m.insert("pretrain_epochs".into(), self.pretrain_epochs.to_string());
        m.insert("batch_size".into(), self.batch_size.to_string());
        m.insert("learning_rate".into(), self.learning_rate.to_string());
        m.insert("patch_size".into(), self.patch_size.to_string());
        m.insert("crop_max".into(), self.crop_max.to_string());
        m.insert("tta_rounds".into(), self.tta_rounds.to_string());
        m.insert("alpha".into(), self.alpha.to_string());
        m.insert("n_trees".into(), self.n_trees.to_string());
        m.insert("k_folds".into(), self.k_folds.to_string());
        m.insert("test_fraction".into(), self.test_fraction.to_string());
        m.insert("seed".into(), self.seed.to_string());
        m.insert("n_clusters".into(), self.n_clusters.to_string());
        m.insert("unlabeled_count".into(), self.unlabeled_count.to_string());
        m.insert("pseudo_tta_rounds".into(), self.pseudo_tta_rounds.to_string());
        m.insert(
            "conv_widths".into(),
            self.conv_widths.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(","),
        );
        m.insert("downsample".into(), self.downsample.to_string());
        m.insert("map_stride".into(), self.map_stride.to_string());
        m.insert("map_tile".into(), self.map_tile.to_string());
        m.insert("synth_height".into(), self.synth_height.to_string());
        m.insert("synth_width".into(), self.synth_width.to_string());
        m.insert("synth_channels".into(), self.synth_channels.to_string());
        m.insert("synth_classes".into(), self.synth_classes.to_string());
        m.insert("synth_cell".into(), self.synth_cell.to_string());
        m.insert("synth_coarse_grain".into(), self.synth_coarse_grain.to_string());
        m.insert("synth_noise".into(), self.synth_noise.to_string());
        m.insert("synth_points".into(), self.synth_points.to_string());
        m.insert("synth_coarse_points".into(), self.synth_coarse_points.to_string());
        m.insert("synth_imbalance".into(), self.synth_imbalance.to_string());
        m.insert("synth_margin".into(), self.synth_margin.to_string());
        m
    }
}

/// One row of the model grid: the baseline forest, or a network trained
/// with a specific attribute combination.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelRow {
    Rf,
    Cnn {
        pretraining: Pretraining,
        freeze_conv: bool,
        crop_augment: bool,
        semi_supervised: bool,
    },
}

/// The named attribute combinations of the trained-model grid, plus the
/// forest baseline.
pub const MODEL_ROWS: [(&str, ModelRow); 12] = [
    ("rf", ModelRow::Rf),
    (
        "base",
        ModelRow::Cnn {
            pretraining: Pretraining::None,
            freeze_conv: false,
            crop_augment: false,
            semi_supervised: false,
        },
    ),
    (
        "base-crop",
        ModelRow::Cnn {
            pretraining: Pretraining::None,
            freeze_conv: false,
            crop_augment: true,
            semi_supervised: false,
        },
    ),
    (
        "ns",
        ModelRow::Cnn {
            pretraining: Pretraining::Coarse,
            freeze_conv: true,
            crop_augment: false,
            semi_supervised: true,
        },
    ),
    (
        "ns-crop",
        ModelRow::Cnn {
            pretraining: Pretraining::Coarse,
            freeze_conv: true,
            crop_augment: true,
            semi_supervised: true,
        },
    ),
    (
        "ns-crop-no-freeze",
        ModelRow::Cnn {
            pretraining: Pretraining::Coarse,
            freeze_conv: false,
            crop_augment: true,
            semi_supervised: true,
        },
    ),
    (
        "ns-no-freeze",
        ModelRow::Cnn {
            pretraining: Pretraining::Coarse,
            freeze_conv: false,
            crop_augment: false,
            semi_supervised: true,
        },
    ),
    (
        "pt",
        ModelRow::Cnn {
            pretraining: Pretraining::Coarse,
            freeze_conv: true,
            crop_augment: false,
            semi_supervised: false,
        },
    ),
    (
        "pt-crop",
        ModelRow::Cnn {
            pretraining: Pretraining::Coarse,
            freeze_conv: true,
            crop_augment: true,
            semi_supervised: false,
        },
    ),
    (
        "pt-crop-no-freeze",
        ModelRow::Cnn {
            pretraining: Pretraining::Coarse,
            freeze_conv: false,
            crop_augment: true,
            semi_supervised: false,
        },
    ),
    (
        "pt-no-freeze",
        ModelRow::Cnn {
            pretraining: Pretraining::Coarse,
            freeze_conv: false,
            crop_augment: false,
            semi_supervised: false,
        },
    ),
    (
        "upt",
        ModelRow::Cnn {
            pretraining: Pretraining::Unsupervised,
            freeze_conv: true,
            crop_augment: false,
            semi_supervised: false,
        },
    ),
];

pub fn model_row(name: &str) -> Option<ModelRow> {
    MODEL_ROWS.iter().find(|(n, _)| *n == name).map(|&(_, row)| row)
}

pub fn row_names() -> Vec<&'static str> {
    MODEL_ROWS.iter().map(|&(n, _)| n).collect()
}

/// Copy a row's attribute flags into the config.
pub fn apply_model_row(cfg: &mut RunConfig, row: ModelRow) {
    if let ModelRow::Cnn { pretraining, freeze_conv, crop_augment, semi_supervised } = row {
        cfg.pretraining = pretraining;
        cfg.freeze_conv = freeze_conv;
        cfg.crop_augment = crop_augment;
        cfg.semi_supervised = semi_supervised;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_the_reference_setup() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.epochs, 500);
        assert_eq!(cfg.pretrain_epochs, 50);
        assert_eq!(cfg.batch_size, 128);
        assert_eq!(cfg.learning_rate, 1e-4);
        assert_eq!(cfg.patch_size, 49);
        assert_eq!(cfg.crop_max, 19);
        assert_eq!(cfg.tta_rounds, 5);
        assert_eq!(cfg.alpha, 0.5);
        assert_eq!(cfg.n_trees, 100);
        assert_eq!(cfg.k_folds, 5);
        assert_eq!(cfg.test_fraction, 0.2);
        assert_eq!(cfg.n_clusters, 44);
        assert_eq!(cfg.synth_imbalance, 472.0);
        cfg.validate().unwrap();
    }

    #[test]
    fn file_text_overlays_defaults() {
        let text = "# comment\n\nepochs = 7\nraster = data/stack.msrs\nconv_widths = 4, 8\n\
                    crop_augment = true\npretraining = coarse\n";
        let cfg = RunConfig::from_text(text).unwrap();
        assert_eq!(cfg.epochs, 7);
        assert_eq!(cfg.raster.as_deref(), Some(std::path::Path::new("data/stack.msrs")));
        assert_eq!(cfg.conv_widths, vec![4, 8]);
        assert!(cfg.crop_augment);
        assert_eq!(cfg.pretraining, Pretraining::Coarse);
        assert_eq!(cfg.batch_size, 128, "unset keys keep defaults");
    }

    #[test]
    fn malformed_lines_are_rejected() {
        assert!(parse_run_config("epochs 7").is_err());
        assert!(parse_run_config("epochs =").is_err());
        assert!(parse_run_config("= 7").is_err());
        assert!(parse_run_config("a = 1\na = 2").is_err());
        assert!(parse_run_config("two words = 3").is_err());
        assert!(RunConfig::from_text("no_such_key = 1").is_err());
        assert!(RunConfig::from_text("epochs = seven").is_err());
        assert!(RunConfig::from_text("downsample = yes").is_err());
    }

    #[test]
    fn validation_catches_bad_settings() {
        let mut cfg = RunConfig::default();
        cfg.patch_size = 8;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.crop_max = 51;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.alpha = 1.5;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.freeze_conv = true;
        assert!(cfg.validate().is_err(), "freeze without pretraining is a mistake");
        cfg.pretraining = Pretraining::Coarse;
        cfg.validate().unwrap();
    }

    #[test]
    fn the_model_grid_spans_eleven_network_rows_plus_the_baseline() {
        assert_eq!(MODEL_ROWS.len(), 12);
        let cnn_rows = MODEL_ROWS.iter().filter(|(_, r)| matches!(r, ModelRow::Cnn { .. }));
        assert_eq!(cnn_rows.count(), 11);
        // spot checks against the attribute table
        assert_eq!(
            model_row("pt"),
            Some(ModelRow::Cnn {
                pretraining: Pretraining::Coarse,
                freeze_conv: true,
                crop_augment: false,
                semi_supervised: false,
            })
        );
        assert_eq!(
            model_row("upt"),
            Some(ModelRow::Cnn {
                pretraining: Pretraining::Unsupervised,
                freeze_conv: true,
                crop_augment: false,
                semi_supervised: false,
            })
        );
        assert_eq!(
            model_row("ns-crop-no-freeze"),
            Some(ModelRow::Cnn {
                pretraining: Pretraining::Coarse,
                freeze_conv: false,
                crop_augment: true,
                semi_supervised: true,
            })
        );
        assert_eq!(model_row("rf"), Some(ModelRow::Rf));
        assert_eq!(model_row("resnet"), None);
        // every named row passes validation when applied
        for (name, row) in MODEL_ROWS {
            let mut cfg = RunConfig::default();
            apply_model_row(&mut cfg, row);
            cfg.validate().unwrap_or_else(|e| panic!("row {name} invalid: {e}"));
        }
    }

    #[test]
    fn snapshot_round_trips_through_apply() {
        let mut cfg = RunConfig::default();
        cfg.raster = Some(PathBuf::from("a.msrs"));
        cfg.annotations = Some(PathBuf::from("pts.csv"));
        cfg.conv_widths = vec![8, 16, 32];
        cfg.alpha = 0.25;
        cfg.semi_supervised = true;
        let pairs = cfg.to_pairs();
        let mut rebuilt = RunConfig::default();
        for (k, v) in &pairs {
            rebuilt.apply(k, v).unwrap();
        }
        assert_eq!(rebuilt, cfg);
    }
}
