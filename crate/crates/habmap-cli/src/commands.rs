//! The pipeline stages behind each subcommand. Every stage reads its
//! inputs from disk, writes its artifacts into the output directory, and
//! appends a hashed record to the run manifest, so a finished run is fully
//! reproducible from the manifest alone.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;

use habmap::dataset::{
    kfold_split, parse_annotations, random_test_split, read_patch_archive, read_split,
    write_patch_archive, write_split, AnnotationPoint, SplitResult, Taxonomy,
};
use habmap::forest::{fit_forest, read_forest, write_forest, ForestConfig, RandomForestModel};
use habmap::inference::{
    classify_map, combine, read_class_index, tta_predict, write_class_index, EnsembleConfig,
    MapConfig, MapModels, TtaOps,
};
use habmap::metrics::{self, average_precision, curve_csv, roc_auc, MetricsReport};
use habmap::nnet::{
    center_crop, read_network, train, write_network, AugmentSpec, EpochLog, Network,
    NetworkConfig, TrainConfig,
};
use habmap::raster::{
    compute_channel_stats, extract_patch, read_container, read_text_matrix, standardize,
    write_container, GeoTransform, Patch, RasterStack,
};
use habmap::rng::{derive_seed, rng_from_seed};
use habmap::ssl::{
    iic_pretrain, noisy_student_train, pseudo_label, write_pseudo_labels, IICConfig,
    NoisyStudentConfig, NS_PSEUDO_STREAM,
};
use habmap::synth::{annotations_csv, generate, SynthConfig};

use crate::config::{Pretraining, RunConfig};
use crate::error::CliError;
use crate::manifest::StageRun;
use crate::plotting;

// Per-stage seed streams, derived from the base seed so stages draw
// decorrelated random sequences.
const SPLIT_STREAM: u64 = 1;
const RF_STREAM: u64 = 2;
const PRETRAIN_STREAM: u64 = 3;
const CNN_STREAM: u64 = 4;
const DISTILL_STREAM: u64 = 5;
const EVAL_STREAM: u64 = 6;
const MAP_STREAM: u64 = 7;
const UNLABELED_STREAM: u64 = 8;
const COARSE_POINT_STREAM: u64 = 9;

// Artifact names within the output directory.
const RASTER_FILE: &str = "raster.msrs";
const STATS_FILE: &str = "stats.csv";
const PATCHES_FILE: &str = "patches.ptch";
const CLASSES_FILE: &str = "classes.tsv";
const SKIPPED_FILE: &str = "skipped.csv";
const SPLIT_FILE: &str = "split.txt";
const RF_FILE: &str = "rf.rfor";
const PRETRAINED_FILE: &str = "pretrained.nnet";
const CNN_FILE: &str = "cnn.nnet";
const STUDENT_FILE: &str = "student.nnet";
const PSEUDO_FILE: &str = "pseudo.plbs";
const SYNTH_RASTER_FILE: &str = "synth_raster.msrs";
const ANNOTATIONS_FILE: &str = "annotations.csv";
const COARSE_ANNOTATIONS_FILE: &str = "coarse_annotations.csv";

// ── Shared helpers ──────────────────────────────────────────────────────

fn require(path: PathBuf, what: &str, prior_stage: &str) -> Result<PathBuf, CliError> {
    if path.exists() {
        Ok(path)
    } else {
        Err(CliError::data(format!(
            "{what} not found at {}; run `habmap {prior_stage}` first",
            path.display()
        )))
    }
}

fn required_path<'a>(path: &'a Option<PathBuf>, key: &str) -> Result<&'a Path, CliError> {
    path.as_deref()
        .ok_or_else(|| CliError::usage(format!("set `{key} = <path>` in the config (or --set)")))
}

/// Load the ingested raster. Standardization state is process metadata the
/// container does not persist; ingest only ever writes standardized
/// rasters, so restore the flag here.
fn load_standardized_raster(out_dir: &Path) -> Result<RasterStack, CliError> {
    let path = require(out_dir.join(RASTER_FILE), "standardized raster", "ingest")?;
    let mut raster = read_container(&path)?;
    raster.mark_standardized();
    Ok(raster)
}

fn load_taxonomy(out_dir: &Path) -> Result<Taxonomy, CliError> {
    let path = require(out_dir.join(CLASSES_FILE), "class index", "ingest")?;
    let codes = read_class_index(&path)?;
    Ok(Taxonomy::new("classes", codes)?)
}

fn load_archive(out_dir: &Path) -> Result<Vec<Patch>, CliError> {
    let path = require(out_dir.join(PATCHES_FILE), "patch archive", "ingest")?;
    Ok(read_patch_archive(&path)?)
}

fn load_split(out_dir: &Path) -> Result<SplitResult, CliError> {
    let path = require(out_dir.join(SPLIT_FILE), "train/test split", "split")?;
    Ok(read_split(&path)?)
}

/// Pick the archive patches named by `ids`, with their labels.
fn patches_for_ids(patches: &[Patch], ids: &[String]) -> Result<(Vec<Patch>, Vec<usize>), CliError> {
    let by_id: BTreeMap<&str, &Patch> = patches
        .iter()
        .filter_map(|p| p.source_point.as_deref().map(|id| (id, p)))
        .collect();
    let mut out = Vec::with_capacity(ids.len());
    let mut labels = Vec::with_capacity(ids.len());
    for id in ids {
        let p = by_id.get(id.as_str()).ok_or_else(|| {
            CliError::data(format!(
                "split references point {id:?} missing from the patch archive; \
                 re-run `habmap ingest` and `habmap split` against the same inputs"
            ))
        })?;
        let label = p.center_class.ok_or_else(|| {
            CliError::data(format!("archived patch {id:?} carries no class label"))
        })?;
        out.push((*p).clone());
        labels.push(label);
    }
    Ok((out, labels))
}

/// Load either a binary container or a comma-separated list of
/// single-channel text matrices stacked in listed order.
fn load_input_raster(spec: &Path, nodata: f32) -> Result<(RasterStack, Vec<PathBuf>), CliError> {
    let spec_str = spec.to_string_lossy();
    if !spec_str.contains(',') && spec_str.ends_with(".msrs") {
        let path = spec.to_path_buf();
        if !path.exists() {
            return Err(CliError::data(format!("raster not found at {}", path.display())));
        }
        return Ok((read_container(&path)?, vec![path]));
    }
    let mut channels: Vec<RasterStack> = Vec::new();
    let mut paths = Vec::new();
    for part in spec_str.split(',') {
        let path = PathBuf::from(part.trim());
        if !path.exists() {
            return Err(CliError::data(format!("raster channel not found at {}", path.display())));
        }
        let name = path.file_stem().map(|s| s.to_string_lossy().into_owned());
        let name = name.unwrap_or_else(|| format!("channel_{}", channels.len()));
        channels.push(read_text_matrix(&path, GeoTransform::unit(), nodata, &name)?);
        paths.push(path);
    }
    let first = channels.first().ok_or_else(|| CliError::data("empty raster path list"))?;
    let (h, w) = (first.height(), first.width());
    let mut data = Vec::with_capacity(channels.len() * h * w);
    let mut names = Vec::new();
    for ch in &channels {
        if ch.height() != h || ch.width() != w {
            return Err(CliError::data(format!(
                "raster channels disagree on shape: {}x{} vs {h}x{w}",
                ch.height(),
                ch.width()
            )));
        }
        data.extend_from_slice(ch.data());
        names.push(ch.channel_names()[0].clone());
    }
    let stack =
        RasterStack::new(channels.len(), h, w, data, GeoTransform::unit(), nodata, names)?;
    Ok((stack, paths))
}

fn resolve_taxonomy(selection: &str, annotation_text: &str) -> Result<Taxonomy, CliError> {
    match selection {
        "natura2000" => Ok(Taxonomy::natura2000()),
        "corine" => Ok(Taxonomy::corine()),
        "infer" => infer_taxonomy(annotation_text),
        other => Err(CliError::usage(format!("unknown taxonomy {other:?}"))),
    }
}

/// Collect the distinct class codes of an annotation CSV (4th column),
/// sorted, as an ad-hoc taxonomy. Structural validation happens in the
/// real parse; this pass only gathers candidate codes.
fn infer_taxonomy(text: &str) -> Result<Taxonomy, CliError> {
    let mut codes: Vec<String> = Vec::new();
    for line in text.lines().skip(1) {
        let mut fields = line.split(',');
        if let Some(code) = fields.nth(3) {
            let code = code.trim();
            if !code.is_empty() && !codes.iter().any(|c| c == code) {
                codes.push(code.to_string());
            }
        }
    }
    codes.sort();
    if codes.is_empty() {
        return Err(CliError::data("cannot infer a taxonomy: no class codes in the annotations"));
    }
    Ok(Taxonomy::new("inferred", codes)?)
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text)?;
    Ok(())
}

fn epoch_log_csv(logs: &[EpochLog]) -> String {
    let mut out = String::from("epoch,train_loss\n");
    for log in logs {
        out.push_str(&format!("{},{}\n", log.epoch, log.train_loss));
    }
    out
}

fn loss_csv(losses: &[f64]) -> String {
    let mut out = String::from("epoch,loss\n");
    for (i, loss) in losses.iter().enumerate() {
        out.push_str(&format!("{i},{loss}\n"));
    }
    out
}

/// Draw patches at uniform random in-bounds centers, skipping centers
/// whose patch would overlap any excluded pixel's patch and patches that
/// are mostly nodata. Deterministic in the seed.
fn sample_unlabeled(
    raster: &RasterStack,
    count: usize,
    patch_size: usize,
    seed: u64,
    exclude: &[(i64, i64)],
) -> Result<Vec<Patch>, CliError> {
    let half = (patch_size / 2) as i64;
    let (h, w) = (raster.height() as i64, raster.width() as i64);
    if h <= 2 * half || w <= 2 * half {
        return Err(CliError::data(format!(
            "raster {h}x{w} is too small for {patch_size}-pixel patches"
        )));
    }
    let mut rng = rng_from_seed(seed);
    let mut out = Vec::with_capacity(count);
    let sep = patch_size as i64;
    for _ in 0..count.saturating_mul(200) {
        if out.len() == count {
            break;
        }
        let row = rng.gen_range(half..h - half);
        let col = rng.gen_range(half..w - half);
        if exclude.iter().any(|&(er, ec)| (row - er).abs() < sep && (col - ec).abs() < sep) {
            continue;
        }
        match extract_patch(raster, row, col, patch_size) {
            Ok(p) if p.nodata_fraction() < 0.5 => out.push(p),
            _ => continue,
        }
    }
    if out.len() < count {
        return Err(CliError::data(format!(
            "could only sample {} of {count} unlabeled patches; the raster is too small, \
             too masked, or too covered by excluded points",
            out.len()
        )));
    }
    Ok(out)
}

fn network_config(cfg: &RunConfig, in_channels: usize, n_classes: usize) -> NetworkConfig {
    NetworkConfig {
        in_channels,
        stage_widths: cfg.conv_widths.clone(),
        blocks_per_stage: 1,
        n_classes,
        downsample: cfg.downsample,
    }
}

fn train_augment(cfg: &RunConfig) -> AugmentSpec {
    AugmentSpec {
        hflip: true,
        vflip: true,
        blur: true,
        crop_random: cfg.crop_augment,
        crop_max: cfg.crop_max,
    }
}

/// TTA operation set for a round count: a single round means a plain
/// un-augmented forward pass.
fn tta_ops(rounds: usize) -> TtaOps {
    if rounds > 1 {
        TtaOps::default()
    } else {
        TtaOps::none()
    }
}

// ── synth ───────────────────────────────────────────────────────────────

fn synth_config(cfg: &RunConfig) -> SynthConfig {
    let mut sc = SynthConfig::new(cfg.seed);
    sc.height = cfg.synth_height;
    sc.width = cfg.synth_width;
    sc.channels = cfg.synth_channels;
    sc.n_classes = cfg.synth_classes;
    sc.cell = cfg.synth_cell;
    sc.coarse_grain = cfg.synth_coarse_grain;
    sc.noise = cfg.synth_noise as f32;
    sc.n_points = cfg.synth_points;
    sc.imbalance_ratio = cfg.synth_imbalance;
    sc.point_margin = cfg.synth_margin;
    sc
}

/// Generate the synthetic benchmark: a raw raster, fine annotations, and a
/// coarse annotation set (fine classes merged pairwise) for pretraining.
pub fn cmd_synth(cfg: &RunConfig, force: bool) -> Result<(), CliError> {
    let mut run = StageRun::new(&cfg.output_dir, force, cfg.to_pairs())?;
    let sc = synth_config(cfg);
    let dataset = generate(&sc)?;

    // Coarse labels: merge fine classes interleaved (class % groups, identity
    // when that would leave a single group) and sample fresh ground-truth
    // points inset far enough from the border to survive patch extraction.
    // Interleaving keeps the texture-only class pair in different coarse
    // groups, so coarse pretraining still rewards neighborhood features —
    // a pairwise merge would collapse the pair and teach nothing useful.
    let groups = if sc.n_classes >= 4 { sc.n_classes.div_ceil(2) } else { sc.n_classes };
    let inset = (sc.point_margin.max(cfg.patch_size / 2)) as i64;
    let (h, w) = dataset.raster.shape();
    let (h, w) = (h as i64, w as i64);
    if h <= 2 * inset || w <= 2 * inset {
        return Err(CliError::usage(format!(
            "synth raster {h}x{w} cannot hold coarse points inset by {inset} pixels \
             (patch_size {})",
            cfg.patch_size
        )));
    }
    let mut rng = rng_from_seed(derive_seed(cfg.seed, COARSE_POINT_STREAM));
    let gt = dataset.raster.geotransform();
    let mut coarse_points = Vec::with_capacity(cfg.synth_coarse_points);
    for i in 0..cfg.synth_coarse_points {
        let row = rng.gen_range(inset..h - inset);
        let col = rng.gen_range(inset..w - inset);
        let class = dataset.truth_at(row as usize, col as usize);
        let group = class % groups;
        let (x, y) = gt.pixel_center_to_world(row, col);
        coarse_points.push(AnnotationPoint {
            id: format!("cp_{i:05}"),
            x,
            y,
            class_code: format!("g{group:02}"),
        });
    }

    write_container(&run.artifact(SYNTH_RASTER_FILE)?, &dataset.raster)?;
    write_text(&run.artifact(ANNOTATIONS_FILE)?, &annotations_csv(&dataset.points))?;
    write_text(&run.artifact(COARSE_ANNOTATIONS_FILE)?, &annotations_csv(&coarse_points))?;
    run.finish("synth")?;
    println!(
        "synth: {}x{} raster, {} channels, {} classes, {} fine points, {} coarse points",
        sc.height,
        sc.width,
        sc.channels,
        sc.n_classes,
        dataset.points.len(),
        coarse_points.len()
    );
    Ok(())
}

// ── ingest ──────────────────────────────────────────────────────────────

/// Standardize the raster stack, extract one labeled patch per usable
/// annotation point, and write the class index plus a skip report.
pub fn cmd_ingest(cfg: &RunConfig, force: bool) -> Result<(), CliError> {
    let raster_spec = required_path(&cfg.raster, "raster")?;
    let annotations = required_path(&cfg.annotations, "annotations")?.to_path_buf();
    let mut run = StageRun::new(&cfg.output_dir, force, cfg.to_pairs())?;

    let (raw, raster_paths) = load_input_raster(raster_spec, cfg.nodata)?;
    for p in &raster_paths {
        run.input(p)?;
    }
    if !annotations.exists() {
        return Err(CliError::data(format!(
            "annotations not found at {}",
            annotations.display()
        )));
    }
    run.input(&annotations)?;
    let text = fs::read_to_string(&annotations)?;
    let taxonomy = resolve_taxonomy(&cfg.taxonomy, &text)?;
    let loaded = parse_annotations(&text, &taxonomy)?;

    let stats = compute_channel_stats(&raw)?;
    let raster = standardize(&raw, &stats)?;

    let mut patches: Vec<Patch> = Vec::with_capacity(loaded.points.len());
    let mut skipped: Vec<(String, String)> = loaded
        .rejected
        .iter()
        .map(|r| (format!("line_{}", r.line), r.reason.clone()))
        .collect();
    for point in &loaded.points {
        let (row, col) = raster.geotransform().world_to_pixel(point.x, point.y);
        match extract_patch(&raster, row, col, cfg.patch_size) {
            Ok(mut patch) => {
                patch.center_class = taxonomy.index_of(&point.class_code);
                patch.source_point = Some(point.id.clone());
                patches.push(patch);
            }
            Err(e) => skipped.push((point.id.clone(), e.to_string())),
        }
    }
    if patches.is_empty() {
        return Err(CliError::data(
            "no usable annotation points: every point was rejected or fell outside the raster",
        ));
    }

    write_container(&run.artifact(RASTER_FILE)?, &raster)?;
    let mut stats_csv = String::from("channel,name,mean,std\n");
    for c in 0..raster.channels() {
        stats_csv.push_str(&format!(
            "{c},{},{},{}\n",
            raster.channel_names()[c],
            stats.mean(c),
            stats.std(c)
        ));
    }
    write_text(&run.artifact(STATS_FILE)?, &stats_csv)?;
    write_patch_archive(&run.artifact(PATCHES_FILE)?, &patches)?;
    write_class_index(run.artifact(CLASSES_FILE)?, taxonomy.codes())?;
    let mut skip_csv = String::from("id,reason\n");
    for (id, reason) in &skipped {
        skip_csv.push_str(&format!("{id},{}\n", reason.replace(',', ";")));
    }
    write_text(&run.artifact(SKIPPED_FILE)?, &skip_csv)?;
    run.finish("ingest")?;
    println!(
        "ingest: {} patches of ({}, {}, {}), {} skipped, {} classes",
        patches.len(),
        raster.channels(),
        cfg.patch_size,
        cfg.patch_size,
        skipped.len(),
        taxonomy.len()
    );
    Ok(())
}

// ── split ───────────────────────────────────────────────────────────────

/// Overlap-aware holdout split plus k folds over the archived points.
pub fn cmd_split(cfg: &RunConfig, force: bool) -> Result<(), CliError> {
    let annotations = required_path(&cfg.annotations, "annotations")?.to_path_buf();
    let mut run = StageRun::new(&cfg.output_dir, force, cfg.to_pairs())?;
    let raster = load_standardized_raster(run.out_dir())?;
    let taxonomy = load_taxonomy(run.out_dir())?;
    let archive = load_archive(run.out_dir())?;
    run.input(&run.out_dir().join(PATCHES_FILE))?;
    run.input(&annotations)?;

    let text = fs::read_to_string(&annotations)?;
    let loaded = parse_annotations(&text, &taxonomy)?;
    let archived: std::collections::BTreeSet<&str> =
        archive.iter().filter_map(|p| p.source_point.as_deref()).collect();
    let points: Vec<AnnotationPoint> = loaded
        .points
        .into_iter()
        .filter(|p| archived.contains(p.id.as_str()))
        .collect();
    if points.is_empty() {
        return Err(CliError::data("no archived points to split; run `habmap ingest` first"));
    }

    let pixel_size = raster.geotransform().pixel_size_x;
    let seed = derive_seed(cfg.seed, SPLIT_STREAM);
    let split = random_test_split(&points, cfg.test_fraction, cfg.patch_size, pixel_size, seed)?;
    write_split(&run.artifact(SPLIT_FILE)?, &split)?;
    let folds = kfold_split(&points, cfg.k_folds, cfg.patch_size, pixel_size, seed)?;
    for (i, fold) in folds.iter().enumerate() {
        write_split(&run.artifact(&format!("fold_{i}.txt"))?, fold)?;
    }
    run.finish("split")?;
    println!(
        "split: {} train / {} test / {} dropped; {} folds",
        split.train_ids.len(),
        split.test_ids.len(),
        split.dropped_ids.len(),
        folds.len()
    );
    Ok(())
}

// ── train-rf ────────────────────────────────────────────────────────────

fn fit_rf(
    patches: &[Patch],
    labels: &[usize],
    n_classes: usize,
    n_trees: usize,
    seed: u64,
) -> Result<RandomForestModel, CliError> {
    let features: Vec<Vec<f32>> = patches.iter().map(|p| p.center_features()).collect();
    Ok(fit_forest(
        &features,
        labels,
        n_classes,
        &ForestConfig { n_trees, seed, ..ForestConfig::default() },
    )?)
}

/// Train the center-pixel random forest baseline on the train split.
pub fn cmd_train_rf(cfg: &RunConfig, force: bool) -> Result<(), CliError> {
    let mut run = StageRun::new(&cfg.output_dir, force, cfg.to_pairs())?;
    let taxonomy = load_taxonomy(run.out_dir())?;
    let archive = load_archive(run.out_dir())?;
    let split = load_split(run.out_dir())?;
    run.input(&run.out_dir().join(PATCHES_FILE))?;
    run.input(&run.out_dir().join(SPLIT_FILE))?;

    let (patches, labels) = patches_for_ids(&archive, &split.train_ids)?;
    let model = fit_rf(
        &patches,
        &labels,
        taxonomy.len(),
        cfg.n_trees,
        derive_seed(cfg.seed, RF_STREAM),
    )?;
    write_forest(&run.artifact(RF_FILE)?, &model)?;
    run.finish("train-rf")?;
    println!(
        "train-rf: {} trees on {} points, {} features, {} classes",
        cfg.n_trees,
        patches.len(),
        model.n_features(),
        model.n_classes()
    );
    Ok(())
}

// ── pretrain ────────────────────────────────────────────────────────────

/// Pretrain the convolution stack: clustering on unlabeled patches
/// (`unsupervised`) or supervised training on a coarse-labeled annotation
/// set (`coarse`).
pub fn cmd_pretrain(cfg: &RunConfig, force: bool) -> Result<(), CliError> {
    match cfg.pretraining {
        Pretraining::Unsupervised => pretrain_unsupervised(cfg, force),
        Pretraining::Coarse => pretrain_coarse(cfg, force),
        Pretraining::None => {
            Err(CliError::usage("pretrain requires --mode iic or --mode coarse"))
        }
    }
}

fn pretrain_unsupervised(cfg: &RunConfig, force: bool) -> Result<(), CliError> {
    let mut run = StageRun::new(&cfg.output_dir, force, cfg.to_pairs())?;
    let raster = load_standardized_raster(run.out_dir())?;
    run.input(&run.out_dir().join(RASTER_FILE))?;
    let corpus = sample_unlabeled(
        &raster,
        cfg.unlabeled_count,
        cfg.patch_size,
        derive_seed(cfg.seed, UNLABELED_STREAM),
        &[],
    )?;
    let mut net = Network::new(
        network_config(cfg, raster.channels(), cfg.n_clusters),
        derive_seed(cfg.seed, PRETRAIN_STREAM),
    )?;
    let mut icfg = IICConfig::new(cfg.n_clusters, cfg.patch_size);
    icfg.epochs = cfg.pretrain_epochs;
    icfg.batch_size = cfg.batch_size;
    icfg.learning_rate = cfg.learning_rate;
    icfg.augment =
        AugmentSpec { hflip: true, vflip: true, blur: true, crop_random: true, crop_max: cfg.crop_max };
    let losses = iic_pretrain(&mut net, &corpus, &icfg, derive_seed(cfg.seed, PRETRAIN_STREAM))?;
    write_network(&run.artifact(PRETRAINED_FILE)?, &net)?;
    write_text(&run.artifact("pretrain_log.csv")?, &loss_csv(&losses))?;
    run.finish("pretrain")?;
    println!(
        "pretrain (unsupervised): {} clusters on {} patches, {} epochs, final loss {:.4}",
        cfg.n_clusters,
        corpus.len(),
        losses.len(),
        losses.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn pretrain_coarse(cfg: &RunConfig, force: bool) -> Result<(), CliError> {
    let coarse_csv = required_path(&cfg.pretrain_annotations, "pretrain_annotations")?.to_path_buf();
    let mut run = StageRun::new(&cfg.output_dir, force, cfg.to_pairs())?;
    // The coarse set may come with its own raster; standardize it with its
    // own statistics. Otherwise reuse the ingested raster.
    let raster = match &cfg.pretrain_raster {
        Some(path) => {
            let (raw, paths) = load_input_raster(path, cfg.nodata)?;
            for p in &paths {
                run.input(p)?;
            }
            standardize(&raw, &compute_channel_stats(&raw)?)?
        }
        None => {
            let r = load_standardized_raster(run.out_dir())?;
            run.input(&run.out_dir().join(RASTER_FILE))?;
            r
        }
    };
    if !coarse_csv.exists() {
        return Err(CliError::data(format!(
            "coarse annotations not found at {}",
            coarse_csv.display()
        )));
    }
    run.input(&coarse_csv)?;
    let text = fs::read_to_string(&coarse_csv)?;
    // Coarse codes are whatever the file carries; infer the taxonomy.
    let taxonomy = infer_taxonomy(&text)?;
    let loaded = parse_annotations(&text, &taxonomy)?;

    let mut patches = Vec::new();
    let mut labels = Vec::new();
    for point in &loaded.points {
        let (row, col) = raster.geotransform().world_to_pixel(point.x, point.y);
        if let Ok(mut patch) = extract_patch(&raster, row, col, cfg.patch_size) {
            patch.source_point = Some(point.id.clone());
            patches.push(patch);
            labels.push(taxonomy.index_of(&point.class_code).expect("validated by parse"));
        }
    }
    if patches.is_empty() {
        return Err(CliError::data("no usable coarse pretraining points"));
    }

    let mut net = Network::new(
        network_config(cfg, raster.channels(), taxonomy.len()),
        derive_seed(cfg.seed, PRETRAIN_STREAM),
    )?;
    let tcfg = TrainConfig {
        epochs: cfg.pretrain_epochs,
        batch_size: cfg.batch_size,
        learning_rate: cfg.learning_rate,
        augment: AugmentSpec {
            hflip: true,
            vflip: true,
            blur: true,
            crop_random: false,
            crop_max: cfg.crop_max,
        },
        freeze_conv: false,
        seed: derive_seed(cfg.seed, PRETRAIN_STREAM),
    };
    let logs = train(&mut net, &patches, &labels, None, &tcfg)?;
    write_network(&run.artifact(PRETRAINED_FILE)?, &net)?;
    write_text(&run.artifact("pretrain_log.csv")?, &epoch_log_csv(&logs))?;
    write_class_index(run.artifact("pretrain_classes.tsv")?, taxonomy.codes())?;
    run.finish("pretrain")?;
    println!(
        "pretrain (coarse): {} classes on {} patches, {} epochs, final loss {:.4}",
        taxonomy.len(),
        patches.len(),
        logs.len(),
        logs.last().map(|l| l.train_loss).unwrap_or(f64::NAN)
    );
    Ok(())
}

// ── train-cnn ───────────────────────────────────────────────────────────

/// Initialize the network per the pretraining attribute: transfer the
/// pretrained stack with a new head, or start fresh.
fn build_network(
    cfg: &RunConfig,
    out_dir: &Path,
    in_channels: usize,
    n_classes: usize,
    seed: u64,
) -> Result<Network<f32>, CliError> {
    match cfg.pretraining {
        Pretraining::None => Ok(Network::new(network_config(cfg, in_channels, n_classes), seed)?),
        Pretraining::Unsupervised | Pretraining::Coarse => {
            let mode = if cfg.pretraining == Pretraining::Unsupervised { "iic" } else { "coarse" };
            let path = require(
                out_dir.join(PRETRAINED_FILE),
                "pretrained network",
                &format!("pretrain --mode {mode}"),
            )?;
            let pre = read_network(&path)?;
            if pre.config().in_channels != in_channels {
                return Err(CliError::data(format!(
                    "pretrained network expects {} channels but the raster has {in_channels}",
                    pre.config().in_channels
                )));
            }
            Ok(habmap::nnet::transfer(&pre, n_classes, cfg.freeze_conv, seed)?)
        }
    }
}

/// Train the center-pixel network on the train split, honoring the
/// pretraining / freeze / crop attribute flags.
pub fn cmd_train_cnn(cfg: &RunConfig, force: bool) -> Result<(), CliError> {
    let mut run = StageRun::new(&cfg.output_dir, force, cfg.to_pairs())?;
    let taxonomy = load_taxonomy(run.out_dir())?;
    let archive = load_archive(run.out_dir())?;
    let split = load_split(run.out_dir())?;
    run.input(&run.out_dir().join(PATCHES_FILE))?;
    run.input(&run.out_dir().join(SPLIT_FILE))?;
    if cfg.pretraining != Pretraining::None {
        run.input(&run.out_dir().join(PRETRAINED_FILE)).ok();
    } else if run.out_dir().join(PRETRAINED_FILE).exists() {
        eprintln!(
            "note: {PRETRAINED_FILE} exists but `pretraining = none`; training from \
             scratch (set `pretraining = coarse` or `unsupervised` to transfer)"
        );
    }

    let (patches, labels) = patches_for_ids(&archive, &split.train_ids)?;
    let channels = patches.first().map(|p| p.channels()).unwrap_or(0);
    let seed = derive_seed(cfg.seed, CNN_STREAM);
    let mut net = build_network(cfg, run.out_dir(), channels, taxonomy.len(), seed)?;
    let tcfg = TrainConfig {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        learning_rate: cfg.learning_rate,
        augment: train_augment(cfg),
        freeze_conv: cfg.freeze_conv,
        seed,
    };
    let logs = train(&mut net, &patches, &labels, None, &tcfg)?;
    write_network(&run.artifact(CNN_FILE)?, &net)?;
    write_text(&run.artifact("train_log.csv")?, &epoch_log_csv(&logs))?;
    run.finish("train-cnn")?;
    println!(
        "train-cnn: {} epochs on {} patches (pretraining {}, freeze {}, crop {}), final loss {:.4}",
        cfg.epochs,
        patches.len(),
        cfg.pretraining,
        cfg.freeze_conv,
        cfg.crop_augment,
        logs.last().map(|l| l.train_loss).unwrap_or(f64::NAN)
    );
    Ok(())
}

// ── distill ─────────────────────────────────────────────────────────────

/// Test-point pixel positions, for keeping sampled unlabeled patches away
/// from evaluation data.
fn test_pixels(
    cfg: &RunConfig,
    raster: &RasterStack,
    split: &SplitResult,
    taxonomy: &Taxonomy,
) -> Result<Vec<(i64, i64)>, CliError> {
    let annotations = required_path(&cfg.annotations, "annotations")?;
    let text = fs::read_to_string(annotations)?;
    let loaded = parse_annotations(&text, taxonomy)?;
    let test_ids: std::collections::BTreeSet<&str> =
        split.test_ids.iter().map(|s| s.as_str()).collect();
    Ok(loaded
        .points
        .iter()
        .filter(|p| test_ids.contains(p.id.as_str()))
        .map(|p| raster.geotransform().world_to_pixel(p.x, p.y))
        .collect())
}

/// Noisy-student distillation: the trained network pseudo-labels an
/// unlabeled sample of the raster (kept clear of test points), then a
/// student trains on hard and soft batches interleaved.
pub fn cmd_distill(cfg: &RunConfig, force: bool) -> Result<(), CliError> {
    let mut run = StageRun::new(&cfg.output_dir, force, cfg.to_pairs())?;
    let teacher_path = require(run.out_dir().join(CNN_FILE), "teacher network", "train-cnn")?;
    let raster = load_standardized_raster(run.out_dir())?;
    let taxonomy = load_taxonomy(run.out_dir())?;
    let archive = load_archive(run.out_dir())?;
    let split = load_split(run.out_dir())?;
    run.input(&teacher_path)?;
    run.input(&run.out_dir().join(PATCHES_FILE))?;
    run.input(&run.out_dir().join(SPLIT_FILE))?;

    let teacher = read_network(&teacher_path)?;
    let (labeled, labels) = patches_for_ids(&archive, &split.train_ids)?;
    let exclude = test_pixels(cfg, &raster, &split, &taxonomy)?;
    let unlabeled = sample_unlabeled(
        &raster,
        cfg.unlabeled_count,
        cfg.patch_size,
        derive_seed(cfg.seed, UNLABELED_STREAM),
        &exclude,
    )?;

    let train_seed = derive_seed(cfg.seed, DISTILL_STREAM);
    let nscfg = NoisyStudentConfig {
        train: TrainConfig {
            epochs: cfg.epochs,
            batch_size: cfg.batch_size,
            learning_rate: cfg.learning_rate,
            augment: train_augment(cfg),
            freeze_conv: cfg.freeze_conv,
            seed: train_seed,
        },
        pseudo_tta_rounds: cfg.pseudo_tta_rounds,
        pseudo_tta: tta_ops(cfg.pseudo_tta_rounds),
    };
    let (student, logs) = noisy_student_train(&teacher, &labeled, &labels, &unlabeled, &nscfg)?;
    // Persist the pseudo-label set the run used (same derivation).
    let pseudo = pseudo_label(
        &teacher,
        &unlabeled,
        nscfg.pseudo_tta_rounds,
        &nscfg.pseudo_tta,
        derive_seed(train_seed, NS_PSEUDO_STREAM),
    )?;
    write_network(&run.artifact(STUDENT_FILE)?, &student)?;
    write_pseudo_labels(run.artifact(PSEUDO_FILE)?, &pseudo)?;
    write_text(&run.artifact("distill_log.csv")?, &epoch_log_csv(&logs))?;
    run.finish("distill")?;
    println!(
        "distill: student trained on {} labeled + {} pseudo-labeled patches, final loss {:.4}",
        labeled.len(),
        unlabeled.len(),
        logs.last().map(|l| l.train_loss).unwrap_or(f64::NAN)
    );
    Ok(())
}

// ── evaluate ────────────────────────────────────────────────────────────

/// TTA-averaged network probability rows for a patch set, center-cropped
/// to the training input size.
fn network_rows(
    net: &Network<f32>,
    patches: &[Patch],
    crop: usize,
    rounds: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>, CliError> {
    let ops = tta_ops(rounds);
    let mut working = net.clone();
    let mut rows = Vec::with_capacity(patches.len());
    for (i, patch) in patches.iter().enumerate() {
        let crop_size = crop.min(patch.size());
        let view = center_crop(patch, crop_size);
        rows.push(tta_predict(&mut working, &view, rounds, &ops, derive_seed(seed, i as u64))?);
    }
    Ok(rows)
}

fn forest_rows(
    model: &RandomForestModel,
    patches: &[Patch],
) -> Result<Vec<Vec<f64>>, CliError> {
    patches
        .iter()
        .map(|p| model.predict_proba(&p.center_features()).map_err(CliError::from))
        .collect()
}

fn combine_rows(alpha: f64, a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    a.iter().zip(b).map(|(fa, fb)| combine(alpha, fa, fb)).collect()
}

/// Micro-averaged curve CSVs from pooled one-vs-rest (truth, score) pairs.
fn write_micro_curves(
    run: &mut StageRun,
    name: &str,
    y_true: &[usize],
    rows: &[Vec<f64>],
) -> Result<(), CliError> {
    let k = rows.first().map(|r| r.len()).unwrap_or(0);
    let mut scores = Vec::with_capacity(y_true.len() * k);
    let mut truths = Vec::with_capacity(y_true.len() * k);
    for (s, row) in rows.iter().enumerate() {
        for (c, &p) in row.iter().enumerate() {
            scores.push(p);
            truths.push(y_true[s] == c);
        }
    }
    if let Some((_, curve)) = average_precision(&scores, &truths)? {
        write_text(&run.artifact(&format!("curves_{name}_pr.csv"))?, &curve_csv(&curve))?;
    }
    if let Some((_, curve)) = roc_auc(&scores, &truths)? {
        write_text(&run.artifact(&format!("curves_{name}_roc.csv"))?, &curve_csv(&curve))?;
    }
    Ok(())
}

fn comparison_csv(rows: &[(String, &MetricsReport)]) -> String {
    let mut out = String::from("model,accuracy,weighted_f1,macro_f1,macro_ap,macro_roc_auc\n");
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_default();
    for (name, r) in rows {
        out.push_str(&format!(
            "{name},{:.4},{:.4},{:.4},{},{}\n",
            r.accuracy,
            r.weighted.f1,
            r.macro_avg.f1,
            opt(r.macro_ap),
            opt(r.macro_roc_auc)
        ));
    }
    out
}

/// Evaluate every trained model (and the forest+network ensembles) on the
/// held-out test split; `--cv` instead retrains per fold and aggregates.
pub fn cmd_evaluate(cfg: &RunConfig, force: bool, cv: bool) -> Result<(), CliError> {
    if cv {
        return evaluate_cv(cfg, force);
    }
    let mut run = StageRun::new(&cfg.output_dir, force, cfg.to_pairs())?;
    let taxonomy = load_taxonomy(run.out_dir())?;
    let archive = load_archive(run.out_dir())?;
    let split = load_split(run.out_dir())?;
    run.input(&run.out_dir().join(PATCHES_FILE))?;
    run.input(&run.out_dir().join(SPLIT_FILE))?;

    let (patches, y_true) = patches_for_ids(&archive, &split.test_ids)?;
    let codes = taxonomy.codes().to_vec();
    let eval_seed = derive_seed(cfg.seed, EVAL_STREAM);

    let rf_path = run.out_dir().join(RF_FILE);
    let forest = if rf_path.exists() {
        run.input(&rf_path)?;
        Some(read_forest(&rf_path)?)
    } else {
        None
    };
    let mut nets: Vec<(String, Network<f32>)> = Vec::new();
    for (name, file) in [("cnn", CNN_FILE), ("student", STUDENT_FILE)] {
        let path = run.out_dir().join(file);
        if path.exists() {
            run.input(&path)?;
            nets.push((name.to_string(), read_network(&path)?));
        }
    }
    if forest.is_none() && nets.is_empty() {
        return Err(CliError::data(
            "no trained models in the output directory; run `habmap train-rf` or \
             `habmap train-cnn` first",
        ));
    }

    let mut model_rows: Vec<(String, Vec<Vec<f64>>)> = Vec::new();
    let rf_rows = forest.as_ref().map(|m| forest_rows(m, &patches)).transpose()?;
    if let Some(rows) = &rf_rows {
        model_rows.push(("rf".into(), rows.clone()));
    }
    for (name, net) in &nets {
        let rows = network_rows(net, &patches, cfg.crop_max, cfg.tta_rounds, eval_seed)?;
        if let Some(rf) = &rf_rows {
            let combined = combine_rows(cfg.alpha, rf, &rows);
            let ens_name =
                if name == "cnn" { "ensemble".to_string() } else { format!("ensemble_{name}") };
            model_rows.push((name.clone(), rows));
            model_rows.push((ens_name, combined));
        } else {
            model_rows.push((name.clone(), rows));
        }
    }

    let mut reports: Vec<(String, MetricsReport)> = Vec::new();
    for (name, rows) in &model_rows {
        let report = metrics::evaluate(&y_true, rows, &codes)?;
        write_text(&run.artifact(&format!("metrics_{name}.json"))?, &report.to_json())?;
        write_micro_curves(&mut run, name, &y_true, rows)?;
        reports.push((name.clone(), report));
    }
    let table: Vec<(String, &MetricsReport)> =
        reports.iter().map(|(n, r)| (n.clone(), r)).collect();
    write_text(&run.artifact("comparison.csv")?, &comparison_csv(&table))?;
    run.finish("evaluate")?;
    for (name, report) in &reports {
        println!(
            "evaluate {name}: accuracy {:.4}, weighted F1 {:.4} on {} test points",
            report.accuracy,
            report.weighted.f1,
            report.n_samples
        );
    }
    Ok(())
}

/// K-fold cross-validation: retrain the forest and the attribute-configured
/// network per fold (reusing the fold-independent pretrained stack), then
/// aggregate fold metrics.
fn evaluate_cv(cfg: &RunConfig, force: bool) -> Result<(), CliError> {
    let mut run = StageRun::new(&cfg.output_dir, force, cfg.to_pairs())?;
    let taxonomy = load_taxonomy(run.out_dir())?;
    let archive = load_archive(run.out_dir())?;
    run.input(&run.out_dir().join(PATCHES_FILE))?;
    let raster = load_standardized_raster(run.out_dir())?;
    let codes = taxonomy.codes().to_vec();

    let mut folds = Vec::new();
    for i in 0..cfg.k_folds {
        let path = require(
            run.out_dir().join(format!("fold_{i}.txt")),
            &format!("fold {i} of {}", cfg.k_folds),
            "split",
        )?;
        run.input(&path)?;
        folds.push(read_split(&path)?);
    }

    let channels = raster.channels();
    let mut per_model: BTreeMap<String, Vec<MetricsReport>> = BTreeMap::new();
    for (f, fold) in folds.iter().enumerate() {
        let (train_patches, train_labels) = patches_for_ids(&archive, &fold.train_ids)?;
        let (test_patches, y_true) = patches_for_ids(&archive, &fold.test_ids)?;
        let fs = f as u64;

        let forest = fit_rf(
            &train_patches,
            &train_labels,
            taxonomy.len(),
            cfg.n_trees,
            derive_seed(derive_seed(cfg.seed, RF_STREAM), fs),
        )?;

        let cnn_seed = derive_seed(derive_seed(cfg.seed, CNN_STREAM), fs);
        let mut net =
            build_network(cfg, run.out_dir(), channels, taxonomy.len(), cnn_seed)?;
        let tcfg = TrainConfig {
            epochs: cfg.epochs,
            batch_size: cfg.batch_size,
            learning_rate: cfg.learning_rate,
            augment: train_augment(cfg),
            freeze_conv: cfg.freeze_conv,
            seed: cnn_seed,
        };
        let net = if cfg.semi_supervised {
            train(&mut net, &train_patches, &train_labels, None, &tcfg)?;
            let exclude: Vec<(i64, i64)> = Vec::new();
            let unlabeled = sample_unlabeled(
                &raster,
                cfg.unlabeled_count,
                cfg.patch_size,
                derive_seed(derive_seed(cfg.seed, UNLABELED_STREAM), fs),
                &exclude,
            )?;
            let nscfg = NoisyStudentConfig {
                train: TrainConfig {
                    seed: derive_seed(derive_seed(cfg.seed, DISTILL_STREAM), fs),
                    ..tcfg
                },
                pseudo_tta_rounds: cfg.pseudo_tta_rounds,
                pseudo_tta: tta_ops(cfg.pseudo_tta_rounds),
            };
            noisy_student_train(&net, &train_patches, &train_labels, &unlabeled, &nscfg)?.0
        } else {
            train(&mut net, &train_patches, &train_labels, None, &tcfg)?;
            net
        };

        let eval_seed = derive_seed(derive_seed(cfg.seed, EVAL_STREAM), fs);
        let rf_rows = forest_rows(&forest, &test_patches)?;
        let cnn_rows =
            network_rows(&net, &test_patches, cfg.crop_max, cfg.tta_rounds, eval_seed)?;
        let ens_rows = combine_rows(cfg.alpha, &rf_rows, &cnn_rows);
        for (name, rows) in
            [("rf", rf_rows), ("cnn", cnn_rows), ("ensemble", ens_rows)]
        {
            let report = metrics::evaluate(&y_true, &rows, &codes)?;
            write_text(
                &run.artifact(&format!("metrics_fold{f}_{name}.json"))?,
                &report.to_json(),
            )?;
            per_model.entry(name.to_string()).or_default().push(report);
        }
    }

    let mut comparison =
        String::from("model,weighted_f1_mean,weighted_f1_std,macro_f1_mean,macro_f1_std,accuracy_mean,accuracy_std\n");
    for (name, reports) in &per_model {
        let agg = metrics::crossfold_aggregate(reports)?;
        write_text(
            &run.artifact(&format!("aggregate_{name}.json"))?,
            &serde_json::to_string_pretty(&agg).expect("aggregate serializes"),
        )?;
        let m = |key: &str| agg.metrics.get(key).copied();
        let wf1 = m("weighted_f1").expect("always present");
        let mf1 = m("macro_f1").expect("always present");
        let acc = m("accuracy").expect("always present");
        comparison.push_str(&format!(
            "{name},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4}\n",
            wf1.mean, wf1.std, mf1.mean, mf1.std, acc.mean, acc.std
        ));
        println!(
            "evaluate --cv {name}: weighted F1 {:.4} ± {:.4} over {} folds",
            wf1.mean, wf1.std, reports.len()
        );
    }
    write_text(&run.artifact("comparison_cv.csv")?, &comparison)?;
    run.finish("evaluate-cv")
}

// ── predict-map ─────────────────────────────────────────────────────────

/// Produce the classification maps over the whole ingested raster with the
/// best available models (forest and/or network, ensembled when both).
pub fn cmd_predict_map(cfg: &RunConfig, force: bool) -> Result<(), CliError> {
    let mut run = StageRun::new(&cfg.output_dir, force, cfg.to_pairs())?;
    let raster = load_standardized_raster(run.out_dir())?;
    run.input(&run.out_dir().join(RASTER_FILE))?;

    let rf_path = run.out_dir().join(RF_FILE);
    let forest = if rf_path.exists() {
        run.input(&rf_path)?;
        Some(read_forest(&rf_path)?)
    } else {
        None
    };
    // Prefer the distilled student when present; it is the last model of
    // the training chain.
    let mut network = None;
    for file in [STUDENT_FILE, CNN_FILE] {
        let path = run.out_dir().join(file);
        if path.exists() {
            run.input(&path)?;
            network = Some(read_network(&path)?);
            break;
        }
    }
    if forest.is_none() && network.is_none() {
        return Err(CliError::data(
            "no trained models in the output directory; run `habmap train-rf` or \
             `habmap train-cnn` first",
        ));
    }

    let models = MapModels {
        forest: forest.as_ref(),
        network: network.as_ref(),
        ensemble: EnsembleConfig {
            alpha: cfg.alpha,
            tta_rounds: cfg.tta_rounds,
            tta: tta_ops(cfg.tta_rounds),
        },
    };
    let map_cfg = MapConfig {
        // feed the network its training input size
        patch_size: cfg.crop_max,
        stride: cfg.map_stride,
        tile_size: cfg.map_tile,
        seed: derive_seed(cfg.seed, MAP_STREAM),
    };
    let maps = classify_map(&models, &raster, &map_cfg)?;
    write_container(&run.artifact("map_class.msrs")?, &maps.class_map)?;
    write_container(&run.artifact("map_probabilities.msrs")?, &maps.probabilities)?;
    write_container(&run.artifact("map_confidence.msrs")?, &maps.max_confidence)?;
    run.finish("predict-map")?;
    println!(
        "predict-map: {}x{} map at stride {} ({})",
        maps.class_map.height(),
        maps.class_map.width(),
        cfg.map_stride,
        match (forest.is_some(), network.is_some()) {
            (true, true) => "forest + network ensemble",
            (true, false) => "forest only",
            _ => "network only",
        }
    );
    Ok(())
}

// ── plot ────────────────────────────────────────────────────────────────

/// Render PR/ROC curves and the confusion matrix of a metrics report to
/// SVG files next to the other artifacts.
pub fn cmd_plot(cfg: &RunConfig, report: Option<PathBuf>, force: bool) -> Result<(), CliError> {
    let mut run = StageRun::new(&cfg.output_dir, force, cfg.to_pairs())?;
    let report_path = match report {
        Some(p) => {
            if !p.exists() {
                return Err(CliError::data(format!("metrics report not found at {}", p.display())));
            }
            p
        }
        None => ["metrics_ensemble.json", "metrics_cnn.json", "metrics_rf.json"]
            .iter()
            .map(|n| run.out_dir().join(n))
            .find(|p| p.exists())
            .ok_or_else(|| {
                CliError::data(
                    "no metrics report found; run `habmap evaluate` first or pass --report",
                )
            })?,
    };
    run.input(&report_path)?;
    let stem = report_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "metrics".into());
    let svgs = plotting::render_report(&fs::read_to_string(&report_path)?)?;
    write_text(&run.artifact(&format!("{stem}_pr.svg"))?, &svgs.pr)?;
    write_text(&run.artifact(&format!("{stem}_roc.svg"))?, &svgs.roc)?;
    write_text(&run.artifact(&format!("{stem}_confusion.svg"))?, &svgs.confusion)?;
    run.finish("plot")?;
    println!("plot: wrote {stem}_pr.svg, {stem}_roc.svg, {stem}_confusion.svg");
    Ok(())
}

// ── pipeline ────────────────────────────────────────────────────────────

/// Chain the stages for one row of the model grid: ingest and split, the
/// configured pretraining, network training, optional distillation, the
/// forest baseline, evaluation, and map production.
pub fn cmd_pipeline(cfg: &RunConfig, force: bool) -> Result<(), CliError> {
    cmd_ingest(cfg, force)?;
    cmd_split(cfg, force)?;
    cmd_train_rf(cfg, force)?;
    if cfg.pretraining != Pretraining::None {
        cmd_pretrain(cfg, force)?;
    }
    cmd_train_cnn(cfg, force)?;
    if cfg.semi_supervised {
        cmd_distill(cfg, force)?;
    }
    cmd_evaluate(cfg, force, false)?;
    cmd_predict_map(cfg, force)?;
    Ok(())
}

/// The forest-baseline pipeline: no network stages.
pub fn cmd_pipeline_rf(cfg: &RunConfig, force: bool) -> Result<(), CliError> {
    cmd_ingest(cfg, force)?;
    cmd_split(cfg, force)?;
    cmd_train_rf(cfg, force)?;
    cmd_evaluate(cfg, force, false)?;
    cmd_predict_map(cfg, force)?;
    Ok(())
}
