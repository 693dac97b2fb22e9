//! Annotation ingestion, taxonomy mapping, overlap-aware train/test
//! splitting, k-fold cross-validation, and minimum-distance sampling for
//! coarse-taxonomy pretraining sets.
//!
//! Splits treat test points as protected: any remaining point whose patch
//! would share pixels with a test patch is dropped from train, never the
//! other way around, so the requested test fraction is preserved and no
//! spatial leakage crosses the split.

mod patch_archive;
mod split_file;

pub use patch_archive::{read_patch_archive, read_patch_archive_from, write_patch_archive, PATCH_MAGIC};
pub use split_file::{parse_split, read_split, write_split};

use std::collections::{HashMap, HashSet};
use std::path::Path;

use rand::Rng;
use thiserror::Error;

use crate::raster::shared_grid_pixel;
use crate::rng::{derive_seed, permutation, rng_from_seed};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("taxonomy {name:?} has duplicate code {code:?}")]
    DuplicateCode { name: String, code: String },
    #[error("taxonomy must have at least one code")]
    EmptyTaxonomy,
    #[error("line {line}: expected {expected} columns, found {found}")]
    ColumnCount { line: usize, expected: usize, found: usize },
    #[error("line {line}: bad coordinate {value:?}")]
    BadCoordinate { line: usize, value: String },
    #[error("line {line}: duplicate id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("annotation file is missing the `id,x,y,class_code` header")]
    MissingHeader,
    #[error("test_fraction must be in (0, 1), got {0}")]
    BadTestFraction(f64),
    #[error("patch_size must be odd and >= 1, got {0}")]
    BadPatchSize(usize),
    #[error("pixel_size must be > 0, got {0}")]
    BadPixelSize(f64),
    #[error("every non-test point overlaps the test set; train set is empty")]
    EmptyTrain,
    #[error("k must be >= 2 and <= point count (k={k}, n={n})")]
    BadFoldCount { k: usize, n: usize },
    #[error("could not place point {placed} of {requested}: {max_attempts} consecutive rejections (extent too small for min_dist)")]
    SamplingExhausted { placed: usize, requested: usize, max_attempts: usize },
    #[error("split file: {0}")]
    SplitFormat(String),
    #[error("patch archive: {0}")]
    ArchiveFormat(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One georeferenced single-pixel annotation.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationPoint {
    pub id: String,
    pub x: f64,
    pub y: f64,
    pub class_code: String,
}

/// Ordered class-code list with a contiguous code → index mapping.
#[derive(Debug, Clone)]
pub struct Taxonomy {
    name: String,
    codes: Vec<String>,
    index: HashMap<String, usize>,
}

impl Taxonomy {
    pub fn new(name: &str, codes: Vec<String>) -> Result<Self, DatasetError> {
        if codes.is_empty() {
            return Err(DatasetError::EmptyTaxonomy);
        }
        let mut index = HashMap::with_capacity(codes.len());
        for (i, code) in codes.iter().enumerate() {
            if index.insert(code.clone(), i).is_some() {
                return Err(DatasetError::DuplicateCode {
                    name: name.to_string(),
                    code: code.clone(),
                });
            }
        }
        Ok(Self {
            name: name.to_string(),
            codes,
            index,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }
    pub fn len(&self) -> usize {
        self.codes.len()
    }
    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }
    pub fn codes(&self) -> &[String] {
        &self.codes
    }
    pub fn index_of(&self, code: &str) -> Option<usize> {
        self.index.get(code).copied()
    }
    pub fn code(&self, index: usize) -> &str {
        &self.codes[index]
    }

    /// The 25 Natura2000 habitat codes of the boreal survey area, in
    /// ascending code order.
    pub fn natura2000() -> Self {
        let codes = NATURA2000_REFERENCE
            .iter()
            .map(|(code, _)| code.to_string())
            .collect();
        Self::new("natura2000", codes).expect("built-in codes are unique")
    }

    /// The 44 CORINE Land Cover level-3 class codes, used as a coarse
    /// out-of-domain pretraining taxonomy.
    pub fn corine() -> Self {
        let codes = CORINE_CODES.iter().map(|c| c.to_string()).collect();
        Self::new("corine", codes).expect("built-in codes are unique")
    }
}

/// Natura2000 habitat codes with the reference per-class annotation counts
/// of the survey dataset (2036 points total; largest class 472, smallest 1).
pub const NATURA2000_REFERENCE: [(&str, u64); 25] = [
    ("3110", 28),
    ("3160", 1),
    ("3220", 4),
    ("4060", 472),
    ("4080", 9),
    ("6150", 121),
    ("6270", 1),
    ("6430", 13),
    ("6450", 46),
    ("7140", 165),
    ("7160", 104),
    ("7220", 8),
    ("7230", 26),
    ("7240", 2),
    ("7310", 27),
    ("7320", 17),
    ("8110", 7),
    ("8210", 2),
    ("8220", 64),
    ("9010", 271),
    ("9040", 453),
    ("9050", 58),
    ("9080", 12),
    ("91D0", 19),
    ("91E0", 106),
];

/// CORINE Land Cover level-3 codes (44 classes).
pub const CORINE_CODES: [&str; 44] = [
    "111", "112", "121", "122", "123", "124", "131", "132", "133", "141", "142", "211", "212",
    "213", "221", "222", "223", "231", "241", "242", "243", "244", "311", "312", "313", "321",
    "322", "323", "324", "331", "332", "333", "334", "335", "411", "412", "421", "422", "423",
    "511", "512", "521", "522", "523",
];

/// One rejected annotation row, reported instead of silently dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct RejectedRow {
    /// 1-based line number in the source file.
    pub line: usize,
    pub reason: String,
}

/// Annotation points accepted against a taxonomy plus the per-row
/// rejection report for rows with codes outside the taxonomy.
#[derive(Debug, Clone)]
pub struct LoadedAnnotations {
    pub points: Vec<AnnotationPoint>,
    pub rejected: Vec<RejectedRow>,
}

/// Load a `id,x,y,class_code` CSV of annotation points. Rows whose code is
/// absent from the taxonomy land in the rejection report; structural
/// problems (bad header, wrong column count, non-numeric coordinates,
/// duplicate ids) are hard errors.
pub fn load_annotations(path: &Path, taxonomy: &Taxonomy) -> Result<LoadedAnnotations, DatasetError> {
    let text = std::fs::read_to_string(path)?;
    parse_annotations(&text, taxonomy)
}

/// Parse annotation CSV text. Exposed for fuzzing.
pub fn parse_annotations(text: &str, taxonomy: &Taxonomy) -> Result<LoadedAnnotations, DatasetError> {
    let mut lines = text.lines().enumerate();
    let header = loop {
        match lines.next() {
            Some((_, l)) if l.trim().is_empty() => continue,
            Some((_, l)) => break l,
            None => return Err(DatasetError::MissingHeader),
        }
    };
    let header: Vec<&str> = header.split(',').map(str::trim).collect();
    if header != ["id", "x", "y", "class_code"] {
        return Err(DatasetError::MissingHeader);
    }
    let mut points = Vec::new();
    let mut rejected = Vec::new();
    let mut seen_ids: HashSet<String> = HashSet::new();
    for (lineno, line) in lines {
        let line_trim = line.trim();
        if line_trim.is_empty() {
            continue;
        }
        let line_no = lineno + 1;
        let cols: Vec<&str> = line_trim.split(',').map(str::trim).collect();
        if cols.len() != 4 {
            return Err(DatasetError::ColumnCount {
                line: line_no,
                expected: 4,
                found: cols.len(),
            });
        }
        let parse_coord = |v: &str| -> Result<f64, DatasetError> {
            v.parse::<f64>()
                .ok()
                .filter(|f| f.is_finite())
                .ok_or_else(|| DatasetError::BadCoordinate {
                    line: line_no,
                    value: v.to_string(),
                })
        };
        let x = parse_coord(cols[1])?;
        let y = parse_coord(cols[2])?;
        let id = cols[0].to_string();
        if !seen_ids.insert(id.clone()) {
            return Err(DatasetError::DuplicateId { line: line_no, id });
        }
        let class_code = cols[3].to_string();
        if taxonomy.index_of(&class_code).is_none() {
            rejected.push(RejectedRow {
                line: line_no,
                reason: format!("class code {class_code:?} not in taxonomy {:?}", taxonomy.name()),
            });
            continue;
        }
        points.push(AnnotationPoint { id, x, y, class_code });
    }
    Ok(LoadedAnnotations { points, rejected })
}

/// Render a rejection report as `row,reason` CSV.
pub fn rejection_report_csv(rejected: &[RejectedRow]) -> String {
    let mut out = String::from("row,reason\n");
    for r in rejected {
        let reason = r.reason.replace(',', ";");
        out.push_str(&format!("{},{}\n", r.line, reason));
    }
    out
}

/// Whether the `patch_size`-sided patches around two points share at least
/// one pixel of the common grid (square pixels of `pixel_size` meters,
/// anchored at world origin). True iff the Chebyshev pixel distance is
/// ≤ patch_size − 1.
///
/// Panics if `patch_size` is even or zero, or `pixel_size` ≤ 0.
pub fn patches_overlap(
    p1: &AnnotationPoint,
    p2: &AnnotationPoint,
    patch_size: usize,
    pixel_size: f64,
) -> bool {
    assert!(patch_size % 2 == 1, "patch_size must be odd, got {patch_size}");
    assert!(pixel_size > 0.0, "pixel_size must be > 0, got {pixel_size}");
    let (r1, c1) = shared_grid_pixel(p1.x, p1.y, pixel_size);
    let (r2, c2) = shared_grid_pixel(p2.x, p2.y, pixel_size);
    let dr = (r1 - r2).unsigned_abs();
    let dc = (c1 - c2).unsigned_abs();
    dr.max(dc) <= (patch_size as u64 - 1)
}

/// A train/test id partition with the points dropped for spatial overlap.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitResult {
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub dropped_ids: Vec<String>,
    pub seed: u64,
    pub patch_size: usize,
    pub pixel_size: f64,
}

impl SplitResult {
    /// Select the points named by `ids`, in the id list's order.
    pub fn select<'a>(&self, ids: &[String], points: &'a [AnnotationPoint]) -> Vec<&'a AnnotationPoint> {
        let by_id: HashMap<&str, &AnnotationPoint> =
            points.iter().map(|p| (p.id.as_str(), p)).collect();
        ids.iter().filter_map(|id| by_id.get(id.as_str()).copied()).collect()
    }
}

fn check_split_params(patch_size: usize, pixel_size: f64) -> Result<(), DatasetError> {
    if patch_size % 2 == 0 || patch_size == 0 {
        return Err(DatasetError::BadPatchSize(patch_size));
    }
    if !(pixel_size > 0.0) {
        return Err(DatasetError::BadPixelSize(pixel_size));
    }
    Ok(())
}

/// Partition the non-test points into train and dropped given a protected
/// test set.
fn drop_overlapping(
    points: &[AnnotationPoint],
    test_idx: &HashSet<usize>,
    patch_size: usize,
    pixel_size: f64,
) -> (Vec<String>, Vec<String>) {
    let test_points: Vec<&AnnotationPoint> =
        test_idx.iter().map(|&i| &points[i]).collect();
    let mut train = Vec::new();
    let mut dropped = Vec::new();
    for (i, p) in points.iter().enumerate() {
        if test_idx.contains(&i) {
            continue;
        }
        let overlaps = test_points
            .iter()
            .any(|t| patches_overlap(p, t, patch_size, pixel_size));
        if overlaps {
            dropped.push(p.id.clone());
        } else {
            train.push(p.id.clone());
        }
    }
    (train, dropped)
}

/// Draw a uniform test set of round(fraction·N) points, then drop every
/// remaining point whose patch overlaps any test patch. Test points are
/// protected; only train candidates are ever dropped.
pub fn random_test_split(
    points: &[AnnotationPoint],
    test_fraction: f64,
    patch_size: usize,
    pixel_size: f64,
    seed: u64,
) -> Result<SplitResult, DatasetError> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(DatasetError::BadTestFraction(test_fraction));
    }
    check_split_params(patch_size, pixel_size)?;
    let n = points.len();
    let n_test = ((test_fraction * n as f64).round() as usize).min(n);
    let mut rng = rng_from_seed(seed);
    let order = permutation(n, &mut rng);
    let test_idx: HashSet<usize> = order[..n_test].iter().copied().collect();
    let test_ids: Vec<String> = order[..n_test].iter().map(|&i| points[i].id.clone()).collect();
    let (train_ids, dropped_ids) = drop_overlapping(points, &test_idx, patch_size, pixel_size);
    if train_ids.is_empty() {
        return Err(DatasetError::EmptyTrain);
    }
    Ok(SplitResult {
        train_ids,
        test_ids,
        dropped_ids,
        seed,
        patch_size,
        pixel_size,
    })
}

/// Split into k folds whose test sets partition the points. Each fold's
/// train set is the complement minus the points overlapping that fold's
/// test patches; per-fold seeds derive from the base seed by fold index.
pub fn kfold_split(
    points: &[AnnotationPoint],
    k: usize,
    patch_size: usize,
    pixel_size: f64,
    seed: u64,
) -> Result<Vec<SplitResult>, DatasetError> {
    let n = points.len();
    if k < 2 || n < k {
        return Err(DatasetError::BadFoldCount { k, n });
    }
    check_split_params(patch_size, pixel_size)?;
    let mut rng = rng_from_seed(seed);
    let order = permutation(n, &mut rng);
    let base = n / k;
    let extra = n % k;
    let mut folds = Vec::with_capacity(k);
    let mut start = 0usize;
    for fold in 0..k {
        let size = base + usize::from(fold < extra);
        let chunk = &order[start..start + size];
        start += size;
        let test_idx: HashSet<usize> = chunk.iter().copied().collect();
        let test_ids: Vec<String> = chunk.iter().map(|&i| points[i].id.clone()).collect();
        let (train_ids, dropped_ids) = drop_overlapping(points, &test_idx, patch_size, pixel_size);
        if train_ids.is_empty() {
            return Err(DatasetError::EmptyTrain);
        }
        folds.push(SplitResult {
            train_ids,
            test_ids,
            dropped_ids,
            seed: derive_seed(seed, fold as u64),
            patch_size,
            pixel_size,
        });
    }
    Ok(folds)
}

/// Axis-aligned world rectangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorldExtent {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl WorldExtent {
    pub fn new(min_x: f64, min_y: f64, max_x: f64, max_y: f64) -> Self {
        assert!(max_x > min_x && max_y > min_y, "degenerate extent");
        Self { min_x, min_y, max_x, max_y }
    }
}

/// Sample n points uniform in the extent with every pair at least
/// `min_dist` meters apart (rejection sampling over a spatial hash grid).
/// Fails after `max_attempts` consecutive rejections.
pub fn min_distance_sample(
    extent: WorldExtent,
    n: usize,
    min_dist: f64,
    seed: u64,
    max_attempts: usize,
) -> Result<Vec<(f64, f64)>, DatasetError> {
    assert!(n >= 1, "n must be >= 1");
    assert!(min_dist >= 0.0, "min_dist must be >= 0");
    let mut rng = rng_from_seed(seed);
    let mut accepted: Vec<(f64, f64)> = Vec::with_capacity(n);
    // Cell side = min_dist, so any point within min_dist of a candidate
    // lives in the candidate's 3x3 cell neighborhood.
    let cell = if min_dist > 0.0 { min_dist } else { 1.0 };
    let mut grid: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    let cell_of = |x: f64, y: f64| ((x / cell).floor() as i64, (y / cell).floor() as i64);
    let mut rejections = 0usize;
    while accepted.len() < n {
        let x = rng.gen_range(extent.min_x..extent.max_x);
        let y = rng.gen_range(extent.min_y..extent.max_y);
        let (ci, cj) = cell_of(x, y);
        let mut ok = true;
        if min_dist > 0.0 {
            'scan: for di in -1..=1 {
                for dj in -1..=1 {
                    if let Some(indices) = grid.get(&(ci + di, cj + dj)) {
                        for &i in indices {
                            let (px, py) = accepted[i];
                            if (px - x).hypot(py - y) < min_dist {
                                ok = false;
                                break 'scan;
                            }
                        }
                    }
                }
            }
        }
        if ok {
            grid.entry((ci, cj)).or_default().push(accepted.len());
            accepted.push((x, y));
            rejections = 0;
        } else {
            rejections += 1;
            if rejections >= max_attempts {
                return Err(DatasetError::SamplingExhausted {
                    placed: accepted.len(),
                    requested: n,
                    max_attempts,
                });
            }
        }
    }
    Ok(accepted)
}

/// Per-class annotation counts, indexed by taxonomy class index.
/// Panics if a point's code is outside the taxonomy (annotation loading
/// guarantees membership).
pub fn class_histogram(points: &[AnnotationPoint], taxonomy: &Taxonomy) -> Vec<u64> {
    let mut counts = vec![0u64; taxonomy.len()];
    for p in points {
        let idx = taxonomy
            .index_of(&p.class_code)
            .unwrap_or_else(|| panic!("code {:?} not in taxonomy {:?}", p.class_code, taxonomy.name()));
        counts[idx] += 1;
    }
    counts
}
