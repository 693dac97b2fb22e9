//! Classification evaluation: confusion matrices, precision/recall/F1
//! under weighted, macro, and micro averaging, top-k accuracy, average
//! precision, ROC-AUC, PR/ROC curves, and cross-fold aggregation.
//!
//! Conventions pinned here because the alternatives disagree:
//! AP uses step (rectangle) interpolation, ROC-AUC uses trapezoids (and so
//! equals the Mann–Whitney pair statistic with ties counted ½). Per-class
//! metrics with a zero denominator contribute 0 and carry a flag. Curve
//! macro-averages are taken over a shared 101-point recall/FPR grid; micro
//! variants pool all (sample, class) pairs first.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("y_true has {true_len} entries, y_pred/prob has {pred_len}")]
    LengthMismatch { true_len: usize, pred_len: usize },
    #[error("class index {index} out of range (K = {k})")]
    IndexOutOfRange { index: usize, k: usize },
    #[error("probability row {row} has {got} entries, expected {expected}")]
    RowWidth { row: usize, got: usize, expected: usize },
    #[error("top-k requires k <= K (k = {k}, K = {n_classes})")]
    BadK { k: usize, n_classes: usize },
    #[error("need at least {need} folds, got {got}")]
    TooFewFolds { need: usize, got: usize },
    #[error("fold {fold} reports metric set {got:?}, fold 0 reports {expected:?}")]
    InconsistentFolds { fold: usize, got: Vec<String>, expected: Vec<String> },
    #[error("confusion matrix must have K >= 1")]
    EmptyMatrix,
}

// ── Confusion matrix ────────────────────────────────────────────────────

/// K×K integer counts; rows are true classes, columns predicted.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Result<Self, MetricsError> {
        if k == 0 {
            return Err(MetricsError::EmptyMatrix);
        }
        Ok(Self { k, counts: vec![0; k * k] })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn count(&self, true_class: usize, pred_class: usize) -> u64 {
        self.counts[true_class * self.k + pred_class]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Samples of `true_class` (row sum).
    pub fn support(&self, true_class: usize) -> u64 {
        (0..self.k).map(|p| self.count(true_class, p)).sum()
    }

    /// Samples predicted as `pred_class` (column sum).
    pub fn predicted(&self, pred_class: usize) -> u64 {
        (0..self.k).map(|t| self.count(t, pred_class)).sum()
    }

    /// Row-normalized counts; all-zero rows stay zero.
    pub fn normalized(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.k * self.k];
        for t in 0..self.k {
            let s = self.support(t);
            if s == 0 {
                continue;
            }
            for p in 0..self.k {
                out[t * self.k + p] = self.count(t, p) as f64 / s as f64;
            }
        }
        out
    }

    /// Diagonal fraction; 0 on an empty matrix.
    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        let diag: u64 = (0..self.k).map(|i| self.count(i, i)).sum();
        diag as f64 / total as f64
    }
}

pub fn confusion_matrix(
    y_true: &[usize],
    y_pred: &[usize],
    k: usize,
) -> Result<ConfusionMatrix, MetricsError> {
    if y_true.len() != y_pred.len() {
        return Err(MetricsError::LengthMismatch {
            true_len: y_true.len(),
            pred_len: y_pred.len(),
        });
    }
    let mut cm = ConfusionMatrix::new(k)?;
    for (&t, &p) in y_true.iter().zip(y_pred) {
        if t >= k {
            return Err(MetricsError::IndexOutOfRange { index: t, k });
        }
        if p >= k {
            return Err(MetricsError::IndexOutOfRange { index: p, k });
        }
        cm.counts[t * k + p] += 1;
    }
    Ok(cm)
}

// ── Precision / recall / F1 ─────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Averaging {
    Weighted,
    Macro,
    Micro,
}

/// Per-class precision/recall/F1. A zero denominator yields 0 for the
/// affected metric and sets `zero_division`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub support: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub zero_division: bool,
}

pub fn per_class_metrics(cm: &ConfusionMatrix) -> Vec<ClassMetrics> {
    (0..cm.k())
        .map(|c| {
            let tp = cm.count(c, c);
            let support = cm.support(c);
            let predicted = cm.predicted(c);
            let mut zero_division = false;
            let precision = if predicted == 0 {
                zero_division = true;
                0.0
            } else {
                tp as f64 / predicted as f64
            };
            let recall = if support == 0 {
                zero_division = true;
                0.0
            } else {
                tp as f64 / support as f64
            };
            let f1 = if precision + recall == 0.0 {
                if tp == 0 && (support > 0 || predicted > 0) {
                    zero_division = true;
                }
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassMetrics { support, precision, recall, f1, zero_division }
        })
        .collect()
}

/// Averaged (precision, recall, F1) under the chosen scheme.
pub fn precision_recall_f1(cm: &ConfusionMatrix, averaging: Averaging) -> (f64, f64, f64) {
    let per_class = per_class_metrics(cm);
    match averaging {
        Averaging::Weighted => {
            let total: u64 = per_class.iter().map(|m| m.support).sum();
            if total == 0 {
                return (0.0, 0.0, 0.0);
            }
            let mut p = 0.0;
            let mut r = 0.0;
            let mut f = 0.0;
            for m in &per_class {
                let w = m.support as f64 / total as f64;
                p += w * m.precision;
                r += w * m.recall;
                f += w * m.f1;
            }
            (p, r, f)
        }
        Averaging::Macro => {
            let k = per_class.len() as f64;
            let p = per_class.iter().map(|m| m.precision).sum::<f64>() / k;
            let r = per_class.iter().map(|m| m.recall).sum::<f64>() / k;
            let f = per_class.iter().map(|m| m.f1).sum::<f64>() / k;
            (p, r, f)
        }
        Averaging::Micro => {
            // single-label multiclass: TP+FP = TP+FN = N, so the micro
            // triple collapses to accuracy
            let a = cm.accuracy();
            (a, a, a)
        }
    }
}

// ── Top-k ───────────────────────────────────────────────────────────────

/// Indices of the k highest scores, ties broken toward the lower index.
pub fn top_k_indices(row: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Argmax with ties toward the lower index.
pub fn argmax_tie_low(row: &[f64]) -> usize {
    let mut best = 0usize;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn topk_accuracy(
    prob_rows: &[Vec<f64>],
    y_true: &[usize],
    k: usize,
) -> Result<f64, MetricsError> {
    if prob_rows.len() != y_true.len() {
        return Err(MetricsError::LengthMismatch {
            true_len: y_true.len(),
            pred_len: prob_rows.len(),
        });
    }
    if prob_rows.is_empty() {
        return Ok(0.0);
    }
    let n_classes = prob_rows[0].len();
    if k > n_classes || k == 0 {
        return Err(MetricsError::BadK { k, n_classes });
    }
    let mut hits = 0usize;
    for (i, (row, &t)) in prob_rows.iter().zip(y_true).enumerate() {
        if row.len() != n_classes {
            return Err(MetricsError::RowWidth { row: i, got: row.len(), expected: n_classes });
        }
        if t >= n_classes {
            return Err(MetricsError::IndexOutOfRange { index: t, k: n_classes });
        }
        if top_k_indices(row, k).contains(&t) {
            hits += 1;
        }
    }
    Ok(hits as f64 / prob_rows.len() as f64)
}

// ── Threshold metrics: AP and ROC-AUC ───────────────────────────────────

/// One point of a threshold-swept curve. For PR curves x = recall and
/// y = precision; for ROC curves x = FPR and y = TPR.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub threshold: f64,
    pub x: f64,
    pub y: f64,
}

/// Cumulative (threshold, tp, fp) per distinct descending score.
fn threshold_sweep(scores: &[f64], labels: &[bool]) -> Vec<(f64, u64, u64)> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(std::cmp::Ordering::Equal));
    let mut out: Vec<(f64, u64, u64)> = Vec::new();
    let mut tp = 0u64;
    let mut fp = 0u64;
    let mut i = 0usize;
    while i < order.len() {
        let t = scores[order[i]];
        // consume the whole tie group before emitting a point
        while i < order.len() && scores[order[i]] == t {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        out.push((t, tp, fp));
    }
    out
}

/// Average precision by the step rule, plus the PR curve. `None` when no
/// positive labels exist (the metric is undefined, not 0).
pub fn average_precision(
    scores: &[f64],
    labels: &[bool],
) -> Result<Option<(f64, Vec<CurvePoint>)>, MetricsError> {
    if scores.len() != labels.len() {
        return Err(MetricsError::LengthMismatch { true_len: labels.len(), pred_len: scores.len() });
    }
    let positives = labels.iter().filter(|&&l| l).count() as u64;
    if positives == 0 {
        return Ok(None);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    let mut curve = Vec::new();
    for (t, tp, fp) in threshold_sweep(scores, labels) {
        let precision = tp as f64 / (tp + fp) as f64;
        let recall = tp as f64 / positives as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        curve.push(CurvePoint { threshold: t, x: recall, y: precision });
    }
    Ok(Some((ap, curve)))
}

/// ROC-AUC by the trapezoidal rule (ties count ½), plus the ROC curve
/// anchored at (0,0). `None` unless both label values occur.
pub fn roc_auc(
    scores: &[f64],
    labels: &[bool],
) -> Result<Option<(f64, Vec<CurvePoint>)>, MetricsError> {
    if scores.len() != labels.len() {
        return Err(MetricsError::LengthMismatch { true_len: labels.len(), pred_len: scores.len() });
    }
    let positives = labels.iter().filter(|&&l| l).count() as u64;
    let negatives = labels.len() as u64 - positives;
    if positives == 0 || negatives == 0 {
        return Ok(None);
    }
    let mut curve = vec![CurvePoint { threshold: f64::INFINITY, x: 0.0, y: 0.0 }];
    let mut auc = 0.0;
    let (mut prev_fpr, mut prev_tpr) = (0.0f64, 0.0f64);
    for (t, tp, fp) in threshold_sweep(scores, labels) {
        let tpr = tp as f64 / positives as f64;
        let fpr = fp as f64 / negatives as f64;
        auc += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0;
        prev_fpr = fpr;
        prev_tpr = tpr;
        curve.push(CurvePoint { threshold: t, x: fpr, y: tpr });
    }
    Ok(Some((auc, curve)))
}

/// Shared 101-point grid for curve averaging.
pub fn curve_grid() -> Vec<f64> {
    (0..=100).map(|i| i as f64 / 100.0).collect()
}

/// Precision at each grid recall by the step rule: the precision of the
/// first swept point whose recall covers the grid value.
pub fn pr_curve_on_grid(curve: &[CurvePoint]) -> Vec<f64> {
    curve_grid()
        .iter()
        .map(|&r| {
            curve
                .iter()
                .find(|p| p.x >= r - 1e-12)
                .map(|p| p.y)
                .unwrap_or(0.0)
        })
        .collect()
}

/// TPR at each grid FPR by linear interpolation between swept ROC points.
/// At an FPR where the curve is vertical (several TPR values), the highest
/// achievable TPR is taken (upper envelope).
pub fn roc_curve_on_grid(curve: &[CurvePoint]) -> Vec<f64> {
    curve_grid()
        .iter()
        .map(|&f| {
            let mut lo = curve[0];
            let mut hi: Option<CurvePoint> = None;
            for p in curve {
                if p.x <= f + 1e-15 {
                    lo = *p; // last point at or before f carries the max TPR
                } else {
                    hi = Some(*p);
                    break;
                }
            }
            match hi {
                None => lo.y,
                Some(h) => {
                    if (f - lo.x).abs() < 1e-15 {
                        lo.y
                    } else {
                        lo.y + (f - lo.x) / (h.x - lo.x) * (h.y - lo.y)
                    }
                }
            }
        })
        .collect()
}

// ── Report assembly ─────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassReport {
    pub code: String,
    pub support: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub zero_division: bool,
    /// Absent when the class has no positives in y_true.
    pub ap: Option<f64>,
    /// Absent when y_true is single-class for this one-vs-rest problem.
    pub roc_auc: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AveragedTriple {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurveSet {
    /// Per-class PR curves (same order as `per_class`); empty when absent.
    pub pr_per_class: Vec<Vec<CurvePoint>>,
    pub roc_per_class: Vec<Vec<CurvePoint>>,
    /// Macro averages of per-class curves on the shared 101-point grid.
    pub pr_macro_grid: Vec<f64>,
    pub roc_macro_grid: Vec<f64>,
    /// Micro curves over all pooled (sample, class) pairs, on the grid.
    pub pr_micro_grid: Vec<f64>,
    pub roc_micro_grid: Vec<f64>,
}

/// Full evaluation of one model on one test set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub n_samples: usize,
    pub n_classes: usize,
    pub accuracy: f64,
    pub weighted: AveragedTriple,
    #[serde(rename = "macro")]
    pub macro_avg: AveragedTriple,
    pub micro: AveragedTriple,
    /// Top-k accuracy for k ∈ {1, 3, 5} (keys "top1", "top3", "top5");
    /// entries with k > K are omitted.
    pub top_k: BTreeMap<String, f64>,
    /// Mean AP / ROC-AUC over classes where the metric is defined.
    pub macro_ap: Option<f64>,
    pub macro_roc_auc: Option<f64>,
    pub per_class: Vec<ClassReport>,
    pub confusion: Vec<Vec<u64>>,
    pub curves: CurveSet,
}

/// Evaluate probability predictions against integer labels. Class order
/// follows `class_codes`; predictions are argmax with ties toward the
/// lower index.
pub fn evaluate(
    y_true: &[usize],
    prob_rows: &[Vec<f64>],
    class_codes: &[String],
) -> Result<MetricsReport, MetricsError> {
    let k = class_codes.len();
    if k == 0 {
        return Err(MetricsError::EmptyMatrix);
    }
    if y_true.len() != prob_rows.len() {
        return Err(MetricsError::LengthMismatch {
            true_len: y_true.len(),
            pred_len: prob_rows.len(),
        });
    }
    for (i, row) in prob_rows.iter().enumerate() {
        if row.len() != k {
            return Err(MetricsError::RowWidth { row: i, got: row.len(), expected: k });
        }
    }
    let y_pred: Vec<usize> = prob_rows.iter().map(|r| argmax_tie_low(r)).collect();
    let cm = confusion_matrix(y_true, &y_pred, k)?;
    let per_class_prf = per_class_metrics(&cm);
    let weighted = precision_recall_f1(&cm, Averaging::Weighted);
    let macro_avg = precision_recall_f1(&cm, Averaging::Macro);
    let micro = precision_recall_f1(&cm, Averaging::Micro);

    let mut top_k = BTreeMap::new();
    for kk in [1usize, 3, 5] {
        if kk <= k && !prob_rows.is_empty() {
            top_k.insert(format!("top{kk}"), topk_accuracy(prob_rows, y_true, kk)?);
        }
    }

    let mut per_class = Vec::with_capacity(k);
    let mut pr_per_class = Vec::with_capacity(k);
    let mut roc_per_class = Vec::with_capacity(k);
    let mut pr_grids: Vec<Vec<f64>> = Vec::new();
    let mut roc_grids: Vec<Vec<f64>> = Vec::new();
    for (c, code) in class_codes.iter().enumerate() {
        let scores: Vec<f64> = prob_rows.iter().map(|r| r[c]).collect();
        let labels: Vec<bool> = y_true.iter().map(|&t| t == c).collect();
        let ap_curve = average_precision(&scores, &labels)?;
        let auc_curve = roc_auc(&scores, &labels)?;
        let (ap, pr_points) = match ap_curve {
            Some((ap, pts)) => (Some(ap), pts),
            None => (None, Vec::new()),
        };
        let (auc, roc_points) = match auc_curve {
            Some((auc, pts)) => (Some(auc), pts),
            None => (None, Vec::new()),
        };
        if !pr_points.is_empty() {
            pr_grids.push(pr_curve_on_grid(&pr_points));
        }
        if !roc_points.is_empty() {
            roc_grids.push(roc_curve_on_grid(&roc_points));
        }
        let m = &per_class_prf[c];
        per_class.push(ClassReport {
            code: code.clone(),
            support: m.support,
            precision: m.precision,
            recall: m.recall,
            f1: m.f1,
            zero_division: m.zero_division,
            ap,
            roc_auc: auc,
        });
        pr_per_class.push(pr_points);
        roc_per_class.push(roc_points);
    }

    let mean_over = |grids: &[Vec<f64>]| -> Vec<f64> {
        if grids.is_empty() {
            return vec![0.0; 101];
        }
        (0..101)
            .map(|i| grids.iter().map(|g| g[i]).sum::<f64>() / grids.len() as f64)
            .collect()
    };
    let pr_macro_grid = mean_over(&pr_grids);
    let roc_macro_grid = mean_over(&roc_grids);

    // micro: pool every (sample, class) pair into one binary problem
    let mut pooled_scores = Vec::with_capacity(y_true.len() * k);
    let mut pooled_labels = Vec::with_capacity(y_true.len() * k);
    for (row, &t) in prob_rows.iter().zip(y_true) {
        for (c, &s) in row.iter().enumerate() {
            pooled_scores.push(s);
            pooled_labels.push(t == c);
        }
    }
    let pr_micro_grid = match average_precision(&pooled_scores, &pooled_labels)? {
        Some((_, pts)) => pr_curve_on_grid(&pts),
        None => vec![0.0; 101],
    };
    let roc_micro_grid = match roc_auc(&pooled_scores, &pooled_labels)? {
        Some((_, pts)) => roc_curve_on_grid(&pts),
        None => vec![0.0; 101],
    };

    let defined = |vals: Vec<f64>| {
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    };
    let macro_ap = defined(per_class.iter().filter_map(|c| c.ap).collect());
    let macro_roc_auc = defined(per_class.iter().filter_map(|c| c.roc_auc).collect());

    let confusion: Vec<Vec<u64>> = (0..k)
        .map(|t| (0..k).map(|p| cm.count(t, p)).collect())
        .collect();

    Ok(MetricsReport {
        n_samples: y_true.len(),
        n_classes: k,
        accuracy: cm.accuracy(),
        weighted: AveragedTriple { precision: weighted.0, recall: weighted.1, f1: weighted.2 },
        macro_avg: AveragedTriple { precision: macro_avg.0, recall: macro_avg.1, f1: macro_avg.2 },
        micro: AveragedTriple { precision: micro.0, recall: micro.1, f1: micro.2 },
        top_k,
        macro_ap,
        macro_roc_auc,
        per_class,
        confusion,
        curves: CurveSet {
            pr_per_class,
            roc_per_class,
            pr_macro_grid,
            roc_macro_grid,
            pr_micro_grid,
            roc_micro_grid,
        },
    })
}

impl MetricsReport {
    /// Scalar summary metrics by stable name, for cross-fold aggregation
    /// and the comparison table.
    pub fn scalar_metrics(&self) -> BTreeMap<String, f64> {
        let mut m = BTreeMap::new();
        m.insert("accuracy".into(), self.accuracy);
        m.insert("weighted_precision".into(), self.weighted.precision);
        m.insert("weighted_recall".into(), self.weighted.recall);
        m.insert("weighted_f1".into(), self.weighted.f1);
        m.insert("macro_precision".into(), self.macro_avg.precision);
        m.insert("macro_recall".into(), self.macro_avg.recall);
        m.insert("macro_f1".into(), self.macro_avg.f1);
        m.insert("micro_f1".into(), self.micro.f1);
        for (k, v) in &self.top_k {
            m.insert(k.clone(), *v);
        }
        if let Some(ap) = self.macro_ap {
            m.insert("macro_ap".into(), ap);
        }
        if let Some(auc) = self.macro_roc_auc {
            m.insert("macro_roc_auc".into(), auc);
        }
        m
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Render curve points as `threshold,x,y` CSV.
pub fn curve_csv(points: &[CurvePoint]) -> String {
    let mut out = String::from("threshold,x,y\n");
    for p in points {
        out.push_str(&format!("{},{},{}\n", p.threshold, p.x, p.y));
    }
    out
}

// ── Cross-fold aggregation ──────────────────────────────────────────────

/// Per-metric mean and population standard deviation over folds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldAggregate {
    pub n_folds: usize,
    pub metrics: BTreeMap<String, MeanStd>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

pub fn crossfold_aggregate(reports: &[MetricsReport]) -> Result<FoldAggregate, MetricsError> {
    if reports.len() < 2 {
        return Err(MetricsError::TooFewFolds { need: 2, got: reports.len() });
    }
    let per_fold: Vec<BTreeMap<String, f64>> =
        reports.iter().map(|r| r.scalar_metrics()).collect();
    let expected: Vec<String> = per_fold[0].keys().cloned().collect();
    for (i, fold) in per_fold.iter().enumerate().skip(1) {
        let got: Vec<String> = fold.keys().cloned().collect();
        if got != expected {
            return Err(MetricsError::InconsistentFolds { fold: i, got, expected });
        }
    }
    let n = per_fold.len() as f64;
    let mut metrics = BTreeMap::new();
    for name in &expected {
        let vals: Vec<f64> = per_fold.iter().map(|f| f[name]).collect();
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        metrics.insert(name.clone(), MeanStd { mean, std: var.sqrt() });
    }
    Ok(FoldAggregate { n_folds: per_fold.len(), metrics })
}
