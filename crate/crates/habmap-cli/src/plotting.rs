//! Bridge from a serialized metrics report to SVG charts. The report JSON
//! is parsed structurally (curve thresholds may be non-finite and thus
//! serialized as null; only the x/y coordinates matter for drawing).

use habmap::plot::{confusion_svg, pr_svg, roc_svg, Series};
use serde_json::Value;

use crate::error::CliError;

/// How many per-class curves to draw before falling back to the averaged
/// curves only (legends stop being readable past this).
const MAX_CLASS_SERIES: usize = 8;

pub struct ReportSvgs {
    pub pr: String,
    pub roc: String,
    pub confusion: String,
}

fn bad(msg: &str) -> CliError {
    CliError::data(format!("malformed metrics report: {msg}"))
}

fn curve_points(value: &Value) -> Option<Vec<(f64, f64)>> {
    value
        .as_array()?
        .iter()
        .map(|p| Some((p.get("x")?.as_f64()?, p.get("y")?.as_f64()?)))
        .collect()
}

fn grid_series(report: &Value, key: &str, label: &str) -> Option<Series> {
    let values: Vec<f64> = report
        .pointer(&format!("/curves/{key}"))?
        .as_array()?
        .iter()
        .map(|v| v.as_f64())
        .collect::<Option<_>>()?;
    (!values.is_empty()).then(|| Series::from_grid(label, &values))
}

fn class_series(report: &Value, key: &str, codes: &[String]) -> Vec<Series> {
    let Some(per_class) = report.pointer(&format!("/curves/{key}")).and_then(Value::as_array)
    else {
        return Vec::new();
    };
    if per_class.len() > MAX_CLASS_SERIES {
        return Vec::new();
    }
    per_class
        .iter()
        .enumerate()
        .filter_map(|(i, c)| {
            let points = curve_points(c)?;
            let label = codes.get(i).cloned().unwrap_or_else(|| format!("class {i}"));
            (!points.is_empty()).then(|| Series::new(label, points))
        })
        .collect()
}

/// Render the PR chart, ROC chart, and confusion heatmap of a metrics
/// report JSON string.
pub fn render_report(text: &str) -> Result<ReportSvgs, CliError> {
    let report: Value =
        serde_json::from_str(text).map_err(|e| bad(&format!("not valid JSON ({e})")))?;

    let codes: Vec<String> = report
        .get("per_class")
        .and_then(Value::as_array)
        .ok_or_else(|| bad("missing per_class"))?
        .iter()
        .map(|c| c.get("code").and_then(Value::as_str).map(str::to_string))
        .collect::<Option<_>>()
        .ok_or_else(|| bad("per_class entry without a code"))?;

    let confusion: Vec<Vec<u64>> = report
        .get("confusion")
        .and_then(Value::as_array)
        .ok_or_else(|| bad("missing confusion"))?
        .iter()
        .map(|row| {
            row.as_array()
                .map(|r| r.iter().map(|v| v.as_u64().unwrap_or(0)).collect::<Vec<u64>>())
        })
        .collect::<Option<_>>()
        .ok_or_else(|| bad("confusion is not a matrix"))?;
    if confusion.len() != codes.len() || confusion.iter().any(|r| r.len() != codes.len()) {
        return Err(bad("confusion matrix shape disagrees with the class list"));
    }

    let mut pr_series = class_series(&report, "pr_per_class", &codes);
    if let Some(s) = grid_series(&report, "pr_macro_grid", "macro") {
        pr_series.push(s);
    }
    if let Some(s) = grid_series(&report, "pr_micro_grid", "micro") {
        pr_series.push(s);
    }
    let mut roc_series = class_series(&report, "roc_per_class", &codes);
    if let Some(s) = grid_series(&report, "roc_macro_grid", "macro") {
        roc_series.push(s);
    }
    if let Some(s) = grid_series(&report, "roc_micro_grid", "micro") {
        roc_series.push(s);
    }
    if pr_series.is_empty() || roc_series.is_empty() {
        return Err(bad("no curves to draw"));
    }

    Ok(ReportSvgs {
        pr: pr_svg(&pr_series),
        roc: roc_svg(&roc_series),
        confusion: confusion_svg(&confusion, &codes, true),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use habmap::metrics;

    #[test]
    fn renders_a_real_report_round_tripped_through_json() {
        let y_true = vec![0, 0, 1, 1, 2, 2, 0, 1];
        let rows: Vec<Vec<f64>> = y_true
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let mut row = vec![0.1; 3];
                row[c] = if i % 3 == 0 { 0.5 } else { 0.8 };
                let s: f64 = row.iter().sum();
                row.iter().map(|v| v / s).collect()
            })
            .collect();
        let codes = vec!["a".to_string(), "b".to_string(), "c".to_string()];
        let report = metrics::evaluate(&y_true, &rows, &codes).unwrap();

        let svgs = render_report(&report.to_json()).unwrap();
        assert!(svgs.pr.contains("<svg"));
        assert!(svgs.pr.contains("macro"));
        assert!(svgs.pr.contains(">a<"), "per-class series labeled by code");
        assert!(svgs.roc.contains("stroke-dasharray"));
        assert_eq!(svgs.confusion.matches("class=\"cell\"").count(), 9);
    }

    #[test]
    fn rejects_non_reports() {
        assert!(render_report("not json").is_err());
        assert!(render_report("{}").is_err());
        assert!(render_report(r#"{"per_class": [], "confusion": "x"}"#).is_err());
    }
}
