//! Confusion matrices, accuracy / precision / recall / F1, tabular reports
//! and heatmap plots.
//!
//! A `0/0` metric is reported as `0.0` and the class is flagged
//! `degenerate`, so reports stay totally ordered and serializable.

mod font;
mod plot;

use std::fmt::{Display, Write as _};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use plot::emit_confusion_plot;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("predictions ({preds}) and labels ({labels}) differ in length")]
    LengthMismatch { preds: usize, labels: usize },
    #[error("value {0:?} is not one of the declared classes")]
    UnknownClass(String),
    #[error("no items to evaluate")]
    EmptyInput,
    #[error("confusion matrix has no counts")]
    EmptyMatrix,
    #[error("reports do not share one class set: {0}")]
    InconsistentClasses(String),
    #[error("i/o error at {path}: {message}")]
    Io { path: PathBuf, message: String },
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes.len()).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sum(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    pub fn col_sum(&self, j: usize) -> u64 {
        self.counts.iter().map(|r| r[j]).sum()
    }
}

pub fn confusion_matrix<T: PartialEq + Display>(preds: &[T], labels: &[T], classes: &[T]) -> Result<ConfusionMatrix> {
    if preds.len() != labels.len() {
        return Err(EvalError::LengthMismatch { preds: preds.len(), labels: labels.len() });
    }
    if preds.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let index = |v: &T| classes.iter().position(|c| c == v).ok_or_else(|| EvalError::UnknownClass(v.to_string()));
    let k = classes.len();
    let mut counts = vec![vec![0u64; k]; k];
    for (p, l) in preds.iter().zip(labels) {
        counts[index(l)?][index(p)?] += 1;
    }
    Ok(ConfusionMatrix { classes: classes.iter().map(ToString::to_string).collect(), counts })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Some metric of this class was `0/0` and was reported as 0.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model: String,
    pub dataset: String,
    pub accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    pub matrix: ConfusionMatrix,
}

impl MetricsReport {
    pub fn with_meta(mut self, model: impl Into<String>, dataset: impl Into<String>) -> Self {
        self.model = model.into();
        self.dataset = dataset.into();
        self
    }

    pub fn class(&self, name: &str) -> Option<&ClassMetrics> {
        self.per_class.iter().find(|c| c.class == name)
    }
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

pub fn metrics_from_confusion(matrix: &ConfusionMatrix) -> Result<MetricsReport> {
    let total = matrix.total();
    if total == 0 {
        return Err(EvalError::EmptyMatrix);
    }
    let per_class = matrix
        .classes
        .iter()
        .enumerate()
        .map(|(i, class)| {
            let tp = matrix.counts[i][i];
            let (precision, dp) = ratio(tp, matrix.col_sum(i));
            let (recall, dr) = ratio(tp, matrix.row_sum(i));
            ClassMetrics {
                class: class.clone(),
                precision,
                recall,
                f1: f1_score(precision, recall),
                degenerate: dp || dr || precision + recall == 0.0,
            }
        })
        .collect();
    Ok(MetricsReport {
        model: String::new(),
        dataset: String::new(),
        accuracy: matrix.trace() as f64 / total as f64,
        per_class,
        matrix: matrix.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportLayout {
    /// One column per model; accuracy as a percentage, class metrics as fractions.
    PerModel,
    /// Combiner kinds side by side, all values in percent.
    CombinerComparison,
    /// Image / text / fused models side by side, all values in percent.
    ModalityComparison,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedReport {
    pub text: String,
    pub csv: String,
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// Render a metrics table and its CSV mirror (`model,dataset,class,metric,value`).
pub fn render_report(reports: &[MetricsReport], layout: ReportLayout) -> Result<RenderedReport> {
    let first = reports.first().ok_or(EvalError::EmptyInput)?;
    let classes: Vec<&str> = first.per_class.iter().map(|c| c.class.as_str()).collect();
    for r in reports {
        let other: Vec<&str> = r.per_class.iter().map(|c| c.class.as_str()).collect();
        if other != classes {
            return Err(EvalError::InconsistentClasses(format!("{:?} vs {:?}", classes, other)));
        }
    }

    let title = match layout {
        ReportLayout::PerModel => "Model metrics",
        ReportLayout::CombinerComparison => "Combiner comparison (in percentage)",
        ReportLayout::ModalityComparison => "Image-, text- and image+text-based models (in percentage)",
    };
    let mut datasets: Vec<&str> = reports.iter().map(|r| r.dataset.as_str()).collect();
    datasets.dedup();

    let col_w = reports.iter().map(|r| r.model.len()).max().unwrap_or(0).max(8) + 2;
    let label_w = 10 + classes.iter().map(|c| c.len()).max().unwrap_or(0) + 2;
    let mut text = String::new();
    writeln!(text, "{title}").unwrap();
    if !datasets.iter().all(|d| d.is_empty()) {
        writeln!(text, "dataset: {}", datasets.join(", ")).unwrap();
    }
    write!(text, "{:label_w$}", "").unwrap();
    for r in reports {
        write!(text, "{:>col_w$}", r.model).unwrap();
    }
    text.push('\n');

    write!(text, "{:label_w$}", "Accuracy").unwrap();
    for r in reports {
        let cell = match layout {
            ReportLayout::PerModel => format!("{:.2}%", 100.0 * r.accuracy),
            _ => format!("{:.2}", 100.0 * r.accuracy),
        };
        write!(text, "{cell:>col_w$}").unwrap();
    }
    text.push('\n');

    let metrics: [(&str, fn(&ClassMetrics) -> f64); 3] =
        [("Precision", |c| c.precision), ("Recall", |c| c.recall), ("F1-Score", |c| c.f1)];
    for (name, get) in metrics {
        for (ci, class) in classes.iter().enumerate() {
            let head = if ci == 0 { name } else { "" };
            write!(text, "{:label_w$}", format!("{head:<10}{}", capitalize(class))).unwrap();
            for r in reports {
                let v = get(&r.per_class[ci]);
                let cell = match layout {
                    ReportLayout::PerModel => format!("{v:.2}"),
                    _ => format!("{:.0}", 100.0 * v),
                };
                write!(text, "{cell:>col_w$}").unwrap();
            }
            text.push('\n');
        }
    }

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["model", "dataset", "class", "metric", "value"]).unwrap();
    for r in reports {
        w.write_record([r.model.as_str(), &r.dataset, "all", "accuracy", &format!("{:.6}", r.accuracy)]).unwrap();
        for c in &r.per_class {
            for (metric, v) in [("precision", c.precision), ("recall", c.recall), ("f1", c.f1)] {
                w.write_record([r.model.as_str(), &r.dataset, &c.class, metric, &format!("{v:.6}")]).unwrap();
            }
        }
    }
    let csv = String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf-8 csv");
    Ok(RenderedReport { text, csv })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_predictions_are_diagonal() {
        let labels: Vec<u8> = (0..10).map(|i| i % 3).collect();
        let m = confusion_matrix(&labels, &labels, &[0, 1, 2]).unwrap();
        assert_eq!(m.trace(), 10);
        assert_eq!(m.total(), 10);
        let r = metrics_from_confusion(&m).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert!(r.per_class.iter().all(|c| c.precision == 1.0 && c.recall == 1.0 && c.f1 == 1.0));
    }

    #[test]
    fn direct_count() {
        let m = confusion_matrix(&["f", "m", "m"], &["f", "f", "m"], &["f", "m"]).unwrap();
        assert_eq!(m.counts, vec![vec![1, 1], vec![0, 1]]);
    }

    #[test]
    fn error_contracts() {
        let empty: [&str; 0] = [];
        assert!(matches!(confusion_matrix(&empty, &empty, &["f"]), Err(EvalError::EmptyInput)));
        assert!(matches!(confusion_matrix(&["f"], &["f", "m"], &["f", "m"]), Err(EvalError::LengthMismatch { .. })));
        assert!(matches!(confusion_matrix(&["x"], &["f"], &["f", "m"]), Err(EvalError::UnknownClass(_))));
        let zero = ConfusionMatrix { classes: vec!["a".into()], counts: vec![vec![0]] };
        assert!(matches!(metrics_from_confusion(&zero), Err(EvalError::EmptyMatrix)));
    }

    #[test]
    fn f1_from_rounded_table_values() {
        // 2 * 0.85 * 0.87 / 1.72
        let f1 = f1_score(0.85, 0.87);
        assert!((f1 - 0.859_883_720_930_232_5).abs() < 1e-12);
        assert_eq!((100.0 * f1).round(), 86.0);
    }

    #[test]
    fn never_predicted_class_is_flagged() {
        let m = confusion_matrix(&["f", "f", "f"], &["f", "m", "m"], &["f", "m"]).unwrap();
        let r = metrics_from_confusion(&m).unwrap();
        let male = r.class("m").unwrap();
        assert_eq!((male.precision, male.recall, male.f1), (0.0, 0.0, 0.0));
        assert!(male.degenerate);
        assert!(!r.class("f").unwrap().degenerate);
    }

    fn report(model: &str, classes: &[&str]) -> MetricsReport {
        let m = confusion_matrix(classes, classes, classes).unwrap();
        metrics_from_confusion(&m).unwrap().with_meta(model, "synthetic")
    }

    #[test]
    fn combiner_table_has_one_column_per_kind() {
        let reports: Vec<_> = ["FNN", "XGB", "RF", "SVM", "NB"].iter().map(|k| report(k, &["female", "male"])).collect();
        let out = render_report(&reports, ReportLayout::CombinerComparison).unwrap();
        let header = out.text.lines().nth(2).unwrap();
        let cols: Vec<&str> = header.split_whitespace().collect();
        assert_eq!(cols, vec!["FNN", "XGB", "RF", "SVM", "NB"]);
        assert!(out.text.contains("100.00"));
        assert_eq!(out.csv.lines().count(), 1 + 5 * 7);
        assert_eq!(out.csv.lines().next().unwrap(), "model,dataset,class,metric,value");
    }

    #[test]
    fn single_model_table_uses_fractions() {
        let out = render_report(&[report("ViT", &["female", "male", "unknown"])], ReportLayout::PerModel).unwrap();
        assert!(out.text.contains("100.00%"));
        assert!(out.text.contains("1.00"));
        assert!(!out.text.contains("1.00%"));
        assert!(out.text.contains("Unknown"));
    }

    #[test]
    fn mismatched_classes_rejected() {
        let a = report("a", &["female", "male"]);
        let b = report("b", &["female", "male", "unknown"]);
        assert!(matches!(render_report(&[a, b], ReportLayout::ModalityComparison), Err(EvalError::InconsistentClasses(_))));
        assert!(matches!(render_report(&[], ReportLayout::PerModel), Err(EvalError::EmptyInput)));
    }

    #[test]
    fn csv_is_stable() {
        let r = vec![report("FNN", &["female", "male"])];
        let a = render_report(&r, ReportLayout::CombinerComparison).unwrap();
        let b = render_report(&r, ReportLayout::CombinerComparison).unwrap();
        assert_eq!(a, b);
    }
}
