//! Per-model evaluation reports, multi-model comparison tables and their
//! file formats.
//!
//! Report JSON (schema version 1) is a single compact object with keys in
//! this order:
//!
//! ```text
//! {"schema_version":1,"model_id":…,
//!  "metrics":{"accuracy","precision","recall","f1","mcc","auc","threshold","averaging"},
//!  "confusion":{"tp","fp","tn","fn"},
//!  "calibration":{"model_id","threshold","youden_j","tpr_at_opt","fpr_at_opt","calibrated_on","method"},
//!  "dataset_digest":"<sha256 of the canonical score CSV>",
//!  "config_echo":{"averaging","threshold_method","preprocess":{…}|null}}
//! ```
//!
//! Reals are written with 17 significant digits.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::calibration::{export_scores, CalibrationError, ScoredSample, ThresholdCalibration, ThresholdMethod};
use crate::codec::PreprocessConfig;
use crate::metrics::{self, Averaging, ConfusionMatrix, MetricsError, MetricsRow};
use crate::util::{atomic_write, format_real, sha256_hex, to_json_bytes};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(thiserror::Error, Debug)]
pub enum ReportError {
    #[error(transparent)]
    Metrics(#[from] MetricsError),

    #[error(transparent)]
    Calibration(#[from] CalibrationError),

    #[error("invalid report: {0}")]
    Invalid(String),

    #[error("I/O failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, ReportError>;

/// Settings that produced a report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigEcho {
    pub averaging: Averaging,
    pub threshold_method: ThresholdMethod,
    pub preprocess: Option<PreprocessConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationReport {
    pub schema_version: u32,
    pub model_id: String,
    pub metrics: MetricsRow,
    pub confusion: ConfusionMatrix,
    pub calibration: ThresholdCalibration,
    pub dataset_digest: String,
    pub config_echo: ConfigEcho,
}

/// SHA-256 of the canonical (id-sorted) score CSV.
pub fn scores_digest(scores: &[ScoredSample]) -> String {
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    sha256_hex(&export_scores(&sorted))
}

/// Threshold metrics at `cal.threshold` plus AUC over the full score set.
pub fn evaluate(
    scores: &[ScoredSample],
    cal: &ThresholdCalibration,
    averaging: Averaging,
    preprocess: Option<&PreprocessConfig>,
) -> Result<EvaluationReport> {
    cal.validate()?;
    let confusion = metrics::confusion_matrix(scores, cal.threshold)?;
    let area = metrics::auc(&metrics::roc_curve(scores)?);
    let row = MetricsRow::from_confusion(&confusion, area, cal.threshold, averaging)?;
    Ok(EvaluationReport {
        schema_version: REPORT_SCHEMA_VERSION,
        model_id: cal.model_id.clone(),
        metrics: row,
        confusion,
        calibration: cal.clone(),
        dataset_digest: scores_digest(scores),
        config_echo: ConfigEcho {
            averaging,
            threshold_method: cal.method,
            preprocess: preprocess.cloned(),
        },
    })
}

impl EvaluationReport {
    /// A report carrying externally reported numbers, with no confusion
    /// matrix or score file behind it.
    pub fn from_metrics(model_id: &str, row: MetricsRow) -> Self {
        Self {
            schema_version: REPORT_SCHEMA_VERSION,
            model_id: model_id.to_string(),
            metrics: row,
            confusion: ConfusionMatrix::default(),
            calibration: ThresholdCalibration {
                model_id: model_id.to_string(),
                threshold: row.threshold,
                youden_j: 0.0,
                tpr_at_opt: 0.0,
                fpr_at_opt: 0.0,
                calibrated_on: 0,
                method: ThresholdMethod::Youden,
            },
            dataset_digest: String::new(),
            config_echo: ConfigEcho {
                averaging: row.averaging,
                threshold_method: ThresholdMethod::Youden,
                preprocess: None,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |m: String| Err(ReportError::Invalid(m));
        if self.schema_version != REPORT_SCHEMA_VERSION {
            return invalid(format!("unsupported schema version {}", self.schema_version));
        }
        if !self.metrics.in_range() {
            return invalid(format!("metric out of range: {:?}", self.metrics));
        }
        if self.metrics.threshold != self.calibration.threshold {
            return invalid("metrics.threshold differs from calibration.threshold".into());
        }
        if self.calibration.model_id != self.model_id {
            return invalid("calibration belongs to a different model".into());
        }
        self.calibration.validate()?;
        Ok(())
    }

    pub fn to_json(&self) -> Vec<u8> {
        to_json_bytes(self).expect("report serialization")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let report: Self = serde_json::from_str(text).map_err(|e| ReportError::Invalid(e.to_string()))?;
        report.validate()?;
        Ok(report)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write(path, &self.to_json()).map_err(|source| ReportError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| ReportError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }
}

/// 2×2 grid, rows = actual class, columns = predicted class.
pub fn export_confusion(cm: &ConfusionMatrix) -> String {
    format!(
        ",predicted_authentic,predicted_tampered\nactual_authentic,{},{}\nactual_tampered,{},{}\n",
        cm.tn, cm.fp, cm.fn_, cm.tp
    )
}

/// Compared metric columns.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Column {
    Accuracy,
    Precision,
    Recall,
    F1,
    Mcc,
    Auc,
}

impl Column {
    pub const ALL: [Column; 6] = [
        Column::Accuracy,
        Column::Precision,
        Column::Recall,
        Column::F1,
        Column::Mcc,
        Column::Auc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Column::Accuracy => "accuracy",
            Column::Precision => "precision",
            Column::Recall => "recall",
            Column::F1 => "f1",
            Column::Mcc => "mcc",
            Column::Auc => "auc",
        }
    }

    pub fn value(self, row: &MetricsRow) -> f64 {
        match self {
            Column::Accuracy => row.accuracy,
            Column::Precision => row.precision,
            Column::Recall => row.recall,
            Column::F1 => row.f1,
            Column::Mcc => row.mcc,
            Column::Auc => row.auc,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonRow {
    pub model_id: String,
    pub metrics: MetricsRow,
    /// Columns where this model attains the maximum (ties all marked).
    pub best: Vec<Column>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
}

/// One row per model sorted by model id, with per-column argmax markers.
pub fn compare_models(reports: &[EvaluationReport]) -> ComparisonTable {
    let mut rows: Vec<ComparisonRow> = reports
        .iter()
        .map(|r| ComparisonRow {
            model_id: r.model_id.clone(),
            metrics: r.metrics,
            best: Vec::new(),
        })
        .collect();
    rows.sort_by(|a, b| a.model_id.cmp(&b.model_id));
    for col in Column::ALL {
        let max = rows
            .iter()
            .map(|r| col.value(&r.metrics))
            .fold(f64::NEG_INFINITY, f64::max);
        for r in rows.iter_mut().filter(|r| col.value(&r.metrics) == max) {
            r.best.push(col);
        }
    }
    ComparisonTable { rows }
}

impl ComparisonTable {
    /// Models marked best in `col`.
    pub fn winners(&self, col: Column) -> Vec<&str> {
        self.rows
            .iter()
            .filter(|r| r.best.contains(&col))
            .map(|r| r.model_id.as_str())
            .collect()
    }

    /// Smallest and largest threshold across models.
    pub fn threshold_range(&self) -> Option<(f64, f64)> {
        let ts = self.rows.iter().map(|r| r.metrics.threshold);
        let min = ts.clone().fold(f64::INFINITY, f64::min);
        let max = ts.fold(f64::NEG_INFINITY, f64::max);
        (!self.rows.is_empty()).then_some((min, max))
    }

    /// Aligned plain-text table at 3 decimals; `*` marks the column maximum.
    pub fn to_text(&self) -> String {
        let mut header = vec!["model".to_string()];
        header.extend(Column::ALL.iter().map(|c| c.name().to_string()));
        header.push("threshold".into());
        let mut cells = vec![header];
        for r in &self.rows {
            let mut line = vec![r.model_id.clone()];
            for col in Column::ALL {
                let mark = if r.best.contains(&col) { "*" } else { " " };
                line.push(format!("{:.3}{mark}", col.value(&r.metrics)));
            }
            line.push(format!("{:.3}", r.metrics.threshold));
            cells.push(line);
        }
        let widths: Vec<usize> = (0..cells[0].len())
            .map(|i| cells.iter().map(|l| l[i].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for line in &cells {
            let parts: Vec<String> = line
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (c, &w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
                .collect();
            let _ = writeln!(out, "{}", parts.join("  ").trim_end());
        }
        out
    }

    /// CSV with full-precision values and a `best` column listing the
    /// columns (separated by `;`) where the model is the maximum.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("model_id,accuracy,precision,recall,f1,mcc,auc,threshold,best\n");
        for r in &self.rows {
            let m = &r.metrics;
            let best: Vec<&str> = r.best.iter().map(|c| c.name()).collect();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.model_id,
                format_real(m.accuracy),
                format_real(m.precision),
                format_real(m.recall),
                format_real(m.f1),
                format_real(m.mcc),
                format_real(m.auc),
                format_real(m.threshold),
                best.join(";")
            );
        }
        out
    }
}
