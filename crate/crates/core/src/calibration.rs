//! Per-model decision thresholds chosen by maximizing the Youden index
//! `J = TPR - FPR` over the ROC curve, plus the score and calibration file
//! formats that let externally trained models plug into evaluation.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::Label;
use crate::metrics::{self, confusion_matrix, MetricsError};
use crate::util::{atomic_write, format_real, to_json_bytes};

#[derive(thiserror::Error, Debug)]
pub enum CalibrationError {
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("line {line}: {message}")]
    Range { line: u64, message: String },

    #[error("duplicate sample id {0:?}")]
    DuplicateId(String),

    #[error("invalid calibration: {0}")]
    Invalid(String),

    #[error(transparent)]
    Metrics(#[from] MetricsError),

    #[error("I/O failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, CalibrationError>;

/// A model's probability for one labeled sample.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredSample {
    pub id: String,
    pub label: Label,
    pub score: f64,
}

impl ScoredSample {
    pub fn new(id: impl Into<String>, label: Label, score: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&score) {
            return Err(CalibrationError::Range {
                line: 0,
                message: format!("score {score} outside [0, 1]"),
            });
        }
        Ok(Self {
            id: id.into(),
            label,
            score,
        })
    }
}

/// How the stored operating point was chosen.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdMethod {
    #[default]
    Youden,
    Fixed,
}

/// A model's operating point.
///
/// `youden_j` always equals `tpr_at_opt - fpr_at_opt` exactly. For Youden
/// calibrations it lies in [0, 1]; a fixed threshold may sit at a negative J.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdCalibration {
    pub model_id: String,
    pub threshold: f64,
    pub youden_j: f64,
    pub tpr_at_opt: f64,
    pub fpr_at_opt: f64,
    pub calibrated_on: u64,
    #[serde(default)]
    pub method: ThresholdMethod,
}

impl ThresholdCalibration {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        let invalid = |m: String| Err(CalibrationError::Invalid(m));
        if !unit(self.threshold) {
            return invalid(format!("threshold {} outside [0, 1]", self.threshold));
        }
        if !unit(self.tpr_at_opt) || !unit(self.fpr_at_opt) {
            return invalid("tpr/fpr outside [0, 1]".into());
        }
        if self.youden_j != self.tpr_at_opt - self.fpr_at_opt {
            return invalid(format!(
                "youden_j {} != tpr_at_opt - fpr_at_opt ({})",
                self.youden_j,
                self.tpr_at_opt - self.fpr_at_opt
            ));
        }
        if self.method == ThresholdMethod::Youden && self.youden_j < 0.0 {
            return invalid(format!("Youden calibration with negative J {}", self.youden_j));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Vec<u8> {
        to_json_bytes(self).expect("calibration serialization")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cal: Self = serde_json::from_str(text).map_err(|e| CalibrationError::Parse {
            line: e.line() as u64,
            message: e.to_string(),
        })?;
        cal.validate().map_err(|e| CalibrationError::Parse {
            line: 1,
            message: e.to_string(),
        })?;
        Ok(cal)
    }
}

pub fn save_calibration(cal: &ThresholdCalibration, path: &Path) -> Result<()> {
    cal.validate()?;
    atomic_write(path, &cal.to_json()).map_err(|source| CalibrationError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_calibration(path: &Path) -> Result<ThresholdCalibration> {
    let text = fs::read_to_string(path).map_err(|source| CalibrationError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    ThresholdCalibration::from_json(&text)
}

/// Picks the ROC vertex with the largest `TPR - FPR`.
///
/// Only realized scores are candidates: any threshold strictly between two
/// consecutive scores yields the same confusion matrix as the upper one.
/// Ties on J prefer the higher TPR, then the lower threshold.
pub fn youden_optimal_threshold(scores: &[ScoredSample], model_id: &str) -> Result<ThresholdCalibration> {
    let curve = metrics::roc_curve(scores)?;
    let best = curve
        .points()
        .iter()
        .skip(1)
        .max_by(|a, b| {
            let ja = a.tpr - a.fpr;
            let jb = b.tpr - b.fpr;
            ja.total_cmp(&jb)
                .then(a.tpr.total_cmp(&b.tpr))
                .then(b.threshold.total_cmp(&a.threshold))
        })
        .expect("a two-class curve has at least one vertex");
    Ok(ThresholdCalibration {
        model_id: model_id.to_string(),
        threshold: best.threshold,
        youden_j: best.tpr - best.fpr,
        tpr_at_opt: best.tpr,
        fpr_at_opt: best.fpr,
        calibrated_on: scores.len() as u64,
        method: ThresholdMethod::Youden,
    })
}

/// The operating point of a fixed, user-chosen threshold.
pub fn fixed_threshold(scores: &[ScoredSample], model_id: &str, threshold: f64) -> Result<ThresholdCalibration> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(CalibrationError::Invalid(format!(
            "threshold {threshold} outside [0, 1]"
        )));
    }
    let cm = confusion_matrix(scores, threshold)?;
    if cm.positives() == 0 || cm.negatives() == 0 {
        return Err(MetricsError::SingleClassInput {
            positives: cm.positives() as usize,
            negatives: cm.negatives() as usize,
        }
        .into());
    }
    let (tpr, fpr) = (cm.tpr(), cm.fpr());
    Ok(ThresholdCalibration {
        model_id: model_id.to_string(),
        threshold,
        youden_j: tpr - fpr,
        tpr_at_opt: tpr,
        fpr_at_opt: fpr,
        calibrated_on: scores.len() as u64,
        method: ThresholdMethod::Fixed,
    })
}

/// `score >= threshold` for every sample, in input order.
pub fn apply_threshold(scores: &[ScoredSample], cal: &ThresholdCalibration) -> Vec<bool> {
    scores.iter().map(|s| s.score >= cal.threshold).collect()
}

fn csv_writer(out: &mut Vec<u8>) -> csv::Writer<&mut Vec<u8>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out)
}

/// Score CSV: header `id,label,score`, one sample per line.
pub fn export_scores(scores: &[ScoredSample]) -> Vec<u8> {
    let mut out = Vec::new();
    {
        let mut w = csv_writer(&mut out);
        w.write_record(["id", "label", "score"]).expect("in-memory write");
        for s in scores {
            let label = u8::from(s.label).to_string();
            w.write_record([s.id.as_str(), label.as_str(), format_real(s.score).as_str()])
                .expect("in-memory write");
        }
        w.flush().expect("in-memory flush");
    }
    out
}

/// Parses and validates a score CSV, returning samples in id order.
pub fn import_scores(bytes: &[u8]) -> Result<Vec<ScoredSample>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(bytes);
    let mut records = reader.records();
    match records.next() {
        Some(Ok(h)) if h.iter().eq(["id", "label", "score"]) => {}
        Some(Ok(h)) => {
            return Err(CalibrationError::Parse {
                line: 1,
                message: format!(
                    "expected header `id,label,score`, got `{}`",
                    h.iter().collect::<Vec<_>>().join(",")
                ),
            })
        }
        Some(Err(e)) => {
            return Err(CalibrationError::Parse {
                line: 1,
                message: e.to_string(),
            })
        }
        None => {
            return Err(CalibrationError::Parse {
                line: 1,
                message: "empty file".into(),
            })
        }
    }

    let mut out = Vec::new();
    for rec in records {
        let rec = rec.map_err(|e| CalibrationError::Parse {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != 3 {
            return Err(CalibrationError::Parse {
                line,
                message: format!("expected 3 fields, got {}", rec.len()),
            });
        }
        let id = rec[0].to_string();
        if id.is_empty() {
            return Err(CalibrationError::Parse {
                line,
                message: "empty id".into(),
            });
        }
        let label: u8 = rec[1].trim().parse().map_err(|_| CalibrationError::Parse {
            line,
            message: format!("label `{}` is not an integer", &rec[1]),
        })?;
        let label = Label::try_from(label).map_err(|message| CalibrationError::Range { line, message })?;
        let score: f64 = rec[2].trim().parse().map_err(|_| CalibrationError::Parse {
            line,
            message: format!("score `{}` is not a number", &rec[2]),
        })?;
        if !(0.0..=1.0).contains(&score) {
            return Err(CalibrationError::Range {
                line,
                message: format!("score {score} outside [0, 1]"),
            });
        }
        out.push(ScoredSample { id, label, score });
    }
    out.sort_by(|a, b| a.id.cmp(&b.id));
    if let Some(w) = out.windows(2).find(|w| w[0].id == w[1].id) {
        return Err(CalibrationError::DuplicateId(w[0].id.clone()));
    }
    Ok(out)
}

pub fn read_scores(path: &Path) -> Result<Vec<ScoredSample>> {
    let bytes = fs::read(path).map_err(|source| CalibrationError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    import_scores(&bytes)
}

pub fn write_scores(scores: &[ScoredSample], path: &Path) -> Result<()> {
    atomic_write(path, &export_scores(scores)).map_err(|source| CalibrationError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn samples(pos: &[f64], neg: &[f64]) -> Vec<ScoredSample> {
        let mut out = Vec::new();
        for (i, &p) in pos.iter().enumerate() {
            out.push(ScoredSample::new(format!("p{i}"), Label::Tampered, p).unwrap());
        }
        for (i, &n) in neg.iter().enumerate() {
            out.push(ScoredSample::new(format!("n{i}"), Label::Authentic, n).unwrap());
        }
        out
    }

    #[test]
    fn separable_scores() {
        let cal = youden_optimal_threshold(&samples(&[0.9, 0.7], &[0.6, 0.2]), "m").unwrap();
        assert_eq!(cal.threshold, 0.7);
        assert_eq!((cal.youden_j, cal.tpr_at_opt, cal.fpr_at_opt), (1.0, 1.0, 0.0));
        assert_eq!(cal.calibrated_on, 4);
    }

    #[test]
    fn all_tied_is_chance() {
        let cal = youden_optimal_threshold(&samples(&[0.4, 0.4], &[0.4]), "m").unwrap();
        assert_eq!((cal.threshold, cal.youden_j), (0.4, 0.0));
    }

    #[test]
    fn inverted_scorer_lands_on_the_all_positive_corner() {
        let cal = youden_optimal_threshold(&samples(&[0.1, 0.2], &[0.8, 0.9]), "m").unwrap();
        assert_eq!((cal.tpr_at_opt, cal.fpr_at_opt, cal.youden_j), (1.0, 1.0, 0.0));
        assert_eq!(cal.threshold, 0.1);
    }

    #[test]
    fn ties_prefer_higher_tpr() {
        // Points: 0.9 (1/2, 0) J=.5; 0.8 (1/2, 1/2) J=0; 0.7 (1, 1/2) J=.5; 0.1 (1, 1) J=0
        let cal = youden_optimal_threshold(&samples(&[0.9, 0.7], &[0.8, 0.1]), "m").unwrap();
        assert_eq!(cal.threshold, 0.7);
        assert_eq!(cal.tpr_at_opt, 1.0);
    }

    #[test]
    fn single_class_is_an_error() {
        assert!(matches!(
            youden_optimal_threshold(&samples(&[0.9], &[]), "m"),
            Err(CalibrationError::Metrics(MetricsError::SingleClassInput { .. }))
        ));
    }

    #[test]
    fn apply_threshold_examples() {
        let sc = samples(&[0.34], &[0.30]);
        let mut cal = youden_optimal_threshold(&sc, "ResNet50").unwrap();
        cal.threshold = 0.338;
        assert_eq!(apply_threshold(&sc, &cal), vec![true, false]);
        cal.threshold = 0.0;
        assert_eq!(apply_threshold(&sc, &cal), vec![true, true]);
    }

    #[test]
    fn predictions_reproduce_confusion_matrix() {
        let sc = samples(&[0.9, 0.35, 0.6], &[0.5, 0.2, 0.6]);
        let cal = youden_optimal_threshold(&sc, "m").unwrap();
        let preds = apply_threshold(&sc, &cal);
        let via_preds = crate::metrics::ConfusionMatrix::from_predictions(&sc, &preds);
        assert_eq!(via_preds, confusion_matrix(&sc, cal.threshold).unwrap());
        assert_eq!(via_preds.tpr(), cal.tpr_at_opt);
        assert_eq!(via_preds.fpr(), cal.fpr_at_opt);
    }

    #[test]
    fn fixed_threshold_may_have_negative_j() {
        let cal = fixed_threshold(&samples(&[0.1], &[0.9]), "m", 0.5).unwrap();
        assert_eq!(cal.youden_j, -1.0);
        assert_eq!(cal.method, ThresholdMethod::Fixed);
        assert!(cal.validate().is_ok());
        assert!(fixed_threshold(&samples(&[0.1], &[0.9]), "m", 1.5).is_err());
    }

    #[test]
    fn score_csv_happy_path() {
        let text = "id,label,score\nc,1,0.5\na,0,0.25\nb,1,1\n";
        let sc = import_scores(text.as_bytes()).unwrap();
        let ids: Vec<_> = sc.iter().map(|s| s.id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
        assert_eq!(sc[1].label, Label::Tampered);
        assert_eq!(sc[1].score, 1.0);
    }

    #[test]
    fn score_csv_errors() {
        match import_scores(b"id,label,score\na,1,1.5\n") {
            Err(CalibrationError::Range { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        match import_scores(b"id,label,score\na,1,0.5\nb,2,0.5\n") {
            Err(CalibrationError::Range { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        match import_scores(b"id,label,score\na,1,0.5\nb,0\n") {
            Err(CalibrationError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        match import_scores(b"id,label,score\na,1,abc\n") {
            Err(CalibrationError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            import_scores(b"id,score,label\n"),
            Err(CalibrationError::Parse { line: 1, .. })
        ));
        assert!(matches!(
            import_scores(b"id,label,score\na,1,0.5\na,0,0.5\n"),
            Err(CalibrationError::DuplicateId(_))
        ));
    }

    #[test]
    fn score_csv_quotes_awkward_ids() {
        let sc = vec![ScoredSample::new("Tp/a,b \"c\".png", Label::Tampered, 0.1).unwrap()];
        let bytes = export_scores(&sc);
        assert_eq!(import_scores(&bytes).unwrap(), sc);
    }

    #[test]
    fn calibration_json_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        for (name, t) in [("DenseNet121", 0.395), ("ResNet50", 0.338), ("EfficientNetB0", 0.461)] {
            let cal = ThresholdCalibration {
                model_id: name.into(),
                threshold: t,
                youden_j: 0.5 - 0.25,
                tpr_at_opt: 0.5,
                fpr_at_opt: 0.25,
                calibrated_on: 2523,
                method: ThresholdMethod::Youden,
            };
            let path = dir.path().join(format!("{name}.json"));
            save_calibration(&cal, &path).unwrap();
            let back = load_calibration(&path).unwrap();
            assert_eq!(back, cal);
            assert_eq!(back.threshold.to_string(), t.to_string());
        }
    }

    #[test]
    fn calibration_json_layout() {
        let cal = ThresholdCalibration {
            model_id: "m".into(),
            threshold: 0.7,
            youden_j: 1.0,
            tpr_at_opt: 1.0,
            fpr_at_opt: 0.0,
            calibrated_on: 4,
            method: ThresholdMethod::Youden,
        };
        assert_eq!(
            String::from_utf8(cal.to_json()).unwrap(),
            "{\"model_id\":\"m\",\"threshold\":0.69999999999999996,\"youden_j\":1,\"tpr_at_opt\":1,\
             \"fpr_at_opt\":0,\"calibrated_on\":4,\"method\":\"youden\"}\n"
        );
    }

    #[test]
    fn inconsistent_j_is_rejected_on_load() {
        let text = "{\"model_id\":\"m\",\"threshold\":0.5,\"youden_j\":0.4,\"tpr_at_opt\":0.8,\"fpr_at_opt\":0.3,\"calibrated_on\":10}";
        assert!(matches!(
            ThresholdCalibration::from_json(text),
            Err(CalibrationError::Parse { .. })
        ));
        let ok = "{\"model_id\":\"m\",\"threshold\":0.5,\"youden_j\":0.5,\"tpr_at_opt\":0.75,\"fpr_at_opt\":0.25,\"calibrated_on\":10}";
        assert!(ThresholdCalibration::from_json(ok).is_ok());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn scored() -> impl Strategy<Value = Vec<ScoredSample>> {
            proptest::collection::vec((any::<bool>(), 0.0f64..=1.0, any::<bool>()), 2..80)
                .prop_filter("both classes", |v| v.iter().any(|x| x.0) && v.iter().any(|x| !x.0))
                .prop_map(|v| {
                    v.into_iter()
                        .enumerate()
                        .map(|(i, (pos, score, coarse))| {
                            let label = if pos { Label::Tampered } else { Label::Authentic };
                            // Coarse scores create plenty of ties.
                            let score = if coarse { (score * 10.0).round() / 10.0 } else { score };
                            ScoredSample::new(format!("{i:03}"), label, score).unwrap()
                        })
                        .collect()
                })
        }

        proptest! {
            #[test]
            fn export_import_roundtrip(sc in scored()) {
                let mut sorted = sc.clone();
                sorted.sort_by(|a, b| a.id.cmp(&b.id));
                prop_assert_eq!(import_scores(&export_scores(&sc)).unwrap(), sorted);
            }

            #[test]
            fn calibrated_j_beats_any_threshold(sc in scored(), t in 0.0f64..=1.0) {
                let cal = youden_optimal_threshold(&sc, "m").unwrap();
                prop_assert!((0.0..=1.0).contains(&cal.youden_j));
                let cm = confusion_matrix(&sc, t).unwrap();
                prop_assert!(cal.youden_j >= cm.tpr() - cm.fpr());
            }

            #[test]
            fn monotone_transform_equivariance(sc in scored()) {
                let g = |x: f64| x.sqrt();
                let moved: Vec<_> = sc
                    .iter()
                    .map(|s| ScoredSample::new(s.id.clone(), s.label, g(s.score)).unwrap())
                    .collect();
                let a = youden_optimal_threshold(&sc, "m").unwrap();
                let b = youden_optimal_threshold(&moved, "m").unwrap();
                prop_assert_eq!(b.threshold, g(a.threshold));
                prop_assert_eq!((a.tpr_at_opt, a.fpr_at_opt, a.youden_j), (b.tpr_at_opt, b.fpr_at_opt, b.youden_j));
            }
        }
    }
}
