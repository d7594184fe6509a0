//! Confusion matrices, threshold metrics, MCC, ROC curves and AUC.
//!
//! Tampered is the positive class. A sample is predicted Tampered when its
//! score is greater than or equal to the threshold.

use serde::{Deserialize, Serialize};

use crate::calibration::ScoredSample;
use crate::dataset::Label;
use crate::util::format_real;

#[derive(thiserror::Error, Debug, PartialEq, Eq)]
pub enum MetricsError {
    #[error("no samples to evaluate")]
    EmptyInput,

    #[error("ROC needs both classes, got {positives} positives and {negatives} negatives")]
    SingleClassInput { positives: usize, negatives: usize },
}

pub type Result<T> = std::result::Result<T, MetricsError>;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn new(tp: u64, fp: u64, tn: u64, fn_: u64) -> Self {
        Self { tp, fp, tn, fn_ }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn positives(&self) -> u64 {
        self.tp + self.fn_
    }

    pub fn negatives(&self) -> u64 {
        self.tn + self.fp
    }

    pub fn tpr(&self) -> f64 {
        ratio(self.tp, self.positives())
    }

    pub fn fpr(&self) -> f64 {
        ratio(self.fp, self.negatives())
    }

    /// The matrix obtained by flipping every prediction.
    pub fn inverted(&self) -> Self {
        Self {
            tp: self.fn_,
            fn_: self.tp,
            fp: self.tn,
            tn: self.fp,
        }
    }

    /// Tallies a list of 0/1 predictions against the samples' labels.
    pub fn from_predictions(samples: &[ScoredSample], predictions: &[bool]) -> Self {
        let mut cm = Self::default();
        for (s, &pred) in samples.iter().zip(predictions) {
            match (s.label.is_positive(), pred) {
                (true, true) => cm.tp += 1,
                (true, false) => cm.fn_ += 1,
                (false, true) => cm.fp += 1,
                (false, false) => cm.tn += 1,
            }
        }
        cm
    }
}

/// `num / den`, or 0 when the denominator is 0.
fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

pub fn confusion_matrix(scores: &[ScoredSample], threshold: f64) -> Result<ConfusionMatrix> {
    if scores.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut cm = ConfusionMatrix::default();
    for s in scores {
        match (s.label.is_positive(), s.score >= threshold) {
            (true, true) => cm.tp += 1,
            (true, false) => cm.fn_ += 1,
            (false, true) => cm.fp += 1,
            (false, false) => cm.tn += 1,
        }
    }
    Ok(cm)
}

/// How per-class precision, recall and F1 are combined.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    /// Positive (Tampered) class only.
    Binary,
    /// Unweighted mean over both classes.
    Macro,
    /// Mean over both classes weighted by class support.
    #[default]
    Weighted,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BasicMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Precision/recall of one class seen as the positive one.
struct ClassStats {
    support: u64,
    correct: u64,
    precision: f64,
    recall: f64,
    f1: f64,
}

fn class_stats(correct: u64, predicted: u64, support: u64) -> ClassStats {
    let precision = ratio(correct, predicted);
    let recall = ratio(correct, support);
    ClassStats {
        support,
        correct,
        precision,
        recall,
        f1: harmonic(precision, recall),
    }
}

pub fn basic_metrics(cm: &ConfusionMatrix, averaging: Averaging) -> Result<BasicMetrics> {
    let total = cm.total();
    if total == 0 {
        return Err(MetricsError::EmptyInput);
    }
    let accuracy = (cm.tp + cm.tn) as f64 / total as f64;
    let pos = class_stats(cm.tp, cm.tp + cm.fp, cm.tp + cm.fn_);
    let neg = class_stats(cm.tn, cm.tn + cm.fn_, cm.tn + cm.fp);
    let (precision, recall, f1) = match averaging {
        Averaging::Binary => (pos.precision, pos.recall, pos.f1),
        Averaging::Macro => (
            (pos.precision + neg.precision) / 2.0,
            (pos.recall + neg.recall) / 2.0,
            (pos.f1 + neg.f1) / 2.0,
        ),
        Averaging::Weighted => {
            let w = |a: f64, b: f64| (pos.support as f64 * a + neg.support as f64 * b) / total as f64;
            // support × recall is the class's correct count, so sum those directly.
            let recall = (pos.correct + neg.correct) as f64 / total as f64;
            (w(pos.precision, neg.precision), recall, w(pos.f1, neg.f1))
        }
    };
    Ok(BasicMetrics {
        accuracy,
        precision,
        recall,
        f1,
    })
}

/// Matthews correlation coefficient; 0 when any marginal is empty.
pub fn mcc(cm: &ConfusionMatrix) -> Result<f64> {
    if cm.total() == 0 {
        return Err(MetricsError::EmptyInput);
    }
    let (tp, fp, tn, fn_) = (cm.tp as u128, cm.fp as u128, cm.tn as u128, cm.fn_ as u128);
    // Flipping every prediction swaps factors within each pair, leaving the product unchanged.
    let a = (tp + fp) * (tn + fn_);
    let b = (tp + fn_) * (tn + fp);
    if a == 0 || b == 0 {
        return Ok(0.0);
    }
    let numerator = (tp * tn) as f64 - (fp * fn_) as f64;
    let denominator = ((a as f64) * (b as f64)).sqrt();
    let value = numerator / denominator;
    Ok(value.clamp(-1.0, 1.0))
}

/// One operating point of a ROC curve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RocPoint {
    /// `+inf` for the leading sentinel.
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
    /// Counts of predicted positives at this threshold.
    pub tp: u64,
    pub fp: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RocCurve {
    points: Vec<RocPoint>,
    positives: u64,
    negatives: u64,
}

impl RocCurve {
    pub fn points(&self) -> &[RocPoint] {
        &self.points
    }

    pub fn positives(&self) -> u64 {
        self.positives
    }

    pub fn negatives(&self) -> u64 {
        self.negatives
    }

    /// CSV with header `threshold,fpr,tpr`; sentinel threshold written as `inf`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("threshold,fpr,tpr\n");
        for p in &self.points {
            out.push_str(&format!(
                "{},{},{}\n",
                format_real(p.threshold),
                format_real(p.fpr),
                format_real(p.tpr)
            ));
        }
        out
    }
}

/// Sweeps every distinct score as a threshold, highest first.
pub fn roc_curve(scores: &[ScoredSample]) -> Result<RocCurve> {
    let positives = scores.iter().filter(|s| s.label.is_positive()).count() as u64;
    let negatives = scores.len() as u64 - positives;
    if positives == 0 || negatives == 0 {
        return Err(MetricsError::SingleClassInput {
            positives: positives as usize,
            negatives: negatives as usize,
        });
    }
    let mut sorted: Vec<(f64, Label)> = scores.iter().map(|s| (s.score, s.label)).collect();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut points = Vec::with_capacity(sorted.len() + 1);
    points.push(RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
        tp: 0,
        fp: 0,
    });
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == t {
            if sorted[i].1.is_positive() {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            threshold: t,
            fpr: fp as f64 / negatives as f64,
            tpr: tp as f64 / positives as f64,
            tp,
            fp,
        });
    }
    Ok(RocCurve {
        points,
        positives,
        negatives,
    })
}

/// Trapezoidal area under the curve.
///
/// Each trapezoid is accumulated on the count scale (`Δfp · (tp_a + tp_b) / 2`)
/// and normalized once at the end.
pub fn auc(curve: &RocCurve) -> f64 {
    let twice_area: u128 = curve
        .points
        .windows(2)
        .map(|w| (w[1].fp - w[0].fp) as u128 * (w[0].tp + w[1].tp) as u128)
        .sum();
    twice_area as f64 / (2.0 * curve.positives as f64 * curve.negatives as f64)
}

/// One row of the results table.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub mcc: f64,
    pub auc: f64,
    pub threshold: f64,
    pub averaging: Averaging,
}

impl MetricsRow {
    /// Combines threshold metrics from `cm` with a separately computed AUC.
    pub fn from_confusion(cm: &ConfusionMatrix, auc: f64, threshold: f64, averaging: Averaging) -> Result<Self> {
        let basic = basic_metrics(cm, averaging)?;
        Ok(Self {
            accuracy: basic.accuracy,
            precision: basic.precision,
            recall: basic.recall,
            f1: basic.f1,
            mcc: mcc(cm)?,
            auc,
            threshold,
            averaging,
        })
    }

    /// Every field within its declared range.
    pub fn in_range(&self) -> bool {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        unit(self.accuracy)
            && unit(self.precision)
            && unit(self.recall)
            && unit(self.f1)
            && (-1.0..=1.0).contains(&self.mcc)
            && unit(self.auc)
            && unit(self.threshold)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(label: u8, score: f64) -> ScoredSample {
        ScoredSample::new(format!("{label}-{score}"), Label::try_from(label).unwrap(), score).unwrap()
    }

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
    fn boundary_thresholds() {
        let sc = samples(&[0.9, 0.4, 0.0], &[0.6, 0.1]);
        assert_eq!(confusion_matrix(&sc, 0.0).unwrap(), ConfusionMatrix::new(3, 2, 0, 0));
        assert_eq!(confusion_matrix(&sc, 1.01).unwrap(), ConfusionMatrix::new(0, 0, 2, 3));
        assert_eq!(confusion_matrix(&[], 0.5), Err(MetricsError::EmptyInput));
    }

    #[test]
    fn hand_tally() {
        let sc = vec![s(1, 0.9), s(1, 0.4), s(0, 0.6), s(0, 0.1)];
        assert_eq!(confusion_matrix(&sc, 0.5).unwrap(), ConfusionMatrix::new(1, 1, 1, 1));
        // Ties go positive.
        assert_eq!(confusion_matrix(&sc, 0.4).unwrap(), ConfusionMatrix::new(2, 1, 1, 0));
    }

    #[test]
    fn reference_matrix_metrics() {
        let cm = ConfusionMatrix::new(40, 15, 35, 10);
        let b = basic_metrics(&cm, Averaging::Binary).unwrap();
        assert_eq!(b.accuracy, 0.75);
        assert!((b.precision - 40.0 / 55.0).abs() < 1e-15);
        assert!((b.precision - 0.727273).abs() < 1e-6);
        assert!((b.recall - 0.80).abs() < 1e-15);
        assert!((b.f1 - 0.761905).abs() < 1e-6);
        assert!((mcc(&cm).unwrap() - 0.502519).abs() < 1e-6);
    }

    #[test]
    fn macro_and_weighted_by_hand() {
        let cm = ConfusionMatrix::new(40, 15, 35, 10);
        // negative class: precision 35/45, recall 35/50
        let m = basic_metrics(&cm, Averaging::Macro).unwrap();
        assert!((m.precision - (40.0 / 55.0 + 35.0 / 45.0) / 2.0).abs() < 1e-15);
        assert!((m.recall - (0.8 + 0.7) / 2.0).abs() < 1e-15);
        let w = basic_metrics(&cm, Averaging::Weighted).unwrap();
        assert!((w.precision - (50.0 * 40.0 / 55.0 + 50.0 * 35.0 / 45.0) / 100.0).abs() < 1e-15);
        assert_eq!(w.recall, w.accuracy);
    }

    #[test]
    fn perfect_predictions_score_one_everywhere() {
        let cm = ConfusionMatrix::new(7, 0, 9, 0);
        for avg in [Averaging::Binary, Averaging::Macro, Averaging::Weighted] {
            let b = basic_metrics(&cm, avg).unwrap();
            assert_eq!((b.accuracy, b.precision, b.recall, b.f1), (1.0, 1.0, 1.0, 1.0));
        }
        assert_eq!(mcc(&cm).unwrap(), 1.0);
    }

    #[test]
    fn degenerate_conventions() {
        assert_eq!(mcc(&ConfusionMatrix::new(5, 5, 0, 0)).unwrap(), 0.0);
        let b = basic_metrics(&ConfusionMatrix::new(0, 0, 5, 5), Averaging::Binary).unwrap();
        assert_eq!((b.precision, b.recall, b.f1), (0.0, 0.0, 0.0));
        assert_eq!(
            basic_metrics(&ConfusionMatrix::default(), Averaging::Binary),
            Err(MetricsError::EmptyInput)
        );
        assert_eq!(mcc(&ConfusionMatrix::default()), Err(MetricsError::EmptyInput));
    }

    #[test]
    fn roc_hand_sweep() {
        let curve = roc_curve(&samples(&[0.9], &[0.1])).unwrap();
        let pts: Vec<_> = curve.points().iter().map(|p| (p.threshold, p.fpr, p.tpr)).collect();
        assert_eq!(pts, vec![(f64::INFINITY, 0.0, 0.0), (0.9, 0.0, 1.0), (0.1, 1.0, 1.0)]);
        assert_eq!(auc(&curve), 1.0);
    }

    #[test]
    fn all_tied_scores_give_the_diagonal() {
        let curve = roc_curve(&samples(&[0.3, 0.3], &[0.3, 0.3, 0.3])).unwrap();
        assert_eq!(curve.points().len(), 2);
        assert_eq!((curve.points()[1].fpr, curve.points()[1].tpr), (1.0, 1.0));
        assert_eq!(auc(&curve), 0.5);
    }

    #[test]
    fn auc_pairwise_example() {
        let curve = roc_curve(&samples(&[0.9, 0.4], &[0.8, 0.2])).unwrap();
        assert_eq!(auc(&curve), 0.75);
    }

    #[test]
    fn roc_requires_both_classes() {
        assert!(matches!(
            roc_curve(&samples(&[0.2, 0.3], &[])),
            Err(MetricsError::SingleClassInput {
                positives: 2,
                negatives: 0
            })
        ));
    }

    #[test]
    fn roc_csv_format() {
        let curve = roc_curve(&samples(&[0.9], &[0.1])).unwrap();
        assert_eq!(
            curve.to_csv(),
            "threshold,fpr,tpr\ninf,0,0\n0.90000000000000002,0,1\n0.10000000000000001,1,1\n"
        );
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn cm_strategy() -> impl Strategy<Value = ConfusionMatrix> {
            (0u64..500, 0u64..500, 0u64..500, 0u64..500)
                .prop_filter("non-empty", |(a, b, c, d)| a + b + c + d > 0)
                .prop_map(|(tp, fp, tn, fn_)| ConfusionMatrix::new(tp, fp, tn, fn_))
        }

        fn scored() -> impl Strategy<Value = Vec<ScoredSample>> {
            proptest::collection::vec((any::<bool>(), 0u32..=20), 2..60)
                .prop_filter("both classes", |v| v.iter().any(|x| x.0) && v.iter().any(|x| !x.0))
                .prop_map(|v| {
                    v.into_iter()
                        .enumerate()
                        .map(|(i, (pos, q))| {
                            let label = if pos { Label::Tampered } else { Label::Authentic };
                            ScoredSample::new(format!("{i:03}"), label, q as f64 / 20.0).unwrap()
                        })
                        .collect()
                })
        }

        proptest! {
            #[test]
            fn weighted_recall_equals_accuracy(cm in cm_strategy()) {
                let b = basic_metrics(&cm, Averaging::Weighted).unwrap();
                prop_assert_eq!(b.recall, b.accuracy);
            }

            #[test]
            fn mcc_flips_sign_under_inversion(cm in cm_strategy()) {
                prop_assert_eq!(mcc(&cm.inverted()).unwrap(), -mcc(&cm).unwrap());
            }

            #[test]
            fn rows_stay_in_range(sc in scored(), t in 0.0f64..=1.0) {
                let cm = confusion_matrix(&sc, t).unwrap();
                let area = auc(&roc_curve(&sc).unwrap());
                for avg in [Averaging::Binary, Averaging::Macro, Averaging::Weighted] {
                    let row = MetricsRow::from_confusion(&cm, area, t, avg).unwrap();
                    prop_assert!(row.in_range(), "{:?}", row);
                }
            }

            #[test]
            fn roc_is_monotone(sc in scored()) {
                let curve = roc_curve(&sc).unwrap();
                let pts = curve.points();
                prop_assert_eq!((pts[0].fpr, pts[0].tpr), (0.0, 0.0));
                let last = pts.last().unwrap();
                prop_assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
                for w in pts.windows(2) {
                    prop_assert!(w[0].fpr <= w[1].fpr && w[0].tpr <= w[1].tpr);
                    prop_assert!(w[0].threshold > w[1].threshold);
                }
            }

            #[test]
            fn rank_invariance(sc in scored()) {
                let squashed: Vec<_> = sc
                    .iter()
                    .map(|s| ScoredSample::new(s.id.clone(), s.label, s.score * s.score).unwrap())
                    .collect();
                let a = roc_curve(&sc).unwrap();
                let b = roc_curve(&squashed).unwrap();
                let pa: Vec<_> = a.points().iter().map(|p| (p.fpr, p.tpr)).collect();
                let pb: Vec<_> = b.points().iter().map(|p| (p.fpr, p.tpr)).collect();
                prop_assert_eq!(pa, pb);
                prop_assert_eq!(auc(&a), auc(&b));
            }
        }
    }
}
