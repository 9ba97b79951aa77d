//! Accuracy bookkeeping for Table-1-style reports.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{predict, FusionModel};
use crate::linalg::Scalar;
use crate::train::FeatureSet;
use crate::vocab::QuestionType;

/// Correct/total counters per question type. Counting is order-independent,
/// so tallies from parallel shards can be merged.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AccuracyTally {
    correct: [usize; 5],
    total: [usize; 5],
}

impl AccuracyTally {
    pub fn record(&mut self, question_type: QuestionType, correct: bool) {
        let i = question_type.index();
        self.total[i] += 1;
        if correct {
            self.correct[i] += 1;
        }
    }

    pub fn merge(&mut self, other: &AccuracyTally) {
        for i in 0..5 {
            self.correct[i] += other.correct[i];
            self.total[i] += other.total[i];
        }
    }

    pub fn total(&self) -> usize {
        self.total.iter().sum()
    }

    pub fn correct(&self) -> usize {
        self.correct.iter().sum()
    }

    pub fn report(&self, model_tag: impl Into<String>, inference_seconds: f64) -> Result<EvalReport> {
        let total = self.total();
        if total == 0 {
            return Err(Error::EmptyTestSet);
        }
        let pct = |c: usize, n: usize| if n == 0 { 0.0 } else { 100.0 * c as f64 / n as f64 };
        Ok(EvalReport {
            model_tag: model_tag.into(),
            overall_accuracy: pct(self.correct(), total),
            per_type_accuracy: QuestionType::ALL
                .iter()
                .map(|t| (*t, pct(self.correct[t.index()], self.total[t.index()])))
                .collect(),
            per_type_counts: QuestionType::ALL.iter().map(|t| (*t, self.total[t.index()])).collect(),
            inference_seconds,
            train_seconds: None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model_tag: String,
    /// Percentage in [0, 100].
    pub overall_accuracy: f64,
    pub per_type_accuracy: BTreeMap<QuestionType, f64>,
    pub per_type_counts: BTreeMap<QuestionType, usize>,
    pub inference_seconds: f64,
    /// Wall-clock training time of the evaluated head, when known.
    pub train_seconds: Option<f64>,
}

impl EvalReport {
    pub fn accuracy(&self, question_type: QuestionType) -> Option<f64> {
        self.per_type_accuracy.get(&question_type).copied()
    }

    pub fn total_count(&self) -> usize {
        self.per_type_counts.values().sum()
    }
}

/// True iff the count-weighted mean of the per-type accuracies reproduces the
/// overall accuracy within 1e-9 and every percentage lies in [0, 100].
pub fn decompose_check(report: &EvalReport) -> bool {
    let in_range = |v: f64| v.is_finite() && (0.0..=100.0).contains(&v);
    if !in_range(report.overall_accuracy) {
        return false;
    }
    let mut weighted = 0.0;
    let mut total = 0usize;
    for (ty, &n) in &report.per_type_counts {
        if n == 0 {
            continue;
        }
        let Some(acc) = report.per_type_accuracy.get(ty).copied() else {
            return false;
        };
        if !in_range(acc) {
            return false;
        }
        weighted += acc * n as f64;
        total += n;
    }
    if total == 0 {
        return false;
    }
    (weighted / total as f64 - report.overall_accuracy).abs() <= 1e-9
}

/// Predicted class for every row of `data`, scored in batches.
pub fn predict_all<T: Scalar>(model: &FusionModel<T>, data: &FeatureSet<T>, batch_size: usize) -> Result<Vec<usize>> {
    let rows: Vec<usize> = (0..data.len()).collect();
    let mut out = Vec::with_capacity(data.len());
    for chunk in rows.chunks(batch_size.max(1)) {
        let (images, texts, _) = data.gather(chunk);
        let logits = model.forward_batch(&images, &texts, chunk.len())?;
        for row in logits.chunks_exact(model.config().num_classes) {
            out.push(predict(row)?);
        }
    }
    Ok(out)
}

/// Tallies predictions against labels, bucketed by question type.
pub fn tally(predictions: &[usize], labels: &[usize], types: &[QuestionType]) -> AccuracyTally {
    assert_eq!(predictions.len(), labels.len());
    assert_eq!(predictions.len(), types.len());
    let mut t = AccuracyTally::default();
    for ((p, l), ty) in predictions.iter().zip(labels).zip(types) {
        t.record(*ty, p == l);
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_and_zero() {
        let types = [QuestionType::YesNo, QuestionType::SimpleCount, QuestionType::RoadCondition];
        let labels = [3, 9, 1];
        let r = tally(&labels, &labels, &types).report("stub", 0.0).unwrap();
        assert_eq!(r.overall_accuracy, 100.0);
        for t in types {
            assert_eq!(r.accuracy(t), Some(100.0));
        }
        assert!(decompose_check(&r));

        let r = tally(&[0, 0, 0], &labels, &types).report("zero", 0.0).unwrap();
        assert_eq!(r.overall_accuracy, 0.0);
        assert!(decompose_check(&r));
        assert_eq!(r.total_count(), 3);
    }

    #[test]
    fn empty_is_error() {
        assert_eq!(AccuracyTally::default().report("x", 0.0), Err(Error::EmptyTestSet));
    }

    #[test]
    fn inconsistent_report_fails_check() {
        let types = [QuestionType::YesNo, QuestionType::ComplexCount];
        let mut r = tally(&[3, 1], &[3, 2], &types).report("x", 0.0).unwrap();
        assert!(decompose_check(&r));
        r.overall_accuracy = 60.0;
        assert!(!decompose_check(&r));
        r.overall_accuracy = 50.0;
        r.per_type_accuracy.insert(QuestionType::YesNo, 101.0);
        assert!(!decompose_check(&r));
    }

    #[test]
    fn merge_is_order_free() {
        let mut a = AccuracyTally::default();
        a.record(QuestionType::YesNo, true);
        let mut b = AccuracyTally::default();
        b.record(QuestionType::ImageCondition, false);
        let mut ab = a;
        ab.merge(&b);
        let mut ba = b;
        ba.merge(&a);
        assert_eq!(ab, ba);
        assert_eq!(ab.total(), 2);
        assert_eq!(ab.correct(), 1);
    }
}
