//! Classification metrics: confusion matrices, accuracy and macro-averaged
//! precision/recall/F1.

use serde::{Deserialize, Serialize};

/// Headline metrics of one evaluation.
///
/// Precision and recall are macro-averaged over all classes; the F1 score is
/// the harmonic mean of the macro precision and macro recall.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub accuracy: f64,
    pub macro_recall: f64,
    pub macro_precision: f64,
    pub macro_f1: f64,
}

/// Counts with rows indexed by true class and columns by predicted class.
pub fn confusion_matrix(truths: &[usize], predictions: &[usize], classes: usize) -> Vec<Vec<usize>> {
    assert_eq!(truths.len(), predictions.len());
    let mut matrix = vec![vec![0usize; classes]; classes];
    for (&t, &p) in truths.iter().zip(predictions) {
        matrix[t][p] += 1;
    }
    matrix
}

/// Metrics from a confusion matrix. Classes with no predictions (or no test
/// samples) contribute zero precision (or recall) to the macro average.
pub fn summarize(confusion: &[Vec<usize>]) -> MetricSummary {
    let classes = confusion.len();
    let total: usize = confusion.iter().flatten().sum();
    let trace: usize = (0..classes).map(|c| confusion[c][c]).sum();
    let accuracy = if total == 0 {
        0.0
    } else {
        trace as f64 / total as f64
    };
    let mut precision_sum = 0.0;
    let mut recall_sum = 0.0;
    for c in 0..classes {
        let col_sum: usize = (0..classes).map(|r| confusion[r][c]).sum();
        let row_sum: usize = confusion[c].iter().sum();
        if col_sum > 0 {
            precision_sum += confusion[c][c] as f64 / col_sum as f64;
        }
        if row_sum > 0 {
            recall_sum += confusion[c][c] as f64 / row_sum as f64;
        }
    }
    let macro_precision = precision_sum / classes as f64;
    let macro_recall = recall_sum / classes as f64;
    let macro_f1 = if macro_precision + macro_recall > 0.0 {
        2.0 * macro_precision * macro_recall / (macro_precision + macro_recall)
    } else {
        0.0
    };
    MetricSummary {
        accuracy,
        macro_recall,
        macro_precision,
        macro_f1,
    }
}

/// Arithmetic mean of several summaries (cross-run or cross-split averaging).
pub fn mean_summary(items: &[MetricSummary]) -> MetricSummary {
    assert!(!items.is_empty());
    let n = items.len() as f64;
    MetricSummary {
        accuracy: items.iter().map(|m| m.accuracy).sum::<f64>() / n,
        macro_recall: items.iter().map(|m| m.macro_recall).sum::<f64>() / n,
        macro_precision: items.iter().map(|m| m.macro_precision).sum::<f64>() / n,
        macro_f1: items.iter().map(|m| m.macro_f1).sum::<f64>() / n,
    }
}
