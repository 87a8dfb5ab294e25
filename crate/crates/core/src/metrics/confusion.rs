use crate::metrics::auc::ScoredPredictions;

/// Row-normalized confusion matrix: entry `(i, j)` is the fraction of
/// true-class-`i` samples whose argmax prediction is `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfusionMatrix {
    pub rows: Vec<Vec<f64>>,
    pub counts: Vec<usize>,
}

impl ConfusionMatrix {
    /// True classes with no samples; their rows are all zero.
    pub fn empty_rows(&self) -> Vec<usize> {
        (0..self.counts.len()).filter(|&i| self.counts[i] == 0).collect()
    }
}

pub fn confusion_matrix(preds: &ScoredPredictions) -> ConfusionMatrix {
    let k = preds.n_classes;
    let mut raw = vec![vec![0usize; k]; k];
    for i in 0..preds.len() {
        raw[preds.truth[i]][preds.argmax(i)] += 1;
    }
    let counts: Vec<usize> = raw.iter().map(|r| r.iter().sum()).collect();
    let rows = raw
        .iter()
        .zip(&counts)
        .map(|(r, &n)| r.iter().map(|&v| if n == 0 { 0.0 } else { v as f64 / n as f64 }).collect())
        .collect();
    ConfusionMatrix { rows, counts }
}
