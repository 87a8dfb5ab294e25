use crate::error::{Error, Result};

/// Area under the ROC curve: `P(score+ > score-) + P(tie) / 2`.
///
/// Sort-based, `O(n log n)`. Wins are counted in integers, so the result is
/// bit-identical to summing pairwise credits of 1 and 1/2.
pub fn roc_auc_binary(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::dim("roc_auc_binary", format!("{} scores vs {} labels", scores.len(), labels.len())));
    }
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(Error::UndefinedAuc(format!("score {i} is NaN")));
    }
    let pos = labels.iter().filter(|&&l| l).count() as u64;
    let neg = labels.len() as u64 - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedAuc(format!("need both classes, got {pos} positive and {neg} negative")));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Twice the number of wins: a positive beats every lower-scored negative
    // and gets half credit for each tied one.
    let mut wins2 = 0u64;
    let mut below = 0u64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut p, mut n) = (0u64, 0u64);
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] {
                p += 1;
            } else {
                n += 1;
            }
            j += 1;
        }
        wins2 += 2 * p * below + p * n;
        below += n;
        i = j;
    }
    Ok(wins2 as f64 / (2 * pos * neg) as f64)
}

/// One-vs-rest AUC per class and their mean.
#[derive(Clone, Debug, PartialEq)]
pub struct MacroAuc {
    /// `None` for classes with no positive (or no negative) sample.
    pub per_class: Vec<Option<f64>>,
    /// Mean over classes with a defined AUC.
    pub macro_avg: f64,
    pub excluded: Vec<usize>,
}

/// Class-probability rows with their true class codes.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredPredictions {
    pub n_classes: usize,
    /// Row-major `[n, n_classes]`.
    pub probs: Vec<f64>,
    pub truth: Vec<usize>,
    pub ids: Vec<u64>,
}

impl ScoredPredictions {
    pub fn new(n_classes: usize, probs: Vec<f64>, truth: Vec<usize>, ids: Vec<u64>) -> Result<Self> {
        if n_classes == 0 || probs.len() != truth.len() * n_classes || ids.len() != truth.len() {
            return Err(Error::dim(
                "scored_predictions",
                format!("{} probabilities, {} labels, {} ids for {n_classes} classes", probs.len(), truth.len(), ids.len()),
            ));
        }
        for (row, &t) in probs.chunks(n_classes).zip(&truth) {
            let total: f64 = row.iter().sum();
            if row.iter().any(|p| !(0.0..=1.0 + 1e-9).contains(p)) || (total - 1.0).abs() > 1e-4 {
                return Err(Error::Contract(format!("probability row {row:?} is not normalized")));
            }
            if t >= n_classes {
                return Err(Error::Contract(format!("true class {t} outside 0..{n_classes}")));
            }
        }
        Ok(Self { n_classes, probs, truth, ids })
    }

    pub fn len(&self) -> usize {
        self.truth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.truth.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.probs[i * self.n_classes..(i + 1) * self.n_classes]
    }

    /// Index of the largest probability; the lowest index wins ties.
    pub fn argmax(&self, i: usize) -> usize {
        let row = self.row(i);
        (0..self.n_classes).fold(0, |best, c| if row[c] > row[best] { c } else { best })
    }

    fn column(&self, c: usize) -> Vec<f64> {
        (0..self.len()).map(|i| self.probs[i * self.n_classes + c]).collect()
    }
}

pub fn macro_auc(preds: &ScoredPredictions) -> Result<MacroAuc> {
    let mut per_class = Vec::with_capacity(preds.n_classes);
    let mut excluded = Vec::new();
    for c in 0..preds.n_classes {
        let labels: Vec<bool> = preds.truth.iter().map(|&t| t == c).collect();
        match roc_auc_binary(&preds.column(c), &labels) {
            Ok(a) => per_class.push(Some(a)),
            Err(Error::UndefinedAuc(_)) => {
                excluded.push(c);
                per_class.push(None);
            }
            Err(e) => return Err(e),
        }
    }
    let defined: Vec<f64> = per_class.iter().flatten().copied().collect();
    if defined.len() < 2 {
        return Err(Error::UndefinedAuc(format!(
            "only {} class(es) have a defined one-vs-rest AUC",
            defined.len()
        )));
    }
    if !excluded.is_empty() {
        log::warn!("classes {excluded:?} are absent from the labels and excluded from the macro average");
    }
    let macro_avg = defined.iter().sum::<f64>() / defined.len() as f64;
    Ok(MacroAuc { per_class, macro_avg, excluded })
}
