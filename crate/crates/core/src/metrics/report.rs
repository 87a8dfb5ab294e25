//! Per-seed and aggregate metrics, serialized as TSV.
//!
//! Columns: `experiment, regime, label_fraction, seed, eval_set, class, auc, note`.
//! `class` is a glance-class name or `macro`. Aggregate rows carry `mean` or
//! `sd` (sample standard deviation, n - 1) in the `seed` column. An AUC that is
//! undefined for a run is written as `NA` with note `absent`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::data::GlanceClass;
use crate::error::Result;
use crate::metrics::auc::{macro_auc, MacroAuc, ScoredPredictions};
use crate::metrics::confusion::{confusion_matrix, ConfusionMatrix};

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub auc: MacroAuc,
    pub confusion: ConfusionMatrix,
    pub samples: usize,
}

pub fn evaluate(preds: &ScoredPredictions) -> Result<MetricsReport> {
    Ok(MetricsReport { auc: macro_auc(preds)?, confusion: confusion_matrix(preds), samples: preds.len() })
}

/// Mean and sample standard deviation (`n - 1`; zero for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub experiment: String,
    pub regime: String,
    pub label_fraction: f64,
    /// A seed, or `mean` / `sd` for aggregate rows.
    pub seed: String,
    pub eval_set: String,
    pub class: String,
    pub auc: Option<f64>,
    pub note: String,
}

/// Rows for one or more experiments plus the provenance header.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ReportTable {
    pub config_hash: String,
    pub rows: Vec<ReportRow>,
}

pub const REPORT_COLUMNS: &str = "experiment\tregime\tlabel_fraction\tseed\teval_set\tclass\tauc\tnote";

fn class_name(c: usize) -> String {
    GlanceClass::from_code(c as u8).map(|g| g.name().to_string()).unwrap_or_else(|_| format!("class{c}"))
}

impl ReportTable {
    pub fn new(config_hash: impl Into<String>) -> Self {
        Self { config_hash: config_hash.into(), rows: Vec::new() }
    }

    pub fn add_run(&mut self, experiment: &str, regime: &str, label_fraction: f64, seed: u64, eval_set: &str, m: &MetricsReport) {
        let base = ReportRow {
            experiment: experiment.into(),
            regime: regime.into(),
            label_fraction,
            seed: seed.to_string(),
            eval_set: eval_set.into(),
            class: String::new(),
            auc: None,
            note: String::new(),
        };
        for (c, a) in m.auc.per_class.iter().enumerate() {
            let note = if a.is_none() { "absent" } else { "" };
            self.rows.push(ReportRow { class: class_name(c), auc: *a, note: note.into(), ..base.clone() });
        }
        let note = if m.auc.excluded.is_empty() { String::new() } else { format!("excluded={:?}", m.auc.excluded) };
        self.rows.push(ReportRow { class: "macro".into(), auc: Some(m.auc.macro_avg), note, ..base });
    }

    /// Appends `mean` and `sd` rows over seeds for every (experiment, regime,
    /// fraction, eval set, class) group that has per-seed rows.
    pub fn add_aggregates(&mut self) {
        let mut groups: BTreeMap<(String, String, String, String, String), (f64, Vec<f64>)> = BTreeMap::new();
        for r in self.rows.iter().filter(|r| r.seed != "mean" && r.seed != "sd") {
            let key = (r.experiment.clone(), r.regime.clone(), format!("{}", r.label_fraction), r.eval_set.clone(), r.class.clone());
            let entry = groups.entry(key).or_insert((r.label_fraction, Vec::new()));
            if let Some(a) = r.auc {
                entry.1.push(a);
            }
        }
        for ((experiment, regime, _, eval_set, class), (label_fraction, values)) in groups {
            if values.is_empty() {
                continue;
            }
            let (mean, sd) = mean_std(&values);
            let note = format!("n={}", values.len());
            for (seed, v) in [("mean", mean), ("sd", sd)] {
                self.rows.push(ReportRow {
                    experiment: experiment.clone(),
                    regime: regime.clone(),
                    label_fraction,
                    seed: seed.into(),
                    eval_set: eval_set.clone(),
                    class: class.clone(),
                    auc: Some(v),
                    note: note.clone(),
                });
            }
        }
    }

    /// Per-seed macro AUCs for one experiment / eval set, ordered by seed.
    pub fn macro_by_seed(&self, experiment: &str, eval_set: &str) -> Vec<(u64, f64)> {
        let mut out: Vec<(u64, f64)> = self
            .rows
            .iter()
            .filter(|r| r.experiment == experiment && r.eval_set == eval_set && r.class == "macro")
            .filter_map(|r| Some((r.seed.parse().ok()?, r.auc?)))
            .collect();
        out.sort_by_key(|p| p.0);
        out
    }

    pub fn to_tsv(&self) -> String {
        let mut s = format!("# config_hash={}\n{REPORT_COLUMNS}\n", self.config_hash);
        for r in &self.rows {
            let auc = r.auc.map_or_else(|| "NA".to_string(), |a| format!("{a:.6}"));
            writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}\t{}\t{auc}\t{}",
                r.experiment, r.regime, r.label_fraction, r.seed, r.eval_set, r.class, r.note
            )
            .expect("writing to a String");
        }
        s
    }

    /// Parses [`ReportTable::to_tsv`] output. AUCs are read back at the printed precision.
    pub fn from_tsv(text: &str) -> Result<Self> {
        use crate::error::Error;
        let mut table = ReportTable::default();
        let mut offset = 0u64;
        for line in text.lines() {
            let bad = |d: String| Error::Format { offset, detail: d };
            if let Some(rest) = line.strip_prefix("# config_hash=") {
                table.config_hash = rest.to_string();
            } else if line.starts_with('#') || line == REPORT_COLUMNS || line.is_empty() {
            } else {
                let c: Vec<&str> = line.split('\t').collect();
                if c.len() != 8 {
                    return Err(bad(format!("expected 8 report columns, got {}", c.len())));
                }
                table.rows.push(ReportRow {
                    experiment: c[0].into(),
                    regime: c[1].into(),
                    label_fraction: c[2].parse().map_err(|e| bad(format!("label_fraction: {e}")))?,
                    seed: c[3].into(),
                    eval_set: c[4].into(),
                    class: c[5].into(),
                    auc: if c[6] == "NA" { None } else { Some(c[6].parse().map_err(|e| bad(format!("auc: {e}")))?) },
                    note: c[7].into(),
                });
            }
            offset += line.len() as u64 + 1;
        }
        Ok(table)
    }
}
