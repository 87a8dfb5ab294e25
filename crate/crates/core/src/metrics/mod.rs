//! ROC-AUC, confusion matrices, significance testing and TSV reports.

pub mod auc;
pub mod confusion;
pub mod report;
pub mod ttest;

pub use auc::{macro_auc, roc_auc_binary, MacroAuc, ScoredPredictions};
pub use confusion::{confusion_matrix, ConfusionMatrix};
pub use report::{evaluate, mean_std, MetricsReport, ReportRow, ReportTable};
pub use ttest::{paired_t_test_one_tailed, student_t_upper_tail, Degenerate, TTest};
