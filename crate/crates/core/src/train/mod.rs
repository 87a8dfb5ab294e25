//! Training regimes, early stopping and the epoch loop.

pub mod config;
pub mod engine;
pub mod experiment;
pub mod regimes;

pub use config::{early_stop, Ablations, DistillLoss, Regime, RegimeConfig, StopDecision};
pub use engine::{epoch_batches, eval_losses, fit, predict_probs, score, Cycler, EpochRecord, History, HISTORY_COLUMNS};
pub use regimes::{
    domain_accuracy, eval_baselines, finetune_snapshot, proxy_labels, soft_target_loss, stratified_parts, train_distillation,
    train_finetune, train_gradrev, train_mixed, train_multidomain, train_personalized, train_regime, train_standard,
    train_tritraining, TrainOutcome, D1, D2,
};
pub use experiment::{evaluate_weights, run_experiment, run_seed, Experiment, SeedRun};
