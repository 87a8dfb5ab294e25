use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::{ArchitectureScale, HEAD_DROPOUT};
use crate::objectives::{LossWeights, RecLoss};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Regime {
    Standard,
    Personalized,
    Multidomain,
    Mixed,
    Finetune,
    Gradrev,
    Tritraining,
    Distillation,
}

impl Regime {
    pub const ALL: [Regime; 8] = [
        Regime::Standard,
        Regime::Personalized,
        Regime::Multidomain,
        Regime::Mixed,
        Regime::Finetune,
        Regime::Gradrev,
        Regime::Tritraining,
        Regime::Distillation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Regime::Standard => "standard",
            Regime::Personalized => "personalized",
            Regime::Multidomain => "multidomain",
            Regime::Mixed => "mixed",
            Regime::Finetune => "finetune",
            Regime::Gradrev => "gradrev",
            Regime::Tritraining => "tritraining",
            Regime::Distillation => "distillation",
        }
    }

    /// Regimes that train on two domains.
    pub fn uses_two_domains(self) -> bool {
        !matches!(self, Regime::Standard | Regime::Personalized)
    }

    fn tag(self) -> u64 {
        Regime::ALL.iter().position(|&r| r == self).expect("listed") as u64
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Regime::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown regime {s:?}")))
    }
}

/// Architecture and objective variants for ablation runs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct Ablations {
    /// Squared instead of absolute reconstruction error.
    pub mse_rec: bool,
    /// Decoder without encoder skip connections.
    pub no_skip: bool,
    /// No decoder: classification loss only.
    pub no_rec: bool,
    /// Pretrain encoder and decoder on reconstruction, then fit the head on a frozen encoder.
    pub no_cls_pretrain: bool,
}

impl Ablations {
    pub fn rec_loss(&self) -> RecLoss {
        if self.mse_rec {
            RecLoss::Mse
        } else {
            RecLoss::Mae
        }
    }

    /// Short label such as `full` or `no_rec+mse_rec`.
    pub fn label(&self) -> String {
        let on: Vec<&str> = [
            (self.no_rec, "no_rec"),
            (self.no_cls_pretrain, "no_cls_pretrain"),
            (self.no_skip, "no_skip"),
            (self.mse_rec, "mse_rec"),
        ]
        .into_iter()
        .filter_map(|(f, n)| f.then_some(n))
        .collect();
        if on.is_empty() {
            "full".into()
        } else {
            on.join("+")
        }
    }
}

/// Target used by the distillation student on teacher-labeled data.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum DistillLoss {
    #[default]
    CrossEntropy,
    Mse,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegimeConfig {
    pub regime: Regime,
    pub scale: ArchitectureScale,
    pub loss_weights: LossWeights,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs allowed for the second phase of fine-tuning; `None` uses `max_epochs`.
    pub finetune_epochs: Option<usize>,
    pub patience: usize,
    /// Relative validation-loss improvement that resets patience (strictly greater).
    pub min_improvement: f64,
    pub ablations: Ablations,
    pub seeds: Vec<u64>,
    /// Fraction of the second domain's training samples that keep labels.
    pub label_fraction: f64,
    /// Start phase two of fine-tuning (and the second pretraining phase) with zeroed Adam moments.
    pub fresh_optimizer: bool,
    /// Weight of the domain cross-entropy in the gradient-reversal regime.
    pub domain_weight: f64,
    /// Multiplier applied to the reversed gradient.
    pub lambda_rev: f64,
    pub distill_loss: DistillLoss,
    pub dropout: f64,
}

impl RegimeConfig {
    /// Defaults for `regime`: lr 1e-3 and batch 16 when personalized, lr 1e-4 and batch 8 otherwise.
    pub fn new(regime: Regime) -> Self {
        let (lr, batch_size) = if regime == Regime::Personalized { (1e-3, 16) } else { (1e-4, 8) };
        Self {
            regime,
            scale: ArchitectureScale::desk(),
            loss_weights: LossWeights::default(),
            lr,
            batch_size,
            max_epochs: 30,
            finetune_epochs: None,
            patience: 3,
            min_improvement: 1e-4,
            ablations: Ablations::default(),
            seeds: vec![0, 1, 2, 3, 4],
            label_fraction: 1.0,
            fresh_optimizer: true,
            domain_weight: 1.0,
            lambda_rev: 1.0,
            distill_loss: DistillLoss::CrossEntropy,
            dropout: HEAD_DROPOUT,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.scale.validate()?;
        self.loss_weights.validate()?;
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.lr));
        }
        if self.batch_size == 0 || self.patience == 0 {
            return bad("batch size and patience must be positive".into());
        }
        if self.seeds.is_empty() {
            return bad("need at least one seed".into());
        }
        if !(self.label_fraction > 0.0 && self.label_fraction <= 1.0) {
            return bad(format!("label fraction {} outside (0, 1]", self.label_fraction));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        for (name, v) in [("min_improvement", self.min_improvement), ("domain_weight", self.domain_weight), ("lambda_rev", self.lambda_rev)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be nonnegative, got {v}"));
            }
        }
        if self.ablations.no_rec && self.ablations.no_cls_pretrain {
            return bad("no_rec and no_cls_pretrain cannot be combined".into());
        }
        if self.ablations != Ablations::default() && self.regime != Regime::Standard {
            return bad(format!("ablations apply to the standard regime only, not {}", self.regime));
        }
        Ok(())
    }

    /// Seed stream for one run, distinct per regime.
    pub fn run_seed(&self, seed: u64) -> u64 {
        crate::data::render::derive_seed(&[seed, 0x7261_6e, self.regime.tag()])
    }
}

/// Plateau decision after the last recorded epoch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StopDecision {
    pub stop: bool,
    /// 1-based epoch with the lowest validation loss (earliest on ties).
    pub best_epoch: usize,
}

/// Stops once `patience` consecutive epochs fail to improve on the best loss
/// so far by a relative margin strictly greater than `min_improvement`.
pub fn early_stop(val_losses: &[f64], patience: usize, min_improvement: f64) -> Result<StopDecision> {
    let Some(&first) = val_losses.first() else {
        return Err(Error::Contract("early stopping needs at least one epoch".into()));
    };
    let mut reference = first;
    let mut stale = 0;
    let mut best_epoch = 1;
    let mut best = first;
    for (i, &l) in val_losses.iter().enumerate().skip(1) {
        if (reference - l) / reference.abs().max(f64::MIN_POSITIVE) > min_improvement {
            reference = l;
            stale = 0;
        } else {
            stale += 1;
        }
        if l < best {
            best = l;
            best_epoch = i + 1;
        }
    }
    Ok(StopDecision { stop: stale >= patience, best_epoch })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plateau_examples() {
        let d = early_stop(&[1.0, 0.9, 0.91, 0.92, 0.93], 3, 1e-4).unwrap();
        assert_eq!(d, StopDecision { stop: true, best_epoch: 2 });
        assert!(!early_stop(&[1.0, 0.9, 0.91, 0.92], 3, 1e-4).unwrap().stop);
        assert_eq!(early_stop(&[1.0; 4], 3, 1e-4).unwrap(), StopDecision { stop: true, best_epoch: 1 });
        let falling: Vec<f64> = (0..50).map(|i| 1.0 / (1.0 + i as f64)).collect();
        for n in 1..=falling.len() {
            assert!(!early_stop(&falling[..n], 3, 1e-4).unwrap().stop);
        }
    }

    #[test]
    fn improvement_of_exactly_epsilon_does_not_reset() {
        let d = early_stop(&[1.0, 0.5, 0.5, 0.5], 3, 0.5).unwrap();
        assert_eq!(d, StopDecision { stop: true, best_epoch: 2 });
        let d = early_stop(&[1.0, 0.5, 0.5, 0.5], 3, 0.49).unwrap();
        assert_eq!(d, StopDecision { stop: false, best_epoch: 2 });
    }

    #[test]
    fn defaults_follow_regime() {
        let p = RegimeConfig::new(Regime::Personalized);
        assert_eq!((p.lr, p.batch_size), (1e-3, 16));
        for r in [Regime::Standard, Regime::Multidomain] {
            let c = RegimeConfig::new(r);
            assert_eq!((c.lr, c.batch_size, c.patience, c.seeds.len()), (1e-4, 8, 3, 5));
        }
        for r in Regime::ALL {
            assert_eq!(r.name().parse::<Regime>().unwrap(), r);
        }
    }
}
