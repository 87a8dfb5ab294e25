//! Epoch loop, batching and evaluation passes shared by every regime.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{AdamState, Gradients, Graph};
use crate::data::{Baseline, Dataset};
use crate::error::{Error, Result};
use crate::metrics::ScoredPredictions;
use crate::model::{forward_personalized, forward_standard, ForwardOptions, ModelWeights};
use crate::objectives::{loss_cls, loss_rec, RecLoss};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::train::config::{early_stop, RegimeConfig};

/// Samples per forward pass during evaluation.
pub const EVAL_CHUNK: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// Training stage within the regime, e.g. `main`, `teacher`, `d2`.
    pub phase: String,
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub records: Vec<EpochRecord>,
    /// Epoch restored at the end of each phase, keyed by phase name.
    pub best_epochs: Vec<(String, usize)>,
}

pub const HISTORY_COLUMNS: &str = "phase\tepoch\ttrain_loss\tval_loss\tbest";

impl History {
    pub fn extend(&mut self, other: History) {
        self.records.extend(other.records);
        self.best_epochs.extend(other.best_epochs);
    }

    pub fn phase(&self, phase: &str) -> impl Iterator<Item = &EpochRecord> + '_ {
        let phase = phase.to_string();
        self.records.iter().filter(move |r| r.phase == phase)
    }

    pub fn to_tsv(&self) -> String {
        let mut s = format!("{HISTORY_COLUMNS}\n");
        for r in &self.records {
            let best = self.best_epochs.iter().any(|(p, e)| *p == r.phase && *e == r.epoch);
            writeln!(s, "{}\t{}\t{:.9e}\t{:.9e}\t{}", r.phase, r.epoch, r.train_loss, r.val_loss, u8::from(best))
                .expect("writing to a String");
        }
        s
    }
}

/// Shuffled mini-batches covering `idx` once; the last batch may be short.
pub fn epoch_batches(idx: &[usize], batch: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order = idx.to_vec();
    order.shuffle(rng);
    order.chunks(batch).map(<[usize]>::to_vec).collect()
}

/// Endless reshuffling source of fixed-size batches over a small pool.
pub struct Cycler {
    pool: Vec<usize>,
    order: Vec<usize>,
    pos: usize,
}

impl Cycler {
    pub fn new(pool: Vec<usize>) -> Self {
        Self { order: Vec::new(), pos: 0, pool }
    }

    pub fn is_empty(&self) -> bool {
        self.pool.is_empty()
    }

    /// Next `n` indices (fewer only if the pool is smaller than `n`).
    pub fn take(&mut self, n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let n = n.min(self.pool.len());
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            if self.pos == self.order.len() {
                self.order = self.pool.clone();
                self.order.shuffle(rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

/// Runs epochs of `step` + Adam until the plateau rule or `max_epochs`, then
/// restores the weights of the epoch with the lowest validation loss.
///
/// `plan` lays out one epoch of batches, `step` returns the batch loss and its
/// gradients, and `validate` scores the current weights.
#[allow(clippy::too_many_arguments)]
pub fn fit<T: Scalar, B>(
    phase: &str,
    weights: &mut ModelWeights<T>,
    adam: &mut AdamState<T>,
    cfg: &RegimeConfig,
    max_epochs: usize,
    rng: &mut ChaCha8Rng,
    mut plan: impl FnMut(&mut ChaCha8Rng) -> Vec<B>,
    mut step: impl FnMut(&ModelWeights<T>, &B, &mut ChaCha8Rng) -> Result<(f64, Gradients<T>)>,
    mut validate: impl FnMut(&ModelWeights<T>) -> Result<f64>,
) -> Result<History> {
    let mut history = History::default();
    let mut val_losses = Vec::new();
    let mut best: Option<(f64, crate::autodiff::ParamStore<T>)> = None;
    for epoch in 1..=max_epochs {
        let batches = plan(rng);
        if batches.is_empty() {
            return Err(Error::Config(format!("phase `{phase}` has no training batches")));
        }
        let mut total = 0.0;
        for b in &batches {
            let (loss, grads) = step(weights, b, rng)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite { op: "training loss" });
            }
            total += loss;
            weights.store.accumulate(&grads)?;
            adam.step(&mut weights.store)?;
        }
        let val = validate(weights)?;
        if !val.is_finite() {
            return Err(Error::NonFinite { op: "validation loss" });
        }
        log::info!("{phase} epoch {epoch}: train {:.5} val {val:.5}", total / batches.len() as f64);
        history.records.push(EpochRecord { phase: phase.into(), epoch, train_loss: total / batches.len() as f64, val_loss: val });
        val_losses.push(val);
        if best.as_ref().map_or(true, |(b, _)| val < *b) {
            best = Some((val, weights.store.clone()));
        }
        let decision = early_stop(&val_losses, cfg.patience, cfg.min_improvement)?;
        if decision.stop {
            break;
        }
    }
    if let Some((_, store)) = best {
        for ((_, dst), (_, src)) in weights.store.iter_mut().zip(store.iter()) {
            dst.tensor.data_mut().copy_from_slice(src.tensor.data());
        }
        let decision = early_stop(&val_losses, cfg.patience, cfg.min_improvement)?;
        history.best_epochs.push((phase.into(), decision.best_epoch));
    }
    Ok(history)
}

fn eval_rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(0)
}

fn eval_opts(decoder: bool) -> ForwardOptions {
    ForwardOptions { decoder, ..ForwardOptions::eval() }
}

/// Class probabilities for `idx` in evaluation mode (no dropout).
///
/// Personalized weights need the subjects' `baselines`.
pub fn predict_probs<T: Scalar>(
    w: &ModelWeights<T>,
    ds: &Dataset,
    idx: &[usize],
    baselines: Option<&BTreeMap<u32, Baseline>>,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(idx.len() * w.scale.n_classes);
    let mut rng = eval_rng();
    for chunk in idx.chunks(EVAL_CHUNK) {
        let mut g = Graph::new(&w.store);
        let x = g.input(ds.inputs::<T>(chunk))?;
        let probs = if w.variant.personalized {
            let b = baselines.ok_or_else(|| Error::Contract("personalized inference needs baselines".into()))?;
            let base = g.input(ds.baseline_inputs::<T>(chunk, b)?)?;
            forward_personalized(&mut g, w, x, base, &eval_opts(false), &mut rng)?.class_probs
        } else {
            forward_standard(&mut g, w, x, &eval_opts(false), &mut rng)?.class_probs
        };
        out.extend(g.value(probs).data().iter().map(|v| v.as_f64()));
    }
    Ok(out)
}

/// Scored predictions against ground truth, for metrics.
pub fn score<T: Scalar>(
    w: &ModelWeights<T>,
    ds: &Dataset,
    idx: &[usize],
    baselines: Option<&BTreeMap<u32, Baseline>>,
) -> Result<ScoredPredictions> {
    let probs = predict_probs(w, ds, idx, baselines)?;
    let ids = idx.iter().map(|&i| ds.samples[i].id).collect();
    ScoredPredictions::new(w.scale.n_classes, probs, ds.eval_classes(idx), ids)
}

/// Mean cross-entropy and mean reconstruction error over `idx` in evaluation mode.
///
/// With personalized weights the reconstruction term is the sum of the
/// current and baseline streams' means. `rec = None` skips the decoder and
/// reports zero.
pub fn eval_losses<T: Scalar>(
    w: &ModelWeights<T>,
    ds: &Dataset,
    idx: &[usize],
    baselines: Option<&BTreeMap<u32, Baseline>>,
    rec: Option<RecLoss>,
) -> Result<(f64, f64)> {
    if idx.is_empty() {
        return Err(Error::Config("evaluation split is empty".into()));
    }
    let (mut ce, mut re) = (0.0, 0.0);
    let mut rng = eval_rng();
    for chunk in idx.chunks(EVAL_CHUNK) {
        let mut g = Graph::new(&w.store);
        let x = g.input(ds.inputs::<T>(chunk))?;
        let labels: Tensor<T> = ds.labels(chunk)?;
        let opts = eval_opts(rec.is_some());
        let (probs, recs) = if w.variant.personalized {
            let b = baselines.ok_or_else(|| Error::Contract("personalized inference needs baselines".into()))?;
            let base = g.input(ds.baseline_inputs::<T>(chunk, b)?)?;
            let o = forward_personalized(&mut g, w, x, base, &opts, &mut rng)?;
            let recs: Vec<_> = o.current_reconstruction.map(|r| (x, r)).into_iter().chain(o.baseline_reconstruction.map(|r| (base, r))).collect();
            (o.class_probs, recs)
        } else {
            let o = forward_standard(&mut g, w, x, &opts, &mut rng)?;
            (o.class_probs, o.reconstruction.map(|r| (x, r)).into_iter().collect())
        };
        let n = chunk.len() as f64;
        let c = loss_cls(&mut g, probs, &labels)?;
        ce += g.scalar(c) * n;
        if let Some(kind) = rec {
            for (input, r) in recs {
                let l = loss_rec(&mut g, input, r, kind)?;
                re += g.scalar(l) * n;
            }
        }
    }
    let n = idx.len() as f64;
    Ok((ce / n, re / n))
}
