//! The three proposed regimes and the five comparison regimes.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{AdamConfig, AdamState, Gradients, Graph, NodeId};
use crate::data::render::derive_seed;
use crate::data::{Baseline, BaselineFallback, Dataset, Split};
use crate::error::{Error, Result};
use crate::model::{
    build_model, encode, forward_personalized, forward_reconstruction, forward_standard, predict, ForwardOptions,
    ModelVariant, ModelWeights, N_DOMAINS,
};
use crate::objectives::{
    loss_cls, loss_multidomain, loss_personalized, loss_rec, loss_reconstruction_only, loss_standard, Stream,
};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::train::config::{DistillLoss, Regime, RegimeConfig};
use crate::train::engine::{epoch_batches, eval_losses, fit, predict_probs, Cycler, History};

/// Domain id of the richly labeled source domain.
pub const D1: u32 = 0;
/// Domain id of the sparsely labeled target domain.
pub const D2: u32 = 1;

/// Trained weights, the per-epoch record and scalar diagnostics.
#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    pub weights: ModelWeights<T>,
    pub history: History,
    /// Regime-specific diagnostics, e.g. tri-training agreement rate.
    pub notes: Vec<(String, f64)>,
}

/// Everything a regime needs besides the dataset.
struct Run<'a> {
    cfg: &'a RegimeConfig,
    seed: u64,
    rng: ChaCha8Rng,
}

impl<'a> Run<'a> {
    fn new(cfg: &'a RegimeConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let seed = cfg.run_seed(seed);
        Ok(Self { cfg, seed, rng: ChaCha8Rng::seed_from_u64(derive_seed(&[seed, 0])) })
    }

    fn variant(&self) -> ModelVariant {
        ModelVariant {
            personalized: self.cfg.regime == Regime::Personalized,
            domain_head: self.cfg.regime == Regime::Gradrev,
            skip_connections: !self.cfg.ablations.no_skip,
        }
    }

    /// Fresh He-initialized model; `member` separates independently initialized models of one run.
    fn model<T: Scalar>(&self, member: u64) -> Result<ModelWeights<T>> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[self.seed, 1, member]));
        build_model(self.cfg.scale, self.variant(), &mut rng)
    }

    fn adam<T: Scalar>(&self, w: &ModelWeights<T>) -> AdamState<T> {
        AdamState::new(&w.store, AdamConfig::with_lr(self.cfg.lr))
    }

    fn train_opts(&self, decoder: bool) -> ForwardOptions {
        ForwardOptions { training: true, dropout: self.cfg.dropout, decoder, lambda_rev: None }
    }

    fn uses_decoder(&self) -> bool {
        !self.cfg.ablations.no_rec
    }
}

fn train_idx(ds: &Dataset, domain: Option<u32>, labeled: bool) -> Vec<usize> {
    ds.select(|s| s.split == Split::Train && s.labeled == labeled && domain.map_or(true, |d| s.domain == d))
}

fn val_idx(ds: &Dataset, domains: &[u32]) -> Vec<usize> {
    ds.select(|s| s.split == Split::Val && domains.contains(&s.domain))
}

fn require(idx: &[usize], what: &str) -> Result<()> {
    if idx.is_empty() {
        return Err(Error::Config(format!("{what} is empty")));
    }
    Ok(())
}

fn one_hot<T: Scalar>(codes: &[usize], n: usize) -> Tensor<T> {
    let mut t = Tensor::zeros([codes.len(), n]);
    for (row, &c) in codes.iter().enumerate() {
        t.data_mut()[row * n + c] = T::one();
    }
    t
}

/// `[batch, N_DOMAINS]` one-hot domain targets (free metadata, not glance labels).
fn domain_targets<T: Scalar>(ds: &Dataset, idx: &[usize]) -> Tensor<T> {
    let codes: Vec<usize> = idx.iter().map(|&i| usize::from(ds.samples[i].domain != D1)).collect();
    one_hot(&codes, N_DOMAINS)
}

/// Glance targets for a batch: true labels, or proxy labels chosen by the regime.
type Targets<'t, T> = dyn Fn(&[usize]) -> Result<Tensor<T>> + 't;

fn supervised_step<T: Scalar>(
    run: &Run<'_>,
    w: &ModelWeights<T>,
    ds: &Dataset,
    idx: &[usize],
    targets: &Targets<'_, T>,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, Gradients<T>)> {
    let labels = targets(idx)?;
    let mut g = Graph::new(&w.store);
    let x = g.input(ds.inputs::<T>(idx))?;
    let out = forward_standard(&mut g, w, x, &run.train_opts(run.uses_decoder()), rng)?;
    let cls = loss_cls(&mut g, out.class_probs, &labels)?;
    let rec = match out.reconstruction {
        Some(r) => Some(loss_rec(&mut g, x, r, run.cfg.ablations.rec_loss())?),
        None => None,
    };
    let loss = loss_standard(&mut g, cls, rec, run.cfg.loss_weights.lambda1)?;
    Ok((loss.total, g.backward(loss.total_node)?))
}

fn standard_val<T: Scalar>(run: &Run<'_>, w: &ModelWeights<T>, ds: &Dataset, val: &[usize]) -> Result<f64> {
    let rec = run.uses_decoder().then(|| run.cfg.ablations.rec_loss());
    let (ce, re) = eval_losses(w, ds, val, None, rec)?;
    Ok(ce + run.cfg.loss_weights.lambda1 * re)
}

/// Supervised training of `w` on `train` with `targets`, selected on `val`.
#[allow(clippy::too_many_arguments)]
fn supervised_phase<T: Scalar>(
    phase: &str,
    run: &mut Run<'_>,
    w: &mut ModelWeights<T>,
    adam: &mut AdamState<T>,
    max_epochs: usize,
    ds: &Dataset,
    train: &[usize],
    targets: &Targets<'_, T>,
    val: &[usize],
) -> Result<History> {
    require(train, &format!("training set for phase `{phase}`"))?;
    require(val, &format!("validation set for phase `{phase}`"))?;
    let r: &Run<'_> = run;
    let mut rng = r.rng.clone();
    let batch = r.cfg.batch_size;
    let h = fit(
        phase,
        w,
        adam,
        r.cfg,
        max_epochs,
        &mut rng,
        |rng| epoch_batches(train, batch, rng),
        |w, b, rng| supervised_step(r, w, ds, b, targets, rng),
        |w| standard_val(r, w, ds, val),
    )?;
    run.rng = rng;
    Ok(h)
}

fn true_labels<T: Scalar>(ds: &Dataset) -> impl Fn(&[usize]) -> Result<Tensor<T>> + '_ {
    move |idx| ds.labels(idx)
}

/// Hourglass on every labeled training sample in `ds`, with the ablation flags applied.
pub fn train_standard<T: Scalar>(cfg: &RegimeConfig, ds: &Dataset, seed: u64) -> Result<TrainOutcome<T>> {
    let mut run = Run::new(cfg, seed)?;
    let mut w = run.model(0)?;
    let train = train_idx(ds, None, true);
    let domains: Vec<u32> = ds.samples.iter().map(|s| s.domain).collect::<std::collections::BTreeSet<_>>().into_iter().collect();
    let val = val_idx(ds, &domains);
    if cfg.ablations.no_cls_pretrain {
        return train_without_joint_cls(&mut run, w, ds, &train, &val);
    }
    let mut adam = run.adam(&w);
    let history = supervised_phase("main", &mut run, &mut w, &mut adam, cfg.max_epochs, ds, &train, &true_labels(ds), &val)?;
    Ok(TrainOutcome { weights: w, history, notes: Vec::new() })
}

/// Reconstruction-only pretraining, then the head alone on the frozen encoder.
fn train_without_joint_cls<T: Scalar>(
    run: &mut Run<'_>,
    mut w: ModelWeights<T>,
    ds: &Dataset,
    train: &[usize],
    val: &[usize],
) -> Result<TrainOutcome<T>> {
    require(train, "training set")?;
    require(val, "validation set")?;
    let cfg = run.cfg;
    let kind = cfg.ablations.rec_loss();
    let mut rng = run.rng.clone();
    let mut adam = run.adam(&w);
    let mut history = fit(
        "pretrain",
        &mut w,
        &mut adam,
        cfg,
        cfg.max_epochs,
        &mut rng,
        |rng| epoch_batches(train, cfg.batch_size, rng),
        |w, b, _| {
            let mut g = Graph::new(&w.store);
            let x = g.input(ds.inputs::<T>(b))?;
            let (_, r) = forward_reconstruction(&mut g, w, x)?;
            let rec = loss_rec(&mut g, x, r, kind)?;
            let loss = loss_reconstruction_only(&mut g, rec)?;
            Ok((loss.total, g.backward(loss.total_node)?))
        },
        |w| Ok(eval_losses(w, ds, val, None, Some(kind))?.1),
    )?;

    let mut adam = run.adam(&w);
    let head = fit(
        "head",
        &mut w,
        &mut adam,
        cfg,
        cfg.max_epochs,
        &mut rng,
        |rng| epoch_batches(train, cfg.batch_size, rng),
        |w, b, rng| {
            let labels: Tensor<T> = ds.labels(b)?;
            let mut g = Graph::new(&w.store);
            let x = g.input(ds.inputs::<T>(b))?;
            let enc = encode(&mut g, w, x)?;
            let frozen = g.detach(enc.embedding)?;
            let probs = predict(&mut g, w, frozen, &run.train_opts(false), rng)?;
            let cls = loss_cls(&mut g, probs, &labels)?;
            let loss = loss_standard(&mut g, cls, None, 0.0)?;
            Ok((loss.total, g.backward(loss.total_node)?))
        },
        |w| Ok(eval_losses(w, ds, val, None, None)?.0),
    )?;
    history.extend(head);
    run.rng = rng;
    Ok(TrainOutcome { weights: w, history, notes: Vec::new() })
}

/// Two weight-sharing streams (current frame, subject baseline) per sample.
pub fn train_personalized<T: Scalar>(
    cfg: &RegimeConfig,
    ds: &Dataset,
    seed: u64,
    fallback: BaselineFallback,
) -> Result<TrainOutcome<T>> {
    let run = Run::new(cfg, seed)?;
    let mut w = run.model(0)?;
    let train = train_idx(ds, None, true);
    let val = ds.select(|s| s.split == Split::Val);
    require(&train, "training set")?;
    require(&val, "validation set")?;
    let train_base = ds.baselines(Split::Train, fallback)?;
    let val_base = ds.baselines(Split::Val, fallback)?;
    let kind = cfg.ablations.rec_loss();
    let lambda2 = cfg.loss_weights.lambda2;
    let mut rng = run.rng.clone();
    let mut adam = run.adam(&w);
    let history = fit(
        "main",
        &mut w,
        &mut adam,
        cfg,
        cfg.max_epochs,
        &mut rng,
        |rng| epoch_batches(&train, cfg.batch_size, rng),
        |w, b, rng| {
            let labels: Tensor<T> = ds.labels(b)?;
            let mut g = Graph::new(&w.store);
            let x = g.input(ds.inputs::<T>(b))?;
            let base = g.input(ds.baseline_inputs::<T>(b, &train_base)?)?;
            let o = forward_personalized(&mut g, w, x, base, &run.train_opts(true), rng)?;
            let (Some(rc), Some(rb)) = (o.current_reconstruction, o.baseline_reconstruction) else {
                return Err(Error::Contract("personalized training needs both reconstructions".into()));
            };
            let loss = loss_personalized(&mut g, o.class_probs, &labels, (x, rc), (base, rb), kind, lambda2)?;
            Ok((loss.total, g.backward(loss.total_node)?))
        },
        |w| {
            let (ce, re) = eval_losses(w, ds, &val, Some(&val_base), Some(kind))?;
            Ok(ce + lambda2 * re)
        },
    )?;
    Ok(TrainOutcome { weights: w, history, notes: Vec::new() })
}

/// One shared model; every step sees a labeled d1, a labeled d2 and (when
/// any exist) an unlabeled d2 mini-batch, and updates once.
pub fn train_multidomain<T: Scalar>(cfg: &RegimeConfig, ds: &Dataset, seed: u64) -> Result<TrainOutcome<T>> {
    let run = Run::new(cfg, seed)?;
    let mut w = run.model(0)?;
    let d1 = train_idx(ds, Some(D1), true);
    let d2 = train_idx(ds, Some(D2), true);
    let d2u = train_idx(ds, Some(D2), false);
    require(&d1, "labeled d1 training set")?;
    require(&d2, "labeled d2 training set")?;
    let (v1, v2) = (val_idx(ds, &[D1]), val_idx(ds, &[D2]));
    require(&v1, "d1 validation set")?;
    require(&v2, "d2 validation set")?;
    let kind = cfg.ablations.rec_loss();
    let lambda3 = cfg.loss_weights.lambda3;
    let bs = cfg.batch_size;
    let (mut c2, mut cu) = (Cycler::new(d2), Cycler::new(d2u));
    let mut rng = run.rng.clone();
    let mut adam = run.adam(&w);
    let history = fit(
        "main",
        &mut w,
        &mut adam,
        cfg,
        cfg.max_epochs,
        &mut rng,
        |rng| {
            epoch_batches(&d1, bs, rng)
                .into_iter()
                .map(|b1| {
                    let b2 = c2.take(bs, rng);
                    let bu = cu.take(bs, rng);
                    (b1, b2, bu)
                })
                .collect()
        },
        |w, (b1, b2, bu), rng| {
            let (l1, l2): (Tensor<T>, Tensor<T>) = (ds.labels(b1)?, ds.labels(b2)?);
            let mut g = Graph::new(&w.store);
            let opts = run.train_opts(true);
            let x1 = g.input(ds.inputs::<T>(b1))?;
            let o1 = forward_standard(&mut g, w, x1, &opts, rng)?;
            let x2 = g.input(ds.inputs::<T>(b2))?;
            let o2 = forward_standard(&mut g, w, x2, &opts, rng)?;
            let unlabeled = if bu.is_empty() {
                None
            } else {
                let xu = g.input(ds.inputs::<T>(bu))?;
                let (_, ru) = forward_reconstruction(&mut g, w, xu)?;
                Some(Stream { input: xu, recon: Some(ru), probs: None, labels: None })
            };
            let s1 = Stream { input: x1, recon: o1.reconstruction, probs: Some(o1.class_probs), labels: Some(&l1) };
            let s2 = Stream { input: x2, recon: o2.reconstruction, probs: Some(o2.class_probs), labels: Some(&l2) };
            let loss = loss_multidomain(&mut g, &s1, &s2, unlabeled.as_ref(), kind, lambda3)?;
            Ok((loss.total, g.backward(loss.total_node)?))
        },
        |w| {
            let (ce1, re1) = eval_losses(w, ds, &v1, None, Some(kind))?;
            let (ce2, re2) = eval_losses(w, ds, &v2, None, Some(kind))?;
            Ok(ce1 + ce2 + lambda3 * (re1 + re2))
        },
    )?;
    Ok(TrainOutcome { weights: w, history, notes: Vec::new() })
}

/// Standard training on the union of labeled d1 and labeled d2.
pub fn train_mixed<T: Scalar>(cfg: &RegimeConfig, ds: &Dataset, seed: u64) -> Result<TrainOutcome<T>> {
    let mut run = Run::new(cfg, seed)?;
    let mut w = run.model(0)?;
    let mut pool = train_idx(ds, Some(D1), true);
    pool.extend(train_idx(ds, Some(D2), true));
    let val = val_idx(ds, &[D1, D2]);
    let mut adam = run.adam(&w);
    let history = supervised_phase("main", &mut run, &mut w, &mut adam, cfg.max_epochs, ds, &pool, &true_labels(ds), &val)?;
    Ok(TrainOutcome { weights: w, history, notes: vec![("pool_size".into(), pool.len() as f64)] })
}

/// Standard training on labeled d1, then continued training on labeled d2.
pub fn train_finetune<T: Scalar>(cfg: &RegimeConfig, ds: &Dataset, seed: u64) -> Result<TrainOutcome<T>> {
    let mut run = Run::new(cfg, seed)?;
    let mut w = run.model(0)?;
    let mut adam = run.adam(&w);
    let d1 = train_idx(ds, Some(D1), true);
    let history = supervised_phase("d1", &mut run, &mut w, &mut adam, cfg.max_epochs, ds, &d1, &true_labels(ds), &val_idx(ds, &[D1]))?;
    let mut out = finetune_from(&mut run, Some((w, adam)), ds)?;
    let mut full = history;
    full.extend(out.history);
    out.history = full;
    Ok(out)
}

fn finetune_from<T: Scalar>(
    run: &mut Run<'_>,
    snapshot: Option<(ModelWeights<T>, AdamState<T>)>,
    ds: &Dataset,
) -> Result<TrainOutcome<T>> {
    let Some((mut w, adam)) = snapshot else {
        return Err(Error::Sequencing("fine-tuning needs the d1 snapshot".into()));
    };
    let mut adam = if run.cfg.fresh_optimizer { run.adam(&w) } else { adam };
    let epochs = run.cfg.finetune_epochs.unwrap_or(run.cfg.max_epochs);
    let d2 = train_idx(ds, Some(D2), true);
    let history = supervised_phase("d2", run, &mut w, &mut adam, epochs, ds, &d2, &true_labels(ds), &val_idx(ds, &[D2]))?;
    Ok(TrainOutcome { weights: w, history, notes: Vec::new() })
}

/// Fine-tunes an existing d1 model on labeled d2 (`None` is a sequencing error).
pub fn finetune_snapshot<T: Scalar>(
    cfg: &RegimeConfig,
    ds: &Dataset,
    seed: u64,
    snapshot: Option<ModelWeights<T>>,
) -> Result<TrainOutcome<T>> {
    let mut run = Run::new(cfg, seed)?;
    let snapshot = snapshot.map(|w| {
        let adam = run.adam(&w);
        (w, adam)
    });
    finetune_from(&mut run, snapshot, ds)
}

/// Pooled labeled training plus a domain classifier behind gradient reversal,
/// which also sees the unlabeled d2 samples.
pub fn train_gradrev<T: Scalar>(cfg: &RegimeConfig, ds: &Dataset, seed: u64) -> Result<TrainOutcome<T>> {
    let run = Run::new(cfg, seed)?;
    let mut w = run.model(0)?;
    let mut pool = train_idx(ds, Some(D1), true);
    pool.extend(train_idx(ds, Some(D2), true));
    require(&pool, "labeled training pool")?;
    let val = val_idx(ds, &[D1, D2]);
    require(&val, "validation set")?;
    let kind = cfg.ablations.rec_loss();
    let bs = cfg.batch_size;
    let mut cu = Cycler::new(train_idx(ds, Some(D2), false));
    let mut rng = run.rng.clone();
    let mut adam = run.adam(&w);
    let history = fit(
        "main",
        &mut w,
        &mut adam,
        cfg,
        cfg.max_epochs,
        &mut rng,
        |rng| epoch_batches(&pool, bs, rng).into_iter().map(|b| (b, cu.take(bs, rng))).collect(),
        |w, (b, bu), rng| {
            let labels: Tensor<T> = ds.labels(b)?;
            let mut g = Graph::new(&w.store);
            let opts = ForwardOptions { lambda_rev: Some(cfg.lambda_rev), ..run.train_opts(true) };
            let x = g.input(ds.inputs::<T>(b))?;
            let o = forward_standard(&mut g, w, x, &opts, rng)?;
            let cls = loss_cls(&mut g, o.class_probs, &labels)?;
            let rec = loss_rec(&mut g, x, o.reconstruction.expect("decoder requested"), kind)?;
            let std = loss_standard(&mut g, cls, Some(rec), cfg.loss_weights.lambda1)?;
            let dom = g.cross_entropy(o.domain_probs.expect("domain head requested"), &domain_targets(ds, b))?;
            let n_total = (b.len() + bu.len()) as f64;
            let mut terms: Vec<(NodeId, f64)> =
                vec![(std.total_node, 1.0), (dom, cfg.domain_weight * b.len() as f64 / n_total)];
            if !bu.is_empty() {
                let xu = g.input(ds.inputs::<T>(bu))?;
                let enc = encode(&mut g, w, xu)?;
                let pu = crate::model::domain_head(&mut g, w, enc.embedding, cfg.lambda_rev)?;
                let du = g.cross_entropy(pu, &domain_targets(ds, bu))?;
                terms.push((du, cfg.domain_weight * bu.len() as f64 / n_total));
            }
            let total = g.combine(&terms)?;
            Ok((g.scalar(total), g.backward(total)?))
        },
        |w| {
            let (ce, re) = eval_losses(w, ds, &val, None, Some(kind))?;
            Ok(ce + cfg.loss_weights.lambda1 * re)
        },
    )?;
    let acc = domain_accuracy(&w, ds, &val)?;
    Ok(TrainOutcome { weights: w, history, notes: vec![("val_domain_accuracy".into(), acc)] })
}

/// Fraction of `idx` whose domain the gradient-reversal head predicts correctly.
pub fn domain_accuracy<T: Scalar>(w: &ModelWeights<T>, ds: &Dataset, idx: &[usize]) -> Result<f64> {
    let mut correct = 0usize;
    for chunk in idx.chunks(crate::train::engine::EVAL_CHUNK) {
        let mut g = Graph::new(&w.store);
        let x = g.input(ds.inputs::<T>(chunk))?;
        let enc = encode(&mut g, w, x)?;
        let p = crate::model::domain_head(&mut g, w, enc.embedding, 0.0)?;
        let v = g.value(p).to_f64_vec();
        for (row, &i) in v.chunks(N_DOMAINS).zip(chunk) {
            let pred_d2 = row[1] > row[0];
            correct += usize::from(pred_d2 == (ds.samples[i].domain != D1));
        }
    }
    Ok(correct as f64 / idx.len().max(1) as f64)
}

/// Splits `idx` into `k` disjoint parts, stratified by (class, domain).
pub fn stratified_parts(ds: &Dataset, idx: &[usize], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut groups: BTreeMap<(u8, u32), Vec<usize>> = BTreeMap::new();
    for &i in idx {
        let s = &ds.samples[i];
        groups.entry((s.class.code(), s.domain)).or_default().push(i);
    }
    let mut parts = vec![Vec::new(); k];
    let mut offset = 0;
    for members in groups.values_mut() {
        members.shuffle(rng);
        for (j, &i) in members.iter().enumerate() {
            parts[(offset + j) % k].push(i);
        }
        offset += members.len();
    }
    for p in &mut parts {
        p.sort_unstable();
    }
    parts
}

fn argmax(row: &[f64]) -> usize {
    row.iter().enumerate().fold(0, |best, (i, &v)| if v > row[best] { i } else { best })
}

/// Proxy label per row where both models' argmax classes agree.
pub fn proxy_labels(a: &[f64], b: &[f64], n_classes: usize) -> Vec<Option<usize>> {
    a.chunks(n_classes)
        .zip(b.chunks(n_classes))
        .map(|(ra, rb)| {
            let (ca, cb) = (argmax(ra), argmax(rb));
            (ca == cb).then_some(ca)
        })
        .collect()
}

/// Models A and B on two thirds of the labeled pool; the third part gets
/// proxy labels where they agree, and model C trained on those is returned.
pub fn train_tritraining<T: Scalar>(cfg: &RegimeConfig, ds: &Dataset, seed: u64) -> Result<TrainOutcome<T>> {
    let mut run = Run::new(cfg, seed)?;
    let mut pool = train_idx(ds, Some(D1), true);
    pool.extend(train_idx(ds, Some(D2), true));
    let val = val_idx(ds, &[D1, D2]);
    let parts = stratified_parts(ds, &pool, 3, &mut run.rng);
    let mut history = History::default();
    let mut members = Vec::new();
    for (m, name) in ["A", "B"].into_iter().enumerate() {
        let mut w = run.model::<T>(m as u64)?;
        let mut adam = run.adam(&w);
        history.extend(supervised_phase(name, &mut run, &mut w, &mut adam, cfg.max_epochs, ds, &parts[m], &true_labels(ds), &val)?);
        members.push(w);
    }
    let third = &parts[2];
    require(third, "third tri-training split")?;
    let pa = predict_probs(&members[0], ds, third, None)?;
    let pb = predict_probs(&members[1], ds, third, None)?;
    let proxies = proxy_labels(&pa, &pb, cfg.scale.n_classes);
    let proxy: BTreeMap<usize, usize> = third.iter().zip(&proxies).filter_map(|(&i, p)| Some((i, (*p)?))).collect();
    if proxy.is_empty() {
        return Err(Error::EmptyProxy { candidates: third.len() });
    }
    let agreement = proxy.len() as f64 / third.len() as f64;
    log::info!("tri-training: {} of {} proxy labels agree ({agreement:.3})", proxy.len(), third.len());
    let train_c: Vec<usize> = proxy.keys().copied().collect();
    let n = cfg.scale.n_classes;
    let targets = |idx: &[usize]| -> Result<Tensor<T>> {
        let codes: Vec<usize> = idx.iter().map(|i| proxy[i]).collect();
        Ok(one_hot(&codes, n))
    };
    let mut w = run.model(2)?;
    let mut adam = run.adam(&w);
    history.extend(supervised_phase("C", &mut run, &mut w, &mut adam, cfg.max_epochs, ds, &train_c, &targets, &val)?);
    Ok(TrainOutcome {
        weights: w,
        history,
        notes: vec![("agreement_rate".into(), agreement), ("proxy_labels".into(), proxy.len() as f64)],
    })
}

/// Distillation loss of `probs` against teacher distributions `targets`.
pub fn soft_target_loss<T: Scalar>(
    g: &mut Graph<'_, T>,
    probs: NodeId,
    targets: &Tensor<T>,
    kind: DistillLoss,
) -> Result<NodeId> {
    match kind {
        DistillLoss::CrossEntropy => loss_cls(g, probs, targets),
        DistillLoss::Mse => {
            let t = g.input(targets.clone())?;
            g.mean_sq_error(probs, t)
        }
    }
}

/// A teacher trained on half of the labeled data of both domains labels the
/// remaining d2 samples; the student learns from the other d1 half's labels
/// and the teacher's d2 distributions.
pub fn train_distillation<T: Scalar>(cfg: &RegimeConfig, ds: &Dataset, seed: u64) -> Result<TrainOutcome<T>> {
    let mut run = Run::new(cfg, seed)?;
    let mut pool = train_idx(ds, Some(D1), true);
    pool.extend(train_idx(ds, Some(D2), true));
    let halves = stratified_parts(ds, &pool, 2, &mut run.rng);
    let val = val_idx(ds, &[D1, D2]);
    let mut teacher = run.model::<T>(0)?;
    let mut adam = run.adam(&teacher);
    let mut history =
        supervised_phase("teacher", &mut run, &mut teacher, &mut adam, cfg.max_epochs, ds, &halves[0], &true_labels(ds), &val)?;

    let student_d1: Vec<usize> = halves[1].iter().copied().filter(|&i| ds.samples[i].domain == D1).collect();
    let mut student_d2: Vec<usize> = halves[1].iter().copied().filter(|&i| ds.samples[i].domain == D2).collect();
    student_d2.extend(train_idx(ds, Some(D2), false));
    student_d2.sort_unstable();
    require(&student_d1, "student d1 split")?;
    require(&student_d2, "student d2 split")?;
    let n = cfg.scale.n_classes;
    let soft = predict_probs(&teacher, ds, &student_d2, None)?;
    let soft: BTreeMap<usize, &[f64]> = student_d2.iter().copied().zip(soft.chunks(n)).collect();
    let soft_targets = |idx: &[usize]| -> Result<Tensor<T>> {
        let data: Vec<f64> = idx.iter().flat_map(|i| soft[i].iter().copied()).collect();
        Tensor::from_f64([idx.len(), n], &data).map(|t: Tensor<f64>| t.cast())
    };

    let mut w = run.model(1)?;
    let mut adam = run.adam(&w);
    let kind = cfg.ablations.rec_loss();
    let lambda1 = cfg.loss_weights.lambda1;
    let bs = cfg.batch_size;
    let mut c2 = Cycler::new(student_d2);
    let mut rng = run.rng.clone();
    let student = fit(
        "student",
        &mut w,
        &mut adam,
        cfg,
        cfg.max_epochs,
        &mut rng,
        |rng| epoch_batches(&student_d1, bs, rng).into_iter().map(|b| (b, c2.take(bs, rng))).collect(),
        |w, (b1, b2), rng| {
            let labels: Tensor<T> = ds.labels(b1)?;
            let targets = soft_targets(b2)?;
            let mut g = Graph::new(&w.store);
            let opts = run.train_opts(true);
            let x1 = g.input(ds.inputs::<T>(b1))?;
            let o1 = forward_standard(&mut g, w, x1, &opts, rng)?;
            let x2 = g.input(ds.inputs::<T>(b2))?;
            let o2 = forward_standard(&mut g, w, x2, &opts, rng)?;
            let c1 = loss_cls(&mut g, o1.class_probs, &labels)?;
            let c2 = soft_target_loss(&mut g, o2.class_probs, &targets, cfg.distill_loss)?;
            let r1 = loss_rec(&mut g, x1, o1.reconstruction.expect("decoder requested"), kind)?;
            let r2 = loss_rec(&mut g, x2, o2.reconstruction.expect("decoder requested"), kind)?;
            let total = g.combine(&[(c1, 1.0), (c2, 1.0), (r1, lambda1), (r2, lambda1)])?;
            Ok((g.scalar(total), g.backward(total)?))
        },
        |w| {
            let (ce, re) = eval_losses(w, ds, &val, None, Some(kind))?;
            Ok(ce + lambda1 * re)
        },
    )?;
    history.extend(student);
    Ok(TrainOutcome { weights: w, history, notes: Vec::new() })
}

/// Trains `cfg.regime` for one seed. The label budget must already be applied.
pub fn train_regime<T: Scalar>(cfg: &RegimeConfig, ds: &Dataset, seed: u64) -> Result<TrainOutcome<T>> {
    match cfg.regime {
        Regime::Standard => train_standard(cfg, ds, seed),
        Regime::Personalized => train_personalized(cfg, ds, seed, BaselineFallback::Error),
        Regime::Multidomain => train_multidomain(cfg, ds, seed),
        Regime::Mixed => train_mixed(cfg, ds, seed),
        Regime::Finetune => train_finetune(cfg, ds, seed),
        Regime::Gradrev => train_gradrev(cfg, ds, seed),
        Regime::Tritraining => train_tritraining(cfg, ds, seed),
        Regime::Distillation => train_distillation(cfg, ds, seed),
    }
}

/// Baselines needed to evaluate personalized weights on `split`, if any.
pub fn eval_baselines<T: Scalar>(
    w: &ModelWeights<T>,
    ds: &Dataset,
    split: Split,
) -> Result<Option<BTreeMap<u32, Baseline>>> {
    if w.variant.personalized {
        Ok(Some(ds.baselines(split, BaselineFallback::Error)?))
    } else {
        Ok(None)
    }
}
