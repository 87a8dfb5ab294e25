//! Classification, reconstruction and combined losses for the three regimes.

use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Weights on the reconstruction term: standard, personalized, multi-domain.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda1: 1.0, lambda2: 1.0, lambda3: 10.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2), ("lambda3", self.lambda3)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be a nonnegative number, got {v}")));
            }
        }
        Ok(())
    }
}

/// Pixelwise reconstruction penalty.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum RecLoss {
    #[default]
    Mae,
    Mse,
}

/// Scalar values of one evaluated objective plus the node to differentiate.
#[derive(Clone, Debug)]
pub struct LossBreakdown {
    pub cls: f64,
    pub rec: f64,
    pub total: f64,
    /// Individual cross-entropy and reconstruction terms, by name.
    pub terms: Vec<(&'static str, f64)>,
    pub total_node: NodeId,
}

/// One batch flowing through the network.
///
/// `probs` and `labels` must both be absent for unlabeled data.
#[derive(Clone, Copy, Debug)]
pub struct Stream<'a, T> {
    pub input: NodeId,
    pub recon: Option<NodeId>,
    pub probs: Option<NodeId>,
    pub labels: Option<&'a Tensor<T>>,
}

fn check_targets<T: Scalar>(labels: &Tensor<T>) -> Result<()> {
    if labels.rank() != 2 {
        return Err(Error::dim("loss_cls", format!("targets must be [batch, classes], got {:?}", labels.shape())));
    }
    for row in labels.data().chunks(labels.shape()[1]) {
        let total: f64 = row.iter().map(|v| v.as_f64()).sum();
        if row.iter().any(|v| v.as_f64() < 0.0) || (total - 1.0).abs() > 1e-4 {
            return Err(Error::Contract(format!("target row {row:?} is not a probability distribution")));
        }
    }
    Ok(())
}

/// Batch-averaged categorical cross-entropy with the log argument floored at 1e-12.
///
/// `labels` are one-hot rows, or any distribution rows for soft targets.
pub fn loss_cls<T: Scalar>(g: &mut Graph<'_, T>, probs: NodeId, labels: &Tensor<T>) -> Result<NodeId> {
    check_targets(labels)?;
    g.cross_entropy(probs, labels)
}

/// Element-wise mean reconstruction error.
pub fn loss_rec<T: Scalar>(g: &mut Graph<'_, T>, input: NodeId, recon: NodeId, kind: RecLoss) -> Result<NodeId> {
    match kind {
        RecLoss::Mae => g.mean_abs_error(recon, input),
        RecLoss::Mse => g.mean_sq_error(recon, input),
    }
}

fn assemble<T: Scalar>(
    g: &mut Graph<'_, T>,
    cls_terms: &[(&'static str, NodeId)],
    rec_terms: &[(&'static str, NodeId)],
    lambda: f64,
) -> Result<LossBreakdown> {
    let mut weighted = Vec::with_capacity(cls_terms.len() + rec_terms.len());
    let mut terms = Vec::with_capacity(weighted.capacity());
    let (mut cls, mut rec) = (0.0, 0.0);
    for &(name, node) in cls_terms {
        let v = g.scalar(node);
        cls += v;
        terms.push((name, v));
        weighted.push((node, 1.0));
    }
    for &(name, node) in rec_terms {
        let v = g.scalar(node);
        rec += v;
        terms.push((name, v));
        weighted.push((node, lambda));
    }
    let total_node = g.combine(&weighted)?;
    Ok(LossBreakdown { cls, rec, total: g.scalar(total_node), terms, total_node })
}

/// `cls + lambda1 * rec`; `rec = None` is the decoder-free variant.
pub fn loss_standard<T: Scalar>(g: &mut Graph<'_, T>, cls: NodeId, rec: Option<NodeId>, lambda1: f64) -> Result<LossBreakdown> {
    let rec_terms: Vec<_> = rec.into_iter().map(|r| ("rec", r)).collect();
    assemble(g, &[("cls", cls)], &rec_terms, lambda1)
}

/// Reconstruction-only objective (encoder/decoder pretraining).
pub fn loss_reconstruction_only<T: Scalar>(g: &mut Graph<'_, T>, rec: NodeId) -> Result<LossBreakdown> {
    assemble(g, &[], &[("rec", rec)], 1.0)
}

/// Cross-entropy of the shared head plus the sum of both streams' reconstruction errors.
pub fn loss_personalized<T: Scalar>(
    g: &mut Graph<'_, T>,
    probs: NodeId,
    labels: &Tensor<T>,
    current: (NodeId, NodeId),
    baseline: (NodeId, NodeId),
    kind: RecLoss,
    lambda2: f64,
) -> Result<LossBreakdown> {
    let cls = loss_cls(g, probs, labels)?;
    let rc = loss_rec(g, current.0, current.1, kind)?;
    let rb = loss_rec(g, baseline.0, baseline.1, kind)?;
    assemble(g, &[("cls", cls)], &[("rec_current", rc), ("rec_baseline", rb)], lambda2)
}

fn labeled_terms<T: Scalar>(
    g: &mut Graph<'_, T>,
    s: &Stream<'_, T>,
    which: &'static str,
    kind: RecLoss,
) -> Result<(NodeId, NodeId)> {
    let (Some(probs), Some(labels)) = (s.probs, s.labels) else {
        return Err(Error::Contract(format!("{which} batch needs predictions and labels")));
    };
    let Some(recon) = s.recon else {
        return Err(Error::Contract(format!("{which} batch has no reconstruction")));
    };
    Ok((loss_cls(g, probs, labels)?, loss_rec(g, s.input, recon, kind)?))
}

/// Labeled d1, labeled d2 and unlabeled d2 batches under one objective.
///
/// The two cross-entropies are averaged over their own batches and then
/// added. An absent or empty unlabeled batch drops its reconstruction term.
/// Passing labels or predictions with the unlabeled batch is a contract error.
pub fn loss_multidomain<T: Scalar>(
    g: &mut Graph<'_, T>,
    d1: &Stream<'_, T>,
    d2_labeled: &Stream<'_, T>,
    d2_unlabeled: Option<&Stream<'_, T>>,
    kind: RecLoss,
    lambda3: f64,
) -> Result<LossBreakdown> {
    let (c1, r1) = labeled_terms(g, d1, "labeled d1", kind)?;
    let (c2, r2) = labeled_terms(g, d2_labeled, "labeled d2", kind)?;
    let mut rec_terms = vec![("rec_d1", r1), ("rec_d2_labeled", r2)];
    if let Some(u) = d2_unlabeled {
        if u.labels.is_some() || u.probs.is_some() {
            return Err(Error::Contract("unlabeled d2 batch must not reach the classification loss".into()));
        }
        let Some(recon) = u.recon else {
            return Err(Error::Contract("unlabeled d2 batch has no reconstruction".into()));
        };
        if g.shape(u.input)[0] > 0 {
            rec_terms.push(("rec_d2_unlabeled", loss_rec(g, u.input, recon, kind)?));
        }
    }
    assemble(g, &[("cls_d1", c1), ("cls_d2", c2)], &rec_terms, lambda3)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::ParamStore;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape.to_vec(), v).unwrap()
    }

    #[test]
    fn cross_entropy_examples() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let onehot = t(&[1, 6], &[0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        let p = g.input(onehot.clone()).unwrap();
        let l = loss_cls(&mut g, p, &onehot).unwrap();
        assert_eq!(g.scalar(l), 0.0);

        let u = g.input(Tensor::full([1, 6], 1.0 / 6.0)).unwrap();
        let l = loss_cls(&mut g, u, &onehot).unwrap();
        assert!((g.scalar(l) - 6f64.ln()).abs() < 1e-12);

        let mut both = onehot.data().to_vec();
        both.extend([1.0 / 6.0; 6]);
        let pb = g.input(t(&[2, 6], &both)).unwrap();
        let labels = t(&[2, 6], &[0., 0., 1., 0., 0., 0., 1., 0., 0., 0., 0., 0.]);
        let l = loss_cls(&mut g, pb, &labels).unwrap();
        assert!((g.scalar(l) - 6f64.ln() / 2.0).abs() < 1e-12);
    }

    #[test]
    fn zero_probability_is_clamped() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let p = g.input(t(&[1, 2], &[1.0, 0.0])).unwrap();
        let l = loss_cls(&mut g, p, &t(&[1, 2], &[0.0, 1.0])).unwrap();
        assert!((g.scalar(l) - -(1e-12f64).ln()).abs() < 1e-9);
    }

    #[test]
    fn rec_examples() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let x = g.input(t(&[2], &[1.0, -1.0])).unwrap();
        let z = g.input(Tensor::zeros([2])).unwrap();
        let mae = loss_rec(&mut g, x, z, RecLoss::Mae).unwrap();
        let mse = loss_rec(&mut g, x, z, RecLoss::Mse).unwrap();
        let same = loss_rec(&mut g, x, x, RecLoss::Mae).unwrap();
        assert_eq!((g.scalar(mae), g.scalar(mse), g.scalar(same)), (1.0, 1.0, 0.0));
        let w = g.input(Tensor::zeros([3])).unwrap();
        assert!(matches!(loss_rec(&mut g, x, w, RecLoss::Mae), Err(Error::Dimension { .. })));
    }

    #[test]
    fn standard_combination() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let c = g.input(Tensor::scalar(0.5)).unwrap();
        let r = g.input(Tensor::scalar(0.2)).unwrap();
        assert!((loss_standard(&mut g, c, Some(r), 1.0).unwrap().total - 0.7).abs() < 1e-12);
        assert_eq!(loss_standard(&mut g, c, Some(r), 0.0).unwrap().total, 0.5);
        assert_eq!(loss_standard(&mut g, c, None, 1.0).unwrap().total, 0.5);
    }

    #[test]
    fn personalized_rec_is_a_sum_of_stream_means() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let labels = t(&[1, 2], &[1.0, 0.0]);
        let p = g.input(labels.clone()).unwrap();
        let a = g.input(t(&[2], &[1.0, 1.0])).unwrap();
        let b = g.input(t(&[2], &[0.0, 0.0])).unwrap();
        let out = loss_personalized(&mut g, p, &labels, (a, b), (b, a), RecLoss::Mae, 1.0).unwrap();
        assert_eq!((out.cls, out.rec, out.total), (0.0, 2.0, 2.0));
        let perfect = loss_personalized(&mut g, p, &labels, (a, a), (b, b), RecLoss::Mae, 1.0).unwrap();
        assert_eq!(perfect.rec, 0.0);
    }

    #[test]
    fn multidomain_terms_and_contract() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let labels = t(&[1, 2], &[0.0, 1.0]);
        let p = g.input(labels.clone()).unwrap();
        let x = g.input(t(&[1, 2], &[0.5, 0.5])).unwrap();
        let r = g.input(t(&[1, 2], &[0.0, 0.5])).unwrap();
        let lab = Stream { input: x, recon: Some(r), probs: Some(p), labels: Some(&labels) };
        let unl = Stream { input: x, recon: Some(r), probs: None, labels: None };
        let out = loss_multidomain(&mut g, &lab, &lab, Some(&unl), RecLoss::Mae, 10.0).unwrap();
        assert_eq!(out.cls, 0.0);
        assert_eq!(out.terms.len(), 5);
        assert!((out.rec - 0.75).abs() < 1e-12);
        assert!((out.total - 7.5).abs() < 1e-12);

        let two = loss_multidomain(&mut g, &lab, &lab, None, RecLoss::Mae, 10.0).unwrap();
        assert_eq!(two.terms.len(), 4);
        assert!((two.rec - 0.5).abs() < 1e-12);

        let sneaky = Stream { labels: Some(&labels), ..unl };
        assert!(matches!(
            loss_multidomain(&mut g, &lab, &lab, Some(&sneaky), RecLoss::Mae, 10.0),
            Err(Error::Contract(_))
        ));
    }
}
