//! Finite-difference checks over every operator and every composite loss.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::gradcheck::{check, check_against, GradCheckReport};
use crate::autodiff::{Activation, Graph, NodeId, ParamGroup, ParamId, ParamStore};
use crate::error::Result;
use crate::model::{
    build_model, domain_head, forward_personalized, forward_standard, ArchitectureScale, ForwardOptions, ModelVariant,
    ModelWeights,
};
use crate::objectives::{
    loss_cls, loss_multidomain, loss_personalized, loss_rec, loss_reconstruction_only, loss_standard, RecLoss, Stream,
};
use crate::tensor::Tensor;

/// Coordinates sampled per parameter tensor in the model-level checks.
const MODEL_COORDS: usize = 6;

fn random(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape and data agree")
}

fn one_hot(rng: &mut ChaCha8Rng, batch: usize, classes: usize) -> Tensor<f64> {
    let mut t = Tensor::zeros([batch, classes]);
    for n in 0..batch {
        let c = rng.gen_range(0..classes);
        t.data_mut()[n * classes + c] = 1.0;
    }
    t
}

struct OpCase {
    store: ParamStore<f64>,
    ids: Vec<ParamId>,
}

impl OpCase {
    fn new(rng: &mut ChaCha8Rng, shapes: &[&[usize]]) -> Self {
        let mut store = ParamStore::new();
        let ids = shapes
            .iter()
            .enumerate()
            .map(|(i, s)| store.insert(format!("p{i}"), ParamGroup::Encoder, random(rng, s, -1.0, 1.0)).unwrap())
            .collect();
        Self { store, ids }
    }
}

/// Scalarizes an operator output against a fixed random target.
fn against_target(g: &mut Graph<'_, f64>, y: NodeId, target: &Tensor<f64>) -> Result<NodeId> {
    let t = g.input(target.clone())?;
    g.mean_sq_error(y, t)
}

fn op_check<F>(name: &str, rng: &mut ChaCha8Rng, shapes: &[&[usize]], out_shape: &[usize], f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_, f64>, &[NodeId]) -> Result<NodeId>,
{
    let mut case = OpCase::new(rng, shapes);
    let target = random(rng, out_shape, -1.0, 1.0);
    let ids = case.ids.clone();
    let mut sub = ChaCha8Rng::seed_from_u64(rng.gen());
    check(name, &mut case.store, 64, &mut sub, |g| {
        let nodes: Vec<NodeId> = ids.iter().map(|&id| g.param(id)).collect();
        let y = f(g, &nodes)?;
        against_target(g, y, &target)
    })
}

fn operator_checks(rng: &mut ChaCha8Rng) -> Result<Vec<GradCheckReport>> {
    let mut out = Vec::new();
    out.push(op_check("dense", rng, &[&[3, 4], &[4, 5], &[5]], &[3, 5], |g, p| g.dense(p[0], p[1], p[2]))?);
    for (size, stride, dilation) in [(5usize, 1, 1), (5, 2, 1), (5, 1, 2), (4, 2, 1), (6, 2, 1), (4, 1, 2)] {
        let name = format!("conv2d/{size}x{size}/stride{stride}/dilation{dilation}");
        let side = size.div_ceil(stride);
        out.push(op_check(&name, rng, &[&[1, size, size, 2], &[3, 3, 2, 3], &[3]], &[1, side, side, 3], |g, p| {
            g.conv2d(p[0], p[1], Some(p[2]), stride, dilation)
        })?);
    }
    out.push(op_check("conv2d/5x5", rng, &[&[1, 4, 4, 2], &[5, 5, 2, 1]], &[1, 4, 4, 1], |g, p| {
        g.conv2d(p[0], p[1], None, 1, 1)
    })?);
    out.push(op_check("pixel_shuffle", rng, &[&[2, 2, 2, 8]], &[2, 4, 4, 2], |g, p| g.pixel_shuffle(p[0]))?);
    out.push(op_check("leaky_relu", rng, &[&[4, 6]], &[4, 6], |g, p| g.activation(p[0], Activation::LeakyRelu(0.2)))?);
    out.push(op_check("tanh", rng, &[&[4, 6]], &[4, 6], |g, p| g.activation(p[0], Activation::Tanh))?);
    out.push(op_check("softmax", rng, &[&[4, 6]], &[4, 6], |g, p| g.activation(p[0], Activation::Softmax))?);
    let mask_seed: u64 = rng.gen();
    out.push(op_check("dropout", rng, &[&[4, 6]], &[4, 6], move |g, p| {
        g.dropout(p[0], 0.5, true, &mut ChaCha8Rng::seed_from_u64(mask_seed))
    })?);
    {
        let mut case = OpCase::new(rng, &[&[4, 3]]);
        let target = random(rng, &[4, 3], -1.0, 1.0);
        let id = case.ids[0];
        // The reversed gradient must equal the true derivative of -lambda * loss.
        out.push(check_against(
            "gradient_reversal",
            &mut case.store,
            64,
            rng,
            |g| {
                let p = g.param(id);
                let y = g.gradient_reversal(p, 0.5)?;
                against_target(g, y, &target)
            },
            |g| {
                let p = g.param(id);
                let l = against_target(g, p, &target)?;
                g.combine(&[(l, -0.5)])
            },
            |_| true,
        )?);
    }
    out.push(op_check("add", rng, &[&[3, 4], &[3, 4]], &[3, 4], |g, p| g.add(p[0], p[1]))?);
    out.push(op_check("sub", rng, &[&[3, 4], &[3, 4]], &[3, 4], |g, p| g.sub(p[0], p[1]))?);
    out.push(op_check("concat", rng, &[&[2, 2, 3], &[2, 2, 1]], &[2, 2, 4], |g, p| g.concat(p[0], p[1]))?);
    out.push(op_check("reshape", rng, &[&[2, 6]], &[3, 4], |g, p| g.reshape(p[0], &[3, 4]))?);
    out.push(op_check("sum", rng, &[&[3, 3]], &[1], |g, p| g.sum(p[0]))?);

    // Losses are scalar already, so they are checked directly.
    let mut case = OpCase::new(rng, &[&[4, 6]]);
    let labels = one_hot(rng, 4, 6);
    let id = case.ids[0];
    case.store.get_mut(id).tensor.data_mut().iter_mut().for_each(|v| *v = 0.05 + 0.9 * (*v + 1.0) / 2.0);
    out.push(check("cross_entropy", &mut case.store, 64, rng, |g| {
        let p = g.param(id);
        loss_cls(g, p, &labels)
    })?);
    for (name, kind) in [("mean_abs_error", RecLoss::Mae), ("mean_sq_error", RecLoss::Mse)] {
        let mut case = OpCase::new(rng, &[&[2, 3, 3, 2]]);
        let target = random(rng, &[2, 3, 3, 2], -1.0, 1.0);
        let id = case.ids[0];
        out.push(check(name, &mut case.store, 64, rng, |g| {
            let p = g.param(id);
            let t = g.input(target.clone())?;
            loss_rec(g, t, p, kind)
        })?);
    }
    let mut case = OpCase::new(rng, &[&[1], &[1], &[1]]);
    let ids = case.ids.clone();
    out.push(check("combine", &mut case.store, 64, rng, |g| {
        let p: Vec<_> = ids.iter().map(|&i| g.param(i)).collect();
        g.combine(&[(p[0], 1.0), (p[1], 10.0), (p[2], -0.5)])
    })?);

    let mut case = OpCase::new(rng, &[&[2, 4, 4, 1], &[3, 3, 1, 2], &[2], &[32, 6], &[6]]);
    let labels = one_hot(rng, 2, 6);
    let ids = case.ids.clone();
    out.push(check("conv-leaky-dense-softmax-ce", &mut case.store, 64, rng, |g| {
        let p: Vec<_> = ids.iter().map(|&i| g.param(i)).collect();
        let h = g.conv2d(p[0], p[1], Some(p[2]), 1, 1)?;
        let h = g.leaky_relu(h, 0.2)?;
        let h = g.reshape(h, &[2, 32])?;
        let h = g.dense(h, p[3], p[4])?;
        let probs = g.softmax(h)?;
        loss_cls(g, probs, &labels)
    })?);
    Ok(out)
}

/// Moves the store out so the check can perturb it while forwards read the layout.
fn split<T: crate::scalar::Scalar>(mut w: ModelWeights<T>) -> (ModelWeights<T>, ParamStore<T>) {
    let store = std::mem::take(&mut w.store);
    (w, store)
}

fn desk_model(rng: &mut ChaCha8Rng, variant: ModelVariant) -> Result<(ModelWeights<f64>, ParamStore<f64>)> {
    Ok(split(build_model(ArchitectureScale::desk(), variant, rng)?))
}

fn image(rng: &mut ChaCha8Rng, batch: usize) -> Tensor<f64> {
    let s = ArchitectureScale::desk();
    random(rng, &[batch, s.input_size, s.input_size, s.input_channels], -1.0, 1.0)
}

fn model_checks(rng: &mut ChaCha8Rng) -> Result<Vec<GradCheckReport>> {
    let mut out = Vec::new();
    // Dropout stays off: the head masks are resampled on every forward.
    let opts = ForwardOptions { training: false, ..ForwardOptions::train() };

    let (w, mut store) = desk_model(rng, ModelVariant::default())?;
    let (x, labels) = (image(rng, 2), one_hot(rng, 2, 6));
    out.push(check("loss_standard", &mut store, MODEL_COORDS, rng, |g| {
        let xi = g.input(x.clone())?;
        let o = forward_standard(g, &w, xi, &opts, &mut ChaCha8Rng::seed_from_u64(0))?;
        let cls = loss_cls(g, o.class_probs, &labels)?;
        let rec = loss_rec(g, xi, o.reconstruction.expect("decoder on"), RecLoss::Mae)?;
        Ok(loss_standard(g, cls, Some(rec), 1.0)?.total_node)
    })?);
    out.push(check("loss_reconstruction_only/mse", &mut store, MODEL_COORDS, rng, |g| {
        let xi = g.input(x.clone())?;
        let o = forward_standard(g, &w, xi, &opts, &mut ChaCha8Rng::seed_from_u64(0))?;
        let rec = loss_rec(g, xi, o.reconstruction.expect("decoder on"), RecLoss::Mse)?;
        Ok(loss_reconstruction_only(g, rec)?.total_node)
    })?);

    let (w, mut store) = desk_model(rng, ModelVariant { personalized: true, ..ModelVariant::default() })?;
    let (cur, base) = (image(rng, 2), image(rng, 2));
    out.push(check("loss_personalized", &mut store, MODEL_COORDS, rng, |g| {
        let c = g.input(cur.clone())?;
        let b = g.input(base.clone())?;
        let o = forward_personalized(g, &w, c, b, &opts, &mut ChaCha8Rng::seed_from_u64(0))?;
        let (rc, rb) = (o.current_reconstruction.expect("decoder on"), o.baseline_reconstruction.expect("decoder on"));
        Ok(loss_personalized(g, o.class_probs, &labels, (c, rc), (b, rb), RecLoss::Mae, 1.0)?.total_node)
    })?);

    let (w, mut store) = desk_model(rng, ModelVariant::default())?;
    let (x1, x2, xu) = (image(rng, 2), image(rng, 1), image(rng, 2));
    let (l1, l2) = (one_hot(rng, 2, 6), one_hot(rng, 1, 6));
    out.push(check("loss_multidomain", &mut store, MODEL_COORDS, rng, |g| {
        let labeled = |g: &mut Graph<'_, f64>, x: &Tensor<f64>| -> Result<(NodeId, NodeId, NodeId)> {
            let xi = g.input(x.clone())?;
            let o = forward_standard(g, &w, xi, &opts, &mut ChaCha8Rng::seed_from_u64(0))?;
            Ok((xi, o.reconstruction.expect("decoder on"), o.class_probs))
        };
        let (a, ar, ap) = labeled(g, &x1)?;
        let (b, br, bp) = labeled(g, &x2)?;
        let u = g.input(xu.clone())?;
        let (_, ur) = crate::model::forward_reconstruction(g, &w, u)?;
        let s1 = Stream { input: a, recon: Some(ar), probs: Some(ap), labels: Some(&l1) };
        let s2 = Stream { input: b, recon: Some(br), probs: Some(bp), labels: Some(&l2) };
        let su = Stream { input: u, recon: Some(ur), probs: None, labels: None };
        Ok(loss_multidomain(g, &s1, &s2, Some(&su), RecLoss::Mae, 10.0)?.total_node)
    })?);

    let (w, mut store) = desk_model(rng, ModelVariant { domain_head: true, ..ModelVariant::default() })?;
    let domains = one_hot(rng, 2, 2);
    let eval_opts = ForwardOptions { decoder: false, ..opts };
    let objective = |g: &mut Graph<'_, f64>, domain_weight: f64| -> Result<NodeId> {
        let xi = g.input(x.clone())?;
        let o = forward_standard(g, &w, xi, &eval_opts, &mut ChaCha8Rng::seed_from_u64(0))?;
        let cls = loss_cls(g, o.class_probs, &labels)?;
        let dp = domain_head(g, &w, o.embedding, 1.0)?;
        let dom = loss_cls(g, dp, &domains)?;
        g.combine(&[(cls, 1.0), (dom, domain_weight)])
    };
    // Below the reversal layer the analytic gradient is that of cls - dom;
    // the domain head itself sees the plain cls + dom gradient.
    out.push(check_against(
        "gradient_reversal_domain_loss/encoder",
        &mut store,
        MODEL_COORDS,
        rng,
        |g| objective(g, 1.0),
        |g| objective(g, -1.0),
        |p| p.group != ParamGroup::DomainHead,
    )?);
    out.push(check_against(
        "gradient_reversal_domain_loss/domain_head",
        &mut store,
        MODEL_COORDS,
        rng,
        |g| objective(g, 1.0),
        |g| objective(g, 1.0),
        |p| p.group == ParamGroup::DomainHead,
    )?);
    Ok(out)
}

/// Runs every check with instances drawn from `seed`.
pub fn run(seed: u64) -> Result<Vec<GradCheckReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reports = operator_checks(&mut rng)?;
    reports.extend(model_checks(&mut rng)?);
    Ok(reports)
}
