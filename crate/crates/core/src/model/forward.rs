//! Forward topologies over one shared set of weights.

use rand::Rng;

use crate::autodiff::{Graph, NodeId, LEAKY_SLOPE};
use crate::error::{Error, Result};
use crate::model::weights::{ConvParams, DenseParams, ModelWeights};
use crate::scalar::Scalar;

/// Dropout rate between the two prediction-head layers.
pub const HEAD_DROPOUT: f64 = 0.7;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ForwardOptions {
    pub training: bool,
    pub dropout: f64,
    /// Run the decoder and produce reconstructions.
    pub decoder: bool,
    /// Scale of the reversed gradient into the encoder; `None` skips the domain head.
    pub lambda_rev: Option<f64>,
}

impl ForwardOptions {
    pub fn train() -> Self {
        Self { training: true, dropout: HEAD_DROPOUT, decoder: true, lambda_rev: None }
    }

    pub fn eval() -> Self {
        Self { training: false, dropout: HEAD_DROPOUT, decoder: false, lambda_rev: None }
    }
}

pub struct EncoderOutput {
    pub embedding: NodeId,
    /// Feature maps by decreasing resolution: stem output, then each residual block.
    pub levels: Vec<NodeId>,
}

#[derive(Clone, Copy, Debug)]
pub struct ForwardOutputs {
    pub embedding: NodeId,
    pub reconstruction: Option<NodeId>,
    pub class_probs: NodeId,
    pub domain_probs: Option<NodeId>,
}

#[derive(Clone, Copy, Debug)]
pub struct PersonalizedOutputs {
    pub current_embedding: NodeId,
    pub baseline_embedding: NodeId,
    /// `E(current) - E(baseline)`.
    pub residual: NodeId,
    /// `residual ⊕ E(current)`.
    pub head_input: NodeId,
    pub class_probs: NodeId,
    pub current_reconstruction: Option<NodeId>,
    pub baseline_reconstruction: Option<NodeId>,
}

fn conv<T: Scalar>(g: &mut Graph<'_, T>, x: NodeId, p: ConvParams, stride: usize, dilation: usize) -> Result<NodeId> {
    let (k, b) = (g.param(p.kernel), g.param(p.bias));
    g.conv2d(x, k, Some(b), stride, dilation)
}

fn dense<T: Scalar>(g: &mut Graph<'_, T>, x: NodeId, p: DenseParams) -> Result<NodeId> {
    let (w, b) = (g.param(p.weight), g.param(p.bias));
    g.dense(x, w, b)
}

fn leaky<T: Scalar>(g: &mut Graph<'_, T>, x: NodeId) -> Result<NodeId> {
    g.leaky_relu(x, LEAKY_SLOPE)
}

/// Encoder: dilated stem, stride-2 conv + residual block per level, dense embedding.
pub fn encode<T: Scalar>(g: &mut Graph<'_, T>, w: &ModelWeights<T>, x: NodeId) -> Result<EncoderOutput> {
    let s = w.scale;
    let shape = g.shape(x).to_vec();
    if shape.len() != 4 || shape[1] != s.input_size || shape[2] != s.input_size || shape[3] != s.input_channels {
        return Err(Error::dim(
            "encode",
            format!(
                "expected [batch, {0}, {0}, {1}] input, got {shape:?}",
                s.input_size, s.input_channels
            ),
        ));
    }
    let batch = shape[0];
    let l = &w.layout;

    let mut h = conv(g, x, l.stem, 1, 2)?;
    h = leaky(g, h)?;
    let mut levels = vec![h];
    for (down, (ra, rb)) in l.down.iter().zip(&l.residual) {
        h = conv(g, h, *down, 2, 1)?;
        h = leaky(g, h)?;
        let mut r = conv(g, h, *ra, 1, 1)?;
        r = leaky(g, r)?;
        r = conv(g, r, *rb, 1, 1)?;
        h = g.add(h, r)?;
        h = leaky(g, h)?;
        levels.push(h);
    }
    let flat = g.value(h).len() / batch;
    let h = g.reshape(h, &[batch, flat])?;
    let embedding = dense(g, h, l.encode_fc)?;
    Ok(EncoderOutput { embedding, levels })
}

/// Decoder: dense expansion, conv + pixel shuffle per level, 5x5 tanh output conv.
///
/// `skips` are the encoder levels from the matching [`encode`] call; pass
/// `None` for a model built without skip connections.
pub fn decode<T: Scalar>(
    g: &mut Graph<'_, T>,
    w: &ModelWeights<T>,
    embedding: NodeId,
    skips: Option<&[NodeId]>,
) -> Result<NodeId> {
    let s = w.scale;
    let l = &w.layout;
    if skips.is_some() != w.variant.skip_connections {
        return Err(Error::Contract(format!(
            "decoder built with skip_connections={} called with{} skip features",
            w.variant.skip_connections,
            if skips.is_some() { "" } else { "out" }
        )));
    }
    if let Some(skips) = skips {
        if skips.len() != s.n_blocks + 1 {
            return Err(Error::dim(
                "decode",
                format!("expected {} skip feature maps, got {}", s.n_blocks + 1, skips.len()),
            ));
        }
    }
    let batch = g.shape(embedding)[0];
    let top = s.top_size();
    let mut h = dense(g, embedding, l.decode_fc)?;
    h = leaky(g, h)?;
    h = g.reshape(h, &[batch, top, top, s.top_width()])?;

    let join = |g: &mut Graph<'_, T>, h: NodeId, level: usize| -> Result<NodeId> {
        let Some(skips) = skips else { return Ok(h) };
        let feat = skips[skips.len() - 1 - level];
        let (hs, fs) = (g.shape(h).to_vec(), g.shape(feat).to_vec());
        if hs[..3] != fs[..3] {
            return Err(Error::dim(
                "decode",
                format!("skip feature {fs:?} does not match decoder level {level} activation {hs:?}"),
            ));
        }
        g.concat(h, feat)
    };

    for (stage, up) in l.up.iter().enumerate() {
        h = join(g, h, stage)?;
        h = conv(g, h, *up, 1, 1)?;
        h = leaky(g, h)?;
        h = g.pixel_shuffle(h)?;
    }
    h = join(g, h, s.n_blocks)?;
    h = conv(g, h, l.out, 1, 1)?;
    g.tanh(h)
}

/// Prediction head: dense, leaky ReLU, dropout, dense, softmax.
pub fn predict<T: Scalar, R: Rng + ?Sized>(
    g: &mut Graph<'_, T>,
    w: &ModelWeights<T>,
    features: NodeId,
    opts: &ForwardOptions,
    rng: &mut R,
) -> Result<NodeId> {
    let fs = g.shape(features).to_vec();
    if fs.len() != 2 || fs[1] != w.head_input_width() {
        return Err(Error::dim(
            "predict",
            format!("head expects [batch, {}] features, got {fs:?}", w.head_input_width()),
        ));
    }
    let mut h = dense(g, features, w.layout.head_hidden)?;
    h = leaky(g, h)?;
    h = g.dropout(h, opts.dropout, opts.training, rng)?;
    h = dense(g, h, w.layout.head_out)?;
    g.softmax(h)
}

/// Domain classifier behind a gradient-reversal layer.
pub fn domain_head<T: Scalar>(g: &mut Graph<'_, T>, w: &ModelWeights<T>, embedding: NodeId, lambda_rev: f64) -> Result<NodeId> {
    let Some((hidden, out)) = w.layout.domain else {
        return Err(Error::Contract("model was built without a domain head".into()));
    };
    let r = g.gradient_reversal(embedding, lambda_rev)?;
    let mut h = dense(g, r, hidden)?;
    h = leaky(g, h)?;
    h = dense(g, h, out)?;
    g.softmax(h)
}

fn reconstruct<T: Scalar>(g: &mut Graph<'_, T>, w: &ModelWeights<T>, enc: &EncoderOutput) -> Result<NodeId> {
    let skips = w.variant.skip_connections.then_some(enc.levels.as_slice());
    decode(g, w, enc.embedding, skips)
}

/// Single-stream hourglass: encoder, head, and optionally decoder and domain head.
pub fn forward_standard<T: Scalar, R: Rng + ?Sized>(
    g: &mut Graph<'_, T>,
    w: &ModelWeights<T>,
    x: NodeId,
    opts: &ForwardOptions,
    rng: &mut R,
) -> Result<ForwardOutputs> {
    if w.variant.personalized {
        return Err(Error::Contract("personalized weights need forward_personalized".into()));
    }
    let enc = encode(g, w, x)?;
    let class_probs = predict(g, w, enc.embedding, opts, rng)?;
    let reconstruction = if opts.decoder { Some(reconstruct(g, w, &enc)?) } else { None };
    let domain_probs = match opts.lambda_rev {
        Some(lambda) => Some(domain_head(g, w, enc.embedding, lambda)?),
        None => None,
    };
    Ok(ForwardOutputs { embedding: enc.embedding, reconstruction, class_probs, domain_probs })
}

/// Encoder and decoder without the prediction head (unlabeled streams).
pub fn forward_reconstruction<T: Scalar>(g: &mut Graph<'_, T>, w: &ModelWeights<T>, x: NodeId) -> Result<(NodeId, NodeId)> {
    let enc = encode(g, w, x)?;
    let recon = reconstruct(g, w, &enc)?;
    Ok((enc.embedding, recon))
}

/// Two weight-sharing streams: the head sees `(E(current) - E(baseline)) ⊕ E(current)`.
pub fn forward_personalized<T: Scalar, R: Rng + ?Sized>(
    g: &mut Graph<'_, T>,
    w: &ModelWeights<T>,
    current: NodeId,
    baseline: NodeId,
    opts: &ForwardOptions,
    rng: &mut R,
) -> Result<PersonalizedOutputs> {
    if !w.variant.personalized {
        return Err(Error::Contract("forward_personalized needs a personalized head".into()));
    }
    if g.shape(current) != g.shape(baseline) {
        return Err(Error::dim(
            "forward_personalized",
            format!("current {:?} vs baseline {:?}", g.shape(current), g.shape(baseline)),
        ));
    }
    let cur = encode(g, w, current)?;
    let base = encode(g, w, baseline)?;
    let residual = g.sub(cur.embedding, base.embedding)?;
    let head_input = g.concat(residual, cur.embedding)?;
    let class_probs = predict(g, w, head_input, opts, rng)?;
    let (current_reconstruction, baseline_reconstruction) = if opts.decoder {
        (Some(reconstruct(g, w, &cur)?), Some(reconstruct(g, w, &base)?))
    } else {
        (None, None)
    };
    Ok(PersonalizedOutputs {
        current_embedding: cur.embedding,
        baseline_embedding: base.embedding,
        residual,
        head_input,
        class_probs,
        current_reconstruction,
        baseline_reconstruction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, ArchitectureScale, ModelVariant};
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> ArchitectureScale {
        ArchitectureScale { input_size: 8, n_blocks: 2, base_channels: 2, embedding_dim: 6, ..ArchitectureScale::desk() }
    }

    fn input(batch: usize, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..batch * 8 * 8 * 2).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::new([batch, 8, 8, 2], data).unwrap()
    }

    #[test]
    fn standard_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = build_model::<f64, _>(tiny(), ModelVariant { domain_head: true, ..Default::default() }, &mut rng).unwrap();
        let mut g = Graph::new(&w.store);
        let x = g.input(input(3, 2)).unwrap();
        let opts = ForwardOptions { lambda_rev: Some(1.0), ..ForwardOptions::train() };
        let out = forward_standard(&mut g, &w, x, &opts, &mut rng).unwrap();
        assert_eq!(g.shape(out.embedding), &[3, 6]);
        assert_eq!(g.shape(out.class_probs), &[3, 6]);
        assert_eq!(g.shape(out.reconstruction.unwrap()), &[3, 8, 8, 2]);
        assert_eq!(g.shape(out.domain_probs.unwrap()), &[3, 2]);
        let recon = g.value(out.reconstruction.unwrap());
        assert!(recon.data().iter().all(|v| v.abs() <= 1.0));
        for row in g.value(out.class_probs).data().chunks(6) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn no_skip_variant_runs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = build_model::<f64, _>(tiny(), ModelVariant { skip_connections: false, ..Default::default() }, &mut rng).unwrap();
        let mut g = Graph::new(&w.store);
        let x = g.input(input(2, 2)).unwrap();
        let (_, r) = forward_reconstruction(&mut g, &w, x).unwrap();
        assert_eq!(g.shape(r), &[2, 8, 8, 2]);
    }

    #[test]
    fn wrong_input_shape_is_a_dimension_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = build_model::<f64, _>(tiny(), ModelVariant::default(), &mut rng).unwrap();
        let mut g = Graph::new(&w.store);
        let x = g.input(Tensor::zeros([1, 16, 16, 2])).unwrap();
        assert!(matches!(encode(&mut g, &w, x), Err(Error::Dimension { .. })));
    }

    #[test]
    fn personalized_residual_vanishes_for_identical_streams() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = build_model::<f64, _>(tiny(), ModelVariant { personalized: true, ..Default::default() }, &mut rng).unwrap();
        let mut g = Graph::new(&w.store);
        let a = g.input(input(2, 9)).unwrap();
        let b = g.input(input(2, 9)).unwrap();
        let out = forward_personalized(&mut g, &w, a, b, &ForwardOptions::eval(), &mut rng).unwrap();
        assert!(g.value(out.residual).data().iter().all(|v| *v == 0.0));
        assert_eq!(g.shape(out.head_input), &[2, 12]);
        assert!(out.current_reconstruction.is_none());
    }

    #[test]
    fn eval_mode_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = build_model::<f32, _>(tiny(), ModelVariant::default(), &mut rng).unwrap();
        let x = input(2, 3).cast::<f32>();
        let run = |seed| {
            let mut g = Graph::new(&w.store);
            let xi = g.input(x.clone()).unwrap();
            let o = forward_standard(&mut g, &w, xi, &ForwardOptions::eval(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            g.value(o.class_probs).data().to_vec()
        };
        assert_eq!(run(1), run(2));
    }
}
