use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{ParamGroup, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::model::scale::ArchitectureScale;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Hidden width of the gradient-reversal domain classifier.
pub const DOMAIN_HIDDEN: usize = 64;
/// Number of domains the domain classifier separates.
pub const N_DOMAINS: usize = 2;

/// Structural options beyond the scale.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ModelVariant {
    /// Prediction head consumes `residual ⊕ embedding` (twice the embedding width).
    pub personalized: bool,
    /// Adds the domain classifier used by the gradient-reversal regime.
    pub domain_head: bool,
    /// Decoder stages concatenate the encoder map of matching resolution.
    pub skip_connections: bool,
}

impl Default for ModelVariant {
    fn default() -> Self {
        Self { personalized: false, domain_head: false, skip_connections: true }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ConvParams {
    pub kernel: ParamId,
    pub bias: ParamId,
}

#[derive(Clone, Copy, Debug)]
pub struct DenseParams {
    pub weight: ParamId,
    pub bias: ParamId,
}

/// Parameter handles, in the order they were allocated.
#[derive(Clone, Debug)]
pub struct Layout {
    pub stem: ConvParams,
    pub down: Vec<ConvParams>,
    pub residual: Vec<(ConvParams, ConvParams)>,
    pub encode_fc: DenseParams,
    pub decode_fc: DenseParams,
    pub up: Vec<ConvParams>,
    pub out: ConvParams,
    pub head_hidden: DenseParams,
    pub head_out: DenseParams,
    pub domain: Option<(DenseParams, DenseParams)>,
}

/// Encoder, decoder, prediction head (and optional domain head) parameters.
///
/// Every stream of a multi-stream forward pass reads this one store.
#[derive(Clone, Debug)]
pub struct ModelWeights<T> {
    pub scale: ArchitectureScale,
    pub variant: ModelVariant,
    pub store: ParamStore<T>,
    pub layout: Layout,
}

/// Subsets used for parameter counting.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamSubset {
    EncoderHead,
    EncoderHeadDecoder,
    All,
}

impl ParamSubset {
    fn groups(self) -> &'static [ParamGroup] {
        match self {
            ParamSubset::EncoderHead => &[ParamGroup::Encoder, ParamGroup::Head],
            ParamSubset::EncoderHeadDecoder => &[ParamGroup::Encoder, ParamGroup::Head, ParamGroup::Decoder],
            ParamSubset::All => &[ParamGroup::Encoder, ParamGroup::Head, ParamGroup::Decoder, ParamGroup::DomainHead],
        }
    }
}

/// Allocates parameters, either He-initialized from `rng` or zero-filled.
struct Builder<'r, T, R: ?Sized> {
    store: ParamStore<T>,
    rng: Option<&'r mut R>,
}

impl<T: Scalar, R: Rng + ?Sized> Builder<'_, T, R> {
    fn he(&mut self, shape: &[usize], fan_in: usize) -> Tensor<T> {
        let len: usize = shape.iter().product();
        match self.rng.as_deref_mut() {
            Some(rng) => {
                let std = (2.0 / fan_in as f64).sqrt();
                let data = (0..len)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(rng);
                        T::from_f64_lossy(z * std)
                    })
                    .collect();
                Tensor::new(shape.to_vec(), data).expect("shape and data agree")
            }
            None => Tensor::zeros(shape.to_vec()),
        }
    }

    fn conv(&mut self, name: &str, group: ParamGroup, k: usize, cin: usize, cout: usize) -> Result<ConvParams> {
        let kernel = self.he(&[k, k, cin, cout], k * k * cin);
        let kernel = self.store.insert(format!("{name}.kernel"), group, kernel)?;
        let bias = self.store.insert(format!("{name}.bias"), group, Tensor::zeros([cout]))?;
        Ok(ConvParams { kernel, bias })
    }

    fn dense(&mut self, name: &str, group: ParamGroup, inp: usize, out: usize) -> Result<DenseParams> {
        let weight = self.he(&[inp, out], inp);
        let weight = self.store.insert(format!("{name}.weight"), group, weight)?;
        let bias = self.store.insert(format!("{name}.bias"), group, Tensor::zeros([out]))?;
        Ok(DenseParams { weight, bias })
    }
}

fn allocate<T: Scalar, R: Rng + ?Sized>(
    scale: ArchitectureScale,
    variant: ModelVariant,
    rng: Option<&mut R>,
) -> Result<ModelWeights<T>> {
    scale.validate()?;
    let mut b = Builder { store: ParamStore::new(), rng };
    let enc = ParamGroup::Encoder;
    let dec = ParamGroup::Decoder;

    let stem = b.conv("enc.stem", enc, 3, scale.input_channels, scale.stem_channels())?;
    let mut down = Vec::with_capacity(scale.n_blocks);
    let mut residual = Vec::with_capacity(scale.n_blocks);
    let mut prev = scale.stem_channels();
    for i in 0..scale.n_blocks {
        let w = scale.block_width(i);
        down.push(b.conv(&format!("enc.down{i}"), enc, 3, prev, w)?);
        let first = b.conv(&format!("enc.res{i}.a"), enc, 3, w, w)?;
        let second = b.conv(&format!("enc.res{i}.b"), enc, 3, w, w)?;
        residual.push((first, second));
        prev = w;
    }
    let top_flat = scale.top_size() * scale.top_size() * scale.top_width();
    let encode_fc = b.dense("enc.fc", enc, top_flat, scale.embedding_dim)?;

    let decode_fc = b.dense("dec.fc", dec, scale.embedding_dim, top_flat)?;
    let skip_extra = |stage: usize| if variant.skip_connections { scale.skip_width(stage) } else { 0 };
    let mut up = Vec::with_capacity(scale.n_blocks);
    let mut chans = scale.top_width();
    for stage in 0..scale.n_blocks {
        let inc = chans + skip_extra(stage);
        up.push(b.conv(&format!("dec.up{stage}"), dec, 3, inc, 4 * scale.decoder_width(stage))?);
        chans = scale.decoder_width(stage);
    }
    let out = b.conv("dec.out", dec, 5, chans + skip_extra(scale.n_blocks), scale.input_channels)?;

    let head_in = if variant.personalized { 2 * scale.embedding_dim } else { scale.embedding_dim };
    let head_hidden = b.dense("head.hidden", ParamGroup::Head, head_in, scale.head_hidden())?;
    let head_out = b.dense("head.out", ParamGroup::Head, scale.head_hidden(), scale.n_classes)?;

    let domain = if variant.domain_head {
        let hidden = b.dense("domain.hidden", ParamGroup::DomainHead, scale.embedding_dim, DOMAIN_HIDDEN)?;
        let out = b.dense("domain.out", ParamGroup::DomainHead, DOMAIN_HIDDEN, N_DOMAINS)?;
        Some((hidden, out))
    } else {
        None
    };

    Ok(ModelWeights {
        scale,
        variant,
        store: b.store,
        layout: Layout { stem, down, residual, encode_fc, decode_fc, up, out, head_hidden, head_out, domain },
    })
}

/// Allocates and He-initializes every parameter; biases start at zero.
pub fn build_model<T: Scalar, R: Rng + ?Sized>(
    scale: ArchitectureScale,
    variant: ModelVariant,
    rng: &mut R,
) -> Result<ModelWeights<T>> {
    allocate(scale, variant, Some(rng))
}

impl<T: Scalar> ModelWeights<T> {
    /// Same layout as [`build_model`] with every value zero; used when loading checkpoints.
    pub fn zeroed(scale: ArchitectureScale, variant: ModelVariant) -> Result<Self> {
        allocate::<T, rand_chacha::ChaCha8Rng>(scale, variant, None)
    }

    pub fn count_parameters(&self, subset: ParamSubset) -> usize {
        self.store.count_values(subset.groups())
    }

    /// Replaces every parameter value with those of `other` (same layout required).
    pub fn copy_values_from(&mut self, other: &Self) -> Result<()> {
        if self.scale != other.scale || self.variant != other.variant {
            return Err(Error::Contract("cannot copy weights between different architectures".into()));
        }
        for ((_, dst), (_, src)) in self.store.iter_mut().zip(other.store.iter()) {
            dst.tensor.data_mut().copy_from_slice(src.tensor.data());
        }
        Ok(())
    }

    pub fn head_input_width(&self) -> usize {
        if self.variant.personalized {
            2 * self.scale.embedding_dim
        } else {
            self.scale.embedding_dim
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn build_is_deterministic_per_seed() {
        let a: ModelWeights<f32> =
            build_model(ArchitectureScale::desk(), ModelVariant::default(), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b: ModelWeights<f32> =
            build_model(ArchitectureScale::desk(), ModelVariant::default(), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let c: ModelWeights<f32> =
            build_model(ArchitectureScale::desk(), ModelVariant::default(), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert!(a.store.bit_identical(&b.store));
        assert!(!a.store.bit_identical(&c.store));
    }

    #[test]
    fn subsets_nest_and_desk_is_smaller() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let desk: ModelWeights<f32> = build_model(ArchitectureScale::desk(), ModelVariant::default(), &mut rng).unwrap();
        let ep = desk.count_parameters(ParamSubset::EncoderHead);
        let epd = desk.count_parameters(ParamSubset::EncoderHeadDecoder);
        assert!(ep < epd);
        let full_table: usize = ArchitectureScale::full().layer_table(true).iter().map(|l| l.params).sum();
        assert!(epd < full_table);
    }

    #[test]
    fn counts_agree_with_layer_table() {
        let scale = ArchitectureScale { input_size: 16, n_blocks: 2, base_channels: 2, embedding_dim: 8, ..ArchitectureScale::desk() };
        let w: ModelWeights<f64> = ModelWeights::zeroed(scale, ModelVariant::default()).unwrap();
        let table: usize = scale.layer_table(true).iter().map(|l| l.params).sum();
        assert_eq!(w.count_parameters(ParamSubset::EncoderHeadDecoder), table);
        let plain: ModelWeights<f64> =
            ModelWeights::zeroed(scale, ModelVariant { skip_connections: false, ..ModelVariant::default() }).unwrap();
        let table: usize = scale.layer_table(false).iter().map(|l| l.params).sum();
        assert_eq!(plain.count_parameters(ParamSubset::EncoderHeadDecoder), table);
    }

    #[test]
    fn personalized_head_doubles_input() {
        let scale = ArchitectureScale::desk();
        let w: ModelWeights<f32> = ModelWeights::zeroed(scale, ModelVariant { personalized: true, ..ModelVariant::default() }).unwrap();
        assert_eq!(w.store.tensor(w.layout.head_hidden.weight).shape(), &[256, 64]);
        assert_eq!(w.head_input_width(), 256);
    }
}
