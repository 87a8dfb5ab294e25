//! The two-channel hourglass: encoder E, decoder D with skip connections,
//! prediction head P and the optional gradient-reversal domain head.

pub mod forward;
pub mod scale;
pub mod weights;

pub use forward::{
    decode, domain_head, encode, forward_personalized, forward_reconstruction, forward_standard, predict,
    EncoderOutput, ForwardOptions, ForwardOutputs, PersonalizedOutputs, HEAD_DROPOUT,
};
pub use scale::{ArchitectureScale, LayerKind, LayerSpec, Part, N_CLASSES};
pub use weights::{build_model, Layout, ModelVariant, ModelWeights, ParamSubset, DOMAIN_HIDDEN, N_DOMAINS};
