//! Multi-range gated sequence encoders, recurrent baselines, bi-attentive
//! reading-comprehension heads and the small autodiff engine they run on.

pub mod autodiff;
pub mod baselines;
pub mod data;
pub mod error;
pub mod gradsuite;
pub mod layers;
pub mod mask;
pub mod model;
pub mod mru;
pub mod rng;
pub mod scalar;
pub mod tensor;

pub use autodiff::{Graph, ParamId, ParameterStore, Var};
pub use baselines::{Encoder, EncoderKind};
pub use error::{Error, Result};
pub use mask::SeqMask;
pub use model::{BiAttentiveModel, ModelConfig};
pub use mru::{MruConfig, MruLayer, MruVariant, RangeSet};
pub use rng::Rng;
pub use scalar::{DType, Scalar};
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Store32 = ParameterStore<f32>;
pub type Store64 = ParameterStore<f64>;
