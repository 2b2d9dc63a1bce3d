//! Forgery localization on top of a frozen latent codec with a high-pass
//! residual side channel.
//!
//! The numeric core (tensors, layers, codec, mapping networks, losses,
//! training) is generic over [`Scalar`]; `f32` is the training default and
//! `f64` backs the finite-difference and theory verification suites. The
//! aliases below pin the common concrete instantiations.

pub mod checkpoint;
pub mod codec;
pub mod data;
pub mod error;
pub mod mapping;
pub mod metrics;
pub mod nn;
pub mod objective;
pub mod rng;
pub mod robustness;
pub mod scalar;
pub mod srm;
pub mod tensor;
pub mod theory;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Image32 = data::ImageTensor<f32>;
pub type Image64 = data::ImageTensor<f64>;
pub type Prob32 = data::ProbMap<f32>;
pub type Prob64 = data::ProbMap<f64>;
pub type Residual32 = srm::ResidualTensor<f32>;
pub type Residual64 = srm::ResidualTensor<f64>;
pub type Latent32 = codec::LatentTensor<f32>;
pub type Latent64 = codec::LatentTensor<f64>;
pub type Codec32 = codec::CodecWeights<f32>;
pub type Codec64 = codec::CodecWeights<f64>;
pub type Localizer32 = train::Localizer<f32>;
pub type Localizer64 = train::Localizer<f64>;
