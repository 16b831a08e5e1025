//! Sparse-view cone-beam CT reconstruction with frequency-domain feature encoders.

pub mod autodiff;
pub mod caff;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod field;
pub mod freq_encoder;
pub mod geometry;
pub mod gradcheck;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod sart;
pub mod scalar;
pub mod spatial;
pub mod spectral;
pub mod tensor;
pub mod train;

pub use autodiff::{Grads, Tape, Var};
pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Tape32 = Tape<f32>;
pub type Tape64 = Tape<f64>;
pub type Volume32 = geometry::Volume<f32>;
pub type Volume64 = geometry::Volume<f64>;
pub type Model32 = model::Model<f32>;
pub type Model64 = model::Model<f64>;
