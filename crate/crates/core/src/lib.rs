//! Interaction-aware highway trajectory forecasting.
//!
//! The pipeline runs in order: [`ingest`] NGSIM-style files, pick lane-change
//! egos and cut ego-centered [`scene`] pieces, split them with [`dataset`],
//! then train a [`model`] variant with [`train`] and score it with [`eval`].
//! Tensors and models are generic over [`Scalar`]. The aliases below fix the
//! pipeline's `f64` precision.

pub mod autodiff;
pub mod dataset;
pub mod eval;
pub mod ingest;
pub mod model;
pub mod plot;
pub mod scalar;
pub mod scene;
pub mod train;

pub use scalar::Scalar;

pub type Tensor = autodiff::Tensor<f64>;
pub type Tape<'p> = autodiff::Tape<'p, f64>;
pub type ParamStore = autodiff::ParamStore<f64>;
pub type Gradients = autodiff::Gradients<f64>;
pub type Adam = autodiff::Adam<f64>;
pub type Model = model::Model<f64>;
pub type SceneTensors = model::SceneTensors<f64>;
