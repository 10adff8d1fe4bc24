//! Predicting translation ChrF from tokenizer fertility, token counts and
//! language metadata.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix it to `f64`, which is what the command-line tool uses.

pub mod chrf;
pub mod corpus;
pub mod eval;
pub mod features;
pub mod forest;
pub mod linear;
pub mod mlp;
pub mod model;
pub mod scalar;
mod seeding;
pub mod tokenizer;

pub use scalar::Scalar;
pub use seeding::mix as mix_seed;

pub type Matrix = features::EncodedMatrix<f64>;
pub type LinearModel = linear::LinearModel<f64>;
pub type Tree = forest::Tree<f64>;
pub type ForestModel = forest::ForestModel<f64>;
pub type GbtModel = forest::GbtModel<f64>;
pub type MlpModel = mlp::MlpModel<f64>;
pub type TrainedModel = model::TrainedModel<f64>;
