//! Physics-informed neural networks on a 1D Poisson benchmark, with metrics
//! for how far a trained ensemble stays accurate outside its training
//! interval and rank-based tests comparing hyperparameter settings.
//!
//! The numerical core (jets, networks, loss gradients, optimizers) is
//! generic over [`Scalar`]; the aliases below fix it to `f64` or `f32`.

pub mod diff_engine;
pub mod error;
pub mod experiments;
pub mod genlevel;
pub mod jet;
pub mod mlp;
pub mod problem;
pub mod sampling;
pub mod scalar;
pub mod stats;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Jet = jet::Jet4<f64>;
pub type Jet32 = jet::Jet4<f32>;
pub type Params = mlp::ParamVector<f64>;
pub type Params32 = mlp::ParamVector<f32>;
pub type Model = training::TrainedModel<f64>;
pub type Model32 = training::TrainedModel<f32>;
pub type Objective = diff_engine::PinnObjective<f64>;
pub type Objective32 = diff_engine::PinnObjective<f32>;
