//! Minimal reverse-mode autodiff, parameter storage, layers and optimizers
//! shared by the acoustic, style and adaptation networks.

pub mod gradcheck;
pub mod graph;
pub mod nn;
pub mod optim;
pub mod params;

pub use gradcheck::{check_gradients, GradCheck};
pub use graph::{Graph, Gradients, Matrix, Var};
pub use nn::Ctx;
pub use optim::{Adam, OptimizerConfig, Schedule};
pub use params::{GradStore, ParamBuilder, ParamId, ParamStore};
