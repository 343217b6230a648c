pub mod acoustic;
pub mod adaptation;
pub mod audio;
pub mod autodiff;
pub mod corpus;
pub mod emotion;
pub mod error;
pub mod eval;
pub mod pipeline;
pub mod style;

pub use error::{Error, Result};
