pub mod assessment;
pub mod engine;
pub mod error;
pub mod latent;
pub mod likelihood;
pub mod mesh;
pub mod sparse;

pub use error::{Error, Result};
