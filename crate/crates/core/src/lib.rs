pub mod cli;
pub mod data;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod latent;
pub mod nn;
pub mod schedule;
pub mod temporal;

pub use error::{Error, Result};
