//! Dense numerical substrate: matrices, a reverse-mode tape sized for MLPs
//! and VAE losses, parameter storage, Adam, and checkpoints.

mod adam;
mod checkpoint;
mod embedding;
mod matrix;
mod mlp;
mod params;
mod tape;

pub use adam::Adam;
pub use checkpoint::{Checkpoint, FORMAT_VERSION};
pub use embedding::timestep_embedding;
pub use matrix::DenseMatrix;
pub use mlp::{dropout_mask, mlp_forward, Activation, Linear, Mlp};
pub use params::{Gradients, ParamId, ParamStore, Tensor};
pub use tape::{Tape, TapeGrads, Var};
