//! Dataset ingestion, chronological splitting and the clean / natural-noise /
//! random-noise / temporal training regimes.

mod ingest;
mod io;
mod matrix;
mod split;

pub use ingest::{ingest, parse, Dataset, InputFormat, RawInteraction, Vocab};
pub use io::{format_key_values, format_matrix, parse_key_values, parse_matrix, read_bundle, write_bundle};
pub use matrix::{Interaction, InteractionMatrix};
pub use split::{
    inject_random_noise, prepare_bundle, split_clean, split_natural_noise, split_sizes, split_temporal, Regime,
    SplitBundle, DEFAULT_RATIOS,
};
