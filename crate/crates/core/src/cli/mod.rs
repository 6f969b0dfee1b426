//! Configuration and the `prepare`/`train`/`eval`/`infer` commands behind
//! the `diffrec` binary.

mod commands;
mod config;

pub use commands::{
    cmd_eval, cmd_infer, cmd_prepare, cmd_train, format_recommendations, items_digest, parse_history, EvalResult,
    LoadedModel, Recommendation, TrainResult, TrainedRun,
};
pub use config::{ModelKind, RunConfig, DEFAULTS, MODEL_KEYS};
