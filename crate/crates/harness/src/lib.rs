//! Training, evaluation, checkpointing, benchmarking and the `mru` command
//! line for the multi-range encoder toolkit.

pub mod adam;
pub mod bench;
pub mod bundle;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod evaluate;
pub mod trainer;

pub use adam::Adam;
pub use bundle::ModelBundle;
pub use checkpoint::Checkpoint;
pub use config::TrainConfig;
pub use error::{HarnessError, Result};
pub use trainer::{train, EpochLog, TrainOutcome};
