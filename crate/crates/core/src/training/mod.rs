//! Joint objective, AdamW, the epoch loop with validation-based selection,
//! checkpoints and the grid-search driver.

pub mod checkpoint;
pub mod config;
pub mod optim;
pub mod trainer;

pub use checkpoint::{Checkpoint, NamedTensor};
pub use config::{TrainConfig, GRID_LAMBDAS, GRID_WORD_DIMS};
pub use optim::{AdamW, AdamWConfig};
pub use trainer::{
    adamw_config, build_model, evaluate, grid_search, train, train_epoch, train_model, EpochRecord, GridOutcome,
    GridRun, TrainOutcome,
};

/// Resolves an ablation name from a config or flag.
pub fn apply_ablation(name: &str) -> crate::Result<crate::model::Ablation> {
    name.parse()
}
