//! Training, evaluation, prediction and ablation orchestration.

pub mod ablation;
pub mod augment;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod eval;
pub mod pairing;
pub mod predict;
pub mod trainer;

pub use ablation::{ablation_grid, run_ablation_suite, AblationCell, AblationTable};
pub use augment::{augment, AugmentConfig, ColorJitter};
pub use checkpoint::Checkpoint;
pub use config::TrainConfig;
pub use dataset::{DataSplit, Dataset, EvalSplit};
pub use eval::{evaluate, evaluate_model, s4_protocol_eval, S4Report};
pub use pairing::pair_samples;
pub use predict::{predict, PredictOutput};
pub use trainer::{train, TrainLog, TrainOutcome};
