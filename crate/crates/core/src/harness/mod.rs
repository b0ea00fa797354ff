//! Few-shot evaluation: seeded K-per-class splits, dev-set grid search,
//! multi-seed averaging and micro-F1 scoring.

pub mod experiment;
pub mod metrics;
pub mod split;
pub mod train;

pub use experiment::{
    format_table, grid_search, mean_std, run_experiment, run_experiment_with, Budget, EvalReport, ExperimentReport, GridOutcome,
    HparamGrid, HparamPoint, SplitResult, DEFAULT_SEEDS,
};
pub use metrics::{micro_f1, micro_f1_with_na, prf_counts, PrfCounts};
pub use split::{dev_pools, materialize, sample_split, FewShotSplit, Shots, SplitData};
pub use train::{
    EntityTarget, FewShotMethod, HeadFinetune, HeadModel, Majority, PromptTuning, StepLog, StepLogger, TrainConfig,
    TrainContext,
};
