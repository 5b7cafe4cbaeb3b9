//! Experiment runner: configs, end-to-end runs, search and ablations.

pub mod ablation;
pub mod config;
pub mod pipeline;
pub mod search;

pub use ablation::{ablation_suite, AblationRow, Suite};
pub use config::{artifact_root, ExperimentConfig, Resources, ARTIFACT_ROOT_ENV, BUILTIN_TOY};
pub use pipeline::{run_experiment, run_experiment_at, run_split, RunSummary, SplitOutcome, TeacherStore};
pub use search::{replay_best, run_search, search_student, SearchOutcome, Trial, UniformSampler};
