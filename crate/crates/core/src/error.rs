use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    // corpus
    #[error("record {line} is missing field `{field}`")]
    MissingField { line: usize, field: &'static str },
    #[error("record {line}: label {label:?} is not one of the declared classes")]
    UnknownLabel { line: usize, label: String },
    #[error("dataset {0:?} has no records")]
    EmptyDataset(String),
    #[error("class {class:?} has {count} posts, fewer than the {k} folds requested")]
    InfeasibleStratification { class: String, count: usize, k: usize },

    // emotion graph
    #[error("no tokens left after tokenisation")]
    EmptyVocabulary,
    #[error("training diverged: non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    // backends
    #[error("backend {backend:?} failed: {reason}")]
    BackendFailure { backend: String, reason: String },
    #[error("{heads} attention heads do not divide encoder width {width}")]
    IncompatibleHead { heads: usize, width: usize },
    #[error("{param} = {value} is outside the search space {allowed}")]
    RangeError { param: String, value: String, allowed: String },

    // audio
    #[error("cannot chunk empty text")]
    EmptyText,
    #[error("backend {backend:?} returned a {seconds:.2} s clip, over its {max:.2} s limit")]
    ClipTooLong { backend: String, seconds: f64, max: f64 },
    #[error("invalid patch grid: {0}")]
    InvalidPatchGrid(String),

    // distillation
    #[error("teacher distributions disagree on class count ({expected} vs {found})")]
    ClassMismatch { expected: usize, found: usize },
    #[error("no cached {modality} teacher output for post {post:?}")]
    MissingTeacherOutput { post: String, modality: String },
    #[error("fusion mode {mode} needs a {modality} vector")]
    MissingModality { mode: String, modality: String },

    // evaluation
    #[error("label sequences differ in length ({truth} truth vs {pred} predicted)")]
    LengthMismatch { truth: usize, pred: usize },
    #[error("duration bin {bin} class {class:?} has {found} samples, {needed} needed")]
    InsufficientSamples { bin: String, class: String, found: usize, needed: usize },

    // harness
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("stage {stage}: {source}")]
    Stage { stage: String, source: Box<Error> },
    #[error("fold {fold}: {source}")]
    Fold { fold: usize, source: Box<Error> },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Autograd(#[from] mmkd_autograd::Error),
    #[error("plot: {0}")]
    Plot(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn at_stage(self, stage: impl Into<String>) -> Self {
        Error::Stage { stage: stage.into(), source: Box::new(self) }
    }

    pub fn in_fold(self, fold: usize) -> Self {
        Error::Fold { fold, source: Box::new(self) }
    }

    pub fn backend(backend: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::BackendFailure { backend: backend.into(), reason: reason.into() }
    }
}

/// Attach a stage name to any error in a `Result`.
pub trait StageExt<T> {
    fn stage(self, stage: &str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &str) -> Result<T> {
        self.map_err(|e| e.at_stage(stage))
    }
}
