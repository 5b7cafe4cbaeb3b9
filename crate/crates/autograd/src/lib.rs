//! Reverse-mode autodiff over dense `f64` matrices.
//!
//! Deliberately small: every model in mmkd is trained at desk scale on CPU,
//! and double precision keeps finite-difference gradient checks meaningful.

pub mod gradcheck;
pub mod graph;
pub mod nn;
pub mod optim;
pub mod params;

pub use gradcheck::{check_gradients, GradCheck};
pub use graph::{log_softmax_rows, softmax_rows, Graph, SparseMatrix, Var};
pub use nn::{Activation, Forward};
pub use optim::{AdamW, EarlyStopping, ReduceOnPlateau};
pub use params::{Grads, ParamId, ParamStore};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("corrupt parameter data: {0}")]
    Corrupt(String),
}
