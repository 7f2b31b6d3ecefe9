//! Grouped latent multi-task learning for linear attribute classifiers.
//!
//! Every task's weight vector is a combination of a shared set of latent
//! classifiers, `W = L·S`. Training minimises a squared hinge loss with a
//! group-structured penalty on `S` that lets tasks in the same group share
//! latent classifiers, plus an elastic-net penalty on `L`.

pub mod baselines;
pub mod cv;
pub mod dataio;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod loss;
pub mod model;
pub mod optim;
pub mod regularizers;
pub mod trainer;

pub use error::{Error, Issue, Result};
pub use linalg::Matrix;
pub use model::{
    compose_w, validate, Dataset, Group, GroupPartition, GroupWeighting, Hyperparams, InitMode,
    LatentK, LatentModel, ObjectiveTerms, OuterRecord, SStepSolver, TaskData, TrainReport,
};
pub use trainer::{init_model, objective, train, train_with};
