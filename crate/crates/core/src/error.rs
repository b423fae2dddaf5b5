use thiserror::Error;

use crate::{autodiff, eval, infer, model, train, transition, treebank};

/// Top-level error for the command-line tools. The process exit code is 1
/// for usage errors, 2 for data errors and 3 for numeric failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Conllu(#[from] treebank::ConlluError),
    #[error(transparent)]
    Tree(#[from] treebank::TreeError),
    #[error(transparent)]
    Stats(#[from] treebank::StatsError),
    #[error(transparent)]
    Transition(#[from] transition::TransitionError),
    #[error(transparent)]
    Model(#[from] model::ModelError),
    #[error(transparent)]
    Infer(#[from] infer::InferError),
    #[error(transparent)]
    Train(#[from] train::TrainError),
    #[error(transparent)]
    Eval(#[from] eval::EvalError),
    #[error(transparent)]
    Autodiff(#[from] autodiff::AdError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 1,
            Error::Conllu(_)
            | Error::Tree(_)
            | Error::Stats(_)
            | Error::Transition(_)
            | Error::Io(_) => 2,
            Error::Model(e) => e.exit_code(),
            Error::Infer(e) => e.exit_code(),
            Error::Train(e) => e.exit_code(),
            Error::Eval(e) => e.exit_code(),
            Error::Autodiff(_) => 3,
        }
    }
}
