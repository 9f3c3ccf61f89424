use std::path::PathBuf;

use crate::classifier::ClassifierError;
use crate::dataset::DatasetError;
use crate::disguiser::DisguiseError;
use crate::dummyid::DummyError;
use crate::evalreport::EvalError;
use crate::nn::CheckpointError;
use crate::spectral::SpectralError;
use crate::topomap::TopomapError;

/// Any failure of a pipeline stage.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Topomap(#[from] TopomapError),
    #[error(transparent)]
    Dummy(#[from] DummyError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Disguise(#[from] DisguiseError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {source}", path.display())]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{0}")]
    Stage(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
        let path = path.into();
        move |source| Error::Io { path, source }
    }

    /// Process exit status for the CLI: 3 for configuration errors, 4 for
    /// everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 3,
            _ => 4,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
