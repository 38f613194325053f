use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    /// Bound checks need an isotropic filter density (i.i.d. gaussian entries).
    #[error("filter distribution {0} is not isotropic; theorem checks require gaussian filters")]
    Isotropy(String),

    #[error("wrong network variant: {0}")]
    WrongVariant(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error("missing forward cache: {0}")]
    MissingCache(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    /// True for errors caused by bad data (files, images, degenerate inputs)
    /// rather than by bad configuration.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Io(_)
                | Error::Format(_)
                | Error::Image(_)
                | Error::Csv(_)
                | Error::Degenerate(_)
                | Error::EmptyDataset
        )
    }
}

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Shape(msg.into()))
}

pub(crate) fn param_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Parameter(msg.into()))
}
