use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// The document does not match the schema. `field` is the path of the
    /// offending value inside the document.
    #[error("{path}: schema error at `{field}`: {message}")]
    Schema { path: PathBuf, field: String, message: String },
    /// A vector that must be normalised is too far from unit norm or total.
    #[error("normalization error at `{field}`: {detail}")]
    Normalization { field: String, detail: String },
    #[error("invalid value at `{field}`: {detail}")]
    Invalid { field: String, detail: String },
}

impl FormatError {
    pub(crate) fn invalid(field: impl Into<String>, detail: impl ToString) -> Self {
        FormatError::Invalid { field: field.into(), detail: detail.to_string() }
    }

    pub(crate) fn normalization(field: impl Into<String>, detail: impl Into<String>) -> Self {
        FormatError::Normalization { field: field.into(), detail: detail.into() }
    }
}
