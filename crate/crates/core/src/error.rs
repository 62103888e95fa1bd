//! Crate-wide error type.
//!
//! Every variant carries a stable machine code (see [`Error::code`]) that the
//! HTTP layer and CLI surface verbatim, so the set of codes is part of the
//! public contract.

use std::path::PathBuf;

use crate::fits::FitsError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Fits(#[from] FitsError),

    #[error("keyword {keyword} for field {field} holds an incompatible value: {found}")]
    TypeMismatch {
        field: &'static str,
        keyword: String,
        found: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("path not found: {0}")]
    PathNotFound(PathBuf),

    #[error("not a directory: {0}")]
    NotADirectory(PathBuf),

    #[error("no candidate FITS files found under the requested paths")]
    EmptyScan,

    #[error("unknown tag {0:?}")]
    UnknownTag(String),

    #[error("unknown selection {0}")]
    UnknownSelection(String),

    #[error("name {0:?} is already in use")]
    DuplicateName(String),

    #[error("unknown image {0}")]
    UnknownImage(i64),

    #[error("permission denied")]
    PermissionDenied,

    #[error("no line of the selection text resolved to a catalog image")]
    EmptyResolution,

    #[error("malformed line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },

    #[error("unknown user {0}")]
    UnknownUser(String),

    #[error("unknown group {0}")]
    UnknownGroup(String),

    #[error("unknown plugin {0:?}")]
    UnknownPlugin(String),

    #[error("plugin {0:?} is disabled")]
    PluginDisabled(String),

    #[error("invalid plugin descriptor: {0}")]
    InvalidDescriptor(String),

    #[error("config parse error at line {line}: {reason}")]
    ParseError { line: usize, reason: String },

    #[error("image source resolves to no images")]
    EmptyImageSource,

    #[error("unknown reference: {0}")]
    UnknownReference(String),

    #[error("unknown cart item {0}")]
    UnknownItem(i64),

    #[error("invalid pattern in criterion {index}: {reason}")]
    InvalidPattern { index: usize, reason: String },

    #[error("no cluster node satisfies the requested policy")]
    EmptyNodeSet,

    #[error("invalid requirements expression: {0}")]
    InvalidExpression(String),

    #[error("invalid node inventory line {line}: {reason}")]
    InvalidInventory { line: usize, reason: String },

    #[error("invalid submission field {field}: {reason}")]
    InvalidSubmission { field: String, reason: String },

    #[error("job {0} is already in a terminal state")]
    AlreadyTerminal(i64),

    #[error("unknown job {0}")]
    UnknownJob(i64),

    #[error("illegal job transition {from} -> {to}")]
    IllegalTransition { from: String, to: String },

    #[error("invalid credentials")]
    InvalidCredentials,

    #[error("missing, unknown or expired session token")]
    Unauthenticated,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("storage error: {0}")]
    Storage(#[from] rusqlite::Error),

    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Fits(e) => e.code(),
            Error::TypeMismatch { .. } => "TYPE_MISMATCH",
            Error::Io { .. } => "IO_ERROR",
            Error::PathNotFound(_) => "PATH_NOT_FOUND",
            Error::NotADirectory(_) => "NOT_A_DIRECTORY",
            Error::EmptyScan => "EMPTY_SCAN",
            Error::UnknownTag(_) => "UNKNOWN_TAG",
            Error::UnknownSelection(_) => "UNKNOWN_SELECTION",
            Error::DuplicateName(_) => "DUPLICATE_NAME",
            Error::UnknownImage(_) => "UNKNOWN_IMAGE",
            Error::PermissionDenied => "PERMISSION_DENIED",
            Error::EmptyResolution => "EMPTY_RESOLUTION",
            Error::MalformedLine { .. } => "MALFORMED_LINE",
            Error::UnknownUser(_) => "UNKNOWN_USER",
            Error::UnknownGroup(_) => "UNKNOWN_GROUP",
            Error::UnknownPlugin(_) => "UNKNOWN_PLUGIN",
            Error::PluginDisabled(_) => "PLUGIN_DISABLED",
            Error::InvalidDescriptor(_) => "INVALID_DESCRIPTOR",
            Error::ParseError { .. } => "PARSE_ERROR",
            Error::EmptyImageSource => "EMPTY_IMAGE_SOURCE",
            Error::UnknownReference(_) => "UNKNOWN_REFERENCE",
            Error::UnknownItem(_) => "UNKNOWN_ITEM",
            Error::InvalidPattern { .. } => "INVALID_PATTERN",
            Error::EmptyNodeSet => "EMPTY_NODE_SET",
            Error::InvalidExpression(_) => "INVALID_EXPRESSION",
            Error::InvalidInventory { .. } => "INVALID_INVENTORY",
            Error::InvalidSubmission { .. } => "INVALID_SUBMISSION",
            Error::AlreadyTerminal(_) => "ALREADY_TERMINAL",
            Error::UnknownJob(_) => "UNKNOWN_JOB",
            Error::IllegalTransition { .. } => "ILLEGAL_TRANSITION",
            Error::InvalidCredentials => "INVALID_CREDENTIALS",
            Error::Unauthenticated => "UNAUTHENTICATED",
            Error::InvalidArgument(_) => "INVALID_ARGUMENT",
            Error::Storage(_) => "STORAGE_ERROR",
            Error::Internal(_) => "INTERNAL_ERROR",
        }
    }

    /// HTTP status the service layer answers with.
    pub fn http_status(&self) -> u16 {
        match self {
            Error::InvalidCredentials | Error::Unauthenticated => 401,
            Error::PermissionDenied => 403,
            Error::UnknownTag(_)
            | Error::UnknownSelection(_)
            | Error::UnknownImage(_)
            | Error::UnknownUser(_)
            | Error::UnknownGroup(_)
            | Error::UnknownPlugin(_)
            | Error::UnknownReference(_)
            | Error::UnknownItem(_)
            | Error::UnknownJob(_)
            | Error::PathNotFound(_) => 404,
            Error::DuplicateName(_)
            | Error::EmptyNodeSet
            | Error::PluginDisabled(_)
            | Error::AlreadyTerminal(_)
            | Error::IllegalTransition { .. } => 409,
            Error::Storage(_) | Error::Internal(_) => 500,
            Error::Io { .. } => 500,
            _ => 400,
        }
    }

    /// Optional structured detail for API payloads.
    pub fn detail(&self) -> Option<serde_json::Value> {
        use serde_json::json;
        match self {
            Error::Fits(FitsError::MalformedCard { index, .. }) => Some(json!({ "card": index })),
            Error::TypeMismatch { field, keyword, .. } => {
                Some(json!({ "field": field, "keyword": keyword }))
            }
            Error::MalformedLine { line, .. } | Error::ParseError { line, .. } => {
                Some(json!({ "line": line }))
            }
            Error::InvalidPattern { index, .. } => Some(json!({ "criterion": index })),
            Error::InvalidInventory { line, .. } => Some(json!({ "line": line })),
            _ => None,
        }
    }
}
