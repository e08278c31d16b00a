//! Error kinds and their process exit codes.

use std::fmt;

use steerkit_core::backend::BackendError;
use steerkit_core::dataset::DatasetError;
use steerkit_core::elastic::ElasticError;
use steerkit_core::llm::LlmError;
use steerkit_core::metrics::MetricsError;
use steerkit_core::profile::ProfileError;
use steerkit_core::select::SelectError;
use steerkit_core::tensor::TensorError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Backend,
    Validation,
    Degenerate,
    NotFound,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Usage => 2,
            ErrorKind::Backend => 3,
            ErrorKind::Validation | ErrorKind::NotFound => 4,
            ErrorKind::Degenerate => 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AppError {
    pub kind: ErrorKind,
    pub message: String,
}

impl AppError {
    pub fn new(kind: ErrorKind, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Usage, message)
    }

    pub fn validation(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Validation, message)
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::NotFound, message)
    }

    pub fn exit_code(&self) -> i32 {
        self.kind.exit_code()
    }
}

impl fmt::Display for AppError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for AppError {}

pub type AppResult<T> = Result<T, AppError>;

fn tensor_kind(e: &TensorError) -> ErrorKind {
    match e {
        TensorError::DegenerateDirection { .. } => ErrorKind::Degenerate,
        _ => ErrorKind::Validation,
    }
}

impl From<TensorError> for AppError {
    fn from(e: TensorError) -> Self {
        Self::new(tensor_kind(&e), e.to_string())
    }
}

impl From<BackendError> for AppError {
    fn from(e: BackendError) -> Self {
        let kind = match &e {
            BackendError::Tensor(t) => tensor_kind(t),
            _ => ErrorKind::Backend,
        };
        Self::new(kind, e.to_string())
    }
}

impl From<LlmError> for AppError {
    fn from(e: LlmError) -> Self {
        Self::new(ErrorKind::Backend, e.to_string())
    }
}

impl From<DatasetError> for AppError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::Backend(b) => b.into(),
            DatasetError::Tensor(t) => t.into(),
            DatasetError::Llm(l) => l.into(),
            other => Self::validation(other.to_string()),
        }
    }
}

impl From<SelectError> for AppError {
    fn from(e: SelectError) -> Self {
        match e {
            SelectError::Llm(l) => l.into(),
            other => Self::validation(other.to_string()),
        }
    }
}

impl From<ElasticError> for AppError {
    fn from(e: ElasticError) -> Self {
        match e {
            ElasticError::Backend(b) => b.into(),
            ElasticError::Tensor(t) => t.into(),
            ElasticError::NonPositiveProjection { .. } | ElasticError::InvalidRange { .. } => {
                Self::new(ErrorKind::Degenerate, e.to_string())
            }
            ElasticError::NonFiniteDistance(_) => Self::new(ErrorKind::Backend, e.to_string()),
            other => Self::validation(other.to_string()),
        }
    }
}

impl From<ProfileError> for AppError {
    fn from(e: ProfileError) -> Self {
        match e {
            ProfileError::Elastic(x) => x.into(),
            ProfileError::Backend(x) => x.into(),
            ProfileError::Select(x) => x.into(),
            other => Self::validation(other.to_string()),
        }
    }
}

impl From<MetricsError> for AppError {
    fn from(e: MetricsError) -> Self {
        match e {
            MetricsError::Backend(x) => x.into(),
            MetricsError::Elastic(x) => x.into(),
            other => Self::validation(other.to_string()),
        }
    }
}

impl From<std::io::Error> for AppError {
    fn from(e: std::io::Error) -> Self {
        Self::validation(e.to_string())
    }
}

impl From<serde_json::Error> for AppError {
    fn from(e: serde_json::Error) -> Self {
        Self::validation(e.to_string())
    }
}
