use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use pyramem_core::config::ConfigError;
use pyramem_core::{IngestError, ReasonError, StoreError};
use serde::Serialize;
use serde_json::json;
use thiserror::Error;

/// A payload problem at one field path.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("{0}")]
    Io(String),
    #[error("{0} not found")]
    NotFound(String),
    #[error("invalid {what}: {}", describe(.fields))]
    Invalid { what: String, fields: Vec<FieldError> },
    #[error("{0}")]
    Conflict(String),
    #[error("adapter failure: {0}")]
    Adapter(String),
    #[error("unauthorized")]
    Unauthorized,
    #[error("{0}")]
    Internal(String),
}

fn describe(fields: &[FieldError]) -> String {
    let parts: Vec<String> = fields
        .iter()
        .map(|f| if f.field.is_empty() { f.message.clone() } else { format!("{}: {}", f.field, f.message) })
        .collect();
    parts.join("; ")
}

impl ServiceError {
    pub fn invalid(what: &str, field: impl Into<String>, message: impl Into<String>) -> Self {
        Self::Invalid {
            what: what.to_string(),
            fields: vec![FieldError {
                field: field.into(),
                message: message.into(),
            }],
        }
    }

    /// Process exit code of the CLI for this failure class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Io(_) => 3,
            Self::NotFound(_) => 4,
            Self::Invalid { .. } | Self::Unauthorized => 5,
            Self::Conflict(_) => 6,
            Self::Adapter(_) => 7,
            Self::Internal(_) => 1,
        }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            Self::Io(_) | Self::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
            Self::NotFound(_) => StatusCode::NOT_FOUND,
            Self::Invalid { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            Self::Conflict(_) => StatusCode::CONFLICT,
            Self::Adapter(_) => StatusCode::BAD_GATEWAY,
            Self::Unauthorized => StatusCode::UNAUTHORIZED,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Self::Io(_) => "io",
            Self::NotFound(_) => "not_found",
            Self::Invalid { .. } => "invalid",
            Self::Conflict(_) => "conflict",
            Self::Adapter(_) => "adapter",
            Self::Unauthorized => "unauthorized",
            Self::Internal(_) => "internal",
        }
    }

    pub fn body(&self) -> serde_json::Value {
        let mut body = json!({ "error": self.kind(), "message": self.to_string() });
        if let Self::Invalid { fields, .. } = self {
            body["fields"] = json!(fields);
        }
        body
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        (self.status(), Json(self.body())).into_response()
    }
}

impl From<StoreError> for ServiceError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::Io { .. } => Self::Io(e.to_string()),
            StoreError::NotFound(id) => Self::NotFound(format!("node {id}")),
            StoreError::Embedding { .. } | StoreError::GlobalUpdate { .. } => Self::Adapter(e.to_string()),
            StoreError::Snapshot(_) | StoreError::Invalid(_) | StoreError::Log { .. } => Self::Io(e.to_string()),
            other => Self::Internal(other.to_string()),
        }
    }
}

impl From<IngestError> for ServiceError {
    fn from(e: IngestError) -> Self {
        match e {
            IngestError::Unordered { index, .. } => Self::invalid("stream", format!("events[{index}].t"), e.to_string()),
            IngestError::InvalidEvent { line, ref message } => {
                let field = message.split(':').next().unwrap_or_default().trim();
                Self::invalid("stream", format!("line {line}: {field}"), message.clone())
            }
            IngestError::InvalidClipLen(_) => Self::invalid("config", "ingest.clip_len", e.to_string()),
            IngestError::Extraction { .. } => Self::Adapter(e.to_string()),
            IngestError::Store(s) => s.into(),
        }
    }
}

impl From<ReasonError> for ServiceError {
    fn from(e: ReasonError) -> Self {
        match e {
            ReasonError::InvalidQuery(m) => Self::invalid("query", "", m),
            ReasonError::Adapter { .. } => Self::Adapter(e.to_string()),
        }
    }
}

impl From<ConfigError> for ServiceError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Invalid { key, message } => Self::invalid("config", key, message),
            ConfigError::Adapter(a) => Self::invalid("config", "adapters", a.to_string()),
        }
    }
}

impl From<pyramem_bench::BenchError> for ServiceError {
    fn from(e: pyramem_bench::BenchError) -> Self {
        use pyramem_bench::BenchError as B;
        match e {
            B::UnknownVariant(v) => Self::invalid("variants", "variants", format!("unknown variant `{v}`")),
            B::UnknownWorkload(w) => Self::NotFound(format!("workload `{w}`")),
            B::InvalidWorkload(m) => Self::invalid("workload", "workload", m),
            B::Io(m) => Self::Io(m),
            B::Csv(c) => Self::Io(c.to_string()),
            B::Store(s) => s.into(),
            B::Ingest(i) => i.into(),
            B::Reason(r) => r.into(),
        }
    }
}

/// Decodes JSON with the failing field path in the error.
pub fn decode_json<T: serde::de::DeserializeOwned>(what: &str, bytes: &[u8]) -> Result<T, ServiceError> {
    let de = &mut serde_json::Deserializer::from_slice(bytes);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let field = if path == "." { String::new() } else { path };
        ServiceError::invalid(what, field, e.inner().to_string())
    })
}
