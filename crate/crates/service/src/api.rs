//! Wire documents and the error envelope.

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use explore_core::grid::GridSnapshot;
use explore_core::session::{LabelCounts, SessionStatus};
use explore_core::{Interval, Label, Phase};
use serde::{Deserialize, Serialize};

pub const API_VERSION: &str = "v1";

#[derive(Debug, Serialize)]
pub struct Envelope<T> {
    pub version: &'static str,
    pub data: T,
}

pub fn ok<T: Serialize>(status: StatusCode, data: T) -> Response {
    (status, Json(Envelope { version: API_VERSION, data })).into_response()
}

#[derive(Debug, Serialize)]
struct ErrorDoc {
    code: &'static str,
    message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    field: Option<String>,
}

#[derive(Debug, Serialize)]
struct ErrorEnvelope {
    version: &'static str,
    error: ErrorDoc,
}

/// An error response with a machine-readable code.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
    pub field: Option<String>,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
            field: None,
        }
    }

    pub fn not_found(code: &'static str, what: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, code, format!("{what} not found"))
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "invalid-request", message)
    }

    pub fn busy() -> Self {
        Self::new(StatusCode::CONFLICT, "session-busy", "another request holds this session")
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorEnvelope {
            version: API_VERSION,
            error: ErrorDoc {
                code: self.code,
                message: self.message,
                field: self.field,
            },
        };
        (self.status, Json(body)).into_response()
    }
}

impl From<explore_core::Error> for ApiError {
    fn from(e: explore_core::Error) -> Self {
        use explore_core::Error as E;
        let unprocessable = StatusCode::UNPROCESSABLE_ENTITY;
        let message = e.to_string();
        match e {
            E::InvalidConfig { field, .. } => Self {
                field: Some(field),
                ..Self::new(unprocessable, "invalid-config", message)
            },
            E::BatchPending => Self::new(StatusCode::CONFLICT, "batch-pending", message),
            E::Exhausted => Self::new(StatusCode::CONFLICT, "exhausted", message),
            E::NoModel => Self::new(StatusCode::CONFLICT, "no-model", message),
            E::UnknownTuple(_) => Self::new(unprocessable, "unknown-tuple", message),
            E::DuplicateFeedback(_) => Self::new(unprocessable, "duplicate-feedback", message),
            E::UnknownAttribute(name) => Self {
                field: Some(name),
                ..Self::new(unprocessable, "unknown-attribute", message)
            },
            E::InvalidArgument(_) | E::DimensionMismatch { .. } => Self::new(unprocessable, "invalid-argument", message),
            _ => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message),
        }
    }
}

pub fn parse_body<T: for<'de> Deserialize<'de>>(body: &[u8]) -> Result<T, ApiError> {
    if body.is_empty() {
        return serde_json::from_slice(b"{}").map_err(|e| ApiError::bad_request(e.to_string()));
    }
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(e.to_string()))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub dataset: String,
    #[serde(default)]
    pub seed: u64,
    /// Partial session configuration overlaid on the service defaults.
    #[serde(default)]
    pub config: Option<serde_json::Value>,
}

#[derive(Debug, Serialize)]
pub struct Links {
    #[serde(rename = "self")]
    pub this: String,
    pub batch: String,
    pub feedback: String,
    pub prediction: String,
    pub metrics: String,
}

impl Links {
    pub fn for_session(id: &str) -> Self {
        let base = format!("/{API_VERSION}/sessions/{id}");
        Self {
            batch: format!("{base}/batch"),
            feedback: format!("{base}/feedback"),
            prediction: format!("{base}/prediction"),
            metrics: format!("{base}/metrics"),
            this: base,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct SessionResource {
    pub id: String,
    pub dataset: String,
    pub status: SessionStatus,
    pub iteration: usize,
    pub attributes: Vec<String>,
    pub links: Links,
}

#[derive(Debug, Serialize)]
pub struct SampleDoc {
    pub id: u64,
    /// Raw values in attribute order.
    pub values: Vec<f64>,
    pub phase: Phase,
}

#[derive(Debug, Serialize)]
pub struct BatchDoc {
    pub session: String,
    pub status: SessionStatus,
    pub iteration: usize,
    pub samples: Vec<SampleDoc>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedbackEntry {
    pub id: u64,
    pub label: Label,
    /// Attribute names a similar label refers to; absent means all.
    #[serde(default)]
    pub dims: Option<Vec<String>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedbackRequest {
    pub items: Vec<FeedbackEntry>,
}

#[derive(Debug, Serialize)]
pub struct SimilarDoc {
    pub id: u64,
    pub dims: Vec<String>,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct Quality {
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
}

#[derive(Debug, Serialize)]
pub struct FeedbackSummary {
    pub session: String,
    pub status: SessionStatus,
    pub iteration: usize,
    pub labels: LabelCounts,
    pub relevant_regions: usize,
    pub irrelevant_regions: usize,
    pub degenerate: bool,
    pub query: Option<String>,
    pub similar: Vec<SimilarDoc>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub quality: Option<Quality>,
}

#[derive(Debug, Serialize)]
pub struct PredictionDoc {
    pub session: String,
    /// False until the first feedback trains a model.
    pub model: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub query: Option<String>,
    /// Predicted boxes in raw units.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub relevant: Option<Vec<Vec<Interval>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub irrelevant: Option<Vec<Vec<Interval>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSnapshot>,
}

#[derive(Debug, Serialize)]
pub struct TimingDoc {
    pub sampling_seconds: f64,
    pub training_seconds: f64,
}

#[derive(Debug, Serialize)]
pub struct MetricsDoc {
    pub session: String,
    pub status: SessionStatus,
    pub iteration: usize,
    pub labels: LabelCounts,
    pub shown: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub last_iteration: Option<TimingDoc>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub quality: Option<Quality>,
}

#[derive(Debug, Serialize)]
pub struct DatasetDoc {
    pub id: String,
    pub tuples: usize,
    pub attributes: Vec<String>,
    pub has_truth: bool,
}
