//! HTTP service over exploration sessions. Every body is a JSON document
//! wrapped in a versioned envelope; errors carry a machine-readable code.
//!
//! Routes, all under `/v1`:
//!
//! | method | path | effect |
//! |---|---|---|
//! | GET | `/datasets` | registered datasets |
//! | POST | `/sessions` | create a session (201) |
//! | GET | `/sessions/{id}` | session resource |
//! | POST | `/sessions/{id}/batch` | next batch of samples |
//! | POST | `/sessions/{id}/feedback` | labels for shown tuples |
//! | GET | `/sessions/{id}/prediction` | regions, query and grid overlay |
//! | GET | `/sessions/{id}/metrics` | counts, timings and quality |
//! | DELETE | `/sessions/{id}` | terminate |
//!
//! Mutating calls take the session exclusively; a concurrent one gets 409
//! `session-busy`.

pub mod api;
pub mod config;
pub mod error;
pub mod manifest;
mod routes;

pub use config::ServiceConfig;
pub use error::{Result, ServiceError};
pub use manifest::{register, DatasetEntry, Manifest};
pub use routes::{router, AppState};
