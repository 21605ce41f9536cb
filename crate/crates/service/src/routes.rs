use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::Response;
use axum::routing::{get, post};
use axum::Router;
use explore_core::session::SessionStatus;
use explore_core::{ExplorationSession, Feedback, FeedbackItem, Label, SessionConfig, TupleId};
use tokio::sync::{Mutex, OwnedMutexGuard};

use crate::api::{
    ok, parse_body, ApiError, BatchDoc, CreateSession, DatasetDoc, FeedbackRequest, FeedbackSummary, Links, MetricsDoc,
    PredictionDoc, Quality, SampleDoc, SessionResource, SimilarDoc, TimingDoc,
};
use crate::config::merged_config;
use crate::manifest::DatasetEntry;

struct Slot {
    id: String,
    dataset: Arc<DatasetEntry>,
    session: ExplorationSession,
}

impl Slot {
    fn attributes(&self) -> Vec<String> {
        self.dataset.dataset.schema().attributes().iter().map(|a| a.name.clone()).collect()
    }

    fn resource(&self) -> SessionResource {
        SessionResource {
            id: self.id.clone(),
            dataset: self.dataset.id.clone(),
            status: self.session.status(),
            iteration: self.session.iteration(),
            attributes: self.attributes(),
            links: Links::for_session(&self.id),
        }
    }

    fn quality(&self) -> Option<Quality> {
        self.dataset.truth.as_ref().map(|t| {
            let m = self.session.evaluate(t);
            Quality {
                precision: m.precision,
                recall: m.recall,
                f_measure: m.f_measure,
            }
        })
    }
}

type SlotRef = Arc<Mutex<Slot>>;

struct Inner {
    datasets: BTreeMap<String, Arc<DatasetEntry>>,
    defaults: SessionConfig,
    sessions: RwLock<HashMap<String, SlotRef>>,
    next_id: AtomicU64,
}

/// Shared service state: the immutable dataset registry and live sessions.
#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

impl AppState {
    pub fn new(datasets: BTreeMap<String, Arc<DatasetEntry>>, defaults: SessionConfig) -> Self {
        Self {
            inner: Arc::new(Inner {
                datasets,
                defaults,
                sessions: RwLock::new(HashMap::new()),
                next_id: AtomicU64::new(1),
            }),
        }
    }

    fn slot(&self, id: &str) -> Result<SlotRef, ApiError> {
        let sessions = self.inner.sessions.read().unwrap_or_else(|p| p.into_inner());
        sessions.get(id).cloned().ok_or_else(|| ApiError::not_found("unknown-session", "session"))
    }

    /// Exclusive access for a mutating call; a concurrent holder means 409.
    fn claim(&self, id: &str) -> Result<OwnedMutexGuard<Slot>, ApiError> {
        self.slot(id)?.try_lock_owned().map_err(|_| ApiError::busy())
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/v1/datasets", get(list_datasets))
        .route("/v1/sessions", post(create_session))
        .route("/v1/sessions/{id}", get(get_session).delete(terminate))
        .route("/v1/sessions/{id}/batch", post(next_batch))
        .route("/v1/sessions/{id}/feedback", post(post_feedback))
        .route("/v1/sessions/{id}/prediction", get(prediction))
        .route("/v1/sessions/{id}/metrics", get(metrics))
        .route("/v1/health", get(|| async { "ok" }))
        .with_state(state)
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))
}

async fn list_datasets(State(state): State<AppState>) -> Response {
    let docs: Vec<DatasetDoc> = state
        .inner
        .datasets
        .values()
        .map(|d| DatasetDoc {
            id: d.id.clone(),
            tuples: d.dataset.len(),
            attributes: d.dataset.schema().attributes().iter().map(|a| a.name.clone()).collect(),
            has_truth: d.truth.is_some(),
        })
        .collect();
    ok(StatusCode::OK, docs)
}

async fn create_session(State(state): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let req: CreateSession = parse_body(&body)?;
    let dataset = state
        .inner
        .datasets
        .get(&req.dataset)
        .cloned()
        .ok_or_else(|| ApiError::not_found("unknown-dataset", "dataset"))?;
    let config = match &req.config {
        Some(patch) => merged_config(&state.inner.defaults, patch).map_err(ApiError::bad_request)?,
        None => state.inner.defaults.clone(),
    };
    config.validate()?;
    let seed = req.seed;
    let ds = dataset.clone();
    let session = blocking(move || {
        let resources = ds.resources_for(&config)?;
        ExplorationSession::with_resources(resources, config, seed)
    })
    .await??;
    let n = state.inner.next_id.fetch_add(1, Ordering::Relaxed);
    let id = format!("s{n}");
    let slot = Slot { id: id.clone(), dataset, session };
    let doc = slot.resource();
    state
        .inner
        .sessions
        .write()
        .unwrap_or_else(|p| p.into_inner())
        .insert(id, Arc::new(Mutex::new(slot)));
    Ok(ok(StatusCode::CREATED, doc))
}

async fn get_session(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let slot = state.slot(&id)?;
    let slot = slot.lock().await;
    Ok(ok(StatusCode::OK, slot.resource()))
}

fn batch_doc(slot: &Slot, samples: Vec<explore_core::Sample>) -> BatchDoc {
    BatchDoc {
        session: slot.id.clone(),
        status: slot.session.status(),
        iteration: slot.session.iteration(),
        samples: samples
            .into_iter()
            .map(|s| SampleDoc {
                id: s.id.0,
                values: s.values,
                phase: s.phase,
            })
            .collect(),
    }
}

/// Draws the next batch; an exhausted session completes with an empty one.
async fn next_batch(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let slot = state.claim(&id)?;
    match slot.session.status() {
        SessionStatus::AwaitingFeedback => Err(explore_core::Error::BatchPending.into()),
        SessionStatus::Completed => Ok(ok(StatusCode::OK, batch_doc(&slot, Vec::new()))),
        SessionStatus::Ready => {
            let doc = blocking(move || {
                let mut slot = slot;
                match slot.session.next_samples() {
                    Ok(samples) => Ok(batch_doc(&slot, samples)),
                    Err(explore_core::Error::Exhausted) => {
                        slot.session.terminate();
                        Ok(batch_doc(&slot, Vec::new()))
                    }
                    Err(e) => Err(ApiError::from(e)),
                }
            })
            .await??;
            Ok(ok(StatusCode::OK, doc))
        }
    }
}

async fn post_feedback(State(state): State<AppState>, Path(id): Path<String>, body: Bytes) -> Result<Response, ApiError> {
    let req: FeedbackRequest = parse_body(&body)?;
    let slot = state.claim(&id)?;
    if slot.session.status() != SessionStatus::AwaitingFeedback {
        return Err(ApiError::new(StatusCode::CONFLICT, "no-pending-batch", "request a batch before sending feedback"));
    }
    let schema = slot.dataset.dataset.schema().clone();
    let mut items = Vec::with_capacity(req.items.len());
    for e in req.items {
        let dims = match e.dims {
            Some(names) if e.label == Label::Similar => Some(
                names
                    .iter()
                    .map(|n| schema.index_of(n).ok_or_else(|| explore_core::Error::UnknownAttribute(n.clone())))
                    .collect::<Result<Vec<usize>, _>>()?,
            ),
            Some(_) => return Err(ApiError::bad_request("dims are only allowed on similar labels")),
            None => None,
        };
        items.push(FeedbackItem {
            id: TupleId(e.id),
            label: e.label,
            dims,
        });
    }
    let (slot, outcome) = blocking(move || {
        let mut slot = slot;
        let outcome = slot.session.submit_feedback(&Feedback { items });
        (slot, outcome)
    })
    .await?;
    let summary = outcome?;
    let names = slot.attributes();
    let doc = FeedbackSummary {
        session: slot.id.clone(),
        status: slot.session.status(),
        iteration: summary.iteration,
        labels: summary.labels,
        relevant_regions: summary.relevant_regions,
        irrelevant_regions: summary.irrelevant_regions,
        degenerate: summary.degenerate,
        query: summary.query,
        similar: summary
            .similar
            .into_iter()
            .map(|s| SimilarDoc {
                id: s.id.0,
                dims: s.dims.iter().map(|&j| names[j].clone()).collect(),
            })
            .collect(),
        quality: slot.quality(),
    };
    Ok(ok(StatusCode::OK, doc))
}

async fn prediction(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let slot = state.slot(&id)?;
    let slot = slot.lock().await;
    let snapshot = slot.session.snapshot();
    let doc = match slot.session.current_prediction() {
        Ok(p) => PredictionDoc {
            session: slot.id.clone(),
            model: true,
            query: Some(p.query.text().to_owned()),
            relevant: Some(p.relevant),
            irrelevant: Some(p.irrelevant),
            grid: snapshot.grid,
        },
        Err(explore_core::Error::NoModel) => PredictionDoc {
            session: slot.id.clone(),
            model: false,
            query: None,
            relevant: None,
            irrelevant: None,
            grid: snapshot.grid,
        },
        Err(e) => return Err(e.into()),
    };
    Ok(ok(StatusCode::OK, doc))
}

async fn metrics(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let slot = state.slot(&id)?;
    let slot = slot.lock().await;
    let doc = MetricsDoc {
        session: slot.id.clone(),
        status: slot.session.status(),
        iteration: slot.session.iteration(),
        labels: slot.session.label_counts(),
        shown: slot.session.shown_count(),
        last_iteration: slot.session.timings().last().map(|t| TimingDoc {
            sampling_seconds: t.sampling_seconds,
            training_seconds: t.training_seconds,
        }),
        quality: slot.quality(),
    };
    Ok(ok(StatusCode::OK, doc))
}

async fn terminate(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let mut slot = state.claim(&id)?;
    slot.session.terminate();
    let doc = slot.resource();
    drop(slot);
    state.inner.sessions.write().unwrap_or_else(|p| p.into_inner()).remove(&id);
    Ok(ok(StatusCode::OK, doc))
}
