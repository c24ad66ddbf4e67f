// SPDX-License-Identifier: MIT OR Apache-2.0

//! JSON-over-HTTP inference service for a conceptualized model.
//!
//! Routes:
//!
//! - `GET /health`: `{"status":"ok"}`, or 503 until a model is loaded.
//! - `GET /concepts`: concepts of the interactive Concept Layer, in order.
//! - `POST /project`: cosine scores and top-k concepts for a text.
//! - `POST /classify`: label and class probabilities, with optional
//!   interventions, plus the conceptual vector before and after them.
//!
//! Every error body is `{"code": ..., "message": ...}`. The loaded model is
//! never mutated by a request.

use std::collections::HashSet;
use std::net::SocketAddr;
use std::sync::{Arc, RwLock};

use axum::extract::rejection::JsonRejection;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tower_http::cors::CorsLayer;

use crate::error::{Error, Result};
use crate::eval::ClassificationHead;
use crate::layer::{ConceptLayer, ConceptualVector, InterventionSpec};
use crate::model::ConceptualizedModel;

pub const DEFAULT_TOP_K: usize = 10;

/// A conceptualized model, its classification head and the Concept Layer
/// exposed to clients.
#[derive(Debug, Clone)]
pub struct ServiceModel {
    model: ConceptualizedModel,
    head: ClassificationHead,
    layer_pos: usize,
    class_names: Option<Vec<String>>,
}

impl ServiceModel {
    /// Exposes the deepest Concept Layer.
    pub fn new(model: ConceptualizedModel, head: ClassificationHead) -> Result<Self> {
        let n = model.concept_layers().len();
        if n == 0 {
            return Err(Error::InvalidConfig("model has no concept layer".into()));
        }
        Self::with_layer(model, head, n - 1)
    }

    pub fn with_layer(
        model: ConceptualizedModel,
        head: ClassificationHead,
        layer_pos: usize,
    ) -> Result<Self> {
        if layer_pos >= model.concept_layers().len() {
            return Err(Error::Shape {
                expected: model.concept_layers().len(),
                found: layer_pos,
            });
        }
        if head.input_dim() != model.hidden_dim() {
            return Err(Error::Shape {
                expected: head.input_dim(),
                found: model.hidden_dim(),
            });
        }
        Ok(Self {
            model,
            head,
            layer_pos,
            class_names: None,
        })
    }

    pub fn with_class_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.head.class_count() {
            return Err(Error::Shape {
                expected: self.head.class_count(),
                found: names.len(),
            });
        }
        self.class_names = Some(names);
        Ok(self)
    }

    pub fn model(&self) -> &ConceptualizedModel {
        &self.model
    }

    pub fn head(&self) -> &ClassificationHead {
        &self.head
    }

    pub fn layer(&self) -> &ConceptLayer {
        &self.model.concept_layers()[self.layer_pos]
    }

    pub fn concepts(&self) -> ConceptsResponse {
        let layer = self.layer();
        ConceptsResponse {
            slice_index: layer.slice_index(),
            concepts: layer
                .concepts()
                .concepts()
                .iter()
                .enumerate()
                .map(|(index, c)| ConceptInfo {
                    index,
                    id: c.id().to_owned(),
                    tau: c.tau().to_owned(),
                })
                .collect(),
        }
    }

    pub fn project(&self, req: &ProjectRequest) -> Result<ProjectResponse> {
        project(&self.model, self.layer_pos, req)
    }

    pub fn classify(&self, req: &ClassifyRequest) -> Result<ClassifyResponse> {
        let layer = self.layer();
        let mut spec = InterventionSpec::new();
        let mut seen = HashSet::new();
        for iv in &req.interventions {
            if layer.concepts().index_of(&iv.concept_id).is_none() {
                return Err(Error::UnknownConcept(iv.concept_id.clone()));
            }
            if !seen.insert(iv.concept_id.as_str()) {
                return Err(Error::DuplicateConcept(iv.concept_id.clone()));
            }
            spec.set(&iv.concept_id, iv.factor)?;
        }
        let before = conceptual_vector(&self.model, self.layer_pos, &req.text)?;
        let after = layer.intervene(&before, &spec)?;
        let output = if spec.is_empty() {
            self.model.output(&req.text, None)?
        } else {
            self.model
                .output_intervening_at(&req.text, self.layer_pos, &spec)?
        };
        let probabilities = self.head.predict_proba(&output)?;
        let label = crate::eval::head::argmax(&probabilities);
        Ok(ClassifyResponse {
            label,
            label_name: self.class_names.as_ref().map(|names| names[label].clone()),
            probabilities: probabilities.iter().copied().collect(),
            before: before.cosines()?.iter().copied().collect(),
            after: after.cosines()?.iter().copied().collect(),
            top_k: top_k(layer, &after, req.top_k)?,
        })
    }
}

fn conceptual_vector(
    model: &ConceptualizedModel,
    layer_pos: usize,
    text: &str,
) -> Result<ConceptualVector> {
    if text.trim().is_empty() {
        return Err(Error::UninterpretableInput);
    }
    let cv = model.conceptual_vector(text, layer_pos)?;
    if cv.norm_of_source == 0.0 {
        return Err(Error::UninterpretableInput);
    }
    Ok(cv)
}

fn top_k(
    layer: &ConceptLayer,
    cv: &ConceptualVector,
    k: Option<usize>,
) -> Result<Vec<ScoredConcept>> {
    let k = k.unwrap_or(DEFAULT_TOP_K).min(layer.concept_count());
    Ok(layer
        .interpret(cv, k)?
        .into_iter()
        .map(|(id, score)| ScoredConcept { id, score })
        .collect())
}

/// Cosine scores and top-k concepts of `req.text` at Concept Layer `layer_pos`.
pub fn project(
    model: &ConceptualizedModel,
    layer_pos: usize,
    req: &ProjectRequest,
) -> Result<ProjectResponse> {
    let cv = conceptual_vector(model, layer_pos, &req.text)?;
    let layer = &model.concept_layers()[layer_pos];
    Ok(ProjectResponse {
        scores: cv.cosines()?.iter().copied().collect(),
        norm: cv.norm_of_source,
        top_k: top_k(layer, &cv, req.top_k)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptInfo {
    pub index: usize,
    pub id: String,
    pub tau: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptsResponse {
    pub slice_index: usize,
    pub concepts: Vec<ConceptInfo>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectRequest {
    pub text: String,
    #[serde(default)]
    pub top_k: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredConcept {
    pub id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectResponse {
    /// Cosine score per concept, in concept order.
    pub scores: Vec<f64>,
    /// Norm of the latent the scores were computed from.
    pub norm: f64,
    pub top_k: Vec<ScoredConcept>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Intervention {
    pub concept_id: String,
    pub factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifyRequest {
    pub text: String,
    #[serde(default)]
    pub interventions: Vec<Intervention>,
    #[serde(default)]
    pub top_k: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifyResponse {
    pub label: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_name: Option<String>,
    pub probabilities: Vec<f64>,
    /// Cosine scores before interventions.
    pub before: Vec<f64>,
    /// Cosine scores after interventions.
    pub after: Vec<f64>,
    /// Top concepts of the intervened vector.
    pub top_k: Vec<ScoredConcept>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
}

/// Shared service state; empty until a model is loaded.
#[derive(Debug, Clone, Default)]
pub struct ServiceState {
    model: Arc<RwLock<Option<Arc<ServiceModel>>>>,
}

impl ServiceState {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn loaded(model: ServiceModel) -> Self {
        let state = Self::default();
        state.load(model);
        state
    }

    pub fn load(&self, model: ServiceModel) {
        *self.model.write().unwrap_or_else(|e| e.into_inner()) = Some(Arc::new(model));
    }

    fn current(&self) -> std::result::Result<Arc<ServiceModel>, ApiError> {
        self.model
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .clone()
            .ok_or_else(ApiError::not_ready)
    }
}

struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            body: ErrorBody {
                code: code.to_owned(),
                message: message.into(),
            },
        }
    }

    fn not_ready() -> Self {
        Self::new(
            StatusCode::SERVICE_UNAVAILABLE,
            "not_ready",
            "no model is loaded",
        )
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::UninterpretableInput
            | Error::UnknownConcept(_)
            | Error::DuplicateConcept(_)
            | Error::InvalidFactor { .. }
            | Error::InvalidConfig(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.code(), e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "invalid_request", e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = std::result::Result<Json<T>, ApiError>;

async fn health_handler(State(state): State<ServiceState>) -> ApiResult<HealthResponse> {
    state.current()?;
    Ok(Json(HealthResponse {
        status: "ok".into(),
    }))
}

async fn concepts_handler(State(state): State<ServiceState>) -> ApiResult<ConceptsResponse> {
    Ok(Json(state.current()?.concepts()))
}

async fn project_handler(
    State(state): State<ServiceState>,
    req: std::result::Result<Json<ProjectRequest>, JsonRejection>,
) -> ApiResult<ProjectResponse> {
    let model = state.current()?;
    let Json(req) = req?;
    Ok(Json(model.project(&req)?))
}

async fn classify_handler(
    State(state): State<ServiceState>,
    req: std::result::Result<Json<ClassifyRequest>, JsonRejection>,
) -> ApiResult<ClassifyResponse> {
    let model = state.current()?;
    let Json(req) = req?;
    Ok(Json(model.classify(&req)?))
}

pub fn router(state: ServiceState) -> Router {
    Router::new()
        .route("/health", get(health_handler))
        .route("/concepts", get(concepts_handler))
        .route("/project", post(project_handler))
        .route("/classify", post(classify_handler))
        .layer(CorsLayer::permissive())
        .with_state(state)
}

/// Binds `addr` and serves until `shutdown` resolves. Binding errors,
/// such as a busy port, are returned before any request is served.
pub async fn serve(
    state: ServiceState,
    addr: SocketAddr,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> Result<()> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| Error::io(format!("tcp://{addr}"), e))?;
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
        .map_err(|e| Error::io(format!("tcp://{addr}"), e))
}
