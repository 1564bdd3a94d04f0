//! JSON-over-HTTP routes.
//!
//! | method | path | |
//! |---|---|---|
//! | POST | `/images` | upload `{image_id, image_base64, box?}` |
//! | GET | `/candidates/{image_id}?k=5` | ranked, exclusion-filtered candidates |
//! | POST | `/verdicts` | `{a, b, verdict, reviewer?}` |
//! | GET | `/export/individuals` | confirmed components |
//! | GET | `/thumbnails/{image_id}` | preprocessed crop (PNG) |
//! | GET | `/originals/{image_id}` | uploaded image (PNG) |

use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::json;

use reid_core::matchdb::{filter_candidates, CandidateQuery, Verdict};
use reid_core::preprocess::Planes;
use reid_core::Error;

use crate::state::Session;

pub type AppState = Arc<Session>;

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/images", post(upload))
        .route("/candidates/{image_id}", get(candidates))
        .route("/verdicts", post(verdict))
        .route("/export/individuals", get(individuals))
        .route("/thumbnails/{image_id}", get(thumbnail))
        .route("/originals/{image_id}", get(original))
        .with_state(state)
}

/// Error body `{"error": kind, "message": text}` with a status code.
#[derive(Debug)]
pub struct ApiError(StatusCode, &'static str, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({"error": self.1, "message": self.2}))).into_response()
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::UnknownImage(_) => (StatusCode::NOT_FOUND, "unknown_image"),
            Error::DuplicateImage(_) => (StatusCode::CONFLICT, "duplicate_image"),
            Error::SelfPair(_) => (StatusCode::CONFLICT, "self_pair"),
            Error::DegenerateBox(_) => (StatusCode::UNPROCESSABLE_ENTITY, "no_usable_box"),
            Error::Image(_) => (StatusCode::BAD_REQUEST, "undecodable_image"),
            Error::InvalidInput(_) | Error::Shape(_) => (StatusCode::BAD_REQUEST, "invalid_input"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        ApiError(status.0, status.1, e.to_string())
    }
}

fn bad_request(message: impl Into<String>) -> ApiError {
    ApiError(StatusCode::BAD_REQUEST, "invalid_input", message.into())
}

#[derive(Debug, Deserialize)]
pub struct UploadRequest {
    pub image_id: String,
    pub image_base64: String,
    #[serde(rename = "box")]
    pub bbox: Option<[i64; 4]>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct UploadResponse {
    pub image_id: String,
    pub status: String,
    pub thumbnail: String,
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 128 && id.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) && !id.starts_with('.')
}

async fn upload(State(s): State<AppState>, Json(req): Json<UploadRequest>) -> Result<(StatusCode, Json<UploadResponse>), ApiError> {
    if !valid_id(&req.image_id) {
        return Err(bad_request(format!("invalid image_id `{}`", req.image_id)));
    }
    let bytes = base64::engine::general_purpose::STANDARD
        .decode(req.image_base64.trim())
        .map_err(|e| ApiError(StatusCode::BAD_REQUEST, "undecodable_image", e.to_string()))?;
    let decoded = image::load_from_memory(&bytes)
        .map_err(|e| ApiError(StatusCode::BAD_REQUEST, "undecodable_image", e.to_string()))?;
    let img: Planes<f32> = Planes::from_rgb8(&decoded.to_rgb8());
    let Some(bbox) = s.resolve_box(&req.image_id, req.bbox) else {
        return Err(ApiError(
            StatusCode::UNPROCESSABLE_ENTITY,
            "no_usable_box",
            format!("no box supplied and no detection for `{}`", req.image_id),
        ));
    };
    let flagged = s
        .add_image(&req.image_id, &img, Some([bbox.x_min, bbox.y_min, bbox.x_max, bbox.y_max]))
        .await?;
    Ok((
        StatusCode::CREATED,
        Json(UploadResponse {
            thumbnail: format!("/thumbnails/{}", req.image_id),
            image_id: req.image_id,
            status: if flagged { "flagged_empty_mask" } else { "ok" }.into(),
        }),
    ))
}

#[derive(Debug, Deserialize)]
pub struct CandidateParams {
    pub k: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub image_id: String,
    pub score: f64,
    pub thumbnail: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CandidatesResponse {
    pub anchor: String,
    pub k: usize,
    pub candidates: Vec<Candidate>,
    /// Ids withheld because of confirmed components or rejections.
    pub excluded: Vec<String>,
    pub component_size: usize,
}

async fn candidates(
    State(s): State<AppState>,
    Path(id): Path<String>,
    Query(params): Query<CandidateParams>,
) -> Result<Json<CandidatesResponse>, ApiError> {
    let k = params.k.unwrap_or(s.top_k);
    if k == 0 {
        return Err(bad_request("k must be at least 1"));
    }
    let pool = s.scores(&id).await.ok_or_else(|| ApiError::from(Error::UnknownImage(id.clone())))?;
    let graph = s.graph.read().await;
    let query = CandidateQuery {
        anchor: id.clone(),
        pool,
        top_k: k,
    };
    let ranked = filter_candidates(&query, &graph);
    Ok(Json(CandidatesResponse {
        candidates: ranked
            .into_iter()
            .map(|(image_id, score)| Candidate {
                thumbnail: format!("/thumbnails/{image_id}"),
                image_id,
                score,
            })
            .collect(),
        excluded: graph.exclusion_set(&id).into_iter().collect(),
        component_size: graph.component_size(&id),
        anchor: id,
        k,
    }))
}

#[derive(Debug, Deserialize)]
pub struct VerdictRequest {
    pub a: String,
    pub b: String,
    pub verdict: String,
    pub reviewer: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct VerdictResponse {
    pub a: String,
    pub b: String,
    pub verdict: Verdict,
    pub previous: Option<Verdict>,
    pub component_size: usize,
    pub excluded: Vec<String>,
    pub merged_components: bool,
}

async fn verdict(State(s): State<AppState>, Json(req): Json<VerdictRequest>) -> Result<Json<VerdictResponse>, ApiError> {
    let verdict: Verdict = req.verdict.parse()?;
    let reviewer = req.reviewer.clone().unwrap_or_else(|| s.reviewer.clone());
    let mut graph = s.graph.write().await;
    let out = graph.record_verdict(&req.a, &req.b, verdict, &reviewer)?;
    Ok(Json(VerdictResponse {
        excluded: graph.exclusion_set(&req.a).into_iter().collect(),
        a: req.a,
        b: req.b,
        verdict,
        previous: out.previous,
        component_size: out.component_size,
        merged_components: out.merge.is_some(),
    }))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct IndividualsResponse {
    /// `component_id -> member image ids`.
    pub components: std::collections::BTreeMap<String, Vec<String>>,
}

async fn individuals(State(s): State<AppState>) -> Json<IndividualsResponse> {
    let graph = s.graph.read().await;
    let components = graph
        .components()
        .into_iter()
        .enumerate()
        .map(|(i, members)| (format!("individual_{i:04}"), members))
        .collect();
    Json(IndividualsResponse { components })
}

async fn png(path: std::path::PathBuf, id: &str) -> Result<Response, ApiError> {
    if !valid_id(id) {
        return Err(ApiError::from(Error::UnknownImage(id.to_string())));
    }
    match tokio::fs::read(&path).await {
        Ok(bytes) => Ok(([(header::CONTENT_TYPE, "image/png")], bytes).into_response()),
        Err(_) => Err(ApiError::from(Error::UnknownImage(id.to_string()))),
    }
}

async fn thumbnail(State(s): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    png(s.thumbnail_path(&id), &id).await
}

async fn original(State(s): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    png(s.original_path(&id), &id).await
}
