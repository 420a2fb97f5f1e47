use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, FromRequest, Multipart, Path, Request, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::cors::CorsLayer;

use vsearch_core::feature::image::content_digest;
use vsearch_core::feature::{
    extract_features, CropRect, DominantColor, FamilySource, FeatureBundle, RawImage,
};
use vsearch_core::retrieve::{Diagnostics, Query, RankedResult};
use vsearch_core::Error;

use crate::cache::CacheKey;
use crate::AppState;

pub fn router(state: Arc<AppState>) -> Router {
    let limit = state.config.max_upload_bytes;
    Router::new()
        .route("/v1/search", post(search))
        .route("/v1/health", get(health))
        .route("/v1/doc/{id}", get(doc))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "no such endpoint") })
        .layer(DefaultBodyLimit::max(limit))
        .layer(CorsLayer::permissive())
        .with_state(state)
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
    pub diagnostics: Option<Diagnostics>,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
            diagnostics: None,
        }
    }

    fn bad(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::UnknownDoc(_) => StatusCode::NOT_FOUND,
            Error::Decode(_) => StatusCode::UNPROCESSABLE_ENTITY,
            Error::AllShardsTimedOut(_) => StatusCode::GATEWAY_TIMEOUT,
            Error::InvalidCrop(_) | Error::Config(_) | Error::DimMismatch { .. } => {
                StatusCode::BAD_REQUEST
            }
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let diagnostics = match &e {
            Error::AllShardsTimedOut(d) => Some((**d).clone()),
            _ => None,
        };
        Self {
            status,
            message: e.to_string(),
            diagnostics,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.message, "status": self.status.as_u16() });
        if let Some(d) = self.diagnostics {
            body["diagnostics"] = serde_json::to_value(d).unwrap_or_default();
            body["partial"] = json!(true);
        }
        (self.status, Json(body)).into_response()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResponse {
    pub results: Vec<RankedResult>,
    pub diagnostics: Diagnostics,
    pub cache_hit: bool,
    pub partial: bool,
}

enum Source {
    Upload(Bytes),
    ImageId(u64),
    Embedding(Vec<f32>),
}

struct SearchRequest {
    source: Source,
    crop: Option<CropRect>,
    top_k: Option<usize>,
    deadline_ms: Option<u64>,
    exact_l2: Option<bool>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonBody {
    image_id: Option<u64>,
    embedding: Option<Vec<f32>>,
    crop: Option<CropRect>,
    top_k: Option<usize>,
    deadline_ms: Option<u64>,
    exact_l2: Option<bool>,
}

fn one_source(
    upload: Option<Bytes>,
    image_id: Option<u64>,
    embedding: Option<Vec<f32>>,
) -> Result<Source, ApiError> {
    match (upload, image_id, embedding) {
        (Some(b), None, None) => Ok(Source::Upload(b)),
        (None, Some(id), None) => Ok(Source::ImageId(id)),
        (None, None, Some(e)) => Ok(Source::Embedding(e)),
        (None, None, None) => Err(ApiError::bad(
            "request needs one of image, image_id or embedding",
        )),
        _ => Err(ApiError::bad(
            "request must carry exactly one of image, image_id or embedding",
        )),
    }
}

fn parse_field<T: std::str::FromStr>(name: &str, text: &str) -> Result<T, ApiError> {
    text.trim()
        .parse()
        .map_err(|_| ApiError::bad(format!("field {name}: cannot parse {text:?}")))
}

async fn parse_multipart(mut form: Multipart) -> Result<SearchRequest, ApiError> {
    let (mut upload, mut image_id, mut embedding) = (None, None, None);
    let mut req = SearchRequest {
        source: Source::ImageId(0),
        crop: None,
        top_k: None,
        deadline_ms: None,
        exact_l2: None,
    };
    let bad = |e: axum::extract::multipart::MultipartError| {
        ApiError::bad(format!("malformed multipart body: {e}"))
    };
    while let Some(field) = form.next_field().await.map_err(bad)? {
        let name = field.name().unwrap_or_default().to_string();
        if name == "image" {
            upload = Some(field.bytes().await.map_err(bad)?);
            continue;
        }
        let text = field.text().await.map_err(bad)?;
        match name.as_str() {
            "image_id" => image_id = Some(parse_field(&name, &text)?),
            "embedding" => {
                embedding = Some(
                    serde_json::from_str(&text)
                        .map_err(|e| ApiError::bad(format!("field embedding: {e}")))?,
                )
            }
            "crop" => {
                req.crop = Some(
                    serde_json::from_str(&text)
                        .map_err(|e| ApiError::bad(format!("field crop: {e}")))?,
                )
            }
            "top_k" => req.top_k = Some(parse_field(&name, &text)?),
            "deadline_ms" => req.deadline_ms = Some(parse_field(&name, &text)?),
            "exact_l2" => req.exact_l2 = Some(parse_field(&name, &text)?),
            other => return Err(ApiError::bad(format!("unknown field {other}"))),
        }
    }
    req.source = one_source(upload, image_id, embedding)?;
    Ok(req)
}

fn parse_json(body: &[u8]) -> Result<SearchRequest, ApiError> {
    let b: JsonBody = serde_json::from_slice(body)
        .map_err(|e| ApiError::bad(format!("malformed JSON body: {e}")))?;
    Ok(SearchRequest {
        source: one_source(None, b.image_id, b.embedding)?,
        crop: b.crop,
        top_k: b.top_k,
        deadline_ms: b.deadline_ms,
        exact_l2: b.exact_l2,
    })
}

async fn search(
    State(state): State<Arc<AppState>>,
    req: Request,
) -> Result<Json<SearchResponse>, ApiError> {
    let content_type = req
        .headers()
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .unwrap_or_default()
        .to_ascii_lowercase();
    let parsed = if content_type.starts_with("multipart/form-data") {
        let form = Multipart::from_request(req, &())
            .await
            .map_err(|e| ApiError::bad(e.body_text()))?;
        parse_multipart(form).await?
    } else if content_type.is_empty() || content_type.starts_with("application/json") {
        let body = Bytes::from_request(req, &())
            .await
            .map_err(|e| ApiError::new(e.status(), e.body_text()))?;
        parse_json(&body)?
    } else {
        return Err(ApiError::bad(format!(
            "unsupported content type {content_type}"
        )));
    };
    let state2 = state.clone();
    tokio::task::spawn_blocking(move || run_search(&state2, parsed))
        .await
        .map_err(|e| {
            ApiError::new(
                StatusCode::INTERNAL_SERVER_ERROR,
                format!("search task failed: {e}"),
            )
        })?
        .map(Json)
}

/// Resolves the query features: stored features for an indexed id, the
/// cache or a pipeline run for uploads, a bare Level-1 vector for embeddings.
fn query_features(
    state: &AppState,
    req: &SearchRequest,
) -> Result<(FeatureBundle, bool), ApiError> {
    let index = state.engine.index();
    let l1 = index.manifest().l1_family();
    let crop = req.crop.map(CropRect::validated).transpose()?;
    let full = crop.is_none_or(|c| c == CropRect::full());
    match &req.source {
        Source::ImageId(id) => {
            if !full {
                return Err(ApiError::bad(
                    "a crop needs uploaded image bytes; in-index queries use the whole image",
                ));
            }
            Ok((index.stored_bundle(*id)?, false))
        }
        Source::Embedding(v) => {
            if !full {
                return Err(ApiError::bad("a crop cannot apply to an embedding query"));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(ApiError::bad("embedding has non-finite values"));
            }
            let mut bundle = FeatureBundle::default();
            bundle.embeddings.insert(l1.to_string(), v.clone());
            Ok((bundle, false))
        }
        Source::Upload(bytes) => {
            let pipeline = state.pipeline.as_ref().ok_or_else(|| {
                ApiError::bad(
                    "this service has no feature pipeline; query by image_id or embedding",
                )
            })?;
            if pipeline
                .family(l1)
                .is_none_or(|f| f.source == FamilySource::External)
            {
                return Err(ApiError::bad(format!(
                    "the index's Level-1 family {l1} is not computed from pixels; query by image_id or embedding"
                )));
            }
            let crop = crop.filter(|c| *c != CropRect::full());
            let key = CacheKey::new(content_digest(bytes), crop.as_ref(), pipeline.digest());
            if let Some(bundle) = state.cache.get(&key) {
                return Ok((bundle, true));
            }
            let image = RawImage::decode(bytes)?;
            let bundle = extract_features(&image, crop.as_ref(), pipeline)?;
            state.cache.put(key, bundle.clone());
            Ok((bundle, false))
        }
    }
}

fn run_search(state: &AppState, req: SearchRequest) -> Result<SearchResponse, ApiError> {
    let top_k = req.top_k.unwrap_or(state.config.default_top_k);
    if top_k == 0 || top_k > state.config.max_top_k {
        return Err(ApiError::bad(format!(
            "top_k must be in 1..={}",
            state.config.max_top_k
        )));
    }
    if req.deadline_ms == Some(0) {
        return Err(ApiError::bad("deadline_ms must be positive"));
    }
    let (features, cache_hit) = query_features(state, &req)?;
    let mut query = Query::new(features, state.engine.default_cascade());
    query.top_k = top_k;
    query.cascade.l1_keep = query.cascade.l1_keep.max(top_k);
    if let Some(exact) = req.exact_l2 {
        query.cascade.l2_exact = exact;
    }
    query.deadline = req
        .deadline_ms
        .or(state.config.default_deadline_ms)
        .map(Duration::from_millis);
    let outcome = state.engine.search(&query)?;
    let partial = outcome.diagnostics.partial;
    Ok(SearchResponse {
        results: outcome.results,
        diagnostics: outcome.diagnostics,
        cache_hit,
        partial,
    })
}

#[derive(Serialize)]
struct CacheStatus {
    occupancy: usize,
    capacity: usize,
}

async fn health(State(state): State<Arc<AppState>>) -> Json<serde_json::Value> {
    let index = state.engine.index();
    let m = index.manifest();
    Json(json!({
        "status": "ok",
        "doc_count": index.doc_count(),
        "shard_count": index.shards().len(),
        "l1_family": m.l1_family(),
        "model_digests": m.digests,
        "pipeline_digest": state.pipeline.as_ref().map(|p| p.digest()),
        "cache": CacheStatus { occupancy: state.cache.len(), capacity: state.cache.capacity() },
    }))
}

#[derive(Serialize)]
struct DocView<'a> {
    image_id: u64,
    shard: usize,
    source_uri: &'a str,
    metadata_text: &'a str,
    category: Option<&'a str>,
    phash: Option<String>,
    digest: Option<String>,
    dominant_color: Option<DominantColor>,
}

async fn doc(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Response, ApiError> {
    let id: u64 = parse_field("id", &id)?;
    let index = state.engine.index();
    let (shard, _) = index.locate(id).ok_or(Error::UnknownDoc(id))?;
    let m = index.meta(id).ok_or(Error::UnknownDoc(id))?;
    let view = DocView {
        image_id: m.image_id,
        shard,
        source_uri: &m.source_uri,
        metadata_text: &m.metadata_text,
        category: m.category.as_deref(),
        phash: m.phash.map(|p| format!("{p:016x}")),
        digest: m.digest.map(|d| format!("{d:032x}")),
        dominant_color: m.dominant_color,
    };
    Ok(Json(view).into_response())
}
