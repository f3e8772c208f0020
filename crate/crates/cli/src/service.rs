//! HTTP completion service.
//!
//! Sampling runs on blocking threads behind a semaphore so at most `workers`
//! jobs compute at once; the model is shared read-only.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use ict_core::image::{Mask, RgbImage};
use ict_core::pipeline::Model;
use ict_core::sampler::SamplingConfig;
use ict_core::data::io::encode_png;
use serde::de::DeserializeOwned;
use tokio::sync::Semaphore;

use crate::wire::*;

#[derive(Clone)]
pub struct AppState {
    model: Option<Arc<Model>>,
    permits: Arc<Semaphore>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn bad(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(ErrorBody { error: self.message })).into_response()
    }
}

pub fn router(model: Option<Model>, workers: usize) -> Router {
    let state = AppState {
        model: model.map(Arc::new),
        permits: Arc::new(Semaphore::new(workers.max(1))),
    };
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/complete", post(complete))
        .route("/v1/prob-map", get(prob_map).post(prob_map))
        .with_state(state)
}

pub fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

pub async fn serve(addr: SocketAddr, model: Option<Model>, workers: usize) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(model, workers)).await?;
    Ok(())
}

pub fn model_info(m: &Model) -> ModelInfo {
    let c = m.transformer.config();
    ModelInfo {
        seq_len: c.seq_len(),
        side: c.side,
        width: c.width,
        layers: c.layers,
        heads: c.heads,
        vocab_size: c.vocab_size,
        upsampler: m.upsampler.is_some(),
        discriminator: m.discriminator.is_some(),
    }
}

async fn health(State(s): State<AppState>) -> Response {
    match &s.model {
        Some(m) => Json(Health {
            status: "ok".into(),
            model_config: Some(model_info(m)),
        })
        .into_response(),
        None => (
            StatusCode::SERVICE_UNAVAILABLE,
            Json(Health {
                status: "no model loaded".into(),
                model_config: None,
            }),
        )
            .into_response(),
    }
}

fn loaded(s: &AppState) -> Result<Arc<Model>, ApiError> {
    s.model
        .clone()
        .ok_or_else(|| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "no model loaded"))
}

fn parse<T: DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad(format!("malformed request: {e}")))
}

fn decode_pair(image: &str, mask: &str) -> Result<(RgbImage, Mask), ApiError> {
    let image = decode_image("image", image).map_err(ApiError::bad)?;
    let mask = decode_mask("mask", mask).map_err(ApiError::bad)?;
    if image.dims() != mask.dims() {
        return Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            format!("mask is {:?} but image is {:?}", mask.dims(), image.dims()),
        ));
    }
    Ok((image, mask))
}

async fn run_blocking<T: Send + 'static>(
    s: &AppState,
    job: impl FnOnce() -> ict_core::Result<T> + Send + 'static,
) -> Result<T, ApiError> {
    let _permit = s
        .permits
        .acquire()
        .await
        .map_err(|_| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "worker pool closed"))?;
    tokio::task::spawn_blocking(job)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .map_err(|e| ApiError::bad(e.to_string()))
}

async fn complete(State(s): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let model = loaded(&s)?;
    let req: CompletionRequest = parse(&body)?;
    let (image, mask) = decode_pair(&req.image, &req.mask)?;
    if req.num_samples == 0 || req.num_samples > MAX_SAMPLES {
        return Err(ApiError::bad(format!("num_samples must be in 1..={MAX_SAMPLES}")));
    }
    let vocab = model.transformer.config().vocab_size;
    if req.top_k == 0 || req.top_k > vocab {
        return Err(ApiError::bad(format!("top_k must be in 1..={vocab}")));
    }
    let cfg = SamplingConfig::new(req.top_k, req.seed, req.num_samples);
    let done = run_blocking(&s, move || {
        let c = model.complete(&image, &mask, &cfg)?;
        let images = c
            .images
            .iter()
            .map(|i| encode_png(i).map(|b| encode_b64(&b)))
            .collect::<ict_core::Result<Vec<_>>>()?;
        let resp = CompletionResponse {
            images,
            prob_map: encode_b64(&c.prob_map.to_png()?),
            scores: c.scores,
        };
        Ok((resp, c.elapsed_ms))
    })
    .await?;
    let (resp, ms) = done;
    let mut r = Json(resp).into_response();
    if let Ok(v) = HeaderValue::from_str(&format!("{ms:.1}")) {
        r.headers_mut().insert("x-elapsed-ms", v);
    }
    Ok(r)
}

async fn prob_map(State(s): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let model = loaded(&s)?;
    let req: ProbMapRequest = parse(&body)?;
    let (image, mask) = decode_pair(&req.image, &req.mask)?;
    let png = run_blocking(&s, move || model.probability_map(&image, &mask)?.to_png()).await?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}
