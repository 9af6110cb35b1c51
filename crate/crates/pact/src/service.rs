//! JSON-over-HTTP API. Handlers decode, delegate to the engine, encode.
//! Reads share a read lock; every mutation takes the single write lock.

use std::sync::{Arc, RwLock};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Serialize;

use crate::api::{
    ApiError, CreateGroupRequest, OpenProposalRequest, SimRunRequest, VerifyRequest, VoteRequest,
    SIGNATORY_HEADER,
};
use crate::engine::Engine;
use crate::simio::{run_parallel, SimSummary};

pub type SharedEngine = Arc<RwLock<Engine>>;

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.http_status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn body<T>(payload: Result<Json<T>, JsonRejection>) -> ApiResult<T> {
    payload
        .map(|Json(v)| v)
        .map_err(|e| ApiError::bad_request(e.body_text()))
}

async fn read<T, F>(engine: &SharedEngine, f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(&Engine) -> ApiResult<T> + Send + 'static,
{
    let engine = engine.clone();
    tokio::task::spawn_blocking(move || f(&engine.read().unwrap_or_else(|e| e.into_inner())))
        .await
        .map_err(|e| ApiError::new(500, "INTERNAL", e.to_string()))?
}

async fn write<T, F>(engine: &SharedEngine, f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(&mut Engine) -> ApiResult<T> + Send + 'static,
{
    let engine = engine.clone();
    tokio::task::spawn_blocking(move || f(&mut engine.write().unwrap_or_else(|e| e.into_inner())))
        .await
        .map_err(|e| ApiError::new(500, "INTERNAL", e.to_string()))?
}

fn created<T: Serialize>(v: T) -> Response {
    (StatusCode::CREATED, Json(v)).into_response()
}

async fn create_group(
    State(engine): State<SharedEngine>,
    payload: Result<Json<CreateGroupRequest>, JsonRejection>,
) -> ApiResult<Response> {
    let req = body(payload)?;
    let group = write(&engine, move |e| Ok(e.create_group(req.signatories)?)).await?;
    Ok(created(group))
}

async fn get_group(State(engine): State<SharedEngine>, Path(id): Path<String>) -> ApiResult<Response> {
    let group = read(&engine, move |e| Ok(e.group(&id)?.clone())).await?;
    Ok(Json(group).into_response())
}

async fn open_proposal(
    State(engine): State<SharedEngine>,
    Path(group_id): Path<String>,
    payload: Result<Json<OpenProposalRequest>, JsonRejection>,
) -> ApiResult<Response> {
    let req = body(payload)?;
    let view = write(&engine, move |e| {
        Ok(e.open_proposal(&group_id, &req.text, req.kind, req.parent_version_id.as_deref())?)
    })
    .await?;
    Ok(created(view))
}

fn signatory_header(headers: &HeaderMap) -> Option<String> {
    headers
        .get(SIGNATORY_HEADER)
        .and_then(|v| v.to_str().ok())
        .filter(|s| !s.is_empty())
        .map(str::to_string)
}

/// Individual votes are shown only to members of the proposal's group, as
/// named by the signatory header. Everyone else gets `votes_hidden: true`.
async fn get_proposal(
    State(engine): State<SharedEngine>,
    Path(id): Path<String>,
    headers: HeaderMap,
) -> ApiResult<Response> {
    let viewer = signatory_header(&headers);
    let (view, member) = read(&engine, move |e| {
        let view = e.proposal(&id)?;
        let member = viewer.is_some_and(|v| {
            e.group(&view.proposal.group_id).is_ok_and(|g| g.signatory(&v).is_some())
        });
        Ok((view, member))
    })
    .await?;
    let mut doc = serde_json::to_value(view).expect("view serializes");
    if !member {
        if let Some(obj) = doc.as_object_mut() {
            obj.remove("submissions");
            obj.insert("votes_hidden".into(), true.into());
        }
    }
    Ok(Json(doc).into_response())
}

async fn cast_vote(
    State(engine): State<SharedEngine>,
    Path(id): Path<String>,
    headers: HeaderMap,
    payload: Result<Json<VoteRequest>, JsonRejection>,
) -> ApiResult<Response> {
    let signatory = signatory_header(&headers)
        .ok_or_else(|| ApiError::bad_request(format!("missing {SIGNATORY_HEADER} header")))?;
    let req = body(payload)?;
    let view = write(&engine, move |e| {
        Ok(e.cast_vote(&id, &signatory, req.submitted_hash, req.vote, req.vote_signature)?)
    })
    .await?;
    Ok(Json(view).into_response())
}

async fn finalize(State(engine): State<SharedEngine>, Path(id): Path<String>) -> ApiResult<Response> {
    let report = write(&engine, move |e| Ok(e.finalize(&id)?)).await?;
    Ok(Json(report).into_response())
}

async fn get_chain(State(engine): State<SharedEngine>) -> ApiResult<Response> {
    let blocks = read(&engine, |e| Ok(e.chain().blocks().to_vec())).await?;
    Ok(Json(blocks).into_response())
}

async fn verify_chain(State(engine): State<SharedEngine>) -> ApiResult<Response> {
    let verdict = read(&engine, |e| Ok(e.verify_chain())).await?;
    Ok(Json(verdict).into_response())
}

async fn history(State(engine): State<SharedEngine>, Path(id): Path<String>) -> ApiResult<Response> {
    let entries = read(&engine, move |e| Ok(e.history(&id)?)).await?;
    Ok(Json(entries).into_response())
}

async fn verify_document(
    State(engine): State<SharedEngine>,
    payload: Result<Json<VerifyRequest>, JsonRejection>,
) -> ApiResult<Response> {
    let req = body(payload)?;
    let att = read(&engine, move |e| Ok(e.verify_document(&req.text))).await?;
    Ok(Json(att).into_response())
}

async fn sim_run(payload: Result<Json<SimRunRequest>, JsonRejection>) -> ApiResult<Response> {
    let req = body(payload)?;
    let (summary, log) = tokio::task::spawn_blocking(move || {
        run_parallel(&req.config).map(|r| (SimSummary::from(&r), req.include_log.then_some(r.log)))
    })
    .await
    .map_err(|e| ApiError::new(500, "INTERNAL", e.to_string()))?
    .map_err(|e| ApiError::new(400, "INVALID_SIM_CONFIG", e.to_string()))?;
    let mut doc = serde_json::to_value(summary).expect("summary serializes");
    if let Some(log) = log {
        doc["log"] = serde_json::to_value(log).expect("log serializes");
    }
    Ok(Json(doc).into_response())
}

async fn not_found() -> ApiError {
    ApiError::new(404, "NOT_FOUND", "no such route")
}

pub fn router(engine: SharedEngine) -> Router {
    Router::new()
        .route("/groups", post(create_group))
        .route("/groups/{id}", get(get_group))
        .route("/groups/{id}/proposals", post(open_proposal))
        .route("/proposals/{id}", get(get_proposal))
        .route("/proposals/{id}/votes", post(cast_vote))
        .route("/proposals/{id}/finalize", post(finalize))
        .route("/chain", get(get_chain))
        .route("/chain/verify", get(verify_chain))
        .route("/contracts/{id}/history", get(history))
        .route("/verify", post(verify_document))
        .route("/sim/run", post(sim_run))
        .fallback(not_found)
        .with_state(engine)
}

/// Serves the API until ctrl-c.
pub async fn serve(engine: Engine, addr: &str) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, dir = %engine.dir().display(), "listening");
    let app = router(Arc::new(RwLock::new(engine)));
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
