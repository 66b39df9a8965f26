use std::sync::Arc;

use axum::body::Body;
use axum::extract::rejection::JsonRejection;
use axum::extract::{DefaultBodyLimit, Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use narrativeplay::progression::TranscriptEntry;
use narrativeplay::storyline::Storyline;
use serde::de::DeserializeOwned;

use crate::app::{ApiResult, App};
use crate::error::{codes, ApiError};
use crate::jobs::IngestionJob;
use crate::views::{ApproachBody, CharactersResponse, CreateNarrative, CreateSession, SayBody, SessionResponse};

type AppState = State<Arc<App>>;

pub fn router(app: Arc<App>) -> Router {
    // JSON escaping can grow a body; the exact limit is checked on the
    // decoded text so the client gets a coded error.
    let limit = app.config().max_body_bytes * 2 + 64 * 1024;
    Router::new()
        .route("/narratives", post(create_narrative).get(list_narratives))
        .route("/narratives/{id}", get(get_narrative))
        .route("/narratives/{id}/job", get(get_job))
        .route("/narratives/{id}/characters", get(get_characters))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/transcript", get(get_transcript))
        .route("/sessions/{id}/advance", post(advance))
        .route("/sessions/{id}/approach", post(approach))
        .route("/sessions/{id}/say", post(say))
        .route("/sessions/{id}/leave", post(leave))
        .route("/assets/{id}", get(get_asset))
        .fallback(|| async { ApiError::new(404, "NOT_FOUND", "no such endpoint") })
        .layer(DefaultBodyLimit::max(limit))
        .with_state(app)
}

fn body<T: DeserializeOwned>(payload: Result<Json<T>, JsonRejection>) -> ApiResult<T> {
    match payload {
        Ok(Json(v)) => Ok(v),
        Err(e) if e.status() == StatusCode::PAYLOAD_TOO_LARGE => {
            Err(ApiError::new(413, codes::BODY_TOO_LARGE, e.body_text()))
        }
        Err(e) => Err(ApiError::bad_request(e.body_text())),
    }
}

async fn create_narrative(
    State(app): AppState,
    payload: Result<Json<CreateNarrative>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<IngestionJob>)> {
    let req = body(payload)?;
    let submission = app.submit_narrative(&req.title, &req.body)?;
    if submission.created {
        app.spawn_ingestion(&submission.job, req.body);
        Ok((StatusCode::ACCEPTED, Json(submission.job)))
    } else {
        Ok((StatusCode::OK, Json(submission.job)))
    }
}

async fn list_narratives(State(app): AppState) -> Json<Vec<IngestionJob>> {
    Json(app.jobs())
}

async fn get_narrative(State(app): AppState, Path(id): Path<String>) -> ApiResult<Json<Storyline>> {
    Ok(Json(app.storyline(&id)?.as_ref().clone()))
}

async fn get_job(State(app): AppState, Path(id): Path<String>) -> ApiResult<Json<IngestionJob>> {
    Ok(Json(app.job(&id)?))
}

async fn get_characters(State(app): AppState, Path(id): Path<String>) -> ApiResult<Json<CharactersResponse>> {
    Ok(Json(app.characters(&id)?))
}

async fn create_session(
    State(app): AppState,
    payload: Result<Json<CreateSession>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<SessionResponse>)> {
    let req = body(payload)?;
    let worker = Arc::clone(&app);
    let resp = tokio::task::spawn_blocking(move || worker.create_session(&req.narrative_id, &req.character_id, req.seed))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))??;
    Ok((StatusCode::CREATED, Json(resp)))
}

async fn get_session(State(app): AppState, Path(id): Path<String>) -> ApiResult<Json<SessionResponse>> {
    let sid = id.clone();
    app.with_session(&id, move |app| app.session(&sid)).await.map(Json)
}

async fn get_transcript(State(app): AppState, Path(id): Path<String>) -> ApiResult<Json<Vec<TranscriptEntry>>> {
    let sid = id.clone();
    app.with_session(&id, move |app| app.transcript(&sid)).await.map(Json)
}

async fn advance(State(app): AppState, Path(id): Path<String>) -> ApiResult<Json<SessionResponse>> {
    let sid = id.clone();
    app.with_session(&id, move |app| app.advance(&sid)).await.map(Json)
}

async fn approach(
    State(app): AppState,
    Path(id): Path<String>,
    payload: Result<Json<ApproachBody>, JsonRejection>,
) -> ApiResult<Json<SessionResponse>> {
    let req = body(payload)?;
    let sid = id.clone();
    app.with_session(&id, move |app| app.approach(&sid, &req.agent_id)).await.map(Json)
}

async fn say(
    State(app): AppState,
    Path(id): Path<String>,
    payload: Result<Json<SayBody>, JsonRejection>,
) -> ApiResult<Json<SessionResponse>> {
    let req = body(payload)?;
    let sid = id.clone();
    app.with_session(&id, move |app| app.say(&sid, &req.agent_id, &req.text)).await.map(Json)
}

async fn leave(State(app): AppState, Path(id): Path<String>) -> ApiResult<Json<SessionResponse>> {
    let sid = id.clone();
    app.with_session(&id, move |app| app.leave(&sid)).await.map(Json)
}

async fn get_asset(State(app): AppState, Path(id): Path<String>) -> ApiResult<Response> {
    let media = Arc::clone(app.media());
    let lookup = id.clone();
    let fetched = tokio::task::spawn_blocking(move || media.fetch(&lookup))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
        .map_err(|e| ApiError::new(502, codes::MEDIA_ERROR, e.to_string()))?;
    let Some((asset, bytes)) = fetched else {
        return Err(ApiError::new(404, codes::ASSET_NOT_FOUND, format!("no asset {id}")));
    };
    Ok((
        [
            (header::CONTENT_TYPE, asset.content_type),
            (header::CACHE_CONTROL, "public, max-age=31536000, immutable".to_string()),
        ],
        Body::from(bytes),
    )
        .into_response())
}
