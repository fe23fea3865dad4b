use axum::body::Bytes;
use axum::extract::State;
use axum::http::Uri;
use axum::Json;
use ims_core::auth::{Action, PasswordRecord};
use ims_core::engine::EventBody;
use ims_core::sync::{self, EventsPage, PushBatch, PushOutcome, DEFAULT_PULL_LIMIT};
use serde::Deserialize;

use crate::error::ApiError;
use crate::extract::{parse_body, parse_query, Authed};
use crate::state::AppState;

/// Each op is authorized separately by the engine against the pusher's role.
pub async fn push(
    State(state): State<AppState>,
    auth: Authed,
    body: Bytes,
) -> Result<Json<PushOutcome>, ApiError> {
    auth.require(Action::MoveStock)?;
    let batch: PushBatch = parse_body(&body)?;
    let actor = auth.0.sub;
    let outcome = state
        .write(move |engine| Ok(sync::push(engine, &batch, actor)?))
        .await?;
    Ok(Json(outcome))
}

#[derive(Deserialize)]
struct PullQuery {
    #[serde(default)]
    cursor: u64,
    limit: Option<usize>,
}

// Clients need the user events to replay the log but never the secrets in them.
fn redact(record: &mut PasswordRecord) {
    record.salt = [0; 16];
    record.hash = [0; 32];
}

pub async fn pull(
    State(state): State<AppState>,
    auth: Authed,
    uri: Uri,
) -> Result<Json<EventsPage>, ApiError> {
    auth.require(Action::ReadEvents)?;
    let q: PullQuery = parse_query(&uri)?;
    let mut page = sync::pull(
        state.reader().as_ref(),
        q.cursor,
        q.limit.unwrap_or(DEFAULT_PULL_LIMIT),
    )?;
    for e in &mut page.events {
        match &mut e.body {
            EventBody::UserCreated(u) => redact(&mut u.password_hash),
            EventBody::UserUpdated(u) => redact(&mut u.entity.password_hash),
            _ => {}
        }
    }
    Ok(Json(page))
}
