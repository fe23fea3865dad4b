//! User administration. Every verb needs MANAGE_USERS; password hashes never
//! leave the server.

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{StatusCode, Uri};
use axum::Json;
use ims_core::auth::{new_password_record, Action};
use ims_core::domain::{Role, User, Versioned};
use ims_core::engine::{EventBody, Update};
use ims_core::{EntityId, OpRequest};
use serde::{Deserialize, Serialize};

use crate::catalog::{body_object, committed_entity, from_object, parse_id, take_op_id, DeleteQuery};
use crate::error::ApiError;
use crate::extract::{parse_query, Authed};
use crate::state::AppState;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct UserView {
    pub id: EntityId,
    pub username: String,
    pub display_name: String,
    pub role: Role,
    pub active: bool,
    pub version: u64,
}

impl From<&Versioned<User>> for UserView {
    fn from(u: &Versioned<User>) -> Self {
        Self {
            id: u.id,
            username: u.username.clone(),
            display_name: u.display_name.clone(),
            role: u.role,
            active: u.active,
            version: u.version,
        }
    }
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct CreateUser {
    username: String,
    #[serde(default)]
    display_name: String,
    role: Role,
    password: String,
    #[serde(default = "yes")]
    active: bool,
}

fn yes() -> bool {
    true
}

/// Partial update; omitted fields keep their current values.
#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct UpdateUser {
    expected_version: u64,
    username: Option<String>,
    display_name: Option<String>,
    role: Option<Role>,
    active: Option<bool>,
    password: Option<String>,
}

fn view(state: &AppState, id: EntityId) -> Result<UserView, ApiError> {
    state
        .snapshot()
        .catalog
        .users
        .get(&id)
        .map(UserView::from)
        .ok_or_else(ApiError::unknown_reference)
}

async fn hash_password(password: String) -> Result<ims_core::auth::PasswordRecord, ApiError> {
    tokio::task::spawn_blocking(move || new_password_record(&password))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
        .map_err(ApiError::from)
}

pub async fn list(State(state): State<AppState>, auth: Authed) -> Result<Json<Vec<UserView>>, ApiError> {
    auth.require(Action::ManageUsers)?;
    Ok(Json(state.snapshot().catalog.users.values().map(UserView::from).collect()))
}

pub async fn get_one(
    State(state): State<AppState>,
    auth: Authed,
    Path(id): Path<String>,
) -> Result<Json<UserView>, ApiError> {
    auth.require(Action::ManageUsers)?;
    Ok(Json(view(&state, parse_id(&id)?)?))
}

pub async fn create(
    State(state): State<AppState>,
    auth: Authed,
    body: Bytes,
) -> Result<(StatusCode, Json<UserView>), ApiError> {
    auth.require(Action::ManageUsers)?;
    let mut obj = body_object(&body)?;
    let op_id = take_op_id(&mut obj)?;
    let req: CreateUser = from_object(obj)?;
    let user = User {
        id: EntityId::new_v4(),
        username: req.username,
        display_name: req.display_name,
        role: req.role,
        password_hash: hash_password(req.password).await?,
        active: req.active,
    };
    let result = state
        .submit(OpRequest {
            op_id,
            actor: auth.0.sub,
            body: EventBody::UserCreated(user),
        })
        .await?;
    let id = committed_entity(&state, result)?;
    Ok((StatusCode::CREATED, Json(view(&state, id)?)))
}

async fn submit_update(
    state: &AppState,
    auth: &Authed,
    op_id: EntityId,
    expected_version: u64,
    user: User,
) -> Result<Json<UserView>, ApiError> {
    let result = state
        .submit(OpRequest {
            op_id,
            actor: auth.0.sub,
            body: EventBody::UserUpdated(Update {
                expected_version,
                entity: user,
            }),
        })
        .await?;
    let id = committed_entity(state, result)?;
    Ok(Json(view(state, id)?))
}

pub async fn update(
    State(state): State<AppState>,
    auth: Authed,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<UserView>, ApiError> {
    auth.require(Action::ManageUsers)?;
    let id = parse_id(&id)?;
    let mut obj = body_object(&body)?;
    let op_id = take_op_id(&mut obj)?;
    let req: UpdateUser = from_object(obj)?;
    let mut user = state
        .snapshot()
        .catalog
        .users
        .get(&id)
        .map(|u| u.data.clone())
        .ok_or_else(ApiError::unknown_reference)?;
    if let Some(v) = req.username {
        user.username = v;
    }
    if let Some(v) = req.display_name {
        user.display_name = v;
    }
    if let Some(v) = req.role {
        user.role = v;
    }
    if let Some(v) = req.active {
        user.active = v;
    }
    if let Some(p) = req.password {
        user.password_hash = hash_password(p).await?;
    }
    submit_update(&state, &auth, op_id, req.expected_version, user).await
}

/// Users are never removed from the log; DELETE deactivates.
pub async fn deactivate(
    State(state): State<AppState>,
    auth: Authed,
    Path(id): Path<String>,
    uri: Uri,
) -> Result<Json<UserView>, ApiError> {
    auth.require(Action::ManageUsers)?;
    let id = parse_id(&id)?;
    let q: DeleteQuery = parse_query(&uri)?;
    let mut user = state
        .snapshot()
        .catalog
        .users
        .get(&id)
        .map(|u| u.data.clone())
        .ok_or_else(ApiError::unknown_reference)?;
    user.active = false;
    let op_id = q.op_id.unwrap_or_else(EntityId::new_v4);
    submit_update(&state, &auth, op_id, q.expected_version, user).await
}
