//! CRUD for warehouses, items and categories.

use std::collections::BTreeMap;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{StatusCode, Uri};
use axum::Json;
use ims_core::auth::Action;
use ims_core::domain::{Catalog, Category, Item, Versioned, Warehouse};
use ims_core::engine::{Delete, EventBody, Update};
use ims_core::{EntityId, OpRequest, OpResult};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::ApiError;
use crate::extract::{parse_body, parse_query, Authed};
use crate::state::AppState;

pub trait Resource: Clone + Serialize + DeserializeOwned + Send + Sync + 'static {
    fn table(c: &Catalog) -> &BTreeMap<EntityId, Versioned<Self>>;
    fn created(self) -> EventBody;
    fn updated(u: Update<Self>) -> EventBody;
    fn deleted(d: Delete) -> EventBody;
}

impl Resource for Warehouse {
    fn table(c: &Catalog) -> &BTreeMap<EntityId, Versioned<Self>> {
        &c.warehouses
    }
    fn created(self) -> EventBody {
        EventBody::WarehouseCreated(self)
    }
    fn updated(u: Update<Self>) -> EventBody {
        EventBody::WarehouseUpdated(u)
    }
    fn deleted(d: Delete) -> EventBody {
        EventBody::WarehouseDeleted(d)
    }
}

impl Resource for Item {
    fn table(c: &Catalog) -> &BTreeMap<EntityId, Versioned<Self>> {
        &c.items
    }
    fn created(self) -> EventBody {
        EventBody::ItemCreated(self)
    }
    fn updated(u: Update<Self>) -> EventBody {
        EventBody::ItemUpdated(u)
    }
    fn deleted(d: Delete) -> EventBody {
        EventBody::ItemDeleted(d)
    }
}

impl Resource for Category {
    fn table(c: &Catalog) -> &BTreeMap<EntityId, Versioned<Self>> {
        &c.categories
    }
    fn created(self) -> EventBody {
        EventBody::CategoryCreated(self)
    }
    fn updated(u: Update<Self>) -> EventBody {
        EventBody::CategoryUpdated(u)
    }
    fn deleted(d: Delete) -> EventBody {
        EventBody::CategoryDeleted(d)
    }
}

/// Unparseable ids cannot name anything, so they are reported as unknown.
pub fn parse_id(raw: &str) -> Result<EntityId, ApiError> {
    raw.parse().map_err(|_| ApiError::unknown_reference())
}

pub fn body_object(bytes: &[u8]) -> Result<Map<String, Value>, ApiError> {
    match parse_body::<Value>(bytes)? {
        Value::Object(m) => Ok(m),
        _ => Err(ApiError::malformed_request("expected a JSON object")),
    }
}

/// Removes `opId` from a request object; absent means a fresh one.
pub fn take_op_id(obj: &mut Map<String, Value>) -> Result<EntityId, ApiError> {
    match obj.remove("opId") {
        None | Some(Value::Null) => Ok(EntityId::new_v4()),
        Some(Value::String(s)) => s
            .parse()
            .map_err(|_| ApiError::malformed_request("opId must be a lowercase UUID")),
        Some(_) => Err(ApiError::malformed_request("opId must be a string")),
    }
}

pub fn from_object<T: DeserializeOwned>(obj: Map<String, Value>) -> Result<T, ApiError> {
    serde_json::from_value(Value::Object(obj)).map_err(|e| ApiError::malformed_request(e.to_string()))
}

/// Id of the entity touched by the committed (or previously committed) op.
pub fn committed_entity(state: &AppState, result: OpResult) -> Result<EntityId, ApiError> {
    let seq = match result {
        OpResult::Applied { seq } | OpResult::Duplicate { seq } => seq,
        OpResult::Rejected(v) => return Err(v.into()),
    };
    state
        .reader()
        .read_from(seq, 1)?
        .first()
        .and_then(|e| e.body.entity_id())
        .ok_or_else(|| ApiError::unprocessable("OP_ID_REUSED", "opId belongs to a different kind of operation"))
}

fn current<R: Resource>(state: &AppState, id: EntityId) -> Result<Versioned<R>, ApiError> {
    R::table(&state.snapshot().catalog)
        .get(&id)
        .cloned()
        .ok_or_else(ApiError::unknown_reference)
}

pub async fn list<R: Resource>(
    State(state): State<AppState>,
    auth: Authed,
) -> Result<Json<Vec<Versioned<R>>>, ApiError> {
    auth.require(Action::ReadCatalog)?;
    let snap = state.snapshot();
    Ok(Json(
        R::table(&snap.catalog)
            .values()
            .filter(|e| e.is_live())
            .cloned()
            .collect(),
    ))
}

pub async fn get_one<R: Resource>(
    State(state): State<AppState>,
    auth: Authed,
    Path(id): Path<String>,
) -> Result<Json<Versioned<R>>, ApiError> {
    auth.require(Action::ReadCatalog)?;
    let id = parse_id(&id)?;
    let e = current::<R>(&state, id)?;
    if !e.is_live() {
        return Err(ApiError::unknown_reference());
    }
    Ok(Json(e))
}

pub async fn create<R: Resource>(
    State(state): State<AppState>,
    auth: Authed,
    body: Bytes,
) -> Result<(StatusCode, Json<Versioned<R>>), ApiError> {
    auth.require(Action::WriteCatalog)?;
    let mut obj = body_object(&body)?;
    let op_id = take_op_id(&mut obj)?;
    obj.insert("id".into(), serde_json::to_value(EntityId::new_v4()).unwrap());
    let entity: R = from_object(obj)?;
    let result = state
        .submit(OpRequest {
            op_id,
            actor: auth.0.sub,
            body: entity.created(),
        })
        .await?;
    let id = committed_entity(&state, result)?;
    Ok((StatusCode::CREATED, Json(current(&state, id)?)))
}

pub async fn update<R: Resource>(
    State(state): State<AppState>,
    auth: Authed,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<Versioned<R>>, ApiError> {
    auth.require(Action::WriteCatalog)?;
    let id = parse_id(&id)?;
    let mut obj = body_object(&body)?;
    let op_id = take_op_id(&mut obj)?;
    obj.insert("id".into(), serde_json::to_value(id).unwrap());
    let update: Update<R> = from_object(obj)?;
    let result = state
        .submit(OpRequest {
            op_id,
            actor: auth.0.sub,
            body: R::updated(update),
        })
        .await?;
    let id = committed_entity(&state, result)?;
    Ok(Json(current(&state, id)?))
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DeleteQuery {
    pub expected_version: u64,
    pub op_id: Option<EntityId>,
}

pub async fn delete<R: Resource>(
    State(state): State<AppState>,
    auth: Authed,
    Path(id): Path<String>,
    uri: Uri,
) -> Result<Json<Versioned<R>>, ApiError> {
    auth.require(Action::WriteCatalog)?;
    let id = parse_id(&id)?;
    let q: DeleteQuery = parse_query(&uri)?;
    let result = state
        .submit(OpRequest {
            op_id: q.op_id.unwrap_or_else(EntityId::new_v4),
            actor: auth.0.sub,
            body: R::deleted(Delete {
                id,
                expected_version: q.expected_version,
            }),
        })
        .await?;
    let id = committed_entity(&state, result)?;
    Ok(Json(current(&state, id)?))
}
