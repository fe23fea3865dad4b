//! Stock levels, movements, code scanning, nearest warehouse and labels.

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::Uri;
use axum::Json;
use ims_core::auth::Action;
use ims_core::codec::{decode_payload, ean13_validate, encode_payload, LabelOpKind, QrPayload};
use ims_core::domain::{Item, StockLevel, Versioned, Warehouse};
use ims_core::engine::{stock_levels, EventBody, EventKind, OpResult};
use ims_core::geoloc::{nearest_warehouse, GeoPoint};
use ims_core::{EntityId, OpRequest, Snapshot};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::catalog::{body_object, parse_id, take_op_id};
use crate::error::ApiError;
use crate::extract::{parse_body, parse_query, Authed};
use crate::state::AppState;

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct StockQuery {
    warehouse_id: Option<EntityId>,
    item_id: Option<EntityId>,
}

#[derive(Serialize)]
pub struct StockView {
    pub seq: u64,
    pub levels: Vec<StockLevel>,
}

pub async fn levels(
    State(state): State<AppState>,
    auth: Authed,
    uri: Uri,
) -> Result<Json<StockView>, ApiError> {
    auth.require(Action::ReadStock)?;
    let q: StockQuery = parse_query(&uri)?;
    let snap = state.snapshot();
    Ok(Json(StockView {
        seq: snap.seq,
        levels: stock_levels(&snap, q.warehouse_id, q.item_id),
    }))
}

/// Flat movement body, e.g. `{"opId":…,"kind":"RECEIVE","warehouseId":…,"itemId":…,"quantity":5}`.
pub async fn movement(
    State(state): State<AppState>,
    auth: Authed,
    body: Bytes,
) -> Result<Json<OpResult>, ApiError> {
    auth.require(Action::MoveStock)?;
    let mut obj = body_object(&body)?;
    let kind: EventKind = match obj.remove("kind") {
        Some(k) => serde_json::from_value(k)
            .map_err(|_| ApiError::malformed_request("unknown movement kind"))?,
        None => return Err(ApiError::malformed_request("missing kind")),
    };
    if !matches!(
        kind,
        EventKind::Receive | EventKind::Issue | EventKind::Transfer | EventKind::Adjust
    ) {
        return Err(ApiError::malformed_request("kind must be RECEIVE, ISSUE, TRANSFER or ADJUST"));
    }
    auth.require(kind.required_action())?;
    let op_id = take_op_id(&mut obj)?;
    let body: EventBody = serde_json::from_value(json!({ "kind": kind, "body": obj }))
        .map_err(|e| ApiError::malformed_request(e.to_string()))?;
    match state
        .submit(OpRequest {
            op_id,
            actor: auth.0.sub,
            body,
        })
        .await?
    {
        OpResult::Rejected(v) => Err(v.into()),
        ok => Ok(Json(ok)),
    }
}

#[derive(Deserialize)]
struct ScanRequest {
    payload: String,
}

fn item_resolution(snap: &Snapshot, item: &Versioned<Item>) -> Value {
    json!({
        "type": "ITEM",
        "item": item,
        "stockLevels": stock_levels(snap, None, Some(item.id)),
    })
}

fn unknown_item() -> ApiError {
    ApiError::not_found("UNKNOWN_ITEM", "no item carries this code")
}

/// Resolves decoded scanner text. Never changes state: an operation label
/// only yields a proposal the employee confirms through the movements endpoint.
pub async fn scan(
    State(state): State<AppState>,
    auth: Authed,
    body: Bytes,
) -> Result<Json<Value>, ApiError> {
    auth.require(Action::ReadStock)?;
    let req: ScanRequest = parse_body(&body)?;
    let snap = state.snapshot();
    let cat = &snap.catalog;
    match decode_payload(&req.payload) {
        Ok(QrPayload::ItemLabel { item_id }) => {
            let item = cat.live_item(&item_id).ok_or_else(unknown_item)?;
            return Ok(Json(item_resolution(&snap, item)));
        }
        Ok(QrPayload::StockOpLabel {
            kind,
            warehouse_id,
            item_id,
            quantity,
        }) => {
            let item = cat.live_item(&item_id).ok_or_else(ApiError::unknown_reference)?;
            let warehouse = cat
                .live_warehouse(&warehouse_id)
                .ok_or_else(ApiError::unknown_reference)?;
            return Ok(Json(json!({
                "type": "PREFILLED_OP",
                "proposal": {
                    "opId": EntityId::new_v4(),
                    "kind": kind,
                    "warehouseId": warehouse_id,
                    "itemId": item_id,
                    "quantity": quantity,
                },
                "item": item,
                "warehouse": warehouse,
            })));
        }
        Err(_) => {}
    }
    if ean13_validate(&req.payload).is_ok() {
        let item = cat.item_by_ean13(&req.payload).ok_or_else(unknown_item)?;
        return Ok(Json(item_resolution(&snap, item)));
    }
    Err(ApiError::unprocessable(
        "UNRECOGNIZED_PAYLOAD",
        "text is neither a label payload nor a valid EAN-13",
    ))
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct NearestQuery {
    lat: f64,
    lon: f64,
    radius_m: Option<f64>,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
pub struct NearestView {
    pub warehouse: Option<Versioned<Warehouse>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub distance_m: Option<f64>,
}

pub async fn nearest(
    State(state): State<AppState>,
    auth: Authed,
    uri: Uri,
) -> Result<Json<NearestView>, ApiError> {
    auth.require(Action::ReadCatalog)?;
    let q: NearestQuery = parse_query(&uri)?;
    let user = GeoPoint {
        latitude_deg: q.lat,
        longitude_deg: q.lon,
    };
    let radius = q.radius_m.unwrap_or(state.config().nearest_radius_m);
    let snap = state.snapshot();
    let live: Vec<&Versioned<Warehouse>> = snap.catalog.live_warehouses().collect();
    let hit = nearest_warehouse(user, live.iter().map(|w| &w.data), radius)?;
    Ok(Json(match hit {
        Some(n) => NearestView {
            warehouse: snap.catalog.warehouses.get(&n.warehouse_id).cloned(),
            distance_m: Some(n.distance_m),
        },
        None => NearestView {
            warehouse: None,
            distance_m: None,
        },
    }))
}

#[derive(Deserialize, Default, PartialEq)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
enum LabelKind {
    #[default]
    Item,
    Op,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct LabelQuery {
    #[serde(default)]
    kind: LabelKind,
    op_kind: Option<LabelOpKind>,
    warehouse_id: Option<EntityId>,
    quantity: Option<u64>,
}

#[derive(Serialize)]
pub struct LabelView {
    pub payload: String,
}

pub async fn label(
    State(state): State<AppState>,
    auth: Authed,
    Path(id): Path<String>,
    uri: Uri,
) -> Result<Json<LabelView>, ApiError> {
    auth.require(Action::ReadCatalog)?;
    let item_id = parse_id(&id)?;
    let q: LabelQuery = parse_query(&uri)?;
    let snap = state.snapshot();
    snap.catalog
        .live_item(&item_id)
        .ok_or_else(ApiError::unknown_reference)?;
    let payload = match q.kind {
        LabelKind::Item => QrPayload::ItemLabel { item_id },
        LabelKind::Op => {
            let invalid = |m: &str| ApiError::unprocessable("INVALID_PAYLOAD", m);
            let kind = q.op_kind.ok_or_else(|| invalid("opKind is required"))?;
            let warehouse_id = q.warehouse_id.ok_or_else(|| invalid("warehouseId is required"))?;
            let quantity = q.quantity.ok_or_else(|| invalid("quantity is required"))?;
            snap.catalog
                .live_warehouse(&warehouse_id)
                .ok_or_else(ApiError::unknown_reference)?;
            QrPayload::StockOpLabel {
                kind,
                warehouse_id,
                item_id,
                quantity,
            }
        }
    };
    let payload = encode_payload(&payload)
        .map_err(|e| ApiError::unprocessable("INVALID_PAYLOAD", e.to_string()))?;
    Ok(Json(LabelView { payload }))
}
