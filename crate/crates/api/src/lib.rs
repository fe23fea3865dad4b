//! HTTP/JSON service surface under `/api/v1`.
//!
//! Handlers read from the last published snapshot and funnel every mutation
//! through the engine's single writer. Errors always have the shape
//! `{"code": …, "message": …, "details": […]}`.

mod catalog;
mod error;
mod extract;
mod state;
mod stock;
mod sync;
mod users;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{HeaderValue, Method};
use axum::routing::{get, post};
use axum::{Json, Router};
use ims_core::domain::{Category, Item, Warehouse};
use serde::{Deserialize, Serialize};
use tower_http::cors::{AllowOrigin, Any, CorsLayer};

pub use error::ApiError;
pub use extract::Authed;
pub use state::{ApiConfig, AppState};
pub use stock::{LabelView, NearestView, StockView};
pub use users::UserView;

#[derive(Deserialize)]
struct LoginRequest {
    username: String,
    password: String,
}

#[derive(Serialize, Deserialize)]
pub struct LoginResponse {
    pub token: String,
    pub user: UserView,
}

async fn login(State(state): State<AppState>, body: Bytes) -> Result<Json<LoginResponse>, ApiError> {
    let req: LoginRequest = extract::parse_body(&body)?;
    let st = state.clone();
    let (token, user) = tokio::task::spawn_blocking(move || {
        st.identity()
            .login(&st.snapshot().catalog, &req.username, &req.password, st.now())
    })
    .await
    .map_err(|e| ApiError::internal(e.to_string()))??;
    Ok(Json(LoginResponse {
        token,
        user: UserView::from(&user),
    }))
}

async fn health(State(state): State<AppState>) -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok", "seq": state.snapshot().seq }))
}

fn cors(origins: &[String]) -> Option<CorsLayer> {
    if origins.is_empty() {
        return None;
    }
    let base = CorsLayer::new()
        .allow_methods([Method::GET, Method::POST, Method::PUT, Method::DELETE])
        .allow_headers([
            axum::http::header::AUTHORIZATION,
            axum::http::header::CONTENT_TYPE,
        ]);
    if origins.iter().any(|o| o == "*") {
        return Some(base.allow_origin(Any));
    }
    let list: Vec<HeaderValue> = origins
        .iter()
        .filter_map(|o| match HeaderValue::from_str(o) {
            Ok(v) => Some(v),
            Err(_) => {
                log::warn!("ignoring invalid CORS origin {o:?}");
                None
            }
        })
        .collect();
    Some(base.allow_origin(AllowOrigin::list(list)))
}

/// The full `/api/v1` router.
pub fn router(state: AppState) -> Router {
    use catalog::{create, delete, get_one, list, update};
    let app = Router::new()
        .route("/api/v1/health", get(health))
        .route("/api/v1/auth/login", post(login))
        .route(
            "/api/v1/warehouses",
            get(list::<Warehouse>).post(create::<Warehouse>),
        )
        .route("/api/v1/warehouses/nearest", get(stock::nearest))
        .route(
            "/api/v1/warehouses/:id",
            get(get_one::<Warehouse>)
                .put(update::<Warehouse>)
                .delete(delete::<Warehouse>),
        )
        .route("/api/v1/items", get(list::<Item>).post(create::<Item>))
        .route(
            "/api/v1/items/:id",
            get(get_one::<Item>).put(update::<Item>).delete(delete::<Item>),
        )
        .route("/api/v1/items/:id/label", get(stock::label))
        .route(
            "/api/v1/categories",
            get(list::<Category>).post(create::<Category>),
        )
        .route(
            "/api/v1/categories/:id",
            get(get_one::<Category>)
                .put(update::<Category>)
                .delete(delete::<Category>),
        )
        .route("/api/v1/users", get(users::list).post(users::create))
        .route(
            "/api/v1/users/:id",
            get(users::get_one)
                .put(users::update)
                .delete(users::deactivate),
        )
        .route("/api/v1/stock", get(stock::levels))
        .route("/api/v1/stock/movements", post(stock::movement))
        .route("/api/v1/scan", post(stock::scan))
        .route("/api/v1/sync/push", post(sync::push))
        .route("/api/v1/sync/pull", get(sync::pull))
        .fallback(|| async { ApiError::not_found("NOT_FOUND", "no such endpoint") });
    let app = match cors(&state.config().cors_origins) {
        Some(layer) => app.layer(layer),
        None => app,
    };
    app.with_state(state)
}
