#![allow(dead_code)]

pub mod sweep;

use std::sync::{Arc, OnceLock};

use axum::body::{to_bytes, Body};
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use ims_api::{router, ApiConfig, AppState};
use ims_core::auth::{derive_password, LocalIdentityProvider, PasswordRecord, TokenSigner, MIN_ITERATIONS};
use ims_core::domain::{Role, User};
use ims_core::engine::EventBody;
use ims_core::store::MemoryStore;
use ims_core::time::ManualClock;
use ims_core::{Engine, EntityId, OpRequest};
use serde_json::Value;
use tower::ServiceExt;

pub const T0: i64 = 1_732_968_000;
pub const SECRET: &[u8] = b"test-secret-0123456789abcdef0123";
pub const PASSWORD: &str = "s3cret-pass";

pub fn record() -> PasswordRecord {
    static R: OnceLock<PasswordRecord> = OnceLock::new();
    R.get_or_init(|| derive_password(PASSWORD, [3; 16], MIN_ITERATIONS).unwrap())
        .clone()
}

pub struct TestApp {
    pub app: Router,
    pub state: AppState,
    pub store: MemoryStore,
    pub clock: Arc<ManualClock>,
    pub admin: EntityId,
    pub employee: EntityId,
    pub admin_token: String,
    pub employee_token: String,
}

fn user(id: EntityId, name: &str, role: Role) -> User {
    User {
        id,
        username: name.into(),
        display_name: String::new(),
        role,
        password_hash: record(),
        active: true,
    }
}

impl TestApp {
    pub fn new() -> Self {
        Self::with_config(ApiConfig::default())
    }

    pub fn with_config(config: ApiConfig) -> Self {
        let store = MemoryStore::new();
        let clock = Arc::new(ManualClock::new(T0));
        let mut engine = Engine::open(Box::new(store.clone()), clock.clone()).unwrap();
        let admin = EntityId::from_u128(1);
        let employee = EntityId::from_u128(2);
        for (n, u) in [user(admin, "admin", Role::Admin), user(employee, "worker", Role::Employee)]
            .into_iter()
            .enumerate()
        {
            let r = engine
                .submit(OpRequest {
                    op_id: EntityId::from_u128(900 + n as u128),
                    actor: admin,
                    body: EventBody::UserCreated(u),
                })
                .unwrap();
            assert!(r.seq().is_some());
        }
        let signer = TokenSigner::new(SECRET.to_vec(), 8 * 3600);
        let now = ims_core::time::Timestamp::from_unix(T0);
        let snap = engine.snapshot();
        let admin_token = signer.issue(&snap.catalog.users[&admin], now).0;
        let employee_token = signer.issue(&snap.catalog.users[&employee], now).0;
        let identity = Arc::new(LocalIdentityProvider::new(signer));
        let state = AppState::new(engine, identity, config);
        Self {
            app: router(state.clone()),
            state,
            store,
            clock,
            admin,
            employee,
            admin_token,
            employee_token,
        }
    }

    pub async fn call(
        &self,
        method: Method,
        path: &str,
        token: Option<&str>,
        body: Option<Value>,
    ) -> (StatusCode, Value) {
        let mut req = Request::builder().method(method).uri(path);
        if let Some(t) = token {
            req = req.header("authorization", format!("Bearer {t}"));
        }
        let body = match body {
            Some(v) => {
                req = req.header("content-type", "application/json");
                Body::from(v.to_string())
            }
            None => Body::empty(),
        };
        let resp = self.app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
        let status = resp.status();
        let bytes = to_bytes(resp.into_body(), usize::MAX).await.unwrap();
        let json = if bytes.is_empty() {
            Value::Null
        } else {
            serde_json::from_slice(&bytes).unwrap_or(Value::String(String::from_utf8_lossy(&bytes).into()))
        };
        (status, json)
    }

    pub async fn admin(&self, method: Method, path: &str, body: Option<Value>) -> (StatusCode, Value) {
        let t = self.admin_token.clone();
        self.call(method, path, Some(&t), body).await
    }

    pub async fn employee(&self, method: Method, path: &str, body: Option<Value>) -> (StatusCode, Value) {
        let t = self.employee_token.clone();
        self.call(method, path, Some(&t), body).await
    }

    /// Creates a warehouse and an item through the API; returns their ids.
    pub async fn fixture(&self) -> (String, String) {
        let (s, w) = self
            .admin(
                Method::POST,
                "/api/v1/warehouses",
                Some(serde_json::json!({
                    "name": "Main",
                    "location": {"latitudeDeg": 52.2297, "longitudeDeg": 21.0122},
                    "address": "Main St 1"
                })),
            )
            .await;
        assert_eq!(s, StatusCode::CREATED, "{w}");
        let (s, i) = self
            .admin(
                Method::POST,
                "/api/v1/items",
                Some(serde_json::json!({"name": "Bolt", "sku": "B-1", "ean13": "4006381333931"})),
            )
            .await;
        assert_eq!(s, StatusCode::CREATED, "{i}");
        (
            w["id"].as_str().unwrap().to_owned(),
            i["id"].as_str().unwrap().to_owned(),
        )
    }
}
