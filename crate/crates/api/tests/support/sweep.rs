//! Every (role, endpoint, verb) triple against a hand-written permission table.

use axum::http::{Method, StatusCode};
use serde_json::{json, Value};

use super::TestApp;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Who {
    /// No token required.
    Open,
    AdminOnly,
    Both,
}

pub struct Row {
    pub path: String,
    pub method: Method,
    pub body: Option<Value>,
    pub who: Who,
}

const VERBS: [Method; 4] = [Method::GET, Method::POST, Method::PUT, Method::DELETE];

pub struct Ids {
    pub w: String,
    pub i: String,
    pub c: String,
    pub u: String,
}

pub async fn seed(app: &TestApp) -> Ids {
    let (w, i) = app.fixture().await;
    let (_, c) = app
        .admin(Method::POST, "/api/v1/categories", Some(json!({"name": "Cat"})))
        .await;
    let (s, u) = app
        .admin(
            Method::POST,
            "/api/v1/users",
            Some(json!({"username": "target", "role": "EMPLOYEE", "password": "long-enough-pw"})),
        )
        .await;
    assert_eq!(s, StatusCode::CREATED);
    app.admin(
        Method::POST,
        "/api/v1/stock/movements",
        Some(json!({"kind": "RECEIVE", "warehouseId": w, "itemId": i, "quantity": 50})),
    )
    .await;
    Ids {
        w,
        i,
        c: c["id"].as_str().unwrap().into(),
        u: u["id"].as_str().unwrap().into(),
    }
}

/// (path, [(verb, who, body)]); verbs not listed must be 405.
fn table(ids: &Ids) -> Vec<(String, Vec<(Method, Who, Option<Value>)>)> {
    use Who::*;
    let Ids { w, i, c, u } = ids;
    let wh = json!({"expectedVersion": 1, "name": "Renamed", "location": {"latitudeDeg": 1.0, "longitudeDeg": 1.0}});
    let it = json!({"expectedVersion": 1, "name": "Renamed", "sku": "R-1"});
    let ca = json!({"expectedVersion": 1, "name": "Renamed"});
    let us = json!({"expectedVersion": 1, "displayName": "Renamed"});
    vec![
        ("/api/v1/health".into(), vec![(Method::GET, Open, None)]),
        (
            "/api/v1/auth/login".into(),
            vec![(Method::POST, Open, Some(json!({"username": "admin", "password": "x"})))],
        ),
        (
            "/api/v1/warehouses".into(),
            vec![
                (Method::GET, Both, None),
                (
                    Method::POST,
                    AdminOnly,
                    Some(json!({"name": "New", "location": {"latitudeDeg": 2.0, "longitudeDeg": 2.0}})),
                ),
            ],
        ),
        (
            format!("/api/v1/warehouses/{w}"),
            vec![
                (Method::GET, Both, None),
                (Method::PUT, AdminOnly, Some(wh)),
                (Method::DELETE, AdminOnly, None),
            ],
        ),
        (
            "/api/v1/warehouses/nearest?lat=0&lon=0".into(),
            vec![(Method::GET, Both, None)],
        ),
        (
            "/api/v1/items".into(),
            vec![
                (Method::GET, Both, None),
                (Method::POST, AdminOnly, Some(json!({"name": "New", "sku": "N-9"}))),
            ],
        ),
        (
            format!("/api/v1/items/{i}"),
            vec![
                (Method::GET, Both, None),
                (Method::PUT, AdminOnly, Some(it)),
                (Method::DELETE, AdminOnly, None),
            ],
        ),
        (format!("/api/v1/items/{i}/label"), vec![(Method::GET, Both, None)]),
        (
            "/api/v1/categories".into(),
            vec![
                (Method::GET, Both, None),
                (Method::POST, AdminOnly, Some(json!({"name": "New"}))),
            ],
        ),
        (
            format!("/api/v1/categories/{c}"),
            vec![
                (Method::GET, Both, None),
                (Method::PUT, AdminOnly, Some(ca)),
                (Method::DELETE, AdminOnly, None),
            ],
        ),
        (
            "/api/v1/users".into(),
            vec![
                (Method::GET, AdminOnly, None),
                (
                    Method::POST,
                    AdminOnly,
                    Some(json!({"username": "new", "role": "EMPLOYEE", "password": "long-enough-pw"})),
                ),
            ],
        ),
        (
            format!("/api/v1/users/{u}"),
            vec![
                (Method::GET, AdminOnly, None),
                (Method::PUT, AdminOnly, Some(us)),
                (Method::DELETE, AdminOnly, None),
            ],
        ),
        (format!("/api/v1/stock?warehouseId={w}"), vec![(Method::GET, Both, None)]),
        (
            "/api/v1/stock/movements".into(),
            vec![(
                Method::POST,
                Both,
                Some(json!({"kind": "RECEIVE", "warehouseId": w, "itemId": i, "quantity": 1})),
            )],
        ),
        (
            "/api/v1/scan".into(),
            vec![(Method::POST, Both, Some(json!({"payload": format!("IMS1;ITEM;{i}")})))],
        ),
        (
            "/api/v1/sync/push".into(),
            vec![(
                Method::POST,
                Both,
                Some(json!({
                    "clientId": "00000000-0000-4000-8000-0000000000cc",
                    "ops": [{"kind": "ISSUE", "body": {"warehouseId": w, "itemId": i, "quantity": 1}}]
                })),
            )],
        ),
        ("/api/v1/sync/pull?cursor=0".into(), vec![(Method::GET, Both, None)]),
    ]
}

/// Movement kinds share one endpoint but not one permission.
pub fn movement_rows(ids: &Ids) -> Vec<Row> {
    let Ids { w, i, .. } = ids;
    let mk = |body: Value, who| Row {
        path: "/api/v1/stock/movements".into(),
        method: Method::POST,
        body: Some(body),
        who,
    };
    vec![
        mk(json!({"kind": "RECEIVE", "warehouseId": w, "itemId": i, "quantity": 1}), Who::Both),
        mk(json!({"kind": "ISSUE", "warehouseId": w, "itemId": i, "quantity": 1}), Who::Both),
        mk(
            json!({"kind": "TRANSFER", "fromWarehouseId": w, "toWarehouseId": w, "itemId": i, "quantity": 1}),
            Who::Both,
        ),
        mk(json!({"kind": "ADJUST", "warehouseId": w, "itemId": i, "newQuantity": 3}), Who::AdminOnly),
    ]
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Caller {
    Anonymous,
    Employee,
    Admin,
}

fn check(caller: Caller, row: &Row, status: StatusCode, body: &Value, failures: &mut Vec<String>) {
    let expect_ok = match (row.who, caller) {
        (Who::Open, _) => true,
        (_, Caller::Anonymous) => false,
        (Who::AdminOnly, Caller::Employee) => false,
        _ => true,
    };
    let label = format!("{caller:?} {} {}", row.method, row.path);
    if expect_ok {
        if matches!(
            status,
            StatusCode::UNAUTHORIZED
                | StatusCode::FORBIDDEN
                | StatusCode::METHOD_NOT_ALLOWED
                | StatusCode::INTERNAL_SERVER_ERROR
        ) && !(row.path.ends_with("login") && status == StatusCode::UNAUTHORIZED)
        {
            failures.push(format!("{label}: expected access, got {status} {body}"));
        }
    } else {
        let want = if caller == Caller::Anonymous {
            (StatusCode::UNAUTHORIZED, "MALFORMED")
        } else {
            (StatusCode::FORBIDDEN, "FORBIDDEN")
        };
        if (status, body["code"].as_str().unwrap_or("")) != want {
            failures.push(format!("{label}: expected {want:?}, got {status} {body}"));
        }
    }
}

pub async fn sweep(caller: Caller) -> (usize, Vec<String>) {
    let app = TestApp::new();
    let ids = seed(&app).await;
    let token = match caller {
        Caller::Anonymous => None,
        Caller::Employee => Some(app.employee_token.clone()),
        Caller::Admin => Some(app.admin_token.clone()),
    };
    let mut failures = Vec::new();
    let mut checked = 0;
    let mut rows = Vec::new();
    for (path, verbs) in table(&ids) {
        for verb in VERBS {
            match verbs.iter().find(|(m, _, _)| *m == verb) {
                Some((m, who, body)) => rows.push(Row {
                    path: path.clone(),
                    method: m.clone(),
                    body: body.clone(),
                    who: *who,
                }),
                None => {
                    let (s, _) = app.call(verb.clone(), &path, token.as_deref(), None).await;
                    checked += 1;
                    if s != StatusCode::METHOD_NOT_ALLOWED {
                        failures.push(format!("{caller:?} {verb} {path}: expected 405, got {s}"));
                    }
                }
            }
        }
    }
    rows.extend(movement_rows(&ids));
    // Deletions last so that earlier rows still find their targets.
    rows.sort_by_key(|r| r.method == Method::DELETE);
    for row in &rows {
        let (s, body) = app
            .call(row.method.clone(), &with_version(&app, row), token.as_deref(), row.body.clone())
            .await;
        checked += 1;
        check(caller, row, s, &body, &mut failures);
    }
    (checked, failures)
}

/// DELETE carries the current version so an allowed call really succeeds.
fn with_version(app: &TestApp, row: &Row) -> String {
    if row.method != Method::DELETE {
        return row.path.clone();
    }
    let snap = app.state.snapshot();
    let id: ims_core::EntityId = row.path.rsplit('/').next().unwrap().parse().unwrap();
    let c = &snap.catalog;
    let v = c
        .warehouses
        .get(&id)
        .map(|e| e.version)
        .or_else(|| c.items.get(&id).map(|e| e.version))
        .or_else(|| c.categories.get(&id).map(|e| e.version))
        .or_else(|| c.users.get(&id).map(|e| e.version))
        .unwrap();
    format!("{}?expectedVersion={v}", row.path)
}

/// Runs the sweep for every caller; panics listing each mismatch.
pub async fn authorization_matrix() -> String {
    let mut total = 0;
    let mut failures = Vec::new();
    for caller in [Caller::Anonymous, Caller::Employee, Caller::Admin] {
        let (n, f) = sweep(caller).await;
        total += n;
        failures.extend(f);
    }
    assert!(total >= 3 * 4 * 17, "only {total} triples checked");
    assert!(failures.is_empty(), "{} mismatches:\n{}", failures.len(), failures.join("\n"));
    format!("{total} (caller, endpoint, verb) triples match the permission table")
}
