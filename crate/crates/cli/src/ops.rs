use std::fmt;
use std::fs;
use std::io::{self, BufRead};
use std::path::Path;

use ims_core::auth::new_password_record;
use ims_core::codec::{encode_payload, LabelOpKind, QrPayload};
use ims_core::domain::{fold_name, Catalog, Item, Role, User, Versioned, Warehouse};
use ims_core::engine::{replay, EventBody, Violation};
use ims_core::store::{read_log_file, StoreError, EVENTS_FILE, SNAPSHOT_FILE};
use ims_core::{Engine, EntityId, OpRequest, OpResult, Snapshot};

use crate::CliError;

/// First line of `input`, without the line terminator.
pub(crate) fn read_password(input: &mut dyn BufRead) -> Result<String, CliError> {
    let mut line = String::new();
    input.read_line(&mut line)?;
    Ok(line.trim_end_matches(['\r', '\n']).to_owned())
}

pub(crate) fn rejected(v: &Violation) -> CliError {
    // A single uniqueness clash is reported under its own name.
    let code = match v.details.as_slice() {
        [d] if d.is_uniqueness() => d.as_str(),
        _ => v.code.as_str(),
    };
    CliError::new(code, v.to_string())
}

/// The admin that CLI-issued events are attributed to: the lowest-id active admin.
pub(crate) fn acting_admin(c: &Catalog) -> Option<EntityId> {
    c.users
        .values()
        .find(|u| u.active && u.role == Role::Admin)
        .map(|u| u.id)
}

/// Creates a user through the engine. The very first user must be an admin
/// and is recorded as having created itself.
pub fn user_add(
    engine: &mut Engine,
    username: &str,
    display_name: &str,
    role: Role,
    password: &str,
) -> Result<Versioned<User>, CliError> {
    let snap = engine.snapshot();
    let id = EntityId::new_v4();
    let actor = if snap.catalog.users.is_empty() {
        if role != Role::Admin {
            return Err(CliError::new(
                "BOOTSTRAP_REQUIRES_ADMIN",
                "the first user must have the ADMIN role",
            ));
        }
        id
    } else {
        acting_admin(&snap.catalog)
            .ok_or_else(|| CliError::new("NO_ADMIN", "no active admin to act as"))?
    };
    if snap.catalog.user_by_username(username).is_some() {
        return Err(CliError::new("USERNAME_TAKEN", format!("username {username:?} is taken")));
    }
    let record = new_password_record(password).map_err(|e| CliError::new(e.code(), e.to_string()))?;
    let user = User {
        id,
        username: username.to_owned(),
        display_name: display_name.to_owned(),
        role,
        password_hash: record,
        active: true,
    };
    match engine.submit(OpRequest {
        op_id: EntityId::new_v4(),
        actor,
        body: EventBody::UserCreated(user),
    })? {
        OpResult::Rejected(v) => Err(rejected(&v)),
        _ => Ok(engine.snapshot().catalog.users[&id].clone()),
    }
}

pub fn user_list(engine: &Engine) -> Vec<String> {
    engine
        .snapshot()
        .catalog
        .users
        .values()
        .map(|u| {
            format!(
                "{}\t{}\t{}\t{}",
                u.id,
                u.username,
                u.role,
                if u.active { "active" } else { "inactive" }
            )
        })
        .collect()
}

fn unknown(what: &str, key: &str) -> CliError {
    CliError::new("UNKNOWN_REFERENCE", format!("no live {what} matches {key:?}"))
}

fn find_item<'a>(c: &'a Catalog, key: &str) -> Option<&'a Versioned<Item>> {
    match key.parse::<EntityId>() {
        Ok(id) => c.live_item(&id),
        Err(_) => c.item_by_sku(key),
    }
}

fn find_warehouse<'a>(c: &'a Catalog, key: &str) -> Option<&'a Versioned<Warehouse>> {
    match key.parse::<EntityId>() {
        Ok(id) => c.live_warehouse(&id),
        Err(_) => {
            let folded = fold_name(key);
            c.live_warehouses().find(|w| fold_name(&w.name) == folded)
        }
    }
}

/// Label payload for an item given by id or SKU; with `op`, an operation label.
pub fn label(
    snap: &Snapshot,
    item: &str,
    op: Option<(LabelOpKind, String, u64)>,
) -> Result<String, CliError> {
    let c = &snap.catalog;
    let item_id = find_item(c, item).ok_or_else(|| unknown("item", item))?.id;
    let payload = match op {
        None => QrPayload::ItemLabel { item_id },
        Some((kind, warehouse, quantity)) => QrPayload::StockOpLabel {
            kind,
            warehouse_id: find_warehouse(c, &warehouse)
                .ok_or_else(|| unknown("warehouse", &warehouse))?
                .id,
            item_id,
            quantity,
        },
    };
    encode_payload(&payload).map_err(|e| CliError::new("INVALID_PAYLOAD", e.to_string()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub events: u64,
    pub snapshot_seq: Option<u64>,
    pub torn_bytes: u64,
    pub problem: Option<String>,
}

impl VerifyReport {
    pub fn ok(&self) -> bool {
        self.problem.is_none()
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "events: {}", self.events)?;
        match self.snapshot_seq {
            Some(s) => writeln!(f, "snapshot: seq {s}")?,
            None => writeln!(f, "snapshot: none")?,
        }
        if self.torn_bytes > 0 {
            writeln!(f, "torn tail: {} bytes (dropped on next open)", self.torn_bytes)?;
        }
        match &self.problem {
            None => writeln!(f, "OK"),
            Some(p) => writeln!(f, "MISMATCH: {p}"),
        }
    }
}

/// Replays the whole log and checks that the stored snapshot is, byte for
/// byte, the canonical form of the log prefix it claims to cover.
///
/// Reads files only; never repairs anything. A log that does not replay is
/// `CORRUPT_LOG`; a snapshot that disagrees is reported as a mismatch.
pub fn verify_log(dir: &Path) -> Result<VerifyReport, CliError> {
    let (events, scan) = read_log_file(&dir.join(EVENTS_FILE))?;
    replay(&events).map_err(|c| {
        CliError::from(StoreError::CorruptLog {
            seq: c.seq,
            reason: c.violation.to_string(),
        })
    })?;
    let mut report = VerifyReport {
        events: events.len() as u64,
        snapshot_seq: None,
        torn_bytes: scan.torn_bytes,
        problem: None,
    };
    let stored = match fs::read(dir.join(SNAPSHOT_FILE)) {
        Ok(b) => b,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(report),
        Err(e) => return Err(e.into()),
    };
    let snap: Snapshot = match serde_json::from_slice(&stored) {
        Ok(s) => s,
        Err(e) => {
            report.problem = Some(format!("snapshot does not parse: {e}"));
            return Ok(report);
        }
    };
    report.snapshot_seq = Some(snap.seq);
    if snap.seq > report.events {
        report.problem = Some(format!(
            "snapshot claims seq {} but the log ends at {}",
            snap.seq, report.events
        ));
        return Ok(report);
    }
    let expected = replay(&events[..snap.seq as usize])
        .expect("prefix of a replayable log replays")
        .to_canonical_json();
    if expected.as_bytes() != stored.as_slice() {
        let at = expected
            .bytes()
            .zip(stored.iter().copied())
            .position(|(a, b)| a != b)
            .unwrap_or(expected.len().min(stored.len()));
        report.problem = Some(format!("snapshot differs from replay at byte {at}"));
    }
    Ok(report)
}
