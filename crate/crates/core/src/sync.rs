//! Offline sync: batched push of queued operations, cursor-based pull of
//! committed events and the client-side merge of pulled pages.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{EntityId, ValidationCode};
use crate::engine::{
    apply_event, Engine, EngineError, EventBody, OpRequest, OpResult, Snapshot, StockEvent,
    Violation,
};
use crate::store::{LogRead, StoreError};

pub const MAX_BATCH_OPS: usize = 500;
pub const DEFAULT_PULL_LIMIT: usize = 500;
pub const MAX_PULL_LIMIT: usize = 1000;

/// One queued client operation: `{"opId": …, "kind": …, "body": {…}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct OpEnvelope {
    pub op_id: EntityId,
    #[serde(flatten)]
    pub body: EventBody,
}

/// Ops stay as raw JSON so one malformed entry rejects only itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PushBatch {
    pub client_id: EntityId,
    pub ops: Vec<serde_json::Value>,
}

impl PushBatch {
    pub fn new(client_id: EntityId, ops: &[OpEnvelope]) -> Self {
        Self {
            client_id,
            ops: ops
                .iter()
                .map(|o| serde_json::to_value(o).expect("envelope serializes"))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PushOutcome {
    pub results: Vec<OpResult>,
    /// The server's last committed seq after the batch.
    pub cursor: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EventsPage {
    pub events: Vec<StockEvent>,
    pub next_cursor: u64,
    pub has_more: bool,
}

#[derive(Debug, Error)]
pub enum SyncError {
    #[error("batch is empty")]
    EmptyBatch,
    #[error("batch has {0} ops; the limit is {MAX_BATCH_OPS}")]
    BatchTooLarge(usize),
    #[error("op id {0} appears more than once in the batch")]
    DuplicateOpInBatch(EntityId),
    #[error("cursor {cursor} is ahead of the last committed seq {committed}")]
    CursorAhead { cursor: u64, committed: u64 },
    #[error("limit must be between 1 and {MAX_PULL_LIMIT}")]
    BadLimit,
    #[error(transparent)]
    Storage(#[from] StoreError),
}

impl From<EngineError> for SyncError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Storage(s) => SyncError::Storage(s),
        }
    }
}

impl SyncError {
    pub fn code(&self) -> &'static str {
        match self {
            SyncError::EmptyBatch => "EMPTY_BATCH",
            SyncError::BatchTooLarge(_) => "BATCH_TOO_LARGE",
            SyncError::DuplicateOpInBatch(_) => "DUPLICATE_OP_ID",
            SyncError::CursorAhead { .. } => "CURSOR_AHEAD",
            SyncError::BadLimit => "BAD_LIMIT",
            SyncError::Storage(e) => e.code(),
        }
    }
}

fn envelope_op_id(raw: &serde_json::Value) -> Option<EntityId> {
    raw.get("opId")?.as_str()?.parse().ok()
}

/// Submits each op in order; every op is atomic on its own and gets its own
/// result. A storage failure aborts the rest of the batch, and the ops
/// already applied stay applied (the client retries them as duplicates).
pub fn push(
    engine: &mut Engine,
    batch: &PushBatch,
    actor: EntityId,
) -> Result<PushOutcome, SyncError> {
    if batch.ops.is_empty() {
        return Err(SyncError::EmptyBatch);
    }
    if batch.ops.len() > MAX_BATCH_OPS {
        return Err(SyncError::BatchTooLarge(batch.ops.len()));
    }
    let mut seen = std::collections::HashSet::new();
    for op in batch.ops.iter().filter_map(envelope_op_id) {
        if !seen.insert(op) {
            return Err(SyncError::DuplicateOpInBatch(op));
        }
    }
    let mut results = Vec::with_capacity(batch.ops.len());
    for raw in &batch.ops {
        let result = match serde_json::from_value::<OpEnvelope>(raw.clone()) {
            Ok(env) => engine.submit(OpRequest {
                op_id: env.op_id,
                actor,
                body: env.body,
            })?,
            Err(e) => {
                log::debug!("malformed op from client {}: {e}", batch.client_id);
                OpResult::Rejected(Violation::validation(vec![ValidationCode::MalformedOp]))
            }
        };
        results.push(result);
    }
    Ok(PushOutcome {
        results,
        cursor: engine.last_seq(),
    })
}

/// Committed events with `seq > cursor`, at most `limit` of them.
pub fn pull(reader: &dyn LogRead, cursor: u64, limit: usize) -> Result<EventsPage, SyncError> {
    if !(1..=MAX_PULL_LIMIT).contains(&limit) {
        return Err(SyncError::BadLimit);
    }
    let committed = reader.last_seq();
    if cursor > committed {
        return Err(SyncError::CursorAhead { cursor, committed });
    }
    let events = reader.read_from(cursor + 1, limit)?;
    let next_cursor = events.last().map_or(cursor, |e| e.seq);
    Ok(EventsPage {
        has_more: next_cursor < reader.last_seq(),
        events,
        next_cursor,
    })
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MergeError {
    #[error("GAP_DETECTED: expected seq {expected}, page has {found}")]
    GapDetected { expected: u64, found: u64 },
    #[error("CORRUPT_LOG: pulled event seq {seq} does not apply: {violation}")]
    Corrupt { seq: u64, violation: Violation },
}

impl MergeError {
    pub fn code(&self) -> &'static str {
        match self {
            MergeError::GapDetected { .. } => "GAP_DETECTED",
            MergeError::Corrupt { .. } => "CORRUPT_LOG",
        }
    }
}

/// A client's authoritative mirror: the server state as of `cursor`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ClientReplica {
    pub cursor: u64,
    pub state: Snapshot,
}

impl ClientReplica {
    pub fn new() -> Self {
        Self::default()
    }

    /// Applies a pulled page all-or-nothing.
    pub fn merge(&mut self, page: &EventsPage) -> Result<(), MergeError> {
        *self = client_merge(self, page)?;
        Ok(())
    }

    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string(self).expect("replica serializes")
    }
}

/// Pure merge of a pulled page into a replica.
pub fn client_merge(local: &ClientReplica, page: &EventsPage) -> Result<ClientReplica, MergeError> {
    let mut state = local.state.clone();
    let mut expected = local.cursor + 1;
    for e in &page.events {
        if e.seq != expected {
            return Err(MergeError::GapDetected {
                expected,
                found: e.seq,
            });
        }
        state = apply_event(&state, e).map_err(|violation| MergeError::Corrupt {
            seq: e.seq,
            violation,
        })?;
        expected += 1;
    }
    let cursor = expected - 1;
    if page.next_cursor != cursor {
        return Err(MergeError::GapDetected {
            expected,
            found: page.next_cursor,
        });
    }
    Ok(ClientReplica { cursor, state })
}
