//! The event-sourced stock engine.
//!
//! Every mutation is a [`StockEvent`] with a server-assigned `seq`. The
//! [`Snapshot`] is the fold of the committed log; [`Engine`] is the single
//! writer that authorizes requests, assigns sequence numbers, persists events
//! and records results against client-chosen operation ids.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::auth::{Action, MIN_ITERATIONS};
use crate::domain::{
    self, Catalog, Category, EntityId, Item, Role, StockLevel, User, ValidationCode, Versioned,
    Warehouse,
};
use crate::store::{self, EventStore, LogRead, StoreError};
use crate::time::{Clock, Timestamp};

/// How many recent operation ids a snapshot remembers.
pub const APPLIED_WINDOW: usize = 10_000;
/// How many recent rejections the engine remembers.
pub const REJECTION_WINDOW: usize = 10_000;
pub const DEFAULT_SNAPSHOT_EVERY: u64 = 1_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EventKind {
    ItemCreated,
    ItemUpdated,
    ItemDeleted,
    WarehouseCreated,
    WarehouseUpdated,
    WarehouseDeleted,
    CategoryCreated,
    CategoryUpdated,
    CategoryDeleted,
    UserCreated,
    UserUpdated,
    Receive,
    Issue,
    Transfer,
    Adjust,
}

impl EventKind {
    pub const ALL: [EventKind; 15] = [
        EventKind::ItemCreated,
        EventKind::ItemUpdated,
        EventKind::ItemDeleted,
        EventKind::WarehouseCreated,
        EventKind::WarehouseUpdated,
        EventKind::WarehouseDeleted,
        EventKind::CategoryCreated,
        EventKind::CategoryUpdated,
        EventKind::CategoryDeleted,
        EventKind::UserCreated,
        EventKind::UserUpdated,
        EventKind::Receive,
        EventKind::Issue,
        EventKind::Transfer,
        EventKind::Adjust,
    ];

    pub fn required_action(self) -> Action {
        use EventKind::*;
        match self {
            ItemCreated | ItemUpdated | ItemDeleted | WarehouseCreated | WarehouseUpdated
            | WarehouseDeleted | CategoryCreated | CategoryUpdated | CategoryDeleted => {
                Action::WriteCatalog
            }
            UserCreated | UserUpdated => Action::ManageUsers,
            Receive | Issue | Transfer => Action::MoveStock,
            Adjust => Action::AdjustStock,
        }
    }
}

/// Replacement of an entity, guarded by the version the client last saw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Update<T> {
    pub expected_version: u64,
    #[serde(flatten)]
    pub entity: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Delete {
    pub id: EntityId,
    pub expected_version: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Movement {
    pub warehouse_id: EntityId,
    pub item_id: EntityId,
    pub quantity: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Transfer {
    pub from_warehouse_id: EntityId,
    pub to_warehouse_id: EntityId,
    pub item_id: EntityId,
    pub quantity: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Adjust {
    pub warehouse_id: EntityId,
    pub item_id: EntityId,
    pub new_quantity: u64,
}

/// Kind-specific event payload; serialized as `"kind": …, "body": {…}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "body", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EventBody {
    ItemCreated(Item),
    ItemUpdated(Update<Item>),
    ItemDeleted(Delete),
    WarehouseCreated(Warehouse),
    WarehouseUpdated(Update<Warehouse>),
    WarehouseDeleted(Delete),
    CategoryCreated(Category),
    CategoryUpdated(Update<Category>),
    CategoryDeleted(Delete),
    UserCreated(User),
    UserUpdated(Update<User>),
    Receive(Movement),
    Issue(Movement),
    Transfer(Transfer),
    Adjust(Adjust),
}

impl EventBody {
    pub fn kind(&self) -> EventKind {
        match self {
            EventBody::ItemCreated(_) => EventKind::ItemCreated,
            EventBody::ItemUpdated(_) => EventKind::ItemUpdated,
            EventBody::ItemDeleted(_) => EventKind::ItemDeleted,
            EventBody::WarehouseCreated(_) => EventKind::WarehouseCreated,
            EventBody::WarehouseUpdated(_) => EventKind::WarehouseUpdated,
            EventBody::WarehouseDeleted(_) => EventKind::WarehouseDeleted,
            EventBody::CategoryCreated(_) => EventKind::CategoryCreated,
            EventBody::CategoryUpdated(_) => EventKind::CategoryUpdated,
            EventBody::CategoryDeleted(_) => EventKind::CategoryDeleted,
            EventBody::UserCreated(_) => EventKind::UserCreated,
            EventBody::UserUpdated(_) => EventKind::UserUpdated,
            EventBody::Receive(_) => EventKind::Receive,
            EventBody::Issue(_) => EventKind::Issue,
            EventBody::Transfer(_) => EventKind::Transfer,
            EventBody::Adjust(_) => EventKind::Adjust,
        }
    }

    /// Id of the entity a catalog event creates, updates or deletes.
    pub fn entity_id(&self) -> Option<EntityId> {
        match self {
            EventBody::ItemCreated(i) => Some(i.id),
            EventBody::ItemUpdated(u) => Some(u.entity.id),
            EventBody::WarehouseCreated(w) => Some(w.id),
            EventBody::WarehouseUpdated(u) => Some(u.entity.id),
            EventBody::CategoryCreated(c) => Some(c.id),
            EventBody::CategoryUpdated(u) => Some(u.entity.id),
            EventBody::UserCreated(u) => Some(u.id),
            EventBody::UserUpdated(u) => Some(u.entity.id),
            EventBody::ItemDeleted(d)
            | EventBody::WarehouseDeleted(d)
            | EventBody::CategoryDeleted(d) => Some(d.id),
            EventBody::Receive(_)
            | EventBody::Issue(_)
            | EventBody::Transfer(_)
            | EventBody::Adjust(_) => None,
        }
    }
}

/// One committed mutation. Serialized field order is part of the log format:
/// `seq, opId, actor, ts, kind, body`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct StockEvent {
    pub seq: u64,
    pub op_id: EntityId,
    pub actor: EntityId,
    pub ts: Timestamp,
    #[serde(flatten)]
    pub body: EventBody,
}

/// A mutation that has not been sequenced yet.
#[derive(Debug, Clone, PartialEq)]
pub struct OpRequest {
    pub op_id: EntityId,
    pub actor: EntityId,
    pub body: EventBody,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ViolationCode {
    RejectedNegative,
    VersionConflict,
    ValidationFailed,
    UnknownReference,
    Forbidden,
}

impl ViolationCode {
    pub fn as_str(&self) -> &'static str {
        match self {
            ViolationCode::RejectedNegative => "REJECTED_NEGATIVE",
            ViolationCode::VersionConflict => "VERSION_CONFLICT",
            ViolationCode::ValidationFailed => "VALIDATION_FAILED",
            ViolationCode::UnknownReference => "UNKNOWN_REFERENCE",
            ViolationCode::Forbidden => "FORBIDDEN",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Violation {
    pub code: ViolationCode,
    pub details: Vec<ValidationCode>,
}

impl Violation {
    pub fn new(code: ViolationCode) -> Self {
        Self {
            code,
            details: Vec::new(),
        }
    }

    pub fn validation(details: Vec<ValidationCode>) -> Self {
        Self {
            code: ViolationCode::ValidationFailed,
            details,
        }
    }

    fn one(detail: ValidationCode) -> Self {
        Self::validation(vec![detail])
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code.as_str())?;
        if !self.details.is_empty() {
            let d: Vec<_> = self.details.iter().map(|c| c.as_str()).collect();
            write!(f, " [{}]", d.join(", "))?;
        }
        Ok(())
    }
}

impl std::error::Error for Violation {}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "OpResultJson", try_from = "OpResultJson")]
pub enum OpResult {
    Applied { seq: u64 },
    Duplicate { seq: u64 },
    Rejected(Violation),
}

impl OpResult {
    pub fn seq(&self) -> Option<u64> {
        match self {
            OpResult::Applied { seq } | OpResult::Duplicate { seq } => Some(*seq),
            OpResult::Rejected(_) => None,
        }
    }

    pub fn is_rejected(&self) -> bool {
        matches!(self, OpResult::Rejected(_))
    }

    /// The same outcome as seen by a retry of the same operation.
    pub fn as_retry(&self) -> OpResult {
        match self {
            OpResult::Applied { seq } => OpResult::Duplicate { seq: *seq },
            other => other.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum OpStatus {
    Applied,
    Duplicate,
    Rejected,
}

#[derive(Serialize, Deserialize)]
struct OpResultJson {
    status: OpStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seq: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    violation: Option<ViolationCode>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    details: Vec<ValidationCode>,
}

impl From<OpResult> for OpResultJson {
    fn from(r: OpResult) -> Self {
        match r {
            OpResult::Applied { seq } => OpResultJson {
                status: OpStatus::Applied,
                seq: Some(seq),
                violation: None,
                details: Vec::new(),
            },
            OpResult::Duplicate { seq } => OpResultJson {
                status: OpStatus::Duplicate,
                seq: Some(seq),
                violation: None,
                details: Vec::new(),
            },
            OpResult::Rejected(v) => OpResultJson {
                status: OpStatus::Rejected,
                seq: None,
                violation: Some(v.code),
                details: v.details,
            },
        }
    }
}

impl TryFrom<OpResultJson> for OpResult {
    type Error = String;
    fn try_from(j: OpResultJson) -> Result<Self, Self::Error> {
        match (j.status, j.seq, j.violation) {
            (OpStatus::Applied, Some(seq), None) => Ok(OpResult::Applied { seq }),
            (OpStatus::Duplicate, Some(seq), None) => Ok(OpResult::Duplicate { seq }),
            (OpStatus::Rejected, None, Some(code)) => Ok(OpResult::Rejected(Violation {
                code,
                details: j.details,
            })),
            _ => Err("inconsistent op result".into()),
        }
    }
}

/// Recent operation ids in commit order, bounded to [`APPLIED_WINDOW`].
#[derive(Debug, Clone, Default)]
struct AppliedWindow {
    order: VecDeque<(EntityId, u64)>,
    index: HashMap<EntityId, u64>,
}

impl PartialEq for AppliedWindow {
    fn eq(&self, other: &Self) -> bool {
        self.order == other.order
    }
}

impl AppliedWindow {
    fn get(&self, op: &EntityId) -> Option<u64> {
        self.index.get(op).copied()
    }

    fn record(&mut self, op: EntityId, seq: u64) {
        self.order.push_back((op, seq));
        self.index.insert(op, seq);
        while self.order.len() > APPLIED_WINDOW {
            if let Some((old, _)) = self.order.pop_front() {
                self.index.remove(&old);
            }
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct AppliedOp {
    op_id: EntityId,
    seq: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct SnapshotJson {
    seq: u64,
    catalog: Catalog,
    stock: Vec<StockLevel>,
    applied_op_ids: Vec<AppliedOp>,
}

/// Authoritative state at a given log position.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(into = "SnapshotJson", try_from = "SnapshotJson")]
pub struct Snapshot {
    pub seq: u64,
    pub catalog: Catalog,
    stock: BTreeMap<(EntityId, EntityId), u64>,
    applied: AppliedWindow,
}

impl From<Snapshot> for SnapshotJson {
    fn from(s: Snapshot) -> Self {
        SnapshotJson {
            seq: s.seq,
            catalog: s.catalog,
            stock: s
                .stock
                .iter()
                .map(|(&(warehouse_id, item_id), &quantity)| StockLevel {
                    warehouse_id,
                    item_id,
                    quantity,
                })
                .collect(),
            applied_op_ids: s
                .applied
                .order
                .iter()
                .map(|&(op_id, seq)| AppliedOp { op_id, seq })
                .collect(),
        }
    }
}

impl TryFrom<SnapshotJson> for Snapshot {
    type Error = String;
    fn try_from(j: SnapshotJson) -> Result<Self, Self::Error> {
        let mut stock = BTreeMap::new();
        for l in j.stock {
            if l.quantity == 0 || stock.insert((l.warehouse_id, l.item_id), l.quantity).is_some() {
                return Err("stock entries must be non-zero and unique".into());
            }
        }
        let mut applied = AppliedWindow::default();
        for a in j.applied_op_ids {
            applied.record(a.op_id, a.seq);
        }
        Ok(Snapshot {
            seq: j.seq,
            catalog: j.catalog,
            stock,
            applied,
        })
    }
}

/// State change computed by [`Snapshot::plan`]; committing it cannot fail.
enum Effect {
    Stock(Vec<((EntityId, EntityId), u64)>),
    Warehouse(Versioned<Warehouse>),
    Item(Versioned<Item>),
    Category(Versioned<Category>, Vec<EntityId>),
    User(Versioned<User>),
}

fn plan_create<T: Clone>(
    map: &BTreeMap<EntityId, Versioned<T>>,
    id: EntityId,
    data: &T,
    validation: domain::Validation,
) -> Result<Versioned<T>, Violation> {
    if map.contains_key(&id) {
        return Err(Violation::one(ValidationCode::IdTaken));
    }
    validation.map_err(Violation::validation)?;
    Ok(Versioned::new(data.clone()))
}

fn current<T>(
    map: &BTreeMap<EntityId, Versioned<T>>,
    id: EntityId,
    expected_version: u64,
) -> Result<&Versioned<T>, Violation> {
    let cur = map
        .get(&id)
        .filter(|e| e.is_live())
        .ok_or(Violation::new(ViolationCode::UnknownReference))?;
    if cur.version != expected_version {
        return Err(Violation::new(ViolationCode::VersionConflict));
    }
    Ok(cur)
}

fn plan_update<T: Clone>(
    map: &BTreeMap<EntityId, Versioned<T>>,
    id: EntityId,
    u: &Update<T>,
    validate: impl FnOnce() -> domain::Validation,
) -> Result<Versioned<T>, Violation> {
    let cur = current(map, id, u.expected_version)?;
    validate().map_err(Violation::validation)?;
    Ok(Versioned {
        data: u.entity.clone(),
        version: cur.version + 1,
        deleted: false,
    })
}

fn plan_delete<T: Clone>(
    map: &BTreeMap<EntityId, Versioned<T>>,
    d: &Delete,
) -> Result<Versioned<T>, Violation> {
    let cur = current(map, d.id, d.expected_version)?;
    Ok(Versioned {
        data: cur.data.clone(),
        version: cur.version + 1,
        deleted: true,
    })
}

fn check_password_record(u: &User) -> Result<(), Violation> {
    if u.password_hash.iterations < MIN_ITERATIONS {
        Err(Violation::one(ValidationCode::WeakPasswordRecord))
    } else {
        Ok(())
    }
}

impl Snapshot {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn quantity(&self, warehouse: EntityId, item: EntityId) -> u64 {
        self.stock.get(&(warehouse, item)).copied().unwrap_or(0)
    }

    /// Sequence number under which `op` was committed, if it is still in the
    /// snapshot's recent-operations window.
    pub fn applied_seq(&self, op: &EntityId) -> Option<u64> {
        self.applied.get(op)
    }

    pub fn applied_ops(&self) -> impl Iterator<Item = (EntityId, u64)> + '_ {
        self.applied.order.iter().copied()
    }

    pub fn total_quantity(&self, item: EntityId) -> u64 {
        self.stock
            .iter()
            .filter(|((_, i), _)| *i == item)
            .map(|(_, q)| *q)
            .sum()
    }

    /// Compact JSON with a fixed key order; equal snapshots give equal bytes.
    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string(self).expect("snapshot serializes")
    }

    fn live_refs(&self, warehouse: EntityId, item: EntityId) -> Result<(), Violation> {
        if self.catalog.live_warehouse(&warehouse).is_none()
            || self.catalog.live_item(&item).is_none()
        {
            return Err(Violation::new(ViolationCode::UnknownReference));
        }
        Ok(())
    }

    fn plan(&self, e: &StockEvent) -> Result<Effect, Violation> {
        if e.seq != self.seq + 1 {
            return Err(Violation::one(ValidationCode::SequenceGap));
        }
        if self.applied.get(&e.op_id).is_some() {
            return Err(Violation::one(ValidationCode::DuplicateOpId));
        }
        let cat = &self.catalog;
        let effect = match &e.body {
            EventBody::Receive(m) => {
                if m.quantity < 1 {
                    return Err(Violation::one(ValidationCode::BadQuantity));
                }
                self.live_refs(m.warehouse_id, m.item_id)?;
                let next = self
                    .quantity(m.warehouse_id, m.item_id)
                    .checked_add(m.quantity)
                    .ok_or(Violation::one(ValidationCode::QuantityOverflow))?;
                Effect::Stock(vec![((m.warehouse_id, m.item_id), next)])
            }
            EventBody::Issue(m) => {
                if m.quantity < 1 {
                    return Err(Violation::one(ValidationCode::BadQuantity));
                }
                self.live_refs(m.warehouse_id, m.item_id)?;
                let next = self
                    .quantity(m.warehouse_id, m.item_id)
                    .checked_sub(m.quantity)
                    .ok_or(Violation::new(ViolationCode::RejectedNegative))?;
                Effect::Stock(vec![((m.warehouse_id, m.item_id), next)])
            }
            EventBody::Transfer(t) => {
                if t.quantity < 1 {
                    return Err(Violation::one(ValidationCode::BadQuantity));
                }
                if t.from_warehouse_id == t.to_warehouse_id {
                    return Err(Violation::one(ValidationCode::SameWarehouse));
                }
                self.live_refs(t.from_warehouse_id, t.item_id)?;
                self.live_refs(t.to_warehouse_id, t.item_id)?;
                let from = self
                    .quantity(t.from_warehouse_id, t.item_id)
                    .checked_sub(t.quantity)
                    .ok_or(Violation::new(ViolationCode::RejectedNegative))?;
                let to = self
                    .quantity(t.to_warehouse_id, t.item_id)
                    .checked_add(t.quantity)
                    .ok_or(Violation::one(ValidationCode::QuantityOverflow))?;
                Effect::Stock(vec![
                    ((t.from_warehouse_id, t.item_id), from),
                    ((t.to_warehouse_id, t.item_id), to),
                ])
            }
            EventBody::Adjust(a) => {
                self.live_refs(a.warehouse_id, a.item_id)?;
                Effect::Stock(vec![((a.warehouse_id, a.item_id), a.new_quantity)])
            }
            EventBody::WarehouseCreated(w) => Effect::Warehouse(plan_create(
                &cat.warehouses,
                w.id,
                w,
                domain::validate_warehouse(w, cat),
            )?),
            EventBody::WarehouseUpdated(u) => {
                Effect::Warehouse(plan_update(&cat.warehouses, u.entity.id, u, || {
                    domain::validate_warehouse(&u.entity, cat)
                })?)
            }
            EventBody::WarehouseDeleted(d) => Effect::Warehouse(plan_delete(&cat.warehouses, d)?),
            EventBody::ItemCreated(i) => Effect::Item(plan_create(
                &cat.items,
                i.id,
                i,
                domain::validate_item(i, cat),
            )?),
            EventBody::ItemUpdated(u) => Effect::Item(plan_update(&cat.items, u.entity.id, u, || {
                domain::validate_item(&u.entity, cat)
            })?),
            EventBody::ItemDeleted(d) => Effect::Item(plan_delete(&cat.items, d)?),
            EventBody::CategoryCreated(c) => Effect::Category(
                plan_create(&cat.categories, c.id, c, domain::validate_category(c, cat))?,
                Vec::new(),
            ),
            EventBody::CategoryUpdated(u) => Effect::Category(
                plan_update(&cat.categories, u.entity.id, u, || {
                    domain::validate_category(&u.entity, cat)
                })?,
                Vec::new(),
            ),
            EventBody::CategoryDeleted(d) => {
                let deleted = plan_delete(&cat.categories, d)?;
                let referencing = cat
                    .items
                    .values()
                    .filter(|i| i.category_id == Some(d.id))
                    .map(|i| i.id)
                    .collect();
                Effect::Category(deleted, referencing)
            }
            EventBody::UserCreated(u) => {
                check_password_record(u)?;
                Effect::User(plan_create(&cat.users, u.id, u, domain::validate_user(u, cat))?)
            }
            EventBody::UserUpdated(u) => {
                // Users are never soft-deleted; deactivation is an ordinary update.
                let updated = plan_update(&cat.users, u.entity.id, u, || {
                    domain::validate_user(&u.entity, cat)
                })?;
                check_password_record(&u.entity)?;
                Effect::User(updated)
            }
        };
        Ok(effect)
    }

    fn commit(&mut self, e: &StockEvent, effect: Effect) {
        match effect {
            Effect::Stock(levels) => {
                for (key, q) in levels {
                    if q == 0 {
                        self.stock.remove(&key);
                    } else {
                        self.stock.insert(key, q);
                    }
                }
            }
            Effect::Warehouse(w) => {
                self.catalog.warehouses.insert(w.id, w);
            }
            Effect::Item(i) => {
                self.catalog.items.insert(i.id, i);
            }
            Effect::Category(c, referencing) => {
                for id in referencing {
                    if let Some(item) = self.catalog.items.get_mut(&id) {
                        item.category_id = None;
                        item.version += 1;
                    }
                }
                self.catalog.categories.insert(c.id, c);
            }
            Effect::User(u) => {
                self.catalog.users.insert(u.id, u);
            }
        }
        self.applied.record(e.op_id, e.seq);
        self.seq = e.seq;
    }

    /// Applies `e` in place. On a violation the snapshot is untouched.
    pub fn apply(&mut self, e: &StockEvent) -> Result<(), Violation> {
        let effect = self.plan(e)?;
        self.commit(e, effect);
        Ok(())
    }

    /// Checks `e` against this snapshot without changing it.
    pub fn check(&self, e: &StockEvent) -> Result<(), Violation> {
        self.plan(e).map(|_| ())
    }
}

/// Pure single-step transition: returns the successor snapshot, or the
/// violation with `s` left as it was.
pub fn apply_event(s: &Snapshot, e: &StockEvent) -> Result<Snapshot, Violation> {
    let effect = s.plan(e)?;
    let mut next = s.clone();
    next.commit(e, effect);
    Ok(next)
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("CORRUPT_LOG: event seq {seq} does not re-apply: {violation}")]
pub struct CorruptLog {
    pub seq: u64,
    pub violation: Violation,
}

/// Folds `events` over the empty snapshot.
pub fn replay<'a, I>(events: I) -> Result<Snapshot, CorruptLog>
where
    I: IntoIterator<Item = &'a StockEvent>,
{
    replay_onto(Snapshot::empty(), events)
}

pub fn replay_onto<'a, I>(mut s: Snapshot, events: I) -> Result<Snapshot, CorruptLog>
where
    I: IntoIterator<Item = &'a StockEvent>,
{
    for e in events {
        s.apply(e).map_err(|violation| CorruptLog {
            seq: e.seq,
            violation,
        })?;
    }
    Ok(s)
}

/// Non-zero stock levels matching the filters, ordered by (warehouse, item).
pub fn stock_levels(
    s: &Snapshot,
    warehouse: Option<EntityId>,
    item: Option<EntityId>,
) -> Vec<StockLevel> {
    s.stock
        .iter()
        .filter(|((w, i), _)| warehouse.is_none_or(|x| x == *w) && item.is_none_or(|x| x == *i))
        .map(|(&(warehouse_id, item_id), &quantity)| StockLevel {
            warehouse_id,
            item_id,
            quantity,
        })
        .collect()
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Storage(#[from] StoreError),
}

#[derive(Default)]
struct RejectionCache {
    order: VecDeque<EntityId>,
    index: HashMap<EntityId, Violation>,
}

impl RejectionCache {
    fn get(&self, op: &EntityId) -> Option<&Violation> {
        self.index.get(op)
    }

    fn record(&mut self, op: EntityId, v: Violation) {
        if self.index.insert(op, v).is_none() {
            self.order.push_back(op);
        }
        while self.order.len() > REJECTION_WINDOW {
            if let Some(old) = self.order.pop_front() {
                self.index.remove(&old);
            }
        }
    }
}

/// Single writer over a store. All mutations go through [`Engine::submit`].
pub struct Engine {
    snapshot: Arc<Snapshot>,
    store: Box<dyn EventStore>,
    // Every committed op id, not just the snapshot's window.
    op_index: HashMap<EntityId, u64>,
    rejections: RejectionCache,
    clock: Arc<dyn Clock>,
    snapshot_every: u64,
}

impl Engine {
    /// Boots from the store: snapshot (if any) plus replay of the log tail.
    pub fn open(store: Box<dyn EventStore>, clock: Arc<dyn Clock>) -> Result<Self, StoreError> {
        let boot = store::load_state(store.as_ref())?;
        let mut rejections = RejectionCache::default();
        for (op, v) in store.load_rejections()? {
            if !boot.op_index.contains_key(&op) {
                rejections.record(op, v);
            }
        }
        Ok(Self {
            snapshot: Arc::new(boot.snapshot),
            store,
            op_index: boot.op_index,
            rejections,
            clock,
            snapshot_every: DEFAULT_SNAPSHOT_EVERY,
        })
    }

    pub fn set_snapshot_every(&mut self, every: u64) {
        self.snapshot_every = every;
    }

    /// Immutable view of the current state; cheap to clone and share.
    pub fn snapshot(&self) -> Arc<Snapshot> {
        Arc::clone(&self.snapshot)
    }

    pub fn reader(&self) -> Arc<dyn LogRead> {
        self.store.reader()
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    pub fn last_seq(&self) -> u64 {
        self.snapshot.seq
    }

    /// The recorded result for `op`, as a retry would see it.
    pub fn recorded(&self, op: &EntityId) -> Option<OpResult> {
        if let Some(&seq) = self.op_index.get(op) {
            return Some(OpResult::Duplicate { seq });
        }
        self.rejections.get(op).cloned().map(OpResult::Rejected)
    }

    fn authorize(&self, req: &OpRequest) -> Result<(), Violation> {
        let forbidden = Violation::new(ViolationCode::Forbidden);
        let users = &self.snapshot.catalog.users;
        if users.is_empty() {
            // Bootstrap: the very first user creates itself and must be an active admin.
            return match &req.body {
                EventBody::UserCreated(u) if u.id == req.actor => Ok(()),
                _ => Err(forbidden),
            };
        }
        match users.get(&req.actor) {
            Some(u) if u.active && u.role.allows(req.body.kind().required_action()) => Ok(()),
            _ => Err(forbidden),
        }
    }

    fn reject(&mut self, op: EntityId, v: Violation) -> Result<OpResult, EngineError> {
        self.store.append_rejection(op, &v)?;
        self.rejections.record(op, v.clone());
        Ok(OpResult::Rejected(v))
    }

    /// Idempotent entry point for every mutation.
    ///
    /// A known `op_id` returns its recorded result without touching state.
    /// Otherwise the request is authorized against the actor's current role,
    /// checked against the snapshot, appended durably and only then applied.
    /// Rejections consume no sequence number but are remembered.
    pub fn submit(&mut self, req: OpRequest) -> Result<OpResult, EngineError> {
        if let Some(recorded) = self.recorded(&req.op_id) {
            return Ok(recorded);
        }
        if let Err(v) = self.authorize(&req) {
            return self.reject(req.op_id, v);
        }
        let event = StockEvent {
            seq: self.snapshot.seq + 1,
            op_id: req.op_id,
            actor: req.actor,
            ts: self.clock.now(),
            body: req.body,
        };
        let effect = match self.snapshot.plan(&event) {
            Ok(effect) => effect,
            Err(v) => return self.reject(event.op_id, v),
        };
        self.store.append_event(&event)?;
        Arc::make_mut(&mut self.snapshot).commit(&event, effect);
        self.op_index.insert(event.op_id, event.seq);
        if self.snapshot_every > 0 && event.seq % self.snapshot_every == 0 {
            if let Err(e) = self.store.write_snapshot(&self.snapshot) {
                log::warn!("periodic snapshot at seq {} failed: {e}", event.seq);
            }
        }
        Ok(OpResult::Applied { seq: event.seq })
    }

    /// Writes a snapshot of the current state (clean shutdown, operator request).
    pub fn checkpoint(&mut self) -> Result<(), StoreError> {
        self.store.write_snapshot(&self.snapshot)
    }

    /// Role of an active user, as the engine would authorize it.
    pub fn active_role(&self, user: &EntityId) -> Option<Role> {
        self.snapshot
            .catalog
            .users
            .get(user)
            .filter(|u| u.active)
            .map(|u| u.role)
    }
}
