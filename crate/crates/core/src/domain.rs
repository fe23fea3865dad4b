//! Catalog entities of the single company and their validation rules.
//!
//! Entity structs carry only their own fields. [`Versioned`] adds the
//! optimistic-concurrency version and the soft-delete flag once an entity
//! has been committed to the catalog.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Deref, DerefMut};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;
use uuid::Uuid;

use crate::auth::PasswordRecord;
use crate::codec;
use crate::geoloc::GeoPoint;

pub const MAX_NAME_LEN: usize = 120;
pub const MAX_CATEGORY_NAME_LEN: usize = 80;
pub const MAX_SKU_LEN: usize = 64;
pub const MAX_ADDRESS_LEN: usize = 300;
pub const MAX_DISPLAY_NAME_LEN: usize = 120;

/// A UUID in canonical lowercase hyphenated form.
///
/// Used for entity ids as well as operation and client ids.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EntityId(Uuid);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("not a lowercase hyphenated UUID: {0:?}")]
pub struct BadUuid(pub String);

impl EntityId {
    pub fn new_v4() -> Self {
        Self(Uuid::new_v4())
    }

    pub fn from_u128(v: u128) -> Self {
        Self(Uuid::from_u128(v))
    }

    /// Builds a version-4 UUID from 16 caller-supplied bytes (seeded fixtures).
    pub fn from_random_bytes(bytes: [u8; 16]) -> Self {
        Self(uuid::Builder::from_random_bytes(bytes).into_uuid())
    }

    pub fn as_uuid(&self) -> &Uuid {
        &self.0
    }

    pub fn parse(s: &str) -> Result<Self, BadUuid> {
        let b = s.as_bytes();
        let well_formed = b.len() == 36
            && b.iter().enumerate().all(|(i, &c)| match i {
                8 | 13 | 18 | 23 => c == b'-',
                _ => c.is_ascii_digit() || (b'a'..=b'f').contains(&c),
            });
        if !well_formed {
            return Err(BadUuid(s.to_owned()));
        }
        Uuid::parse_str(s)
            .map(Self)
            .map_err(|_| BadUuid(s.to_owned()))
    }
}

impl FromStr for EntityId {
    type Err = BadUuid;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s)
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.0.hyphenated(), f)
    }
}

impl fmt::Debug for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0.hyphenated())
    }
}

impl Serialize for EntityId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for EntityId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        EntityId::parse(&s).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Role {
    Admin,
    Employee,
}

impl Role {
    pub const ALL: [Role; 2] = [Role::Admin, Role::Employee];
}

impl FromStr for Role {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "ADMIN" => Ok(Role::Admin),
            "EMPLOYEE" => Ok(Role::Employee),
            _ => Err(format!("unknown role {s:?}")),
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Admin => "ADMIN",
            Role::Employee => "EMPLOYEE",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Warehouse {
    pub id: EntityId,
    pub name: String,
    pub location: GeoPoint,
    #[serde(default)]
    pub address: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Item {
    pub id: EntityId,
    pub name: String,
    pub sku: String,
    #[serde(default)]
    pub ean13: Option<String>,
    #[serde(default)]
    pub category_id: Option<EntityId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Category {
    pub id: EntityId,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct User {
    pub id: EntityId,
    pub username: String,
    #[serde(default)]
    pub display_name: String,
    pub role: Role,
    pub password_hash: PasswordRecord,
    pub active: bool,
}

/// A committed entity: its data plus version (starting at 1) and soft-delete flag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Versioned<T> {
    #[serde(flatten)]
    pub data: T,
    pub version: u64,
    #[serde(default)]
    pub deleted: bool,
}

impl<T> Versioned<T> {
    pub fn new(data: T) -> Self {
        Self {
            data,
            version: 1,
            deleted: false,
        }
    }

    pub fn is_live(&self) -> bool {
        !self.deleted
    }
}

impl<T> Deref for Versioned<T> {
    type Target = T;
    fn deref(&self) -> &T {
        &self.data
    }
}

impl<T> DerefMut for Versioned<T> {
    fn deref_mut(&mut self) -> &mut T {
        &mut self.data
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct StockLevel {
    pub warehouse_id: EntityId,
    pub item_id: EntityId,
    pub quantity: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ValidationCode {
    EmptyName,
    NameTooLong,
    NameTaken,
    BadSku,
    SkuTaken,
    BadEan13,
    UnknownCategory,
    BadCoordinates,
    AddressTooLong,
    BadUsername,
    UsernameTaken,
    DisplayNameTooLong,
    LastAdmin,
    WeakPasswordRecord,
    IdTaken,
    BadQuantity,
    QuantityOverflow,
    SameWarehouse,
    DuplicateOpId,
    SequenceGap,
    MalformedOp,
}

impl ValidationCode {
    pub fn as_str(&self) -> &'static str {
        match self {
            ValidationCode::EmptyName => "EMPTY_NAME",
            ValidationCode::NameTooLong => "NAME_TOO_LONG",
            ValidationCode::NameTaken => "NAME_TAKEN",
            ValidationCode::BadSku => "BAD_SKU",
            ValidationCode::SkuTaken => "SKU_TAKEN",
            ValidationCode::BadEan13 => "BAD_EAN13",
            ValidationCode::UnknownCategory => "UNKNOWN_CATEGORY",
            ValidationCode::BadCoordinates => "BAD_COORDINATES",
            ValidationCode::AddressTooLong => "ADDRESS_TOO_LONG",
            ValidationCode::BadUsername => "BAD_USERNAME",
            ValidationCode::UsernameTaken => "USERNAME_TAKEN",
            ValidationCode::DisplayNameTooLong => "DISPLAY_NAME_TOO_LONG",
            ValidationCode::LastAdmin => "LAST_ADMIN",
            ValidationCode::WeakPasswordRecord => "WEAK_PASSWORD_RECORD",
            ValidationCode::IdTaken => "ID_TAKEN",
            ValidationCode::BadQuantity => "BAD_QUANTITY",
            ValidationCode::QuantityOverflow => "QUANTITY_OVERFLOW",
            ValidationCode::SameWarehouse => "SAME_WAREHOUSE",
            ValidationCode::DuplicateOpId => "DUPLICATE_OP_ID",
            ValidationCode::SequenceGap => "SEQUENCE_GAP",
            ValidationCode::MalformedOp => "MALFORMED_OP",
        }
    }

    /// Codes that describe a clash with another live entity rather than bad input.
    pub fn is_uniqueness(&self) -> bool {
        matches!(
            self,
            ValidationCode::NameTaken | ValidationCode::SkuTaken | ValidationCode::UsernameTaken
        )
    }
}

impl fmt::Display for ValidationCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub type Validation = Result<(), Vec<ValidationCode>>;

/// Key used for case-insensitive name comparison: per-character simple case folding.
pub fn fold_name(name: &str) -> String {
    name.chars()
        .map(|c| match c {
            'ς' => 'σ',
            'ſ' => 's',
            _ => {
                let mut lower = c.to_lowercase();
                match (lower.next(), lower.next()) {
                    (Some(l), None) => l,
                    _ => c,
                }
            }
        })
        .collect()
}

/// All entities of the company, including soft-deleted ones.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Catalog {
    pub warehouses: BTreeMap<EntityId, Versioned<Warehouse>>,
    pub items: BTreeMap<EntityId, Versioned<Item>>,
    pub categories: BTreeMap<EntityId, Versioned<Category>>,
    pub users: BTreeMap<EntityId, Versioned<User>>,
}

impl Catalog {
    pub fn live_warehouse(&self, id: &EntityId) -> Option<&Versioned<Warehouse>> {
        self.warehouses.get(id).filter(|w| w.is_live())
    }

    pub fn live_item(&self, id: &EntityId) -> Option<&Versioned<Item>> {
        self.items.get(id).filter(|i| i.is_live())
    }

    pub fn live_category(&self, id: &EntityId) -> Option<&Versioned<Category>> {
        self.categories.get(id).filter(|c| c.is_live())
    }

    pub fn live_warehouses(&self) -> impl Iterator<Item = &Versioned<Warehouse>> {
        self.warehouses.values().filter(|w| w.is_live())
    }

    pub fn live_items(&self) -> impl Iterator<Item = &Versioned<Item>> {
        self.items.values().filter(|i| i.is_live())
    }

    pub fn live_categories(&self) -> impl Iterator<Item = &Versioned<Category>> {
        self.categories.values().filter(|c| c.is_live())
    }

    pub fn item_by_sku(&self, sku: &str) -> Option<&Versioned<Item>> {
        self.live_items().find(|i| i.sku == sku)
    }

    /// Live item carrying this EAN-13; the smallest id wins if several do.
    pub fn item_by_ean13(&self, ean: &str) -> Option<&Versioned<Item>> {
        self.live_items().find(|i| i.ean13.as_deref() == Some(ean))
    }

    pub fn user_by_username(&self, username: &str) -> Option<&Versioned<User>> {
        self.users.values().find(|u| u.username == username)
    }

    pub fn active_admin_count(&self) -> usize {
        self.users
            .values()
            .filter(|u| u.active && u.role == Role::Admin)
            .count()
    }

    pub fn is_empty(&self) -> bool {
        self.warehouses.is_empty()
            && self.items.is_empty()
            && self.categories.is_empty()
            && self.users.is_empty()
    }
}

fn finish(violations: Vec<ValidationCode>) -> Validation {
    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}

fn check_name(name: &str, max: usize, out: &mut Vec<ValidationCode>) {
    if name.trim().is_empty() {
        out.push(ValidationCode::EmptyName);
    } else if name.chars().count() > max {
        out.push(ValidationCode::NameTooLong);
    }
}

/// Checks an item against the catalog. An existing item with the same id is
/// treated as the one being replaced.
pub fn validate_item(candidate: &Item, catalog: &Catalog) -> Validation {
    let mut v = Vec::new();
    check_name(&candidate.name, MAX_NAME_LEN, &mut v);
    if candidate.sku.is_empty() || candidate.sku.chars().count() > MAX_SKU_LEN {
        v.push(ValidationCode::BadSku);
    } else if catalog
        .live_items()
        .any(|i| i.id != candidate.id && i.sku == candidate.sku)
    {
        v.push(ValidationCode::SkuTaken);
    }
    if let Some(ean) = &candidate.ean13 {
        if codec::ean13_validate(ean).is_err() {
            v.push(ValidationCode::BadEan13);
        }
    }
    if let Some(cat) = &candidate.category_id {
        if catalog.live_category(cat).is_none() {
            v.push(ValidationCode::UnknownCategory);
        }
    }
    finish(v)
}

pub fn validate_warehouse(candidate: &Warehouse, catalog: &Catalog) -> Validation {
    let mut v = Vec::new();
    check_name(&candidate.name, MAX_NAME_LEN, &mut v);
    let key = fold_name(&candidate.name);
    if catalog
        .live_warehouses()
        .any(|w| w.id != candidate.id && fold_name(&w.name) == key)
    {
        v.push(ValidationCode::NameTaken);
    }
    if !candidate.location.is_valid() {
        v.push(ValidationCode::BadCoordinates);
    }
    if candidate.address.chars().count() > MAX_ADDRESS_LEN {
        v.push(ValidationCode::AddressTooLong);
    }
    finish(v)
}

pub fn validate_category(candidate: &Category, catalog: &Catalog) -> Validation {
    let mut v = Vec::new();
    check_name(&candidate.name, MAX_CATEGORY_NAME_LEN, &mut v);
    let key = fold_name(&candidate.name);
    if catalog
        .live_categories()
        .any(|c| c.id != candidate.id && fold_name(&c.name) == key)
    {
        v.push(ValidationCode::NameTaken);
    }
    finish(v)
}

pub fn is_valid_username(username: &str) -> bool {
    (3..=40).contains(&username.len())
        && username
            .bytes()
            .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || matches!(b, b'_' | b'.' | b'-'))
}

/// Checks a new or replacement user. Raises `LAST_ADMIN` whenever the
/// catalog would be left without an active admin once the candidate is in place.
pub fn validate_user(candidate: &User, catalog: &Catalog) -> Validation {
    let mut v = Vec::new();
    if !is_valid_username(&candidate.username) {
        v.push(ValidationCode::BadUsername);
    } else if catalog
        .users
        .values()
        .any(|u| u.id != candidate.id && u.username == candidate.username)
    {
        v.push(ValidationCode::UsernameTaken);
    }
    if candidate.display_name.chars().count() > MAX_DISPLAY_NAME_LEN {
        v.push(ValidationCode::DisplayNameTooLong);
    }
    let others = catalog
        .users
        .values()
        .filter(|u| u.id != candidate.id && u.active && u.role == Role::Admin)
        .count();
    let candidate_admin = candidate.active && candidate.role == Role::Admin;
    if others == 0 && !candidate_admin {
        v.push(ValidationCode::LastAdmin);
    }
    finish(v)
}
