//! Core of the inventory service.
//!
//! State is an append-only log of [`engine::StockEvent`]s; the catalog and
//! per-warehouse stock are a fold of that log ([`engine::replay`]). Every
//! other module either validates input for the fold, persists it, or ships
//! it to clients.

pub mod auth;
pub mod codec;
pub mod domain;
pub mod engine;
pub mod geoloc;
pub mod store;
pub mod sync;
pub mod time;

pub use domain::EntityId;
pub use engine::{Engine, OpRequest, OpResult, Snapshot, StockEvent};
