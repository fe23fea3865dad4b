//! Deterministic demo data. Ids and opIds come from a fixed-seed generator,
//! so seeding the same directory again only produces DUPLICATE results.

use std::collections::BTreeSet;
use std::fmt;

use clap::ValueEnum;
use ims_core::auth::new_password_record;
use ims_core::codec::ean13_check_digit;
use ims_core::domain::{Category, Item, Role, User, Warehouse};
use ims_core::engine::{EventBody, Movement};
use ims_core::geoloc::GeoPoint;
use ims_core::{Engine, EntityId, OpRequest, OpResult};
use rand::distributions::{Alphanumeric, DistString};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ops::{acting_admin, rejected};
use crate::CliError;

pub const SEED: u64 = 42;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SeedSize {
    Small,
    Demo,
}

const SITES: [(&str, f64, f64, &str); 3] = [
    ("Warsaw Central", 52.2297, 21.0122, "Marszalkowska 1, Warsaw"),
    ("Krakow South", 50.0647, 19.9450, "Wielicka 40, Krakow"),
    ("Gdansk Port", 54.3520, 18.6466, "Portowa 7, Gdansk"),
];
const CATEGORIES: [&str; 5] = ["Fasteners", "Tools", "Electrical", "Plumbing", "Safety"];
const ADJECTIVES: [&str; 10] = [
    "Steel", "Brass", "Heavy", "Compact", "Galvanized", "Insulated", "Precision", "Flexible",
    "Coated", "Reinforced",
];
const NOUNS: [&str; 10] = [
    "Bolt", "Hinge", "Clamp", "Bracket", "Valve", "Cable", "Wrench", "Fitting", "Gloves", "Anchor",
];

fn next_id(rng: &mut ChaCha8Rng) -> EntityId {
    EntityId::from_random_bytes(rng.gen())
}

/// The fixture as an ordered list of (opId, event body).
pub fn fixture(size: SeedSize) -> Vec<(EntityId, EventBody)> {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    rng.set_stream(size as u64);
    let mut ops = Vec::new();
    let (sites, categories, n_items, n_ean) = match size {
        SeedSize::Small => (&SITES[..1], &CATEGORIES[..0], 5, 0),
        SeedSize::Demo => (&SITES[..], &CATEGORIES[..], 50, 10),
    };

    let mut warehouses = Vec::new();
    for &(name, lat, lon, address) in sites {
        let w = Warehouse {
            id: next_id(&mut rng),
            name: name.into(),
            location: GeoPoint::new(lat, lon).expect("fixture coordinates are valid"),
            address: address.into(),
        };
        warehouses.push(w.id);
        ops.push((next_id(&mut rng), EventBody::WarehouseCreated(w)));
    }
    let mut category_ids = Vec::new();
    for &name in categories {
        let c = Category {
            id: next_id(&mut rng),
            name: name.into(),
        };
        category_ids.push(c.id);
        ops.push((next_id(&mut rng), EventBody::CategoryCreated(c)));
    }

    let mut names: Vec<String> = ADJECTIVES
        .iter()
        .flat_map(|a| NOUNS.iter().map(move |n| format!("{a} {n}")))
        .collect();
    names.shuffle(&mut rng);
    let mut with_ean: Vec<usize> = (0..n_items).collect();
    with_ean.shuffle(&mut rng);
    let with_ean: BTreeSet<usize> = with_ean.into_iter().take(n_ean).collect();
    let mut eans = BTreeSet::new();

    let mut items = Vec::new();
    for (n, name) in names.into_iter().take(n_items).enumerate() {
        let ean13 = with_ean.contains(&n).then(|| loop {
            let prefix = format!("590{:09}", rng.gen_range(0..1_000_000_000u64));
            let code = format!("{prefix}{}", ean13_check_digit(&prefix).expect("12 digits"));
            if eans.insert(code.clone()) {
                break code;
            }
        });
        let item = Item {
            id: next_id(&mut rng),
            name,
            sku: format!("SKU-{:04}", n + 1),
            ean13,
            category_id: category_ids.choose(&mut rng).copied(),
        };
        items.push(item.id);
        ops.push((next_id(&mut rng), EventBody::ItemCreated(item)));
    }

    // Every item gets stock in at least one warehouse.
    for item_id in items {
        let k = rng.gen_range(1..=warehouses.len());
        for &warehouse_id in warehouses.choose_multiple(&mut rng, k) {
            let m = Movement {
                warehouse_id,
                item_id,
                quantity: rng.gen_range(1..=100),
            };
            ops.push((next_id(&mut rng), EventBody::Receive(m)));
        }
    }
    ops
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SeedSummary {
    pub ops: usize,
    pub applied: usize,
    pub duplicate: usize,
    pub rejected: Vec<String>,
    /// Set when seeding had to create the first admin.
    pub admin_password: Option<String>,
}

impl fmt::Display for SeedSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(p) = &self.admin_password {
            writeln!(f, "created admin user \"admin\" with password {p}")?;
        }
        writeln!(
            f,
            "{} ops: {} applied, {} duplicate, {} rejected",
            self.ops,
            self.applied,
            self.duplicate,
            self.rejected.len()
        )?;
        for r in &self.rejected {
            writeln!(f, "  rejected {r}")?;
        }
        Ok(())
    }
}

/// Creates the bootstrap admin of an empty store under a fixed id and opId.
fn bootstrap_admin(engine: &mut Engine) -> Result<(EntityId, String), CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    rng.set_stream(u64::MAX);
    let id = next_id(&mut rng);
    let op_id = next_id(&mut rng);
    let password = Alphanumeric.sample_string(&mut rand::thread_rng(), 20);
    let user = User {
        id,
        username: "admin".into(),
        display_name: "Administrator".into(),
        role: Role::Admin,
        password_hash: new_password_record(&password)
            .map_err(|e| CliError::new(e.code(), e.to_string()))?,
        active: true,
    };
    match engine.submit(OpRequest {
        op_id,
        actor: id,
        body: EventBody::UserCreated(user),
    })? {
        OpResult::Rejected(v) => Err(rejected(&v)),
        _ => Ok((id, password)),
    }
}

/// Submits the fixture as the lowest-id active admin. Rejections are
/// reported in the summary, not treated as fatal.
pub fn seed(engine: &mut Engine, size: SeedSize) -> Result<SeedSummary, CliError> {
    let mut summary = SeedSummary::default();
    let actor = match acting_admin(&engine.snapshot().catalog) {
        Some(a) => a,
        None if engine.snapshot().catalog.users.is_empty() => {
            let (id, password) = bootstrap_admin(engine)?;
            summary.admin_password = Some(password);
            id
        }
        None => return Err(CliError::new("NO_ADMIN", "no active admin to act as")),
    };
    for (op_id, body) in fixture(size) {
        summary.ops += 1;
        let kind = body.kind();
        match engine.submit(OpRequest { op_id, actor, body })? {
            OpResult::Applied { .. } => summary.applied += 1,
            OpResult::Duplicate { .. } => summary.duplicate += 1,
            OpResult::Rejected(v) => summary.rejected.push(format!("{op_id} {kind:?}: {v}")),
        }
    }
    engine.checkpoint()?;
    Ok(summary)
}
