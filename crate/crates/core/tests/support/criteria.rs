//! End-to-end property scenarios with their independent oracles.
//!
//! Each function panics with a diagnostic on the first violation and returns
//! a one-line summary of what it checked. The integration tests and the
//! acceptance binary both call these, so there is a single definition of
//! every scenario.

use std::collections::HashSet;
use std::fs::OpenOptions;
use std::io::{self, Write};
use std::path::Path;
use std::sync::Arc;

use ims_core::codec::{
    decode_payload, ean13_check_digit, ean13_validate, encode_payload, Ean13, LabelOpKind,
    QrPayload,
};
use ims_core::domain::Warehouse;
use ims_core::engine::{
    replay, stock_levels, EngineError, EventBody, OpResult, Transfer, Violation, ViolationCode,
};
use ims_core::geoloc::{haversine_km, nearest_warehouse, GeoPoint, DEFAULT_RADIUS_M, EARTH_RADIUS_KM};
use ims_core::store::{
    read_log_file, Durability, EventStore, FileStore, LogRead, StoreError, EVENTS_FILE,
};
use ims_core::sync::{pull, push, ClientReplica, OpEnvelope, PushBatch};
use ims_core::time::ManualClock;
use ims_core::{Engine, EntityId, OpRequest, Snapshot, StockEvent};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{random_id, StockModel, World, T0};

// ---- EAN-13 -------------------------------------------------------------

/// Brute force: the check digit is the unique d that makes the full 13-digit
/// weighted sum a multiple of ten.
pub fn oracle_check_digit(prefix: &[u8; 12]) -> u8 {
    (0..10u8)
        .find(|&d| {
            let sum: u32 = prefix
                .iter()
                .chain(std::iter::once(&d))
                .enumerate()
                .map(|(k, &x)| x as u32 * if k % 2 == 0 { 1 } else { 3 })
                .sum();
            sum % 10 == 0
        })
        .unwrap()
}

pub fn ean13_against_brute_force(prefixes: usize) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..prefixes {
        let digits: [u8; 12] = std::array::from_fn(|_| rng.gen_range(0..10));
        let prefix: String = digits.iter().map(|d| char::from(b'0' + d)).collect();
        let expected = oracle_check_digit(&digits);
        assert_eq!(ean13_check_digit(&prefix).unwrap(), expected, "{prefix}");
        let full = format!("{prefix}{expected}");
        assert!(ean13_validate(&full).is_ok(), "{full}");
        assert_eq!(Ean13::from_prefix(&prefix).unwrap().as_str(), full);
    }

    let code = "4006381333931";
    assert!(ean13_validate(code).is_ok());
    let mut rejected = 0;
    for pos in 0..13 {
        let mut b = code.as_bytes().to_vec();
        b[pos] = b'0' + (b[pos] - b'0' + 1) % 10;
        let mutated = String::from_utf8(b).unwrap();
        assert_eq!(
            ean13_validate(&mutated).unwrap_err().code(),
            "BAD_CHECK_DIGIT",
            "{mutated}"
        );
        rejected += 1;
    }
    assert_eq!(rejected, 13);
    format!("{prefixes} prefixes match the brute-force oracle; {rejected}/13 mutations of {code} rejected")
}

// ---- label codec --------------------------------------------------------

fn entity_id() -> impl Strategy<Value = EntityId> {
    any::<[u8; 16]>().prop_map(EntityId::from_random_bytes)
}

pub fn payload() -> impl Strategy<Value = QrPayload> {
    prop_oneof![
        entity_id().prop_map(|item_id| QrPayload::ItemLabel { item_id }),
        (
            prop_oneof![Just(LabelOpKind::Receive), Just(LabelOpKind::Issue)],
            entity_id(),
            entity_id(),
            prop_oneof![1u64..100, 1u64..=u64::MAX],
        )
            .prop_map(|(kind, warehouse_id, item_id, quantity)| {
                QrPayload::StockOpLabel {
                    kind,
                    warehouse_id,
                    item_id,
                    quantity,
                }
            }),
    ]
}

/// Strings close to the grammar: valid payloads with one field perturbed.
pub fn near_miss() -> impl Strategy<Value = String> {
    (payload(), any::<u8>(), "[ -~]{0,6}").prop_map(|(p, which, junk)| {
        let text = encode_payload(&p).unwrap();
        let mut fields: Vec<String> = text.split(';').map(str::to_owned).collect();
        let k = which as usize % (fields.len() + 1);
        match which % 4 {
            0 if k < fields.len() => fields[k] = fields[k].to_uppercase(),
            1 if k < fields.len() => fields[k] = format!("0{}", fields[k]),
            2 if k < fields.len() => fields[k].push_str(&junk),
            _ => fields.push(junk),
        }
        fields.join(";")
    })
}

fn runner(cases: u32) -> TestRunner {
    TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    })
}

fn check<T: std::fmt::Debug>(
    name: &str,
    cases: u32,
    strategy: impl Strategy<Value = T>,
    test: impl Fn(T) -> Result<(), TestCaseError>,
) {
    if let Err(e) = runner(cases).run(&strategy, test) {
        panic!("{name}: {e}");
    }
}

pub fn codec_properties(cases: u32) -> String {
    check("round trip", cases, payload(), |p| {
        let text = encode_payload(&p).unwrap();
        prop_assert_eq!(decode_payload(&text).unwrap(), p);
        Ok(())
    });
    check("canonicity", cases, near_miss(), |s| {
        if let Ok(p) = decode_payload(&s) {
            prop_assert_eq!(encode_payload(&p).unwrap(), s);
        }
        Ok(())
    });
    check(
        "byte fuzz",
        cases,
        proptest::collection::vec(any::<u8>(), 0..96),
        |bytes| {
            let text = String::from_utf8_lossy(&bytes);
            if let Ok(p) = decode_payload(&text) {
                prop_assert_eq!(encode_payload(&p).unwrap(), text.as_ref());
            }
            let _ = ean13_validate(&text);
            Ok(())
        },
    );
    format!("{cases} cases each: round trip, near-miss canonicity, random-byte fuzz")
}

// ---- geolocation --------------------------------------------------------

/// Great-circle distance from the chord between unit vectors; a different
/// route to the same quantity as the haversine form.
pub fn chord_distance_m(a: GeoPoint, b: GeoPoint) -> f64 {
    let v = |p: GeoPoint| {
        let (lat, lon) = (p.latitude_deg.to_radians(), p.longitude_deg.to_radians());
        [lat.cos() * lon.cos(), lat.cos() * lon.sin(), lat.sin()]
    };
    let (u, w) = (v(a), v(b));
    let c = ((u[0] - w[0]).powi(2) + (u[1] - w[1]).powi(2) + (u[2] - w[2]).powi(2)).sqrt();
    2.0 * EARTH_RADIUS_KM * 1000.0 * (c / 2.0).min(1.0).asin()
}

fn linear_scan(user: GeoPoint, ws: &[Warehouse], radius_m: f64) -> Option<(EntityId, f64)> {
    let mut hits: Vec<(f64, EntityId)> = ws
        .iter()
        .map(|w| (chord_distance_m(user, w.location), w.id))
        .filter(|(d, _)| *d <= radius_m)
        .collect();
    hits.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    hits.first().map(|&(d, id)| (id, d))
}

pub fn haversine_references() -> String {
    let p = |a, b| GeoPoint::new(a, b).unwrap();
    let same = haversine_km(p(12.5, -7.25), p(12.5, -7.25)).unwrap();
    let degree = haversine_km(p(0.0, 0.0), p(0.0, 1.0)).unwrap();
    let poles = haversine_km(p(90.0, 0.0), p(-90.0, 0.0)).unwrap();
    assert_eq!(same, 0.0);
    assert!((degree - 111.1951).abs() <= 0.001, "{degree}");
    assert!((poles - 20015.1147).abs() <= 0.001, "{poles}");
    format!("identity {same}, one degree {degree:.4} km, poles {poles:.4} km")
}

pub fn nearest_against_linear_scan(instances: usize) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut found = 0;
    for _ in 0..instances {
        let user = GeoPoint::new(rng.gen_range(-80.0..80.0), rng.gen_range(-179.0..179.0)).unwrap();
        let n = rng.gen_range(0..12);
        let ws: Vec<Warehouse> = (0..n)
            .map(|k| {
                // Mostly within a few hundred meters; sometimes an exact duplicate position.
                let (dlat, dlon) = if rng.gen_bool(0.1) {
                    (0.0, 0.0)
                } else {
                    (rng.gen_range(-0.008..0.008), rng.gen_range(-0.008..0.008))
                };
                Warehouse {
                    id: EntityId::from_random_bytes(rng.gen()),
                    name: format!("W{k}"),
                    location: GeoPoint::new(user.latitude_deg + dlat, user.longitude_deg + dlon)
                        .unwrap(),
                    address: String::new(),
                }
            })
            .collect();
        let radius = if rng.gen_bool(0.5) {
            DEFAULT_RADIUS_M
        } else {
            rng.gen_range(1.0..2000.0)
        };
        let got = nearest_warehouse(user, &ws, radius).unwrap();
        let want = linear_scan(user, &ws, radius);
        match (got, want) {
            (None, None) => {}
            (Some(g), Some((id, d))) => {
                assert!((g.distance_m - d).abs() < 1e-6, "{} vs {d}", g.distance_m);
                if g.warehouse_id != id {
                    // Only a floating-point near tie may order differently.
                    let other = ws.iter().find(|w| w.id == g.warehouse_id).unwrap();
                    assert!((chord_distance_m(user, other.location) - d).abs() < 1e-6);
                }
                found += 1;
            }
            (g, w) => {
                // Disagreement is only acceptable right on the radius boundary.
                let d = g.map(|g| g.distance_m).or(w.map(|w| w.1)).unwrap();
                assert!((d - radius).abs() < 1e-6, "{g:?} vs {w:?}");
            }
        }
    }
    assert!(found > instances / 4, "too few hits: {found}");
    format!("{instances} instances agree with the chord-distance scan ({found} with a hit)")
}

// ---- determinism and recovery ------------------------------------------

pub fn replay_equals_live(accepted: usize) -> String {
    let world = World::new(4, 12);
    let (mut engine, store) = world.setup_engine();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut n = 0;
    while n < accepted {
        let req = world.random_request(&mut rng, &engine.snapshot());
        if let OpResult::Applied { .. } = engine.submit(req).unwrap() {
            n += 1;
        }
    }
    let log: Vec<StockEvent> = store.iterate_events(1).unwrap();
    assert_eq!(log.len() as u64, engine.last_seq());
    let replayed = replay(&log).unwrap().to_canonical_json();
    assert_eq!(replayed, engine.snapshot().to_canonical_json());
    format!("{n} accepted ops; replay is byte-identical ({} bytes)", replayed.len())
}

/// File store that dies on its n-th append, leaving half a line on disk and,
/// optionally, a staged snapshot that never got renamed into place.
pub struct CrashingStore {
    pub inner: FileStore,
    pub appends_left: usize,
    pub stage_snapshot_on_crash: bool,
}

impl EventStore for CrashingStore {
    fn reader(&self) -> Arc<dyn LogRead> {
        self.inner.reader()
    }

    fn append_event(&mut self, e: &StockEvent) -> Result<(), StoreError> {
        if self.appends_left == 0 {
            let line = serde_json::to_vec(e).unwrap();
            let path = self.inner.dir().join(EVENTS_FILE);
            let mut f = OpenOptions::new().append(true).open(path)?;
            f.write_all(&line[..line.len() / 2])?;
            if self.stage_snapshot_on_crash {
                let mut bogus = Snapshot::empty();
                bogus.seq = e.seq;
                let _never_published = self.inner.stage_snapshot(&bogus)?;
            }
            return Err(io::Error::other("simulated crash").into());
        }
        self.appends_left -= 1;
        self.inner.append_event(e)
    }

    fn load_snapshot(&self) -> Result<Option<Snapshot>, StoreError> {
        self.inner.load_snapshot()
    }

    fn write_snapshot(&mut self, s: &Snapshot) -> Result<(), StoreError> {
        self.inner.write_snapshot(s)
    }

    fn append_rejection(&mut self, op_id: EntityId, v: &Violation) -> Result<(), StoreError> {
        self.inner.append_rejection(op_id, v)
    }

    fn load_rejections(&self) -> Result<Vec<(EntityId, Violation)>, StoreError> {
        self.inner.load_rejections()
    }
}

pub fn open_engine(store: Box<dyn EventStore>) -> Engine {
    let mut e = Engine::open(store, Arc::new(ManualClock::new(T0))).unwrap();
    e.set_snapshot_every(50);
    e
}

/// Runs a seeded workload until the store crashes after `crash_after` appends.
/// Returns the live snapshot as it stood just before the crash.
fn run_until_crash(dir: &Path, crash_after: usize, stage: bool) -> Snapshot {
    let world = World::new(3, 6);
    let store = CrashingStore {
        inner: FileStore::open_with(dir, Durability::Buffered).unwrap(),
        appends_left: crash_after,
        stage_snapshot_on_crash: stage,
    };
    let mut engine = open_engine(Box::new(store));
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut requests = world.setup().into_iter();
    loop {
        let req = requests
            .next()
            .unwrap_or_else(|| world.random_request(&mut rng, &engine.snapshot()));
        match engine.submit(req) {
            Ok(_) => {}
            Err(EngineError::Storage(_)) => return (*engine.snapshot()).clone(),
        }
    }
}

/// Crash positions straddle the periodic snapshot boundary (every 50 events).
pub fn crash_recovery(points: usize) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut at: Vec<usize> = vec![0, 1, 2, 10, 49, 50, 51, 99, 100, 101];
    at.truncate(points);
    while at.len() < points {
        at.push(rng.gen_range(0..400));
    }
    for (k, &p) in at.iter().enumerate() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path();
        let live = run_until_crash(dir, p, k % 2 == 0);
        assert_eq!(live.seq, p as u64);

        let (events, scan) = read_log_file(&dir.join(EVENTS_FILE)).unwrap();
        assert_eq!(events.len(), p);
        assert!(scan.torn_bytes > 0);
        let replayed = replay(&events).unwrap();

        let store = FileStore::open(dir).unwrap();
        let mut engine = open_engine(Box::new(store));
        let booted = engine.snapshot();
        assert_eq!(booted.to_canonical_json(), live.to_canonical_json(), "crash at {p}");
        assert_eq!(booted.to_canonical_json(), replayed.to_canonical_json(), "crash at {p}");

        // The log is usable again: the torn tail is gone.
        engine.checkpoint().unwrap();
        let (_, scan) = read_log_file(&dir.join(EVENTS_FILE)).unwrap();
        assert_eq!(scan.torn_bytes, 0);
    }
    format!("{points} crash points; boot == live == replay at each")
}

// ---- stock rules --------------------------------------------------------

/// Quantities track an independent signed model; underflows are rejected
/// without touching state and transfers conserve the item total.
pub fn non_negativity(runs: u32, ops_per_run: usize) -> String {
    let underflows = std::cell::Cell::new(0usize);
    check("non-negativity", runs, any::<u64>(), |seed| {
        let world = World::new(3, 4);
        let (mut engine, _) = world.setup_engine();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model = StockModel::default();
        for _ in 0..ops_per_run {
            let body = world.random_movement(&mut rng);
            let before = engine.snapshot();
            let predicted = model.predict(&body);
            let result = engine
                .submit(OpRequest {
                    op_id: random_id(&mut rng),
                    actor: world.admin,
                    body: body.clone(),
                })
                .unwrap();
            let after = engine.snapshot();
            match predicted {
                Some(changes) => {
                    prop_assert!(
                        matches!(result, OpResult::Applied { .. }),
                        "expected APPLIED, got {:?}",
                        result
                    );
                    if let EventBody::Transfer(Transfer { item_id, .. }) = body {
                        prop_assert_eq!(before.total_quantity(item_id), after.total_quantity(item_id));
                    }
                    model.commit(changes);
                }
                None => {
                    match result {
                        OpResult::Rejected(v) => {
                            prop_assert_eq!(v.code, ViolationCode::RejectedNegative)
                        }
                        other => prop_assert!(false, "expected rejection, got {:?}", other),
                    }
                    prop_assert_eq!(&*before, &*after);
                    underflows.set(underflows.get() + 1);
                }
            }
            for l in stock_levels(&after, None, None) {
                prop_assert!(l.quantity > 0);
                prop_assert_eq!(l.quantity as i128, model.get(l.warehouse_id, l.item_id));
            }
            let positive = model.qty.values().filter(|q| **q > 0).count();
            prop_assert_eq!(positive, stock_levels(&after, None, None).len());
        }
        Ok(())
    });
    format!(
        "{} movement ops in {runs} runs; {} underflows rejected with state unchanged",
        runs as usize * ops_per_run,
        underflows.get()
    )
}

// ---- sync ---------------------------------------------------------------

pub fn repush_is_all_duplicates(session: usize) -> String {
    let world = World::new(3, 8);
    let (mut engine, _) = world.setup_engine();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut model = StockModel::default();
    // Only ops the model predicts will apply, so the first pass is all APPLIED.
    let mut ops = Vec::new();
    while ops.len() < session {
        let body = world.random_movement(&mut rng);
        if let Some(changes) = model.predict(&body) {
            model.commit(changes);
            ops.push(OpEnvelope {
                op_id: random_id(&mut rng),
                body,
            });
        }
    }
    let batches: Vec<PushBatch> = ops
        .chunks(37)
        .map(|c| PushBatch::new(world.admin, c))
        .collect();
    for b in &batches {
        let out = push(&mut engine, b, world.admin).unwrap();
        assert!(out.results.iter().all(|r| matches!(r, OpResult::Applied { .. })));
    }
    let before = engine.snapshot().to_canonical_json();
    let cursor = engine.last_seq();
    let mut duplicates = 0;
    for b in &batches {
        let out = push(&mut engine, b, world.admin).unwrap();
        for r in &out.results {
            assert!(matches!(r, OpResult::Duplicate { .. }), "{r:?}");
            duplicates += 1;
        }
        assert_eq!(out.cursor, cursor);
    }
    assert_eq!(engine.snapshot().to_canonical_json(), before);
    format!("{duplicates}/{session} re-pushed ops DUPLICATE in {} batches; snapshot unchanged", batches.len())
}

struct Client {
    user: EntityId,
    replica: ClientReplica,
    pending: Vec<OpEnvelope>,
}

impl Client {
    fn sync_pull<R: Rng>(&mut self, engine: &Engine, rng: &mut R, lossy: bool) {
        let reader = engine.reader();
        loop {
            let page = pull(reader.as_ref(), self.replica.cursor, rng.gen_range(1..=64)).unwrap();
            if lossy && rng.gen_bool(0.2) {
                return;
            }
            self.replica.merge(&page).unwrap();
            if lossy && rng.gen_bool(0.2) {
                // Late duplicate of a page already merged: rejected, state kept.
                let before = self.replica.clone();
                if !page.events.is_empty() {
                    assert_eq!(self.replica.merge(&page).unwrap_err().code(), "GAP_DETECTED");
                }
                assert_eq!(before, self.replica);
            }
            if !page.has_more {
                return;
            }
        }
    }

    fn sync_push<R: Rng>(&mut self, engine: &mut Engine, rng: &mut R, lossy: bool) {
        if self.pending.is_empty() {
            return;
        }
        let n = rng.gen_range(1..=self.pending.len().min(40));
        let batch = PushBatch::new(self.user, &self.pending[..n]);
        if lossy && rng.gen_bool(0.15) {
            return; // request lost
        }
        let deliveries = if lossy && rng.gen_bool(0.25) { 2 } else { 1 };
        let mut outcome = None;
        for _ in 0..deliveries {
            outcome = Some(push(engine, &batch, self.user).unwrap());
        }
        if lossy && rng.gen_bool(0.15) {
            return; // response lost; the ops stay queued and get re-sent
        }
        let outcome = outcome.unwrap();
        assert_eq!(outcome.results.len(), n);
        self.pending.drain(..n);
    }
}

fn convergence_trial(seed: u64, queue: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let world = World::new(3, 5);
    let (mut engine, _) = world.setup_engine();
    let base = engine.last_seq();
    let mut clients: Vec<Client> = [world.admin, world.employee]
        .into_iter()
        .map(|user| Client {
            user,
            replica: ClientReplica::new(),
            pending: Vec::new(),
        })
        .collect();
    for c in &mut clients {
        c.sync_pull(&engine, &mut rng, false);
        let snap = c.replica.state.clone();
        c.pending = (0..queue)
            .map(|_| {
                let r = world.random_request(&mut rng, &snap);
                OpEnvelope {
                    op_id: r.op_id,
                    body: r.body,
                }
            })
            .collect();
    }
    let all_ops: Vec<EntityId> = clients
        .iter()
        .flat_map(|c| c.pending.iter().map(|o| o.op_id))
        .collect();

    while clients.iter().any(|c| !c.pending.is_empty()) {
        let k = rng.gen_range(0..clients.len());
        if rng.gen_bool(0.6) {
            clients[k].sync_push(&mut engine, &mut rng, true);
        } else {
            clients[k].sync_pull(&engine, &mut rng, true);
        }
    }
    for c in &mut clients {
        c.sync_pull(&engine, &mut rng, false);
    }

    let server = engine.snapshot().to_canonical_json();
    for c in &clients {
        assert_eq!(c.replica.cursor, engine.last_seq());
        assert_eq!(c.replica.state.to_canonical_json(), server, "seed {seed}");
    }
    assert_eq!(
        clients[0].replica.to_canonical_json(),
        clients[1].replica.to_canonical_json()
    );

    // Every queued op was decided exactly once, whatever the channel did.
    let log = engine.reader().read_from(base + 1, usize::MAX).unwrap();
    let logged: HashSet<EntityId> = log.iter().map(|e| e.op_id).collect();
    assert_eq!(logged.len(), log.len());
    for op in &all_ops {
        match engine.recorded(op).expect("every op has a recorded result") {
            OpResult::Duplicate { .. } => assert!(logged.contains(op)),
            OpResult::Rejected(_) => assert!(!logged.contains(op)),
            OpResult::Applied { .. } => unreachable!(),
        }
    }
}

pub fn convergence(trials: u64, queue: usize) -> String {
    for seed in 0..trials {
        convergence_trial(seed, queue);
    }
    format!("{trials} trials, 2 clients x {queue} ops over a lossy duplicating channel; replicas == server")
}
