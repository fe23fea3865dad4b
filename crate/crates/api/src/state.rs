use std::sync::{Arc, Mutex, RwLock};

use ims_core::auth::IdentityProvider;
use ims_core::geoloc::DEFAULT_RADIUS_M;
use ims_core::store::{LogRead, StoreError};
use ims_core::time::{Clock, Timestamp};
use ims_core::{Engine, OpRequest, OpResult, Snapshot};

use crate::error::ApiError;

#[derive(Debug, Clone)]
pub struct ApiConfig {
    pub nearest_radius_m: f64,
    /// Allowed browser origins; `*` allows any. Empty disables CORS headers.
    pub cors_origins: Vec<String>,
}

impl Default for ApiConfig {
    fn default() -> Self {
        Self {
            nearest_radius_m: DEFAULT_RADIUS_M,
            cors_origins: Vec::new(),
        }
    }
}

struct Shared {
    engine: Mutex<Engine>,
    // Published after every commit; readers never wait on the writer.
    current: RwLock<Arc<Snapshot>>,
    reader: Arc<dyn LogRead>,
    identity: Arc<dyn IdentityProvider>,
    clock: Arc<dyn Clock>,
    config: ApiConfig,
}

/// Handle shared by all request handlers.
#[derive(Clone)]
pub struct AppState {
    shared: Arc<Shared>,
}

impl AppState {
    pub fn new(engine: Engine, identity: Arc<dyn IdentityProvider>, config: ApiConfig) -> Self {
        let current = RwLock::new(engine.snapshot());
        let reader = engine.reader();
        let clock = Arc::clone(engine.clock());
        Self {
            shared: Arc::new(Shared {
                engine: Mutex::new(engine),
                current,
                reader,
                identity,
                clock,
                config,
            }),
        }
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        Arc::clone(&self.shared.current.read().unwrap())
    }

    pub fn reader(&self) -> &Arc<dyn LogRead> {
        &self.shared.reader
    }

    pub fn identity(&self) -> &dyn IdentityProvider {
        self.shared.identity.as_ref()
    }

    pub fn config(&self) -> &ApiConfig {
        &self.shared.config
    }

    pub fn now(&self) -> Timestamp {
        self.shared.clock.now()
    }

    /// Runs `f` with exclusive access to the engine off the async workers,
    /// then publishes the resulting snapshot.
    pub async fn write<T, F>(&self, f: F) -> Result<T, ApiError>
    where
        T: Send + 'static,
        F: FnOnce(&mut Engine) -> Result<T, ApiError> + Send + 'static,
    {
        let state = self.clone();
        tokio::task::spawn_blocking(move || {
            let mut engine = state.shared.engine.lock().unwrap();
            let out = f(&mut engine);
            *state.shared.current.write().unwrap() = engine.snapshot();
            out
        })
        .await
        .map_err(|e| ApiError::internal(format!("writer task failed: {e}")))?
    }

    pub async fn submit(&self, req: OpRequest) -> Result<OpResult, ApiError> {
        self.write(move |engine| Ok(engine.submit(req)?)).await
    }

    /// Persists a snapshot of the current state; used on shutdown.
    pub fn checkpoint(&self) -> Result<(), StoreError> {
        self.shared.engine.lock().unwrap().checkpoint()
    }
}
