use std::fs::{self, OpenOptions};
use std::future::Future;
use std::io::{self, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use ims_api::{router, ApiConfig, AppState};
use ims_core::auth::{LocalIdentityProvider, TokenSigner};
use rand::RngCore;
use tokio::net::TcpListener;

use crate::{CliError, DataDir, ServeArgs};

pub const SECRET_FILE: &str = "secret.key";
const MIN_SECRET_LEN: usize = 32;

#[derive(Debug, Clone)]
pub struct ServeConfig {
    pub data_dir: PathBuf,
    pub listen: SocketAddr,
    pub secret_file: PathBuf,
    pub token_ttl_seconds: i64,
    pub api: ApiConfig,
}

impl ServeConfig {
    pub fn from_args(data_dir: &Path, args: ServeArgs) -> Result<Self, CliError> {
        if args.token_ttl_seconds <= 0 {
            return Err(CliError::new("BAD_CONFIG", "--token-ttl-seconds must be positive"));
        }
        if !(args.nearest_radius_m.is_finite() && args.nearest_radius_m > 0.0) {
            return Err(CliError::new("BAD_CONFIG", "--nearest-radius-m must be a positive number"));
        }
        Ok(Self {
            data_dir: data_dir.to_path_buf(),
            listen: args.listen,
            secret_file: args
                .secret_file
                .unwrap_or_else(|| data_dir.join(SECRET_FILE)),
            token_ttl_seconds: args.token_ttl_seconds,
            api: ApiConfig {
                nearest_radius_m: args.nearest_radius_m,
                cors_origins: args.cors_origin,
            },
        })
    }
}

/// Reads the token-signing secret, creating a random one (mode 0600) if the
/// file does not exist yet.
pub fn load_secret(path: &Path) -> Result<Vec<u8>, CliError> {
    match fs::read(path) {
        Ok(raw) => {
            let secret = raw.trim_ascii().to_vec();
            if secret.len() < MIN_SECRET_LEN {
                return Err(CliError::new(
                    "WEAK_SECRET",
                    format!("{} holds fewer than {MIN_SECRET_LEN} bytes", path.display()),
                ));
            }
            Ok(secret)
        }
        Err(e) if e.kind() == io::ErrorKind::NotFound => {
            let mut bytes = [0u8; 32];
            rand::thread_rng().fill_bytes(&mut bytes);
            let text = hex::encode(bytes);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent)?;
            }
            let mut opts = OpenOptions::new();
            opts.write(true).create_new(true);
            #[cfg(unix)]
            std::os::unix::fs::OpenOptionsExt::mode(&mut opts, 0o600);
            let mut f = opts.open(path)?;
            writeln!(f, "{text}")?;
            f.sync_all()?;
            log::info!("generated a new token secret in {}", path.display());
            Ok(text.into_bytes())
        }
        Err(e) => Err(e.into()),
    }
}

/// Boots the data directory and serves `listener` until `shutdown` resolves,
/// then writes a snapshot.
pub async fn serve(
    config: ServeConfig,
    listener: TcpListener,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> Result<(), CliError> {
    let data = DataDir::open(&config.data_dir)?;
    run(config, data, listener, shutdown).await
}

async fn run(
    config: ServeConfig,
    data: DataDir,
    listener: TcpListener,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> Result<(), CliError> {
    let secret = load_secret(&config.secret_file)?;
    let DataDir { engine, _lock } = data;
    let identity = Arc::new(LocalIdentityProvider::new(TokenSigner::new(
        secret,
        config.token_ttl_seconds,
    )));
    let state = AppState::new(engine, identity, config.api);
    axum::serve(listener, router(state.clone()))
        .with_graceful_shutdown(shutdown)
        .await?;
    state.checkpoint()?;
    log::info!("snapshot written at seq {}", state.snapshot().seq);
    Ok(())
}

async fn signal() {
    let ctrl_c = async {
        if let Err(e) = tokio::signal::ctrl_c().await {
            log::error!("cannot listen for Ctrl-C: {e}");
            std::future::pending::<()>().await;
        }
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(e) => {
                log::error!("cannot listen for SIGTERM: {e}");
                std::future::pending::<()>().await;
            }
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {}
        _ = term => {}
    }
    log::info!("shutting down");
}

/// Boots first so that a damaged log fails before the port is taken.
pub(crate) async fn serve_until_signal(config: ServeConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let data = DataDir::open(&config.data_dir)?;
    let listener = TcpListener::bind(config.listen).await?;
    writeln!(out, "listening on http://{}", listener.local_addr()?)?;
    out.flush()?;
    run(config, data, listener, signal()).await
}
