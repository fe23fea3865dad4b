//! `ims` operator tool.
//!
//! Every subcommand owns the data directory exclusively while it runs; a
//! running `serve` makes the others fail with `DATA_DIR_LOCKED`.

mod ops;
mod seed;
mod serve;

use std::io::{self, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ims_core::codec::LabelOpKind;
use ims_core::domain::Role;
use ims_core::engine::EngineError;
use ims_core::store::{DataDirLock, FileStore, StoreError};
use ims_core::time::SystemClock;
use ims_core::Engine;

pub use ops::{label, user_add, user_list, verify_log, VerifyReport};
pub use seed::{fixture as seed_fixture, seed, SeedSize, SeedSummary};
pub use serve::{load_secret, serve, ServeConfig};

/// A modeled failure: printed as `CODE: message`, exit status 1.
#[derive(Debug, thiserror::Error)]
#[error("{code}: {message}")]
pub struct CliError {
    pub code: String,
    pub message: String,
}

impl CliError {
    pub fn new(code: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            code: code.into(),
            message: message.into(),
        }
    }
}

impl From<StoreError> for CliError {
    fn from(e: StoreError) -> Self {
        Self::new(e.code(), e.to_string())
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Storage(s) => s.into(),
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        Self::new("IO_FAILURE", e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "ims", version, about = "Inventory service operator tool")]
pub struct Cli {
    /// Directory holding events.log, snapshot.json and the lock file.
    #[arg(long, env = "IMS_DATA_DIR", default_value = "data", global = true)]
    pub data_dir: PathBuf,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the HTTP service until SIGTERM or Ctrl-C.
    Serve(ServeArgs),
    /// Manage users directly in the store.
    #[command(subcommand)]
    User(UserCommand),
    /// Load a deterministic demo fixture; re-running changes nothing.
    Seed {
        /// Fixture size; `seed small` and `seed --size small` are equivalent.
        #[arg(value_enum, conflicts_with = "size")]
        which: Option<SeedSize>,
        #[arg(long, value_enum, default_value = "demo")]
        size: SeedSize,
    },
    /// Print the label payload for an item (by id or SKU).
    Label {
        item: String,
        /// Emit an operation label instead of an item label.
        #[arg(long, value_enum, requires_all = ["warehouse", "qty"])]
        op: Option<OpArg>,
        /// Warehouse id or name.
        #[arg(long)]
        warehouse: Option<String>,
        #[arg(long)]
        qty: Option<u64>,
    },
    /// Replay the log and compare it with the stored snapshot.
    VerifyLog,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "IMS_LISTEN", default_value = "127.0.0.1:8080")]
    pub listen: SocketAddr,
    /// HMAC secret; created with random content when missing.
    /// Defaults to `<data-dir>/secret.key`.
    #[arg(long, env = "IMS_SECRET_FILE")]
    pub secret_file: Option<PathBuf>,
    #[arg(long, env = "IMS_TOKEN_TTL_SECONDS", default_value_t = ims_core::auth::DEFAULT_TOKEN_TTL_SECONDS)]
    pub token_ttl_seconds: i64,
    #[arg(long, env = "IMS_NEAREST_RADIUS_M", default_value_t = ims_core::geoloc::DEFAULT_RADIUS_M)]
    pub nearest_radius_m: f64,
    /// Allowed browser origin; repeatable, `*` allows any.
    #[arg(long, env = "IMS_CORS_ORIGIN", value_delimiter = ',')]
    pub cors_origin: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum UserCommand {
    /// Create a user; the password is read from stdin.
    Add {
        username: String,
        #[arg(long, value_enum)]
        role: RoleArg,
        #[arg(long, default_value = "")]
        display_name: String,
    },
    /// List users.
    List,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
#[value(rename_all = "UPPER")]
pub enum RoleArg {
    #[value(alias = "admin")]
    Admin,
    #[value(alias = "employee")]
    Employee,
}

impl From<RoleArg> for Role {
    fn from(r: RoleArg) -> Self {
        match r {
            RoleArg::Admin => Role::Admin,
            RoleArg::Employee => Role::Employee,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
#[value(rename_all = "UPPER")]
pub enum OpArg {
    #[value(alias = "receive")]
    Receive,
    #[value(alias = "issue")]
    Issue,
}

impl From<OpArg> for LabelOpKind {
    fn from(o: OpArg) -> Self {
        match o {
            OpArg::Receive => LabelOpKind::Receive,
            OpArg::Issue => LabelOpKind::Issue,
        }
    }
}

/// A locked, booted data directory.
pub struct DataDir {
    pub engine: Engine,
    _lock: DataDirLock,
}

impl DataDir {
    pub fn open(dir: &Path) -> Result<Self, CliError> {
        let lock = DataDirLock::acquire(dir)?;
        let store = FileStore::open(dir)?;
        let engine = Engine::open(Box::new(store), Arc::new(SystemClock))?;
        Ok(Self {
            engine,
            _lock: lock,
        })
    }
}

/// Runs one parsed command. `input` supplies passwords for `user add`.
pub fn run(cli: Cli, input: &mut dyn io::BufRead, out: &mut dyn Write) -> Result<(), CliError> {
    let dir = cli.data_dir;
    match cli.command {
        Command::Serve(args) => {
            let config = ServeConfig::from_args(&dir, args)?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(serve::serve_until_signal(config, out))
        }
        Command::User(UserCommand::Add {
            username,
            role,
            display_name,
        }) => {
            let password = ops::read_password(input)?;
            let mut data = DataDir::open(&dir)?;
            let user = user_add(&mut data.engine, &username, &display_name, role.into(), &password)?;
            writeln!(out, "created {} {} ({})", user.role, user.username, user.id)?;
            Ok(())
        }
        Command::User(UserCommand::List) => {
            let data = DataDir::open(&dir)?;
            for line in user_list(&data.engine) {
                writeln!(out, "{line}")?;
            }
            Ok(())
        }
        Command::Seed { which, size } => {
            let mut data = DataDir::open(&dir)?;
            let summary = seed(&mut data.engine, which.unwrap_or(size))?;
            write!(out, "{summary}")?;
            Ok(())
        }
        Command::Label {
            item,
            op,
            warehouse,
            qty,
        } => {
            let data = DataDir::open(&dir)?;
            let op = match (op, warehouse, qty) {
                (Some(k), Some(w), Some(q)) => Some((k.into(), w, q)),
                _ => None,
            };
            writeln!(out, "{}", label(&data.engine.snapshot(), &item, op)?)?;
            Ok(())
        }
        Command::VerifyLog => {
            let _lock = DataDirLock::acquire(&dir)?;
            let report = verify_log(&dir)?;
            write!(out, "{report}")?;
            if report.ok() {
                Ok(())
            } else {
                Err(CliError::new("MISMATCH", report.problem.unwrap_or_default()))
            }
        }
    }
}
