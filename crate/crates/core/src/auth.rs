//! Password records, HMAC-signed bearer tokens and the role permission matrix.
//!
//! Token wire form: `base64url(claims-json) "." base64url(hmac-sha256(claims-json))`,
//! both parts unpadded.

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine as _;
use hmac::{Hmac, Mac};
use rand::RngCore;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::Sha256;
use subtle::ConstantTimeEq;
use thiserror::Error;

use crate::domain::{Catalog, EntityId, Role, User, Versioned};
use crate::time::Timestamp;

pub const MIN_ITERATIONS: u32 = 100_000;
pub const DEFAULT_ITERATIONS: u32 = 120_000;
pub const MIN_PASSWORD_LEN: usize = 8;
pub const MAX_PASSWORD_LEN: usize = 128;
pub const DEFAULT_TOKEN_TTL_SECONDS: i64 = 8 * 60 * 60;

type HmacSha256 = Hmac<Sha256>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AuthError {
    #[error("password must be at least {MIN_PASSWORD_LEN} characters")]
    WeakPassword,
    #[error("password must be at most {MAX_PASSWORD_LEN} characters")]
    PasswordTooLong,
    #[error("unknown user or wrong password")]
    BadCredentials,
    #[error("token signature does not verify")]
    InvalidSignature,
    #[error("token has expired")]
    Expired,
    #[error("malformed token: {0}")]
    Malformed(String),
}

impl AuthError {
    pub fn code(&self) -> &'static str {
        match self {
            AuthError::WeakPassword => "WEAK_PASSWORD",
            AuthError::PasswordTooLong => "PASSWORD_TOO_LONG",
            AuthError::BadCredentials => "BAD_CREDENTIALS",
            AuthError::InvalidSignature => "INVALID_SIGNATURE",
            AuthError::Expired => "EXPIRED",
            AuthError::Malformed(_) => "MALFORMED",
        }
    }
}

/// Salted PBKDF2-HMAC-SHA256 password hash.
#[derive(Clone, PartialEq, Eq)]
pub struct PasswordRecord {
    pub salt: [u8; 16],
    pub iterations: u32,
    pub hash: [u8; 32],
}

impl std::fmt::Debug for PasswordRecord {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PasswordRecord")
            .field("iterations", &self.iterations)
            .finish_non_exhaustive()
    }
}

#[derive(Serialize, Deserialize)]
struct PasswordRecordJson {
    salt: String,
    iterations: u32,
    hash: String,
}

impl Serialize for PasswordRecord {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        PasswordRecordJson {
            salt: hex::encode(self.salt),
            iterations: self.iterations,
            hash: hex::encode(self.hash),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for PasswordRecord {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let raw = PasswordRecordJson::deserialize(deserializer)?;
        let mut salt = [0u8; 16];
        let mut hash = [0u8; 32];
        hex::decode_to_slice(&raw.salt, &mut salt).map_err(D::Error::custom)?;
        hex::decode_to_slice(&raw.hash, &mut hash).map_err(D::Error::custom)?;
        Ok(Self {
            salt,
            iterations: raw.iterations,
            hash,
        })
    }
}

impl PasswordRecord {
    /// Constant-time check of `plain` against the stored hash.
    pub fn verify(&self, plain: &str) -> bool {
        let mut out = [0u8; 32];
        pbkdf2::pbkdf2_hmac::<Sha256>(plain.as_bytes(), &self.salt, self.iterations, &mut out);
        out.ct_eq(&self.hash).into()
    }
}

fn check_password_policy(plain: &str) -> Result<(), AuthError> {
    let n = plain.chars().count();
    if n < MIN_PASSWORD_LEN {
        Err(AuthError::WeakPassword)
    } else if n > MAX_PASSWORD_LEN {
        Err(AuthError::PasswordTooLong)
    } else {
        Ok(())
    }
}

pub fn derive_password(
    plain: &str,
    salt: [u8; 16],
    iterations: u32,
) -> Result<PasswordRecord, AuthError> {
    check_password_policy(plain)?;
    let mut hash = [0u8; 32];
    pbkdf2::pbkdf2_hmac::<Sha256>(plain.as_bytes(), &salt, iterations.max(1), &mut hash);
    Ok(PasswordRecord {
        salt,
        iterations: iterations.max(1),
        hash,
    })
}

/// Derives a record with a fresh random salt and the default iteration count.
pub fn new_password_record(plain: &str) -> Result<PasswordRecord, AuthError> {
    let mut salt = [0u8; 16];
    rand::thread_rng().fill_bytes(&mut salt);
    derive_password(plain, salt, DEFAULT_ITERATIONS)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Action {
    ReadCatalog,
    ReadStock,
    MoveStock,
    AdjustStock,
    WriteCatalog,
    ManageUsers,
    ReadEvents,
}

impl Action {
    pub const ALL: [Action; 7] = [
        Action::ReadCatalog,
        Action::ReadStock,
        Action::MoveStock,
        Action::AdjustStock,
        Action::WriteCatalog,
        Action::ManageUsers,
        Action::ReadEvents,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Allow,
    Deny,
}

impl Role {
    pub fn allows(self, action: Action) -> bool {
        match self {
            Role::Admin => true,
            Role::Employee => matches!(
                action,
                Action::ReadCatalog | Action::ReadStock | Action::MoveStock | Action::ReadEvents
            ),
        }
    }
}

pub fn authorize(claims: &TokenClaims, action: Action) -> Decision {
    if claims.role.allows(action) {
        Decision::Allow
    } else {
        Decision::Deny
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenClaims {
    pub sub: EntityId,
    pub role: Role,
    pub iat: i64,
    pub exp: i64,
}

/// Issues and checks tokens with a shared HMAC secret.
#[derive(Clone)]
pub struct TokenSigner {
    secret: Vec<u8>,
    ttl_seconds: i64,
}

impl TokenSigner {
    pub fn new(secret: impl Into<Vec<u8>>, ttl_seconds: i64) -> Self {
        Self {
            secret: secret.into(),
            ttl_seconds: ttl_seconds.max(1),
        }
    }

    pub fn ttl_seconds(&self) -> i64 {
        self.ttl_seconds
    }

    fn mac(&self) -> HmacSha256 {
        HmacSha256::new_from_slice(&self.secret).expect("HMAC accepts keys of any length")
    }

    pub fn issue(&self, user: &User, now: Timestamp) -> (String, TokenClaims) {
        let claims = TokenClaims {
            sub: user.id,
            role: user.role,
            iat: now.unix(),
            exp: now.unix() + self.ttl_seconds,
        };
        (self.sign(&claims), claims)
    }

    pub fn sign(&self, claims: &TokenClaims) -> String {
        let json = serde_json::to_vec(claims).expect("claims serialize");
        let mut mac = self.mac();
        mac.update(&json);
        let sig = mac.finalize().into_bytes();
        format!("{}.{}", URL_SAFE_NO_PAD.encode(&json), URL_SAFE_NO_PAD.encode(sig))
    }

    pub fn verify(&self, token: &str, now: Timestamp) -> Result<TokenClaims, AuthError> {
        let (payload_b64, sig_b64) = token
            .split_once('.')
            .ok_or_else(|| AuthError::Malformed("missing separator".into()))?;
        if sig_b64.contains('.') {
            return Err(AuthError::Malformed("too many separators".into()));
        }
        let payload = URL_SAFE_NO_PAD
            .decode(payload_b64)
            .map_err(|e| AuthError::Malformed(e.to_string()))?;
        let sig = URL_SAFE_NO_PAD
            .decode(sig_b64)
            .map_err(|e| AuthError::Malformed(e.to_string()))?;
        let mut mac = self.mac();
        mac.update(&payload);
        mac.verify_slice(&sig)
            .map_err(|_| AuthError::InvalidSignature)?;
        let claims: TokenClaims =
            serde_json::from_slice(&payload).map_err(|e| AuthError::Malformed(e.to_string()))?;
        if claims.exp <= claims.iat {
            return Err(AuthError::Malformed("exp must be after iat".into()));
        }
        if now.unix() >= claims.exp {
            return Err(AuthError::Expired);
        }
        Ok(claims)
    }
}

/// Source of credentials and tokens. The local implementation signs its own
/// tokens; a hosted provider can sit behind the same interface.
pub trait IdentityProvider: Send + Sync {
    fn login(
        &self,
        catalog: &Catalog,
        username: &str,
        password: &str,
        now: Timestamp,
    ) -> Result<(String, Versioned<User>), AuthError>;

    fn verify_token(&self, token: &str, now: Timestamp) -> Result<TokenClaims, AuthError>;
}

pub struct LocalIdentityProvider {
    signer: TokenSigner,
    // Verified against when the username is unknown so both paths cost the same.
    decoy: PasswordRecord,
}

impl LocalIdentityProvider {
    pub fn new(signer: TokenSigner) -> Self {
        let decoy = derive_password("decoy-password", [0x5a; 16], DEFAULT_ITERATIONS)
            .expect("decoy satisfies policy");
        Self { signer, decoy }
    }

    pub fn signer(&self) -> &TokenSigner {
        &self.signer
    }
}

impl IdentityProvider for LocalIdentityProvider {
    fn login(
        &self,
        catalog: &Catalog,
        username: &str,
        password: &str,
        now: Timestamp,
    ) -> Result<(String, Versioned<User>), AuthError> {
        let Some(user) = catalog.user_by_username(username) else {
            let _ = self.decoy.verify(password);
            return Err(AuthError::BadCredentials);
        };
        let matches = user.password_hash.verify(password);
        if !matches || !user.active {
            return Err(AuthError::BadCredentials);
        }
        let (token, _) = self.signer.issue(user, now);
        Ok((token, user.clone()))
    }

    fn verify_token(&self, token: &str, now: Timestamp) -> Result<TokenClaims, AuthError> {
        self.signer.verify(token, now)
    }
}
