use axum::async_trait;
use axum::extract::{FromRequestParts, Query};
use axum::http::header::AUTHORIZATION;
use axum::http::request::Parts;
use axum::http::Uri;
use ims_core::auth::{authorize, Action, AuthError, Decision, TokenClaims};
use serde::de::DeserializeOwned;

use crate::error::ApiError;
use crate::state::AppState;

/// Verified bearer-token claims of the caller.
#[derive(Debug, Clone)]
pub struct Authed(pub TokenClaims);

impl Authed {
    /// 403 unless the caller's role allows `action`.
    pub fn require(&self, action: Action) -> Result<(), ApiError> {
        match authorize(&self.0, action) {
            Decision::Allow => Ok(()),
            Decision::Deny => Err(ApiError::forbidden()),
        }
    }
}

#[async_trait]
impl FromRequestParts<AppState> for Authed {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &AppState) -> Result<Self, ApiError> {
        let malformed = |m: &str| ApiError::from(AuthError::Malformed(m.into()));
        let header = parts
            .headers
            .get(AUTHORIZATION)
            .ok_or_else(|| malformed("missing Authorization header"))?
            .to_str()
            .map_err(|_| malformed("Authorization header is not ASCII"))?;
        let token = header
            .strip_prefix("Bearer ")
            .ok_or_else(|| malformed("expected a Bearer token"))?;
        let claims = state.identity().verify_token(token.trim(), state.now())?;
        Ok(Authed(claims))
    }
}

/// JSON body parsed only after authorization has been checked, so a caller
/// without permission always sees 403 regardless of what they sent.
pub fn parse_body<T: DeserializeOwned>(bytes: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(bytes).map_err(|e| ApiError::malformed_request(e.to_string()))
}

pub fn parse_query<T: DeserializeOwned>(uri: &Uri) -> Result<T, ApiError> {
    Query::<T>::try_from_uri(uri)
        .map(|q| q.0)
        .map_err(|e| ApiError::malformed_request(e.body_text()))
}
