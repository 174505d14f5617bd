//! Pass tokens: hex HMAC-SHA-256 over `session_id|timestamp`.

use chrono::{DateTime, SecondsFormat, Utc};
use hmac::{Hmac, KeyInit, Mac};
use sha2::Sha256;

use crate::nonce::SessionId;

type HmacSha256 = Hmac<Sha256>;

fn message(session_id: SessionId, verified_at: DateTime<Utc>) -> String {
    format!(
        "{session_id}|{}",
        verified_at.to_rfc3339_opts(SecondsFormat::Micros, true)
    )
}

fn mac(key: &[u8]) -> HmacSha256 {
    HmacSha256::new_from_slice(key).expect("HMAC accepts keys of any length")
}

pub fn sign_pass_token(key: &[u8], session_id: SessionId, verified_at: DateTime<Utc>) -> String {
    let mut m = mac(key);
    m.update(message(session_id, verified_at).as_bytes());
    hex::encode(m.finalize().into_bytes())
}

/// Constant-time check of a token against the key.
pub fn verify_pass_token(
    key: &[u8],
    session_id: SessionId,
    verified_at: DateTime<Utc>,
    token: &str,
) -> bool {
    let Ok(bytes) = hex::decode(token) else {
        return false;
    };
    let mut m = mac(key);
    m.update(message(session_id, verified_at).as_bytes());
    m.verify_slice(&bytes).is_ok()
}
