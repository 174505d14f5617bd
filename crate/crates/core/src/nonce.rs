//! 128-bit one-time identifiers for sessions and challenges.

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::rng::mix64;

macro_rules! nonce_type {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub struct $name(u128);

        impl $name {
            pub const fn from_u128(value: u128) -> Self {
                Self(value)
            }

            pub const fn as_u128(self) -> u128 {
                self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{:032x}", self.0)
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}({:032x})", stringify!($name), self.0)
            }
        }

        impl FromStr for $name {
            type Err = ParseNonceError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                if s.len() != 32 {
                    return Err(ParseNonceError);
                }
                u128::from_str_radix(s, 16).map(Self).map_err(|_| ParseNonceError)
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
                serializer.collect_str(self)
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
                let s = String::deserialize(deserializer)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

nonce_type!(
    /// Identifier of one verification session.
    SessionId
);
nonce_type!(
    /// One-time challenge identifier; consumed on submission.
    ChallengeId
);

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("expected a 32-digit hexadecimal identifier")]
pub struct ParseNonceError;

/// Linearizable source of unique 128-bit values.
///
/// The low half is `mix64(counter ^ key_lo)`; `mix64` is a bijection, so two
/// distinct counter values can never produce the same nonce. The high half is
/// keyed noise that makes identifiers unguessable when the keys are secret.
#[derive(Debug)]
pub struct NonceSource {
    counter: AtomicU64,
    key_lo: u64,
    key_hi: u64,
}

impl NonceSource {
    pub fn new(key_lo: u64, key_hi: u64) -> Self {
        Self {
            counter: AtomicU64::new(0),
            key_lo,
            key_hi,
        }
    }

    pub fn from_seed(seed: u64) -> Self {
        Self::new(
            mix64(seed ^ 0x6e6f_6e63_655f_6c6f),
            mix64(seed ^ 0x6e6f_6e63_655f_6869),
        )
    }

    pub fn next_u128(&self) -> u128 {
        let n = self.counter.fetch_add(1, Ordering::SeqCst);
        let lo = mix64(n ^ self.key_lo);
        let hi = mix64(n.wrapping_add(self.key_hi) ^ self.key_hi.rotate_left(17));
        ((hi as u128) << 64) | lo as u128
    }

    pub fn session_id(&self) -> SessionId {
        SessionId(self.next_u128())
    }

    pub fn challenge_id(&self) -> ChallengeId {
        ChallengeId(self.next_u128())
    }

    /// Skips `n` nonces, e.g. those already handed out before a restart.
    pub fn skip(&self, n: u64) {
        self.counter.fetch_add(n, Ordering::SeqCst);
    }

    /// Number of nonces handed out so far.
    pub fn issued(&self) -> u64 {
        self.counter.load(Ordering::SeqCst)
    }
}
