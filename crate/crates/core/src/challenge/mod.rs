//! Procedural challenge generation, rendering and verification.
//!
//! A challenge is fully determined by a 64-bit seed and a [`DifficultyLevel`];
//! only its identifier, issue time and time limit come from the caller
//! through [`ChallengeMeta`].

mod audio;
mod grid;
mod tile;
mod verify;
mod wordlist;

use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::nonce::ChallengeId;

pub use audio::{
    generate_audio_challenge, render_audio, render_audio_with_snr, token_frequencies, write_wav,
    AudioChallenge, Waveform, SAMPLE_RATE_HZ, TOKEN_GAP_MS,
};
pub use grid::{generate_grid_challenge, GridChallenge, GRID_TILES};
pub use tile::{render_tile, Bitmap, DEFAULT_TILE_SIZE, TILE_SIZES};
pub use verify::{normalize_transcript, verify_solution, Challenge, Solution, VerificationResult};
pub use wordlist::{Wordlist, DIGIT_WORDS};

/// Default answer window for both modalities.
pub const DEFAULT_TIME_LIMIT_S: f64 = 30.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ChallengeError {
    #[error("difficulty level {0} is outside 1..=5")]
    InvalidLevel(i64),
    #[error("tile size {0} is not one of 32, 64, 128")]
    InvalidTileSize(u32),
    #[error("solution variant does not match the challenge")]
    VariantMismatch,
    #[error("tile index {0} submitted more than once")]
    DuplicateIndex(u8),
    #[error("tile index {0} is outside 0..=8")]
    IndexOutOfRange(u8),
    #[error("transcript is empty after normalization")]
    EmptyTranscript,
    #[error("elapsed time must be finite and non-negative, got {0}")]
    InvalidElapsed(f64),
    #[error("wordlist: {0}")]
    Wordlist(String),
}

/// Discrete hardness level in `1..=5`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "u8")]
pub struct DifficultyLevel(u8);

impl DifficultyLevel {
    pub const MIN: DifficultyLevel = DifficultyLevel(1);
    pub const MAX: DifficultyLevel = DifficultyLevel(5);
    pub const COUNT: usize = 5;

    pub fn new(level: i64) -> Result<Self, ChallengeError> {
        if (1..=5).contains(&level) {
            Ok(Self(level as u8))
        } else {
            Err(ChallengeError::InvalidLevel(level))
        }
    }

    pub const fn get(self) -> u8 {
        self.0
    }

    /// Zero-based position, handy for table lookups.
    pub const fn index(self) -> usize {
        self.0 as usize - 1
    }

    /// `self + delta`, saturating at the bounds.
    pub fn offset(self, delta: i8) -> Self {
        Self((self.0 as i16 + delta as i16).clamp(1, 5) as u8)
    }

    pub fn all() -> impl Iterator<Item = DifficultyLevel> {
        (1..=5).map(DifficultyLevel)
    }
}

impl TryFrom<i64> for DifficultyLevel {
    type Error = ChallengeError;

    fn try_from(value: i64) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<DifficultyLevel> for u8 {
    fn from(level: DifficultyLevel) -> u8 {
        level.0
    }
}

impl fmt::Display for DifficultyLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Knobs derived from a level. Every axis gets strictly harder as the level
/// rises: noise, occlusion, warp and token count go up, SNR and tone length
/// go down.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DifficultyParams {
    pub noise_sigma: f64,
    pub occlusion_fraction: f64,
    pub warp_amplitude: f64,
    pub audio_snr_db: f64,
    pub token_count: usize,
    pub tone_duration_ms: u32,
}

impl DifficultyParams {
    pub fn distortion(&self) -> Distortion {
        Distortion {
            noise_sigma: self.noise_sigma,
            occlusion_fraction: self.occlusion_fraction,
            warp_amplitude: self.warp_amplitude,
        }
    }
}

pub fn difficulty_params(level: DifficultyLevel) -> DifficultyParams {
    let step = (level.get() - 1) as f64;
    DifficultyParams {
        noise_sigma: 0.05 + 0.075 * step,
        occlusion_fraction: 0.05 * step,
        warp_amplitude: 0.5 * step,
        audio_snr_db: 20.0 - 4.0 * step,
        token_count: 3 + level.get() as usize,
        tone_duration_ms: 250 - 25 * (level.get() as u32 - 1),
    }
}

/// The visual subset of [`DifficultyParams`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Distortion {
    pub noise_sigma: f64,
    pub occlusion_fraction: f64,
    pub warp_amplitude: f64,
}

impl Distortion {
    pub const NONE: Distortion = Distortion {
        noise_sigma: 0.0,
        occlusion_fraction: 0.0,
        warp_amplitude: 0.0,
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TileCategory {
    Circle,
    Triangle,
    Square,
    Stripes,
    Checker,
    Cross,
}

impl TileCategory {
    pub const ALL: [TileCategory; 6] = [
        TileCategory::Circle,
        TileCategory::Triangle,
        TileCategory::Square,
        TileCategory::Stripes,
        TileCategory::Checker,
        TileCategory::Cross,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TileCategory::Circle => "circle",
            TileCategory::Triangle => "triangle",
            TileCategory::Square => "square",
            TileCategory::Stripes => "stripes",
            TileCategory::Checker => "checker",
            TileCategory::Cross => "cross",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == name)
    }
}

impl fmt::Display for TileCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Everything needed to render one tile bit-exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TileSpec {
    pub category: TileCategory,
    pub seed: u64,
    pub distortion: Distortion,
}

/// Per-issue context supplied by whoever hands the challenge out.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChallengeMeta {
    pub challenge_id: ChallengeId,
    pub issued_at: DateTime<Utc>,
    pub time_limit_s: f64,
}

impl ChallengeMeta {
    /// Context for offline generation: id and timestamp derived from the seed.
    pub fn offline(seed: u64) -> Self {
        Self {
            challenge_id: ChallengeId::from_u128(
                ((crate::rng::mix64(seed) as u128) << 64) | seed as u128,
            ),
            issued_at: DateTime::<Utc>::UNIX_EPOCH,
            time_limit_s: DEFAULT_TIME_LIMIT_S,
        }
    }
}
