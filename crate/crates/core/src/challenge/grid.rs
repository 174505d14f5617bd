use std::collections::BTreeSet;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{difficulty_params, ChallengeMeta, DifficultyLevel, TileCategory, TileSpec};
use crate::nonce::ChallengeId;
use crate::rng::SplitMix64;

pub const GRID_TILES: usize = 9;

const GRID_STREAM: u64 = 0x6772_6964;

/// A 3x3 "select every X" challenge. Tiles are row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridChallenge {
    pub challenge_id: ChallengeId,
    pub tiles: Vec<TileSpec>,
    pub target_category: TileCategory,
    pub target_indices: BTreeSet<u8>,
    pub difficulty: DifficultyLevel,
    pub issued_at: DateTime<Utc>,
    pub time_limit_s: f64,
}

impl GridChallenge {
    /// `(tiles, targets)` with the per-issue fields stripped, for content comparisons.
    pub fn content(&self) -> (&[TileSpec], &BTreeSet<u8>) {
        (&self.tiles, &self.target_indices)
    }
}

/// Builds a grid with 3 to 5 targets (uniform) and decoys drawn from the five
/// other categories. Deterministic in `(seed, level)`.
pub fn generate_grid_challenge(
    seed: u64,
    level: DifficultyLevel,
    meta: ChallengeMeta,
) -> GridChallenge {
    let mut rng = SplitMix64::stream(seed, GRID_STREAM ^ level.get() as u64);
    let distortion = difficulty_params(level).distortion();

    let target_category = *rng.choose(&TileCategory::ALL);
    let decoys: Vec<TileCategory> = TileCategory::ALL
        .into_iter()
        .filter(|c| *c != target_category)
        .collect();

    let target_count = 3 + rng.index(3);
    let mut positions: [u8; GRID_TILES] = [0, 1, 2, 3, 4, 5, 6, 7, 8];
    rng.shuffle(&mut positions);
    let target_indices: BTreeSet<u8> = positions[..target_count].iter().copied().collect();

    let tiles = (0..GRID_TILES as u8)
        .map(|i| {
            let category = if target_indices.contains(&i) {
                target_category
            } else {
                *rng.choose(&decoys)
            };
            TileSpec {
                category,
                seed: rng.next_u64(),
                distortion,
            }
        })
        .collect();

    GridChallenge {
        challenge_id: meta.challenge_id,
        tiles,
        target_category,
        target_indices,
        difficulty: level,
        issued_at: meta.issued_at,
        time_limit_s: meta.time_limit_s,
    }
}
