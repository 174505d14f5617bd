use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{AssetMode, Modality};
use crate::challenge::{
    render_audio, render_tile, write_wav, AudioChallenge, Challenge, ChallengeError,
    DifficultyLevel, GridChallenge, GRID_TILES,
};
use crate::nonce::{ChallengeId, SessionId};
use crate::rl::{RlAction, RlState};

pub const PGM_MEDIA_TYPE: &str = "image/x-portable-graymap";
pub const WAV_MEDIA_TYPE: &str = "audio/wav";

/// Server-side record of an outstanding challenge, including its answer.
#[derive(Debug, Clone, PartialEq)]
pub struct IssuedChallenge {
    pub session_id: SessionId,
    pub modality: Modality,
    pub seed: u64,
    /// What gets verified: the grid for `grid` and `paired`, the audio for `audio`.
    pub challenge: Challenge,
    /// The spoken hint of a paired challenge.
    pub paired_audio: Option<AudioChallenge>,
    pub rl_state: RlState,
    pub action: RlAction,
}

impl IssuedChallenge {
    pub fn challenge_id(&self) -> ChallengeId {
        match &self.challenge {
            Challenge::Grid(g) => g.challenge_id,
            Challenge::Audio(a) => a.challenge_id,
        }
    }

    pub fn level(&self) -> DifficultyLevel {
        match &self.challenge {
            Challenge::Grid(g) => g.difficulty,
            Challenge::Audio(a) => a.difficulty,
        }
    }

    pub fn issued_at(&self) -> DateTime<Utc> {
        match &self.challenge {
            Challenge::Grid(g) => g.issued_at,
            Challenge::Audio(a) => a.issued_at,
        }
    }

    pub fn grid(&self) -> Option<&GridChallenge> {
        match &self.challenge {
            Challenge::Grid(g) => Some(g),
            Challenge::Audio(_) => None,
        }
    }

    /// The clip the client hears, if any.
    pub fn audio(&self) -> Option<&AudioChallenge> {
        match &self.challenge {
            Challenge::Audio(a) => Some(a),
            Challenge::Grid(_) => self.paired_audio.as_ref(),
        }
    }
}

/// A tile image or audio clip, embedded or by reference.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Asset {
    pub media_type: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
}

/// What the client sees. Never carries the answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChallengePayload {
    pub session_id: SessionId,
    pub challenge_id: ChallengeId,
    pub modality: Modality,
    pub level: DifficultyLevel,
    pub issued_at: DateTime<Utc>,
    pub time_limit_s: f64,
    pub prompt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tile_size: Option<u32>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tiles: Vec<Asset>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio: Option<Asset>,
}

pub fn tile_url(session_id: SessionId, challenge_id: ChallengeId, index: usize) -> String {
    format!("/v1/session/{session_id}/challenge/{challenge_id}/tile/{index}")
}

pub fn audio_url(session_id: SessionId, challenge_id: ChallengeId) -> String {
    format!("/v1/session/{session_id}/challenge/{challenge_id}/audio")
}

pub fn tile_pgm(
    issued: &IssuedChallenge,
    index: usize,
    size: u32,
) -> Result<Option<Vec<u8>>, ChallengeError> {
    let Some(spec) = issued.grid().and_then(|g| g.tiles.get(index)) else {
        return Ok(None);
    };
    Ok(Some(render_tile(spec, size)?.to_pgm()))
}

pub fn audio_wav(issued: &IssuedChallenge) -> Option<Vec<u8>> {
    let clip = issued.audio()?;
    let mut out = Vec::new();
    write_wav(&render_audio(clip), &mut out).expect("writing to a Vec cannot fail");
    Some(out)
}

fn prompt(issued: &IssuedChallenge) -> String {
    match (&issued.challenge, issued.modality) {
        (Challenge::Grid(_), Modality::Paired) => {
            "Listen to the clip, then select every tile showing the shape named first.".into()
        }
        (Challenge::Grid(g), _) => format!("Select every {} tile.", g.target_category.name()),
        (Challenge::Audio(_), _) => "Type the words you hear, in order.".into(),
    }
}

pub fn build_payload(
    issued: &IssuedChallenge,
    mode: AssetMode,
    tile_size: u32,
) -> Result<ChallengePayload, ChallengeError> {
    let sid = issued.session_id;
    let cid = issued.challenge_id();
    let mut tiles = Vec::new();
    if issued.grid().is_some() {
        for i in 0..GRID_TILES {
            let (data, url) = match mode {
                AssetMode::Inline => {
                    let pgm = tile_pgm(issued, i, tile_size)?.expect("grid has 9 tiles");
                    (Some(BASE64.encode(pgm)), None)
                }
                AssetMode::Url => (None, Some(tile_url(sid, cid, i))),
            };
            tiles.push(Asset {
                media_type: PGM_MEDIA_TYPE.into(),
                data,
                url,
            });
        }
    }
    let audio = issued.audio().map(|_| match mode {
        AssetMode::Inline => Asset {
            media_type: WAV_MEDIA_TYPE.into(),
            data: audio_wav(issued).map(|w| BASE64.encode(w)),
            url: None,
        },
        AssetMode::Url => Asset {
            media_type: WAV_MEDIA_TYPE.into(),
            data: None,
            url: Some(audio_url(sid, cid)),
        },
    });
    Ok(ChallengePayload {
        session_id: sid,
        challenge_id: cid,
        modality: issued.modality,
        level: issued.level(),
        issued_at: issued.issued_at(),
        time_limit_s: match &issued.challenge {
            Challenge::Grid(g) => g.time_limit_s,
            Challenge::Audio(a) => a.time_limit_s,
        },
        prompt: prompt(issued),
        tile_size: issued.grid().map(|_| tile_size),
        tiles,
        audio,
    })
}
