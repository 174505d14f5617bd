use std::io::{self, Write};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::verify::normalize_transcript;
use super::wordlist::{Wordlist, DIGIT_WORDS};
use super::{difficulty_params, ChallengeMeta, DifficultyLevel, GridChallenge};
use crate::nonce::ChallengeId;
use crate::rng::SplitMix64;

pub const SAMPLE_RATE_HZ: u32 = 16_000;
/// Silence between consecutive tokens.
pub const TOKEN_GAP_MS: u32 = 100;

const AUDIO_STREAM: u64 = 0x0061_7564_696f;
const AUDIO_NOISE_STREAM: u64 = 0x006e_6f69_7365;
/// Peak amplitude of each of the two sinusoids in a token signature.
const TONE_AMPLITUDE: f64 = 0.15;
const RAMP_MS: u32 = 5;

/// Spoken-sequence challenge: digits and vocabulary words rendered as tone
/// signatures, answered by typing the sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AudioChallenge {
    pub challenge_id: ChallengeId,
    pub tokens: Vec<String>,
    pub expected_transcript: String,
    pub difficulty: DifficultyLevel,
    /// Handle of the rendered clip, stable for a given content seed.
    pub waveform_ref: String,
    pub issued_at: DateTime<Utc>,
    pub time_limit_s: f64,
    /// Seed of the content and of the mixed-in noise.
    pub seed: u64,
}

/// Deterministic in `(seed, level, paired_grid target)`. With a paired grid,
/// the first word token names the grid's target category.
pub fn generate_audio_challenge(
    seed: u64,
    level: DifficultyLevel,
    paired_grid: Option<&GridChallenge>,
    meta: ChallengeMeta,
) -> AudioChallenge {
    let words = Wordlist::builtin().words();
    let mut rng = SplitMix64::stream(seed, AUDIO_STREAM ^ level.get() as u64);
    let n = difficulty_params(level).token_count;

    // Kind pattern first: one guaranteed digit slot and one guaranteed word slot.
    let digit_slot = rng.index(n);
    let word_slot = (digit_slot + 1 + rng.index(n - 1)) % n;
    let is_digit: Vec<bool> = (0..n)
        .map(|i| {
            if i == digit_slot {
                true
            } else if i == word_slot {
                false
            } else {
                rng.chance(0.5)
            }
        })
        .collect();

    let mut tokens: Vec<String> = is_digit
        .iter()
        .map(|&d| {
            if d {
                rng.choose(&DIGIT_WORDS).to_string()
            } else {
                rng.choose(words).clone()
            }
        })
        .collect();

    if let Some(grid) = paired_grid {
        let first_word = is_digit
            .iter()
            .position(|d| !d)
            .expect("at least one word slot");
        tokens[first_word] = grid.target_category.name().to_string();
    }

    let expected_transcript = normalize_transcript(&tokens.join(" "));
    AudioChallenge {
        challenge_id: meta.challenge_id,
        tokens,
        expected_transcript,
        difficulty: level,
        waveform_ref: format!("wav-{seed:016x}-{level}"),
        issued_at: meta.issued_at,
        time_limit_s: meta.time_limit_s,
        seed,
    }
}

/// Frequency pair (Hz) of a token's signature.
///
/// Tokens are laid out digits-then-words; index `i` maps to a low tone from a
/// 7-step row and a high tone from a 6-step column, so the 42 tokens of the
/// builtin alphabet get 42 distinct pairs.
pub fn token_frequencies(token: &str) -> Option<(f64, f64)> {
    let i = Wordlist::builtin().token_index(token)?;
    let low = 500.0 + 100.0 * (i % 7) as f64;
    let high = 1400.0 + 200.0 * (i / 7) as f64;
    Some((low, high))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Waveform {
    pub sample_rate: u32,
    pub samples: Vec<i16>,
}

impl Waveform {
    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

fn ms_to_samples(ms: u32) -> usize {
    (ms as u64 * SAMPLE_RATE_HZ as u64 / 1000) as usize
}

/// Renders at the challenge's configured SNR.
pub fn render_audio(challenge: &AudioChallenge) -> Waveform {
    render_audio_with_snr(
        challenge,
        Some(difficulty_params(challenge.difficulty).audio_snr_db),
    )
}

/// Renders with an explicit SNR; `None` disables the noise bed.
///
/// Noise is white Gaussian, spread over the whole clip, and rescaled so that
/// its realized power over the voiced samples sits exactly `snr_db` below the
/// realized signal power there.
pub fn render_audio_with_snr(challenge: &AudioChallenge, snr_db: Option<f64>) -> Waveform {
    let params = difficulty_params(challenge.difficulty);
    let tone_len = ms_to_samples(params.tone_duration_ms);
    let gap_len = ms_to_samples(TOKEN_GAP_MS);
    let ramp_len = ms_to_samples(RAMP_MS).min(tone_len / 2);
    let n_tokens = challenge.tokens.len();
    let total = n_tokens * tone_len + n_tokens.saturating_sub(1) * gap_len;

    let mut signal = vec![0.0f64; total];
    let mut voiced = vec![false; total];
    let rate = SAMPLE_RATE_HZ as f64;
    for (k, token) in challenge.tokens.iter().enumerate() {
        let (f1, f2) = token_frequencies(token).unwrap_or((440.0, 1320.0));
        let start = k * (tone_len + gap_len);
        for i in 0..tone_len {
            let t = i as f64 / rate;
            let envelope = if i < ramp_len {
                i as f64 / ramp_len as f64
            } else if i >= tone_len - ramp_len {
                (tone_len - i) as f64 / ramp_len as f64
            } else {
                1.0
            };
            signal[start + i] = envelope
                * TONE_AMPLITUDE
                * ((std::f64::consts::TAU * f1 * t).sin() + (std::f64::consts::TAU * f2 * t).sin());
            voiced[start + i] = true;
        }
    }

    if let Some(snr) = snr_db {
        let mut rng = SplitMix64::stream(
            challenge.seed,
            AUDIO_NOISE_STREAM ^ challenge.difficulty.get() as u64,
        );
        let noise: Vec<f64> = (0..total).map(|_| rng.normal()).collect();
        let (mut p_signal, mut p_noise, mut count) = (0.0, 0.0, 0usize);
        for i in 0..total {
            if voiced[i] {
                p_signal += signal[i] * signal[i];
                p_noise += noise[i] * noise[i];
                count += 1;
            }
        }
        if count > 0 && p_noise > 0.0 {
            let target = (p_signal / count as f64) / 10f64.powf(snr / 10.0);
            let scale = (target / (p_noise / count as f64)).sqrt();
            for (s, n) in signal.iter_mut().zip(noise) {
                *s += scale * n;
            }
        }
    }

    let samples = signal
        .into_iter()
        .map(|v| {
            (v * i16::MAX as f64)
                .round()
                .clamp(i16::MIN as f64, i16::MAX as f64) as i16
        })
        .collect();
    Waveform {
        sample_rate: SAMPLE_RATE_HZ,
        samples,
    }
}

/// RIFF WAVE, PCM 16-bit little-endian, mono.
pub fn write_wav<W: Write>(wave: &Waveform, mut out: W) -> io::Result<()> {
    let data_len = (wave.samples.len() * 2) as u32;
    out.write_all(b"RIFF")?;
    out.write_all(&(36 + data_len).to_le_bytes())?;
    out.write_all(b"WAVE")?;
    out.write_all(b"fmt ")?;
    out.write_all(&16u32.to_le_bytes())?;
    out.write_all(&1u16.to_le_bytes())?; // PCM
    out.write_all(&1u16.to_le_bytes())?; // mono
    out.write_all(&wave.sample_rate.to_le_bytes())?;
    out.write_all(&(wave.sample_rate * 2).to_le_bytes())?;
    out.write_all(&2u16.to_le_bytes())?;
    out.write_all(&16u16.to_le_bytes())?;
    out.write_all(b"data")?;
    out.write_all(&data_len.to_le_bytes())?;
    for s in &wave.samples {
        out.write_all(&s.to_le_bytes())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::super::generate_grid_challenge;
    use super::*;

    fn level(l: i64) -> DifficultyLevel {
        DifficultyLevel::new(l).unwrap()
    }

    fn audio(seed: u64, l: i64) -> AudioChallenge {
        generate_audio_challenge(seed, level(l), None, ChallengeMeta::offline(seed))
    }

    #[test]
    fn golden_tokens_seed7_level1() {
        let c = audio(7, 1);
        assert_eq!(c.tokens, GOLDEN_SEED7_LEVEL1);
        assert_eq!(c.expected_transcript, GOLDEN_SEED7_LEVEL1.join(" "));
    }

    const GOLDEN_SEED7_LEVEL1: [&str; 4] = ["cloud", "zero", "planet", "nine"];

    #[test]
    fn mixes_digits_and_words() {
        let words = Wordlist::builtin();
        for seed in 0..3_000u64 {
            for l in 1..=5 {
                let c = audio(seed, l);
                assert_eq!(c.tokens.len(), difficulty_params(level(l)).token_count);
                assert!(c.tokens.iter().any(|t| DIGIT_WORDS.contains(&t.as_str())));
                assert!(c.tokens.iter().any(|t| words.words().contains(t)));
                assert_eq!(
                    c.expected_transcript,
                    normalize_transcript(&c.expected_transcript)
                );
            }
        }
    }

    #[test]
    fn deterministic() {
        assert_eq!(audio(11, 3).tokens, audio(11, 3).tokens);
        assert_eq!(render_audio(&audio(11, 3)), render_audio(&audio(11, 3)));
    }

    #[test]
    fn pairing_names_the_grid_target() {
        for seed in 0..500u64 {
            let grid = generate_grid_challenge(seed, level(2), ChallengeMeta::offline(seed));
            let c =
                generate_audio_challenge(seed, level(2), Some(&grid), ChallengeMeta::offline(seed));
            let first_word = c
                .tokens
                .iter()
                .find(|t| !DIGIT_WORDS.contains(&t.as_str()))
                .unwrap();
            assert_eq!(first_word, grid.target_category.name());
        }
    }

    #[test]
    fn frequency_pairs_are_distinct() {
        let mut pairs: Vec<(u64, u64)> = DIGIT_WORDS
            .iter()
            .map(|s| s.to_string())
            .chain(Wordlist::builtin().words().iter().cloned())
            .map(|t| {
                let (a, b) = token_frequencies(&t).unwrap();
                (a as u64, b as u64)
            })
            .collect();
        let n = pairs.len();
        pairs.sort();
        pairs.dedup();
        assert_eq!(pairs.len(), n);
        assert_eq!(n, 42);
    }

    #[test]
    fn duration_follows_framing() {
        for l in 1..=5 {
            let c = audio(3, l);
            let p = difficulty_params(level(l));
            let wave = render_audio(&c);
            let expected = p.token_count * ms_to_samples(p.tone_duration_ms)
                + (p.token_count - 1) * ms_to_samples(TOKEN_GAP_MS);
            assert_eq!(wave.samples.len(), expected);
        }
    }

    #[test]
    fn wav_header_layout() {
        let wave = render_audio(&audio(1, 1));
        let mut buf = Vec::new();
        write_wav(&wave, &mut buf).unwrap();
        assert_eq!(&buf[0..4], b"RIFF");
        assert_eq!(&buf[8..16], b"WAVEfmt ");
        assert_eq!(u32::from_le_bytes(buf[24..28].try_into().unwrap()), 16_000);
        assert_eq!(u16::from_le_bytes(buf[34..36].try_into().unwrap()), 16);
        assert_eq!(buf.len(), 44 + wave.samples.len() * 2);
    }
}
