use std::collections::HashSet;
use std::sync::OnceLock;

use super::{ChallengeError, TileCategory};

pub const DIGIT_WORDS: [&str; 10] = [
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine",
];

const BUILTIN: &str = include_str!("../../assets/wordlist.txt");

/// Word vocabulary for audio challenges.
///
/// File format: UTF-8, one token per line, blank lines ignored, `#` starts a
/// comment line. Tokens must be lowercase ASCII letters, unique, and must not
/// collide with a digit word. Every tile category name must be present.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Wordlist {
    words: Vec<String>,
}

impl Wordlist {
    pub fn parse(text: &str) -> Result<Self, ChallengeError> {
        let mut words = Vec::new();
        let mut seen = HashSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if !line.bytes().all(|b| b.is_ascii_lowercase()) {
                return Err(ChallengeError::Wordlist(format!(
                    "line {}: {line:?} is not a lowercase ASCII word",
                    lineno + 1
                )));
            }
            if DIGIT_WORDS.contains(&line) {
                return Err(ChallengeError::Wordlist(format!(
                    "line {}: {line:?} collides with a digit token",
                    lineno + 1
                )));
            }
            if !seen.insert(line.to_string()) {
                return Err(ChallengeError::Wordlist(format!(
                    "line {}: duplicate word {line:?}",
                    lineno + 1
                )));
            }
            words.push(line.to_string());
        }
        for category in TileCategory::ALL {
            if !seen.contains(category.name()) {
                return Err(ChallengeError::Wordlist(format!(
                    "missing tile category {:?}",
                    category.name()
                )));
            }
        }
        Ok(Self { words })
    }

    /// The vocabulary shipped with the crate.
    pub fn builtin() -> &'static Wordlist {
        static WORDS: OnceLock<Wordlist> = OnceLock::new();
        WORDS.get_or_init(|| Wordlist::parse(BUILTIN).expect("builtin wordlist is valid"))
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Position of `token` in the combined digits-then-words alphabet.
    pub fn token_index(&self, token: &str) -> Option<usize> {
        DIGIT_WORDS.iter().position(|d| *d == token).or_else(|| {
            self.words
                .iter()
                .position(|w| w == token)
                .map(|i| i + DIGIT_WORDS.len())
        })
    }
}
