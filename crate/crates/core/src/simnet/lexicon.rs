//! Master lexicon of pronounceable pseudo-words.
//!
//! Word `i` is a fixed three-syllable spelling of `i`, so every model and
//! every synthetic query draws from one shared, reproducible word list. All
//! words are lowercase ASCII letters and survive tokenization unchanged.

use serde::{Deserialize, Serialize};

const CONSONANTS: &[u8] = b"bdfghjklmnprstvwyz";
const VOWELS: &[u8] = b"aeiou";

/// Words per lexicon region.
pub const REGION_SIZE: usize = 1000;

/// Which slice of the lexicon a model's vocabulary is drawn from. Orphan
/// models live in their own region so they share no token with any base.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    #[default]
    Main,
    Orphan,
}

impl Region {
    pub fn offset(self) -> usize {
        match self {
            Region::Main => 0,
            Region::Orphan => REGION_SIZE,
        }
    }
}

pub fn word(index: usize) -> String {
    let syllables = CONSONANTS.len() * VOWELS.len();
    let mut out = String::with_capacity(6);
    let mut rest = index;
    for _ in 0..3 {
        let s = rest % syllables;
        rest /= syllables;
        out.push(CONSONANTS[s / VOWELS.len()] as char);
        out.push(VOWELS[s % VOWELS.len()] as char);
    }
    out
}
