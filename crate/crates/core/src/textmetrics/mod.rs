//! Tokenization plus from-scratch BLEU and TER.
//!
//! Both metrics consume [`TokenSequence`]s from the shared [`tokenize`], with
//! no stemming or case variants.

mod bleu;
mod edit;
mod ter;

pub use bleu::{bleu, bleu_with_order, BleuBreakdown, NgramPrecision, PRECISION_FLOOR};
pub use edit::levenshtein;
pub use ter::{ter, TerBreakdown, MAX_SHIFT_CANDIDATES, MAX_SHIFT_ITERATIONS, MAX_SHIFT_LEN};

use std::ops::Deref;

/// Output of [`tokenize`]; possibly empty.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct TokenSequence(Vec<String>);

impl TokenSequence {
    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn into_tokens(self) -> Vec<String> {
        self.0
    }

    /// Space-joined tokens. Re-tokenizing the result yields `self`.
    pub fn join(&self) -> String {
        self.0.join(" ")
    }
}

impl Deref for TokenSequence {
    type Target = [String];

    fn deref(&self) -> &[String] {
        &self.0
    }
}

fn is_punctuation(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(
            c,
            '\u{2018}'..='\u{201F}' | '\u{2010}'..='\u{2015}' | '…' | '«' | '»' | '¡' | '¿' | '·'
        )
}

/// Lowercases, splits on whitespace and peels leading/trailing punctuation
/// off each word, one token per punctuation character.
pub fn tokenize(text: &str) -> TokenSequence {
    let lowered = text.to_lowercase();
    let mut tokens = Vec::new();
    for word in lowered.split_whitespace() {
        let chars: Vec<char> = word.chars().collect();
        let lead = chars.iter().take_while(|c| is_punctuation(**c)).count();
        if lead == chars.len() {
            tokens.extend(chars.iter().map(|c| c.to_string()));
            continue;
        }
        let trail = chars.iter().rev().take_while(|c| is_punctuation(**c)).count();
        tokens.extend(chars[..lead].iter().map(|c| c.to_string()));
        tokens.push(chars[lead..chars.len() - trail].iter().collect());
        tokens.extend(chars[chars.len() - trail..].iter().map(|c| c.to_string()));
    }
    TokenSequence(tokens)
}
