use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::TokenSequence;
use crate::{Error, Result};

/// Stand-in for a zero precision so the geometric mean stays defined.
pub const PRECISION_FLOOR: f64 = 1e-9;

/// Clipped n-gram matches over hypothesis n-grams for one order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NgramPrecision {
    pub order: usize,
    pub matched: usize,
    pub total: usize,
}

impl NgramPrecision {
    /// `None` when the hypothesis has no n-grams of this order.
    pub fn value(&self) -> Option<f64> {
        (self.total > 0).then(|| self.matched as f64 / self.total as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BleuBreakdown {
    pub precisions: Vec<NgramPrecision>,
    pub brevity_penalty: f64,
    pub score: f64,
    pub ref_len: usize,
    pub hyp_len: usize,
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// Sentence BLEU up to 4-grams.
pub fn bleu(reference: &TokenSequence, hypothesis: &TokenSequence) -> Result<BleuBreakdown> {
    bleu_with_order(reference, hypothesis, 4)
}

/// Single-reference BLEU.
///
/// Zero precisions are floored at [`PRECISION_FLOOR`]; orders for which the
/// hypothesis has no n-grams at all are left out of the geometric mean. An
/// empty hypothesis scores 0.
pub fn bleu_with_order(
    reference: &TokenSequence,
    hypothesis: &TokenSequence,
    max_order: usize,
) -> Result<BleuBreakdown> {
    if reference.is_empty() {
        return Err(Error::EmptyReference);
    }
    if max_order == 0 {
        return Err(Error::invalid("BLEU order must be at least 1"));
    }
    let ref_len = reference.len();
    let hyp_len = hypothesis.len();

    let precisions: Vec<NgramPrecision> = (1..=max_order)
        .map(|n| {
            let ref_counts = ngram_counts(reference, n);
            let hyp_counts = ngram_counts(hypothesis, n);
            let matched = hyp_counts
                .iter()
                .map(|(gram, &count)| count.min(ref_counts.get(gram).copied().unwrap_or(0)))
                .sum();
            NgramPrecision {
                order: n,
                matched,
                total: hyp_len.saturating_sub(n - 1),
            }
        })
        .collect();

    if hyp_len == 0 {
        return Ok(BleuBreakdown {
            precisions,
            brevity_penalty: 0.0,
            score: 0.0,
            ref_len,
            hyp_len,
        });
    }

    let brevity_penalty = if hyp_len < ref_len {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    } else {
        1.0
    };
    let logs: Vec<f64> = precisions
        .iter()
        .filter_map(NgramPrecision::value)
        .map(|p| p.max(PRECISION_FLOOR).ln())
        .collect();
    let geo_mean = (logs.iter().sum::<f64>() / logs.len() as f64).exp();

    Ok(BleuBreakdown {
        precisions,
        brevity_penalty,
        score: brevity_penalty * geo_mean,
        ref_len,
        hyp_len,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textmetrics::tokenize;
    use proptest::prelude::*;

    #[test]
    fn identical_is_one() {
        let x = tokenize("a b c d e f");
        assert_eq!(bleu(&x, &x).unwrap().score, 1.0);
        // Shorter than the max order: higher orders are dropped.
        let short = tokenize("a b");
        let b = bleu(&short, &short).unwrap();
        assert_eq!(b.score, 1.0);
        assert_eq!(b.precisions[2].total, 0);
    }

    #[test]
    fn disjoint_is_tiny() {
        let b = bleu(&tokenize("a b c d"), &tokenize("w x y z")).unwrap();
        assert!(b.score < 1e-6);
        assert!(b.score > 0.0);
    }

    #[test]
    fn empty_inputs() {
        assert!(matches!(
            bleu(&tokenize(""), &tokenize("a")),
            Err(Error::EmptyReference)
        ));
        assert_eq!(bleu(&tokenize("a b"), &tokenize("")).unwrap().score, 0.0);
    }

    #[test]
    fn clipping() {
        // "the" appears twice in the hypothesis but once in the reference.
        let b = bleu_with_order(&tokenize("the cat"), &tokenize("the the"), 1).unwrap();
        assert_eq!(b.precisions[0].matched, 1);
        assert_eq!(b.precisions[0].total, 2);
        assert_eq!(b.score, 0.5);
    }

    #[test]
    fn asymmetric() {
        let a = tokenize("a b c d e f g");
        let b = tokenize("a b c d");
        assert_ne!(bleu(&a, &b).unwrap().score, bleu(&b, &a).unwrap().score);
    }

    proptest! {
        #[test]
        fn truncation_lowers_score(words in proptest::collection::vec("[a-e]", 6..20), cut in 1usize..5) {
            let reference = tokenize(&words.join(" "));
            let keep = reference.len().saturating_sub(cut).max(4);
            prop_assume!(keep < reference.len());
            let full = bleu(&reference, &reference).unwrap().score;
            let shorter = tokenize(&reference[..keep].join(" "));
            let truncated = bleu(&reference, &shorter).unwrap();
            prop_assert!(truncated.score < full);
            prop_assert!(truncated.brevity_penalty < 1.0);
        }
    }
}
