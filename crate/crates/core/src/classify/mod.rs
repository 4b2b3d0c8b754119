//! Text classification backends for the classifier-based attribution
//! strategies, plus stratified k-fold evaluation.
//!
//! The shipped backend is a multinomial naive Bayes over token unigrams and
//! bigrams ([`NgramClassifier`]). Anything implementing
//! [`ClassifierBackend`] can replace it.

mod cv;
mod nb;
mod ova;

pub use cv::{cross_validate, cross_validate_with, stratified_kfold, FoldPlan};
pub use nb::{NaiveBayes, NgramClassifier, MODEL_MAGIC};
pub use ova::{OneVsAll, Vote};

use serde::{Deserialize, Serialize};

use crate::Result;

/// Label names used by binary classifiers, in score-vector order.
pub const NEGATIVE: &str = "negative";
pub const POSITIVE: &str = "positive";

/// Passes over the training data requested by the attribution procedures.
/// Closed-form backends ignore it.
pub const DEFAULT_EPOCHS: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledResponse {
    pub label: String,
    pub text: String,
    pub query_id: String,
}

pub trait TextClassifier: Send + Sync {
    fn labels(&self) -> &[String];

    /// Probability vector over [`labels`](Self::labels).
    fn predict_scores(&self, text: &str) -> Vec<f64>;
}

pub trait ClassifierBackend: Sync {
    type Model: TextClassifier;

    /// Trains on `(label index, text)` pairs. Every label must have at least
    /// one example.
    fn fit(&self, labels: &[String], data: &[(usize, &str)], epochs: usize) -> Result<Self::Model>;
}

fn ordered_labels<'a>(data: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut labels: Vec<String> = Vec::new();
    for label in data {
        if !labels.iter().any(|l| l == label) {
            labels.push(label.to_owned());
        }
    }
    labels
}

/// Multiclass naive Bayes; labels are ordered by first appearance.
pub fn train_multiclass(data: &[LabeledResponse]) -> Result<NgramClassifier> {
    let labels = ordered_labels(data.iter().map(|r| r.label.as_str()));
    if labels.len() < 2 {
        return Err(crate::Error::invalid(
            "multiclass training needs at least two labels",
        ));
    }
    let pairs: Vec<(usize, &str)> = data
        .iter()
        .map(|r| {
            let idx = labels.iter().position(|l| *l == r.label).expect("label collected");
            (idx, r.text.as_str())
        })
        .collect();
    NaiveBayes::default().fit(&labels, &pairs, DEFAULT_EPOCHS)
}

/// Binary naive Bayes with labels `[negative, positive]`.
pub fn train_binary(positive: &[&str], negative: &[&str]) -> Result<NgramClassifier> {
    binary_with(&NaiveBayes::default(), positive, negative)
}

pub(crate) fn binary_with<B: ClassifierBackend>(
    backend: &B,
    positive: &[&str],
    negative: &[&str],
) -> Result<B::Model> {
    if positive.is_empty() || negative.is_empty() {
        return Err(crate::Error::invalid(
            "binary training needs positive and negative examples",
        ));
    }
    let labels = [NEGATIVE.to_owned(), POSITIVE.to_owned()];
    let data: Vec<(usize, &str)> = negative
        .iter()
        .map(|t| (0, *t))
        .chain(positive.iter().map(|t| (1, *t)))
        .collect();
    backend.fit(&labels, &data, DEFAULT_EPOCHS)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn rec(label: &str, text: &str) -> LabeledResponse {
        LabeledResponse {
            label: label.into(),
            text: text.into(),
            query_id: String::new(),
        }
    }

    #[test]
    fn single_label_is_rejected() {
        assert!(train_multiclass(&[rec("a", "x"), rec("a", "y")]).is_err());
        assert!(train_binary(&["x"], &[]).is_err());
    }

    #[test]
    fn separable_training_accuracy() {
        let data: Vec<_> = (0..20)
            .map(|i| {
                if i % 2 == 0 {
                    rec("a", "red green blue red")
                } else {
                    rec("b", "cat dog mouse dog")
                }
            })
            .collect();
        let model = train_multiclass(&data).unwrap();
        for r in &data {
            let scores = model.predict_scores(&r.text);
            let best = crate::vsm::argmax(&scores).unwrap();
            assert_eq!(model.labels()[best], r.label);
        }
    }

    #[test]
    fn binary_scores_and_prior_dominance() {
        let pos: Vec<String> = (0..90).map(|i| format!("alpha beta gamma{}", i % 5)).collect();
        let neg: Vec<String> = (0..990).map(|i| format!("delta epsilon zeta{}", i % 7)).collect();
        let pos: Vec<&str> = pos.iter().map(String::as_str).collect();
        let neg: Vec<&str> = neg.iter().map(String::as_str).collect();
        let model = train_binary(&pos, &neg).unwrap();
        assert_eq!(model.labels(), [NEGATIVE, POSITIVE]);

        let s = model.predict_scores(pos[0]);
        assert!(s[1] > s[0]);

        let s = model.predict_scores("unseen words entirely");
        assert!((s[1] - 90.0 / 1080.0).abs() < 1e-12);
        assert!(s[1] < s[0]);
    }
}
