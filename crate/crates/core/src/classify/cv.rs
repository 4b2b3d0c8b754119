use std::collections::BTreeMap;

use super::{ClassifierBackend, LabeledResponse, NaiveBayes, TextClassifier, DEFAULT_EPOCHS};
use crate::seed::SeedBuilder;
use crate::{Error, Result};

/// Record-to-fold assignment, stratified by label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    pub k: usize,
    pub assignments: Vec<usize>,
}

impl FoldPlan {
    pub fn fold_members(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] == fold)
            .collect()
    }
}

/// Within each label, records are ordered by a seeded hash of their content
/// and dealt round-robin; the starting fold rotates between labels so fold
/// sizes stay balanced overall. The plan therefore depends on record
/// contents, not positions.
pub fn stratified_kfold(data: &[LabeledResponse], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::invalid("k must be at least 2"));
    }
    let mut by_label: BTreeMap<&str, Vec<(u64, usize)>> = BTreeMap::new();
    for (i, r) in data.iter().enumerate() {
        let key = SeedBuilder::new("fold")
            .u64(seed)
            .str(&r.label)
            .str(&r.query_id)
            .str(&r.text)
            .finish();
        by_label.entry(&r.label).or_default().push((key, i));
    }
    let mut assignments = vec![0; data.len()];
    let mut offset = 0;
    for (label, mut members) in by_label {
        if members.len() < k {
            return Err(Error::TooFewRecords {
                label: label.to_owned(),
                count: members.len(),
                k,
            });
        }
        members.sort_unstable();
        for (pos, &(_, i)) in members.iter().enumerate() {
            assignments[i] = (pos + offset) % k;
        }
        offset = (offset + members.len()) % k;
    }
    Ok(FoldPlan { k, assignments })
}

/// Mean per-fold accuracy of `evaluate`, which receives the training and
/// held-out records of one fold and returns the number of held-out records
/// it got right.
pub fn cross_validate_with<F>(data: &[LabeledResponse], k: usize, seed: u64, evaluate: F) -> Result<f64>
where
    F: Fn(&[&LabeledResponse], &[&LabeledResponse]) -> Result<usize>,
{
    let plan = stratified_kfold(data, k, seed)?;
    let mut total = 0.0;
    for fold in 0..k {
        let (test, train): (Vec<_>, Vec<_>) = data
            .iter()
            .zip(&plan.assignments)
            .partition(|(_, &f)| f == fold);
        let test: Vec<&LabeledResponse> = test.into_iter().map(|(r, _)| r).collect();
        let train: Vec<&LabeledResponse> = train.into_iter().map(|(r, _)| r).collect();
        let correct = evaluate(&train, &test)?;
        total += correct as f64 / test.len() as f64;
    }
    Ok(total / k as f64)
}

/// Stratified k-fold accuracy of the multiclass naive Bayes backend.
pub fn cross_validate(data: &[LabeledResponse], k: usize, seed: u64) -> Result<f64> {
    let labels = super::ordered_labels(data.iter().map(|r| r.label.as_str()));
    cross_validate_with(data, k, seed, |train, test| {
        let pairs: Vec<(usize, &str)> = train
            .iter()
            .map(|r| (label_index(&labels, &r.label), r.text.as_str()))
            .collect();
        let model = NaiveBayes::default().fit(&labels, &pairs, DEFAULT_EPOCHS)?;
        Ok(test
            .iter()
            .filter(|r| {
                let scores = model.predict_scores(&r.text);
                crate::vsm::argmax(&scores) == Some(label_index(&labels, &r.label))
            })
            .count())
    })
}

pub(crate) fn label_index(labels: &[String], label: &str) -> usize {
    labels.iter().position(|l| l == label).expect("known label")
}
