//! TF-IDF vector space model over per-base-model response documents.

use std::collections::{BTreeMap, BTreeSet};

use crate::textmetrics::tokenize;
use crate::{Error, Result};

/// All responses of one base model, concatenated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResponseDocument {
    pub base_model_id: String,
    pub text: String,
}

impl ResponseDocument {
    /// Joins responses with a single space so adjacent words never fuse.
    pub fn from_responses<'a>(
        base_model_id: impl Into<String>,
        responses: impl IntoIterator<Item = &'a str>,
    ) -> Self {
        let mut text = String::new();
        for response in responses {
            if !text.is_empty() {
                text.push(' ');
            }
            text.push_str(response);
        }
        ResponseDocument {
            base_model_id: base_model_id.into(),
            text,
        }
    }
}

type SparseVec = Vec<(usize, f64)>;

/// Raw-tf, smoothed-idf, L2-normalized document vectors.
#[derive(Debug, Clone)]
pub struct TfIdfIndex {
    vocabulary: BTreeMap<String, usize>,
    idf: Vec<f64>,
    doc_ids: Vec<String>,
    doc_terms: Vec<BTreeMap<usize, f64>>,
    doc_vectors: Vec<Vec<f64>>,
}

fn term_counts(text: &str) -> BTreeMap<String, f64> {
    let mut counts = BTreeMap::new();
    for token in tokenize(text).into_tokens() {
        *counts.entry(token).or_insert(0.0) += 1.0;
    }
    counts
}

fn normalize(vec: &mut [f64]) {
    let norm = vec.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        vec.iter_mut().for_each(|x| *x /= norm);
    }
}

/// Builds the index; document order fixes the order of every score vector.
pub fn build_index(documents: &[ResponseDocument]) -> Result<TfIdfIndex> {
    if documents.is_empty() {
        return Err(Error::invalid("no documents to index"));
    }
    let counts: Vec<BTreeMap<String, f64>> =
        documents.iter().map(|d| term_counts(&d.text)).collect();
    let terms: BTreeSet<&String> = counts.iter().flat_map(|c| c.keys()).collect();
    if terms.is_empty() {
        return Err(Error::invalid("all documents are empty"));
    }
    let vocabulary: BTreeMap<String, usize> = terms
        .into_iter()
        .enumerate()
        .map(|(i, t)| (t.clone(), i))
        .collect();

    let n_docs = documents.len() as f64;
    let mut df = vec![0usize; vocabulary.len()];
    let doc_terms: Vec<BTreeMap<usize, f64>> = counts
        .iter()
        .map(|c| {
            c.iter()
                .map(|(term, &tf)| {
                    let dim = vocabulary[term];
                    df[dim] += 1;
                    (dim, tf)
                })
                .collect()
        })
        .collect();
    let idf = df
        .iter()
        .map(|&d| ((1.0 + n_docs) / (1.0 + d as f64)).ln() + 1.0)
        .collect();

    let mut index = TfIdfIndex {
        vocabulary,
        idf,
        doc_ids: documents.iter().map(|d| d.base_model_id.clone()).collect(),
        doc_terms,
        doc_vectors: Vec::new(),
    };
    index.rebuild_vectors();
    Ok(index)
}

impl TfIdfIndex {
    fn rebuild_vectors(&mut self) {
        let dims = self.vocabulary.len();
        self.doc_vectors = self
            .doc_terms
            .iter()
            .map(|terms| {
                let mut v = vec![0.0; dims];
                for (&dim, &tf) in terms {
                    v[dim] = tf * self.idf[dim];
                }
                normalize(&mut v);
                v
            })
            .collect();
    }

    pub fn dimension(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn num_documents(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn document_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn idf(&self) -> &[f64] {
        &self.idf
    }

    pub fn document_vector(&self, i: usize) -> &[f64] {
        &self.doc_vectors[i]
    }

    /// Copy of the index with every idf weight multiplied by `factor`.
    pub fn with_idf_scale(&self, factor: f64) -> TfIdfIndex {
        let mut scaled = self.clone();
        scaled.idf.iter_mut().for_each(|w| *w *= factor);
        scaled.rebuild_vectors();
        scaled
    }

    /// Unit tf-idf vector of `text` as sorted (dimension, weight) pairs;
    /// terms outside the vocabulary are dropped.
    pub fn vectorize(&self, text: &str) -> Vec<(usize, f64)> {
        let mut vec: SparseVec = term_counts(text)
            .into_iter()
            .filter_map(|(term, tf)| {
                self.vocabulary
                    .get(&term)
                    .map(|&dim| (dim, tf * self.idf[dim]))
            })
            .collect();
        vec.sort_by_key(|&(dim, _)| dim);
        let norm = vec.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
        if norm > 0.0 {
            vec.iter_mut().for_each(|(_, w)| *w /= norm);
        }
        vec
    }

    /// Cosine of `text` against every document, in document order.
    pub fn compute_sim(&self, text: &str) -> Vec<f64> {
        let query = self.vectorize(text);
        self.doc_vectors
            .iter()
            .map(|doc| {
                let dot: f64 = query.iter().map(|&(dim, w)| w * doc[dim]).sum();
                dot.clamp(0.0, 1.0)
            })
            .collect()
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        if best.is_none_or(|b| v > values[b]) {
            best = Some(i);
        }
    }
    best
}
