use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{ClassifierBackend, TextClassifier};
use crate::textmetrics::tokenize;
use crate::{Error, Result};

/// First line of every saved model.
pub const MODEL_MAGIC: &str = "LMATTR-NGRAM-NB 1";

/// Multinomial naive Bayes with Laplace smoothing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NaiveBayes {
    pub alpha: f64,
}

impl Default for NaiveBayes {
    fn default() -> Self {
        NaiveBayes { alpha: 1.0 }
    }
}

/// Token unigrams followed by space-joined bigrams.
pub(crate) fn features(text: &str) -> Vec<String> {
    let tokens = tokenize(text).into_tokens();
    let mut out = Vec::with_capacity(tokens.len() * 2);
    for pair in tokens.windows(2) {
        out.push(format!("{} {}", pair[0], pair[1]));
    }
    out.splice(0..0, tokens);
    out
}

/// Trained naive Bayes model. Immutable; scores are posteriors.
#[derive(Debug, Clone)]
pub struct NgramClassifier {
    labels: Vec<String>,
    alpha: f64,
    doc_counts: Vec<u64>,
    feature_names: Vec<String>,
    feature_index: HashMap<String, usize>,
    /// `counts[label][feature]`
    counts: Vec<Vec<u64>>,
    log_prior: Vec<f64>,
    prior: Vec<f64>,
    log_likelihood: Vec<Vec<f64>>,
}

impl ClassifierBackend for NaiveBayes {
    type Model = NgramClassifier;

    /// `epochs` has no meaning for a closed-form fit and is ignored.
    fn fit(&self, labels: &[String], data: &[(usize, &str)], _epochs: usize) -> Result<NgramClassifier> {
        if self.alpha.is_nan() || self.alpha <= 0.0 {
            return Err(Error::invalid("smoothing alpha must be positive"));
        }
        let mut doc_counts = vec![0u64; labels.len()];
        let mut feature_names = Vec::new();
        let mut feature_index = HashMap::new();
        let mut sparse: Vec<HashMap<usize, u64>> = vec![HashMap::new(); labels.len()];
        for &(label, text) in data {
            if label >= labels.len() {
                return Err(Error::invalid(format!("label index {label} out of range")));
            }
            doc_counts[label] += 1;
            for feature in features(text) {
                let next = feature_names.len();
                let idx = *feature_index.entry(feature.clone()).or_insert_with(|| {
                    feature_names.push(feature);
                    next
                });
                *sparse[label].entry(idx).or_insert(0) += 1;
            }
        }
        if let Some(missing) = doc_counts.iter().position(|&c| c == 0) {
            return Err(Error::invalid(format!(
                "label `{}` has no training examples",
                labels[missing]
            )));
        }
        let counts = sparse
            .into_iter()
            .map(|m| {
                let mut row = vec![0u64; feature_names.len()];
                for (idx, c) in m {
                    row[idx] = c;
                }
                row
            })
            .collect();
        Ok(NgramClassifier::from_counts(
            labels.to_vec(),
            self.alpha,
            doc_counts,
            feature_names,
            counts,
        ))
    }
}

impl NgramClassifier {
    fn from_counts(
        labels: Vec<String>,
        alpha: f64,
        doc_counts: Vec<u64>,
        feature_names: Vec<String>,
        counts: Vec<Vec<u64>>,
    ) -> Self {
        let total_docs: u64 = doc_counts.iter().sum();
        let prior: Vec<f64> = doc_counts
            .iter()
            .map(|&c| c as f64 / total_docs as f64)
            .collect();
        let log_prior = prior.iter().map(|p| p.ln()).collect();
        let dims = feature_names.len() as f64;
        let log_likelihood = counts
            .iter()
            .map(|row| {
                let total = row.iter().sum::<u64>() as f64;
                let denom = (total + alpha * dims).ln();
                row.iter().map(|&c| (c as f64 + alpha).ln() - denom).collect()
            })
            .collect();
        let feature_index = feature_names
            .iter()
            .enumerate()
            .map(|(i, f)| (f.clone(), i))
            .collect();
        NgramClassifier {
            labels,
            alpha,
            doc_counts,
            feature_names,
            feature_index,
            counts,
            log_prior,
            prior,
            log_likelihood,
        }
    }

    /// Class priors, i.e. the score of a text with no known features.
    pub fn priors(&self) -> &[f64] {
        &self.prior
    }

    pub fn num_features(&self) -> usize {
        self.feature_names.len()
    }

    /// Writes the raw counts under [`MODEL_MAGIC`]; derived weights are
    /// recomputed on load, so scores survive bit for bit.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        let tabless = |s: &str| !s.contains(['\t', '\n', '\r']);
        if !self.labels.iter().all(|l| tabless(l)) {
            return Err(Error::invalid("labels may not contain tabs or newlines"));
        }
        writeln!(out, "{MODEL_MAGIC}").unwrap();
        writeln!(out, "alpha\t{}", self.alpha).unwrap();
        writeln!(out, "labels\t{}", self.labels.len()).unwrap();
        for (label, count) in self.labels.iter().zip(&self.doc_counts) {
            writeln!(out, "{label}\t{count}").unwrap();
        }
        writeln!(out, "features\t{}", self.feature_names.len()).unwrap();
        for (i, name) in self.feature_names.iter().enumerate() {
            out.push_str(name);
            for row in &self.counts {
                write!(out, "\t{}", row[i]).unwrap();
            }
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let content = fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let mut cursor = LineCursor {
            path,
            lines: content.lines().collect(),
            pos: 0,
        };

        if cursor.next()? != MODEL_MAGIC {
            return Err(cursor.error("not a naive Bayes model file"));
        }
        let alpha: f64 = cursor.keyed("alpha")?;
        let num_labels: usize = cursor.keyed("labels")?;
        let mut labels = Vec::with_capacity(num_labels);
        let mut doc_counts = Vec::with_capacity(num_labels);
        for _ in 0..num_labels {
            let line = cursor.next()?;
            let (label, count) = line
                .split_once('\t')
                .ok_or_else(|| cursor.error("bad label line"))?;
            labels.push(label.to_owned());
            doc_counts.push(count.parse().map_err(|_| cursor.error("bad document count"))?);
        }
        let num_features: usize = cursor.keyed("features")?;
        let mut feature_names = Vec::with_capacity(num_features);
        let mut counts = vec![Vec::with_capacity(num_features); num_labels];
        for _ in 0..num_features {
            let mut fields = cursor.next()?.split('\t');
            feature_names.push(fields.next().unwrap_or_default().to_owned());
            for row in counts.iter_mut() {
                let c = fields
                    .next()
                    .and_then(|f| f.parse().ok())
                    .ok_or_else(|| cursor.error("bad feature count"))?;
                row.push(c);
            }
            if fields.next().is_some() {
                return Err(cursor.error("too many columns"));
            }
        }
        Ok(NgramClassifier::from_counts(
            labels,
            alpha,
            doc_counts,
            feature_names,
            counts,
        ))
    }
}

struct LineCursor<'a> {
    path: &'a Path,
    lines: Vec<&'a str>,
    pos: usize,
}

impl<'a> LineCursor<'a> {
    /// Error at the line most recently returned by `next`.
    fn error(&self, message: &str) -> Error {
        Error::Parse {
            path: self.path.to_path_buf(),
            line: self.pos.max(1),
            message: message.to_owned(),
        }
    }

    fn next(&mut self) -> Result<&'a str> {
        let line = self.lines.get(self.pos).copied();
        self.pos += 1;
        line.ok_or_else(|| self.error("unexpected end of file"))
    }

    fn keyed<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        let line = self.next()?;
        match line.split_once('\t') {
            Some((k, v)) if k == key => v
                .parse()
                .map_err(|_| self.error(&format!("bad value for `{key}`"))),
            _ => Err(self.error(&format!("expected `{key}`"))),
        }
    }
}

impl TextClassifier for NgramClassifier {
    fn labels(&self) -> &[String] {
        &self.labels
    }

    fn predict_scores(&self, text: &str) -> Vec<f64> {
        let known: Vec<usize> = features(text)
            .iter()
            .filter_map(|f| self.feature_index.get(f).copied())
            .collect();
        if known.is_empty() {
            return self.prior.clone();
        }
        let joint: Vec<f64> = self
            .log_prior
            .iter()
            .zip(&self.log_likelihood)
            .map(|(lp, ll)| lp + known.iter().map(|&f| ll[f]).sum::<f64>())
            .collect();
        let max = joint.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = joint.iter().map(|j| (j - max).exp()).collect();
        let z: f64 = exp.iter().sum();
        exp.into_iter().map(|e| e / z).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classify::tests::rec;
    use crate::classify::train_multiclass;
    use proptest::prelude::*;

    #[test]
    fn feature_extraction() {
        assert_eq!(features("A b, c"), ["a", "b", ",", "c", "a b", "b ,", ", c"]);
        assert!(features("").is_empty());
    }

    #[test]
    fn empty_text_gives_priors() {
        let model = train_multiclass(&[
            rec("a", "x y"),
            rec("a", "x z"),
            rec("a", "x"),
            rec("b", "p q"),
        ])
        .unwrap();
        assert_eq!(model.predict_scores(""), vec![0.75, 0.25]);
    }

    #[test]
    fn unique_training_document_wins() {
        let model = train_multiclass(&[
            rec("a", "common words here"),
            rec("b", "common words there"),
            rec("c", "quite distinctive phrase indeed"),
            rec("a", "more common words"),
        ])
        .unwrap();
        let scores = model.predict_scores("quite distinctive phrase indeed");
        assert_eq!(crate::vsm::argmax(&scores), Some(2));
    }

    #[test]
    fn save_load_is_bit_exact() {
        let model = train_multiclass(&[
            rec("a", "alpha beta, gamma"),
            rec("b", "beta delta"),
            rec("c", "gamma gamma epsilon"),
        ])
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.nb");
        model.save(&path).unwrap();
        let loaded = NgramClassifier::load(&path).unwrap();
        for text in ["alpha", "beta gamma", "", "gamma , delta unknown"] {
            let a: Vec<u64> = model.predict_scores(text).iter().map(|x| x.to_bits()).collect();
            let b: Vec<u64> = loaded.predict_scores(text).iter().map(|x| x.to_bits()).collect();
            assert_eq!(a, b);
        }
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(MODEL_MAGIC));

        fs::write(&path, "garbage\n").unwrap();
        assert!(matches!(NgramClassifier::load(&path), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn duplicated_training_set_keeps_decisive_argmax() {
        let data: Vec<_> = (0..30)
            .map(|i| {
                let label = ["a", "b", "c"][i % 3];
                rec(label, &format!("{label}{} {label}{} shared{}", i % 4, i % 5, i % 2))
            })
            .collect();
        let doubled: Vec<_> = data.iter().chain(&data).cloned().collect();
        let once = train_multiclass(&data).unwrap();
        let twice = train_multiclass(&doubled).unwrap();
        for text in ["a1 a2 shared0", "b3 shared1", "c0 c4 c1", "shared0 a3 b3 b2"] {
            assert_eq!(
                crate::vsm::argmax(&once.predict_scores(text)),
                crate::vsm::argmax(&twice.predict_scores(text)),
                "{text}"
            );
        }
    }

    #[test]
    fn fixed_smoothing_can_flip_near_ties_under_duplication() {
        // With alpha fixed at 1, doubling every count halves the relative
        // weight of the smoothing, so a close decision can change sides.
        let data = [rec("b", "y y x"), rec("a", "y x x"), rec("a", "z z")];
        let doubled: Vec<_> = data.iter().chain(&data).cloned().collect();
        let once = train_multiclass(&data).unwrap().predict_scores("y");
        let twice = train_multiclass(&doubled).unwrap().predict_scores("y");
        assert_ne!(crate::vsm::argmax(&once), crate::vsm::argmax(&twice));
    }

    proptest! {
        #[test]
        fn scores_form_a_distribution(
            docs in proptest::collection::vec(("[abc]", proptest::collection::vec("[a-f]", 0..8)), 3..20),
            query in proptest::collection::vec("[a-h]", 0..10),
        ) {
            let data: Vec<_> = docs.iter().map(|(l, w)| rec(l, &w.join(" "))).collect();
            prop_assume!(data.iter().any(|r| r.label != data[0].label));
            let model = train_multiclass(&data).unwrap();
            let scores = model.predict_scores(&query.join(" "));
            prop_assert_eq!(scores.len(), model.labels().len());
            prop_assert!(scores.iter().all(|&s| s >= 0.0));
            prop_assert!((scores.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}
