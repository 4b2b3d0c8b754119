//! Interrogation queries and their dataset provenance.

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::seed::{digest_hex, SeedBuilder};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub id: String,
    #[serde(rename = "dataset")]
    pub dataset_id: String,
    pub text: String,
}

/// Ordered, validated list of queries. Immutable once built.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryCorpus {
    queries: Vec<Query>,
    num_datasets: usize,
}

impl QueryCorpus {
    /// Validates id uniqueness and non-blank texts.
    pub fn new(queries: Vec<Query>) -> Result<Self> {
        let mut ids = HashSet::with_capacity(queries.len());
        for query in &queries {
            if query.text.trim().is_empty() {
                return Err(Error::invalid(format!("query `{}` has empty text", query.id)));
            }
            if !ids.insert(query.id.as_str()) {
                return Err(Error::DuplicateId(query.id.clone()));
            }
        }
        let num_datasets = queries
            .iter()
            .map(|q| q.dataset_id.as_str())
            .collect::<BTreeSet<_>>()
            .len();
        Ok(QueryCorpus {
            queries,
            num_datasets,
        })
    }

    pub fn queries(&self) -> &[Query] {
        &self.queries
    }

    pub fn num_queries(&self) -> usize {
        self.queries.len()
    }

    pub fn num_datasets(&self) -> usize {
        self.num_datasets
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Query> {
        self.queries.iter().find(|q| q.id == id)
    }

    /// SHA-256 over the canonical JSON-lines encoding.
    pub fn content_hash(&self) -> String {
        let mut buf = Vec::new();
        for query in &self.queries {
            // Serializing a plain struct of strings cannot fail.
            serde_json::to_writer(&mut buf, query).expect("query serializes");
            buf.push(b'\n');
        }
        digest_hex(&buf)
    }
}

/// Topical breadth of a corpus: `100 * datasets / queries`.
pub fn compute_diversity(corpus: &QueryCorpus) -> Result<f64> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok(corpus.num_datasets() as f64 / corpus.num_queries() as f64 * 100.0)
}

/// Draws `per_dataset` texts without replacement from every pool.
///
/// Each dataset gets its own RNG stream keyed by `(seed, dataset_id)`, and
/// datasets are emitted in id order, so the result does not depend on the
/// order of `pools` and adding a dataset leaves the others untouched.
pub fn sample_queries(
    pools: &[(String, Vec<String>)],
    per_dataset: usize,
    seed: u64,
) -> Result<QueryCorpus> {
    if per_dataset == 0 {
        return Err(Error::invalid("per_dataset must be at least 1"));
    }
    let mut ordered: Vec<&(String, Vec<String>)> = pools.iter().collect();
    ordered.sort_by(|a, b| a.0.cmp(&b.0));

    let mut queries = Vec::with_capacity(per_dataset * pools.len());
    for (dataset_id, texts) in ordered {
        if texts.len() < per_dataset {
            return Err(Error::InsufficientPool {
                dataset: dataset_id.clone(),
                available: texts.len(),
                needed: per_dataset,
            });
        }
        let mut rng = SeedBuilder::new("sample_queries")
            .u64(seed)
            .str(dataset_id)
            .rng();
        for (k, pick) in index::sample(&mut rng, texts.len(), per_dataset)
            .into_iter()
            .enumerate()
        {
            queries.push(Query {
                id: format!("{dataset_id}-{k}"),
                dataset_id: dataset_id.clone(),
                text: texts[pick].clone(),
            });
        }
    }
    QueryCorpus::new(queries)
}

pub fn save_corpus(corpus: &QueryCorpus, path: &Path) -> Result<()> {
    let file = fs::File::create(path)
        .map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    let mut out = BufWriter::new(file);
    for query in corpus.queries() {
        serde_json::to_writer(&mut out, query)?;
        out.write_all(b"\n")
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    }
    out.flush()
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn load_corpus(path: &Path) -> Result<QueryCorpus> {
    let content = fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let mut queries = Vec::new();
    let mut seen = HashSet::new();
    for (n, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let query: Query = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            message: e.to_string(),
        })?;
        if !seen.insert(query.id.clone()) {
            return Err(Error::DuplicateId(query.id));
        }
        queries.push(query);
    }
    if queries.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    QueryCorpus::new(queries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pools(datasets: usize, size: usize) -> Vec<(String, Vec<String>)> {
        (0..datasets)
            .map(|d| {
                (
                    format!("ds{d}"),
                    (0..size).map(|i| format!("text {d} {i}")).collect(),
                )
            })
            .collect()
    }

    fn corpus_of(datasets: usize, queries: usize) -> QueryCorpus {
        QueryCorpus::new(
            (0..queries)
                .map(|i| Query {
                    id: format!("q{i}"),
                    dataset_id: format!("d{}", i % datasets),
                    text: format!("query {i}"),
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn diversity_examples() {
        // 10 / 90 * 100
        let d = compute_diversity(&corpus_of(10, 90)).unwrap();
        assert!((d - 100.0 / 9.0).abs() < 1e-12);
        let d = compute_diversity(&corpus_of(1, 90)).unwrap();
        assert!((d - 100.0 / 90.0).abs() < 1e-12);
        assert_eq!(compute_diversity(&corpus_of(90, 90)).unwrap(), 100.0);
    }

    #[test]
    fn diversity_of_empty_corpus_is_an_error() {
        let empty = QueryCorpus::new(Vec::new()).unwrap();
        let err = compute_diversity(&empty).unwrap_err();
        assert_eq!(err.to_string(), "empty corpus");
    }

    #[test]
    fn sampling_shape() {
        let corpus = sample_queries(&pools(10, 20), 9, 42).unwrap();
        assert_eq!(corpus.num_queries(), 90);
        assert_eq!(corpus.num_datasets(), 10);
        let d = compute_diversity(&corpus).unwrap();
        assert!((d - 11.111).abs() < 1e-3);
        assert!(corpus.queries().iter().any(|q| q.id == "ds3-8"));
    }

    #[test]
    fn sampling_full_pool_is_a_permutation() {
        let pool = pools(1, 7);
        let corpus = sample_queries(&pool, 7, 1).unwrap();
        let mut got: Vec<_> = corpus.queries().iter().map(|q| q.text.clone()).collect();
        got.sort();
        let mut want = pool[0].1.clone();
        want.sort();
        assert_eq!(got, want);
    }

    #[test]
    fn sampling_is_deterministic_and_order_free() {
        let mut pool = pools(5, 12);
        let a = sample_queries(&pool, 4, 9).unwrap();
        assert_eq!(a, sample_queries(&pool, 4, 9).unwrap());
        pool.reverse();
        assert_eq!(a, sample_queries(&pool, 4, 9).unwrap());
        assert_ne!(a, sample_queries(&pool, 4, 10).unwrap());
    }

    #[test]
    fn adding_a_dataset_does_not_perturb_others() {
        let small = sample_queries(&pools(3, 10), 4, 5).unwrap();
        let large = sample_queries(&pools(4, 10), 4, 5).unwrap();
        for q in small.queries() {
            assert_eq!(large.get(&q.id), Some(q));
        }
    }

    #[test]
    fn short_pool_names_dataset() {
        let mut pool = pools(3, 10);
        pool[1].1.truncate(2);
        let err = sample_queries(&pool, 3, 0).unwrap_err();
        assert!(err.to_string().contains("ds1"), "{err}");
    }

    #[test]
    fn file_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        let corpus = sample_queries(&pools(10, 9), 9, 3).unwrap();
        save_corpus(&corpus, &path).unwrap();
        assert_eq!(load_corpus(&path).unwrap(), corpus);

        fs::write(&path, "").unwrap();
        assert_eq!(load_corpus(&path).unwrap_err().to_string(), "empty corpus");

        let line = r#"{"id":"a","dataset":"d","text":"t"}"#;
        fs::write(&path, format!("{line}\n{line}\n")).unwrap();
        assert!(matches!(load_corpus(&path), Err(Error::DuplicateId(id)) if id == "a"));

        fs::write(&path, format!("{line}\nnot json\n")).unwrap();
        assert!(matches!(load_corpus(&path), Err(Error::Parse { line: 2, .. })));
    }

    proptest! {
        #[test]
        fn diversity_bounds_and_halving(datasets in 1usize..20, extra in 0usize..40) {
            let corpus = corpus_of(datasets, datasets + extra);
            let d = compute_diversity(&corpus).unwrap();
            prop_assert!(d > 0.0 && d <= 100.0);

            let mut doubled = corpus.queries().to_vec();
            doubled.extend(corpus.queries().iter().map(|q| Query {
                id: format!("{}-dup", q.id),
                ..q.clone()
            }));
            let halved = compute_diversity(&QueryCorpus::new(doubled).unwrap()).unwrap();
            prop_assert!((halved * 2.0 - d).abs() < 1e-9);
        }
    }
}
