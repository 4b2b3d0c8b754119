//! Repeatable experiments over synthetic families, accuracy scoring and
//! cross-validation.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attribute::{
    attribute, attribute_bleu_ter, AttributeOptions, AttributionResult, Method,
};
use crate::classify::{
    cross_validate, cross_validate_with, LabeledResponse, NaiveBayes, OneVsAll, Vote,
};
use crate::corpus::{sample_queries, QueryCorpus};
use crate::exec::Execution;
use crate::interrogator::{
    InterrogationConfig, Interrogator, ModelKind, RetryPolicy, TranscriptStore,
};
use crate::seed::{repetition_seed, SeedBuilder};
use crate::simnet::{lexicon, serve, FamilySpec, FamilyTemplate, SyntheticFamily};
use crate::{Error, Result, VERSION};

/// Synthetic query pools: each dataset has its own topical word list from
/// which most words of its texts are drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusSpec {
    pub datasets: usize,
    pub texts_per_dataset: usize,
    pub words_per_text: usize,
    pub per_dataset: usize,
    pub topic_words: usize,
    pub topic_share: f64,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            datasets: 10,
            texts_per_dataset: 20,
            words_per_text: 12,
            per_dataset: 9,
            topic_words: 60,
            topic_share: 0.7,
            seed: 0,
        }
    }
}

impl CorpusSpec {
    pub fn pools(&self) -> Result<Vec<(String, Vec<String>)>> {
        if self.datasets == 0 || self.words_per_text == 0 {
            return Err(Error::invalid("corpus needs datasets and non-empty texts"));
        }
        if self.topic_words == 0 || self.topic_words > lexicon::REGION_SIZE {
            return Err(Error::invalid("topic_words out of range"));
        }
        if !(0.0..=1.0).contains(&self.topic_share) {
            return Err(Error::invalid("topic_share outside [0, 1]"));
        }
        Ok((0..self.datasets)
            .map(|d| {
                let id = format!("ds-{d:02}");
                let mut rng = SeedBuilder::new("pool").u64(self.seed).str(&id).rng();
                let topic = index::sample(&mut rng, lexicon::REGION_SIZE, self.topic_words).into_vec();
                let texts = (0..self.texts_per_dataset)
                    .map(|_| {
                        let words: Vec<String> = (0..self.words_per_text)
                            .map(|_| {
                                let w = if rng.gen_bool(self.topic_share) {
                                    topic[rng.gen_range(0..topic.len())]
                                } else {
                                    rng.gen_range(0..lexicon::REGION_SIZE)
                                };
                                lexicon::word(w)
                            })
                            .collect();
                        let mut text = words.join(" ");
                        text[..1].make_ascii_uppercase();
                        text.push('?');
                        text
                    })
                    .collect();
                (id, texts)
            })
            .collect())
    }

    pub fn build(&self) -> Result<QueryCorpus> {
        sample_queries(&self.pools()?, self.per_dataset, self.seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilySource {
    /// A fresh family per repetition, seeded by the repetition seed.
    Template(FamilyTemplate),
    /// The same family in every repetition.
    Fixed(FamilySpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub family: FamilySource,
    pub corpus: CorpusSpec,
    pub methods: Vec<Method>,
    pub repetitions: usize,
    pub master_seed: u64,
    pub interrogation: InterrogationConfig,
    pub retry: RetryPolicy,
    /// Concurrent requests per repetition.
    pub parallelism: usize,
    pub execution: Execution,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            family: FamilySource::Template(FamilyTemplate::default()),
            corpus: CorpusSpec::default(),
            methods: Method::ALL.to_vec(),
            repetitions: 10,
            master_seed: 0,
            interrogation: InterrogationConfig::default(),
            retry: RetryPolicy::default(),
            parallelism: 8,
            execution: Execution::Parallel,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.repetitions == 0 {
            return Err(Error::invalid("repetitions must be at least 1"));
        }
        if self.methods.is_empty() {
            return Err(Error::invalid("no methods configured"));
        }
        if self.parallelism == 0 {
            return Err(Error::invalid("parallelism must be at least 1"));
        }
        if self.interrogation.max_tokens == 0 {
            return Err(Error::invalid("max_tokens must be at least 1"));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodOutcome {
    pub method: Method,
    pub accuracy: f64,
    /// Accuracy over children that have a parent among the bases.
    pub non_orphan_accuracy: Option<f64>,
    pub result: AttributionResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepetitionReport {
    pub index: usize,
    pub seed: u64,
    pub ground_truth: BTreeMap<String, Option<String>>,
    pub queries_sent: usize,
    pub outcomes: Vec<MethodOutcome>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracySummary {
    pub method: Method,
    pub runs: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub non_orphan_mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub version: String,
    pub config: ExperimentConfig,
    pub corpus_hash: String,
    pub repetitions: Vec<RepetitionReport>,
    pub summary: Vec<AccuracySummary>,
    /// Interrogations that reached the network, over all repetitions.
    pub query_budget: usize,
    /// Set when at least one repetition aborted.
    pub partial: bool,
}

impl ExperimentReport {
    pub fn summary_for(&self, method: Method) -> Option<&AccuracySummary> {
        self.summary.iter().find(|s| s.method == method)
    }

    /// Pretty JSON with a trailing newline.
    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("report serializes");
        text.push('\n');
        text
    }
}

/// Share of fine-tuned models paired with their true parent; orphans count
/// only when left unpaired.
pub fn score_pairing(
    result: &AttributionResult,
    ground_truth: &BTreeMap<String, Option<String>>,
) -> Result<f64> {
    if ground_truth.is_empty() {
        return Err(Error::invalid("empty ground truth"));
    }
    let mut correct = 0;
    for (ft, parent) in ground_truth {
        let pair = result
            .pairs
            .get(ft)
            .ok_or_else(|| Error::invalid(format!("result has no pairing for `{ft}`")))?;
        if pair == parent {
            correct += 1;
        }
    }
    Ok(correct as f64 / ground_truth.len() as f64)
}

fn non_orphan_accuracy(
    result: &AttributionResult,
    ground_truth: &BTreeMap<String, Option<String>>,
) -> Result<Option<f64>> {
    let parented: BTreeMap<String, Option<String>> = ground_truth
        .iter()
        .filter(|(_, p)| p.is_some())
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();
    if parented.is_empty() {
        return Ok(None);
    }
    score_pairing(result, &parented).map(Some)
}

/// Attribution outcomes for every configured method over one collected
/// store.
pub fn evaluate_methods(
    methods: &[Method],
    store: &TranscriptStore,
    corpus: &QueryCorpus,
    ground_truth: &BTreeMap<String, Option<String>>,
    options: &AttributeOptions,
) -> Result<Vec<MethodOutcome>> {
    let base = store.of_kind(ModelKind::Base);
    let ft = store.of_kind(ModelKind::Finetuned);
    let translation = if methods.contains(&Method::Bleu) || methods.contains(&Method::Ter) {
        Some(attribute_bleu_ter(&base, &ft, corpus, options)?)
    } else {
        None
    };
    methods
        .iter()
        .map(|&method| {
            let result = match (&translation, method) {
                (Some((b, _)), Method::Bleu) => b.clone(),
                (Some((_, t)), Method::Ter) => t.clone(),
                _ => attribute(method, &base, &ft, corpus, options)?,
            };
            Ok(MethodOutcome {
                method,
                accuracy: score_pairing(&result, ground_truth)?,
                non_orphan_accuracy: non_orphan_accuracy(&result, ground_truth)?,
                result,
            })
        })
        .collect()
}

fn run_repetition(
    config: &ExperimentConfig,
    corpus: &QueryCorpus,
    index: usize,
) -> RepetitionReport {
    let seed = repetition_seed(config.master_seed, index);
    let mut report = RepetitionReport {
        index,
        seed,
        ground_truth: BTreeMap::new(),
        queries_sent: 0,
        outcomes: Vec::new(),
        error: None,
    };
    if let Err(e) = repetition_body(config, corpus, seed, &mut report) {
        report.error = Some(e.to_string());
    }
    report
}

fn repetition_body(
    config: &ExperimentConfig,
    corpus: &QueryCorpus,
    seed: u64,
    report: &mut RepetitionReport,
) -> Result<()> {
    let spec = match &config.family {
        FamilySource::Template(t) => t.instantiate(seed)?,
        FamilySource::Fixed(spec) => spec.clone(),
    };
    let family = Arc::new(SyntheticFamily::from_spec(&spec)?);
    report.ground_truth = family.ground_truth().clone();

    let interrogation = InterrogationConfig {
        seed: SeedBuilder::new("interrogation")
            .u64(config.interrogation.seed)
            .u64(seed)
            .finish(),
        ..config.interrogation.clone()
    };
    let store = {
        let server = serve(Arc::clone(&family), "127.0.0.1:0")?;
        let interrogator = Interrogator::new(interrogation, config.retry);
        let store = interrogator.interrogate_all(&server.endpoints(), corpus, config.parallelism)?;
        report.queries_sent = interrogator.queries_sent();
        store
    };
    let options = AttributeOptions {
        swap_ref_hyp: false,
        execution: config.execution,
        seed,
    };
    report.outcomes = evaluate_methods(&config.methods, &store, corpus, &report.ground_truth, &options)?;
    Ok(())
}

/// Runs every repetition: build the family, serve it over HTTP, interrogate
/// every model, attribute with each method and score against ground truth.
/// A failing repetition is recorded and flags the report as partial.
pub fn run_simulation(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let corpus = config.corpus.build()?;
    let repetitions = config
        .execution
        .map_range(config.repetitions, |i| run_repetition(config, &corpus, i));

    let summary = config
        .methods
        .iter()
        .map(|&method| {
            let outcomes: Vec<&MethodOutcome> = repetitions
                .iter()
                .flat_map(|r| r.outcomes.iter().filter(|o| o.method == method))
                .collect();
            let acc: Vec<f64> = outcomes.iter().map(|o| o.accuracy).collect();
            let non_orphan: Vec<f64> = outcomes.iter().filter_map(|o| o.non_orphan_accuracy).collect();
            let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
            AccuracySummary {
                method,
                runs: acc.len(),
                mean: mean(&acc).unwrap_or(0.0),
                min: acc.iter().copied().reduce(f64::min).unwrap_or(0.0),
                max: acc.iter().copied().reduce(f64::max).unwrap_or(0.0),
                non_orphan_mean: mean(&non_orphan),
            }
        })
        .collect();

    Ok(ExperimentReport {
        version: VERSION.to_string(),
        config: config.clone(),
        corpus_hash: corpus.content_hash(),
        query_budget: repetitions.iter().map(|r| r.queries_sent).sum(),
        partial: repetitions.iter().any(|r| r.error.is_some()),
        repetitions,
        summary,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CvBackend {
    Multiclass,
    OneVsAll,
}

impl FromStr for CvBackend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multiclass" => Ok(CvBackend::Multiclass),
            "ova" | "one_vs_all" => Ok(CvBackend::OneVsAll),
            other => Err(Error::invalid(format!("unknown cv backend `{other}`"))),
        }
    }
}

/// Labeled dataset of a store: one record per non-failed response, label =
/// model id.
pub fn labeled_records(store: &TranscriptStore) -> Vec<LabeledResponse> {
    store
        .records()
        .filter(|r| !r.failed)
        .map(|r| LabeledResponse {
            label: r.model_id.clone(),
            text: r.response_text.clone(),
            query_id: r.query_id.clone(),
        })
        .collect()
}

/// Stratified k-fold accuracy of predicting which model wrote a response.
/// The one-vs-all backend counts an abstention as wrong.
pub fn run_cv(store: &TranscriptStore, k: usize, seed: u64, backend: CvBackend) -> Result<f64> {
    let data = labeled_records(store);
    match backend {
        CvBackend::Multiclass => cross_validate(&data, k, seed),
        CvBackend::OneVsAll => {
            let labels: Vec<String> = data
                .iter()
                .map(|r| r.label.clone())
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            if labels.len() < 2 {
                return Err(Error::invalid("cross-validation needs at least two labels"));
            }
            let idx = |label: &str| labels.iter().position(|l| l == label).expect("known label");
            cross_validate_with(&data, k, seed, |train, test| {
                let pairs: Vec<(usize, &str)> =
                    train.iter().map(|r| (idx(&r.label), r.text.as_str())).collect();
                let ova =
                    OneVsAll::train(&NaiveBayes::default(), labels.len(), &pairs, Execution::Parallel)?;
                Ok(test
                    .iter()
                    .filter(|r| ova.vote(&r.text) == Vote::Winner(idx(&r.label)))
                    .count())
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(pairs: &[(&str, Option<&str>)]) -> AttributionResult {
        AttributionResult {
            method: Method::OneVsAll,
            corpus_hash: String::new(),
            base_ids: Vec::new(),
            pairs: pairs
                .iter()
                .map(|(k, v)| (k.to_string(), v.map(str::to_string)))
                .collect(),
            evidence: BTreeMap::new(),
            seed: 0,
            versions: String::new(),
        }
    }

    fn truth(n: usize) -> BTreeMap<String, Option<String>> {
        (0..n).map(|i| (format!("f{i:02}"), Some(format!("b{i:02}")))).collect()
    }

    #[test]
    fn pairing_accuracy() {
        let t = truth(12);
        let ids: Vec<(String, String)> = (0..12).map(|i| (format!("f{i:02}"), format!("b{i:02}"))).collect();
        let pairs = |right: &dyn Fn(usize) -> bool| -> Vec<(&str, Option<&str>)> {
            ids.iter()
                .enumerate()
                .map(|(i, (f, b))| (f.as_str(), Some(if right(i) { b.as_str() } else { "b99" })))
                .collect()
        };
        assert_eq!(score_pairing(&result(&pairs(&|_| true)), &t).unwrap(), 1.0);
        assert_eq!(score_pairing(&result(&pairs(&|i| i % 2 == 0)), &t).unwrap(), 0.5);
        assert_eq!(score_pairing(&result(&pairs(&|_| false)), &t).unwrap(), 0.0);
        assert!(score_pairing(&result(&pairs(&|_| true)[..3]), &t).is_err());
    }

    #[test]
    fn orphans_need_none() {
        let mut t = truth(2);
        t.insert("orphan".into(), None);
        let r = result(&[("f00", Some("b00")), ("f01", Some("b01")), ("orphan", None)]);
        assert_eq!(score_pairing(&r, &t).unwrap(), 1.0);
        assert_eq!(non_orphan_accuracy(&r, &t).unwrap(), Some(1.0));
        let r = result(&[("f00", Some("b00")), ("f01", Some("b00")), ("orphan", Some("b01"))]);
        assert!((score_pairing(&r, &t).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(non_orphan_accuracy(&r, &t).unwrap(), Some(0.5));
    }

    #[test]
    fn synthetic_corpus() {
        let spec = CorpusSpec::default();
        let corpus = spec.build().unwrap();
        assert_eq!(corpus.num_queries(), 90);
        assert_eq!(corpus.num_datasets(), 10);
        assert_eq!(corpus, spec.build().unwrap());
        assert!(corpus.queries()[0].text.ends_with('?'));
    }

    #[test]
    fn config_validation_and_defaults() {
        let config: ExperimentConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(config, ExperimentConfig::default());
        let bad = ExperimentConfig {
            repetitions: 0,
            ..Default::default()
        };
        assert!(run_simulation(&bad).is_err());
        let text = serde_json::to_string(&ExperimentConfig::default()).unwrap();
        assert_eq!(serde_json::from_str::<ExperimentConfig>(&text).unwrap(), ExperimentConfig::default());
    }
}
