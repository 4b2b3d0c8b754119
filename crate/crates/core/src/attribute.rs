//! The four attribution strategies.
//!
//! Each consumes a base-model store and a fine-tuned store covering the
//! same corpus and pairs every fine-tuned model with at most one base.
//! Bases are ordered by id; every evidence vector follows that order and
//! ties always go to the lowest index. Failed transcript cells are skipped.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::classify::{ClassifierBackend, NaiveBayes, OneVsAll, TextClassifier, Vote, DEFAULT_EPOCHS};
use crate::corpus::QueryCorpus;
use crate::exec::Execution;
use crate::interrogator::TranscriptStore;
use crate::textmetrics::{bleu, ter, tokenize, TokenSequence};
use crate::vsm::{argmax, build_index, ResponseDocument};
use crate::{Error, Result, VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Bleu,
    Ter,
    Vsm,
    Multiclass,
    OneVsAll,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Bleu,
        Method::Ter,
        Method::Vsm,
        Method::Multiclass,
        Method::OneVsAll,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Bleu => "bleu",
            Method::Ter => "ter",
            Method::Vsm => "vsm",
            Method::Multiclass => "multiclass",
            Method::OneVsAll => "one_vs_all",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bleu" => Ok(Method::Bleu),
            "ter" => Ok(Method::Ter),
            "vsm" => Ok(Method::Vsm),
            "multiclass" => Ok(Method::Multiclass),
            "ova" | "one_vs_all" => Ok(Method::OneVsAll),
            other => Err(Error::invalid(format!("unknown method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Bleu,
    Ter,
    Cosine,
    ClassifierScore,
}

/// Per-query scores of one (fine-tuned, base) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreCell {
    pub scores: Vec<f64>,
    pub mean: Option<f64>,
}

impl ScoreCell {
    fn new(scores: Vec<f64>) -> Self {
        let mean = (!scores.is_empty()).then(|| scores.iter().sum::<f64>() / scores.len() as f64);
        ScoreCell { scores, mean }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreMatrix {
    pub fine_tuned_ids: Vec<String>,
    pub base_ids: Vec<String>,
    pub metric: Metric,
    /// `cells[ft][base]`.
    pub cells: Vec<Vec<ScoreCell>>,
}

impl ScoreMatrix {
    pub fn means(&self, ft: usize) -> Vec<Option<f64>> {
        self.cells[ft].iter().map(|c| c.mean).collect()
    }
}

/// Per-query one-vs-all decisions for one fine-tuned model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteHistogram {
    pub winners: Vec<Vote>,
    pub counts: Vec<usize>,
    pub abstentions: usize,
    pub mode: Vote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Evidence {
    /// One value per base; `null` where no query could be scored.
    Scores {
        metric: Metric,
        values: Vec<Option<f64>>,
    },
    Votes(VoteHistogram),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionResult {
    pub method: Method,
    pub corpus_hash: String,
    pub base_ids: Vec<String>,
    pub pairs: BTreeMap<String, Option<String>>,
    pub evidence: BTreeMap<String, Evidence>,
    pub seed: u64,
    pub versions: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttributeOptions {
    /// Use base responses as BLEU/TER references instead of fine-tuned ones.
    pub swap_ref_hyp: bool,
    pub execution: Execution,
    /// Recorded in reports; the strategies themselves are deterministic.
    pub seed: u64,
}

/// Responses of every model of a store over the corpus, `None` for failed
/// cells.
struct Grid {
    ids: Vec<String>,
    cells: Vec<Vec<Option<String>>>,
}

impl Grid {
    fn new(store: &TranscriptStore, corpus: &QueryCorpus, what: &str) -> Result<Grid> {
        let ids = store.model_ids(None);
        if ids.is_empty() {
            return Err(Error::invalid(format!("no {what} transcripts")));
        }
        let cells = ids
            .iter()
            .map(|id| {
                corpus
                    .queries()
                    .iter()
                    .map(|q| match store.get(id, &q.id) {
                        None => Err(Error::invalid(format!("no transcript for {id}/{}", q.id))),
                        Some(r) if r.failed => Ok(None),
                        Some(r) => Ok(Some(r.response_text.clone())),
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Grid { ids, cells })
    }

    fn responses(&self, model: usize) -> impl Iterator<Item = &str> {
        self.cells[model].iter().flatten().map(String::as_str)
    }
}

struct Prepared {
    base: Grid,
    ft: Grid,
    corpus_hash: String,
}

fn prepare(base: &TranscriptStore, ft: &TranscriptStore, corpus: &QueryCorpus) -> Result<Prepared> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok(Prepared {
        base: Grid::new(base, corpus, "base")?,
        ft: Grid::new(ft, corpus, "fine-tuned")?,
        corpus_hash: corpus.content_hash(),
    })
}

impl Prepared {
    fn result(
        &self,
        method: Method,
        pairs: Vec<Option<usize>>,
        evidence: Vec<Evidence>,
        seed: u64,
    ) -> AttributionResult {
        AttributionResult {
            method,
            corpus_hash: self.corpus_hash.clone(),
            base_ids: self.base.ids.clone(),
            pairs: self
                .ft
                .ids
                .iter()
                .zip(pairs)
                .map(|(f, p)| (f.clone(), p.map(|b| self.base.ids[b].clone())))
                .collect(),
            evidence: self.ft.ids.iter().cloned().zip(evidence).collect(),
            seed,
            versions: VERSION.to_string(),
        }
    }
}

fn extreme(values: &[Option<f64>], maximize: bool) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, v) in values.iter().enumerate() {
        let Some(v) = *v else { continue };
        let better = match best.and_then(|b| values[b]) {
            None => true,
            Some(b) if maximize => v > b,
            Some(b) => v < b,
        };
        if better {
            best = Some(i);
        }
    }
    best
}

/// BLEU and TER score matrices over the (fine-tuned, base, query) grid.
/// A query is skipped for a pair when either side failed or the reference
/// is empty.
pub fn score_matrices(
    base: &TranscriptStore,
    ft: &TranscriptStore,
    corpus: &QueryCorpus,
    options: &AttributeOptions,
) -> Result<(ScoreMatrix, ScoreMatrix)> {
    let prep = prepare(base, ft, corpus)?;
    Ok(matrices(&prep, options))
}

fn matrices(prep: &Prepared, options: &AttributeOptions) -> (ScoreMatrix, ScoreMatrix) {
    let tokens = |grid: &Grid| -> Vec<Vec<Option<TokenSequence>>> {
        grid.cells
            .iter()
            .map(|row| row.iter().map(|c| c.as_deref().map(tokenize)).collect())
            .collect()
    };
    let (base_tok, ft_tok) = (tokens(&prep.base), tokens(&prep.ft));
    let nb = prep.base.ids.len();

    let cells = options.execution.map_range(prep.ft.ids.len() * nb, |i| {
        let (f, b) = (i / nb, i % nb);
        let (mut bleus, mut ters) = (Vec::new(), Vec::new());
        for (ft_resp, base_resp) in ft_tok[f].iter().zip(&base_tok[b]) {
            let (Some(ft_resp), Some(base_resp)) = (ft_resp, base_resp) else {
                continue;
            };
            let (reference, hypothesis) = if options.swap_ref_hyp {
                (base_resp, ft_resp)
            } else {
                (ft_resp, base_resp)
            };
            if reference.is_empty() {
                continue;
            }
            bleus.push(bleu(reference, hypothesis).expect("non-empty reference").score);
            ters.push(ter(reference, hypothesis).expect("non-empty reference").score);
        }
        (ScoreCell::new(bleus), ScoreCell::new(ters))
    });

    let mut bleu_cells = vec![Vec::with_capacity(nb); prep.ft.ids.len()];
    let mut ter_cells = bleu_cells.clone();
    for (i, (b, t)) in cells.into_iter().enumerate() {
        bleu_cells[i / nb].push(b);
        ter_cells[i / nb].push(t);
    }
    let matrix = |metric, cells| ScoreMatrix {
        fine_tuned_ids: prep.ft.ids.clone(),
        base_ids: prep.base.ids.clone(),
        metric,
        cells,
    };
    (matrix(Metric::Bleu, bleu_cells), matrix(Metric::Ter, ter_cells))
}

/// Pairs each fine-tuned model with the base of highest mean BLEU and,
/// separately, lowest mean TER. Fine-tuned responses are the references
/// unless `swap_ref_hyp` is set.
pub fn attribute_bleu_ter(
    base: &TranscriptStore,
    ft: &TranscriptStore,
    corpus: &QueryCorpus,
    options: &AttributeOptions,
) -> Result<(AttributionResult, AttributionResult)> {
    let prep = prepare(base, ft, corpus)?;
    let (bleu_m, ter_m) = matrices(&prep, options);
    let decide = |m: &ScoreMatrix, maximize: bool, method| -> Result<AttributionResult> {
        let mut pairs = Vec::new();
        let mut evidence = Vec::new();
        for (f, id) in prep.ft.ids.iter().enumerate() {
            let means = m.means(f);
            let best = extreme(&means, maximize)
                .ok_or_else(|| Error::invalid(format!("no scored queries for `{id}`")))?;
            pairs.push(Some(best));
            evidence.push(Evidence::Scores {
                metric: m.metric,
                values: means,
            });
        }
        Ok(prep.result(method, pairs, evidence, options.seed))
    };
    Ok((
        decide(&bleu_m, true, Method::Bleu)?,
        decide(&ter_m, false, Method::Ter)?,
    ))
}

/// Averages one score vector per scored query of each fine-tuned model and
/// pairs with the argmax.
fn average_and_pick<F>(
    prep: &Prepared,
    method: Method,
    metric: Metric,
    options: &AttributeOptions,
    score: F,
) -> Result<AttributionResult>
where
    F: Fn(&str) -> Vec<f64> + Sync + Send,
{
    let nb = prep.base.ids.len();
    let averaged = options.execution.map_range(prep.ft.ids.len(), |f| {
        let mut sum = vec![0.0; nb];
        let mut count = 0usize;
        for text in prep.ft.responses(f) {
            for (s, v) in sum.iter_mut().zip(score(text)) {
                *s += v;
            }
            count += 1;
        }
        (count > 0).then(|| sum.into_iter().map(|s| s / count as f64).collect::<Vec<f64>>())
    });
    let mut pairs = Vec::new();
    let mut evidence = Vec::new();
    for (f, avg) in averaged.into_iter().enumerate() {
        let avg = avg.ok_or_else(|| {
            Error::invalid(format!("no scored queries for `{}`", prep.ft.ids[f]))
        })?;
        pairs.push(argmax(&avg));
        evidence.push(Evidence::Scores {
            metric,
            values: avg.into_iter().map(Some).collect(),
        });
    }
    Ok(prep.result(method, pairs, evidence, options.seed))
}

/// TF-IDF over one concatenated document per base; each fine-tuned model
/// pairs with the base of highest mean cosine.
pub fn attribute_vsm(
    base: &TranscriptStore,
    ft: &TranscriptStore,
    corpus: &QueryCorpus,
    options: &AttributeOptions,
) -> Result<AttributionResult> {
    let prep = prepare(base, ft, corpus)?;
    let docs: Vec<ResponseDocument> = prep
        .base
        .ids
        .iter()
        .enumerate()
        .map(|(b, id)| ResponseDocument::from_responses(id.clone(), prep.base.responses(b)))
        .collect();
    let index = build_index(&docs)?;
    average_and_pick(&prep, Method::Vsm, Metric::Cosine, options, |t| {
        index.compute_sim(t)
    })
}

fn training_pairs(prep: &Prepared) -> Result<Vec<(usize, &str)>> {
    let mut data = Vec::new();
    for (b, id) in prep.base.ids.iter().enumerate() {
        let before = data.len();
        data.extend(prep.base.responses(b).map(|t| (b, t)));
        if data.len() == before {
            return Err(Error::invalid(format!("base `{id}` has no usable responses")));
        }
    }
    Ok(data)
}

/// Multiclass classifier trained on base responses (label = base id); each
/// fine-tuned model pairs with the argmax of its mean posterior.
pub fn attribute_multiclass(
    base: &TranscriptStore,
    ft: &TranscriptStore,
    corpus: &QueryCorpus,
    options: &AttributeOptions,
) -> Result<AttributionResult> {
    let prep = prepare(base, ft, corpus)?;
    if prep.base.ids.len() < 2 {
        return Err(Error::invalid("multiclass attribution needs at least two bases"));
    }
    let data = training_pairs(&prep)?;
    let model = NaiveBayes::default().fit(&prep.base.ids, &data, DEFAULT_EPOCHS)?;
    average_and_pick(
        &prep,
        Method::Multiclass,
        Metric::ClassifierScore,
        options,
        |t| model.predict_scores(t),
    )
}

/// One binary classifier per base. Each query votes for the base whose
/// classifier accepts with the highest positive probability, or abstains
/// when all reject; the most frequent vote decides, and a majority of
/// abstentions leaves the model unpaired.
pub fn attribute_one_vs_all(
    base: &TranscriptStore,
    ft: &TranscriptStore,
    corpus: &QueryCorpus,
    options: &AttributeOptions,
) -> Result<AttributionResult> {
    let prep = prepare(base, ft, corpus)?;
    if prep.base.ids.len() < 2 {
        return Err(Error::invalid("one-vs-all attribution needs at least two bases"));
    }
    let nb = prep.base.ids.len();
    let data = training_pairs(&prep)?;
    let ova = OneVsAll::train(&NaiveBayes::default(), nb, &data, options.execution)?;
    let histograms = options.execution.map_range(prep.ft.ids.len(), |f| {
        let winners: Vec<Vote> = prep.ft.responses(f).map(|t| ova.vote(t)).collect();
        let (mode, counts, abstentions) = Vote::mode(&winners, nb);
        VoteHistogram {
            winners,
            counts,
            abstentions,
            mode: mode.map_or(Vote::Abstain, Vote::Winner),
        }
    });
    let pairs = histograms
        .iter()
        .map(|h| match h.mode {
            Vote::Winner(b) => Some(b),
            Vote::Abstain => None,
        })
        .collect();
    let evidence = histograms.into_iter().map(Evidence::Votes).collect();
    Ok(prep.result(Method::OneVsAll, pairs, evidence, options.seed))
}

/// Runs `method`. BLEU and TER share one grid computation; use
/// [`attribute_bleu_ter`] when both are wanted.
pub fn attribute(
    method: Method,
    base: &TranscriptStore,
    ft: &TranscriptStore,
    corpus: &QueryCorpus,
    options: &AttributeOptions,
) -> Result<AttributionResult> {
    match method {
        Method::Bleu => Ok(attribute_bleu_ter(base, ft, corpus, options)?.0),
        Method::Ter => Ok(attribute_bleu_ter(base, ft, corpus, options)?.1),
        Method::Vsm => attribute_vsm(base, ft, corpus, options),
        Method::Multiclass => attribute_multiclass(base, ft, corpus, options),
        Method::OneVsAll => attribute_one_vs_all(base, ft, corpus, options),
    }
}

/// Checks that the pairing of every fine-tuned model is the extreme of its
/// own evidence and that only one-vs-all leaves models unpaired.
pub fn check_consistency(result: &AttributionResult) -> Result<()> {
    for (ft, pair) in &result.pairs {
        let evidence = result
            .evidence
            .get(ft)
            .ok_or_else(|| Error::invalid(format!("no evidence for `{ft}`")))?;
        let expected = match evidence {
            Evidence::Scores { values, .. } => {
                if values.len() != result.base_ids.len() {
                    return Err(Error::invalid(format!("evidence length mismatch for `{ft}`")));
                }
                extreme(values, result.method != Method::Ter)
            }
            Evidence::Votes(h) => match h.mode {
                Vote::Winner(b) => Some(b),
                Vote::Abstain => None,
            },
        };
        let expected = expected.map(|b| result.base_ids[b].clone());
        if &expected != pair {
            return Err(Error::invalid(format!("pairing of `{ft}` disagrees with its evidence")));
        }
        if pair.is_none() && result.method != Method::OneVsAll {
            return Err(Error::invalid(format!("`{ft}` unpaired by {}", result.method)));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Query;
    use crate::interrogator::{ModelKind, TranscriptRecord};
    use chrono::DateTime;

    fn corpus(n: usize) -> QueryCorpus {
        QueryCorpus::new(
            (0..n)
                .map(|i| Query {
                    id: format!("q{i}"),
                    dataset_id: "d".into(),
                    text: format!("prompt {i}"),
                })
                .collect(),
        )
        .unwrap()
    }

    fn store(kind: ModelKind, models: &[(&str, &[&str])]) -> TranscriptStore {
        let mut records = Vec::new();
        for (id, responses) in models {
            for (i, text) in responses.iter().enumerate() {
                records.push(TranscriptRecord {
                    model_id: id.to_string(),
                    model_kind: kind,
                    query_id: format!("q{i}"),
                    query_text: format!("prompt {i}"),
                    response_text: text.to_string(),
                    latency_ms: 0,
                    timestamp: DateTime::UNIX_EPOCH,
                    failed: *text == "FAILED",
                    reason: None,
                });
            }
        }
        TranscriptStore::from_records(records).unwrap()
    }

    fn opts() -> AttributeOptions {
        AttributeOptions::default()
    }

    #[test]
    fn identical_children_pair_with_parents() {
        let a: &[&str] = &["alpha beta gamma delta", "beta beta gamma alpha"];
        let b: &[&str] = &["one two three four", "four three two one"];
        let base = store(ModelKind::Base, &[("a", a), ("b", b)]);
        let ft = store(ModelKind::Finetuned, &[("x", b), ("y", a), ("z", a)]);
        let c = corpus(2);
        let (bl, tr) = attribute_bleu_ter(&base, &ft, &c, &opts()).unwrap();
        for r in [&bl, &tr] {
            assert_eq!(r.pairs["x"].as_deref(), Some("b"));
            assert_eq!(r.pairs["y"].as_deref(), Some("a"));
            assert_eq!(r.pairs["z"].as_deref(), Some("a"));
            check_consistency(r).unwrap();
        }
        let Evidence::Scores { values, .. } = &bl.evidence["y"] else { panic!() };
        assert_eq!(values[0], Some(1.0));
        let Evidence::Scores { values, .. } = &tr.evidence["y"] else { panic!() };
        assert_eq!(values[0], Some(0.0));

        for m in [Method::Vsm, Method::Multiclass, Method::OneVsAll] {
            let r = attribute(m, &base, &ft, &c, &opts()).unwrap();
            assert_eq!(r.pairs["x"].as_deref(), Some("b"), "{m}");
            assert_eq!(r.pairs["z"].as_deref(), Some("a"), "{m}");
            check_consistency(&r).unwrap();
        }
    }

    #[test]
    fn failed_cells_are_skipped() {
        let base = store(ModelKind::Base, &[("a", &["p q r", "FAILED"]), ("b", &["s t u", "v w"])]);
        let ft = store(ModelKind::Finetuned, &[("x", &["p q r", "v w"])]);
        let (m, _) = score_matrices(&base, &ft, &corpus(2), &opts()).unwrap();
        assert_eq!(m.cells[0][0].scores.len(), 1);
        assert_eq!(m.cells[0][1].scores.len(), 2);

        let all_failed = store(ModelKind::Finetuned, &[("x", &["FAILED", "FAILED"])]);
        assert!(attribute_bleu_ter(&base, &all_failed, &corpus(2), &opts()).is_err());
    }

    #[test]
    fn missing_transcript_is_an_error() {
        let base = store(ModelKind::Base, &[("a", &["p"])]);
        let ft = store(ModelKind::Finetuned, &[("x", &["p", "q"])]);
        assert!(attribute_vsm(&base, &ft, &corpus(2), &opts()).is_err());
    }

    #[test]
    fn single_base_takes_everything() {
        let base = store(ModelKind::Base, &[("only", &["a b c"])]);
        let ft = store(ModelKind::Finetuned, &[("x", &["z z"]), ("y", &["a"])]);
        let r = attribute_vsm(&base, &ft, &corpus(1), &opts()).unwrap();
        assert!(r.pairs.values().all(|p| p.as_deref() == Some("only")));
    }

    #[test]
    fn empty_children_get_the_prior_argmax() {
        let base = store(ModelKind::Base, &[("a", &["p q", "r s"]), ("b", &["t u", "v w"])]);
        let ft = store(ModelKind::Finetuned, &[("x", &["", ""])]);
        let r = attribute_multiclass(&base, &ft, &corpus(2), &opts()).unwrap();
        assert_eq!(r.pairs["x"].as_deref(), Some("a"));
        let Evidence::Scores { values, .. } = &r.evidence["x"] else { panic!() };
        assert_eq!(values, &[Some(0.5), Some(0.5)]);
    }

    #[test]
    fn unknown_vocabulary_abstains() {
        let base = store(
            ModelKind::Base,
            &[("a", &["p q", "p r"]), ("b", &["t u", "t w"]), ("c", &["k l", "k m"])],
        );
        let ft = store(ModelKind::Finetuned, &[("x", &["zz yy", "xx ww"])]);
        let r = attribute_one_vs_all(&base, &ft, &corpus(2), &opts()).unwrap();
        assert_eq!(r.pairs["x"], None);
        check_consistency(&r).unwrap();
    }

    #[test]
    fn sequential_and_parallel_agree() {
        let base = store(ModelKind::Base, &[("a", &["p q r", "s t"]), ("b", &["s t u", "v w"])]);
        let ft = store(ModelKind::Finetuned, &[("x", &["p q", "v w x"]), ("y", &["u", "t s"])]);
        let c = corpus(2);
        let seq = AttributeOptions {
            execution: Execution::Sequential,
            ..opts()
        };
        for m in Method::ALL {
            assert_eq!(
                attribute(m, &base, &ft, &c, &seq).unwrap(),
                attribute(m, &base, &ft, &c, &opts()).unwrap()
            );
        }
    }

    #[test]
    fn method_names() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert_eq!("ova".parse::<Method>().unwrap(), Method::OneVsAll);
        assert!("nope".parse::<Method>().is_err());
    }

    #[test]
    fn report_json_has_stable_keys() {
        let base = store(ModelKind::Base, &[("a", &["p q"]), ("b", &["r s"])]);
        let ft = store(ModelKind::Finetuned, &[("y", &["p q"]), ("x", &["r s"])]);
        let r = attribute_vsm(&base, &ft, &corpus(1), &opts()).unwrap();
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.starts_with(r#"{"method":"vsm","corpus_hash":"#), "{json}");
        assert!(json.find("\"x\"").unwrap() < json.find("\"y\"").unwrap());
        let back: AttributionResult = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
    }
}
