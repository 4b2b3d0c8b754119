//! Synthetic model families with known ground truth, plus a mock server.
//!
//! Base models are Markov chains over overlapping slices of a shared
//! pseudo-word lexicon; fine-tuned children mix Dirichlet noise and a
//! domain bias into their parent's rows. Orphan children are drawn from a
//! separate lexicon region and have no parent among the bases.

mod family;
pub mod lexicon;
mod markov;
mod server;

pub use family::{BaseSpec, ChildSource, ChildSpec, FamilySpec, FamilyTemplate, SyntheticFamily};
pub use markov::{
    derive_finetuned, generate_base, generate_response, total_variation, MarkovModel,
    PerturbationConfig, DEFAULT_OVERLAP, DIRICHLET_ALPHA, DOMAIN_TOKEN_SHARE,
};
pub use server::{serve, serve_with_workers, ServerHandle, MAX_TOKENS_LIMIT};

use chrono::DateTime;

use crate::corpus::QueryCorpus;
use crate::exec::Execution;
use crate::interrogator::{InterrogationConfig, TranscriptRecord, TranscriptStore};
use crate::Result;

/// Transcripts of every family model produced without the network, with
/// zero latency and the epoch as timestamp.
pub fn in_process_store(
    family: &SyntheticFamily,
    corpus: &QueryCorpus,
    config: &InterrogationConfig,
    exec: Execution,
) -> Result<TranscriptStore> {
    let jobs: Vec<_> = family
        .models()
        .into_iter()
        .flat_map(|(m, kind)| corpus.queries().iter().map(move |q| (m, kind, q)))
        .collect();
    let records = exec.map(&jobs, |&(model, kind, query)| {
        let text = generate_response(model, &query.text, config.max_tokens, config.seed)?;
        Ok(TranscriptRecord {
            model_id: model.model_id().to_string(),
            model_kind: kind,
            query_id: query.id.clone(),
            query_text: query.text.clone(),
            response_text: text,
            latency_ms: 0,
            timestamp: DateTime::UNIX_EPOCH,
            failed: false,
            reason: None,
        })
    });
    TranscriptStore::from_records(records.into_iter().collect::<Result<Vec<_>>>()?)
}
