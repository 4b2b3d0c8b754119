//! Order-n Markov chains over lexicon slices.
//!
//! A chain over `V` tokens of order 2 has `(V + 1)^2` contexts, far too many
//! rows to materialize for every model in a family. Rows are instead a pure
//! function of the model's seed and the context, computed on demand, so a
//! model costs a few hundred bytes and still behaves as a fixed table.

use std::collections::HashMap;
use std::sync::Arc;

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use super::lexicon::{self, Region, REGION_SIZE};
use crate::seed::SeedBuilder;
use crate::textmetrics::tokenize;
use crate::{Error, Result};

/// Concentration of the symmetric Dirichlet every row is drawn from.
pub const DIRICHLET_ALPHA: f64 = 0.5;
/// Default share of a base vocabulary common to all bases.
pub const DEFAULT_OVERLAP: f64 = 0.5;
/// Share of the vocabulary a fine-tune pushes probability toward.
pub const DOMAIN_TOKEN_SHARE: f64 = 0.05;

/// How a fine-tuned child departs from its parent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationConfig {
    pub epsilon: f64,
    pub domain_vocab_fraction: f64,
    pub seed: u64,
}

impl PerturbationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::invalid(format!("epsilon {} outside [0, 1]", self.epsilon)));
        }
        if !(0.0..=1.0).contains(&self.domain_vocab_fraction) {
            return Err(Error::invalid(format!(
                "domain_vocab_fraction {} outside [0, 1]",
                self.domain_vocab_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug)]
enum Rows {
    Dirichlet {
        seed: u64,
    },
    Perturbed {
        parent: Arc<MarkovModel>,
        cfg: PerturbationConfig,
        /// Per token: whether rows whose context ends in it are biased.
        biased: Vec<bool>,
        domain_tokens: Vec<usize>,
    },
}

#[derive(Debug)]
pub struct MarkovModel {
    model_id: String,
    /// Keys the sampling RNG. A fine-tune inherits its parent's stream so
    /// that an unperturbed copy walks exactly like the parent.
    stream_id: String,
    vocab: Vec<String>,
    token_index: HashMap<String, usize>,
    order: usize,
    rows: Rows,
}

fn dirichlet_row(rng: &mut impl Rng, size: usize) -> Vec<f64> {
    let gamma = Gamma::new(DIRICHLET_ALPHA, 1.0).expect("valid gamma parameters");
    let mut row: Vec<f64> = (0..size).map(|_| gamma.sample(rng)).collect();
    let total: f64 = row.iter().sum();
    if total > 0.0 {
        row.iter_mut().for_each(|p| *p /= total);
    } else {
        row.fill(1.0 / size as f64);
    }
    row
}

fn context_rng(domain: &str, seed: u64, context: &[usize]) -> rand_chacha::ChaCha8Rng {
    context
        .iter()
        .fold(SeedBuilder::new(domain).u64(seed), |b, &t| b.u64(t as u64))
        .rng()
}

/// Base model with the default vocabulary overlap in the main region.
pub fn generate_base(seed: u64, vocab_size: usize, order: usize) -> Result<MarkovModel> {
    MarkovModel::base(
        format!("base-{seed:016x}"),
        seed,
        vocab_size,
        order,
        DEFAULT_OVERLAP,
        Region::Main,
    )
}

/// Child of `parent` with the same vocabulary and perturbed rows.
pub fn derive_finetuned(
    parent: &Arc<MarkovModel>,
    model_id: impl Into<String>,
    cfg: PerturbationConfig,
) -> Result<MarkovModel> {
    cfg.validate()?;
    let v = parent.vocab_size();
    let mut rng = SeedBuilder::new("domain").u64(cfg.seed).rng();
    let n_biased = (cfg.domain_vocab_fraction * v as f64).round() as usize;
    let mut biased = vec![false; v];
    for t in index::sample(&mut rng, v, n_biased) {
        biased[t] = true;
    }
    let n_domain = ((DOMAIN_TOKEN_SHARE * v as f64).round() as usize).clamp(1, v);
    let mut domain_tokens = index::sample(&mut rng, v, n_domain).into_vec();
    domain_tokens.sort_unstable();

    Ok(MarkovModel {
        model_id: model_id.into(),
        stream_id: parent.stream_id.clone(),
        vocab: parent.vocab.clone(),
        token_index: parent.token_index.clone(),
        order: parent.order,
        rows: Rows::Perturbed {
            parent: Arc::clone(parent),
            cfg,
            biased,
            domain_tokens,
        },
    })
}

impl MarkovModel {
    /// Fresh model whose first `overlap * vocab_size` tokens are the start
    /// of `region` (shared by every model in that region) and whose
    /// remaining tokens are a seeded sample of the rest of the region.
    pub fn base(
        model_id: impl Into<String>,
        seed: u64,
        vocab_size: usize,
        order: usize,
        overlap: f64,
        region: Region,
    ) -> Result<MarkovModel> {
        if vocab_size < 2 {
            return Err(Error::invalid(format!("vocab_size {vocab_size} is below 2")));
        }
        if vocab_size > REGION_SIZE {
            return Err(Error::invalid(format!(
                "vocab_size {vocab_size} exceeds the lexicon region of {REGION_SIZE}"
            )));
        }
        if order == 0 {
            return Err(Error::invalid("order must be at least 1"));
        }
        if !(0.0..=1.0).contains(&overlap) {
            return Err(Error::invalid(format!("overlap {overlap} outside [0, 1]")));
        }
        let shared = (overlap * vocab_size as f64).round() as usize;
        let mut rng = SeedBuilder::new("vocab").u64(seed).rng();
        let mut ids: Vec<usize> = (0..shared).collect();
        ids.extend(
            index::sample(&mut rng, REGION_SIZE - shared, vocab_size - shared)
                .into_iter()
                .map(|i| i + shared),
        );
        ids.sort_unstable();
        let vocab: Vec<String> = ids
            .into_iter()
            .map(|i| lexicon::word(region.offset() + i))
            .collect();
        let model_id = model_id.into();
        Ok(MarkovModel {
            stream_id: model_id.clone(),
            model_id,
            token_index: vocab.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect(),
            vocab,
            order,
            rows: Rows::Dirichlet { seed },
        })
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Padding symbol for contexts shorter than the order.
    pub fn start_token(&self) -> usize {
        self.vocab.len()
    }

    pub fn token_id(&self, token: &str) -> Option<usize> {
        self.token_index.get(token).copied()
    }

    /// Context built from the last `order` in-vocabulary tokens of `prompt`,
    /// left-padded with the start symbol.
    pub fn prompt_context(&self, prompt: &str) -> Vec<usize> {
        let known: Vec<usize> = tokenize(prompt)
            .iter()
            .filter_map(|t| self.token_id(t))
            .collect();
        let tail = &known[known.len().saturating_sub(self.order)..];
        let mut context = vec![self.start_token(); self.order - tail.len()];
        context.extend_from_slice(tail);
        context
    }

    /// Next-token distribution after `context` (token ids or the start
    /// symbol, oldest first, length = order).
    pub fn row(&self, context: &[usize]) -> Vec<f64> {
        debug_assert_eq!(context.len(), self.order);
        match &self.rows {
            Rows::Dirichlet { seed } => {
                dirichlet_row(&mut context_rng("row", *seed, context), self.vocab.len())
            }
            Rows::Perturbed {
                parent,
                cfg,
                biased,
                domain_tokens,
            } => {
                let mut row = parent.row(context);
                if cfg.epsilon == 0.0 {
                    return row;
                }
                let eps = cfg.epsilon;
                let noise = dirichlet_row(&mut context_rng("noise", cfg.seed, context), row.len());
                for (p, q) in row.iter_mut().zip(&noise) {
                    *p = (1.0 - eps) * *p + eps * q;
                }
                let last = context[context.len() - 1];
                if last < biased.len() && biased[last] {
                    row.iter_mut().for_each(|p| *p *= 1.0 - eps);
                    let share = eps / domain_tokens.len() as f64;
                    for &t in domain_tokens {
                        row[t] += share;
                    }
                }
                row
            }
        }
    }

    /// Distribution after a context spelled in tokens, keyed by token.
    /// `None` if a context token is outside the vocabulary; `None` entries
    /// in `context` stand for the start symbol.
    pub fn row_by_tokens(&self, context: &[Option<&str>]) -> Option<HashMap<&str, f64>> {
        if context.len() != self.order {
            return None;
        }
        let ids = context
            .iter()
            .map(|t| match t {
                None => Some(self.start_token()),
                Some(t) => self.token_id(t),
            })
            .collect::<Option<Vec<usize>>>()?;
        Some(
            self.vocab
                .iter()
                .map(String::as_str)
                .zip(self.row(&ids))
                .collect(),
        )
    }
}

/// Walks `max_tokens` steps from the prompt's context. The RNG is keyed by
/// `(seed, stream, prompt)`, so output is a pure function of its inputs.
pub fn generate_response(
    model: &MarkovModel,
    prompt: &str,
    max_tokens: usize,
    seed: u64,
) -> Result<String> {
    if max_tokens == 0 {
        return Err(Error::invalid("max_tokens must be at least 1"));
    }
    let mut rng = SeedBuilder::new("generate")
        .u64(seed)
        .str(&model.stream_id)
        .str(prompt)
        .rng();
    let mut context = model.prompt_context(prompt);
    let mut out = String::new();
    for _ in 0..max_tokens {
        let row = model.row(&context);
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut pick = row.len() - 1;
        for (t, p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                pick = t;
                break;
            }
        }
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(&model.vocab[pick]);
        context.remove(0);
        context.push(pick);
    }
    Ok(out)
}

/// Total-variation distance between two token-keyed distributions.
pub fn total_variation(a: &HashMap<&str, f64>, b: &HashMap<&str, f64>) -> f64 {
    let mut sum = 0.0;
    for (t, p) in a {
        sum += (p - b.get(t).copied().unwrap_or(0.0)).abs();
    }
    for (t, q) in b {
        if !a.contains_key(t) {
            sum += q;
        }
    }
    sum / 2.0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn all_contexts(model: &MarkovModel) -> Vec<Vec<usize>> {
        let n = model.vocab_size() + 1;
        (0..n * n).map(|i| vec![i / n, i % n]).collect()
    }

    #[test]
    fn rows_are_distributions() {
        let model = generate_base(3, 20, 2).unwrap();
        for ctx in all_contexts(&model) {
            let row = model.row(&ctx);
            assert!(row.iter().all(|&p| p >= 0.0));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        let parent = Arc::new(model);
        let cfg = PerturbationConfig {
            epsilon: 0.3,
            domain_vocab_fraction: 0.5,
            seed: 1,
        };
        let child = derive_finetuned(&parent, "c", cfg).unwrap();
        for ctx in all_contexts(&child) {
            assert!((child.row(&ctx).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn base_generation_is_deterministic_and_validated() {
        let a = generate_base(5, 50, 2).unwrap();
        let b = generate_base(5, 50, 2).unwrap();
        assert_eq!(a.vocab(), b.vocab());
        assert_eq!(a.row(&[0, 1]), b.row(&[0, 1]));
        assert!(generate_base(5, 1, 2).is_err());
        assert!(generate_base(5, 0, 2).is_err());
    }

    #[test]
    fn different_seeds_different_vocabularies() {
        let a = generate_base(1, 200, 2).unwrap();
        let b = generate_base(2, 200, 2).unwrap();
        let shared = a.vocab().iter().filter(|t| b.token_id(t).is_some()).count();
        assert!((100..200).contains(&shared), "{shared}");
    }

    #[test]
    fn orphan_region_is_disjoint() {
        let base = generate_base(1, 200, 2).unwrap();
        let orphan = MarkovModel::base("o", 1, 200, 2, 0.5, Region::Orphan).unwrap();
        assert!(orphan.vocab().iter().all(|t| base.token_id(t).is_none()));
    }

    #[test]
    fn zero_epsilon_copies_parent() {
        let parent = Arc::new(generate_base(9, 30, 2).unwrap());
        let cfg = PerturbationConfig {
            epsilon: 0.0,
            domain_vocab_fraction: 0.3,
            seed: 4,
        };
        let child = derive_finetuned(&parent, "child", cfg).unwrap();
        for ctx in all_contexts(&child) {
            assert_eq!(child.row(&ctx), parent.row(&ctx));
        }
        let prompt = "some words here";
        assert_eq!(
            generate_response(&child, prompt, 25, 11).unwrap(),
            generate_response(&parent, prompt, 25, 11).unwrap()
        );
    }

    #[test]
    fn full_epsilon_detaches_rows() {
        let parent = Arc::new(generate_base(9, 50, 2).unwrap());
        let cfg = PerturbationConfig {
            epsilon: 1.0,
            domain_vocab_fraction: 0.0,
            seed: 77,
        };
        let child = derive_finetuned(&parent, "child", cfg).unwrap();
        let contexts = all_contexts(&child);
        let moved = contexts
            .iter()
            .filter(|ctx| {
                let (p, c) = (parent.row(ctx), child.row(ctx));
                p.iter().zip(&c).map(|(a, b)| (a - b).abs()).sum::<f64>() > 0.0
            })
            .count();
        assert!(moved as f64 >= 0.99 * contexts.len() as f64);
    }

    #[test]
    fn invalid_perturbation() {
        let parent = Arc::new(generate_base(1, 10, 1).unwrap());
        for (epsilon, domain_vocab_fraction) in [(-0.1, 0.0), (1.5, 0.0), (0.1, 2.0)] {
            let cfg = PerturbationConfig {
                epsilon,
                domain_vocab_fraction,
                seed: 0,
            };
            assert!(derive_finetuned(&parent, "c", cfg).is_err());
        }
    }

    #[test]
    fn generation_contract() {
        let model = generate_base(2, 40, 2).unwrap();
        let a = generate_response(&model, "", 17, 3).unwrap();
        assert_eq!(a, generate_response(&model, "", 17, 3).unwrap());
        assert_eq!(tokenize(&a).len(), 17);
        assert!(generate_response(&model, "x", 0, 3).is_err());
        let other = generate_response(&model, "", 17, 4).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn prompt_context_uses_last_known_tokens() {
        let model = generate_base(2, 40, 2).unwrap();
        let (w0, w1) = (model.vocab()[0].clone(), model.vocab()[1].clone());
        let ctx = model.prompt_context(&format!("{w1} unknownword {w0} ZZZ"));
        assert_eq!(ctx, vec![1, 0]);
        assert_eq!(model.prompt_context(&w1), vec![model.start_token(), 1]);
        assert_eq!(model.prompt_context(""), vec![model.start_token(); 2]);
    }
}
