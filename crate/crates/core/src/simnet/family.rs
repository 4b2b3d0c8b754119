//! Families of base models and fine-tuned children with known ground truth.

use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::lexicon::Region;
use super::markov::{derive_finetuned, MarkovModel, PerturbationConfig, DEFAULT_OVERLAP};
use crate::interrogator::ModelKind;
use crate::seed::SeedBuilder;
use crate::{Error, Result};

fn default_overlap() -> f64 {
    DEFAULT_OVERLAP
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseSpec {
    pub model_id: String,
    pub seed: u64,
    pub vocab_size: usize,
    pub order: usize,
    #[serde(default = "default_overlap")]
    pub overlap: f64,
    #[serde(default)]
    pub region: Region,
}

impl BaseSpec {
    fn build(&self) -> Result<MarkovModel> {
        MarkovModel::base(
            self.model_id.clone(),
            self.seed,
            self.vocab_size,
            self.order,
            self.overlap,
            self.region,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChildSource {
    /// Perturbed copy of the base `from`.
    Derived {
        from: String,
        perturbation: PerturbationConfig,
    },
    /// Independent model, unrelated to any base.
    Fresh {
        seed: u64,
        vocab_size: usize,
        order: usize,
        #[serde(default = "default_overlap")]
        overlap: f64,
        #[serde(default)]
        region: Region,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChildSpec {
    pub model_id: String,
    /// Ground-truth parent; `None` for orphans.
    pub parent: Option<String>,
    pub source: ChildSource,
}

/// Everything needed to rebuild a family, suitable for a JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilySpec {
    pub bases: Vec<BaseSpec>,
    pub children: Vec<ChildSpec>,
}

/// Recipe for the family of one repetition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FamilyTemplate {
    pub num_bases: usize,
    pub vocab_size: usize,
    pub order: usize,
    pub overlap: f64,
    pub num_children: usize,
    /// One base receives two children.
    pub shared_parent: bool,
    /// Children built from a disjoint lexicon region, with no parent.
    pub orphans: usize,
    pub epsilon: f64,
    pub domain_vocab_fraction: f64,
    /// Replace every derived child by a fresh model while keeping its
    /// nominal parent as ground truth (chance-level control).
    pub unrelated_children: bool,
}

impl Default for FamilyTemplate {
    fn default() -> Self {
        FamilyTemplate {
            num_bases: 12,
            vocab_size: 200,
            order: 2,
            overlap: DEFAULT_OVERLAP,
            num_children: 12,
            shared_parent: true,
            orphans: 1,
            epsilon: 0.05,
            domain_vocab_fraction: 0.1,
            unrelated_children: false,
        }
    }
}

impl FamilyTemplate {
    /// Concrete family for `seed`: bases `base-00..`, children `ft-00..` in
    /// shuffled order so ids carry no hint of their parents.
    pub fn instantiate(&self, seed: u64) -> Result<FamilySpec> {
        if self.num_bases == 0 || self.num_children == 0 {
            return Err(Error::invalid("family needs at least one base and one child"));
        }
        if self.orphans > self.num_children {
            return Err(Error::invalid("more orphans than children"));
        }
        let parented = self.num_children - self.orphans;
        let distinct = if self.shared_parent && parented >= 2 {
            parented - 1
        } else {
            parented
        };
        if distinct > self.num_bases {
            return Err(Error::invalid(format!(
                "{parented} parented children need more than {} bases",
                self.num_bases
            )));
        }

        let bases: Vec<BaseSpec> = (0..self.num_bases)
            .map(|i| BaseSpec {
                model_id: format!("base-{i:02}"),
                seed: SeedBuilder::new("base").u64(seed).u64(i as u64).finish(),
                vocab_size: self.vocab_size,
                order: self.order,
                overlap: self.overlap,
                region: Region::Main,
            })
            .collect();

        let mut rng = SeedBuilder::new("family").u64(seed).rng();
        let mut perm: Vec<usize> = (0..self.num_bases).collect();
        perm.shuffle(&mut rng);
        let mut slots: Vec<Option<usize>> = perm[..distinct].iter().copied().map(Some).collect();
        if distinct < parented {
            slots.push(Some(perm[0]));
        }
        slots.extend(std::iter::repeat_n(None, self.orphans));
        slots.shuffle(&mut rng);

        let children = slots
            .into_iter()
            .enumerate()
            .map(|(i, parent)| {
                let child_seed = SeedBuilder::new("child").u64(seed).u64(i as u64).finish();
                let fresh = |region| ChildSource::Fresh {
                    seed: child_seed,
                    vocab_size: self.vocab_size,
                    order: self.order,
                    overlap: self.overlap,
                    region,
                };
                let parent_id = parent.map(|p| bases[p].model_id.clone());
                let source = match &parent_id {
                    None => fresh(Region::Orphan),
                    Some(_) if self.unrelated_children => fresh(Region::Main),
                    Some(from) => ChildSource::Derived {
                        from: from.clone(),
                        perturbation: PerturbationConfig {
                            epsilon: self.epsilon,
                            domain_vocab_fraction: self.domain_vocab_fraction,
                            seed: child_seed,
                        },
                    },
                };
                ChildSpec {
                    model_id: format!("ft-{i:02}"),
                    parent: parent_id,
                    source,
                }
            })
            .collect();
        Ok(FamilySpec { bases, children })
    }
}

#[derive(Debug)]
pub struct SyntheticFamily {
    bases: Vec<Arc<MarkovModel>>,
    children: Vec<(Arc<MarkovModel>, Option<String>)>,
    ground_truth: BTreeMap<String, Option<String>>,
}

impl SyntheticFamily {
    pub fn from_spec(spec: &FamilySpec) -> Result<Self> {
        let mut ids = HashSet::new();
        for id in spec
            .bases
            .iter()
            .map(|b| &b.model_id)
            .chain(spec.children.iter().map(|c| &c.model_id))
        {
            if !ids.insert(id.as_str()) {
                return Err(Error::DuplicateId(id.clone()));
            }
        }
        let bases: Vec<Arc<MarkovModel>> = spec
            .bases
            .iter()
            .map(|b| b.build().map(Arc::new))
            .collect::<Result<_>>()?;
        let find_base = |id: &str| {
            bases
                .iter()
                .find(|b| b.model_id() == id)
                .ok_or_else(|| Error::invalid(format!("unknown base `{id}`")))
        };

        let mut children = Vec::with_capacity(spec.children.len());
        let mut ground_truth = BTreeMap::new();
        for child in &spec.children {
            if let Some(parent) = &child.parent {
                find_base(parent)?;
            }
            let model = match &child.source {
                ChildSource::Derived { from, perturbation } => {
                    derive_finetuned(find_base(from)?, child.model_id.clone(), *perturbation)?
                }
                ChildSource::Fresh {
                    seed,
                    vocab_size,
                    order,
                    overlap,
                    region,
                } => MarkovModel::base(
                    child.model_id.clone(),
                    *seed,
                    *vocab_size,
                    *order,
                    *overlap,
                    *region,
                )?,
            };
            ground_truth.insert(child.model_id.clone(), child.parent.clone());
            children.push((Arc::new(model), child.parent.clone()));
        }
        Ok(SyntheticFamily {
            bases,
            children,
            ground_truth,
        })
    }

    pub fn bases(&self) -> &[Arc<MarkovModel>] {
        &self.bases
    }

    pub fn children(&self) -> &[(Arc<MarkovModel>, Option<String>)] {
        &self.children
    }

    pub fn ground_truth(&self) -> &BTreeMap<String, Option<String>> {
        &self.ground_truth
    }

    /// Bases first, then children, each with its kind.
    pub fn models(&self) -> Vec<(&Arc<MarkovModel>, ModelKind)> {
        self.bases
            .iter()
            .map(|m| (m, ModelKind::Base))
            .chain(self.children.iter().map(|(m, _)| (m, ModelKind::Finetuned)))
            .collect()
    }

    pub fn model(&self, id: &str) -> Option<&Arc<MarkovModel>> {
        self.bases
            .iter()
            .chain(self.children.iter().map(|(m, _)| m))
            .find(|m| m.model_id() == id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_family_shape() {
        let spec = FamilyTemplate::default().instantiate(1).unwrap();
        let family = SyntheticFamily::from_spec(&spec).unwrap();
        assert_eq!(family.bases().len(), 12);
        assert_eq!(family.children().len(), 12);
        let truth = family.ground_truth();
        assert_eq!(truth.values().filter(|p| p.is_none()).count(), 1);
        let mut parents: Vec<_> = truth.values().flatten().collect();
        parents.sort();
        let before = parents.len();
        parents.dedup();
        assert_eq!((before, parents.len()), (11, 10));
    }

    #[test]
    fn instantiation_is_seeded() {
        let t = FamilyTemplate::default();
        assert_eq!(t.instantiate(4).unwrap(), t.instantiate(4).unwrap());
        assert_ne!(t.instantiate(4).unwrap(), t.instantiate(5).unwrap());
    }

    #[test]
    fn spec_round_trips_through_json() {
        let spec = FamilyTemplate {
            unrelated_children: true,
            ..Default::default()
        }
        .instantiate(2)
        .unwrap();
        let text = serde_json::to_string_pretty(&spec).unwrap();
        assert_eq!(serde_json::from_str::<FamilySpec>(&text).unwrap(), spec);
    }

    #[test]
    fn invalid_specs() {
        let mut spec = FamilyTemplate::default().instantiate(1).unwrap();
        spec.children[0].parent = Some("nope".into());
        assert!(SyntheticFamily::from_spec(&spec).is_err());

        let mut spec = FamilyTemplate::default().instantiate(1).unwrap();
        spec.children[0].model_id = "base-00".into();
        assert!(matches!(SyntheticFamily::from_spec(&spec), Err(Error::DuplicateId(_))));

        let too_many = FamilyTemplate {
            num_bases: 3,
            ..Default::default()
        };
        assert!(too_many.instantiate(0).is_err());
    }
}
