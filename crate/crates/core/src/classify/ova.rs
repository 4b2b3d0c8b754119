use serde::{Deserialize, Serialize};

use super::{binary_with, ClassifierBackend, TextClassifier};
use crate::exec::Execution;
use crate::Result;

/// Outcome of the one-vs-all decision for one text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "i64", try_from = "i64")]
pub enum Vote {
    Winner(usize),
    Abstain,
}

impl From<Vote> for i64 {
    fn from(vote: Vote) -> i64 {
        match vote {
            Vote::Winner(i) => i as i64,
            Vote::Abstain => -1,
        }
    }
}

impl TryFrom<i64> for Vote {
    type Error = String;

    fn try_from(value: i64) -> Result<Self, String> {
        match value {
            -1 => Ok(Vote::Abstain),
            v if v >= 0 => Ok(Vote::Winner(v as usize)),
            v => Err(format!("invalid vote {v}")),
        }
    }
}

impl Vote {
    /// Most frequent vote and the per-class histogram.
    ///
    /// Abstention wins only when it is strictly more frequent than every
    /// class; among classes the lowest index wins ties.
    pub fn mode(votes: &[Vote], num_classes: usize) -> (Option<usize>, Vec<usize>, usize) {
        let mut histogram = vec![0usize; num_classes];
        let mut abstain = 0;
        for vote in votes {
            match *vote {
                Vote::Winner(i) => histogram[i] += 1,
                Vote::Abstain => abstain += 1,
            }
        }
        let best = crate::vsm::argmax(&histogram.iter().map(|&c| c as f64).collect::<Vec<_>>());
        let winner = match best {
            Some(i) if histogram[i] >= abstain && histogram[i] > 0 => Some(i),
            _ => None,
        };
        (winner, histogram, abstain)
    }
}

/// One binary classifier per class, each trained on that class against the
/// union of all others.
pub struct OneVsAll<M> {
    models: Vec<M>,
}

impl<M: TextClassifier> OneVsAll<M> {
    pub fn train<B>(
        backend: &B,
        num_classes: usize,
        data: &[(usize, &str)],
        exec: Execution,
    ) -> Result<Self>
    where
        B: ClassifierBackend<Model = M>,
    {
        let models = exec
            .map_range(num_classes, |class| {
                let (pos, neg): (Vec<_>, Vec<_>) = data.iter().partition(|(l, _)| *l == class);
                let pos: Vec<&str> = pos.iter().map(|(_, t)| *t).collect();
                let neg: Vec<&str> = neg.iter().map(|(_, t)| *t).collect();
                binary_with(backend, &pos, &neg)
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        Ok(OneVsAll { models })
    }

    pub fn models(&self) -> &[M] {
        &self.models
    }

    /// Positive-class probability per classifier, or -1 where the classifier
    /// rejects (`p_neg >= p_pos`).
    pub fn positive_probs(&self, text: &str) -> Vec<f64> {
        self.models
            .iter()
            .map(|m| {
                let s = m.predict_scores(text);
                if s[0] >= s[1] {
                    -1.0
                } else {
                    s[1]
                }
            })
            .collect()
    }

    pub fn vote(&self, text: &str) -> Vote {
        let probs = self.positive_probs(text);
        match crate::vsm::argmax(&probs) {
            Some(i) if probs[i] != -1.0 => Vote::Winner(i),
            _ => Vote::Abstain,
        }
    }
}
