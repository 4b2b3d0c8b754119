use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::edit::PatternDistance;
use super::TokenSequence;
use crate::{Error, Result};

/// Longest block a single shift may move.
pub const MAX_SHIFT_LEN: usize = 10;
/// Candidate shifts evaluated per iteration.
pub const MAX_SHIFT_CANDIDATES: usize = 1000;
/// Shifts applied per sentence pair.
pub const MAX_SHIFT_ITERATIONS: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerBreakdown {
    /// Insertions, deletions, substitutions and shifts.
    pub edits: usize,
    pub shifts: usize,
    pub ref_len: usize,
    pub score: f64,
}

/// Translation edit rate with greedy block shifts.
///
/// Each round evaluates the block moves that bring a hypothesis block into
/// line with an equal reference block and applies the one that lowers the
/// word-level edit distance most, provided the drop pays for the shift
/// itself. Rounds stop when no shift helps.
pub fn ter(reference: &TokenSequence, hypothesis: &TokenSequence) -> Result<TerBreakdown> {
    if reference.is_empty() {
        return Err(Error::EmptyReference);
    }
    let ref_len = reference.len();
    if hypothesis.is_empty() {
        return Ok(TerBreakdown {
            edits: ref_len,
            shifts: 0,
            ref_len,
            score: 1.0,
        });
    }

    let mut ids: HashMap<&str, u32> = HashMap::new();
    let mut r = Vec::with_capacity(reference.len());
    let mut h = Vec::with_capacity(hypothesis.len());
    for (tokens, out) in [(reference.tokens(), &mut r), (hypothesis.tokens(), &mut h)] {
        for tok in tokens {
            let next = ids.len() as u32;
            out.push(*ids.entry(tok.as_str()).or_insert(next));
        }
    }
    let alphabet = ids.len();

    let (shifts, distance) = greedy_shift_edits(&r, &h, alphabet);
    let edits = shifts + distance;
    Ok(TerBreakdown {
        edits,
        shifts,
        ref_len,
        score: edits as f64 / ref_len as f64,
    })
}

/// One move of `hyp[start..start + len]` to position `dest` of the
/// remaining sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct Shift {
    start: usize,
    len: usize,
    dest: usize,
}

fn apply_shift(h: &[u32], shift: Shift, out: &mut Vec<u32>) {
    let Shift { start, len, dest } = shift;
    out.clear();
    let block = &h[start..start + len];
    let rest = h[..start].iter().chain(&h[start + len..]);
    let mut placed = false;
    for (k, &tok) in rest.enumerate() {
        if k == dest {
            out.extend_from_slice(block);
            placed = true;
        }
        out.push(tok);
    }
    if !placed {
        out.extend_from_slice(block);
    }
}

/// Which tokens are matched by the current minimum-edit alignment, and for
/// each reference position the hypothesis position it lines up with.
struct Alignment {
    ref_matched: Vec<bool>,
    hyp_matched: Vec<bool>,
    hyp_pos: Vec<usize>,
}

fn align(r: &[u32], h: &[u32]) -> Alignment {
    let (m, n) = (r.len(), h.len());
    let w = n + 1;
    let mut d = vec![0usize; (m + 1) * w];
    for (j, cell) in d[..w].iter_mut().enumerate() {
        *cell = j;
    }
    for i in 1..=m {
        d[i * w] = i;
        for j in 1..=n {
            let sub = d[(i - 1) * w + j - 1] + usize::from(r[i - 1] != h[j - 1]);
            d[i * w + j] = sub.min(d[(i - 1) * w + j] + 1).min(d[i * w + j - 1] + 1);
        }
    }

    let mut ref_matched = vec![false; m];
    let mut hyp_matched = vec![false; n];
    let mut hyp_pos = vec![0; m];
    let (mut i, mut j) = (m, n);
    while i > 0 || j > 0 {
        let here = d[i * w + j];
        if i > 0 && j > 0 && here == d[(i - 1) * w + j - 1] + usize::from(r[i - 1] != h[j - 1]) {
            if r[i - 1] == h[j - 1] {
                ref_matched[i - 1] = true;
                hyp_matched[j - 1] = true;
            }
            hyp_pos[i - 1] = j - 1;
            i -= 1;
            j -= 1;
        } else if i > 0 && here == d[(i - 1) * w + j] + 1 {
            hyp_pos[i - 1] = j;
            i -= 1;
        } else {
            j -= 1;
        }
    }
    Alignment {
        ref_matched,
        hyp_matched,
        hyp_pos,
    }
}

/// Shifts that would line up a hypothesis block with an equal reference
/// block that the current alignment leaves unmatched, ordered longest first.
fn candidate_shifts(r: &[u32], h: &[u32]) -> Vec<Shift> {
    let align = align(r, h);
    let n = h.len();
    let mut out = Vec::new();
    for start in 0..n {
        for (j, &tok) in r.iter().enumerate() {
            if tok != h[start] {
                continue;
            }
            let mut len = 0;
            while len < MAX_SHIFT_LEN
                && start + len < n
                && j + len < r.len()
                && h[start + len] == r[j + len]
            {
                len += 1;
                let aligned = align.hyp_matched[start..start + len].iter().all(|&b| b)
                    && align.ref_matched[j..j + len].iter().all(|&b| b);
                if aligned {
                    continue;
                }
                let target = align.hyp_pos[j];
                let anchor = if target >= start + len {
                    target - len
                } else if target <= start {
                    target
                } else {
                    start
                };
                for dest in [anchor.wrapping_sub(1), anchor, anchor + 1] {
                    if dest <= n - len && dest != start {
                        out.push(Shift { start, len, dest });
                    }
                }
            }
        }
    }
    out.sort_by(|a, b| b.len.cmp(&a.len).then(a.cmp(b)));
    out.dedup();
    out.truncate(MAX_SHIFT_CANDIDATES);
    out
}

fn greedy_shift_edits(r: &[u32], h: &[u32], alphabet: usize) -> (usize, usize) {
    let pattern = PatternDistance::new(r, alphabet);
    let mut current = h.to_vec();
    let mut distance = pattern.distance(&current);
    let mut shifts = 0;
    let mut scratch = Vec::with_capacity(h.len());
    let mut best_seq = Vec::with_capacity(h.len());

    while shifts < MAX_SHIFT_ITERATIONS && distance > 1 {
        let mut best_gain = 1;
        let mut found = false;
        for shift in candidate_shifts(r, &current) {
            // Moving `len` tokens changes the distance by at most 2 * len.
            if 2 * shift.len <= best_gain {
                break;
            }
            apply_shift(&current, shift, &mut scratch);
            let d = pattern.distance(&scratch);
            if d + best_gain < distance {
                best_gain = distance - d;
                std::mem::swap(&mut best_seq, &mut scratch);
                found = true;
            }
        }
        if !found {
            break;
        }
        std::mem::swap(&mut current, &mut best_seq);
        distance -= best_gain;
        shifts += 1;
    }
    (shifts, distance)
}
