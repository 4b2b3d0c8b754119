//! Word-level Levenshtein distance.

/// Classic two-row dynamic program.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut curr = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        curr[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            curr[j + 1] = sub.min(prev[j + 1] + 1).min(curr[j] + 1);
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[b.len()]
}

/// Distance from a fixed pattern to many texts over interned token ids.
///
/// Patterns of at most 64 tokens use the bit-vector recurrence of Myers and
/// Hyyrö (one machine word per column); longer ones fall back to the DP.
pub(crate) struct PatternDistance<'a> {
    pattern: &'a [u32],
    peq: Vec<u64>,
}

impl<'a> PatternDistance<'a> {
    /// `alphabet` is one past the largest id that may appear in a text.
    pub(crate) fn new(pattern: &'a [u32], alphabet: usize) -> Self {
        let mut peq = Vec::new();
        if !pattern.is_empty() && pattern.len() <= 64 {
            peq = vec![0u64; alphabet];
            for (i, &id) in pattern.iter().enumerate() {
                peq[id as usize] |= 1 << i;
            }
        }
        PatternDistance { pattern, peq }
    }

    pub(crate) fn distance(&self, text: &[u32]) -> usize {
        let m = self.pattern.len();
        if m == 0 {
            return text.len();
        }
        if m > 64 {
            return levenshtein(self.pattern, text);
        }
        let last = 1u64 << (m - 1);
        let mut pv = u64::MAX;
        let mut mv = 0u64;
        let mut score = m;
        for &id in text {
            let eq = self.peq.get(id as usize).copied().unwrap_or(0);
            let xv = eq | mv;
            let xh = ((eq & pv).wrapping_add(pv) ^ pv) | eq;
            let mut ph = mv | !(xh | pv);
            let mut mh = pv & xh;
            if ph & last != 0 {
                score += 1;
            } else if mh & last != 0 {
                score -= 1;
            }
            // Row zero of the DP grows by one per text token.
            ph = (ph << 1) | 1;
            mh <<= 1;
            pv = mh | !(xv | ph);
            mv = ph & xv;
        }
        score
    }
}
