//! Nonzero-pattern enumeration for the grouped n:m format.
//!
//! A pattern is an n-subset of the m positions inside a block. The table
//! lists all C(m,n) patterns in revolving-door order: consecutive patterns
//! differ by removing one position and adding another. The GEMM kernel
//! relies on this to refresh a single operand register at each pattern
//! boundary.

use crate::error::{Error, Result};

/// Binomial coefficient C(m, n) in u128 intermediate to avoid overflow.
pub fn binomial(m: usize, n: usize) -> usize {
    if n > m {
        return 0;
    }
    let n = n.min(m - n);
    let mut acc: u128 = 1;
    for i in 0..n {
        acc = acc * (m - i) as u128 / (i + 1) as u128;
    }
    acc as usize
}

/// All C(m,n) patterns in revolving-door order, with the per-step register
/// bookkeeping precomputed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatternTable {
    n: usize,
    m: usize,
    patterns: Vec<Vec<u8>>,
    /// For pattern p >= 1: (removed, added) relative to pattern p-1.
    transitions: Vec<(u8, u8)>,
    /// For pattern p >= 1: the register slot that is refreshed entering p.
    transition_slots: Vec<u8>,
    /// slots[p][j] = physical register slot holding the j-th (ascending)
    /// position of pattern p, under the one-swap-per-boundary refresh rule.
    slots: Vec<Vec<u8>>,
}

/// Revolving-door enumeration of n-subsets of {0..m-1}, each sorted ascending.
fn revolving_door(m: usize, n: usize) -> Vec<Vec<u8>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    if n == m {
        return vec![(0..m as u8).collect()];
    }
    let mut out = revolving_door(m - 1, n);
    let mut tail = revolving_door(m - 1, n - 1);
    tail.reverse();
    for mut s in tail {
        s.push((m - 1) as u8);
        out.push(s);
    }
    out
}

impl PatternTable {
    /// Builds the table. Requires 1 <= n < m <= 16.
    pub fn new(n: usize, m: usize) -> Result<Self> {
        if n < 1 || n >= m || m > 16 {
            return Err(Error::InvalidParameter(format!(
                "pattern table requires 1 <= n < m <= 16, got n={n}, m={m}"
            )));
        }
        let patterns = revolving_door(m, n);
        debug_assert_eq!(patterns.len(), binomial(m, n));

        let mut transitions = Vec::with_capacity(patterns.len() - 1);
        for w in patterns.windows(2) {
            let removed: Vec<u8> = w[0].iter().copied().filter(|i| !w[1].contains(i)).collect();
            let added: Vec<u8> = w[1].iter().copied().filter(|i| !w[0].contains(i)).collect();
            assert_eq!(
                (removed.len(), added.len()),
                (1, 1),
                "revolving-door adjacency broken between {:?} and {:?}",
                w[0],
                w[1]
            );
            transitions.push((removed[0], added[0]));
        }

        // Simulate the register file: slot s holds one block position; each
        // transition reuses the slot of the removed position for the added one.
        let mut slot_contents: Vec<u8> = patterns[0].clone();
        let mut slots = Vec::with_capacity(patterns.len());
        let mut transition_slots = Vec::with_capacity(transitions.len());
        slots.push((0..n as u8).collect::<Vec<u8>>());
        for (p, &(removed, added)) in transitions.iter().enumerate() {
            let s = slot_contents
                .iter()
                .position(|&c| c == removed)
                .expect("removed position must be resident");
            slot_contents[s] = added;
            transition_slots.push(s as u8);
            let per_pattern = patterns[p + 1]
                .iter()
                .map(|&idx| {
                    slot_contents
                        .iter()
                        .position(|&c| c == idx)
                        .expect("pattern position must be resident") as u8
                })
                .collect();
            slots.push(per_pattern);
        }

        Ok(PatternTable {
            n,
            m,
            patterns,
            transitions,
            transition_slots,
            slots,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// Number of patterns, C(m,n).
    pub fn count(&self) -> usize {
        self.patterns.len()
    }

    /// Positions of pattern `p`, ascending.
    pub fn pattern(&self, p: usize) -> &[u8] {
        &self.patterns[p]
    }

    pub fn patterns(&self) -> &[Vec<u8>] {
        &self.patterns
    }

    /// (removed, added) going from pattern `p-1` to `p`; `p` in 1..count().
    pub fn transition(&self, p: usize) -> (u8, u8) {
        self.transitions[p - 1]
    }

    /// Register slot refreshed when entering pattern `p`; `p` in 1..count().
    pub fn transition_slot(&self, p: usize) -> usize {
        self.transition_slots[p - 1] as usize
    }

    /// Register slot of the j-th ascending position of pattern `p`.
    pub fn slot(&self, p: usize, j: usize) -> usize {
        self.slots[p][j] as usize
    }
}

/// Convenience wrapper matching the conversion API: the full ordered table.
pub fn pattern_order(n: usize, m: usize) -> Result<PatternTable> {
    PatternTable::new(n, m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_choose_one() {
        let t = pattern_order(1, 2).unwrap();
        assert_eq!(t.patterns(), &[vec![0], vec![1]]);
    }

    #[test]
    fn four_choose_two_adjacency() {
        let t = pattern_order(2, 4).unwrap();
        assert_eq!(t.count(), 6);
        for w in t.patterns().windows(2) {
            let shared = w[0].iter().filter(|i| w[1].contains(i)).count();
            assert_eq!(shared, 1, "adjacent patterns must share exactly 1 of 2");
        }
    }

    #[test]
    fn six_choose_three_count() {
        let t = pattern_order(3, 6).unwrap();
        assert_eq!(t.count(), 20);
    }

    #[test]
    fn exhaustive_properties_small_range() {
        for m in 2..=8usize {
            for n in 1..m {
                let t = pattern_order(n, m).unwrap();
                assert_eq!(t.count(), binomial(m, n));
                // all subsets distinct, sorted, in range
                let mut seen = std::collections::HashSet::new();
                for p in t.patterns() {
                    assert_eq!(p.len(), n);
                    assert!(p.windows(2).all(|w| w[0] < w[1]));
                    assert!(p.iter().all(|&i| (i as usize) < m));
                    assert!(seen.insert(p.clone()));
                }
                // adjacency: one removed, one added
                for w in t.patterns().windows(2) {
                    let shared = w[0].iter().filter(|i| w[1].contains(i)).count();
                    assert_eq!(shared, n - 1);
                }
                // slots are consistent: slot s of pattern p holds pattern[p][j]
                let mut contents: Vec<u8> = t.pattern(0).to_vec();
                for p in 1..t.count() {
                    let (removed, added) = t.transition(p);
                    let s = contents.iter().position(|&c| c == removed).unwrap();
                    contents[s] = added;
                    for (j, &idx) in t.pattern(p).iter().enumerate() {
                        assert_eq!(contents[t.slot(p, j)], idx);
                    }
                }
            }
        }
    }

    #[test]
    fn parameter_range_enforced() {
        assert!(pattern_order(0, 4).is_err());
        assert!(pattern_order(4, 4).is_err());
        assert!(pattern_order(5, 4).is_err());
        assert!(pattern_order(1, 17).is_err());
    }

    #[test]
    fn binomial_values() {
        assert_eq!(binomial(4, 2), 6);
        assert_eq!(binomial(6, 3), 20);
        assert_eq!(binomial(16, 8), 12870);
        assert_eq!(binomial(3, 5), 0);
    }
}
