use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A height-estimator observation and the simulator's base height at the
/// same instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayPair {
    pub observation: Vec<f64>,
    pub height: f64,
}

/// Fixed-capacity ring buffer; the oldest pair is overwritten when full.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayMemory {
    capacity: usize,
    pairs: Vec<ReplayPair>,
    next: usize,
}

impl ReplayMemory {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidArgument("replay memory capacity must be positive".into()));
        }
        Ok(ReplayMemory { capacity, pairs: Vec::new(), next: 0 })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn push(&mut self, pair: ReplayPair) {
        if self.pairs.len() < self.capacity {
            self.pairs.push(pair);
        } else {
            self.pairs[self.next] = pair;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// `k` pairs drawn uniformly with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Result<Vec<&ReplayPair>> {
        if self.pairs.is_empty() {
            return Err(Error::InvalidArgument("sampling from an empty replay memory".into()));
        }
        Ok((0..k).map(|_| &self.pairs[rng.gen_range(0..self.pairs.len())]).collect())
    }

    pub fn iter(&self) -> impl Iterator<Item = &ReplayPair> {
        self.pairs.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::rng_for;
    use proptest::prelude::*;

    fn pair(h: f64) -> ReplayPair {
        ReplayPair { observation: vec![h], height: h }
    }

    proptest! {
        #[test]
        fn never_exceeds_capacity(cap in 1usize..50, pushes in 0usize..200) {
            let mut m = ReplayMemory::new(cap).unwrap();
            for i in 0..pushes {
                m.push(pair(i as f64));
                prop_assert!(m.len() <= cap);
            }
            prop_assert_eq!(m.len(), pushes.min(cap));
            // the newest min(cap, pushes) pairs survive
            let mut kept: Vec<f64> = m.iter().map(|p| p.height).collect();
            kept.sort_by(f64::total_cmp);
            let expected: Vec<f64> = (pushes.saturating_sub(cap)..pushes).map(|i| i as f64).collect();
            prop_assert_eq!(kept, expected);
        }
    }

    #[test]
    fn sampling_is_uniform() {
        let mut m = ReplayMemory::new(4).unwrap();
        for i in 0..6 {
            m.push(pair(i as f64));
        }
        let mut rng = rng_for(&[1]);
        let n = 40_000;
        let mut counts = std::collections::BTreeMap::new();
        for p in m.sample(n, &mut rng).unwrap() {
            *counts.entry(p.height as i64).or_insert(0) += 1;
        }
        assert_eq!(counts.keys().copied().collect::<Vec<_>>(), vec![2, 3, 4, 5]);
        for c in counts.values() {
            let f = *c as f64 / n as f64;
            // 5 standard errors of a 1/4 proportion
            assert!((f - 0.25).abs() < 5.0 * (0.25 * 0.75 / n as f64).sqrt(), "{f}");
        }
    }

    #[test]
    fn empty_memory_rejects_sampling() {
        let m = ReplayMemory::new(3).unwrap();
        assert!(m.sample(1, &mut rng_for(&[2])).is_err());
        assert!(ReplayMemory::new(0).is_err());
    }
}
