use std::collections::HashSet;

use super::{ActionId, StateId, TabularMdp};
use crate::error::{ensure, Result};
use crate::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition<T> {
    pub s: StateId,
    pub a: ActionId,
    pub r: T,
    pub s_next: StateId,
}

impl<T> Transition<T> {
    pub fn new(s: StateId, a: ActionId, r: T, s_next: StateId) -> Self {
        Self { s, a, r, s_next }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DedupMode {
    /// At most one record per `(s, a)`; right for deterministic rewards.
    UniquePairs,
    /// Every observation is kept.
    Multiset,
}

/// Observed transitions.
#[derive(Debug, Clone)]
pub struct Dataset<T> {
    records: Vec<Transition<T>>,
    mode: DedupMode,
    seen: HashSet<(StateId, ActionId)>,
}

impl<T: Real> Dataset<T> {
    pub fn new(mode: DedupMode) -> Self {
        Self { records: Vec::new(), mode, seen: HashSet::new() }
    }

    /// Picks the mode matching the reward model of `mdp`.
    pub fn for_mdp(mdp: &TabularMdp<T>) -> Self {
        Self::new(if mdp.has_deterministic_rewards() { DedupMode::UniquePairs } else { DedupMode::Multiset })
    }

    pub fn from_records(mode: DedupMode, records: impl IntoIterator<Item = Transition<T>>) -> Self {
        let mut d = Self::new(mode);
        for t in records {
            d.insert(t);
        }
        d
    }

    pub fn mode(&self) -> DedupMode {
        self.mode
    }

    pub fn records(&self) -> &[Transition<T>] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn contains_pair(&self, s: StateId, a: ActionId) -> bool {
        self.seen.contains(&(s, a))
    }

    /// Adds a record; returns `false` when a unique-pairs dataset already
    /// holds `(s, a)`.
    pub fn insert(&mut self, t: Transition<T>) -> bool {
        let fresh = self.seen.insert((t.s, t.a));
        if !fresh && self.mode == DedupMode::UniquePairs {
            return false;
        }
        self.records.push(t);
        true
    }

    /// Moves all records of `other` into `self`, respecting the dedup mode.
    pub fn absorb(&mut self, other: Dataset<T>) {
        for t in other.records {
            self.insert(t);
        }
    }

    /// Checks every record against the admissible actions of `mdp`.
    pub fn validate(&self, mdp: &TabularMdp<T>) -> Result<()> {
        for (i, t) in self.records.iter().enumerate() {
            ensure!(t.s < mdp.n_states() && t.s_next < mdp.n_states(), Precondition, "record {i}: state out of range");
            ensure!(mdp.action_slot(t.s, t.a).is_some(), Precondition, "record {i}: action {} not admissible in state {}", t.a, t.s);
            ensure!(t.r.is_finite(), Precondition, "record {i}: non-finite reward");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unique_pairs_keeps_first_record() {
        let mut d = Dataset::<f64>::new(DedupMode::UniquePairs);
        assert!(d.insert(Transition::new(0, 1, -1.0, 1)));
        assert!(!d.insert(Transition::new(0, 1, -2.0, 1)));
        assert!(d.insert(Transition::new(0, 0, -1.0, 0)));
        assert_eq!(d.len(), 2);
        assert_eq!(d.records()[0].r, -1.0);

        let mut m = Dataset::<f64>::new(DedupMode::Multiset);
        m.insert(Transition::new(0, 1, -1.0, 1));
        m.insert(Transition::new(0, 1, -2.0, 1));
        assert_eq!(m.len(), 2);
    }
}
