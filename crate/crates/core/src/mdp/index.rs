use super::{ActionId, StateId, TabularMdp};

/// The bijection between `(s, a)` pairs and parameter coordinates.
///
/// Non-goal pairs get coordinates `0..d_theta` in state-major order with
/// actions sorted by id; goal pairs follow at `d_theta..`. Coordinates are
/// 0-based here; the CSV and event syntax use 1-based `theta_k`.
#[derive(Debug, Clone)]
pub struct QIndex {
    forward: Vec<Vec<usize>>,
    inverse: Vec<(StateId, ActionId)>,
    d_theta: usize,
    goal: Vec<bool>,
}

impl QIndex {
    pub fn new<T: crate::Real>(mdp: &TabularMdp<T>) -> Self {
        let n = mdp.n_states();
        let mut forward: Vec<Vec<usize>> = (0..n).map(|s| vec![0; mdp.action_specs(s).len()]).collect();
        let mut inverse = Vec::new();
        for pass_goal in [false, true] {
            for s in (0..n).filter(|&s| mdp.is_goal(s) == pass_goal) {
                for (slot, spec) in mdp.action_specs(s).iter().enumerate() {
                    forward[s][slot] = inverse.len();
                    inverse.push((s, spec.action));
                }
            }
        }
        let d_theta = inverse.iter().filter(|(s, _)| !mdp.is_goal(*s)).count();
        let goal = (0..n).map(|s| mdp.is_goal(s)).collect();
        Self { forward, inverse, d_theta, goal }
    }

    pub fn d_theta(&self) -> usize {
        self.d_theta
    }

    /// Number of all pairs, goal pairs included.
    pub fn n_pairs(&self) -> usize {
        self.inverse.len()
    }

    /// Full index of the pair in action slot `slot` of state `s`.
    pub fn forward_slot(&self, s: StateId, slot: usize) -> usize {
        self.forward[s][slot]
    }

    /// Parameter coordinate of `(s, a)`, or `None` for goal pairs and
    /// inadmissible actions.
    pub fn coord<T: crate::Real>(&self, mdp: &TabularMdp<T>, s: StateId, a: ActionId) -> Option<usize> {
        let slot = mdp.action_slot(s, a)?;
        let j = self.forward[s][slot];
        (j < self.d_theta).then_some(j)
    }

    pub fn inverse(&self, j: usize) -> (StateId, ActionId) {
        self.inverse[j]
    }

    /// Coordinates of all actions of `s` in action order; empty for goals.
    pub fn state_coords(&self, s: StateId) -> &[usize] {
        if self.goal[s] {
            &[]
        } else {
            &self.forward[s]
        }
    }

    /// `Q_theta(s, a)` with the goal convention.
    pub fn q<T: crate::Real>(&self, theta: &[T], j: usize) -> T {
        if j < self.d_theta {
            theta[j]
        } else {
            T::zero()
        }
    }

    /// `max_a Q_theta(s, a)` and the coordinate attaining it (lowest action
    /// on ties); `None` coordinate for goal states.
    pub fn max_q<T: crate::Real>(&self, theta: &[T], s: StateId) -> (T, Option<usize>) {
        let coords = self.state_coords(s);
        let Some((&first, rest)) = coords.split_first() else {
            return (T::zero(), None);
        };
        let mut best = (theta[first], first);
        for &j in rest {
            if theta[j] > best.0 {
                best = (theta[j], j);
            }
        }
        (best.0, Some(best.1))
    }
}
