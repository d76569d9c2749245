use super::{StateId, TabularMdp};
use crate::error::{Error, Result};
use crate::Real;

pub const DEFAULT_MAX_SWEEPS: usize = 10_000;

/// Action values stored per state in action order.
#[derive(Debug, Clone, PartialEq)]
pub struct QValues<T> {
    values: Vec<Vec<T>>,
}

impl<T: Real> QValues<T> {
    pub fn zeros(mdp: &TabularMdp<T>) -> Self {
        Self { values: (0..mdp.n_states()).map(|s| vec![T::zero(); mdp.action_specs(s).len()]).collect() }
    }

    /// `Q(s, a)`; panics on inadmissible pairs.
    pub fn get(&self, mdp: &TabularMdp<T>, s: StateId, a: usize) -> T {
        let slot = mdp.action_slot(s, a).expect("admissible action");
        self.values[s][slot]
    }

    pub fn by_slot(&self, s: StateId) -> &[T] {
        &self.values[s]
    }

    /// `V(s) = max_a Q(s, a)`.
    pub fn v(&self, s: StateId) -> T {
        self.values[s].iter().copied().fold(T::neg_infinity(), T::max)
    }

    /// Expected `V` at the start distribution.
    pub fn v_initial(&self, mdp: &TabularMdp<T>) -> T {
        mdp.initial_dist().iter().map(|&(s, p)| p * self.v(s)).sum()
    }

    /// The non-goal values laid out as a parameter vector.
    pub fn to_theta(&self, idx: &super::QIndex) -> Vec<T> {
        (0..idx.d_theta())
            .map(|j| {
                let (s, _) = idx.inverse(j);
                let slot = (0..self.values[s].len()).find(|&k| idx.forward_slot(s, k) == j);
                self.values[s][slot.expect("coordinate belongs to state")]
            })
            .collect()
    }
}

/// Value iteration with the default sweep budget.
pub fn value_iteration<T: Real>(mdp: &TabularMdp<T>, tol: T) -> Result<QValues<T>> {
    value_iteration_with(mdp, tol, DEFAULT_MAX_SWEEPS)
}

/// Jacobi value iteration from zero. The result has sup-norm Bellman
/// residual below `tol`.
pub fn value_iteration_with<T: Real>(mdp: &TabularMdp<T>, tol: T, max_sweeps: usize) -> Result<QValues<T>> {
    if !(tol > T::zero()) {
        return Err(Error::InvalidArgument("tolerance must be positive".into()));
    }
    let mut q = QValues::zeros(mdp);
    for _ in 0..max_sweeps {
        let v: Vec<T> = (0..mdp.n_states()).map(|s| if mdp.is_goal(s) { T::zero() } else { q.v(s) }).collect();
        let mut next = q.clone();
        let mut resid = T::zero();
        for s in (0..mdp.n_states()).filter(|&s| !mdp.is_goal(s)) {
            for (slot, spec) in mdp.action_specs(s).iter().enumerate() {
                let backup = spec.mean_reward + spec.transition.iter().map(|&(s2, p)| p * v[s2]).sum::<T>();
                resid = resid.max((backup - q.values[s][slot]).abs());
                next.values[s][slot] = backup;
            }
        }
        if !resid.is_finite() {
            break;
        }
        if resid < tol {
            return Ok(q);
        }
        q = next;
    }
    Err(Error::Divergence { sweeps: max_sweeps })
}

#[cfg(test)]
mod tests {
    use super::super::*;
    use crate::rng::substream;

    #[test]
    fn two_state_values() {
        let mdp = two_state_example::<f64>();
        let q = value_iteration(&mdp, 1e-12).unwrap();
        assert!((q.get(&mdp, 0, 0) + 2.0).abs() < 1e-9);
        assert!((q.get(&mdp, 0, 1) + 1.0).abs() < 1e-9);
        assert_eq!(q.get(&mdp, 1, GOAL_ACTION), 0.0);
    }

    #[test]
    fn five_state_values() {
        let (r1, r2, r3, r4) = (0.3, -1.2, 2.0, 0.25);
        let mdp = five_state_example::<f64>(r1, r2, r3, r4);
        let q = value_iteration(&mdp, 1e-12).unwrap();
        let idx = QIndex::new(&mdp);
        let theta = q.to_theta(&idx);
        let expect = [r1 + r3, r2 + r4, r3, r4];
        for (a, b) in theta.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        let zero = value_iteration(&five_state_example::<f64>(0.0, 0.0, 0.0, 0.0), 1e-9).unwrap();
        assert!(zero.to_theta(&idx).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn deep_sea_value_matches_forced_rollout() {
        for d in [5, 10] {
            let mdp = deep_sea::<f64>(d).unwrap();
            let q = value_iteration(&mdp, 1e-12).unwrap();
            let mut rng = substream(1, "x", &[]);
            let mut s = mdp.sample_initial(&mut rng);
            let mut ret = 0.0;
            while !mdp.is_goal(s) {
                let (r, next) = mdp.step(s, 0, &mut rng).unwrap();
                ret += r;
                s = next;
            }
            assert!((q.v_initial(&mdp) - ret).abs() < 1e-9);
        }
    }

    #[test]
    fn residual_below_tolerance() {
        let mdp = deep_sea::<f64>(6).unwrap();
        let tol = 1e-10;
        let q = value_iteration(&mdp, tol).unwrap();
        for s in (0..mdp.n_states()).filter(|&s| !mdp.is_goal(s)) {
            for spec in mdp.action_specs(s) {
                let b = spec.mean_reward + spec.transition.iter().map(|&(s2, p)| p * if mdp.is_goal(s2) { 0.0 } else { q.v(s2) }).sum::<f64>();
                assert!((q.get(&mdp, s, spec.action) - b).abs() < tol);
            }
        }
    }

    #[test]
    fn improper_only_mdp_diverges() {
        let mut b = TabularMdp::<f64>::builder();
        let s = b.state("s");
        let g = b.state("g");
        b.goal(g).initial(vec![(s, 1.0)]).edge(s, 0, s, 1.0).edge(s, 1, g, 0.0);
        let mdp = b.build().unwrap();
        assert!(matches!(value_iteration_with(&mdp, 1e-9, 500), Err(crate::Error::Divergence { .. })));
    }
}
