//! Finite MDPs with absorbing goal states, simulation, datasets and a
//! value-iteration solver.

mod data;
mod envs;
mod index;
mod solve;

pub use data::{Dataset, DedupMode, Transition};
pub use envs::{deep_sea, five_state_example, two_state_example, EnvSpec};
pub use index::QIndex;
pub use solve::{value_iteration, value_iteration_with, QValues, DEFAULT_MAX_SWEEPS};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{ensure, Error, Result};
use crate::Real;

pub type StateId = usize;
pub type ActionId = usize;

/// Action taken in goal states.
pub const GOAL_ACTION: ActionId = 0;

#[derive(Debug, Clone, PartialEq)]
pub struct ActionSpec<T> {
    pub action: ActionId,
    /// Sparse categorical distribution over successor states.
    pub transition: Vec<(StateId, T)>,
    pub mean_reward: T,
}

/// A finite MDP with known transition kernel and mean rewards.
///
/// Actions of each state are kept sorted by id; "lowest action" tie rules
/// refer to this order.
#[derive(Debug, Clone)]
pub struct TabularMdp<T> {
    state_labels: Vec<String>,
    actions: Vec<Vec<ActionSpec<T>>>,
    goal: Vec<bool>,
    reward_noise_sd: Option<T>,
    initial_dist: Vec<(StateId, T)>,
}

impl<T: Real> TabularMdp<T> {
    pub fn builder() -> MdpBuilder<T> {
        MdpBuilder::default()
    }

    pub fn n_states(&self) -> usize {
        self.actions.len()
    }

    pub fn state_label(&self, s: StateId) -> &str {
        &self.state_labels[s]
    }

    pub fn state_by_label(&self, label: &str) -> Option<StateId> {
        self.state_labels.iter().position(|l| l == label)
    }

    pub fn is_goal(&self, s: StateId) -> bool {
        self.goal[s]
    }

    pub fn goal_states(&self) -> impl Iterator<Item = StateId> + '_ {
        (0..self.n_states()).filter(|&s| self.goal[s])
    }

    pub fn actions_of(&self, s: StateId) -> impl ExactSizeIterator<Item = ActionId> + '_ {
        self.actions[s].iter().map(|spec| spec.action)
    }

    pub fn action_specs(&self, s: StateId) -> &[ActionSpec<T>] {
        &self.actions[s]
    }

    /// Position of `a` within the sorted action list of `s`.
    pub fn action_slot(&self, s: StateId, a: ActionId) -> Option<usize> {
        self.actions.get(s)?.iter().position(|spec| spec.action == a)
    }

    pub fn spec(&self, s: StateId, a: ActionId) -> Result<&ActionSpec<T>> {
        ensure!(s < self.n_states(), Precondition, "state {s} out of range");
        let slot = self
            .action_slot(s, a)
            .ok_or_else(|| Error::Precondition(format!("action {a} not admissible in state {s}")))?;
        Ok(&self.actions[s][slot])
    }

    pub fn transition(&self, s: StateId, a: ActionId) -> Result<&[(StateId, T)]> {
        Ok(&self.spec(s, a)?.transition)
    }

    pub fn mean_reward(&self, s: StateId, a: ActionId) -> Result<T> {
        Ok(self.spec(s, a)?.mean_reward)
    }

    pub fn reward_noise_sd(&self) -> Option<T> {
        self.reward_noise_sd
    }

    pub fn has_deterministic_rewards(&self) -> bool {
        self.reward_noise_sd.is_none()
    }

    pub fn initial_dist(&self) -> &[(StateId, T)] {
        &self.initial_dist
    }

    /// All `(s, a)` pairs in state-major order.
    pub fn pairs(&self) -> impl Iterator<Item = (StateId, ActionId)> + '_ {
        (0..self.n_states()).flat_map(move |s| self.actions_of(s).map(move |a| (s, a)))
    }

    pub fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> StateId {
        sample_categorical(&self.initial_dist, rng)
    }

    /// Simulates one transition from `(s, a)`.
    pub fn step<R: Rng + ?Sized>(&self, s: StateId, a: ActionId, rng: &mut R) -> Result<(T, StateId)> {
        let spec = self.spec(s, a)?;
        let next = sample_categorical(&spec.transition, rng);
        let reward = match self.reward_noise_sd {
            Some(sd) if !self.goal[s] => {
                let z: f64 = StandardNormal.sample(rng);
                spec.mean_reward + sd * T::c(z)
            }
            _ => spec.mean_reward,
        };
        Ok((reward, next))
    }
}

/// Free-function form of [`TabularMdp::step`].
pub fn step<T: Real, R: Rng + ?Sized>(
    mdp: &TabularMdp<T>,
    s: StateId,
    a: ActionId,
    rng: &mut R,
) -> Result<(T, StateId)> {
    mdp.step(s, a, rng)
}

fn sample_categorical<T: Real, R: Rng + ?Sized>(dist: &[(StateId, T)], rng: &mut R) -> StateId {
    if dist.len() == 1 {
        return dist[0].0;
    }
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for &(s, p) in dist {
        acc += p.f64();
        if u < acc {
            return s;
        }
    }
    dist.last().expect("non-empty distribution").0
}

#[derive(Debug, Clone)]
pub struct MdpBuilder<T> {
    labels: Vec<String>,
    actions: Vec<Vec<ActionSpec<T>>>,
    goal: Vec<bool>,
    noise: Option<T>,
    initial: Vec<(StateId, T)>,
}

impl<T> Default for MdpBuilder<T> {
    fn default() -> Self {
        Self {
            labels: Vec::new(),
            actions: Vec::new(),
            goal: Vec::new(),
            noise: None,
            initial: Vec::new(),
        }
    }
}

impl<T: Real> MdpBuilder<T> {
    pub fn state(&mut self, label: impl Into<String>) -> StateId {
        self.labels.push(label.into());
        self.actions.push(Vec::new());
        self.goal.push(false);
        self.labels.len() - 1
    }

    /// Marks `s` as an absorbing goal with its single zero-reward self loop.
    pub fn goal(&mut self, s: StateId) -> &mut Self {
        self.goal[s] = true;
        self.actions[s] = vec![ActionSpec {
            action: GOAL_ACTION,
            transition: vec![(s, T::one())],
            mean_reward: T::zero(),
        }];
        self
    }

    pub fn action(&mut self, s: StateId, a: ActionId, transition: Vec<(StateId, T)>, mean_reward: T) -> &mut Self {
        self.actions[s].push(ActionSpec { action: a, transition, mean_reward });
        self
    }

    /// Deterministic move helper.
    pub fn edge(&mut self, s: StateId, a: ActionId, to: StateId, reward: T) -> &mut Self {
        self.action(s, a, vec![(to, T::one())], reward)
    }

    pub fn reward_noise_sd(&mut self, sd: T) -> &mut Self {
        self.noise = Some(sd);
        self
    }

    pub fn initial(&mut self, dist: Vec<(StateId, T)>) -> &mut Self {
        self.initial = dist;
        self
    }

    pub fn build(&self) -> Result<TabularMdp<T>> {
        let n = self.labels.len();
        ensure!(n > 0, InvalidArgument, "MDP has no states");
        ensure!(self.goal.iter().any(|&g| g), InvalidArgument, "MDP has no goal state");
        let tol = T::c(1e-12);
        let check_dist = |what: &str, dist: &[(StateId, T)]| -> Result<()> {
            ensure!(!dist.is_empty(), InvalidArgument, "{what}: empty distribution");
            let mut total = T::zero();
            for &(s, p) in dist {
                ensure!(s < n, InvalidArgument, "{what}: state {s} out of range");
                ensure!(p >= T::zero() && p.is_finite(), InvalidArgument, "{what}: bad probability");
                total += p;
            }
            ensure!((total - T::one()).abs() <= tol, InvalidArgument, "{what}: probabilities sum to {total}");
            Ok(())
        };
        let mut actions = self.actions.clone();
        for (s, acts) in actions.iter_mut().enumerate() {
            ensure!(!acts.is_empty(), InvalidArgument, "state {s} has no admissible action");
            acts.sort_by_key(|spec| spec.action);
            for w in acts.windows(2) {
                ensure!(w[0].action != w[1].action, InvalidArgument, "duplicate action {} in state {s}", w[0].action);
            }
            for spec in acts.iter() {
                check_dist(&format!("transition ({s},{})", spec.action), &spec.transition)?;
                ensure!(spec.mean_reward.is_finite(), InvalidArgument, "non-finite reward at ({s},{})", spec.action);
            }
        }
        check_dist("initial distribution", &self.initial)?;
        if let Some(sd) = self.noise {
            ensure!(sd >= T::zero() && sd.is_finite(), InvalidArgument, "reward noise sd must be >= 0");
        }
        Ok(TabularMdp {
            state_labels: self.labels.clone(),
            actions,
            goal: self.goal.clone(),
            reward_noise_sd: self.noise.filter(|&sd| sd > T::zero()),
            initial_dist: self.initial.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    #[test]
    fn builder_rejects_bad_kernels() {
        let mut b = TabularMdp::<f64>::builder();
        let s = b.state("s");
        let g = b.state("g");
        b.goal(g).initial(vec![(s, 1.0)]);
        b.action(s, 0, vec![(g, 0.5), (s, 0.4)], -1.0);
        assert!(matches!(b.build(), Err(Error::InvalidArgument(_))));

        let mut b = TabularMdp::<f64>::builder();
        let s = b.state("s");
        b.state("g");
        b.initial(vec![(s, 1.0)]).edge(s, 0, s, 0.0);
        assert!(b.build().is_err(), "no goal state");
    }

    #[test]
    fn step_rejects_inadmissible_action() {
        let mdp = two_state_example::<f64>();
        let mut rng = substream(0, "t", &[]);
        assert!(matches!(mdp.step(0, 7, &mut rng), Err(Error::Precondition(_))));
    }

    #[test]
    fn step_examples() {
        let mut rng = substream(1, "t", &[]);
        let mdp = two_state_example::<f64>();
        assert_eq!(mdp.step(0, 0, &mut rng).unwrap(), (-1.0, 0));
        for g in mdp.goal_states().collect::<Vec<_>>() {
            assert_eq!(mdp.step(g, GOAL_ACTION, &mut rng).unwrap(), (0.0, g));
        }
        let ds = deep_sea::<f64>(5).unwrap();
        let s0 = ds.state_by_label("(0,0)").unwrap();
        let (r, s1) = ds.step(s0, 0, &mut rng).unwrap();
        assert!((r + 1.0 / 500.0).abs() < 1e-15);
        assert_eq!(ds.state_label(s1), "(1,1)");
    }

    #[test]
    fn noisy_rewards_have_requested_spread() {
        let mut b = TabularMdp::<f64>::builder();
        let s = b.state("s");
        let g = b.state("g");
        b.goal(g).initial(vec![(s, 1.0)]).edge(s, 0, g, 2.0).reward_noise_sd(0.5);
        let mdp = b.build().unwrap();
        let mut rng = substream(3, "noise", &[]);
        let xs: Vec<f64> = (0..20_000).map(|_| mdp.step(s, 0, &mut rng).unwrap().0).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
        assert!((mean - 2.0).abs() < 0.02);
        assert!((var.sqrt() - 0.5).abs() < 0.02);
    }

    #[test]
    fn builtin_kernels_are_normalised() {
        let mdps = [
            two_state_example::<f64>(),
            five_state_example(1.0, -2.0, 0.5, 3.0),
            deep_sea(1).unwrap(),
            deep_sea(7).unwrap(),
        ];
        for mdp in &mdps {
            for (s, a) in mdp.pairs() {
                let total: f64 = mdp.transition(s, a).unwrap().iter().map(|p| p.1).sum();
                assert!((total - 1.0).abs() <= 1e-12);
            }
        }
    }
}
