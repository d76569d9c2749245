//! Posterior-sampling exploration: act greedily for one episode with a
//! parameter drawn from the particle approximation, then fold the new
//! transitions into the posterior.

use rand::Rng;

use crate::error::{ensure, Error, Result};
use crate::hmc::HmcPlan;
use crate::mdp::{value_iteration, ActionId, Dataset, QIndex, StateId, TabularMdp};
use crate::model::{BellmanModel, Partition, PriorSpec};
use crate::rng::{substream, SeedSequence};
use crate::smc::{update_posterior, ParticleSet, SmcConfig, TraceRow};
use crate::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct OnlineConfig<T> {
    pub n_particles: usize,
    pub prior_sigma: T,
    /// Tolerance every update anneals towards.
    pub eps_target: T,
    pub delta_star0: T,
    pub l_star0: usize,
    pub episodes: usize,
    pub seed: u64,
    /// Defaults to ten times the number of states.
    pub step_cap: Option<usize>,
    /// Keep a particle snapshot every this many episodes; 0 keeps none.
    pub particle_stride: usize,
    pub smc: SmcConfig<T>,
}

impl<T: Real> Default for OnlineConfig<T> {
    fn default() -> Self {
        Self {
            n_particles: 20,
            prior_sigma: T::c(4.0),
            eps_target: T::c(0.05),
            delta_star0: T::c(0.5),
            l_star0: 10,
            episodes: 300,
            seed: 0,
            step_cap: None,
            particle_stride: 0,
            smc: SmcConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLog<T> {
    pub episode: usize,
    pub steps: usize,
    pub ret: T,
    pub regret: T,
    pub cumulative_regret: T,
    pub tolerance_at_end: T,
    pub ess_at_end: T,
    pub bellman_error_at_end: T,
}

/// Result of [`run_online`].
#[derive(Debug, Clone)]
pub struct OnlineRun<T> {
    pub logs: Vec<EpisodeLog<T>>,
    pub particles: ParticleSet<T>,
    pub trace: Vec<TraceRow<T>>,
    /// `(episode, particles)` every `particle_stride` episodes.
    pub snapshots: Vec<(usize, ParticleSet<T>)>,
    pub v_star: T,
}

/// A run that stopped early, with everything logged before the failure.
#[derive(Debug, Clone)]
pub struct OnlineFailure<T> {
    pub error: Error,
    pub logs: Vec<EpisodeLog<T>>,
    pub trace: Vec<TraceRow<T>>,
}

impl<T> std::fmt::Display for OnlineFailure<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "online run failed after {} episodes: {}", self.logs.len(), self.error)
    }
}

impl<T: std::fmt::Debug> std::error::Error for OnlineFailure<T> {}

/// Greedy action at `s` under `theta`; exact ties are broken uniformly at
/// random.
pub fn greedy_action<T: Real, R: Rng + ?Sized>(
    theta: &[T],
    idx: &QIndex,
    mdp: &TabularMdp<T>,
    s: StateId,
    rng: &mut R,
) -> Result<ActionId> {
    ensure!(s < mdp.n_states() && !mdp.is_goal(s), Precondition, "state {s} is a goal or out of range");
    let coords = idx.state_coords(s);
    let best = coords.iter().map(|&j| theta[j]).fold(T::neg_infinity(), T::max);
    let ties: Vec<usize> = (0..coords.len()).filter(|&k| theta[coords[k]] == best).collect();
    let slot = match ties.len() {
        0 => 0,
        1 => ties[0],
        n => ties[rng.random_range(0..n)],
    };
    Ok(mdp.action_specs(s)[slot].action)
}

/// Per-episode and cumulative regret against `v_star`.
pub fn regret<T: Real>(returns: &[T], v_star: T) -> Vec<(T, T)> {
    let mut cum = T::zero();
    returns
        .iter()
        .map(|&r| {
            let reg = v_star - r;
            cum += reg;
            (reg, cum)
        })
        .collect()
}

/// First episode count `E > 1` at which the average regret is at most 0.5.
pub fn learning_time<T: Real>(regrets: &[T]) -> Option<usize> {
    let mut cum = T::zero();
    for (i, &r) in regrets.iter().enumerate() {
        cum += r;
        let e = i + 1;
        if e > 1 && cum / T::from_usize_lossy(e) <= T::c(0.5) {
            return Some(e);
        }
    }
    None
}

fn sample_index<T: Real, R: Rng + ?Sized>(weights: &[T], rng: &mut R) -> usize {
    let total: f64 = weights.iter().map(|w| w.f64()).sum();
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w.f64();
        if u < acc {
            return i;
        }
    }
    weights.len() - 1
}

/// Runs `config.episodes` episodes of posterior-sampling exploration on
/// `mdp`, updating the particle posterior after every episode.
pub fn run_online<T: Real>(mdp: &TabularMdp<T>, config: &OnlineConfig<T>) -> std::result::Result<OnlineRun<T>, OnlineFailure<T>> {
    let mut logs = Vec::new();
    let mut trace: Vec<TraceRow<T>> = Vec::new();
    let fail = |error: Error, logs: Vec<EpisodeLog<T>>, trace: Vec<TraceRow<T>>| OnlineFailure { error, logs, trace };

    let setup = (|| -> Result<_> {
        ensure!(config.eps_target > T::zero(), InvalidArgument, "eps_target must be positive");
        config.smc.validate()?;
        let model = BellmanModel::new(mdp.clone(), PriorSpec::new(config.prior_sigma))?;
        let particles = ParticleSet::from_prior(&model, config.n_particles, &mut substream(config.seed, "init", &[]))?;
        let plan = HmcPlan::new(model.dim(), config.delta_star0, config.l_star0, config.smc.max_mutation_steps);
        plan.validate()?;
        let v_star = value_iteration(mdp, T::c(1e-10))?.v_initial(mdp);
        Ok((model, particles, plan, v_star))
    })();
    let (model, mut particles, mut plan, v_star) = setup.map_err(|e| fail(e, Vec::new(), Vec::new()))?;
    let idx = model.index().clone();
    let cap = config.step_cap.unwrap_or(10 * mdp.n_states());
    let mut seeds = SeedSequence::new(config.seed);
    let mut dataset = Dataset::for_mdp(mdp);
    let mut old = Partition::default();
    let mut eps = config.eps_target;
    let mut cumulative = T::zero();
    let mut snapshots = Vec::new();

    for episode in 1..=config.episodes {
        let mut rng = substream(config.seed, "episode", &[episode as u64]);
        let theta = particles.thetas()[sample_index(&particles.weights(), &mut rng)].clone();
        let mut fresh = Dataset::new(dataset.mode());
        let mut s = mdp.sample_initial(&mut rng);
        let (mut steps, mut ret) = (0usize, T::zero());
        let rollout = (|| -> Result<()> {
            while !mdp.is_goal(s) && steps < cap {
                let a = greedy_action(&theta, &idx, mdp, s, &mut rng)?;
                let (r, next) = mdp.step(s, a, &mut rng)?;
                let t = crate::mdp::Transition::new(s, a, r, next);
                if dataset.insert(t) {
                    fresh.insert(t);
                }
                ret += r;
                steps += 1;
                s = next;
            }
            Ok(())
        })();
        if let Err(e) = rollout {
            return Err(fail(e, logs, trace));
        }
        if steps == cap && !mdp.is_goal(s) {
            log::debug!("episode {episode} hit the step cap of {cap}");
        }

        let new = match model.compile(&fresh) {
            Ok(p) => p,
            Err(e) => return Err(fail(e, logs, trace)),
        };
        let outcome = update_posterior(&mut particles, &model, &old, &new, eps, config.eps_target, &mut plan, &config.smc, &mut seeds);
        let offset = trace.len();
        match outcome {
            Ok(out) => {
                trace.extend(out.trace.into_iter().map(|mut row| {
                    row.update_index += offset;
                    row
                }));
                eps = out.state.eps_old;
            }
            Err(f) => {
                trace.extend(f.trace.into_iter().map(|mut row| {
                    row.update_index += offset;
                    row
                }));
                return Err(fail(f.error, logs, trace));
            }
        }
        old.extend(&new);
        particles.merge_new_into_old();

        let reg = v_star - ret;
        cumulative += reg;
        logs.push(EpisodeLog {
            episode,
            steps,
            ret,
            regret: reg,
            cumulative_regret: cumulative,
            tolerance_at_end: eps,
            ess_at_end: particles.ess().unwrap_or(T::zero()),
            bellman_error_at_end: particles.bellman_error(),
        });
        if config.particle_stride > 0 && episode % config.particle_stride == 0 {
            snapshots.push((episode, particles.clone()));
        }
    }
    Ok(OnlineRun { logs, particles, trace, snapshots, v_star })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{deep_sea, two_state_example};

    #[test]
    fn greedy_examples() {
        let mdp = two_state_example::<f64>();
        let idx = QIndex::new(&mdp);
        let mut rng = substream(0, "g", &[]);
        assert_eq!(greedy_action(&[-2.0, -1.0], &idx, &mdp, 0, &mut rng).unwrap(), 1);
        assert!(greedy_action(&[-2.0, -1.0], &idx, &mdp, 1, &mut rng).is_err());
        let n = 10_000;
        let ones = (0..n).filter(|_| greedy_action(&[0.5, 0.5], &idx, &mdp, 0, &mut rng).unwrap() == 1).count();
        // 4 standard errors of a fair coin
        assert!((ones as f64 / n as f64 - 0.5).abs() < 4.0 * (0.25 / n as f64).sqrt());
    }

    #[test]
    fn learning_time_examples() {
        assert_eq!(learning_time(&[0.0f64; 5]), Some(2));
        assert_eq!(learning_time(&[1.0f64; 50]), None);
        assert_eq!(learning_time(&[1.0, 1.0, 0.0, 0.0, 0.0, 0.0]), Some(4));
        assert_eq!(learning_time::<f64>(&[]), None);
    }

    #[test]
    fn regret_accumulates() {
        let v = regret(&[0.5, 0.5, 0.5], 1.0);
        assert_eq!(v.last().unwrap().1, 1.5);
        let mdp = deep_sea::<f64>(5).unwrap();
        let v_star = value_iteration(&mdp, 1e-12).unwrap().v_initial(&mdp);
        let left_return = 4.0 / 500.0;
        let r = regret(&[left_return], v_star)[0].0;
        assert!((r - (v_star - 4.0 / 500.0)).abs() < 1e-15);
        assert!((v_star - (1.0 - 4.0 / 500.0)).abs() < 1e-12);
    }

    #[test]
    fn depth_one_has_empty_episodes() {
        let mdp = deep_sea::<f64>(1).unwrap();
        let config = OnlineConfig { episodes: 5, ..OnlineConfig::default() };
        let run = run_online(&mdp, &config).unwrap();
        assert!(run.logs.iter().all(|l| l.steps == 0 && l.regret == 0.0));
        assert!(run.trace.is_empty());
    }
}
