//! Fixed-data samplers: a single HMC chain at a fixed tolerance, or one SMC
//! update from the prior.

use bellman_abc::hmc::{hmc_step, ChainState, LogDensity};
use bellman_abc::Dataset;
use bellman_abc::model::Partition;
use bellman_abc::rng::{substream, SeedSequence, StreamRng};
use bellman_abc::smc::{update_posterior, UpdateFailure, UpdateOutcome};
use bellman_abc::{HmcPlan, Model, ParticleSet, ToleranceAssignment};
use rand::Rng;

use crate::config::RunConfig;

const TARGET_ACCEPT: f64 = 0.8;

/// Dual-averaging step-size adaptation towards `TARGET_ACCEPT`.
struct StepSizeAdapter {
    mu: f64,
    h_bar: f64,
    x_bar: f64,
    t: f64,
}

impl StepSizeAdapter {
    const GAMMA: f64 = 0.05;
    const T0: f64 = 10.0;
    const KAPPA: f64 = 0.75;

    fn new(delta: f64) -> Self {
        Self { mu: (10.0 * delta).ln(), h_bar: 0.0, x_bar: delta.ln(), t: 0.0 }
    }

    /// Feeds one acceptance probability and returns the next step size.
    fn update(&mut self, accept_prob: f64) -> f64 {
        self.t += 1.0;
        let w = 1.0 / (self.t + Self::T0);
        self.h_bar = (1.0 - w) * self.h_bar + w * (TARGET_ACCEPT - accept_prob);
        let x = self.mu - self.t.sqrt() / Self::GAMMA * self.h_bar;
        let eta = self.t.powf(-Self::KAPPA);
        self.x_bar = eta * x + (1.0 - eta) * self.x_bar;
        x.exp()
    }

    fn final_step(&self) -> f64 {
        self.x_bar.exp()
    }
}

/// Ends of the mass-matrix windows within a warm-up of length `n`: a fast
/// initial phase, doubling windows, then a final step-size-only phase.
fn mass_window_ends(n: usize) -> Vec<usize> {
    let (init, tail) = (n * 15 / 100, n / 10);
    let mut ends = Vec::new();
    let mut start = init;
    let mut len = 25.max(n / 40);
    while start + len < n.saturating_sub(tail) {
        let next = start + 2 * len;
        // absorb a short last window into this one
        let end = if next + 2 * len > n.saturating_sub(tail) { n - tail } else { start + len };
        ends.push(end);
        start = end;
        len *= 2;
    }
    ends
}

pub struct HmcRun {
    pub samples: Vec<Vec<f64>>,
    pub accept_rate: f64,
    pub divergent: usize,
    pub plan: HmcPlan,
}

fn variance(xs: &[Vec<f64>]) -> Vec<f64> {
    let n = xs.len() as f64;
    let d = xs[0].len();
    (0..d)
        .map(|k| {
            let m = xs.iter().map(|x| x[k]).sum::<f64>() / n;
            xs.iter().map(|x| (x[k] - m).powi(2)).sum::<f64>() / n
        })
        .collect()
}

/// Draws `config.samples` states from the posterior of `data` at tolerance
/// `config.eps_target`. Step size and diagonal mass are tuned during
/// `config.burn_in` warm-up transitions and then frozen. Every transition
/// jitters the step size down by up to 20% and draws the leapfrog count
/// from `ceil(L/2)..=L`.
pub fn sample_hmc(model: &Model, data: &Dataset, config: &RunConfig) -> bellman_abc::Result<HmcRun> {
    let new = model.compile(data)?;
    let old = Partition::default();
    let tol = ToleranceAssignment::common(config.eps_target);
    let target = model.posterior(&old, &new, tol);
    let d = target.dim();
    let mut plan = HmcPlan::new(d, config.delta_star0, config.l_star0, 1);
    let theta0 = model.sample_prior(&mut substream(config.seed, "init", &[]));
    let mut state = ChainState::new(&target, theta0);
    let mut rng = substream(config.seed, "offline", &[]);
    let l_min = config.l_star0.div_ceil(2);

    let step = |state: &mut ChainState<f64>, plan: &HmcPlan, rng: &mut StreamRng| {
        let delta = plan.delta_star * (1.0 - 0.2 * rng.random::<f64>());
        let l = rng.random_range(l_min..=plan.l_star);
        hmc_step(&target, state, delta, l, &plan.mass_diag, rng)
    };

    let ends = mass_window_ends(config.burn_in);
    let mut adapter = StepSizeAdapter::new(plan.delta_star);
    let mut segment: Vec<Vec<f64>> = Vec::new();
    for t in 1..=config.burn_in {
        let info = step(&mut state, &plan, &mut rng);
        let a = if info.energy_change.is_finite() { info.energy_change.min(0.0).exp() } else { 0.0 };
        plan.delta_star = adapter.update(a);
        segment.push(state.theta.clone());
        if ends.contains(&t) {
            let var = variance(&segment[segment.len() / 2..]);
            plan.mass_diag = var.iter().map(|v| 1.0 / v.max(1e-8)).collect();
            segment.clear();
            adapter = StepSizeAdapter::new(plan.delta_star);
        }
    }
    if config.burn_in > 0 {
        plan.delta_star = adapter.final_step();
    }

    let mut samples = Vec::with_capacity(config.samples);
    let mut accepts = 0;
    let mut divergent = 0;
    for _ in 0..config.samples {
        let info = step(&mut state, &plan, &mut rng);
        accepts += info.accepted as usize;
        divergent += (!info.energy_change.is_finite()) as usize;
        samples.push(state.theta.clone());
    }
    if divergent > 0 {
        log::warn!("{divergent} of {} HMC trajectories diverged", config.samples);
    }
    let accept_rate = accepts as f64 / config.samples as f64;
    Ok(HmcRun { samples, accept_rate, divergent, plan })
}

pub struct SmcRun {
    pub particles: ParticleSet,
    pub outcome: UpdateOutcome<f64>,
}

/// Moves `config.n_particles` prior draws to the posterior of `data` with one
/// adaptive-tolerance SMC update ending at `config.eps_target`.
pub fn sample_smc(model: &Model, data: &Dataset, config: &RunConfig) -> Result<SmcRun, UpdateFailure<f64>> {
    let fail = |error| UpdateFailure { error, trace: Vec::new() };
    let new = model.compile(data).map_err(fail)?;
    let old = Partition::default();
    let mut particles = ParticleSet::from_prior(model, config.n_particles, &mut substream(config.seed, "init", &[])).map_err(fail)?;
    let mut plan = HmcPlan::new(model.dim(), config.delta_star0, config.l_star0, config.hmc_max_steps);
    let mut seeds = SeedSequence::new(config.seed);
    let outcome = update_posterior(&mut particles, model, &old, &new, config.eps_target, config.eps_target, &mut plan, &config.smc(), &mut seeds)?;
    Ok(SmcRun { particles, outcome })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn windows_tile_the_warm_up() {
        for n in [100, 1000, 2000, 5000] {
            let e = mass_window_ends(n);
            assert!(!e.is_empty(), "{n}");
            assert!(e.windows(2).all(|w| w[1] > w[0]));
            assert_eq!(*e.last().unwrap(), n - n / 10);
        }
        assert!(mass_window_ends(0).is_empty());
    }

    #[test]
    fn step_size_moves_towards_target() {
        let mut a = StepSizeAdapter::new(1.0);
        for _ in 0..200 {
            a.update(0.0);
        }
        assert!(a.final_step() < 0.1);
        let mut a = StepSizeAdapter::new(1.0);
        for _ in 0..200 {
            a.update(1.0);
        }
        assert!(a.final_step() > 1.0);
    }
}
