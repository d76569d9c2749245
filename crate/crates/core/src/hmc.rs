//! Hamiltonian Monte Carlo with a diagonal mass matrix.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{ensure, Error, Result};
use crate::Real;

/// A differentiable log density.
pub trait LogDensity<T>: Sync {
    fn dim(&self) -> usize;
    fn log_density(&self, theta: &[T]) -> T;
    /// Overwrites `grad` with the gradient at `theta`.
    fn grad_log_density(&self, theta: &[T], grad: &mut [T]);
}

/// Step-size and trajectory-length bounds plus the mass matrix diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct HmcPlan<T> {
    pub delta_star: T,
    pub l_star: usize,
    pub mass_diag: Vec<T>,
    pub max_steps: usize,
}

impl<T: Real> HmcPlan<T> {
    pub fn new(dim: usize, delta_star: T, l_star: usize, max_steps: usize) -> Self {
        Self { delta_star, l_star, mass_diag: vec![T::one(); dim], max_steps }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.delta_star > T::zero() && self.delta_star.is_finite(), InvalidArgument, "delta_star must be positive");
        ensure!(self.l_star >= 1, InvalidArgument, "l_star must be at least 1");
        ensure!(
            self.mass_diag.iter().all(|&m| m > T::zero() && m.is_finite()),
            InvalidArgument,
            "mass matrix entries must be positive"
        );
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainStats<T> {
    pub samples: Vec<Vec<T>>,
    pub accepts: usize,
    pub proposals: usize,
}

impl<T> ChainStats<T> {
    pub fn acceptance_rate(&self) -> f64 {
        if self.proposals == 0 {
            0.0
        } else {
            self.accepts as f64 / self.proposals as f64
        }
    }
}

fn kinetic<T: Real>(p: &[T], mass: &[T]) -> T {
    p.iter().zip(mass).map(|(&pk, &m)| pk * pk / (T::c(2.0) * m)).sum()
}

/// `H = -log p(theta) + sum p_k^2 / (2 m_k)`.
pub fn hamiltonian<T: Real>(target: &impl LogDensity<T>, theta: &[T], p: &[T], mass_diag: &[T]) -> T {
    -target.log_density(theta) + kinetic(p, mass_diag)
}

/// Runs `l` leapfrog steps in place. `grad` holds the gradient at `theta`
/// on entry and at the final position on exit. Returns `false` as soon as a
/// gradient is non-finite.
fn leapfrog_in_place<T: Real>(
    target: &impl LogDensity<T>,
    theta: &mut [T],
    p: &mut [T],
    grad: &mut [T],
    delta: T,
    l: usize,
    mass: &[T],
) -> bool {
    let half = T::c(0.5) * delta;
    for _ in 0..l {
        for k in 0..theta.len() {
            p[k] += half * grad[k];
            theta[k] += delta * p[k] / mass[k];
        }
        target.grad_log_density(theta, grad);
        if grad.iter().any(|g| !g.is_finite()) {
            return false;
        }
        for k in 0..theta.len() {
            p[k] += half * grad[k];
        }
    }
    true
}

/// `l` leapfrog steps of size `delta` from `(theta, p)`.
pub fn leapfrog<T: Real>(
    target: &impl LogDensity<T>,
    theta: &[T],
    p: &[T],
    delta: T,
    l: usize,
    mass_diag: &[T],
) -> Result<(Vec<T>, Vec<T>)> {
    ensure!(delta > T::zero(), InvalidArgument, "step size must be positive");
    ensure!(l >= 1, InvalidArgument, "need at least one leapfrog step");
    ensure!(theta.len() == p.len() && p.len() == mass_diag.len(), InvalidArgument, "dimension mismatch");
    let (mut th, mut mom) = (theta.to_vec(), p.to_vec());
    let mut grad = vec![T::zero(); th.len()];
    target.grad_log_density(&th, &mut grad);
    if grad.iter().any(|g| !g.is_finite()) || !leapfrog_in_place(target, &mut th, &mut mom, &mut grad, delta, l, mass_diag) {
        return Err(Error::Numerical("non-finite gradient in leapfrog".into()));
    }
    Ok((th, mom))
}

/// Position of a chain together with its cached log density and gradient.
#[derive(Debug, Clone)]
pub struct ChainState<T> {
    pub theta: Vec<T>,
    pub log_density: T,
    pub grad: Vec<T>,
}

impl<T: Real> ChainState<T> {
    pub fn new(target: &impl LogDensity<T>, theta: Vec<T>) -> Self {
        let mut grad = vec![T::zero(); theta.len()];
        target.grad_log_density(&theta, &mut grad);
        let log_density = target.log_density(&theta);
        Self { theta, log_density, grad }
    }
}

/// Outcome of one HMC transition.
#[derive(Debug, Clone, Copy)]
pub struct StepInfo<T> {
    pub accepted: bool,
    /// `H(before) - H(after)`; `-inf` when the trajectory diverged.
    pub energy_change: T,
}

/// Draws a momentum `p ~ N(0, diag(mass))`.
pub fn sample_momentum<T: Real, R: Rng + ?Sized>(mass_diag: &[T], rng: &mut R) -> Vec<T> {
    mass_diag
        .iter()
        .map(|&m| {
            let z: f64 = StandardNormal.sample(rng);
            m.sqrt() * T::c(z)
        })
        .collect()
}

/// Proposes from `state` with a fresh momentum and applies the Metropolis
/// correction. Returns the proposal alongside the step info so callers can
/// score rejected moves too.
pub fn propose<T: Real, R: Rng + ?Sized>(
    target: &impl LogDensity<T>,
    state: &ChainState<T>,
    delta: T,
    l: usize,
    mass_diag: &[T],
    rng: &mut R,
) -> (Option<ChainState<T>>, StepInfo<T>) {
    let mut p = sample_momentum(mass_diag, rng);
    let h0 = -state.log_density + kinetic(&p, mass_diag);
    let mut theta = state.theta.clone();
    let mut grad = state.grad.clone();
    let ok = leapfrog_in_place(target, &mut theta, &mut p, &mut grad, delta, l, mass_diag);
    let u: f64 = rng.random();
    if !ok {
        return (None, StepInfo { accepted: false, energy_change: T::neg_infinity() });
    }
    let logp = target.log_density(&theta);
    let h1 = -logp + kinetic(&p, mass_diag);
    let zeta = h0 - h1;
    if !zeta.is_finite() {
        return (None, StepInfo { accepted: false, energy_change: T::neg_infinity() });
    }
    let accepted = zeta >= T::zero() || u.ln() < zeta.f64();
    (Some(ChainState { theta, log_density: logp, grad }), StepInfo { accepted, energy_change: zeta })
}

/// One HMC transition in place.
pub fn hmc_step<T: Real, R: Rng + ?Sized>(
    target: &impl LogDensity<T>,
    state: &mut ChainState<T>,
    delta: T,
    l: usize,
    mass_diag: &[T],
    rng: &mut R,
) -> StepInfo<T> {
    let (proposal, info) = propose(target, state, delta, l, mass_diag, rng);
    if info.accepted {
        *state = proposal.expect("accepted proposal exists");
    }
    info
}

/// Early-stopping predicate over the samples drawn so far.
pub type StopRule<'a, T> = &'a dyn Fn(&[Vec<T>]) -> bool;

/// Runs up to `plan.max_steps` HMC transitions from `theta0`, stopping early
/// once `stop` returns true on the samples so far.
pub fn hmc_chain<T: Real, R: Rng + ?Sized>(
    theta0: &[T],
    plan: &HmcPlan<T>,
    delta: T,
    l: usize,
    target: &impl LogDensity<T>,
    rng: &mut R,
    stop: Option<StopRule<'_, T>>,
) -> Result<ChainStats<T>> {
    plan.validate()?;
    ensure!(delta > T::zero() && delta <= plan.delta_star, Precondition, "step size {delta} outside (0, {}]", plan.delta_star);
    ensure!(l >= 1 && l <= plan.l_star, Precondition, "leapfrog count {l} outside [1, {}]", plan.l_star);
    ensure!(theta0.len() == target.dim() && plan.mass_diag.len() == target.dim(), InvalidArgument, "dimension mismatch");
    let mut state = ChainState::new(target, theta0.to_vec());
    let mut stats = ChainStats { samples: Vec::with_capacity(plan.max_steps), accepts: 0, proposals: 0 };
    for _ in 0..plan.max_steps {
        let info = hmc_step(target, &mut state, delta, l, &plan.mass_diag, rng);
        stats.proposals += 1;
        stats.accepts += info.accepted as usize;
        stats.samples.push(state.theta.clone());
        if stop.is_some_and(|f| f(&stats.samples)) {
            break;
        }
    }
    Ok(stats)
}
