use std::fmt;

use rayon::prelude::*;

use super::{adapt_kernel, find_tolerance, gelman_rubin, stage_assignment, GrDiagnostic, ParticleSet};
use crate::error::{ensure, Error, Result};
use crate::hmc::{hmc_step, ChainState, HmcPlan};
use crate::model::{BellmanModel, Partition, Tolerance, ToleranceAssignment};
use crate::rng::{SeedSequence, StepSeed, StreamRng};
use crate::Real;

/// Annealing stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    /// Give the new data a finite tolerance.
    I,
    /// Lower the new-data tolerance towards the old one.
    II,
    /// Lower the common tolerance towards the target.
    III,
    /// Raise the old-data tolerance.
    IVa,
    /// Raise the common tolerance.
    IVb,
    Done,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::I => "I",
            Stage::II => "II",
            Stage::III => "III",
            Stage::IVa => "IVa",
            Stage::IVb => "IVb",
            Stage::Done => "done",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmcConfig<T> {
    /// Fraction of ESS kept by each tolerance move.
    pub alpha: T,
    pub gr_threshold: T,
    pub gr_majority: T,
    /// Consecutive ineffective mutations before tolerances are raised.
    pub n_m: usize,
    /// Consecutive stalled Bellman errors before the update stops.
    pub n_b: usize,
    /// Relative decrease of the Bellman error that counts as progress.
    pub bellman_min_improvement: T,
    /// HMC steps per particle per SMC step.
    pub max_mutation_steps: usize,
    /// Stop mutating once the chains pass the Gelman-Rubin check.
    pub early_stop: bool,
    pub min_mutation_steps: usize,
    /// With `false`, the MCMC and Bellman checks are off and only the ESS
    /// rule drives the tolerances.
    pub adaptive: bool,
    /// Hard bound on SMC steps per update.
    pub max_iterations: usize,
}

impl<T: Real> Default for SmcConfig<T> {
    fn default() -> Self {
        Self {
            alpha: T::c(0.9),
            gr_threshold: T::c(2.2),
            gr_majority: T::c(0.5),
            n_m: 3,
            n_b: 5,
            bellman_min_improvement: T::c(0.01),
            max_mutation_steps: 30,
            early_stop: false,
            min_mutation_steps: 5,
            adaptive: true,
            max_iterations: 500,
        }
    }
}

impl<T: Real> SmcConfig<T> {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.alpha > T::zero() && self.alpha < T::one(), InvalidArgument, "alpha must lie in (0, 1)");
        ensure!(self.gr_threshold > T::zero(), InvalidArgument, "GR threshold must be positive");
        ensure!(self.gr_majority >= T::zero() && self.gr_majority <= T::one(), InvalidArgument, "GR majority must lie in [0, 1]");
        ensure!(self.n_m >= 1 && self.n_b >= 1, InvalidArgument, "counter caps must be positive");
        ensure!(self.max_iterations >= 1, InvalidArgument, "max_iterations must be positive");
        Ok(())
    }
}

/// Tolerances and counters of an update in progress.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToleranceState<T> {
    pub eps_old: T,
    pub eps_new: Tolerance<T>,
    pub stage: Stage,
    pub c_m: usize,
    pub c_b: usize,
}

impl<T: Real> ToleranceState<T> {
    pub fn assignment(&self) -> ToleranceAssignment<T> {
        ToleranceAssignment::new(Tolerance::Finite(self.eps_old), self.eps_new)
    }
}

/// One SMC step as reported in traces.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow<T> {
    pub update_index: usize,
    pub stage: Stage,
    pub eps_old: T,
    /// Infinite while the new data is unconstrained.
    pub eps_new: T,
    /// ESS after reweighting, before any resampling.
    pub ess: T,
    pub resampled: bool,
    pub gr_pass_fraction: T,
    pub bellman_error: T,
    pub accept_rate: T,
}

/// What [`smc_one_step`] did.
#[derive(Debug, Clone)]
pub struct StepReport<T> {
    pub ess: T,
    pub resampled: bool,
    pub gr: Option<GrDiagnostic<T>>,
    pub effective: bool,
    pub accept_rate: T,
    pub mutation_steps: usize,
    /// Per-particle mutation chains, `chains[n][m]`.
    pub chains: Vec<Vec<Vec<T>>>,
}

/// Reweights from `from` to `to`, resamples when the ESS falls below `N/2`,
/// adapts the HMC kernel and mutates every particle with up to
/// `config.max_mutation_steps` HMC steps. Caches are refreshed afterwards.
#[allow(clippy::too_many_arguments)]
pub fn smc_one_step<T: Real>(
    particles: &mut ParticleSet<T>,
    model: &BellmanModel<T>,
    old: &Partition<T>,
    new: &Partition<T>,
    stage: Stage,
    from: ToleranceAssignment<T>,
    to: ToleranceAssignment<T>,
    plan: &mut HmcPlan<T>,
    config: &SmcConfig<T>,
    seed: StepSeed,
) -> Result<StepReport<T>> {
    let prev = particles.clone();
    particles.reweight(model, old.len(), new.len(), stage, from, to)?;
    let ess = particles.ess()?;
    let n = particles.len();
    let resampled = ess < T::from_usize_lossy(n) * T::c(0.5);
    if resampled {
        particles.resample_multinomial(&mut seed.stream("resample"));
    }

    let target = model.posterior(old, new, to);
    let mut states: Vec<ChainState<T>> = particles.thetas().par_iter().map(|t| ChainState::new(&target, t.clone())).collect();
    let (new_plan, choices) = adapt_kernel(&prev, &states, &target, plan, seed)?;
    *plan = new_plan;

    let mut rngs: Vec<StreamRng> = (0..n).map(|i| seed.particle_stream("mutate", i)).collect();
    let mut chains: Vec<Vec<Vec<T>>> = vec![Vec::with_capacity(config.max_mutation_steps); n];
    let mut accepts = 0usize;
    let mut steps = 0usize;
    let mut gr = None;
    let mut effective = true;
    let mass = plan.mass_diag.clone();
    while steps < config.max_mutation_steps {
        let accepted: Vec<bool> = states
            .par_iter_mut()
            .zip(rngs.par_iter_mut())
            .zip(choices.par_iter())
            .map(|((state, rng), choice)| hmc_step(&target, state, choice.delta, choice.l, &mass, rng).accepted)
            .collect();
        accepts += accepted.iter().filter(|&&a| a).count();
        for (chain, state) in chains.iter_mut().zip(&states) {
            chain.push(state.theta.clone());
        }
        steps += 1;
        let last = steps == config.max_mutation_steps;
        if steps >= 2 && (last || (config.early_stop && steps >= config.min_mutation_steps)) {
            let (diag, ok) = gelman_rubin(&chains, config.gr_threshold, config.gr_majority)?;
            gr = Some(diag);
            effective = ok;
            if ok && config.early_stop {
                break;
            }
        }
    }

    particles.set_thetas(states.into_iter().map(|s| s.theta).collect());
    particles.refresh(model, old, new);
    let proposals = steps * n;
    let accept_rate = if proposals == 0 { T::zero() } else { T::from_usize_lossy(accepts) / T::from_usize_lossy(proposals) };
    Ok(StepReport { ess, resampled, gr, effective, accept_rate, mutation_steps: steps, chains })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitReason {
    TargetReached,
    NoNewData,
    BellmanStall,
    /// Raising the tolerances made the mutations effective again.
    RaisedUntilEffective,
    IterationLimit,
}

#[derive(Debug, Clone)]
pub struct UpdateOutcome<T> {
    pub state: ToleranceState<T>,
    pub trace: Vec<TraceRow<T>>,
    pub exit: ExitReason,
}

impl<T: Real> UpdateOutcome<T> {
    /// The tolerance shared by all data after the update.
    pub fn eps(&self) -> T {
        self.state.eps_old
    }
}

/// A failed update together with the trace up to the failure.
#[derive(Debug, Clone)]
pub struct UpdateFailure<T> {
    pub error: Error,
    pub trace: Vec<TraceRow<T>>,
}

impl<T> fmt::Display for UpdateFailure<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (after {} SMC steps)", self.error, self.trace.len())
    }
}

impl<T: fmt::Debug> std::error::Error for UpdateFailure<T> {}

struct Updater<'a, T: Real> {
    particles: &'a mut ParticleSet<T>,
    model: &'a BellmanModel<T>,
    old: &'a Partition<T>,
    new: &'a Partition<T>,
    plan: &'a mut HmcPlan<T>,
    config: &'a SmcConfig<T>,
    seeds: &'a mut SeedSequence,
    state: ToleranceState<T>,
    trace: Vec<TraceRow<T>>,
    last_bellman: Option<T>,
    raise_exhausted: bool,
}

impl<T: Real> Updater<'_, T> {
    /// Moves to `to` with one SMC step and records it. Returns whether the
    /// mutations were effective.
    fn step(&mut self, stage: Stage, to: ToleranceAssignment<T>) -> Result<bool> {
        let from = self.state.assignment();
        let report = smc_one_step(
            self.particles,
            self.model,
            self.old,
            self.new,
            stage,
            from,
            to,
            self.plan,
            self.config,
            self.seeds.next_step(),
        )?;
        self.state.stage = stage;
        self.state.eps_old = to.old.finite().expect("old tolerance stays finite");
        self.state.eps_new = to.new;
        self.trace.push(TraceRow {
            update_index: self.trace.len(),
            stage,
            eps_old: self.state.eps_old,
            eps_new: to.new.finite().unwrap_or(T::infinity()),
            ess: report.ess,
            resampled: report.resampled,
            gr_pass_fraction: report.gr.as_ref().map_or(T::nan(), |g| g.pass_fraction),
            bellman_error: self.particles.bellman_error(),
            accept_rate: report.accept_rate,
        });
        Ok(report.effective || !self.config.adaptive)
    }

    fn search(&self, stage: Stage, target: T) -> Result<T> {
        find_tolerance(
            self.particles,
            self.model,
            self.old.len(),
            self.new.len(),
            stage,
            self.state.assignment(),
            target,
            self.config.alpha,
        )
    }

    /// Lowers tolerances until the target is reached, a stall is detected or
    /// the mutations turn ineffective (`Ok(None)`).
    fn reduce(&mut self, eps_target: T) -> Result<Option<ExitReason>> {
        loop {
            if self.trace.len() >= self.config.max_iterations {
                return Ok(Some(ExitReason::IterationLimit));
            }
            let eps_old = self.state.eps_old;
            let (stage, to) = match self.state.eps_new {
                Tolerance::Unconstrained => {
                    let e = self.search(Stage::I, eps_old)?;
                    (Stage::I, stage_assignment(Stage::I, self.state.assignment(), e))
                }
                Tolerance::Finite(e_new) if e_new > eps_old => {
                    let e = self.search(Stage::II, eps_old)?;
                    (Stage::II, stage_assignment(Stage::II, self.state.assignment(), e))
                }
                Tolerance::Finite(_) => {
                    if eps_old <= eps_target {
                        return Ok(Some(ExitReason::TargetReached));
                    }
                    let e = self.search(Stage::III, eps_target)?;
                    (Stage::III, stage_assignment(Stage::III, self.state.assignment(), e))
                }
            };
            let was_common = self.state.eps_new == Tolerance::Finite(eps_old);
            let effective = self.step(stage, to)?;

            if effective || self.raise_exhausted {
                self.state.c_m = 0;
            } else {
                self.state.c_m += 1;
                if self.state.c_m >= self.config.n_m {
                    return Ok(None);
                }
            }
            if self.config.adaptive && was_common {
                let be = self.particles.bellman_error();
                let improved = match self.last_bellman {
                    Some(prev) => prev - be >= self.config.bellman_min_improvement * prev,
                    None => true,
                };
                self.last_bellman = Some(be);
                if improved {
                    self.state.c_b = 0;
                } else {
                    self.state.c_b += 1;
                    if self.state.c_b >= self.config.n_b {
                        return Ok(Some(ExitReason::BellmanStall));
                    }
                }
            }
        }
    }

    /// Raises tolerances until the mutations are effective again. Returns
    /// `Ok(None)` when annealing should resume.
    fn raise(&mut self) -> Result<Option<ExitReason>> {
        let cap_old = self.state.eps_old * T::c(2.0);
        loop {
            if self.trace.len() >= self.config.max_iterations {
                return Ok(Some(ExitReason::IterationLimit));
            }
            let eps_new = self.state.eps_new.finite().expect("raising happens after stage I");
            let eps_old = self.state.eps_old;
            let (stage, cap) = if eps_new > eps_old { (Stage::IVa, cap_old.min(eps_new)) } else { (Stage::IVb, cap_old) };
            if eps_old >= cap {
                // Further raising cannot help; anneal on without it.
                self.state.c_m = 0;
                self.raise_exhausted = true;
                return Ok(None);
            }
            let e = match self.search(stage, cap) {
                Ok(e) => e,
                Err(Error::NoSolution) => cap,
                Err(e) => return Err(e),
            };
            let effective = self.step(stage, stage_assignment(stage, self.state.assignment(), e))?;
            if effective {
                self.state.c_m = 0;
                let still_apart = self.state.eps_new.finite().is_some_and(|n| n > self.state.eps_old);
                return Ok(if still_apart { None } else { Some(ExitReason::RaisedUntilEffective) });
            }
        }
    }

    /// Gives all data the new-data tolerance when an update stops with the
    /// old tolerance below it. Only weights change.
    fn equalize(&mut self) -> Result<()> {
        if let Tolerance::Finite(e_new) = self.state.eps_new {
            if e_new > self.state.eps_old {
                let from = self.state.assignment();
                let to = ToleranceAssignment::common(e_new);
                self.particles.reweight(self.model, self.old.len(), self.new.len(), Stage::IVa, from, to)?;
                self.state.eps_old = e_new;
            }
        }
        Ok(())
    }
}

/// Moves the particles from the posterior of the old data at tolerance
/// `eps_old` to the posterior of old plus new data at `eps_target`,
/// following the staged schedule: new data enters unconstrained (I), its
/// tolerance is lowered to the old one (II), then the common tolerance is
/// lowered (III). Repeatedly ineffective mutations trigger raising (IVa/IVb)
/// up to twice the tolerance where raising began. If the cap is hit without
/// recovering, annealing resumes and ineffective steps are no longer counted.
/// A stalled Bellman error ends the update early.
///
/// On return the two tolerances are equal, and the caller may merge the new
/// partition into the old one.
#[allow(clippy::too_many_arguments)]
pub fn update_posterior<T: Real>(
    particles: &mut ParticleSet<T>,
    model: &BellmanModel<T>,
    old: &Partition<T>,
    new: &Partition<T>,
    eps_old: T,
    eps_target: T,
    plan: &mut HmcPlan<T>,
    config: &SmcConfig<T>,
    seeds: &mut SeedSequence,
) -> std::result::Result<UpdateOutcome<T>, UpdateFailure<T>> {
    let fail = |error: Error| UpdateFailure { error, trace: Vec::new() };
    config.validate().map_err(fail)?;
    plan.validate().map_err(fail)?;
    if !(eps_old > T::zero() && eps_old.is_finite() && eps_target > T::zero() && eps_target.is_finite()) {
        return Err(fail(Error::InvalidArgument("tolerances must be positive and finite".into())));
    }
    let no_new = new.is_empty();
    particles.refresh(model, old, new);
    let mut up = Updater {
        particles,
        model,
        old,
        new,
        plan,
        config,
        seeds,
        state: ToleranceState {
            eps_old,
            eps_new: if no_new { Tolerance::Finite(eps_old) } else { Tolerance::Unconstrained },
            stage: Stage::I,
            c_m: 0,
            c_b: 0,
        },
        trace: Vec::new(),
        last_bellman: None,
        raise_exhausted: false,
    };
    let result = (|| -> Result<ExitReason> {
        loop {
            if let Some(exit) = up.reduce(eps_target)? {
                return Ok(exit);
            }
            if let Some(exit) = up.raise()? {
                return Ok(exit);
            }
        }
    })()
    .and_then(|exit| up.equalize().map(|_| exit));
    match result {
        Ok(mut exit) => {
            if no_new && exit == ExitReason::TargetReached && up.trace.is_empty() {
                exit = ExitReason::NoNewData;
            }
            if exit == ExitReason::IterationLimit {
                log::warn!("SMC update stopped after {} steps", up.trace.len());
            }
            up.state.stage = Stage::Done;
            Ok(UpdateOutcome { state: up.state, trace: up.trace, exit })
        }
        Err(error) => Err(UpdateFailure { error, trace: up.trace }),
    }
}
