//! Weighted-particle sampler with staged tolerance annealing.

mod adapt;
mod diagnostics;
mod particles;
mod tolerance;
mod update;

pub use adapt::{adapt_kernel, KernelChoice};
pub use diagnostics::{gelman_rubin, GrDiagnostic};
pub use particles::{ess, ParticleSet};
pub use tolerance::{find_tolerance, stage_assignment, Direction};
pub use update::{
    smc_one_step, update_posterior, ExitReason, SmcConfig, Stage, StepReport, ToleranceState, TraceRow,
    UpdateFailure, UpdateOutcome,
};
