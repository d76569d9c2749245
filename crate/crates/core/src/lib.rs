//! Bayesian learning of the optimal action-value function `Q*` of finite
//! stochastic-shortest-path MDPs.
//!
//! The Bellman optimality equations are imposed as equality constraints on
//! the observed rewards and relaxed with a Gaussian ABC kernel of tolerance
//! `eps`. The resulting posteriors are sampled offline with HMC
//! ([`hmc`]) or online with an adaptive-tolerance SMC sampler ([`smc`]),
//! and the online sampler drives a posterior-sampling exploration agent
//! ([`agent`]). [`oracle`] holds exact tabular posterior computations used
//! to check the samplers.
//!
//! Every numeric type is generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix the scalar to `f64`, which is what the command-line front end
//! uses.

// `!(x > 0)` style checks are deliberate: they reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agent;
pub mod error;
pub mod hmc;
pub mod mdp;
pub mod model;
pub mod oracle;
pub mod real;
pub mod rng;
pub mod smc;

pub use error::{Error, Result};
pub use real::Real;

pub type Mdp = mdp::TabularMdp<f64>;
pub type Dataset = mdp::Dataset<f64>;
pub type Transition = mdp::Transition<f64>;
pub type QValues = mdp::QValues<f64>;
pub type Prior = model::PriorSpec<f64>;
pub type Model = model::BellmanModel<f64>;
pub type Tolerance = model::Tolerance<f64>;
pub type ToleranceAssignment = model::ToleranceAssignment<f64>;
pub type HmcPlan = hmc::HmcPlan<f64>;
pub type ChainStats = hmc::ChainStats<f64>;
pub type ParticleSet = smc::ParticleSet<f64>;
pub type SmcConfig = smc::SmcConfig<f64>;
pub type TraceRow = smc::TraceRow<f64>;
pub type OnlineConfig = agent::OnlineConfig<f64>;
pub type EpisodeLog = agent::EpisodeLog<f64>;

/// Single-precision variants, mostly useful for memory-bound particle sets.
pub mod f32 {
    pub type Mdp = crate::mdp::TabularMdp<f32>;
    pub type Dataset = crate::mdp::Dataset<f32>;
    pub type Model = crate::model::BellmanModel<f32>;
    pub type HmcPlan = crate::hmc::HmcPlan<f32>;
    pub type ParticleSet = crate::smc::ParticleSet<f32>;
}
