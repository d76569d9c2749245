//! Run configuration: a flat JSON object, overridden field by field from the
//! command line.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use anyhow::{bail, Context};
use bellman_abc::mdp::EnvSpec;
use bellman_abc::{OnlineConfig, SmcConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Adaptive,
    NonAdaptive,
}

impl FromStr for Mode {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> anyhow::Result<Self> {
        match s {
            "adaptive" => Ok(Mode::Adaptive),
            "non_adaptive" => Ok(Mode::NonAdaptive),
            _ => bail!("mode must be 'adaptive' or 'non_adaptive', got '{s}'"),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Adaptive => "adaptive",
            Mode::NonAdaptive => "non_adaptive",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub env: String,
    pub n_particles: usize,
    pub prior_sigma: f64,
    pub alpha: f64,
    pub eps_target: f64,
    pub gr_threshold: f64,
    pub gr_majority: f64,
    pub n_m: usize,
    pub n_b: usize,
    pub hmc_max_steps: usize,
    pub delta_star0: f64,
    pub l_star0: usize,
    pub episodes: usize,
    pub seed: u64,
    pub mode: Mode,
    /// Offline HMC: kept samples and warm-up transitions.
    pub samples: usize,
    pub burn_in: usize,
    /// Online: keep a particle snapshot every this many episodes (0: final only).
    pub particle_stride: usize,
    /// Oracle: Monte Carlo draws per assignment.
    pub n_mc: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let smc = SmcConfig::default();
        let online = OnlineConfig::default();
        Self {
            env: "deep_sea:5".into(),
            n_particles: online.n_particles,
            prior_sigma: online.prior_sigma,
            alpha: smc.alpha,
            eps_target: online.eps_target,
            gr_threshold: smc.gr_threshold,
            gr_majority: smc.gr_majority,
            n_m: smc.n_m,
            n_b: smc.n_b,
            hmc_max_steps: smc.max_mutation_steps,
            delta_star0: online.delta_star0,
            l_star0: online.l_star0,
            episodes: online.episodes,
            seed: 0,
            mode: Mode::Adaptive,
            samples: 10_000,
            burn_in: 2_000,
            particle_stride: 0,
            n_mc: 1_000_000,
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn env_spec(&self) -> anyhow::Result<EnvSpec> {
        Ok(self.env.parse::<EnvSpec>()?)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.env_spec()?;
        let positive = [
            ("prior_sigma", self.prior_sigma),
            ("eps_target", self.eps_target),
            ("gr_threshold", self.gr_threshold),
            ("delta_star0", self.delta_star0),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                bail!("{name} must be positive and finite, got {v}");
            }
        }
        let counts = [
            ("n_particles", self.n_particles),
            ("n_m", self.n_m),
            ("n_b", self.n_b),
            ("hmc_max_steps", self.hmc_max_steps),
            ("l_star0", self.l_star0),
            ("samples", self.samples),
        ];
        for (name, v) in counts {
            if v == 0 {
                bail!("{name} must be positive");
            }
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            bail!("alpha must lie in (0, 1), got {}", self.alpha);
        }
        if !(self.gr_majority > 0.0 && self.gr_majority <= 1.0) {
            bail!("gr_majority must lie in (0, 1], got {}", self.gr_majority);
        }
        if self.n_particles < 2 {
            bail!("n_particles must be at least 2");
        }
        Ok(())
    }

    pub fn smc(&self) -> SmcConfig {
        SmcConfig {
            alpha: self.alpha,
            gr_threshold: self.gr_threshold,
            gr_majority: self.gr_majority,
            n_m: self.n_m,
            n_b: self.n_b,
            max_mutation_steps: self.hmc_max_steps,
            adaptive: self.mode == Mode::Adaptive,
            ..SmcConfig::default()
        }
    }

    pub fn online(&self) -> OnlineConfig {
        OnlineConfig {
            n_particles: self.n_particles,
            prior_sigma: self.prior_sigma,
            eps_target: self.eps_target,
            delta_star0: self.delta_star0,
            l_star0: self.l_star0,
            episodes: self.episodes,
            seed: self.seed,
            step_cap: None,
            particle_stride: self.particle_stride,
            smc: self.smc(),
        }
    }
}
