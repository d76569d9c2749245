//! Command-line front end: offline sampling from a transition file, online
//! learning, exact oracle queries and Deep Sea learning-time sweeps. Every
//! command writes CSV files into `--out`.

pub mod config;
pub mod dataset;
pub mod offline;
pub mod output;

use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use bellman_abc::agent::{learning_time, run_online};
use bellman_abc::mdp::{EnvSpec, QIndex};
use bellman_abc::model::PriorSpec;
use bellman_abc::oracle::{event_probability, five_state_choice_probability, parse_event, LinearConstraint};
use bellman_abc::{Error, Mdp, Model};
use clap::{Args, Parser, Subcommand, ValueEnum};

pub use config::{Mode, RunConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    Config,
    Numerical,
    Degeneracy,
}

impl ExitKind {
    pub fn code(self) -> i32 {
        match self {
            ExitKind::Config => 2,
            ExitKind::Numerical => 3,
            ExitKind::Degeneracy => 4,
        }
    }

    fn of(e: &Error) -> Self {
        match e {
            Error::Degeneracy => ExitKind::Degeneracy,
            Error::Numerical(_) | Error::Divergence { .. } | Error::NoSolution | Error::InvalidTransition(_) => ExitKind::Numerical,
            Error::InvalidArgument(_) | Error::Precondition(_) | Error::AssignmentCap { .. } => ExitKind::Config,
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ExitKind,
    pub source: anyhow::Error,
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.source)
    }
}

impl std::error::Error for CliError {}

fn config_err(e: impl Into<anyhow::Error>) -> CliError {
    CliError { kind: ExitKind::Config, source: e.into() }
}

fn core_err(e: Error) -> CliError {
    CliError { kind: ExitKind::of(&e), source: e.into() }
}

/// Output-file failures count as configuration errors (bad `--out`).
fn io_err(e: anyhow::Error) -> CliError {
    config_err(e)
}

type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "bellman-abc", version, about = "Bayesian Q* learning with ABC-relaxed Bellman equations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample the posterior of a fixed transition file.
    Offline {
        #[command(flatten)]
        common: CommonArgs,
        /// CSV with header state,action,reward,next_state.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = Sampler::Hmc)]
        sampler: Sampler,
    },
    /// Posterior-sampling exploration with per-episode SMC updates.
    Online {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Exact posterior probability of an event on complete (or given) data.
    Oracle {
        #[command(flatten)]
        common: CommonArgs,
        /// Conjunction of terms like "theta_2>theta_1", comma separated.
        #[arg(long, default_value = "")]
        event: String,
        /// On five_state, also print the closed-form choice probability.
        #[arg(long)]
        closed_form: bool,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Deep Sea learning times over depths and seeds.
    Benchmark {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_delimiter = ',', default_values_t = [3usize, 4, 5, 6])]
        depths: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_values_t = [0u64, 1, 2])]
        seeds: Vec<u64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Sampler {
    Hmc,
    Smc,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub env: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    #[arg(long)]
    pub particles: Option<usize>,
    #[arg(long)]
    pub eps_target: Option<f64>,
    #[arg(long)]
    pub mode: Option<Mode>,
}

impl CommonArgs {
    pub fn resolve(&self) -> anyhow::Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        if let Some(v) = &self.env {
            c.env = v.clone();
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.particles {
            c.n_particles = v;
        }
        if let Some(v) = self.eps_target {
            c.eps_target = v;
        }
        if let Some(v) = self.mode {
            c.mode = v;
        }
        c.validate()?;
        Ok(c)
    }

    fn out_dir(&self) -> CliResult<&Path> {
        std::fs::create_dir_all(&self.out).with_context(|| format!("creating {}", self.out.display())).map_err(config_err)?;
        Ok(&self.out)
    }
}

fn build(config: &RunConfig) -> CliResult<(Mdp, Model)> {
    let mdp: Mdp = config.env_spec().map_err(config_err)?.build().map_err(core_err)?;
    let model = Model::new(mdp.clone(), PriorSpec::new(config.prior_sigma)).map_err(core_err)?;
    Ok((mdp, model))
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Offline { common, data, sampler } => cmd_offline(&common, &data, sampler),
        Command::Online { common } => cmd_online(&common),
        Command::Oracle { common, event, closed_form, data } => cmd_oracle(&common, &event, closed_form, data.as_deref()),
        Command::Benchmark { common, depths, seeds } => cmd_benchmark(&common, &depths, &seeds),
    }
}

pub fn cmd_offline(common: &CommonArgs, data: &Path, sampler: Sampler) -> CliResult<()> {
    let config = common.resolve().map_err(config_err)?;
    let (mdp, model) = build(&config)?;
    let dataset = dataset::read_dataset(data, &mdp).map_err(config_err)?;
    let out = common.out_dir()?;
    let d = model.dim();
    match sampler {
        Sampler::Hmc => {
            let run = offline::sample_hmc(&model, &dataset, &config).map_err(core_err)?;
            output::write_samples(&out.join("samples.csv"), &run.samples, d).map_err(io_err)?;
            println!("{} samples, acceptance rate {:.3}", run.samples.len(), run.accept_rate);
        }
        Sampler::Smc => match offline::sample_smc(&model, &dataset, &config) {
            Ok(run) => {
                output::write_trace(&out.join("trace.csv"), &run.outcome.trace).map_err(io_err)?;
                output::write_particles(&out.join("particles.csv"), d, [(0, &run.particles)]).map_err(io_err)?;
                println!("{} SMC steps, final tolerance {}, exit {:?}", run.outcome.trace.len(), run.outcome.eps(), run.outcome.exit);
            }
            Err(f) => {
                output::write_trace(&out.join("trace.csv"), &f.trace).map_err(io_err)?;
                return Err(core_err(f.error));
            }
        },
    }
    Ok(())
}

pub fn cmd_online(common: &CommonArgs) -> CliResult<()> {
    let config = common.resolve().map_err(config_err)?;
    let (mdp, model) = build(&config)?;
    let out = common.out_dir()?;
    let d = model.dim();
    match run_online(&mdp, &config.online()) {
        Ok(run) => {
            output::write_episodes(&out.join("episodes.csv"), &run.logs).map_err(io_err)?;
            output::write_trace(&out.join("trace.csv"), &run.trace).map_err(io_err)?;
            let last = run.logs.len();
            let mut snaps: Vec<(usize, &bellman_abc::ParticleSet)> = run.snapshots.iter().map(|(e, p)| (*e, p)).collect();
            if snaps.last().is_none_or(|&(e, _)| e != last) {
                snaps.push((last, &run.particles));
            }
            output::write_particles(&out.join("particles.csv"), d, snaps).map_err(io_err)?;
            let regrets: Vec<f64> = run.logs.iter().map(|l| l.regret).collect();
            match learning_time(&regrets) {
                Some(e) => println!("learning time {e} episodes, cumulative regret {:.4}", run.logs.last().map_or(0.0, |l| l.cumulative_regret)),
                None => println!("no learning within {} episodes", run.logs.len()),
            }
            Ok(())
        }
        Err(f) => {
            output::write_episodes(&out.join("episodes.csv"), &f.logs).map_err(io_err)?;
            output::write_trace(&out.join("trace.csv"), &f.trace).map_err(io_err)?;
            Err(core_err(f.error))
        }
    }
}

pub fn cmd_oracle(common: &CommonArgs, event: &str, closed_form: bool, data: Option<&Path>) -> CliResult<()> {
    let config = common.resolve().map_err(config_err)?;
    let spec = config.env_spec().map_err(config_err)?;
    let (mdp, model) = build(&config)?;
    let idx = QIndex::new(&mdp);
    let dataset = match data {
        Some(p) => dataset::read_dataset(p, &mdp).map_err(config_err)?,
        None => dataset::complete_dataset(&mdp),
    };
    let constraints: Vec<LinearConstraint> = parse_event(event).map_err(|e| config_err(anyhow!(e)))?;
    let sigma = model.prior().sigma;
    let eps = config.eps_target;
    let label = if event.trim().is_empty() { "true".to_string() } else { event.trim().to_string() };
    let (p, se) = event_probability(&mdp, &idx, &dataset, sigma, eps, &constraints, config.n_mc, config.seed).map_err(core_err)?;
    println!("P({label}) = {p:.10} +/- {se:.3e}");
    if closed_form {
        let EnvSpec::FiveState(r) = spec else {
            return Err(config_err(anyhow!("--closed-form needs a five_state environment")));
        };
        if data.is_some() {
            return Err(config_err(anyhow!("--closed-form assumes complete data; drop --data")));
        }
        let exact = five_state_choice_probability(r[0], r[1], r[2], r[3], sigma, eps).map_err(core_err)?;
        let choice = [LinearConstraint::greater(0, 1)];
        let (mc, mc_se) = event_probability(&mdp, &idx, &dataset, sigma, eps, &choice, config.n_mc, config.seed).map_err(core_err)?;
        println!("closed form P(theta_1>theta_2) = {exact:.10}");
        println!("monte carlo P(theta_1>theta_2) = {mc:.10} +/- {mc_se:.3e}");
    }
    Ok(())
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(points: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points.iter().filter(|(x, y)| *x > 0.0 && *y > 0.0).map(|(x, y)| (x.ln(), y.ln())).collect();
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return None;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    Some(pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / sxx)
}

pub fn cmd_benchmark(common: &CommonArgs, depths: &[usize], seeds: &[u64]) -> CliResult<()> {
    let base = common.resolve().map_err(config_err)?;
    if depths.contains(&0) {
        return Err(config_err(anyhow!("depths must be at least 1")));
    }
    let out = common.out_dir()?;
    let h = ["depth", "seed", "learning_time", "episodes_run"].map(String::from);
    let mut csv = output::CsvOut::create(&out.join("learning_time.csv"), &h).map_err(io_err)?;
    let mut points = Vec::new();
    for &depth in depths {
        for &seed in seeds {
            let config = RunConfig { env: format!("deep_sea:{depth}"), seed, ..base.clone() };
            let (mdp, _) = build(&config)?;
            let (lt, episodes) = match run_online(&mdp, &config.online()) {
                Ok(run) => {
                    let regrets: Vec<f64> = run.logs.iter().map(|l| l.regret).collect();
                    (learning_time(&regrets), run.logs.len())
                }
                Err(f) => {
                    log::warn!("depth {depth}, seed {seed}: {f}");
                    (None, f.logs.len())
                }
            };
            if let Some(t) = lt {
                points.push((depth as f64, t as f64));
            }
            let lt_field = lt.map_or(String::new(), |t| t.to_string());
            csv.row(&[depth.to_string(), seed.to_string(), lt_field, episodes.to_string()]).map_err(io_err)?;
        }
    }
    csv.finish().map_err(io_err)?;
    match log_log_slope(&points) {
        Some(s) => println!("log-log slope of learning time against depth: {s:.4}"),
        None => println!("log-log slope unavailable (fewer than two depths with a finite learning time)"),
    }
    Ok(())
}

/// Worker-thread cap from `BELLMAN_ABC_THREADS`, if set.
pub fn thread_cap() -> anyhow::Result<Option<usize>> {
    match std::env::var("BELLMAN_ABC_THREADS") {
        Ok(v) => {
            let n: usize = v.trim().parse().with_context(|| format!("BELLMAN_ABC_THREADS='{v}' is not a count"))?;
            if n == 0 {
                bail!("BELLMAN_ABC_THREADS must be positive");
            }
            Ok(Some(n))
        }
        Err(_) => Ok(None),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_power_law() {
        let pts: Vec<(f64, f64)> = (2..6).map(|d| (d as f64, 3.0 * (d as f64).powf(2.5))).collect();
        assert!((log_log_slope(&pts).unwrap() - 2.5).abs() < 1e-12);
        assert_eq!(log_log_slope(&[(2.0, 5.0)]), None);
        assert_eq!(log_log_slope(&[(2.0, 5.0), (2.0, 7.0)]), None);
    }

    #[test]
    fn flags_override_file() {
        let cli = Cli::try_parse_from(["bellman-abc", "online", "--env", "two_state", "--seed", "9", "--mode", "non_adaptive"]).unwrap();
        let Command::Online { common } = cli.command else { panic!() };
        let c = common.resolve().unwrap();
        assert_eq!((c.env.as_str(), c.seed, c.mode), ("two_state", 9, Mode::NonAdaptive));
    }

    #[test]
    fn exit_codes() {
        assert_eq!(ExitKind::of(&Error::Degeneracy).code(), 4);
        assert_eq!(ExitKind::of(&Error::Numerical("x".into())).code(), 3);
        assert_eq!(ExitKind::of(&Error::InvalidArgument("x".into())).code(), 2);
    }
}
