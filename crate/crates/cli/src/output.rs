//! CSV writers. Floats carry 17 significant digits so they round-trip.

use std::fs::File;
use std::path::Path;

use anyhow::Context;
use bellman_abc::{EpisodeLog, ParticleSet, TraceRow};

pub fn float(x: f64) -> String {
    format!("{x:.16e}")
}

pub struct CsvOut {
    inner: csv::Writer<File>,
    path: String,
}

impl CsvOut {
    pub fn create(path: &Path, header: &[String]) -> anyhow::Result<Self> {
        let mut inner = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
        inner.write_record(header)?;
        Ok(Self { inner, path: path.display().to_string() })
    }

    pub fn row(&mut self, fields: &[String]) -> anyhow::Result<()> {
        self.inner.write_record(fields).with_context(|| format!("writing {}", self.path))
    }

    pub fn finish(mut self) -> anyhow::Result<()> {
        self.inner.flush().with_context(|| format!("writing {}", self.path))
    }
}

pub fn header(fixed: &[&str], d: usize) -> Vec<String> {
    fixed.iter().map(|s| s.to_string()).chain((1..=d).map(|k| format!("theta_{k}"))).collect()
}

pub fn write_samples(path: &Path, samples: &[Vec<f64>], d: usize) -> anyhow::Result<()> {
    let mut out = CsvOut::create(path, &header(&["sample_index"], d))?;
    for (i, s) in samples.iter().enumerate() {
        out.row(&std::iter::once(i.to_string()).chain(s.iter().map(|&x| float(x))).collect::<Vec<_>>())?;
    }
    out.finish()
}

pub fn write_episodes(path: &Path, logs: &[EpisodeLog]) -> anyhow::Result<()> {
    let h = ["episode", "steps", "return", "regret", "cumulative_regret"].map(String::from);
    let mut out = CsvOut::create(path, &h)?;
    for l in logs {
        out.row(&[l.episode.to_string(), l.steps.to_string(), float(l.ret), float(l.regret), float(l.cumulative_regret)])?;
    }
    out.finish()
}

pub fn write_trace(path: &Path, trace: &[TraceRow]) -> anyhow::Result<()> {
    let h = ["update_index", "stage", "eps_old", "eps_new", "ess", "resampled", "gr_pass_fraction", "bellman_error", "accept_rate"]
        .map(String::from);
    let mut out = CsvOut::create(path, &h)?;
    for r in trace {
        out.row(&[
            r.update_index.to_string(),
            r.stage.to_string(),
            float(r.eps_old),
            float(r.eps_new),
            float(r.ess),
            r.resampled.to_string(),
            float(r.gr_pass_fraction),
            float(r.bellman_error),
            float(r.accept_rate),
        ])?;
    }
    out.finish()
}

pub fn write_particles<'a>(path: &Path, d: usize, snapshots: impl IntoIterator<Item = (usize, &'a ParticleSet)>) -> anyhow::Result<()> {
    let mut out = CsvOut::create(path, &header(&["episode", "particle", "weight"], d))?;
    for (episode, p) in snapshots {
        for (i, (theta, w)) in p.thetas().iter().zip(p.weights()).enumerate() {
            let row: Vec<String> = [episode.to_string(), i.to_string(), float(w)].into_iter().chain(theta.iter().map(|&x| float(x))).collect();
            out.row(&row)?;
        }
    }
    out.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for x in [0.1, -1.0 / 3.0, 1e-300, 123456.789, f64::MIN_POSITIVE] {
            assert_eq!(float(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(float(f64::INFINITY), "inf");
    }
}
