//! Transition files: CSV with header `state,action,reward,next_state`.
//! States are given by label (as in the environment, e.g. `"(2,1)"`,
//! quoted because of the comma) or by numeric index; actions by numeric id.

use std::path::Path;

use anyhow::{anyhow, bail, Context};
use bellman_abc::mdp::{Dataset, StateId, TabularMdp, Transition};

pub const HEADER: [&str; 4] = ["state", "action", "reward", "next_state"];

fn parse_state(mdp: &TabularMdp<f64>, field: &str) -> Option<StateId> {
    mdp.state_by_label(field).or_else(|| field.parse::<usize>().ok().filter(|&s| s < mdp.n_states()))
}

pub fn read_dataset(path: &Path, mdp: &TabularMdp<f64>) -> anyhow::Result<Dataset<f64>> {
    let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    parse_dataset(file, mdp).with_context(|| format!("in {}", path.display()))
}

pub fn parse_dataset(input: impl std::io::Read, mdp: &TabularMdp<f64>) -> anyhow::Result<Dataset<f64>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header = rdr.headers().context("line 1: missing header")?.clone();
    if header.iter().collect::<Vec<_>>() != HEADER {
        bail!("line 1: header must be '{}'", HEADER.join(","));
    }
    let mut data = Dataset::for_mdp(mdp);
    for rec in rdr.records() {
        let rec = rec.map_err(|e| match e.position() {
            Some(p) => anyhow!("line {}: {e}", p.line()),
            None => anyhow!("{e}"),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let s = parse_state(mdp, &rec[0]).ok_or_else(|| anyhow!("line {line}: unknown state '{}'", &rec[0]))?;
        let a: usize = rec[1].parse().map_err(|_| anyhow!("line {line}: bad action '{}'", &rec[1]))?;
        let r: f64 = rec[2].parse().map_err(|_| anyhow!("line {line}: bad reward '{}'", &rec[2]))?;
        if !r.is_finite() {
            bail!("line {line}: reward must be finite");
        }
        let s_next = parse_state(mdp, &rec[3]).ok_or_else(|| anyhow!("line {line}: unknown state '{}'", &rec[3]))?;
        let t = Transition::new(s, a, r, s_next);
        Dataset::from_records(data.mode(), [t])
            .validate(mdp)
            .map_err(|e| anyhow!("line {line}: {e}"))?;
        data.insert(t);
    }
    Ok(data)
}

/// One transition per non-goal pair and successor, with mean rewards.
pub fn complete_dataset(mdp: &TabularMdp<f64>) -> Dataset<f64> {
    let mut data = Dataset::for_mdp(mdp);
    for (s, a) in mdp.pairs().collect::<Vec<_>>() {
        if mdp.is_goal(s) {
            continue;
        }
        let spec = mdp.spec(s, a).expect("listed pair exists");
        for &(s_next, p) in &spec.transition {
            if p > 0.0 {
                data.insert(Transition::new(s, a, spec.mean_reward, s_next));
            }
        }
    }
    data
}

#[cfg(test)]
mod tests {
    use super::*;
    use bellman_abc::mdp::{deep_sea, two_state_example};

    #[test]
    fn labels_and_indices() {
        let mdp = deep_sea::<f64>(3).unwrap();
        // labels hold a comma, so they are quoted
        let text = "state,action,reward,next_state\n\"(0,0)\",0,-0.0033,\"(1,1)\"\n0,1,0.0033,3\n";
        let d = parse_dataset(text.as_bytes(), &mdp).unwrap();
        assert_eq!(d.len(), 2);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let mdp = two_state_example::<f64>();
        let text = "state,action,reward,next_state\n0,0,-1,0\n0,7,-1,1\n";
        let err = format!("{:#}", parse_dataset(text.as_bytes(), &mdp).unwrap_err());
        assert!(err.contains("line 3"), "{err}");
        let text = "state,action,reward,next_state\n0,0,abc,0\n";
        let err = format!("{:#}", parse_dataset(text.as_bytes(), &mdp).unwrap_err());
        assert!(err.contains("line 2") && err.contains("reward"), "{err}");
        assert!(parse_dataset("s,a,r,t\n".as_bytes(), &mdp).is_err());
    }

    #[test]
    fn complete_data_covers_pairs() {
        let mdp = two_state_example::<f64>();
        let d = complete_dataset(&mdp);
        assert_eq!(d.len(), 2);
        assert!(d.contains_pair(0, 0) && d.contains_pair(0, 1));
    }
}
