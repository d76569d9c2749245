//! Exact posterior computations for tabular MDPs with known transitions.
//!
//! With a Gaussian prior `N(0, sigma^2 I)` and Gaussian kernel of width
//! `eps`, the posterior splits into one Gaussian piece per assignment of a
//! greedy action to every successor state seen in the data. Each piece is
//! restricted to the region where that assignment is the argmax, so event
//! probabilities reduce to truncated Gaussian masses, estimated here by
//! plain Monte Carlo.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use libm::erfc;

use crate::error::{ensure, Error, Result};
use crate::mdp::{ActionId, Dataset, QIndex, StateId, TabularMdp};
use crate::real::compensated_sum;
use crate::rng::substream;
use crate::Real;

pub const DEFAULT_ASSIGNMENT_CAP: u128 = 1_000_000;
const JITTER: f64 = 1e-12;
const MC_CHUNK: usize = 1 << 16;

/// `sum_k c_k theta_k > bound`, with 0-based coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearConstraint {
    pub terms: Vec<(usize, f64)>,
    pub bound: f64,
}

impl LinearConstraint {
    /// `theta_i > theta_j`.
    pub fn greater(i: usize, j: usize) -> Self {
        Self { terms: vec![(i, 1.0), (j, -1.0)], bound: 0.0 }
    }

    pub fn holds(&self, theta: &[f64]) -> bool {
        self.terms.iter().map(|&(k, c)| c * theta[k]).sum::<f64>() > self.bound
    }
}

impl FromStr for LinearConstraint {
    type Err = Error;

    /// Parses `theta_i>theta_j` or `theta_i<theta_j` with 1-based indices.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("cannot parse event term '{s}'"));
        let (lhs, rhs, flip) = if let Some((l, r)) = s.split_once('>') {
            (l, r, false)
        } else if let Some((l, r)) = s.split_once('<') {
            (l, r, true)
        } else {
            return Err(bad());
        };
        let coord = |t: &str| -> Result<usize> {
            let k: usize = t.trim().strip_prefix("theta_").ok_or_else(bad)?.parse().map_err(|_| bad())?;
            ensure!(k >= 1, InvalidArgument, "theta indices start at 1");
            Ok(k - 1)
        };
        let (i, j) = (coord(lhs)?, coord(rhs)?);
        Ok(if flip { Self::greater(j, i) } else { Self::greater(i, j) })
    }
}

impl fmt::Display for LinearConstraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (n, &(k, c)) in self.terms.iter().enumerate() {
            if n > 0 {
                f.write_str(if c < 0.0 { " - " } else { " + " })?;
            } else if c < 0.0 {
                f.write_str("-")?;
            }
            if c.abs() != 1.0 {
                write!(f, "{}*", c.abs())?;
            }
            write!(f, "theta_{}", k + 1)?;
        }
        write!(f, " > {}", self.bound)
    }
}

/// Parses a comma-separated conjunction of `theta_i>theta_j` terms. The
/// empty string is the whole parameter space.
pub fn parse_event(spec: &str) -> Result<Vec<LinearConstraint>> {
    spec.split([',', ';']).map(str::trim).filter(|t| !t.is_empty()).map(str::parse).collect()
}

/// One greedy-action assignment and its Gaussian piece.
#[derive(Debug, Clone)]
pub struct Assignment {
    /// `l(s')` for each non-goal successor.
    pub choice: Vec<(StateId, ActionId)>,
    pub b: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    /// `log N(r; 0, Gamma^-1)`.
    pub log_evidence: f64,
    /// Pairs `(j, k)` with `theta_j <= theta_k` required by the assignment.
    pub region: Vec<(usize, usize)>,
}

impl Assignment {
    pub fn in_region(&self, theta: &[f64]) -> bool {
        self.region.iter().all(|&(j, k)| theta[j] <= theta[k])
    }
}

#[derive(Debug, Clone)]
pub struct AssignmentPartition {
    pub successors: Vec<StateId>,
    pub rewards: DVector<f64>,
    pub assignments: Vec<Assignment>,
}

/// Enumerates every assignment of actions to the non-goal successor states
/// of the observed pairs, with its Gaussian piece.
pub fn enumerate_assignments<T: Real>(
    mdp: &TabularMdp<T>,
    idx: &QIndex,
    data: &Dataset<T>,
    sigma: f64,
    eps: f64,
    cap: u128,
) -> Result<AssignmentPartition> {
    ensure!(sigma > 0.0 && sigma.is_finite(), InvalidArgument, "sigma must be positive");
    ensure!(eps > 0.0 && eps.is_finite(), InvalidArgument, "eps must be positive");
    data.validate(mdp)?;
    let d = idx.d_theta();
    let records = data.records();
    let n = records.len();

    let mut successors: Vec<StateId> = records
        .iter()
        .flat_map(|t| mdp.transition(t.s, t.a).expect("validated").iter().filter(|&&(_, p)| p > T::zero()).map(|&(s, _)| s))
        .filter(|&s| !mdp.is_goal(s))
        .collect();
    successors.sort_unstable();
    successors.dedup();
    let count = successors.iter().fold(1u128, |acc, &s| acc.saturating_mul(mdp.action_specs(s).len() as u128));
    if count > cap {
        return Err(Error::AssignmentCap { count, cap });
    }

    let rewards = DVector::from_iterator(n, records.iter().map(|t| t.r.f64()));
    let radices: Vec<usize> = successors.iter().map(|&s| mdp.action_specs(s).len()).collect();
    let assignments = (0..count as usize)
        .into_par_iter()
        .map(|code| {
            let mut rest = code;
            let slots: Vec<usize> = radices
                .iter()
                .map(|&r| {
                    let k = rest % r;
                    rest /= r;
                    k
                })
                .collect();
            build_assignment(mdp, idx, data, &successors, &slots, &rewards, sigma, eps, d)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AssignmentPartition { successors, rewards, assignments })
}

#[allow(clippy::too_many_arguments)]
fn build_assignment<T: Real>(
    mdp: &TabularMdp<T>,
    idx: &QIndex,
    data: &Dataset<T>,
    successors: &[StateId],
    slots: &[usize],
    rewards: &DVector<f64>,
    sigma: f64,
    eps: f64,
    d: usize,
) -> Result<Assignment> {
    let n = data.len();
    let chosen = |s: StateId| -> Option<usize> {
        successors.binary_search(&s).ok().map(|pos| idx.state_coords(s)[slots[pos]])
    };
    let mut b = DMatrix::<f64>::zeros(n, d);
    for (i, t) in data.records().iter().enumerate() {
        let Some(j) = idx.coord(mdp, t.s, t.a) else { continue };
        b[(i, j)] += 1.0;
        for &(s2, p) in mdp.transition(t.s, t.a)? {
            if let Some(k) = chosen(s2) {
                b[(i, k)] -= p.f64();
            }
        }
    }
    let s2 = sigma * sigma;
    let s_mat = &b * b.transpose() * s2 + DMatrix::identity(n, n) * (eps * eps);
    let chol = Cholesky::new(s_mat.clone()).ok_or_else(|| Error::Numerical("marginal covariance is not positive definite".into()))?;
    let gamma = chol.inverse();
    let solved = chol.solve(rewards);
    let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|x| x.ln()).sum::<f64>();
    let log_evidence = -0.5 * rewards.dot(&solved) - 0.5 * log_det - 0.5 * n as f64 * std::f64::consts::TAU.ln();
    let mean = b.transpose() * &solved * s2;
    let cov = DMatrix::identity(d, d) * s2 - b.transpose() * &gamma * &b * (s2 * s2);

    let mut region = Vec::new();
    let mut choice = Vec::new();
    for (pos, &s) in successors.iter().enumerate() {
        let coords = idx.state_coords(s);
        let k = coords[slots[pos]];
        choice.push((s, mdp.action_specs(s)[slots[pos]].action));
        region.extend(coords.iter().filter(|&&j| j != k).map(|&j| (j, k)));
    }
    Ok(Assignment { choice, b, gamma, mean, cov, log_evidence, region })
}

/// Monte Carlo hit counts for one assignment: draws in its region and draws
/// in its region that also satisfy `event`.
fn mc_counts(a: &Assignment, event: &[LinearConstraint], n_mc: usize, seed: u64, ell: usize) -> Result<(u64, u64)> {
    let d = a.mean.len();
    let jittered = &a.cov + DMatrix::identity(d, d) * JITTER;
    let chol = Cholesky::new(jittered).ok_or_else(|| Error::Numerical("posterior covariance is not positive semidefinite".into()))?;
    let l = chol.l();
    let chunks = n_mc.div_ceil(MC_CHUNK);
    let counts: Vec<(u64, u64)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = substream(seed, "oracle", &[ell as u64, c as u64]);
            let len = MC_CHUNK.min(n_mc - c * MC_CHUNK);
            let mut z = DVector::<f64>::zeros(d);
            let (mut in_region, mut in_both) = (0u64, 0u64);
            for _ in 0..len {
                for v in z.iter_mut() {
                    *v = StandardNormal.sample(&mut rng);
                }
                let theta = &a.mean + &l * &z;
                let th = theta.as_slice();
                if a.in_region(th) {
                    in_region += 1;
                    if event.iter().all(|e| e.holds(th)) {
                        in_both += 1;
                    }
                }
            }
            (in_region, in_both)
        })
        .collect();
    Ok(counts.iter().fold((0, 0), |acc, c| (acc.0 + c.0, acc.1 + c.1)))
}

/// Posterior probability of `event` (a conjunction of linear inequalities)
/// and its delta-method Monte Carlo standard error.
#[allow(clippy::too_many_arguments)]
pub fn event_probability<T: Real>(
    mdp: &TabularMdp<T>,
    idx: &QIndex,
    data: &Dataset<T>,
    sigma: f64,
    eps: f64,
    event: &[LinearConstraint],
    n_mc: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    ensure!(n_mc >= 1000, InvalidArgument, "n_mc must be at least 1000");
    for e in event {
        ensure!(e.terms.iter().all(|&(k, _)| k < idx.d_theta()), InvalidArgument, "event refers to a coordinate beyond d = {}", idx.d_theta());
    }
    let part = enumerate_assignments(mdp, idx, data, sigma, eps, DEFAULT_ASSIGNMENT_CAP)?;
    let max_ev = part.assignments.iter().map(|a| a.log_evidence).fold(f64::NEG_INFINITY, f64::max);
    let nf = n_mc as f64;
    let mut terms = Vec::with_capacity(part.assignments.len());
    for (ell, a) in part.assignments.iter().enumerate() {
        let (hit, both) = mc_counts(a, event, n_mc, seed, ell)?;
        let c = (a.log_evidence - max_ev).exp();
        terms.push((c, hit as f64 / nf, both as f64 / nf));
    }
    let x = compensated_sum(terms.iter().map(|&(c, _, b)| c * b));
    let y = compensated_sum(terms.iter().map(|&(c, a, _)| c * a));
    ensure!(y > 0.0, Numerical, "no Monte Carlo draw fell in any assignment region");
    let ratio = x / y;
    let var_x = compensated_sum(terms.iter().map(|&(c, _, b)| c * c * b * (1.0 - b) / nf));
    let var_y = compensated_sum(terms.iter().map(|&(c, a, _)| c * c * a * (1.0 - a) / nf));
    let cov = compensated_sum(terms.iter().map(|&(c, a, b)| c * c * (b - a * b) / nf));
    let var = ((var_x - 2.0 * ratio * cov + ratio * ratio * var_y) / (y * y)).max(0.0);
    Ok((ratio, var.sqrt()))
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Posterior probability that `a1` is preferred over `a2` at `s1` in the
/// five-state example with complete data.
pub fn five_state_choice_probability(r1: f64, r2: f64, r3: f64, r4: f64, sigma: f64, eps: f64) -> Result<f64> {
    ensure!(sigma > 0.0 && eps > 0.0, InvalidArgument, "sigma and eps must be positive");
    let d = r1 - r2;
    let c = r2 + r4 - r1 - r3;
    let k = (eps / sigma).powi(2);
    let scale = sigma * (2.0 * k * (k + 2.0) * (k * k + 3.0 * k + 1.0)).sqrt();
    Ok(normal_cdf((k * d - c) / scale))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{five_state_example, two_state_example, DedupMode, Transition};

    fn complete_five(r: [f64; 4]) -> (TabularMdp<f64>, QIndex, Dataset<f64>) {
        let mdp = five_state_example(r[0], r[1], r[2], r[3]);
        let idx = QIndex::new(&mdp);
        let data = Dataset::from_records(
            DedupMode::UniquePairs,
            [Transition::new(0, 0, r[0], 1), Transition::new(0, 1, r[1], 2), Transition::new(1, 0, r[2], 3), Transition::new(2, 1, r[3], 4)],
        );
        (mdp, idx, data)
    }

    #[test]
    fn event_parsing() {
        let ev = parse_event("theta_2>theta_1, theta_3<theta_4").unwrap();
        assert_eq!(ev[0], LinearConstraint::greater(1, 0));
        assert_eq!(ev[1], LinearConstraint::greater(3, 2));
        assert!(parse_event("").unwrap().is_empty());
        assert!(parse_event("theta_0>theta_1").is_err());
        assert!(parse_event("theta_1=theta_2").is_err());
        assert_eq!(ev[0].to_string(), "theta_2 - theta_1 > 0");
    }

    #[test]
    fn assignment_counts() {
        let (mdp, idx, data) = complete_five([1.0, 2.0, 3.0, 4.0]);
        let part = enumerate_assignments(&mdp, &idx, &data, 1.0, 0.5, DEFAULT_ASSIGNMENT_CAP).unwrap();
        assert_eq!(part.assignments.len(), 1);
        assert!(part.assignments[0].region.is_empty());

        let two = two_state_example::<f64>();
        let idx2 = QIndex::new(&two);
        let d2 = Dataset::from_records(DedupMode::UniquePairs, [Transition::new(0, 0, -1.0, 0), Transition::new(0, 1, -1.0, 1)]);
        let part = enumerate_assignments(&two, &idx2, &d2, 1.0, 0.5, DEFAULT_ASSIGNMENT_CAP).unwrap();
        assert_eq!(part.assignments.len(), 2);
        assert!(matches!(
            enumerate_assignments(&two, &idx2, &d2, 1.0, 0.5, 1),
            Err(Error::AssignmentCap { count: 2, cap: 1 })
        ));

        let empty = Dataset::new(DedupMode::UniquePairs);
        let part = enumerate_assignments(&two, &idx2, &empty, 2.0, 0.5, DEFAULT_ASSIGNMENT_CAP).unwrap();
        assert_eq!(part.assignments.len(), 1);
        assert_eq!(part.assignments[0].cov, DMatrix::identity(2, 2) * 4.0);
    }

    #[test]
    fn b_matrix_rows_follow_the_definition() {
        let two = two_state_example::<f64>();
        let idx = QIndex::new(&two);
        let d2 = Dataset::from_records(DedupMode::UniquePairs, [Transition::new(0, 0, -1.0, 0), Transition::new(0, 1, -1.0, 1)]);
        let part = enumerate_assignments(&two, &idx, &d2, 1.0, 0.5, DEFAULT_ASSIGNMENT_CAP).unwrap();
        // l(s1) = a1: row for (s1,a1) is e1 - e1 = 0; l(s1) = a2: e1 - e2.
        let by_action = |a: usize| part.assignments.iter().find(|x| x.choice == vec![(0, a)]).unwrap();
        assert_eq!(by_action(0).b, DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]));
        assert_eq!(by_action(1).b, DMatrix::from_row_slice(2, 2, &[1.0, -1.0, 0.0, 1.0]));
    }

    #[test]
    fn covariance_is_psd() {
        let (mdp, idx, data) = complete_five([0.3, -1.0, 2.0, 0.1]);
        let part = enumerate_assignments(&mdp, &idx, &data, 3.0, 0.2, DEFAULT_ASSIGNMENT_CAP).unwrap();
        let cov = &part.assignments[0].cov;
        assert!((cov - cov.transpose()).abs().max() < 1e-10);
        let eig = cov.clone().symmetric_eigen().eigenvalues;
        assert!(eig.iter().all(|&e| e >= -1e-9));
    }

    #[test]
    fn whole_space_has_probability_one() {
        let (mdp, idx, data) = complete_five([0.3, -1.0, 2.0, 0.1]);
        let (p, se) = event_probability(&mdp, &idx, &data, 2.0, 0.5, &[], 2000, 1).unwrap();
        assert_eq!(p, 1.0);
        assert_eq!(se, 0.0);
    }

    #[test]
    fn lemma_threshold_and_symmetry() {
        // k = c/d gives exactly one half
        let (r1, r2, r3, r4) = (1.0f64, 0.0, 0.0, 1.5);
        let (d, c) = (r1 - r2, r2 + r4 - r1 - r3);
        let sigma = 2.0;
        let eps = sigma * (c / d).sqrt();
        assert!((five_state_choice_probability(r1, r2, r3, r4, sigma, eps).unwrap() - 0.5).abs() < 1e-15);
        let p = five_state_choice_probability(0.2, -0.4, 1.0, 0.3, 1.5, 0.7).unwrap();
        let q = five_state_choice_probability(-0.4, 0.2, 0.3, 1.0, 1.5, 0.7).unwrap();
        assert!((p + q - 1.0).abs() < 1e-12);
        assert!(five_state_choice_probability(0.0, 0.0, 0.0, 1.0, 1.0, 1e-4).unwrap() < 1e-10);
    }
}
