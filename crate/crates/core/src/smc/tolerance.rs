use super::{ParticleSet, Stage};
use crate::error::{ensure, Error, Result};
use crate::model::{BellmanModel, Tolerance, ToleranceAssignment};
use crate::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Decrease,
    Increase,
}

impl Stage {
    pub fn direction(self) -> Direction {
        match self {
            Stage::IVa | Stage::IVb => Direction::Increase,
            _ => Direction::Decrease,
        }
    }
}

/// `from` with the tolerance that `stage` moves set to `eps`.
pub fn stage_assignment<T: Real>(stage: Stage, from: ToleranceAssignment<T>, eps: T) -> ToleranceAssignment<T> {
    let e = Tolerance::Finite(eps);
    match stage {
        Stage::I | Stage::II => ToleranceAssignment::new(from.old, e),
        Stage::III | Stage::IVb => ToleranceAssignment::new(e, e),
        Stage::IVa => ToleranceAssignment::new(e, from.new),
        Stage::Done => from,
    }
}

const MAX_BISECTIONS: usize = 100;
const ESS_REL_TOL: f64 = 1e-3;

/// Picks the next value of the tolerance moved by `stage` so that the ESS
/// drops to `alpha` times its current value, or jumps straight to `target`
/// when that already keeps enough ESS.
///
/// For Stage I `target` is the old-data tolerance and the result is at least
/// `target`. For the raising stages `target` is the cap; a search that cannot
/// be bracketed returns [`Error::NoSolution`], which callers treat as "jump
/// to the cap".
#[allow(clippy::too_many_arguments)]
pub fn find_tolerance<T: Real>(
    particles: &ParticleSet<T>,
    model: &BellmanModel<T>,
    n_old: usize,
    n_new: usize,
    stage: Stage,
    from: ToleranceAssignment<T>,
    target: T,
    alpha: T,
) -> Result<T> {
    ensure!(alpha > T::zero() && alpha < T::one(), InvalidArgument, "alpha must lie in (0, 1)");
    ensure!(target > T::zero() && target.is_finite(), InvalidArgument, "target tolerance must be positive");
    let e = particles.ess()?;
    let bound = alpha * e;
    let ess_at = |eps: T| particles.ess_after(model, n_old, n_new, from, stage_assignment(stage, from, eps));
    if ess_at(target)? >= bound {
        return Ok(target);
    }
    let current = match stage {
        Stage::I => {
            ensure!(from.new == Tolerance::Unconstrained, Precondition, "stage I needs unconstrained new data");
            // Grow until the ESS bound holds; ESS tends to its current value as
            // the tolerance grows.
            let mut hi = target;
            let mut found = false;
            for _ in 0..2000 {
                hi *= T::c(2.0);
                if !hi.is_finite() {
                    break;
                }
                if ess_at(hi)? >= bound {
                    found = true;
                    break;
                }
            }
            if !found {
                return Err(Error::NoSolution);
            }
            hi
        }
        Stage::II => from.new.finite().ok_or_else(|| Error::Precondition("stage II needs finite new tolerance".into()))?,
        Stage::III | Stage::IVa | Stage::IVb => from.old.finite().ok_or_else(|| Error::Precondition("old tolerance must be finite".into()))?,
        Stage::Done => return Err(Error::Precondition("no tolerance moves in the done stage".into())),
    };
    match stage.direction() {
        Direction::Decrease => ensure!(target < current, Precondition, "target {target} is not below {current}"),
        Direction::Increase => {
            if target <= current || ess_at(current)? < bound {
                return Err(Error::NoSolution);
            }
        }
    }
    bisect(ess_at, bound, current, target)
}

/// Bisects between `ok` (ESS bound holds) and `bad` (it does not) for the
/// point where ESS meets `bound`. Falls back to the `ok` end.
fn bisect<T: Real>(ess_at: impl Fn(T) -> Result<T>, bound: T, mut ok: T, mut bad: T) -> Result<T> {
    let tol = T::c(ESS_REL_TOL) * bound;
    for _ in 0..MAX_BISECTIONS {
        let mid = T::c(0.5) * (ok + bad);
        if mid == ok || mid == bad {
            break;
        }
        let f = ess_at(mid)?;
        if (f - bound).abs() <= tol {
            return Ok(mid);
        }
        if f >= bound {
            ok = mid;
        } else {
            bad = mid;
        }
        if (ok - bad).abs() <= T::c(1e-12) * ok.abs() {
            break;
        }
    }
    Ok(ok)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{two_state_example, DedupMode, Transition};
    use crate::model::PriorSpec;

    /// Particles whose squared-residual sums over one record equal `r`,
    /// cached in the old partition or, with `as_new`, the new one.
    fn particles(r: &[f64], as_new: bool) -> (BellmanModel<f64>, ParticleSet<f64>) {
        let model = BellmanModel::new(two_state_example(), PriorSpec::new(1.0)).unwrap();
        // record (s1, a2, 0, s2): g = theta_2, so (0 - theta_2)^2 = r
        let data = crate::mdp::Dataset::from_records(DedupMode::UniquePairs, [Transition::new(0, 1, 0.0, 1)]);
        let part = model.compile(&data).unwrap();
        let empty = crate::model::Partition::default();
        let thetas = r.iter().map(|&x| vec![-5.0, x.sqrt()]).collect();
        let mut p = ParticleSet::from_thetas(thetas).unwrap();
        if as_new {
            p.refresh(&model, &empty, &part);
        } else {
            p.refresh(&model, &part, &empty);
        }
        (model, p)
    }

    #[test]
    fn two_particle_closed_form() {
        let (model, p) = particles(&[0.0, 1.0], false);
        let from = ToleranceAssignment::common(1.0);
        let eps = find_tolerance(&p, &model, 1, 0, Stage::III, from, 0.01, 0.9).unwrap();
        let expect = (1.0 / (1.0 + 2.0 * 2f64.ln())).sqrt();
        assert!((eps - expect).abs() < 1e-3, "{eps} vs {expect}");
        let after = p.ess_after(&model, 1, 0, from, ToleranceAssignment::common(eps)).unwrap();
        assert!((after - 1.8).abs() <= 0.018);
    }

    #[test]
    fn identical_particles_jump_to_target() {
        let (model, p) = particles(&[0.7, 0.7, 0.7], false);
        let from = ToleranceAssignment::common(1.0);
        assert_eq!(find_tolerance(&p, &model, 1, 0, Stage::III, from, 1e-3, 0.9).unwrap(), 1e-3);
    }

    #[test]
    fn stage_one_stays_above_the_old_tolerance() {
        let (model, p) = particles(&[0.0, 1.0, 4.0, 9.0], true);
        let from = ToleranceAssignment::new(Tolerance::Finite(0.1), Tolerance::Unconstrained);
        let eps = find_tolerance(&p, &model, 0, 1, Stage::I, from, 0.1, 0.9).unwrap();
        assert!(eps > 0.1);
        let to = stage_assignment(Stage::I, from, eps);
        let after = p.ess_after(&model, 0, 1, from, to).unwrap();
        assert!((after - 3.6).abs() <= 0.036, "{after}");
    }

    #[test]
    fn raising_search() {
        let (model, p) = particles(&[0.0, 1.0], false);
        let from = ToleranceAssignment::common(1.0);
        assert_eq!(find_tolerance(&p, &model, 1, 0, Stage::IVb, from, 2.0, 0.9), Ok(2.0));
        let eps = find_tolerance(&p, &model, 1, 0, Stage::IVb, from, 2.0, 0.99).unwrap();
        assert!(eps > 1.0 && eps < 2.0);
        let after = p.ess_after(&model, 1, 0, from, ToleranceAssignment::common(eps)).unwrap();
        assert!((after - 1.98).abs() <= 0.0198);
        assert_eq!(find_tolerance(&p, &model, 1, 0, Stage::IVb, from, 0.5, 0.99), Err(Error::NoSolution));
    }
}
