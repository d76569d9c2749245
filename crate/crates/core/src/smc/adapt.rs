use rand::Rng;
use rayon::prelude::*;

use super::ParticleSet;
use crate::error::{ensure, Result};
use crate::hmc::{propose, ChainState, HmcPlan, LogDensity};
use crate::rng::StepSeed;
use crate::Real;

const VARIANCE_FLOOR: f64 = 1e-8;
const DELTA_FLOOR: f64 = 1e-6;
const L_STEP: usize = 5;

/// Per-particle HMC step size and leapfrog count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelChoice<T> {
    pub delta: T,
    pub l: usize,
}

struct Trial<T> {
    delta: T,
    l: usize,
    zeta: T,
    score: T,
}

/// Tunes the mass matrix, the step-size bound and the leapfrog bound from
/// one trial trajectory per particle, and draws a `(delta, L)` per particle
/// with probability proportional to the expected squared jump distance per
/// leapfrog step.
///
/// `prev` supplies the weighted particles for the mass matrix; `current`
/// are the positions the trials start from.
pub fn adapt_kernel<T: Real>(
    prev: &ParticleSet<T>,
    current: &[ChainState<T>],
    target: &impl LogDensity<T>,
    plan: &HmcPlan<T>,
    seed: StepSeed,
) -> Result<(HmcPlan<T>, Vec<KernelChoice<T>>)> {
    let n = current.len();
    ensure!(n >= 2, InvalidArgument, "need at least two particles");
    let floor = T::c(VARIANCE_FLOOR);
    let variance: Vec<T> = prev
        .variance()
        .into_iter()
        .enumerate()
        .map(|(k, v)| {
            if v < floor || !v.is_finite() {
                log::warn!("particle variance {v} in dimension {k}; flooring at {VARIANCE_FLOOR}");
                floor
            } else {
                v
            }
        })
        .collect();
    let mass: Vec<T> = variance.iter().map(|v| v.recip()).collect();

    let trials: Vec<Trial<T>> = current
        .par_iter()
        .enumerate()
        .map(|(i, state)| {
            let mut rng = seed.particle_stream("adapt", i);
            let delta = plan.delta_star * T::c(1.0 - rng.random::<f64>());
            let l = rng.random_range(1..=plan.l_star);
            let (proposal, info) = propose(target, state, delta, l, &mass, &mut rng);
            let (zeta, score) = match proposal {
                Some(p) if info.energy_change.is_finite() => {
                    let jump: T = p.theta.iter().zip(&state.theta).zip(&variance).map(|((a, b), v)| (*a - *b).powi(2) * *v).sum();
                    let accept = info.energy_change.exp().min(T::one());
                    (info.energy_change, jump / T::from_usize_lossy(l) * accept)
                }
                _ => (T::neg_infinity(), T::zero()),
            };
            Trial { delta, l, zeta, score }
        })
        .collect();

    let target_gap = T::c(0.9f64.ln().abs());
    let alpha_star = fit_alpha(&trials);
    let mut delta_star = T::zero();
    if alpha_star > T::zero() {
        delta_star = (target_gap / alpha_star).sqrt();
    }
    for t in &trials {
        if t.zeta.is_finite() && t.zeta.abs() < target_gap {
            delta_star = delta_star.max(t.delta);
        }
    }
    if delta_star == T::zero() {
        delta_star = plan.delta_star * T::c(0.5);
    }
    delta_star = delta_star.max(T::c(DELTA_FLOOR));

    let mut rng = seed.stream("adapt-select");
    let total: T = trials.iter().map(|t| t.score).sum();
    let picks: Vec<usize> = (0..n)
        .map(|_| {
            if !(total > T::zero()) || !total.is_finite() {
                return rng.random_range(0..n);
            }
            let u = T::c(rng.random::<f64>()) * total;
            let mut acc = T::zero();
            for (i, t) in trials.iter().enumerate() {
                acc += t.score;
                if u < acc {
                    return i;
                }
            }
            n - 1
        })
        .collect();

    let mut sorted_l: Vec<usize> = trials.iter().map(|t| t.l).collect();
    sorted_l.sort_unstable();
    let p80 = percentile(&sorted_l, 0.8);
    let p20 = percentile(&sorted_l, 0.2);
    let high = picks.iter().filter(|&&i| trials[i].l >= p80).count();
    let low = picks.iter().filter(|&&i| trials[i].l <= p20).count();
    let mut l_star = plan.l_star;
    if 2 * high > n {
        l_star += L_STEP;
    } else if 2 * low > n && l_star > L_STEP {
        l_star = (l_star - L_STEP).max(L_STEP);
    }

    let choices = picks
        .iter()
        .map(|&i| KernelChoice { delta: trials[i].delta.min(delta_star), l: trials[i].l.min(l_star) })
        .collect();
    let new_plan = HmcPlan { delta_star, l_star, mass_diag: mass, max_steps: plan.max_steps };
    Ok((new_plan, choices))
}

/// Nearest-rank percentile of sorted values.
fn percentile(sorted: &[usize], q: f64) -> usize {
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

/// Minimises `sum | |zeta| - alpha delta^2 |` over `alpha >= 0` by
/// golden-section search.
fn fit_alpha<T: Real>(trials: &[Trial<T>]) -> T {
    let pts: Vec<(f64, f64)> = trials
        .iter()
        .filter(|t| t.zeta.is_finite() && t.delta > T::zero())
        .map(|t| (t.zeta.abs().f64(), t.delta.f64().powi(2)))
        .collect();
    let hi = pts.iter().map(|&(z, d2)| z / d2).fold(0.0, f64::max);
    if pts.is_empty() || hi <= 0.0 {
        return T::zero();
    }
    let loss = |a: f64| pts.iter().map(|&(z, d2)| (z - a * d2).abs()).sum::<f64>();
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (0.0, hi);
    let mut x1 = hi - g * (hi - lo);
    let mut x2 = lo + g * (hi - lo);
    let (mut f1, mut f2) = (loss(x1), loss(x2));
    for _ in 0..200 {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = loss(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = loss(x2);
        }
        if hi - lo <= 1e-12 * hi.max(1e-300) {
            break;
        }
    }
    T::c(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trial(delta: f64, zeta: f64) -> Trial<f64> {
        Trial { delta, l: 1, zeta, score: 0.0 }
    }

    #[test]
    fn alpha_fit_recovers_exact_quadratic() {
        let trials: Vec<_> = [0.1, 0.2, 0.3, 0.5].iter().map(|&d| trial(d, 3.0 * d * d)).collect();
        assert!((fit_alpha(&trials) - 3.0).abs() < 1e-6);
        let zero: Vec<_> = [0.1, 0.2].iter().map(|&d| trial(d, 0.0)).collect();
        assert_eq!(fit_alpha(&zero), 0.0);
    }

    #[test]
    fn percentile_nearest_rank() {
        let v: Vec<usize> = (1..=10).collect();
        assert_eq!(percentile(&v, 0.8), 8);
        assert_eq!(percentile(&v, 0.2), 2);
        assert_eq!(percentile(&[4], 0.2), 4);
    }
}
