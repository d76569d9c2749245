//! Bellman residuals, the Gaussian ABC kernel, and the resulting posterior.

use crate::error::{ensure, Error, Result};
use crate::hmc::LogDensity;
use crate::mdp::{ActionId, Dataset, QIndex, StateId, TabularMdp};
use crate::real::compensated_sum;
use crate::Real;

/// Independent Gaussian prior on every coordinate of `theta`.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorSpec<T> {
    pub sigma: T,
    /// Defaults to zero.
    pub mean: Option<Vec<T>>,
}

impl<T: Real> PriorSpec<T> {
    pub fn new(sigma: T) -> Self {
        Self { sigma, mean: None }
    }

    pub fn mean_at(&self, j: usize) -> T {
        self.mean.as_ref().map_or(T::zero(), |m| m[j])
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        ensure!(self.sigma > T::zero() && self.sigma.is_finite(), InvalidArgument, "prior sigma must be positive");
        if let Some(m) = &self.mean {
            ensure!(m.len() == d, InvalidArgument, "prior mean has length {}, expected {d}", m.len());
        }
        Ok(())
    }

    pub fn log_density(&self, theta: &[T]) -> T {
        let half_ln_2pi = T::c(0.5) * T::TAU().ln();
        let ln_sigma = self.sigma.ln();
        let terms = theta.iter().enumerate().map(|(j, &x)| {
            let z = (x - self.mean_at(j)) / self.sigma;
            -T::c(0.5) * z * z - ln_sigma - half_ln_2pi
        });
        compensated_sum(terms)
    }

    /// Adds the prior gradient to `grad`.
    pub fn add_grad(&self, theta: &[T], grad: &mut [T]) {
        let prec = (self.sigma * self.sigma).recip();
        for (j, g) in grad.iter_mut().enumerate() {
            *g -= (theta[j] - self.mean_at(j)) * prec;
        }
    }
}

/// ABC tolerance of one data partition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Tolerance<T> {
    Finite(T),
    /// The partition does not enter the likelihood.
    Unconstrained,
}

impl<T: Real> Tolerance<T> {
    pub fn finite(self) -> Option<T> {
        match self {
            Tolerance::Finite(e) => Some(e),
            Tolerance::Unconstrained => None,
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, Tolerance::Finite(_))
    }

    /// Orders `Unconstrained` above every finite tolerance.
    pub fn le(self, other: Self) -> bool {
        match (self, other) {
            (_, Tolerance::Unconstrained) => true,
            (Tolerance::Unconstrained, _) => false,
            (Tolerance::Finite(a), Tolerance::Finite(b)) => a <= b,
        }
    }

    pub fn to_f64(self) -> f64 {
        self.finite().map_or(f64::INFINITY, |e| e.f64())
    }
}

/// Tolerances of the old and new data partitions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToleranceAssignment<T> {
    pub old: Tolerance<T>,
    pub new: Tolerance<T>,
}

impl<T: Real> ToleranceAssignment<T> {
    pub fn new(old: Tolerance<T>, new: Tolerance<T>) -> Self {
        Self { old, new }
    }

    pub fn common(eps: T) -> Self {
        Self { old: Tolerance::Finite(eps), new: Tolerance::Finite(eps) }
    }

    pub fn validate(&self) -> Result<()> {
        for t in [self.old, self.new] {
            if let Tolerance::Finite(e) = t {
                ensure!(e > T::zero() && e.is_finite(), InvalidArgument, "tolerance must be positive, got {e}");
            }
        }
        Ok(())
    }
}

/// `log N(y; x, eps^2)`.
pub fn log_kernel<T: Real>(eps: T, x: T, y: T) -> Result<T> {
    ensure!(eps > T::zero(), InvalidArgument, "kernel bandwidth must be positive");
    let z = (x - y) / eps;
    Ok(-T::c(0.5) * z * z - eps.ln() - T::c(0.5) * T::TAU().ln())
}

/// Log-likelihood of a partition with `n` records and squared-residual sum
/// `r_sq` under bandwidth `eps`.
pub fn partition_log_lik<T: Real>(eps: T, n: usize, r_sq: T) -> T {
    let n = T::from_usize_lossy(n);
    -r_sq / (T::c(2.0) * eps * eps) - n * (eps.ln() + T::c(0.5) * T::TAU().ln())
}

/// One observation prepared for residual evaluation.
#[derive(Debug, Clone)]
pub struct CompiledRecord<T> {
    /// `None` for goal pairs, whose residual is identically zero.
    pub coord: Option<usize>,
    pub successors: Vec<(StateId, T)>,
    pub reward: T,
}

/// A dataset partition compiled against a [`QIndex`].
#[derive(Debug, Clone, Default)]
pub struct Partition<T> {
    pub records: Vec<CompiledRecord<T>>,
}

impl<T: Real> Partition<T> {
    pub fn compile(mdp: &TabularMdp<T>, idx: &QIndex, data: &Dataset<T>) -> Result<Self> {
        data.validate(mdp)?;
        let records = data
            .records()
            .iter()
            .map(|t| CompiledRecord {
                coord: idx.coord(mdp, t.s, t.a),
                successors: mdp.transition(t.s, t.a).expect("validated").to_vec(),
                reward: t.r,
            })
            .collect();
        Ok(Self { records })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn extend(&mut self, other: &Partition<T>) {
        self.records.extend(other.records.iter().cloned());
    }

    /// `sum (r - g)^2` over the partition.
    pub fn sq_residual_sum(&self, idx: &QIndex, theta: &[T]) -> T {
        compensated_sum(self.records.iter().map(|rec| {
            let e = rec.reward - record_residual(idx, theta, rec);
            e * e
        }))
    }
}

fn record_residual<T: Real>(idx: &QIndex, theta: &[T], rec: &CompiledRecord<T>) -> T {
    let Some(j) = rec.coord else { return T::zero() };
    let next: T = rec.successors.iter().map(|&(s, p)| p * idx.max_q(theta, s).0).sum();
    theta[j] - next
}

/// Adds `w * dg/dtheta` of one record to `grad`.
fn add_residual_grad<T: Real>(idx: &QIndex, theta: &[T], rec: &CompiledRecord<T>, w: T, grad: &mut [T]) {
    let Some(j) = rec.coord else { return };
    grad[j] += w;
    for &(s, p) in &rec.successors {
        if let (_, Some(k)) = idx.max_q(theta, s) {
            grad[k] -= w * p;
        }
    }
}

/// The Bellman-constrained model for one MDP with known transitions.
#[derive(Debug, Clone)]
pub struct BellmanModel<T> {
    mdp: TabularMdp<T>,
    idx: QIndex,
    prior: PriorSpec<T>,
}

impl<T: Real> BellmanModel<T> {
    pub fn new(mdp: TabularMdp<T>, prior: PriorSpec<T>) -> Result<Self> {
        let idx = QIndex::new(&mdp);
        prior.validate(idx.d_theta())?;
        Ok(Self { mdp, idx, prior })
    }

    pub fn mdp(&self) -> &TabularMdp<T> {
        &self.mdp
    }

    pub fn index(&self) -> &QIndex {
        &self.idx
    }

    pub fn prior(&self) -> &PriorSpec<T> {
        &self.prior
    }

    pub fn dim(&self) -> usize {
        self.idx.d_theta()
    }

    pub fn compile(&self, data: &Dataset<T>) -> Result<Partition<T>> {
        Partition::compile(&self.mdp, &self.idx, data)
    }

    /// Kernel bandwidth actually used for tolerance `eps`. With noisy rewards
    /// the bandwidth never drops below the noise sd, so at `eps <= sd` the
    /// kernel is the exact Gaussian reward likelihood.
    pub fn bandwidth(&self, eps: T) -> T {
        match self.mdp.reward_noise_sd() {
            Some(sd) => eps.max(sd),
            None => eps,
        }
    }

    pub fn residual(&self, theta: &[T], s: StateId, a: ActionId) -> Result<T> {
        let rec = CompiledRecord {
            coord: self.idx.coord(&self.mdp, s, a),
            successors: self.mdp.transition(s, a)?.to_vec(),
            reward: T::zero(),
        };
        Ok(record_residual(&self.idx, theta, &rec))
    }

    /// Likelihood contribution of a partition given its squared-residual sum.
    pub fn partition_log_lik(&self, tol: Tolerance<T>, n: usize, r_sq: T) -> T {
        match tol {
            Tolerance::Finite(eps) => partition_log_lik(self.bandwidth(eps), n, r_sq),
            Tolerance::Unconstrained => T::zero(),
        }
    }

    pub fn log_likelihood(&self, old: &Partition<T>, new: &Partition<T>, tol: ToleranceAssignment<T>, theta: &[T]) -> T {
        let mut ll = T::zero();
        for (part, t) in [(old, tol.old), (new, tol.new)] {
            if t.is_finite() && !part.is_empty() {
                ll += self.partition_log_lik(t, part.len(), part.sq_residual_sum(&self.idx, theta));
            }
        }
        ll
    }

    pub fn log_posterior(&self, old: &Partition<T>, new: &Partition<T>, tol: ToleranceAssignment<T>, theta: &[T]) -> T {
        self.prior.log_density(theta) + self.log_likelihood(old, new, tol, theta)
    }

    /// Writes the gradient of [`Self::log_posterior`] into `grad`.
    pub fn grad_log_posterior(
        &self,
        old: &Partition<T>,
        new: &Partition<T>,
        tol: ToleranceAssignment<T>,
        theta: &[T],
        grad: &mut [T],
    ) {
        grad.iter_mut().for_each(|g| *g = T::zero());
        self.prior.add_grad(theta, grad);
        for (part, t) in [(old, tol.old), (new, tol.new)] {
            let Tolerance::Finite(eps) = t else { continue };
            let prec = self.bandwidth(eps).powi(2).recip();
            for rec in &part.records {
                let w = (rec.reward - record_residual(&self.idx, theta, rec)) * prec;
                add_residual_grad(&self.idx, theta, rec, w, grad);
            }
        }
    }

    pub fn posterior<'a>(&'a self, old: &'a Partition<T>, new: &'a Partition<T>, tol: ToleranceAssignment<T>) -> Posterior<'a, T> {
        Posterior { model: self, old, new, tol }
    }

    /// Draws `theta` from the prior.
    pub fn sample_prior<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Vec<T> {
        use rand_distr::{Distribution, StandardNormal};
        (0..self.dim())
            .map(|j| {
                let z: f64 = StandardNormal.sample(rng);
                self.prior.mean_at(j) + self.prior.sigma * T::c(z)
            })
            .collect()
    }
}

/// The posterior at a fixed tolerance assignment, as an HMC target.
#[derive(Debug, Clone, Copy)]
pub struct Posterior<'a, T> {
    pub model: &'a BellmanModel<T>,
    pub old: &'a Partition<T>,
    pub new: &'a Partition<T>,
    pub tol: ToleranceAssignment<T>,
}

impl<T: Real> LogDensity<T> for Posterior<'_, T> {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn log_density(&self, theta: &[T]) -> T {
        self.model.log_posterior(self.old, self.new, self.tol, theta)
    }

    fn grad_log_density(&self, theta: &[T], grad: &mut [T]) {
        self.model.grad_log_posterior(self.old, self.new, self.tol, theta, grad)
    }
}

/// `g_{s,a}(theta) = Q_theta(s,a) - E[max_a' Q_theta(S', a')]`.
pub fn bellman_residual<T: Real>(mdp: &TabularMdp<T>, idx: &QIndex, theta: &[T], s: StateId, a: ActionId) -> Result<T> {
    let rec = CompiledRecord {
        coord: idx.coord(mdp, s, a),
        successors: mdp.transition(s, a)?.to_vec(),
        reward: T::zero(),
    };
    Ok(record_residual(idx, theta, &rec))
}

fn build_model<T: Real>(mdp: &TabularMdp<T>, prior: &PriorSpec<T>, old: &Dataset<T>, new: &Dataset<T>) -> Result<(BellmanModel<T>, Partition<T>, Partition<T>)> {
    let model = BellmanModel::new(mdp.clone(), prior.clone())?;
    let old = model.compile(old)?;
    let new = model.compile(new)?;
    Ok((model, old, new))
}

/// Unnormalised log posterior; a partition with an unconstrained tolerance
/// contributes nothing.
pub fn log_posterior<T: Real>(
    mdp: &TabularMdp<T>,
    idx: &QIndex,
    prior: &PriorSpec<T>,
    old_data: &Dataset<T>,
    new_data: &Dataset<T>,
    tol: ToleranceAssignment<T>,
    theta: &[T],
) -> Result<T> {
    tol.validate()?;
    ensure!(theta.len() == idx.d_theta(), InvalidArgument, "theta has length {}, expected {}", theta.len(), idx.d_theta());
    let (model, old, new) = build_model(mdp, prior, old_data, new_data)?;
    Ok(model.log_posterior(&old, &new, tol, theta))
}

pub fn grad_log_posterior<T: Real>(
    mdp: &TabularMdp<T>,
    idx: &QIndex,
    prior: &PriorSpec<T>,
    old_data: &Dataset<T>,
    new_data: &Dataset<T>,
    tol: ToleranceAssignment<T>,
    theta: &[T],
) -> Result<Vec<T>> {
    tol.validate()?;
    ensure!(theta.len() == idx.d_theta(), InvalidArgument, "theta has length {}, expected {}", theta.len(), idx.d_theta());
    let (model, old, new) = build_model(mdp, prior, old_data, new_data)?;
    let mut grad = vec![T::zero(); theta.len()];
    model.grad_log_posterior(&old, &new, tol, theta, &mut grad);
    Ok(grad)
}

/// `sum_n w_n sum_{(s,a,r) in D} (g_{s,a}(theta_n) - r)^2` for normalised
/// weights `w`.
pub fn empirical_bellman_error<T: Real>(thetas: &[Vec<T>], weights: &[T], mdp: &TabularMdp<T>, idx: &QIndex, data: &Dataset<T>) -> Result<T> {
    ensure!(thetas.len() == weights.len(), InvalidArgument, "{} particles but {} weights", thetas.len(), weights.len());
    let part = Partition::compile(mdp, idx, data)?;
    Ok(compensated_sum(thetas.iter().zip(weights).map(|(th, &w)| w * part.sq_residual_sum(idx, th))))
}

/// Maximal probability of reaching `s_r` from each non-goal pair, the
/// direction along which the likelihood is flat when `s_r` is recurrent.
pub fn recurrence_direction<T: Real>(mdp: &TabularMdp<T>, idx: &QIndex, s_r: StateId) -> Result<Vec<T>> {
    ensure!(s_r < mdp.n_states() && !mdp.is_goal(s_r), Precondition, "s_r must be a non-goal state");
    let d = idx.d_theta();
    let mut u = vec![0.0f64; d];
    let tol = 1e-12;
    for _ in 0..1_000_000 {
        let mut next = vec![0.0; d];
        let mut change: f64 = 0.0;
        for (j, slot) in next.iter_mut().enumerate() {
            let (s, a) = idx.inverse(j);
            let mut acc = 0.0;
            for &(s2, p) in mdp.transition(s, a)? {
                let reach = if s2 == s_r {
                    1.0
                } else {
                    idx.state_coords(s2).iter().map(|&k| u[k]).fold(0.0, f64::max)
                };
                acc += p.f64() * reach;
            }
            *slot = acc;
            change = change.max((acc - u[j]).abs());
        }
        u = next;
        if change < tol {
            return Ok(u.into_iter().map(T::c).collect());
        }
    }
    Err(Error::Numerical("reach probabilities did not converge".into()))
}
