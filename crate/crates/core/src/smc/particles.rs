use rand::Rng;
use rayon::prelude::*;

use super::Stage;
use crate::error::{ensure, Error, Result};
use crate::model::{BellmanModel, Partition, ToleranceAssignment, Tolerance};
use crate::real::{compensated_sum, log_sum_exp};
use crate::Real;

/// `(sum w)^2 / sum w^2` from unnormalised log-weights.
pub fn ess<T: Real>(log_weights: &[T]) -> Result<T> {
    let max = log_weights.iter().copied().fold(T::neg_infinity(), T::max);
    if !max.is_finite() {
        return Err(Error::Degeneracy);
    }
    let w: Vec<T> = log_weights.iter().map(|&lw| (lw - max).exp()).collect();
    let s = compensated_sum(w.iter().copied());
    let s2 = compensated_sum(w.iter().map(|&x| x * x));
    Ok(s * s / s2)
}

/// `N` weighted parameter vectors with cached squared-residual sums for the
/// old and new data partitions.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSet<T> {
    thetas: Vec<Vec<T>>,
    /// Normalised so that `log_sum_exp == 0`.
    log_weights: Vec<T>,
    r_old: Vec<T>,
    r_new: Vec<T>,
}

impl<T: Real> ParticleSet<T> {
    /// Equally weighted particles with zeroed caches.
    pub fn from_thetas(thetas: Vec<Vec<T>>) -> Result<Self> {
        let n = thetas.len();
        ensure!(n >= 2, InvalidArgument, "need at least two particles, got {n}");
        let d = thetas[0].len();
        ensure!(thetas.iter().all(|t| t.len() == d), InvalidArgument, "particles differ in dimension");
        let lw = -T::from_usize_lossy(n).ln();
        Ok(Self { log_weights: vec![lw; n], r_old: vec![T::zero(); n], r_new: vec![T::zero(); n], thetas })
    }

    /// Replaces the log-weights; they are normalised here.
    pub fn with_log_weights(mut self, log_weights: Vec<T>) -> Result<Self> {
        ensure!(log_weights.len() == self.len(), InvalidArgument, "weight count mismatch");
        self.log_weights = log_weights;
        self.normalize()?;
        Ok(self)
    }

    /// Draws `n` particles from the prior of `model`.
    pub fn from_prior<R: Rng + ?Sized>(model: &BellmanModel<T>, n: usize, rng: &mut R) -> Result<Self> {
        Self::from_thetas((0..n).map(|_| model.sample_prior(rng)).collect())
    }

    pub fn len(&self) -> usize {
        self.thetas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thetas.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.thetas[0].len()
    }

    pub fn thetas(&self) -> &[Vec<T>] {
        &self.thetas
    }

    pub fn log_weights(&self) -> &[T] {
        &self.log_weights
    }

    pub fn cached_residuals_old(&self) -> &[T] {
        &self.r_old
    }

    pub fn cached_residuals_new(&self) -> &[T] {
        &self.r_new
    }

    pub fn weights(&self) -> Vec<T> {
        self.log_weights.iter().map(|lw| lw.exp()).collect()
    }

    pub fn ess(&self) -> Result<T> {
        ess(&self.log_weights)
    }

    fn normalize(&mut self) -> Result<()> {
        let lse = log_sum_exp(&self.log_weights);
        if !lse.is_finite() {
            return Err(Error::Degeneracy);
        }
        for lw in &mut self.log_weights {
            *lw -= lse;
        }
        Ok(())
    }

    /// Weighted mean of each coordinate.
    pub fn mean(&self) -> Vec<T> {
        let w = self.weights();
        (0..self.dim()).map(|k| compensated_sum(self.thetas.iter().zip(&w).map(|(t, &wi)| wi * t[k]))).collect()
    }

    /// Weighted (biased) variance of each coordinate.
    pub fn variance(&self) -> Vec<T> {
        let w = self.weights();
        let mu = self.mean();
        (0..self.dim())
            .map(|k| compensated_sum(self.thetas.iter().zip(&w).map(|(t, &wi)| wi * (t[k] - mu[k]).powi(2))))
            .collect()
    }

    /// Weighted probability of `pred`.
    pub fn probability(&self, pred: impl Fn(&[T]) -> bool) -> T {
        compensated_sum(self.thetas.iter().zip(self.weights()).filter(|(t, _)| pred(t)).map(|(_, w)| w))
    }

    /// `sum_n w_n (R_old + R_new)`, the empirical Bellman error of all data.
    pub fn bellman_error(&self) -> T {
        let w = self.weights();
        compensated_sum((0..self.len()).map(|n| w[n] * (self.r_old[n] + self.r_new[n])))
    }

    /// Recomputes the residual caches.
    pub fn refresh(&mut self, model: &BellmanModel<T>, old: &Partition<T>, new: &Partition<T>) {
        let idx = model.index();
        let (r_old, r_new): (Vec<T>, Vec<T>) = self
            .thetas
            .par_iter()
            .map(|t| (old.sq_residual_sum(idx, t), new.sq_residual_sum(idx, t)))
            .unzip();
        self.r_old = r_old;
        self.r_new = r_new;
    }

    /// Folds the new-data cache into the old one, for when new data joins
    /// the old partition.
    pub fn merge_new_into_old(&mut self) {
        for (o, n) in self.r_old.iter_mut().zip(self.r_new.iter_mut()) {
            *o += *n;
            *n = T::zero();
        }
    }

    pub(crate) fn set_thetas(&mut self, thetas: Vec<Vec<T>>) {
        debug_assert_eq!(thetas.len(), self.len());
        self.thetas = thetas;
    }

    /// Log-weight increments of moving from `from` to `to`.
    pub fn log_increments(&self, model: &BellmanModel<T>, n_old: usize, n_new: usize, from: ToleranceAssignment<T>, to: ToleranceAssignment<T>) -> Vec<T> {
        let part = |tf: Tolerance<T>, tt: Tolerance<T>, n: usize, r: T| {
            if tf == tt || n == 0 {
                T::zero()
            } else {
                model.partition_log_lik(tt, n, r) - model.partition_log_lik(tf, n, r)
            }
        };
        (0..self.len())
            .map(|i| part(from.old, to.old, n_old, self.r_old[i]) + part(from.new, to.new, n_new, self.r_new[i]))
            .collect()
    }

    /// ESS after a hypothetical move from `from` to `to`.
    pub fn ess_after(&self, model: &BellmanModel<T>, n_old: usize, n_new: usize, from: ToleranceAssignment<T>, to: ToleranceAssignment<T>) -> Result<T> {
        let inc = self.log_increments(model, n_old, n_new, from, to);
        let lw: Vec<T> = self.log_weights.iter().zip(inc).map(|(&a, b)| a + b).collect();
        ess(&lw)
    }

    /// Applies the incremental weights of a tolerance move after checking that
    /// it is a legal move for `stage`.
    pub fn reweight(
        &mut self,
        model: &BellmanModel<T>,
        n_old: usize,
        n_new: usize,
        stage: Stage,
        from: ToleranceAssignment<T>,
        to: ToleranceAssignment<T>,
    ) -> Result<()> {
        check_transition(stage, from, to)?;
        let inc = self.log_increments(model, n_old, n_new, from, to);
        for (lw, d) in self.log_weights.iter_mut().zip(inc) {
            *lw += d;
            if lw.is_nan() {
                *lw = T::neg_infinity();
            }
        }
        self.normalize()
    }

    /// Multinomial resampling; weights become uniform and caches follow
    /// their ancestors.
    pub fn resample_multinomial<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let n = self.len();
        let w: Vec<f64> = self.weights().iter().map(|w| w.f64()).collect();
        let mut cdf = Vec::with_capacity(n);
        let mut acc = 0.0;
        for &wi in &w {
            acc += wi;
            cdf.push(acc);
        }
        let total = acc;
        let ancestors: Vec<usize> = (0..n)
            .map(|_| {
                let u = rng.random::<f64>() * total;
                cdf.partition_point(|&c| c <= u).min(n - 1)
            })
            .collect();
        self.thetas = ancestors.iter().map(|&a| self.thetas[a].clone()).collect();
        self.r_old = ancestors.iter().map(|&a| self.r_old[a]).collect();
        self.r_new = ancestors.iter().map(|&a| self.r_new[a]).collect();
        self.log_weights = vec![-T::from_usize_lossy(n).ln(); n];
    }
}

fn check_transition<T: Real>(stage: Stage, from: ToleranceAssignment<T>, to: ToleranceAssignment<T>) -> Result<()> {
    from.validate()?;
    to.validate()?;
    if from == to {
        return Ok(());
    }
    let ok = match stage {
        Stage::I => from.new == Tolerance::Unconstrained && to.new.is_finite() && from.old == to.old,
        Stage::II => from.old == to.old && from.new.is_finite() && to.new.le(from.new),
        Stage::III => to.old == to.new && to.old.le(from.old) && to.new.le(from.new),
        Stage::IVa => from.new == to.new && from.old.le(to.old) && to.old.le(to.new),
        Stage::IVb => to.old == to.new && from.old.le(to.old) && from.new.le(to.new),
        Stage::Done => false,
    };
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidTransition(format!("{from:?} -> {to:?} is not a stage {stage} move")))
    }
}
