use crate::error::{ensure, Result};
use crate::real::compensated_sum;
use crate::Real;

/// Per-dimension between/within variances of a set of chains.
#[derive(Debug, Clone, PartialEq)]
pub struct GrDiagnostic<T> {
    pub w: Vec<T>,
    pub b: Vec<T>,
    /// `((M-1)/M W + B) / W`; infinite where `W = 0`.
    pub sigma_hat_sq: Vec<T>,
    pub pass_fraction: T,
}

/// Gelman-Rubin statistic over `N` chains of `M` draws each, treating the
/// particles as independent chains. A dimension passes when its statistic
/// is below `threshold`; the chains are effective when at least `majority`
/// of the dimensions pass.
///
/// `B` is the usual between-chain variance `M/(N-1) sum (mean_n - mean)^2`,
/// so that iid chains give `2 - 1/M`.
pub fn gelman_rubin<T: Real>(chains: &[Vec<Vec<T>>], threshold: T, majority: T) -> Result<(GrDiagnostic<T>, bool)> {
    let n = chains.len();
    ensure!(n >= 2, InvalidArgument, "need at least two chains");
    let m = chains[0].len();
    ensure!(m >= 2, InvalidArgument, "need at least two draws per chain");
    ensure!(chains.iter().all(|c| c.len() == m), InvalidArgument, "chains differ in length");
    let d = chains[0][0].len();
    let (nf, mf) = (T::from_usize_lossy(n), T::from_usize_lossy(m));
    let mut diag = GrDiagnostic { w: vec![T::zero(); d], b: vec![T::zero(); d], sigma_hat_sq: vec![T::zero(); d], pass_fraction: T::zero() };
    let mut passed = 0usize;
    for k in 0..d {
        // centring on each chain's first draw keeps constant chains at W = 0 exactly
        let means: Vec<T> = chains.iter().map(|c| c[0][k] + compensated_sum(c.iter().map(|x| x[k] - c[0][k])) / mf).collect();
        let grand = compensated_sum(means.iter().copied()) / nf;
        let b = mf / (nf - T::one()) * compensated_sum(means.iter().map(|&mu| (mu - grand).powi(2)));
        let w = compensated_sum(chains.iter().zip(&means).map(|(c, &mu)| {
            let shift = mu - c[0][k];
            compensated_sum(c.iter().map(|x| (x[k] - c[0][k] - shift).powi(2))) / (mf - T::one())
        })) / nf;
        let s = if w > T::zero() { ((mf - T::one()) / mf * w + b) / w } else { T::infinity() };
        if w > T::zero() && s < threshold {
            passed += 1;
        }
        diag.w[k] = w;
        diag.b[k] = b;
        diag.sigma_hat_sq[k] = s;
    }
    diag.pass_fraction = if d == 0 { T::one() } else { T::from_usize_lossy(passed) / T::from_usize_lossy(d) };
    let effective = diag.pass_fraction >= majority;
    Ok((diag, effective))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn stuck_chains_are_ineffective() {
        let chains = vec![vec![vec![1.0, 2.0]; 10]; 5];
        let (diag, ok) = gelman_rubin(&chains, 2.2, 0.5).unwrap();
        assert!(!ok);
        assert_eq!(diag.pass_fraction, 0.0);
        assert!(diag.w.iter().all(|&w| w == 0.0));
    }

    #[test]
    fn iid_chains_pass_an_infinite_threshold() {
        let mut rng = substream(5, "gr", &[]);
        let chains: Vec<Vec<Vec<f64>>> =
            (0..4).map(|_| (0..30).map(|_| vec![StandardNormal.sample(&mut rng)]).collect()).collect();
        let (diag, ok) = gelman_rubin(&chains, f64::INFINITY, 1.0).unwrap();
        assert!(ok);
        assert_eq!(diag.pass_fraction, 1.0);
    }

    #[test]
    fn rejects_short_input() {
        assert!(gelman_rubin(&[vec![vec![0.0]; 3]], 2.2, 0.5).is_err());
        assert!(gelman_rubin(&[vec![vec![0.0]; 1], vec![vec![0.0]; 1]], 2.2, 0.5).is_err());
    }
}
