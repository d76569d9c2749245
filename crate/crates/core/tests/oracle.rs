use bellman_abc::mdp::{deep_sea, five_state_example, two_state_example, DedupMode, Dataset, QIndex, TabularMdp, Transition};
use bellman_abc::oracle::{enumerate_assignments, event_probability, five_state_choice_probability, normal_cdf, parse_event, LinearConstraint};
use bellman_abc::rng::substream;
use bellman_abc::Error;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

fn complete_data(mdp: &TabularMdp<f64>) -> Dataset<f64> {
    let mut data = Dataset::for_mdp(mdp);
    for (s, a) in mdp.pairs() {
        if mdp.is_goal(s) {
            continue;
        }
        let r = mdp.mean_reward(s, a).unwrap();
        for &(s2, p) in mdp.transition(s, a).unwrap() {
            if p > 0.0 {
                data.insert(Transition::new(s, a, r, s2));
            }
        }
    }
    data
}

fn two_state_d2() -> Dataset<f64> {
    Dataset::from_records(DedupMode::UniquePairs, [Transition::new(0, 0, -1.0, 0), Transition::new(0, 1, -1.0, 1)])
}

fn prob(mdp: &TabularMdp<f64>, data: &Dataset<f64>, sigma: f64, eps: f64, event: &str, n_mc: usize, seed: u64) -> (f64, f64) {
    let idx = QIndex::new(mdp);
    event_probability(mdp, &idx, data, sigma, eps, &parse_event(event).unwrap(), n_mc, seed).unwrap()
}

#[test]
fn normal_cdf_values() {
    assert_eq!(normal_cdf(0.0), 0.5);
    assert!((normal_cdf(1.0) - 0.841_344_746_068_542_9).abs() < 1e-14, "{:e}", normal_cdf(1.0) - 0.841_344_746_068_542_9);
    assert!((normal_cdf(-2.0) - 0.022_750_131_948_179_2).abs() < 1e-14);
}

#[test]
fn event_parsing() {
    assert_eq!(parse_event("").unwrap(), vec![]);
    assert_eq!(parse_event("theta_2>theta_1").unwrap(), vec![LinearConstraint::greater(1, 0)]);
    assert_eq!(parse_event("theta_1 < theta_3; theta_2>theta_4").unwrap(), vec![LinearConstraint::greater(2, 0), LinearConstraint::greater(1, 3)]);
    for bad in ["theta_0>theta_1", "theta_1=theta_2", "x>theta_1", "theta_1>"] {
        assert!(parse_event(bad).is_err(), "{bad}");
    }
    assert_eq!(LinearConstraint::greater(1, 0).to_string(), "theta_2 - theta_1 > 0");
}

#[test]
fn lemma_agrees_with_monte_carlo() {
    let mut rng = substream(1, "lemma", &[]);
    for i in 0..6 {
        let r: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
        let sigma = rng.random_range(0.5..4.0);
        let eps = rng.random_range(0.1..3.0);
        let mdp = five_state_example(r[0], r[1], r[2], r[3]);
        let (p, se) = prob(&mdp, &complete_data(&mdp), sigma, eps, "theta_1>theta_2", 200_000, i);
        let exact = five_state_choice_probability(r[0], r[1], r[2], r[3], sigma, eps).unwrap();
        assert!((p - exact).abs() < 3.5 * se.max(1e-6), "{p} vs {exact} (se {se})");
    }
}

#[test]
fn threshold_at_k_equal_c_over_d() {
    // r1 > r2 and c = r2 + r4 - r1 - r3 > 0
    let (r1, r2, r3, r4) = (1.0, 0.2, -1.0, 0.5);
    let d = r1 - r2;
    let c = r2 + r4 - r1 - r3;
    let sigma = 2.0;
    let eps_at = |k: f64| sigma * k.sqrt();
    let p = five_state_choice_probability(r1, r2, r3, r4, sigma, eps_at(c / d)).unwrap();
    assert!((p - 0.5).abs() < 1e-6);
    assert!(five_state_choice_probability(r1, r2, r3, r4, sigma, eps_at(0.5 * c / d)).unwrap() < 0.5);
    assert!(five_state_choice_probability(r1, r2, r3, r4, sigma, eps_at(2.0 * c / d)).unwrap() > 0.5);
}

#[test]
fn closed_form_symmetry_and_monotonicity() {
    let mut rng = substream(2, "sym", &[]);
    for _ in 0..200 {
        let r: Vec<f64> = (0..4).map(|_| rng.random_range(-5.0..5.0)).collect();
        let (sigma, eps) = (rng.random_range(0.1..5.0), rng.random_range(0.05..5.0));
        let p = five_state_choice_probability(r[0], r[1], r[2], r[3], sigma, eps).unwrap();
        let swapped = five_state_choice_probability(r[1], r[0], r[3], r[2], sigma, eps).unwrap();
        assert!((p + swapped - 1.0).abs() < 1e-12);
        // raising r1 or r3 makes a1 more attractive
        let up1 = five_state_choice_probability(r[0] + 0.1, r[1], r[2], r[3], sigma, eps).unwrap();
        let up3 = five_state_choice_probability(r[0], r[1], r[2] + 0.1, r[3], sigma, eps).unwrap();
        assert!(up1 >= p && up3 >= p);
    }
    assert!(five_state_choice_probability(1.0, 0.0, 0.0, 0.0, 0.0, 1.0).is_err());
}

#[test]
fn complementary_events_and_whole_space() {
    let mdp = two_state_example::<f64>();
    let data = two_state_d2();
    let (a, _) = prob(&mdp, &data, 3.0, 0.4, "theta_1>theta_2", 50_000, 7);
    let (b, _) = prob(&mdp, &data, 3.0, 0.4, "theta_2>theta_1", 50_000, 7);
    assert!((a + b - 1.0).abs() < 1e-12);
    let (whole, se) = prob(&mdp, &data, 3.0, 0.4, "", 50_000, 7);
    assert!((whole - 1.0).abs() < 1e-12 && se < 1e-6, "{whole} {se}");
    // same seed, same estimate
    assert_eq!(prob(&mdp, &data, 3.0, 0.4, "theta_1>theta_2", 50_000, 7).0, a);
}

#[test]
fn assignment_counts() {
    let idx_cap = 1 << 20;
    let five = five_state_example::<f64>(1.0, 2.0, 3.0, 4.0);
    let part = enumerate_assignments(&five, &QIndex::new(&five), &complete_data(&five), 1.0, 1.0, idx_cap).unwrap();
    assert_eq!(part.assignments.len(), 1);
    assert!(part.assignments[0].region.is_empty());

    let two = two_state_example::<f64>();
    let part = enumerate_assignments(&two, &QIndex::new(&two), &two_state_d2(), 1.0, 1.0, idx_cap).unwrap();
    assert_eq!(part.assignments.len(), 2);
    assert_eq!(part.successors, vec![0]);

    let empty = Dataset::for_mdp(&two);
    let part = enumerate_assignments(&two, &QIndex::new(&two), &empty, 1.0, 1.0, idx_cap).unwrap();
    assert_eq!(part.assignments.len(), 1);

    let ds = deep_sea::<f64>(8).unwrap();
    let err = enumerate_assignments(&ds, &QIndex::new(&ds), &complete_data(&ds), 1.0, 1.0, 1000).unwrap_err();
    assert!(matches!(err, Error::AssignmentCap { cap: 1000, .. }));
}

#[test]
fn empty_data_gives_the_prior() {
    let two = two_state_example::<f64>();
    let (p, se) = prob(&two, &Dataset::for_mdp(&two), 2.0, 0.1, "theta_2>theta_1", 100_000, 3);
    assert!((p - 0.5).abs() < 4.0 * se);
}

#[test]
fn conjugate_mean_matches_precision_form() {
    let five = five_state_example::<f64>(1.0, -0.5, 2.0, 0.3);
    let data = complete_data(&five);
    let (sigma, eps) = (1.5, 0.4);
    let part = enumerate_assignments(&five, &QIndex::new(&five), &data, sigma, eps, 1 << 20).unwrap();
    let a = &part.assignments[0];
    let b = &a.b;
    let d = b.ncols();
    let prec = b.transpose() * b / (eps * eps) + DMatrix::identity(d, d) / (sigma * sigma);
    let cov = prec.try_inverse().unwrap();
    let mean: DVector<f64> = &cov * b.transpose() * &part.rewards / (eps * eps);
    assert!((&mean - &a.mean).amax() < 1e-10);
    assert!((&cov - &a.cov).amax() < 1e-10);
    // marginal of r: N(0, sigma^2 B B^T + eps^2 I)
    let s = b * b.transpose() * (sigma * sigma) + DMatrix::identity(b.nrows(), b.nrows()) * (eps * eps);
    let n = b.nrows() as f64;
    let direct = -0.5 * part.rewards.dot(&(s.clone().try_inverse().unwrap() * &part.rewards))
        - 0.5 * s.determinant().ln()
        - 0.5 * n * std::f64::consts::TAU.ln();
    assert!((direct - a.log_evidence).abs() < 1e-10);
}

/// `P(theta_2 > theta_1)` on two_state D2 by brute-force quadrature of the
/// unnormalised posterior.
fn two_state_quadrature(sigma: f64, eps: f64) -> f64 {
    let h = 0.01;
    let (mut hit, mut total) = (0.0, 0.0);
    let t1s: Vec<f64> = (0..).map(|i| -8.0 * sigma + h * i as f64).take_while(|&x| x <= 8.0 * sigma).collect();
    let t2s: Vec<f64> = (0..).map(|i| -1.0 - 10.0 * eps + h * i as f64).take_while(|&x| x <= -1.0 + 10.0 * eps).collect();
    for &t1 in &t1s {
        for &t2 in &t2s {
            // (s1, a1, -1, s1): theta_1 - max(theta_1, theta_2) = -1
            // (s1, a2, -1, goal): theta_2 = -1
            let g1 = t1 - t1.max(t2);
            let log = -0.5 * (t1 * t1 + t2 * t2) / (sigma * sigma) - 0.5 * ((-1.0 - g1).powi(2) + (-1.0 - t2).powi(2)) / (eps * eps);
            let w = log.exp();
            total += w;
            if t2 > t1 {
                hit += w;
            }
        }
    }
    hit / total
}

#[test]
fn two_state_probability_matches_quadrature() {
    let mdp = two_state_example::<f64>();
    for (sigma, eps) in [(3.0, 0.5), (2.0, 1.0), (1.0, 0.3)] {
        let exact = two_state_quadrature(sigma, eps);
        let (p, se) = prob(&mdp, &two_state_d2(), sigma, eps, "theta_2>theta_1", 400_000, 5);
        assert!((p - exact).abs() < 4.0 * se + 1e-3, "sigma {sigma} eps {eps}: {p} vs {exact} (se {se})");
    }
}

#[test]
fn invalid_oracle_inputs() {
    let two = two_state_example::<f64>();
    let idx = QIndex::new(&two);
    let data = two_state_d2();
    let ev = parse_event("theta_2>theta_1").unwrap();
    assert!(event_probability(&two, &idx, &data, 1.0, 1.0, &ev, 999, 0).is_err());
    assert!(event_probability(&two, &idx, &data, 0.0, 1.0, &ev, 1000, 0).is_err());
    assert!(event_probability(&two, &idx, &data, 1.0, -1.0, &ev, 1000, 0).is_err());
    let beyond = parse_event("theta_3>theta_1").unwrap();
    assert!(event_probability(&two, &idx, &data, 1.0, 1.0, &beyond, 1000, 0).is_err());
}
