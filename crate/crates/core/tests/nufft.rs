use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use specgp::{direct_exp_sums, fast_exp_sums, Complex64, ExpSumPlan, PlanOptions};

fn instance(seed: u64, n: usize, m: usize, x_half: f64, w_half: f64) -> (Vec<f64>, Vec<Complex64>, Vec<f64>) {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let x = (0..n).map(|_| rng.random_range(-x_half..x_half)).collect();
    let c = (0..n)
        .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect();
    let w = (0..m).map(|_| rng.random_range(-w_half..w_half)).collect();
    (x, c, w)
}

fn max_err(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v).norm()).fold(0.0, f64::max)
}

#[test]
fn fast_path_meets_tolerance_on_regression_geometry() {
    // data on [-1, 1], frequencies 2π(ξ_p + ξ_q) of the embedded rule
    let rule = specgp::QuadratureRule::embedded();
    let (x, c, _) = instance(5, 5000, 0, 1.0, 1.0);
    let mut omega = Vec::new();
    for &a in rule.nodes() {
        for &b in rule.nodes() {
            omega.push(2.0 * std::f64::consts::PI * (a - b));
        }
    }
    let plan = ExpSumPlan::new(&x, &omega, PlanOptions::with_tol(1e-12).fast()).unwrap();
    assert!(plan.is_fast());
    let scale: f64 = c.iter().map(|v| v.norm()).sum();
    let err = max_err(&fast_exp_sums(&plan, &c).unwrap(), &direct_exp_sums(&x, &c, &omega));
    assert!(err <= 1e-12 * scale, "{err:e}");
}

#[test]
fn shifted_geometry_is_handled() {
    let (x, c, w) = instance(6, 3000, 200, 5.0, 40.0);
    let x: Vec<f64> = x.iter().map(|v| v + 100.0).collect();
    let w: Vec<f64> = w.iter().map(|v| v - 300.0).collect();
    let plan = ExpSumPlan::new(&x, &w, PlanOptions::with_tol(1e-9).fast()).unwrap();
    let scale: f64 = c.iter().map(|v| v.norm()).sum();
    let err = max_err(&plan.execute(&c).unwrap(), &direct_exp_sums(&x, &c, &w));
    assert!(err <= 1e-9 * scale, "{err:e}");
}

#[test]
fn auto_plan_uses_direct_summation_for_small_work() {
    let (x, _, w) = instance(7, 100, 100, 1.0, 10.0);
    let plan = ExpSumPlan::new(&x, &w, PlanOptions::default()).unwrap();
    assert!(!plan.is_fast());
    assert_eq!(plan.grid_len(), 0);
}

#[test]
fn coefficient_count_must_match() {
    let (x, c, w) = instance(8, 50, 10, 1.0, 10.0);
    let plan = ExpSumPlan::new(&x, &w, PlanOptions::default().fast()).unwrap();
    assert!(plan.execute(&c[..49]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn sums_are_linear(seed in 0u64..1_000_000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let (x, c1, w) = instance(seed, 400, 60, 1.0, 300.0);
        let (_, c2, _) = instance(seed + 1, 400, 0, 1.0, 1.0);
        let plan = ExpSumPlan::new(&x, &w, PlanOptions::with_tol(1e-10).fast()).unwrap();
        let comb: Vec<Complex64> = c1.iter().zip(&c2).map(|(u, v)| u * a + v * b).collect();
        let f1 = plan.execute(&c1).unwrap();
        let f2 = plan.execute(&c2).unwrap();
        let f = plan.execute(&comb).unwrap();
        let scale: f64 = comb.iter().chain(&c1).chain(&c2).map(|v| v.norm()).sum::<f64>() * (1.0 + a.abs() + b.abs());
        for i in 0..w.len() {
            prop_assert!((f[i] - (f1[i] * a + f2[i] * b)).norm() <= 1e-12 * scale);
        }
    }

    #[test]
    fn fast_matches_direct_at_requested_tolerance(
        seed in 0u64..1_000_000,
        digits in 4u32..13,
        x_half in 0.1f64..10.0,
        w_half in 1.0f64..2000.0,
    ) {
        let tol = 10f64.powi(-(digits as i32));
        let (x, c, w) = instance(seed, 600, 80, x_half, w_half);
        let plan = ExpSumPlan::new(&x, &w, PlanOptions::with_tol(tol).fast()).unwrap();
        let scale: f64 = c.iter().map(|v| v.norm()).sum();
        let err = max_err(&plan.execute(&c).unwrap(), &direct_exp_sums(&x, &c, &w));
        prop_assert!(err <= tol * scale, "tol {:e} err {:e}", tol, err / scale);
    }

    #[test]
    fn real_coefficients_give_conjugate_pairs(seed in 0u64..1_000_000) {
        let (x, c, w) = instance(seed, 300, 20, 1.0, 50.0);
        let c: Vec<Complex64> = c.iter().map(|v| Complex64::new(v.re, 0.0)).collect();
        let both: Vec<f64> = w.iter().copied().chain(w.iter().map(|v| -v)).collect();
        let plan = ExpSumPlan::new(&x, &both, PlanOptions::with_tol(1e-12).fast()).unwrap();
        let f = plan.execute(&c).unwrap();
        for i in 0..w.len() {
            prop_assert!((f[i] - f[w.len() + i].conj()).norm() <= 1e-11 * 300.0);
        }
    }
}
