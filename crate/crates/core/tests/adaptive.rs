use misadapt::adaptive::{
    adaptation_regret, scaled_risk, solve_adaptive, solve_constrained, worst_case_regret, worst_case_risk,
};
use misadapt::bnm::Bound;
use misadapt::model::Policy;

#[test]
fn dobkin_adaptive_solution() {
    let sol = solve_adaptive(-0.524).unwrap();
    assert!((sol.a_star - 1.15).abs() < 0.03, "A* {}", sol.a_star);
    assert!(sol.policy.odd_asymmetry().unwrap() < 1e-6);
    for (t, v) in sol.policy.grid().iter().zip(sol.policy.values()) {
        if *t != 0.0 {
            let s = v / t;
            assert!((-1e-9..=1.0 + 1e-9).contains(&s), "t {t}: {s}");
        }
    }
    let policy = Policy::Table(sol.policy.clone());
    let worst = worst_case_regret(&policy, -0.524);
    assert!((worst - sol.a_star).abs() < 1e-3 * sol.a_star);
    // no bound does worse than A*, and bounds at the prior's support attain it
    for k in 0..=18 {
        let b = 0.5 * k as f64;
        let a = adaptation_regret(&policy, -0.524, Bound::Finite(b));
        assert!(a <= sol.a_star + 1e-4, "B {b}: {a}");
    }
    for (b, _) in sol.prior.support().into_iter().filter(|(b, m)| *b >= 0.0 && *m > 1e-3) {
        let a = adaptation_regret(&policy, -0.524, Bound::Finite(b));
        assert!((a - sol.a_star).abs() < 2e-3 * sol.a_star, "B {b}: {a}");
    }
}

#[test]
fn uncorrelated_contrast_means_no_adaptation_loss() {
    let sol = solve_adaptive(0.0).unwrap();
    assert_eq!(sol.a_star, 1.0);
    assert_eq!(sol.policy.eval(1.7), 1.7);
}

#[test]
fn endpoint_risks() {
    let rho2: f64 = 0.5;
    assert_eq!(scaled_risk(&Policy::Identity, rho2, 3.0), 1.0);
    let z = scaled_risk(&Policy::Zero, rho2, 2.0);
    assert!((z - ((1.0 - rho2) + rho2 * 4.0)).abs() < 1e-12);
    assert!(worst_case_risk(&Policy::Zero, rho2).is_infinite());
}

#[test]
fn constrained_solution_respects_cap() {
    let cap = 1.2;
    let (sol, info) = solve_constrained(-0.813, cap).unwrap();
    let policy = Policy::Table(sol.policy.clone());
    let worst = worst_case_risk(&policy, 0.813 * 0.813);
    assert!(worst <= cap + 1e-3, "worst risk {worst}");
    assert!(info.t_star.is_finite());
    let free = solve_adaptive(-0.813).unwrap();
    assert!(sol.a_star >= free.a_star - 1e-6);
}
