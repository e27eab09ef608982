//! Soft and hard thresholding of `T_O`: closed-form risks, thresholds with
//! the smallest worst-case adaptation regret, the conventional pre-test, and
//! soft thresholding under a cap on worst-case risk.

use log::debug;

use crate::adaptive::{self, offset, rho2_max};
use crate::bnm::BnmCurve;
use crate::error::{Error, Result};
use crate::model::{Policy, ScaledProblem};
use crate::normal::{interval, pdf, sf};

/// Critical value of the two-sided 5% test.
pub const PRETEST_LAMBDA: f64 = 1.96;
const SCAN_STEP: f64 = 0.01;
const SCAN_MAX: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ThresholdKind {
    Soft,
    Hard,
}

impl std::fmt::Display for ThresholdKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ThresholdKind::Soft => "soft",
            ThresholdKind::Hard => "hard",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdRule {
    pub kind: ThresholdKind,
    pub lambda: f64,
}

impl ThresholdRule {
    pub fn new(kind: ThresholdKind, lambda: f64) -> Result<Self> {
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(Error::InvalidInput(format!("threshold must be finite and non-negative, got {lambda}")));
        }
        Ok(Self { kind, lambda })
    }

    pub fn apply(&self, t: f64) -> f64 {
        match self.kind {
            ThresholdKind::Soft => soft_policy(t, self.lambda),
            ThresholdKind::Hard => hard_policy(t, self.lambda),
        }
    }

    pub fn risk(&self, b_tilde: f64) -> f64 {
        match self.kind {
            ThresholdKind::Soft => soft_risk(self.lambda, b_tilde),
            ThresholdKind::Hard => hard_risk(self.lambda, b_tilde),
        }
    }

    pub fn policy(&self) -> Policy {
        match self.kind {
            ThresholdKind::Soft => Policy::Soft(self.lambda),
            ThresholdKind::Hard => Policy::Hard(self.lambda),
        }
    }
}

/// `sgn(t) max(|t| - lambda, 0)`.
pub fn soft_policy(t: f64, lambda: f64) -> f64 {
    if t.abs() <= lambda {
        0.0
    } else {
        (t.abs() - lambda).copysign(t)
    }
}

/// `t 1{|t| >= lambda}`.
pub fn hard_policy(t: f64, lambda: f64) -> f64 {
    if t.abs() >= lambda {
        t
    } else {
        0.0
    }
}

/// `E (soft(T) - b)^2` for `T ~ N(b, 1)`.
pub fn soft_risk(lambda: f64, b: f64) -> f64 {
    let l2 = 1.0 + lambda * lambda;
    let upper = l2 * sf(lambda - b) - (lambda + b) * pdf(lambda - b);
    let lower = l2 * sf(lambda + b) - (lambda - b) * pdf(lambda + b);
    let middle = b * b * interval(-lambda - b, lambda - b);
    upper + lower + middle
}

/// `E (hard(T) - b)^2` for `T ~ N(b, 1)`.
pub fn hard_risk(lambda: f64, b: f64) -> f64 {
    let p = interval(-lambda - b, lambda - b);
    1.0 + (b * b - 1.0) * p + (lambda - b) * pdf(lambda - b) + (lambda + b) * pdf(lambda + b)
}

/// Conventional pre-test: hard thresholding at 1.96.
pub fn pretest_policy() -> ThresholdRule {
    ThresholdRule {
        kind: ThresholdKind::Hard,
        lambda: PRETEST_LAMBDA,
    }
}

/// Estimator that reports `Y_R` when `|T_O| <= lambda` and `Y_U` otherwise.
///
/// Its risk depends on `kappa = sqrt(Sigma_O / Sigma_U)` as well as `rho`;
/// when `Y_R` is efficient (`rho kappa = -kappa^2`) it coincides with hard
/// thresholding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RestrictedPretest {
    pub rho: f64,
    pub kappa: f64,
    pub lambda: f64,
}

impl RestrictedPretest {
    pub fn new(p: &ScaledProblem, lambda: f64) -> Self {
        Self {
            rho: p.rho,
            kappa: (p.sigma_o / p.sigma_u).sqrt(),
            lambda,
        }
    }

    pub fn choose(&self, t_o: f64) -> bool {
        t_o.abs() <= self.lambda
    }

    /// MSE in units of `Sigma_U` at scaled bias `b`.
    pub fn scaled_risk(&self, b: f64) -> f64 {
        let (lo, hi) = (-self.lambda - b, self.lambda - b);
        let p = interval(lo, hi);
        let ez = pdf(lo) - pdf(hi);
        let ez2 = p - (hi * pdf(hi) - lo * pdf(lo));
        let ezt = ez2 + b * ez;
        let et2 = ez2 + 2.0 * b * ez + b * b * p;
        1.0 + 2.0 * self.rho * self.kappa * ezt + self.kappa * self.kappa * et2
    }

    /// Worst-case adaptation regret over the adaptive bias grid and `B = infinity`.
    pub fn worst_case_regret(&self, curve: &BnmCurve) -> f64 {
        let rho2 = self.rho * self.rho;
        adaptive::bias_grid()
            .iter()
            .map(|b| self.scaled_risk(*b) / (rho2 * curve.eval(*b) + 1.0 - rho2))
            .fold(1.0, f64::max)
    }
}

/// Threshold and the worst-case regret it attains.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimalThreshold {
    pub lambda: f64,
    pub regret: f64,
}

/// Non-negative half of the adaptive bias grid (risks are even in `b`).
fn half_grid() -> Vec<f64> {
    adaptive::bias_grid().into_iter().filter(|b| *b >= 0.0).collect()
}

/// Worst-case regret of a threshold rule with the oracle risk capped at
/// `cap_t` (in units of `Sigma_U`; infinity for no cap).
fn capped_regret(rule: ThresholdRule, rho2: f64, denominators: &[(f64, f64)], limit_den: f64) -> f64 {
    let c = offset(rho2);
    let limit = match rule.kind {
        ThresholdKind::Soft => 1.0 + rule.lambda * rule.lambda,
        ThresholdKind::Hard => 1.0,
    };
    denominators
        .iter()
        .map(|(b, den)| (rule.risk(*b) + c) / den)
        .fold((limit + c) / limit_den, f64::max)
}

fn denominators(curve: &BnmCurve, rho2: f64, cap_t: f64) -> (Vec<(f64, f64)>, f64) {
    let c = offset(rho2);
    let floor = cap_t / rho2;
    let dens = half_grid()
        .into_iter()
        .map(|b| (b, (curve.eval(b) + c).min(floor)))
        .collect();
    (dens, (1.0 + c).min(floor))
}

fn minimize_over_lambda(kind: ThresholdKind, rho2: f64, dens: &[(f64, f64)], limit_den: f64) -> OptimalThreshold {
    let f = |lambda: f64| capped_regret(ThresholdRule { kind, lambda }, rho2, dens, limit_den);
    let n = (SCAN_MAX / SCAN_STEP).round() as usize;
    let (mut best_i, mut best_v) = (0, f64::INFINITY);
    for i in 0..=n {
        let v = f(i as f64 * SCAN_STEP);
        if v < best_v {
            best_i = i;
            best_v = v;
        }
    }
    let centre = best_i as f64 * SCAN_STEP;
    let (mut lo, mut hi) = ((centre - SCAN_STEP).max(0.0), (centre + SCAN_STEP).min(SCAN_MAX));
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = hi - phi * (hi - lo);
    let mut x2 = lo + phi * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while hi - lo > 1e-5 {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - phi * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + phi * (hi - lo);
            f2 = f(x2);
        }
    }
    let mid = 0.5 * (lo + hi);
    let (lambda, regret) = [(centre, best_v), (mid, f(mid))]
        .into_iter()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("two candidates");
    OptimalThreshold { lambda, regret }
}

/// Threshold minimizing worst-case adaptation regret within the class.
pub fn optimal_threshold(kind: ThresholdKind, rho: f64) -> Result<OptimalThreshold> {
    optimal_threshold_with(BnmCurve::global(), kind, rho * rho)
}

pub fn optimal_threshold_with(curve: &BnmCurve, kind: ThresholdKind, rho2: f64) -> Result<OptimalThreshold> {
    check_rho2(rho2)?;
    if rho2 == 0.0 {
        return Ok(OptimalThreshold { lambda: 0.0, regret: 1.0 });
    }
    let (dens, limit_den) = denominators(curve, rho2, f64::INFINITY);
    Ok(minimize_over_lambda(kind, rho2, &dens, limit_den))
}

fn check_rho2(rho2: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rho2) {
        return Err(Error::RhoOutOfRange { rho: rho2.sqrt() });
    }
    if rho2 > rho2_max() * (1.0 + 1e-12) {
        return Err(Error::RhoTooExtreme { rho2, max: rho2_max() });
    }
    Ok(())
}

/// Soft threshold satisfying a worst-case risk cap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstrainedThreshold {
    pub lambda: f64,
    /// Worst-case regret against the uncapped oracle.
    pub regret: f64,
    /// Oracle cap solving `cap = t A~_S(t)`; infinite when the cap does not bind.
    pub t_star: f64,
}

/// Soft thresholding with worst-case scaled risk at most `cap`, by the same
/// capped-oracle reweighting and bisection as the adaptive solver.
pub fn constrained_soft(rho: f64, cap: f64) -> Result<ConstrainedThreshold> {
    constrained_soft_with(BnmCurve::global(), rho * rho, cap)
}

pub fn constrained_soft_with(curve: &BnmCurve, rho2: f64, cap: f64) -> Result<ConstrainedThreshold> {
    check_rho2(rho2)?;
    if cap.is_nan() || cap <= 1.0 {
        return Err(Error::InfeasibleCap {
            cap,
            reason: "no rule improves on the worst-case risk of Y_U, so the cap must exceed 1".into(),
        });
    }
    let free = optimal_threshold_with(curve, ThresholdKind::Soft, rho2)?;
    let worst = |lambda: f64| rho2 * (1.0 + lambda * lambda) + 1.0 - rho2;
    if rho2 == 0.0 || worst(free.lambda) <= cap {
        return Ok(ConstrainedThreshold {
            lambda: free.lambda,
            regret: free.regret,
            t_star: f64::INFINITY,
        });
    }
    let (uncapped, uncapped_limit) = denominators(curve, rho2, f64::INFINITY);
    let mut lo = 1.0 - rho2;
    let mut hi = 1.0;
    let mut best = None;
    for _ in 0..80 {
        let t = 0.5 * (lo + hi);
        let (dens, limit_den) = denominators(curve, rho2, t);
        let sol = minimize_over_lambda(ThresholdKind::Soft, rho2, &dens, limit_den);
        let excess = t * sol.regret - cap;
        debug!("soft cap bisection t={t}: lambda {} t*A={}", sol.lambda, t * sol.regret);
        if excess > 0.0 {
            hi = t;
        } else {
            lo = t;
            best = Some((sol.lambda, t));
            if -excess / cap < 1e-3 && worst(sol.lambda) <= cap + 1e-3 {
                break;
            }
        }
        if (hi - lo) / hi < 1e-10 {
            break;
        }
    }
    let (lambda, t_star) = best.ok_or_else(|| Error::InfeasibleCap {
        cap,
        reason: "bisection found no threshold meeting the cap".into(),
    })?;
    let regret = capped_regret(
        ThresholdRule {
            kind: ThresholdKind::Soft,
            lambda,
        },
        rho2,
        &uncapped,
        uncapped_limit,
    );
    Ok(ConstrainedThreshold { lambda, regret, t_star })
}

/// Soft-threshold estimate of the bias of `Y_R`, `soft(T_O) sqrt(Sigma_O)`.
pub fn soft_bias_estimate(p: &ScaledProblem, lambda: f64) -> f64 {
    soft_policy(p.t_o, lambda) * p.sigma_o.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Composite Simpson on `[b - 12, b + 12]`, splitting at the kinks.
    fn quad(rule: ThresholdRule, b: f64) -> f64 {
        let f = |t: f64| {
            let e = rule.apply(t) - b;
            e * e * pdf(t - b)
        };
        let mut cuts = vec![b - 12.0, -rule.lambda, rule.lambda, b + 12.0];
        cuts.retain(|c| *c >= b - 12.0 && *c <= b + 12.0);
        cuts.sort_by(f64::total_cmp);
        let mut total = 0.0;
        for w in cuts.windows(2) {
            let n = 4000;
            let h = (w[1] - w[0]) / n as f64;
            if h == 0.0 {
                continue;
            }
            // one-sided limits at the jumps of the hard rule
            let eps = 1e-12 * (1.0 + w[0].abs().max(w[1].abs()));
            let mut s = f(w[0] + eps) + f(w[1] - eps);
            for i in 1..n {
                let x = w[0] + i as f64 * h;
                s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
            }
            total += s * h / 3.0;
        }
        total
    }

    #[test]
    fn policies() {
        assert_eq!(soft_policy(2.0, 0.5), 1.5);
        assert_eq!(soft_policy(-0.3, 0.5), 0.0);
        assert_eq!(soft_policy(-0.7, 0.0), -0.7);
        assert_eq!(hard_policy(2.5, 1.96), 2.5);
        assert_eq!(hard_policy(1.0, 1.96), 0.0);
        assert_eq!(hard_policy(-1.0, 0.0), -1.0);
        assert_eq!(pretest_policy().lambda, 1.96);
    }

    #[test]
    fn identity_limits() {
        for b in [-3.0, 0.0, 0.7, 5.0] {
            assert!((soft_risk(0.0, b) - 1.0).abs() < 1e-14);
            assert!((hard_risk(0.0, b) - 1.0).abs() < 1e-14);
            assert!((soft_risk(0.8, b) - soft_risk(0.8, -b)).abs() < 1e-14);
        }
        // large threshold keeps everything at zero
        assert!((hard_risk(40.0, 1.3) - 1.69).abs() < 1e-12);
    }

    #[test]
    fn closed_forms_match_quadrature() {
        for (l, b) in [(1.0, 0.0), (1.96, 1.96), (0.5, -2.0), (3.0, 4.5)] {
            for kind in [ThresholdKind::Soft, ThresholdKind::Hard] {
                let rule = ThresholdRule { kind, lambda: l };
                let q = quad(rule, b);
                assert!((rule.risk(b) - q).abs() < 1e-9, "{kind} {l} {b}: {} vs {q}", rule.risk(b));
            }
        }
    }

    #[test]
    fn efficient_pretest_is_hard_thresholding() {
        let rho: f64 = -0.7;
        let pre = RestrictedPretest { rho, kappa: rho.abs(), lambda: 1.96 };
        for b in [0.0, 1.0, 2.5, -4.0] {
            let hard = rho * rho * hard_risk(1.96, b) + 1.0 - rho * rho;
            assert!((pre.scaled_risk(b) - hard).abs() < 1e-13);
        }
    }
}
