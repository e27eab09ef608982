//! Optimally adaptive estimation of the scaled bias, worst-case adaptation
//! regret, and adaptation under a cap on worst-case risk.
//!
//! Everything here is in units of `Sigma_U`. With `c = rho^-2 - 1` the
//! adaptation regret of a policy at scaled bias `b` is
//! `(r(b) + c) / (r^BNM(|b|) + c)`, so the optimally adaptive policy solves a
//! weighted minimax problem with weights `1 / (r^BNM(|b|) + c)` and offset `c`.

use log::{debug, info};

use crate::bnm::{symmetric_grid, Bound, BnmCurve};
use crate::error::{Error, Result};
use crate::model::{Policy, PolicyTable};
use crate::priorsolve::{solve_least_favorable, DiscreteProblem, PriorWeights, SolverConfig};

pub const BIAS_HALF: f64 = 9.0;
pub const BIAS_STEP: f64 = 0.025;
pub const OBS_HALF: f64 = 12.0;
pub const OBS_STEP: f64 = 0.05;

/// Largest `rho^2` solved directly: `tanh(3)^2`.
pub fn rho2_max() -> f64 {
    let t = 3f64.tanh();
    t * t
}

pub fn bias_grid() -> Vec<f64> {
    symmetric_grid(BIAS_HALF, BIAS_STEP)
}

pub fn obs_grid() -> Vec<f64> {
    symmetric_grid(OBS_HALF, OBS_STEP)
}

/// `rho^-2 - 1`.
pub fn offset(rho2: f64) -> f64 {
    1.0 / rho2 - 1.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveSolution {
    pub rho2: f64,
    pub policy: PolicyTable,
    pub prior: PriorWeights,
    /// Worst-case adaptation regret of `policy` (1 means no loss).
    pub a_star: f64,
}

/// Worst-case risk cap and the internal threshold solving `cap = t A~*(t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskCap {
    pub r_bar: f64,
    pub t_star: f64,
}

fn check_rho2(rho2: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rho2) {
        return Err(Error::RhoOutOfRange { rho: rho2.sqrt() });
    }
    let max = rho2_max();
    if rho2 > max * (1.0 + 1e-12) {
        return Err(Error::RhoTooExtreme { rho2, max });
    }
    Ok(())
}

/// Solver settings used for every adaptive solve. For small `rho^2` the
/// regrets differ from one by `O(rho^2)`, so the stationarity tolerance
/// shrinks with it; above `rho^2 = 0.5` it stays at `1e-6`.
fn solver_config(rho2: f64) -> SolverConfig {
    SolverConfig {
        stationarity_tol: 1e-6 * (2.0 * rho2).min(1.0),
        ..SolverConfig::default()
    }
}

fn identity_solution(rho2: f64) -> Result<AdaptiveSolution> {
    let grid = obs_grid();
    Ok(AdaptiveSolution {
        rho2,
        policy: PolicyTable::identity(grid)?,
        prior: PriorWeights::point_mass(bias_grid(), 0.0),
        a_star: 1.0,
    })
}

/// Optimally adaptive policy for `rho = corr(Y_U, Y_O)`.
pub fn solve_adaptive(rho: f64) -> Result<AdaptiveSolution> {
    solve_adaptive_rho2(rho * rho)
}

pub fn solve_adaptive_rho2(rho2: f64) -> Result<AdaptiveSolution> {
    solve_adaptive_with(BnmCurve::global(), rho2)
}

pub fn solve_adaptive_with(curve: &BnmCurve, rho2: f64) -> Result<AdaptiveSolution> {
    check_rho2(rho2)?;
    if rho2 == 0.0 {
        return identity_solution(rho2);
    }
    solve_weighted(curve, rho2, None)
}

/// Weighted minimax solve; with `floor = Some(t)` the oracle risk in the
/// denominator is capped at `t` (in units of `Sigma_U`).
fn solve_weighted(curve: &BnmCurve, rho2: f64, floor: Option<f64>) -> Result<AdaptiveSolution> {
    let c = offset(rho2);
    let bias = bias_grid();
    let weights: Vec<f64> = bias
        .iter()
        .map(|b| {
            let w = 1.0 / (curve.eval(*b) + c);
            match floor {
                Some(t) => w.max(rho2 / t),
                None => w,
            }
        })
        .collect();
    let dp = DiscreteProblem::new(bias, obs_grid(), weights, c)?;
    let sol = solve_least_favorable(&dp, &solver_config(rho2))?;
    let a_star = sol.max_weighted_risk();
    debug!(
        "adaptive solve rho2={rho2} floor={floor:?}: value {} max {} iterations {}",
        sol.value, a_star, sol.iterations
    );
    Ok(AdaptiveSolution {
        rho2,
        policy: sol.policy,
        prior: sol.prior,
        a_star,
    })
}

/// Scaled risk `rho^2 r(b) + 1 - rho^2` of a policy, in units of `Sigma_U`.
pub fn scaled_risk(policy: &Policy, rho2: f64, b_tilde: f64) -> f64 {
    rho2 * policy.risk(b_tilde) + 1.0 - rho2
}

/// Supremum over `b` of the scaled risk, on the adaptive bias grid and in
/// the limit `|b| -> infinity`.
pub fn worst_case_risk(policy: &Policy, rho2: f64) -> f64 {
    let grid_max = bias_grid()
        .iter()
        .map(|b| scaled_risk(policy, rho2, *b))
        .fold(f64::NEG_INFINITY, f64::max);
    grid_max.max(rho2 * policy.limit_risk() + 1.0 - rho2)
}

/// `A(B, delta)`: worst-case risk over `|b~| <= tau` relative to the
/// B-minimax risk at `tau`, where `tau` is in scaled units.
pub fn adaptation_regret(policy: &Policy, rho: f64, tau: Bound) -> f64 {
    adaptation_regret_with(BnmCurve::global(), policy, rho * rho, tau)
}

pub fn adaptation_regret_with(curve: &BnmCurve, policy: &Policy, rho2: f64, tau: Bound) -> f64 {
    if rho2 == 0.0 {
        return 1.0;
    }
    let c = offset(rho2);
    let mut worst = f64::NEG_INFINITY;
    let mut points: Vec<f64> = bias_grid()
        .into_iter()
        .filter(|b| match tau {
            Bound::Finite(t) => b.abs() <= t,
            Bound::Infinite => true,
        })
        .collect();
    if let Bound::Finite(t) = tau {
        points.push(t);
    }
    for b in points {
        worst = worst.max(policy.risk(b) + c);
    }
    if tau.is_infinite() {
        worst = worst.max(policy.limit_risk() + c);
    }
    worst / (curve.eval_bound(tau) + c)
}

/// Supremum of the adaptation regret over all bias bounds.
pub fn worst_case_regret(policy: &Policy, rho: f64) -> f64 {
    worst_case_regret_with(BnmCurve::global(), policy, rho * rho)
}

pub fn worst_case_regret_with(curve: &BnmCurve, policy: &Policy, rho2: f64) -> f64 {
    if rho2 == 0.0 {
        return 1.0;
    }
    let c = offset(rho2);
    let grid_max = bias_grid()
        .iter()
        .map(|b| (policy.risk(*b) + c) / (curve.eval(*b) + c))
        .fold(f64::NEG_INFINITY, f64::max);
    grid_max.max((policy.limit_risk() + c) / (1.0 + c))
}

/// Adaptive policy whose worst-case scaled risk does not exceed `cap`.
///
/// Solves the problem with the oracle risk capped at `t` and bisects on `t`
/// until `t A~*(t)` matches `cap`. A cap at or above the unconstrained
/// worst-case risk returns the unconstrained solution with `t = infinity`.
pub fn solve_constrained(rho: f64, cap: f64) -> Result<(AdaptiveSolution, RiskCap)> {
    solve_constrained_with(BnmCurve::global(), rho * rho, cap)
}

pub fn solve_constrained_with(curve: &BnmCurve, rho2: f64, cap: f64) -> Result<(AdaptiveSolution, RiskCap)> {
    check_rho2(rho2)?;
    if cap.is_nan() || cap <= 1.0 {
        return Err(Error::InfeasibleCap {
            cap,
            reason: "no rule improves on the worst-case risk of Y_U, so the cap must exceed 1".into(),
        });
    }
    let unconstrained = solve_adaptive_with(curve, rho2)?;
    let free = RiskCap {
        r_bar: cap,
        t_star: f64::INFINITY,
    };
    if cap.is_infinite() || rho2 == 0.0 {
        return Ok((unconstrained, free));
    }
    let worst = worst_case_risk(&Policy::Table(unconstrained.policy.clone()), rho2);
    if worst <= cap {
        return Ok((unconstrained, free));
    }

    // t A~*(t) - cap is negative at t = 1 - rho^2 and positive at t = 1.
    let mut lo = 1.0 - rho2;
    let mut hi = 1.0;
    let mut best: Option<(AdaptiveSolution, f64)> = None;
    for _ in 0..60 {
        let t = 0.5 * (lo + hi);
        let sol = solve_weighted(curve, rho2, Some(t))?;
        let excess = t * sol.a_star - cap;
        debug!("cap bisection t={t}: t*A={} target {cap}", t * sol.a_star);
        if excess > 0.0 {
            hi = t;
        } else {
            lo = t;
            let done = -excess / cap < 1e-3;
            best = Some((sol, t));
            if done {
                break;
            }
        }
        if (hi - lo) / hi < 1e-9 {
            break;
        }
    }
    let (sol, t_star) = best.ok_or_else(|| Error::InfeasibleCap {
        cap,
        reason: "bisection found no threshold meeting the cap".into(),
    })?;
    info!("risk cap {cap} met at t = {t_star}, constrained regret {}", sol.a_star);
    // Regret of the constrained rule against the uncapped oracle.
    let regret = worst_case_regret_with(curve, &Policy::Table(sol.policy.clone()), rho2);
    Ok((
        AdaptiveSolution {
            a_star: regret,
            ..sol
        },
        RiskCap { r_bar: cap, t_star },
    ))
}
