//! Bounded normal mean: minimax estimation of `b` from `T ~ N(b, 1)` when
//! `|b| <= tau`, and the B-minimax estimator built from it.

use std::sync::OnceLock;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::interp::MonotoneCubic;
use crate::model::{assemble_from_delta, gmm_estimate, Geometry, PolicyTable, ScaledProblem};
use crate::priorsolve::{solve_least_favorable, DiscreteProblem, PriorWeights, SolverConfig};

pub const BIAS_STEP: f64 = 0.05;
pub const OBS_STEP: f64 = 0.1;
/// Observation grid reaches this far beyond `tau` on each side.
pub const OBS_MARGIN: f64 = 3.0;
pub const TAU_STEP: f64 = 0.1;
pub const TAU_MAX: f64 = 9.0;

/// Bound on the absolute bias, possibly infinite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bound {
    Finite(f64),
    Infinite,
}

impl Bound {
    /// Bound in scaled units `B / sqrt(Sigma_O)`.
    pub fn scaled(self, sigma_o: f64) -> Bound {
        match self {
            Bound::Finite(b) => Bound::Finite(b / sigma_o.sqrt()),
            Bound::Infinite => Bound::Infinite,
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, Bound::Infinite)
    }
}

impl std::fmt::Display for Bound {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Bound::Finite(b) => write!(f, "{b}"),
            Bound::Infinite => write!(f, "inf"),
        }
    }
}

impl std::str::FromStr for Bound {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("inf") || s.eq_ignore_ascii_case("infinity") {
            return Ok(Bound::Infinite);
        }
        let b: f64 = s
            .parse()
            .map_err(|_| Error::InvalidInput(format!("cannot parse bias bound {s:?}")))?;
        if !(b >= 0.0) {
            return Err(Error::InvalidInput(format!("bias bound must be non-negative, got {b}")));
        }
        Ok(if b.is_infinite() { Bound::Infinite } else { Bound::Finite(b) })
    }
}

/// Symmetric grid on `[-half, half]` with spacing at most `step`, hitting
/// both ends and zero.
pub fn symmetric_grid(half: f64, step: f64) -> Vec<f64> {
    if half <= 0.0 {
        return vec![0.0];
    }
    let m = ((half / step) - 1e-9).ceil().max(1.0) as i64;
    (-m..=m).map(|i| half * i as f64 / m as f64).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BnmSolution {
    pub tau: f64,
    pub policy: PolicyTable,
    pub prior: PriorWeights,
    pub risk: f64,
}

/// Minimax rule and risk for the bounded normal mean with bound `tau`.
pub fn bnm_solve(tau: f64) -> Result<BnmSolution> {
    bnm_solve_with(tau, &SolverConfig::default())
}

pub fn bnm_solve_with(tau: f64, cfg: &SolverConfig) -> Result<BnmSolution> {
    if !(tau >= 0.0 && tau.is_finite()) {
        return Err(Error::InvalidInput(format!("tau must be finite and non-negative, got {tau}")));
    }
    let dp = DiscreteProblem::unweighted(
        symmetric_grid(tau, BIAS_STEP),
        symmetric_grid(tau + OBS_MARGIN, OBS_STEP),
    )?;
    let sol = solve_least_favorable(&dp, cfg)?;
    Ok(BnmSolution {
        tau,
        policy: sol.policy,
        prior: sol.prior,
        risk: sol.value,
    })
}

/// `r^BNM` on `{0.1, ..., 9}` with a monotone interpolant.
#[derive(Debug, Clone, PartialEq)]
pub struct BnmCurve {
    tau_grid: Vec<f64>,
    risks: Vec<f64>,
    spline: MonotoneCubic,
}

/// The knots `0.1, 0.2, ..., 9.0`.
pub fn tau_grid() -> Vec<f64> {
    let n = (TAU_MAX / TAU_STEP).round() as usize;
    (1..=n).map(|i| i as f64 * TAU_STEP).collect()
}

impl BnmCurve {
    pub fn from_parts(tau_grid: Vec<f64>, risks: Vec<f64>) -> Result<Self> {
        if risks.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(Error::InvalidInput("bounded normal mean risks must be finite and non-negative".into()));
        }
        let spline = MonotoneCubic::new(tau_grid.clone(), risks.clone())?;
        if tau_grid[0] <= 0.0 {
            return Err(Error::InvalidInput("tau grid must start above zero".into()));
        }
        Ok(Self {
            tau_grid,
            risks,
            spline,
        })
    }

    /// Process-wide curve, solved once on first use.
    pub fn global() -> &'static BnmCurve {
        static CURVE: OnceLock<BnmCurve> = OnceLock::new();
        CURVE.get_or_init(|| bnm_risk_curve().expect("bounded normal mean grid solves"))
    }

    pub fn tau_grid(&self) -> &[f64] {
        &self.tau_grid
    }

    pub fn risks(&self) -> &[f64] {
        &self.risks
    }

    /// `r^BNM(tau)`: quadratic from `r(0) = 0` to the first knot (the risk
    /// behaves like `tau^2` there), monotone cubic across the knots, flat
    /// beyond the last one.
    pub fn eval(&self, tau: f64) -> f64 {
        let tau = tau.abs();
        let (t0, r0) = (self.tau_grid[0], self.risks[0]);
        let last = self.tau_grid.len() - 1;
        if tau < t0 {
            r0 * (tau / t0).powi(2)
        } else if tau >= self.tau_grid[last] {
            self.risks[last]
        } else {
            self.spline.eval(tau)
        }
    }

    /// As [`eval`](Self::eval), with `r(infinity) = 1`.
    pub fn eval_bound(&self, tau: Bound) -> f64 {
        match tau {
            Bound::Finite(t) => self.eval(t),
            Bound::Infinite => 1.0,
        }
    }
}

/// Solves every knot of the tau grid.
pub fn bnm_risk_curve() -> Result<BnmCurve> {
    let grid = tau_grid();
    let risks = grid
        .par_iter()
        .map(|&tau| bnm_solve(tau).map(|s| s.risk))
        .collect::<Result<Vec<f64>>>()?;
    BnmCurve::from_parts(grid, risks)
}

/// B-minimax estimate: GMM at `B = 0`, `Y_U` at `B = infinity`, otherwise the
/// bounded-normal-mean rule at `tau = B / sqrt(Sigma_O)` applied to `T_O`.
pub fn b_minimax_estimate(p: &ScaledProblem, bound: Bound) -> Result<f64> {
    match bound.scaled(p.sigma_o) {
        Bound::Infinite => Ok(p.y_u),
        Bound::Finite(tau) if tau == 0.0 => Ok(gmm_estimate(p)),
        Bound::Finite(tau) => {
            let sol = bnm_solve(tau)?;
            // The rule saturates at its edge values beyond the solved grid.
            let (lo, hi) = sol.policy.span();
            let d = sol.policy.eval(p.t_o.clamp(lo, hi));
            Ok(assemble_from_delta(p, d))
        }
    }
}

/// Scaled B-minimax risk `rho^2 r(tau) + 1 - rho^2` in multiples of `Sigma_U`.
pub fn scaled_minimax_risk(curve: &BnmCurve, rho2: f64, tau: Bound) -> f64 {
    rho2 * curve.eval_bound(tau) + 1.0 - rho2
}

/// B-minimax risk `rho^2 Sigma_U r(B / sqrt(Sigma_O)) + Sigma_U - rho^2 Sigma_U`.
pub fn b_minimax_risk(geometry: Geometry, sigma_o: f64, bound: Bound) -> f64 {
    let curve = BnmCurve::global();
    geometry.sigma_u * scaled_minimax_risk(curve, geometry.rho2(), bound.scaled(sigma_o))
}
