//! Joint normal model of an unrestricted and a restricted estimate.
//!
//! Everything downstream works with the scaled bias `b / sqrt(Sigma_O)` and
//! the t-statistic `T_O = Y_O / sqrt(Sigma_O)`, where `Y_O = Y_R - Y_U`. An
//! estimator is fully described by a policy `delta(t)` that estimates the
//! scaled bias; it is assembled into an estimate of the parameter as
//! `rho * sqrt(Sigma_U) * delta(T_O) + Y_U - rho * sqrt(Sigma_U) * T_O`.

use log::warn;

use crate::error::{Error, Result};
use crate::interp::NaturalSpline;
use crate::normal;
use crate::thresholding;

/// How the covariance between the two estimates is obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Covariance {
    /// Explicit `cov(Y_U, Y_R)`.
    Explicit(f64),
    /// Restricted estimator efficient under the restriction, so that
    /// `cov(Y_U, Y_R) = var(Y_R)`.
    EfficientRestricted,
    /// Correlation between `Y_U` and `Y_O = Y_R - Y_U`; the implied
    /// `cov(Y_U, Y_R)` is recovered from the standard errors.
    CorrelationUo(f64),
}

/// Observed pair of estimates with their (co)variances, in outcome units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatePair {
    pub y_u: f64,
    pub y_r: f64,
    pub sigma_u: f64,
    pub sigma_r: f64,
    pub covariance: Covariance,
}

impl EstimatePair {
    /// Builds a pair from standard errors rather than variances.
    pub fn from_standard_errors(
        y_u: f64,
        se_u: f64,
        y_r: f64,
        se_r: f64,
        covariance: Covariance,
    ) -> Self {
        Self {
            y_u,
            y_r,
            sigma_u: se_u * se_u,
            sigma_r: se_r * se_r,
            covariance,
        }
    }

    fn validate(&self) -> Result<()> {
        let finite = [self.y_u, self.y_r, self.sigma_u, self.sigma_r];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("estimates and variances must be finite".into()));
        }
        if !(self.sigma_u > 0.0) {
            return Err(Error::InvalidInput(format!(
                "unrestricted variance must be positive, got {}",
                self.sigma_u
            )));
        }
        if self.sigma_r < 0.0 {
            return Err(Error::InvalidInput(format!(
                "restricted variance must be non-negative, got {}",
                self.sigma_r
            )));
        }
        Ok(())
    }

    /// Resolves `cov(Y_U, Y_R)` from the covariance specification.
    pub fn cov_ur(&self) -> Result<f64> {
        match self.covariance {
            Covariance::Explicit(c) => Ok(c),
            Covariance::EfficientRestricted => {
                if self.sigma_r >= self.sigma_u {
                    return Err(Error::HausmanOrderViolated {
                        sigma_u: self.sigma_u,
                        sigma_r: self.sigma_r,
                    });
                }
                Ok(self.sigma_r)
            }
            Covariance::CorrelationUo(rho) => cov_from_correlation(self.sigma_u, self.sigma_r, rho),
        }
    }
}

/// Solves `rho^2 * Su * (Su + Sr - 2c) = (c - Su)^2` for `c = cov(Y_U, Y_R)`
/// with `c - Su` carrying the sign of `rho`. Of the two roots the one whose
/// implied `var(Y_O)` is closest to the efficient value `Su - Sr` is used.
fn cov_from_correlation(su: f64, sr: f64, rho: f64) -> Result<f64> {
    if !(rho.abs() < 1.0) {
        return Err(Error::RhoOutOfRange { rho });
    }
    let r2 = rho * rho;
    // (c - su)^2 + 2 r2 su c - r2 su (su + sr) = 0, written in x = c - su:
    // x^2 + 2 r2 su x + r2 su (su - sr) = 0
    let b = 2.0 * r2 * su;
    let c0 = r2 * su * (su - sr);
    let disc = b * b - 4.0 * c0;
    if disc < 0.0 {
        return Err(Error::InvalidInput(format!(
            "no covariance reproduces corr(Y_U, Y_O) = {rho} with the given standard errors"
        )));
    }
    let sq = disc.sqrt();
    let roots = [(-b + sq) / 2.0, (-b - sq) / 2.0];
    let efficient = su - sr;
    roots
        .iter()
        .filter(|x| rho == 0.0 || x.signum() == rho.signum() || **x == 0.0)
        .map(|x| x + su)
        .filter(|c| su + sr - 2.0 * c > 0.0)
        .min_by(|a, b| {
            let da = ((su + sr - 2.0 * a) - efficient).abs();
            let db = ((su + sr - 2.0 * b) - efficient).abs();
            da.total_cmp(&db)
        })
        .ok_or_else(|| {
            Error::InvalidInput(format!(
                "no covariance reproduces corr(Y_U, Y_O) = {rho} with the given standard errors"
            ))
        })
}

/// The pair re-expressed as `(Y_U, Y_O)` with `T_O` and `rho = corr(Y_U, Y_O)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaledProblem {
    pub y_u: f64,
    pub y_o: f64,
    pub sigma_u: f64,
    pub sigma_o: f64,
    pub rho: f64,
    pub t_o: f64,
}

impl ScaledProblem {
    /// `cov(Y_U, Y_O)`.
    pub fn cov_uo(&self) -> f64 {
        self.rho * (self.sigma_u * self.sigma_o).sqrt()
    }

    pub fn y_r(&self) -> f64 {
        self.y_u + self.y_o
    }

    pub fn geometry(&self) -> Geometry {
        Geometry::new(self.sigma_u, self.rho)
    }

    /// `rho * sqrt(Sigma_U)`, the loading of the scaled-bias policy.
    fn loading(&self) -> f64 {
        self.rho * self.sigma_u.sqrt()
    }
}

/// Transforms an estimate pair into the scaled problem.
pub fn from_estimates(pair: &EstimatePair) -> Result<ScaledProblem> {
    pair.validate()?;
    let cov_ur = pair.cov_ur()?;
    let det = pair.sigma_u * pair.sigma_r - cov_ur * cov_ur;
    if det < -1e-12 * pair.sigma_u * pair.sigma_r.max(pair.sigma_u) {
        return Err(Error::InvalidInput(
            "covariance matrix of (Y_U, Y_R) is not positive semidefinite".into(),
        ));
    }
    let sigma_o = pair.sigma_u + pair.sigma_r - 2.0 * cov_ur;
    if !(sigma_o > 0.0) {
        return Err(Error::NonPositiveSigmaO { sigma_o });
    }
    let cov_uo = cov_ur - pair.sigma_u;
    let rho = cov_uo / (pair.sigma_u * sigma_o).sqrt();
    if !(rho.abs() < 1.0) {
        return Err(Error::RhoOutOfRange { rho });
    }
    let y_o = pair.y_r - pair.y_u;
    Ok(ScaledProblem {
        y_u: pair.y_u,
        y_o,
        sigma_u: pair.sigma_u,
        sigma_o,
        rho,
        t_o: y_o / sigma_o.sqrt(),
    })
}

/// Hausman-style covariance: the restricted estimator is efficient, so
/// `Sigma_O = Sigma_U - Sigma_R` and `rho = -sqrt(Sigma_O / Sigma_U)`.
pub fn infer_covariance_hausman(y_u: f64, se_u: f64, y_r: f64, se_r: f64) -> Result<ScaledProblem> {
    let pair =
        EstimatePair::from_standard_errors(y_u, se_u, y_r, se_r, Covariance::EfficientRestricted);
    from_estimates(&pair)
}

/// Efficient GMM estimate imposing zero bias.
pub fn gmm_estimate(p: &ScaledProblem) -> f64 {
    p.y_u - p.loading() * p.t_o
}

/// Discretized estimator of the scaled bias: values `psi_k` at grid points `t_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTable {
    spline: NaturalSpline,
}

impl PolicyTable {
    pub fn new(grid: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if grid.len() != values.len() {
            return Err(Error::InvalidInput(format!(
                "policy grid has {} points but {} values",
                grid.len(),
                values.len()
            )));
        }
        if grid.len() < 2 {
            return Err(Error::InvalidInput("policy grid needs at least two points".into()));
        }
        if grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidInput("policy grid must be strictly increasing".into()));
        }
        Ok(Self {
            spline: NaturalSpline::new(grid, values)?,
        })
    }

    /// `psi_k = t_k`.
    pub fn identity(grid: Vec<f64>) -> Result<Self> {
        let values = grid.clone();
        Self::new(grid, values)
    }

    /// `psi_k = 0`.
    pub fn zero(grid: Vec<f64>) -> Result<Self> {
        let values = vec![0.0; grid.len()];
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &[f64] {
        self.spline.knots()
    }

    pub fn values(&self) -> &[f64] {
        self.spline.values()
    }

    pub fn len(&self) -> usize {
        self.grid().len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn span(&self) -> (f64, f64) {
        self.spline.span()
    }

    pub fn interpolant(&self) -> &NaturalSpline {
        &self.spline
    }

    /// Spline value inside the grid span; identity `delta(t) = t` beyond it.
    pub fn eval(&self, t: f64) -> f64 {
        self.eval_with(t, Extension::Identity)
            .expect("identity extension never fails")
    }

    pub fn eval_with(&self, t: f64, ext: Extension) -> Result<f64> {
        let (lo, hi) = self.span();
        if t < lo || t > hi {
            return match ext {
                Extension::Error => Err(Error::OutOfGridRange { t, lo, hi }),
                Extension::Identity => {
                    warn!("t = {t} outside policy grid [{lo}, {hi}]; using delta(t) = t");
                    Ok(t)
                }
            };
        }
        Ok(self.spline.eval(t))
    }

    /// Largest `|psi(-t) + psi(t)|` over mirrored grid points, or `None`
    /// when the grid itself is not symmetric.
    pub fn odd_asymmetry(&self) -> Option<f64> {
        let (grid, values) = (self.grid(), self.values());
        let n = grid.len();
        let mut worst: f64 = 0.0;
        for k in 0..n {
            if (grid[k] + grid[n - 1 - k]).abs() > 1e-9 {
                return None;
            }
            worst = worst.max((values[k] + values[n - 1 - k]).abs());
        }
        Some(worst)
    }

    /// Scaled-bias risk `E (delta(T) - b)^2`, `T ~ N(b, 1)`, using the
    /// discretization cells around each grid point.
    pub fn risk(&self, b_tilde: f64) -> f64 {
        let (grid, values) = (self.grid(), self.values());
        let n = grid.len();
        let mut risk = 0.0;
        let mut lower = f64::NEG_INFINITY;
        for k in 0..n {
            let upper = if k + 1 < n {
                0.5 * (grid[k] + grid[k + 1])
            } else {
                f64::INFINITY
            };
            let p = normal::interval(lower - b_tilde, upper - b_tilde);
            let e = values[k] - b_tilde;
            risk += p * e * e;
            lower = upper;
        }
        risk
    }
}

/// Behaviour of a policy table outside its grid span.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Extension {
    #[default]
    Identity,
    Error,
}

/// A rule mapping `T_O` to an estimate of the scaled bias.
#[derive(Debug, Clone, PartialEq)]
pub enum Policy {
    /// `delta(t) = t`: the unrestricted estimator.
    Identity,
    /// `delta(t) = 0`: efficient GMM under zero bias.
    Zero,
    Soft(f64),
    Hard(f64),
    Table(PolicyTable),
}

impl Policy {
    pub fn apply(&self, t: f64) -> f64 {
        match self {
            Policy::Identity => t,
            Policy::Zero => 0.0,
            Policy::Soft(l) => thresholding::soft_policy(t, *l),
            Policy::Hard(l) => thresholding::hard_policy(t, *l),
            Policy::Table(table) => table.eval(t),
        }
    }

    /// `E (delta(T) - b)^2` for `T ~ N(b, 1)`.
    pub fn risk(&self, b_tilde: f64) -> f64 {
        match self {
            Policy::Identity => 1.0,
            Policy::Zero => b_tilde * b_tilde,
            Policy::Soft(l) => thresholding::soft_risk(*l, b_tilde),
            Policy::Hard(l) => thresholding::hard_risk(*l, b_tilde),
            Policy::Table(table) => table.risk(b_tilde),
        }
    }

    /// Limit of `risk` as `|b| -> infinity`.
    pub fn limit_risk(&self) -> f64 {
        match self {
            Policy::Identity | Policy::Hard(_) | Policy::Table(_) => 1.0,
            Policy::Zero => f64::INFINITY,
            Policy::Soft(l) => 1.0 + l * l,
        }
    }
}

/// Variance scale and correlation; all risks are functions of these alone.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Geometry {
    pub sigma_u: f64,
    pub rho: f64,
}

impl Geometry {
    pub fn new(sigma_u: f64, rho: f64) -> Self {
        Self { sigma_u, rho }
    }

    /// Unit `Sigma_U`; risks are then multiples of `Y_U`'s risk.
    pub fn scaled(rho: f64) -> Self {
        Self { sigma_u: 1.0, rho }
    }

    pub fn rho2(&self) -> f64 {
        self.rho * self.rho
    }

    /// MSE given the scaled-bias risk of the policy.
    pub fn mse(&self, scaled_bias_risk: f64) -> f64 {
        let r2 = self.rho2();
        r2 * self.sigma_u * scaled_bias_risk + self.sigma_u - r2 * self.sigma_u
    }
}

/// Estimate of the parameter using `delta` to estimate the scaled bias.
pub fn assemble_estimate(p: &ScaledProblem, delta: &PolicyTable, ext: Extension) -> Result<f64> {
    let d = delta.eval_with(p.t_o, ext)?;
    Ok(assemble_from_delta(p, d))
}

/// Same as [`assemble_estimate`] for an arbitrary rule.
pub fn assemble_with(p: &ScaledProblem, policy: &Policy) -> f64 {
    assemble_from_delta(p, policy.apply(p.t_o))
}

/// Estimate given the value `delta(T_O)` of the scaled-bias estimate.
pub fn assemble_from_delta(p: &ScaledProblem, delta_t: f64) -> f64 {
    p.loading() * delta_t + p.y_u - p.loading() * p.t_o
}

/// Data-dependent weight on `Y_U` in the weighted-average form
/// `w * Y_U + (1 - w) * GMM`.
pub fn weight_on_unrestricted(delta: &PolicyTable, t_o: f64) -> Result<f64> {
    if t_o == 0.0 {
        return Err(Error::UndefinedWeight);
    }
    Ok(delta.eval(t_o) / t_o)
}

/// Mean squared error of the estimator built from `delta` at scaled bias `b_tilde`.
pub fn risk_at_bias(geometry: Geometry, delta: &PolicyTable, b_tilde: f64) -> f64 {
    geometry.mse(delta.risk(b_tilde))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> Vec<f64> {
        (-240..=240).map(|k| k as f64 * 0.05).collect()
    }

    fn turnout_efficient() -> ScaledProblem {
        infer_covariance_hausman(0.0043, 0.0014, 0.0026, 0.0009).unwrap()
    }

    #[test]
    fn hausman_turnout_geometry() {
        let p = turnout_efficient();
        assert!((p.y_o + 0.0017).abs() < 1e-15);
        assert!((p.sigma_o.sqrt() - 0.001_072_38).abs() < 1e-7);
        assert!((p.rho + 0.766).abs() < 1e-3);
        assert!((p.t_o * p.sigma_o.sqrt() - p.y_o).abs() < 1e-18);
        // restricted estimator efficient: GMM equals Y_R
        assert!((gmm_estimate(&p) - 0.0026).abs() < 1e-15);
    }

    #[test]
    fn hausman_rejects_reversed_order_and_zero_restricted_variance() {
        assert!(matches!(
            infer_covariance_hausman(0.0, 0.0009, 0.0, 0.0014),
            Err(Error::HausmanOrderViolated { .. })
        ));
        assert!(matches!(
            infer_covariance_hausman(0.0, 0.0014, 0.0, 0.0),
            Err(Error::RhoOutOfRange { .. })
        ));
    }

    #[test]
    fn identical_estimators_have_no_contrast() {
        let pair = EstimatePair::from_standard_errors(1.0, 1.0, 1.0, 1.0, Covariance::Explicit(1.0));
        assert!(matches!(from_estimates(&pair), Err(Error::NonPositiveSigmaO { .. })));
    }

    #[test]
    fn equal_estimates_give_zero_t() {
        let pair = EstimatePair::from_standard_errors(0.3, 1.0, 0.3, 0.5, Covariance::Explicit(0.1));
        let p = from_estimates(&pair).unwrap();
        assert_eq!(p.y_o, 0.0);
        assert_eq!(p.t_o, 0.0);
    }

    #[test]
    fn correlation_input_recovers_covariance() {
        // Explicit covariance -> rho -> covariance again.
        let pair = EstimatePair::from_standard_errors(0.0, 0.0014, 0.0, 0.0009, Covariance::Explicit(0.9164e-6));
        let p = from_estimates(&pair).unwrap();
        let again = EstimatePair { covariance: Covariance::CorrelationUo(p.rho), ..pair };
        let q = from_estimates(&again).unwrap();
        assert!((q.sigma_o - p.sigma_o).abs() < 1e-18);
        assert!((q.rho - p.rho).abs() < 1e-12);
    }

    #[test]
    fn gmm_with_zero_rho_is_unrestricted() {
        let p = ScaledProblem { y_u: 2.0, y_o: 1.0, sigma_u: 1.0, sigma_o: 4.0, rho: 0.0, t_o: 0.5 };
        assert_eq!(gmm_estimate(&p), 2.0);
    }

    #[test]
    fn identity_and_zero_policies_assemble_to_endpoints() {
        let p = turnout_efficient();
        let id = PolicyTable::identity(grid()).unwrap();
        let zero = PolicyTable::zero(grid()).unwrap();
        let u = assemble_estimate(&p, &id, Extension::Error).unwrap();
        assert!((u - p.y_u).abs() < 1e-15);
        let g = assemble_estimate(&p, &zero, Extension::Error).unwrap();
        assert!((g - gmm_estimate(&p)).abs() < 1e-15);
    }

    #[test]
    fn out_of_grid_behaviour() {
        let small = PolicyTable::zero(vec![-1.0, 0.0, 1.0]).unwrap();
        assert!(matches!(small.eval_with(2.0, Extension::Error), Err(Error::OutOfGridRange { .. })));
        assert_eq!(small.eval(2.0), 2.0);
    }

    #[test]
    fn weights_for_endpoint_policies() {
        let id = PolicyTable::identity(grid()).unwrap();
        let zero = PolicyTable::zero(grid()).unwrap();
        assert!((weight_on_unrestricted(&id, 1.3).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(weight_on_unrestricted(&zero, -0.7).unwrap(), 0.0);
        assert!(matches!(weight_on_unrestricted(&id, 0.0), Err(Error::UndefinedWeight)));
    }

    #[test]
    fn risk_at_bias_reference_values() {
        let id = PolicyTable::identity(grid()).unwrap();
        let zero = PolicyTable::zero(grid()).unwrap();
        let g = Geometry::new(2.5, -0.6);
        for b in [-3.0, 0.0, 0.4, 5.0] {
            // cells of width 0.05 around t give variance 1 + h^2/12 - tiny
            let r = risk_at_bias(g, &id, b);
            assert!((r - 2.5).abs() < 2.5 * 0.36 * 3e-4, "b={b} r={r}");
        }
        assert!((risk_at_bias(g, &zero, 0.0) - 2.5 * (1.0 - 0.36)).abs() < 1e-15);
        let g1 = Geometry::new(1.0, 0.5);
        assert!((risk_at_bias(g1, &zero, 2.0) - 1.75).abs() < 1e-14);
    }

    #[test]
    fn twenty_seven_percent_reduction_at_dobkin_rho() {
        let g = Geometry::scaled(-0.524);
        assert!((g.mse(0.0) - 0.725_424).abs() < 1e-6);
    }
}
