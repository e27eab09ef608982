//! Adaptation with one unrestricted and up to two restricted estimators.
//!
//! The restricted estimators are ordered so that the first is believed to be
//! at least as biased as the second, giving the nested bounds
//! `{(0,0), (inf,0), (inf,inf)}`. Scenario `k` frees the first `k` bias
//! components; its oracle is GMM imposing zero bias on the rest.

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::bnm::symmetric_grid;
use crate::error::{Error, Result};
use crate::model::{assemble_from_delta, Policy, PolicyTable, ScaledProblem};
use crate::normal;
use crate::priorsolve::{solve_least_favorable, DiscreteProblem, Kernel, PriorWeights, SolverConfig};

/// `Y_U` and the contrasts `Y_O = Y_R - Y_U` with the joint covariance of
/// `(Y_U, Y_O)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiEstimates {
    pub y_u: f64,
    pub y_o: Vec<f64>,
    pub sigma: DMatrix<f64>,
}

impl MultiEstimates {
    pub fn new(y_u: f64, y_o: Vec<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        let p = y_o.len();
        if !(1..=2).contains(&p) {
            return Err(Error::InvalidInput(format!("need one or two restricted estimators, got {p}")));
        }
        if sigma.nrows() != p + 1 || sigma.ncols() != p + 1 {
            return Err(Error::InvalidInput(format!(
                "covariance must be {0}x{0}, got {1}x{2}",
                p + 1,
                sigma.nrows(),
                sigma.ncols()
            )));
        }
        let scale = sigma.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if (&sigma - sigma.transpose()).iter().any(|v| v.abs() > 1e-12 * scale) {
            return Err(Error::InvalidInput("covariance must be symmetric".into()));
        }
        if sigma.clone().cholesky().is_none() {
            return Err(Error::InvalidInput("covariance must be positive definite".into()));
        }
        if y_o.iter().any(|v| !v.is_finite()) || !y_u.is_finite() {
            return Err(Error::InvalidInput("estimates must be finite".into()));
        }
        Ok(Self { y_u, y_o, sigma })
    }

    /// From the restricted estimates themselves and the covariance of
    /// `(Y_U, Y_R1, ..., Y_Rp)`.
    pub fn from_restricted(y_u: f64, y_r: &[f64], cov: DMatrix<f64>) -> Result<Self> {
        let p = y_r.len();
        let mut a = DMatrix::identity(p + 1, p + 1);
        for j in 1..=p {
            a[(j, 0)] = -1.0;
        }
        let sigma = &a * cov * a.transpose();
        let sigma = 0.5 * (&sigma + sigma.transpose());
        Self::new(y_u, y_r.iter().map(|r| r - y_u).collect(), sigma)
    }

    pub fn p(&self) -> usize {
        self.y_o.len()
    }

    pub fn sigma_u(&self) -> f64 {
        self.sigma[(0, 0)]
    }

    pub fn sigma_uo(&self) -> DVector<f64> {
        DVector::from_iterator(self.p(), (1..=self.p()).map(|j| self.sigma[(0, j)]))
    }

    pub fn sigma_o(&self) -> DMatrix<f64> {
        self.sigma.view((1, 1), (self.p(), self.p())).into_owned()
    }

    /// The scalar problem pairing `Y_U` with restricted estimator `j` alone.
    pub fn pair(&self, j: usize) -> ScaledProblem {
        let (su, so) = (self.sigma_u(), self.sigma[(j + 1, j + 1)]);
        ScaledProblem {
            y_u: self.y_u,
            y_o: self.y_o[j],
            sigma_u: su,
            sigma_o: so,
            rho: self.sigma[(0, j + 1)] / (su * so).sqrt(),
            t_o: self.y_o[j] / so.sqrt(),
        }
    }

    fn select(&self, subset: &[usize]) -> Result<(DVector<f64>, DMatrix<f64>, DVector<f64>)> {
        let p = self.p();
        if subset.iter().any(|&j| j >= p) || (1..subset.len()).any(|i| subset[..i].contains(&subset[i])) {
            return Err(Error::InvalidInput(format!("bad restricted subset {subset:?}")));
        }
        let k = subset.len();
        let uo = DVector::from_iterator(k, subset.iter().map(|&j| self.sigma[(0, j + 1)]));
        let so = DMatrix::from_fn(k, k, |a, b| self.sigma[(subset[a] + 1, subset[b] + 1)]);
        let y = DVector::from_iterator(k, subset.iter().map(|&j| self.y_o[j]));
        Ok((uo, so, y))
    }
}

fn invert(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m.nrows() == 0 {
        return Ok(m.clone());
    }
    let scale = m.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let chol = m.clone().cholesky().ok_or(Error::SingularSubCovariance)?;
    let min_pivot = chol.l().diagonal().iter().fold(f64::INFINITY, |a, v| a.min(*v));
    if !(min_pivot * min_pivot > 1e-13 * scale) {
        return Err(Error::SingularSubCovariance);
    }
    Ok(chol.inverse())
}

/// GMM estimate and variance imposing zero bias on the restricted
/// estimators in `subset`: `y_u - S_UO S_O^-1 y_o` and `S_U - S_UO S_O^-1 S_OU`
/// over the selected block.
pub fn gmm_combine(me: &MultiEstimates, subset: &[usize]) -> Result<(f64, f64)> {
    let (uo, so, y) = me.select(subset)?;
    if subset.is_empty() {
        return Ok((me.y_u, me.sigma_u()));
    }
    let inv = invert(&so)?;
    let a = &inv * &uo;
    Ok((me.y_u - a.dot(&y), me.sigma_u() - uo.dot(&a)))
}

/// Overidentification statistic `y' S_O^-1 y` over the selected contrasts
/// and its chi-square p-value.
pub fn j_test(me: &MultiEstimates, subset: &[usize]) -> Result<(f64, f64)> {
    let (_, so, y) = me.select(subset)?;
    if subset.is_empty() {
        return Ok((0.0, 1.0));
    }
    let inv = invert(&so)?;
    let stat = y.dot(&(&inv * &y));
    let chi = ChiSquared::new(subset.len() as f64).expect("positive degrees of freedom");
    Ok((stat, chi.sf(stat)))
}

/// Oracle risks of the nested scenarios: entry `k` frees the first `k`
/// bias components, so entry 0 is full GMM and entry `p` is `Sigma_U`.
#[derive(Debug, Clone, PartialEq)]
pub struct NestedScaling {
    pub levels: Vec<f64>,
}

pub fn nested_scaling(me: &MultiEstimates) -> Result<NestedScaling> {
    let p = me.p();
    let levels = (0..=p)
        .map(|k| gmm_combine(me, &(k..p).collect::<Vec<_>>()).map(|(_, v)| v))
        .collect::<Result<Vec<_>>>()?;
    Ok(NestedScaling { levels })
}

/// Grids for the multivariate and pairwise solves. Bias points are in units
/// of each contrast's standard error; observation cells are in whitened
/// units and reach `margin` beyond the largest whitened bias mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MultiGrid {
    pub bias_half: f64,
    pub bias_step: f64,
    pub obs_step: f64,
    pub margin: f64,
    /// Stationarity tolerance of the two-dimensional prior search, on the
    /// scale of regrets.
    pub tol: f64,
}

impl Default for MultiGrid {
    fn default() -> Self {
        Self {
            bias_half: 6.0,
            bias_step: 0.5,
            obs_step: 0.5,
            margin: 3.0,
            tol: 1e-3,
        }
    }
}

impl MultiGrid {
    /// The grids of the scalar adaptive solver.
    pub fn scalar() -> Self {
        Self {
            bias_half: crate::adaptive::BIAS_HALF,
            bias_step: crate::adaptive::BIAS_STEP,
            obs_step: crate::adaptive::OBS_STEP,
            margin: crate::adaptive::OBS_HALF - crate::adaptive::BIAS_HALF,
            tol: 1e-6,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.bias_half > 0.0 && self.bias_step > 0.0 && self.obs_step > 0.0 && self.margin >= 0.0 && self.tol > 0.0) {
            return Err(Error::InvalidInput(format!("invalid grid {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiSolution {
    /// Bias grid per axis in standard-error units.
    pub bias_axis: Vec<f64>,
    /// Observation grid for each whitened axis.
    pub obs_axes: Vec<Vec<f64>>,
    /// Estimated `S_UO S_O^-1 b / sqrt(Sigma_U)` per whitened cell,
    /// row-major over the axes.
    pub psi: Vec<f64>,
    /// Least favorable prior over the bias grid, row-major.
    pub prior: Vec<f64>,
    pub scaling: NestedScaling,
    /// Worst-case regret per scenario, indexed like `scaling.levels`.
    pub scenario_regrets: Vec<f64>,
    whiten: DMatrix<f64>,
}

impl MultiSolution {
    pub fn max_regret(&self) -> f64 {
        self.scenario_regrets.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Ratio of the largest to the smallest scenario regret.
    pub fn regret_spread(&self) -> f64 {
        let min = self.scenario_regrets.iter().cloned().fold(f64::INFINITY, f64::min);
        self.max_regret() / min
    }

    fn cell(&self, y_o: &[f64]) -> usize {
        let z = &self.whiten * DVector::from_column_slice(y_o);
        z.iter().zip(&self.obs_axes).fold(0, |acc, (v, axis)| {
            let k = axis
                .iter()
                .enumerate()
                .min_by(|a, b| (a.1 - v).abs().total_cmp(&(b.1 - v).abs()))
                .map(|(k, _)| k)
                .expect("non-empty grid");
            acc * axis.len() + k
        })
    }

    /// Estimate of the bias term `S_UO S_O^-1 b` at the observed contrasts.
    pub fn bias_term(&self, me: &MultiEstimates) -> f64 {
        self.psi[self.cell(&me.y_o)] * me.sigma_u().sqrt()
    }

    /// Adaptive estimate: full GMM plus the estimated bias term.
    pub fn estimate(&self, me: &MultiEstimates) -> Result<f64> {
        let (gmm, _) = gmm_combine(me, &(0..me.p()).collect::<Vec<_>>())?;
        Ok(gmm + self.bias_term(me))
    }
}

/// Total background prior mass, spread over the bias grid.
const FLOOR_MASS: f64 = 1e-8;

/// Row-major points of the `p`-fold product of `axis`.
fn product(axis: &[f64], p: usize) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = vec![vec![]];
    for _ in 0..p {
        out = out
            .into_iter()
            .flat_map(|pre| {
                axis.iter().map(move |a| {
                    let mut v = pre.clone();
                    v.push(*a);
                    v
                })
            })
            .collect();
    }
    out
}

/// Smallest scenario containing `b`: one past the last non-zero component.
fn scenario_of(b: &[f64]) -> usize {
    b.iter().rposition(|v| *v != 0.0).map_or(0, |j| j + 1)
}

/// Minimax rule for the nested adaptation problem, with risk scaled by the
/// oracle risk of the smallest scenario containing each bias point.
pub fn solve_multivar_adaptive(me: &MultiEstimates, grid: &MultiGrid) -> Result<MultiSolution> {
    grid.validate()?;
    let p = me.p();
    let su = me.sigma_u();
    let so = me.sigma_o();
    let uo = me.sigma_uo();
    let scaling = nested_scaling(me)?;
    let inv = invert(&so)?;
    let loading = &inv * &uo;
    let chol = so.clone().cholesky().ok_or(Error::SingularSubCovariance)?;
    let whiten = chol.l().try_inverse().ok_or(Error::SingularSubCovariance)?;
    let sd = DVector::from_iterator(p, (0..p).map(|j| so[(j, j)].sqrt()));

    let bias_axis = symmetric_grid(grid.bias_half, grid.bias_step);
    let points = product(&bias_axis, p);
    let means: Vec<DVector<f64>> = points
        .iter()
        .map(|bt| &whiten * DVector::from_iterator(p, bt.iter().zip(sd.iter()).map(|(a, s)| a * s)))
        .collect();
    // Each whitened axis reaches `margin` beyond its largest bias mean.
    let obs_axes: Vec<Vec<f64>> = (0..p)
        .map(|j| {
            let reach = means.iter().map(|m| m[j].abs()).fold(0.0, f64::max);
            symmetric_grid(reach + grid.margin, grid.obs_step)
        })
        .collect();
    let n_cells: usize = obs_axes.iter().map(Vec::len).product();
    let edges: Vec<Vec<f64>> = obs_axes
        .iter()
        .map(|axis| {
            let mut e = vec![f64::NEG_INFINITY];
            e.extend(axis.windows(2).map(|w| 0.5 * (w[0] + w[1])));
            e.push(f64::INFINITY);
            e
        })
        .collect();
    let probs: Vec<f64> = means
        .par_iter()
        .flat_map_iter(|m| {
            let axes: Vec<Vec<f64>> = m
                .iter()
                .zip(&edges)
                .map(|(mu, e)| e.windows(2).map(|w| normal::interval(w[0] - mu, w[1] - mu)).collect())
                .collect();
            (0..n_cells).map(move |c| {
                let mut rest = c;
                let mut prob = 1.0;
                for axis in axes.iter().rev() {
                    prob *= axis[rest % axis.len()];
                    rest /= axis.len();
                }
                prob
            })
        })
        .collect();

    let target: Vec<f64> = points
        .iter()
        .map(|bt| bt.iter().zip(sd.iter()).zip(loading.iter()).map(|((a, s), l)| a * s * l).sum::<f64>() / su.sqrt())
        .collect();
    let weight: Vec<f64> = points.iter().map(|bt| su / scaling.levels[scenario_of(bt)]).collect();
    let offset = scaling.levels[0] / su;
    let m = points.len();
    // Bias grid and cells are both symmetric through the origin.
    let groups: Vec<Vec<usize>> = (0..(m + 1) / 2)
        .map(|l| if l == m - 1 - l { vec![l] } else { vec![l, m - 1 - l] })
        .collect();
    let kernel = Kernel {
        n_obs: n_cells,
        probs,
        target,
        weight,
        offset,
        groups,
        background: None,
    }
    .with_floor(FLOOR_MASS / m as f64);
    let cfg = SolverConfig {
        stationarity_tol: grid.tol,
        max_entering: 32,
        ..SolverConfig::default()
    };
    let ks = kernel.solve(&cfg)?;

    let support: Vec<usize> = (0..m).filter(|&l| ks.mu[l] > 0.0).collect();
    let mut psi = ks.psi.clone();
    for (c, v) in psi.iter_mut().enumerate() {
        if v.is_finite() {
            continue;
        }
        // No prior mass reaches this cell: use the nearest support point.
        let mut rest = c;
        let mut centre = vec![0.0; p];
        for i in (0..p).rev() {
            let axis = &obs_axes[i];
            centre[i] = axis[rest % axis.len()];
            rest /= axis.len();
        }
        let near = support
            .iter()
            .min_by(|a, b| {
                let d = |l: usize| means[l].iter().zip(&centre).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
                d(**a).total_cmp(&d(**b))
            })
            .expect("prior has support");
        *v = kernel.target[*near];
    }
    let odd: Vec<f64> = (0..n_cells).map(|c| 0.5 * (psi[c] - psi[n_cells - 1 - c])).collect();
    let psi = odd;

    let mut scenario_regrets = vec![f64::NEG_INFINITY; p + 1];
    let risks: Vec<f64> = (0..m)
        .into_par_iter()
        .map(|l| {
            let col = &kernel.probs[l * n_cells..(l + 1) * n_cells];
            let th = kernel.target[l];
            col.iter().zip(&psi).map(|(pr, s)| pr * (s - th) * (s - th)).sum::<f64>() + offset
        })
        .collect();
    let mut value = 0.0;
    let mut max_weighted = f64::NEG_INFINITY;
    for (l, bt) in points.iter().enumerate() {
        let s = scenario_of(bt);
        for (k, reg) in scenario_regrets.iter_mut().enumerate().skip(s) {
            *reg = reg.max(risks[l] * su / scaling.levels[k]);
        }
        let w = kernel.weight[l] * risks[l];
        value += ks.mu[l] * w;
        max_weighted = max_weighted.max(w);
    }
    debug!(
        "multivariate solve: value {value} max {max_weighted} gap {:e} rounds {} regrets {scenario_regrets:?}",
        max_weighted - value,
        ks.iterations
    );
    let sol = MultiSolution {
        bias_axis,
        obs_axes,
        psi,
        prior: ks.mu,
        scaling,
        scenario_regrets,
        whiten,
    };
    if sol.regret_spread() > 1.05 {
        warn!(
            "GridTooCoarse: scenario regrets {:?} differ by more than 5%",
            sol.scenario_regrets
        );
    }
    Ok(sol)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseSolution {
    pub rho2: f64,
    pub policy: PolicyTable,
    pub prior: PriorWeights,
    /// Worst-case regret against the oracle that knows whether `b = 0`.
    pub regret: f64,
}

impl PairwiseSolution {
    pub fn estimate(&self, p: &ScaledProblem) -> f64 {
        assemble_from_delta(p, self.policy.eval(p.t_o))
    }
}

/// Adaptation over the two bounds `{0, inf}`: the oracle risk is
/// `1 - rho^2` at `b = 0` and `1` elsewhere (units of `Sigma_U`).
pub fn pairwise_adapt(rho: f64, grid: &MultiGrid) -> Result<PairwiseSolution> {
    grid.validate()?;
    let rho2 = rho * rho;
    if !(rho2 < 1.0) {
        return Err(Error::RhoOutOfRange { rho });
    }
    let bias = symmetric_grid(grid.bias_half, grid.bias_step);
    let obs = symmetric_grid(grid.bias_half + grid.margin, grid.obs_step);
    if rho2 == 0.0 {
        return Ok(PairwiseSolution {
            rho2,
            policy: PolicyTable::identity(obs)?,
            prior: PriorWeights::point_mass(bias, 0.0),
            regret: 1.0,
        });
    }
    let c = 1.0 / rho2 - 1.0;
    let weights = bias
        .iter()
        .map(|b| if *b == 0.0 { 1.0 / c } else { 1.0 / (1.0 + c) })
        .collect();
    let dp = DiscreteProblem::new(bias, obs, weights, c)?;
    let cfg = SolverConfig {
        stationarity_tol: 1e-6 * (2.0 * rho2).min(1.0),
        ..SolverConfig::default()
    };
    let sol = solve_least_favorable(&dp, &cfg)?;
    let policy = Policy::Table(sol.policy.clone());
    let regret = sol.max_weighted_risk().max((policy.limit_risk() + c) / (1.0 + c));
    Ok(PairwiseSolution {
        rho2,
        policy: sol.policy,
        prior: sol.prior,
        regret,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompositeSolution {
    /// GMM weights combining the restricted estimators.
    pub weights: Vec<f64>,
    /// `Y_U` against the composite restricted estimator.
    pub problem: ScaledProblem,
    pub pairwise: PairwiseSolution,
    pub estimate: f64,
    /// Worst-case regret against the composite oracle.
    pub regret: f64,
    /// Worst-case regret against the nested multivariate oracle.
    pub nested_regret: f64,
}

/// Combines the restricted estimators by efficient GMM and adapts between
/// `Y_U` and the composite.
pub fn composite_adapt(me: &MultiEstimates, grid: &MultiGrid) -> Result<CompositeSolution> {
    let p = me.p();
    let (su, uo, so) = (me.sigma_u(), me.sigma_uo(), me.sigma_o());
    // cov(Y_Rj, Y_Rk) = S_U + S_UOj + S_UOk + S_Ojk
    let vr = DMatrix::from_fn(p, p, |j, k| su + uo[j] + uo[k] + so[(j, k)]);
    let inv = invert(&vr)?;
    let raw = &inv * DVector::from_element(p, 1.0);
    let w = &raw / raw.sum();
    let sigma_c = w.dot(&(&so * &w));
    if !(sigma_c > 0.0) {
        return Err(Error::NonPositiveSigmaO { sigma_o: sigma_c });
    }
    let y_c = w.iter().zip(&me.y_o).map(|(a, b)| a * b).sum::<f64>();
    let rho = w.dot(&uo) / (su * sigma_c).sqrt();
    let problem = ScaledProblem {
        y_u: me.y_u,
        y_o: y_c,
        sigma_u: su,
        sigma_o: sigma_c,
        rho,
        t_o: y_c / sigma_c.sqrt(),
    };
    let pairwise = pairwise_adapt(rho, grid)?;
    let estimate = pairwise.estimate(&problem);

    // MSE / Sigma_U is rho^2 r(b) + 1 - rho^2 in the composite scaled bias.
    let policy = Policy::Table(pairwise.policy.clone());
    let rho2 = rho * rho;
    let mse = |b: f64| rho2 * policy.risk(b) + 1.0 - rho2;
    let worst = symmetric_grid(grid.bias_half, grid.bias_step)
        .iter()
        .map(|b| mse(*b))
        .fold(rho2 * policy.limit_risk() + 1.0 - rho2, f64::max);
    let scaling = nested_scaling(me)?;
    // A composite bias of zero is attainable with b = 0; any other value
    // needs the first (more biased) component free when it carries weight.
    let free_level = if w[0].abs() > 0.0 { scaling.levels[1] } else { scaling.levels[p] };
    let nested_regret = (mse(0.0) * su / scaling.levels[0]).max(worst * su / free_level);
    Ok(CompositeSolution {
        weights: w.iter().cloned().collect(),
        problem,
        regret: pairwise.regret,
        pairwise,
        estimate,
        nested_regret,
    })
}
