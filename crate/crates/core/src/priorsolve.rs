//! Least favorable priors for weighted minimax estimation on a discretized
//! bias grid.
//!
//! For a prior `mu` over bias points `b_l` the Bayes rule is the weighted
//! posterior mean `psi_k = sum mu w pi b / sum mu w pi`, and plugging it in
//! gives the concave, positively homogeneous objective
//!
//! ```text
//! V(mu) = sum_l mu_l w_l (b_l^2 + c) - sum_k N_k^2 / D_k
//! ```
//!
//! whose gradient is `g_l = w_l (R_l(psi) + c)`. A prior is least favorable
//! when `max_l g_l <= V` with equality on its support. The maximizer runs a
//! few multiplicative sweeps from the uniform prior, then an active-set
//! Newton method on the support, exchanging in bias points whose gradient
//! exceeds the value.

use log::debug;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::PolicyTable;
use crate::normal;

/// Bias grid, observation grid, per-point risk weights and additive offset.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteProblem {
    bias_grid: Vec<f64>,
    obs_grid: Vec<f64>,
    weights: Vec<f64>,
    offset: f64,
}

impl DiscreteProblem {
    pub fn new(bias_grid: Vec<f64>, obs_grid: Vec<f64>, weights: Vec<f64>, offset: f64) -> Result<Self> {
        if bias_grid.is_empty() {
            return Err(Error::InvalidInput("bias grid is empty".into()));
        }
        if obs_grid.len() < 2 {
            return Err(Error::InvalidInput("observation grid needs at least two points".into()));
        }
        for (name, g) in [("bias", &bias_grid), ("observation", &obs_grid)] {
            if g.iter().any(|v| !v.is_finite()) || g.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(Error::InvalidInput(format!("{name} grid must be finite and strictly increasing")));
            }
        }
        if weights.len() != bias_grid.len() {
            return Err(Error::InvalidInput(format!(
                "{} weights for {} bias points",
                weights.len(),
                bias_grid.len()
            )));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::InvalidInput("weights must be finite and positive".into()));
        }
        if !(offset.is_finite() && offset >= 0.0) {
            return Err(Error::InvalidInput(format!("offset must be finite and non-negative, got {offset}")));
        }
        Ok(Self {
            bias_grid,
            obs_grid,
            weights,
            offset,
        })
    }

    /// Unit weights, zero offset: the plain bounded normal mean problem.
    pub fn unweighted(bias_grid: Vec<f64>, obs_grid: Vec<f64>) -> Result<Self> {
        let weights = vec![1.0; bias_grid.len()];
        Self::new(bias_grid, obs_grid, weights, 0.0)
    }

    pub fn bias_grid(&self) -> &[f64] {
        &self.bias_grid
    }

    pub fn obs_grid(&self) -> &[f64] {
        &self.obs_grid
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    /// Mirror pairs of bias points when grid and weights are symmetric about zero.
    fn mirror_groups(&self) -> Option<Vec<Vec<usize>>> {
        let j = self.bias_grid.len();
        let scale = self.bias_grid.iter().fold(1.0f64, |m, b| m.max(b.abs()));
        for l in 0..j / 2 + 1 {
            let r = j - 1 - l;
            if (self.bias_grid[l] + self.bias_grid[r]).abs() > 1e-9 * scale {
                return None;
            }
            let (a, b) = (self.weights[l], self.weights[r]);
            if (a - b).abs() > 1e-12 * a.max(b) {
                return None;
            }
        }
        let mut groups = Vec::with_capacity(j / 2 + 1);
        for l in 0..(j + 1) / 2 {
            let r = j - 1 - l;
            groups.push(if l == r { vec![l] } else { vec![l, r] });
        }
        Some(groups)
    }

    fn obs_symmetric(&self) -> bool {
        let n = self.obs_grid.len();
        let scale = self.obs_grid.iter().fold(1.0f64, |m, t| m.max(t.abs()));
        (0..n).all(|k| (self.obs_grid[k] + self.obs_grid[n - 1 - k]).abs() <= 1e-9 * scale)
    }

    fn kernel(&self) -> Kernel {
        let tp = transition_probabilities(&self.bias_grid, &self.obs_grid);
        let groups = self
            .mirror_groups()
            .unwrap_or_else(|| (0..self.bias_grid.len()).map(|l| vec![l]).collect());
        Kernel {
            n_obs: tp.n_obs,
            probs: tp.data,
            target: self.bias_grid.clone(),
            weight: self.weights.clone(),
            offset: self.offset,
            groups,
            background: None,
        }
    }

    /// `R_l = sum_k pi_kl (psi_k - b_l)^2` at every bias point.
    pub fn risk_profile(&self, policy: &PolicyTable) -> Result<Vec<f64>> {
        self.check_policy(policy)?;
        let tp = transition_probabilities(&self.bias_grid, &self.obs_grid);
        Ok(self
            .bias_grid
            .iter()
            .enumerate()
            .map(|(l, &b)| {
                tp.column(l)
                    .iter()
                    .zip(policy.values())
                    .map(|(p, psi)| p * (psi - b) * (psi - b))
                    .sum()
            })
            .collect())
    }

    fn check_policy(&self, policy: &PolicyTable) -> Result<()> {
        if policy.grid() != self.obs_grid.as_slice() {
            return Err(Error::InvalidInput("policy grid differs from the observation grid".into()));
        }
        Ok(())
    }
}

/// Discrete prior over a bias grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorWeights {
    bias_grid: Vec<f64>,
    mu: Vec<f64>,
}

impl PriorWeights {
    pub fn new(bias_grid: Vec<f64>, mu: Vec<f64>) -> Result<Self> {
        if bias_grid.len() != mu.len() {
            return Err(Error::InvalidInput("prior weights and bias grid lengths differ".into()));
        }
        if mu.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
            return Err(Error::InvalidInput("prior weights must be non-negative".into()));
        }
        let total: f64 = mu.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInput(format!("prior weights sum to {total}, not 1")));
        }
        Ok(Self { bias_grid, mu })
    }

    pub fn uniform(bias_grid: Vec<f64>) -> Self {
        let n = bias_grid.len();
        Self {
            mu: vec![1.0 / n as f64; n],
            bias_grid,
        }
    }

    /// Unit mass on the grid point closest to `b`.
    pub fn point_mass(bias_grid: Vec<f64>, b: f64) -> Self {
        let at = bias_grid
            .iter()
            .enumerate()
            .min_by(|x, y| (x.1 - b).abs().total_cmp(&(y.1 - b).abs()))
            .map(|(i, _)| i)
            .unwrap_or(0);
        let mut mu = vec![0.0; bias_grid.len()];
        mu[at] = 1.0;
        Self { bias_grid, mu }
    }

    pub fn bias_grid(&self) -> &[f64] {
        &self.bias_grid
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    /// Grid points carrying positive mass, with their weights.
    pub fn support(&self) -> Vec<(f64, f64)> {
        self.bias_grid
            .iter()
            .zip(&self.mu)
            .filter(|(_, m)| **m > 0.0)
            .map(|(b, m)| (*b, *m))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Relative change in the objective below which Newton iterations stop.
    pub objective_tol: f64,
    /// Limit on exchange rounds (each round re-solves on the active support).
    pub max_iter: usize,
    /// Allowed excess of any bias point's weighted risk over the value.
    pub stationarity_tol: f64,
    /// Most atoms added to the support per exchange round.
    pub max_entering: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            objective_tol: 1e-8,
            max_iter: 200,
            stationarity_tol: 1e-6,
            max_entering: 8,
        }
    }
}

impl SolverConfig {
    fn validate(&self) -> Result<()> {
        if !(self.objective_tol > 0.0 && self.stationarity_tol > 0.0) || self.max_iter == 0 || self.max_entering == 0 {
            return Err(Error::InvalidInput("solver tolerances and iteration limit must be positive".into()));
        }
        Ok(())
    }
}

/// Observation-cell probabilities, stored one bias column at a time.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    n_obs: usize,
    n_bias: usize,
    data: Vec<f64>,
}

impl Transition {
    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn n_bias(&self) -> usize {
        self.n_bias
    }

    /// Probability of cell `k` under bias point `l`.
    pub fn get(&self, k: usize, l: usize) -> f64 {
        self.data[l * self.n_obs + k]
    }

    pub fn column(&self, l: usize) -> &[f64] {
        &self.data[l * self.n_obs..(l + 1) * self.n_obs]
    }
}

/// Cell edges at grid midpoints, with infinite outer edges.
fn cell_edges(obs_grid: &[f64]) -> Vec<f64> {
    let mut edges = Vec::with_capacity(obs_grid.len() + 1);
    edges.push(f64::NEG_INFINITY);
    edges.extend(obs_grid.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    edges.push(f64::INFINITY);
    edges
}

/// `pi_kl = Phi(e_{k+1} - b_l) - Phi(e_k - b_l)` with `e` the cell edges.
pub fn transition_probabilities(bias_grid: &[f64], obs_grid: &[f64]) -> Transition {
    let edges = cell_edges(obs_grid);
    let n_obs = obs_grid.len();
    let data: Vec<f64> = bias_grid
        .par_iter()
        .flat_map_iter(|&b| {
            let edges = &edges;
            (0..n_obs).map(move |k| normal::interval(edges[k] - b, edges[k + 1] - b))
        })
        .collect();
    Transition {
        n_obs,
        n_bias: bias_grid.len(),
        data,
    }
}

/// Weighted posterior mean of the bias in each observation cell.
pub fn posterior_policy(dp: &DiscreteProblem, prior: &PriorWeights) -> Result<PolicyTable> {
    if prior.bias_grid() != dp.bias_grid() {
        return Err(Error::InvalidInput("prior and problem bias grids differ".into()));
    }
    let kernel = dp.kernel();
    let (d, n) = kernel.moments_by_point(prior.mu());
    let mut psi = Vec::with_capacity(d.len());
    for (k, (dk, nk)) in d.iter().zip(&n).enumerate() {
        if !(*dk > 0.0) {
            return Err(Error::DegenerateCell { cell: k });
        }
        psi.push(nk / dk);
    }
    PolicyTable::new(dp.obs_grid.clone(), psi)
}

/// `sum_l mu_l w_l (R_l(psi) + c)`: prior-weighted risk of `policy`.
pub fn weighted_bayes_risk(dp: &DiscreteProblem, prior: &PriorWeights, policy: &PolicyTable) -> Result<f64> {
    if prior.bias_grid() != dp.bias_grid() {
        return Err(Error::InvalidInput("prior and problem bias grids differ".into()));
    }
    let risks = dp.risk_profile(policy)?;
    Ok(prior
        .mu()
        .iter()
        .zip(&dp.weights)
        .zip(&risks)
        .map(|((m, w), r)| m * w * (r + dp.offset))
        .sum())
}

/// Result of [`solve_least_favorable`].
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub prior: PriorWeights,
    pub policy: PolicyTable,
    /// Attained maximum of the outer objective.
    pub value: f64,
    /// `w_l (R_l + c)` at every bias point under the returned policy.
    pub weighted_risks: Vec<f64>,
    /// `max_l w_l (R_l + c) - value`; non-positive up to the tolerance.
    pub gap: f64,
    pub iterations: usize,
}

impl Solution {
    /// Largest weighted risk over the bias grid.
    pub fn max_weighted_risk(&self) -> f64 {
        self.weighted_risks.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Maximizes the Bayes risk over priors and returns the least favorable
/// prior, its posterior-mean policy and the value.
pub fn solve_least_favorable(dp: &DiscreteProblem, cfg: &SolverConfig) -> Result<Solution> {
    cfg.validate()?;
    let kernel = dp.kernel();
    let ks = kernel.solve(cfg)?;
    let mut psi = Vec::with_capacity(ks.psi.len());
    for (k, v) in ks.psi.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::DegenerateCell { cell: k });
        }
        psi.push(*v);
    }
    if kernel.groups.iter().any(|g| g.len() == 2) && dp.obs_symmetric() {
        let n = psi.len();
        let odd: Vec<f64> = (0..n).map(|k| 0.5 * (psi[k] - psi[n - 1 - k])).collect();
        psi = odd;
    }
    let policy = PolicyTable::new(dp.obs_grid.clone(), psi)?;
    let risks = dp.risk_profile(&policy)?;
    let weighted_risks: Vec<f64> = risks
        .iter()
        .zip(&dp.weights)
        .map(|(r, w)| w * (r + dp.offset))
        .collect();
    let value: f64 = ks.mu.iter().zip(&weighted_risks).map(|(m, g)| m * g).sum();
    let max_g = weighted_risks.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let gap = max_g - value;
    if gap > cfg.stationarity_tol {
        return Err(Error::NoConvergence {
            iterations: ks.iterations,
            value,
            gap,
            best_prior: ks.mu,
        });
    }
    Ok(Solution {
        prior: PriorWeights {
            bias_grid: dp.bias_grid.clone(),
            mu: ks.mu,
        },
        policy,
        value,
        weighted_risks,
        gap,
        iterations: ks.iterations,
    })
}

/// Problem data in the form the maximizer works with. Bias points are
/// grouped into atoms that always carry equal mass per member; a group of
/// two is a mirror pair.
#[derive(Debug, Clone)]
pub(crate) struct Kernel {
    pub n_obs: usize,
    /// Column-major `n_obs x n_bias` cell probabilities.
    pub probs: Vec<f64>,
    /// Quantity estimated at each bias point.
    pub target: Vec<f64>,
    pub weight: Vec<f64>,
    pub offset: f64,
    pub groups: Vec<Vec<usize>>,
    /// Fixed background prior added to every evaluation, see `with_floor`.
    pub background: Option<Eval>,
}

#[derive(Debug, Clone)]
pub(crate) struct KernelSolution {
    /// Prior mass per bias point.
    pub mu: Vec<f64>,
    /// Posterior mean per observation cell; NaN where no prior mass reaches it.
    pub psi: Vec<f64>,
    pub iterations: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct Eval {
    d: Vec<f64>,
    /// Numerators `sum mu w p target`; only kept for the background prior.
    n: Vec<f64>,
    psi: Vec<f64>,
    value: f64,
}

const PRUNE: f64 = 1e-10;
const MULTIPLICATIVE_SWEEPS: usize = 150;
const NEWTON_STEPS: usize = 200;

impl Kernel {
    fn n_bias(&self) -> usize {
        self.target.len()
    }

    fn column(&self, l: usize) -> &[f64] {
        &self.probs[l * self.n_obs..(l + 1) * self.n_obs]
    }

    pub fn moments_by_point(&self, mu: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut d = vec![0.0; self.n_obs];
        let mut n = vec![0.0; self.n_obs];
        for (l, &m) in mu.iter().enumerate() {
            if m > 0.0 {
                self.accumulate(l, m, &mut d, &mut n);
            }
        }
        (d, n)
    }

    fn accumulate(&self, l: usize, mass: f64, d: &mut [f64], n: &mut [f64]) {
        let w = mass * self.weight[l];
        let th = self.target[l];
        for ((dk, nk), p) in d.iter_mut().zip(n.iter_mut()).zip(self.column(l)) {
            let a = w * p;
            *dk += a;
            *nk += a * th;
        }
    }

    /// Adds mass `floor` at every bias point underneath the optimized prior.
    /// Cells the optimized prior never reaches then get the flat-prior
    /// posterior mean instead of one set by underflowing tails.
    pub fn with_floor(mut self, floor: f64) -> Self {
        self.background = None;
        let ev = self.evaluate(&vec![floor; self.groups.len()], &(0..self.groups.len()).collect::<Vec<_>>());
        let linear = ev.value + ev.d.iter().zip(&ev.n).map(|(d, n)| if *d > 0.0 { n * n / d } else { 0.0 }).sum::<f64>();
        self.background = Some(Eval { value: linear, ..ev });
        self
    }

    /// Objective at atom masses `alpha`, restricted to `active` atoms.
    fn evaluate(&self, alpha: &[f64], active: &[usize]) -> Eval {
        let (mut d, mut n, mut linear) = match &self.background {
            Some(b) => (b.d.clone(), b.n.clone(), b.value),
            None => (vec![0.0; self.n_obs], vec![0.0; self.n_obs], 0.0),
        };
        for &i in active {
            let share = alpha[i] / self.groups[i].len() as f64;
            if share <= 0.0 {
                continue;
            }
            for &l in &self.groups[i] {
                self.accumulate(l, share, &mut d, &mut n);
                let th = self.target[l];
                linear += share * self.weight[l] * (th * th + self.offset);
            }
        }
        let mut quad = 0.0;
        let psi: Vec<f64> = d
            .iter()
            .zip(&n)
            .map(|(dk, nk)| {
                if *dk > 0.0 {
                    quad += nk * nk / dk;
                    nk / dk
                } else {
                    f64::NAN
                }
            })
            .collect();
        Eval {
            d,
            n,
            psi,
            value: linear - quad,
        }
    }

    /// `w_l (R_l(psi) + c)` for bias point `l`; empty cells contribute zero.
    fn point_gradient(&self, l: usize, psi: &[f64]) -> f64 {
        let th = self.target[l];
        let r: f64 = self
            .column(l)
            .iter()
            .zip(psi)
            .filter(|(_, s)| !s.is_nan())
            .map(|(p, s)| p * (s - th) * (s - th))
            .sum();
        self.weight[l] * (r + self.offset)
    }

    fn atom_gradient(&self, i: usize, psi: &[f64]) -> f64 {
        let g = &self.groups[i];
        g.iter().map(|&l| self.point_gradient(l, psi)).sum::<f64>() / g.len() as f64
    }

    fn all_gradients(&self, psi: &[f64]) -> Vec<f64> {
        (0..self.groups.len())
            .into_par_iter()
            .map(|i| self.atom_gradient(i, psi))
            .collect()
    }

    pub fn solve(&self, cfg: &SolverConfig) -> Result<KernelSolution> {
        let m = self.groups.len();
        let all: Vec<usize> = (0..m).collect();
        let mut alpha = vec![1.0 / m as f64; m];
        let tol = cfg.stationarity_tol;

        // Multiplicative sweeps locate the neighbourhood of the support.
        let mut ev = self.evaluate(&alpha, &all);
        for _ in 0..MULTIPLICATIVE_SWEEPS {
            let g = self.all_gradients(&ev.psi);
            let gmax = g.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if gmax - ev.value <= tol {
                break;
            }
            for (a, gi) in alpha.iter_mut().zip(&g) {
                *a *= gi / ev.value;
            }
            normalize(&mut alpha);
            ev = self.evaluate(&alpha, &all);
        }
        let top = alpha.iter().cloned().fold(0.0, f64::max);
        let mut active: Vec<usize> = (0..m).filter(|&i| alpha[i] >= 1e-3 * top).collect();
        for (i, a) in alpha.iter_mut().enumerate() {
            if !active.contains(&i) {
                *a = 0.0;
            }
        }
        normalize(&mut alpha);

        let mut iterations = 0;
        let mut last_value = f64::NEG_INFINITY;
        loop {
            iterations += 1;
            self.newton(&mut alpha, &mut active, cfg);
            ev = self.evaluate(&alpha, &active);
            let g = self.all_gradients(&ev.psi);
            let gap = g.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - ev.value;
            debug!(
                "exchange round {iterations}: value {:.12} gap {gap:.3e} support {}",
                ev.value,
                active.len()
            );
            let settled = (ev.value - last_value).abs() <= cfg.objective_tol * ev.value.abs().max(1e-300);
            if gap <= 0.1 * tol || (gap <= tol && settled) {
                break;
            }
            if iterations >= cfg.max_iter {
                if gap <= tol {
                    break;
                }
                return Err(Error::NoConvergence {
                    iterations,
                    value: ev.value,
                    gap,
                    best_prior: self.point_masses(&alpha),
                });
            }
            last_value = ev.value;
            for i in improving(&g, ev.value, 0.1 * tol, cfg.max_entering) {
                if let Err(pos) = active.binary_search(&i) {
                    active.insert(pos, i);
                }
                self.toward_atom(&mut alpha, &active, i);
            }
            active.retain(|&i| alpha[i] > 0.0);
        }

        // Under a background prior, tiny masses still shape the policy in
        // cells the support barely reaches.
        if self.background.is_none() {
            for a in alpha.iter_mut() {
                if *a < PRUNE {
                    *a = 0.0;
                }
            }
            normalize(&mut alpha);
        }
        active.retain(|&i| alpha[i] > 0.0);
        let ev = self.evaluate(&alpha, &active);
        Ok(KernelSolution {
            mu: self.point_masses(&alpha),
            psi: ev.psi,
            iterations,
        })
    }

    fn point_masses(&self, alpha: &[f64]) -> Vec<f64> {
        let mut mu = vec![0.0; self.n_bias()];
        for (i, g) in self.groups.iter().enumerate() {
            for &l in g {
                mu[l] = alpha[i] / g.len() as f64;
            }
        }
        mu
    }

    /// Golden-section line search along `(1 - s) alpha + s e_i`.
    fn toward_atom(&self, alpha: &mut [f64], active: &[usize], i: usize) {
        let at = |s: f64| {
            let mut trial: Vec<f64> = alpha.iter().map(|a| a * (1.0 - s)).collect();
            trial[i] += s;
            trial
        };
        let f = |s: f64| self.evaluate(&at(s), active).value;
        // The best step can be many orders of magnitude below one, so it is
        // bracketed on a log scale before the golden-section refinement.
        let mut best = (0.0, self.evaluate(alpha, active).value);
        let mut decade = None;
        for k in 0..=16 {
            let s = 10f64.powi(-k);
            let v = f(s);
            if v > best.1 {
                best = (s, v);
                decade = Some(k);
            }
        }
        let Some(k) = decade else {
            return;
        };
        let phi = 0.5 * (5f64.sqrt() - 1.0);
        let (mut lo, mut hi) = (10f64.powi(-k - 1), 10f64.powi(1 - k).min(1.0));
        let width = hi - lo;
        let mut x1 = hi - phi * (hi - lo);
        let mut x2 = lo + phi * (hi - lo);
        let (mut f1, mut f2) = (f(x1), f(x2));
        for _ in 0..80 {
            if f1 < f2 {
                lo = x1;
                x1 = x2;
                f1 = f2;
                x2 = lo + phi * (hi - lo);
                f2 = f(x2);
            } else {
                hi = x2;
                x2 = x1;
                f2 = f1;
                x1 = hi - phi * (hi - lo);
                f1 = f(x1);
            }
            if hi - lo < 1e-9 * width {
                break;
            }
        }
        let s = 0.5 * (lo + hi);
        let v = f(s);
        if v > best.1 {
            best = (s, v);
        }
        alpha.copy_from_slice(&at(best.0));
    }

    /// Active-set Newton ascent on the simplex face spanned by `active`.
    fn newton(&self, alpha: &mut [f64], active: &mut Vec<usize>, cfg: &SolverConfig) {
        for _ in 0..NEWTON_STEPS {
            let ev = self.evaluate(alpha, active);
            let grad: Vec<f64> = active.iter().map(|&i| self.atom_gradient(i, &ev.psi)).collect();
            let (gmin, gmax) = grad
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), g| (lo.min(*g), hi.max(*g)));
            let nonzero_spread = active
                .iter()
                .zip(&grad)
                .filter(|(i, _)| alpha[**i] > 0.0)
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (_, g)| (lo.min(*g), hi.max(*g)));
            if gmax - gmin <= 1e-3 * cfg.stationarity_tol
                || (nonzero_spread.1 - nonzero_spread.0 <= 1e-3 * cfg.stationarity_tol && gmax <= ev.value + 1e-3 * cfg.stationarity_tol)
            {
                break;
            }
            let Some(delta) = self.newton_direction(alpha, active, &grad, &ev) else {
                break;
            };
            let (active_now, grad_now, delta) = delta;
            *active = active_now;
            let slope: f64 = grad_now.iter().zip(&delta).map(|(g, d)| g * d).sum();
            if !(slope > 0.0) {
                break;
            }
            let mut s_max = f64::INFINITY;
            let mut blocking = None;
            for (pos, (&i, &dl)) in active.iter().zip(&delta).enumerate() {
                if dl < 0.0 {
                    let s = alpha[i] / -dl;
                    if s < s_max {
                        s_max = s;
                        blocking = Some(pos);
                    }
                }
            }
            let mut step = s_max.min(1.0);
            let mut trial = alpha.to_vec();
            let mut accepted = false;
            for _ in 0..40 {
                for (&i, &dl) in active.iter().zip(&delta) {
                    trial[i] = (alpha[i] + step * dl).max(0.0);
                }
                if step == s_max {
                    if let Some(pos) = blocking {
                        trial[active[pos]] = 0.0;
                    }
                }
                normalize(&mut trial);
                let v = self.evaluate(&trial, active).value;
                // Near the optimum the increase is below rounding in V.
                let noise = 8.0 * f64::EPSILON * ev.value.abs();
                if v >= ev.value + 1e-4 * step * slope || (step == s_max.min(1.0) && v >= ev.value - noise) {
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                break;
            }
            alpha.copy_from_slice(&trial);
            active.retain(|&i| alpha[i] > 0.0);
        }
    }

    /// Equality-constrained Newton direction on the active atoms. Atoms at
    /// zero mass whose direction would push them negative leave the set.
    fn newton_direction(
        &self,
        alpha: &[f64],
        active: &[usize],
        grad: &[f64],
        ev: &Eval,
    ) -> Option<(Vec<usize>, Vec<f64>, Vec<f64>)> {
        let mut act = active.to_vec();
        let mut g = grad.to_vec();
        loop {
            let s = act.len();
            if s == 0 {
                return None;
            }
            if s == 1 {
                return Some((act, g, vec![0.0]));
            }
            let mut u = DMatrix::<f64>::zeros(s, self.n_obs);
            for (row, &i) in act.iter().enumerate() {
                let share = 1.0 / self.groups[i].len() as f64;
                for &l in &self.groups[i] {
                    let w = share * self.weight[l];
                    let th = self.target[l];
                    for (k, p) in self.column(l).iter().enumerate() {
                        let (a, dk) = (w * p, ev.d[k]);
                        // `a sqrt(2 / d)` without overflow when `d` is subnormal.
                        if a > 0.0 && dk > 0.0 {
                            u[(row, k)] += (th - ev.psi[k]) * (2.0 * a * (a / dk)).sqrt();
                        }
                    }
                }
            }
            let h = &u * u.transpose();
            // Null-space form of the simplex constraint: the atom with the
            // largest mass absorbs the negative sum of the other moves.
            let piv = (0..s).max_by(|a, b| alpha[act[*a]].total_cmp(&alpha[act[*b]])).unwrap_or(0);
            let free: Vec<usize> = (0..s).filter(|&p| p != piv).collect();
            let f = free.len();
            let mut z = DMatrix::<f64>::zeros(f, f);
            let mut r = DVector::<f64>::zeros(f);
            for (a, &pa) in free.iter().enumerate() {
                r[a] = g[pa] - g[piv];
                for (b, &pb) in free.iter().enumerate() {
                    z[(a, b)] = h[(pa, pb)] - h[(pa, piv)] - h[(piv, pb)] + h[(piv, piv)];
                }
            }
            let trace: f64 = (0..f).map(|i| z[(i, i)]).sum::<f64>() / f as f64;
            let mut eps = 1e-10 * trace.max(1e-300);
            let y = loop {
                let mut zd = z.clone();
                for i in 0..f {
                    zd[(i, i)] += eps;
                }
                if let Some(c) = zd.cholesky() {
                    break c.solve(&r);
                }
                eps *= 100.0;
                if eps > 1e6 * trace.max(1e-300) {
                    return None;
                }
            };
            let mut delta = vec![0.0; s];
            for (a, &pa) in free.iter().enumerate() {
                delta[pa] = y[a];
                delta[piv] -= y[a];
            }
            let leaving: Vec<usize> = (0..s).filter(|&p| alpha[act[p]] <= 0.0 && delta[p] < 0.0).collect();
            if leaving.is_empty() {
                return Some((act, g, delta));
            }
            for &p in leaving.iter().rev() {
                act.remove(p);
                g.remove(p);
            }
        }
    }
}

/// Atoms whose gradient beats the value by more than `tol`, keeping only
/// local maxima along the atom order so each bump is taken once. Active
/// atoms qualify too: Newton can stall on badly scaled supports.
fn improving(g: &[f64], value: f64, tol: f64, limit: usize) -> Vec<usize> {
    let m = g.len();
    let mut cands: Vec<usize> = (0..m)
        .filter(|&i| g[i] > value + tol)
        .filter(|&i| (i == 0 || g[i] >= g[i - 1]) && (i + 1 == m || g[i] >= g[i + 1]))
        .collect();
    cands.sort_by(|a, b| g[*b].total_cmp(&g[*a]));
    cands.truncate(limit);
    cands
}

fn normalize(v: &mut [f64]) {
    let s: f64 = v.iter().sum();
    if s > 0.0 {
        for x in v.iter_mut() {
            *x /= s;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn range(lo: f64, hi: f64, step: f64) -> Vec<f64> {
        let n = ((hi - lo) / step).round() as i64;
        (0..=n).map(|i| lo + i as f64 * step).collect()
    }

    #[test]
    fn columns_sum_to_one() {
        let obs = range(-12.0, 12.0, 0.05);
        let tp = transition_probabilities(&[-9.0, 0.0, 3.0, 9.0], &obs);
        for l in 0..4 {
            let s: f64 = tp.column(l).iter().sum();
            assert!((s - 1.0).abs() < 1e-12, "column {l} sums to {s}");
            assert!(tp.column(l).iter().all(|p| (0.0..=1.0).contains(p)));
        }
        let col = tp.column(2);
        let arg = (0..obs.len()).max_by(|a, b| col[*a].total_cmp(&col[*b])).unwrap();
        assert!((obs[arg] - 3.0).abs() < 0.051);
        // direct evaluation of one interior cell
        let k = 300;
        let direct = normal::cdf(0.5 * (obs[k] + obs[k + 1]) - 3.0) - normal::cdf(0.5 * (obs[k] + obs[k - 1]) - 3.0);
        assert!((tp.get(k, 2) - direct).abs() < 1e-15);
    }

    #[test]
    fn single_cell_has_unit_mass() {
        let tp = transition_probabilities(&[-1.0, 0.0, 2.0], &[0.0]);
        for l in 0..3 {
            assert_eq!(tp.get(0, l), 1.0);
        }
    }

    #[test]
    fn symmetric_grid_gives_symmetric_column_at_zero() {
        let obs = range(-3.0, 3.0, 0.1);
        let tp = transition_probabilities(&[0.0], &obs);
        let n = obs.len();
        for k in 0..n {
            assert!((tp.get(k, 0) - tp.get(n - 1 - k, 0)).abs() < 1e-15);
        }
    }

    #[test]
    fn point_mass_priors_give_constant_policies() {
        let bias = range(-2.0, 2.0, 0.5);
        let dp = DiscreteProblem::unweighted(bias.clone(), range(-5.0, 5.0, 0.1)).unwrap();
        for b in [0.0, 1.5] {
            let prior = PriorWeights::point_mass(bias.clone(), b);
            let pol = posterior_policy(&dp, &prior).unwrap();
            assert!(pol.values().iter().all(|v| (v - b).abs() < 1e-14));
        }
    }

    #[test]
    fn two_point_prior_matches_tanh() {
        let m = 1.0;
        let bias = vec![-m, 0.0, m];
        let dp = DiscreteProblem::unweighted(bias.clone(), range(-6.0, 6.0, 0.01)).unwrap();
        let prior = PriorWeights::new(bias, vec![0.5, 0.0, 0.5]).unwrap();
        let pol = posterior_policy(&dp, &prior).unwrap();
        for (t, psi) in pol.grid().iter().zip(pol.values()) {
            if t.abs() < 5.0 {
                assert!((psi - m * (m * t).tanh()).abs() < 1e-4, "t={t}");
            }
        }
    }

    #[test]
    fn bayes_risk_reference_values() {
        let bias = range(-2.0, 2.0, 0.5);
        let obs = range(-8.0, 8.0, 0.01);
        let dp = DiscreteProblem::new(bias.clone(), obs.clone(), vec![2.0; bias.len()], 0.3).unwrap();
        let zero = PolicyTable::zero(obs.clone()).unwrap();
        let at0 = PriorWeights::point_mass(bias.clone(), 0.0);
        assert!((weighted_bayes_risk(&dp, &at0, &zero).unwrap() - 2.0 * 0.3).abs() < 1e-15);
        let at15 = PriorWeights::point_mass(bias.clone(), 1.5);
        assert!((weighted_bayes_risk(&dp, &at15, &zero).unwrap() - 2.0 * (2.25 + 0.3)).abs() < 1e-13);
        let id = PolicyTable::identity(obs).unwrap();
        // E T^2 on a fine grid: 1 + h^2/12 up to tail truncation
        let v = weighted_bayes_risk(&dp, &at0, &id).unwrap();
        assert!((v - 2.0 * (1.0 + 0.3)).abs() < 1e-4, "{v}");
    }

    #[test]
    fn degenerate_cell_is_reported() {
        let dp = DiscreteProblem::unweighted(vec![0.0, 1.0], vec![-100.0, 0.0, 100.0]).unwrap();
        let prior = PriorWeights::point_mass(vec![0.0, 1.0], 0.0);
        // Cells beyond +-50 carry probability below the smallest double.
        assert!(matches!(posterior_policy(&dp, &prior), Err(Error::DegenerateCell { .. })));
    }

    #[test]
    fn single_bias_point() {
        let dp = DiscreteProblem::new(vec![0.0], range(-4.0, 4.0, 0.1), vec![1.0], 0.7).unwrap();
        let sol = solve_least_favorable(&dp, &SolverConfig::default()).unwrap();
        assert_eq!(sol.prior.mu(), &[1.0]);
        assert!(sol.policy.values().iter().all(|v| *v == 0.0));
        assert!((sol.value - 0.7).abs() < 1e-15);
    }

    #[test]
    fn bounded_normal_mean_half() {
        let tau = 0.5;
        let dp = DiscreteProblem::unweighted(range(-tau, tau, 0.05), range(-tau - 3.0, tau + 3.0, 0.1)).unwrap();
        let sol = solve_least_favorable(&dp, &SolverConfig::default()).unwrap();
        assert!(sol.value > 0.16 && sol.value < 0.2, "{}", sol.value);
        // independent conic-program solve of the same discretization
        assert!((sol.value - 0.199_021_7).abs() < 1e-5, "{}", sol.value);
        assert!(sol.gap <= 1e-6);
        let mu = sol.prior.mu();
        let n = mu.len();
        for l in 0..n {
            assert!((mu[l] - mu[n - 1 - l]).abs() < 1e-12);
        }
        assert!(sol.policy.odd_asymmetry().unwrap() < 1e-12);
    }

    #[test]
    fn asymmetric_problem_certifies() {
        let bias = range(-1.0, 2.0, 0.1);
        let w: Vec<f64> = bias.iter().map(|b| 1.0 / (1.0 + 0.3 * b * b)).collect();
        let dp = DiscreteProblem::new(bias, range(-5.0, 6.0, 0.1), w, 0.2).unwrap();
        let sol = solve_least_favorable(&dp, &SolverConfig::default()).unwrap();
        assert!(sol.gap <= 1e-6);
        let v = weighted_bayes_risk(&dp, &sol.prior, &sol.policy).unwrap();
        assert!((v - sol.value).abs() < 1e-12);
        for ((m, g), _) in sol.prior.mu().iter().zip(&sol.weighted_risks).zip(0..) {
            if *m > 0.0 {
                assert!((g - sol.value).abs() < 1e-6);
            }
        }
    }
}
