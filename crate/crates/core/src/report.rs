//! Estimate tables, risk curves and regret sweeps as plain text or CSV.
//!
//! Values come from the lookup table when one is supplied and from direct
//! solves otherwise. Formatting is fixed so that output is byte-identical
//! for identical inputs.

use std::fmt::Write as _;

use log::warn;

use crate::adaptive::{self, rho2_max, scaled_risk};
use crate::bnm::{b_minimax_estimate, scaled_minimax_risk, BnmCurve, Bound};
use crate::error::{Error, Result};
use crate::lookup::LookupTable;
use crate::model::{assemble_from_delta, assemble_with, from_estimates, gmm_estimate, EstimatePair, Policy};
use crate::multivar::{composite_adapt, gmm_combine, j_test, solve_multivar_adaptive, MultiEstimates, MultiGrid};
use crate::thresholding::{
    constrained_soft_with, optimal_threshold_with, RestrictedPretest, ThresholdKind, PRETEST_LAMBDA,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Format {
    #[default]
    Text,
    Csv,
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text" => Ok(Format::Text),
            "csv" => Ok(Format::Csv),
            _ => Err(Error::InvalidInput(format!("unknown format '{s}' (expected text or csv)"))),
        }
    }
}

/// One method in an estimate table.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodRow {
    pub method: String,
    pub estimate: f64,
    /// Worst-case adaptation regret as a ratio; `None` where it does not apply.
    pub max_regret: Option<f64>,
    pub threshold: Option<f64>,
    /// The value was computed at the clamped `rho^2`.
    pub clamped: bool,
}

/// Inputs echoed into the report, in outcome units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InputEcho {
    pub y_u: f64,
    pub se_u: f64,
    pub y_r: f64,
    pub se_r: f64,
    pub y_o: f64,
    pub se_o: f64,
    pub t_o: f64,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateReport {
    pub label: Option<String>,
    pub inputs: InputEcho,
    pub rows: Vec<MethodRow>,
    pub clamped: bool,
    /// Standard error of `Y_U`, reported as an upper bound for the adaptive
    /// estimator's standard error. Absent when `rho` was clamped.
    pub conservative_se: Option<f64>,
}

impl EstimateReport {
    pub fn row(&self, method: &str) -> Option<&MethodRow> {
        self.rows.iter().find(|r| r.method == method)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct EstimateOptions<'a> {
    pub lookup: Option<&'a LookupTable>,
    /// Worst-case risk cap in multiples of `Sigma_U`; adds capped rows.
    pub risk_cap: Option<f64>,
    /// Bias bound in outcome units; adds a B-minimax row.
    pub bound: Option<Bound>,
}

/// Clamps `rho^2` to the solved range, with a warning.
fn clamp_rho2(rho2: f64) -> (f64, bool) {
    let max = rho2_max();
    if rho2 > max {
        warn!("RhoTooExtreme: rho^2 = {rho2} exceeds {max}; using {max}");
        (max, true)
    } else {
        (rho2, false)
    }
}

fn curve_for<'a>(opts: &EstimateOptions<'a>) -> &'a BnmCurve {
    match opts.lookup {
        Some(t) => t.curve(),
        None => BnmCurve::global(),
    }
}

/// Builds the estimate table for one pair of estimates.
pub fn estimate_report(pair: &EstimatePair, opts: &EstimateOptions) -> Result<EstimateReport> {
    let p = from_estimates(pair)?;
    let (rho2, clamped) = clamp_rho2(p.rho * p.rho);
    let curve = curve_for(opts);
    let inputs = InputEcho {
        y_u: p.y_u,
        se_u: p.sigma_u.sqrt(),
        y_r: p.y_r(),
        se_r: pair.sigma_r.sqrt(),
        y_o: p.y_o,
        se_o: p.sigma_o.sqrt(),
        t_o: p.t_o,
        rho: p.rho,
    };
    let row = |method: &str, estimate: f64, max_regret: Option<f64>, threshold: Option<f64>, uses_rho: bool| MethodRow {
        method: method.to_string(),
        estimate,
        max_regret,
        threshold,
        clamped: clamped && uses_rho,
    };

    let mut rows = vec![
        row("Y_U", p.y_u, Some(1.0 / (1.0 - p.rho * p.rho)), None, false),
        row("Y_R", p.y_r(), Some(f64::INFINITY), None, false),
        row("Y_O", p.y_o, None, None, false),
        row("GMM", gmm_estimate(&p), Some(f64::INFINITY), None, false),
    ];

    let (delta, a_star) = match opts.lookup {
        Some(table) => (
            table.query_policy(rho2, p.t_o).value,
            table.query_a_star(rho2).value,
        ),
        None => {
            let sol = adaptive::solve_adaptive_with(curve, rho2)?;
            (Policy::Table(sol.policy).apply(p.t_o), sol.a_star)
        }
    };
    rows.push(row("Adaptive", assemble_from_delta(&p, delta), Some(a_star), None, true));

    let (lambda, soft_regret) = match opts.lookup {
        Some(table) => (
            table.query_lambda(ThresholdKind::Soft, rho2).value,
            table.query_regret(ThresholdKind::Soft, rho2).value,
        ),
        None => {
            let s = optimal_threshold_with(curve, ThresholdKind::Soft, rho2)?;
            (s.lambda, s.regret)
        }
    };
    rows.push(row(
        "Soft-threshold",
        assemble_with(&p, &Policy::Soft(lambda)),
        Some(soft_regret),
        Some(lambda),
        true,
    ));

    let pretest = RestrictedPretest::new(&p, PRETEST_LAMBDA);
    let pre_est = if pretest.choose(p.t_o) { p.y_r() } else { p.y_u };
    rows.push(row(
        "Pre-test",
        pre_est,
        Some(pretest.worst_case_regret(curve)),
        Some(PRETEST_LAMBDA),
        false,
    ));

    if let Some(cap) = opts.risk_cap {
        let (sol, _) = adaptive::solve_constrained_with(curve, rho2, cap)?;
        let d = Policy::Table(sol.policy).apply(p.t_o);
        rows.push(row("Adaptive (capped)", assemble_from_delta(&p, d), Some(sol.a_star), None, true));
        let cs = constrained_soft_with(curve, rho2, cap)?;
        rows.push(row(
            "Soft-threshold (capped)",
            assemble_with(&p, &Policy::Soft(cs.lambda)),
            Some(cs.regret),
            Some(cs.lambda),
            true,
        ));
    }

    if let Some(bound) = opts.bound {
        let est = b_minimax_estimate(&p, bound)?;
        // A finite bound gives a rule whose risk grows without limit in |b|.
        let regret = if bound.is_infinite() { 1.0 / (1.0 - p.rho * p.rho) } else { f64::INFINITY };
        rows.push(row(&format!("B-minimax (B={bound})"), est, Some(regret), None, false));
    }

    Ok(EstimateReport {
        label: None,
        inputs,
        rows,
        clamped,
        conservative_se: (!clamped).then(|| p.sigma_u.sqrt()),
    })
}

/// `sig` significant digits; scientific notation outside `[1e-5, 1e7)`.
pub fn fmt_num(x: f64, sig: usize) -> String {
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x.is_nan() {
        return "nan".into();
    }
    if x == 0.0 {
        return "0".into();
    }
    let mag = x.abs().log10().floor() as i32;
    if (-5..7).contains(&mag) {
        let decimals = (sig as i32 - 1 - mag).max(0) as usize;
        format!("{x:.decimals$}")
    } else {
        format!("{x:.prec$e}", prec = sig.saturating_sub(1))
    }
}

/// `(regret - 1) * 100` with two significant digits, or `inf`.
pub fn fmt_regret_percent(regret: f64) -> String {
    if regret.is_infinite() {
        return "inf".into();
    }
    let pct = (regret - 1.0) * 100.0;
    if pct.abs() >= 10.0 {
        format!("{pct:.0}%")
    } else {
        format!("{}%", fmt_num(pct, 2))
    }
}

fn opt_regret(r: Option<f64>) -> String {
    r.map_or_else(|| "-".into(), fmt_regret_percent)
}

pub fn render_estimate(report: &EstimateReport, format: Format) -> String {
    match format {
        Format::Text => render_estimate_text(report),
        Format::Csv => {
            let mut out = String::from(CSV_ESTIMATE_HEADER);
            out.push('\n');
            push_estimate_csv(&mut out, report);
            out
        }
    }
}

pub const CSV_ESTIMATE_HEADER: &str =
    "label,y_u,se_u,y_r,se_r,y_o,se_o,t_o,rho,method,estimate,max_regret_pct,threshold,clamped";

pub fn push_estimate_csv(out: &mut String, report: &EstimateReport) {
    let i = &report.inputs;
    let label = report.label.as_deref().unwrap_or("");
    for r in &report.rows {
        let regret = match r.max_regret {
            Some(v) if v.is_infinite() => "inf".to_string(),
            Some(v) => format!("{:.6}", (v - 1.0) * 100.0),
            None => String::new(),
        };
        let threshold = r.threshold.map_or_else(String::new, |t| format!("{t:.6}"));
        let _ = writeln!(
            out,
            "{label},{},{},{},{},{},{},{},{},{},{},{regret},{threshold},{}",
            i.y_u, i.se_u, i.y_r, i.se_r, i.y_o, i.se_o, i.t_o, i.rho, r.method, r.estimate, r.clamped
        );
    }
}

fn render_estimate_text(report: &EstimateReport) -> String {
    let i = &report.inputs;
    let mut out = String::new();
    if let Some(l) = &report.label {
        let _ = writeln!(out, "[{l}]");
    }
    let _ = writeln!(
        out,
        "Y_U = {} (se {})  Y_R = {} (se {})",
        fmt_num(i.y_u, 4),
        fmt_num(i.se_u, 4),
        fmt_num(i.y_r, 4),
        fmt_num(i.se_r, 4)
    );
    let _ = writeln!(
        out,
        "Y_O = {} (se {})  t_O = {}  rho = {}",
        fmt_num(i.y_o, 4),
        fmt_num(i.se_o, 4),
        fmt_num(i.t_o, 4),
        fmt_num(i.rho, 4)
    );
    let _ = writeln!(out);
    let _ = writeln!(out, "{:<26}{:>14}{:>12}{:>11}", "method", "estimate", "max regret", "threshold");
    for r in &report.rows {
        let mark = if r.clamped { " *" } else { "" };
        let _ = writeln!(
            out,
            "{:<26}{:>14}{:>12}{:>11}{mark}",
            r.method,
            fmt_num(r.estimate, 4),
            opt_regret(r.max_regret),
            r.threshold.map_or_else(|| "-".into(), |t| format!("{t:.2}")),
        );
    }
    if report.clamped {
        let _ = writeln!(
            out,
            "\n* rho^2 clamped to {:.6}; rows marked use the clamped value",
            rho2_max()
        );
    }
    if let Some(se) = report.conservative_se {
        let _ = writeln!(
            out,
            "\nThe adaptive estimator's standard error is not consistently estimable; se(Y_U) = {} is a conservative bound.",
            fmt_num(se, 4)
        );
    }
    out
}

/// Methods available in a risk curve.
#[derive(Debug, Clone, PartialEq)]
pub enum CurveMethod {
    Unrestricted,
    Gmm,
    Adaptive,
    Soft,
    Hard,
    Pretest,
    CappedAdaptive(f64),
    CappedSoft(f64),
}

impl CurveMethod {
    pub fn name(&self) -> String {
        match self {
            CurveMethod::Unrestricted => "yu".into(),
            CurveMethod::Gmm => "gmm".into(),
            CurveMethod::Adaptive => "adaptive".into(),
            CurveMethod::Soft => "soft".into(),
            CurveMethod::Hard => "hard".into(),
            CurveMethod::Pretest => "pretest".into(),
            CurveMethod::CappedAdaptive(c) => format!("adaptive_cap{c}"),
            CurveMethod::CappedSoft(c) => format!("soft_cap{c}"),
        }
    }
}

impl std::str::FromStr for CurveMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let cap = |v: &str| {
            v.parse::<f64>()
                .map_err(|_| Error::InvalidInput(format!("bad risk cap in '{s}'")))
        };
        match s {
            "yu" => Ok(CurveMethod::Unrestricted),
            "gmm" => Ok(CurveMethod::Gmm),
            "adaptive" => Ok(CurveMethod::Adaptive),
            "soft" => Ok(CurveMethod::Soft),
            "hard" => Ok(CurveMethod::Hard),
            "pretest" => Ok(CurveMethod::Pretest),
            _ => {
                if let Some(v) = s.strip_prefix("adaptive:") {
                    Ok(CurveMethod::CappedAdaptive(cap(v)?))
                } else if let Some(v) = s.strip_prefix("soft:") {
                    Ok(CurveMethod::CappedSoft(cap(v)?))
                } else {
                    Err(Error::InvalidInput(format!(
                        "unknown method '{s}' (expected yu, gmm, adaptive, soft, hard, pretest, adaptive:CAP or soft:CAP)"
                    )))
                }
            }
        }
    }
}

/// Scaled risk (multiples of `Sigma_U`) of several methods over a bias grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskCurve {
    pub rho: f64,
    pub b_tilde: Vec<f64>,
    pub oracle: Vec<f64>,
    pub methods: Vec<(String, Vec<f64>)>,
}

impl RiskCurve {
    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.methods.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_slice())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("b_tilde,oracle");
        for (n, _) in &self.methods {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for (k, b) in self.b_tilde.iter().enumerate() {
            let _ = write!(out, "{b:.4},{:.8}", self.oracle[k]);
            for (_, col) in &self.methods {
                let _ = write!(out, ",{:.8}", col[k]);
            }
            out.push('\n');
        }
        out
    }
}

/// Non-negative bias grid `0, step, ..., bmax`.
pub fn curve_grid(bmax: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && bmax >= 0.0 && bmax.is_finite()) {
        return Err(Error::InvalidInput("bias grid needs bmax >= 0 and step > 0".into()));
    }
    let n = (bmax / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| i as f64 * step).collect())
}

/// Policy for a curve method at `rho2`.
pub fn method_policy(method: &CurveMethod, rho2: f64, curve: &BnmCurve, lookup: Option<&LookupTable>) -> Result<Policy> {
    Ok(match method {
        CurveMethod::Unrestricted => Policy::Identity,
        CurveMethod::Gmm => Policy::Zero,
        CurveMethod::Pretest => Policy::Hard(PRETEST_LAMBDA),
        CurveMethod::Adaptive => match lookup {
            Some(t) if t.rho2_grid().contains(&rho2) => {
                let e = t.entries().iter().find(|e| e.rho2 == rho2).expect("checked above");
                Policy::Table(e.policy.clone())
            }
            _ => Policy::Table(adaptive::solve_adaptive_with(curve, rho2)?.policy),
        },
        CurveMethod::Soft => {
            let l = match lookup {
                Some(t) => t.query_lambda(ThresholdKind::Soft, rho2).value,
                None => optimal_threshold_with(curve, ThresholdKind::Soft, rho2)?.lambda,
            };
            Policy::Soft(l)
        }
        CurveMethod::Hard => {
            let l = match lookup {
                Some(t) => t.query_lambda(ThresholdKind::Hard, rho2).value,
                None => optimal_threshold_with(curve, ThresholdKind::Hard, rho2)?.lambda,
            };
            Policy::Hard(l)
        }
        CurveMethod::CappedAdaptive(cap) => {
            Policy::Table(adaptive::solve_constrained_with(curve, rho2, *cap)?.0.policy)
        }
        CurveMethod::CappedSoft(cap) => Policy::Soft(constrained_soft_with(curve, rho2, *cap)?.lambda),
    })
}

pub fn risk_curve(
    rho: f64,
    methods: &[CurveMethod],
    grid: &[f64],
    lookup: Option<&LookupTable>,
) -> Result<RiskCurve> {
    if !(rho.abs() < 1.0) {
        return Err(Error::RhoOutOfRange { rho });
    }
    let (rho2, _) = clamp_rho2(rho * rho);
    let curve = match lookup {
        Some(t) => t.curve(),
        None => BnmCurve::global(),
    };
    let oracle = grid
        .iter()
        .map(|b| scaled_minimax_risk(curve, rho2, Bound::Finite(b.abs())))
        .collect();
    let mut cols = Vec::with_capacity(methods.len());
    for m in methods {
        let policy = method_policy(m, rho2, curve, lookup)?;
        let col = grid.iter().map(|b| scaled_risk(&policy, rho2, *b)).collect();
        cols.push((m.name(), col));
    }
    Ok(RiskCurve {
        rho,
        b_tilde: grid.to_vec(),
        oracle,
        methods: cols,
    })
}

/// Regrets, thresholds and the soft rule's risk range at one `rho^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub rho2: f64,
    pub a_star: f64,
    pub lambda_soft: f64,
    pub regret_soft: f64,
    pub lambda_hard: f64,
    pub regret_hard: f64,
    /// Smallest and largest scaled risk of the soft rule over all biases.
    pub soft_min_risk: f64,
    pub soft_max_risk: f64,
}

impl SweepRow {
    /// Best-case risk decrease at least as large as the worst-case increase.
    pub fn break_even(&self) -> bool {
        1.0 - self.soft_min_risk >= self.soft_max_risk - 1.0
    }
}

/// Smallest and largest scaled risk of a policy on the adaptive bias grid
/// and in the limit of infinite bias.
pub fn risk_range(policy: &Policy, rho2: f64) -> (f64, f64) {
    let limit = scaled_risk(&Policy::Identity, rho2, 0.0) + rho2 * (policy.limit_risk() - 1.0);
    adaptive::bias_grid()
        .iter()
        .map(|b| scaled_risk(policy, rho2, *b))
        .chain(std::iter::once(limit))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r), hi.max(r)))
}

pub fn sweep_row(rho2: f64, curve: &BnmCurve, lookup: Option<&LookupTable>) -> Result<SweepRow> {
    let (rho2, _) = clamp_rho2(rho2);
    let (a_star, soft, hard) = match lookup {
        Some(t) => (
            t.query_a_star(rho2).value,
            (
                t.query_lambda(ThresholdKind::Soft, rho2).value,
                t.query_regret(ThresholdKind::Soft, rho2).value,
            ),
            (
                t.query_lambda(ThresholdKind::Hard, rho2).value,
                t.query_regret(ThresholdKind::Hard, rho2).value,
            ),
        ),
        None => {
            let a = adaptive::solve_adaptive_with(curve, rho2)?.a_star;
            let s = optimal_threshold_with(curve, ThresholdKind::Soft, rho2)?;
            let h = optimal_threshold_with(curve, ThresholdKind::Hard, rho2)?;
            (a, (s.lambda, s.regret), (h.lambda, h.regret))
        }
    };
    let (lo, hi) = risk_range(&Policy::Soft(soft.0), rho2);
    Ok(SweepRow {
        rho2,
        a_star,
        lambda_soft: soft.0,
        regret_soft: soft.1,
        lambda_hard: hard.0,
        regret_hard: hard.1,
        soft_min_risk: lo,
        soft_max_risk: hi,
    })
}

pub fn sweep(rho2_grid: &[f64], lookup: Option<&LookupTable>) -> Result<Vec<SweepRow>> {
    if let Some(r) = rho2_grid.iter().find(|r| !(0.0..1.0).contains(*r)) {
        return Err(Error::InvalidInput(format!("rho^2 = {r} is outside [0, 1)")));
    }
    let curve = match lookup {
        Some(t) => t.curve(),
        None => BnmCurve::global(),
    };
    rho2_grid.iter().map(|r| sweep_row(*r, curve, lookup)).collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(
        "rho2,a_star,lambda_soft,regret_soft,lambda_hard,regret_hard,soft_min_risk,soft_max_risk,break_even\n",
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{}",
            r.rho2,
            r.a_star,
            r.lambda_soft,
            r.regret_soft,
            r.lambda_hard,
            r.regret_hard,
            r.soft_min_risk,
            r.soft_max_risk,
            r.break_even()
        );
    }
    out
}

/// Human-readable summary of a lookup table.
pub fn inspect_lookup(table: &LookupTable) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "lookup table: {} entries, t grid [{}, {}] with {} points",
        table.entries().len(),
        table.t_grid()[0],
        table.t_grid()[table.t_grid().len() - 1],
        table.t_grid().len()
    );
    let _ = writeln!(
        out,
        "{:>4}{:>10}{:>10}{:>12}{:>10}{:>12}{:>10}{:>12}",
        "k", "rho", "rho^2", "A*-1", "lambda_S", "regret_S", "lambda_H", "regret_H"
    );
    for (k, e) in table.entries().iter().enumerate() {
        let _ = writeln!(
            out,
            "{k:>4}{:>10.4}{:>10.4}{:>12}{:>10.3}{:>12}{:>10.3}{:>12}",
            e.rho,
            e.rho2,
            fmt_regret_percent(e.a_star),
            e.lambda_soft,
            fmt_regret_percent(e.regret_soft),
            e.lambda_hard,
            fmt_regret_percent(e.regret_hard)
        );
    }
    out
}

/// Input document for a multivariate run.
#[derive(Debug, Clone, PartialEq, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultivarInput {
    pub y_u: f64,
    /// Restricted estimates, ordered so the first is believed more biased.
    pub y_r: Vec<f64>,
    /// Covariance of `(Y_U, Y_R1, ..., Y_Rp)`, row by row.
    pub sigma: Vec<Vec<f64>>,
    /// Explicit confirmation of the ordering of the restricted estimates.
    pub ordering_confirmed: bool,
    #[serde(default)]
    pub bias_step: Option<f64>,
    #[serde(default)]
    pub bias_half: Option<f64>,
}

impl MultivarInput {
    pub fn parse(text: &str) -> Result<Self> {
        let input: Self = toml::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        if !input.ordering_confirmed {
            return Err(Error::InvalidInput(
                "ordering_confirmed must be true: the first restricted estimate is the one allowed to be biased in every scenario".into(),
            ));
        }
        Ok(input)
    }

    pub fn estimates(&self) -> Result<MultiEstimates> {
        let n = self.y_r.len() + 1;
        if self.sigma.len() != n || self.sigma.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidInput(format!("sigma must be {n} x {n}")));
        }
        let flat: Vec<f64> = self.sigma.iter().flatten().copied().collect();
        let cov = nalgebra::DMatrix::from_row_slice(n, n, &flat);
        MultiEstimates::from_restricted(self.y_u, &self.y_r, cov)
    }

    pub fn grid(&self) -> MultiGrid {
        let mut g = MultiGrid::default();
        if let Some(s) = self.bias_step {
            g.bias_step = s;
        }
        if let Some(h) = self.bias_half {
            g.bias_half = h;
        }
        g
    }
}

/// Runs the nested adaptation and the composite comparison.
pub fn multivar_report(input: &MultivarInput) -> Result<String> {
    let me = input.estimates()?;
    let grid = input.grid();
    let all: Vec<usize> = (0..me.p()).collect();
    let (gmm, gmm_var) = gmm_combine(&me, &all)?;
    let (j, j_p) = j_test(&me, &all)?;
    let sol = solve_multivar_adaptive(&me, &grid)?;
    let comp = composite_adapt(&me, &grid)?;
    let mut out = String::new();
    let _ = writeln!(out, "Y_U = {}  (se {})", fmt_num(me.y_u, 4), fmt_num(me.sigma_u().sqrt(), 4));
    for (j, y) in input.y_r.iter().enumerate() {
        let _ = writeln!(out, "Y_R{} = {}", j + 1, fmt_num(*y, 4));
    }
    let _ = writeln!(out, "GMM (all restrictions) = {}  (se {})", fmt_num(gmm, 4), fmt_num(gmm_var.sqrt(), 4));
    let _ = writeln!(out, "J = {}  p-value = {}", fmt_num(j, 4), fmt_num(j_p, 4));
    let _ = writeln!(out);
    let _ = writeln!(out, "{:<10}{:>14}{:>12}", "scenario", "oracle risk", "max regret");
    for (k, (lvl, reg)) in sol.scaling.levels.iter().zip(&sol.scenario_regrets).enumerate() {
        let _ = writeln!(out, "{:<10}{:>14}{:>12}", scenario_name(k, me.p()), fmt_num(*lvl, 4), fmt_regret_percent(*reg));
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "{:<26}{:>14}{:>12}", "method", "estimate", "max regret");
    let _ = writeln!(
        out,
        "{:<26}{:>14}{:>12}",
        "Nested adaptive",
        fmt_num(sol.estimate(&me)?, 4),
        fmt_regret_percent(sol.max_regret())
    );
    let _ = writeln!(
        out,
        "{:<26}{:>14}{:>12}",
        "Composite adaptive",
        fmt_num(comp.estimate, 4),
        fmt_regret_percent(comp.nested_regret)
    );
    let _ = writeln!(
        out,
        "\nComposite weights {:?}; regret {} against its own oracle.",
        comp.weights.iter().map(|w| fmt_num(*w, 4)).collect::<Vec<_>>(),
        fmt_regret_percent(comp.regret)
    );
    Ok(out)
}

fn scenario_name(k: usize, p: usize) -> String {
    let parts: Vec<&str> = (0..p).map(|j| if j < k { "inf" } else { "0" }).collect();
    format!("({})", parts.join(","))
}
