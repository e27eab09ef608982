//! Precomputed adaptive policies and optimal thresholds over an unequally
//! spaced `rho^2` grid, with a text file format and interpolated queries.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::adaptive::{self, rho2_max};
use crate::bnm::BnmCurve;
use crate::error::{Error, Result};
use crate::interp::{MonotoneCubic, NaturalSpline};
use crate::model::PolicyTable;
use crate::thresholding::{optimal_threshold_with, ThresholdKind};

pub const FORMAT_VERSION: u32 = 1;
pub const ENTRIES: usize = 61;
pub const RHO_STEP: f64 = 0.05;
/// Environment variable consulted when no lookup path is given explicitly.
pub const ENV_VAR: &str = "MISADAPT_LOOKUP";

const HEADER: &str = "#misadapt-lookup";

/// `tanh(0.05 k)` for `k = 0..=60`.
pub fn rho_grid() -> Vec<f64> {
    (0..ENTRIES).map(|k| (RHO_STEP * k as f64).tanh()).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LookupEntry {
    pub rho: f64,
    pub rho2: f64,
    pub policy: PolicyTable,
    pub a_star: f64,
    pub lambda_soft: f64,
    pub regret_soft: f64,
    pub lambda_hard: f64,
    pub regret_hard: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LookupTable {
    t_grid: Vec<f64>,
    entries: Vec<LookupEntry>,
    curve: BnmCurve,
}

/// Interpolated value and whether `rho^2` had to be clamped to the grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Query {
    pub value: f64,
    pub clamped: bool,
}

fn build_entry(curve: &BnmCurve, rho: f64) -> Result<LookupEntry> {
    let rho2 = (rho * rho).min(rho2_max());
    let sol = adaptive::solve_adaptive_with(curve, rho2)?;
    let soft = optimal_threshold_with(curve, ThresholdKind::Soft, rho2)?;
    let hard = optimal_threshold_with(curve, ThresholdKind::Hard, rho2)?;
    info!("lookup entry rho2={rho2:.6}: a_star {:.4} soft {:.4} hard {:.4}", sol.a_star, soft.lambda, hard.lambda);
    Ok(LookupEntry {
        rho,
        rho2,
        policy: sol.policy,
        a_star: sol.a_star,
        lambda_soft: soft.lambda,
        regret_soft: soft.regret,
        lambda_hard: hard.lambda,
        regret_hard: hard.regret,
    })
}

/// Solves every grid entry. Entries are solved in parallel and assembled in
/// grid order, so the result does not depend on scheduling.
pub fn build_table(curve: &BnmCurve) -> Result<LookupTable> {
    let entries = rho_grid()
        .par_iter()
        .map(|&rho| build_entry(curve, rho))
        .collect::<Result<Vec<_>>>()?;
    LookupTable::from_parts(adaptive::obs_grid(), entries, curve.clone())
}

impl LookupTable {
    pub fn from_parts(t_grid: Vec<f64>, entries: Vec<LookupEntry>, curve: BnmCurve) -> Result<Self> {
        if entries.len() < 2 {
            return Err(Error::Format("lookup table needs at least two entries".into()));
        }
        if entries.windows(2).any(|w| !(w[1].rho2 > w[0].rho2)) {
            return Err(Error::Format("rho^2 grid must be strictly increasing".into()));
        }
        if entries.iter().any(|e| e.policy.grid() != t_grid.as_slice()) {
            return Err(Error::Format("every policy must live on the shared t grid".into()));
        }
        Ok(Self { t_grid, entries, curve })
    }

    pub fn entries(&self) -> &[LookupEntry] {
        &self.entries
    }

    pub fn t_grid(&self) -> &[f64] {
        &self.t_grid
    }

    pub fn curve(&self) -> &BnmCurve {
        &self.curve
    }

    pub fn rho2_grid(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.rho2).collect()
    }

    fn clamp_rho2(&self, rho2: f64) -> (f64, bool) {
        let lo = self.entries[0].rho2;
        let hi = self.entries[self.entries.len() - 1].rho2;
        if rho2 > hi {
            warn!("rho^2 = {rho2} above the lookup grid; using the boundary entry {hi}");
            (hi, true)
        } else if rho2 < lo {
            (lo, true)
        } else {
            (rho2, false)
        }
    }

    /// Entries used for interpolation. The `rho = 0` entry is the identity
    /// by definition, which is not the limit of the adaptive policies as
    /// `rho -> 0`; it is only returned for an exact `rho^2 = 0` query and is
    /// left out of the splines so it does not distort nearby queries.
    fn spline_entries(&self) -> &[LookupEntry] {
        match self.entries.first() {
            Some(e) if e.rho2 == 0.0 && self.entries.len() > 2 => &self.entries[1..],
            _ => &self.entries,
        }
    }

    /// Tensor-product natural cubic spline in `(rho^2, t)`: each entry's
    /// policy spline is evaluated at `t`, then splined across `rho^2`.
    /// Beyond the t grid the policy is the identity. Values are clamped to
    /// the shrinkage bound `psi(t) / t` in `[0, 1]`.
    pub fn query_policy(&self, rho2: f64, t: f64) -> Query {
        let (r, clamped) = self.clamp_rho2(rho2);
        let (lo, hi) = (self.t_grid[0], self.t_grid[self.t_grid.len() - 1]);
        if t < lo || t > hi {
            return Query { value: t, clamped };
        }
        if r == self.entries[0].rho2 {
            return Query {
                value: self.entries[0].policy.interpolant().eval(t),
                clamped,
            };
        }
        let entries = self.spline_entries();
        let knots: Vec<f64> = entries.iter().map(|e| e.rho2).collect();
        let column: Vec<f64> = entries.iter().map(|e| e.policy.interpolant().eval(t)).collect();
        let v = NaturalSpline::new(knots, column)
            .expect("rho^2 grid validated at construction")
            .eval(r.max(entries[0].rho2));
        let value = if t >= 0.0 { v.clamp(0.0, t) } else { v.clamp(t, 0.0) };
        Query { value, clamped }
    }

    /// Monotone cubic across entries. Thresholds jump at `rho = 0` (any rule
    /// is optimal there), so they skip the identity entry like the policies.
    fn monotone_query(&self, rho2: f64, skip_identity: bool, field: impl Fn(&LookupEntry) -> f64) -> Query {
        let (r, clamped) = self.clamp_rho2(rho2);
        let entries = if skip_identity && r != self.entries[0].rho2 {
            self.spline_entries()
        } else {
            &self.entries
        };
        let knots = entries.iter().map(|e| e.rho2).collect();
        let values = entries.iter().map(field).collect();
        let value = MonotoneCubic::new(knots, values)
            .expect("rho^2 grid validated at construction")
            .eval(r.max(entries[0].rho2));
        Query { value, clamped }
    }

    /// Optimal threshold, interpolated across `rho^2` with a monotone cubic.
    pub fn query_lambda(&self, kind: ThresholdKind, rho2: f64) -> Query {
        match kind {
            ThresholdKind::Soft => self.monotone_query(rho2, true, |e| e.lambda_soft),
            ThresholdKind::Hard => self.monotone_query(rho2, true, |e| e.lambda_hard),
        }
    }

    pub fn query_a_star(&self, rho2: f64) -> Query {
        self.monotone_query(rho2, false, |e| e.a_star)
    }

    pub fn query_regret(&self, kind: ThresholdKind, rho2: f64) -> Query {
        match kind {
            ThresholdKind::Soft => self.monotone_query(rho2, false, |e| e.regret_soft),
            ThresholdKind::Hard => self.monotone_query(rho2, false, |e| e.regret_hard),
        }
    }

    /// Canonical text serialization without the checksum line. Floats use
    /// the shortest representation that parses back to the same bits.
    fn body(&self) -> String {
        let mut s = String::new();
        let join = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",");
        writeln!(s, "{HEADER} v{FORMAT_VERSION}").unwrap();
        writeln!(s, "#t_grid,{}", self.t_grid.len()).unwrap();
        writeln!(s, "#bnm_knots,{}", self.curve.tau_grid().len()).unwrap();
        writeln!(s, "#entries,{}", self.entries.len()).unwrap();
        writeln!(s, "t,{}", join(&self.t_grid)).unwrap();
        writeln!(s, "bnm_tau,{}", join(self.curve.tau_grid())).unwrap();
        writeln!(s, "bnm_risk,{}", join(self.curve.risks())).unwrap();
        writeln!(s, "#k,rho,rho2,a_star,lambda_soft,regret_soft,lambda_hard,regret_hard,psi...").unwrap();
        for (k, e) in self.entries.iter().enumerate() {
            writeln!(
                s,
                "{k},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{}",
                e.rho,
                e.rho2,
                e.a_star,
                e.lambda_soft,
                e.regret_soft,
                e.lambda_hard,
                e.regret_hard,
                join(e.policy.values())
            )
            .unwrap();
        }
        s
    }

    pub fn to_text(&self) -> String {
        let body = self.body();
        format!("{body}checksum,{:016x}\n", checksum(&body))
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let first = text.lines().next().unwrap_or("");
        let version = first
            .strip_prefix(HEADER)
            .and_then(|r| r.trim().strip_prefix('v'))
            .and_then(|v| v.parse::<u32>().ok())
            .ok_or_else(|| Error::Format(format!("missing {HEADER} header")))?;
        if version != FORMAT_VERSION {
            return Err(Error::FormatVersionMismatch {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let (body, stored) = match text.rfind("checksum,") {
            Some(i) if i == 0 || text.as_bytes()[i - 1] == b'\n' => {
                let hex = text[i + "checksum,".len()..].trim();
                (&text[..i], u64::from_str_radix(hex, 16).ok())
            }
            _ => (text, None),
        };
        let computed = checksum(body);
        match stored {
            Some(v) if v == computed => {}
            other => {
                return Err(Error::ChecksumMismatch {
                    stored: other.unwrap_or(0),
                    computed,
                })
            }
        }
        parse_body(body)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_text(&text)
    }
}

/// First eight bytes of the SHA-256 digest, big-endian.
pub fn checksum(body: &str) -> u64 {
    let digest = Sha256::digest(body.as_bytes());
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_be_bytes(bytes)
}

fn parse_floats(fields: &[&str]) -> Result<Vec<f64>> {
    fields
        .iter()
        .map(|f| f.trim().parse::<f64>().map_err(|_| Error::Format(format!("bad number {f:?}"))))
        .collect()
}

fn parse_body(body: &str) -> Result<LookupTable> {
    let mut t_grid = None;
    let mut tau = None;
    let mut risk = None;
    let mut rows = Vec::new();
    for line in body.lines().skip(1) {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        match fields[0] {
            "t" => t_grid = Some(parse_floats(&fields[1..])?),
            "bnm_tau" => tau = Some(parse_floats(&fields[1..])?),
            "bnm_risk" => risk = Some(parse_floats(&fields[1..])?),
            _ => rows.push(fields),
        }
    }
    let missing = |what: &str| Error::Format(format!("missing {what} record"));
    let t_grid = t_grid.ok_or_else(|| missing("t"))?;
    let curve = BnmCurve::from_parts(tau.ok_or_else(|| missing("bnm_tau"))?, risk.ok_or_else(|| missing("bnm_risk"))?)?;
    let mut entries = Vec::with_capacity(rows.len());
    for (k, fields) in rows.iter().enumerate() {
        if fields.len() != 8 + t_grid.len() {
            return Err(Error::Format(format!("entry {k} has {} fields", fields.len())));
        }
        if fields[0].trim().parse::<usize>().ok() != Some(k) {
            return Err(Error::Format(format!("entry {k} out of order")));
        }
        let v = parse_floats(&fields[1..8])?;
        let psi = parse_floats(&fields[8..])?;
        entries.push(LookupEntry {
            rho: v[0],
            rho2: v[1],
            a_star: v[2],
            lambda_soft: v[3],
            regret_soft: v[4],
            lambda_hard: v[5],
            regret_hard: v[6],
            policy: PolicyTable::new(t_grid.clone(), psi)?,
        });
    }
    LookupTable::from_parts(t_grid, entries, curve)
}

/// Lookup path from an explicit flag, else the environment variable.
pub fn resolve_path(explicit: Option<&Path>) -> Option<PathBuf> {
    explicit
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os(ENV_VAR).filter(|v| !v.is_empty()).map(PathBuf::from))
}
