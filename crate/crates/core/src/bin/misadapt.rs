use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use misadapt::bnm::{BnmCurve, Bound};
use misadapt::error::{Error, Result};
use misadapt::lookup::{self, build_table, LookupTable};
use misadapt::model::{Covariance, EstimatePair};
use misadapt::report::{
    curve_grid, estimate_report, inspect_lookup, multivar_report, push_estimate_csv, render_estimate, risk_curve,
    sweep, sweep_csv, CurveMethod, EstimateOptions, Format, MultivarInput, CSV_ESTIMATE_HEADER,
};

#[derive(Parser)]
#[command(name = "misadapt", version, about = "Adaptive shrinkage toward a possibly biased restricted estimate")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate table for one pair of estimates, or one per line of a CSV file.
    Estimate(EstimateArgs),
    /// Scaled risk functions over a grid of normalized biases, as CSV.
    RiskCurve(RiskCurveArgs),
    /// Thresholds, regrets and relative risks across rho^2, as CSV.
    Sweep(SweepArgs),
    /// Build or inspect a precomputed lookup table.
    Lookup {
        #[command(subcommand)]
        action: LookupAction,
    },
    /// Nested adaptation with two restricted estimates, from a TOML file.
    Multivar {
        file: PathBuf,
    },
}

#[derive(Args)]
struct EstimateArgs {
    /// Unrestricted estimate Y_U.
    #[arg(long, allow_negative_numbers = true)]
    yu: Option<f64>,
    /// Standard error of Y_U.
    #[arg(long)]
    se_u: Option<f64>,
    /// Restricted estimate Y_R.
    #[arg(long, allow_negative_numbers = true)]
    yr: Option<f64>,
    /// Standard error of Y_R.
    #[arg(long)]
    se_r: Option<f64>,
    /// Covariance of Y_U and Y_R.
    #[arg(long, allow_negative_numbers = true, group = "cov")]
    cov_ur: Option<f64>,
    /// Correlation of Y_U and Y_O = Y_R - Y_U.
    #[arg(long, allow_negative_numbers = true, group = "cov")]
    rho_uo: Option<f64>,
    /// Y_R is efficient under the restriction, so cov(Y_U, Y_R) = var(Y_R).
    #[arg(long, group = "cov")]
    assume_efficient: bool,
    /// CSV file with header y_u,se_u,y_r,se_r and optional label, cov_ur, rho_uo columns.
    #[arg(long, conflicts_with_all = ["yu", "se_u", "yr", "se_r"])]
    input: Option<PathBuf>,
    /// Worst-case risk cap in multiples of var(Y_U); adds capped rows.
    #[arg(long)]
    risk_cap: Option<f64>,
    /// Bias bound in outcome units; adds a B-minimax row.
    #[arg(long)]
    bound: Option<String>,
    #[arg(long)]
    lookup: Option<PathBuf>,
    #[arg(long, default_value = "text")]
    format: String,
}

#[derive(Args)]
struct RiskCurveArgs {
    /// Correlation of Y_U and Y_O.
    #[arg(long, allow_negative_numbers = true)]
    rho: f64,
    /// Comma-separated methods: yu, gmm, adaptive, soft, hard, pretest, adaptive:CAP, soft:CAP.
    #[arg(long, default_value = "yu,gmm,adaptive,soft,pretest")]
    methods: String,
    #[arg(long, default_value_t = 9.0)]
    bmax: f64,
    #[arg(long, default_value_t = 0.05)]
    bstep: f64,
    #[arg(long)]
    lookup: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, default_value_t = 0.05)]
    rho2_min: f64,
    #[arg(long, default_value_t = 0.95)]
    rho2_max: f64,
    #[arg(long, default_value_t = 0.05)]
    rho2_step: f64,
    /// Explicit comma-separated rho^2 values; overrides the range flags.
    #[arg(long)]
    rho2: Option<String>,
    #[arg(long)]
    lookup: Option<PathBuf>,
}

#[derive(Subcommand)]
enum LookupAction {
    /// Solve every node and write the table.
    Build {
        #[arg(long)]
        output: PathBuf,
    },
    /// Print the scalar columns of a table.
    Inspect {
        /// Table to read; defaults to the MISADAPT_LOOKUP path.
        path: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Estimate(a) => cmd_estimate(&a),
        Command::RiskCurve(a) => cmd_risk_curve(&a),
        Command::Sweep(a) => cmd_sweep(&a),
        Command::Lookup { action } => cmd_lookup(action),
        Command::Multivar { file } => read(&file).and_then(|t| MultivarInput::parse(&t)).and_then(|i| multivar_report(&i)),
    };
    match result {
        Ok(out) => {
            let mut stdout = std::io::stdout().lock();
            if stdout.write_all(out.as_bytes()).is_err() {
                return ExitCode::from(4);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error[{}]: {e}", e.name());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

fn load_lookup(flag: Option<&Path>) -> Result<Option<LookupTable>> {
    lookup::resolve_path(flag).map(|p| LookupTable::load(&p)).transpose()
}

fn usage(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}

fn covariance_from_flags(a: &EstimateArgs) -> Option<Covariance> {
    if let Some(c) = a.cov_ur {
        Some(Covariance::Explicit(c))
    } else if let Some(r) = a.rho_uo {
        Some(Covariance::CorrelationUo(r))
    } else if a.assume_efficient {
        Some(Covariance::EfficientRestricted)
    } else {
        None
    }
}

fn cmd_estimate(a: &EstimateArgs) -> Result<String> {
    let format: Format = a.format.parse()?;
    let bound = a.bound.as_deref().map(str::parse::<Bound>).transpose()?;
    let table = load_lookup(a.lookup.as_deref())?;
    let opts = EstimateOptions { lookup: table.as_ref(), risk_cap: a.risk_cap, bound };
    let default_cov = covariance_from_flags(a);

    let pairs: Vec<(Option<String>, EstimatePair)> = match &a.input {
        Some(path) => read_batch(path, default_cov)?,
        None => {
            let need = |v: Option<f64>, name: &str| v.ok_or_else(|| usage(format!("--{name} is required")));
            let cov = default_cov
                .ok_or_else(|| usage("exactly one of --cov-ur, --rho-uo, --assume-efficient is required"))?;
            let pair = EstimatePair::from_standard_errors(
                need(a.yu, "yu")?,
                need(a.se_u, "se-u")?,
                need(a.yr, "yr")?,
                need(a.se_r, "se-r")?,
                cov,
            );
            vec![(None, pair)]
        }
    };

    let mut out = String::new();
    if format == Format::Csv {
        out.push_str(CSV_ESTIMATE_HEADER);
        out.push('\n');
    }
    for (i, (label, pair)) in pairs.iter().enumerate() {
        let mut report = estimate_report(pair, &opts)?;
        report.label = label.clone();
        match format {
            Format::Csv => push_estimate_csv(&mut out, &report),
            Format::Text => {
                if i > 0 {
                    out.push('\n');
                }
                out.push_str(&render_estimate(&report, Format::Text));
            }
        }
    }
    Ok(out)
}

#[derive(serde::Deserialize)]
struct BatchRow {
    #[serde(default)]
    label: Option<String>,
    y_u: f64,
    se_u: f64,
    y_r: f64,
    se_r: f64,
    #[serde(default)]
    cov_ur: Option<f64>,
    #[serde(default)]
    rho_uo: Option<f64>,
}

fn read_batch(path: &Path, default_cov: Option<Covariance>) -> Result<Vec<(Option<String>, EstimatePair)>> {
    let text = read(path)?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut pairs = Vec::new();
    for (i, rec) in reader.deserialize::<BatchRow>().enumerate() {
        let row = rec.map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        let cov = match (row.cov_ur, row.rho_uo) {
            (Some(_), Some(_)) => {
                return Err(usage(format!("row {}: give cov_ur or rho_uo, not both", i + 1)));
            }
            (Some(c), None) => Covariance::Explicit(c),
            (None, Some(r)) => Covariance::CorrelationUo(r),
            (None, None) => default_cov.ok_or_else(|| {
                usage(format!("row {}: no covariance column and no covariance flag", i + 1))
            })?,
        };
        let pair = EstimatePair::from_standard_errors(row.y_u, row.se_u, row.y_r, row.se_r, cov);
        pairs.push((row.label.filter(|l| !l.is_empty()), pair));
    }
    if pairs.is_empty() {
        return Err(Error::Format(format!("{}: no rows", path.display())));
    }
    Ok(pairs)
}

fn cmd_risk_curve(a: &RiskCurveArgs) -> Result<String> {
    let methods = a
        .methods
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::parse::<CurveMethod>)
        .collect::<Result<Vec<_>>>()?;
    if methods.is_empty() {
        return Err(usage("--methods is empty"));
    }
    let grid = curve_grid(a.bmax, a.bstep)?;
    let table = load_lookup(a.lookup.as_deref())?;
    Ok(risk_curve(a.rho, &methods, &grid, table.as_ref())?.to_csv())
}

fn cmd_sweep(a: &SweepArgs) -> Result<String> {
    let grid: Vec<f64> = match &a.rho2 {
        Some(list) => list
            .split(',')
            .map(|s| s.trim().parse::<f64>().map_err(|_| usage(format!("cannot parse rho^2 value {s:?}"))))
            .collect::<Result<_>>()?,
        None => {
            if !(a.rho2_step > 0.0) || !(a.rho2_min <= a.rho2_max) {
                return Err(usage("need rho2-step > 0 and rho2-min <= rho2-max"));
            }
            let n = ((a.rho2_max - a.rho2_min) / a.rho2_step + 1e-9).floor() as usize;
            (0..=n).map(|i| a.rho2_min + i as f64 * a.rho2_step).collect()
        }
    };
    if grid.iter().any(|r| !(0.0..1.0).contains(r)) {
        return Err(usage("rho^2 values must lie in [0, 1)"));
    }
    let table = load_lookup(a.lookup.as_deref())?;
    Ok(sweep_csv(&sweep(&grid, table.as_ref())?))
}

fn cmd_lookup(action: LookupAction) -> Result<String> {
    match action {
        LookupAction::Build { output } => {
            let table = build_table(BnmCurve::global())?;
            table.save(&output)?;
            Ok(format!("wrote {} entries to {}\n", table.entries().len(), output.display()))
        }
        LookupAction::Inspect { path } => {
            let path = lookup::resolve_path(path.as_deref())
                .ok_or_else(|| usage(format!("no table path given and {} is unset", lookup::ENV_VAR)))?;
            Ok(inspect_lookup(&LookupTable::load(&path)?))
        }
    }
}
