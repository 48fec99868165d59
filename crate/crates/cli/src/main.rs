use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use qpr_core::asym::{
    ks_distance_normal, linearization_residual, ou_endpoint_variance, simulate_jc, standardized_slope,
};
use qpr_core::bootstrap::{bootstrap_test, BootstrapConfig, NullSpec};
use qpr_core::data::{parse_dataset, run_empirical, ColumnMap, EmpiricalOptions, YearMonth};
use qpr_core::dgp::{simulate_system, ArchParams, DgpConfig, InnovationSpec, PersistenceSpec};
use qpr_core::el::{el_test, ElTestConfig};
use qpr_core::error::ErrorKind;
use qpr_core::inference::{Calibration, Hypothesis, Method, TestResult};
use qpr_core::ivx::{ivx_qr_test, IvxTestConfig};
use qpr_core::mc::{format_table, results_to_csv, results_to_table, run_grid, McGrid};
use qpr_core::parallel::{map_indices, with_jobs};
use qpr_core::sample::TimeSeriesSample;
use qpr_core::seed::derive_seed;
use qpr_core::stats::QuantileLevel;
use qpr_core::{QprError, Result};

#[derive(Parser)]
#[command(name = "qpr", version, about = "Quantile predictive regression: EL and IVX inference")]
struct Cli {
    /// Master seed; the QPR_SEED environment variable takes precedence.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// Worker threads for Monte Carlo and bootstrap work.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[arg(long, global = true, value_enum, default_value_t = Format::Table)]
    format: Format,
    /// Write output here instead of standard output.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Table,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    El,
    Ivx,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::El => Method::El,
            MethodArg::Ivx => Method::Ivx,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum HypothesisArg {
    BetaOnly,
    GammaOnly,
    Joint,
}

impl From<HypothesisArg> for Hypothesis {
    fn from(h: HypothesisArg) -> Self {
        match h {
            HypothesisArg::BetaOnly => Hypothesis::BetaOnly,
            HypothesisArg::GammaOnly => Hypothesis::GammaOnly,
            HypothesisArg::Joint => Hypothesis::Joint,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum InnovationArg {
    Gaussian,
    StudentT,
    CcArch,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Check {
    Jc,
    Stationary,
    Linearization,
    All,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one sample and write it as CSV (columns t,y,x).
    Simulate(SimulateArgs),
    /// Run one test on a sample CSV (columns t,y,x).
    Test(TestArgs),
    /// Run a Monte Carlo grid described by a JSON file.
    Mc {
        /// Grid specification (JSON).
        config: PathBuf,
    },
    /// Predictability report over a grid of quantiles for a monthly dataset.
    Empirical(EmpiricalArgs),
    /// Simulation checks of the limit theory.
    Diagnose {
        #[arg(long, value_enum, default_value_t = Check::All)]
        check: Check,
        #[arg(long, default_value_t = 1000)]
        replications: usize,
    },
}

#[derive(Args)]
struct SimulateArgs {
    /// Read the full data-generating configuration from a JSON file instead.
    #[arg(long, conflicts_with_all = ["n", "c"])]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 500)]
    n: usize,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    c: f64,
    #[arg(long, default_value_t = 1.0)]
    gamma_exp: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    mu: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    alpha: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    beta: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    gamma_lag: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    rho_uv: f64,
    #[arg(long, value_enum, default_value_t = InnovationArg::Gaussian)]
    innovation: InnovationArg,
    #[arg(long, default_value_t = 5.0)]
    dof: f64,
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    vartheta: f64,
    #[arg(long, default_value_t = 0.5)]
    arch_omega: f64,
    #[arg(long, default_value_t = 0.5)]
    arch_a1: f64,
    /// Recentre errors so their conditional tau-quantile is zero.
    #[arg(long)]
    tau: Option<f64>,
}

#[derive(Args)]
struct TestArgs {
    input: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    tau: f64,
    #[arg(long, value_enum, default_value_t = MethodArg::El)]
    method: MethodArg,
    #[arg(long, value_enum, default_value_t = HypothesisArg::BetaOnly)]
    hypothesis: HypothesisArg,
    /// Include the lagged response in the model (`--dynamic false` drops it).
    #[arg(long, default_value_t = true, action = ArgAction::Set)]
    dynamic: bool,
    /// Calibrate with this many multiplier-bootstrap replications.
    #[arg(long)]
    bootstrap: Option<usize>,
    #[arg(long, default_value_t = 0.05)]
    level: f64,
}

#[derive(Args)]
struct EmpiricalArgs {
    input: PathBuf,
    #[arg(long, default_value = "yyyymm")]
    date_col: String,
    #[arg(long, default_value = "ret")]
    return_col: String,
    #[arg(long, value_delimiter = ',', required = true)]
    predictors: Vec<String>,
    #[arg(long, value_delimiter = ',', default_values_t = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9])]
    taus: Vec<f64>,
    #[arg(long = "method", value_enum, value_delimiter = ',', default_values_t = [MethodArg::El, MethodArg::Ivx])]
    methods: Vec<MethodArg>,
    #[arg(long, value_enum, default_value_t = HypothesisArg::BetaOnly)]
    hypothesis: HypothesisArg,
    /// Include the lagged response in the model (`--dynamic false` drops it).
    #[arg(long, default_value_t = true, action = ArgAction::Set)]
    dynamic: bool,
    /// Add bootstrap-calibrated rows with this many replications.
    #[arg(long)]
    bootstrap: Option<usize>,
    #[arg(long, default_value_t = 0.05)]
    level: f64,
    /// First month to use (YYYYMM or YYYY-MM).
    #[arg(long)]
    from: Option<String>,
    /// Last month to use (YYYYMM or YYYY-MM).
    #[arg(long)]
    to: Option<String>,
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Config => 2,
        ErrorKind::Data => 3,
        ErrorKind::Numerical => 4,
    }
}

fn kind_name(kind: ErrorKind) -> &'static str {
    match kind {
        ErrorKind::Config => "config",
        ErrorKind::Data => "data",
        ErrorKind::Numerical => "numerical",
    }
}

fn report_error(kind: ErrorKind, message: &str) -> ExitCode {
    let code = exit_code(kind);
    eprintln!(
        "{}",
        json!({ "error": kind_name(kind), "code": code, "message": message })
    );
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(
            e.kind(),
            clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
        ) =>
        {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            return report_error(ErrorKind::Config, first.trim_start_matches("error: "));
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report_error(e.kind(), &e.to_string()),
    }
}

fn seed(cli: &Cli) -> Result<u64> {
    match std::env::var("QPR_SEED") {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| QprError::Config(format!("QPR_SEED must be an unsigned integer, got `{v}`"))),
        Err(_) => Ok(cli.seed),
    }
}

fn emit(cli: &Cli, text: &str) -> Result<()> {
    match &cli.out {
        Some(path) => fs::write(path, text)?,
        None => std::io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let seed = seed(&cli)?;
    match &cli.command {
        Command::Simulate(args) => simulate(&cli, args, seed),
        Command::Test(args) => test(&cli, args, seed),
        Command::Mc { config } => {
            let text = fs::read_to_string(config)?;
            let mut grid = McGrid::from_json(&text)?;
            if std::env::var("QPR_SEED").is_ok() {
                grid.master_seed = seed;
            }
            let rows = run_grid(&grid, cli.jobs)?;
            let out = match cli.format {
                Format::Csv => results_to_csv(&rows)?,
                Format::Table => results_to_table(&rows),
            };
            emit(&cli, &out)
        }
        Command::Empirical(args) => empirical(&cli, args, seed),
        Command::Diagnose { check, replications } => diagnose(&cli, *check, *replications, seed),
    }
}

fn simulate(cli: &Cli, a: &SimulateArgs, seed: u64) -> Result<()> {
    let config = match &a.config {
        Some(path) => serde_json::from_str::<DgpConfig>(&fs::read_to_string(path)?)?,
        None => {
            let persistence = PersistenceSpec {
                c: a.c,
                gamma_exp: a.gamma_exp,
                mu: a.mu,
                x0: 0.0,
            };
            let innovations = match a.innovation {
                InnovationArg::Gaussian => InnovationSpec::gaussian(1.0, 1.0, a.rho_uv),
                InnovationArg::StudentT => InnovationSpec::student_t(a.dof, 1.0, 1.0, a.rho_uv),
                InnovationArg::CcArch => {
                    let p = ArchParams {
                        omega: a.arch_omega,
                        a1: a.arch_a1,
                    };
                    InnovationSpec::cc_arch(a.vartheta, p, p)
                }
            };
            let mut cfg = DgpConfig::new(a.n, persistence, innovations);
            cfg.alpha = a.alpha;
            cfg.beta = a.beta;
            cfg.gamma_lag = a.gamma_lag;
            cfg.quantile_shift = a.tau.map(QuantileLevel::new).transpose()?;
            cfg
        }
    };
    let sample = simulate_system(&config, seed)?;
    let mut buf = Vec::new();
    sample.write_csv(&mut buf)?;
    emit(cli, &String::from_utf8(buf).expect("CSV is UTF-8"))
}

const RESULT_HEADER: [&str; 9] = [
    "method",
    "hypothesis",
    "calibration",
    "statistic",
    "dof",
    "p_value",
    "reject",
    "converged",
    "profiled",
];

fn result_record(t: &TestResult) -> Vec<String> {
    vec![
        t.method.as_str().into(),
        t.hypothesis.as_str().into(),
        t.calibration.as_str().into(),
        format!("{:.6}", t.statistic),
        t.dof.to_string(),
        format!("{:.6}", t.p_value),
        t.reject.to_string(),
        t.converged.to_string(),
        t.profiled.map_or(String::new(), |v| format!("{v:.6}")),
    ]
}

fn render(format: Format, header: &[&str], rows: &[Vec<String>]) -> String {
    let header: Vec<String> = header.iter().map(|s| s.to_string()).collect();
    match format {
        Format::Table => format_table(&header, rows),
        Format::Csv => {
            let mut out = header.join(",") + "\n";
            for r in rows {
                let quoted: Vec<String> = r
                    .iter()
                    .map(|c| {
                        if c.contains([',', '"', '\n']) {
                            format!("\"{}\"", c.replace('"', "\"\""))
                        } else {
                            c.clone()
                        }
                    })
                    .collect();
                out += &(quoted.join(",") + "\n");
            }
            out
        }
    }
}

fn test(cli: &Cli, a: &TestArgs, seed: u64) -> Result<()> {
    let sample = TimeSeriesSample::read_csv(fs::File::open(&a.input)?)?;
    let tau = QuantileLevel::new(a.tau)?;
    let hypothesis: Hypothesis = a.hypothesis.into();
    let method: Method = a.method.into();
    let result = match a.bootstrap {
        Some(b) => {
            with_jobs(cli.jobs, |execution| {
                let config = BootstrapConfig {
                    execution,
                    ..BootstrapConfig::new(b, seed)
                };
                bootstrap_test(&sample, tau, method, &NullSpec::new(hypothesis, a.dynamic), &config, a.level)
            })?
        }
        None => match method {
            Method::El => el_test(
                &sample,
                tau,
                hypothesis,
                &ElTestConfig {
                    dynamic: a.dynamic,
                    level: a.level,
                    ..Default::default()
                },
            )?,
            Method::Ivx => ivx_qr_test(
                &sample,
                tau,
                hypothesis,
                &IvxTestConfig {
                    dynamic: a.dynamic,
                    level: a.level,
                    ..Default::default()
                },
            )?,
        },
    };
    emit(cli, &render(cli.format, &RESULT_HEADER, &[result_record(&result)]))
}

fn empirical(cli: &Cli, a: &EmpiricalArgs, seed: u64) -> Result<()> {
    let map = ColumnMap {
        date: a.date_col.clone(),
        response: a.return_col.clone(),
        predictors: a.predictors.clone(),
    };
    let mut ds = parse_dataset(&a.input, &map)?;
    if a.from.is_some() || a.to.is_some() {
        let parse = |s: &Option<String>| s.as_deref().map(YearMonth::parse).transpose();
        ds = ds.subset(parse(&a.from)?, parse(&a.to)?)?;
    }
    let methods: Vec<Method> = a.methods.iter().map(|&m| m.into()).collect();
    let mut calibrations = vec![Calibration::Asymptotic];
    if a.bootstrap.is_some() {
        calibrations.push(Calibration::Bootstrap);
    }
    let options = EmpiricalOptions {
        hypothesis: a.hypothesis.into(),
        dynamic: a.dynamic,
        level: a.level,
        bootstrap_replications: a.bootstrap.unwrap_or(399),
        seed,
    };
    let report = with_jobs(cli.jobs, |_| {
        run_empirical(&ds, &a.predictors, &a.taus, &methods, &calibrations, &options)
    })?;
    if !report.gaps.is_empty() || report.dropped_rows > 0 {
        eprintln!(
            "{}",
            json!({
                "warning": "dataset has dropped rows or calendar gaps",
                "dropped_rows": report.dropped_rows,
                "gaps": report.gaps.iter().map(|(a, b)| format!("{a}-{b}")).collect::<Vec<_>>(),
            })
        );
    }
    let out = match cli.format {
        Format::Csv => report.to_csv()?,
        Format::Table => report.to_table(),
    };
    emit(cli, &out)
}

fn diagnose(cli: &Cli, check: Check, replications: usize, seed: u64) -> Result<()> {
    if replications < 10 {
        return Err(QprError::Config("diagnose needs at least 10 replications".into()));
    }
    let tau = QuantileLevel::new(0.5)?;
    let stationary = DgpConfig::new(
        2000,
        PersistenceSpec::stationary(0.5),
        InnovationSpec::gaussian(1.0, 1.0, -0.5),
    );
    let mut rows: Vec<Vec<String>> = Vec::new();
    let want = |c: Check| matches!(check, Check::All) || c == check;
    with_jobs(cli.jobs, |exec| -> Result<()> {
        if want(Check::Jc) {
            for c in [-10.0, -2.0, 0.0] {
                let ends: Vec<f64> = map_indices(replications, exec, |r| {
                    simulate_jc(c, 1000, derive_seed(&[seed, 1, r as u64])).map(|p| p.endpoint())
                })
                .into_iter()
                .collect::<Result<_>>()?;
                let mean = ends.iter().sum::<f64>() / ends.len() as f64;
                let var = ends.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (ends.len() - 1) as f64;
                rows.push(vec![
                    format!("jc_endpoint_variance(c={c})"),
                    format!("{var:.6}"),
                    format!("{:.6}", ou_endpoint_variance(c)),
                ]);
            }
        }
        if want(Check::Stationary) {
            let z: Vec<f64> = map_indices(replications, exec, |r| {
                let s = simulate_system(&stationary, derive_seed(&[seed, 2, r as u64]))?;
                standardized_slope(&s, tau, 0.0)
            })
            .into_iter()
            .collect::<Result<_>>()?;
            rows.push(vec![
                "standardized_slope_ks_to_normal".into(),
                format!("{:.6}", ks_distance_normal(&z)),
                "0".into(),
            ]);
        }
        if want(Check::Linearization) {
            for m in [200usize, 2000] {
                let res: Vec<f64> = map_indices(replications.min(200), exec, |r| {
                    linearization_residual(&stationary, tau, [1.0, 1.0], m, derive_seed(&[seed, 3, r as u64]))
                })
                .into_iter()
                .collect::<Result<_>>()?;
                rows.push(vec![
                    format!("mean_linearization_residual(m={m})"),
                    format!("{:.6}", res.iter().sum::<f64>() / res.len() as f64),
                    "0".into(),
                ]);
            }
        }
        Ok(())
    })?;
    emit(cli, &render(cli.format, &["diagnostic", "simulated", "limit"], &rows))
}
