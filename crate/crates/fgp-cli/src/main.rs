//! `fgp`: construct, verify and backtest trading strategies generated by
//! functionals of market weights.
//!
//! Subcommands: `synth`, `covariation`, `backtest`, `verify-ito`,
//! `arbitrage`, `report`. Every run writes a `run.cfg` echo of the resolved
//! options into its output directory so results can be reproduced
//! byte-for-byte from the same inputs and binary.
//!
//! Exit codes: 0 success, 2 parse failure, 3 domain violation,
//! 4 configuration error, 5 numerical-prerequisite failure.

mod config;

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use fgp_core::backtest::{
    decomposition_report, emit_svg, run_backtest_with, BacktestConfig, BacktestError, ChartKind,
    UndefinedWeightsPolicy,
};
use fgp_core::chart::{LineChart, Series};
use fgp_core::funcalc::{residuals_to_csv, verify_ito, FuncError};
use fgp_core::genlib::{self, FunctionalSpec, GenLibError};
use fgp_core::marketpath::{
    aux_path, covariation, load_capitalizations, to_market_weights, CapitalizationPath, CsvSpec,
    MarketPathError, RefiningPartitionFamily,
};
use fgp_core::strategy::{
    additive_strategy, detect_arbitrage_t41, detect_arbitrage_t42, detect_arbitrage_t43,
    DomainPolicy, StrategyError, StrategyMode,
};
use fgp_core::synth::{generate, to_csv, Model, SynthError, SynthSpec};

#[derive(Parser)]
#[command(name = "fgp", version, about = "Functionally generated portfolio toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic capitalization panel as CSV.
    Synth(SynthArgs),
    /// Pathwise covariations along a refining partition family.
    Covariation(CovArgs),
    /// Daily-rebalancing backtest with reports and charts.
    Backtest(BacktestArgs),
    /// Change-of-variable residuals across partition levels.
    #[command(name = "verify-ito")]
    VerifyIto(VerifyArgs),
    /// Scan a sufficient arbitrage condition and write a certificate.
    Arbitrage(ArbArgs),
    /// Regenerate decomposition table and charts from a report CSV.
    Report(ReportArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 5)]
    d: usize,
    #[arg(long, default_value_t = 1024)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Per-step log volatility (multiplicative walk).
    #[arg(long, default_value_t = 0.01)]
    sigma: f64,
    /// Per-step drift.
    #[arg(long, default_value_t = 0.0)]
    nu: f64,
    #[arg(long, default_value_t = 1.0)]
    dt: f64,
    /// Price model: walk | meanrev.
    #[arg(long, default_value = "walk")]
    model: String,
    /// Mean-reversion rate (meanrev model).
    #[arg(long, default_value_t = 0.5)]
    rate: f64,
    /// Mean-reversion level (meanrev model).
    #[arg(long, default_value_t = 1.0)]
    level: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CovArgs {
    input: PathBuf,
    /// Number of dyadic levels (finest = data grid).
    #[arg(long, default_value_t = 4)]
    levels: usize,
    /// Optional file with explicit partition times, one comma-separated
    /// list per level.
    #[arg(long)]
    times: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct FunctionalArgs {
    /// Catalog name: market, entropy, entropy_running_max,
    /// entropy_running_min, iterated_entropy_min, quadratic_running_max,
    /// delayed_difference, delayed_relative_entropy.
    #[arg(long)]
    functional: String,
    /// Threshold constant; a number or `auto`.
    #[arg(long)]
    p: Option<String>,
    /// Reserved parameter slot, echoed into run.cfg.
    #[arg(long)]
    q: Option<f64>,
    #[arg(long)]
    r: Option<f64>,
    #[arg(long)]
    c: Option<f64>,
    /// Lag in whole grid steps for the delayed entries.
    #[arg(long)]
    delta: Option<usize>,
    #[arg(long)]
    zeta: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
}

impl FunctionalArgs {
    fn to_spec(&self) -> FunctionalSpec {
        let mut spec = FunctionalSpec::new(&self.functional);
        if let Some(p) = &self.p {
            spec = spec.with("p", p);
        }
        if let Some(r) = self.r {
            spec = spec.with("r", &r.to_string());
        }
        if let Some(c) = self.c {
            spec = spec.with("c", &c.to_string());
        }
        if let Some(delta) = self.delta {
            spec = spec.with("delta", &delta.to_string());
        }
        if let Some(zeta) = self.zeta {
            spec = spec.with("zeta", &zeta.to_string());
        }
        if let Some(beta) = self.beta {
            spec = spec.with("beta", &beta.to_string());
        }
        spec
    }
}

#[derive(Args)]
struct BacktestArgs {
    input: PathBuf,
    #[command(flatten)]
    functional: FunctionalArgs,
    /// Leading panel columns reserved as pre-history (defaults to the lag
    /// of delayed entries).
    #[arg(long)]
    pre_history: Option<usize>,
    #[arg(long, default_value_t = 1)]
    rebalance_every: usize,
    /// halt | hold_market.
    #[arg(long, default_value = "halt")]
    on_undefined_weights: String,
    /// additive | multiplicative.
    #[arg(long, default_value = "additive")]
    mode: String,
    /// halt | warn.
    #[arg(long, default_value = "warn")]
    domain_policy: String,
    #[arg(long, default_value_t = 1e-8)]
    g_floor: f64,
    /// Run one backtest per listed threshold value, e.g. `1,9,90`.
    #[arg(long)]
    sweep_p: Option<String>,
    /// Also write the full per-asset holdings series (large).
    #[arg(long, default_value_t = false)]
    emit_holdings: bool,
    /// Plain key=value file; its entries override the flags.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct VerifyArgs {
    /// Capitalization CSV; omit when --synth is given.
    input: Option<PathBuf>,
    /// Inline synthetic spec `d=5,n=4096,seed=7,sigma=0.004`.
    #[arg(long)]
    synth: Option<String>,
    #[command(flatten)]
    functional: FunctionalArgs,
    #[arg(long)]
    pre_history: Option<usize>,
    #[arg(long, default_value_t = 6)]
    levels: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ArbArgs {
    input: PathBuf,
    #[command(flatten)]
    functional: FunctionalArgs,
    /// 41 | 42 | 43.
    #[arg(long)]
    theorem: u32,
    #[arg(long, default_value_t = 0.01)]
    epsilon: f64,
    /// Shift constant for the multiplicative construction.
    #[arg(long, default_value_t = 1.0)]
    shift_c: f64,
    #[arg(long)]
    pre_history: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// A report CSV produced by `backtest`.
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

// ---------------------------------------------------------------------------
// error-to-exit-code mapping
// ---------------------------------------------------------------------------

const EXIT_PARSE: i32 = 2;
const EXIT_DOMAIN: i32 = 3;
const EXIT_CONFIG: i32 = 4;
const EXIT_NUMERIC: i32 = 5;

struct CliError {
    code: i32,
    message: String,
}

impl CliError {
    fn config(msg: impl Into<String>) -> Self {
        Self { code: EXIT_CONFIG, message: msg.into() }
    }

    fn parse(msg: impl Into<String>) -> Self {
        Self { code: EXIT_PARSE, message: msg.into() }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self { code: EXIT_PARSE, message: format!("io error: {e}") }
    }
}

impl From<MarketPathError> for CliError {
    fn from(e: MarketPathError) -> Self {
        let code = match &e {
            MarketPathError::MalformedRow { .. }
            | MarketPathError::NonFiniteValue { .. }
            | MarketPathError::NegativeCap { .. }
            | MarketPathError::NonPositiveInitialCap { .. }
            | MarketPathError::Io(_) => EXIT_PARSE,
            _ => EXIT_DOMAIN,
        };
        Self { code, message: e.to_string() }
    }
}

impl From<GenLibError> for CliError {
    fn from(e: GenLibError) -> Self {
        let code = match &e {
            GenLibError::Domain(_) => EXIT_DOMAIN,
            _ => EXIT_CONFIG,
        };
        Self { code, message: e.to_string() }
    }
}

impl From<FuncError> for CliError {
    fn from(e: FuncError) -> Self {
        let code = match &e {
            FuncError::Domain(_) => EXIT_DOMAIN,
            _ => EXIT_NUMERIC,
        };
        Self { code, message: e.to_string() }
    }
}

impl From<StrategyError> for CliError {
    fn from(e: StrategyError) -> Self {
        let code = match &e {
            StrategyError::DomainHalt(_) => EXIT_DOMAIN,
            StrategyError::MissingLowerBoundCompanion => EXIT_CONFIG,
            StrategyError::NormalizationImpossible { .. } => EXIT_NUMERIC,
            StrategyError::Func(f) => return Self::from_func_ref(f, e.to_string()),
        };
        Self { code, message: e.to_string() }
    }
}

impl CliError {
    fn from_func_ref(f: &FuncError, message: String) -> Self {
        let code = match f {
            FuncError::Domain(_) => EXIT_NUMERIC,
            _ => EXIT_NUMERIC,
        };
        Self { code, message }
    }
}

impl From<BacktestError> for CliError {
    fn from(e: BacktestError) -> Self {
        match e {
            BacktestError::Market(m) => m.into(),
            BacktestError::Gen(g) => g.into(),
            BacktestError::Strategy(s) => s.into(),
            BacktestError::WeightsUndefined { .. } => {
                Self { code: EXIT_NUMERIC, message: e.to_string() }
            }
            BacktestError::PreHistoryTooShort { .. } => {
                Self { code: EXIT_CONFIG, message: e.to_string() }
            }
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        Self { code: EXIT_CONFIG, message: e.to_string() }
    }
}

impl From<fgp_core::chart::ChartError> for CliError {
    fn from(e: fgp_core::chart::ChartError) -> Self {
        Self { code: EXIT_NUMERIC, message: e.to_string() }
    }
}

// ---------------------------------------------------------------------------

fn main() {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Synth(a) => cmd_synth(a),
        Cmd::Covariation(a) => cmd_covariation(a),
        Cmd::Backtest(a) => cmd_backtest(a),
        Cmd::VerifyIto(a) => cmd_verify_ito(a),
        Cmd::Arbitrage(a) => cmd_arbitrage(a),
        Cmd::Report(a) => cmd_report(a),
    };
    match result {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {}", e.message);
            std::process::exit(e.code);
        }
    }
}

fn ensure_out(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn write_run_cfg(dir: &Path, entries: &[(String, String)]) -> Result<(), CliError> {
    let mut sorted = entries.to_vec();
    sorted.sort();
    let mut text = String::new();
    for (k, v) in sorted {
        text.push_str(&format!("{k}={v}\n"));
    }
    fs::write(dir.join("run.cfg"), text)?;
    Ok(())
}

fn load_panel(path: &Path) -> Result<CapitalizationPath, CliError> {
    let file = fs::File::open(path)
        .map_err(|e| CliError::parse(format!("cannot open {}: {e}", path.display())))?;
    Ok(load_capitalizations(BufReader::new(file), &CsvSpec::default())?)
}

fn cmd_synth(a: SynthArgs) -> Result<(), CliError> {
    ensure_out(&a.out)?;
    let model = match a.model.as_str() {
        "walk" => Model::MultiplicativeWalk { vol: vec![a.sigma; a.d], drift: vec![a.nu; a.d] },
        "meanrev" => Model::MeanRevertingWeights { rate: a.rate, level: a.level },
        other => return Err(CliError::config(format!("unknown model `{other}`"))),
    };
    let spec = SynthSpec { d: a.d, n: a.n, seed: a.seed, model, dt: a.dt, s0: 1.0 };
    let caps = generate(&spec)?;
    fs::write(a.out.join("caps.csv"), to_csv(&caps))?;
    write_run_cfg(
        &a.out,
        &[
            ("subcommand".into(), "synth".into()),
            ("d".into(), a.d.to_string()),
            ("n".into(), a.n.to_string()),
            ("seed".into(), a.seed.to_string()),
            ("sigma".into(), a.sigma.to_string()),
            ("nu".into(), a.nu.to_string()),
            ("dt".into(), a.dt.to_string()),
            ("model".into(), a.model.clone()),
            ("rate".into(), a.rate.to_string()),
            ("level".into(), a.level.to_string()),
        ],
    )?;
    println!("wrote {}", a.out.join("caps.csv").display());
    Ok(())
}

fn cmd_covariation(a: CovArgs) -> Result<(), CliError> {
    ensure_out(&a.out)?;
    let caps = load_panel(&a.input)?;
    let mu = to_market_weights(&caps, 0)?;
    let parts = match &a.times {
        None => RefiningPartitionFamily::dyadic(&mu.grid, a.levels),
        Some(path) => {
            let text = fs::read_to_string(path)?;
            let mut levels = Vec::new();
            for line in text.lines() {
                if line.trim().is_empty() {
                    continue;
                }
                let times: Result<Vec<f64>, _> =
                    line.split(',').map(|t| t.trim().parse::<f64>()).collect();
                levels.push(times.map_err(|_| {
                    CliError::parse(format!("unparseable partition line `{line}`"))
                })?);
            }
            RefiningPartitionFamily::from_times(&mu.grid, &levels)?
        }
    };
    let covs = covariation(&mu, &parts)?;
    let finest = covs.last().expect("at least one level");
    let last_k = finest.len() - 1;
    let mut convergence = String::from("level,mesh,points,max_abs_diff_final,trace_final\n");
    for (lvl, cov) in covs.iter().enumerate() {
        fs::write(a.out.join(format!("cov_level_{lvl}.csv")), cov.to_csv())?;
        let k = cov.len() - 1;
        let mut max_diff = 0.0f64;
        let mut trace = 0.0;
        for i in 0..mu.d() {
            trace += cov.value(k, i, i);
            for j in 0..mu.d() {
                max_diff = max_diff.max((cov.value(k, i, j) - finest.value(last_k, i, j)).abs());
            }
        }
        convergence.push_str(&format!(
            "{lvl},{},{},{max_diff},{trace}\n",
            parts.mesh(lvl),
            cov.len()
        ));
    }
    fs::write(a.out.join("convergence.csv"), convergence)?;
    write_run_cfg(
        &a.out,
        &[
            ("subcommand".into(), "covariation".into()),
            ("input".into(), a.input.display().to_string()),
            ("levels".into(), parts.num_levels().to_string()),
            (
                "times".into(),
                a.times.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
            ),
        ],
    )?;
    println!("wrote {} covariation levels to {}", parts.num_levels(), a.out.display());
    Ok(())
}

struct ResolvedBacktest {
    spec: FunctionalSpec,
    cfg: BacktestConfig,
    sweep_p: Option<Vec<f64>>,
    emit_holdings: bool,
}

fn resolve_backtest(a: &BacktestArgs) -> Result<ResolvedBacktest, CliError> {
    let mut spec = a.functional.to_spec();
    let mut mode = a.mode.clone();
    let mut rebalance_every = a.rebalance_every;
    let mut on_undefined = a.on_undefined_weights.clone();
    let mut domain_policy = a.domain_policy.clone();
    let mut pre_history = a.pre_history;
    let mut g_floor = a.g_floor;
    let mut sweep_p: Option<Vec<f64>> = None;
    if let Some(list) = &a.sweep_p {
        sweep_p = Some(config::parse_f64_list(list).map_err(CliError::config)?);
    }
    // config file entries override flags
    if let Some(path) = &a.config {
        let map = config::load_key_values(path)
            .map_err(|e| CliError::parse(format!("config file: {e}")))?;
        for (k, v) in map {
            match k.as_str() {
                "functional" => spec.name = v,
                "p" | "q" | "r" | "c" | "delta" | "zeta" | "beta" | "epsilon" => {
                    spec = spec.with(&k, &v);
                }
                "mode" => mode = v,
                "rebalance_every" => {
                    rebalance_every = v
                        .parse()
                        .map_err(|_| CliError::config("bad rebalance_every"))?;
                }
                "on_undefined_weights" => on_undefined = v,
                "domain_policy" => domain_policy = v,
                "pre_history" => {
                    pre_history =
                        Some(v.parse().map_err(|_| CliError::config("bad pre_history"))?);
                }
                "g_floor" => {
                    g_floor = v.parse().map_err(|_| CliError::config("bad g_floor"))?;
                }
                "sweep_p" => {
                    sweep_p = Some(config::parse_f64_list(&v).map_err(CliError::config)?);
                }
                other => {
                    return Err(CliError::config(format!("unknown config key `{other}`")));
                }
            }
        }
    }
    let mode = match mode.as_str() {
        "additive" => StrategyMode::Additive,
        "multiplicative" => StrategyMode::Multiplicative,
        other => return Err(CliError::config(format!("unknown mode `{other}`"))),
    };
    let on_undefined = match on_undefined.as_str() {
        "halt" => UndefinedWeightsPolicy::Halt,
        "hold_market" => UndefinedWeightsPolicy::HoldMarket,
        other => {
            return Err(CliError::config(format!("unknown undefined-weights policy `{other}`")))
        }
    };
    let domain_policy = match domain_policy.as_str() {
        "halt" => DomainPolicy::Halt,
        "warn" => DomainPolicy::WarnAndContinue,
        other => return Err(CliError::config(format!("unknown domain policy `{other}`"))),
    };
    // default pre-history: the lag of delayed entries
    let delta_steps: usize = spec
        .params
        .get("delta")
        .and_then(|v| v.parse().ok())
        .unwrap_or(0);
    let pre_history_days = pre_history.unwrap_or(if spec.name.starts_with("delayed") {
        delta_steps
    } else {
        0
    });
    Ok(ResolvedBacktest {
        spec,
        cfg: BacktestConfig {
            mode,
            rebalance_every,
            on_undefined_weights: on_undefined,
            domain_policy,
            pre_history_days,
            g_floor,
            cost_per_unit_turnover: 0.0,
        },
        sweep_p,
        emit_holdings: a.emit_holdings,
    })
}

fn run_one_backtest(
    caps: &CapitalizationPath,
    spec: &FunctionalSpec,
    cfg: &BacktestConfig,
    out: &Path,
    emit_holdings: bool,
    extra_cfg: &[(String, String)],
) -> Result<f64, CliError> {
    fs::create_dir_all(out)?;
    let report = run_backtest_with(caps, cfg, |mu| genlib::build_functional(spec, mu))?;
    fs::write(out.join("report.csv"), report.to_csv())?;
    fs::write(out.join("decomposition.csv"), decomposition_report(&report).to_csv())?;
    fs::write(out.join("wealth.svg"), emit_svg(&report, ChartKind::Wealth)?)?;
    fs::write(out.join("decomposition.svg"), emit_svg(&report, ChartKind::Decomposition)?)?;
    if emit_holdings {
        fs::write(
            out.join("strategy.csv"),
            report.series.to_csv(&caps.asset_ids),
        )?;
    }
    if !report.violations.is_empty() {
        let mut text = String::new();
        for v in &report.violations {
            text.push_str(&format!("{v}\n"));
        }
        fs::write(out.join("violations.txt"), text)?;
    }
    let mut entries: Vec<(String, String)> = report
        .config_echo
        .iter()
        .cloned()
        .chain(extra_cfg.iter().cloned())
        .collect();
    entries.push(("subcommand".into(), "backtest".into()));
    write_run_cfg(out, &entries)?;
    Ok(*report.v.last().unwrap())
}

fn cmd_backtest(a: BacktestArgs) -> Result<(), CliError> {
    let resolved = resolve_backtest(&a)?;
    ensure_out(&a.out)?;
    let caps = load_panel(&a.input)?;
    let extra = vec![("input".into(), a.input.display().to_string())];
    match &resolved.sweep_p {
        None => {
            let terminal = run_one_backtest(
                &caps,
                &resolved.spec,
                &resolved.cfg,
                &a.out,
                resolved.emit_holdings,
                &extra,
            )?;
            println!("terminal relative value {terminal:.6}");
        }
        Some(ps) => {
            // one worker per threshold value, bounded by the host parallelism
            let workers = std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
                .min(ps.len().max(1));
            let mut results: Vec<(f64, Result<f64, CliError>)> = Vec::new();
            for chunk in ps.chunks(workers) {
                let mut batch: Vec<(f64, Result<f64, CliError>)> = Vec::new();
                std::thread::scope(|scope| {
                    let mut handles = Vec::new();
                    for &p in chunk {
                        let spec = resolved.spec.clone().with("p", &p.to_string());
                        let cfg = resolved.cfg.clone();
                        let caps_ref = &caps;
                        let out = a.out.join(format!("p_{p}"));
                        let extra = extra.clone();
                        let emit = resolved.emit_holdings;
                        handles.push((p, scope.spawn(move || {
                            run_one_backtest(caps_ref, &spec, &cfg, &out, emit, &extra)
                        })));
                    }
                    for (p, h) in handles {
                        batch.push((p, h.join().expect("worker panicked")));
                    }
                });
                results.extend(batch);
            }
            let mut summary = String::from("p,terminal_V,terminal_R\n");
            let mut curves = Vec::new();
            for (p, res) in results {
                let terminal = res?;
                summary.push_str(&format!("{p},{terminal},{}\n", terminal - 1.0));
                // reread the report for the comparison chart
                let text = fs::read_to_string(a.out.join(format!("p_{p}")).join("report.csv"))?;
                let mut points = Vec::new();
                for line in text.lines().skip(1) {
                    let cells: Vec<&str> = line.split(',').collect();
                    if cells.len() >= 4 {
                        let t: f64 = cells[0].parse().unwrap_or(f64::NAN);
                        let v: f64 = cells[3].parse().unwrap_or(f64::NAN);
                        points.push((t, v));
                    }
                }
                curves.push(Series { name: format!("p = {p}"), points });
            }
            fs::write(a.out.join("summary.csv"), summary)?;
            let chart = LineChart {
                title: "Relative value across threshold values".into(),
                x_label: "day".into(),
                y_label: "V".into(),
                series: curves,
            };
            fs::write(a.out.join("comparison.svg"), chart.render_svg(900, 520)?)?;
            let mut entries = extra.clone();
            entries.push(("subcommand".into(), "backtest-sweep".into()));
            entries.push(("functional".into(), resolved.spec.name.clone()));
            entries.push((
                "sweep_p".into(),
                ps.iter().map(|p| p.to_string()).collect::<Vec<_>>().join(","),
            ));
            write_run_cfg(&a.out, &entries)?;
            println!("sweep complete: {} runs", ps.len());
        }
    }
    Ok(())
}

fn cmd_verify_ito(a: VerifyArgs) -> Result<(), CliError> {
    ensure_out(&a.out)?;
    let caps = match (&a.input, &a.synth) {
        (Some(path), None) => load_panel(path)?,
        (None, Some(inline)) => {
            let spec = config::parse_synth_inline(inline).map_err(CliError::config)?;
            generate(&spec)?
        }
        _ => {
            return Err(CliError::config(
                "give either a capitalization CSV or --synth, not both",
            ))
        }
    };
    let pre = a.pre_history.unwrap_or(0);
    let mu = to_market_weights(&caps, pre)?;
    let spec = a.functional.to_spec();
    let f = genlib::build_functional(&spec, &mu)?;
    let aux = aux_path(&mu, f.descriptor().requires_aux)?;
    let parts = RefiningPartitionFamily::dyadic(&mu.grid, a.levels);
    let rows = verify_ito(f.as_ref(), &mu, &aux, &parts)?;
    fs::write(a.out.join("residuals.csv"), residuals_to_csv(&rows))?;
    println!("level  mesh        residual      relative");
    for r in &rows {
        println!("{:<6} {:<11.4} {:<13.4e} {:<10.4e}", r.level, r.mesh, r.residual, r.relative);
    }
    write_run_cfg(
        &a.out,
        &[
            ("subcommand".into(), "verify-ito".into()),
            (
                "input".into(),
                a.input.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
            ),
            ("synth".into(), a.synth.clone().unwrap_or_default()),
            ("functional".into(), spec.name.clone()),
            ("levels".into(), a.levels.to_string()),
            ("pre_history".into(), pre.to_string()),
        ],
    )?;
    Ok(())
}

fn cmd_arbitrage(a: ArbArgs) -> Result<(), CliError> {
    ensure_out(&a.out)?;
    let caps = load_panel(&a.input)?;
    let spec = a.functional.to_spec();
    let delta_steps: usize =
        spec.params.get("delta").and_then(|v| v.parse().ok()).unwrap_or(0);
    let pre = a.pre_history.unwrap_or(if spec.name.starts_with("delayed") {
        delta_steps
    } else {
        0
    });
    let mu = to_market_weights(&caps, pre)?;
    let f = genlib::build_functional(&spec, &mu)?;
    let aux = aux_path(&mu, f.descriptor().requires_aux)?;
    let certificate = match a.theorem {
        41 => {
            let series =
                additive_strategy(f.as_ref(), &mu, &aux, DomainPolicy::WarnAndContinue)?;
            detect_arbitrage_t41(&series)
        }
        42 => {
            let series =
                additive_strategy(f.as_ref(), &mu, &aux, DomainPolicy::WarnAndContinue)?;
            detect_arbitrage_t42(&series, f.as_ref(), &mu, &aux)?
        }
        43 => {
            let out = detect_arbitrage_t43(
                f.as_ref(),
                &mu,
                &aux,
                a.epsilon,
                a.shift_c,
                DomainPolicy::WarnAndContinue,
                1e-8,
            )?;
            out.certificate
        }
        other => return Err(CliError::config(format!("unknown theorem `{other}`"))),
    };
    fs::write(a.out.join("certificate.txt"), certificate.to_key_value())?;
    match certificate.t_star {
        Some((_, t)) => println!("crossing at t = {t}"),
        None => println!("no crossing"),
    }
    write_run_cfg(
        &a.out,
        &[
            ("subcommand".into(), "arbitrage".into()),
            ("input".into(), a.input.display().to_string()),
            ("functional".into(), spec.name.clone()),
            ("theorem".into(), a.theorem.to_string()),
            ("epsilon".into(), a.epsilon.to_string()),
            ("shift_c".into(), a.shift_c.to_string()),
            ("pre_history".into(), pre.to_string()),
        ],
    )?;
    Ok(())
}

fn cmd_report(a: ReportArgs) -> Result<(), CliError> {
    ensure_out(&a.out)?;
    let text = fs::read_to_string(&a.input)?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    if header != "t,W,Sigma,V,R,G_norm,Gamma_shifted" {
        return Err(CliError::parse(format!("unexpected report header `{header}`")));
    }
    let mut t = Vec::new();
    let mut v = Vec::new();
    let mut g_norm = Vec::new();
    let mut gamma_shifted = Vec::new();
    for (k, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 7 {
            return Err(CliError::parse(format!("bad report row at line {}", k + 2)));
        }
        let parse = |s: &str| -> Result<f64, CliError> {
            s.parse().map_err(|_| CliError::parse(format!("bad number `{s}`")))
        };
        t.push(parse(cells[0])?);
        v.push(parse(cells[3])?);
        g_norm.push(parse(cells[5])?);
        gamma_shifted.push(parse(cells[6])?);
    }
    let mut decomposition = String::from("t,G_norm,Gamma_shifted,V_norm\n");
    for k in 0..t.len() {
        // additive identity: normalized value = G_norm + Gamma_shifted - 1
        decomposition.push_str(&format!(
            "{},{},{},{}\n",
            t[k],
            g_norm[k],
            gamma_shifted[k],
            g_norm[k] + gamma_shifted[k] - 1.0
        ));
    }
    fs::write(a.out.join("decomposition.csv"), decomposition)?;
    let wealth = LineChart {
        title: "Relative value and market".into(),
        x_label: "day".into(),
        y_label: "relative value".into(),
        series: vec![
            Series { name: "V = W / Sigma".into(), points: t.iter().cloned().zip(v).collect() },
            Series { name: "market".into(), points: t.iter().map(|&x| (x, 1.0)).collect() },
        ],
    };
    fs::write(a.out.join("wealth.svg"), wealth.render_svg(900, 520)?)?;
    let deco = LineChart {
        title: "Value decomposition".into(),
        x_label: "day".into(),
        y_label: "normalized level".into(),
        series: vec![
            Series {
                name: "G / G(0)".into(),
                points: t.iter().cloned().zip(g_norm.iter().cloned()).collect(),
            },
            Series {
                name: "1 + Gamma / G(0)".into(),
                points: t.iter().cloned().zip(gamma_shifted.iter().cloned()).collect(),
            },
            Series {
                name: "V / V(0)".into(),
                points: (0..t.len())
                    .map(|k| (t[k], g_norm[k] + gamma_shifted[k] - 1.0))
                    .collect(),
            },
        ],
    };
    fs::write(a.out.join("decomposition.svg"), deco.render_svg(900, 520)?)?;
    write_run_cfg(
        &a.out,
        &[
            ("subcommand".into(), "report".into()),
            ("input".into(), a.input.display().to_string()),
        ],
    )?;
    println!("report artifacts written to {}", a.out.display());
    Ok(())
}
