//! File-format contracts: the capitalization CSV dialect, the long-format
//! exports, the certificate record, and SVG emission.

use fgp_core::backtest::{
    decomposition_report, emit_svg, run_backtest, BacktestConfig, ChartKind,
};
use fgp_core::funcalc::residuals_to_csv;
use fgp_core::genlib;
use fgp_core::marketpath::{
    covariation, load_capitalizations, to_market_weights, CsvSpec, RefiningPartitionFamily,
};
use fgp_core::strategy::{detect_arbitrage_t41, StrategyMode};
use fgp_core::synth::{generate, to_csv, SynthSpec};

#[test]
fn synthetic_panel_round_trips_through_csv() {
    let caps = generate(&SynthSpec::walk(3, 16, 99, 0.02, 0.001, 1.0)).unwrap();
    let csv = to_csv(&caps);
    assert!(csv.starts_with("date,asset_0,asset_1,asset_2\n"));
    let reloaded = load_capitalizations(csv.as_bytes(), &CsvSpec::default()).unwrap();
    assert_eq!(reloaded.d(), 3);
    assert_eq!(reloaded.n(), 16);
    for j in 0..16 {
        for i in 0..3 {
            // decimal text round-trip of f64 is exact with Rust's formatter
            assert_eq!(reloaded.caps.get(i, j), caps.caps.get(i, j));
        }
    }
}

#[test]
fn covariation_csv_is_long_format() {
    let caps = generate(&SynthSpec::walk(2, 8, 1, 0.02, 0.0, 1.0)).unwrap();
    let mu = to_market_weights(&caps, 0).unwrap();
    let parts = RefiningPartitionFamily::dyadic(&mu.grid, 2);
    let covs = covariation(&mu, &parts).unwrap();
    let csv = covs.last().unwrap().to_csv();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "t,i,j,value");
    // d^2 rows per grid point
    assert_eq!(csv.lines().count(), 1 + 8 * 4);
    let first = lines.next().unwrap();
    assert!(first.starts_with("0,0,0,"));
}

#[test]
fn report_and_decomposition_csv_headers() {
    let caps = generate(&SynthSpec::walk(4, 64, 7, 0.02, 0.0, 1.0)).unwrap();
    let f = genlib::shifted_entropy(1.0).unwrap();
    let report = run_backtest(&caps, &f, &BacktestConfig::default()).unwrap();
    let csv = report.to_csv();
    assert!(csv.starts_with("t,W,Sigma,V,R,G_norm,Gamma_shifted\n"));
    assert_eq!(csv.lines().count(), 1 + 64);
    let table = decomposition_report(&report);
    let dcsv = table.to_csv();
    assert!(dcsv.starts_with("t,G_norm,Gamma_shifted,V_norm\n"));
    assert_eq!(dcsv.lines().count(), 1 + 64);
}

#[test]
fn residual_table_csv() {
    let rows = vec![fgp_core::funcalc::LevelResidual {
        level: 0,
        mesh: 4.0,
        residual: 1e-5,
        relative: 1e-6,
    }];
    let csv = residuals_to_csv(&rows);
    assert!(csv.starts_with("level,mesh,residual\n"));
    assert!(csv.contains("0,4,0.00001"));
}

#[test]
fn certificate_key_value_record() {
    let caps = generate(&SynthSpec::walk(3, 64, 5, 0.02, 0.0, 1.0)).unwrap();
    let mu = to_market_weights(&caps, 0).unwrap();
    let aux = fgp_core::marketpath::AuxPath::none(&mu.grid);
    let f = genlib::shifted_entropy(1.0).unwrap();
    let series = fgp_core::strategy::additive_strategy(
        &f,
        &mu,
        &aux,
        fgp_core::strategy::DomainPolicy::Halt,
    )
    .unwrap();
    let cert = detect_arbitrage_t41(&series);
    let text = cert.to_key_value();
    assert!(text.starts_with("theorem=T41_GammaNondecreasing\n"));
    assert!(text.contains("t_star="));
    assert!(text.contains("threshold="));
    assert!(text.contains("monotonicity_check="));
    assert!(text.contains("g0="));
}

#[test]
fn svg_charts_render_for_both_kinds() {
    let caps = generate(&SynthSpec::walk(3, 128, 3, 0.02, 0.0, 1.0)).unwrap();
    let f = genlib::entropy_running_max(1.0).unwrap();
    let cfg = BacktestConfig { mode: StrategyMode::Additive, ..BacktestConfig::default() };
    let report = run_backtest(&caps, &f, &cfg).unwrap();
    let wealth = emit_svg(&report, ChartKind::Wealth).unwrap();
    assert!(wealth.contains("<svg") && wealth.ends_with("</svg>\n"));
    let deco = emit_svg(&report, ChartKind::Decomposition).unwrap();
    assert_eq!(deco.matches("<path").count(), 3);
}

#[test]
fn large_series_svg_is_fast_and_small() {
    let caps = generate(&SynthSpec::walk(2, 4528, 13, 0.015, 0.0, 1.0)).unwrap();
    let f = genlib::shifted_entropy(1.0).unwrap();
    let report = run_backtest(&caps, &f, &BacktestConfig::default()).unwrap();
    let started = std::time::Instant::now();
    let svg = emit_svg(&report, ChartKind::Wealth).unwrap();
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 1.0, "render took {elapsed:?}");
    assert!(svg.len() < 2_000_000, "svg is {} bytes", svg.len());
}
