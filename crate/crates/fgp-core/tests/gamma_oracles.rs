//! Cross-validation of the three Gamma routes and of numeric vs analytic
//! jets across the whole catalog.
//!
//! The closed forms integrate the same discrete increments as the generic
//! expansion, so those two agree to rounding at any volatility. The
//! definition route differs from both by the grid-level change-of-variable
//! residual, which the residual-diagnostic suite bounds separately.

use fgp_core::funcalc::{
    gamma_by_definition_full, gamma_by_ito_expansion, numeric_aux_sensitivity,
    numeric_horizontal_derivatives, numeric_hessian, numeric_vertical_gradient,
    GeneratingFunctional, Hessian, PathState,
};
use fgp_core::genlib::{self, FunctionalSpec};
use fgp_core::marketpath::{aux_path, quadratic_variation, to_market_weights, MarketWeightPath};
use fgp_core::synth::{generate, oracle_gamma, SynthSpec};

const PRE: usize = 8;

fn synth_mu(d: usize, n: usize, seed: u64, sigma: f64) -> MarketWeightPath {
    let caps = generate(&SynthSpec::walk(d, n + PRE, seed, sigma, 0.0, 1.0)).unwrap();
    to_market_weights(&caps, PRE).unwrap()
}

fn admissible_r(d: usize) -> f64 {
    (d as f64 / std::f64::consts::E * 0.9).max(0.5)
}

fn catalog_spec(name: &str, d: usize) -> FunctionalSpec {
    let mut spec = FunctionalSpec::new(name);
    match name {
        "iterated_entropy_min" => spec = spec.with("r", &format!("{}", admissible_r(d))),
        "delayed_difference" => spec = spec.with("delta", "4"),
        "delayed_relative_entropy" => spec = spec.with("delta", "4").with("zeta", "2"),
        "entropy" | "entropy_running_max" => spec = spec.with("p", "1"),
        _ => {}
    }
    spec
}

const NON_MARKET: [&str; 7] = [
    "entropy",
    "entropy_running_max",
    "entropy_running_min",
    "iterated_entropy_min",
    "quadratic_running_max",
    "delayed_difference",
    "delayed_relative_entropy",
];

#[test]
fn closed_form_matches_expansion_at_realistic_volatility() {
    for &d in &[3usize, 8] {
        let mu = synth_mu(d, 1024, 40 + d as u64, 0.01);
        for name in NON_MARKET {
            let f = genlib::build_functional(&catalog_spec(name, d), &mu).unwrap();
            let aux = aux_path(&mu, f.descriptor().requires_aux).unwrap();
            let closed = f.closed_form_gamma(&mu, &aux, None).unwrap().unwrap();
            let exp = gamma_by_ito_expansion(f.as_ref(), &mu, &aux, None).unwrap();
            let scale = 1.0 + closed.values.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
            for j in 0..mu.n() {
                assert!(
                    (closed.values[j] - exp.values[j]).abs() <= 1e-10 * scale,
                    "{name} d={d} at {j}: closed {} vs expansion {}",
                    closed.values[j],
                    exp.values[j]
                );
            }
        }
    }
}

#[test]
fn definition_route_agrees_with_independent_oracle() {
    let mu = synth_mu(5, 1024, 52, 0.015);
    for name in NON_MARKET {
        let f = genlib::build_functional(&catalog_spec(name, 5), &mu).unwrap();
        let aux = aux_path(&mu, f.descriptor().requires_aux).unwrap();
        let engine = gamma_by_definition_full(f.as_ref(), &mu, &aux).unwrap();
        let oracle = oracle_gamma(f.as_ref(), &mu, &aux).unwrap();
        let scale = 1.0 + oracle.values.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
        for j in 0..mu.n() {
            assert!(
                (engine.values[j] - oracle.values[j]).abs() <= 1e-10 * scale,
                "{name} at {j}"
            );
        }
    }
}

#[test]
fn extremum_gammas_telescope_to_extrema_sums() {
    let mu = synth_mu(4, 512, 3, 0.02);
    let mx = aux_path(&mu, fgp_core::marketpath::AuxKind::RunningMax).unwrap();
    let f = genlib::entropy_running_max(1.0).unwrap();
    let closed = f.closed_form_gamma(&mu, &mx, None).unwrap().unwrap();
    for j in 0..mu.n() {
        let direct: f64 = (0..4).map(|i| mx.values.get(i, j) - mx.values.get(i, 0)).sum();
        assert!((closed.values[j] - direct).abs() < 1e-12);
        if j > 0 {
            assert!(closed.values[j] >= closed.values[j - 1] - 1e-15);
        }
    }
    // running-min variant is nonpositive and nonincreasing
    let mn = aux_path(&mu, fgp_core::marketpath::AuxKind::RunningMin).unwrap();
    let g = genlib::entropy_running_min(genlib::PMode::Auto, &mu).unwrap();
    let gmin = g.closed_form_gamma(&mu, &mn, None).unwrap().unwrap();
    for j in 1..mu.n() {
        assert!(gmin.values[j] <= 1e-15);
        assert!(gmin.values[j] <= gmin.values[j - 1] + 1e-15);
    }
    // at the start both are exactly zero
    assert_eq!(closed.values[0], 0.0);
    assert_eq!(gmin.values[0], 0.0);
}

#[test]
fn iterated_gamma_stays_between_kappa_and_zero() {
    for seed in [1u64, 9, 23] {
        let mu = synth_mu(10, 1024, seed, 0.02);
        let f = genlib::iterated_entropy_min(2.0, genlib::PMode::Auto, &mu).unwrap();
        let aux = aux_path(&mu, fgp_core::marketpath::AuxKind::RunningMin).unwrap();
        let kappa = f.kappa(&mu).unwrap();
        assert!(kappa > -1.0 && kappa <= 0.0, "kappa = {kappa}");
        let gd = gamma_by_definition_full(&f, &mu, &aux).unwrap();
        for (j, &v) in gd.values.iter().enumerate() {
            assert!(v <= 1e-12, "gamma positive at {j}");
            assert!(v >= kappa - 1e-12, "gamma below kappa at {j}: {v} < {kappa}");
        }
    }
}

#[test]
fn quadratic_closed_form_relates_to_squared_extrema_difference() {
    // the Stieltjes sum exceeds the squared-difference simplification by
    // exactly half the sum of squared extremum increments
    let mu = synth_mu(5, 512, 14, 0.02);
    let aux = aux_path(&mu, fgp_core::marketpath::AuxKind::RunningMax).unwrap();
    let p = 0.8;
    let f = genlib::quadratic_running_max(None, p).unwrap();
    let closed = f.closed_form_gamma(&mu, &aux, None).unwrap().unwrap();
    let qv = quadratic_variation(&mu);
    let n = mu.n();
    let mut sq_incr = 0.0;
    for j in 1..n {
        for i in 0..5 {
            let da = aux.increments.get(i, j);
            sq_incr += da * da;
        }
    }
    let last = n - 1;
    let mut simplified = 0.0;
    for i in 0..5 {
        let a_t = aux.values.get(i, last);
        let a_0 = aux.values.get(i, 0);
        simplified += 0.5 * p * (a_t * a_t - a_0 * a_0);
        simplified += qv.cum.get(i, last);
    }
    let identity_gap = closed.values[last] - simplified - 0.5 * p * sq_incr;
    assert!(identity_gap.abs() < 1e-12, "identity gap {identity_gap}");
}

#[test]
fn numeric_jets_match_analytic_across_catalog() {
    let mu = synth_mu(4, 64, 6, 0.01);
    for name in NON_MARKET {
        let f = genlib::build_functional(&catalog_spec(name, 4), &mu).unwrap();
        let aux = aux_path(&mu, f.descriptor().requires_aux).unwrap();
        for &t in &[5usize, 20, 50] {
            let s = PathState::at(&mu, &aux, t);
            let mut analytic = vec![0.0; 4];
            f.vertical_gradient(&s, &mut analytic).unwrap();
            let numeric =
                numeric_vertical_gradient(f.as_ref(), &mu, &aux, t, 1e-5).unwrap();
            for i in 0..4 {
                assert!(
                    (numeric[i] - analytic[i]).abs() < 1e-6,
                    "{name} grad[{i}] at {t}: {} vs {}",
                    numeric[i],
                    analytic[i]
                );
            }
            let hess_a = f.vertical_hessian(&s).unwrap();
            let hess_n = numeric_hessian(f.as_ref(), &mu, &aux, t, 1e-5).unwrap();
            for i in 0..4 {
                for j in 0..4 {
                    assert!(
                        (hess_n.get(i, j) - hess_a.get(i, j)).abs() < 1e-4,
                        "{name} hess[{i}][{j}] at {t}"
                    );
                }
            }
        }
    }
}

#[test]
fn quadratic_hessian_is_minus_two_on_the_diagonal() {
    let mu = synth_mu(3, 32, 2, 0.01);
    let aux = aux_path(&mu, fgp_core::marketpath::AuxKind::RunningMax).unwrap();
    let f = genlib::quadratic_running_max(None, 0.5).unwrap();
    let h = numeric_hessian(&f, &mu, &aux, 10, 1e-4).unwrap();
    for i in 0..3 {
        assert!((h.get(i, i) + 2.0).abs() < 1e-5);
        for j in 0..3 {
            if i != j {
                assert!(h.get(i, j).abs() < 1e-5);
            }
        }
    }
    match f.vertical_hessian(&PathState::at(&mu, &aux, 10)).unwrap() {
        Hessian::Diagonal(v) => assert!(v.iter().all(|&x| x == -2.0)),
        other => panic!("unexpected hessian shape {other:?}"),
    }
}

#[test]
fn aux_sensitivity_matches_analytic_horizontal() {
    // the limit evaluator reproduces the analytic horizontal derivatives on
    // entries that read the companion path through its current value
    let mu = synth_mu(4, 256, 19, 0.01);
    for name in ["entropy_running_max", "entropy_running_min", "quadratic_running_max"] {
        let f = genlib::build_functional(&catalog_spec(name, 4), &mu).unwrap();
        let aux = aux_path(&mu, f.descriptor().requires_aux).unwrap();
        for t in [3usize, 64, 200] {
            let s = PathState::at(&mu, &aux, t);
            let mut analytic = vec![0.0; 5];
            f.horizontal(&s, &mut analytic).unwrap();
            let numeric = numeric_aux_sensitivity(f.as_ref(), &mu, &aux, t, 1e-5).unwrap();
            for k in 1..5 {
                assert!(
                    (numeric[k] - analytic[k]).abs() < 1e-6,
                    "{name} D[{k}] at {t}: {} vs {}",
                    numeric[k],
                    analytic[k]
                );
            }
        }
    }
}

#[test]
fn grid_quotient_horizontal_is_a_coarse_approximation() {
    // the definitional left-limit quotient carries O(step) error on curved
    // entries; check it lands in the right neighbourhood where the
    // companion path moves, and honours the 0/0 convention elsewhere
    let mu = synth_mu(3, 512, 33, 0.002);
    let f = genlib::entropy_running_max(1.0).unwrap();
    let aux = aux_path(&mu, fgp_core::marketpath::AuxKind::RunningMax).unwrap();
    let mut checked = 0;
    for t in 1..mu.n() {
        let q = numeric_horizontal_derivatives(&f, &mu, &aux, t, 1).unwrap();
        let s = PathState::at(&mu, &aux, t);
        let mut analytic = vec![0.0; 4];
        f.horizontal(&s, &mut analytic).unwrap();
        for k in 1..4 {
            if aux.increments.get(k - 1, t) != 0.0 {
                assert!(
                    (q[k] - analytic[k]).abs() < 0.05,
                    "grid quotient far from analytic at t={t}, k={k}: {} vs {}",
                    q[k],
                    analytic[k]
                );
                checked += 1;
            } else {
                assert_eq!(q[k], 0.0);
            }
        }
    }
    assert!(checked > 10, "path produced too few extremum moves");
}
