//! Turn a regular functional plus paths into additive or multiplicative
//! trading strategies, their value and weight series, and arbitrage
//! certificates.
//!
//! The value series is built from the definition-route Gamma, which is the
//! one route that makes the discrete self-financing identity
//! `V(t) - V(0) = sum phi . dmu` hold exactly at grid level; closed-form and
//! expansion Gammas remain available through `funcalc`/`genlib` and are
//! cross-checked in the test suites.

use thiserror::Error;

use crate::funcalc::{
    gamma_by_definition_full, DomainEvent, FuncError, FunctionalDescriptor, GammaSeries,
    GeneratingFunctional, Hessian, PathState,
};
use crate::marketpath::{AuxPath, MarketWeightPath, TimeGrid};
use crate::mat::Matrix;

#[derive(Debug, Error)]
pub enum StrategyError {
    #[error(transparent)]
    Func(#[from] FuncError),
    #[error("domain violation (halt policy): {0}")]
    DomainHalt(DomainEvent),
    #[error("functional provides no lower-bound companion")]
    MissingLowerBoundCompanion,
    #[error("cannot normalize: initial functional value {g0} is negative")]
    NormalizationImpossible { g0: f64 },
}

/// What to do when a runtime domain monitor trips.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DomainPolicy {
    Halt,
    WarnAndContinue,
}

/// Generation mode of a strategy series.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StrategyMode {
    Additive,
    Multiplicative,
}

/// Per-time holdings, value, Gamma and portfolio weights of a generated
/// strategy, plus the self-financibility and balance defects.
#[derive(Debug, Clone)]
pub struct StrategySeries {
    pub mode: StrategyMode,
    pub grid: TimeGrid,
    /// Functional value series G(t).
    pub g: Vec<f64>,
    /// d x N holdings (phi or psi).
    pub holdings: Matrix,
    /// d x N vertical gradients (theta).
    pub theta: Matrix,
    /// Value series V(t); equals G + Gamma (additive) or G K (multiplicative).
    pub value: Vec<f64>,
    pub gamma: GammaSeries,
    /// d x N portfolio weights (pi or Pi); NaN where undefined.
    pub weights: Matrix,
    /// Grid indices where V <= 0 left the weights undefined.
    pub undefined_weight_times: Vec<usize>,
    /// Defect of self-financibility Q at each time.
    pub defect_q: Vec<f64>,
    /// Defect of balance at time zero.
    pub defect_c0: f64,
    /// Domain monitor events recorded under the warn-and-continue policy.
    pub violations: Vec<DomainEvent>,
    pub descriptor: FunctionalDescriptor,
}

impl StrategySeries {
    pub fn d(&self) -> usize {
        self.holdings.rows()
    }

    pub fn n(&self) -> usize {
        self.value.len()
    }

    /// Long-format CSV `t,V,G,Gamma,Q,asset_id,holding,weight`.
    pub fn to_csv(&self, asset_ids: &[String]) -> String {
        let mut out = String::from("t,V,G,Gamma,Q,asset_id,holding,weight\n");
        for j in 0..self.n() {
            for i in 0..self.d() {
                let w = self.weights.get(i, j);
                out.push_str(&format!(
                    "{},{},{},{},{},{},{},{}\n",
                    self.grid.t(j),
                    self.value[j],
                    self.g[j],
                    self.gamma.values[j],
                    self.defect_q[j],
                    asset_ids.get(i).map(String::as_str).unwrap_or(""),
                    self.holdings.get(i, j),
                    if w.is_nan() { String::new() } else { format!("{w}") },
                ));
            }
        }
        out
    }
}

fn run_domain_checks(
    f: &dyn GeneratingFunctional,
    mu: &MarketWeightPath,
    aux: &AuxPath,
    policy: DomainPolicy,
) -> Result<Vec<DomainEvent>, StrategyError> {
    let mut events = Vec::new();
    for j in 0..mu.n() {
        if let Err(ev) = f.domain_check(&PathState::at(mu, aux, j)) {
            match policy {
                DomainPolicy::Halt => return Err(StrategyError::DomainHalt(ev)),
                DomainPolicy::WarnAndContinue => events.push(ev),
            }
        }
    }
    Ok(events)
}

/// Additively generated strategy: `theta_i = dG_i`,
/// `phi_i = theta_i + Gamma + G - sum_j mu_j theta_j`, value `V = G + Gamma`.
pub fn additive_strategy(
    f: &dyn GeneratingFunctional,
    mu: &MarketWeightPath,
    aux: &AuxPath,
    policy: DomainPolicy,
) -> Result<StrategySeries, StrategyError> {
    crate::funcalc::ensure_aux_compatible(f, aux)?;
    let d = mu.d();
    let n = mu.n();
    let violations = run_domain_checks(f, mu, aux, policy)?;

    let mut g = vec![0.0; n];
    let mut theta = Matrix::zeros(d, n);
    for j in 0..n {
        let s = PathState::at(mu, aux, j);
        g[j] = f.value(&s)?;
        f.vertical_gradient(&s, theta.col_mut(j))?;
    }

    let gamma = gamma_by_definition_full(f, mu, aux)?;

    let mut value = vec![0.0; n];
    let mut holdings = Matrix::zeros(d, n);
    let mut weights = Matrix::zeros(d, n);
    let mut defect_q = vec![0.0; n];
    let mut undefined = Vec::new();

    let v_theta_0: f64 = (0..d).map(|i| theta.get(i, 0) * mu.weight(i, 0)).sum();
    let defect_c0 = v_theta_0 - g[0];

    let mut ito = 0.0;
    for j in 0..n {
        if j > 0 {
            let prev = mu.col(j - 1);
            let cur = mu.col(j);
            let th = theta.col(j - 1);
            let mut step = 0.0;
            for i in 0..d {
                step += th[i] * (cur[i] - prev[i]);
            }
            ito += step;
        }
        value[j] = g[j] + gamma.values[j];
        let muj = mu.col(j);
        let th = theta.col(j);
        let mut v_theta = 0.0;
        for i in 0..d {
            v_theta += th[i] * muj[i];
        }
        defect_q[j] = v_theta - v_theta_0 - ito;
        let excess_base = value[j] - v_theta; // V - sum mu theta
        let hcol = holdings.col_mut(j);
        for i in 0..d {
            hcol[i] = th[i] + excess_base;
        }
        let defined = value[j] > 0.0;
        if !defined {
            undefined.push(j);
        }
        let wcol = weights.col_mut(j);
        for i in 0..d {
            wcol[i] = if defined { hcol[i] * muj[i] / value[j] } else { f64::NAN };
        }
    }

    Ok(StrategySeries {
        mode: StrategyMode::Additive,
        grid: mu.grid.clone(),
        g,
        holdings,
        theta,
        value,
        gamma,
        weights,
        undefined_weight_times: undefined,
        defect_q,
        defect_c0,
        violations,
        descriptor: f.descriptor(),
    })
}

/// Multiplicatively generated strategy: value `V = G K` with
/// `K = exp(int dGamma / G)` discretized left-point, holdings
/// `psi_i = V (1 + (theta_i - sum mu theta)/G)`.
///
/// Requires G bounded away from zero along the path (`g_floor`).
pub fn multiplicative_strategy(
    f: &dyn GeneratingFunctional,
    mu: &MarketWeightPath,
    aux: &AuxPath,
    policy: DomainPolicy,
    g_floor: f64,
) -> Result<StrategySeries, StrategyError> {
    crate::funcalc::ensure_aux_compatible(f, aux)?;
    let d = mu.d();
    let n = mu.n();
    let violations = run_domain_checks(f, mu, aux, policy)?;

    let mut g = vec![0.0; n];
    let mut theta = Matrix::zeros(d, n);
    for j in 0..n {
        let s = PathState::at(mu, aux, j);
        g[j] = f.value(&s)?;
        if g[j] < g_floor {
            return Err(StrategyError::Func(FuncError::Domain(
                DomainEvent::GNotBoundedAwayFromZero { t_idx: j, value: g[j] },
            )));
        }
        f.vertical_gradient(&s, theta.col_mut(j))?;
    }

    let gamma = gamma_by_definition_full(f, mu, aux)?;

    let mut value = vec![0.0; n];
    let mut holdings = Matrix::zeros(d, n);
    let mut weights = Matrix::zeros(d, n);
    let mut defect_q = vec![0.0; n];

    let v_eta_0: f64 = (0..d).map(|i| theta.get(i, 0) * mu.weight(i, 0)).sum();
    let defect_c0 = v_eta_0 - g[0];

    let mut k = 1.0;
    let mut ito_eta = 0.0;
    for j in 0..n {
        if j > 0 {
            let prev = mu.col(j - 1);
            let cur = mu.col(j);
            let th = theta.col(j - 1);
            let mut step = 0.0;
            for i in 0..d {
                step += th[i] * (cur[i] - prev[i]);
            }
            // eta = theta K, with K at the left endpoint
            ito_eta += k * step;
            let dgamma = gamma.values[j] - gamma.values[j - 1];
            k *= (dgamma / g[j - 1]).exp();
        }
        value[j] = g[j] * k;
        let muj = mu.col(j);
        let th = theta.col(j);
        let mut sum_mu_theta = 0.0;
        for i in 0..d {
            sum_mu_theta += th[i] * muj[i];
        }
        defect_q[j] = k * sum_mu_theta - v_eta_0 - ito_eta;
        let hcol = holdings.col_mut(j);
        let wcol = weights.col_mut(j);
        for i in 0..d {
            let tilt = 1.0 + (th[i] - sum_mu_theta) / g[j];
            hcol[i] = value[j] * tilt;
            wcol[i] = muj[i] * tilt;
        }
    }

    Ok(StrategySeries {
        mode: StrategyMode::Multiplicative,
        grid: mu.grid.clone(),
        g,
        holdings,
        theta,
        value,
        gamma,
        weights,
        undefined_weight_times: Vec::new(),
        defect_q,
        defect_c0,
        violations,
        descriptor: f.descriptor(),
    })
}

// ---------------------------------------------------------------------------
// arbitrage certificates
// ---------------------------------------------------------------------------

/// Which sufficient condition a certificate refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Theorem {
    /// Nondecreasing Gamma crossing the initial functional value.
    T41GammaNondecreasing,
    /// Lower-bounded Gamma with a nondecreasing companion below G.
    T42LowerBound,
    /// Multiplicative threshold on the normalized Gamma.
    T43Multiplicative,
}

impl std::fmt::Display for Theorem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Theorem::T41GammaNondecreasing => write!(f, "T41_GammaNondecreasing"),
            Theorem::T42LowerBound => write!(f, "T42_LowerBound"),
            Theorem::T43Multiplicative => write!(f, "T43_Multiplicative"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MonotonicityCheck {
    pub pass: bool,
    pub max_violation: f64,
}

/// Outcome of scanning one sufficient condition along a path. `t_star` is
/// present only when all prerequisite checks pass and the condition holds
/// at some grid time.
#[derive(Debug, Clone)]
pub struct ArbitrageCertificate {
    pub theorem: Theorem,
    pub t_star: Option<(usize, f64)>,
    pub threshold: f64,
    pub witness: Vec<(String, f64)>,
    pub monotonicity: MonotonicityCheck,
}

impl ArbitrageCertificate {
    /// Single-record key=value text.
    pub fn to_key_value(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("theorem={}\n", self.theorem));
        match self.t_star {
            Some((idx, t)) => {
                out.push_str(&format!("t_star={t}\n"));
                out.push_str(&format!("t_star_index={idx}\n"));
            }
            None => out.push_str("t_star=none\n"),
        }
        out.push_str(&format!("threshold={}\n", self.threshold));
        out.push_str(&format!(
            "monotonicity_check={}\n",
            if self.monotonicity.pass { "pass" } else { "fail" }
        ));
        out.push_str(&format!("max_violation={}\n", self.monotonicity.max_violation));
        for (k, v) in &self.witness {
            out.push_str(&format!("{k}={v}\n"));
        }
        out
    }
}

fn monotone_tolerance(values: &[f64]) -> f64 {
    let max_abs = values.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    1e-12 * (1.0 + max_abs)
}

fn nondecreasing_check(values: &[f64]) -> MonotonicityCheck {
    let tol = monotone_tolerance(values);
    let mut max_violation = 0.0f64;
    for w in values.windows(2) {
        let drop = w[0] - w[1];
        if drop > max_violation {
            max_violation = drop;
        }
    }
    MonotonicityCheck { pass: max_violation <= tol, max_violation }
}

/// Nondecreasing-Gamma condition on an additively generated series:
/// `t_star` is the first grid time with `Gamma(t) > G(0)`.
pub fn detect_arbitrage_t41(series: &StrategySeries) -> ArbitrageCertificate {
    let gamma = &series.gamma.values;
    let g0 = series.g[0];
    let mono = nondecreasing_check(gamma);
    let t_star = if mono.pass {
        gamma
            .iter()
            .position(|&v| v > g0)
            .map(|idx| (idx, series.grid.t(idx)))
    } else {
        None
    };
    let mut witness = vec![("g0".to_string(), g0)];
    if let Some((idx, _)) = t_star {
        witness.push(("gamma_at_t_star".to_string(), gamma[idx]));
    }
    witness.push((
        "gamma_final".to_string(),
        *gamma.last().expect("nonempty series"),
    ));
    ArbitrageCertificate {
        theorem: Theorem::T41GammaNondecreasing,
        t_star,
        threshold: g0,
        witness,
        monotonicity: mono,
    }
}

/// Lower-bound condition: prerequisites are `V >= 0` pathwise, a
/// nondecreasing companion `F <= G`, and `Gamma >= kappa`; `t_star` is the
/// first time with `F(t) > G(0) - kappa`.
pub fn detect_arbitrage_t42(
    series: &StrategySeries,
    f: &dyn GeneratingFunctional,
    mu: &MarketWeightPath,
    aux: &AuxPath,
) -> Result<ArbitrageCertificate, StrategyError> {
    let n = series.n();
    let kappa = f.kappa(mu).ok_or(StrategyError::MissingLowerBoundCompanion)?;
    let mut lower = Vec::with_capacity(n);
    for j in 0..n {
        let s = PathState::at(mu, aux, j);
        lower.push(
            f.lower_bound_value(&s).ok_or(StrategyError::MissingLowerBoundCompanion)?,
        );
    }

    let tol_v = monotone_tolerance(&series.value);
    let v_min = series.value.iter().cloned().fold(f64::MAX, f64::min);
    let prereq_value = v_min >= -tol_v;

    let mono = nondecreasing_check(&lower);
    let tol_g = monotone_tolerance(&series.g);
    let prereq_dominated = series
        .g
        .iter()
        .zip(&lower)
        .all(|(&g, &fl)| g >= fl - tol_g);

    let gamma_min = series.gamma.values.iter().cloned().fold(f64::MAX, f64::min);
    let tol_k = monotone_tolerance(&series.gamma.values);
    let prereq_kappa = gamma_min >= kappa - tol_k;

    let threshold = series.g[0] - kappa;
    let prereqs = prereq_value && mono.pass && prereq_dominated && prereq_kappa;
    let t_star = if prereqs {
        lower
            .iter()
            .position(|&fl| fl > threshold)
            .map(|idx| (idx, series.grid.t(idx)))
    } else {
        None
    };

    let mut witness = vec![
        ("g0".to_string(), series.g[0]),
        ("kappa".to_string(), kappa),
        ("v_min".to_string(), v_min),
        ("gamma_min".to_string(), gamma_min),
        ("f_final".to_string(), *lower.last().expect("nonempty")),
        ("prereq_value_nonnegative".to_string(), if prereq_value { 1.0 } else { 0.0 }),
        ("prereq_g_dominates_f".to_string(), if prereq_dominated { 1.0 } else { 0.0 }),
        ("prereq_gamma_above_kappa".to_string(), if prereq_kappa { 1.0 } else { 0.0 }),
    ];
    if let Some((idx, _)) = t_star {
        witness.push(("f_at_t_star".to_string(), lower[idx]));
    }
    Ok(ArbitrageCertificate {
        theorem: Theorem::T42LowerBound,
        t_star,
        threshold,
        witness,
        monotonicity: mono,
    })
}

/// Affine rescaling `a G + b` of a functional; jets scale linearly.
pub struct AffineOf<'a> {
    pub inner: &'a dyn GeneratingFunctional,
    pub scale: f64,
    pub offset: f64,
}

impl<'a> GeneratingFunctional for AffineOf<'a> {
    fn descriptor(&self) -> FunctionalDescriptor {
        let mut d = self.inner.descriptor();
        d.params.push(("scale", self.scale));
        d.params.push(("offset", self.offset));
        d
    }

    fn value(&self, s: &PathState) -> Result<f64, FuncError> {
        Ok(self.scale * self.inner.value(s)? + self.offset)
    }

    fn vertical_gradient(&self, s: &PathState, out: &mut [f64]) -> Result<(), FuncError> {
        self.inner.vertical_gradient(s, out)?;
        for v in out.iter_mut() {
            *v *= self.scale;
        }
        Ok(())
    }

    fn vertical_hessian(&self, s: &PathState) -> Result<Hessian, FuncError> {
        Ok(match self.inner.vertical_hessian(s)? {
            Hessian::Zero => Hessian::Zero,
            Hessian::Diagonal(mut v) => {
                for x in &mut v {
                    *x *= self.scale;
                }
                Hessian::Diagonal(v)
            }
            Hessian::Dense { d, mut data } => {
                for x in &mut data {
                    *x *= self.scale;
                }
                Hessian::Dense { d, data }
            }
        })
    }

    fn horizontal(&self, s: &PathState, out: &mut [f64]) -> Result<(), FuncError> {
        self.inner.horizontal(s, out)?;
        for v in out.iter_mut() {
            *v *= self.scale;
        }
        Ok(())
    }

    fn domain_check(&self, s: &PathState) -> Result<(), DomainEvent> {
        self.inner.domain_check(s)
    }
}

/// Outcome of the multiplicative-threshold scan: the certificate, the
/// strategy generated from the c-shifted normalized functional, and the
/// residual of the identity `(1 + c) Gamma_shifted = Gamma_normalized`.
pub struct MultiplicativeArbitrage {
    pub certificate: ArbitrageCertificate,
    pub shifted_series: StrategySeries,
    pub normalized_gamma: GammaSeries,
    pub gamma_identity_residual: f64,
}

/// Multiplicative-threshold condition: normalize so `G(0) = 1` (divide by
/// `G(0)` when positive, shift by one when zero), scan for the first time
/// `Gamma(t) > 1 + epsilon`, and build the strategy multiplicatively
/// generated by `(G + c) / (1 + c)`.
pub fn detect_arbitrage_t43(
    f: &dyn GeneratingFunctional,
    mu: &MarketWeightPath,
    aux: &AuxPath,
    epsilon: f64,
    c: f64,
    policy: DomainPolicy,
    g_floor: f64,
) -> Result<MultiplicativeArbitrage, StrategyError> {
    let g0 = f.value(&PathState::at(mu, aux, 0))?;
    let normalized = if g0 > 0.0 {
        AffineOf { inner: f, scale: 1.0 / g0, offset: 0.0 }
    } else if g0 == 0.0 {
        AffineOf { inner: f, scale: 1.0, offset: 1.0 }
    } else {
        return Err(StrategyError::NormalizationImpossible { g0 });
    };

    let normalized_gamma = gamma_by_definition_full(&normalized, mu, aux)?;
    let mono = nondecreasing_check(&normalized_gamma.values);
    let threshold = 1.0 + epsilon;
    let t_star = normalized_gamma
        .values
        .iter()
        .position(|&v| v > threshold)
        .map(|idx| (idx, mu.grid.t(idx)));

    let shifted = AffineOf {
        inner: &normalized,
        scale: 1.0 / (1.0 + c),
        offset: c / (1.0 + c),
    };
    let shifted_series = multiplicative_strategy(&shifted, mu, aux, policy, g_floor)?;

    let mut residual = 0.0f64;
    for j in 0..mu.n() {
        let lhs = shifted_series.gamma.values[j] * (1.0 + c);
        residual = residual.max((lhs - normalized_gamma.values[j]).abs());
    }

    let witness = vec![
        ("epsilon".to_string(), epsilon),
        ("c".to_string(), c),
        ("g0".to_string(), g0),
        (
            "gamma_norm_final".to_string(),
            *normalized_gamma.values.last().expect("nonempty"),
        ),
        ("gamma_identity_residual".to_string(), residual),
    ];
    let certificate = ArbitrageCertificate {
        theorem: Theorem::T43Multiplicative,
        t_star,
        threshold,
        witness,
        monotonicity: mono,
    };
    Ok(MultiplicativeArbitrage {
        certificate,
        shifted_series,
        normalized_gamma,
        gamma_identity_residual: residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genlib;
    use crate::marketpath::{aux_path, to_market_weights, AuxKind, CapitalizationPath};
    use crate::synth::{generate, SynthSpec};

    fn synth_mu(d: usize, n: usize, seed: u64, sigma: f64) -> MarketWeightPath {
        let caps = generate(&SynthSpec::walk(d, n, seed, sigma, 0.0, 1.0)).unwrap();
        to_market_weights(&caps, 0).unwrap()
    }

    fn constant_mu(d: usize, n: usize) -> MarketWeightPath {
        let cols = vec![(1..=d).map(|k| k as f64).collect::<Vec<_>>(); n];
        let caps = CapitalizationPath::from_parts(
            crate::marketpath::TimeGrid::unit(n),
            crate::mat::Matrix::from_columns(d, &cols),
            (0..d).map(|i| format!("a{i}")).collect(),
        )
        .unwrap();
        to_market_weights(&caps, 0).unwrap()
    }

    #[test]
    fn market_functional_is_a_fixed_point() {
        let mu = synth_mu(4, 256, 21, 0.01);
        let aux = AuxPath::none(&mu.grid);
        let f = genlib::market();
        let add = additive_strategy(&f, &mu, &aux, DomainPolicy::Halt).unwrap();
        let mul = multiplicative_strategy(&f, &mu, &aux, DomainPolicy::Halt, 1e-8).unwrap();
        for j in 0..mu.n() {
            assert!((add.value[j] - 1.0).abs() < 1e-12);
            assert!((mul.value[j] - 1.0).abs() < 1e-12);
            for i in 0..4 {
                assert!((add.weights.get(i, j) - mu.weight(i, j)).abs() < 1e-12);
                assert!((mul.weights.get(i, j) - mu.weight(i, j)).abs() < 1e-12);
                assert!((add.holdings.get(i, j) - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn additive_value_is_g_plus_gamma_bitwise() {
        let mu = synth_mu(5, 128, 3, 0.015);
        let aux = AuxPath::none(&mu.grid);
        let f = genlib::shifted_entropy(1.0).unwrap();
        let s = additive_strategy(&f, &mu, &aux, DomainPolicy::Halt).unwrap();
        for j in 0..s.n() {
            assert_eq!(s.value[j], s.g[j] + s.gamma.values[j]);
        }
        assert_eq!(s.value[0], s.g[0]);
    }

    #[test]
    fn discrete_self_financing_holds_exactly() {
        let mu = synth_mu(5, 512, 8, 0.02);
        let aux = aux_path(&mu, AuxKind::RunningMax).unwrap();
        let f = genlib::entropy_running_max(2.0).unwrap();
        let s = additive_strategy(&f, &mu, &aux, DomainPolicy::Halt).unwrap();
        let mut ito = 0.0;
        let scale = s.value.iter().fold(1.0f64, |a, &v| a.max(v.abs()));
        for j in 1..s.n() {
            let prev = mu.col(j - 1);
            let cur = mu.col(j);
            for i in 0..mu.d() {
                ito += s.holdings.get(i, j - 1) * (cur[i] - prev[i]);
            }
            assert!(
                ((s.value[j] - s.value[0]) - ito).abs() <= 1e-12 * scale,
                "self-financing defect at {j}"
            );
        }
    }

    #[test]
    fn weight_identity_against_direct_formula() {
        let mu = synth_mu(4, 200, 5, 0.02);
        let aux = AuxPath::none(&mu.grid);
        let f = genlib::shifted_entropy(1.0).unwrap();
        let s = additive_strategy(&f, &mu, &aux, DomainPolicy::Halt).unwrap();
        for j in 0..s.n() {
            let muj = mu.col(j);
            let th = s.theta.col(j);
            let sum_mu_theta: f64 = (0..4).map(|i| muj[i] * th[i]).sum();
            let mut total = 0.0;
            for i in 0..4 {
                let direct = muj[i] * (1.0 + (th[i] - sum_mu_theta) / s.value[j]);
                assert!((s.weights.get(i, j) - direct).abs() < 1e-12);
                total += s.weights.get(i, j);
            }
            assert!((total - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn multiplicative_with_zero_gamma_equals_g() {
        // constant path: Gamma = 0 so V = G pointwise
        let mu = constant_mu(3, 32);
        let aux = AuxPath::none(&mu.grid);
        let f = genlib::shifted_entropy(1.0).unwrap();
        let s = multiplicative_strategy(&f, &mu, &aux, DomainPolicy::Halt, 1e-8).unwrap();
        for j in 0..s.n() {
            assert!((s.value[j] - s.g[j]).abs() < 1e-14);
            assert!(s.value[j] > 0.0);
        }
    }

    #[test]
    fn balanced_functional_collapses_psi_to_scaled_theta() {
        let mu = synth_mu(4, 128, 13, 0.02);
        let aux = AuxPath::none(&mu.grid);
        let f = genlib::market();
        let s = multiplicative_strategy(&f, &mu, &aux, DomainPolicy::Halt, 1e-8).unwrap();
        // balanced: psi_i = theta_i K, and V = G K with G = 1
        for j in 0..s.n() {
            for i in 0..4 {
                assert!((s.holdings.get(i, j) - s.value[j] / s.g[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mismatched_companion_path_is_rejected() {
        let mu = synth_mu(3, 32, 1, 0.01);
        let aux = AuxPath::none(&mu.grid);
        let f = genlib::entropy_running_max(1.0).unwrap();
        let err = additive_strategy(&f, &mu, &aux, DomainPolicy::Halt).unwrap_err();
        assert!(matches!(
            err,
            StrategyError::Func(crate::funcalc::FuncError::MissingAux(_))
        ));
    }

    #[test]
    fn t41_constant_path_yields_no_certificate() {
        let mu = constant_mu(3, 16);
        let aux = AuxPath::none(&mu.grid);
        let f = genlib::shifted_entropy(1.0).unwrap();
        let s = additive_strategy(&f, &mu, &aux, DomainPolicy::Halt).unwrap();
        let cert = detect_arbitrage_t41(&s);
        assert!(cert.monotonicity.pass);
        assert!(cert.t_star.is_none());
    }

    #[test]
    fn t41_detects_injected_monotonicity_break() {
        let mu = synth_mu(3, 64, 2, 0.02);
        let aux = AuxPath::none(&mu.grid);
        let f = genlib::shifted_entropy(1.0).unwrap();
        let mut s = additive_strategy(&f, &mu, &aux, DomainPolicy::Halt).unwrap();
        let n = s.n();
        s.gamma.values[n / 2] = s.gamma.values[n / 2 - 1] - 0.5;
        let cert = detect_arbitrage_t41(&s);
        assert!(!cert.monotonicity.pass);
        assert!(cert.t_star.is_none());
    }

    #[test]
    fn t42_requires_companion() {
        let mu = synth_mu(3, 32, 4, 0.01);
        let aux = AuxPath::none(&mu.grid);
        let f = genlib::shifted_entropy(1.0).unwrap();
        let s = additive_strategy(&f, &mu, &aux, DomainPolicy::Halt).unwrap();
        assert!(matches!(
            detect_arbitrage_t42(&s, &f, &mu, &aux),
            Err(StrategyError::MissingLowerBoundCompanion)
        ));
    }

    #[test]
    fn t42_constant_path_yields_none() {
        let mu = constant_mu(4, 24);
        let aux = aux_path(&mu, AuxKind::RunningMin).unwrap();
        let f = genlib::entropy_running_min(genlib::PMode::Auto, &mu).unwrap();
        let s = additive_strategy(&f, &mu, &aux, DomainPolicy::Halt).unwrap();
        let cert = detect_arbitrage_t42(&s, &f, &mu, &aux).unwrap();
        assert!(cert.t_star.is_none());
        assert!(cert.monotonicity.pass);
    }

    #[test]
    fn t43_gamma_identity_and_zero_gamma_case() {
        let mu = constant_mu(3, 16);
        let aux = AuxPath::none(&mu.grid);
        let f = genlib::shifted_entropy(1.0).unwrap();
        let out =
            detect_arbitrage_t43(&f, &mu, &aux, 0.01, 1.0, DomainPolicy::Halt, 1e-8).unwrap();
        assert!(out.certificate.t_star.is_none());
        assert!(out.gamma_identity_residual < 1e-13);

        let mu2 = synth_mu(4, 256, 17, 0.02);
        let aux2 = AuxPath::none(&mu2.grid);
        let out2 =
            detect_arbitrage_t43(&f, &mu2, &aux2, 0.01, 0.5, DomainPolicy::Halt, 1e-8).unwrap();
        let scale = out2
            .normalized_gamma
            .values
            .iter()
            .fold(1.0f64, |a, &v| a.max(v.abs()));
        assert!(out2.gamma_identity_residual <= 1e-13 * scale.max(1.0));
    }
}
