//! Catalog of concrete generating functionals: entropy variants on running
//! extrema, a quadratic functional, delayed-difference and delayed
//! relative-entropy functionals, and the cap-weighted market functional.
//!
//! Every entry carries analytic jets and, where available, a closed-form
//! Gamma series that integrates exactly the same discrete increments as the
//! generic expansion route, so the two agree to rounding.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::funcalc::{
    BalancedStatus, DomainEvent, FuncError, FunctionalDescriptor, GammaMethod, GammaSeries,
    GeneratingFunctional, Hessian, PathState,
};
use crate::marketpath::{
    quadratic_variation, AuxKind, AuxPath, MarketWeightPath, QuadraticVariation,
    MIN_POSITIVE_WEIGHT,
};

#[derive(Debug, Error)]
pub enum GenLibError {
    #[error("parameter {name} = {value} outside its domain ({requirement})")]
    InvalidParameter { name: &'static str, value: f64, requirement: &'static str },
    #[error("unknown functional `{0}`")]
    UnknownFunctional(String),
    #[error("parameter `{0}` missing for functional `{1}`")]
    MissingParameter(&'static str, &'static str),
    #[error("unparseable parameter {name} = `{value}`")]
    UnparseableParameter { name: String, value: String },
    #[error(transparent)]
    Domain(#[from] DomainEvent),
}

#[inline]
fn floored(w: f64) -> f64 {
    w.max(MIN_POSITIVE_WEIGHT)
}

/// Parameter mode for entries whose threshold constant can be chosen from
/// the initial weights alone.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PMode {
    Auto,
    Explicit(f64),
}

// ---------------------------------------------------------------------------
// scaled logarithmic integral
// ---------------------------------------------------------------------------

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Exponential integral E1 for positive arguments: power series below 1,
/// modified-Lentz continued fraction above.
fn exp_integral_e1(x: f64) -> f64 {
    assert!(x > 0.0, "E1 domain");
    if x <= 1.0 {
        let mut sum = 0.0;
        let mut term = 1.0;
        for k in 1..=60 {
            term *= -x / k as f64;
            let contrib = -term / k as f64;
            sum += contrib;
            if contrib.abs() < 1e-18 * (1.0 + sum.abs()) {
                break;
            }
        }
        -EULER_GAMMA - x.ln() + sum
    } else {
        const FPMIN: f64 = 1e-300;
        let mut b = x + 1.0;
        let mut c = 1.0 / FPMIN;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..=200u64 {
            let a = -((i * i) as f64);
            b += 2.0;
            d = 1.0 / (a * d + b);
            c = b + a / c;
            let del = c * d;
            h *= del;
            if (del - 1.0).abs() < 1e-16 {
                break;
            }
        }
        h * (-x).exp()
    }
}

/// Scaled logarithmic integral `li_r(x) = (1/r) li(r x) = int_0^x du / ln(ru)`
/// on `0 <= x < 1/r`; zero at the origin, strictly decreasing and negative
/// on the interior.
#[derive(Debug, Clone, Copy)]
pub struct LogIntegral {
    pub r: f64,
}

impl LogIntegral {
    pub fn new(r: f64) -> Result<Self, GenLibError> {
        if !(r > 0.0) || !r.is_finite() {
            return Err(GenLibError::InvalidParameter {
                name: "r",
                value: r,
                requirement: "r > 0",
            });
        }
        Ok(Self { r })
    }

    pub fn eval(&self, x: f64) -> Result<f64, GenLibError> {
        if x == 0.0 {
            return Ok(0.0);
        }
        if !(x > 0.0 && x < 1.0 / self.r) {
            return Err(GenLibError::InvalidParameter {
                name: "x",
                value: x,
                requirement: "0 <= x < 1/r",
            });
        }
        // substitute u = e^{-v}: the integrable endpoint maps to an
        // exponential integral with positive argument
        let arg = -(self.r * x).ln();
        Ok(-exp_integral_e1(arg) / self.r)
    }
}

// ---------------------------------------------------------------------------
// shared closed-form Gamma builders
// ---------------------------------------------------------------------------

fn qv_or_compute<'q>(
    mu: &MarketWeightPath,
    qv: Option<&'q QuadraticVariation>,
    storage: &'q mut Option<QuadraticVariation>,
) -> &'q QuadraticVariation {
    match qv {
        Some(q) => q,
        None => {
            *storage = Some(quadratic_variation(mu));
            storage.as_ref().unwrap()
        }
    }
}

/// `sum_i int d<mu_i> / (2 mu_i)` with left-point weights.
fn gamma_entropic_qv(mu: &MarketWeightPath, qv: &QuadraticVariation) -> GammaSeries {
    let n = mu.n();
    let d = mu.d();
    let mut values = Vec::with_capacity(n);
    values.push(0.0);
    let mut acc = 0.0;
    for j in 1..n {
        let prev = mu.col(j - 1);
        let mut step = 0.0;
        for i in 0..d {
            let inc = qv.incr.get(i, j);
            if inc != 0.0 {
                step += 0.5 * (1.0 / floored(prev[i])) * inc;
            }
        }
        acc += step;
        values.push(acc);
    }
    GammaSeries { grid: mu.grid.clone(), values, method: GammaMethod::ClosedForm }
}

/// Cumulative sum of all companion increments (running extrema entries).
fn gamma_extremum_sum(mu: &MarketWeightPath, aux: &AuxPath) -> GammaSeries {
    let n = mu.n();
    let m = aux.m();
    let mut values = Vec::with_capacity(n);
    values.push(0.0);
    let mut acc = 0.0;
    for j in 1..n {
        for k in 0..m {
            acc += aux.increments.get(k, j);
        }
        values.push(acc);
    }
    GammaSeries { grid: mu.grid.clone(), values, method: GammaMethod::ClosedForm }
}

// ---------------------------------------------------------------------------
// market functional
// ---------------------------------------------------------------------------

/// Sum of current weights; generates the market portfolio in both modes.
#[derive(Debug, Clone, Copy)]
pub struct Market;

pub fn market() -> Market {
    Market
}

impl GeneratingFunctional for Market {
    fn descriptor(&self) -> FunctionalDescriptor {
        FunctionalDescriptor {
            name: "market",
            params: vec![],
            requires_aux: AuxKind::None,
            pre_history_steps: 0,
            closed_form_gamma: true,
            balanced: BalancedStatus::Balanced,
        }
    }

    fn value(&self, s: &PathState) -> Result<f64, FuncError> {
        Ok((0..s.dim()).map(|i| s.weight(i)).sum())
    }

    fn vertical_gradient(&self, _s: &PathState, out: &mut [f64]) -> Result<(), FuncError> {
        out.fill(1.0);
        Ok(())
    }

    fn vertical_hessian(&self, _s: &PathState) -> Result<Hessian, FuncError> {
        Ok(Hessian::Zero)
    }

    fn horizontal(&self, _s: &PathState, out: &mut [f64]) -> Result<(), FuncError> {
        out.fill(0.0);
        Ok(())
    }

    fn closed_form_gamma(
        &self,
        mu: &MarketWeightPath,
        _aux: &AuxPath,
        _qv: Option<&QuadraticVariation>,
    ) -> Option<Result<GammaSeries, FuncError>> {
        Some(Ok(GammaSeries {
            grid: mu.grid.clone(),
            values: vec![0.0; mu.n()],
            method: GammaMethod::ClosedForm,
        }))
    }
}

// ---------------------------------------------------------------------------
// shifted entropy
// ---------------------------------------------------------------------------

/// `G = -sum_i mu_i ln(p mu_i)`, the Gibbs entropy shifted down by `ln p`.
#[derive(Debug, Clone, Copy)]
pub struct ShiftedEntropy {
    pub p: f64,
}

pub fn shifted_entropy(p: f64) -> Result<ShiftedEntropy, GenLibError> {
    if !(p >= 1.0) || !p.is_finite() {
        return Err(GenLibError::InvalidParameter { name: "p", value: p, requirement: "p >= 1" });
    }
    Ok(ShiftedEntropy { p })
}

impl GeneratingFunctional for ShiftedEntropy {
    fn descriptor(&self) -> FunctionalDescriptor {
        FunctionalDescriptor {
            name: "entropy",
            params: vec![("p", self.p)],
            requires_aux: AuxKind::None,
            pre_history_steps: 0,
            closed_form_gamma: true,
            balanced: BalancedStatus::AlmostBalanced,
        }
    }

    fn value(&self, s: &PathState) -> Result<f64, FuncError> {
        let mut v = 0.0;
        for i in 0..s.dim() {
            let w = s.weight(i);
            v -= w * (self.p * floored(w)).ln();
        }
        Ok(v)
    }

    fn vertical_gradient(&self, s: &PathState, out: &mut [f64]) -> Result<(), FuncError> {
        for i in 0..s.dim() {
            out[i] = -(self.p * floored(s.weight(i))).ln() - 1.0;
        }
        Ok(())
    }

    fn vertical_hessian(&self, s: &PathState) -> Result<Hessian, FuncError> {
        Ok(Hessian::Diagonal(
            (0..s.dim()).map(|i| -1.0 / floored(s.weight(i))).collect(),
        ))
    }

    fn horizontal(&self, _s: &PathState, out: &mut [f64]) -> Result<(), FuncError> {
        out.fill(0.0);
        Ok(())
    }

    fn domain_check(&self, s: &PathState) -> Result<(), DomainEvent> {
        let v = self.value(s).expect("entropy value is total");
        if v < 0.0 {
            return Err(DomainEvent::NonnegativityBreached { t_idx: s.idx(), value: v });
        }
        Ok(())
    }

    fn closed_form_gamma(
        &self,
        mu: &MarketWeightPath,
        _aux: &AuxPath,
        qv: Option<&QuadraticVariation>,
    ) -> Option<Result<GammaSeries, FuncError>> {
        let mut storage = None;
        Some(Ok(gamma_entropic_qv(mu, qv_or_compute(mu, qv, &mut storage))))
    }
}

// ---------------------------------------------------------------------------
// entropy on running extrema
// ---------------------------------------------------------------------------

/// `G = -ln p - sum_i mu_i ln(mu*_i)` on the running maximum.
#[derive(Debug, Clone, Copy)]
pub struct EntropyRunningMax {
    pub p: f64,
}

pub fn entropy_running_max(p: f64) -> Result<EntropyRunningMax, GenLibError> {
    if !(p >= 1.0) || !p.is_finite() {
        return Err(GenLibError::InvalidParameter { name: "p", value: p, requirement: "p >= 1" });
    }
    Ok(EntropyRunningMax { p })
}

impl GeneratingFunctional for EntropyRunningMax {
    fn descriptor(&self) -> FunctionalDescriptor {
        FunctionalDescriptor {
            name: "entropy_running_max",
            params: vec![("p", self.p)],
            requires_aux: AuxKind::RunningMax,
            pre_history_steps: 0,
            closed_form_gamma: true,
            balanced: BalancedStatus::AlmostBalanced,
        }
    }

    fn value(&self, s: &PathState) -> Result<f64, FuncError> {
        let mut v = -self.p.ln();
        for i in 0..s.dim() {
            v -= s.weight(i) * floored(s.aux(i)).ln();
        }
        Ok(v)
    }

    fn vertical_gradient(&self, s: &PathState, out: &mut [f64]) -> Result<(), FuncError> {
        for i in 0..s.dim() {
            out[i] = -floored(s.aux(i)).ln();
        }
        Ok(())
    }

    fn vertical_hessian(&self, _s: &PathState) -> Result<Hessian, FuncError> {
        Ok(Hessian::Zero)
    }

    fn horizontal(&self, s: &PathState, out: &mut [f64]) -> Result<(), FuncError> {
        out[0] = 0.0;
        for i in 0..s.dim() {
            out[i + 1] = -s.weight(i) / floored(s.aux(i));
        }
        Ok(())
    }

    fn domain_check(&self, s: &PathState) -> Result<(), DomainEvent> {
        let v = self.value(s).expect("total");
        if v < 0.0 {
            return Err(DomainEvent::NonnegativityBreached { t_idx: s.idx(), value: v });
        }
        Ok(())
    }

    fn closed_form_gamma(
        &self,
        mu: &MarketWeightPath,
        aux: &AuxPath,
        _qv: Option<&QuadraticVariation>,
    ) -> Option<Result<GammaSeries, FuncError>> {
        Some(Ok(gamma_extremum_sum(mu, aux)))
    }
}

/// `G = -ln p - sum_i mu_i ln(mu_{*i})` on the running minimum.
#[derive(Debug, Clone, Copy)]
pub struct EntropyRunningMin {
    pub p: f64,
}

/// Threshold constant needing no estimation: `1 / max_i mu_i(0)`. Keeps the
/// functional nonnegative along any path.
pub fn auto_p_running_min(mu: &MarketWeightPath) -> f64 {
    1.0 / mu.col(0).iter().cloned().fold(f64::MIN, f64::max)
}

/// Stricter threshold constant `exp(-2 - ln(max_i mu_i(0)) + max_i mu_i(0))`
/// that keeps the strategy value itself nonnegative along any path (the
/// lower-bound arbitrage test requires this stronger property).
pub fn conservative_p_running_min(mu: &MarketWeightPath) -> f64 {
    let max0 = mu.col(0).iter().cloned().fold(f64::MIN, f64::max);
    (-2.0 - max0.ln() + max0).exp()
}

pub fn entropy_running_min(
    p_mode: PMode,
    mu: &MarketWeightPath,
) -> Result<EntropyRunningMin, GenLibError> {
    let p = match p_mode {
        PMode::Auto => auto_p_running_min(mu),
        PMode::Explicit(p) => p,
    };
    if !(p > 0.0) || !p.is_finite() {
        return Err(GenLibError::InvalidParameter { name: "p", value: p, requirement: "p > 0" });
    }
    Ok(EntropyRunningMin { p })
}

impl GeneratingFunctional for EntropyRunningMin {
    fn descriptor(&self) -> FunctionalDescriptor {
        FunctionalDescriptor {
            name: "entropy_running_min",
            params: vec![("p", self.p)],
            requires_aux: AuxKind::RunningMin,
            pre_history_steps: 0,
            closed_form_gamma: true,
            balanced: BalancedStatus::AlmostBalanced,
        }
    }

    fn value(&self, s: &PathState) -> Result<f64, FuncError> {
        let mut v = -self.p.ln();
        for i in 0..s.dim() {
            v -= s.weight(i) * floored(s.aux(i)).ln();
        }
        Ok(v)
    }

    fn vertical_gradient(&self, s: &PathState, out: &mut [f64]) -> Result<(), FuncError> {
        for i in 0..s.dim() {
            out[i] = -floored(s.aux(i)).ln();
        }
        Ok(())
    }

    fn vertical_hessian(&self, _s: &PathState) -> Result<Hessian, FuncError> {
        Ok(Hessian::Zero)
    }

    fn horizontal(&self, s: &PathState, out: &mut [f64]) -> Result<(), FuncError> {
        out[0] = 0.0;
        for i in 0..s.dim() {
            out[i + 1] = -s.weight(i) / floored(s.aux(i));
        }
        Ok(())
    }

    fn closed_form_gamma(
        &self,
        mu: &MarketWeightPath,
        aux: &AuxPath,
        _qv: Option<&QuadraticVariation>,
    ) -> Option<Result<GammaSeries, FuncError>> {
        Some(Ok(gamma_extremum_sum(mu, aux)))
    }

    fn lower_bound_value(&self, s: &PathState) -> Option<f64> {
        let max_min = (0..s.dim()).map(|i| s.aux(i)).fold(f64::MIN, f64::max);
        Some(-self.p.ln() - floored(max_min).ln())
    }

    fn kappa(&self, _mu: &MarketWeightPath) -> Option<f64> {
        Some(-1.0)
    }
}

// ---------------------------------------------------------------------------
// iterated entropy on the running minimum
// ---------------------------------------------------------------------------

/// `G = -p - sum_i mu_i ln{ -r mu_{*i} ln(r mu_{*i}) }` with the initial
/// weights required to sit below `1/(r e)`. The auto threshold makes the
/// strategy long-only.
#[derive(Debug, Clone, Copy)]
pub struct IteratedEntropyMin {
    pub r: f64,
    pub p: f64,
}

#[inline]
fn iter_inner(r: f64, x: f64) -> f64 {
    // -r x ln(r x), increasing from 0 to 1/e on [0, 1/(r e)]
    let fx = floored(x);
    -r * fx * (r * fx).ln()
}

/// Check `mu_i(0) <= 1/(re)` for all assets.
pub fn check_initial_condition_iterated(
    r: f64,
    mu: &MarketWeightPath,
) -> Result<(), GenLibError> {
    let bound = 1.0 / (r * std::f64::consts::E);
    for (i, &w) in mu.col(0).iter().enumerate() {
        if w > bound {
            return Err(GenLibError::Domain(DomainEvent::InitialConditionViolated {
                asset: i,
                bound,
            }));
        }
    }
    Ok(())
}

/// Gamma lower bound `kappa = -1 - sum_i li_r(mu_i(0))`, in (-1, 0].
pub fn kappa_iterated(r: f64, mu: &MarketWeightPath) -> Result<f64, GenLibError> {
    let li = LogIntegral::new(r)?;
    let mut k = -1.0;
    for &w in mu.col(0) {
        k -= li.eval(w)?;
    }
    Ok(k)
}

/// Threshold constant from initial weights only:
/// `p = -ln(max_i{-r mu_i(0) ln(r mu_i(0))}) + kappa`.
pub fn auto_p_iterated(r: f64, mu: &MarketWeightPath) -> Result<f64, GenLibError> {
    let max_inner = mu.col(0).iter().map(|&w| iter_inner(r, w)).fold(f64::MIN, f64::max);
    Ok(-max_inner.ln() + kappa_iterated(r, mu)?)
}

pub fn iterated_entropy_min(
    r: f64,
    p_mode: PMode,
    mu: &MarketWeightPath,
) -> Result<IteratedEntropyMin, GenLibError> {
    if !(r > 0.0) || !r.is_finite() {
        return Err(GenLibError::InvalidParameter { name: "r", value: r, requirement: "r > 0" });
    }
    check_initial_condition_iterated(r, mu)?;
    let p = match p_mode {
        PMode::Auto => auto_p_iterated(r, mu)?,
        PMode::Explicit(p) => p,
    };
    Ok(IteratedEntropyMin { r, p })
}

impl GeneratingFunctional for IteratedEntropyMin {
    fn descriptor(&self) -> FunctionalDescriptor {
        FunctionalDescriptor {
            name: "iterated_entropy_min",
            params: vec![("r", self.r), ("p", self.p)],
            requires_aux: AuxKind::RunningMin,
            pre_history_steps: 0,
            closed_form_gamma: true,
            balanced: BalancedStatus::AlmostBalanced,
        }
    }

    fn value(&self, s: &PathState) -> Result<f64, FuncError> {
        let mut v = -self.p;
        for i in 0..s.dim() {
            v -= s.weight(i) * iter_inner(self.r, s.aux(i)).ln();
        }
        Ok(v)
    }

    fn vertical_gradient(&self, s: &PathState, out: &mut [f64]) -> Result<(), FuncError> {
        for i in 0..s.dim() {
            out[i] = -iter_inner(self.r, s.aux(i)).ln();
        }
        Ok(())
    }

    fn vertical_hessian(&self, _s: &PathState) -> Result<Hessian, FuncError> {
        Ok(Hessian::Zero)
    }

    fn horizontal(&self, s: &PathState, out: &mut [f64]) -> Result<(), FuncError> {
        out[0] = 0.0;
        for i in 0..s.dim() {
            let a = floored(s.aux(i));
            let lg = (self.r * a).ln();
            out[i + 1] = -(s.weight(i) / a) * (1.0 + 1.0 / lg);
        }
        Ok(())
    }

    fn domain_check(&self, s: &PathState) -> Result<(), DomainEvent> {
        if s.idx() == 0 {
            let bound = 1.0 / (self.r * std::f64::consts::E);
            for i in 0..s.dim() {
                if s.weight(i) > bound {
                    return Err(DomainEvent::InitialConditionViolated { asset: i, bound });
                }
            }
        }
        Ok(())
    }

    fn closed_form_gamma(
        &self,
        mu: &MarketWeightPath,
        aux: &AuxPath,
        _qv: Option<&QuadraticVariation>,
    ) -> Option<Result<GammaSeries, FuncError>> {
        let n = mu.n();
        let m = aux.m();
        let mut values = Vec::with_capacity(n);
        values.push(0.0);
        let mut acc = 0.0;
        for j in 1..n {
            for k in 0..m {
                let da = aux.increments.get(k, j);
                if da != 0.0 {
                    let a = floored(aux.values.get(k, j));
                    acc += (1.0 + 1.0 / (self.r * a).ln()) * da;
                }
            }
            values.push(acc);
        }
        Some(Ok(GammaSeries { grid: mu.grid.clone(), values, method: GammaMethod::ClosedForm }))
    }

    fn lower_bound_value(&self, s: &PathState) -> Option<f64> {
        let max_inner =
            (0..s.dim()).map(|i| iter_inner(self.r, s.aux(i))).fold(f64::MIN, f64::max);
        Some(-self.p - max_inner.ln())
    }

    fn kappa(&self, mu: &MarketWeightPath) -> Option<f64> {
        kappa_iterated(self.r, mu).ok()
    }
}

// ---------------------------------------------------------------------------
// quadratic functional on the running maximum
// ---------------------------------------------------------------------------

/// `G = c - sum_i mu_i^2 - p sum_i mu_i mu*_i`; with `c = 1 + p` the value
/// stays in `[0, (1+p)(1 - 1/d)]`.
#[derive(Debug, Clone, Copy)]
pub struct QuadraticRunningMax {
    pub c: f64,
    pub p: f64,
}

pub fn quadratic_running_max(c: Option<f64>, p: f64) -> Result<QuadraticRunningMax, GenLibError> {
    if !(p > 0.0) || !p.is_finite() {
        return Err(GenLibError::InvalidParameter { name: "p", value: p, requirement: "p > 0" });
    }
    Ok(QuadraticRunningMax { c: c.unwrap_or(1.0 + p), p })
}

impl GeneratingFunctional for QuadraticRunningMax {
    fn descriptor(&self) -> FunctionalDescriptor {
        FunctionalDescriptor {
            name: "quadratic_running_max",
            params: vec![("c", self.c), ("p", self.p)],
            requires_aux: AuxKind::RunningMax,
            pre_history_steps: 0,
            closed_form_gamma: true,
            balanced: BalancedStatus::Unbalanced,
        }
    }

    fn value(&self, s: &PathState) -> Result<f64, FuncError> {
        let mut v = self.c;
        for i in 0..s.dim() {
            let w = s.weight(i);
            v -= w * w + self.p * w * s.aux(i);
        }
        Ok(v)
    }

    fn vertical_gradient(&self, s: &PathState, out: &mut [f64]) -> Result<(), FuncError> {
        for i in 0..s.dim() {
            out[i] = -2.0 * s.weight(i) - self.p * s.aux(i);
        }
        Ok(())
    }

    fn vertical_hessian(&self, s: &PathState) -> Result<Hessian, FuncError> {
        Ok(Hessian::Diagonal(vec![-2.0; s.dim()]))
    }

    fn horizontal(&self, s: &PathState, out: &mut [f64]) -> Result<(), FuncError> {
        out[0] = 0.0;
        for i in 0..s.dim() {
            out[i + 1] = -self.p * s.weight(i);
        }
        Ok(())
    }

    fn closed_form_gamma(
        &self,
        mu: &MarketWeightPath,
        aux: &AuxPath,
        qv: Option<&QuadraticVariation>,
    ) -> Option<Result<GammaSeries, FuncError>> {
        let mut storage = None;
        let qv = qv_or_compute(mu, qv, &mut storage);
        let n = mu.n();
        let d = mu.d();
        let mut values = Vec::with_capacity(n);
        values.push(0.0);
        let mut acc = 0.0;
        for j in 1..n {
            let mut step = 0.0;
            for i in 0..d {
                let da = aux.increments.get(i, j);
                if da != 0.0 {
                    step += self.p * aux.values.get(i, j) * da;
                }
                step += qv.incr.get(i, j);
            }
            acc += step;
            values.push(acc);
        }
        Some(Ok(GammaSeries { grid: mu.grid.clone(), values, method: GammaMethod::ClosedForm }))
    }
}

// ---------------------------------------------------------------------------
// delayed functionals
// ---------------------------------------------------------------------------

/// `G = 2 + beta - sum_i (mu_i(t) - mu_i(t - delta))^2`; reads the path at
/// exactly two sample times.
#[derive(Debug, Clone, Copy)]
pub struct DelayedDifference {
    pub delta_steps: usize,
    pub beta: f64,
}

pub fn delayed_difference(delta_steps: usize, beta: f64) -> Result<DelayedDifference, GenLibError> {
    if delta_steps == 0 {
        return Err(GenLibError::InvalidParameter {
            name: "delta",
            value: 0.0,
            requirement: "whole number of grid steps >= 1",
        });
    }
    if !(beta >= 0.0) || !beta.is_finite() {
        return Err(GenLibError::InvalidParameter {
            name: "beta",
            value: beta,
            requirement: "beta >= 0",
        });
    }
    Ok(DelayedDifference { delta_steps, beta })
}

impl GeneratingFunctional for DelayedDifference {
    fn descriptor(&self) -> FunctionalDescriptor {
        FunctionalDescriptor {
            name: "delayed_difference",
            params: vec![("delta", self.delta_steps as f64), ("beta", self.beta)],
            requires_aux: AuxKind::None,
            pre_history_steps: self.delta_steps,
            closed_form_gamma: true,
            balanced: BalancedStatus::Unbalanced,
        }
    }

    fn value(&self, s: &PathState) -> Result<f64, FuncError> {
        let mut v = 2.0 + self.beta;
        for i in 0..s.dim() {
            let diff = s.weight(i) - s.weight_lagged(i, self.delta_steps)?;
            v -= diff * diff;
        }
        Ok(v)
    }

    fn vertical_gradient(&self, s: &PathState, out: &mut [f64]) -> Result<(), FuncError> {
        for i in 0..s.dim() {
            out[i] = -2.0 * (s.weight(i) - s.weight_lagged(i, self.delta_steps)?);
        }
        Ok(())
    }

    fn vertical_hessian(&self, s: &PathState) -> Result<Hessian, FuncError> {
        Ok(Hessian::Diagonal(vec![-2.0; s.dim()]))
    }

    fn horizontal(&self, _s: &PathState, out: &mut [f64]) -> Result<(), FuncError> {
        out.fill(0.0);
        Ok(())
    }

    fn closed_form_gamma(
        &self,
        mu: &MarketWeightPath,
        _aux: &AuxPath,
        qv: Option<&QuadraticVariation>,
    ) -> Option<Result<GammaSeries, FuncError>> {
        let mut storage = None;
        let qv = qv_or_compute(mu, qv, &mut storage);
        let n = mu.n();
        let d = mu.d();
        let mut values = Vec::with_capacity(n);
        values.push(0.0);
        let mut acc = 0.0;
        for j in 1..n {
            for i in 0..d {
                acc += qv.incr.get(i, j);
            }
            values.push(acc);
        }
        Some(Ok(GammaSeries { grid: mu.grid.clone(), values, method: GammaMethod::ClosedForm }))
    }
}

/// `G = ln(zeta) - sum_i mu_i(t) ln(mu_i(t) / mu_i(t - delta))`, positive as
/// long as no weight grows by a factor `zeta` over the window.
#[derive(Debug, Clone, Copy)]
pub struct DelayedRelativeEntropy {
    pub delta_steps: usize,
    pub zeta: f64,
}

pub fn delayed_relative_entropy(
    delta_steps: usize,
    zeta: f64,
) -> Result<DelayedRelativeEntropy, GenLibError> {
    if delta_steps == 0 {
        return Err(GenLibError::InvalidParameter {
            name: "delta",
            value: 0.0,
            requirement: "whole number of grid steps >= 1",
        });
    }
    if !(zeta > 1.0) || !zeta.is_finite() {
        return Err(GenLibError::InvalidParameter {
            name: "zeta",
            value: zeta,
            requirement: "zeta > 1",
        });
    }
    Ok(DelayedRelativeEntropy { delta_steps, zeta })
}

impl GeneratingFunctional for DelayedRelativeEntropy {
    fn descriptor(&self) -> FunctionalDescriptor {
        FunctionalDescriptor {
            name: "delayed_relative_entropy",
            params: vec![("delta", self.delta_steps as f64), ("zeta", self.zeta)],
            requires_aux: AuxKind::None,
            pre_history_steps: self.delta_steps,
            closed_form_gamma: true,
            balanced: BalancedStatus::AlmostBalanced,
        }
    }

    fn value(&self, s: &PathState) -> Result<f64, FuncError> {
        let mut v = self.zeta.ln();
        for i in 0..s.dim() {
            let w = s.weight(i);
            let lag = s.weight_lagged(i, self.delta_steps)?;
            v -= w * (floored(w) / floored(lag)).ln();
        }
        Ok(v)
    }

    fn vertical_gradient(&self, s: &PathState, out: &mut [f64]) -> Result<(), FuncError> {
        for i in 0..s.dim() {
            let w = floored(s.weight(i));
            let lag = floored(s.weight_lagged(i, self.delta_steps)?);
            out[i] = -(w / lag).ln() - 1.0;
        }
        Ok(())
    }

    fn vertical_hessian(&self, s: &PathState) -> Result<Hessian, FuncError> {
        Ok(Hessian::Diagonal(
            (0..s.dim()).map(|i| -1.0 / floored(s.weight(i))).collect(),
        ))
    }

    fn horizontal(&self, _s: &PathState, out: &mut [f64]) -> Result<(), FuncError> {
        out.fill(0.0);
        Ok(())
    }

    fn domain_check(&self, s: &PathState) -> Result<(), DomainEvent> {
        for i in 0..s.dim() {
            let lag = s
                .weight_lagged(i, self.delta_steps)
                .expect("pre-history validated at bind");
            if s.weight(i) / floored(lag) >= self.zeta {
                return Err(DomainEvent::RatioBoundBreached { t_idx: s.idx(), asset: i });
            }
        }
        Ok(())
    }

    fn closed_form_gamma(
        &self,
        mu: &MarketWeightPath,
        _aux: &AuxPath,
        qv: Option<&QuadraticVariation>,
    ) -> Option<Result<GammaSeries, FuncError>> {
        let mut storage = None;
        Some(Ok(gamma_entropic_qv(mu, qv_or_compute(mu, qv, &mut storage))))
    }
}

// ---------------------------------------------------------------------------
// construction from config
// ---------------------------------------------------------------------------

/// Functional selection as it appears in config files and CLI flags.
#[derive(Debug, Clone, Default)]
pub struct FunctionalSpec {
    pub name: String,
    pub params: BTreeMap<String, String>,
}

impl FunctionalSpec {
    pub fn new(name: &str) -> Self {
        Self { name: name.to_string(), params: BTreeMap::new() }
    }

    pub fn with(mut self, key: &str, value: &str) -> Self {
        self.params.insert(key.to_string(), value.to_string());
        self
    }

    fn f64_param(&self, key: &str) -> Result<Option<f64>, GenLibError> {
        match self.params.get(key) {
            None => Ok(None),
            Some(v) => v.trim().parse::<f64>().map(Some).map_err(|_| {
                GenLibError::UnparseableParameter { name: key.into(), value: v.clone() }
            }),
        }
    }

    fn p_mode(&self) -> Result<PMode, GenLibError> {
        match self.params.get("p").map(|s| s.trim()) {
            None | Some("auto") => Ok(PMode::Auto),
            Some(v) => v.parse::<f64>().map(PMode::Explicit).map_err(|_| {
                GenLibError::UnparseableParameter { name: "p".into(), value: v.into() }
            }),
        }
    }

    fn delta_param(&self, fname: &'static str) -> Result<usize, GenLibError> {
        match self.params.get("delta") {
            None => Err(GenLibError::MissingParameter("delta", fname)),
            Some(v) => v.trim().parse::<usize>().map_err(|_| {
                GenLibError::UnparseableParameter { name: "delta".into(), value: v.clone() }
            }),
        }
    }
}

/// Resolve a named functional against a weight path (auto parameters and
/// admissibility checks bind here).
pub fn build_functional(
    spec: &FunctionalSpec,
    mu: &MarketWeightPath,
) -> Result<Box<dyn GeneratingFunctional>, GenLibError> {
    match spec.name.as_str() {
        "market" => Ok(Box::new(market())),
        "entropy" => {
            let p = spec.f64_param("p")?.unwrap_or(1.0);
            Ok(Box::new(shifted_entropy(p)?))
        }
        "entropy_running_max" => {
            let p = spec.f64_param("p")?.unwrap_or(1.0);
            Ok(Box::new(entropy_running_max(p)?))
        }
        "entropy_running_min" => Ok(Box::new(entropy_running_min(spec.p_mode()?, mu)?)),
        "iterated_entropy_min" => {
            let r = spec
                .f64_param("r")?
                .ok_or(GenLibError::MissingParameter("r", "iterated_entropy_min"))?;
            Ok(Box::new(iterated_entropy_min(r, spec.p_mode()?, mu)?))
        }
        "quadratic_running_max" => {
            let p = spec.f64_param("p")?.unwrap_or(1.0);
            Ok(Box::new(quadratic_running_max(spec.f64_param("c")?, p)?))
        }
        "delayed_difference" => {
            let delta = spec.delta_param("delayed_difference")?;
            let beta = spec.f64_param("beta")?.unwrap_or(0.0);
            Ok(Box::new(delayed_difference(delta, beta)?))
        }
        "delayed_relative_entropy" => {
            let delta = spec.delta_param("delayed_relative_entropy")?;
            let zeta = spec
                .f64_param("zeta")?
                .ok_or(GenLibError::MissingParameter("zeta", "delayed_relative_entropy"))?;
            Ok(Box::new(delayed_relative_entropy(delta, zeta)?))
        }
        other => Err(GenLibError::UnknownFunctional(other.to_string())),
    }
}

/// All catalog names accepted by [`build_functional`].
pub const CATALOG: [&str; 8] = [
    "market",
    "entropy",
    "entropy_running_max",
    "entropy_running_min",
    "iterated_entropy_min",
    "quadratic_running_max",
    "delayed_difference",
    "delayed_relative_entropy",
];
