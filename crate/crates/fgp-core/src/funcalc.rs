//! Non-anticipative functional calculus: jets (value, vertical gradient and
//! Hessian, horizontal derivatives), numeric derivative checks, left-point
//! pathwise integrals, and the Gamma functional by its two equivalent
//! discrete routes.
//!
//! Conventions, fixed once for the whole engine:
//! - Integrals against the weight path are left-point Riemann sums; this is
//!   what keeps the discrete self-financing identity exact at grid level.
//! - The horizontal term of the Gamma expansion multiplies the analytic
//!   derivative at the time where the companion increment ends, because the
//!   horizontal derivative is itself a left-limit quotient over exactly that
//!   increment. For running extrema this makes the expansion telescope.
//! - The second-order term evaluates the Hessian at the left endpoint,
//!   matching the covariation increment over the same interval.

use thiserror::Error;

use crate::marketpath::{AuxPath, CovariationPath, MarketWeightPath, RefiningPartitionFamily, TimeGrid};

#[derive(Debug, Error)]
pub enum FuncError {
    #[error("vertical bump at coordinate {coord} leaves the functional domain")]
    DomainViolation { coord: usize },
    #[error("horizontal derivative undefined at the origin")]
    AtOrigin,
    #[error("series length mismatch: {0}")]
    LengthMismatch(String),
    #[error("covariation path missing or incompatible with a dense Hessian")]
    MissingCovariation,
    #[error("companion path missing: functional requires {0}")]
    MissingAux(String),
    #[error("pre-history too short: need {need} columns, have {have}")]
    InsufficientPreHistory { need: usize, have: usize },
    #[error("domain violation: {0}")]
    Domain(#[from] DomainEvent),
    #[error("non-finite value produced at grid index {at}")]
    NonFinite { at: usize },
}

/// Typed runtime domain violations raised by catalog functionals.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum DomainEvent {
    #[error("functional value became negative at grid index {t_idx} (value {value})")]
    NonnegativityBreached { t_idx: usize, value: f64 },
    #[error("weight ratio bound breached at grid index {t_idx}, asset {asset}")]
    RatioBoundBreached { t_idx: usize, asset: usize },
    #[error("initial weight of asset {asset} violates the admissibility bound {bound}")]
    InitialConditionViolated { asset: usize, bound: f64 },
    #[error("functional not bounded away from zero at grid index {t_idx} (value {value})")]
    GNotBoundedAwayFromZero { t_idx: usize, value: f64 },
}

/// Vertical Hessian of a functional at one grid time.
#[derive(Debug, Clone, PartialEq)]
pub enum Hessian {
    Zero,
    /// Diagonal entries only; off-diagonals vanish.
    Diagonal(Vec<f64>),
    /// Row-major d x d, symmetric.
    Dense { d: usize, data: Vec<f64> },
}

impl Hessian {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        match self {
            Hessian::Zero => 0.0,
            Hessian::Diagonal(v) => {
                if i == j {
                    v[i]
                } else {
                    0.0
                }
            }
            Hessian::Dense { d, data } => data[i * d + j],
        }
    }
}

/// Value and derivatives of a functional at one grid time. `hderiv[0]` is
/// the explicit time derivative; slots 1..=m follow the companion path
/// coordinates.
#[derive(Debug, Clone)]
pub struct FunctionalJet {
    pub value: f64,
    pub grad: Vec<f64>,
    pub hess: Hessian,
    pub hderiv: Vec<f64>,
}

/// Read-only view of the pair (weight path, companion path) truncated at an
/// evaluation time. Functionals receive this view and must not read beyond
/// it; numeric derivative machinery synthesizes perturbed views.
#[derive(Clone, Copy)]
pub struct PathState<'a> {
    mu: &'a MarketWeightPath,
    aux: &'a AuxPath,
    /// Evaluation time index (the `t` argument of the functional).
    time_idx: usize,
    /// Weight path is stopped here (== time_idx except in horizontal quotients).
    mu_stop: usize,
    /// Companion path is stopped here.
    aux_stop: usize,
    /// Coordinate of the companion path advanced to `time_idx` while the
    /// rest stay stopped (horizontal quotient construction).
    aux_advanced: Option<usize>,
    /// Up to two simultaneous vertical bumps on current weight coordinates.
    vbump: [Option<(usize, f64)>; 2],
    /// State bump on a current companion coordinate.
    aux_bump: Option<(usize, f64)>,
}

impl<'a> PathState<'a> {
    /// Plain state at grid index `t_idx`.
    pub fn at(mu: &'a MarketWeightPath, aux: &'a AuxPath, t_idx: usize) -> Self {
        Self {
            mu,
            aux,
            time_idx: t_idx,
            mu_stop: t_idx,
            aux_stop: t_idx,
            aux_advanced: None,
            vbump: [None, None],
            aux_bump: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.mu.d()
    }

    pub fn aux_dim(&self) -> usize {
        self.aux.m()
    }

    pub fn idx(&self) -> usize {
        self.time_idx
    }

    pub fn time(&self) -> f64 {
        self.mu.grid.t(self.time_idx)
    }

    /// Current weight of asset `i` (vertical bumps applied).
    #[inline]
    pub fn weight(&self, i: usize) -> f64 {
        let mut w = self.mu.weight(i, self.mu_stop);
        for b in self.vbump.iter().flatten() {
            if b.0 == i {
                w += b.1;
            }
        }
        w
    }

    /// Weight of asset `i` exactly `lag` grid steps before the evaluation
    /// time. Past values are never affected by vertical bumps.
    pub fn weight_lagged(&self, i: usize, lag: usize) -> Result<f64, FuncError> {
        if lag == 0 {
            return Ok(self.weight(i));
        }
        let j = self.time_idx as isize - lag as isize;
        let j = j.min(self.mu_stop as isize);
        if j >= 0 {
            Ok(self.mu.weight(i, j as usize))
        } else {
            let back = (-j) as usize;
            let n0 = self.mu.pre_len();
            if back <= n0 {
                Ok(self.mu.pre_history.get(i, n0 - back))
            } else {
                Err(FuncError::InsufficientPreHistory { need: back, have: n0 })
            }
        }
    }

    /// Current value of companion coordinate `k` (advance and bump applied).
    #[inline]
    pub fn aux(&self, k: usize) -> f64 {
        let j = if self.aux_advanced == Some(k) { self.time_idx } else { self.aux_stop };
        let mut v = self.aux.values.get(k, j);
        if let Some((bk, h)) = self.aux_bump {
            if bk == k {
                v += h;
            }
        }
        v
    }

    fn with_vbump(mut self, i: usize, h: f64) -> Self {
        if self.vbump[0].is_none() {
            self.vbump[0] = Some((i, h));
        } else {
            self.vbump[1] = Some((i, h));
        }
        self
    }

    fn with_aux_bump(mut self, k: usize, h: f64) -> Self {
        self.aux_bump = Some((k, h));
        self
    }

    fn stopped_at(mut self, j: usize) -> Self {
        self.mu_stop = j;
        self.aux_stop = j;
        self
    }

    fn with_aux_advanced(mut self, k: usize) -> Self {
        self.aux_advanced = Some(k);
        self
    }

    fn at_time(mut self, t_idx: usize) -> Self {
        self.time_idx = t_idx;
        self
    }
}

/// Balance classification of a generating functional.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BalancedStatus {
    Balanced,
    /// Balance defect `sum_j mu_j dG_j - G` is a path-independent constant.
    AlmostBalanced,
    Unbalanced,
}

/// Static description of a catalog entry.
#[derive(Debug, Clone)]
pub struct FunctionalDescriptor {
    pub name: &'static str,
    pub params: Vec<(&'static str, f64)>,
    pub requires_aux: crate::marketpath::AuxKind,
    pub pre_history_steps: usize,
    pub closed_form_gamma: bool,
    pub balanced: BalancedStatus,
}

/// A non-anticipative generating functional with analytic jets.
///
/// Implementations must read the path only through the [`PathState`]
/// accessors, which exposes nothing past the evaluation time; determinism
/// and non-anticipativity are fuzz-tested against this contract.
pub trait GeneratingFunctional: Send + Sync {
    fn descriptor(&self) -> FunctionalDescriptor;

    fn value(&self, s: &PathState) -> Result<f64, FuncError>;

    fn vertical_gradient(&self, s: &PathState, out: &mut [f64]) -> Result<(), FuncError>;

    fn vertical_hessian(&self, s: &PathState) -> Result<Hessian, FuncError>;

    /// Analytic horizontal derivatives; `out` has length m+1 with slot 0 the
    /// explicit time derivative.
    fn horizontal(&self, s: &PathState, out: &mut [f64]) -> Result<(), FuncError>;

    /// Runtime domain monitor at one state (entropy positivity, ratio
    /// bounds, ...). Default: no constraint.
    fn domain_check(&self, _s: &PathState) -> Result<(), DomainEvent> {
        Ok(())
    }

    /// Closed-form Gamma series on the data grid, when the catalog entry has
    /// one. `qv` carries realized per-asset quadratic variation increments
    /// for entries whose closed form integrates them.
    fn closed_form_gamma(
        &self,
        _mu: &MarketWeightPath,
        _aux: &AuxPath,
        _qv: Option<&crate::marketpath::QuadraticVariation>,
    ) -> Option<Result<GammaSeries, FuncError>> {
        None
    }

    /// Nondecreasing lower-bound companion `F(t) <= G(t)` where the entry
    /// provides one (used by the lower-bound arbitrage test).
    fn lower_bound_value(&self, _s: &PathState) -> Option<f64> {
        None
    }

    /// Lower bound for the Gamma functional, where the entry provides one.
    fn kappa(&self, _mu: &MarketWeightPath) -> Option<f64> {
        None
    }

    /// Full jet at one state.
    fn jet(&self, s: &PathState) -> Result<FunctionalJet, FuncError> {
        let d = s.dim();
        let mut grad = vec![0.0; d];
        self.vertical_gradient(s, &mut grad)?;
        let mut hderiv = vec![0.0; s.aux_dim() + 1];
        self.horizontal(s, &mut hderiv)?;
        Ok(FunctionalJet {
            value: self.value(s)?,
            grad,
            hess: self.vertical_hessian(s)?,
            hderiv,
        })
    }
}

/// How a Gamma series was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GammaMethod {
    ByDefinition,
    ByItoExpansion,
    ClosedForm,
}

/// Cumulative Gamma functional on a grid; `values[0] = 0`.
#[derive(Debug, Clone)]
pub struct GammaSeries {
    pub grid: TimeGrid,
    pub values: Vec<f64>,
    pub method: GammaMethod,
}

impl GammaSeries {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,value\n");
        for (k, v) in self.values.iter().enumerate() {
            out.push_str(&format!("{},{}\n", self.grid.t(k), v));
        }
        out
    }
}

/// Cumulative left-point pathwise integral of a gradient series against the
/// weight path; `values[0] = 0`.
#[derive(Debug, Clone)]
pub struct ItoIntegralSeries {
    pub grid: TimeGrid,
    pub values: Vec<f64>,
}

impl ItoIntegralSeries {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,value\n");
        for (k, v) in self.values.iter().enumerate() {
            out.push_str(&format!("{},{}\n", self.grid.t(k), v));
        }
        out
    }
}

fn clip_bump(w: f64, bump: f64) -> Result<f64, FuncError> {
    // keep bumped weights inside (0, 1); shrink towards half the headroom
    let lo = w.min(1.0 - w);
    if lo <= 0.0 {
        return Err(FuncError::DomainViolation { coord: usize::MAX });
    }
    Ok(bump.min(lo / 2.0))
}

/// Central-difference vertical gradient: only the time-`t` value of one
/// coordinate is shifted, past values untouched, companion path untouched.
pub fn numeric_vertical_gradient(
    f: &dyn GeneratingFunctional,
    mu: &MarketWeightPath,
    aux: &AuxPath,
    t_idx: usize,
    bump: f64,
) -> Result<Vec<f64>, FuncError> {
    assert!(bump > 0.0, "bump must be positive");
    let base = PathState::at(mu, aux, t_idx);
    let d = mu.d();
    let mut out = vec![0.0; d];
    for i in 0..d {
        let h = clip_bump(base.weight(i), bump)
            .map_err(|_| FuncError::DomainViolation { coord: i })?;
        let up = f.value(&base.with_vbump(i, h))?;
        let dn = f.value(&base.with_vbump(i, -h))?;
        out[i] = (up - dn) / (2.0 * h);
    }
    Ok(out)
}

/// Central second differences, symmetrized as (H + H')/2.
pub fn numeric_hessian(
    f: &dyn GeneratingFunctional,
    mu: &MarketWeightPath,
    aux: &AuxPath,
    t_idx: usize,
    bump: f64,
) -> Result<Hessian, FuncError> {
    assert!(bump > 0.0, "bump must be positive");
    let base = PathState::at(mu, aux, t_idx);
    let d = mu.d();
    let f0 = f.value(&base)?;
    let mut data = vec![0.0; d * d];
    let mut hs = vec![0.0; d];
    for i in 0..d {
        hs[i] = clip_bump(base.weight(i), bump)
            .map_err(|_| FuncError::DomainViolation { coord: i })?;
    }
    for i in 0..d {
        let h = hs[i];
        let up = f.value(&base.with_vbump(i, h))?;
        let dn = f.value(&base.with_vbump(i, -h))?;
        data[i * d + i] = (up - 2.0 * f0 + dn) / (h * h);
        for j in 0..i {
            let g = hs[j];
            let pp = f.value(&base.with_vbump(i, h).with_vbump(j, g))?;
            let pm = f.value(&base.with_vbump(i, h).with_vbump(j, -g))?;
            let mp = f.value(&base.with_vbump(i, -h).with_vbump(j, g))?;
            let mm = f.value(&base.with_vbump(i, -h).with_vbump(j, -g))?;
            let v = (pp - pm - mp + mm) / (4.0 * h * g);
            data[i * d + j] = v;
            data[j * d + i] = v;
        }
    }
    Ok(Hessian::Dense { d, data })
}

/// Definitional horizontal quotients with lookback of `h_steps` grid steps:
/// slot 0 is the time quotient with the path stopped at t-h, slot k the
/// quotient against the increment of companion coordinate k, with the
/// convention 0/0 = 0.
pub fn numeric_horizontal_derivatives(
    f: &dyn GeneratingFunctional,
    mu: &MarketWeightPath,
    aux: &AuxPath,
    t_idx: usize,
    h_steps: usize,
) -> Result<Vec<f64>, FuncError> {
    if t_idx == 0 {
        return Err(FuncError::AtOrigin);
    }
    let h = h_steps.max(1).min(t_idx);
    let prev = t_idx - h;
    let dt = mu.grid.t(t_idx) - mu.grid.t(prev);
    let m = aux.m();
    let mut out = vec![0.0; m + 1];

    let stopped_now = PathState::at(mu, aux, t_idx).stopped_at(prev);
    let stopped_prev = PathState::at(mu, aux, prev);
    let f_stopped_now = f.value(&stopped_now)?;
    let f_stopped_prev = f.value(&stopped_prev.at_time(prev))?;
    out[0] = (f_stopped_now - f_stopped_prev) / dt;

    for k in 0..m {
        let da = aux.values.get(k, t_idx) - aux.values.get(k, prev);
        if da == 0.0 {
            out[k + 1] = 0.0; // 0/0 convention
            continue;
        }
        let advanced = stopped_now.with_aux_advanced(k);
        let f_adv = f.value(&advanced)?;
        out[k + 1] = (f_adv - f_stopped_now) / da;
    }
    Ok(out)
}

/// Limit-accurate horizontal derivatives for functionals that read the
/// companion path only through its current value: central difference in the
/// current value of each coordinate. Slot 0 is taken from the definitional
/// time quotient.
pub fn numeric_aux_sensitivity(
    f: &dyn GeneratingFunctional,
    mu: &MarketWeightPath,
    aux: &AuxPath,
    t_idx: usize,
    bump: f64,
) -> Result<Vec<f64>, FuncError> {
    if t_idx == 0 {
        return Err(FuncError::AtOrigin);
    }
    let m = aux.m();
    let mut out = vec![0.0; m + 1];
    out[0] = numeric_horizontal_derivatives(f, mu, aux, t_idx, 1)?[0];
    let base = PathState::at(mu, aux, t_idx);
    for k in 0..m {
        let v = base.aux(k);
        let h = bump.min((v.abs() / 2.0).max(bump * 1e-3));
        let up = f.value(&base.with_aux_bump(k, h))?;
        let dn = f.value(&base.with_aux_bump(k, -h))?;
        out[k + 1] = (up - dn) / (2.0 * h);
    }
    Ok(out)
}

/// Reject a companion path that does not match the functional's declared
/// requirement (coordinate counts would otherwise disagree).
pub fn ensure_aux_compatible(
    f: &dyn GeneratingFunctional,
    aux: &AuxPath,
) -> Result<(), FuncError> {
    let required = f.descriptor().requires_aux;
    if required != crate::marketpath::AuxKind::None && aux.kind != required {
        return Err(FuncError::MissingAux(required.name().to_string()));
    }
    Ok(())
}

/// Cumulative left-point Riemann sums of a per-time gradient series against
/// the weight path, along one partition level (grid indices).
pub fn pathwise_ito_integral(
    grads: &[Vec<f64>],
    mu: &MarketWeightPath,
    level: &[usize],
) -> Result<ItoIntegralSeries, FuncError> {
    if grads.len() != level.len() {
        return Err(FuncError::LengthMismatch(format!(
            "{} gradients for {} partition points",
            grads.len(),
            level.len()
        )));
    }
    let d = mu.d();
    let mut values = Vec::with_capacity(level.len());
    let mut acc = 0.0;
    values.push(0.0);
    for (k, w) in level.windows(2).enumerate() {
        let g = &grads[k];
        if g.len() != d {
            return Err(FuncError::LengthMismatch("gradient dimension".into()));
        }
        let a = mu.col(w[0]);
        let b = mu.col(w[1]);
        let mut step = 0.0;
        for i in 0..d {
            step += g[i] * (b[i] - a[i]);
        }
        acc += step;
        values.push(acc);
    }
    Ok(ItoIntegralSeries { grid: mu.grid.subgrid(level), values })
}

/// Gamma by its definition: `G(0) - G(t) + integral of the vertical
/// gradient against the weights`, along one partition level.
pub fn gamma_by_definition(
    f: &dyn GeneratingFunctional,
    mu: &MarketWeightPath,
    aux: &AuxPath,
    level: &[usize],
) -> Result<GammaSeries, FuncError> {
    ensure_aux_compatible(f, aux)?;
    let d = mu.d();
    let mut values = Vec::with_capacity(level.len());
    let g0 = f.value(&PathState::at(mu, aux, level[0]))?;
    values.push(0.0);
    let mut ito = 0.0;
    let mut grad = vec![0.0; d];
    for w in level.windows(2) {
        let s = PathState::at(mu, aux, w[0]);
        f.vertical_gradient(&s, &mut grad)?;
        let a = mu.col(w[0]);
        let b = mu.col(w[1]);
        let mut step = 0.0;
        for i in 0..d {
            step += grad[i] * (b[i] - a[i]);
        }
        ito += step;
        let gt = f.value(&PathState::at(mu, aux, w[1]))?;
        let v = g0 - gt + ito;
        if !v.is_finite() {
            return Err(FuncError::NonFinite { at: w[1] });
        }
        values.push(v);
    }
    Ok(GammaSeries { grid: mu.grid.subgrid(level), values, method: GammaMethod::ByDefinition })
}

/// Convenience: definition-route Gamma on the full data grid.
pub fn gamma_by_definition_full(
    f: &dyn GeneratingFunctional,
    mu: &MarketWeightPath,
    aux: &AuxPath,
) -> Result<GammaSeries, FuncError> {
    let level: Vec<usize> = (0..mu.n()).collect();
    gamma_by_definition(f, mu, aux, &level)
}

/// Gamma by the expansion route: cumulative sums of
/// `-D_k G * dA_k - 1/2 * d2G_ij * d<mu_i, mu_j>` on the data grid.
///
/// `cov` may be omitted for functionals whose Hessian is diagonal or zero;
/// the diagonal increments are then taken from per-step weight moves.
pub fn gamma_by_ito_expansion(
    f: &dyn GeneratingFunctional,
    mu: &MarketWeightPath,
    aux: &AuxPath,
    cov: Option<&CovariationPath>,
) -> Result<GammaSeries, FuncError> {
    ensure_aux_compatible(f, aux)?;
    let n = mu.n();
    let d = mu.d();
    let m = aux.m();
    if let Some(c) = cov {
        if c.len() != n {
            return Err(FuncError::LengthMismatch("covariation vs grid".into()));
        }
    }
    let mut values = Vec::with_capacity(n);
    values.push(0.0);
    let mut acc = 0.0;
    let mut hderiv = vec![0.0; m + 1];
    for j in 1..n {
        // horizontal term: analytic derivative at the time where the
        // companion increment ends; coordinates with zero increment skipped
        let mut need_h = false;
        for k in 0..m {
            if aux.increments.get(k, j) != 0.0 {
                need_h = true;
                break;
            }
        }
        let state_j = PathState::at(mu, aux, j);
        let mut step = 0.0;
        if need_h {
            f.horizontal(&state_j, &mut hderiv)?;
            for k in 0..m {
                let da = aux.increments.get(k, j);
                if da != 0.0 {
                    step -= hderiv[k + 1] * da;
                }
            }
        }
        // explicit-time term: all catalog entries are time-invariant; a
        // nonzero analytic D_0 still contributes here
        {
            f.horizontal(&state_j, &mut hderiv)?;
            let d0 = hderiv[0];
            if d0 != 0.0 {
                step -= d0 * (mu.grid.t(j) - mu.grid.t(j - 1));
            }
        }
        // second-order term, Hessian at the left endpoint
        let hess = f.vertical_hessian(&PathState::at(mu, aux, j - 1))?;
        match &hess {
            Hessian::Zero => {}
            Hessian::Diagonal(diag) => {
                let a = mu.col(j - 1);
                let b = mu.col(j);
                for i in 0..d {
                    let inc = match cov {
                        Some(c) => c.increment(j, i, i),
                        None => {
                            let dm = b[i] - a[i];
                            dm * dm
                        }
                    };
                    step -= 0.5 * diag[i] * inc;
                }
            }
            Hessian::Dense { .. } => {
                let c = cov.ok_or(FuncError::MissingCovariation)?;
                for i in 0..d {
                    for l in 0..d {
                        step -= 0.5 * hess.get(i, l) * c.increment(j, i, l);
                    }
                }
            }
        }
        acc += step;
        if !acc.is_finite() {
            return Err(FuncError::NonFinite { at: j });
        }
        values.push(acc);
    }
    Ok(GammaSeries { grid: mu.grid.clone(), values, method: GammaMethod::ByItoExpansion })
}

/// One row of the change-of-variable residual diagnostic.
#[derive(Debug, Clone)]
pub struct LevelResidual {
    pub level: usize,
    pub mesh: f64,
    pub residual: f64,
    /// Residual divided by the combined magnitude of the expansion terms.
    pub relative: f64,
}

/// Residual of the functional change-of-variable identity at every level of
/// a refining family:
/// `F(T) - F(0) - int grad dX - sum_k int D_k dA_k - 1/2 sum int d2F d<X>`,
/// with all integrals discretized along that level.
pub fn verify_ito(
    f: &dyn GeneratingFunctional,
    mu: &MarketWeightPath,
    aux: &AuxPath,
    parts: &RefiningPartitionFamily,
) -> Result<Vec<LevelResidual>, FuncError> {
    ensure_aux_compatible(f, aux)?;
    let d = mu.d();
    let m = aux.m();
    let mut out = Vec::with_capacity(parts.num_levels());
    for (lvl, level) in parts.levels.iter().enumerate() {
        let first = level[0];
        let last = *level.last().unwrap();
        let f0 = f.value(&PathState::at(mu, aux, first))?;
        let ft = f.value(&PathState::at(mu, aux, last))?;
        let mut ito = 0.0;
        let mut aterm = 0.0;
        let mut hterm = 0.0;
        let mut grad = vec![0.0; d];
        let mut hderiv = vec![0.0; m + 1];
        for w in level.windows(2) {
            let (s0, s1) = (w[0], w[1]);
            let left = PathState::at(mu, aux, s0);
            f.vertical_gradient(&left, &mut grad)?;
            let a = mu.col(s0);
            let b = mu.col(s1);
            for i in 0..d {
                ito += grad[i] * (b[i] - a[i]);
            }
            let right = PathState::at(mu, aux, s1);
            f.horizontal(&right, &mut hderiv)?;
            aterm += hderiv[0] * (mu.grid.t(s1) - mu.grid.t(s0));
            for k in 0..m {
                let da = aux.values.get(k, s1) - aux.values.get(k, s0);
                if da != 0.0 {
                    aterm += hderiv[k + 1] * da;
                }
            }
            let hess = f.vertical_hessian(&left)?;
            match &hess {
                Hessian::Zero => {}
                Hessian::Diagonal(diag) => {
                    for i in 0..d {
                        let dm = b[i] - a[i];
                        hterm += 0.5 * diag[i] * dm * dm;
                    }
                }
                Hessian::Dense { .. } => {
                    for i in 0..d {
                        let di = b[i] - a[i];
                        for l in 0..d {
                            hterm += 0.5 * hess.get(i, l) * di * (b[l] - a[l]);
                        }
                    }
                }
            }
        }
        let residual = (ft - f0 - ito - aterm - hterm).abs();
        let scale = (ft - f0).abs() + ito.abs() + aterm.abs() + hterm.abs();
        out.push(LevelResidual {
            level: lvl,
            mesh: parts.mesh(lvl),
            residual,
            relative: if scale > 0.0 { residual / scale } else { residual },
        });
    }
    Ok(out)
}

/// CSV export of the residual diagnostic: `level,mesh,residual`.
pub fn residuals_to_csv(rows: &[LevelResidual]) -> String {
    let mut out = String::from("level,mesh,residual\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.level, r.mesh, r.residual));
    }
    out
}
