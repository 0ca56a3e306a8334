//! Synthetic capitalization paths with known statistical structure, plus an
//! independently coded Gamma oracle for cross-validation.
//!
//! Randomness is counter-based: every normal draw is a pure function of
//! (seed, asset, step), so generation is reproducible regardless of
//! scheduling and parallelizes trivially.

use thiserror::Error;

use crate::funcalc::{FuncError, GammaMethod, GammaSeries, GeneratingFunctional, PathState};
use crate::marketpath::{AuxPath, CapitalizationPath, MarketWeightPath, TimeGrid};
use crate::mat::Matrix;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Func(#[from] FuncError),
    #[error(transparent)]
    Market(#[from] crate::marketpath::MarketPathError),
}

/// Price model for the synthetic generator.
#[derive(Debug, Clone)]
pub enum Model {
    /// `S(t+dt) = S(t) exp((nu - sigma^2/2) dt + sigma sqrt(dt) z)`.
    MultiplicativeWalk { vol: Vec<f64>, drift: Vec<f64> },
    /// Log-capitalizations revert to `ln(level)` at the given rate; noise
    /// scale is tied to the rate so faster reversion explores more.
    MeanRevertingWeights { rate: f64, level: f64 },
}

/// Full description of a synthetic panel; identical specs generate
/// identical paths bit-for-bit.
#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub d: usize,
    pub n: usize,
    pub seed: u64,
    pub model: Model,
    pub dt: f64,
    pub s0: f64,
}

impl SynthSpec {
    /// Multiplicative walk with uniform volatility and drift.
    pub fn walk(d: usize, n: usize, seed: u64, sigma: f64, nu: f64, dt: f64) -> Self {
        Self {
            d,
            n,
            seed,
            model: Model::MultiplicativeWalk { vol: vec![sigma; d], drift: vec![nu; d] },
            dt,
            s0: 1.0,
        }
    }

    fn validate(&self) -> Result<(), SynthError> {
        if self.d < 1 {
            return Err(SynthError::InvalidSpec("d >= 1 required".into()));
        }
        if self.n < 2 {
            return Err(SynthError::InvalidSpec("n >= 2 required".into()));
        }
        if !(self.dt > 0.0) {
            return Err(SynthError::InvalidSpec("dt > 0 required".into()));
        }
        if !(self.s0 > 0.0) {
            return Err(SynthError::InvalidSpec("s0 > 0 required".into()));
        }
        match &self.model {
            Model::MultiplicativeWalk { vol, drift } => {
                if vol.len() != self.d || drift.len() != self.d {
                    return Err(SynthError::InvalidSpec("vol/drift length must equal d".into()));
                }
                if vol.iter().any(|&s| s < 0.0 || !s.is_finite()) {
                    return Err(SynthError::InvalidSpec("vol must be nonnegative".into()));
                }
            }
            Model::MeanRevertingWeights { rate, level } => {
                if !(*rate > 0.0) || !(*level > 0.0) {
                    return Err(SynthError::InvalidSpec("rate and level must be positive".into()));
                }
            }
        }
        Ok(())
    }
}

#[inline]
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Counter-based uniform in (0, 1): pure function of (seed, stream, step).
#[inline]
pub fn uniform_at(seed: u64, stream: u64, step: u64) -> f64 {
    let mixed = splitmix64(
        splitmix64(seed ^ stream.wrapping_mul(0xA076_1D64_78BD_642F))
            ^ step.wrapping_mul(0xE703_7ED1_A0B4_28DB),
    );
    ((mixed >> 11) as f64 + 0.5) * (1.0 / 9_007_199_254_740_992.0) // 2^-53
}

/// Inverse standard normal CDF (Acklam's rational approximation, absolute
/// error below 1.2e-9 — ample for path generation, and branch-free of any
/// platform RNG so draws replay exactly).
pub fn inverse_normal_cdf(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0);
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;
    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -((((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0))
    }
}

/// Standard normal draw at (seed, asset, step).
#[inline]
pub fn normal_at(seed: u64, stream: u64, step: u64) -> f64 {
    inverse_normal_cdf(uniform_at(seed, stream, step))
}

/// Generate a strictly positive capitalization panel from a spec.
pub fn generate(spec: &SynthSpec) -> Result<CapitalizationPath, SynthError> {
    spec.validate()?;
    let d = spec.d;
    let n = spec.n;
    let mut caps = Matrix::zeros(d, n);
    match &spec.model {
        Model::MultiplicativeWalk { vol, drift } => {
            let sqdt = spec.dt.sqrt();
            for i in 0..d {
                let mut s = spec.s0;
                caps.set(i, 0, s);
                let a = (drift[i] - 0.5 * vol[i] * vol[i]) * spec.dt;
                for j in 1..n {
                    let z = normal_at(spec.seed, i as u64, j as u64);
                    s *= (a + vol[i] * sqdt * z).exp();
                    caps.set(i, j, s);
                }
            }
        }
        Model::MeanRevertingWeights { rate, level } => {
            let sigma = 0.25 * (2.0 * rate).sqrt();
            let sqdt = spec.dt.sqrt();
            let target = level.ln();
            for i in 0..d {
                // stagger initial logs so weights are not degenerate
                let mut x = spec.s0.ln() + 0.05 * normal_at(spec.seed, i as u64, 0);
                caps.set(i, 0, x.exp());
                for j in 1..n {
                    let z = normal_at(spec.seed, i as u64, j as u64);
                    x += rate * (target - x) * spec.dt + sigma * sqdt * z;
                    caps.set(i, j, x.exp());
                }
            }
        }
    }
    let grid = TimeGrid::new((0..n).map(|j| j as f64 * spec.dt).collect())
        .map_err(SynthError::Market)?;
    CapitalizationPath::from_parts(grid, caps, (0..d).map(|i| format!("asset_{i}")).collect())
        .map_err(SynthError::Market)
}

/// Standard capitalization CSV (`date,asset_0,...`), the same format the
/// loader reads, so synthetic and real data share one code path.
pub fn to_csv(caps: &CapitalizationPath) -> String {
    let mut out = String::from("date");
    for id in &caps.asset_ids {
        out.push(',');
        out.push_str(id);
    }
    out.push('\n');
    for j in 0..caps.n() {
        out.push_str(&format!("{}", caps.grid.t(j)));
        for i in 0..caps.d() {
            out.push_str(&format!(",{}", caps.caps.get(i, j)));
        }
        out.push('\n');
    }
    out
}

/// Neumaier compensated accumulator.
#[derive(Debug, Clone, Copy, Default)]
struct Compensated {
    sum: f64,
    comp: f64,
}

impl Compensated {
    #[inline]
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Independent Gamma oracle: same contract as the engine's
/// definition-route Gamma, reimplemented with compensated summation and its
/// own loop structure. Shares no accumulation code with the engine.
pub fn oracle_gamma(
    f: &dyn GeneratingFunctional,
    mu: &MarketWeightPath,
    aux: &AuxPath,
) -> Result<GammaSeries, SynthError> {
    let n = mu.n();
    let d = mu.d();
    let g0 = f.value(&PathState::at(mu, aux, 0))?;
    let mut integral = Compensated::default();
    let mut grad = vec![0.0; d];
    let mut values = vec![0.0; n];
    for j in 1..n {
        f.vertical_gradient(&PathState::at(mu, aux, j - 1), &mut grad)?;
        let mut step = Compensated::default();
        let prev = mu.col(j - 1);
        let cur = mu.col(j);
        for i in 0..d {
            step.add(grad[i] * (cur[i] - prev[i]));
        }
        integral.add(step.value());
        let gt = f.value(&PathState::at(mu, aux, j))?;
        values[j] = g0 - gt + integral.value();
    }
    Ok(GammaSeries { grid: mu.grid.clone(), values, method: GammaMethod::ByDefinition })
}
