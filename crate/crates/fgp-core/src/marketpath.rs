//! Market data layer: capitalizations, market weights, refining partitions,
//! pathwise covariation and finite-variation companion paths.
//!
//! Weights are renormalized on construction so every column sums to one
//! bit-for-bit (the residual after division is absorbed into the largest
//! weight). Downstream identities such as `sum_j <mu_i, mu_j> = 0` depend
//! on this.

use std::io::BufRead;

use thiserror::Error;

use crate::mat::Matrix;

/// Weights are floored at this value before logarithms downstream; the data
/// layer permits capitalizations to vanish after the first observation.
pub const MIN_POSITIVE_WEIGHT: f64 = 1e-300;

#[derive(Debug, Error)]
pub enum MarketPathError {
    #[error("malformed row at line {line}: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error("non-positive total capitalization at time {time}")]
    NonPositiveTotalCap { time: f64 },
    #[error("non-finite value at line {line}, column {col}")]
    NonFiniteValue { line: usize, col: usize },
    #[error("capitalization must be strictly positive at the first observation (asset {asset})")]
    NonPositiveInitialCap { asset: usize },
    #[error("negative capitalization at line {line}, column {col}")]
    NegativeCap { line: usize, col: usize },
    #[error("insufficient history: requested {requested} pre-history days from {available} observations")]
    InsufficientHistory { requested: usize, available: usize },
    #[error("partition point {time} is not on the data grid")]
    PartitionOffGrid { time: f64 },
    #[error("partition levels are not nested at level {level}")]
    PartitionNotNested { level: usize },
    #[error("window {delta} is not a positive whole number of grid steps")]
    DeltaNotOnGrid { delta: f64 },
    #[error("unsupported auxiliary path kind: {0}")]
    UnsupportedKind(String),
    #[error("time grid invalid: {0}")]
    BadGrid(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Strictly increasing observation times (days or abstract units).
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    pub fn new(times: Vec<f64>) -> Result<Self, MarketPathError> {
        if times.len() < 2 {
            return Err(MarketPathError::BadGrid(format!(
                "need at least 2 times, got {}",
                times.len()
            )));
        }
        for w in times.windows(2) {
            if !w[0].is_finite() || !w[1].is_finite() {
                return Err(MarketPathError::BadGrid("non-finite time".into()));
            }
            if w[1] <= w[0] {
                return Err(MarketPathError::BadGrid(format!(
                    "times not strictly increasing at {} -> {}",
                    w[0], w[1]
                )));
            }
        }
        Ok(Self { times })
    }

    /// Unit-spaced grid 0, 1, ..., n-1.
    pub fn unit(n: usize) -> Self {
        Self { times: (0..n).map(|k| k as f64).collect() }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    #[inline]
    pub fn t(&self, j: usize) -> f64 {
        self.times[j]
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Exact-match lookup of a time on the grid.
    pub fn index_of(&self, time: f64) -> Option<usize> {
        self.times
            .binary_search_by(|probe| probe.partial_cmp(&time).expect("finite times"))
            .ok()
    }

    /// Grid restricted to the given indices.
    pub fn subgrid(&self, indices: &[usize]) -> TimeGrid {
        TimeGrid { times: indices.iter().map(|&j| self.times[j]).collect() }
    }
}

/// CSV dialect for capitalization panels. The expected layout is a header
/// `date,asset_1,...,asset_d` followed by one row per day, UTF-8, LF.
#[derive(Debug, Clone)]
pub struct CsvSpec {
    pub delimiter: u8,
}

impl Default for CsvSpec {
    fn default() -> Self {
        Self { delimiter: b',' }
    }
}

/// Per-asset capitalizations on a time grid; the source of all weights.
#[derive(Debug, Clone)]
pub struct CapitalizationPath {
    pub grid: TimeGrid,
    /// d x N, currency units.
    pub caps: Matrix,
    pub asset_ids: Vec<String>,
}

impl CapitalizationPath {
    /// Validate and assemble a path: caps nonnegative and finite, strictly
    /// positive at the first observation, column sums positive throughout.
    pub fn from_parts(
        grid: TimeGrid,
        caps: Matrix,
        asset_ids: Vec<String>,
    ) -> Result<Self, MarketPathError> {
        assert_eq!(grid.len(), caps.cols(), "grid/caps length mismatch");
        assert_eq!(asset_ids.len(), caps.rows(), "asset ids/caps mismatch");
        for j in 0..caps.cols() {
            let col = caps.col(j);
            let mut total = 0.0;
            for (i, &v) in col.iter().enumerate() {
                if !v.is_finite() {
                    return Err(MarketPathError::NonFiniteValue { line: j + 2, col: i + 2 });
                }
                if v < 0.0 {
                    return Err(MarketPathError::NegativeCap { line: j + 2, col: i + 2 });
                }
                if j == 0 && v <= 0.0 {
                    return Err(MarketPathError::NonPositiveInitialCap { asset: i });
                }
                total += v;
            }
            if total <= 0.0 {
                return Err(MarketPathError::NonPositiveTotalCap { time: grid.t(j) });
            }
        }
        Ok(Self { grid, caps, asset_ids })
    }

    pub fn d(&self) -> usize {
        self.caps.rows()
    }

    pub fn n(&self) -> usize {
        self.caps.cols()
    }

    /// Total capitalization at grid index `j`.
    pub fn total(&self, j: usize) -> f64 {
        self.caps.col(j).iter().sum()
    }

    pub fn totals(&self) -> Vec<f64> {
        (0..self.n()).map(|j| self.total(j)).collect()
    }
}

/// Parse a capitalization panel from a tabular byte stream.
///
/// Asset order is preserved from the header; every cell must parse as a
/// finite decimal.
pub fn load_capitalizations<R: BufRead>(
    reader: R,
    spec: &CsvSpec,
) -> Result<CapitalizationPath, MarketPathError> {
    let delim = spec.delimiter as char;
    let mut lines = reader.lines();
    let header = match lines.next() {
        Some(h) => h?,
        None => {
            return Err(MarketPathError::MalformedRow { line: 1, reason: "empty input".into() })
        }
    };
    let mut fields = header.split(delim);
    match fields.next() {
        Some(first) if first.trim().eq_ignore_ascii_case("date") => {}
        _ => {
            return Err(MarketPathError::MalformedRow {
                line: 1,
                reason: "header must start with `date`".into(),
            })
        }
    }
    let asset_ids: Vec<String> = fields.map(|s| s.trim().to_string()).collect();
    if asset_ids.is_empty() {
        return Err(MarketPathError::MalformedRow {
            line: 1,
            reason: "header names no assets".into(),
        });
    }
    let d = asset_ids.len();

    let mut times = Vec::new();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    for (k, line) in lines.enumerate() {
        let line = line?;
        let lineno = k + 2;
        if line.trim().is_empty() {
            continue;
        }
        let mut cells = line.split(delim);
        let date_cell = cells.next().ok_or_else(|| MarketPathError::MalformedRow {
            line: lineno,
            reason: "missing date cell".into(),
        })?;
        let time: f64 = date_cell.trim().parse().map_err(|_| MarketPathError::MalformedRow {
            line: lineno,
            reason: format!("unparseable date `{}`", date_cell.trim()),
        })?;
        let mut col = Vec::with_capacity(d);
        for (i, cell) in cells.enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| MarketPathError::MalformedRow {
                line: lineno,
                reason: format!("unparseable cell `{}`", cell.trim()),
            })?;
            if !v.is_finite() {
                return Err(MarketPathError::NonFiniteValue { line: lineno, col: i + 2 });
            }
            col.push(v);
        }
        if col.len() != d {
            return Err(MarketPathError::MalformedRow {
                line: lineno,
                reason: format!("expected {} cells, got {}", d, col.len()),
            });
        }
        times.push(time);
        columns.push(col);
    }
    if columns.len() < 2 {
        return Err(MarketPathError::MalformedRow {
            line: columns.len() + 1,
            reason: "need at least 2 data rows".into(),
        });
    }
    let grid = TimeGrid::new(times)?;
    let caps = Matrix::from_columns(d, &columns);
    CapitalizationPath::from_parts(grid, caps, asset_ids)
}

/// Simplex-valued market-weight path with optional pre-history columns on
/// the left of the tradable timeline (for delayed functionals).
#[derive(Debug, Clone)]
pub struct MarketWeightPath {
    pub grid: TimeGrid,
    /// d x N, each column sums to 1.0 exactly.
    pub weights: Matrix,
    /// d x N0 weights observed strictly before the first tradable day.
    pub pre_history: Matrix,
}

impl MarketWeightPath {
    pub fn d(&self) -> usize {
        self.weights.rows()
    }

    pub fn n(&self) -> usize {
        self.weights.cols()
    }

    pub fn pre_len(&self) -> usize {
        self.pre_history.cols()
    }

    #[inline]
    pub fn col(&self, j: usize) -> &[f64] {
        self.weights.col(j)
    }

    #[inline]
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights.get(i, j)
    }

    /// Weight column `lag` grid steps behind index `j`, reaching into the
    /// pre-history when `j < lag`. `None` when the pre-history is too short.
    pub fn lag_col(&self, j: usize, lag: usize) -> Option<&[f64]> {
        if lag <= j {
            Some(self.weights.col(j - lag))
        } else {
            let back = lag - j; // 1-based depth into pre-history
            let n0 = self.pre_history.cols();
            if back <= n0 {
                Some(self.pre_history.col(n0 - back))
            } else {
                None
            }
        }
    }
}

/// Normalize `caps` into market weights; the first `pre_history_days`
/// columns are moved to the pre-history and the time origin shifts so that
/// index 0 is the first tradable day.
pub fn to_market_weights(
    caps: &CapitalizationPath,
    pre_history_days: usize,
) -> Result<MarketWeightPath, MarketPathError> {
    let n = caps.n();
    if pre_history_days >= n {
        return Err(MarketPathError::InsufficientHistory {
            requested: pre_history_days,
            available: n,
        });
    }
    if n - pre_history_days < 2 {
        return Err(MarketPathError::InsufficientHistory {
            requested: pre_history_days,
            available: n,
        });
    }
    let d = caps.d();
    let mut all = Matrix::zeros(d, n);
    for j in 0..n {
        let src = caps.caps.col(j);
        let total: f64 = src.iter().sum();
        if total <= 0.0 {
            return Err(MarketPathError::NonPositiveTotalCap { time: caps.grid.t(j) });
        }
        let dst = all.col_mut(j);
        let mut argmax = 0usize;
        for i in 0..d {
            dst[i] = src[i] / total;
            if dst[i] > dst[argmax] {
                argmax = i;
            }
        }
        // Absorb the normalization residual into the largest weight; two
        // passes pin the column sum to 1.0 up to at most one ulp.
        for _ in 0..2 {
            let sum: f64 = dst.iter().sum();
            if sum == 1.0 {
                break;
            }
            dst[argmax] += 1.0 - sum;
        }
    }
    let pre_cols: Vec<Vec<f64>> = (0..pre_history_days).map(|j| all.col(j).to_vec()).collect();
    let main_cols: Vec<Vec<f64>> =
        (pre_history_days..n).map(|j| all.col(j).to_vec()).collect();
    let grid = TimeGrid::new(caps.grid.times()[pre_history_days..].to_vec())?;
    Ok(MarketWeightPath {
        grid,
        weights: Matrix::from_columns(d, &main_cols),
        pre_history: if pre_history_days == 0 {
            Matrix::zeros(d, 0)
        } else {
            Matrix::from_columns(d, &pre_cols)
        },
    })
}

/// Nested time partitions of the data horizon; the finest level is the data
/// grid itself and defines the working realized covariation. Coarser levels
/// exist for convergence diagnostics.
#[derive(Debug, Clone)]
pub struct RefiningPartitionFamily {
    pub horizon: (f64, f64),
    /// Grid indices per level, coarsest first; each level starts at 0 and
    /// ends at N-1, and is a subset of the next.
    pub levels: Vec<Vec<usize>>,
    grid: TimeGrid,
}

impl RefiningPartitionFamily {
    /// Dyadic family: level k subsamples the data grid with stride
    /// 2^(num_levels-1-k); the last level is the grid itself. The final grid
    /// point is always included.
    pub fn dyadic(grid: &TimeGrid, num_levels: usize) -> Self {
        let n = grid.len();
        let levels = (0..num_levels.max(1))
            .map(|k| {
                let stride = 1usize << (num_levels.max(1) - 1 - k);
                let mut idx: Vec<usize> = (0..n - 1).step_by(stride.max(1)).collect();
                idx.push(n - 1);
                idx.dedup();
                idx
            })
            .collect();
        Self { horizon: (grid.t(0), grid.t(n - 1)), levels, grid: grid.clone() }
    }

    /// Build from explicit per-level time lists; every point must lie on the
    /// data grid and the levels must be nested.
    pub fn from_times(
        grid: &TimeGrid,
        level_times: &[Vec<f64>],
    ) -> Result<Self, MarketPathError> {
        let n = grid.len();
        let mut levels = Vec::with_capacity(level_times.len());
        for times in level_times {
            let mut idx = Vec::with_capacity(times.len() + 2);
            for &t in times {
                match grid.index_of(t) {
                    Some(j) => idx.push(j),
                    None => return Err(MarketPathError::PartitionOffGrid { time: t }),
                }
            }
            idx.sort_unstable();
            idx.dedup();
            if idx.first() != Some(&0) {
                idx.insert(0, 0);
            }
            if idx.last() != Some(&(n - 1)) {
                idx.push(n - 1);
            }
            levels.push(idx);
        }
        for k in 1..levels.len() {
            let finer: std::collections::HashSet<usize> = levels[k].iter().copied().collect();
            if !levels[k - 1].iter().all(|j| finer.contains(j)) {
                return Err(MarketPathError::PartitionNotNested { level: k });
            }
        }
        Ok(Self { horizon: (grid.t(0), grid.t(n - 1)), levels, grid: grid.clone() })
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn finest(&self) -> &[usize] {
        self.levels.last().expect("at least one level")
    }

    /// Largest time step within a level.
    pub fn mesh(&self, level: usize) -> f64 {
        self.levels[level]
            .windows(2)
            .map(|w| self.grid.t(w[1]) - self.grid.t(w[0]))
            .fold(0.0, f64::max)
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }
}

/// Cumulative pathwise covariation `<mu_i, mu_j>` at every point of one
/// partition level, stored as packed lower triangles.
#[derive(Debug, Clone)]
pub struct CovariationPath {
    pub grid: TimeGrid,
    d: usize,
    /// One packed lower triangle (len d(d+1)/2) per grid point, cumulative.
    tri: Vec<Vec<f64>>,
}

#[inline]
fn tri_index(i: usize, j: usize) -> usize {
    let (a, b) = if i >= j { (i, j) } else { (j, i) };
    a * (a + 1) / 2 + b
}

impl CovariationPath {
    pub fn d(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.tri.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tri.is_empty()
    }

    /// Cumulative `<mu_i, mu_j>` at point `k` of this level.
    #[inline]
    pub fn value(&self, k: usize, i: usize, j: usize) -> f64 {
        self.tri[k][tri_index(i, j)]
    }

    /// Increment of the covariation over the level interval ending at `k`.
    #[inline]
    pub fn increment(&self, k: usize, i: usize, j: usize) -> f64 {
        if k == 0 {
            0.0
        } else {
            self.tri[k][tri_index(i, j)] - self.tri[k - 1][tri_index(i, j)]
        }
    }

    /// Long-format CSV `t,i,j,value` (lower triangle mirrored to full).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,i,j,value\n");
        for k in 0..self.len() {
            for i in 0..self.d {
                for j in 0..self.d {
                    out.push_str(&format!(
                        "{},{},{},{}\n",
                        self.grid.t(k),
                        i,
                        j,
                        self.value(k, i, j)
                    ));
                }
            }
        }
        out
    }
}

/// Covariation accumulation over successor pairs of a raw path matrix; used
/// by [`covariation`] and directly testable on non-simplex paths.
pub(crate) fn covariation_on(values: &Matrix, level: &[usize], grid: &TimeGrid) -> CovariationPath {
    let d = values.rows();
    let tri_len = d * (d + 1) / 2;
    let mut tri = Vec::with_capacity(level.len());
    let mut acc = vec![0.0; tri_len];
    tri.push(acc.clone());
    for w in level.windows(2) {
        let a = values.col(w[0]);
        let b = values.col(w[1]);
        let mut idx = 0;
        for i in 0..d {
            let di = b[i] - a[i];
            for j in 0..=i {
                let dj = b[j] - a[j];
                acc[idx] += di * dj;
                idx += 1;
            }
        }
        tri.push(acc.clone());
    }
    CovariationPath { grid: grid.subgrid(level), d, tri }
}

/// Pathwise covariations of the market weights along every level of a
/// refining family; the finest-level result is the working covariation.
pub fn covariation(
    mu: &MarketWeightPath,
    parts: &RefiningPartitionFamily,
) -> Result<Vec<CovariationPath>, MarketPathError> {
    let n = mu.n();
    for level in &parts.levels {
        if level.iter().any(|&j| j >= n) {
            return Err(MarketPathError::PartitionOffGrid {
                time: f64::NAN,
            });
        }
    }
    Ok(parts
        .levels
        .iter()
        .map(|level| covariation_on(&mu.weights, level, &mu.grid))
        .collect())
}

/// Per-asset realized quadratic variation on the data grid: cumulative
/// values and per-step increments `(delta mu_i)^2`. This is the diagonal of
/// the finest-level covariation, stored without the d x d matrices so
/// thousand-asset panels fit in memory.
#[derive(Debug, Clone)]
pub struct QuadraticVariation {
    pub grid: TimeGrid,
    /// d x N cumulative `<mu_i>(t)`.
    pub cum: Matrix,
    /// d x N per-step increments; column 0 is zero.
    pub incr: Matrix,
}

pub fn quadratic_variation(mu: &MarketWeightPath) -> QuadraticVariation {
    let d = mu.d();
    let n = mu.n();
    let mut cum = Matrix::zeros(d, n);
    let mut incr = Matrix::zeros(d, n);
    for j in 1..n {
        let prev = mu.col(j - 1).to_vec();
        let cur = mu.col(j);
        for i in 0..d {
            let dmu = cur[i] - prev[i];
            let inc = dmu * dmu;
            let c = cum.get(i, j - 1) + inc;
            incr.set(i, j, inc);
            cum.set(i, j, c);
        }
    }
    QuadraticVariation { grid: mu.grid.clone(), cum, incr }
}

/// Kind of finite-variation companion path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AuxKind {
    None,
    RunningMax,
    RunningMin,
    /// Moving average over a whole number of grid steps.
    MovingAverage(usize),
    QuadraticVariationVector,
    CovariationMatrix,
}

impl AuxKind {
    pub fn name(&self) -> &'static str {
        match self {
            AuxKind::None => "none",
            AuxKind::RunningMax => "running_max",
            AuxKind::RunningMin => "running_min",
            AuxKind::MovingAverage(_) => "moving_average",
            AuxKind::QuadraticVariationVector => "quadratic_variation",
            AuxKind::CovariationMatrix => "covariation_matrix",
        }
    }
}

/// Finite-variation companion path A with recorded increments. `values` and
/// `increments` are m x N, where m depends on the kind (0 for `None`, d for
/// the vector kinds, d^2 for the covariation matrix).
#[derive(Debug, Clone)]
pub struct AuxPath {
    pub grid: TimeGrid,
    pub kind: AuxKind,
    pub values: Matrix,
    pub increments: Matrix,
}

impl AuxPath {
    pub fn m(&self) -> usize {
        self.values.rows()
    }

    /// Empty companion path (m = 0) for functionals without an A argument.
    pub fn none(grid: &TimeGrid) -> Self {
        let n = grid.len();
        Self {
            grid: grid.clone(),
            kind: AuxKind::None,
            values: Matrix::zeros(0, n),
            increments: Matrix::zeros(0, n),
        }
    }
}

/// Construct the requested companion path of the market weights. Increments
/// at column `j` are `A(t_j) - A(t_{j-1})`; column 0 has zero increments.
pub fn aux_path(mu: &MarketWeightPath, kind: AuxKind) -> Result<AuxPath, MarketPathError> {
    let d = mu.d();
    let n = mu.n();
    let build = |values: Matrix| -> AuxPath {
        let m = values.rows();
        let mut increments = Matrix::zeros(m, n);
        for j in 1..n {
            for i in 0..m {
                increments.set(i, j, values.get(i, j) - values.get(i, j - 1));
            }
        }
        AuxPath { grid: mu.grid.clone(), kind, values, increments }
    };
    match kind {
        AuxKind::None => Ok(AuxPath::none(&mu.grid)),
        AuxKind::RunningMax => {
            let mut v = Matrix::zeros(d, n);
            for i in 0..d {
                let mut m = mu.weight(i, 0);
                for j in 0..n {
                    let w = mu.weight(i, j);
                    if w > m {
                        m = w;
                    }
                    v.set(i, j, m);
                }
            }
            Ok(build(v))
        }
        AuxKind::RunningMin => {
            let mut v = Matrix::zeros(d, n);
            for i in 0..d {
                let mut m = mu.weight(i, 0);
                for j in 0..n {
                    let w = mu.weight(i, j);
                    if w < m {
                        m = w;
                    }
                    v.set(i, j, m);
                }
            }
            Ok(build(v))
        }
        AuxKind::MovingAverage(w) => {
            if w == 0 {
                return Err(MarketPathError::DeltaNotOnGrid { delta: 0.0 });
            }
            let mut v = Matrix::zeros(d, n);
            for j in 0..n {
                for i in 0..d {
                    let mut acc = 0.0;
                    for l in 0..w {
                        let k = j as isize - l as isize;
                        let sample = if k >= 0 {
                            mu.weight(i, k as usize)
                        } else {
                            let back = (-k) as usize;
                            let n0 = mu.pre_history.cols();
                            if back <= n0 {
                                mu.pre_history.get(i, n0 - back)
                            } else {
                                mu.weight(i, 0)
                            }
                        };
                        acc += sample;
                    }
                    v.set(i, j, acc / w as f64);
                }
            }
            Ok(build(v))
        }
        AuxKind::QuadraticVariationVector => {
            let qv = quadratic_variation(mu);
            Ok(build(qv.cum))
        }
        AuxKind::CovariationMatrix => {
            let parts = RefiningPartitionFamily::dyadic(&mu.grid, 1);
            let cov = covariation(mu, &parts)?.pop().expect("one level");
            let mut v = Matrix::zeros(d * d, n);
            for k in 0..n {
                for i in 0..d {
                    for j in 0..d {
                        v.set(i * d + j, k, cov.value(k, i, j));
                    }
                }
            }
            Ok(build(v))
        }
    }
}

/// Whole-step conversion of a time window onto a uniformly spaced grid.
pub fn steps_for_delta(grid: &TimeGrid, delta: f64) -> Result<usize, MarketPathError> {
    if delta <= 0.0 || !delta.is_finite() {
        return Err(MarketPathError::DeltaNotOnGrid { delta });
    }
    let step = grid.t(1) - grid.t(0);
    for w in grid.times().windows(2) {
        if ((w[1] - w[0]) - step).abs() > 1e-9 * step.abs() {
            return Err(MarketPathError::DeltaNotOnGrid { delta });
        }
    }
    let ratio = delta / step;
    let rounded = ratio.round();
    if (ratio - rounded).abs() > 1e-9 || rounded < 1.0 {
        return Err(MarketPathError::DeltaNotOnGrid { delta });
    }
    Ok(rounded as usize)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn caps_from(cols: &[Vec<f64>]) -> CapitalizationPath {
        let d = cols[0].len();
        CapitalizationPath::from_parts(
            TimeGrid::unit(cols.len()),
            Matrix::from_columns(d, cols),
            (0..d).map(|i| format!("a{i}")).collect(),
        )
        .unwrap()
    }

    #[test]
    fn load_symmetric_two_assets() {
        let csv = "date,a,b\n0,1,1\n1,2,2\n2,3,3\n";
        let path = load_capitalizations(csv.as_bytes(), &CsvSpec::default()).unwrap();
        assert_eq!(path.d(), 2);
        assert_eq!(path.n(), 3);
        assert_eq!(path.totals(), vec![2.0, 4.0, 6.0]);
    }

    #[test]
    fn zero_total_cap_rejected() {
        let csv = "date,a,b\n0,1,1\n1,0,0\n2,1,1\n";
        let err = load_capitalizations(csv.as_bytes(), &CsvSpec::default()).unwrap_err();
        assert!(matches!(err, MarketPathError::NonPositiveTotalCap { .. }));
    }

    #[test]
    fn malformed_row_reports_line() {
        let csv = "date,a,b\n0,1,1\n1,xyz,2\n";
        let err = load_capitalizations(csv.as_bytes(), &CsvSpec::default()).unwrap_err();
        match err {
            MarketPathError::MalformedRow { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn nonfinite_cell_rejected() {
        let csv = "date,a,b\n0,1,1\n1,inf,2\n";
        let err = load_capitalizations(csv.as_bytes(), &CsvSpec::default()).unwrap_err();
        assert!(matches!(err, MarketPathError::NonFiniteValue { line: 3, .. }));
    }

    #[test]
    fn weights_normalize_and_sum_to_one_exactly() {
        let caps = caps_from(&[vec![1.0, 1.0, 2.0], vec![3.0, 1.0, 1.0]]);
        let mu = to_market_weights(&caps, 0).unwrap();
        assert_eq!(mu.col(0), &[0.25, 0.25, 0.5]);
        for j in 0..mu.n() {
            let s: f64 = mu.col(j).iter().sum();
            assert!((s - 1.0).abs() <= f64::EPSILON, "column {j} sums to {s}");
        }
    }

    #[test]
    fn equal_caps_give_uniform_weights() {
        let caps = caps_from(&[vec![5.0; 7], vec![3.0; 7]]);
        let mu = to_market_weights(&caps, 0).unwrap();
        for j in 0..2 {
            for i in 0..7 {
                assert!((mu.weight(i, j) - 1.0 / 7.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn pre_history_equal_to_length_rejected() {
        let caps = caps_from(&[vec![1.0, 1.0], vec![1.0, 2.0], vec![1.0, 3.0]]);
        let err = to_market_weights(&caps, 3).unwrap_err();
        assert!(matches!(err, MarketPathError::InsufficientHistory { .. }));
    }

    #[test]
    fn pre_history_split_shifts_origin() {
        let caps = caps_from(&[
            vec![1.0, 1.0],
            vec![2.0, 1.0],
            vec![3.0, 1.0],
            vec![4.0, 1.0],
        ]);
        let mu = to_market_weights(&caps, 2).unwrap();
        assert_eq!(mu.n(), 2);
        assert_eq!(mu.pre_len(), 2);
        assert_eq!(mu.grid.t(0), 2.0);
        // lag 1 from index 0 reaches the last pre-history column
        let lagged = mu.lag_col(0, 1).unwrap();
        assert!((lagged[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!(mu.lag_col(0, 3).is_none());
    }

    #[test]
    fn covariation_of_constant_path_is_zero() {
        let caps = caps_from(&vec![vec![1.0, 2.0]; 9]);
        let mu = to_market_weights(&caps, 0).unwrap();
        let parts = RefiningPartitionFamily::dyadic(&mu.grid, 3);
        let covs = covariation(&mu, &parts).unwrap();
        for cov in &covs {
            for k in 0..cov.len() {
                for i in 0..2 {
                    for j in 0..2 {
                        assert_eq!(cov.value(k, i, j), 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn sawtooth_quadratic_variation_is_step_count() {
        // brute force oracle: sum of squared unit increments over 4 steps = 4
        let vals = Matrix::from_columns(1, &[vec![0.0], vec![1.0], vec![0.0], vec![1.0], vec![0.0]]);
        let grid = TimeGrid::unit(5);
        let cov = covariation_on(&vals, &[0, 1, 2, 3, 4], &grid);
        assert_eq!(cov.value(4, 0, 0), 4.0);
    }

    #[test]
    fn two_asset_affine_constraint() {
        let caps = caps_from(&[
            vec![1.0, 1.0],
            vec![1.5, 1.0],
            vec![0.8, 1.0],
            vec![1.2, 1.0],
        ]);
        let mu = to_market_weights(&caps, 0).unwrap();
        let parts = RefiningPartitionFamily::dyadic(&mu.grid, 1);
        let cov = covariation(&mu, &parts).unwrap().pop().unwrap();
        let k = cov.len() - 1;
        assert!((cov.value(k, 0, 1) + cov.value(k, 0, 0)).abs() < 1e-15);
        assert_eq!(cov.value(k, 0, 1), cov.value(k, 1, 0));
    }

    #[test]
    fn dyadic_levels_are_nested_and_end_at_horizon() {
        let grid = TimeGrid::unit(11);
        let parts = RefiningPartitionFamily::dyadic(&grid, 4);
        assert_eq!(parts.num_levels(), 4);
        for k in 1..4 {
            let finer: std::collections::HashSet<_> = parts.levels[k].iter().collect();
            assert!(parts.levels[k - 1].iter().all(|j| finer.contains(j)), "level {k}");
        }
        for level in &parts.levels {
            assert_eq!(*level.first().unwrap(), 0);
            assert_eq!(*level.last().unwrap(), 10);
        }
        assert_eq!(parts.finest().len(), 11);
        assert!(parts.mesh(0) > parts.mesh(3));
    }

    #[test]
    fn explicit_partition_off_grid_rejected() {
        let grid = TimeGrid::unit(5);
        let err = RefiningPartitionFamily::from_times(&grid, &[vec![0.0, 2.5, 4.0]]).unwrap_err();
        assert!(matches!(err, MarketPathError::PartitionOffGrid { .. }));
    }

    #[test]
    fn running_max_of_monotone_path_is_identity() {
        let caps = caps_from(&[vec![1.0, 4.0], vec![2.0, 4.0], vec![3.0, 4.0], vec![4.0, 4.0]]);
        let mu = to_market_weights(&caps, 0).unwrap();
        let aux = aux_path(&mu, AuxKind::RunningMax).unwrap();
        for j in 0..mu.n() {
            assert_eq!(aux.values.get(0, j), mu.weight(0, j));
        }
        // and the running min at t0 equals mu(t0)
        let mins = aux_path(&mu, AuxKind::RunningMin).unwrap();
        assert_eq!(mins.values.col(0), mu.col(0));
    }

    #[test]
    fn envelope_and_monotonicity_of_extrema() {
        let caps = caps_from(&[
            vec![1.0, 1.0],
            vec![2.0, 1.0],
            vec![0.5, 1.0],
            vec![3.0, 1.0],
            vec![1.0, 1.0],
        ]);
        let mu = to_market_weights(&caps, 0).unwrap();
        let mx = aux_path(&mu, AuxKind::RunningMax).unwrap();
        let mn = aux_path(&mu, AuxKind::RunningMin).unwrap();
        for j in 0..mu.n() {
            for i in 0..2 {
                assert!(mx.values.get(i, j) >= mu.weight(i, j));
                assert!(mn.values.get(i, j) <= mu.weight(i, j));
                if j > 0 {
                    assert!(mx.increments.get(i, j) >= 0.0);
                    assert!(mn.increments.get(i, j) <= 0.0);
                }
            }
        }
    }

    #[test]
    fn moving_average_of_constant_path_is_constant() {
        let caps = caps_from(&vec![vec![2.0, 6.0]; 8]);
        let mu = to_market_weights(&caps, 3).unwrap();
        let aux = aux_path(&mu, AuxKind::MovingAverage(4)).unwrap();
        for j in 0..mu.n() {
            assert!((aux.values.get(0, j) - 0.25).abs() < 1e-15);
            assert!((aux.values.get(1, j) - 0.75).abs() < 1e-15);
        }
    }

    #[test]
    fn delta_conversion_requires_whole_steps() {
        let grid = TimeGrid::unit(6);
        assert_eq!(steps_for_delta(&grid, 2.0).unwrap(), 2);
        assert!(matches!(
            steps_for_delta(&grid, 1.5),
            Err(MarketPathError::DeltaNotOnGrid { .. })
        ));
    }

    #[test]
    fn telescoping_increments_reproduce_cumulative() {
        let caps = caps_from(&[
            vec![1.0, 2.0, 3.0],
            vec![2.0, 2.0, 2.0],
            vec![1.0, 3.0, 2.0],
            vec![2.5, 1.0, 2.5],
        ]);
        let mu = to_market_weights(&caps, 0).unwrap();
        let parts = RefiningPartitionFamily::dyadic(&mu.grid, 2);
        for cov in covariation(&mu, &parts).unwrap() {
            for i in 0..3 {
                for j in 0..3 {
                    let total: f64 = (0..cov.len()).map(|k| cov.increment(k, i, j)).sum();
                    assert!((total - cov.value(cov.len() - 1, i, j)).abs() < 1e-15);
                }
            }
            // diagonal entries nondecreasing
            for i in 0..3 {
                for k in 1..cov.len() {
                    assert!(cov.value(k, i, i) >= cov.value(k - 1, i, i) - 1e-18);
                }
            }
        }
    }
}
