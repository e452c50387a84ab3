//! State space, observable and transition schedules `n ↦ Pₙ`.
//!
//! Every family can produce its kernel in log space. The oracle works from
//! `log_matrix` directly because connecting probabilities in the fixtures
//! reach `3^{-20000}` and would underflow as plain `f64`.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numerics::{log_sum_exp_f64, ExtReal};

/// Row-sum tolerance for stochastic matrices.
pub const ROW_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace {
    labels: Vec<String>,
}

impl StateSpace {
    pub fn new(labels: Vec<String>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::spec("state space must contain at least one state"));
        }
        let mut seen = std::collections::HashSet::new();
        for l in &labels {
            if !seen.insert(l.as_str()) {
                return Err(Error::spec(format!("duplicate state label {l:?}")));
            }
        }
        Ok(StateSpace { labels })
    }

    /// States labelled `first, first+1, ...`.
    pub fn numbered(r: usize, first: usize) -> Self {
        StateSpace { labels: (0..r).map(|i| (i + first).to_string()).collect() }
    }

    pub fn size(&self) -> usize {
        self.labels.len()
    }

    pub fn label(&self, x: usize) -> &str {
        &self.labels[x]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }
}

/// `f : Σ → R^d`, stored per state.
#[derive(Debug, Clone, PartialEq)]
pub struct Observable {
    d: usize,
    values: Vec<Vec<f64>>,
}

impl Observable {
    /// Builds from per-state vectors.
    pub fn from_states(values: Vec<Vec<f64>>) -> Result<Self> {
        let d = values.first().map(|v| v.len()).unwrap_or(0);
        if d == 0 {
            return Err(Error::spec("observable must have dimension d >= 1"));
        }
        for (x, v) in values.iter().enumerate() {
            if v.len() != d {
                return Err(Error::spec(format!("observable value at state {x} has {} coordinates, expected {d}", v.len())));
            }
            if v.iter().any(|c| !c.is_finite()) {
                return Err(Error::spec(format!("observable value at state {x} is not finite")));
            }
        }
        Ok(Observable { d, values })
    }

    /// Builds a one-dimensional observable.
    pub fn scalar(values: &[f64]) -> Result<Self> {
        Self::from_states(values.iter().map(|&v| vec![v]).collect())
    }

    /// Builds from `d` rows of `r` values (the file layout).
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::spec("observable must have at least one row"));
        }
        let r = rows[0].len();
        if rows.iter().any(|row| row.len() != r) {
            return Err(Error::spec("observable rows have different lengths"));
        }
        Self::from_states((0..r).map(|x| rows.iter().map(|row| row[x]).collect()).collect())
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn num_states(&self) -> usize {
        self.values.len()
    }

    pub fn value(&self, x: usize) -> &[f64] {
        &self.values[x]
    }

    /// `‖f‖ = max_k max_x |f_k(x)|`.
    pub fn sup_norm(&self) -> f64 {
        self.values.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Whether `z` lies in the cube `[−‖f‖, ‖f‖]^d` (with slack `tol`).
    pub fn in_cube(&self, z: &[f64], tol: f64) -> bool {
        let n = self.sup_norm();
        z.len() == self.d && z.iter().all(|c| c.abs() <= n + tol)
    }

    /// Coordinate `k` across all states.
    pub fn coordinate(&self, k: usize) -> Vec<f64> {
        self.values.iter().map(|v| v[k]).collect()
    }
}

/// Dense square matrix, row-major.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    n: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries((0..self.n).map(|i| self.row(i))).finish()
    }
}

impl Matrix {
    pub fn zeros(n: usize) -> Self {
        Matrix { n, data: vec![0.0; n * n] }
    }

    pub fn filled(n: usize, value: f64) -> Self {
        Matrix { n, data: vec![value; n * n] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::spec("matrix must be nonempty"));
        }
        let mut data = Vec::with_capacity(n * n);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::spec(format!("matrix row {i} has {} entries, expected {n}", row.len())));
            }
            data.extend_from_slice(row);
        }
        Ok(Matrix { n, data })
    }

    pub fn size(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.n).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix { n: self.n, data: self.data.iter().map(|&x| f(x)).collect() }
    }

    /// Restriction to `states` (in the given order).
    pub fn submatrix(&self, states: &[usize]) -> Matrix {
        let k = states.len();
        let mut m = Matrix::zeros(k);
        for (a, &x) in states.iter().enumerate() {
            for (b, &y) in states.iter().enumerate() {
                m.set(a, b, self.get(x, y));
            }
        }
        m
    }

    /// Checks entries in `[0, 1]` and row sums within [`ROW_TOL`] of 1.
    pub fn check_stochastic(&self) -> Result<()> {
        for i in 0..self.n {
            let row = self.row(i);
            if row.iter().any(|&p| !(0.0..=1.0 + ROW_TOL).contains(&p)) {
                return Err(Error::NotStochastic { row: i, sum: row.iter().sum() });
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_TOL {
                return Err(Error::NotStochastic { row: i, sum });
            }
        }
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        self.data.iter().zip(&other.data).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

/// Cooling schedule `n ↦ βₙ` for the Metropolis family.
#[derive(Debug, Clone, PartialEq)]
pub enum Cooling {
    /// `c·n`
    Linear { c: f64 },
    /// `c·log n`
    Logarithmic { c: f64 },
    /// `c·n^p`
    Power { c: f64, exponent: f64 },
    /// `table[n-1]` for `n ≤ len`, then linear continuation with `tail_slope`.
    Tabulated { table: Vec<f64>, tail_slope: f64 },
}

impl Cooling {
    pub fn beta(&self, n: u64) -> f64 {
        let nf = n as f64;
        match self {
            Cooling::Linear { c } => c * nf,
            Cooling::Logarithmic { c } => c * nf.ln(),
            Cooling::Power { c, exponent } => c * nf.powf(*exponent),
            Cooling::Tabulated { table, tail_slope } => {
                let t = table.len() as u64;
                if n <= t {
                    table[(n - 1) as usize]
                } else {
                    table[table.len() - 1] + tail_slope * (n - t) as f64
                }
            }
        }
    }

    /// `limsup βₙ / n`.
    pub fn linear_rate(&self) -> ExtReal {
        match self {
            Cooling::Linear { c } => ExtReal::Finite(*c),
            Cooling::Logarithmic { .. } => ExtReal::ZERO,
            Cooling::Power { c, exponent } => {
                if *c == 0.0 || *exponent < 1.0 {
                    ExtReal::ZERO
                } else if *exponent == 1.0 {
                    ExtReal::Finite(*c)
                } else {
                    ExtReal::PosInf
                }
            }
            Cooling::Tabulated { tail_slope, .. } => ExtReal::Finite(*tail_slope),
        }
    }

    /// Whether `βₙ → ∞`.
    pub fn diverges(&self) -> bool {
        match self {
            Cooling::Linear { c } | Cooling::Logarithmic { c } => *c > 0.0,
            Cooling::Power { c, exponent } => *c > 0.0 && *exponent > 0.0,
            Cooling::Tabulated { tail_slope, .. } => *tail_slope > 0.0,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Cooling::Linear { c } | Cooling::Logarithmic { c } | Cooling::Power { c, .. } if *c < 0.0 => {
                Err(Error::spec("cooling constant c must be nonnegative"))
            }
            Cooling::Tabulated { table, .. } if table.is_empty() => Err(Error::spec("tabulated cooling needs a nonempty table")),
            Cooling::Tabulated { table, tail_slope } => {
                if table.iter().any(|b| !b.is_finite() || *b < 0.0) || *tail_slope < 0.0 {
                    return Err(Error::spec("tabulated cooling values must be finite and nonnegative"));
                }
                if table.windows(2).any(|w| w[1] < w[0]) {
                    return Err(Error::spec("tabulated cooling must be nondecreasing"));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetropolisSpec {
    pub g: Matrix,
    pub h: Vec<f64>,
    pub beta: Cooling,
}

impl MetropolisSpec {
    pub fn new(g: Matrix, h: Vec<f64>, beta: Cooling) -> Result<Self> {
        g.check_stochastic()?;
        if h.len() != g.size() {
            return Err(Error::spec(format!("energy has {} values for {} states", h.len(), g.size())));
        }
        if h.iter().any(|v| !v.is_finite()) {
            return Err(Error::spec("energy values must be finite"));
        }
        beta.validate()?;
        Ok(MetropolisSpec { g, h, beta })
    }

    fn uphill(&self, i: usize, j: usize) -> f64 {
        (self.h[j] - self.h[i]).max(0.0)
    }
}

/// Metropolis kernel at time `n`: off-diagonal `g(i,j)·exp(−βₙ(H(j)−H(i))₊)`,
/// rejected mass on the diagonal.
pub fn metropolis_kernel(spec: &MetropolisSpec, n: u64) -> Result<Matrix> {
    spec.g.check_stochastic()?;
    Ok(metropolis_log_kernel(spec, n).map(f64::exp))
}

fn metropolis_log_kernel(spec: &MetropolisSpec, n: u64) -> Matrix {
    let r = spec.g.size();
    let beta = spec.beta.beta(n);
    let mut m = Matrix::filled(r, f64::NEG_INFINITY);
    for i in 0..r {
        // The diagonal is g(i,i) plus the rejected part of each proposal,
        // summed directly to avoid cancellation in 1 − Σ off-diagonal.
        let mut stay = spec.g.get(i, i);
        for j in 0..r {
            if j == i {
                continue;
            }
            let gij = spec.g.get(i, j);
            if gij <= 0.0 {
                continue;
            }
            let e = beta * spec.uphill(i, j);
            m.set(i, j, gij.ln() - e);
            stay += gij * -(-e).exp_m1();
        }
        m.set(i, i, if stay > 0.0 { stay.ln() } else { f64::NEG_INFINITY });
    }
    m
}

/// Zero-temperature limit: off-diagonal `g(i,j)·1[H(j) ≤ H(i)]`.
pub fn metropolis_limit(spec: &MetropolisSpec) -> Result<Matrix> {
    if !spec.beta.diverges() {
        return Err(Error::spec("cooling schedule is bounded; the kernel has no zero-temperature limit"));
    }
    let r = spec.g.size();
    let mut m = Matrix::zeros(r);
    for i in 0..r {
        let mut stay = spec.g.get(i, i);
        for j in 0..r {
            if j == i {
                continue;
            }
            let gij = spec.g.get(i, j);
            if spec.h[j] <= spec.h[i] {
                m.set(i, j, gij);
            } else {
                stay += gij;
            }
        }
        m.set(i, i, stay);
    }
    Ok(m)
}

/// Generator returning `log Pₙ` for a compiled-in schedule.
#[derive(Clone)]
pub struct CustomKernel {
    pub name: String,
    log_matrix: Arc<dyn Fn(u64) -> Matrix + Send + Sync>,
}

impl CustomKernel {
    pub fn new(name: impl Into<String>, log_matrix: impl Fn(u64) -> Matrix + Send + Sync + 'static) -> Self {
        CustomKernel { name: name.into(), log_matrix: Arc::new(log_matrix) }
    }
}

impl fmt::Debug for CustomKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CustomKernel({})", self.name)
    }
}

/// Block-boundary sequence `g(m) = 2^(m²)`, saturating at `u64::MAX`.
pub fn block_boundary(m: u32) -> u64 {
    let e = (m as u64).saturating_mul(m as u64);
    if e >= 64 {
        u64::MAX
    } else {
        1u64 << e
    }
}

#[derive(Debug, Clone)]
pub enum Family {
    Constant,
    /// Explicit `P₁..P_T`, then `tail` for every later step.
    Tabulated { table: Vec<Matrix>, tail: Matrix },
    Metropolis(MetropolisSpec),
    /// Two states, `[[1−b⁻ⁿ, b⁻ⁿ], [0, 1]]` with base `even_base` for even `n`
    /// and `odd_base` for odd `n`.
    AlternatingTwoState { even_base: f64, odd_base: f64 },
    /// Identity up to `g(2)`, then the `even_base` kernel on `(g(2k), g(2k+1)]`
    /// and the `odd_base` kernel on `(g(2k+1), g(2k+2)]`, `g(m) = 2^(m²)`.
    BlockAlternating { even_base: f64, odd_base: f64 },
    Custom(CustomKernel),
}

impl Family {
    pub fn tag(&self) -> &'static str {
        match self {
            Family::Constant => "constant",
            Family::Tabulated { .. } => "tabulated",
            Family::Metropolis(_) => "metropolis",
            Family::AlternatingTwoState { .. } => "alternating-two-state",
            Family::BlockAlternating { .. } => "block-alternating",
            Family::Custom(_) => "custom",
        }
    }
}

/// Block-level decay exponents declared by the chain author, indexed in
/// decomposition block order.
#[derive(Debug, Clone, PartialEq)]
pub struct DeclaredRates {
    pub v: Vec<Vec<ExtReal>>,
    pub tau: Vec<Vec<ExtReal>>,
    /// Whether every entry `(1/n) log pₙ(x,y)` has a limit.
    pub entry_limits: bool,
}

#[derive(Debug, Clone)]
pub struct Schedule {
    pub family: Family,
    limit: Matrix,
    pub rates: Option<DeclaredRates>,
}

fn two_state_log(base: f64, n: u64) -> Matrix {
    let lt = -(n as f64) * base.ln();
    let mut m = Matrix::zeros(2);
    m.set(0, 0, (-lt.exp()).ln_1p());
    m.set(0, 1, lt);
    m.set(1, 0, f64::NEG_INFINITY);
    m.set(1, 1, 0.0);
    m
}

impl Schedule {
    /// Constant schedule `Pₙ ≡ P`.
    pub fn constant(p: Matrix) -> Result<Self> {
        p.check_stochastic()?;
        Ok(Schedule { family: Family::Constant, limit: p, rates: None })
    }

    pub fn tabulated(table: Vec<Matrix>, tail: Matrix) -> Result<Self> {
        tail.check_stochastic()?;
        for m in &table {
            if m.size() != tail.size() {
                return Err(Error::spec("tabulated matrices must all have the same size"));
            }
            m.check_stochastic()?;
        }
        Ok(Schedule { limit: tail.clone(), family: Family::Tabulated { table, tail }, rates: None })
    }

    pub fn metropolis(spec: MetropolisSpec) -> Result<Self> {
        let limit = metropolis_limit(&spec)?;
        Ok(Schedule { family: Family::Metropolis(spec), limit, rates: None })
    }

    pub fn alternating_two_state(even_base: f64, odd_base: f64) -> Result<Self> {
        if !(even_base > 1.0 && odd_base > 1.0) {
            return Err(Error::spec("alternating bases must exceed 1"));
        }
        Ok(Schedule { family: Family::AlternatingTwoState { even_base, odd_base }, limit: Matrix::identity(2), rates: None })
    }

    pub fn block_alternating(even_base: f64, odd_base: f64) -> Result<Self> {
        if !(even_base > 1.0 && odd_base > 1.0) {
            return Err(Error::spec("alternating bases must exceed 1"));
        }
        Ok(Schedule { family: Family::BlockAlternating { even_base, odd_base }, limit: Matrix::identity(2), rates: None })
    }

    /// A compiled-in generator. `limit` must be the entrywise limit of the
    /// generated kernels.
    pub fn custom(kernel: CustomKernel, limit: Matrix) -> Result<Self> {
        limit.check_stochastic()?;
        Ok(Schedule { family: Family::Custom(kernel), limit, rates: None })
    }

    pub fn with_rates(mut self, rates: DeclaredRates) -> Self {
        self.rates = Some(rates);
        self
    }

    pub fn limit(&self) -> &Matrix {
        &self.limit
    }

    pub fn num_states(&self) -> usize {
        self.limit.size()
    }

    /// `log Pₙ` entrywise, `−∞` for zero entries.
    pub fn log_matrix(&self, n: u64) -> Result<Matrix> {
        if n == 0 {
            return Err(Error::OutOfRange { index: 0, message: "schedules are indexed from n = 1".into() });
        }
        Ok(match &self.family {
            Family::Constant => self.limit.map(f64::ln),
            Family::Tabulated { table, tail } => match table.get((n - 1) as usize) {
                Some(m) => m.map(f64::ln),
                None => tail.map(f64::ln),
            },
            Family::Metropolis(spec) => metropolis_log_kernel(spec, n),
            Family::AlternatingTwoState { even_base, odd_base } => {
                two_state_log(if n % 2 == 0 { *even_base } else { *odd_base }, n)
            }
            Family::BlockAlternating { even_base, odd_base } => {
                if n <= block_boundary(2) {
                    Matrix::identity(2).map(f64::ln)
                } else {
                    // smallest m with n ≤ g(m); n lies in (g(m−1), g(m)]
                    let mut m = 3;
                    while block_boundary(m) < n {
                        m += 1;
                    }
                    two_state_log(if m % 2 == 1 { *even_base } else { *odd_base }, n)
                }
            }
            Family::Custom(k) => (k.log_matrix)(n),
        })
    }

    /// `Pₙ`.
    pub fn matrix(&self, n: u64) -> Result<Matrix> {
        Ok(self.log_matrix(n)?.map(f64::exp))
    }
}

/// `schedule_matrix(s, n)`.
pub fn schedule_matrix(s: &Schedule, n: u64) -> Result<Matrix> {
    s.matrix(n)
}

/// Normalizes each row of a log-space nonnegative matrix to sum to one.
pub fn normalize_log_rows(m: &mut Matrix) {
    let r = m.size();
    for i in 0..r {
        let z = log_sum_exp_f64(m.row(i));
        if z.is_finite() {
            for j in 0..r {
                let v = m.get(i, j);
                m.set(i, j, v - z);
            }
        }
    }
}

/// Everything needed to define the law of `Zₙ`.
#[derive(Debug, Clone)]
pub struct Chain {
    pub states: StateSpace,
    pub f: Observable,
    pub pi: Vec<f64>,
    pub schedule: Schedule,
}

impl Chain {
    pub fn new(states: StateSpace, f: Observable, pi: Vec<f64>, schedule: Schedule) -> Result<Self> {
        let r = states.size();
        if f.num_states() != r {
            return Err(Error::spec(format!("observable covers {} states, expected {r}", f.num_states())));
        }
        if pi.len() != r {
            return Err(Error::spec(format!("initial distribution has {} entries, expected {r}", pi.len())));
        }
        if pi.iter().any(|p| !(0.0..=1.0).contains(p)) || (pi.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::spec("initial distribution must be a probability vector"));
        }
        if schedule.num_states() != r {
            return Err(Error::spec(format!("schedule has {} states, expected {r}", schedule.num_states())));
        }
        Ok(Chain { states, f, pi, schedule })
    }

    pub fn num_states(&self) -> usize {
        self.states.size()
    }
}
