//! Connection weights between blocks, their exponential decay rates, and
//! the routing costs built from them.

use std::fmt;

use crate::chain_model::{Family, Matrix, Schedule};
use crate::decomposition::{is_primitive, CanonicalDecomposition, StarMatrix};
use crate::error::{Error, Result};
use crate::numerics::{ext_mul, ExtReal};

/// Square matrix of extended nonpositive reals indexed by blocks. The
/// diagonal is never read.
#[derive(Clone, PartialEq)]
pub struct CostMatrix {
    k: usize,
    data: Vec<ExtReal>,
}

impl fmt::Debug for CostMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries((0..self.k).map(|i| &self.data[i * self.k..(i + 1) * self.k])).finish()
    }
}

impl CostMatrix {
    pub fn filled(k: usize, v: ExtReal) -> Self {
        CostMatrix { k, data: vec![v; k * k] }
    }

    pub fn from_rows(rows: &[Vec<ExtReal>]) -> Result<Self> {
        let k = rows.len();
        let mut data = Vec::with_capacity(k * k);
        for row in rows {
            if row.len() != k {
                return Err(Error::spec("cost matrix must be square"));
            }
            for &x in row {
                if x > ExtReal::ZERO {
                    return Err(Error::spec("costs must lie in [-inf, 0]"));
                }
            }
            data.extend_from_slice(row);
        }
        Ok(CostMatrix { k, data })
    }

    pub fn size(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> ExtReal {
        self.data[i * self.k + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: ExtReal) {
        self.data[i * self.k + j] = v;
    }

    pub fn rows(&self) -> Vec<Vec<ExtReal>> {
        (0..self.k).map(|i| self.data[i * self.k..(i + 1) * self.k].to_vec()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Analytic,
    Estimated,
}

/// Upper (`v`, limsup) and lower (`τ`, liminf) decay exponents of the
/// connection weights.
#[derive(Debug, Clone, PartialEq)]
pub struct RatePair {
    pub v: CostMatrix,
    pub tau: CostMatrix,
    pub provenance: Provenance,
    /// Whether the per-entry exponents of `Pₙ` are known to converge.
    pub entry_limits: bool,
    /// Standard error of the fitted tail slope, for estimated entries.
    pub slope_stderr: Option<Vec<Vec<f64>>>,
}

/// `log t(n,(i,j)) = max_{x∈C_i, y∈C_j} log pₙ(x,y)` from `log Pₙ`.
pub fn log_connection_weight(log_p: &Matrix, dec: &CanonicalDecomposition, i: usize, j: usize) -> f64 {
    let mut best = f64::NEG_INFINITY;
    for &x in &dec.blocks[i].states {
        for &y in &dec.blocks[j].states {
            best = best.max(log_p.get(x, y));
        }
    }
    best
}

/// `t(n,(i,j))`.
pub fn connection_weight(s: &Schedule, dec: &CanonicalDecomposition, n: u64, i: usize, j: usize) -> Result<f64> {
    Ok(log_connection_weight(&s.log_matrix(n)?, dec, i, j).exp())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRateFit {
    pub intercept: f64,
    pub slope: f64,
    pub slope_stderr: f64,
    /// Upper and lower exponents: the slope itself when the tail is a clean
    /// line, else `max` and `min` of `log t(n)/n` over the tail.
    pub upper: f64,
    pub lower: f64,
}

/// Standard error of the slope, relative to its size, below which the tail is
/// read as a clean exponential.
pub const REGULAR_FIT_TOL: f64 = 1e-4;

/// Least-squares line `log t(n) ≈ a + b·n` through the last 20% of
/// `series[k] = log t(k+1)`. Zero entries make the lower rate `−∞`; an
/// all-zero tail makes everything `−∞`.
pub fn fit_log_rate(series: &[f64]) -> LogRateFit {
    let w = series.len();
    let start = w - (w / 5).max(2).min(w);
    let pts: Vec<(f64, f64)> = series[start..]
        .iter()
        .enumerate()
        .filter(|(_, y)| y.is_finite())
        .map(|(k, &y)| ((start + k + 1) as f64, y))
        .collect();
    let ninf = f64::NEG_INFINITY;
    if pts.is_empty() {
        return LogRateFit { intercept: ninf, slope: ninf, slope_stderr: 0.0, upper: ninf, lower: ninf };
    }
    let m = pts.len() as f64;
    let (sx, sy) = pts.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    let (mx, my) = (sx / m, sy / m);
    let sxx: f64 = pts.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let resid: f64 = pts.iter().map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let slope_stderr = if pts.len() > 2 && sxx > 0.0 { (resid / (m - 2.0) / sxx).sqrt() } else { 0.0 };
    let (upper, mut lower) = if slope_stderr <= REGULAR_FIT_TOL * slope.abs().max(1.0) {
        (slope, slope)
    } else {
        let rs = pts.iter().map(|(x, y)| y / x);
        (rs.clone().fold(ninf, f64::max), rs.fold(f64::INFINITY, f64::min))
    };
    if pts.len() < w - start {
        lower = ninf;
    }
    LogRateFit { intercept, slope, slope_stderr, upper: upper.min(0.0), lower: lower.min(0.0) }
}

/// Closed-form rates when the family or the chain author supplies them.
pub fn analytic_rates(s: &Schedule, dec: &CanonicalDecomposition) -> Option<RatePair> {
    let k = dec.num_blocks();
    let build = |f: &dyn Fn(usize, usize) -> (ExtReal, ExtReal), entry_limits: bool| {
        let mut v = CostMatrix::filled(k, ExtReal::ZERO);
        let mut tau = CostMatrix::filled(k, ExtReal::ZERO);
        for i in 0..k {
            for j in 0..k {
                if i != j {
                    let (a, b) = f(i, j);
                    v.set(i, j, a);
                    tau.set(i, j, b);
                }
            }
        }
        RatePair { v, tau, provenance: Provenance::Analytic, entry_limits, slope_stderr: None }
    };
    if let Some(r) = &s.rates {
        if r.v.len() != k {
            return None;
        }
        return Some(build(&|i, j| (r.v[i][j], r.tau[i][j]), r.entry_limits));
    }
    let limit = s.limit();
    match &s.family {
        Family::Constant => Some(build(
            &|i, j| {
                let t = log_connection_weight(&limit.map(f64::ln), dec, i, j);
                let e = if t > f64::NEG_INFINITY { ExtReal::ZERO } else { ExtReal::NegInf };
                (e, e)
            },
            true,
        )),
        Family::Metropolis(m) => {
            let speed = m.beta.linear_rate();
            Some(build(
                &|i, j| {
                    let mut best = ExtReal::NegInf;
                    for &x in &dec.blocks[i].states {
                        for &y in &dec.blocks[j].states {
                            if m.g.get(x, y) > 0.0 {
                                let gap = ExtReal::Finite((m.h[y] - m.h[x]).max(0.0));
                                best = best.max(ext_mul(speed, gap).neg());
                            }
                        }
                    }
                    (best, best)
                },
                true,
            ))
        }
        Family::AlternatingTwoState { even_base, odd_base } | Family::BlockAlternating { even_base, odd_base } => {
            if dec.blocks.len() != 2 || dec.blocks[0].states != [0] {
                return None;
            }
            let (a, b) = (-even_base.ln(), -odd_base.ln());
            Some(build(
                &|i, _| {
                    if i == 0 {
                        (ExtReal::Finite(a.max(b)), ExtReal::Finite(a.min(b)))
                    } else {
                        (ExtReal::NegInf, ExtReal::NegInf)
                    }
                },
                even_base == odd_base,
            ))
        }
        Family::Tabulated { .. } | Family::Custom(_) => None,
    }
}

/// `v` and `τ`: analytic when available, otherwise fitted on `n = 1..=window`.
pub fn rate_limits(s: &Schedule, dec: &CanonicalDecomposition, window: u64) -> Result<RatePair> {
    if let Some(rp) = analytic_rates(s, dec) {
        return Ok(rp);
    }
    let k = dec.num_blocks();
    let w = window.max(10) as usize;
    let mut series = vec![Vec::with_capacity(w); k * k];
    for n in 1..=w as u64 {
        let lm = s.log_matrix(n)?;
        for i in 0..k {
            for j in 0..k {
                if i != j {
                    series[i * k + j].push(log_connection_weight(&lm, dec, i, j));
                }
            }
        }
    }
    let mut v = CostMatrix::filled(k, ExtReal::ZERO);
    let mut tau = CostMatrix::filled(k, ExtReal::ZERO);
    let mut se = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in 0..k {
            if i == j {
                continue;
            }
            let fit = fit_log_rate(&series[i * k + j]);
            v.set(i, j, ExtReal::from_f64(fit.upper));
            tau.set(i, j, ExtReal::from_f64(fit.lower));
            se[i][j] = fit.slope_stderr;
        }
    }
    Ok(RatePair { v, tau, provenance: Provenance::Estimated, entry_limits: false, slope_stderr: Some(se) })
}

/// Input for [`monotone_envelope`]: `t₁..t_W`, the declared limit `δ` of
/// `tₙ`, and the declared `limsup (1/n) log tₙ`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopeInput {
    pub values: Vec<f64>,
    pub limit: f64,
    pub limsup_rate: ExtReal,
}

/// Which construction produced the envelope.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvelopeCase {
    PositiveLimit,
    EventuallyZero,
    NegativeRate,
    ZeroRate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub case: EnvelopeCase,
    /// `log t̂ₙ`, `n = 1..W`.
    pub log_values: Vec<f64>,
}

impl Envelope {
    pub fn values(&self) -> Vec<f64> {
        self.log_values.iter().map(|x| x.exp()).collect()
    }
}

/// A nonincreasing majorant `t̂ₙ ≥ tₙ` with the same limit and the same
/// exponential rate. Trailing zeros in the window are read as eventual
/// vanishing. Suprema over `s ≥ n` run to the end of the window, with the
/// declared limit and rate standing in for the unseen tail.
pub fn monotone_envelope(input: &EnvelopeInput) -> Result<Envelope> {
    let t = &input.values;
    let w = t.len();
    if w == 0 {
        return Err(Error::spec("envelope needs at least one value"));
    }
    if t.iter().any(|x| !(0.0..=1.0).contains(x)) || !(0.0..=1.0).contains(&input.limit) {
        return Err(Error::spec("envelope values must lie in [0, 1]"));
    }
    if input.limsup_rate > ExtReal::ZERO {
        return Err(Error::spec("declared rate must be nonpositive"));
    }
    let log_t: Vec<f64> = t.iter().map(|x| x.ln()).collect();
    if input.limit > 0.0 {
        let mut out = vec![0.0; w];
        let mut run = input.limit.ln();
        for n in (0..w).rev() {
            run = run.max(log_t[n]);
            out[n] = run;
        }
        return Ok(Envelope { case: EnvelopeCase::PositiveLimit, log_values: out });
    }
    if input.limsup_rate < ExtReal::ZERO {
        if t[w - 1] == 0.0 {
            // N₀: first index of the zero tail (1-based)
            let n0 = t.iter().rposition(|&x| x > 0.0).map(|p| p + 2).unwrap_or(1);
            let out = (1..=w).map(|n| if n < n0 { 0.0 } else { -((n * n) as f64) }).collect();
            return Ok(Envelope { case: EnvelopeCase::EventuallyZero, log_values: out });
        }
        let rate = input.limsup_rate.to_f64();
        // a_l = max(sup_{j≥l} (1/j) log t_j, rate)
        let mut a = vec![0.0; w];
        let mut run = rate;
        for l in (0..w).rev() {
            run = run.max(log_t[l] / (l + 1) as f64);
            a[l] = run;
        }
        let mut out = vec![0.0; w];
        let mut best = (w + 1) as f64 * rate;
        for n in (0..w).rev() {
            best = best.max((n + 1) as f64 * a[n]);
            out[n] = best.min(0.0);
        }
        return Ok(Envelope { case: EnvelopeCase::NegativeRate, log_values: out });
    }
    if t[w - 1] >= 1.0 {
        return Err(Error::spec("zero-rate envelope needs tₙ < 1 eventually; the window ends at 1"));
    }
    let n2 = t.iter().rposition(|&x| x >= 1.0).map(|p| p + 2).unwrap_or(1);
    // b_j = max_{N₂≤l≤j} (1/l) log t_l
    let mut b = vec![f64::NEG_INFINITY; w];
    let mut run = f64::NEG_INFINITY;
    for j in n2..=w {
        run = run.max(log_t[j - 1] / j as f64);
        b[j - 1] = run;
    }
    let mut out = vec![0.0; w];
    let mut best = f64::NEG_INFINITY;
    for n in (1..=w).rev() {
        if n >= n2 {
            best = best.max(n as f64 * b[n - 1]);
            out[n - 1] = best.min(0.0);
        } else {
            out[n - 1] = 0.0;
        }
    }
    Ok(Envelope { case: EnvelopeCase::ZeroRate, log_values: out })
}

fn add(a: ExtReal, b: ExtReal) -> ExtReal {
    // costs are never +∞, so the sum is always defined
    a.add(b).unwrap_or(ExtReal::NegInf)
}

/// Largest total base cost over simple block paths `i → … → j`.
pub fn path_cost(base: &CostMatrix, i: usize, j: usize) -> ExtReal {
    path_costs_from(base, i)[j]
}

fn path_costs_from(base: &CostMatrix, src: usize) -> Vec<ExtReal> {
    let k = base.size();
    if k <= 16 {
        subset_dp(base, src)
    } else {
        let mut best = vec![ExtReal::NegInf; k];
        let mut visited = vec![false; k];
        visited[src] = true;
        dfs(base, src, ExtReal::ZERO, &mut visited, &mut best);
        best
    }
}

fn subset_dp(base: &CostMatrix, src: usize) -> Vec<ExtReal> {
    let k = base.size();
    let full = 1usize << k;
    let mut dp = vec![f64::NEG_INFINITY; full * k];
    dp[(1 << src) * k + src] = 0.0;
    let mut best = vec![ExtReal::NegInf; k];
    for mask in 0..full {
        if mask & (1 << src) == 0 {
            continue;
        }
        for v in 0..k {
            let cur = dp[mask * k + v];
            if cur == f64::NEG_INFINITY {
                continue;
            }
            if v != src {
                best[v] = best[v].max(ExtReal::Finite(cur));
            }
            for w in 0..k {
                if mask & (1 << w) != 0 {
                    continue;
                }
                let c = base.get(v, w).to_f64();
                if c == f64::NEG_INFINITY {
                    continue;
                }
                let slot = &mut dp[(mask | 1 << w) * k + w];
                *slot = slot.max(cur + c);
            }
        }
    }
    best
}

fn dfs(base: &CostMatrix, v: usize, acc: ExtReal, visited: &mut [bool], best: &mut [ExtReal]) {
    for w in 0..base.size() {
        if visited[w] {
            continue;
        }
        let c = add(acc, base.get(v, w));
        if c == ExtReal::NegInf {
            continue;
        }
        best[w] = best[w].max(c);
        visited[w] = true;
        dfs(base, w, c, visited, best);
        visited[w] = false;
    }
}

/// Path costs for every ordered pair: `U₀` from `v`, `T₀` from `τ`.
pub fn cost_matrix(base: &CostMatrix) -> CostMatrix {
    let k = base.size();
    let mut out = CostMatrix::filled(k, ExtReal::ZERO);
    for i in 0..k {
        let row = path_costs_from(base, i);
        for j in 0..k {
            if i != j {
                out.set(i, j, row[j]);
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionReport {
    /// `v = τ` off the diagonal.
    pub assumption_a: bool,
    /// Per-entry exponents of `Pₙ` are known to converge.
    pub lim: bool,
    /// Every limit block `P(i)`, `i ∈ G`, is primitive.
    pub prm_limit: bool,
    /// Every `P*(i)` is primitive.
    pub assumption_c: bool,
    /// The `T₀` lower curve is backed by a sufficient condition.
    pub lower_cost_valid: bool,
}

pub fn check_assumptions(
    rp: &RatePair,
    dec: &CanonicalDecomposition,
    limit: &Matrix,
    star: &[StarMatrix],
) -> AssumptionReport {
    let k = dec.num_blocks();
    let mut assumption_a = true;
    for i in 0..k {
        for j in 0..k {
            if i == j {
                continue;
            }
            let (a, b) = (rp.v.get(i, j), rp.tau.get(i, j));
            let same = match rp.provenance {
                Provenance::Analytic => a == b,
                Provenance::Estimated => match (a, b) {
                    (ExtReal::Finite(x), ExtReal::Finite(y)) => (x - y).abs() <= 1e-9,
                    _ => a == b,
                },
            };
            assumption_a &= same;
        }
    }
    let lim = rp.provenance == Provenance::Analytic && rp.entry_limits && assumption_a;
    let prm_limit = dec.g_set.iter().all(|&i| is_primitive(limit, &dec.blocks[i].states));
    let assumption_c = star.iter().all(|s| s.primitive);
    AssumptionReport { assumption_a, lim, prm_limit, assumption_c, lower_cost_valid: lim || assumption_c }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    SingleBlock,
    Homogeneous,
    Trivial,
    Intermediate,
    Mixed,
}

impl Regime {
    pub fn name(self) -> &'static str {
        match self {
            Regime::SingleBlock => "single-block",
            Regime::Homogeneous => "homogeneous",
            Regime::Trivial => "trivial",
            Regime::Intermediate => "intermediate",
            Regime::Mixed => "mixed",
        }
    }
}

/// Regime of the composite rate. Homogeneous means every connection absent
/// from the limit decays superexponentially (`v = −∞`); otherwise the
/// stochastic-pair costs `U₀` decide between trivial (all 0), intermediate
/// (all finite negative) and mixed.
pub fn classify_regime(u0: &CostMatrix, v: &CostMatrix, dec: &CanonicalDecomposition, limit: &Matrix) -> Regime {
    if dec.m_count() == 1 {
        return Regime::SingleBlock;
    }
    let k = dec.num_blocks();
    let log_limit = limit.map(f64::ln);
    let homogeneous = (0..k).all(|i| {
        (0..k).all(|j| i == j || log_connection_weight(&log_limit, dec, i, j) > f64::NEG_INFINITY || v.get(i, j) == ExtReal::NegInf)
    });
    if homogeneous {
        return Regime::Homogeneous;
    }
    let pairs: Vec<ExtReal> = dec
        .m_set
        .iter()
        .flat_map(|&i| dec.m_set.iter().filter(move |&&j| j != i).map(move |&j| u0.get(i, j)))
        .collect();
    if pairs.is_empty() {
        return Regime::Mixed;
    }
    if pairs.iter().all(|&c| c == ExtReal::ZERO) {
        Regime::Trivial
    } else if pairs.iter().all(|&c| c.is_finite() && c < ExtReal::ZERO) {
        Regime::Intermediate
    } else {
        Regime::Mixed
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cm(rows: &[&[f64]]) -> CostMatrix {
        CostMatrix::from_rows(&rows.iter().map(|r| r.iter().map(|&x| ExtReal::from_f64(x)).collect()).collect::<Vec<_>>())
            .unwrap()
    }

    #[test]
    fn path_cost_examples() {
        let two = cm(&[&[0.0, -1.5], &[f64::NEG_INFINITY, 0.0]]);
        assert_eq!(path_cost(&two, 0, 1), ExtReal::Finite(-1.5));
        assert_eq!(path_cost(&two, 1, 0), ExtReal::NegInf);
        let three = cm(&[&[0.0, -1.0, -5.0], &[-9.0, 0.0, -1.0], &[-9.0, -9.0, 0.0]]);
        assert_eq!(path_cost(&three, 0, 2), ExtReal::Finite(-2.0));
    }

    #[test]
    fn envelope_positive_limit() {
        let vals: Vec<f64> = (1..=200).map(|n: i32| 0.5 - 0.3 * (-1f64).powi(n) / n as f64).collect();
        let env = monotone_envelope(&EnvelopeInput { values: vals.clone(), limit: 0.5, limsup_rate: ExtReal::ZERO }).unwrap();
        assert_eq!(env.case, EnvelopeCase::PositiveLimit);
        let e = env.values();
        for n in 0..vals.len() {
            assert!(e[n] >= vals[n] - 1e-15);
            if n > 0 {
                assert!(e[n] <= e[n - 1] + 1e-15);
            }
        }
    }

    #[test]
    fn envelope_geometric_is_reproduced() {
        let vals: Vec<f64> = (1..=100).map(|n| 0.5f64.powi(n)).collect();
        let env = monotone_envelope(&EnvelopeInput { values: vals.clone(), limit: 0.0, limsup_rate: ExtReal::Finite(-2f64.ln()) })
            .unwrap();
        assert_eq!(env.case, EnvelopeCase::NegativeRate);
        for (n, lv) in env.log_values.iter().enumerate() {
            assert!((lv - vals[n].ln()).abs() < 1e-9);
        }
    }

    #[test]
    fn envelope_eventually_zero() {
        let mut vals = vec![0.3, 0.2, 0.1];
        vals.extend(std::iter::repeat(0.0).take(7));
        let env = monotone_envelope(&EnvelopeInput { values: vals, limit: 0.0, limsup_rate: ExtReal::NegInf }).unwrap();
        assert_eq!(env.case, EnvelopeCase::EventuallyZero);
        assert_eq!(&env.log_values[..3], &[0.0, 0.0, 0.0]);
        assert_eq!(env.log_values[3], -16.0);
        assert_eq!(env.log_values[9], -100.0);
    }

    #[test]
    fn envelope_zero_rate() {
        let mut vals = vec![1.0, 1.0];
        vals.extend((3..=500).map(|n| 1.0 / n as f64));
        let env = monotone_envelope(&EnvelopeInput { values: vals.clone(), limit: 0.0, limsup_rate: ExtReal::ZERO }).unwrap();
        assert_eq!(env.case, EnvelopeCase::ZeroRate);
        let e = env.values();
        for n in 0..vals.len() {
            assert!(e[n] >= vals[n] - 1e-15);
            if n > 0 {
                assert!(e[n] <= e[n - 1] + 1e-15);
            }
        }
        let bad = vec![0.5, 1.0];
        assert!(monotone_envelope(&EnvelopeInput { values: bad, limit: 0.0, limsup_rate: ExtReal::ZERO }).is_err());
        assert!(monotone_envelope(&EnvelopeInput { values: vec![1.5], limit: 0.0, limsup_rate: ExtReal::ZERO }).is_err());
    }

    #[test]
    fn fit_on_alternating_sequence() {
        let series: Vec<f64> =
            (1..=1000).map(|n| -(n as f64) * if n % 2 == 0 { 2f64.ln() } else { 3f64.ln() }).collect();
        let fit = fit_log_rate(&series);
        assert!((fit.upper + 2f64.ln()).abs() < 1e-12, "{fit:?}");
        assert!((fit.lower + 3f64.ln()).abs() < 1e-12, "{fit:?}");
        let regular: Vec<f64> = (1..=1000).map(|n| -0.7 * n as f64 - 2.0).collect();
        let fit = fit_log_rate(&regular);
        assert!((fit.upper + 0.7).abs() < 1e-9 && fit.upper == fit.lower, "{fit:?}");
        let zeros = vec![f64::NEG_INFINITY; 50];
        assert_eq!(fit_log_rate(&zeros).upper, f64::NEG_INFINITY);
    }

    fn brute(base: &CostMatrix, i: usize, j: usize) -> ExtReal {
        fn go(base: &CostMatrix, v: usize, j: usize, acc: ExtReal, seen: &mut Vec<bool>, best: &mut ExtReal) {
            if v == j {
                *best = best.max(acc);
                return;
            }
            for w in 0..base.size() {
                if !seen[w] {
                    seen[w] = true;
                    go(base, w, j, add(acc, base.get(v, w)), seen, best);
                    seen[w] = false;
                }
            }
        }
        let mut seen = vec![false; base.size()];
        seen[i] = true;
        let mut best = ExtReal::NegInf;
        go(base, i, j, ExtReal::ZERO, &mut seen, &mut best);
        best
    }

    fn random_costs(k: usize, raw: &[f64]) -> CostMatrix {
        let mut m = CostMatrix::filled(k, ExtReal::ZERO);
        for i in 0..k {
            for j in 0..k {
                let x = raw[(i * k + j) % raw.len()];
                m.set(i, j, if x < 0.2 { ExtReal::NegInf } else { ExtReal::Finite(-5.0 * (x - 0.2)) });
            }
        }
        m
    }

    proptest! {
        #[test]
        fn dp_matches_enumeration(k in 2usize..=6, raw in proptest::collection::vec(0.0f64..1.0, 36)) {
            let base = random_costs(k, &raw);
            let u = cost_matrix(&base);
            for i in 0..k { for j in 0..k { if i != j {
                prop_assert_eq!(u.get(i, j), brute(&base, i, j));
                prop_assert!(u.get(i, j) >= base.get(i, j));
            }}}
        }

        #[test]
        fn dfs_matches_dp(k in 2usize..=7, raw in proptest::collection::vec(0.0f64..1.0, 49)) {
            let base = random_costs(k, &raw);
            for i in 0..k {
                let mut best = vec![ExtReal::NegInf; k];
                let mut visited = vec![false; k];
                visited[i] = true;
                dfs(&base, i, ExtReal::ZERO, &mut visited, &mut best);
                let dp = subset_dp(&base, i);
                for j in 0..k { if j != i {
                    match (best[j], dp[j]) {
                        (ExtReal::Finite(a), ExtReal::Finite(b)) => prop_assert!((a - b).abs() < 1e-12),
                        (a, b) => prop_assert_eq!(a, b),
                    }
                }}
            }
        }

        #[test]
        fn triangle_inequality(k in 3usize..=8, raw in proptest::collection::vec(0.0f64..1.0, 64)) {
            let u = cost_matrix(&random_costs(k, &raw));
            for i in 0..k { for j in 0..k { for l in 0..k {
                if i != j && j != l && i != l {
                    let lhs = add(u.get(i, j), u.get(j, l));
                    let ok = match (lhs, u.get(i, l)) {
                        (ExtReal::Finite(a), ExtReal::Finite(b)) => a <= b + 1e-12,
                        (a, b) => a <= b,
                    };
                    prop_assert!(ok);
                }
            }}}
        }

        #[test]
        fn path_cost_is_monotone(k in 2usize..=5, raw in proptest::collection::vec(0.0f64..1.0, 25), bump in 0.0f64..1.0, at in 0usize..25) {
            let base = random_costs(k, &raw);
            let (i, j) = ((at / k) % k, at % k);
            let mut up = base.clone();
            let raised = match base.get(i, j) { ExtReal::Finite(x) => ExtReal::Finite((x + bump).min(0.0)), _ => ExtReal::Finite(-bump) };
            up.set(i, j, raised);
            let (a, b) = (cost_matrix(&base), cost_matrix(&up));
            for x in 0..k { for y in 0..k { if x != y { prop_assert!(b.get(x, y) >= a.get(x, y)); } } }
        }
    }
}
