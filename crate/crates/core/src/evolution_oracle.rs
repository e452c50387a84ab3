//! Exact law of `Zₙ` by log-space dynamic programming over integer sums,
//! brute-force path enumeration for tiny horizons, and a seeded simulator.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::chain_model::{Chain, Matrix};
use crate::error::{Error, Result};
use crate::numerics::{log_sum_exp_f64, LogProb};

/// Largest lattice denominator accepted for `f`.
pub const MAX_DENOMINATOR: i64 = 1_000_000;
/// Default cap on live DP cells (all states together).
pub const DEFAULT_CELL_BUDGET: u64 = 50_000_000;

/// Smallest `q ≤ max_q` with `x·q` an integer after rounding `x` to 12
/// significant digits; `None` if there is none.
pub fn rational_denominator(x: f64, max_q: i64) -> Option<i64> {
    if !x.is_finite() {
        return None;
    }
    let x = round_sig(x, 12);
    // continued-fraction convergents give the best approximations
    let (mut h0, mut h1, mut k0, mut k1) = (0f64, 1f64, 1f64, 0f64);
    let mut rem = x;
    for _ in 0..64 {
        let a = rem.floor();
        let (h2, k2) = (a * h1 + h0, a * k1 + k0);
        if k2 > max_q as f64 {
            return None;
        }
        if round_sig(h2 / k2, 12) == x {
            return Some(k2 as i64);
        }
        (h0, h1, k0, k1) = (h1, h2, k1, k2);
        let frac = rem - a;
        if frac.abs() < 1e-15 {
            return None;
        }
        rem = 1.0 / frac;
    }
    None
}

fn round_sig(x: f64, digits: i32) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    let mag = x.abs().log10().floor() as i32;
    let scale = 10f64.powi(digits - 1 - mag);
    (x * scale).round() / scale
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

/// Common denominator `Q` and the integer values `Q·f(x)`.
pub fn lattice(values: &[f64]) -> Result<(i64, Vec<i64>)> {
    let mut q: i64 = 1;
    for &v in values {
        let d = rational_denominator(v, MAX_DENOMINATOR)
            .ok_or_else(|| Error::spec(format!("observable value {v} is not rational with denominator ≤ 10^6")))?;
        q = q / gcd(q, d) * d;
        if q > MAX_DENOMINATOR {
            return Err(Error::spec("common denominator of the observable exceeds 10^6"));
        }
    }
    let ints = values.iter().map(|&v| (round_sig(v, 12) * q as f64).round() as i64).collect();
    Ok((q, ints))
}

/// Log-probabilities of integer sums `lo, lo+1, …`.
#[derive(Debug, Clone, PartialEq)]
pub struct SumTable {
    pub lo: i64,
    pub log_probs: Vec<f64>,
}

impl SumTable {
    fn empty() -> Self {
        SumTable { lo: 0, log_probs: Vec::new() }
    }

    pub fn hi(&self) -> i64 {
        self.lo + self.log_probs.len() as i64 - 1
    }

    pub fn is_empty(&self) -> bool {
        self.log_probs.is_empty()
    }

    pub fn total(&self) -> f64 {
        log_sum_exp_f64(&self.log_probs)
    }

    fn trim(&mut self, floor: f64) {
        let first = self.log_probs.iter().position(|&v| v >= floor);
        match first {
            None => *self = SumTable::empty(),
            Some(a) => {
                let b = self.log_probs.iter().rposition(|&v| v >= floor).expect("nonempty");
                for v in &mut self.log_probs[a..=b] {
                    if *v < floor {
                        *v = f64::NEG_INFINITY;
                    }
                }
                self.log_probs.truncate(b + 1);
                self.log_probs.drain(..a);
                self.lo += a as i64;
            }
        }
    }

    /// `self ⊕= shift(src) + lp`.
    fn absorb(&mut self, src: &SumTable, shift: i64, lp: f64) {
        if src.is_empty() {
            return;
        }
        let slo = src.lo + shift;
        let shi = src.hi() + shift;
        if self.is_empty() {
            self.lo = slo;
            self.log_probs = src.log_probs.iter().map(|v| v + lp).collect();
            return;
        }
        if slo < self.lo {
            let pad = (self.lo - slo) as usize;
            self.log_probs.splice(0..0, std::iter::repeat(f64::NEG_INFINITY).take(pad));
            self.lo = slo;
        }
        if shi > self.hi() {
            let extra = (shi - self.hi()) as usize;
            self.log_probs.extend(std::iter::repeat(f64::NEG_INFINITY).take(extra));
        }
        let off = (slo - self.lo) as usize;
        for (t, &v) in self.log_probs[off..].iter_mut().zip(&src.log_probs) {
            *t = fast_log_add(*t, v + lp);
        }
    }
}

#[inline]
fn fast_log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if hi - lo > 37.0 {
        hi
    } else {
        hi + (lo - hi).exp().ln_1p()
    }
}

/// Law of `Σ_{i≤n} Q·f(Xᵢ)` jointly with the terminal state.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactDistribution {
    pub n: u64,
    pub q: i64,
    /// `by_state[x]`: log P(sum = s, Xₙ = x).
    pub by_state: Vec<SumTable>,
}

impl ExactDistribution {
    /// Marginal over terminal states.
    pub fn sums(&self) -> SumTable {
        let mut out = SumTable::empty();
        for t in &self.by_state {
            out.absorb(t, 0, 0.0);
        }
        out
    }

    /// Total log mass (0 for stochastic kernels).
    pub fn log_total(&self) -> f64 {
        self.sums().total()
    }

    /// `log P(Xₙ = x)` for every state.
    pub fn state_marginal(&self) -> Vec<f64> {
        self.by_state.iter().map(|t| t.total()).collect()
    }

    pub fn mean(&self) -> f64 {
        let s = self.sums();
        let scale = (self.n as f64) * self.q as f64;
        s.log_probs.iter().enumerate().map(|(k, lp)| lp.exp() * (s.lo + k as i64) as f64 / scale).sum()
    }

    /// `(value of Zₙ, probability)` over the support, increasing.
    pub fn support(&self) -> Vec<(f64, f64)> {
        let s = self.sums();
        let scale = (self.n as f64) * self.q as f64;
        s.log_probs
            .iter()
            .enumerate()
            .filter(|(_, lp)| **lp > f64::NEG_INFINITY)
            .map(|(k, lp)| ((s.lo + k as i64) as f64 / scale, lp.exp()))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleOptions {
    pub cell_budget: u64,
}

impl Default for OracleOptions {
    fn default() -> Self {
        OracleOptions { cell_budget: DEFAULT_CELL_BUDGET }
    }
}

struct Sweep {
    q: i64,
    qf: Vec<i64>,
    floor_per_step: f64,
    layer: Vec<SumTable>,
    t: u64,
}

impl Sweep {
    fn new(chain: &Chain, horizon: u64, opts: &OracleOptions) -> Result<Self> {
        if chain.f.dim() != 1 {
            return Err(Error::UnsupportedDimension(chain.f.dim()));
        }
        let (q, qf) = lattice(&chain.f.coordinate(0))?;
        let r = chain.num_states() as u64;
        let span = (qf.iter().max().unwrap() - qf.iter().min().unwrap()) as u64;
        let required = r.saturating_mul(horizon.saturating_mul(span).saturating_add(1));
        if required > opts.cell_budget {
            return Err(Error::Overflow { required, limit: opts.cell_budget });
        }
        let norm = qf.iter().map(|v| v.abs()).max().unwrap_or(0).max(1) as f64;
        let layer = chain
            .pi
            .iter()
            .map(|&p| if p > 0.0 { SumTable { lo: 0, log_probs: vec![p.ln()] } } else { SumTable::empty() })
            .collect();
        Ok(Sweep { q, qf, floor_per_step: -10.0 * norm, layer, t: 0 })
    }

    fn step(&mut self, log_p: &Matrix, horizon: u64) {
        let r = self.layer.len();
        let floor = self.floor_per_step * horizon as f64;
        let mut next = Vec::with_capacity(r);
        for y in 0..r {
            let mut acc = SumTable::empty();
            for x in 0..r {
                let lp = log_p.get(x, y);
                if lp > f64::NEG_INFINITY {
                    acc.absorb(&self.layer[x], self.qf[y], lp);
                }
            }
            acc.trim(floor);
            next.push(acc);
        }
        self.layer = next;
        self.t += 1;
    }

    fn snapshot(&self) -> ExactDistribution {
        ExactDistribution { n: self.t, q: self.q, by_state: self.layer.clone() }
    }
}

/// Exact law of `n·Q·Zₙ` under the chain, in log space.
pub fn exact_distribution(chain: &Chain, n: u64, opts: &OracleOptions) -> Result<ExactDistribution> {
    if n == 0 {
        return Err(Error::OutOfRange { index: 0, message: "horizon must be at least 1".into() });
    }
    let mut sw = Sweep::new(chain, n, opts)?;
    for t in 1..=n {
        sw.step(&chain.schedule.log_matrix(t)?, n);
    }
    Ok(sw.snapshot())
}

/// Interval with explicit endpoint types.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
    pub lo_closed: bool,
    pub hi_closed: bool,
}

impl Interval {
    pub fn closed(lo: f64, hi: f64) -> Self {
        Interval { lo, hi, lo_closed: true, hi_closed: true }
    }

    pub fn open(lo: f64, hi: f64) -> Self {
        Interval { lo, hi, lo_closed: false, hi_closed: false }
    }

    /// `(lo, hi]`.
    pub fn left_open(lo: f64, hi: f64) -> Self {
        Interval { lo, hi, lo_closed: false, hi_closed: true }
    }

    /// Whether `s / scale` lies in the interval, decided exactly when both
    /// endpoints are short decimals.
    fn contains_ratio(&self, s: i64, scale: i64) -> bool {
        let side = |e: f64| -> std::cmp::Ordering {
            if e == f64::INFINITY {
                return std::cmp::Ordering::Less;
            }
            if e == f64::NEG_INFINITY {
                return std::cmp::Ordering::Greater;
            }
            match rational_denominator(e, MAX_DENOMINATOR) {
                Some(d) => {
                    let num = (round_sig(e, 12) * d as f64).round() as i128;
                    (s as i128 * d as i128).cmp(&(num * scale as i128))
                }
                None => (s as f64 / scale as f64).total_cmp(&e),
            }
        };
        use std::cmp::Ordering::*;
        let above_lo = match side(self.lo) {
            Greater => true,
            Equal => self.lo_closed,
            Less => false,
        };
        let below_hi = match side(self.hi) {
            Less => true,
            Equal => self.hi_closed,
            Greater => false,
        };
        above_lo && below_hi
    }
}

/// Finite union of intervals.
#[derive(Debug, Clone, PartialEq)]
pub struct EventSet {
    pub parts: Vec<Interval>,
}

impl EventSet {
    pub fn interval(i: Interval) -> Self {
        EventSet { parts: vec![i] }
    }

    pub fn everything() -> Self {
        EventSet::interval(Interval::closed(f64::NEG_INFINITY, f64::INFINITY))
    }

    pub fn empty() -> Self {
        EventSet { parts: Vec::new() }
    }

    /// `"(0.3,0.6]"`, `"0.3,0.6"` (closed), `"0.3,0.6,oc"`; unions joined by `;`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut parts = Vec::new();
        for piece in text.split(';').map(str::trim).filter(|p| !p.is_empty()) {
            parts.push(parse_interval(piece)?);
        }
        if parts.is_empty() {
            return Err(Error::spec("empty event set"));
        }
        Ok(EventSet { parts })
    }

    fn contains_ratio(&self, s: i64, scale: i64) -> bool {
        self.parts.iter().any(|i| i.contains_ratio(s, scale))
    }
}

fn parse_interval(p: &str) -> Result<Interval> {
    let bad = || Error::spec(format!("cannot parse interval '{p}'"));
    let num = |s: &str| -> Result<f64> {
        match s.trim() {
            "inf" | "+inf" => Ok(f64::INFINITY),
            "-inf" => Ok(f64::NEG_INFINITY),
            t => t.parse::<f64>().map_err(|_| bad()),
        }
    };
    let (lo_closed, hi_closed, body) = if p.starts_with('(') || p.starts_with('[') {
        let last = p.chars().last().ok_or_else(bad)?;
        if last != ')' && last != ']' {
            return Err(bad());
        }
        (p.starts_with('['), last == ']', &p[1..p.len() - 1])
    } else {
        let fields: Vec<&str> = p.split(',').collect();
        match fields.len() {
            2 => (true, true, p),
            3 => {
                let flags = match fields[2].trim() {
                    "closed" | "cc" => (true, true),
                    "open" | "oo" => (false, false),
                    "co" => (true, false),
                    "oc" => (false, true),
                    _ => return Err(bad()),
                };
                let cut = p.rfind(',').expect("three fields");
                (flags.0, flags.1, &p[..cut])
            }
            _ => return Err(bad()),
        }
    };
    let fields: Vec<&str> = body.split(',').collect();
    if fields.len() != 2 {
        return Err(bad());
    }
    let (lo, hi) = (num(fields[0])?, num(fields[1])?);
    if lo.is_nan() || hi.is_nan() || lo > hi {
        return Err(bad());
    }
    Ok(Interval { lo, hi, lo_closed, hi_closed })
}

/// `log P(Zₙ ∈ B)`.
pub fn event_log_prob(ed: &ExactDistribution, set: &EventSet) -> LogProb {
    let s = ed.sums();
    let scale = ed.n as i64 * ed.q;
    let hits: Vec<f64> = s
        .log_probs
        .iter()
        .enumerate()
        .filter(|(k, _)| set.contains_ratio(s.lo + *k as i64, scale))
        .map(|(_, &v)| v)
        .collect();
    LogProb(log_sum_exp_f64(&hits))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TracePoint {
    pub n: u64,
    pub log_prob: f64,
    /// `(1/n)·log_prob`.
    pub rate: f64,
}

/// `(1/n) log P(Zₙ ∈ B)` for each horizon, from one forward sweep.
pub fn rate_trace(chain: &Chain, set: &EventSet, ns: &[u64], opts: &OracleOptions) -> Result<Vec<TracePoint>> {
    let Some(&top) = ns.iter().max() else {
        return Ok(Vec::new());
    };
    if ns.contains(&0) {
        return Err(Error::OutOfRange { index: 0, message: "horizons must be at least 1".into() });
    }
    let mut sw = Sweep::new(chain, top, opts)?;
    let mut found: BTreeMap<u64, f64> = BTreeMap::new();
    for t in 1..=top {
        sw.step(&chain.schedule.log_matrix(t)?, top);
        if ns.contains(&t) {
            found.insert(t, event_log_prob(&sw.snapshot(), set).value());
        }
    }
    Ok(ns.iter().map(|&n| TracePoint { n, log_prob: found[&n], rate: found[&n] / n as f64 }).collect())
}

/// Brute-force law of `n·Q·Zₙ` by walking every positive-probability path.
pub fn enumerate_paths(chain: &Chain, n: u64) -> Result<BTreeMap<i64, f64>> {
    if n == 0 || n > 12 {
        return Err(Error::OutOfRange { index: n, message: "path enumeration supports 1 ≤ n ≤ 12".into() });
    }
    if chain.f.dim() != 1 {
        return Err(Error::UnsupportedDimension(chain.f.dim()));
    }
    let (_, qf) = lattice(&chain.f.coordinate(0))?;
    let mats: Vec<Matrix> = (1..=n).map(|t| chain.schedule.log_matrix(t)).collect::<Result<_>>()?;
    let mut acc: BTreeMap<i64, Vec<f64>> = BTreeMap::new();
    fn walk(mats: &[Matrix], qf: &[i64], x: usize, t: usize, sum: i64, lp: f64, acc: &mut BTreeMap<i64, Vec<f64>>) {
        if t == mats.len() {
            acc.entry(sum).or_default().push(lp);
            return;
        }
        for y in 0..qf.len() {
            let e = mats[t].get(x, y);
            if e > f64::NEG_INFINITY {
                walk(mats, qf, y, t + 1, sum + qf[y], lp + e, acc);
            }
        }
    }
    for (x0, &p) in chain.pi.iter().enumerate() {
        if p > 0.0 {
            walk(&mats, &qf, x0, 0, 0, p.ln(), &mut acc);
        }
    }
    Ok(acc.into_iter().map(|(s, v)| (s, log_sum_exp_f64(&v))).collect())
}

/// Seeded Monte Carlo run.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationReport {
    pub replicas: usize,
    pub n: u64,
    pub seed: u64,
    /// `Zₙ` per replica.
    pub samples: Vec<Vec<f64>>,
    /// Terminal state per replica.
    pub terminal_state: Vec<usize>,
}

impl SimulationReport {
    /// Replica counts per terminal block, given `block_of[state]`.
    pub fn absorption(&self, block_of: &[usize], num_blocks: usize) -> Vec<usize> {
        let mut h = vec![0; num_blocks];
        for &x in &self.terminal_state {
            h[block_of[x]] += 1;
        }
        h
    }
}

/// Replica `i` draws from the ChaCha8 stream `i` of `seed`, so results do
/// not depend on the thread count.
pub fn simulate(chain: &Chain, n: u64, replicas: usize, seed: u64) -> Result<SimulationReport> {
    if replicas == 0 {
        return Err(Error::spec("at least one replica is required"));
    }
    if n == 0 {
        return Err(Error::OutOfRange { index: 0, message: "horizon must be at least 1".into() });
    }
    let r = chain.num_states();
    let d = chain.f.dim();
    let cumulative = |m: &Matrix| -> Vec<Vec<f64>> {
        (0..r)
            .map(|x| {
                let mut run = 0.0;
                m.row(x).iter().map(|p| {
                    run += p;
                    run
                }).collect()
            })
            .collect()
    };
    let draw = |cum: &[f64], u: f64| -> usize {
        let total = cum[cum.len() - 1];
        let target = u * total;
        cum.iter().position(|&c| target < c).unwrap_or_else(|| cum.iter().rposition(|&c| c > 0.0).unwrap_or(0))
    };
    let mut rngs: Vec<ChaCha8Rng> = (0..replicas)
        .map(|i| {
            let mut g = ChaCha8Rng::seed_from_u64(seed);
            g.set_stream(i as u64);
            g
        })
        .collect();
    let mut pi_cum = vec![0.0; r];
    let mut run = 0.0;
    for (c, p) in pi_cum.iter_mut().zip(&chain.pi) {
        run += p;
        *c = run;
    }
    let mut state: Vec<usize> = rngs.iter_mut().map(|g| draw(&pi_cum, g.gen::<f64>())).collect();
    let mut sums = vec![vec![0.0; d]; replicas];
    for t in 1..=n {
        let cum = cumulative(&chain.schedule.matrix(t)?);
        state
            .par_iter_mut()
            .zip(rngs.par_iter_mut())
            .zip(sums.par_iter_mut())
            .with_min_len(1024)
            .for_each(|((x, g), s)| {
                *x = draw(&cum[*x], g.gen::<f64>());
                for (acc, v) in s.iter_mut().zip(chain.f.value(*x)) {
                    *acc += v;
                }
            });
    }
    let samples = sums.into_iter().map(|s| s.into_iter().map(|v| v / n as f64).collect()).collect();
    Ok(SimulationReport { replicas, n, seed, samples, terminal_state: state })
}
