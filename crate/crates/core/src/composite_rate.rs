//! The composite rate `J_U`: resting costs on the blocks of `G`, mixed by
//! visit-time proportions and charged for routing between them.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::chain_model::{Chain, Matrix};
use crate::decomposition::{check_sie1, decompose, star_matrices, CanonicalDecomposition, Sie1Report, StarMatrix};
use crate::error::{Error, Result};
use crate::numerics::{ext_mul, ExtReal};
use crate::routing_costs::{
    check_assumptions, classify_regime, cost_matrix, rate_limits, AssumptionReport, CostMatrix, RatePair, Regime,
};
use crate::spectral_rate::{conjugate, default_lambda_cap, BlockRate, DualOptions, DEFAULT_INF_THRESHOLD, DEFAULT_SLOPE_FLOOR};

/// Permutations of more blocks than this need an explicit opt-in.
pub const MAX_DEFAULT_BLOCKS: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostKind {
    U0,
    T0,
}

impl CostKind {
    pub fn name(self) -> &'static str {
        match self {
            CostKind::U0 => "U0",
            CostKind::T0 => "T0",
        }
    }
}

/// Everything derived from a chain before any rate is evaluated.
#[derive(Debug, Clone)]
pub struct ChainAnalysis {
    pub dec: CanonicalDecomposition,
    pub rates: RatePair,
    pub u0: CostMatrix,
    pub t0: CostMatrix,
    pub star: Vec<StarMatrix>,
    pub assumptions: AssumptionReport,
    pub regime: Regime,
    pub sie1: Sie1Report,
    /// Rate evaluators for `G`, in `dec.g_set` order.
    pub block_rates: Vec<BlockRate>,
}

impl ChainAnalysis {
    pub fn new(chain: &Chain, window: u64) -> Result<Self> {
        let limit = chain.schedule.limit();
        let dec = decompose(limit)?;
        let rates = rate_limits(&chain.schedule, &dec, window)?;
        let u0 = cost_matrix(&rates.v);
        let t0 = cost_matrix(&rates.tau);
        let star = star_matrices(&chain.schedule, &dec, window)?;
        let assumptions = check_assumptions(&rates, &dec, limit, &star);
        let regime = classify_regime(&u0, &rates.v, &dec, limit);
        let sie1 = check_sie1(&chain.schedule, &chain.pi, &dec, window)?;
        let block_rates =
            dec.g_set.iter().map(|&i| BlockRate::new(limit, &chain.f, &dec.blocks[i].states)).collect::<Result<_>>()?;
        Ok(ChainAnalysis { dec, rates, u0, t0, star, assumptions, regime, sie1, block_rates })
    }

    pub fn costs(&self, kind: CostKind) -> &CostMatrix {
        match kind {
            CostKind::U0 => &self.u0,
            CostKind::T0 => &self.t0,
        }
    }
}

/// Block label such as `{4}` or `{1,2,3}`.
pub fn block_label(chain: &Chain, states: &[usize]) -> String {
    let parts: Vec<&str> = states.iter().map(|&x| chain.states.label(x)).collect();
    format!("{{{}}}", parts.join(","))
}

/// Optimal scenario behind a value of `J`.
#[derive(Debug, Clone, PartialEq)]
pub struct Witness {
    /// Visit order, as positions into the `G` list.
    pub order: Vec<usize>,
    /// Time proportion per position of `order`.
    pub weights: Vec<f64>,
    /// Block averages per position (empty for unused positions).
    pub points: Vec<Vec<f64>>,
}

impl Witness {
    /// Positions of `order` that carry time, in visiting order.
    pub fn support(&self) -> Vec<usize> {
        self.order.iter().zip(&self.weights).filter(|(_, &w)| w > 1e-12).map(|(&b, _)| b).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JValue {
    pub value: ExtReal,
    pub witness: Option<Witness>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub z: f64,
    pub value: ExtReal,
    pub witness: Option<Witness>,
}

#[derive(Debug, Clone)]
pub struct CompositeRate {
    pub labels: Vec<String>,
    rates: Vec<BlockRate>,
    /// Routing costs among `G`, `cost[a][b]` for positions `a ≠ b`.
    cost: Vec<Vec<ExtReal>>,
    d: usize,
    /// Simplex grid resolution for the grid route; `None` picks by `M`.
    pub grid_res: Option<usize>,
    /// Number of best grid cells refined.
    pub refine_top: usize,
    pub allow_large: bool,
}

impl CompositeRate {
    pub fn new(chain: &Chain, analysis: &ChainAnalysis, kind: CostKind) -> Result<Self> {
        let g = &analysis.dec.g_set;
        let full = analysis.costs(kind);
        let cost = g.iter().map(|&a| g.iter().map(|&b| full.get(a, b)).collect()).collect();
        let labels = g.iter().map(|&i| block_label(chain, &analysis.dec.blocks[i].states)).collect();
        Self::from_parts(analysis.block_rates.clone(), cost, labels)
    }

    /// Rates and an `M×M` routing-cost table among them.
    pub fn from_parts(rates: Vec<BlockRate>, cost: Vec<Vec<ExtReal>>, labels: Vec<String>) -> Result<Self> {
        let m = rates.len();
        if m == 0 {
            return Err(Error::spec("composite rate needs at least one block"));
        }
        if cost.len() != m || cost.iter().any(|r| r.len() != m) || labels.len() != m {
            return Err(Error::spec("cost table and labels must match the number of blocks"));
        }
        let d = rates[0].dim();
        if rates.iter().any(|r| r.dim() != d) {
            return Err(Error::spec("blocks disagree on the observable dimension"));
        }
        Ok(CompositeRate { labels, rates, cost, d, grid_res: None, refine_top: 10, allow_large: false })
    }

    pub fn num_blocks(&self) -> usize {
        self.rates.len()
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn block_rates(&self) -> &[BlockRate] {
        &self.rates
    }

    pub fn cost(&self, a: usize, b: usize) -> ExtReal {
        self.cost[a][b]
    }

    fn options(&self) -> DualOptions {
        let norm = self.rates.iter().map(|r| r.f_norm()).fold(0.0, f64::max);
        DualOptions {
            lambda_cap: default_lambda_cap(norm),
            inf_threshold: DEFAULT_INF_THRESHOLD,
            slope_floor: DEFAULT_SLOPE_FLOOR,
        }
    }

    fn check_input(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.d {
            return Err(Error::UnsupportedDimension(z.len()));
        }
        if self.d > 2 {
            return Err(Error::UnsupportedDimension(self.d));
        }
        if self.num_blocks() > MAX_DEFAULT_BLOCKS && !self.allow_large {
            return Err(Error::spec(format!(
                "{} blocks means {}+ visit orders; pass --allow-large to proceed",
                self.num_blocks(),
                5040
            )));
        }
        Ok(())
    }

    /// Routing charge `−Σ_i (Σ_{j≤i} vⱼ)·u(σ(i), σ(i+1))`.
    pub fn routing_cost(&self, order: &[usize], weights: &[f64]) -> ExtReal {
        let mut total = ExtReal::ZERO;
        let mut prefix = 0.0;
        for i in 0..order.len().saturating_sub(1) {
            prefix += weights[i];
            let term = ext_mul(ExtReal::Finite(prefix), self.cost[order[i]][order[i + 1]]).neg();
            total = total.add(term).unwrap_or(ExtReal::PosInf);
        }
        total
    }

    /// `wⱼ = −Σ_{i≥j} u(σ(i), σ(i+1))`, indexed by block (not by position).
    fn suffix_weights(&self, order: &[usize]) -> Vec<ExtReal> {
        let m = order.len();
        let mut w = vec![ExtReal::ZERO; self.num_blocks()];
        let mut acc = ExtReal::ZERO;
        w[order[m - 1]] = acc;
        for pos in (0..m - 1).rev() {
            acc = acc.add(self.cost[order[pos]][order[pos + 1]].neg()).unwrap_or(ExtReal::PosInf);
            w[order[pos]] = acc;
        }
        w
    }

    /// `J_U(z)` with a witness.
    pub fn j_eval(&self, z: &[f64]) -> Result<JValue> {
        self.check_input(z)?;
        if self.num_blocks() == 1 {
            let value = self.rates[0].rate_eval(z)?;
            let witness = value.is_finite().then(|| Witness { order: vec![0], weights: vec![1.0], points: vec![z.to_vec()] });
            return Ok(JValue { value, witness });
        }
        if self.d == 1 {
            self.j_eval_envelope(z[0])
        } else {
            self.j_eval_grid(z)
        }
    }

    /// One-dimensional `J` through the dual of the lower convex envelope of
    /// `wⱼ + I_j`, per visit order.
    pub fn j_eval_envelope(&self, z: f64) -> Result<JValue> {
        self.check_input(&[z])?;
        if self.d != 1 {
            return Err(Error::UnsupportedDimension(self.d));
        }
        let mut memo: HashMap<Vec<u64>, (ExtReal, Option<EnvelopeWitness>)> = HashMap::new();
        let mut best = JValue { value: ExtReal::PosInf, witness: None };
        for order in permutations(self.num_blocks()) {
            let w = self.suffix_weights(&order);
            let key: Vec<u64> = w.iter().map(|x| x.to_f64().to_bits()).collect();
            let (value, ew) = match memo.get(&key) {
                Some(hit) => hit.clone(),
                None => {
                    let r = self.envelope_dual(z, &w)?;
                    memo.insert(key, r.clone());
                    r
                }
            };
            if improves(value, best.value) {
                let witness = ew.map(|e| {
                    let mut weights = vec![0.0; order.len()];
                    let mut points = vec![Vec::new(); order.len()];
                    for (blk, v, x) in e.parts {
                        let pos = order.iter().position(|&b| b == blk).expect("block in order");
                        weights[pos] = v;
                        points[pos] = vec![x];
                    }
                    Witness { order: order.clone(), weights, points }
                });
                best = JValue { value, witness };
            }
        }
        Ok(best)
    }

    /// `sup_λ {λz − max_j (Λ_j(λ) − wⱼ)}` over blocks with finite `wⱼ`.
    fn envelope_dual(&self, z: f64, w: &[ExtReal]) -> Result<(ExtReal, Option<EnvelopeWitness>)> {
        let active: Vec<(usize, f64)> = w.iter().enumerate().filter_map(|(j, x)| x.finite().map(|v| (j, v))).collect();
        if active.is_empty() {
            return Ok((ExtReal::PosInf, None));
        }
        let opts = self.options();
        let eval = |l: f64| -> Result<Probe> {
            let mut vals = Vec::with_capacity(active.len());
            for &(j, wj) in &active {
                let (p, g) = self.rates[j].pressure(&[l])?;
                vals.push((j, p - wj, g[0]));
            }
            let m = vals.iter().map(|v| v.1).fold(f64::NEG_INFINITY, f64::max);
            let tol = 1e-12 * (1.0 + m.abs());
            let top: Vec<(usize, f64)> = vals.iter().filter(|v| v.1 >= m - tol).map(|v| (v.0, v.2)).collect();
            let lo = top.iter().copied().fold((usize::MAX, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
            let hi = top.iter().copied().fold((usize::MAX, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
            Ok(Probe { lambda: l, phi: l * z - m, lo, hi })
        };
        let cap = opts.lambda_cap;
        let right = eval(cap)?;
        if z - right.hi.1 >= opts.slope_floor {
            return Ok((ExtReal::PosInf, None));
        }
        let left = eval(-cap)?;
        if z - left.lo.1 <= -opts.slope_floor {
            return Ok((ExtReal::PosInf, None));
        }
        let (mut a, mut b) = (left, right);
        let mut found = None;
        for _ in 0..200 {
            if b.lambda - a.lambda <= 1e-13 * (1.0 + b.lambda.abs()) {
                break;
            }
            let mid = eval(0.5 * (a.lambda + b.lambda))?;
            if z > mid.hi.1 {
                a = mid;
            } else if z < mid.lo.1 {
                b = mid;
            } else {
                found = Some(mid);
                break;
            }
        }
        let p = found.unwrap_or_else(|| if a.phi >= b.phi { a } else { b });
        let value = a.phi.max(b.phi).max(p.phi);
        if value > opts.inf_threshold {
            return Ok((ExtReal::PosInf, None));
        }
        let parts = if p.hi.1 - p.lo.1 <= 1e-12 || p.lo.0 == p.hi.0 {
            vec![(p.hi.0, 1.0, p.hi.1)]
        } else {
            let theta = ((z - p.lo.1) / (p.hi.1 - p.lo.1)).clamp(0.0, 1.0);
            vec![(p.lo.0, 1.0 - theta, p.lo.1), (p.hi.0, theta, p.hi.1)]
        };
        Ok((ExtReal::Finite(value.max(0.0)), Some(EnvelopeWitness { parts })))
    }

    /// `inf_x Σ vᵢ I_i(xᵢ)` subject to `Σ vᵢ xᵢ = z`, by duality; weights are
    /// indexed like the block list.
    pub fn inner_cost(&self, v: &[f64], z: &[f64]) -> Result<ExtReal> {
        inner_cost(v, &self.rates, z)
    }

    fn grid_res(&self) -> usize {
        self.grid_res.unwrap_or(if self.num_blocks() <= 3 { 64 } else { 24 })
    }

    /// `J` by simplex gridding of the time proportions with local refinement.
    pub fn j_eval_grid(&self, z: &[f64]) -> Result<JValue> {
        self.check_input(z)?;
        let m = self.num_blocks();
        let orders: Vec<(Vec<usize>, Vec<ExtReal>)> =
            permutations(m).into_iter().map(|o| (self.suffix_weights(&o), o)).map(|(w, o)| (o, w)).collect();
        let route = |v: &[f64]| -> (ExtReal, usize) {
            let mut best = (ExtReal::PosInf, 0);
            for (k, (_, w)) in orders.iter().enumerate() {
                let mut acc = ExtReal::ZERO;
                for (vj, wj) in v.iter().zip(w) {
                    acc = acc.add(ext_mul(ExtReal::Finite(*vj), *wj)).unwrap_or(ExtReal::PosInf);
                }
                if improves(acc, best.0) {
                    best = (acc, k);
                }
            }
            best
        };
        let total = |v: &[f64]| -> Result<(ExtReal, usize)> {
            let (r, k) = route(v);
            if r == ExtReal::PosInf {
                return Ok((r, k));
            }
            let inner = inner_cost(v, &self.rates, z)?;
            Ok((inner.add(r).unwrap_or(ExtReal::PosInf), k))
        };
        let res = self.grid_res();
        let grid = compositions(res, m);
        let scored: Vec<(ExtReal, usize, Vec<f64>)> = grid
            .par_iter()
            .map(|c| {
                let v: Vec<f64> = c.iter().map(|&k| k as f64 / res as f64).collect();
                total(&v).map(|(t, k)| (t, k, v))
            })
            .collect::<Result<_>>()?;
        let mut ranked: Vec<usize> = (0..scored.len()).filter(|&i| scored[i].0.is_finite()).collect();
        ranked.sort_by(|&a, &b| scored[a].0.to_f64().total_cmp(&scored[b].0.to_f64()).then(a.cmp(&b)));
        let mut best: Option<(f64, usize, Vec<f64>)> = None;
        for &i in ranked.iter().take(self.refine_top.max(1)) {
            let (mut val, mut k, mut v) = (scored[i].0.to_f64(), scored[i].1, scored[i].2.clone());
            let h = 1.0 / res as f64;
            for _sweep in 0..2 {
                for a in 0..m {
                    for b in 0..m {
                        if a == b {
                            continue;
                        }
                        // move mass t from b to a, t ∈ [−min(h, v_a), min(h, v_b)]
                        let (lo, hi) = (-h.min(v[a]), h.min(v[b]));
                        if hi - lo <= 1e-12 {
                            continue;
                        }
                        let at = |t: f64| {
                            let mut u = v.clone();
                            u[a] += t;
                            u[b] -= t;
                            u[b] = u[b].max(0.0);
                            u[a] = u[a].max(0.0);
                            u
                        };
                        let f = |t: f64| total(&at(t)).map(|(x, _)| x.to_f64());
                        let t = golden_min(&f, lo, hi, 40)?;
                        let cand = at(t);
                        let (cv, ck) = total(&cand)?;
                        if cv.to_f64() < val - 1e-15 {
                            val = cv.to_f64();
                            k = ck;
                            v = cand;
                        }
                    }
                }
            }
            if best.as_ref().is_none_or(|b| val < b.0 - 1e-12) {
                best = Some((val, k, v));
            }
        }
        let Some((val, k, v)) = best else {
            return Ok(JValue { value: ExtReal::PosInf, witness: None });
        };
        let order = orders[k].0.clone();
        let weights = order.iter().map(|&b| v[b]).collect();
        Ok(JValue {
            value: ExtReal::Finite(val.max(0.0)),
            witness: Some(Witness { order, weights, points: vec![Vec::new(); m] }),
        })
    }

    /// `J` on a list of points, in input order.
    pub fn j_curve(&self, grid: &[f64]) -> Result<Vec<CurvePoint>> {
        if self.d != 1 {
            return Err(Error::UnsupportedDimension(self.d));
        }
        grid.par_iter()
            .map(|&z| self.j_eval(&[z]).map(|j| CurvePoint { z, value: j.value, witness: j.witness }))
            .collect()
    }
}

#[derive(Debug, Clone)]
struct EnvelopeWitness {
    /// `(block, time share, block average)`.
    parts: Vec<(usize, f64, f64)>,
}

#[derive(Debug, Clone, Copy)]
struct Probe {
    lambda: f64,
    phi: f64,
    /// Active pieces with the smallest and largest slope.
    lo: (usize, f64),
    hi: (usize, f64),
}

fn improves(a: ExtReal, b: ExtReal) -> bool {
    match (a, b) {
        (ExtReal::Finite(x), ExtReal::Finite(y)) => x < y - 1e-12,
        _ => a < b,
    }
}

/// `inf Σ vᵢ I_i(xᵢ)` over `Σ vᵢ xᵢ = z`, as the conjugate of `Σ vᵢ Λ_i`.
/// Zero weights drop out.
pub fn inner_cost(v: &[f64], rates: &[BlockRate], z: &[f64]) -> Result<ExtReal> {
    if v.len() != rates.len() {
        return Err(Error::spec("one weight per block is required"));
    }
    if v.iter().any(|&x| x < -1e-12) || (v.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::spec("weights must lie on the simplex"));
    }
    let used: Vec<(f64, &BlockRate)> = v.iter().zip(rates).filter(|(w, _)| **w > 0.0).map(|(w, r)| (*w, r)).collect();
    if let [(_, r)] = used.as_slice() {
        return r.rate_eval(z);
    }
    let d = z.len();
    let norm = used.iter().map(|(_, r)| r.f_norm()).fold(0.0, f64::max);
    if z.iter().any(|c| c.abs() > norm + 1e-12) {
        return Ok(ExtReal::PosInf);
    }
    let total = |l: &[f64]| -> Result<(f64, Vec<f64>)> {
        let mut val = 0.0;
        let mut grad = vec![0.0; d];
        for (w, r) in &used {
            let (p, g) = r.pressure(l)?;
            val += w * p;
            for k in 0..d {
                grad[k] += w * g[k];
            }
        }
        Ok((val, grad))
    };
    let opts = DualOptions {
        lambda_cap: default_lambda_cap(norm),
        inf_threshold: DEFAULT_INF_THRESHOLD,
        slope_floor: DEFAULT_SLOPE_FLOOR,
    };
    let sol = conjugate(z, &total, &opts)?;
    Ok(match sol.value {
        ExtReal::Finite(x) => ExtReal::Finite(x.max(0.0)),
        other => other,
    })
}

fn golden_min(f: &dyn Fn(f64) -> Result<f64>, mut a: f64, mut b: f64, iters: usize) -> Result<f64> {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c)?, f(d)?);
    for _ in 0..iters {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d)?;
        }
    }
    Ok(if fc <= fd { c } else { d })
}

/// All permutations of `0..m` in lexicographic order.
pub fn permutations(m: usize) -> Vec<Vec<usize>> {
    let mut cur: Vec<usize> = (0..m).collect();
    let mut out = vec![cur.clone()];
    loop {
        let Some(i) = (1..m).rev().find(|&i| cur[i - 1] < cur[i]) else {
            return out;
        };
        let j = (i..m).rev().find(|&j| cur[j] > cur[i - 1]).expect("successor exists");
        cur.swap(i - 1, j);
        cur[i..].reverse();
        out.push(cur.clone());
    }
}

/// Compositions of `total` into `parts` nonnegative integers, lexicographic.
pub fn compositions(total: usize, parts: usize) -> Vec<Vec<usize>> {
    fn go(left: usize, parts: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if parts == 1 {
            cur.push(left);
            out.push(cur.clone());
            cur.pop();
            return;
        }
        for k in 0..=left {
            cur.push(k);
            go(left - k, parts - 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(total, parts, &mut Vec::with_capacity(parts), &mut out);
    out
}

/// Rate evaluators for arbitrary state groups of a matrix, for callers that
/// assemble a [`CompositeRate`] by hand.
pub fn block_rates_for(p: &Matrix, f: &crate::chain_model::Observable, groups: &[Vec<usize>]) -> Result<Vec<BlockRate>> {
    groups.iter().map(|g| BlockRate::new(p, f, g)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain_model::{Cooling, Observable};
    use crate::fixtures;
    use proptest::prelude::*;

    fn fair_coin_pair() -> Vec<BlockRate> {
        let p = Matrix::from_rows(&[
            vec![0.5, 0.5, 0.0, 0.0],
            vec![0.5, 0.5, 0.0, 0.0],
            vec![0.0, 0.0, 0.5, 0.5],
            vec![0.0, 0.0, 0.5, 0.5],
        ])
        .unwrap();
        let f = Observable::scalar(&[1.0, 0.0, 1.0, 0.0]).unwrap();
        block_rates_for(&p, &f, &[vec![0, 1], vec![2, 3]]).unwrap()
    }

    fn coin_rate(x: f64) -> f64 {
        if x <= 0.0 || x >= 1.0 {
            return if x == 0.0 || x == 1.0 { 2f64.ln() } else { f64::INFINITY };
        }
        x * x.ln() + (1.0 - x) * (1.0 - x).ln() + 2f64.ln()
    }

    #[test]
    fn inner_cost_examples() {
        let rates = fair_coin_pair();
        let one = inner_cost(&[1.0, 0.0], &rates, &[0.3]).unwrap().to_f64();
        assert!((one - coin_rate(0.3)).abs() < 1e-9);
        let half = inner_cost(&[0.5, 0.5], &rates, &[0.3]).unwrap().to_f64();
        let mut brute = f64::INFINITY;
        for k in 0..=600 {
            let x1 = k as f64 / 1000.0;
            brute = brute.min(0.5 * (coin_rate(x1) + coin_rate(0.6 - x1)));
        }
        assert!((half - brute).abs() < 2e-3, "{half} vs {brute}");

    }

    #[test]
    fn point_mass_mixture() {
        // two 1×1 blocks with f-values 1 and 3, rates −log 0.5 and −log 0.25
        let mut p = Matrix::identity(3);
        p.set(0, 0, 0.5);
        p.set(0, 2, 0.5);
        p.set(1, 1, 0.25);
        p.set(1, 2, 0.75);
        let f = Observable::scalar(&[1.0, 3.0, 0.0]).unwrap();
        let rates = block_rates_for(&p, &f, &[vec![0], vec![1]]).unwrap();
        let w = 0.3;
        let z = w * 1.0 + (1.0 - w) * 3.0;
        let got = inner_cost(&[w, 1.0 - w], &rates, &[z]).unwrap().to_f64();
        let want = -w * 0.5f64.ln() - (1.0 - w) * 0.25f64.ln();
        assert!((got - want).abs() < 1e-6, "{got} vs {want}");
        assert_eq!(inner_cost(&[w, 1.0 - w], &rates, &[z + 0.1]).unwrap(), ExtReal::PosInf);
    }

    #[test]
    fn permutations_and_compositions() {
        let p = permutations(3);
        assert_eq!(p.len(), 6);
        assert_eq!(p[0], vec![0, 1, 2]);
        assert_eq!(p[5], vec![2, 1, 0]);
        assert_eq!(permutations(5).len(), 120);
        assert_eq!(compositions(4, 3).len(), 15);
        assert!(compositions(6, 3).iter().all(|c| c.iter().sum::<usize>() == 6));
    }

    fn s3() -> (Chain, ChainAnalysis) {
        let c = fixtures::s3_metropolis().unwrap();
        let a = ChainAnalysis::new(&c, 200).unwrap();
        (c, a)
    }

    #[test]
    fn s3_ingredients() {
        let (c, a) = s3();
        let g: Vec<String> = a.dec.g_set.iter().map(|&i| block_label(&c, &a.dec.blocks[i].states)).collect();
        assert_eq!(g.len(), 5);
        for want in ["{2}", "{4}", "{5}", "{6}", "{8}"] {
            assert!(g.contains(&want.to_string()), "{g:?}");
        }
        let find = |lab: &str| {
            (0..a.dec.num_blocks()).find(|&i| block_label(&c, &a.dec.blocks[i].states) == lab).unwrap()
        };
        assert_eq!(a.u0.get(find("{2}"), find("{4}")), ExtReal::Finite(-2.0));
        assert_eq!(a.u0.get(find("{6}"), find("{2}")), ExtReal::Finite(-5.0));
        assert_eq!(a.u0.get(find("{4}"), find("{6}")), ExtReal::ZERO);
        assert_eq!(a.regime, Regime::Intermediate);
        let cr = CompositeRate::new(&c, &a, CostKind::U0).unwrap();
        let pos4 = g.iter().position(|l| l == "{4}").unwrap();
        let r4 = cr.block_rates()[pos4].rate_eval(&[2.0]).unwrap().to_f64();
        assert!((r4 - 1.0 / 3.0).abs() < 1e-8);
    }

    #[test]
    fn s3_breakpoints() {
        let (c, a) = s3();
        let cr = CompositeRate::new(&c, &a, CostKind::U0).unwrap();
        for (z, want) in [(-1.0, 0.0), (-2.0 / 11.0, 4.0 / 11.0), (0.0, 0.0), (2.0, 1.0 / 3.0), (12.0 / 5.0, 1.0), (3.0, 0.0)] {
            let got = cr.j_eval(&[z]).unwrap();
            assert!((got.value.to_f64() - want).abs() < 1e-6, "z={z}: {:?}", got);
        }
        assert_eq!(cr.j_eval(&[3.2]).unwrap().value, ExtReal::PosInf);
        assert_eq!(cr.j_eval(&[-1.2]).unwrap().value, ExtReal::PosInf);
    }

    #[test]
    fn s3_regimes_by_cooling() {
        for (beta, want) in [
            (Cooling::Logarithmic { c: 1.0 }, Regime::Trivial),
            (Cooling::Power { c: 1.0, exponent: 2.0 }, Regime::Homogeneous),
        ] {
            let c = fixtures::s3_metropolis_with(beta).unwrap();
            let a = ChainAnalysis::new(&c, 200).unwrap();
            assert_eq!(a.regime, want);
        }
    }

    #[test]
    fn trivial_regime_vanishes_on_hull() {
        let c = fixtures::s3_metropolis_with(Cooling::Logarithmic { c: 1.0 }).unwrap();
        let a = ChainAnalysis::new(&c, 200).unwrap();
        let cr = CompositeRate::new(&c, &a, CostKind::U0).unwrap();
        for z in [2.0, 0.0, -1.0, 1.0, -0.5, 0.5] {
            let j = cr.j_eval(&[z]).unwrap().value.to_f64();
            assert!(j.abs() < 1e-9, "z={z}: {j}");
        }
    }

    #[test]
    fn two_state_curves() {
        for (chain, kind, base) in [
            (fixtures::s12_1().unwrap(), CostKind::U0, 2f64),
            (fixtures::s12_2().unwrap(), CostKind::T0, 3f64),
            (fixtures::s12_2().unwrap(), CostKind::U0, 2f64),
        ] {
            let a = ChainAnalysis::new(&chain, 100).unwrap();
            let cr = CompositeRate::new(&chain, &a, kind).unwrap();
            for k in 0..10 {
                let z = k as f64 / 10.0;
                let j = cr.j_eval(&[z]).unwrap().value.to_f64();
                assert!((j - z * base.ln()).abs() < 1e-6, "z={z}: {j}");
            }
            assert_eq!(cr.j_eval(&[1.0]).unwrap().value.to_f64(), 0.0);
        }
    }

    #[test]
    fn envelope_matches_grid_on_coins() {
        let rates = fair_coin_pair();
        let cost = vec![vec![ExtReal::ZERO, ExtReal::Finite(-0.4)], vec![ExtReal::Finite(-0.1), ExtReal::ZERO]];
        let cr = CompositeRate::from_parts(rates, cost, vec!["a".into(), "b".into()]).unwrap();
        for z in [0.1, 0.3, 0.5, 0.8] {
            let e = cr.j_eval_envelope(z).unwrap().value.to_f64();
            let g = cr.j_eval_grid(&[z]).unwrap().value.to_f64();
            assert!((e - g).abs() < 1e-6, "z={z}: {e} vs {g}");
        }
    }

    #[test]
    fn two_dimensional_single_block_matches_rate() {
        let p = Matrix::filled(4, 0.25);
        let f = Observable::from_states(vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let rates = block_rates_for(&p, &f, &[vec![0, 1, 2, 3]]).unwrap();
        let direct = rates[0].rate_eval(&[0.3, 0.6]).unwrap().to_f64();
        let want = coin_rate(0.3) + coin_rate(0.6);
        assert!((direct - want).abs() < 1e-6);
        let cr = CompositeRate::from_parts(rates, vec![vec![ExtReal::ZERO]], vec!["x".into()]).unwrap();
        assert!((cr.j_eval(&[0.3, 0.6]).unwrap().value.to_f64() - want).abs() < 1e-6);
    }

    #[test]
    fn constant_schedule_costs_agree() {
        let p = Matrix::from_rows(&[vec![0.6, 0.3, 0.1], vec![0.0, 0.5, 0.5], vec![0.0, 0.5, 0.5]]).unwrap();
        let chain = Chain::new(
            crate::chain_model::StateSpace::numbered(3, 0),
            Observable::scalar(&[0.0, 1.0, -1.0]).unwrap(),
            vec![1.0 / 3.0; 3],
            crate::chain_model::Schedule::constant(p).unwrap(),
        )
        .unwrap();
        let a = ChainAnalysis::new(&chain, 100).unwrap();
        let u = CompositeRate::new(&chain, &a, CostKind::U0).unwrap();
        let t = CompositeRate::new(&chain, &a, CostKind::T0).unwrap();
        for k in 0..=8 {
            let z = -1.0 + k as f64 * 0.25;
            assert_eq!(u.j_eval(&[z]).unwrap().value, t.j_eval(&[z]).unwrap().value);
        }
    }

    fn random_block(seed: &[u32], k: usize, fvals: &[f64]) -> BlockRate {
        let mut rows = vec![vec![0.0; k]; k];
        for i in 0..k {
            let raw: Vec<f64> = (0..k).map(|j| 0.05 + (seed[(i * k + j) % seed.len()] % 1000) as f64 / 1000.0).collect();
            let s: f64 = raw.iter().sum();
            rows[i] = raw.iter().map(|x| x / s).collect();
        }
        let p = Matrix::from_rows(&rows).unwrap();
        let f = Observable::scalar(&fvals[..k]).unwrap();
        BlockRate::new(&p, &f, &(0..k).collect::<Vec<_>>()).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn duality_matches_brute_force(
            seed in proptest::collection::vec(any::<u32>(), 16),
            fv in proptest::collection::vec(-1.0f64..1.0, 9),
            m in 2usize..=3,
            wraw in proptest::collection::vec(0.1f64..1.0, 3),
            zt in 0.1f64..0.9,
        ) {
            let rates: Vec<BlockRate> = (0..m).map(|b| random_block(&seed[b..], 3, &fv[3 * b..])).collect();
            let ws: f64 = wraw[..m].iter().sum();
            let v: Vec<f64> = wraw[..m].iter().map(|x| x / ws).collect();
            let boxes: Vec<(f64, f64)> = rates.iter().map(|r| r.domain_box().unwrap()[0]).collect();
            let zlo: f64 = v.iter().zip(&boxes).map(|(w, b)| w * b.0).sum();
            let zhi: f64 = v.iter().zip(&boxes).map(|(w, b)| w * b.1).sum();
            let z = zlo + zt * (zhi - zlo);
            let dual = inner_cost(&v, &rates, &[z]).unwrap().to_f64();
            let brute = brute_inner(&v, &rates, &boxes, z);
            prop_assert!((dual - brute).abs() < 2e-3, "dual {} brute {}", dual, brute);
        }

        #[test]
        fn zero_weight_prefix_invariance(raw in proptest::collection::vec(-3.0f64..0.0, 16), wraw in proptest::collection::vec(0.0f64..1.0, 3)) {
            let rates = fair_coin_pair();
            let rates = vec![rates[0].clone(), rates[1].clone(), rates[0].clone(), rates[1].clone()];
            let cost: Vec<Vec<ExtReal>> = (0..4).map(|i| (0..4).map(|j| if i == j { ExtReal::ZERO } else { ExtReal::Finite(raw[i * 4 + j]) }).collect()).collect();
            let cr = CompositeRate::from_parts(rates, cost, vec!["a".into(), "b".into(), "c".into(), "d".into()]).unwrap();
            let s: f64 = wraw.iter().sum::<f64>().max(1e-9);
            let w: Vec<f64> = wraw.iter().map(|x| x / s).collect();
            let base = cr.routing_cost(&[0, 1, 2], &w);
            let front = cr.routing_cost(&[3, 0, 1, 2], &[0.0, w[0], w[1], w[2]]);
            prop_assert_eq!(base, front);
            let back = cr.routing_cost(&[0, 1, 2, 3], &[w[0], w[1], w[2], 0.0]);
            let diff = back.to_f64() - base.to_f64();
            prop_assert!((diff + cr.cost(2, 3).to_f64() * w.iter().sum::<f64>()).abs() < 1e-12);
            prop_assert!(diff >= 0.0);
        }

        #[test]
        fn larger_costs_give_smaller_rates(d1 in -2.0f64..0.0, d2 in -2.0f64..0.0, z in 0.05f64..0.95) {
            let (hi, lo) = (d1.max(d2), d1.min(d2));
            let mk = |c: f64| CompositeRate::from_parts(
                fair_coin_pair(),
                vec![vec![ExtReal::ZERO, ExtReal::Finite(c)], vec![ExtReal::Finite(c), ExtReal::ZERO]],
                vec!["a".into(), "b".into()],
            ).unwrap();
            let ju = mk(hi).j_eval(&[z]).unwrap().value.to_f64();
            let jt = mk(lo).j_eval(&[z]).unwrap().value.to_f64();
            prop_assert!(ju <= jt + 1e-9);
            prop_assert!(ju <= coin_rate(z) + 1e-9);
        }
    }

    fn brute_inner(v: &[f64], rates: &[BlockRate], boxes: &[(f64, f64)], z: f64) -> f64 {
        let step = 1e-3;
        let grid = |b: (f64, f64)| -> Vec<f64> {
            let n = ((b.1 - b.0) / step).ceil().max(1.0) as usize;
            (0..=n).map(|k| b.0 + (b.1 - b.0) * k as f64 / n as f64).collect()
        };
        let tabulate = |r: &BlockRate, xs: &[f64]| -> Vec<f64> { xs.iter().map(|x| r.rate_eval(&[*x]).unwrap().to_f64()).collect() };
        let g0 = grid(boxes[0]);
        let i0 = tabulate(&rates[0], &g0);
        let mut best = f64::INFINITY;
        if v.len() == 2 {
            for (x0, c0) in g0.iter().zip(&i0) {
                let x1 = (z - v[0] * x0) / v[1];
                if x1 < boxes[1].0 - 1e-12 || x1 > boxes[1].1 + 1e-12 {
                    continue;
                }
                let c1 = rates[1].rate_eval(&[x1.clamp(boxes[1].0, boxes[1].1)]).unwrap().to_f64();
                best = best.min(v[0] * c0 + v[1] * c1);
            }
        } else {
            let coarse = |b: (f64, f64)| -> Vec<f64> { (0..=200).map(|k| b.0 + (b.1 - b.0) * k as f64 / 200.0).collect() };
            let g1 = coarse(boxes[1]);
            let i1 = tabulate(&rates[1], &g1);
            let g0c = coarse(boxes[0]);
            let i0c = tabulate(&rates[0], &g0c);
            for (x0, c0) in g0c.iter().zip(&i0c) {
                for (x1, c1) in g1.iter().zip(&i1) {
                    let x2 = (z - v[0] * x0 - v[1] * x1) / v[2];
                    if x2 < boxes[2].0 - 1e-12 || x2 > boxes[2].1 + 1e-12 {
                        continue;
                    }
                    let c2 = rates[2].rate_eval(&[x2.clamp(boxes[2].0, boxes[2].1)]).unwrap().to_f64();
                    best = best.min(v[0] * c0 + v[1] * c1 + v[2] * c2);
                }
            }
        }
        best
    }
}
