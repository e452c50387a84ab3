//! Block pressures `Λ_C(λ) = log ρ(Π_{C,λ})` and their Legendre transforms.

use crate::chain_model::{Matrix, Observable};
use crate::error::{Error, Result};
use crate::numerics::ExtReal;

pub const DEFAULT_INF_THRESHOLD: f64 = 1e6;
pub const DEFAULT_SLOPE_FLOOR: f64 = 1e-8;
pub const EIGEN_TOL: f64 = 1e-12;
pub const EIGEN_MAX_ITER: usize = 100_000;

/// `40 / max(1, ‖f‖)`.
pub fn default_lambda_cap(f_norm: f64) -> f64 {
    40.0 / f_norm.max(1.0)
}

/// `Π_{C,λ}(i,j) = P(i,j)·exp⟨λ, f(j)⟩` on the states of `block`.
pub fn tilted_matrix(block: &[usize], p: &Matrix, f: &Observable, lambda: &[f64]) -> Matrix {
    let mut m = p.submatrix(block);
    for (b, &y) in block.iter().enumerate() {
        let w = dot(lambda, f.value(y)).exp();
        for a in 0..block.len() {
            let v = m.get(a, b);
            m.set(a, b, v * w);
        }
    }
    m
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn strongly_connected(a: &Matrix) -> bool {
    let r = a.size();
    let reach = |forward: bool| {
        let mut seen = vec![false; r];
        seen[0] = true;
        let mut stack = vec![0];
        while let Some(x) = stack.pop() {
            for y in 0..r {
                let e = if forward { a.get(x, y) } else { a.get(y, x) };
                if e > 0.0 && !seen[y] {
                    seen[y] = true;
                    stack.push(y);
                }
            }
        }
        seen.into_iter().all(|s| s)
    };
    r > 0 && (r > 1 || a.get(0, 0) > 0.0) && reach(true) && reach(false)
}

/// Karp's maximum cycle mean of `weight(a, b)` over the edges `a(a,b) > 0`
/// of a strongly connected matrix.
fn max_cycle_mean(a: &Matrix, weight: impl Fn(usize, usize) -> f64) -> f64 {
    let r = a.size();
    let mut walk = vec![vec![f64::NEG_INFINITY; r]; r + 1];
    walk[0][0] = 0.0;
    for k in 1..=r {
        for x in 0..r {
            if walk[k - 1][x] == f64::NEG_INFINITY {
                continue;
            }
            for y in 0..r {
                if a.get(x, y) > 0.0 {
                    let cand = walk[k - 1][x] + weight(x, y);
                    if cand > walk[k][y] {
                        walk[k][y] = cand;
                    }
                }
            }
        }
    }
    let mut best = f64::NEG_INFINITY;
    for v in 0..r {
        if walk[r][v] == f64::NEG_INFINITY {
            continue;
        }
        let worst = (0..r)
            .filter(|&k| walk[k][v] > f64::NEG_INFINITY)
            .map(|k| (walk[r][v] - walk[k][v]) / (r - k) as f64)
            .fold(f64::INFINITY, f64::min);
        best = best.max(worst);
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct PfEigen {
    pub rho: f64,
    /// `A v = ρ v`, `‖v‖₁ = 1`.
    pub right: Vec<f64>,
    /// `uᵀ A = ρ uᵀ`, `uᵀ v = 1`.
    pub left: Vec<f64>,
}

fn mat_mul(a: &[f64], b: &[f64], r: usize) -> Vec<f64> {
    let mut c = vec![0.0; r * r];
    for i in 0..r {
        for k in 0..r {
            let aik = a[i * r + k];
            if aik == 0.0 {
                continue;
            }
            for j in 0..r {
                c[i * r + j] += aik * b[k * r + j];
            }
        }
    }
    c
}

fn normalize_max(m: &mut [f64]) {
    let mx = m.iter().fold(0.0f64, |a, &b| a.max(b));
    if mx > 0.0 {
        m.iter_mut().for_each(|x| *x /= mx);
    }
}

/// Perron–Frobenius eigenvalue and eigenvectors of an irreducible
/// nonnegative matrix, by power iteration on `A + cI`, which removes
/// periodicity. `c` is the largest geometric cycle mean `μ`; since
/// `μ ≤ ρ ≤ rμ` the shift keeps the spectral gap even when the entries span
/// many orders of magnitude. Powers are taken by repeated squaring, so `k`
/// squarings cover `2^k` plain iterations.
pub fn pf_eigen(a: &Matrix) -> Result<PfEigen> {
    let r = a.size();
    if !strongly_connected(a) {
        return Err(Error::NotIrreducible { states: (0..r).collect() });
    }
    if r == 1 {
        return Ok(PfEigen { rho: a.get(0, 0), right: vec![1.0], left: vec![1.0] });
    }
    let c = max_cycle_mean(a, |x, y| a.get(x, y).ln()).exp();
    let mut b: Vec<f64> = (0..r * r).map(|k| a.get(k / r, k % r) + if k / r == k % r { c } else { 0.0 }).collect();
    normalize_max(&mut b);
    let mut squarings = 0usize;
    let mut last_change = f64::INFINITY;
    // 2^17 > EIGEN_MAX_ITER plain iterations
    while squarings < 17 {
        let mut next = mat_mul(&b, &b, r);
        normalize_max(&mut next);
        last_change = next.iter().zip(&b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        b = next;
        squarings += 1;
        if last_change <= EIGEN_TOL * 1e-2 {
            break;
        }
    }
    let mut v: Vec<f64> = (0..r).map(|i| b[i * r..(i + 1) * r].iter().sum()).collect();
    let mut u: Vec<f64> = (0..r).map(|j| (0..r).map(|i| b[i * r + j]).sum()).collect();
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
    let av: Vec<f64> = (0..r).map(|i| dot(a.row(i), &v)).collect();
    let ua: Vec<f64> = (0..r).map(|j| (0..r).map(|i| u[i] * a.get(i, j)).sum()).collect();
    let uv = dot(&u, &v);
    let rho = dot(&u, &av) / uv;
    let scale = rho.abs().max(f64::MIN_POSITIVE);
    let resid_r: f64 = av.iter().zip(&v).map(|(x, y)| (x - rho * y).abs()).sum::<f64>() / scale;
    let unorm: f64 = u.iter().sum();
    let resid_l: f64 = ua.iter().zip(&u).map(|(x, y)| (x - rho * y).abs()).sum::<f64>() / (scale * unorm);
    let residual = resid_r.max(resid_l);
    if !(residual <= 1e3 * EIGEN_TOL) || v.iter().chain(&u).any(|x| !(*x > 0.0)) {
        return Err(Error::NotConverged { what: "Perron-Frobenius iteration", residual: residual.max(last_change) });
    }
    u.iter_mut().for_each(|x| *x /= uv);
    Ok(PfEigen { rho, right: v, left: u })
}

#[derive(Debug, Clone, PartialEq)]
enum Shape {
    /// `Λ(λ) = log ρ + ⟨λ, c⟩`: 1×1 blocks and blocks with constant `f`.
    Affine { log_rho: f64, c: Vec<f64> },
    General,
}

/// Pressure and rate evaluator for one irreducible block.
#[derive(Debug, Clone)]
pub struct BlockRate {
    pub states: Vec<usize>,
    sub: Matrix,
    fvals: Vec<Vec<f64>>,
    d: usize,
    f_norm: f64,
    shape: Shape,
    pub stochastic: bool,
    pub lambda_cap: f64,
    pub inf_threshold: f64,
    pub slope_floor: f64,
}

impl BlockRate {
    pub fn new(p: &Matrix, f: &Observable, states: &[usize]) -> Result<Self> {
        let sub = p.submatrix(states);
        if !strongly_connected(&sub) {
            return Err(Error::NotIrreducible { states: states.to_vec() });
        }
        let fvals: Vec<Vec<f64>> = states.iter().map(|&x| f.value(x).to_vec()).collect();
        let stochastic = (0..states.len()).all(|i| (sub.row(i).iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        let constant_f = fvals.iter().all(|v| v == &fvals[0]);
        let shape = if constant_f {
            Shape::Affine { log_rho: pf_eigen(&sub)?.rho.ln(), c: fvals[0].clone() }
        } else {
            Shape::General
        };
        let f_norm = f.sup_norm();
        Ok(BlockRate {
            states: states.to_vec(),
            sub,
            fvals,
            d: f.dim(),
            f_norm,
            shape,
            stochastic,
            lambda_cap: default_lambda_cap(f_norm),
            inf_threshold: DEFAULT_INF_THRESHOLD,
            slope_floor: DEFAULT_SLOPE_FLOOR,
        })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn f_norm(&self) -> f64 {
        self.f_norm
    }

    /// `Some(c)` when the block's pressure is affine with slope `c`.
    pub fn point_mass(&self) -> Option<(&[f64], f64)> {
        match &self.shape {
            Shape::Affine { log_rho, c } => Some((c, *log_rho)),
            Shape::General => None,
        }
    }

    /// `(Λ(λ), ∇Λ(λ))`.
    pub fn pressure(&self, lambda: &[f64]) -> Result<(f64, Vec<f64>)> {
        match &self.shape {
            Shape::Affine { log_rho, c } => Ok((log_rho + dot(lambda, c), c.clone())),
            Shape::General => {
                let k = self.states.len();
                let tilt: Vec<f64> = self.fvals.iter().map(|fv| dot(lambda, fv)).collect();
                let shift = tilt.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut m = self.sub.clone();
                for b in 0..k {
                    let w = (tilt[b] - shift).exp();
                    for a in 0..k {
                        let v = m.get(a, b);
                        m.set(a, b, v * w);
                    }
                }
                let e = pf_eigen(&m)?;
                let mut grad = vec![0.0; self.d];
                for j in 0..k {
                    let w = e.left[j] * e.right[j];
                    for (g, fv) in grad.iter_mut().zip(&self.fvals[j]) {
                        *g += w * fv;
                    }
                }
                Ok((e.rho.ln() + shift, grad))
            }
        }
    }

    pub fn dual_options(&self) -> DualOptions {
        DualOptions { lambda_cap: self.lambda_cap, inf_threshold: self.inf_threshold, slope_floor: self.slope_floor }
    }

    /// `I_C(x) = sup_λ ⟨λ,x⟩ − Λ_C(λ)`.
    pub fn rate_eval(&self, x: &[f64]) -> Result<ExtReal> {
        if x.len() != self.d {
            return Err(Error::UnsupportedDimension(x.len()));
        }
        if x.iter().any(|c| c.abs() > self.f_norm + 1e-12) {
            return Ok(ExtReal::PosInf);
        }
        if let Shape::Affine { log_rho, c } = &self.shape {
            let hit = x.iter().zip(c).all(|(a, b)| (a - b).abs() <= AFFINE_TOL);
            return Ok(if hit { ExtReal::Finite(-log_rho) } else { ExtReal::PosInf });
        }
        Ok(conjugate(x, &|l: &[f64]| self.pressure(l), &self.dual_options())?.value)
    }

    /// Per-coordinate bounds on the closure of the rate's domain: the
    /// extreme cycle means of each coordinate of `f`.
    pub fn domain_box(&self) -> Result<Vec<(f64, f64)>> {
        if let Shape::Affine { c, .. } = &self.shape {
            return Ok(c.iter().map(|&x| (x, x)).collect());
        }
        Ok((0..self.d)
            .map(|k| {
                let hi = max_cycle_mean(&self.sub, |_, y| self.fvals[y][k]);
                let lo = -max_cycle_mean(&self.sub, |_, y| -self.fvals[y][k]);
                (lo, hi)
            })
            .collect())
    }
}

/// Matching tolerance for point-mass rates.
pub const AFFINE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualOptions {
    pub lambda_cap: f64,
    pub inf_threshold: f64,
    pub slope_floor: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualSolution {
    pub value: ExtReal,
    pub lambda: Vec<f64>,
}

pub type Pressure<'a> = dyn Fn(&[f64]) -> Result<(f64, Vec<f64>)> + 'a;

/// `sup_λ ⟨λ,z⟩ − F(λ)` for a smooth convex `F` given with its gradient.
/// Ascent still climbing at `‖λ‖ = cap` (slope at least `slope_floor`)
/// reports `+∞`.
pub fn conjugate(z: &[f64], f: &Pressure, opts: &DualOptions) -> Result<DualSolution> {
    let sol = if z.len() == 1 { conjugate_1d(z[0], f, opts)? } else { conjugate_nd(z, f, opts)? };
    Ok(match sol.value {
        ExtReal::Finite(v) if v > opts.inf_threshold => DualSolution { value: ExtReal::PosInf, ..sol },
        _ => sol,
    })
}

fn conjugate_1d(z: f64, f: &Pressure, opts: &DualOptions) -> Result<DualSolution> {
    let cap = opts.lambda_cap;
    let slope = |l: f64| -> Result<(f64, f64)> {
        let (v, g) = f(&[l])?;
        Ok((z * l - v, z - g[0]))
    };
    let (_, s_hi) = slope(cap)?;
    if s_hi >= opts.slope_floor {
        return Ok(DualSolution { value: ExtReal::PosInf, lambda: vec![cap] });
    }
    let (_, s_lo) = slope(-cap)?;
    if s_lo <= -opts.slope_floor {
        return Ok(DualSolution { value: ExtReal::PosInf, lambda: vec![-cap] });
    }
    let (mut lo, mut hi) = (-cap, cap);
    let mut l = 0.0;
    let (mut phi, mut s) = slope(l)?;
    for _ in 0..400 {
        if s.abs() <= 1e-13 || hi - lo <= 1e-14 * (1.0 + l.abs()) {
            break;
        }
        if s > 0.0 {
            lo = l;
        } else {
            hi = l;
        }
        // Newton step with curvature from a finite difference of the slope
        let h = 1e-6 * (1.0 + l.abs());
        let (_, s2) = slope(l + h)?;
        let curv = (s2 - s) / h;
        let mut next = if curv < 0.0 { l - s / curv } else { f64::NAN };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        l = next;
        (phi, s) = slope(l)?;
    }
    Ok(DualSolution { value: ExtReal::Finite(phi), lambda: vec![l] })
}

fn solve_small(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let m = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= m * a[col][k];
            }
            b[row] -= m * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| a[i][k] * x[k]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    Some(x)
}

fn conjugate_nd(z: &[f64], f: &Pressure, opts: &DualOptions) -> Result<DualSolution> {
    let d = z.len();
    let cap = opts.lambda_cap;
    let eval = |l: &[f64]| -> Result<(f64, Vec<f64>)> {
        let (v, g) = f(l)?;
        Ok((dot(l, z) - v, z.iter().zip(&g).map(|(a, b)| a - b).collect()))
    };
    let project = |mut l: Vec<f64>| {
        let n = dot(&l, &l).sqrt();
        if n > cap {
            l.iter_mut().for_each(|x| *x *= cap / n);
        }
        l
    };
    let mut l = vec![0.0; d];
    let (mut phi, mut g) = eval(&l)?;
    let mut gnorm = dot(&g, &g).sqrt();
    for _ in 0..2000 {
        if gnorm <= 1e-10 {
            break;
        }
        let ln = dot(&l, &l).sqrt();
        if ln >= cap * (1.0 - 1e-12) {
            let outward = dot(&g, &l) / ln;
            let tangential = (gnorm * gnorm - outward * outward).max(0.0).sqrt();
            if outward >= opts.slope_floor && tangential <= 1e-6 * gnorm.max(1.0) {
                return Ok(DualSolution { value: ExtReal::PosInf, lambda: l });
            }
        }
        // damped Newton direction: (∇²Λ + μI) p = g
        let h = 1e-6;
        let mut hess = vec![vec![0.0; d]; d];
        for k in 0..d {
            let mut lk = l.clone();
            lk[k] += h;
            let (_, gk) = eval(&lk)?;
            for i in 0..d {
                hess[i][k] = (g[i] - gk[i]) / h;
            }
        }
        for i in 0..d {
            for k in 0..i {
                let s = 0.5 * (hess[i][k] + hess[k][i]);
                hess[i][k] = s;
                hess[k][i] = s;
            }
            hess[i][i] += 1e-9 + 1e-6 * gnorm;
        }
        let newton = solve_small(hess, g.clone()).filter(|p| dot(p, &g) > 0.0);
        let mut improved = false;
        for dir in newton.into_iter().chain(std::iter::once(g.clone())) {
            let mut t = 1.0;
            let slope0 = dot(&g, &dir);
            while t > 1e-20 {
                let cand = project(l.iter().zip(&dir).map(|(a, b)| a + t * b).collect());
                let (pc, gc) = eval(&cand)?;
                let moved: f64 = cand.iter().zip(&l).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                if pc >= phi + 1e-4 * t * slope0.min(moved * gnorm) && moved > 0.0 {
                    improved = pc > phi || moved > 1e-15;
                    l = cand;
                    phi = pc;
                    g = gc;
                    break;
                }
                t *= 0.5;
            }
            if improved {
                break;
            }
        }
        gnorm = dot(&g, &g).sqrt();
        if !improved {
            break;
        }
    }
    let ln = dot(&l, &l).sqrt();
    if ln >= cap * (1.0 - 1e-9) && dot(&g, &l) / ln >= opts.slope_floor {
        return Ok(DualSolution { value: ExtReal::PosInf, lambda: l });
    }
    if gnorm > 1e-6 {
        return Err(Error::NotConverged { what: "Legendre transform ascent", residual: gnorm });
    }
    Ok(DualSolution { value: ExtReal::Finite(phi), lambda: l })
}
