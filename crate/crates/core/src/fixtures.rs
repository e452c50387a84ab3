//! Compiled-in example chains.

use crate::chain_model::{
    normalize_log_rows, Chain, Cooling, CustomKernel, DeclaredRates, Matrix, MetropolisSpec, Observable, Schedule,
    StateSpace,
};
use crate::error::{Error, Result};
use crate::numerics::ExtReal;

pub const FIXTURE_NAMES: [&str; 4] = ["s3-metropolis", "s12-1", "s12-2", "s12-3"];

/// Energy landscape on states `1..9`.
pub const S3_ENERGY: [f64; 9] = [4.0, 3.0, 5.0, 2.0, 1.0, 0.0, 1.0, -1.0, 0.0];

/// Self-loop weights of the two sticky transient states, chosen so that
/// `−log((1+a)/2) = 1/3` and `−log((1+b)/2) = 2/3`.
pub fn s3_loop_weights() -> (f64, f64) {
    (2.0 * (-1.0f64 / 3.0).exp() - 1.0, 2.0 * (-2.0f64 / 3.0).exp() - 1.0)
}

/// Proposal kernel of the nine-state landscape (0-based indices).
pub fn s3_proposal() -> Matrix {
    let (a, b) = s3_loop_weights();
    let mut g = Matrix::zeros(9);
    let mut put = |i: usize, j: usize, v: f64| g.set(i - 1, j - 1, v);
    for i in [2, 6, 7, 8] {
        put(i, i + 1, 0.5);
    }
    for i in [1, 2, 6, 7] {
        put(i + 1, i, 0.5);
    }
    put(1, 2, 1.0);
    put(9, 8, 1.0);
    put(3, 4, 0.5);
    put(4, 3, (1.0 - a) / 2.0);
    put(4, 4, a);
    put(4, 5, (1.0 - a) / 2.0);
    put(5, 4, (1.0 - b) / 2.0);
    put(5, 5, b);
    put(5, 6, (1.0 - b) / 2.0);
    // completes row 6 as a symmetric walk step
    put(6, 5, 0.5);
    g
}

/// The nine-state Metropolis chain with `f = H` and uniform start.
pub fn s3_metropolis_with(beta: Cooling) -> Result<Chain> {
    let spec = MetropolisSpec::new(s3_proposal(), S3_ENERGY.to_vec(), beta)?;
    Chain::new(
        StateSpace::numbered(9, 1),
        Observable::scalar(&S3_ENERGY)?,
        vec![1.0 / 9.0; 9],
        Schedule::metropolis(spec)?,
    )
}

pub fn s3_metropolis() -> Result<Chain> {
    s3_metropolis_with(Cooling::Linear { c: 1.0 })
}

/// The expected nonconvex rate curve of the nine-state chain.
pub fn s3_expected_j(z: f64) -> ExtReal {
    let v = if !(-1.0..=3.0).contains(&z) {
        return ExtReal::PosInf;
    } else if z <= -2.0 / 11.0 {
        4.0 * z / 9.0 + 4.0 / 9.0
    } else if z <= 0.0 {
        -2.0 * z
    } else if z <= 2.0 {
        z / 6.0
    } else if z <= 12.0 / 5.0 {
        5.0 * z / 3.0 - 3.0
    } else {
        -5.0 * z / 3.0 + 5.0
    };
    ExtReal::Finite(v)
}

fn two_state_chain(schedule: Schedule) -> Result<Chain> {
    Chain::new(
        StateSpace::numbered(2, 0),
        Observable::scalar(&[1.0, 0.0])?,
        vec![0.5, 0.5],
        schedule,
    )
}

/// Two states; leaving state 0 has probability `2⁻ⁿ` at even `n` and `3⁻ⁿ`
/// at odd `n`.
pub fn s12_1() -> Result<Chain> {
    two_state_chain(Schedule::alternating_two_state(2.0, 3.0)?)
}

/// As [`s12_1`], but the base switches between long blocks `(g(m−1), g(m)]`,
/// `g(m) = 2^(m²)`.
pub fn s12_2() -> Result<Chain> {
    two_state_chain(Schedule::block_alternating(2.0, 3.0)?)
}

/// Parameters of the nine-state periodic chain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeriodicParams {
    /// Exponent `A < 0` of the regular `C₂ → C₃` connection.
    pub a: f64,
    /// Gap `ε > 0`; the slow connection decays like `e^{(2A+ε)n}`.
    pub eps: f64,
    /// Exceptional steps are `n = 3^(2^j) + 1` for `j ≥ exception_start`.
    pub exception_start: u32,
}

impl Default for PeriodicParams {
    fn default() -> Self {
        PeriodicParams { a: -1.0, eps: 0.1, exception_start: 1 }
    }
}

impl PeriodicParams {
    pub fn is_exceptional(&self, n: u64) -> bool {
        if n < 2 {
            return false;
        }
        let mut m = n - 1;
        let mut e: u64 = 0;
        while m % 3 == 0 {
            m /= 3;
            e += 1;
        }
        m == 1 && e.is_power_of_two() && e.trailing_zeros() >= self.exception_start
    }

    fn log_kernel(&self, n: u64) -> Matrix {
        let nf = n as f64;
        let l12 = -(nf + 1.0).ln();
        let lt = self.a * nf;
        let lslow = (2.0 * self.a + self.eps) * nf;
        let third = (1.0f64 / 3.0).ln();
        let mut m = Matrix::filled(9, f64::NEG_INFINITY);
        for block in [0..3, 6..9] {
            for i in block.clone() {
                for j in block.clone() {
                    m.set(i, j, third);
                }
            }
        }
        m.set(3, 4, 0.0);
        m.set(4, 5, 0.0);
        m.set(5, 3, 0.0);
        // (row, column) pairs are 1-based below
        let mut put = |i: usize, j: usize, v: f64| m.set(i - 1, j - 1, v);
        match n % 3 {
            1 if self.is_exceptional(n) => {
                put(2, 6, l12);
                put(4, 9, lt);
                put(5, 9, lslow);
            }
            1 => {
                put(2, 6, l12);
                put(4, 9, lt);
                put(6, 9, lslow);
            }
            2 => {
                put(3, 4, l12);
                put(4, 7, lslow);
                put(5, 7, lt);
            }
            _ => {
                put(1, 5, l12);
                put(5, 8, lslow);
                put(6, 8, lt);
            }
        }
        normalize_log_rows(&mut m);
        m
    }
}

fn periodic_limit() -> Matrix {
    let mut p = Matrix::zeros(9);
    for block in [0..3, 6..9] {
        for i in block.clone() {
            for j in block.clone() {
                p.set(i, j, 1.0 / 3.0);
            }
        }
    }
    p.set(3, 4, 1.0);
    p.set(4, 5, 1.0);
    p.set(5, 3, 1.0);
    p
}

pub fn s12_3_schedule(params: PeriodicParams) -> Result<Schedule> {
    if !(params.a < 0.0 && params.eps > 0.0 && 2.0 * params.a + params.eps < params.a) {
        return Err(Error::spec("periodic chain needs A < 0 and 0 < ε < −A"));
    }
    let ninf = ExtReal::NegInf;
    let mut v = vec![vec![ninf; 3]; 3];
    v[0][1] = ExtReal::ZERO;
    v[1][2] = ExtReal::Finite(params.a);
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = ExtReal::ZERO;
    }
    let kernel = CustomKernel::new("s12-3", move |n| params.log_kernel(n));
    Ok(Schedule::custom(kernel, periodic_limit())?.with_rates(DeclaredRates {
        v: v.clone(),
        tau: v,
        entry_limits: false,
    }))
}

/// Nine states in three closed classes; the middle class is a 3-cycle whose
/// exits toward the last class depend on `n mod 3`.
pub fn s12_3_with(params: PeriodicParams) -> Result<Chain> {
    let f: Vec<f64> = (0..9).map(|x| (x / 3 + 1) as f64).collect();
    Chain::new(StateSpace::numbered(9, 1), Observable::scalar(&f)?, vec![1.0 / 9.0; 9], s12_3_schedule(params)?)
}

pub fn s12_3() -> Result<Chain> {
    s12_3_with(PeriodicParams::default())
}

/// Best-horizon comparison of the two routes into the last class of the
/// periodic chain, for `Γ = [2+ε, 2+2ε]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassGap {
    /// Horizon where paths started in `C₁` do best.
    pub n: u64,
    /// `(1/n) log P(Zₙ ∈ Γ)` for paths started in `C₁` (route `C₁→C₂→C₃`).
    pub entrant_rate: f64,
    /// The same for paths started in `C₂` (route `C₂→C₃`).
    pub resident_rate: f64,
    /// `entrant_rate − resident_rate`.
    pub gap: f64,
}

/// Exact per-route rates for `n = 1..=n_max` and their gap at the horizon
/// most favourable to the `C₁` route.
pub fn periodic_class_gap(params: PeriodicParams, n_max: u64) -> Result<ClassGap> {
    use crate::evolution_oracle::{rate_trace, EventSet, Interval, OracleOptions};
    let base = s12_3_with(params)?;
    let start = |states: [usize; 3]| {
        let mut pi = vec![0.0; 9];
        for x in states {
            pi[x] = 1.0 / 3.0;
        }
        Chain::new(base.states.clone(), base.f.clone(), pi, base.schedule.clone())
    };
    let set = EventSet::interval(Interval::closed(2.0 + params.eps, 2.0 + 2.0 * params.eps));
    let ns: Vec<u64> = (1..=n_max).collect();
    let opts = OracleOptions::default();
    let entrant = rate_trace(&start([0, 1, 2])?, &set, &ns, &opts)?;
    let resident = rate_trace(&start([3, 4, 5])?, &set, &ns, &opts)?;
    let best = entrant
        .iter()
        .zip(&resident)
        .filter(|(a, b)| a.rate.is_finite() && b.rate.is_finite())
        .max_by(|(a, _), (b, _)| a.rate.total_cmp(&b.rate))
        .ok_or_else(|| Error::spec("no horizon reaches the target set by both routes"))?;
    Ok(ClassGap { n: best.0.n, entrant_rate: best.0.rate, resident_rate: best.1.rate, gap: best.0.rate - best.1.rate })
}

/// Compiled-in generators referenced by name from chain files.
pub fn custom_schedule(name: &str) -> Option<Schedule> {
    match name {
        "s12-3" => s12_3_schedule(PeriodicParams::default()).ok(),
        _ => None,
    }
}

pub fn fixture_chain(name: &str) -> Result<Chain> {
    match name {
        "s3-metropolis" => s3_metropolis(),
        "s12-1" => s12_1(),
        "s12-2" => s12_2(),
        "s12-3" => s12_3(),
        other => Err(Error::spec(format!("unknown fixture '{other}'; known: {}", FIXTURE_NAMES.join(", ")))),
    }
}
