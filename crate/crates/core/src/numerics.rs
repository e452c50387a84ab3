//! Extended reals and log-domain probabilities.
//!
//! `ExtReal` is a tagged scalar so that the product convention
//! `(±∞)·0 = 0` is explicit rather than inherited from IEEE (which yields
//! NaN). Rates live in `[0, +∞]` and routing costs in `[−∞, 0]`; mixing both
//! infinities in a sum is rejected.

use std::cmp::Ordering;
use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExtReal {
    NegInf,
    Finite(f64),
    PosInf,
}

impl ExtReal {
    pub const ZERO: ExtReal = ExtReal::Finite(0.0);

    /// Maps IEEE infinities onto the tagged variants. NaN is not accepted.
    pub fn from_f64(x: f64) -> Self {
        debug_assert!(!x.is_nan(), "NaN has no extended-real meaning");
        if x == f64::INFINITY {
            ExtReal::PosInf
        } else if x == f64::NEG_INFINITY {
            ExtReal::NegInf
        } else {
            ExtReal::Finite(x)
        }
    }

    pub fn to_f64(self) -> f64 {
        match self {
            ExtReal::NegInf => f64::NEG_INFINITY,
            ExtReal::Finite(x) => x,
            ExtReal::PosInf => f64::INFINITY,
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, ExtReal::Finite(_))
    }

    pub fn finite(self) -> Option<f64> {
        match self {
            ExtReal::Finite(x) => Some(x),
            _ => None,
        }
    }

    /// `log x` with `log 0 = −∞`.
    pub fn ln(x: f64) -> Self {
        if x <= 0.0 {
            ExtReal::NegInf
        } else {
            ExtReal::Finite(x.ln())
        }
    }

    pub fn neg(self) -> Self {
        match self {
            ExtReal::NegInf => ExtReal::PosInf,
            ExtReal::Finite(x) => ExtReal::Finite(-x),
            ExtReal::PosInf => ExtReal::NegInf,
        }
    }

    pub fn add(self, other: ExtReal) -> Result<ExtReal> {
        use ExtReal::*;
        match (self, other) {
            (PosInf, NegInf) | (NegInf, PosInf) => Err(Error::IndeterminateSum),
            (PosInf, _) | (_, PosInf) => Ok(PosInf),
            (NegInf, _) | (_, NegInf) => Ok(NegInf),
            (Finite(a), Finite(b)) => Ok(Finite(a + b)),
        }
    }

    pub fn mul(self, other: ExtReal) -> ExtReal {
        ext_mul(self, other)
    }

    pub fn max(self, other: ExtReal) -> ExtReal {
        if self >= other {
            self
        } else {
            other
        }
    }

    pub fn min(self, other: ExtReal) -> ExtReal {
        if self <= other {
            self
        } else {
            other
        }
    }
}

impl From<f64> for ExtReal {
    fn from(x: f64) -> Self {
        ExtReal::from_f64(x)
    }
}

impl PartialOrd for ExtReal {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        use ExtReal::*;
        match (self, other) {
            (NegInf, NegInf) | (PosInf, PosInf) => Some(Ordering::Equal),
            (NegInf, _) | (_, PosInf) => Some(Ordering::Less),
            (_, NegInf) | (PosInf, _) => Some(Ordering::Greater),
            (Finite(a), Finite(b)) => a.partial_cmp(b),
        }
    }
}

impl fmt::Display for ExtReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExtReal::NegInf => f.write_str("-inf"),
            ExtReal::PosInf => f.write_str("inf"),
            ExtReal::Finite(x) => f.write_str(&fmt_sig(*x)),
        }
    }
}

/// Product with the convention `(±∞)·0 = 0`.
pub fn ext_mul(a: ExtReal, b: ExtReal) -> ExtReal {
    use ExtReal::*;
    match (a, b) {
        (Finite(x), Finite(y)) => Finite(x * y),
        (Finite(x), inf) | (inf, Finite(x)) => {
            if x == 0.0 {
                Finite(0.0)
            } else if (x > 0.0) == (inf == PosInf) {
                PosInf
            } else {
                NegInf
            }
        }
        (x, y) => {
            if x == y {
                PosInf
            } else {
                NegInf
            }
        }
    }
}

/// Natural-log probability. Holds a value in `[−∞, 0]` up to rounding.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct LogProb(pub f64);

impl LogProb {
    pub const ZERO_MASS: LogProb = LogProb(f64::NEG_INFINITY);
    pub const ONE: LogProb = LogProb(0.0);

    pub fn from_prob(p: f64) -> Self {
        if p <= 0.0 {
            Self::ZERO_MASS
        } else {
            LogProb(p.ln())
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn prob(self) -> f64 {
        self.0.exp()
    }
}

/// `log(e^a + e^b)` without leaving log space.
#[inline]
pub fn log_add(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        return hi;
    }
    let gap = lo - hi;
    // e^{-40} is below half an ulp of 1.
    if gap < -40.0 {
        hi
    } else {
        hi + gap.exp().ln_1p()
    }
}

/// Stable `log Σ exp(xᵢ)`; the empty sum is `−∞`.
pub fn log_sum_exp(xs: &[LogProb]) -> LogProb {
    let max = xs.iter().map(|x| x.0).fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return LogProb::ZERO_MASS;
    }
    let s: f64 = xs.iter().map(|x| (x.0 - max).exp()).sum();
    LogProb(max + s.ln())
}

/// Raw-slice variant used by the oracle.
pub fn log_sum_exp_f64(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let s: f64 = xs.iter().map(|x| (x - max).exp()).sum();
    max + s.ln()
}

/// Renders a number with 12 significant digits, `%g` style; infinities as
/// `inf` / `-inf`.
pub fn fmt_sig(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x == f64::INFINITY {
        return "inf".into();
    }
    if x == f64::NEG_INFINITY {
        return "-inf".into();
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{:.11e}", x);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    if !(-5..12).contains(&exp) {
        let m = trim_zeros(mantissa);
        return format!("{m}e{exp}");
    }
    let decimals = (11 - exp).max(0) as usize;
    let fixed = format!("{:.*}", decimals, x);
    trim_zeros(&fixed).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ext_mul_conventions() {
        assert_eq!(ext_mul(ExtReal::NegInf, ExtReal::ZERO), ExtReal::ZERO);
        assert_eq!(ext_mul(ExtReal::ZERO, ExtReal::PosInf), ExtReal::ZERO);
        assert_eq!(ext_mul(ExtReal::NegInf, ExtReal::Finite(0.5)), ExtReal::NegInf);
        assert_eq!(ext_mul(ExtReal::NegInf, ExtReal::Finite(-0.5)), ExtReal::PosInf);
        assert_eq!(ext_mul(ExtReal::Finite(3.0), ExtReal::Finite(4.0)), ExtReal::Finite(12.0));
        assert_eq!(ext_mul(ExtReal::NegInf, ExtReal::NegInf), ExtReal::PosInf);
        assert_eq!(ext_mul(ExtReal::NegInf, ExtReal::PosInf), ExtReal::NegInf);
    }

    #[test]
    fn ext_add_rejects_opposite_infinities() {
        assert_eq!(ExtReal::PosInf.add(ExtReal::NegInf), Err(Error::IndeterminateSum));
        assert_eq!(ExtReal::NegInf.add(ExtReal::Finite(1.0)), Ok(ExtReal::NegInf));
        assert_eq!(ExtReal::Finite(1.0).add(ExtReal::Finite(2.0)), Ok(ExtReal::Finite(3.0)));
    }

    #[test]
    fn log_of_zero_is_neg_inf() {
        assert_eq!(ExtReal::ln(0.0), ExtReal::NegInf);
        assert_eq!(LogProb::from_prob(0.0), LogProb::ZERO_MASS);
    }

    #[test]
    fn ordering() {
        assert!(ExtReal::NegInf < ExtReal::Finite(-1e300));
        assert!(ExtReal::Finite(1e300) < ExtReal::PosInf);
        assert!(ExtReal::Finite(-1.0) < ExtReal::Finite(0.0));
    }

    #[test]
    fn log_sum_exp_examples() {
        let half = LogProb(0.5f64.ln());
        assert!(log_sum_exp(&[half, half]).0.abs() < 1e-15);
        assert_eq!(log_sum_exp(&[LogProb::ZERO_MASS, LogProb::ZERO_MASS]), LogProb::ZERO_MASS);
        assert_eq!(log_sum_exp(&[]), LogProb::ZERO_MASS);
        // log(1 + e^{-1}) = 0.31326168751822283 (high-precision value).
        let v = log_sum_exp(&[LogProb(-1400.0), LogProb(-1401.0)]).0;
        assert!((v - (-1400.0 + 0.313_261_687_518_222_83)).abs() < 1e-9);
        assert!((v - (-1399.6867)).abs() < 1e-4);
    }

    #[test]
    fn log_add_matches_log_sum_exp() {
        for &(a, b) in &[(-1.0, -2.0), (-700.0, -701.5), (0.0, -50.0), (-3.0, f64::NEG_INFINITY)] {
            let direct = log_sum_exp_f64(&[a, b]);
            assert!((log_add(a, b) - direct).abs() < 1e-14);
        }
    }

    #[test]
    fn formatting() {
        assert_eq!(fmt_sig(0.5), "0.5");
        assert_eq!(fmt_sig(1.0 / 3.0), "0.333333333333");
        assert_eq!(fmt_sig(-1400.25), "-1400.25");
        assert_eq!(fmt_sig(f64::NEG_INFINITY), "-inf");
        assert_eq!(fmt_sig(1.5e-9), "1.5e-9");
        assert_eq!(fmt_sig(12.0), "12");
    }
}
