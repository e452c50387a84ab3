//! C ABI over `nhld`.
//!
//! Every function returns an [`NhldStatus`]; results go through out-pointers.
//! Handles are opaque and must be released with the matching `*_free`.
//! On failure, `nhld_last_error_message` describes the last error on the
//! calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use nhld::chain_model::Chain;
use nhld::chain_spec::parse_chain;
use nhld::composite_rate::{ChainAnalysis, CompositeRate, CostKind};
use nhld::decomposition::{decompose, BlockClass, CanonicalDecomposition};
use nhld::evolution_oracle::{event_log_prob, exact_distribution, EventSet, Interval, OracleOptions};
use nhld::fixtures::fixture_chain;
use nhld::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NhldStatus {
    Ok = 0,
    InvalidSpec = 1,
    NotConverged = 2,
    BudgetExceeded = 3,
    NullPointer = 4,
    InvalidArgument = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NhldBlockClass {
    DegenerateTransient = 0,
    NondegenerateTransient = 1,
    Stochastic = 2,
}

/// Routing-cost choice for [`nhld_ldp_new`].
pub const NHLD_COST_U0: i32 = 0;
pub const NHLD_COST_T0: i32 = 1;

pub struct NhldChain(Chain);

pub struct NhldDecomposition(CanonicalDecomposition);

pub struct NhldLdp(CompositeRate);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> NhldStatus {
    match e {
        Error::NotConverged { .. } => NhldStatus::NotConverged,
        Error::Overflow { .. } => NhldStatus::BudgetExceeded,
        Error::OutOfRange { .. } | Error::UnsupportedDimension(_) => NhldStatus::InvalidArgument,
        _ => NhldStatus::InvalidSpec,
    }
}

enum Fail {
    Lib(Error),
    Null(&'static str),
    Arg(String),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> NhldStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => NhldStatus::Ok,
        Ok(Err(Fail::Lib(e))) => {
            set_error(&format!("error[{}]: {e}", e.tag()));
            status_of(&e)
        }
        Ok(Err(Fail::Null(what))) => {
            set_error(&format!("error[null]: {what} is null"));
            NhldStatus::NullPointer
        }
        Ok(Err(Fail::Arg(msg))) => {
            set_error(&format!("error[argument]: {msg}"));
            NhldStatus::InvalidArgument
        }
        Err(_) => {
            set_error("error[panic]: internal panic");
            NhldStatus::Panic
        }
    }
}

unsafe fn get<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn put<T>(out: *mut T, v: T, what: &'static str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail::Null(what));
    }
    out.write(v);
    Ok(())
}

unsafe fn text<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail::Arg(format!("{what} is not UTF-8")))
}

unsafe fn point<'a>(z: *const f64, d: usize) -> Result<&'a [f64], Fail> {
    if z.is_null() {
        return Err(Fail::Null("point"));
    }
    Ok(std::slice::from_raw_parts(z, d))
}

/// Message of the last failed call on this thread; valid until the next call.
#[no_mangle]
pub extern "C" fn nhld_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Parses a chain document.
///
/// # Safety
/// `spec` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn nhld_chain_from_str(spec: *const c_char, out: *mut *mut NhldChain) -> NhldStatus {
    guard(|| {
        let chain = parse_chain(text(spec, "spec")?)?;
        put(out, Box::into_raw(Box::new(NhldChain(chain))), "out")
    })
}

/// Loads a compiled-in chain (`s3-metropolis`, `s12-1`, `s12-2`, `s12-3`).
///
/// # Safety
/// `name` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn nhld_chain_from_fixture(name: *const c_char, out: *mut *mut NhldChain) -> NhldStatus {
    guard(|| {
        let chain = fixture_chain(text(name, "name")?)?;
        put(out, Box::into_raw(Box::new(NhldChain(chain))), "out")
    })
}

/// # Safety
/// `chain` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn nhld_chain_free(chain: *mut NhldChain) {
    if !chain.is_null() {
        drop(Box::from_raw(chain));
    }
}

/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn nhld_chain_num_states(chain: *const NhldChain, out: *mut usize) -> NhldStatus {
    guard(|| put(out, get(chain, "chain")?.0.num_states(), "out"))
}

/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn nhld_chain_dim(chain: *const NhldChain, out: *mut usize) -> NhldStatus {
    guard(|| put(out, get(chain, "chain")?.0.f.dim(), "out"))
}

/// Canonical decomposition of the limit kernel.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn nhld_decompose(chain: *const NhldChain, out: *mut *mut NhldDecomposition) -> NhldStatus {
    guard(|| {
        let dec = decompose(get(chain, "chain")?.0.schedule.limit())?;
        put(out, Box::into_raw(Box::new(NhldDecomposition(dec))), "out")
    })
}

/// # Safety
/// `dec` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn nhld_decomposition_free(dec: *mut NhldDecomposition) {
    if !dec.is_null() {
        drop(Box::from_raw(dec));
    }
}

/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn nhld_decomposition_num_blocks(dec: *const NhldDecomposition, out: *mut usize) -> NhldStatus {
    guard(|| put(out, get(dec, "decomposition")?.0.num_blocks(), "out"))
}

/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn nhld_decomposition_block_class(
    dec: *const NhldDecomposition,
    block: usize,
    out: *mut NhldBlockClass,
) -> NhldStatus {
    guard(|| {
        let d = &get(dec, "decomposition")?.0;
        let b = d.blocks.get(block).ok_or_else(|| Fail::Arg(format!("block {block} out of range")))?;
        let class = match b.class {
            BlockClass::DegenerateTransient => NhldBlockClass::DegenerateTransient,
            BlockClass::NondegenerateTransient => NhldBlockClass::NondegenerateTransient,
            BlockClass::Stochastic => NhldBlockClass::Stochastic,
        };
        put(out, class, "out")
    })
}

/// Copies the 0-based states of `block` into `buf` (capacity `cap`) and
/// stores the block size in `len`. With too small a buffer only `len` is
/// written and the call fails with `InvalidArgument`.
///
/// # Safety
/// `buf` must hold `cap` elements; other pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn nhld_decomposition_block_states(
    dec: *const NhldDecomposition,
    block: usize,
    buf: *mut usize,
    cap: usize,
    len: *mut usize,
) -> NhldStatus {
    guard(|| {
        let d = &get(dec, "decomposition")?.0;
        let b = d.blocks.get(block).ok_or_else(|| Fail::Arg(format!("block {block} out of range")))?;
        put(len, b.states.len(), "len")?;
        if cap < b.states.len() {
            return Err(Fail::Arg(format!("buffer holds {cap}, block has {}", b.states.len())));
        }
        if buf.is_null() {
            return Err(Fail::Null("buf"));
        }
        ptr::copy_nonoverlapping(b.states.as_ptr(), buf, b.states.len());
        Ok(())
    })
}

/// Composite rate with routing costs `U₀` (`NHLD_COST_U0`) or `T₀`.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn nhld_ldp_new(
    chain: *const NhldChain,
    cost: i32,
    window: u64,
    out: *mut *mut NhldLdp,
) -> NhldStatus {
    guard(|| {
        let c = &get(chain, "chain")?.0;
        let kind = match cost {
            NHLD_COST_U0 => CostKind::U0,
            NHLD_COST_T0 => CostKind::T0,
            other => return Err(Fail::Arg(format!("unknown cost kind {other}"))),
        };
        if window < 2 {
            return Err(Fail::Arg("window must be at least 2".into()));
        }
        let analysis = ChainAnalysis::new(c, window)?;
        let cr = CompositeRate::new(c, &analysis, kind)?;
        put(out, Box::into_raw(Box::new(NhldLdp(cr))), "out")
    })
}

/// # Safety
/// `ldp` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn nhld_ldp_free(ldp: *mut NhldLdp) {
    if !ldp.is_null() {
        drop(Box::from_raw(ldp));
    }
}

/// Number of blocks in `G`.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn nhld_ldp_num_blocks(ldp: *const NhldLdp, out: *mut usize) -> NhldStatus {
    guard(|| put(out, get(ldp, "ldp")?.0.num_blocks(), "out"))
}

/// `J(z)` for `z` of length `d`; `+inf` off the domain.
///
/// # Safety
/// `z` must hold `d` values; other pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn nhld_ldp_eval(ldp: *const NhldLdp, z: *const f64, d: usize, out: *mut f64) -> NhldStatus {
    guard(|| {
        let cr = &get(ldp, "ldp")?.0;
        if d != cr.dim() {
            return Err(Fail::Arg(format!("point has {d} coordinates, expected {}", cr.dim())));
        }
        let v = cr.j_eval(point(z, d)?)?;
        put(out, v.value.to_f64(), "out")
    })
}

/// Rate `I(x)` of the `block`-th member of `G`.
///
/// # Safety
/// `x` must hold `d` values; other pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn nhld_ldp_block_rate(
    ldp: *const NhldLdp,
    block: usize,
    x: *const f64,
    d: usize,
    out: *mut f64,
) -> NhldStatus {
    guard(|| {
        let cr = &get(ldp, "ldp")?.0;
        let br = cr.block_rates().get(block).ok_or_else(|| Fail::Arg(format!("block {block} out of range")))?;
        if d != cr.dim() {
            return Err(Fail::Arg(format!("point has {d} coordinates, expected {}", cr.dim())));
        }
        put(out, br.rate_eval(point(x, d)?)?.to_f64(), "out")
    })
}

/// Exact `log P(Zₙ ∈ I)` for an interval with endpoints `lo ≤ hi`.
/// `budget` caps the sweep size in cells; 0 means the default.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn nhld_oracle_log_prob(
    chain: *const NhldChain,
    n: u64,
    lo: f64,
    hi: f64,
    lo_closed: bool,
    hi_closed: bool,
    budget: u64,
    out: *mut f64,
) -> NhldStatus {
    guard(|| {
        let c = &get(chain, "chain")?.0;
        if !(lo <= hi) {
            return Err(Fail::Arg("interval needs lo <= hi".into()));
        }
        let mut opts = OracleOptions::default();
        if budget > 0 {
            opts.cell_budget = budget;
        }
        let ed = exact_distribution(c, n, &opts)?;
        let set = EventSet::interval(Interval { lo, hi, lo_closed, hi_closed });
        put(out, event_log_prob(&ed, &set).value(), "out")
    })
}
