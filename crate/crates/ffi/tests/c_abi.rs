use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::ptr;

use nhld_ffi::*;

const TWO_STATE: &str = r#"
states = ["a", "b"]
f = [[1.0, 0.0]]
pi = [0.5, 0.5]

[schedule]
family = "constant"
limit = [[0.5, 0.5], [0.5, 0.5]]
"#;

fn last_error() -> String {
    unsafe { CStr::from_ptr(nhld_last_error_message()) }.to_string_lossy().into_owned()
}

fn fixture(name: &str) -> *mut NhldChain {
    let name = CString::new(name).unwrap();
    let mut chain = ptr::null_mut();
    assert_eq!(unsafe { nhld_chain_from_fixture(name.as_ptr(), &mut chain) }, NhldStatus::Ok);
    chain
}

#[test]
fn parse_and_query_chain() {
    let spec = CString::new(TWO_STATE).unwrap();
    let mut chain = ptr::null_mut();
    unsafe {
        assert_eq!(nhld_chain_from_str(spec.as_ptr(), &mut chain), NhldStatus::Ok);
        let (mut r, mut d) = (0usize, 0usize);
        assert_eq!(nhld_chain_num_states(chain, &mut r), NhldStatus::Ok);
        assert_eq!(nhld_chain_dim(chain, &mut d), NhldStatus::Ok);
        assert_eq!((r, d), (2, 1));

        // fair coin: I(0.3) = 0.3 log 0.6 + 0.7 log 1.4
        let mut ldp = ptr::null_mut();
        assert_eq!(nhld_ldp_new(chain, NHLD_COST_U0, 100, &mut ldp), NhldStatus::Ok);
        let (x, mut v) = (0.3f64, 0.0f64);
        assert_eq!(nhld_ldp_block_rate(ldp, 0, &x, 1, &mut v), NhldStatus::Ok);
        let want = 0.3 * 0.6f64.ln() + 0.7 * 1.4f64.ln();
        assert!((v - want).abs() < 1e-8, "{v} vs {want}");
        assert_eq!(nhld_ldp_eval(ldp, &x, 1, &mut v), NhldStatus::Ok);
        assert!((v - want).abs() < 1e-8);
        let out_of_range = 1.5f64;
        assert_eq!(nhld_ldp_eval(ldp, &out_of_range, 1, &mut v), NhldStatus::Ok);
        assert_eq!(v, f64::INFINITY);
        nhld_ldp_free(ldp);

        // P(Z_4 = 1/2) = 6/16 with X_1..X_4 i.i.d. fair
        let mut lp = 0.0;
        assert_eq!(nhld_oracle_log_prob(chain, 4, 0.5, 0.5, true, true, 0, &mut lp), NhldStatus::Ok);
        assert!((lp - (6.0f64 / 16.0).ln()).abs() < 1e-12);
        nhld_chain_free(chain);
    }
}

#[test]
fn decomposition_of_periodic_fixture() {
    let chain = fixture("s12-3");
    unsafe {
        let mut dec = ptr::null_mut();
        assert_eq!(nhld_decompose(chain, &mut dec), NhldStatus::Ok);
        let mut k = 0usize;
        assert_eq!(nhld_decomposition_num_blocks(dec, &mut k), NhldStatus::Ok);
        let mut stochastic = 0;
        for b in 0..k {
            let mut class = NhldBlockClass::DegenerateTransient;
            assert_eq!(nhld_decomposition_block_class(dec, b, &mut class), NhldStatus::Ok);
            if class == NhldBlockClass::Stochastic {
                stochastic += 1;
                let mut buf = [0usize; 9];
                let mut len = 0usize;
                assert_eq!(nhld_decomposition_block_states(dec, b, buf.as_mut_ptr(), 9, &mut len), NhldStatus::Ok);
                assert_eq!(len, 3);
                let mut tiny = [0usize; 1];
                assert_eq!(
                    nhld_decomposition_block_states(dec, b, tiny.as_mut_ptr(), 1, &mut len),
                    NhldStatus::InvalidArgument
                );
                assert_eq!(len, 3);
            }
        }
        assert_eq!(stochastic, 3);
        let mut class = NhldBlockClass::Stochastic;
        assert_eq!(nhld_decomposition_block_class(dec, k, &mut class), NhldStatus::InvalidArgument);
        nhld_decomposition_free(dec);
        nhld_chain_free(chain);
    }
}

#[test]
fn error_codes() {
    unsafe {
        let mut chain = ptr::null_mut();
        let bad = CString::new("states = [").unwrap();
        assert_eq!(nhld_chain_from_str(bad.as_ptr(), &mut chain), NhldStatus::InvalidSpec);
        assert!(last_error().starts_with("error[spec]"), "{}", last_error());
        assert!(chain.is_null());

        assert_eq!(nhld_chain_from_str(ptr::null(), &mut chain), NhldStatus::NullPointer);
        let mut r = 0usize;
        assert_eq!(nhld_chain_num_states(ptr::null(), &mut r), NhldStatus::NullPointer);

        let c = fixture("s12-1");
        assert_eq!(nhld_chain_num_states(c, ptr::null_mut()), NhldStatus::NullPointer);
        let mut ldp = ptr::null_mut();
        assert_eq!(nhld_ldp_new(c, 7, 100, &mut ldp), NhldStatus::InvalidArgument);
        let mut lp = 0.0;
        assert_eq!(nhld_oracle_log_prob(c, 500, 0.0, 1.0, true, true, 10, &mut lp), NhldStatus::BudgetExceeded);
        assert!(last_error().starts_with("error[budget]"));
        assert_eq!(nhld_oracle_log_prob(c, 5, 1.0, 0.0, true, true, 0, &mut lp), NhldStatus::InvalidArgument);

        assert_eq!(nhld_ldp_new(c, NHLD_COST_T0, 1000, &mut ldp), NhldStatus::Ok);
        let z = [0.5, 0.5];
        let mut v = 0.0;
        assert_eq!(nhld_ldp_eval(ldp, z.as_ptr(), 2, &mut v), NhldStatus::InvalidArgument);
        assert_eq!(nhld_ldp_eval(ldp, z.as_ptr(), 1, &mut v), NhldStatus::Ok);
        assert!((v - 0.5 * 3f64.ln()).abs() < 1e-6);
        nhld_ldp_free(ldp);
        nhld_chain_free(c);

        let unknown = CString::new("nope").unwrap();
        assert_eq!(nhld_chain_from_fixture(unknown.as_ptr(), &mut chain), NhldStatus::InvalidSpec);
        nhld_chain_free(ptr::null_mut());
    }
}

#[test]
fn header_declares_api_and_compiles() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let header = dir.join("include").join("nhld.h");
    let text = std::fs::read_to_string(&header).expect("generated header");
    for sym in [
        "nhld_chain_from_str",
        "nhld_chain_from_fixture",
        "nhld_decompose",
        "nhld_ldp_new",
        "nhld_ldp_eval",
        "nhld_oracle_log_prob",
        "nhld_last_error_message",
        "NHLD_STATUS_BUDGET_EXCEEDED = 3",
        "typedef struct NhldChain NhldChain",
    ] {
        assert!(text.contains(sym), "header lacks {sym}");
    }
    let Ok(cc) = std::env::var("CC").or_else(|_| which("cc")) else {
        eprintln!("no C compiler found; syntax check skipped");
        return;
    };
    let src = std::env::temp_dir().join(format!("nhld_header_{}.c", std::process::id()));
    std::fs::write(
        &src,
        "#include \"nhld.h\"\nint main(void) { NhldChain *c = 0; size_t r = 0;\n\
         NhldStatus s = nhld_chain_num_states(c, &r); return s == NHLD_STATUS_NULL_POINTER ? 0 : 1; }\n",
    )
    .unwrap();
    let status = std::process::Command::new(cc)
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(dir.join("include"))
        .arg(&src)
        .status()
        .expect("run C compiler");
    let _ = std::fs::remove_file(&src);
    assert!(status.success());
}

fn which(name: &str) -> Result<String, ()> {
    let path = std::env::var("PATH").map_err(|_| ())?;
    std::env::split_paths(&path)
        .map(|p| p.join(name))
        .find(|p| p.is_file())
        .map(|p| p.to_string_lossy().into_owned())
        .ok_or(())
}
