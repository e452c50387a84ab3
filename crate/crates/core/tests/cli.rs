use std::path::PathBuf;
use std::process::{Command, Output};

fn nhld(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nhld")).args(args).output().expect("run nhld")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn temp_file(name: &str, text: &str) -> PathBuf {
    let p = std::env::temp_dir().join(format!("nhld_{}_{name}", std::process::id()));
    std::fs::write(&p, text).unwrap();
    p
}

const BIASED: &str = r#"
states = ["a", "b"]
f = [[1.0, 0.0]]
pi = [1.0, 0.0]

[schedule]
family = "constant"
limit = [
  [0.25, 0.75],
  [0.25, 0.75],
]
"#;

#[test]
fn nine_state_fixture_table_passes() {
    let o = nhld(&["fixture", "s3-metropolis"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    for z in ["J(-1)", "J(-2/11)", "J(0)", "J(2)", "J(12/5)", "J(3)"] {
        let line = out.lines().find(|l| l.starts_with(z)).unwrap_or_else(|| panic!("{z} missing:\n{out}"));
        assert!(line.ends_with("PASS"), "{line}");
    }
    assert!(!out.contains("FAIL"));
}

#[test]
fn fixture_csv_has_header() {
    let o = nhld(&["--format", "csv", "fixture", "s12-1"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert_eq!(out.lines().next(), Some("check,expected,computed,status"));
    assert_eq!(out.lines().filter(|l| l.ends_with(",PASS")).count(), out.lines().count() - 1);
}

#[test]
fn decompose_periodic_chain() {
    let o = nhld(&["decompose", "--fixture", "s12-3"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert_eq!(out.lines().filter(|l| l.contains("class=stochastic")).count(), 3, "{out}");
    let csv = stdout(&nhld(&["decompose", "--fixture", "s12-3", "--format", "csv"]));
    assert_eq!(csv.lines().next(), Some("block,label,class,period,primitive"));
}

#[test]
fn ldp_two_state_line() {
    let o = nhld(&["ldp", "--fixture", "s12-1", "--cost", "U0", "--grid", "0:1:100"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    let rows: Vec<&str> = out.lines().skip(1).collect();
    assert_eq!(rows.len(), 101);
    for row in rows {
        let cells: Vec<&str> = row.split(',').collect();
        let (z, j): (f64, f64) = (cells[0].parse().unwrap(), cells[1].parse().unwrap());
        if z < 1.0 {
            assert!((j - z * 2f64.ln()).abs() < 1e-6, "{row}");
        }
    }
    // outside [0, 1] the rate is infinite
    let o = nhld(&["ldp", "--fixture", "s12-1", "--grid", "1.5:2:1"]);
    assert!(stdout(&o).lines().skip(1).all(|l| l.split(',').nth(1) == Some("inf")));
}

#[test]
fn chain_file_round_trip() {
    let path = temp_file("biased.toml", BIASED);
    let p = path.to_str().unwrap();
    let o = nhld(&["rate", "--chain", p, "--grid", "0:1:4"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    assert_eq!(out.lines().next(), Some("x,\"I{a,b}\""));
    // i.i.d. with P(a) = 1/4: I(x) = x log 4x + (1-x) log (4(1-x)/3)
    let row = out.lines().nth(2).unwrap();
    let i: f64 = row.split(',').nth(1).unwrap().parse().unwrap();
    let want = 0.25 * 1f64.ln() + 0.75 * 1f64.ln();
    assert!((i - want).abs() < 1e-9, "{row}");
    let o = nhld(&["oracle", "--chain", p, "--n", "2", "--set", "1,1"]);
    let line = stdout(&o).lines().nth(1).unwrap().to_string();
    let lp: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
    assert!((lp - (0.25f64 * 0.25).ln()).abs() < 1e-12, "{line}");
    std::fs::remove_file(path).unwrap();
}

#[test]
fn routing_report() {
    let o = nhld(&["routing", "--fixture", "s12-1"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert!(out.contains("assumption_a: false"));
    assert!(out.contains("-0.69314718056"), "{out}");
    assert!(out.contains("-1.09861228867"));
    let csv = stdout(&nhld(&["routing", "--fixture", "s12-1", "--format", "csv"]));
    assert!(csv.lines().any(|l| l == "v,\"{1}\",\"{0}\",-inf"), "{csv}");
}

#[test]
fn simulate_report_and_seed() {
    let args = ["simulate", "--fixture", "s12-1", "--n", "40", "--replicas", "50", "--seed", "3"];
    let a = nhld(&args);
    assert_eq!(a.status.code(), Some(0));
    let out = stdout(&a);
    assert!(out.starts_with("# replicas: 50\n# n: 40\n# seed: 3\n"));
    let header = out.lines().find(|l| !l.starts_with('#')).unwrap();
    assert_eq!(header, "replica,z,terminal_state,terminal_block");
    assert_eq!(out.lines().filter(|l| !l.starts_with('#')).count(), 51);
    assert_eq!(a.stdout, nhld(&args).stdout);
    let other = nhld(&["simulate", "--fixture", "s12-1", "--n", "40", "--replicas", "50", "--seed", "4"]);
    assert_ne!(a.stdout, other.stdout);
}

#[test]
fn exit_codes_and_prefixes() {
    let bad = temp_file("bad.toml", &BIASED.replace("[0.25, 0.75],\n  [0.25", "[0.25, 0.70],\n  [0.25"));
    let o = nhld(&["decompose", "--chain", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.starts_with("error[spec]:") && err.contains("line"), "{err}");
    std::fs::remove_file(bad).unwrap();

    let o = nhld(&["oracle", "--fixture", "s12-1", "--n", "300", "--set", "0,1", "--budget", "100"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).starts_with("error[budget]:"));

    let o = nhld(&["ldp", "--fixture", "s12-1", "--grid", "0:1:10", "--unknown"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error[usage]:"));

    let o = nhld(&["fixture", "s99"]);
    assert_eq!(o.status.code(), Some(1));

    let o = nhld(&["decompose", "--chain", "/nonexistent/chain.toml"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error[io]:"), "{}", stderr(&o));
}

#[test]
fn t0_curve_warns_on_periodic_chain() {
    let o = nhld(&["ldp", "--fixture", "s12-3", "--window", "300", "--cost", "T0", "--grid", "2:2.2:2"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stderr(&o).contains("not guaranteed"));
    let o = nhld(&["ldp", "--fixture", "s12-3", "--window", "300", "--cost", "U0", "--grid", "2:2.2:2"]);
    assert!(stderr(&o).is_empty());
}
