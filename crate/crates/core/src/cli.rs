//! Command-line front end.

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use crate::chain_model::Chain;
use crate::chain_spec::load_chain;
use crate::composite_rate::{block_label, ChainAnalysis, CompositeRate, CostKind, JValue};
use crate::decomposition::{is_primitive, period, BlockClass, DEFAULT_WINDOW};
use crate::error::{Error, Result};
use crate::evolution_oracle::{rate_trace, simulate, EventSet, Interval, OracleOptions, DEFAULT_CELL_BUDGET};
use crate::fixtures::{self, PeriodicParams};
use crate::numerics::{fmt_sig, ExtReal};
use crate::routing_costs::{CostMatrix, Provenance};

#[derive(Debug, Parser)]
#[command(name = "nhld", version, about = "Large-deviation rates for nonhomogeneous finite Markov chains")]
struct Cli {
    /// Output format.
    #[arg(long, value_enum, global = true, default_value_t = Format::Text)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CostArg {
    #[value(name = "U0")]
    U0,
    #[value(name = "T0")]
    T0,
}

#[derive(Debug, Args)]
struct ChainArgs {
    /// Chain file.
    #[arg(long, required_unless_present = "fixture", conflicts_with = "fixture")]
    chain: Option<PathBuf>,
    /// Compiled-in chain.
    #[arg(long)]
    fixture: Option<String>,
    /// Steps sampled when estimating exponents and checking SIE-1.
    #[arg(long, default_value_t = DEFAULT_WINDOW, value_parser = clap::value_parser!(u64).range(2..))]
    window: u64,
}

impl ChainArgs {
    fn load(&self) -> Result<Chain> {
        match (&self.chain, &self.fixture) {
            (Some(path), _) => load_chain(path),
            (None, Some(name)) => fixtures::fixture_chain(name),
            (None, None) => Err(Error::spec("either --chain or --fixture is required")),
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Canonical decomposition of the limit kernel.
    Decompose {
        #[command(flatten)]
        chain: ChainArgs,
    },
    /// Per-block rate functions on a grid.
    Rate {
        #[command(flatten)]
        chain: ChainArgs,
        /// `a:b:steps`, once per coordinate.
        #[arg(long, required = true, allow_hyphen_values = true)]
        grid: Vec<String>,
    },
    /// Connection exponents, routing costs, assumptions and regime.
    Routing {
        #[command(flatten)]
        chain: ChainArgs,
    },
    /// Composite rate curve.
    Ldp {
        #[command(flatten)]
        chain: ChainArgs,
        #[arg(long, value_enum, default_value_t = CostArg::U0)]
        cost: CostArg,
        /// `a:b:steps`, once per coordinate.
        #[arg(long, required = true, allow_hyphen_values = true)]
        grid: Vec<String>,
        /// Permit more than 7 blocks in the permutation search.
        #[arg(long)]
        allow_large: bool,
    },
    /// Exact log-probabilities of an event.
    Oracle {
        #[command(flatten)]
        chain: ChainArgs,
        #[arg(long, conflicts_with = "seq", required_unless_present = "seq")]
        n: Option<u64>,
        /// Comma-separated horizons.
        #[arg(long)]
        seq: Option<String>,
        /// Event such as `0.3,0.6,oc` or `(0.3,0.6]`; `;` joins intervals.
        #[arg(long)]
        set: String,
        /// Cell budget of the sweep.
        #[arg(long, default_value_t = DEFAULT_CELL_BUDGET)]
        budget: u64,
    },
    /// Seeded Monte Carlo samples of Zₙ.
    Simulate {
        #[command(flatten)]
        chain: ChainArgs,
        #[arg(long)]
        n: u64,
        #[arg(long, default_value_t = 1000)]
        replicas: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run a compiled-in example end to end.
    Fixture {
        #[arg(value_parser = clap::builder::PossibleValuesParser::new(fixtures::FIXTURE_NAMES))]
        name: String,
    },
}

/// Runs the CLI on `argv` (including the program name) and returns the exit
/// code: 0 success, 1 spec or validation error, 2 non-convergence, 3 budget.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{}", e.render());
                    0
                }
                _ => {
                    let msg = e.kind().as_str().unwrap_or("invalid arguments");
                    let detail = e.to_string();
                    let first = detail.lines().next().unwrap_or(msg).trim_start_matches("error: ");
                    let _ = writeln!(err, "error[usage]: {first}");
                    1
                }
            };
        }
    };
    configure_threads();
    let mut buf = Vec::new();
    let res = dispatch(&cli, &mut buf, err);
    let _ = out.write_all(&buf);
    match res {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error[{}]: {}", e.tag(), e);
            e.exit_code()
        }
    }
}

fn configure_threads() {
    if let Some(n) = std::env::var("NHLD_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        // a second call fails once the pool exists; the first setting stays
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

fn dispatch(cli: &Cli, out: &mut Vec<u8>, err: &mut dyn Write) -> Result<()> {
    let fmt = cli.format;
    match &cli.command {
        Command::Decompose { chain } => cmd_decompose(&chain.load()?, fmt, out),
        Command::Rate { chain, grid } => {
            let grids = parse_grids(grid)?;
            let c = chain.load()?;
            cmd_rate(&c, &ChainAnalysis::new(&c, chain.window)?, &grids, out)
        }
        Command::Routing { chain } => {
            let c = chain.load()?;
            cmd_routing(&c, &ChainAnalysis::new(&c, chain.window)?, fmt, out)
        }
        Command::Ldp { chain, cost, grid, allow_large } => {
            let grids = parse_grids(grid)?;
            let c = chain.load()?;
            let kind = match cost {
                CostArg::U0 => CostKind::U0,
                CostArg::T0 => CostKind::T0,
            };
            cmd_ldp(&c, chain.window, kind, &grids, *allow_large, out, err)
        }
        Command::Oracle { chain, n, seq, set, budget } => {
            let set = EventSet::parse(set)?;
            let ns = match (n, seq) {
                (Some(n), _) => vec![*n],
                (None, Some(s)) => parse_seq(s)?,
                (None, None) => return Err(Error::spec("either --n or --seq is required")),
            };
            cmd_oracle(&chain.load()?, &set, &ns, *budget, out)
        }
        Command::Simulate { chain, n, replicas, seed } => cmd_simulate(&chain.load()?, *n, *replicas, *seed, out),
        Command::Fixture { name } => cmd_fixture(name, fmt, out),
    }
}

fn w(out: &mut Vec<u8>, line: impl AsRef<str>) {
    out.extend_from_slice(line.as_ref().as_bytes());
    out.push(b'\n');
}

fn ext(x: ExtReal) -> String {
    fmt_sig(x.to_f64())
}

/// Parses `a:b:steps` into `steps + 1` equally spaced points.
pub fn parse_grid(text: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = text.split(':').collect();
    let bad = || Error::spec(format!("grid '{text}' must look like a:b:steps"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let a: f64 = parts[0].trim().parse().map_err(|_| bad())?;
    let b: f64 = parts[1].trim().parse().map_err(|_| bad())?;
    let steps: usize = parts[2].trim().parse().map_err(|_| bad())?;
    if !a.is_finite() || !b.is_finite() || b < a || steps == 0 {
        return Err(bad());
    }
    Ok((0..=steps).map(|k| if k == steps { b } else { a + (b - a) * k as f64 / steps as f64 }).collect())
}

fn parse_grids(specs: &[String]) -> Result<Vec<Vec<f64>>> {
    specs.iter().map(|s| parse_grid(s)).collect()
}

fn parse_seq(text: &str) -> Result<Vec<u64>> {
    let ns: Vec<u64> = text
        .split(',')
        .map(|s| s.trim().parse::<u64>().map_err(|_| Error::spec(format!("bad horizon '{s}' in --seq"))))
        .collect::<Result<_>>()?;
    if ns.is_empty() {
        return Err(Error::spec("--seq is empty"));
    }
    Ok(ns)
}

/// Row-major product of per-coordinate grids.
fn product(grids: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut pts = vec![Vec::new()];
    for g in grids {
        pts = pts.into_iter().flat_map(|p| g.iter().map(move |&x| [p.clone(), vec![x]].concat())).collect();
    }
    pts
}

fn coord_header(prefix: &str, d: usize) -> Vec<String> {
    if d == 1 {
        vec![prefix.to_string()]
    } else {
        (1..=d).map(|k| format!("{prefix}{k}")).collect()
    }
}

fn check_dim(grids: &[Vec<f64>], d: usize) -> Result<()> {
    if grids.len() != d {
        return Err(Error::spec(format!("{} --grid values given for an observable of dimension {d}", grids.len())));
    }
    Ok(())
}

fn cmd_decompose(chain: &Chain, fmt: Format, out: &mut Vec<u8>) -> Result<()> {
    let limit = chain.schedule.limit();
    let dec = crate::decomposition::decompose(limit)?;
    let label = |i: usize| block_label(chain, &dec.blocks[i].states);
    let shape = |i: usize| -> (String, String) {
        let b = &dec.blocks[i];
        if b.class == BlockClass::DegenerateTransient {
            return ("-".into(), "-".into());
        }
        let p = period(limit, &b.states).map(|p| p.to_string()).unwrap_or_else(|_| "-".into());
        (p, is_primitive(limit, &b.states).to_string())
    };
    match fmt {
        Format::Csv => {
            w(out, "block,label,class,period,primitive");
            for i in 0..dec.num_blocks() {
                let (p, prim) = shape(i);
                w(out, format!("{i},\"{}\",{},{p},{prim}", label(i), dec.blocks[i].class.name()));
            }
        }
        Format::Text => {
            w(out, format!("states: {}", chain.num_states()));
            w(out, format!("blocks: {}", dec.num_blocks()));
            for i in 0..dec.num_blocks() {
                let (p, prim) = shape(i);
                w(out, format!("  block {i} {} class={} period={p} primitive={prim}", label(i), dec.blocks[i].class.name()));
            }
            let set = |ids: &[usize]| ids.iter().map(|&i| label(i)).collect::<Vec<_>>().join(" ");
            w(out, format!("D: {}", set(&dec.d_set)));
            w(out, format!("N: {}", set(&dec.n_set)));
            w(out, format!("M: {}", set(&dec.m_set)));
            w(out, format!("G: {}", set(&dec.g_set)));
            w(out, format!("stochastic classes: {}", dec.m_count()));
            w(out, format!("p_min: {}", fmt_sig(dec.p_min)));
        }
    }
    Ok(())
}

fn cmd_rate(chain: &Chain, a: &ChainAnalysis, grids: &[Vec<f64>], out: &mut Vec<u8>) -> Result<()> {
    let d = chain.f.dim();
    check_dim(grids, d)?;
    let labels: Vec<String> = a.dec.g_set.iter().map(|&i| block_label(chain, &a.dec.blocks[i].states)).collect();
    let mut header = coord_header("x", d);
    header.extend(labels.iter().map(|l| format!("\"I{l}\"")));
    w(out, header.join(","));
    let pts = product(grids);
    let rows: Vec<Result<String>> = pts
        .par_iter()
        .map(|x| {
            let mut cells: Vec<String> = x.iter().map(|&v| fmt_sig(v)).collect();
            for br in &a.block_rates {
                cells.push(ext(br.rate_eval(x)?));
            }
            Ok(cells.join(","))
        })
        .collect();
    for r in rows {
        w(out, r?);
    }
    Ok(())
}

fn write_matrix(out: &mut Vec<u8>, name: &str, m: &CostMatrix, labels: &[String]) {
    w(out, format!("{name}:"));
    let width = labels.iter().map(|l| l.len()).max().unwrap_or(1).max(8);
    let mut head = format!("  {:>width$}", "");
    for l in labels {
        head.push_str(&format!(" {l:>width$}"));
    }
    w(out, head);
    for (i, row) in m.rows().iter().enumerate() {
        let mut line = format!("  {:>width$}", labels[i]);
        for &x in row {
            line.push_str(&format!(" {:>width$}", ext(x)));
        }
        w(out, line);
    }
}

fn cmd_routing(chain: &Chain, a: &ChainAnalysis, fmt: Format, out: &mut Vec<u8>) -> Result<()> {
    let labels: Vec<String> = a.dec.blocks.iter().map(|b| block_label(chain, &b.states)).collect();
    let mats = [("v", &a.rates.v), ("tau", &a.rates.tau), ("U0", &a.u0), ("T0", &a.t0)];
    let rep = &a.assumptions;
    let provenance = match a.rates.provenance {
        Provenance::Analytic => "analytic",
        Provenance::Estimated => "estimated",
    };
    let flags = [
        ("provenance", provenance.to_string()),
        ("assumption_a", rep.assumption_a.to_string()),
        ("lim", rep.lim.to_string()),
        ("prm_limit", rep.prm_limit.to_string()),
        ("assumption_c", rep.assumption_c.to_string()),
        ("lower_cost_valid", rep.lower_cost_valid.to_string()),
        ("sie1", a.sie1.holds.to_string()),
        ("regime", a.regime.name().to_string()),
    ];
    match fmt {
        Format::Csv => {
            w(out, "matrix,from,to,value");
            for (name, m) in mats {
                for (i, row) in m.rows().iter().enumerate() {
                    for (j, &x) in row.iter().enumerate() {
                        w(out, format!("{name},\"{}\",\"{}\",{}", labels[i], labels[j], ext(x)));
                    }
                }
            }
            for (k, v) in flags {
                w(out, format!("{k},,,{v}"));
            }
        }
        Format::Text => {
            w(out, format!("blocks: {}", labels.join(" ")));
            for (name, m) in mats {
                write_matrix(out, name, m, &labels);
            }
            for (k, v) in flags {
                w(out, format!("{k}: {v}"));
            }
            if !rep.lower_cost_valid {
                w(out, "note: T0-based lower curve not guaranteed (neither LIM nor assumption C holds)");
            }
        }
    }
    Ok(())
}

fn cmd_ldp(
    chain: &Chain,
    window: u64,
    kind: CostKind,
    grids: &[Vec<f64>],
    allow_large: bool,
    out: &mut Vec<u8>,
    err: &mut dyn Write,
) -> Result<()> {
    let d = chain.f.dim();
    check_dim(grids, d)?;
    let a = ChainAnalysis::new(chain, window)?;
    let mut cr = CompositeRate::new(chain, &a, kind)?;
    cr.allow_large = allow_large;
    if kind == CostKind::T0 && !a.assumptions.lower_cost_valid {
        let _ = writeln!(
            err,
            "warning[assumption]: T0-based lower curve not guaranteed; neither LIM nor assumption C holds \
             (compare the periodic three-class counterexample)"
        );
    }
    let pts = product(grids);
    let vals: Vec<JValue> = if d == 1 {
        let zs: Vec<f64> = pts.iter().map(|p| p[0]).collect();
        cr.j_curve(&zs)?.into_iter().map(|c| JValue { value: c.value, witness: c.witness }).collect()
    } else {
        pts.par_iter().map(|z| cr.j_eval(z)).collect::<Result<_>>()?
    };
    let mut header = coord_header("z", d);
    header.extend(["J".to_string(), "order".to_string(), "support".to_string()]);
    w(out, header.join(","));
    for (z, j) in pts.iter().zip(&vals) {
        let mut cells: Vec<String> = z.iter().map(|&v| fmt_sig(v)).collect();
        cells.push(ext(j.value));
        let (order, support) = match &j.witness {
            Some(wt) => (
                wt.order.iter().map(|&b| cr.labels[b].as_str()).collect::<Vec<_>>().join(">"),
                wt.support().iter().map(|&b| cr.labels[b].as_str()).collect::<Vec<_>>().join("+"),
            ),
            None => (String::new(), String::new()),
        };
        cells.push(format!("\"{order}\""));
        cells.push(format!("\"{support}\""));
        w(out, cells.join(","));
    }
    Ok(())
}

fn cmd_oracle(chain: &Chain, set: &EventSet, ns: &[u64], budget: u64, out: &mut Vec<u8>) -> Result<()> {
    let opts = OracleOptions { cell_budget: budget };
    let trace = rate_trace(chain, set, ns, &opts)?;
    w(out, "n,log_prob,rate");
    for p in trace {
        w(out, format!("{},{},{}", p.n, fmt_sig(p.log_prob), fmt_sig(p.rate)));
    }
    Ok(())
}

fn cmd_simulate(chain: &Chain, n: u64, replicas: usize, seed: u64, out: &mut Vec<u8>) -> Result<()> {
    let rep = simulate(chain, n, replicas, seed)?;
    let dec = crate::decomposition::decompose(chain.schedule.limit())?;
    let d = chain.f.dim();
    w(out, format!("# replicas: {replicas}"));
    w(out, format!("# n: {n}"));
    w(out, format!("# seed: {seed}"));
    for k in 0..d {
        let mean = rep.samples.iter().map(|s| s[k]).sum::<f64>() / replicas as f64;
        w(out, format!("# mean z{}: {}", k + 1, fmt_sig(mean)));
    }
    let hist = rep.absorption(&dec.block_of, dec.num_blocks());
    for (i, c) in hist.iter().enumerate() {
        w(out, format!("# terminal block {}: {c}", block_label(chain, &dec.blocks[i].states)));
    }
    let mut header = vec!["replica".to_string()];
    header.extend(coord_header("z", d));
    header.extend(["terminal_state".to_string(), "terminal_block".to_string()]);
    w(out, header.join(","));
    for (i, (z, &x)) in rep.samples.iter().zip(&rep.terminal_state).enumerate() {
        let zs: Vec<String> = z.iter().map(|&v| fmt_sig(v)).collect();
        w(
            out,
            format!(
                "{i},{},{},\"{}\"",
                zs.join(","),
                chain.states.label(x),
                block_label(chain, &dec.blocks[dec.block_of[x]].states)
            ),
        );
    }
    Ok(())
}

/// One row of a fixture report.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub expected: String,
    pub computed: String,
    pub pass: bool,
}

fn close(name: impl Into<String>, want: f64, got: f64, tol: f64) -> Check {
    let pass = if want.is_infinite() { got == want } else { (got - want).abs() <= tol };
    Check {
        name: name.into(),
        expected: format!("{} ± {}", fmt_sig(want), fmt_sig(tol)),
        computed: fmt_sig(got),
        pass,
    }
}

fn exact(name: impl Into<String>, want: impl Into<String>, got: impl Into<String>) -> Check {
    let (expected, computed) = (want.into(), got.into());
    Check { name: name.into(), pass: expected == computed, expected, computed }
}

fn labels_of(chain: &Chain, a: &ChainAnalysis, class: BlockClass) -> String {
    let mut ls: Vec<String> = a
        .dec
        .blocks
        .iter()
        .filter(|b| b.class == class)
        .map(|b| block_label(chain, &b.states))
        .collect();
    ls.sort();
    ls.join(" ")
}

fn cost_between(chain: &Chain, a: &ChainAnalysis, m: &CostMatrix, from: &str, to: &str) -> Result<ExtReal> {
    let find = |lab: &str| {
        (0..a.dec.num_blocks())
            .find(|&i| block_label(chain, &a.dec.blocks[i].states) == lab)
            .ok_or_else(|| Error::spec(format!("no block {lab}")))
    };
    Ok(m.get(find(from)?, find(to)?))
}

fn max_curve_error(cr: &CompositeRate, zs: &[f64], want: impl Fn(f64) -> f64) -> Result<f64> {
    let curve = cr.j_curve(zs)?;
    Ok(curve.iter().map(|c| (c.value.to_f64() - want(c.z)).abs()).fold(0.0, f64::max))
}

fn unit_grid() -> Vec<f64> {
    (0..100).map(|k| k as f64 / 100.0).collect()
}

/// Expected-versus-computed checks of a compiled-in example.
pub fn fixture_checks(name: &str) -> Result<Vec<Check>> {
    let chain = fixtures::fixture_chain(name)?;
    let mut rows = Vec::new();
    match name {
        "s3-metropolis" => {
            let a = ChainAnalysis::new(&chain, 200)?;
            rows.push(exact("stochastic classes", "{2} {6} {8}", labels_of(&chain, &a, BlockClass::Stochastic)));
            rows.push(exact(
                "nondegenerate transient",
                "{4} {5}",
                labels_of(&chain, &a, BlockClass::NondegenerateTransient),
            ));
            rows.push(exact("degenerate transient", "{1} {3} {7} {9}", labels_of(&chain, &a, BlockClass::DegenerateTransient)));
            rows.push(exact("regime", "intermediate", a.regime.name()));
            for (from, to, want) in [("{2}", "{4}", -2.0), ("{6}", "{2}", -5.0), ("{4}", "{6}", 0.0)] {
                let got = cost_between(&chain, &a, &a.u0, from, to)?.to_f64();
                rows.push(close(format!("U0 {from}->{to}"), want, got, 1e-9));
            }
            let cr = CompositeRate::new(&chain, &a, CostKind::U0)?;
            for (lab, x, want) in [("{4}", 2.0, 1.0 / 3.0), ("{5}", 1.0, 2.0 / 3.0)] {
                let pos = cr.labels.iter().position(|l| l == lab).ok_or_else(|| Error::spec("missing block"))?;
                let got = cr.block_rates()[pos].rate_eval(&[x])?.to_f64();
                rows.push(close(format!("I{lab}({})", fmt_sig(x)), want, got, 1e-8));
            }
            for (z, label) in [(-1.0, "-1"), (-2.0 / 11.0, "-2/11"), (0.0, "0"), (2.0, "2"), (12.0 / 5.0, "12/5"), (3.0, "3")]
            {
                let got = cr.j_eval(&[z])?.value.to_f64();
                rows.push(close(format!("J({label})"), fixtures::s3_expected_j(z).to_f64(), got, 1e-6));
            }
            let zs: Vec<f64> = (0..=80).map(|k| -1.0 + 0.05 * k as f64).collect();
            let err = max_curve_error(&cr, &zs, |z| fixtures::s3_expected_j(z).to_f64())?;
            rows.push(close("max |J - pieces| on 0.05 grid", 0.0, err, 1e-6));
        }
        "s12-1" => {
            let a = ChainAnalysis::new(&chain, DEFAULT_WINDOW)?;
            rows.push(close("v(0,1)", -(2f64.ln()), a.rates.v.get(0, 1).to_f64(), 1e-12));
            rows.push(close("tau(0,1)", -(3f64.ln()), a.rates.tau.get(0, 1).to_f64(), 1e-12));
            rows.push(exact("assumption A", "false", a.assumptions.assumption_a.to_string()));
            let cr = CompositeRate::new(&chain, &a, CostKind::U0)?;
            let err = max_curve_error(&cr, &unit_grid(), |z| z * 2f64.ln())?;
            rows.push(close("max |J_U0 - z log 2| on [0,1)", 0.0, err, 1e-6));
            let set = EventSet::interval(Interval::left_open(0.3, 0.6));
            let t = rate_trace(&chain, &set, &[2000], &OracleOptions::default())?;
            rows.push(close("rate at n=2000 on (0.3,0.6]", -0.3 * 2f64.ln(), t[0].rate, 0.01));
        }
        "s12-2" => {
            let a = ChainAnalysis::new(&chain, DEFAULT_WINDOW)?;
            let t0 = CompositeRate::new(&chain, &a, CostKind::T0)?;
            let u0 = CompositeRate::new(&chain, &a, CostKind::U0)?;
            rows.push(close("max |J_T0 - z log 3| on [0,1)", 0.0, max_curve_error(&t0, &unit_grid(), |z| z * 3f64.ln())?, 1e-6));
            rows.push(close("max |J_U0 - z log 2| on [0,1)", 0.0, max_curve_error(&u0, &unit_grid(), |z| z * 2f64.ln())?, 1e-6));
            let set = EventSet::interval(Interval::left_open(0.3, 0.6));
            let t = rate_trace(&chain, &set, &[512, 65536], &OracleOptions::default())?;
            rows.push(close("rate at n=512 (end of a base-2 block)", -0.3 * 2f64.ln(), t[0].rate, 0.02));
            rows.push(close("rate at n=65536 (end of a base-3 block)", -0.3 * 3f64.ln(), t[1].rate, 0.02));
        }
        "s12-3" => {
            let a = ChainAnalysis::new(&chain, 2000)?;
            rows.push(exact("stochastic classes", "3", a.dec.m_count().to_string()));
            rows.push(exact("assumption A", "true", a.assumptions.assumption_a.to_string()));
            rows.push(exact("assumption C", "false", a.assumptions.assumption_c.to_string()));
            let gap = fixtures::periodic_class_gap(PeriodicParams::default(), 2000)?;
            rows.push(Check {
                name: format!("class gap at n={} (C1 route {} vs C2 route {})", gap.n, fmt_sig(gap.entrant_rate), fmt_sig(gap.resident_rate)),
                expected: ">= 0.05".into(),
                computed: fmt_sig(gap.gap.abs()),
                pass: gap.gap.abs() >= 0.05,
            });
        }
        other => return Err(Error::spec(format!("unknown fixture '{other}'"))),
    }
    Ok(rows)
}

fn cmd_fixture(name: &str, fmt: Format, out: &mut Vec<u8>) -> Result<()> {
    let rows = fixture_checks(name)?;
    let status = |p: bool| if p { "PASS" } else { "FAIL" };
    match fmt {
        Format::Csv => {
            w(out, "check,expected,computed,status");
            for r in &rows {
                w(out, format!("\"{}\",\"{}\",\"{}\",{}", r.name, r.expected, r.computed, status(r.pass)));
            }
        }
        Format::Text => {
            let nw = rows.iter().map(|r| r.name.chars().count()).max().unwrap_or(5);
            let ew = rows.iter().map(|r| r.expected.chars().count()).max().unwrap_or(8).max(8);
            let cw = rows.iter().map(|r| r.computed.chars().count()).max().unwrap_or(8).max(8);
            w(out, format!("fixture {name}"));
            w(out, format!("{:<nw$}  {:<ew$}  {:<cw$}  status", "check", "expected", "computed"));
            for r in &rows {
                w(out, format!("{:<nw$}  {:<ew$}  {:<cw$}  {}", r.name, r.expected, r.computed, status(r.pass)));
            }
            let passed = rows.iter().filter(|r| r.pass).count();
            w(out, format!("{passed}/{} PASS", rows.len()));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_str(args: &[&str]) -> (i32, String, String) {
        let (mut o, mut e) = (Vec::new(), Vec::new());
        let argv = std::iter::once("nhld").chain(args.iter().copied());
        let code = run(argv, &mut o, &mut e);
        (code, String::from_utf8(o).unwrap(), String::from_utf8(e).unwrap())
    }

    #[test]
    fn grid_parsing() {
        let g = parse_grid("0:1:4").unwrap();
        assert_eq!(g, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert!(parse_grid("0:1").is_err());
        assert!(parse_grid("1:0:3").is_err());
        assert!(parse_grid("0:1:0").is_err());
        assert_eq!(product(&[vec![0.0, 1.0], vec![2.0, 3.0]]).len(), 4);
    }

    #[test]
    fn usage_errors_are_prefixed() {
        let (code, _, err) = run_str(&["decompose", "--bogus"]);
        assert_eq!(code, 1);
        assert!(err.starts_with("error[usage]:"), "{err}");
        let (code, _, err) = run_str(&["decompose", "--fixture", "nope"]);
        assert_eq!(code, 1);
        assert!(err.starts_with("error[spec]:"), "{err}");
        let (code, out, _) = run_str(&["--help"]);
        assert_eq!(code, 0);
        assert!(out.contains("decompose"));
    }

    #[test]
    fn budget_exit_code() {
        let (code, _, err) = run_str(&["oracle", "--fixture", "s12-1", "--n", "200", "--set", "0,1", "--budget", "10"]);
        assert_eq!(code, 3, "{err}");
        assert!(err.starts_with("error[budget]:"));
    }

    #[test]
    fn ldp_matches_line_on_two_state_chain() {
        let (code, out, _) = run_str(&["ldp", "--fixture", "s12-1", "--cost", "U0", "--grid", "0:1:100"]);
        assert_eq!(code, 0);
        let mut lines = out.lines();
        assert_eq!(lines.next(), Some("z,J,order,support"));
        for line in lines {
            let cells: Vec<&str> = line.split(',').collect();
            let z: f64 = cells[0].parse().unwrap();
            let j: f64 = cells[1].parse().unwrap();
            if z < 1.0 {
                assert!((j - z * 2f64.ln()).abs() < 1e-6, "{line}");
            }
        }
    }

    #[test]
    fn negative_grid_bounds() {
        let (code, out, err) = run_str(&["rate", "--fixture", "s3-metropolis", "--window", "50", "--grid", "-1:3:4"]);
        assert_eq!(code, 0, "{err}");
        assert_eq!(out.lines().count(), 6);
        assert!(out.lines().nth(1).unwrap().starts_with("-1,"));
    }

    #[test]
    fn decompose_lists_three_stochastic_blocks() {
        let (code, out, _) = run_str(&["decompose", "--fixture", "s12-3"]);
        assert_eq!(code, 0);
        assert!(out.contains("stochastic classes: 3"), "{out}");
    }

    #[test]
    fn t0_warning_on_periodic_chain() {
        let (code, _, err) = run_str(&["ldp", "--fixture", "s12-3", "--window", "400", "--cost", "T0", "--grid", "2:2.2:2"]);
        assert_eq!(code, 0);
        assert!(err.starts_with("warning[assumption]"), "{err}");
    }
}
