//! Chain-spec files (TOML).
//!
//! ```toml
//! states = ["0", "1"]
//! f = [[1.0, 0.0]]          # d rows of r values
//! pi = [0.5, 0.5]
//!
//! [schedule]
//! family = "constant"       # constant | tabulated | metropolis |
//!                           # alternating-two-state | block-alternating | custom
//! limit = [[1.0, 0.0], [0.0, 1.0]]
//!
//! [rates]                   # optional, block order of the decomposition
//! v = [[0.0, -0.69], [-inf, 0.0]]
//! tau = [[0.0, -1.09], [-inf, 0.0]]
//! entry_limits = false
//! ```
//!
//! Metropolis schedules give `g`, `H` and `beta = { kind, c | exponent |
//! table, tail_slope }`; tabulated ones give `table` (list of matrices) and
//! `tail`. Custom schedules name a compiled-in generator.

use std::fmt::Write as _;

use serde::Deserialize;
use toml::Spanned;

use crate::chain_model::{
    Chain, Cooling, DeclaredRates, Family, Matrix, MetropolisSpec, Observable, Schedule, StateSpace, ROW_TOL,
};
use crate::error::{Error, Result};
use crate::numerics::ExtReal;

type RawMatrix = Vec<Spanned<Vec<f64>>>;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawChain {
    states: Vec<String>,
    f: Vec<Vec<f64>>,
    pi: Vec<f64>,
    schedule: RawSchedule,
    rates: Option<RawRates>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSchedule {
    family: Spanned<String>,
    limit: Option<RawMatrix>,
    table: Option<Vec<RawMatrix>>,
    tail: Option<RawMatrix>,
    g: Option<RawMatrix>,
    #[serde(rename = "H")]
    h: Option<Vec<f64>>,
    beta: Option<Spanned<RawBeta>>,
    even_base: Option<f64>,
    odd_base: Option<f64>,
    name: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBeta {
    kind: String,
    c: Option<f64>,
    exponent: Option<f64>,
    table: Option<Vec<f64>>,
    tail_slope: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRates {
    v: Vec<Vec<f64>>,
    tau: Vec<Vec<f64>>,
    entry_limits: Option<bool>,
}

struct Lines<'a>(&'a str);

impl Lines<'_> {
    fn at(&self, offset: usize) -> usize {
        self.0[..offset.min(self.0.len())].bytes().filter(|&b| b == b'\n').count() + 1
    }
}

fn stochastic_matrix(raw: &RawMatrix, lines: &Lines, what: &str) -> Result<Matrix> {
    let r = raw.len();
    for row in raw {
        let line = lines.at(row.span().start);
        let values = row.get_ref();
        if values.len() != r {
            return Err(Error::spec_at(line, format!("{what}: row has {} entries, expected {r}", values.len())));
        }
        if values.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::spec_at(line, format!("{what}: entries must lie in [0, 1]")));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > ROW_TOL {
            return Err(Error::spec_at(line, format!("{what}: row is not stochastic (sum = {sum})")));
        }
    }
    let rows: Vec<Vec<f64>> = raw.iter().map(|r| r.get_ref().clone()).collect();
    Matrix::from_rows(&rows)
}

fn require<T>(v: Option<T>, line: usize, what: &str) -> Result<T> {
    v.ok_or_else(|| Error::spec_at(line, format!("missing field `{what}`")))
}

fn cooling(raw: &Spanned<RawBeta>, lines: &Lines) -> Result<Cooling> {
    let line = lines.at(raw.span().start);
    let b = raw.get_ref();
    let c = || require(b.c, line, "beta.c");
    Ok(match b.kind.as_str() {
        "linear" => Cooling::Linear { c: c()? },
        "logarithmic" => Cooling::Logarithmic { c: c()? },
        "power" => Cooling::Power { c: c()?, exponent: require(b.exponent, line, "beta.exponent")? },
        "tabulated" => Cooling::Tabulated {
            table: require(b.table.clone(), line, "beta.table")?,
            tail_slope: require(b.tail_slope, line, "beta.tail_slope")?,
        },
        other => return Err(Error::spec_at(line, format!("unknown cooling kind {other:?}"))),
    })
}

fn schedule(raw: &RawSchedule, lines: &Lines) -> Result<Schedule> {
    let line = lines.at(raw.family.span().start);
    match raw.family.get_ref().as_str() {
        "constant" => Schedule::constant(stochastic_matrix(require(raw.limit.as_ref(), line, "limit")?, lines, "limit")?),
        "tabulated" => {
            let table = require(raw.table.as_ref(), line, "table")?
                .iter()
                .enumerate()
                .map(|(k, m)| stochastic_matrix(m, lines, &format!("table[{k}]")))
                .collect::<Result<Vec<_>>>()?;
            let tail = stochastic_matrix(require(raw.tail.as_ref(), line, "tail")?, lines, "tail")?;
            Schedule::tabulated(table, tail)
        }
        "metropolis" => {
            let g = stochastic_matrix(require(raw.g.as_ref(), line, "g")?, lines, "g")?;
            let h = require(raw.h.clone(), line, "H")?;
            let beta = cooling(require(raw.beta.as_ref(), line, "beta")?, lines)?;
            Schedule::metropolis(MetropolisSpec::new(g, h, beta)?)
        }
        "alternating-two-state" => {
            Schedule::alternating_two_state(raw.even_base.unwrap_or(2.0), raw.odd_base.unwrap_or(3.0))
        }
        "block-alternating" => Schedule::block_alternating(raw.even_base.unwrap_or(2.0), raw.odd_base.unwrap_or(3.0)),
        "custom" => {
            let name = require(raw.name.as_deref(), line, "name")?;
            crate::fixtures::custom_schedule(name)
                .ok_or_else(|| Error::spec_at(line, format!("unknown custom schedule {name:?}")))
        }
        other => Err(Error::spec_at(line, format!("unknown schedule family {other:?}"))),
    }
}

fn ext_matrix(rows: &[Vec<f64>], what: &str) -> Result<Vec<Vec<ExtReal>>> {
    let k = rows.len();
    rows.iter()
        .map(|row| {
            if row.len() != k {
                return Err(Error::spec(format!("rates.{what} must be square")));
            }
            row.iter()
                .map(|&x| {
                    if x.is_nan() || x > 0.0 {
                        Err(Error::spec(format!("rates.{what} entries must lie in [-inf, 0]")))
                    } else {
                        Ok(ExtReal::from_f64(x))
                    }
                })
                .collect()
        })
        .collect()
}

/// Parses a chain-spec document.
pub fn parse_chain(text: &str) -> Result<Chain> {
    let raw: RawChain = toml::from_str(text).map_err(|e| {
        let line = e.span().map(|s| Lines(text).at(s.start));
        Error::InvalidSpec { line, message: e.message().trim().to_string() }
    })?;
    let lines = Lines(text);
    let states = StateSpace::new(raw.states)?;
    let f = Observable::from_rows(&raw.f)?;
    let mut sched = schedule(&raw.schedule, &lines)?;
    if let Some(r) = raw.rates {
        let v = ext_matrix(&r.v, "v")?;
        let tau = ext_matrix(&r.tau, "tau")?;
        if v.len() != tau.len() {
            return Err(Error::spec("rates.v and rates.tau differ in size"));
        }
        sched = sched.with_rates(DeclaredRates { v, tau, entry_limits: r.entry_limits.unwrap_or(false) });
    }
    Chain::new(states, f, raw.pi, sched)
}

pub fn load_chain(path: &std::path::Path) -> Result<Chain> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_chain(&text)
}

fn num(x: f64) -> String {
    if x == f64::NEG_INFINITY {
        "-inf".into()
    } else if x == f64::INFINITY {
        "inf".into()
    } else {
        format!("{x:?}")
    }
}

fn list(xs: &[f64]) -> String {
    format!("[{}]", xs.iter().map(|&x| num(x)).collect::<Vec<_>>().join(", "))
}

fn matrix_text(m: &Matrix) -> String {
    let rows: Vec<String> = (0..m.size()).map(|i| format!("  {},", list(m.row(i)))).collect();
    format!("[\n{}\n]", rows.join("\n"))
}

/// Renders a chain back to chain-spec text. Custom schedules are written by
/// name and round-trip only when the name is a known generator.
pub fn to_toml(chain: &Chain) -> String {
    let mut s = String::new();
    let labels: Vec<String> = chain.states.labels().iter().map(|l| format!("{l:?}")).collect();
    let _ = writeln!(s, "states = [{}]", labels.join(", "));
    let rows: Vec<String> = (0..chain.f.dim()).map(|k| list(&chain.f.coordinate(k))).collect();
    let _ = writeln!(s, "f = [{}]", rows.join(", "));
    let _ = writeln!(s, "pi = {}", list(&chain.pi));
    let _ = writeln!(s, "\n[schedule]\nfamily = {:?}", chain.schedule.family.tag());
    match &chain.schedule.family {
        Family::Constant => {
            let _ = writeln!(s, "limit = {}", matrix_text(chain.schedule.limit()));
        }
        Family::Tabulated { table, tail } => {
            let ms: Vec<String> = table.iter().map(matrix_text).collect();
            let _ = writeln!(s, "table = [{}]", ms.join(", "));
            let _ = writeln!(s, "tail = {}", matrix_text(tail));
        }
        Family::Metropolis(m) => {
            let _ = writeln!(s, "g = {}", matrix_text(&m.g));
            let _ = writeln!(s, "H = {}", list(&m.h));
            let beta = match &m.beta {
                Cooling::Linear { c } => format!("{{ kind = \"linear\", c = {} }}", num(*c)),
                Cooling::Logarithmic { c } => format!("{{ kind = \"logarithmic\", c = {} }}", num(*c)),
                Cooling::Power { c, exponent } => {
                    format!("{{ kind = \"power\", c = {}, exponent = {} }}", num(*c), num(*exponent))
                }
                Cooling::Tabulated { table, tail_slope } => {
                    format!("{{ kind = \"tabulated\", table = {}, tail_slope = {} }}", list(table), num(*tail_slope))
                }
            };
            let _ = writeln!(s, "beta = {beta}");
        }
        Family::AlternatingTwoState { even_base, odd_base } | Family::BlockAlternating { even_base, odd_base } => {
            let _ = writeln!(s, "even_base = {}\nodd_base = {}", num(*even_base), num(*odd_base));
        }
        Family::Custom(k) => {
            let _ = writeln!(s, "name = {:?}", k.name);
        }
    }
    if let Some(r) = &chain.schedule.rates {
        let ext = |m: &Vec<Vec<ExtReal>>| {
            let rows: Vec<String> =
                m.iter().map(|row| list(&row.iter().map(|x| x.to_f64()).collect::<Vec<_>>())).collect();
            format!("[{}]", rows.join(", "))
        };
        let _ = writeln!(s, "\n[rates]\nv = {}\ntau = {}\nentry_limits = {}", ext(&r.v), ext(&r.tau), r.entry_limits);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_STATE: &str = r#"
states = ["a", "b"]
f = [[1.0, 0.0]]
pi = [0.5, 0.5]

[schedule]
family = "constant"
limit = [
  [0.5, 0.5],
  [0.2, 0.8],
]

[rates]
v = [[0.0, 0.0], [-inf, 0.0]]
tau = [[0.0, -1.0], [-inf, 0.0]]
"#;

    #[test]
    fn parses_constant_chain_with_rates() {
        let c = parse_chain(TWO_STATE).unwrap();
        assert_eq!(c.num_states(), 2);
        assert_eq!(c.f.value(0), &[1.0]);
        let r = c.schedule.rates.as_ref().unwrap();
        assert_eq!(r.v[1][0], ExtReal::NegInf);
        assert_eq!(r.tau[0][1], ExtReal::Finite(-1.0));
        assert!(!r.entry_limits);
    }

    #[test]
    fn nonstochastic_row_reports_its_line() {
        let bad = TWO_STATE.replace("[0.2, 0.8]", "[0.2, 0.7]");
        match parse_chain(&bad) {
            Err(Error::InvalidSpec { line: Some(line), message }) => {
                assert_eq!(line, 10);
                assert!(message.contains("not stochastic"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_fields_and_families_are_rejected() {
        let extra = TWO_STATE.replace("pi = [0.5, 0.5]", "pi = [0.5, 0.5]\nbogus = 1");
        assert!(matches!(parse_chain(&extra), Err(Error::InvalidSpec { line: Some(_), .. })));
        let fam = TWO_STATE.replace("\"constant\"", "\"spline\"");
        assert!(matches!(parse_chain(&fam), Err(Error::InvalidSpec { line: Some(7), .. })));
    }

    #[test]
    fn metropolis_round_trip() {
        let text = r#"
states = ["1", "2", "3"]
f = [[0.0, 1.0, 2.0]]
pi = [0.2, 0.3, 0.5]

[schedule]
family = "metropolis"
g = [[0.0, 1.0, 0.0], [0.5, 0.0, 0.5], [0.0, 1.0, 0.0]]
H = [0.0, 1.0, 0.5]
beta = { kind = "power", c = 1.0, exponent = 2.0 }
"#;
        let c = parse_chain(text).unwrap();
        let again = parse_chain(&to_toml(&c)).unwrap();
        for n in [1, 2, 5] {
            assert_eq!(c.schedule.matrix(n).unwrap(), again.schedule.matrix(n).unwrap());
        }
        assert_eq!(again.pi, c.pi);
    }
}
