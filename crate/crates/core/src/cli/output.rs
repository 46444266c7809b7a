//! Deterministic CSV and JSON writers.

use std::path::Path;

use serde_json::{Map, Number, Value};

use super::config::Effective;
use crate::error::Result;
use crate::sysmodel::GridSpec;

/// 17 significant digits, `-0` folded into `0`.
pub fn fmt_float(v: f64) -> String {
    format!("{:.16e}", v + 0.0)
}

/// A JSON number printed with 17 significant digits; non-finite values
/// become `null`.
pub fn num(v: f64) -> Value {
    if v.is_finite() {
        Value::Number(
            fmt_float(v)
                .parse::<Number>()
                .expect("formatted float parses"),
        )
    } else {
        Value::Null
    }
}

pub fn nums(v: &[f64]) -> Value {
    Value::Array(v.iter().map(|x| num(*x)).collect())
}

pub fn object<const N: usize>(pairs: [(&str, Value); N]) -> Value {
    Value::Object(
        pairs
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect::<Map<_, _>>(),
    )
}

/// CSV table with a mandatory header.
pub struct Table {
    writer: csv::Writer<Vec<u8>>,
}

/// One CSV cell.
pub enum Cell {
    F(f64),
    I(i64),
    S(String),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::F(v) => fmt_float(*v),
            Cell::I(v) => v.to_string(),
            Cell::S(s) => s.clone(),
        }
    }
}

impl Table {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer
            .write_record(header.iter().map(AsRef::as_ref))
            .expect("writing to memory");
        Self { writer }
    }

    pub fn row(&mut self, cells: impl IntoIterator<Item = Cell>) {
        let record: Vec<String> = cells.into_iter().map(|c| c.render()).collect();
        self.writer
            .write_record(&record)
            .expect("writing to memory");
    }

    pub fn write(self, path: &Path) -> Result<()> {
        let bytes = self.writer.into_inner().map_err(|e| e.into_error())?;
        std::fs::write(path, bytes)?;
        Ok(())
    }
}

pub fn floats(v: &[f64]) -> impl Iterator<Item = Cell> + '_ {
    v.iter().map(|x| Cell::F(*x))
}

fn grid_json(g: &Option<GridSpec>) -> Value {
    match g {
        Some(g) => object([
            ("lo", nums(&g.lo)),
            ("hi", nums(&g.hi)),
            ("step", num(g.step)),
        ]),
        None => Value::Null,
    }
}

/// Report header echoing the effective solver values.
pub fn header(subcommand: &str, eff: &Effective) -> Value {
    let mu_range = match &eff.mu_range {
        Some(r) => object([
            ("start", num(r.start)),
            ("end", num(r.end)),
            ("count", Value::from(r.count)),
        ]),
        None => Value::Null,
    };
    object([
        ("tool", Value::from("singset")),
        ("version", Value::from(env!("CARGO_PKG_VERSION"))),
        ("subcommand", Value::from(subcommand)),
        (
            "effective",
            object([
                ("tol", num(eff.tol)),
                ("rank_tol", num(eff.rank_tol)),
                ("max_iter", Value::from(eff.max_iter)),
                ("arc_step", eff.arc_step.map_or(Value::Null, num)),
                ("lambda", num(eff.lambda)),
                ("rtol", num(eff.rtol)),
                ("atol", num(eff.atol)),
                ("horizon", num(eff.horizon)),
                ("report_dt", num(eff.report_dt)),
                ("grid", grid_json(&eff.grid)),
                ("seed_grid", grid_json(&eff.seed_grid)),
                ("mu_range", mu_range),
                ("grid_cap", Value::from(eff.grid_cap)),
            ]),
        ),
    ])
}

pub fn write_json(path: &Path, value: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("JSON values serialize");
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_have_seventeen_digits() {
        assert_eq!(fmt_float(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_float(-0.0), "0.0000000000000000e0");
        assert_eq!(num(0.1).to_string(), "1.0000000000000001e-1");
        assert_eq!(num(f64::NAN), Value::Null);
        let back: f64 = fmt_float(std::f64::consts::PI).parse().unwrap();
        assert_eq!(back, std::f64::consts::PI);
    }

    #[test]
    fn table_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let mut t = Table::new(&["x1", "k"]);
        t.row([Cell::F(1.0), Cell::I(3)]);
        t.write(&path).unwrap();
        assert_eq!(
            std::fs::read_to_string(&path).unwrap(),
            "x1,k\n1.0000000000000000e0,3\n"
        );
    }
}
