//! Versioned CSV tables.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use dyncal::persist::fmt_num;

use crate::CliError;

/// A header row plus string cells, written after a `#schema=` line.
pub struct Table {
    pub schema: &'static str,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(schema: &'static str, header: Vec<String>) -> Self {
        Self { schema, header, rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), CliError> {
        writeln!(w, "#schema={}", self.schema)?;
        let mut out = csv::Writer::from_writer(w);
        out.write_record(&self.header)?;
        for row in &self.rows {
            out.write_record(row)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let file = File::create(path).map_err(|e| CliError::Output(format!("{}: {e}", path.display())))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }
}

pub fn num(v: f64) -> String {
    fmt_num(v)
}

pub fn opt_num(v: Option<f64>) -> String {
    v.map(fmt_num).unwrap_or_default()
}

pub fn x_header(prefix: &str, q: usize) -> Vec<String> {
    (1..=q).map(|j| format!("{prefix}x_{j}")).collect()
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    let h = p * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile(&v, 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles_match_linear_rule() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.25), 1.75);
        assert_eq!(quantile(&v, 0.5), 2.5);
        assert_eq!(quantile(&v, 0.75), 3.25);
        assert_eq!(median(&[5.0, 1.0, 3.0]), 3.0);
    }

    #[test]
    fn table_has_schema_and_header() {
        let mut t = Table::new("demo-v1", vec!["a".into(), "b".into()]);
        t.push(vec![num(0.5), String::new()]);
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "#schema=demo-v1\na,b\n5.0000000000000000e-1,\n");
    }
}
