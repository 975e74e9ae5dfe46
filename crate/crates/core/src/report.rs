//! CSV output with `#` comment rows. Floats are written in a fixed
//! exponent format so repeated runs are byte-identical.

use crate::{Error, Result};
use std::io::Write;
use std::path::Path;

/// Fixed-width scientific formatting used in every table.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.12e}")
}

/// A table of string cells with leading comment lines.
#[derive(Debug, Clone, Default)]
pub struct Table {
    pub comments: Vec<String>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self { comments: Vec::new(), header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn comment(&mut self, c: impl Into<String>) -> &mut Self {
        self.comments.push(c.into());
        self
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        for c in &self.comments {
            for line in c.lines() {
                writeln!(buf, "# {line}")?;
            }
        }
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            w.write_record(&self.header)?;
            for r in &self.rows {
                w.write_record(r)?;
            }
            w.flush()?;
        }
        Ok(buf)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir)?;
            }
        }
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }
}

/// Reads back the data rows of a table written by [`Table::write`].
pub fn read_rows(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let text = std::fs::read_to_string(path)?;
    let body: String = text.lines().filter(|l| !l.starts_with('#')).map(|l| format!("{l}\n")).collect();
    let mut r = csv::Reader::from_reader(body.as_bytes());
    let header = r.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        rows.push(rec?.iter().map(str::to_string).collect());
    }
    Ok((header, rows))
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(pts: &[(f64, f64)]) -> Result<f64> {
    if pts.len() < 2 || pts.iter().any(|&(x, y)| !(x > 0.0 && y > 0.0)) {
        return Err(Error::InvalidParameter("slope fit needs two or more positive points".into()));
    }
    let n = pts.len() as f64;
    let (lx, ly): (Vec<f64>, Vec<f64>) = pts.iter().map(|&(x, y)| (x.ln(), y.ln())).unzip();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidParameter("slope fit needs distinct abscissae".into()));
    }
    Ok(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_skips_comments() {
        let mut t = Table::new(&["a", "b"]);
        t.comment("first\nsecond");
        t.push(vec!["1".into(), fmt_f64(0.5)]);
        let dir = std::env::temp_dir().join(format!("ymglue_report_{}", std::process::id()));
        let p = dir.join("t.csv");
        t.write(&p).unwrap();
        let (h, rows) = read_rows(&p).unwrap();
        assert_eq!(h, vec!["a", "b"]);
        assert_eq!(rows, vec![vec!["1".to_string(), "5.000000000000e-1".to_string()]]);
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("# first\n# second\n"));
        std::fs::remove_dir_all(dir).ok();
    }

    #[test]
    fn slope_of_a_power_law() {
        let pts: Vec<_> = [0.2, 0.1, 0.05].iter().map(|&e: &f64| (e, 3.0 * e.powf(1.7))).collect();
        assert!((loglog_slope(&pts).unwrap() - 1.7).abs() < 1e-12);
        assert!(loglog_slope(&pts[..1]).is_err());
    }
}
