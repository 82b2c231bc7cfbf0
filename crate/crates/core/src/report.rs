//! CSV tables and gnuplot scripts.
//!
//! Tables are comma separated with a header row and LF line endings; floats
//! are printed with 17 significant digits.

use std::path::Path;

use crate::error::{Error, Result};

/// Formats a float with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self { header: header.into_iter().map(Into::into).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
        let header = reader
            .headers()
            .map_err(|e| Error::Csv(e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect::<Vec<_>>();
        if header.is_empty() || header.iter().all(String::is_empty) {
            return Err(Error::Csv("missing header row".into()));
        }
        let rows = reader
            .records()
            .map(|r| r.map(|rec| rec.iter().map(str::to_string).collect()).map_err(|e| Error::Csv(e.to_string())))
            .collect::<Result<Vec<Vec<String>>>>()?;
        Ok(Self { header, rows })
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    /// Values of a numeric column.
    pub fn numbers(&self, name: &str) -> Result<Vec<f64>> {
        let c = self.column(name).ok_or_else(|| Error::Csv(format!("no column `{name}`")))?;
        self.rows
            .iter()
            .enumerate()
            .map(|(i, r)| r[c].parse().map_err(|_| Error::Csv(format!("row {}: `{}` is not a number", i + 1, r[c]))))
            .collect()
    }
}

/// Gnuplot script rendering a table written by one of the experiments.
///
/// `csv_name` is the path the script refers to. The table kind is recognised
/// from its header: per-memory curves (`k,tv_l1,stderr_l1,…`), the
/// abstraction comparison (`setting,n,ell,…`) or a bound report
/// (`k,tv_measured,…`).
pub fn emit_plots(csv_text: &str, csv_name: &str) -> Result<String> {
    let table = Table::parse(csv_text)?;
    for (i, row) in table.rows.iter().enumerate() {
        if row.len() != table.header.len() {
            return Err(Error::Csv(format!("row {} has {} fields, header has {}", i + 1, row.len(), table.header.len())));
        }
    }
    let h: Vec<&str> = table.header.iter().map(String::as_str).collect();
    let numeric: Vec<&str> = match h.first() {
        Some(&"setting") => h.iter().skip(1).copied().collect(),
        _ => h.iter().copied().filter(|c| *c != "provenance").collect(),
    };
    for c in numeric {
        table.numbers(c)?;
    }
    let output = format!("set terminal pngcairo size 800,500\nset output '{}'\n", quoted(&png_name(csv_name)));
    let csv_name = &quoted(csv_name);
    let mut s = String::new();
    s.push_str("set datafile separator ','\n");
    s.push_str("set key top right\n");
    s.push_str("set xlabel 'k'\n");
    match h.as_slice() {
        ["k", rest @ ..] if !rest.is_empty() && rest.len() % 2 == 0 && rest[0].starts_with("tv_l") => {
            s.push_str("set ylabel 'TV'\n");
            s.push_str(&output);
            let mut plots = Vec::new();
            for (j, pair) in rest.chunks(2).enumerate() {
                let ell = pair[0].trim_start_matches("tv_l");
                if pair[1] != format!("stderr_l{ell}") {
                    return Err(Error::Csv(format!("expected `stderr_l{ell}` after `{}`", pair[0])));
                }
                let (tv, se) = (2 * j + 2, 2 * j + 3);
                plots.push(format!(
                    "'{csv_name}' skip 1 using 1:{tv}:{se} with yerrorlines title 'memory {ell}'"
                ));
            }
            s.push_str(&format!("plot {}\n", plots.join(", \\\n     ")));
        }
        ["setting", "n", "ell", "stored_nonzeros", "k", "tv", "stderr"] => {
            s.push_str("set ylabel 'TV'\n");
            s.push_str(&output);
            let mut settings: Vec<(String, String, String)> = Vec::new();
            for r in &table.rows {
                let key = (r[0].clone(), r[1].clone(), r[2].clone());
                if !settings.contains(&key) {
                    settings.push(key);
                }
            }
            let plots: Vec<String> = settings
                .iter()
                .map(|(name, n, ell)| {
                    format!(
                        "'{csv_name}' skip 1 using 5:(strcol(1) eq '{}' ? $6 : 1/0):7 with yerrorlines title 'n={n}, memory {ell}'",
                        quoted(name)
                    )
                })
                .collect();
            s.push_str(&format!("plot {}\n", plots.join(", \\\n     ")));
        }
        ["k", "tv_measured", "tv_stderr", "bound_inc", "bound_dec", "bound_combined", "bound_raw", "provenance"] => {
            let provenance = table.rows.first().map_or("", |r| r[7].as_str());
            s.push_str("set ylabel 'TV'\n");
            s.push_str("set logscale y\n");
            s.push_str(&format!("set title 'bounds ({provenance} parameters)'\n"));
            s.push_str(&output);
            s.push_str(&format!(
                "plot '{csv_name}' skip 1 using 1:2:3 with yerrorlines title 'measured', \\\n     \
                 '{csv_name}' skip 1 using 1:4 with lines title 'increasing', \\\n     \
                 '{csv_name}' skip 1 using 1:5 with lines title 'decreasing', \\\n     \
                 '{csv_name}' skip 1 using 1:6 with lines lw 2 title 'combined'\n"
            ));
        }
        _ => return Err(Error::Csv(format!("unrecognised table header `{}`", h.join(",")))),
    }
    Ok(s)
}

/// Body of a single-quoted gnuplot string.
fn quoted(text: &str) -> String {
    text.replace('\'', "''")
}

fn png_name(csv_name: &str) -> String {
    match csv_name.strip_suffix(".csv") {
        Some(stem) => format!("{stem}.png"),
        None => format!("{csv_name}.png"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_have_seventeen_digits() {
        assert_eq!(fmt_f64(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_f64(0.1).parse::<f64>().unwrap(), 0.1);
        assert_eq!(fmt_f64(0.0), "0.0000000000000000e0");
    }

    #[test]
    fn csv_round_trip() {
        let mut t = Table::new(["k", "tv"]);
        t.push(vec!["0".into(), fmt_f64(0.25)]);
        let text = t.to_csv();
        assert_eq!(text, "k,tv\n0,2.5000000000000000e-1\n");
        assert_eq!(Table::parse(&text).unwrap(), t);
        assert_eq!(t.numbers("tv").unwrap(), vec![0.25]);
    }

    #[test]
    fn malformed_tables_are_rejected() {
        assert!(emit_plots("a,b\n1,2\n", "x.csv").is_err());
        assert!(emit_plots("k,tv_l1,stderr_l1\n0,zero,0\n", "x.csv").is_err());
        assert!(emit_plots("k,tv_l1,stderr_l1\n0,1\n", "x.csv").is_err());
        assert!(emit_plots("", "x.csv").is_err());
    }
}
