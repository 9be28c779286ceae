//! Minimal CSV writer with RFC 4180 style quoting.
//!
//! Fields containing commas, quotes, or line breaks are wrapped in double
//! quotes with embedded quotes doubled; everything else is written as is.
//! Numbers use a fixed formatting rule so identical runs produce
//! byte-identical files regardless of thread count or platform.

use std::io::Write;
use std::path::Path;

/// Formats a float for CSV: plain decimal in a readable range, scientific
/// notation outside it. Both branches print the shortest digit string
/// that round-trips.
pub fn num(x: f64) -> String {
    if x == 0.0 || (x.abs() >= 1e-4 && x.abs() < 1e16) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

fn quote(field: &str) -> String {
    if field.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

/// An in-memory table with a fixed header, rendered to CSV in one piece.
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Table {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn row<S: Into<String>>(&mut self, fields: impl IntoIterator<Item = S>) {
        let fields: Vec<String> = fields.into_iter().map(Into::into).collect();
        assert_eq!(
            fields.len(),
            self.header.len(),
            "row width does not match the header"
        );
        self.rows.push(fields);
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let mut emit = |fields: &[String]| {
            let line: Vec<String> = fields.iter().map(|f| quote(f)).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        };
        emit(&self.header);
        for row in &self.rows {
            emit(row);
        }
        out
    }

    /// Writes the table to `path` and returns the byte count.
    pub fn write(&self, path: &Path) -> std::io::Result<usize> {
        let bytes = self.to_csv().into_bytes();
        let mut file = std::fs::File::create(path)?;
        file.write_all(&bytes)?;
        Ok(bytes.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quoting_follows_the_rules() {
        assert_eq!(quote("plain"), "plain");
        assert_eq!(quote("a,b"), "\"a,b\"");
        assert_eq!(quote("say \"hi\""), "\"say \"\"hi\"\"\"");
    }

    #[test]
    fn numbers_round_trip() {
        for x in [0.0, 0.01, -3.5, 1e-7, 2.5e17, f64::MIN_POSITIVE] {
            assert_eq!(num(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(num(0.01), "0.01");
        assert_eq!(num(1e-7), "1e-7");
    }

    #[test]
    fn table_renders_header_and_rows() {
        let mut t = Table::new(["a", "b"]);
        t.row([num(1.0), num(0.5)]);
        assert_eq!(t.to_csv(), "a,b\n1,0.5\n");
    }
}
