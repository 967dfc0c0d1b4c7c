//! Header-indexed CSV reading with schema and value errors that name the
//! file, row and column.

use std::path::Path;

use crate::error::{Error, Result};

pub(crate) struct Table {
    pub path: String,
    pub headers: Vec<String>,
    pub rows: Vec<csv::StringRecord>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&path.display().to_string(), &text)
    }

    /// Lines starting with `#` are comments.
    pub fn parse(path: &str, text: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let mut seen = std::collections::HashSet::new();
        for h in &headers {
            if !seen.insert(h) {
                return Err(Error::Schema {
                    path: path.into(),
                    message: format!("duplicate column `{h}`"),
                });
            }
        }
        let rows = rdr.records().collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(Self {
            path: path.into(),
            headers,
            rows,
        })
    }

    pub fn col(&self, name: &str) -> Result<usize> {
        self.find(name).ok_or_else(|| Error::Schema {
            path: self.path.clone(),
            message: format!(
                "missing required column `{name}` (found: {})",
                self.headers.join(",")
            ),
        })
    }

    pub fn find(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }

    /// Columns whose name starts with `prefix`, in file order.
    pub fn prefixed(&self, prefix: &str) -> Vec<usize> {
        (0..self.headers.len())
            .filter(|&c| self.headers[c].starts_with(prefix))
            .collect()
    }

    pub fn value_error(&self, row: usize, col: usize, message: impl Into<String>) -> Error {
        Error::Value {
            path: self.path.clone(),
            row: row + 1,
            column: self.headers[col].clone(),
            message: message.into(),
        }
    }

    pub fn str_at(&self, row: usize, col: usize) -> &str {
        self.rows[row].get(col).unwrap_or("")
    }

    /// Finite float.
    pub fn f64_at(&self, row: usize, col: usize) -> Result<f64> {
        let s = self.str_at(row, col);
        match s.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            Ok(v) => Err(self.value_error(row, col, format!("non-finite value {v}"))),
            Err(_) => Err(self.value_error(row, col, format!("`{s}` is not a number"))),
        }
    }

    pub fn usize_at(&self, row: usize, col: usize) -> Result<usize> {
        let s = self.str_at(row, col);
        s.parse::<usize>()
            .map_err(|_| self.value_error(row, col, format!("`{s}` is not a non-negative integer")))
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    /// `# key=value` comment lines of a file.
    pub fn comments(text: &str) -> Vec<(String, String)> {
        text.lines()
            .filter_map(|l| l.strip_prefix('#'))
            .filter_map(|l| {
                let (k, v) = l.split_once('=')?;
                Some((k.trim().to_string(), v.trim().to_string()))
            })
            .collect()
    }
}

/// Shortest representation that parses back to the same `f64`.
pub(crate) fn num(v: f64) -> String {
    format!("{v}")
}
