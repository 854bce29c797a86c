//! CSV output shared by every artifact.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Simple CSV table: optional `# key=value` metadata lines, a header row and data rows.
#[derive(Debug, Clone, Default)]
pub struct CsvTable {
    meta: Vec<(String, String)>,
    header: Vec<String>,
    rows: Vec<String>,
}

impl CsvTable {
    pub fn new(header: &[&str]) -> Self {
        Self {
            meta: Vec::new(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn with_meta(mut self, key: &str, value: impl Into<String>) -> Self {
        self.meta.push((key.to_string(), value.into()));
        self
    }

    pub fn push<I, S>(&mut self, cells: I)
    where
        I: IntoIterator<Item = S>,
        S: Into<Cell>,
    {
        let cells: Vec<String> = cells.into_iter().map(|c| c.into().0).collect();
        debug_assert_eq!(cells.len(), self.header.len());
        self.rows.push(cells.join(","));
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.meta {
            writeln!(out, "# {k}={v}").unwrap();
        }
        writeln!(out, "{}", self.header.join(",")).unwrap();
        for r in &self.rows {
            writeln!(out, "{r}").unwrap();
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_file(path, self.render().as_bytes())
    }
}

/// A CSV file as written by [`CsvTable`], read back as text cells.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedTable {
    pub meta: Vec<(String, String)>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl ParsedTable {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let bad = |line: usize, message: String| Error::ConfigParse {
            path: origin.to_path_buf(),
            line,
            column: 1,
            message,
        };
        let mut meta = Vec::new();
        let mut header = None;
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if let Some(m) = line.strip_prefix("# ") {
                let (k, v) = m
                    .split_once('=')
                    .ok_or_else(|| bad(i + 1, format!("metadata line without '=': {line}")))?;
                meta.push((k.to_string(), v.to_string()));
            } else if header.is_none() {
                header = Some(line.split(',').map(str::to_string).collect::<Vec<_>>());
            } else if !line.is_empty() {
                let cells: Vec<String> = line.split(',').map(str::to_string).collect();
                let width = header.as_ref().map_or(0, Vec::len);
                if cells.len() != width {
                    return Err(bad(
                        i + 1,
                        format!("expected {width} cells, found {}", cells.len()),
                    ));
                }
                rows.push(cells);
            }
        }
        let header = header.ok_or_else(|| bad(1, "missing header row".into()))?;
        Ok(Self { meta, header, rows })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    /// Parses one column, failing on the first malformed cell.
    pub fn parse_column<T: std::str::FromStr>(&self, name: &str, origin: &Path) -> Result<Vec<T>> {
        let c = self.column(name).ok_or_else(|| Error::ConfigParse {
            path: origin.to_path_buf(),
            line: 1,
            column: 1,
            message: format!("missing column {name}"),
        })?;
        self.rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                r[c].parse().map_err(|_| Error::ConfigParse {
                    path: origin.to_path_buf(),
                    line: i + 2 + self.meta.len(),
                    column: c + 1,
                    message: format!("malformed {name} value {:?}", r[c]),
                })
            })
            .collect()
    }
}

/// One rendered CSV cell.
pub struct Cell(String);

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell(fmt_f64(v))
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell(v.to_string())
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell(v.to_string())
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell(v.to_string())
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell(v)
    }
}

/// Writes through a temporary file so readers never see a partial artifact.
pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    let tmp = path.with_extension("partial");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits_round_trip() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 123456.789, std::f64::consts::PI] {
            let s = fmt_f64(v);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), v.to_bits());
        }
        assert_eq!(fmt_f64(1.0), "1.0000000000000000e0");
    }

    #[test]
    fn table_render() {
        let mut t = CsvTable::new(&["a", "b"]).with_meta("config_hash", "ff");
        t.push([Cell::from(1usize), Cell::from(0.5)]);
        assert_eq!(
            t.render(),
            "# config_hash=ff\na,b\n1,5.0000000000000000e-1\n"
        );
    }

    #[test]
    fn table_parse_round_trip() {
        let mut t = CsvTable::new(&["a", "b"]).with_meta("k", "v=w");
        t.push([Cell::from(3usize), Cell::from(0.1)]);
        t.push([Cell::from(4usize), Cell::from(-2.5)]);
        let p = ParsedTable::parse(&t.render(), Path::new("t.csv")).unwrap();
        assert_eq!(p.meta("k"), Some("v=w"));
        assert_eq!(
            p.parse_column::<usize>("a", Path::new("t.csv")).unwrap(),
            vec![3, 4]
        );
        assert_eq!(
            p.parse_column::<f64>("b", Path::new("t.csv")).unwrap(),
            vec![0.1, -2.5]
        );
        assert!(p.parse_column::<f64>("c", Path::new("t.csv")).is_err());
        assert!(ParsedTable::parse("a,b\n1\n", Path::new("t.csv")).is_err());
    }
}
