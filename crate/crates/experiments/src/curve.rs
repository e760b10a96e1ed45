//! Curve files: `#`-prefixed `key = value` metadata, the echoed config on
//! `#|` lines, then a comma-separated table with a header row. Missing
//! values are empty cells. Floats use the shortest round-trip form, so a
//! re-run writes byte-identical files.

use std::fmt::Write as _;
use std::path::Path;

use crate::CliError;

pub const FORMAT_TAG: &str = "sgdvi-curve";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CurveFile {
    pub meta: Vec<(String, String)>,
    pub config: Option<String>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Option<f64>>>,
}

impl CurveFile {
    pub fn new(columns: &[&str]) -> Self {
        CurveFile {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            ..Default::default()
        }
    }

    pub fn meta(&mut self, key: &str, value: impl std::fmt::Display) -> &mut Self {
        self.meta.push((key.to_string(), value.to_string()));
        self
    }

    /// Floats use the shortest round-trip form with an exponent for extremes.
    pub fn meta_f64(&mut self, key: &str, value: f64) -> &mut Self {
        self.meta(key, format!("{value:?}"))
    }

    pub fn get_meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn push(&mut self, row: Vec<Option<f64>>) {
        assert_eq!(row.len(), self.columns.len(), "row width");
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<Option<f64>>> {
        let j = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        writeln!(s, "# {FORMAT_TAG} {FORMAT_VERSION}").unwrap();
        writeln!(s, "# code_version = {}", env!("CARGO_PKG_VERSION")).unwrap();
        for (k, v) in &self.meta {
            writeln!(s, "# {k} = {v}").unwrap();
        }
        if let Some(cfg) = &self.config {
            for line in cfg.lines() {
                writeln!(s, "#| {line}").unwrap();
            }
        }
        writeln!(s, "{}", self.columns.join(",")).unwrap();
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|c| c.map(|v| format!("{v:?}")).unwrap_or_default()).collect();
            writeln!(s, "{}", cells.join(",")).unwrap();
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        std::fs::write(path, self.render()).map_err(|e| CliError::Run(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let bad = |m: String| CliError::Config(format!("curve file: {m}"));
        let mut lines = text.lines();
        let first = lines.next().ok_or_else(|| bad("empty".into()))?;
        if first != format!("# {FORMAT_TAG} {FORMAT_VERSION}") {
            return Err(bad(format!("unrecognized header `{first}`")));
        }
        let mut out = CurveFile::default();
        let mut config = String::new();
        let mut columns_seen = false;
        for line in lines {
            if let Some(c) = line.strip_prefix("#|") {
                config.push_str(c.strip_prefix(' ').unwrap_or(c));
                config.push('\n');
            } else if let Some(m) = line.strip_prefix("# ") {
                let (k, v) = m.split_once(" = ").ok_or_else(|| bad(format!("bad metadata `{line}`")))?;
                if k != "code_version" {
                    out.meta.push((k.to_string(), v.to_string()));
                }
            } else if !columns_seen {
                out.columns = line.split(',').map(str::to_string).collect();
                columns_seen = true;
            } else {
                let row = line
                    .split(',')
                    .map(|c| {
                        if c.is_empty() {
                            Ok(None)
                        } else {
                            c.parse::<f64>().map(Some).map_err(|_| bad(format!("bad cell `{c}`")))
                        }
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                if row.len() != out.columns.len() {
                    return Err(bad(format!("row has {} cells, expected {}", row.len(), out.columns.len())));
                }
                out.rows.push(row);
            }
        }
        if !config.is_empty() {
            out.config = Some(config);
        }
        Ok(out)
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut c = CurveFile::new(&["x", "y"]);
        c.meta("command", "train").meta("argmax", 3);
        c.config = Some("[run]\nalpha = 0.1\n".into());
        c.push(vec![Some(0.0), Some(0.1 + 0.2)]);
        c.push(vec![Some(1.0), None]);
        c.push(vec![Some(f64::NEG_INFINITY), Some(-1e-300)]);
        let back = CurveFile::parse(&c.render()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.get_meta("argmax"), Some("3"));
        assert_eq!(back.column("y").unwrap()[0], Some(0.30000000000000004));
    }

    #[test]
    fn rejects_foreign_files() {
        assert!(CurveFile::parse("x,y\n1,2\n").is_err());
        assert!(CurveFile::parse(&format!("# {FORMAT_TAG} {FORMAT_VERSION}\nx,y\n1\n")).is_err());
    }
}
