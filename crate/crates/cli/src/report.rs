//! Machine-readable report tree, human summary and CSV series.

use std::fmt::Write as _;
use std::io;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use sha2::{Digest, Sha256};
use toml::{Table, Value};

/// Key-value result tree plus summary lines.
///
/// Summary lines are produced by [`Report::claim`], which also stores the
/// value in the tree, so every number in the summary can be found in the tree.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Report {
    pub tree: Table,
    pub summary: Vec<String>,
}

pub fn complex(z: Complex64) -> Value {
    Value::Array(vec![Value::Float(z.re), Value::Float(z.im)])
}

pub fn floats(v: impl IntoIterator<Item = f64>) -> Value {
    Value::Array(v.into_iter().map(Value::Float).collect())
}

pub fn complexes(v: impl IntoIterator<Item = Complex64>) -> Value {
    Value::Array(v.into_iter().map(complex).collect())
}

/// Shortest round-trip form, in scientific notation when very small or large.
pub fn format_float(f: f64) -> String {
    let a = f.abs();
    if a != 0.0 && a.is_finite() && !(1e-4..1e7).contains(&a) {
        format!("{f:e}")
    } else {
        format!("{f}")
    }
}

pub fn format_complex(z: Complex64) -> String {
    let (re, im) = (format_float(z.re), format_float(z.im.abs()));
    if z.im == 0.0 {
        re
    } else if z.im < 0.0 {
        format!("{re}-{im}i")
    } else {
        format!("{re}+{im}i")
    }
}

fn display(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Float(f) => format_float(*f),
        Value::Integer(i) => i.to_string(),
        Value::Boolean(b) => b.to_string(),
        Value::Array(a) if a.len() == 2 && a.iter().all(|x| x.is_float()) => {
            format_complex(Complex64::new(a[0].as_float().unwrap(), a[1].as_float().unwrap()))
        }
        other => other.to_string(),
    }
}

impl Report {
    pub fn new(command: &str) -> Self {
        let mut r = Self::default();
        r.set("command", command);
        r
    }

    /// Stores `value` at a dotted path, creating intermediate tables.
    pub fn set(&mut self, path: &str, value: impl Into<Value>) {
        let mut parts: Vec<&str> = path.split('.').collect();
        let last = parts.pop().expect("non-empty path");
        let mut table = &mut self.tree;
        for p in parts {
            table = table
                .entry(p.to_string())
                .or_insert_with(|| Value::Table(Table::new()))
                .as_table_mut()
                .unwrap_or_else(|| panic!("`{p}` is not a table"));
        }
        table.insert(last.to_string(), value.into());
    }

    pub fn get(&self, path: &str) -> Option<&Value> {
        let mut parts = path.split('.');
        let mut cur = self.tree.get(parts.next()?)?;
        for p in parts {
            cur = cur.as_table()?.get(p)?;
        }
        Some(cur)
    }

    /// Stores the value and adds `label: value` to the summary.
    pub fn claim(&mut self, path: &str, label: &str, value: impl Into<Value>) {
        let value = value.into();
        self.summary.push(format!("{label}: {}", display(&value)));
        self.set(path, value);
    }

    /// Free-text summary line without numbers of its own.
    pub fn note(&mut self, line: impl Into<String>) {
        self.summary.push(line.into());
    }

    /// Hash of the command line and input files, tool version and seed.
    pub fn provenance(&mut self, config: &str, inputs: &[(String, Vec<u8>)], seed: Option<u64>) {
        let mut h = Sha256::new();
        h.update(config.as_bytes());
        for (name, bytes) in inputs {
            h.update(name.as_bytes());
            h.update((bytes.len() as u64).to_le_bytes());
            h.update(bytes);
        }
        self.set("provenance.config_hash", hex::encode(h.finalize()));
        self.set("provenance.config", config);
        self.set("provenance.version", env!("CARGO_PKG_VERSION"));
        if let Some(s) = seed {
            self.set("provenance.seed", s as i64);
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&self.tree).expect("report serializes")
    }

    pub fn summary_text(&self) -> String {
        let mut s = String::new();
        for l in &self.summary {
            let _ = writeln!(s, "{l}");
        }
        s
    }

    /// Writes `report.toml` and `summary.txt` into `dir`.
    pub fn write(&self, dir: &Path) -> io::Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let report = dir.join("report.toml");
        std::fs::write(&report, self.to_toml())?;
        let summary = dir.join("summary.txt");
        std::fs::write(&summary, self.summary_text())?;
        Ok(vec![report, summary])
    }
}

/// Comma-separated table with a header row; floats in shortest round-trip form.
pub fn csv_string(header: &[String], rows: &[Vec<f64>]) -> String {
    let mut s = header.join(",");
    s.push('\n');
    for r in rows {
        let cells: Vec<String> = r.iter().map(|v| format!("{v}")).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}

pub fn write_csv(path: &Path, header: &[String], rows: &[Vec<f64>]) -> io::Result<PathBuf> {
    if let Some(p) = path.parent() {
        std::fs::create_dir_all(p)?;
    }
    std::fs::write(path, csv_string(header, rows))?;
    Ok(path.to_path_buf())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn claims_land_in_tree() {
        let mut r = Report::new("analyze");
        r.claim("result.rank", "rank", 3i64);
        r.claim("result.lambda", "lambda", complex(Complex64::new(1.5, -2.0)));
        assert_eq!(r.get("result.rank"), Some(&Value::Integer(3)));
        r.claim("result.residual", "residual", 2.5e-17);
        assert_eq!(r.summary, vec!["rank: 3", "lambda: 1.5-2i", "residual: 2.5e-17"]);
        let text = r.to_toml();
        let back: Table = toml::from_str(&text).unwrap();
        assert_eq!(back, r.tree);
    }

    #[test]
    fn provenance_is_deterministic() {
        let mk = || {
            let mut r = Report::new("x");
            r.provenance("x --seed 1", &[("a".into(), b"abc".to_vec())], Some(1));
            r.to_toml()
        };
        assert_eq!(mk(), mk());
        let mut other = Report::new("x");
        other.provenance("x --seed 1", &[("a".into(), b"abd".to_vec())], Some(1));
        assert_ne!(other.to_toml(), mk());
    }

    #[test]
    fn csv_layout() {
        let s = csv_string(&["t".into(), "z".into()], &[vec![0.0, 1.0], vec![0.5, 0.25]]);
        assert_eq!(s, "t,z\n0,1\n0.5,0.25\n");
    }
}
