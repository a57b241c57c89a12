//! Key-value report files with `[series name]` blocks of one value per line.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Report {
    pub entries: Vec<(String, String)>,
    pub series: Vec<(String, Vec<f64>)>,
}

impl Report {
    pub fn put(&mut self, key: &str, value: impl ToString) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    pub fn put_series(&mut self, name: &str, values: Vec<f64>) {
        self.series.push((name.to_string(), values));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn get_series(&self, name: &str) -> Option<&[f64]> {
        self.series.iter().find(|(k, _)| k == name).map(|(_, v)| v.as_slice())
    }

    /// Appends a config snapshot with every key prefixed by `config.`.
    pub fn put_config(&mut self, config_text: &str) {
        for line in config_text.lines() {
            if let Some((k, v)) = line.split_once('=') {
                self.put(&format!("config.{}", k.trim()), v.trim());
            }
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.entries {
            writeln!(s, "{k} = {v}").expect("string write");
        }
        for (name, values) in &self.series {
            writeln!(s, "[series {name}]").expect("string write");
            for v in values {
                writeln!(s, "{v:?}").expect("string write");
            }
            s.push_str("[end]\n");
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut r = Report::default();
        let mut current: Option<(String, Vec<f64>)> = None;
        for (i, line) in text.lines().enumerate() {
            let bad = || Error::Data(format!("report line {}: unexpected '{line}'", i + 1));
            if let Some((name, values)) = current.as_mut() {
                if line == "[end]" {
                    r.series.push((std::mem::take(name), std::mem::take(values)));
                    current = None;
                } else {
                    values.push(line.trim().parse().map_err(|_| bad())?);
                }
            } else if let Some(name) = line.strip_prefix("[series ").and_then(|l| l.strip_suffix(']')) {
                current = Some((name.to_string(), Vec::new()));
            } else if !line.trim().is_empty() {
                let (k, v) = line.split_once(" = ").ok_or_else(bad)?;
                r.put(k, v);
            }
        }
        if current.is_some() {
            return Err(Error::Data("report ends inside a series block".into()));
        }
        Ok(r)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_exact_values() {
        let mut r = Report::default();
        r.put("kind", "bench");
        r.put("mean_ms", 0.1 + 0.2);
        r.put_series("latency_ms", vec![1.0 / 3.0, 2.5e-9, 7.0]);
        let back = Report::parse(&r.to_text()).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.get_series("latency_ms").unwrap()[0], 1.0 / 3.0);
        assert!(Report::parse("[series x]\n1\n").is_err());
    }
}
