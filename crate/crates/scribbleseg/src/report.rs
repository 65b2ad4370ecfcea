//! Plain-text stage reports.
//!
//! A report is an ordered list of `key = value` lines under a title
//! comment. The format is stable on purpose: values are written with fixed
//! float precision and keys appear in insertion order, so a report is
//! byte-identical across runs and diffs cleanly. Reports never contain
//! wall-clock times or host details.

use std::fmt::Display;
use std::fs;
use std::path::Path;

use crate::error::{io_at, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Report {
    title: String,
    lines: Vec<(String, String)>,
}

impl Report {
    pub fn new(title: impl Into<String>) -> Self {
        Report {
            title: title.into(),
            lines: Vec::new(),
        }
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl Display) {
        self.lines.push((key.into(), value.to_string()));
    }

    /// Floats get six decimals so equal runs produce equal bytes.
    pub fn set_f64(&mut self, key: impl Into<String>, value: f64) {
        self.lines.push((key.into(), format!("{value:.6}")));
    }

    /// Absent values are written as `n/a` rather than omitted, keeping the
    /// line set predictable.
    pub fn set_opt_f64(&mut self, key: impl Into<String>, value: Option<f64>) {
        match value {
            Some(v) => self.set_f64(key, v),
            None => self.set(key, "n/a"),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.lines
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn render(&self) -> String {
        let mut out = format!("# {}\n", self.title);
        for (k, v) in &self.lines {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(v);
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(io_at(parent))?;
        }
        fs::write(path, self.render()).map_err(io_at(path))
    }

    /// Reads `key = value` lines back; `#` lines and blanks are skipped.
    pub fn parse(text: &str) -> Vec<(String, String)> {
        text.lines()
            .filter(|l| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
            .filter_map(|l| {
                l.split_once(" = ")
                    .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
            })
            .collect()
    }
}
