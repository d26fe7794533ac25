//! Versioned CSV report assembly.
//!
//! Reports are built in memory and written in one shot, so a run that errors
//! half-way leaves no partial file behind. The first line is always a
//! `# pwmini <kind> csv v<N>` version comment; readers can dispatch on it.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use pwmini::Result;

pub struct Report {
    lines: Vec<String>,
}

impl Report {
    pub fn new(kind: &str, version: u32) -> Self {
        Report {
            lines: vec![format!("# pwmini {kind} csv v{version}")],
        }
    }

    pub fn comment(&mut self, text: &str) {
        self.lines.push(format!("# {text}"));
    }

    pub fn header(&mut self, fields: &[&str]) {
        self.lines.push(fields.join(","));
    }

    pub fn row(&mut self, fields: Vec<String>) {
        self.lines.push(fields.join(","));
    }

    /// Writes the report to `out`, or to stdout when `None`.
    pub fn write(&self, out: Option<&Path>) -> Result<()> {
        let mut text = self.lines.join("\n");
        text.push('\n');
        match out {
            Some(path) => fs::write(path, text)?,
            None => io::stdout().write_all(text.as_bytes())?,
        }
        Ok(())
    }
}

/// Wall-clock column: real seconds when measuring, exactly `0.000000e0`
/// otherwise, so unmeasured runs stay byte-reproducible.
pub fn fmt_secs(measure: bool, secs: f64) -> String {
    format!("{:.6e}", if measure { secs } else { 0.0 })
}

/// Full-fidelity float column (shortest round-trip form).
pub fn fmt_float(v: f64) -> String {
    format!("{v:e}")
}

pub fn verdict(ok: bool) -> &'static str {
    if ok {
        "OK"
    } else {
        "FAIL"
    }
}
