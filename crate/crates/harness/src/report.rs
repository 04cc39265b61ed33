//! Metric reports.
//!
//! Text form, one metric per line, tab separated:
//!
//! ```text
//! # styleadapt-report v1
//! # command <name>
//! name	value	unit
//! level0.fusions	196	count
//! ```
//!
//! Values are written with Rust's shortest round-trip float formatting, so
//! `parse_text(to_text(r)) == r` bit for bit. Names contain no whitespace.
//! The JSON summary carries the same metrics plus the resolved config
//! (without the output directory).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{write_file, HarnessError, Result};

const MAGIC_LINE: &str = "# styleadapt-report v1";
const COLUMNS_LINE: &str = "name\tvalue\tunit";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub name: String,
    pub value: f64,
    pub unit: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Report {
    pub command: String,
    pub metrics: Vec<Metric>,
}

#[derive(Debug, Serialize)]
struct Summary<'a> {
    command: &'a str,
    config: serde_json::Value,
    metrics: &'a [Metric],
}

impl Report {
    pub fn new(command: impl Into<String>) -> Self {
        Self {
            command: command.into(),
            metrics: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, value: f64, unit: &str) {
        let name = name.into();
        debug_assert!(!name.is_empty() && !name.contains(char::is_whitespace));
        self.metrics.push(Metric { name, value, unit: unit.to_owned() });
    }

    pub fn push_count(&mut self, name: impl Into<String>, value: usize) {
        self.push(name, value as f64, "count");
    }

    pub fn push_flag(&mut self, name: impl Into<String>, value: bool) {
        self.push(name, f64::from(u8::from(value)), "bool");
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.metrics.iter().find(|m| m.name == name).map(|m| m.value)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{MAGIC_LINE}\n# command {}\n{COLUMNS_LINE}\n", self.command);
        for m in &self.metrics {
            out.push_str(&format!("{}\t{}\t{}\n", m.name, m.value, m.unit));
        }
        out
    }

    pub fn parse_text(text: &str) -> Result<Self> {
        let err = |line: usize, msg: String| HarnessError::parse(format!("report line {line}"), msg);
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, l)) if l == MAGIC_LINE => {}
            _ => return Err(err(1, "missing report header".into())),
        }
        let command = match lines.next() {
            Some((_, l)) => l
                .strip_prefix("# command ")
                .ok_or_else(|| err(2, "missing command line".into()))?
                .to_owned(),
            None => return Err(err(2, "missing command line".into())),
        };
        match lines.next() {
            Some((_, l)) if l == COLUMNS_LINE => {}
            _ => return Err(err(3, "missing column header".into())),
        }
        let mut metrics = Vec::new();
        for (i, line) in lines {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let [name, value, unit] = fields[..] else {
                return Err(err(i + 1, format!("expected 3 tab-separated fields, got {}", fields.len())));
            };
            let value = value
                .parse::<f64>()
                .map_err(|e| err(i + 1, format!("bad value `{value}`: {e}")))?;
            metrics.push(Metric { name: name.to_owned(), value, unit: unit.to_owned() });
        }
        Ok(Self { command, metrics })
    }

    /// JSON summary. The output directory is left out of the echoed config so
    /// identical runs written to different places produce identical files.
    pub fn summary_json(&self, config: &RunConfig) -> String {
        let mut config = serde_json::to_value(config).expect("RunConfig always serializes");
        if let Some(map) = config.as_object_mut() {
            map.remove("out_dir");
        }
        serde_json::to_string_pretty(&Summary {
            command: &self.command,
            config,
            metrics: &self.metrics,
        })
        .expect("summary always serializes")
    }

    /// Writes `<stem>.txt` and `<stem>.json` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str, config: &RunConfig) -> Result<()> {
        write_file(&dir.join(format!("{stem}.txt")), self.to_text().as_bytes())?;
        write_file(&dir.join(format!("{stem}.json")), self.summary_json(config).as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip_is_exact() {
        let mut r = Report::new("bench");
        r.push("a.mean", 0.1 + 0.2, "ms");
        r.push("tiny", 1.234e-300, "1");
        r.push("neg", -7.0, "1");
        r.push_count("runs", 500);
        r.push_flag("ok", true);
        let back = Report::parse_text(&r.to_text()).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.get("runs"), Some(500.0));
    }

    #[test]
    fn malformed_text_is_rejected() {
        assert!(Report::parse_text("").is_err());
        assert!(Report::parse_text("# styleadapt-report v1\n# command x\nname\tvalue\tunit\na\tb\tc\n").is_err());
        assert!(Report::parse_text("# styleadapt-report v1\n# command x\nname\tvalue\tunit\na\t1\n").is_err());
    }

    proptest::proptest! {
        #[test]
        fn any_finite_report_round_trips(
            command in "[a-z][a-z-]{0,12}",
            metrics in proptest::collection::vec(("[a-z0-9_.]{1,16}", proptest::num::f64::NORMAL | proptest::num::f64::ZERO, "[a-z]{1,5}"), 0..20),
        ) {
            let mut r = Report::new(command);
            for (name, value, unit) in metrics {
                r.push(name, value, &unit);
            }
            proptest::prop_assert_eq!(Report::parse_text(&r.to_text()).unwrap(), r);
        }
    }

    #[test]
    fn summary_is_valid_json() {
        let mut r = Report::new("x");
        r.push("m", 1.5, "1");
        let v: serde_json::Value = serde_json::from_str(&r.summary_json(&RunConfig::default())).unwrap();
        assert_eq!(v["metrics"][0]["value"], 1.5);
        assert_eq!(v["config"]["k"], 4);
    }
}
