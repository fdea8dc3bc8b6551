use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// How a metric's `value` is judged against `expected` and `tolerance`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparison {
    /// `|value - expected| <= tolerance`.
    Within,
    /// `value <= expected + tolerance`, for one-sided bounds.
    AtMost,
    /// Boolean outcome encoded as 1.0 / 0.0 against expected 1.0.
    Predicate,
    /// Reported for reference; `expected` echoes `value`.
    Info,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub metric: String,
    pub value: f64,
    pub expected: f64,
    pub tolerance: f64,
    pub comparison: Comparison,
    pub pass: bool,
}

impl Metric {
    pub fn within(metric: impl Into<String>, value: f64, expected: f64, tolerance: f64) -> Self {
        let pass = (value - expected).abs() <= tolerance;
        Metric { metric: metric.into(), value, expected, tolerance, comparison: Comparison::Within, pass }
    }

    pub fn at_most(metric: impl Into<String>, value: f64, bound: f64, slack: f64) -> Self {
        let pass = value <= bound + slack;
        Metric { metric: metric.into(), value, expected: bound, tolerance: slack, comparison: Comparison::AtMost, pass }
    }

    pub fn predicate(metric: impl Into<String>, ok: bool) -> Self {
        let value = if ok { 1.0 } else { 0.0 };
        Metric {
            metric: metric.into(),
            value,
            expected: 1.0,
            tolerance: 0.0,
            comparison: Comparison::Predicate,
            pass: ok,
        }
    }

    pub fn info(metric: impl Into<String>, value: f64) -> Self {
        Metric {
            metric: metric.into(),
            value,
            expected: value,
            tolerance: 0.0,
            comparison: Comparison::Info,
            pass: true,
        }
    }

    /// Recomputes `pass` from the other fields.
    pub fn is_consistent(&self) -> bool {
        let recomputed = match self.comparison {
            Comparison::Within => (self.value - self.expected).abs() <= self.tolerance,
            Comparison::AtMost => self.value <= self.expected + self.tolerance,
            Comparison::Predicate => self.value == 1.0,
            Comparison::Info => true,
        };
        recomputed == self.pass
    }
}

/// The parts of the configuration that determine the results. Worker
/// count and output location are deliberately absent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub name: String,
    pub l: u32,
    #[serde(rename = "N")]
    pub n: Option<u64>,
    pub seed: u64,
    pub tolerances: BTreeMap<String, f64>,
}

/// A CSV table emitted next to the report.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Table {
    pub header: String,
    pub rows: Vec<String>,
}

impl Table {
    pub fn new(header: impl Into<String>) -> Self {
        Table { header: header.into(), rows: Vec::new() }
    }

    pub fn to_csv(&self) -> String {
        let mut out =
            String::with_capacity(self.header.len() + 1 + self.rows.iter().map(|r| r.len() + 1).sum::<usize>());
        out.push_str(&self.header);
        out.push('\n');
        for row in &self.rows {
            out.push_str(row);
            out.push('\n');
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config: ConfigEcho,
    pub results: Vec<Metric>,
    pub runtime_ms: u64,
    pub version: String,
    #[serde(skip)]
    pub table: Option<Table>,
}

impl Report {
    pub fn all_pass(&self) -> bool {
        self.results.iter().all(|m| m.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Metric> {
        self.results.iter().filter(|m| !m.pass)
    }

    pub fn metric(&self, name: &str) -> Option<&Metric> {
        self.results.iter().find(|m| m.metric == name)
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }

    /// JSON with `runtime_ms` zeroed: equal for equal (config, seed,
    /// version) whatever the worker count.
    pub fn canonical_json(&self) -> serde_json::Result<String> {
        Report { runtime_ms: 0, table: None, ..self.clone() }.to_json()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constructors_are_consistent() {
        for m in [
            Metric::within("a", 0.5, 0.52, 0.03),
            Metric::within("b", 0.5, 0.6, 0.03),
            Metric::at_most("c", 1.0, 0.5, 0.6),
            Metric::at_most("d", 1.0, 0.5, 0.1),
            Metric::predicate("e", true),
            Metric::predicate("f", false),
            Metric::info("g", 7.0),
        ] {
            assert!(m.is_consistent(), "{m:?}");
        }
        assert!(!Metric::within("b", 0.5, 0.6, 0.03).pass);
        assert!(Metric::at_most("c", 1.0, 0.5, 0.6).pass);
    }

    #[test]
    fn json_round_trip_and_canonical_timing() {
        let rep = Report {
            config: ConfigEcho { name: "x".into(), l: 3, n: Some(10), seed: 1, tolerances: BTreeMap::new() },
            results: vec![Metric::within("m", 0.1, 0.1, 0.0)],
            runtime_ms: 42,
            version: "0.0.0".into(),
            table: Some(Table::new("a,b")),
        };
        let back: Report = serde_json::from_str(&rep.to_json().unwrap()).unwrap();
        assert_eq!(back, Report { table: None, ..rep.clone() });
        assert!(rep.canonical_json().unwrap().contains("\"runtime_ms\": 0"));
        assert!(rep.to_json().unwrap().contains("\"N\": 10"));
    }

    #[test]
    fn csv_has_trailing_newline() {
        let mut t = Table::new("a,b");
        t.rows.push("1,2".into());
        assert_eq!(t.to_csv(), "a,b\n1,2\n");
    }
}
