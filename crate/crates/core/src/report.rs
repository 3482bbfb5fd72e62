//! Verification reports and plot-ready data tables.

use std::fmt::Write as _;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Which side of the threshold passes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    AtMost,
    AtLeast,
}

impl Direction {
    pub fn holds(self, statistic: f64, threshold: f64) -> bool {
        match self {
            Direction::AtMost => statistic <= threshold,
            Direction::AtLeast => statistic >= threshold,
        }
    }

    fn symbol(self) -> &'static str {
        match self {
            Direction::AtMost => "<=",
            Direction::AtLeast => ">=",
        }
    }
}

/// Named columns of reals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl DataTable {
    pub fn new(columns: &[&str]) -> Self {
        DataTable { columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        assert_eq!(row.len(), self.columns.len(), "row width");
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "{}", self.columns.join(","))?;
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
            writeln!(out, "{}", cells.join(","))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub check_name: String,
    pub parameters: Value,
    pub statistic: f64,
    pub threshold: f64,
    pub direction: Direction,
    pub pass: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub artifacts: Option<DataTable>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl VerificationReport {
    /// `pass` is derived; a NaN statistic never passes.
    pub fn new(check_name: &str, parameters: Value, statistic: f64, threshold: f64, direction: Direction) -> Self {
        VerificationReport {
            check_name: check_name.to_string(),
            parameters,
            statistic,
            threshold,
            direction,
            pass: !statistic.is_nan() && direction.holds(statistic, threshold),
            artifacts: None,
            notes: Vec::new(),
        }
    }

    pub fn with_table(mut self, table: DataTable) -> Self {
        self.artifacts = Some(table);
        self
    }

    pub fn note(&mut self, msg: impl Into<String>) {
        self.notes.push(msg.into());
    }

    /// Force a failure that the statistic alone does not express.
    pub fn fail(&mut self, msg: impl Into<String>) {
        self.pass = false;
        self.notes.push(msg.into());
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned human-readable form.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let status = if self.pass { "PASS" } else { "FAIL" };
        let _ = writeln!(s, "{:<28} {}", self.check_name, status);
        let _ = writeln!(
            s,
            "  {:<12} {:>14.6e} {} {:<14.6e}",
            "statistic",
            self.statistic,
            self.direction.symbol(),
            self.threshold
        );
        if let Value::Object(map) = &self.parameters {
            for (k, v) in map {
                let _ = writeln!(s, "  {:<12} {}", k, v);
            }
        }
        for n in &self.notes {
            let _ = writeln!(s, "  note: {n}");
        }
        if let Some(t) = &self.artifacts {
            let w = 14;
            let header: Vec<String> = t.columns.iter().map(|c| format!("{c:>w$}")).collect();
            let _ = writeln!(s, "  {}", header.join(" "));
            for row in &t.rows {
                let cells: Vec<String> = row.iter().map(|v| format!("{v:>w$.6e}")).collect();
                let _ = writeln!(s, "  {}", cells.join(" "));
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn pass_follows_direction() {
        assert!(VerificationReport::new("a", json!({}), 1.0, 2.0, Direction::AtMost).pass);
        assert!(!VerificationReport::new("a", json!({}), 3.0, 2.0, Direction::AtMost).pass);
        assert!(VerificationReport::new("a", json!({}), 3.0, 2.0, Direction::AtLeast).pass);
        assert!(!VerificationReport::new("a", json!({}), f64::NAN, 2.0, Direction::AtLeast).pass);
    }

    #[test]
    fn json_round_trip_and_text() {
        let mut t = DataTable::new(&["k", "Q_uk"]);
        t.push(vec![4.0, 0.5]);
        let r = VerificationReport::new("null_sequence_decay", json!({"p": 2.0}), -1.0, 0.15, Direction::AtMost).with_table(t);
        let back: VerificationReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
        let text = r.to_text();
        assert!(text.contains("PASS") && text.contains("Q_uk"));
        let mut csv = Vec::new();
        r.artifacts.unwrap().write_csv(&mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap(), "k,Q_uk\n4e0,5e-1\n");
    }
}
