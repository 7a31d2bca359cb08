//! Result rows, harness checks and CSV output.
//!
//! CSV columns, in order: `experiment, seed, m, method, metric, value,
//! wall_time_s, trainable_params`. One row per (method, seed, m, metric). `m`
//! is the random-feature count, or 0 for networks without random features.
//! `wall_time_s` is informational: it is the only column that varies between
//! runs of the same configuration.

use std::fmt;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::config::ExperimentKind;

#[derive(Debug, thiserror::Error)]
pub enum ResultError {
    #[error("metric {metric} for {method} (seed {seed}, m {m}) is not finite: {value}")]
    NonFinite {
        method: Method,
        metric: String,
        seed: u64,
        m: usize,
        value: f64,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Method {
    #[serde(rename = "MAG_ORF")]
    MagOrf,
    #[serde(rename = "MAG_IID")]
    MagIid,
    #[serde(rename = "SNNK")]
    Snnk,
    #[serde(rename = "BASELINE")]
    Baseline,
    #[serde(rename = "DENSE_DR")]
    DenseDr,
}

impl Method {
    pub fn tag(self) -> &'static str {
        match self {
            Method::MagOrf => "MAG_ORF",
            Method::MagIid => "MAG_IID",
            Method::Snnk => "SNNK",
            Method::Baseline => "BASELINE",
            Method::DenseDr => "DENSE_DR",
        }
    }

    pub fn mag(ensemble: magnituder::EnsembleKind) -> Self {
        match ensemble {
            magnituder::EnsembleKind::IidGaussian => Method::MagIid,
            magnituder::EnsembleKind::BlockOrthogonal => Method::MagOrf,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub experiment: &'static str,
    pub seed: u64,
    pub m: usize,
    pub method: Method,
    pub metric: String,
    pub value: f64,
    pub wall_time_s: f64,
    pub trainable_params: usize,
}

/// Pass/fail line evaluated by the harness on its own results.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    /// Informational checks are reported but do not make a run fail.
    pub informational: bool,
}

impl Check {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
            informational: false,
        }
    }

    pub fn informational(self) -> Self {
        Self {
            informational: true,
            ..self
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        let info = if self.informational {
            " (informational)"
        } else {
            ""
        };
        write!(f, "{verdict}: {}{info} — {}", self.name, self.detail)
    }
}

/// Rows and checks produced by one experiment run.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub experiment: ExperimentKind,
    rows: Vec<ResultRow>,
    pub checks: Vec<Check>,
}

impl Report {
    pub fn new(experiment: ExperimentKind) -> Self {
        Self {
            experiment,
            rows: Vec::new(),
            checks: Vec::new(),
        }
    }

    /// Appends a row, rejecting non-finite values.
    #[allow(clippy::too_many_arguments)]
    pub fn push(
        &mut self,
        seed: u64,
        m: usize,
        method: Method,
        metric: impl Into<String>,
        value: f64,
        wall_time_s: f64,
        trainable_params: usize,
    ) -> Result<(), ResultError> {
        let metric = metric.into();
        if !value.is_finite() {
            return Err(ResultError::NonFinite {
                method,
                metric,
                seed,
                m,
                value,
            });
        }
        self.rows.push(ResultRow {
            experiment: self.experiment.id(),
            seed,
            m,
            method,
            metric,
            value,
            wall_time_s,
            trainable_params,
        });
        Ok(())
    }

    pub fn check(&mut self, check: Check) {
        self.checks.push(check);
    }

    /// Rows in canonical order: stably sorted by (experiment, seed, m).
    pub fn rows(&self) -> Vec<&ResultRow> {
        let mut rows: Vec<&ResultRow> = self.rows.iter().collect();
        rows.sort_by(|a, b| (a.experiment, a.seed, a.m).cmp(&(b.experiment, b.seed, b.m)));
        rows
    }

    /// Values of `metric` for `method`, in canonical row order.
    pub fn values(&self, method: Method, metric: &str) -> Vec<&ResultRow> {
        self.rows()
            .into_iter()
            .filter(|r| r.method == method && r.metric == metric)
            .collect()
    }

    /// The single value matching (method, seed, m, metric), if present.
    pub fn value(&self, method: Method, seed: u64, m: usize, metric: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.seed == seed && r.m == m && r.metric == metric)
            .map(|r| r.value)
    }

    /// Whether every non-informational check passed.
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed || c.informational)
    }

    pub fn write_csv(&self, out: impl Write) -> Result<(), ResultError> {
        let mut w = csv::Writer::from_writer(out);
        for row in self.rows() {
            w.serialize(row)?;
        }
        // An empty report still gets its header row.
        if self.rows.is_empty() {
            w.write_record(COLUMNS)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String, ResultError> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is UTF-8"))
    }

    /// Writes `<dir>/<experiment>.csv`, creating `dir` if needed.
    pub fn save(&self, dir: &Path) -> Result<std::path::PathBuf, ResultError> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(format!("{}.csv", self.experiment.id()));
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(&path)?))?;
        Ok(path)
    }

    /// Human-readable summary: one line per check.
    pub fn summary(&self) -> String {
        let mut s = format!("{}: {} rows\n", self.experiment, self.rows.len());
        for c in &self.checks {
            s.push_str(&c.to_string());
            s.push('\n');
        }
        s
    }
}

/// Exact CSV header.
pub const COLUMNS: [&str; 8] = [
    "experiment",
    "seed",
    "m",
    "method",
    "metric",
    "value",
    "wall_time_s",
    "trainable_params",
];

/// Drops the informational `wall_time_s` column from CSV text, leaving the
/// part that must be byte-identical across runs.
pub fn deterministic_columns(csv_text: &str) -> String {
    let wall = COLUMNS
        .iter()
        .position(|c| *c == "wall_time_s")
        .expect("column exists");
    csv_text
        .lines()
        .map(|line| {
            line.split(',')
                .enumerate()
                .filter(|(i, _)| *i != wall)
                .map(|(_, f)| f)
                .collect::<Vec<_>>()
                .join(",")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_has_exact_header_and_canonical_order() {
        let mut r = Report::new(ExperimentKind::SynthApprox);
        r.push(1, 16, Method::MagOrf, "relu_final_mse", 0.5, 1.25, 10)
            .unwrap();
        r.push(0, 32, Method::MagIid, "relu_final_mse", 0.25, 0.5, 20)
            .unwrap();
        r.push(0, 8, Method::Baseline, "relu_final_mse", 1.0, 0.0, 0)
            .unwrap();
        let text = r.to_csv_string().unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], COLUMNS.join(","));
        assert_eq!(
            lines[1],
            "synth-approx,0,8,BASELINE,relu_final_mse,1.0,0.0,0"
        );
        assert_eq!(
            lines[2],
            "synth-approx,0,32,MAG_IID,relu_final_mse,0.25,0.5,20"
        );
        assert_eq!(
            lines[3],
            "synth-approx,1,16,MAG_ORF,relu_final_mse,0.5,1.25,10"
        );
        assert_eq!(
            deterministic_columns(&text).lines().nth(1).unwrap(),
            "synth-approx,0,8,BASELINE,relu_final_mse,1.0,0"
        );
    }

    #[test]
    fn empty_report_still_has_header() {
        let r = Report::new(ExperimentKind::VarianceStudy);
        assert_eq!(r.to_csv_string().unwrap().trim_end(), COLUMNS.join(","));
    }

    #[test]
    fn non_finite_values_are_rejected() {
        let mut r = Report::new(ExperimentKind::VarianceStudy);
        assert!(r.push(0, 1, Method::MagOrf, "x", f64::NAN, 0.0, 0).is_err());
        assert!(r
            .push(0, 1, Method::MagOrf, "x", f64::INFINITY, 0.0, 0)
            .is_err());
        assert!(r.rows().is_empty());
    }

    #[test]
    fn informational_failures_do_not_fail_a_run() {
        let mut r = Report::new(ExperimentKind::FuseBench);
        r.check(Check::new("trend", false, "x").informational());
        assert!(r.passed());
        r.check(Check::new("hard", false, "y"));
        assert!(!r.passed());
        assert!(r.summary().contains("FAIL: hard — y"));
    }
}
