//! Evaluation metrics and their CSV / text rendering.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldMetrics {
    pub fold: usize,
    pub tests: usize,
    pub positives: usize,
    pub true_positives: usize,
    pub false_positives: usize,
    pub opportunities: usize,
    pub rejects: usize,
    pub tpr: f64,
    pub fpr: f64,
    pub reject_rate: f64,
}

impl FoldMetrics {
    pub fn finish(&mut self) {
        self.tpr = ratio(self.true_positives, self.positives);
        self.fpr = ratio(self.false_positives, self.opportunities);
        self.reject_rate = ratio(self.rejects, self.tests);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocationMetrics {
    pub label: String,
    pub tests: usize,
    pub true_positives: usize,
    pub tpr: f64,
    pub false_positives: usize,
    pub negatives: usize,
    pub fpr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    pub title: String,
    pub config_echo: String,
    pub folds: Vec<FoldMetrics>,
    pub per_location: Vec<LocationMetrics>,
    /// (true origin, predicted label) -> count, summed over folds
    pub confusion: BTreeMap<(String, String), usize>,
    pub detection_rate: f64,
    pub fpr: f64,
    pub reject_rate: f64,
    pub fingerprint_failures: usize,
    /// mean absolute RT60 estimation error (s) when ground truth is known
    pub rt_mae: Option<f64>,
    /// excluded from the written report so reruns compare byte for byte
    pub wall_clock_s: f64,
}

pub fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

pub fn mean(v: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = v.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

fn f(v: f64) -> String {
    format!("{v:.6}")
}

impl EvaluationReport {
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{}", self.title);
        let _ = writeln!(
            s,
            "detection rate {:.4}  fpr {:.4}  reject rate {:.4}",
            self.detection_rate, self.fpr, self.reject_rate
        );
        let _ = writeln!(s, "folds {}  fingerprint failures {}", self.folds.len(), self.fingerprint_failures);
        if let Some(e) = self.rt_mae {
            let _ = writeln!(s, "rt60 estimate mean abs error {e:.4} s");
        }
        let _ = writeln!(s, "\nlocation      tests   tpr     fpr");
        for l in &self.per_location {
            let _ = writeln!(s, "{:<12} {:>6}  {:.4}  {:.4}", l.label, l.tests, l.tpr, l.fpr);
        }
        let _ = writeln!(s, "\n# config\n{}", self.config_echo);
        s
    }

    pub fn locations_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["label", "tests", "true_positives", "tpr", "false_positives", "negatives", "fpr"])?;
        for l in &self.per_location {
            w.write_record([
                l.label.clone(),
                l.tests.to_string(),
                l.true_positives.to_string(),
                f(l.tpr),
                l.false_positives.to_string(),
                l.negatives.to_string(),
                f(l.fpr),
            ])?;
        }
        into_string(w)
    }

    pub fn folds_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "fold",
            "tests",
            "positives",
            "true_positives",
            "false_positives",
            "opportunities",
            "rejects",
            "tpr",
            "fpr",
            "reject_rate",
        ])?;
        for m in &self.folds {
            w.write_record([
                m.fold.to_string(),
                m.tests.to_string(),
                m.positives.to_string(),
                m.true_positives.to_string(),
                m.false_positives.to_string(),
                m.opportunities.to_string(),
                m.rejects.to_string(),
                f(m.tpr),
                f(m.fpr),
                f(m.reject_rate),
            ])?;
        }
        into_string(w)
    }

    pub fn confusion_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["origin", "predicted", "count"])?;
        for ((a, b), n) in &self.confusion {
            w.write_record([a.as_str(), b.as_str(), &n.to_string()])?;
        }
        into_string(w)
    }

    /// summary.txt, locations.csv, folds.csv, confusion.csv under `dir`;
    /// wall-clock goes to timing.txt.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("summary.txt"), self.summary())?;
        std::fs::write(dir.join("locations.csv"), self.locations_csv()?)?;
        std::fs::write(dir.join("folds.csv"), self.folds_csv()?)?;
        std::fs::write(dir.join("confusion.csv"), self.confusion_csv()?)?;
        std::fs::write(dir.join("timing.txt"), format!("wall_clock_s {:.3}\n", self.wall_clock_s))?;
        Ok(())
    }
}

fn into_string(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| crate::Error::Data(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| crate::Error::Data(e.to_string()))
}
