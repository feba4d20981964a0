use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::Summary;

/// Row kinds of an [`ExperimentReport`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Section {
    /// A per-case measurement.
    Case,
    /// An aggregate derived from case rows.
    Summary,
    /// Wall-clock timing; excluded from reproducibility comparisons.
    Timing,
}

impl Section {
    pub fn as_str(self) -> &'static str {
        match self {
            Section::Case => "case",
            Section::Summary => "summary",
            Section::Timing => "timing",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub section: Section,
    pub group: String,
    pub case: String,
    pub metric: String,
    pub value: f64,
}

/// Tidy result table of one experiment, written as CSV
/// `section,group,case,metric,value` under a `#` header echoing the config.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentReport {
    pub experiment: String,
    pub seed: u64,
    pub config: Vec<(String, String)>,
    pub rows: Vec<ReportRow>,
}

impl ExperimentReport {
    pub fn new(experiment: impl Into<String>, seed: u64) -> Self {
        ExperimentReport {
            experiment: experiment.into(),
            seed,
            config: Vec::new(),
            rows: Vec::new(),
        }
    }

    pub fn with_config(mut self, key: impl Into<String>, value: impl ToString) -> Self {
        self.config.push((key.into(), value.to_string()));
        self
    }

    pub fn push(&mut self, section: Section, group: &str, case: &str, metric: &str, value: f64) {
        self.rows.push(ReportRow {
            section,
            group: group.to_string(),
            case: case.to_string(),
            metric: metric.to_string(),
            value,
        });
    }

    /// Values of every case row for `(group, metric)`, in insertion order.
    pub fn case_values(&self, group: &str, metric: &str) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.section == Section::Case && r.group == group && r.metric == metric)
            .map(|r| r.value)
            .collect()
    }

    pub fn summary_value(&self, group: &str, metric: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.section == Section::Summary && r.group == group && r.metric == metric)
            .map(|r| r.value)
    }

    /// Appends `<metric>_mean`, `_std`, `_stderr` and `_n` summary rows for
    /// the case values of `(group, metric)` and returns the summary.
    pub fn summarize(&mut self, group: &str, metric: &str) -> Summary {
        let s = Summary::of(&self.case_values(group, metric));
        for (suffix, v) in [
            ("mean", s.mean),
            ("std", s.std),
            ("stderr", s.stderr),
            ("n", s.n as f64),
        ] {
            self.push(Section::Summary, group, "all", &format!("{metric}_{suffix}"), v);
        }
        s
    }

    /// The report without timing rows, for reproducibility comparisons.
    pub fn without_timing(&self) -> ExperimentReport {
        ExperimentReport {
            rows: self
                .rows
                .iter()
                .filter(|r| r.section != Section::Timing)
                .cloned()
                .collect(),
            ..self.clone()
        }
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut head = String::new();
        let _ = writeln!(head, "# experiment={}", self.experiment);
        let _ = writeln!(head, "# seed={}", self.seed);
        for (k, v) in &self.config {
            let _ = writeln!(head, "# {k}={v}");
        }
        let mut w = csv::Writer::from_writer(head.into_bytes());
        let err = |e: csv::Error| Error::contract(format!("report serialization failed: {e}"));
        w.write_record(["section", "group", "case", "metric", "value"])
            .map_err(err)?;
        for r in &self.rows {
            w.write_record([
                r.section.as_str(),
                &r.group,
                &r.case,
                &r.metric,
                &format!("{:.9}", r.value),
            ])
            .map_err(err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::contract(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::contract(e.to_string()))
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv_string()?).map_err(|e| Error::io(path, e))
    }
}

/// Spearman rank correlation; tied values share their mean rank.
/// Returns NaN when either side is constant or the lengths differ.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    if x.len() != y.len() || x.len() < 2 {
        return f64::NAN;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    sxy / (sxx * syy).sqrt()
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}
