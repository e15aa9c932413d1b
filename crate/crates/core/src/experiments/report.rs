use std::fmt::Write as _;
use std::path::Path;

use crate::error::Result;
use crate::tensorgrid::write_atomic;

pub const TOOLKIT: &str = concat!(env!("CARGO_PKG_NAME"), "/", env!("CARGO_PKG_VERSION"));
pub const CSV_HEADER: &str = "experiment,mode,iteration,metric,value";

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub mode: String,
    /// `None` for end-of-run summaries.
    pub iteration: Option<usize>,
    pub metric: String,
    pub value: f64,
}

/// Long-format metric table of one experiment run.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub experiment: String,
    pub config_hash: String,
    pub rows: Vec<Row>,
}

impl Report {
    pub fn new(experiment: &str, config_hash: &str) -> Self {
        Self {
            experiment: experiment.into(),
            config_hash: config_hash.into(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, mode: &str, iteration: Option<usize>, metric: &str, value: f64) {
        self.rows.push(Row {
            mode: mode.into(),
            iteration,
            metric: metric.into(),
            value,
        });
    }

    /// Last summary value recorded for `(mode, metric)`.
    pub fn summary(&self, mode: &str, metric: &str) -> Option<f64> {
        self.rows
            .iter()
            .rev()
            .find(|r| r.iteration.is_none() && r.mode == mode && r.metric == metric)
            .map(|r| r.value)
    }

    /// Reals are written with 17 significant digits so they parse back exactly.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# toolkit={TOOLKIT},config_hash={}", self.config_hash);
        let _ = writeln!(s, "{CSV_HEADER}");
        for r in &self.rows {
            let it = r.iteration.map(|i| i.to_string()).unwrap_or_default();
            let _ = writeln!(s, "{},{},{},{},{:.16e}", self.experiment, r.mode, it, r.metric, r.value);
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), self.to_csv().as_bytes())
    }
}
