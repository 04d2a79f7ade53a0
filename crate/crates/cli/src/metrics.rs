//! The metrics CSV: one row per evaluation, fixed column order.
//!
//! Loss columns hold the mean over the updates since the previous row and are
//! empty while no update has run (warm-up). `pi_sigma_loss` is empty for
//! `sac`, `cem_policy_error` is empty unless the algorithm is `sac-cepo`, and
//! `wall_seconds` is empty unless wall time recording is enabled. Floats use
//! the shortest representation that parses back to the same value.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use cepo_core::EvalRow;

use crate::CliError;

pub const HEADER: [&str; 10] = [
    "env_step",
    "eval_return_mean",
    "eval_return_std",
    "v_loss",
    "q1_loss",
    "q2_loss",
    "pi_mu_loss",
    "pi_sigma_loss",
    "cem_policy_error",
    "wall_seconds",
];

fn num(v: Option<f64>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_default()
}

pub fn row_fields(row: &EvalRow) -> [String; 10] {
    let l = row.losses.as_ref();
    [
        row.env_step.to_string(),
        num(Some(row.eval.mean)),
        num(Some(row.eval.std)),
        num(l.map(|l| l.v_loss)),
        num(l.map(|l| l.q1_loss)),
        num(l.map(|l| l.q2_loss)),
        num(l.map(|l| l.pi_mu_loss)),
        num(l.and_then(|l| l.pi_sigma_loss)),
        num(l.and_then(|l| l.cem_policy_error)),
        num(row.wall_seconds),
    ]
}

/// Writes the header on creation and flushes after every row, so a failed
/// run leaves the rows produced so far on disk.
pub struct MetricsWriter {
    inner: csv::Writer<BufWriter<File>>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self, CliError> {
        let mut inner = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
        inner.write_record(HEADER)?;
        inner.flush()?;
        Ok(Self { inner })
    }

    pub fn write(&mut self, row: &EvalRow) -> Result<(), CliError> {
        self.inner.write_record(row_fields(row))?;
        self.inner.flush()?;
        Ok(())
    }

    pub fn finish(self) -> Result<(), CliError> {
        let mut w = self.inner.into_inner().map_err(|e| CliError::Io(e.into_error()))?;
        w.flush()?;
        Ok(())
    }
}

/// A parsed metrics file. Empty cells become `None`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Metrics {
    pub rows: Vec<Vec<Option<f64>>>,
}

impl Metrics {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let mut r = csv::Reader::from_path(path)?;
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        if header != HEADER {
            return Err(CliError::Config(format!(
                "{} is not a metrics file (header {header:?})",
                path.display()
            )));
        }
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let row = rec
                .iter()
                .map(|c| {
                    if c.is_empty() {
                        Ok(None)
                    } else {
                        c.parse()
                            .map(Some)
                            .map_err(|_| CliError::Config(format!("{}: bad number {c:?}", path.display())))
                    }
                })
                .collect::<Result<Vec<_>, _>>()?;
            rows.push(row);
        }
        Ok(Self { rows })
    }

    pub fn column(&self, name: &str) -> Option<Vec<Option<f64>>> {
        let i = HEADER.iter().position(|h| *h == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }

    /// `(env_step, eval_return_mean)` pairs.
    pub fn curve(&self) -> Vec<(f64, f64)> {
        self.rows
            .iter()
            .filter_map(|r| Some((r[0]?, r[1]?)))
            .collect()
    }

    /// Trapezoid area under the eval-return curve, divided by its step span.
    /// A single row yields that row's return.
    pub fn normalized_auc(&self) -> Option<f64> {
        let c = self.curve();
        match c.len() {
            0 => None,
            1 => Some(c[0].1),
            _ => {
                let area: f64 = c.windows(2).map(|w| 0.5 * (w[0].1 + w[1].1) * (w[1].0 - w[0].0)).sum();
                Some(area / (c[c.len() - 1].0 - c[0].0))
            }
        }
    }

    pub fn final_return(&self) -> Option<(f64, f64)> {
        let r = self.rows.last()?;
        Some((r[1]?, r[2]?))
    }
}

/// Write a small CSV of string cells with the given header.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    let mut f = BufWriter::new(File::create(path)?);
    f.write_all(text.as_bytes())?;
    f.flush()?;
    Ok(())
}
