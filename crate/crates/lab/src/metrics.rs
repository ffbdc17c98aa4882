//! Metrics CSV: `step,lr,train_loss,val_loss,tokens_seen,wall_ms`. Absent
//! optional values are empty cells. Floats use the shortest text that
//! reads back to the same value.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crope_core::train::MetricsRow;

use crate::error::{LabError, Result};

pub const HEADER: [&str; 6] = [
    "step",
    "lr",
    "train_loss",
    "val_loss",
    "tokens_seen",
    "wall_ms",
];

pub struct MetricsWriter {
    inner: csv::Writer<BufWriter<File>>,
    last_step: Option<usize>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| LabError::io(path, e))?;
        let mut inner = csv::Writer::from_writer(BufWriter::new(file));
        inner.write_record(HEADER)?;
        Ok(Self {
            inner,
            last_step: None,
        })
    }

    pub fn write(&mut self, row: &MetricsRow) -> Result<()> {
        if self.last_step.is_some_and(|s| row.step <= s) {
            return Err(LabError::Check(format!(
                "metrics step {} does not follow {:?}",
                row.step, self.last_step
            )));
        }
        self.last_step = Some(row.step);
        let opt = |v: Option<String>| v.unwrap_or_default();
        self.inner.write_record([
            row.step.to_string(),
            row.lr.to_string(),
            row.train_loss.to_string(),
            opt(row.val_loss.map(|v| v.to_string())),
            row.tokens_seen.to_string(),
            opt(row.wall_ms.map(|v| v.to_string())),
        ])?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.inner
            .flush()
            .map_err(|e| LabError::io("metrics.csv", e))?;
        let w = self
            .inner
            .into_inner()
            .map_err(|e| LabError::io("metrics.csv", e.into_error()))?;
        w.into_inner()
            .map_err(|e| LabError::io("metrics.csv", e.into_error()))?
            .flush()
            .map_err(|e| LabError::io("metrics.csv", e))
    }
}

fn cell<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize) -> Result<Option<T>> {
    match rec.get(i) {
        Some("") | None => Ok(None),
        Some(s) => s.parse().map(Some).map_err(|_| {
            LabError::Check(format!("bad metrics cell `{s}` in column {}", HEADER[i]))
        }),
    }
}

fn need<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize) -> Result<T> {
    cell(rec, i)?.ok_or_else(|| LabError::Check(format!("missing {}", HEADER[i])))
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path)?;
    if r.headers()?.iter().ne(HEADER) {
        return Err(LabError::Check(format!(
            "{}: unexpected metrics header",
            path.display()
        )));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        rows.push(MetricsRow {
            step: need(&rec, 0)?,
            lr: need(&rec, 1)?,
            train_loss: need(&rec, 2)?,
            val_loss: cell(&rec, 3)?,
            tokens_seen: need(&rec, 4)?,
            wall_ms: cell(&rec, 5)?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(step: usize, val: Option<f64>) -> MetricsRow {
        MetricsRow {
            step,
            lr: 2e-3 / 3.0,
            train_loss: 5.545_177_444_479_562,
            val_loss: val,
            tokens_seen: 1024 * step as u64,
            wall_ms: None,
        }
    }

    #[test]
    fn round_trip_with_empty_cells() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        let mut w = MetricsWriter::create(&p).unwrap();
        let rows = [row(10, None), row(20, Some(4.25))];
        rows.iter().for_each(|r| w.write(r).unwrap());
        w.finish().unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("step,lr,train_loss,val_loss,tokens_seen,wall_ms\n10,"));
        assert!(text.lines().nth(1).unwrap().ends_with(",,10240,"));
        assert_eq!(read_metrics(&p).unwrap(), rows);
    }

    #[test]
    fn steps_must_increase() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = MetricsWriter::create(&dir.path().join("m.csv")).unwrap();
        w.write(&row(5, None)).unwrap();
        assert!(w.write(&row(5, None)).is_err());
    }
}
