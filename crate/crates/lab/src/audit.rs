//! Parameter table across the six placement modes.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crope_core::model::{param_audit, Mode, ModelConfig};

use crate::error::{LabError, Result};

/// Attention savings by mode, in `Mode::ALL` order.
pub const EXPECTED_SAVINGS: [f64; 6] = [0.0, 0.25, 0.375, 0.5, 0.25, 0.5];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRow {
    pub mode: String,
    pub embedding: u64,
    pub attention: u64,
    pub ffn: u64,
    pub norms: u64,
    pub total: u64,
    pub attention_savings_pct: f64,
}

/// One row per mode, after asserting the savings pattern and the count
/// equalities between tied and half-width variants.
pub fn audit_rows(cfg: &ModelConfig) -> Result<Vec<AuditRow>> {
    let mut rows = Vec::new();
    for (mode, want) in Mode::ALL.into_iter().zip(EXPECTED_SAVINGS) {
        let a = param_audit(&cfg.with_mode(mode))?;
        if a.attention_savings != want {
            return Err(LabError::Check(format!(
                "{mode}: attention savings {} instead of {want}",
                a.attention_savings
            )));
        }
        rows.push(AuditRow {
            mode: mode.name().into(),
            embedding: a.embedding as u64,
            attention: a.attention as u64,
            ffn: a.ffn as u64,
            norms: a.norms as u64,
            total: a.total as u64,
            attention_savings_pct: 100.0 * a.attention_savings,
        });
    }
    let total = |m: Mode| rows.iter().find(|r| r.mode == m.name()).map(|r| r.total);
    if total(Mode::CropeQk) != total(Mode::HalfRopeQk)
        || total(Mode::CropeAll) != total(Mode::HalfRopeAll)
    {
        return Err(LabError::Check("tied and half-width totals differ".into()));
    }
    if rows
        .iter()
        .any(|r| (r.embedding, r.ffn, r.norms) != (rows[0].embedding, rows[0].ffn, rows[0].norms))
    {
        return Err(LabError::Check(
            "embedding, ffn or norm counts differ across modes".into(),
        ));
    }
    Ok(rows)
}

pub fn write_csv(path: &Path, rows: &[AuditRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    rows.iter().try_for_each(|r| w.serialize(r))?;
    w.flush().map_err(|e| LabError::io(path, e))
}

pub fn read_csv(path: &Path) -> Result<Vec<AuditRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

pub fn render(rows: &[AuditRow]) -> String {
    let mut s = format!(
        "{:<14}{:>14}{:>14}{:>14}{:>10}{:>14}{:>10}\n",
        "mode", "embedding", "attention", "ffn", "norms", "total", "savings"
    );
    for r in rows {
        s += &format!(
            "{:<14}{:>14}{:>14}{:>14}{:>10}{:>14}{:>9}%\n",
            r.mode, r.embedding, r.attention, r.ffn, r.norms, r.total, r.attention_savings_pct
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_scale_table() {
        let rows = audit_rows(&ModelConfig::full_scale()).unwrap();
        let pct: Vec<f64> = rows.iter().map(|r| r.attention_savings_pct).collect();
        assert_eq!(pct, [0.0, 25.0, 37.5, 50.0, 25.0, 50.0]);
        assert_eq!(rows[0].attention, 16 * 4_194_304);
        assert_eq!(rows[3].attention, 16 * 2_097_152);
        assert_eq!(rows[1].total, rows[4].total);
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("audit.csv");
        let rows = audit_rows(&ModelConfig::desk()).unwrap();
        write_csv(&p, &rows).unwrap();
        assert_eq!(read_csv(&p).unwrap(), rows);
        assert!(render(&rows).contains("37.5%"));
    }
}
