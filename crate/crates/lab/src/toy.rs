//! CSV artifacts for the analytic shift construction, the δ-kernel and
//! the trained token-dependent shift task.

use std::path::Path;

use crope_core::model::Mode;
use crope_core::rope::{attention_profile, delta_kernel, RopeConfig};
use crope_core::train::{toy_task_train, ToyTaskSpec, ToyTrainConfig};

use crate::error::{LabError, Result};

pub const KERNEL_DIMS: [usize; 3] = [16, 64, 256];

fn header(first: &str, n: usize, prefix: &str) -> Vec<String> {
    std::iter::once(first.to_string())
        .chain((0..n).map(|i| format!("{prefix}{i}")))
        .collect()
}

/// Rows are query positions, columns key positions.
pub fn write_profile(path: &Path, rows: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header("query", rows.len(), "k"))?;
    for (m, row) in rows.iter().enumerate() {
        w.write_record(std::iter::once(m.to_string()).chain(row.iter().map(|v| v.to_string())))?;
    }
    w.flush().map_err(|e| LabError::io(path, e))
}

pub fn read_matrix(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .skip(1)
            .map(|c| {
                c.parse()
                    .map_err(|_| LabError::Check(format!("{}: bad cell {c}", path.display())))
            })
            .collect::<Result<_>>()?;
        out.push(row);
    }
    Ok(out)
}

/// `delta,D16,D64,D256` for `Δ = -window..=window`.
pub fn kernel_rows(base: f64, window: i64) -> Result<Vec<(i64, Vec<f64>)>> {
    let cfgs: Vec<RopeConfig> = KERNEL_DIMS
        .iter()
        .map(|&d| RopeConfig::new(d, base))
        .collect::<std::result::Result<_, _>>()?;
    Ok((-window..=window)
        .map(|d| (d, cfgs.iter().map(|c| delta_kernel(c, d)).collect()))
        .collect())
}

pub fn write_kernel(path: &Path, rows: &[(i64, Vec<f64>)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(
        std::iter::once("delta".to_string()).chain(KERNEL_DIMS.iter().map(|d| format!("D{d}"))),
    )?;
    for (d, vals) in rows {
        w.write_record(std::iter::once(d.to_string()).chain(vals.iter().map(|v| v.to_string())))?;
    }
    w.flush().map_err(|e| LabError::io(path, e))
}

#[derive(Debug, Clone)]
pub struct ToyOptions {
    pub dim: usize,
    pub window: usize,
    pub base: f64,
    pub train: bool,
    pub mode: Mode,
    pub seed: u64,
    pub steps: usize,
    pub spec: ToyTaskSpec,
}

impl Default for ToyOptions {
    fn default() -> Self {
        Self {
            dim: 64,
            window: 32,
            base: 5000.0,
            train: false,
            mode: Mode::CropeQk,
            seed: 0,
            steps: 2000,
            spec: ToyTaskSpec::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyTrainSummary {
    pub accuracy: f64,
    pub attention_hits: f64,
    pub final_loss: f64,
}

/// Writes `profile_s1.csv`, `profile_s2.csv`, `delta_kernel.csv` and, when
/// training, `toy_train.csv` and `toy_attention.csv` into `out`.
pub fn run_toy(out: &Path, o: &ToyOptions) -> Result<Option<ToyTrainSummary>> {
    std::fs::create_dir_all(out).map_err(|e| LabError::io(out, e))?;
    let cfg = RopeConfig::new(o.dim, o.base)?;
    for s in [1, 2] {
        write_profile(
            &out.join(format!("profile_s{s}.csv")),
            &attention_profile(&cfg, s, o.window)?,
        )?;
    }
    write_kernel(
        &out.join("delta_kernel.csv"),
        &kernel_rows(o.base, o.window as i64)?,
    )?;
    if !o.train {
        return Ok(None);
    }
    let r = toy_task_train::<f32>(o.mode, &o.spec, o.steps, o.seed, &ToyTrainConfig::default())?;
    let summary = ToyTrainSummary {
        accuracy: r.accuracy,
        attention_hits: r.attention_hits,
        final_loss: r.final_loss,
    };
    let p = out.join("toy_train.csv");
    let mut w = csv::Writer::from_path(&p)?;
    w.write_record([
        "mode",
        "seed",
        "steps",
        "accuracy",
        "attention_hits",
        "final_loss",
    ])?;
    w.write_record([
        o.mode.name().to_string(),
        o.seed.to_string(),
        o.steps.to_string(),
        r.accuracy.to_string(),
        r.attention_hits.to_string(),
        r.final_loss.to_string(),
    ])?;
    w.flush().map_err(|e| LabError::io(&p, e))?;
    let p = out.join("toy_attention.csv");
    let mut w = csv::Writer::from_path(&p)?;
    let t = o.spec.seq_len;
    w.write_record(
        ["sample", "marker", "shift"]
            .into_iter()
            .map(String::from)
            .chain((0..t).map(|i| format!("k{i}"))),
    )?;
    for (i, row) in r.profiles.iter().enumerate() {
        let head = [i, r.heldout.markers[i], r.heldout.shifts[i]].map(|v| v.to_string());
        w.write_record(head.into_iter().chain(row.iter().map(|v| v.to_string())))?;
    }
    w.flush().map_err(|e| LabError::io(&p, e))?;
    Ok(Some(summary))
}
