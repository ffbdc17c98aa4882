//! Training and evaluation drivers behind `crope train` and `crope eval`.

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde_json::json;

use crope_core::model::QK_NORM_PLACEMENT;
use crope_core::train::{evaluate, tokenize_bytes, Batches, MetricsRow, TrainConfig, Trainer};
use crope_core::{Error, Scalar};

use crate::checkpoint::{save_checkpoint, RngState};
use crate::config::{model_mismatch, to_file, Precision, RunConfig};
use crate::corpus::{synthetic_corpus, DEFAULT_BYTES, DEFAULT_SEED};
use crate::error::{LabError, Result};
use crate::metrics::MetricsWriter;

pub const METRICS: &str = "metrics.csv";
pub const CHECKPOINT: &str = "checkpoint.bin";
pub const CONFIG: &str = "config.toml";
pub const MANIFEST: &str = "run.json";

/// Corpus bytes for `data_path`; empty means the built-in synthetic text.
pub fn load_corpus(data_path: &str) -> Result<Vec<u8>> {
    if data_path.is_empty() {
        Ok(synthetic_corpus(DEFAULT_BYTES, DEFAULT_SEED))
    } else {
        std::fs::read(data_path)
            .map_err(|e| LabError::Usage(format!("cannot read corpus {data_path}: {e}")))
    }
}

fn corpus_source(data_path: &str) -> String {
    if data_path.is_empty() {
        format!("synthetic ({DEFAULT_BYTES} bytes, seed {DEFAULT_SEED})")
    } else {
        data_path.to_string()
    }
}

pub fn prepare_data(train: &TrainConfig) -> Result<Batches> {
    let ids = tokenize_bytes(&load_corpus(&train.data_path)?)?;
    Ok(Trainer::<f32>::batches(train, &ids)?)
}

/// Choices that are not fixed by the model definition itself, recorded
/// with every run.
pub fn design_decisions(cfg: &RunConfig) -> serde_json::Value {
    json!({
        "optimizer": format!(
            "adamw beta1={} beta2={} eps={}; substituted for Muon",
            cfg.train.beta1, cfg.train.beta2, cfg.train.eps
        ),
        "weight_decay_scope": "decoupled, tensors of rank >= 2 only",
        "lr_schedule": "linear warmup from 0, cosine decay to lr_min",
        "qk_norm": "per-head RMS (eps 1e-6) then one learned scalar gain per head",
        "qk_norm_placement": QK_NORM_PLACEMENT,
        "frequency_schedule": "theta_t = rope_base^(-2(t-1)/head_dim)",
        "pair_layout": "interleaved",
        "tied_embedding": true,
        "precision": cfg.precision.name(),
        "result_scope": "desk-scale qualitative comparison of placement modes, not a reproduction of large-scale pretraining results",
    })
}

fn unix_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub rows: Vec<MetricsRow>,
    pub steps_completed: usize,
    pub final_val_loss: Option<f64>,
}

struct Progress {
    rows: Vec<MetricsRow>,
    steps: usize,
    tokens: u64,
    epoch: u64,
}

fn drive<S: Scalar>(
    cfg: &RunConfig,
    data: &Batches,
    dir: &Path,
    p: &mut Progress,
    on_row: &mut dyn FnMut(&MetricsRow),
) -> Result<()> {
    let mut trainer = Trainer::<S>::new(cfg.train.clone(), data)?;
    let mut writer = MetricsWriter::create(&dir.join(METRICS))?;
    let clock = Instant::now();
    let mut failure: Option<LabError> = None;
    let result = trainer.run(|row| {
        let mut row = row.clone();
        if cfg.record_wall_ms {
            row.wall_ms = Some(clock.elapsed().as_millis() as u64);
        }
        if let Err(e) = writer.write(&row) {
            failure = Some(e);
            return Err(Error::Contract("metrics write failed".into()));
        }
        on_row(&row);
        p.rows.push(row);
        Ok(())
    });
    writer.finish()?;
    p.steps = trainer.step_count();
    p.tokens = trainer.tokens_seen();
    p.epoch = trainer.epoch();
    // The model is the last one whose loss was finite: an aborted step
    // never updates parameters.
    let rng = RngState {
        seed: cfg.train.seed,
        step: p.steps as u64,
        tokens_seen: p.tokens,
        epoch: p.epoch,
    };
    save_checkpoint(&trainer.model, rng, &dir.join(CHECKPOINT))?;
    match (failure, result) {
        (Some(e), _) => Err(e),
        (None, r) => Ok(r?),
    }
}

/// Trains per `cfg` and writes the metrics, final checkpoint, resolved
/// config and run manifest into `dir`. On failure the manifest is still
/// written and marks the artifacts as partial.
pub fn train_run(cfg: &RunConfig, dir: &Path) -> Result<RunOutcome> {
    train_run_with(cfg, dir, &mut |_| {})
}

/// [`train_run`] with a callback for every logged row.
pub fn train_run_with(
    cfg: &RunConfig,
    dir: &Path,
    on_row: &mut dyn FnMut(&MetricsRow),
) -> Result<RunOutcome> {
    std::fs::create_dir_all(dir).map_err(|e| LabError::io(dir, e))?;
    let started = unix_ms();
    let data = prepare_data(&cfg.train)?;
    std::fs::write(dir.join(CONFIG), crate::config::to_toml(cfg))
        .map_err(|e| LabError::io(dir.join(CONFIG), e))?;
    let mut p = Progress {
        rows: Vec::new(),
        steps: 0,
        tokens: 0,
        epoch: 0,
    };
    let result = match cfg.precision {
        Precision::F32 => drive::<f32>(cfg, &data, dir, &mut p, on_row),
        Precision::F64 => drive::<f64>(cfg, &data, dir, &mut p, on_row),
    };
    let final_val_loss = p.rows.iter().rev().find_map(|r| r.val_loss);
    let manifest = json!({
        "status": if result.is_ok() { "complete" } else { "aborted" },
        "partial": result.is_err(),
        "error": result.as_ref().err().map(|e| e.to_string()),
        "code_version": concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION")),
        "seed": cfg.train.seed,
        "config": to_file(cfg),
        "warmup_clamped": cfg.warmup_clamped,
        "corpus": {
            "source": corpus_source(&cfg.train.data_path),
            "train_windows": data.train.len(),
            "val_windows": data.val.len(),
        },
        "steps_completed": p.steps,
        "tokens_seen": p.tokens,
        "epochs_completed": p.epoch,
        "final_val_loss": final_val_loss,
        "design_decisions": design_decisions(cfg),
        "artifacts": [METRICS, CHECKPOINT, CONFIG],
        "started_unix_ms": started,
        "finished_unix_ms": unix_ms(),
    });
    let text = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(dir.join(MANIFEST), text).map_err(|e| LabError::io(dir.join(MANIFEST), e))?;
    result?;
    Ok(RunOutcome {
        dir: dir.to_path_buf(),
        steps_completed: p.steps,
        final_val_loss,
        rows: p.rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalResult {
    pub loss: f64,
    pub perplexity: f64,
    pub tokens: usize,
}

/// Validation loss of a checkpoint on the split that `cfg` describes.
/// Model keys set in `cfg` must agree with the checkpoint.
pub fn eval_checkpoint(path: &Path, cfg: &RunConfig) -> Result<EvalResult> {
    let ck = crate::checkpoint::read_checkpoint(path)?;
    let mcfg = ck.model_config()?;
    model_mismatch(cfg, &mcfg)?;
    let train = TrainConfig {
        model: mcfg,
        ..cfg.train.clone()
    };
    let data = prepare_data(&train)?;
    let batches = data.val_batches(train.batch_size);
    let loss = match cfg.precision {
        Precision::F32 => evaluate(&ck.into_model::<f32>(path)?, &batches)?,
        Precision::F64 => evaluate(&ck.into_model::<f64>(path)?, &batches)?,
    };
    Ok(EvalResult {
        loss,
        perplexity: loss.exp(),
        tokens: batches.iter().map(|b| b.tokens()).sum(),
    })
}

pub fn write_eval_csv(path: &Path, ckpt: &Path, mode: &str, r: &EvalResult) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["checkpoint", "mode", "val_loss", "perplexity", "tokens"])?;
    w.write_record([
        ckpt.display().to_string(),
        mode.to_string(),
        r.loss.to_string(),
        r.perplexity.to_string(),
        r.tokens.to_string(),
    ])?;
    w.flush().map_err(|e| LabError::io(path, e))
}

/// Mode name stored in a checkpoint.
pub fn checkpoint_mode(path: &Path) -> Result<String> {
    Ok(crate::checkpoint::read_checkpoint(path)?
        .manifest
        .model
        .mode)
}
