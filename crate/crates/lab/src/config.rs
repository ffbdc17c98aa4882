//! Flat key/value run configuration. Keys are the field names of
//! `TrainConfig` and `ModelConfig` plus `precision` and `record_wall_ms`;
//! `seed` seeds both the model init and the batch order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crope_core::model::{Mode, ModelConfig};
use crope_core::train::TrainConfig;

use crate::error::{LabError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl Precision {
    pub fn name(self) -> &'static str {
        match self {
            Self::F32 => "f32",
            Self::F64 => "f64",
        }
    }
}

/// Every key a config file or override may set.
pub const KEYS: &[&str] = &[
    "n_layers",
    "n_heads",
    "d_model",
    "d_ff",
    "vocab_size",
    "max_seq_len",
    "rope_base",
    "mode",
    "causal",
    "seed",
    "data_path",
    "batch_size",
    "seq_len",
    "steps",
    "warmup_steps",
    "lr_max",
    "lr_min",
    "weight_decay",
    "beta1",
    "beta2",
    "eps",
    "log_every",
    "eval_every",
    "val_fraction",
    "precision",
    "record_wall_ms",
];

/// Keys that describe the model rather than the run.
pub const MODEL_KEYS: &[&str] = &[
    "n_layers",
    "n_heads",
    "d_model",
    "d_ff",
    "vocab_size",
    "max_seq_len",
    "rope_base",
    "mode",
    "causal",
];

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub n_layers: Option<usize>,
    pub n_heads: Option<usize>,
    pub d_model: Option<usize>,
    pub d_ff: Option<usize>,
    pub vocab_size: Option<usize>,
    pub max_seq_len: Option<usize>,
    pub rope_base: Option<f64>,
    pub mode: Option<String>,
    pub causal: Option<bool>,
    pub seed: Option<u64>,
    pub data_path: Option<String>,
    pub batch_size: Option<usize>,
    pub seq_len: Option<usize>,
    pub steps: Option<usize>,
    pub warmup_steps: Option<usize>,
    pub lr_max: Option<f64>,
    pub lr_min: Option<f64>,
    pub weight_decay: Option<f64>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub eps: Option<f64>,
    pub log_every: Option<usize>,
    pub eval_every: Option<usize>,
    pub val_fraction: Option<f64>,
    pub precision: Option<Precision>,
    pub record_wall_ms: Option<bool>,
}

/// A fully resolved run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub precision: Precision,
    pub record_wall_ms: bool,
    /// The default warmup did not fit below `steps` and was shortened.
    pub warmup_clamped: bool,
    /// Keys set explicitly by the file or an override.
    pub explicit: Vec<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            precision: Precision::F32,
            record_wall_ms: false,
            warmup_clamped: false,
            explicit: Vec::new(),
        }
    }
}

fn check_keys(table: &toml::Table) -> Result<()> {
    match table.keys().find(|k| !KEYS.contains(&k.as_str())) {
        Some(k) => Err(LabError::UnknownKey(k.clone())),
        None => Ok(()),
    }
}

/// Parses `key=value`. Values that are not TOML literals are taken as
/// strings, so `mode=crope_all` and `data_path=/tmp/x.txt` need no quotes.
pub fn parse_override(s: &str) -> Result<(String, toml::Value)> {
    let (key, raw) = s
        .split_once('=')
        .ok_or_else(|| LabError::Usage(format!("override `{s}` is not of the form key=value")))?;
    let key = key.trim();
    if !KEYS.contains(&key) {
        return Err(LabError::UnknownKey(key.to_string()));
    }
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    Ok((key.to_string(), value))
}

pub fn read_table(path: &Path) -> Result<toml::Table> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| LabError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    let table: toml::Table = toml::from_str(&text)
        .map_err(|e| LabError::Usage(format!("config {}: {e}", path.display())))?;
    check_keys(&table)?;
    Ok(table)
}

/// Merges the optional file with the overrides (overrides win) and
/// resolves against the defaults.
pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    let mut table = match path {
        Some(p) => read_table(p)?,
        None => toml::Table::new(),
    };
    for o in overrides {
        let (k, v) = parse_override(o)?;
        table.insert(k, v);
    }
    resolve(table)
}

fn bad(key: &str, msg: impl ToString) -> LabError {
    LabError::BadValue {
        key: key.to_string(),
        msg: msg.to_string(),
    }
}

pub fn resolve(table: toml::Table) -> Result<RunConfig> {
    check_keys(&table)?;
    let explicit: Vec<String> = table.keys().cloned().collect();
    let mut file = ConfigFile::default();
    // Deserialize key by key so a type error names its key.
    for (k, v) in table {
        let mut one = toml::Table::new();
        one.insert(k.clone(), v);
        let part: ConfigFile = toml::Value::Table(one)
            .try_into()
            .map_err(|e: toml::de::Error| bad(&k, e.message()))?;
        merge(&mut file, part);
    }
    let mut cfg = RunConfig {
        explicit,
        ..RunConfig::default()
    };
    apply(&mut cfg, file)?;
    let t = &mut cfg.train;
    if !cfg.explicit.iter().any(|k| k == "warmup_steps") && t.warmup_steps >= t.steps {
        t.warmup_steps = t.steps.saturating_sub(1);
        cfg.warmup_clamped = true;
    }
    cfg.train.validate()?;
    Ok(cfg)
}

macro_rules! take {
    ($dst:ident, $src:ident; $($f:ident),*) => {
        $(if $src.$f.is_some() { $dst.$f = $src.$f; })*
    };
}

fn merge(dst: &mut ConfigFile, src: ConfigFile) {
    take!(dst, src; n_layers, n_heads, d_model, d_ff, vocab_size, max_seq_len, rope_base, mode, causal, seed,
        data_path, batch_size, seq_len, steps, warmup_steps, lr_max, lr_min, weight_decay, beta1, beta2, eps,
        log_every, eval_every, val_fraction, precision, record_wall_ms);
}

macro_rules! set {
    ($dst:expr, $src:ident; $($f:ident),*) => {
        $(if let Some(v) = $src.$f { $dst.$f = v; })*
    };
}

fn apply(cfg: &mut RunConfig, f: ConfigFile) -> Result<()> {
    let m = &mut cfg.train.model;
    set!(m, f; n_layers, n_heads, d_model, d_ff, vocab_size, max_seq_len, rope_base, causal);
    if let Some(mode) = &f.mode {
        m.mode = mode
            .parse()
            .map_err(|e: crope_core::Error| bad("mode", e))?;
    }
    if let Some(seed) = f.seed {
        m.seed = seed;
        cfg.train.seed = seed;
    }
    let t = &mut cfg.train;
    set!(t, f; data_path, batch_size, seq_len, steps, warmup_steps, lr_max, lr_min, weight_decay, beta1, beta2, eps,
        log_every, eval_every, val_fraction);
    set!(cfg, f; precision, record_wall_ms);
    Ok(())
}

/// The resolved configuration as a complete flat document; loading it
/// back yields the same `TrainConfig`.
pub fn to_file(cfg: &RunConfig) -> ConfigFile {
    let (t, m) = (&cfg.train, &cfg.train.model);
    ConfigFile {
        n_layers: Some(m.n_layers),
        n_heads: Some(m.n_heads),
        d_model: Some(m.d_model),
        d_ff: Some(m.d_ff),
        vocab_size: Some(m.vocab_size),
        max_seq_len: Some(m.max_seq_len),
        rope_base: Some(m.rope_base),
        mode: Some(m.mode.name().to_string()),
        causal: Some(m.causal),
        seed: Some(t.seed),
        data_path: Some(t.data_path.clone()),
        batch_size: Some(t.batch_size),
        seq_len: Some(t.seq_len),
        steps: Some(t.steps),
        warmup_steps: Some(t.warmup_steps),
        lr_max: Some(t.lr_max),
        lr_min: Some(t.lr_min),
        weight_decay: Some(t.weight_decay),
        beta1: Some(t.beta1),
        beta2: Some(t.beta2),
        eps: Some(t.eps),
        log_every: Some(t.log_every),
        eval_every: Some(t.eval_every),
        val_fraction: Some(t.val_fraction),
        precision: Some(cfg.precision),
        record_wall_ms: Some(cfg.record_wall_ms),
    }
}

pub fn to_toml(cfg: &RunConfig) -> String {
    toml::to_string(&to_file(cfg)).expect("flat config serializes")
}

/// Model keys set explicitly in `cfg` that disagree with `ckpt`.
pub fn model_mismatch(cfg: &RunConfig, ckpt: &ModelConfig) -> Result<()> {
    let want = &cfg.train.model;
    let set = |k: &str| cfg.explicit.iter().any(|e| e == k);
    if set("mode") && want.mode != ckpt.mode {
        return Err(LabError::ModeMismatch {
            ckpt: ckpt.mode.name().into(),
            want: want.mode.name().into(),
        });
    }
    let pairs: [(&str, String, String); 8] = [
        (
            "n_layers",
            ckpt.n_layers.to_string(),
            want.n_layers.to_string(),
        ),
        (
            "n_heads",
            ckpt.n_heads.to_string(),
            want.n_heads.to_string(),
        ),
        (
            "d_model",
            ckpt.d_model.to_string(),
            want.d_model.to_string(),
        ),
        ("d_ff", ckpt.d_ff.to_string(), want.d_ff.to_string()),
        (
            "vocab_size",
            ckpt.vocab_size.to_string(),
            want.vocab_size.to_string(),
        ),
        (
            "max_seq_len",
            ckpt.max_seq_len.to_string(),
            want.max_seq_len.to_string(),
        ),
        (
            "rope_base",
            ckpt.rope_base.to_string(),
            want.rope_base.to_string(),
        ),
        ("causal", ckpt.causal.to_string(), want.causal.to_string()),
    ];
    for (k, c, w) in pairs {
        if set(k) && c != w {
            return Err(LabError::ConfigMismatch {
                key: k.into(),
                ckpt: c,
                want: w,
            });
        }
    }
    Ok(())
}

pub fn mode_of(name: &str) -> Result<Mode> {
    name.parse().map_err(|e: crope_core::Error| bad("mode", e))
}
