use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};

/// Where the complex-linear tie is applied, or which dense projections are
/// halved for the parameter-matched baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    None,
    CropeQk,
    CropeQkv,
    CropeAll,
    HalfRopeQk,
    HalfRopeAll,
}

impl Mode {
    pub const ALL: [Mode; 6] = [
        Mode::None,
        Mode::CropeQk,
        Mode::CropeQkv,
        Mode::CropeAll,
        Mode::HalfRopeQk,
        Mode::HalfRopeAll,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mode::None => "none",
            Mode::CropeQk => "crope_qk",
            Mode::CropeQkv => "crope_qkv",
            Mode::CropeAll => "crope_all",
            Mode::HalfRopeQk => "half_rope_qk",
            Mode::HalfRopeAll => "half_rope_all",
        }
    }

    /// Tie flags for (Q, K, V, out).
    pub fn tied(self) -> [bool; 4] {
        match self {
            Mode::None | Mode::HalfRopeQk | Mode::HalfRopeAll => [false; 4],
            Mode::CropeQk => [true, true, false, false],
            Mode::CropeQkv => [true, true, true, false],
            Mode::CropeAll => [true; 4],
        }
    }

    pub fn halves_qk(self) -> bool {
        matches!(self, Mode::HalfRopeQk | Mode::HalfRopeAll)
    }

    pub fn halves_v(self) -> bool {
        matches!(self, Mode::HalfRopeAll)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown mode {s:?}; expected one of none, crope_qk, crope_qkv, crope_all, half_rope_qk, half_rope_all")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub rope_base: f64,
    pub mode: Mode,
    pub seed: u64,
    /// Causal masking; the token-dependent shift task attends forward and
    /// turns it off.
    pub causal: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    /// Desk-scale defaults.
    pub fn desk() -> Self {
        Self {
            n_layers: 2,
            n_heads: 4,
            d_model: 128,
            d_ff: 256,
            vocab_size: 256,
            max_seq_len: 128,
            rope_base: 5000.0,
            mode: Mode::None,
            seed: 0,
            causal: true,
        }
    }

    /// 16 layers, 8 heads, `d_model = d_ff = 1024`, 512 positions.
    pub fn full_scale() -> Self {
        Self {
            n_layers: 16,
            n_heads: 8,
            d_model: 1024,
            d_ff: 1024,
            max_seq_len: 512,
            ..Self::desk()
        }
    }

    pub fn with_mode(&self, mode: Mode) -> Self {
        Self {
            mode,
            ..self.clone()
        }
    }

    /// Width of the Q and K projections.
    pub fn qk_width(&self) -> usize {
        if self.mode.halves_qk() {
            self.d_model / 2
        } else {
            self.d_model
        }
    }

    /// Width of the V projection (and input width of the output projection).
    pub fn v_width(&self) -> usize {
        if self.mode.halves_v() {
            self.d_model / 2
        } else {
            self.d_model
        }
    }

    pub fn head_dim_qk(&self) -> usize {
        self.qk_width() / self.n_heads
    }

    pub fn head_dim_v(&self) -> usize {
        self.v_width() / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems: Vec<String> = Vec::new();
        let positive = [
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("d_model", self.d_model),
            ("d_ff", self.d_ff),
            ("vocab_size", self.vocab_size),
            ("max_seq_len", self.max_seq_len),
        ];
        for (name, v) in positive {
            if v == 0 {
                problems.push(format!("{name} must be positive"));
            }
        }
        if !problems.is_empty() {
            return Err(Error::Config(problems.join("; ")));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            problems.push(format!(
                "d_model ({}) must be divisible by n_heads ({})",
                self.d_model, self.n_heads
            ));
        } else if !(self.d_model / self.n_heads).is_multiple_of(2) {
            problems.push(format!(
                "head_dim d_model/n_heads = {} must be even",
                self.d_model / self.n_heads
            ));
        }
        if self.mode.halves_qk() {
            let w = self.d_model / 2;
            if !self.d_model.is_multiple_of(2)
                || !w.is_multiple_of(self.n_heads)
                || !(w / self.n_heads).is_multiple_of(2)
            {
                problems.push(format!(
                    "{} needs d_model/2 ({w}) divisible by n_heads with an even head_dim",
                    self.mode
                ));
            }
        }
        if !(self.rope_base > 0.0 && self.rope_base.is_finite()) {
            problems.push(format!(
                "rope_base must be positive, got {}",
                self.rope_base
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}
