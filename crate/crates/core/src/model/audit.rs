use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::layers::BlockLinear;
use crate::model::{Mode, ModelConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Embedding,
    Attention,
    Ffn,
    Norm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamAudit {
    pub mode: Mode,
    pub embedding: usize,
    pub attention: usize,
    pub ffn: usize,
    pub norms: usize,
    pub total: usize,
    /// `1 - attention / attention(none)` at the same `d_model`.
    pub attention_savings: f64,
}

/// Names, shapes and kinds of every parameter `build_model` registers, in
/// registration order, without allocating any weights.
pub fn param_layout(cfg: &ModelConfig) -> Result<Vec<(String, Vec<usize>, ParamKind)>> {
    cfg.validate()?;
    let d = cfg.d_model;
    let tied = cfg.mode.tied();
    let (qk, v) = (cfg.qk_width(), cfg.v_width());
    let mut out = vec![(
        String::from("embed.weight"),
        vec![cfg.vocab_size, d],
        ParamKind::Embedding,
    )];
    for i in 0..cfg.n_layers {
        let p = format!("layers.{i}");
        out.push((format!("{p}.attn_norm.gain"), vec![d], ParamKind::Norm));
        let projections = [
            ("wq", d, qk, tied[0]),
            ("wk", d, qk, tied[1]),
            ("wv", d, v, tied[2]),
            ("wo", v, d, tied[3]),
        ];
        for (name, i_dim, o_dim, t) in projections {
            let shape = BlockLinear::free_shape(i_dim, o_dim, t)?;
            out.push((
                format!("{p}.attn.{name}.blocks"),
                shape.to_vec(),
                ParamKind::Attention,
            ));
        }
        out.push((
            format!("{p}.attn.q_norm.gain"),
            vec![cfg.n_heads],
            ParamKind::Norm,
        ));
        out.push((
            format!("{p}.attn.k_norm.gain"),
            vec![cfg.n_heads],
            ParamKind::Norm,
        ));
        out.push((format!("{p}.ffn_norm.gain"), vec![d], ParamKind::Norm));
        for (name, shape) in [
            ("gate", [cfg.d_ff, d]),
            ("up", [cfg.d_ff, d]),
            ("down", [d, cfg.d_ff]),
        ] {
            out.push((
                format!("{p}.ffn.{name}.weight"),
                shape.to_vec(),
                ParamKind::Ffn,
            ));
        }
    }
    out.push((String::from("final_norm.gain"), vec![d], ParamKind::Norm));
    Ok(out)
}

/// Closed-form attention count for one layer: each of Q, K, V, out is
/// `in·out`, halved when tied.
fn attention_per_layer(cfg: &ModelConfig) -> usize {
    let d = cfg.d_model;
    let t = cfg.mode.tied();
    let (qk, v) = (cfg.qk_width(), cfg.v_width());
    let c = crate::layers::block_linear::count_params;
    c(d, qk, t[0]) + c(d, qk, t[1]) + c(d, v, t[2]) + c(v, d, t[3])
}

fn closed_form(cfg: &ModelConfig) -> [usize; 4] {
    let (d, l) = (cfg.d_model, cfg.n_layers);
    [
        cfg.vocab_size * d,
        l * attention_per_layer(cfg),
        l * 3 * d * cfg.d_ff,
        l * (2 * d + 2 * cfg.n_heads) + d,
    ]
}

fn enumerate(cfg: &ModelConfig) -> Result<[usize; 4]> {
    let mut counts = [0usize; 4];
    for (_, shape, kind) in param_layout(cfg)? {
        let slot = match kind {
            ParamKind::Embedding => 0,
            ParamKind::Attention => 1,
            ParamKind::Ffn => 2,
            ParamKind::Norm => 3,
        };
        counts[slot] += shape.iter().product::<usize>();
    }
    Ok(counts)
}

fn audit_one(cfg: &ModelConfig) -> Result<ParamAudit> {
    let formula = closed_form(cfg);
    let counted = enumerate(cfg)?;
    if formula != counted {
        return Err(Error::Contract(format!(
            "{}: closed-form counts {formula:?} disagree with enumerated {counted:?}",
            cfg.mode
        )));
    }
    let dense = attention_per_layer(&cfg.with_mode(Mode::None)) * cfg.n_layers;
    let [embedding, attention, ffn, norms] = counted;
    Ok(ParamAudit {
        mode: cfg.mode,
        embedding,
        attention,
        ffn,
        norms,
        total: embedding + attention + ffn + norms,
        attention_savings: 1.0 - attention as f64 / dense as f64,
    })
}

/// Audit of `cfg.mode`, after checking the cross-mode invariants: equal
/// embedding, FFN and norm counts in all six modes, and equal totals for
/// each tied mode and its half-width baseline.
pub fn param_audit(cfg: &ModelConfig) -> Result<ParamAudit> {
    let all = Mode::ALL
        .iter()
        .map(|&m| audit_one(&cfg.with_mode(m)))
        .collect::<Result<Vec<_>>>()?;
    let base = &all[0];
    for a in &all[1..] {
        if (a.embedding, a.ffn, a.norms) != (base.embedding, base.ffn, base.norms) {
            return Err(Error::Contract(format!(
                "non-attention counts differ between {} and {}",
                base.mode, a.mode
            )));
        }
    }
    let total = |m: Mode| all.iter().find(|a| a.mode == m).map(|a| a.total).unwrap();
    for (tied, half) in [
        (Mode::CropeQk, Mode::HalfRopeQk),
        (Mode::CropeAll, Mode::HalfRopeAll),
    ] {
        if total(tied) != total(half) {
            return Err(Error::Contract(format!(
                "{tied} total {} differs from {half} total {}",
                total(tied),
                total(half)
            )));
        }
    }
    Ok(all.into_iter().find(|a| a.mode == cfg.mode).unwrap())
}
