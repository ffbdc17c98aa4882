use alloc::vec;
use alloc::vec::Vec;

use super::*;
use crate::autodiff::grad_check;
use crate::layers::block_linear::tying_violation;

fn tiny(mode: Mode) -> ModelConfig {
    ModelConfig {
        n_layers: 1,
        n_heads: 2,
        d_model: 16,
        d_ff: 24,
        vocab_size: 11,
        max_seq_len: 16,
        mode,
        seed: 3,
        ..ModelConfig::desk()
    }
}

#[test]
fn store_matches_layout() {
    for mode in Mode::ALL {
        let cfg = ModelConfig {
            n_layers: 2,
            ..tiny(mode)
        };
        let m = build_model::<f64>(&cfg).unwrap();
        let layout = param_layout(&cfg).unwrap();
        assert_eq!(m.store.len(), layout.len());
        for (p, (name, shape, _)) in m.store.iter().zip(&layout) {
            assert_eq!((&p.name, p.value.shape()), (name, shape.as_slice()));
        }
        assert_eq!(m.store.num_scalars(), param_audit(&cfg).unwrap().total);
    }
}

#[test]
fn tied_flags_follow_mode() {
    let m = build_model::<f64>(&tiny(Mode::CropeQkv)).unwrap();
    let flags: Vec<bool> = m.layers[0].projections().iter().map(|p| p.tied).collect();
    assert_eq!(flags, [true, true, true, false]);
    let m = build_model::<f64>(&tiny(Mode::HalfRopeAll)).unwrap();
    assert_eq!(
        (
            m.layers[0].wq.out_dim,
            m.layers[0].wo.in_dim,
            m.layers[0].wo.out_dim
        ),
        (8, 8, 16)
    );
}

#[test]
fn init_is_seeded() {
    let a = build_model::<f64>(&tiny(Mode::CropeAll)).unwrap();
    let b = build_model::<f64>(&tiny(Mode::CropeAll)).unwrap();
    assert_eq!(a.store.checksum(), b.store.checksum());
    let c = build_model::<f64>(&ModelConfig {
        seed: 4,
        ..tiny(Mode::CropeAll)
    })
    .unwrap();
    assert_ne!(a.store.checksum(), c.store.checksum());
}

#[test]
fn single_position_attends_to_itself() {
    let m = build_model::<f64>(&tiny(Mode::CropeQk)).unwrap();
    let a = m.attention_map(&[4], 0, 1).unwrap();
    assert_eq!(a.shape(), [1, 1]);
    assert_eq!(a.data()[0], 1.0);
}

#[test]
fn attention_rows_sum_to_one() {
    for causal in [true, false] {
        let m = build_model::<f64>(&ModelConfig {
            causal,
            ..tiny(Mode::None)
        })
        .unwrap();
        let a = m.attention_map(&[1, 5, 2, 9, 0, 3], 0, 0).unwrap();
        for row in a.data().chunks(6) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
        if causal {
            assert_eq!(a.at2(0, 1), 0.0);
        }
    }
}

#[test]
fn bad_indices() {
    let m = build_model::<f64>(&tiny(Mode::None)).unwrap();
    assert!(matches!(
        m.logits(&[1, 11], 1, 2),
        Err(Error::Index {
            what: "token id",
            ..
        })
    ));
    assert!(matches!(
        m.attention_map(&[1], 1, 0),
        Err(Error::Index { what: "layer", .. })
    ));
    assert!(matches!(
        m.attention_map(&[1], 0, 2),
        Err(Error::Index { what: "head", .. })
    ));
    assert!(m.logits(&[0; 17], 1, 17).is_err());
}

#[test]
fn later_tokens_do_not_leak_backwards() {
    for mode in Mode::ALL {
        let m = build_model::<f64>(&ModelConfig {
            n_layers: 2,
            ..tiny(mode)
        })
        .unwrap();
        let a = [3, 1, 4, 1, 5, 9, 2, 6];
        let mut b = a;
        b[5..].copy_from_slice(&[0, 10, 7]);
        let (la, lb) = (m.logits(&a, 1, 8).unwrap(), m.logits(&b, 1, 8).unwrap());
        let v = 11;
        assert_eq!(la.data()[..5 * v], lb.data()[..5 * v]);
        assert_ne!(la.data()[5 * v..], lb.data()[5 * v..]);
    }
}

/// A dense model loaded with the tied model's materialized weights computes
/// the same logits bit for bit.
#[test]
fn untied_copy_of_tied_model_is_identical() {
    let tied = build_model::<f64>(&ModelConfig {
        n_layers: 2,
        ..tiny(Mode::CropeAll)
    })
    .unwrap();
    let mut dense = build_model::<f64>(&ModelConfig {
        n_layers: 2,
        ..tiny(Mode::None)
    })
    .unwrap();
    for (lt, ld) in tied.layers.iter().zip(&dense.layers) {
        for (pt, pd) in lt.projections().iter().zip(ld.projections()) {
            let w = pt.weight(&tied.store);
            assert_eq!(tying_violation(&w), None);
            pd.load_dense(&mut dense.store, &w).unwrap();
        }
    }
    for p in tied.store.iter().filter(|p| !p.name.contains(".attn.w")) {
        let id = dense.store.find(&p.name).unwrap();
        dense.store.get_mut(id).value = p.value.clone();
    }
    let tokens = [1, 7, 3, 3, 0, 10, 2, 5, 9, 4];
    let (a, b) = (
        tied.logits(&tokens, 2, 5).unwrap(),
        dense.logits(&tokens, 2, 5).unwrap(),
    );
    assert!(a
        .data()
        .iter()
        .zip(b.data())
        .all(|(x, y)| x.to_bits() == y.to_bits()));
}

/// Prefixing a sequence with padding shifts every position, but scores in
/// the first layer depend only on relative offsets.
#[test]
fn first_layer_scores_are_position_relative() {
    let cfg = ModelConfig {
        max_seq_len: 64,
        ..tiny(Mode::CropeQk)
    };
    let m = build_model::<f64>(&cfg).unwrap();
    let seq = [2, 8, 1, 1, 7, 3];
    let pad = 37;
    let mut long = vec![0usize; pad];
    long.extend_from_slice(&seq);
    for head in 0..2 {
        let short = m.score_map(&seq, 0, head).unwrap();
        let full = m.score_map(&long, 0, head).unwrap();
        let n = long.len();
        for i in 0..seq.len() {
            for j in 0..seq.len() {
                let d = (short.at2(i, j) - full.data()[(pad + i) * n + pad + j]).abs();
                assert!(d <= 1e-6, "{d}");
            }
        }
    }
}

#[test]
fn full_model_gradients_match_finite_differences() {
    for mode in Mode::ALL {
        let model = build_model::<f64>(&tiny(mode)).unwrap();
        let inputs = [1, 4, 9, 2, 0, 10, 3, 3];
        let targets = [4, 9, 2, 0, 10, 3, 3, 7];
        let mut store = model.store.clone();
        let report = grad_check(&mut store, 1e-5, |g, s| {
            model.loss_with(s, g, &inputs, &targets, 2, 4)
        })
        .unwrap();
        assert!(report.max_rel_err <= 1e-4, "{mode}: {report:?}");
        assert_eq!(report.checked, model.store.num_scalars());
    }
}

#[test]
fn cast_roundtrip_keeps_f32_values() {
    let m = build_model::<f32>(&tiny(Mode::CropeQk)).unwrap();
    let back = m.cast::<f64>().unwrap().cast::<f32>().unwrap();
    assert_eq!(m.store.checksum(), back.store.checksum());
}
