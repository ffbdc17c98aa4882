use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::*;
use crate::error::Error;
use crate::rng::SplitRng;
use crate::tensor::Tensor;

fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::new(shape, data.to_vec()).unwrap()
}

fn randn(rng: &mut impl Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::new(shape, data).unwrap()
}

#[test]
fn matmul_identity_and_zero() {
    let mut rng = SplitRng::new(3).stream(0);
    let b = randn(&mut rng, &[3, 4]);
    let mut g = Graph::new();
    let i = g.input(Tensor::identity(3));
    let bv = g.input(b.clone());
    let y = g.matmul(i, bv).unwrap();
    assert_eq!(g.value(y), &b);

    let a = g.input(randn(&mut rng, &[2, 3]));
    let z = g.input(Tensor::zeros(&[3, 5]));
    let y = g.matmul(a, z).unwrap();
    assert!(g.value(y).data().iter().all(|&v| v == 0.0));
}

#[test]
fn matmul_closed_form() {
    let mut g = Graph::new();
    let a = g.input(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let b = g.input(t(&[2, 2], &[5.0, 6.0, 7.0, 8.0]));
    let y = g.matmul(a, b).unwrap();
    assert_eq!(g.value(y).data(), &[19.0, 22.0, 43.0, 50.0]);
}

#[test]
fn matmul_shape_mismatch() {
    let mut g = Graph::<f64>::new();
    let a = g.input(Tensor::zeros(&[2, 3]));
    let b = g.input(Tensor::zeros(&[4, 2]));
    assert!(matches!(g.matmul(a, b), Err(Error::Dimension { .. })));
}

#[test]
fn softmax_examples() {
    let mut g = Graph::new();
    let x = g.input(t(
        &[3, 3],
        &[0.0, 0.0, 0.0, 1000.0, 1000.0, 1000.0, 5.0, 5.0, 5.0],
    ));
    let y = g.softmax(x).unwrap();
    for &v in g.value(y).data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
    let x = g.input(t(&[1, 2], &[0.0, 3f64.ln()]));
    let y = g.softmax(x).unwrap();
    let d = g.value(y).data();
    assert!((d[0] - 0.25).abs() < 1e-15 && (d[1] - 0.75).abs() < 1e-15);
}

#[test]
fn softmax_rejects_nan() {
    let mut g = Graph::new();
    let x = g.input(t(&[1, 2], &[0.0, f64::NAN]));
    assert!(matches!(g.softmax(x), Err(Error::Numeric(_))));
}

#[test]
fn cross_entropy_examples() {
    let mut g = Graph::<f64>::new();
    let x = g.input(Tensor::zeros(&[2, 4]));
    let l = g.cross_entropy(x, &[1, 3]).unwrap();
    assert!((g.value(l).data()[0] - 4f64.ln()).abs() < 1e-15);

    let x = g.input(t(&[1, 2], &[0.0, 3f64.ln()]));
    let l = g.cross_entropy(x, &[1]).unwrap();
    assert!((g.value(l).data()[0] + 0.75f64.ln()).abs() < 1e-15);

    let mut prev = f64::INFINITY;
    for mag in [1.0, 10.0, 100.0] {
        let x = g.input(t(&[1, 3], &[mag, 0.0, 0.0]));
        let l = g.cross_entropy(x, &[0]).unwrap();
        let v = g.value(l).data()[0];
        assert!(v < prev);
        prev = v;
    }
    assert!(prev < 1e-40);

    let x = g.input(Tensor::zeros(&[1, 4]));
    assert!(matches!(g.cross_entropy(x, &[4]), Err(Error::Index { .. })));
}

#[test]
fn backward_sum_of_squares() {
    let mut store = ParamStore::new();
    let id = store.add("x", t(&[3], &[1.0, -2.0, 0.5])).unwrap();
    let mut g = Graph::new();
    let x = g.param(&store, id);
    let sq = g.mul(x, x).unwrap();
    let l = g.sum(sq);
    g.backward(l, &mut store).unwrap();
    assert_eq!(store.get(id).grad.data(), &[2.0, -4.0, 1.0]);
}

#[test]
fn backward_linear_map_gives_column_sums() {
    let a = t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    let mut store = ParamStore::new();
    let id = store.add("x", t(&[3, 1], &[0.3, 0.1, -0.7])).unwrap();
    let mut g = Graph::new();
    let av = g.input(a);
    let x = g.param(&store, id);
    let y = g.matmul(av, x).unwrap();
    let l = g.sum(y);
    g.backward(l, &mut store).unwrap();
    assert_eq!(store.get(id).grad.data(), &[5.0, 7.0, 9.0]);
    // Input leaves expose their gradient too.
    assert_eq!(g.grad(x).unwrap().data(), &[5.0, 7.0, 9.0]);
}

#[test]
fn backward_needs_scalar() {
    let mut store = ParamStore::<f64>::new();
    let mut g = Graph::new();
    let x = g.input(Tensor::zeros(&[2]));
    assert!(matches!(g.backward(x, &mut store), Err(Error::Shape(_))));
}

#[test]
fn backward_twice_doubles_and_unreachable_untouched() {
    let mut rng = SplitRng::new(9).stream(0);
    let mut store = ParamStore::new();
    let w = store.add("w", randn(&mut rng, &[4, 3])).unwrap();
    let unused = store.add("unused", randn(&mut rng, &[2])).unwrap();
    store.get_mut(unused).grad.data_mut()[0] = 7.0;
    let mut g = Graph::new();
    let x = g.input(randn(&mut rng, &[5, 3]));
    let wv = g.param(&store, w);
    let y = g.linear(x, wv).unwrap();
    let y = g.silu(y);
    let l = g.mean(y);
    g.backward(l, &mut store).unwrap();
    let once = store.get(w).grad.clone();
    g.backward(l, &mut store).unwrap();
    for (a, b) in store.get(w).grad.data().iter().zip(once.data()) {
        assert_eq!(*a, 2.0 * b);
    }
    assert_eq!(store.get(unused).grad.data(), &[7.0, 0.0]);
}

#[test]
fn grad_check_polynomial_and_constant() {
    let mut store = ParamStore::new();
    store.add("x", t(&[2], &[0.7, -1.3])).unwrap();
    let r = grad_check(&mut store, 1e-5, |g, s| {
        let x = g.param(s, ParamId(0));
        let sq = g.mul(x, x).unwrap();
        Ok(g.sum(sq))
    })
    .unwrap();
    assert!(r.max_rel_err <= 1e-8, "{r:?}");

    let r = grad_check(&mut store, 1e-5, |g, s| {
        let x = g.param(s, ParamId(0));
        let s = g.sum(x);
        Ok(g.scale(s, 0.0))
    })
    .unwrap();
    assert_eq!(r.max_rel_err, 0.0);
}

#[test]
fn grad_check_detects_nondeterminism() {
    let mut store = ParamStore::new();
    store.add("x", t(&[1], &[1.0])).unwrap();
    let mut calls = 0.0;
    let r = grad_check(&mut store, 1e-5, |g, s| {
        calls += 1.0;
        let x = g.param(s, ParamId(0));
        Ok(g.scale(x, calls))
    });
    assert!(matches!(r, Err(Error::NonDeterministic { .. })));
}

/// Exercises every op on the tape in one scalar loss.
fn composite_loss(g: &mut Graph<f64>, s: &ParamStore<f64>, seed: u64) -> crate::Result<Var> {
    let (batch, seq, heads, hd) = (2, 3, 2, 4);
    let width = heads * hd;
    let mut rng = SplitRng::new(seed).stream(99);
    let table = g.param(s, ParamId(0));
    let ids: Vec<usize> = (0..batch * seq).map(|_| rng.random_range(0..5)).collect();
    let x = g.gather_rows(table, &ids)?;
    let blocks = g.param(s, ParamId(1));
    let w = g.blocks(blocks, true)?;
    let q = g.linear(x, w)?;
    let dense = g.param(s, ParamId(2));
    let w2 = g.blocks(dense, false)?;
    let k = g.linear(x, w2)?;
    let q = g.split_heads(q, batch, seq, heads)?;
    let k = g.split_heads(k, batch, seq, heads)?;
    let qn = g.rms_normalize(q, 1e-6);
    let gain = g.param(s, ParamId(3));
    let group: Vec<usize> = (0..batch * heads * seq)
        .map(|r| (r / seq) % heads)
        .collect();
    let qn = g.scale_rows(qn, gain, group)?;
    let cos: Vec<f64> = (0..seq * hd / 2).map(|i| (0.3 * i as f64).cos()).collect();
    let sin: Vec<f64> = (0..seq * hd / 2).map(|i| (0.3 * i as f64).sin()).collect();
    let qr = g.rotate(qn, cos.clone(), sin.clone(), seq)?;
    let kr = g.rotate(k, cos, sin, seq)?;
    let sc = g.bmm(qr, kr, true)?;
    let sc = g.scale(sc, 0.5);
    let sc = g.causal_mask(sc)?;
    let att = g.softmax(sc)?;
    let o = g.bmm(att, k, false)?;
    let o = g.merge_heads(o, batch, seq, heads)?;
    let h = g.add(o, x)?;
    let cg = g.param(s, ParamId(4));
    let h = g.mul_cols(h, cg)?;
    let h2 = g.silu(h);
    let h = g.mul(h, h2)?;
    let logits = g.linear(h, table)?;
    let targets: Vec<usize> = (0..batch * seq).map(|_| rng.random_range(0..5)).collect();
    let ce = g.cross_entropy(logits, &targets)?;
    let r = g.reshape(h, &[batch * seq * width])?;
    let m = g.mean(r);
    let m = g.mul(m, m)?;
    let sc2 = g.matmul(x, w)?;
    let s2 = g.sum(sc2);
    let s2 = g.scale(s2, 1e-2);
    let t = g.add(ce, m)?;
    g.add(t, s2)
}

/// Half-scale normal entries keep the composite loss O(1), where central
/// differences resolve 1e-4 relative error.
fn composite_store(seed: u64) -> ParamStore<f64> {
    let mut rng = SplitRng::new(seed).stream(0);
    let mut s = ParamStore::new();
    let randn = |rng: &mut _, shape: &[usize]| randn(rng, shape).map(|v| 0.5 * v);
    s.add("table", randn(&mut rng, &[5, 8])).unwrap();
    s.add("tied", randn(&mut rng, &[4, 4, 2])).unwrap();
    s.add("untied", randn(&mut rng, &[4, 4, 4])).unwrap();
    s.add("qk_gain", randn(&mut rng, &[2])).unwrap();
    s.add("col_gain", randn(&mut rng, &[8])).unwrap();
    s
}

#[test]
fn composite_graph_matches_finite_differences_over_seeds() {
    let mut worst: f64 = 0.0;
    for seed in 0..100 {
        let mut store = composite_store(seed);
        let r = grad_check(&mut store, 1e-5, |g, s| composite_loss(g, s, seed)).unwrap();
        assert!(r.max_rel_err <= 1e-4, "seed {seed}: {r:?}");
        worst = worst.max(r.max_rel_err);
    }
    assert!(worst.is_finite());
}

#[test]
fn batched_matmul_matches_per_slice_products() {
    let mut rng = SplitRng::new(1).stream(0);
    let a = randn(&mut rng, &[3, 2, 4]);
    let b = randn(&mut rng, &[3, 5, 4]);
    let mut g = Graph::new();
    let (av, bv) = (g.input(a.clone()), g.input(b.clone()));
    let y = g.bmm(av, bv, true).unwrap();
    for i in 0..3 {
        for r in 0..2 {
            for c in 0..5 {
                let expect: f64 = (0..4)
                    .map(|k| a.data()[i * 8 + r * 4 + k] * b.data()[i * 20 + c * 4 + k])
                    .sum();
                let got = g.value(y).data()[i * 10 + r * 5 + c];
                assert!((expect - got).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn split_then_merge_heads_is_identity() {
    let mut rng = SplitRng::new(2).stream(0);
    let x = randn(&mut rng, &[2 * 3, 4 * 2]);
    let mut g = Graph::new();
    let xv = g.input(x.clone());
    let s = g.split_heads(xv, 2, 3, 4).unwrap();
    assert_eq!(g.shape(s), &[8, 3, 2]);
    let m = g.merge_heads(s, 2, 3, 4).unwrap();
    assert_eq!(g.value(m), &x);
}

#[test]
fn causal_mask_blocks_future() {
    let mut g = Graph::<f64>::new();
    let x = g.input(Tensor::zeros(&[1, 3, 3]));
    let m = g.causal_mask(x).unwrap();
    let p = g.softmax(m).unwrap();
    let d = g.value(p).data();
    assert_eq!(&d[0..3], &[1.0, 0.0, 0.0]);
    assert_eq!(&d[3..6], &[0.5, 0.5, 0.0]);
}

mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn softmax_rows_sum_to_one(data in proptest::collection::vec(-700.0f64..700.0, 1..40), cols in 1usize..8) {
            let rows = data.len() / cols;
            prop_assume!(rows > 0);
            let x = Tensor::new(&[rows, cols], data[..rows * cols].to_vec()).unwrap();
            let mut g = Graph::new();
            let xv = g.input(x);
            let y = g.softmax(xv).unwrap();
            for row in g.value(y).data().chunks(cols) {
                let s: f64 = row.iter().sum();
                prop_assert!((s - 1.0).abs() <= 1e-12);
                prop_assert!(row.iter().all(|&v| v >= 0.0));
            }
        }
    }
}
