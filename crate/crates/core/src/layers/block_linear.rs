//! Linear projection whose weight is a grid of 2×2 blocks.
//!
//! Tied blocks have the form `[[a, b], [-b, a]]`, so for every even `i, j`
//! the dense weight satisfies `W[i][j] = W[i+1][j+1]` and
//! `W[i+1][j] = -W[i][j+1]`. Only `(a, b)` are stored; the dense weight is
//! rebuilt from them on every forward pass, so no update can break the
//! structure. Untied blocks store all four entries and are equivalent to a
//! plain dense layer.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand_distr::{Distribution, Normal};

use crate::autodiff::{Graph, ParamId, ParamStore, Var};
use crate::error::{Error, Result};
use crate::rng::SplitRng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
#[cfg(not(feature = "std"))]
use num_traits::Float;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockLinear {
    pub in_dim: usize,
    pub out_dim: usize,
    pub tied: bool,
    pub free: ParamId,
}

impl BlockLinear {
    /// Registers `name` in `store` with entries drawn from
    /// `normal(0, 1/in_dim)`, on the random stream of the new parameter.
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        name: impl Into<String>,
        in_dim: usize,
        out_dim: usize,
        tied: bool,
        rng: &SplitRng,
    ) -> Result<Self> {
        let shape = Self::free_shape(in_dim, out_dim, tied)?;
        let numel: usize = shape.iter().product();
        let std = (1.0 / in_dim as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        let mut r = rng.stream(store.len() as u64);
        let data = (0..numel).map(|_| S::of(normal.sample(&mut r))).collect();
        let free = store.add(name, Tensor::new(&shape, data)?)?;
        Ok(Self {
            in_dim,
            out_dim,
            tied,
            free,
        })
    }

    /// Shape of the stored free parameters: `[out/2, in/2, 2]` tied,
    /// `[out/2, in/2, 4]` untied.
    pub fn free_shape(in_dim: usize, out_dim: usize, tied: bool) -> Result<[usize; 3]> {
        if in_dim == 0 || out_dim == 0 || !in_dim.is_multiple_of(2) || !out_dim.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "BlockLinear dims must be even and positive, got in={in_dim} out={out_dim}"
            )));
        }
        Ok([out_dim / 2, in_dim / 2, if tied { 2 } else { 4 }])
    }

    /// Number of free scalars: `in*out/2` tied, `in*out` untied.
    pub fn count_params(&self) -> usize {
        count_params(self.in_dim, self.out_dim, self.tied)
    }

    /// Dense `[out, in]` weight.
    pub fn weight<S: Scalar>(&self, store: &ParamStore<S>) -> Tensor<S> {
        materialize(
            store.get(self.free).value.data(),
            self.out_dim / 2,
            self.in_dim / 2,
            self.tied,
        )
    }

    /// `y = W·x` over the last axis of `x`.
    pub fn forward<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        store: &ParamStore<S>,
        x: Var,
    ) -> Result<Var> {
        let shape = g.shape(x).to_vec();
        if shape.last() != Some(&self.in_dim) {
            return Err(Error::Dimension {
                op: "block_linear",
                lhs: shape,
                rhs: alloc::vec![self.out_dim, self.in_dim],
            });
        }
        let rows = g.value(x).rows();
        let flat = if shape.len() == 2 {
            x
        } else {
            g.reshape(x, &[rows, self.in_dim])?
        };
        let free = g.param(store, self.free);
        let w = g.blocks(free, self.tied)?;
        let y = g.linear(flat, w)?;
        if shape.len() == 2 {
            return Ok(y);
        }
        let mut out_shape = shape;
        *out_shape.last_mut().unwrap() = self.out_dim;
        g.reshape(y, &out_shape)
    }

    /// Overwrites the free parameters so the layer computes `dense`.
    /// Tied layers reject matrices that break the block structure.
    pub fn load_dense<S: Scalar>(
        &self,
        store: &mut ParamStore<S>,
        dense: &Tensor<S>,
    ) -> Result<()> {
        if dense.shape() != [self.out_dim, self.in_dim] {
            return Err(Error::Dimension {
                op: "load_dense",
                lhs: dense.shape().to_vec(),
                rhs: alloc::vec![self.out_dim, self.in_dim],
            });
        }
        if self.tied {
            if let Some(v) = tying_violation(dense) {
                return Err(Error::Contract(format!(
                    "dense matrix is not block-tied (max violation {v})"
                )));
            }
        }
        let free = dense_to_free(dense, self.tied);
        store
            .get_mut(self.free)
            .value
            .data_mut()
            .copy_from_slice(&free);
        Ok(())
    }
}

pub fn count_params(in_dim: usize, out_dim: usize, tied: bool) -> usize {
    if tied {
        in_dim * out_dim / 2
    } else {
        in_dim * out_dim
    }
}

/// Expands free block parameters `[ob, ib, 2|4]` into a dense `[2ob, 2ib]`
/// weight.
pub fn materialize<S: Scalar>(free: &[S], ob: usize, ib: usize, tied: bool) -> Tensor<S> {
    let (rows, cols) = (2 * ob, 2 * ib);
    let mut w = Tensor::zeros(&[rows, cols]);
    let d = w.data_mut();
    let k = if tied { 2 } else { 4 };
    for bi in 0..ob {
        for bj in 0..ib {
            let p = &free[(bi * ib + bj) * k..(bi * ib + bj + 1) * k];
            let (r0, r1, c0, c1) = (2 * bi * cols, (2 * bi + 1) * cols, 2 * bj, 2 * bj + 1);
            if tied {
                let (a, b) = (p[0], p[1]);
                d[r0 + c0] = a;
                d[r0 + c1] = b;
                d[r1 + c0] = -b;
                d[r1 + c1] = a;
            } else {
                d[r0 + c0] = p[0];
                d[r0 + c1] = p[1];
                d[r1 + c0] = p[2];
                d[r1 + c1] = p[3];
            }
        }
    }
    w
}

/// Accumulates the dense-weight gradient `gw[2ob×2ib]` into the free
/// parameter gradient.
pub fn materialize_backward<S: Scalar>(
    gw: &[S],
    gfree: &mut [S],
    ob: usize,
    ib: usize,
    tied: bool,
) {
    let cols = 2 * ib;
    let k = if tied { 2 } else { 4 };
    for bi in 0..ob {
        for bj in 0..ib {
            let (r0, r1, c0, c1) = (2 * bi * cols, (2 * bi + 1) * cols, 2 * bj, 2 * bj + 1);
            let p = &mut gfree[(bi * ib + bj) * k..(bi * ib + bj + 1) * k];
            if tied {
                p[0] += gw[r0 + c0] + gw[r1 + c1];
                p[1] += gw[r0 + c1] - gw[r1 + c0];
            } else {
                p[0] += gw[r0 + c0];
                p[1] += gw[r0 + c1];
                p[2] += gw[r1 + c0];
                p[3] += gw[r1 + c1];
            }
        }
    }
}

fn dense_to_free<S: Scalar>(dense: &Tensor<S>, tied: bool) -> Vec<S> {
    let cols = dense.cols();
    let (ob, ib) = (dense.rows() / 2, cols / 2);
    let d = dense.data();
    let mut out = Vec::with_capacity(ob * ib * if tied { 2 } else { 4 });
    for bi in 0..ob {
        for bj in 0..ib {
            let (r0, r1, c0, c1) = (2 * bi * cols, (2 * bi + 1) * cols, 2 * bj, 2 * bj + 1);
            if tied {
                out.extend([d[r0 + c0], d[r0 + c1]]);
            } else {
                out.extend([d[r0 + c0], d[r0 + c1], d[r1 + c0], d[r1 + c1]]);
            }
        }
    }
    out
}

/// Largest deviation from the tying relations over all even `(i, j)`, or
/// `None` when every block is exactly `[[a, b], [-b, a]]`.
pub fn tying_violation<S: Scalar>(w: &Tensor<S>) -> Option<f64> {
    let cols = w.cols();
    let d = w.data();
    let mut worst = 0.0f64;
    for i in (0..w.rows()).step_by(2) {
        for j in (0..cols).step_by(2) {
            let diag = (d[i * cols + j] - d[(i + 1) * cols + j + 1]).as_f64().abs();
            let anti = (d[(i + 1) * cols + j] + d[i * cols + j + 1]).as_f64().abs();
            worst = worst.max(diag).max(anti);
        }
    }
    (worst != 0.0).then_some(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Graph;

    fn layer_from(
        free: &[f64],
        in_dim: usize,
        out_dim: usize,
        tied: bool,
    ) -> (ParamStore<f64>, BlockLinear) {
        let mut store = ParamStore::new();
        let shape = BlockLinear::free_shape(in_dim, out_dim, tied).unwrap();
        let id = store
            .add("w", Tensor::new(&shape, free.to_vec()).unwrap())
            .unwrap();
        (
            store,
            BlockLinear {
                in_dim,
                out_dim,
                tied,
                free: id,
            },
        )
    }

    fn apply(layer: &BlockLinear, store: &ParamStore<f64>, x: &[f64]) -> Vec<f64> {
        let mut g = Graph::new();
        let xv = g.input(Tensor::new(&[1, x.len()], x.to_vec()).unwrap());
        let y = layer.forward(&mut g, store, xv).unwrap();
        g.value(y).data().to_vec()
    }

    #[test]
    fn identity_block() {
        let (s, l) = layer_from(&[1.0, 0.0], 2, 2, true);
        assert_eq!(apply(&l, &s, &[3.0, -4.0]), vec![3.0, -4.0]);
    }

    #[test]
    fn quarter_turn_block() {
        let (s, l) = layer_from(&[0.0, 1.0], 2, 2, true);
        assert_eq!(l.weight(&s).data(), &[0.0, 1.0, -1.0, 0.0]);
        assert_eq!(apply(&l, &s, &[5.0, 7.0]), vec![7.0, -5.0]);
    }

    #[test]
    fn odd_dims_rejected() {
        let mut store = ParamStore::<f64>::new();
        let rng = SplitRng::new(0);
        assert!(matches!(
            BlockLinear::new(&mut store, "w", 3, 4, true, &rng),
            Err(Error::Config(_))
        ));
        assert!(BlockLinear::new(&mut store, "w", 4, 5, false, &rng).is_err());
    }

    #[test]
    fn param_counts() {
        let mut store = ParamStore::<f32>::new();
        let rng = SplitRng::new(0);
        let t = BlockLinear::new(&mut store, "t", 1024, 1024, true, &rng).unwrap();
        let u = BlockLinear::new(&mut store, "u", 1024, 1024, false, &rng).unwrap();
        assert_eq!(t.count_params(), 524_288);
        assert_eq!(store.get(t.free).value.numel(), 524_288);
        assert_eq!(u.count_params(), 1_048_576);
        assert_eq!(store.get(u.free).value.numel(), 1_048_576);
        assert_eq!(count_params(2, 2, true), 2);
    }

    #[test]
    fn untied_from_dense_reproduces_matmul_exactly() {
        let mut store = ParamStore::<f64>::new();
        let rng = SplitRng::new(5);
        let l = BlockLinear::new(&mut store, "w", 6, 4, false, &rng).unwrap();
        let dense =
            Tensor::new(&[4, 6], (0..24).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        l.load_dense(&mut store, &dense).unwrap();
        assert_eq!(l.weight(&store), dense);
        let x = Tensor::new(&[6, 1], (0..6).map(|i| i as f64 - 2.5).collect()).unwrap();
        let expect = crate::tensor::matmul(&dense, &x).unwrap();
        assert_eq!(apply(&l, &store, x.data()), expect.data());
    }

    #[test]
    fn tied_rejects_unstructured_dense() {
        let (mut s, l) = layer_from(&[0.0, 0.0], 2, 2, true);
        let bad = Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        assert!(matches!(
            l.load_dense(&mut s, &bad),
            Err(Error::Contract(_))
        ));
        let good = Tensor::from_rows(&[&[1.0, 2.0], &[-2.0, 1.0]]).unwrap();
        l.load_dense(&mut s, &good).unwrap();
        assert_eq!(s.get(l.free).value.data(), &[1.0, 2.0]);
    }

    #[test]
    fn forward_keeps_leading_axes() {
        let mut store = ParamStore::<f64>::new();
        let l = BlockLinear::new(&mut store, "w", 4, 6, true, &SplitRng::new(1)).unwrap();
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros(&[2, 3, 4]));
        let y = l.forward(&mut g, &store, x).unwrap();
        assert_eq!(g.shape(y), &[2, 3, 6]);
        let bad = g.input(Tensor::zeros(&[2, 5]));
        assert!(l.forward(&mut g, &store, bad).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn tying_survives_arbitrary_updates(
                ob in 1usize..5,
                ib in 1usize..5,
                seed in any::<u64>(),
                steps in proptest::collection::vec(-10.0f64..10.0, 1..6),
            ) {
                let mut store = ParamStore::<f64>::new();
                let l = BlockLinear::new(&mut store, "w", 2 * ib, 2 * ob, true, &SplitRng::new(seed)).unwrap();
                for (k, lr) in steps.iter().enumerate() {
                    let mut g = Graph::new();
                    let x = g.input(Tensor::full(&[3, 2 * ib], 0.5 + k as f64));
                    let y = l.forward(&mut g, &store, x).unwrap();
                    let y2 = g.mul(y, y).unwrap();
                    let loss = g.sum(y2);
                    store.zero_grad();
                    g.backward(loss, &mut store).unwrap();
                    let p = store.get_mut(l.free);
                    let grad = p.grad.data().to_vec();
                    p.value.data_mut().iter_mut().zip(grad).for_each(|(v, gr)| *v -= lr * gr);
                    prop_assert_eq!(tying_violation(&l.weight(&store)), None);
                }
            }

            #[test]
            fn tied_stores_half_of_untied(ib in 1usize..64, ob in 1usize..64) {
                let (i, o) = (2 * ib, 2 * ob);
                prop_assert_eq!(2 * count_params(i, o, true), count_params(i, o, false));
            }
        }
    }
}
