use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::param::{ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<S> {
    Input,
    Param(ParamId),
    MatMul {
        a: Var,
        b: Var,
        trans_b: bool,
    },
    BatchMatMul {
        a: Var,
        b: Var,
        batch: usize,
        trans_b: bool,
    },
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, S),
    Silu(Var),
    RmsNormalize {
        x: Var,
        inv_rms: Vec<S>,
    },
    MulCols {
        x: Var,
        gain: Var,
    },
    ScaleRows {
        x: Var,
        gain: Var,
        group: Vec<usize>,
    },
    Softmax(Var),
    CausalMask(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<S>,
    },
    GatherRows {
        x: Var,
        rows: Vec<usize>,
    },
    Rotate {
        x: Var,
        cos: Vec<S>,
        sin: Vec<S>,
        seq: usize,
    },
    SplitHeads {
        x: Var,
        seq: usize,
        heads: usize,
    },
    MergeHeads {
        x: Var,
        seq: usize,
        heads: usize,
    },
    Blocks {
        free: Var,
        tied: bool,
    },
    Sum(Var),
    Mean(Var),
    Reshape(Var),
}

#[derive(Debug)]
struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
}

/// Reverse-mode tape. Nodes are appended in evaluation order, so the tape
/// order is already a topological order of the DAG. A fresh graph is built
/// for every forward pass.
#[derive(Debug, Default)]
pub struct Graph<S> {
    nodes: Vec<Node<S>>,
    grads: Vec<Option<Vec<S>>>,
}

fn dim_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Error {
    Error::Dimension {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

fn sigmoid<S: Scalar>(x: S) -> S {
    S::one() / (S::one() + (-x).exp())
}

/// Maps row `r` of a split-heads tensor `[batch*heads*seq, hd]` to its row
/// in the merged `[batch*seq, heads*hd]` layout and the head column offset.
fn head_row(r: usize, seq: usize, heads: usize) -> (usize, usize) {
    let t = r % seq;
    let bh = r / seq;
    let (b, h) = (bh / heads, bh % heads);
    (b * seq + t, h)
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of the last `backward` call with respect to `v`, if `v` was
    /// reachable from the loss.
    pub fn grad(&self, v: Var) -> Option<Tensor<S>> {
        let g = self.grads.get(v.0)?.as_ref()?;
        Tensor::new(self.shape(v), g.clone()).ok()
    }

    pub fn input(&mut self, t: Tensor<S>) -> Var {
        self.push(t, Op::Input)
    }

    pub fn param(&mut self, store: &ParamStore<S>, id: ParamId) -> Var {
        self.push(store.get(id).value.clone(), Op::Param(id))
    }

    /// `a[m×k] · b[k×n]`, or `a · bᵀ` with `b[n×k]` when `trans_b`.
    pub fn matmul_ext(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let ok = sa.len() == 2
            && sb.len() == 2
            && if trans_b {
                sa[1] == sb[1]
            } else {
                sa[1] == sb[0]
            };
        if !ok {
            return Err(dim_err("matmul", sa, sb));
        }
        let (m, k) = (sa[0], sa[1]);
        let n = if trans_b { sb[0] } else { sb[1] };
        let (rsb, csb) = if trans_b {
            (1, k as isize)
        } else {
            (n as isize, 1)
        };
        let mut out = Tensor::zeros(&[m, n]);
        S::gemm(
            m,
            k,
            n,
            S::one(),
            self.value(a).data(),
            k as isize,
            1,
            self.value(b).data(),
            rsb,
            csb,
            S::zero(),
            out.data_mut(),
            n as isize,
            1,
        );
        Ok(self.push(out, Op::MatMul { a, b, trans_b }))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_ext(a, b, false)
    }

    /// Dense projection `x · wᵀ` with `w[out×in]`, no bias.
    pub fn linear(&mut self, x: Var, w: Var) -> Result<Var> {
        self.matmul_ext(x, w, true)
    }

    /// Batched product over the leading axis of 3-d tensors.
    pub fn bmm(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let ok = sa.len() == 3
            && sb.len() == 3
            && sa[0] == sb[0]
            && if trans_b {
                sa[2] == sb[2]
            } else {
                sa[2] == sb[1]
            };
        if !ok {
            return Err(dim_err("bmm", sa, sb));
        }
        let (batch, m, k) = (sa[0], sa[1], sa[2]);
        let n = if trans_b { sb[1] } else { sb[2] };
        let (rsb, csb) = if trans_b {
            (1, k as isize)
        } else {
            (n as isize, 1)
        };
        let mut out = Tensor::zeros(&[batch, m, n]);
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        for i in 0..batch {
            S::gemm(
                m,
                k,
                n,
                S::one(),
                &av[i * m * k..(i + 1) * m * k],
                k as isize,
                1,
                &bv[i * k * n..(i + 1) * k * n],
                rsb,
                csb,
                S::zero(),
                &mut out.data_mut()[i * m * n..(i + 1) * m * n],
                n as isize,
                1,
            );
        }
        Ok(self.push(
            out,
            Op::BatchMatMul {
                a,
                b,
                batch,
                trans_b,
            },
        ))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(dim_err(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(S, S) -> S) -> Tensor<S> {
        let (av, bv) = (self.value(a), self.value(b));
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(av.shape(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.zip_map(a, b, |x, y| x + y);
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.zip_map(a, b, |x, y| x * y);
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: S) -> Var {
        let out = self.value(a).map(|x| x * c);
        self.push(out, Op::Scale(a, c))
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x * sigmoid(x));
        self.push(out, Op::Silu(a))
    }

    /// Divides each row (last axis) by its root-mean-square.
    pub fn rms_normalize(&mut self, x: Var, eps: S) -> Var {
        let xv = self.value(x);
        let cols = xv.cols();
        let n = S::of(cols as f64);
        let mut out = xv.clone();
        let mut inv_rms = Vec::with_capacity(xv.rows());
        for row in out.data_mut().chunks_mut(cols) {
            let ms = row.iter().map(|&v| v * v).sum::<S>() / n;
            let r = S::one() / (ms + eps).sqrt();
            row.iter_mut().for_each(|v| *v *= r);
            inv_rms.push(r);
        }
        self.push(out, Op::RmsNormalize { x, inv_rms })
    }

    /// `y[r, c] = x[r, c] * gain[c]`.
    pub fn mul_cols(&mut self, x: Var, gain: Var) -> Result<Var> {
        let cols = self.value(x).cols();
        if self.value(gain).numel() != cols {
            return Err(dim_err("mul_cols", self.shape(x), self.shape(gain)));
        }
        let g = self.value(gain).data().to_vec();
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_mut(cols) {
            row.iter_mut().zip(&g).for_each(|(v, &s)| *v *= s);
        }
        Ok(self.push(out, Op::MulCols { x, gain }))
    }

    /// `y[r, :] = x[r, :] * gain[group[r]]`.
    pub fn scale_rows(&mut self, x: Var, gain: Var, group: Vec<usize>) -> Result<Var> {
        let rows = self.value(x).rows();
        let ng = self.value(gain).numel();
        if group.len() != rows {
            return Err(dim_err("scale_rows", self.shape(x), &[group.len()]));
        }
        if let Some(&bad) = group.iter().find(|&&g| g >= ng) {
            return Err(Error::Index {
                what: "row gain",
                index: bad,
                bound: ng,
            });
        }
        let cols = self.value(x).cols();
        let g = self.value(gain).data().to_vec();
        let mut out = self.value(x).clone();
        for (row, &gi) in out.data_mut().chunks_mut(cols).zip(&group) {
            row.iter_mut().for_each(|v| *v *= g[gi]);
        }
        Ok(self.push(out, Op::ScaleRows { x, gain, group }))
    }

    /// Row-wise softmax over the last axis, stabilized by the row maximum.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.data().iter().any(|v| v.is_nan()) {
            return Err(Error::Numeric("NaN entering softmax".into()));
        }
        let cols = xv.cols();
        let mut out = xv.clone();
        for row in out.data_mut().chunks_mut(cols) {
            softmax_in_place(row);
        }
        Ok(self.push(out, Op::Softmax(x)))
    }

    /// Sets `x[.., i, j] = -inf` for `j > i` on the trailing square axes.
    pub fn causal_mask(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        let t = *s.last().unwrap();
        if s.len() < 2 || s[s.len() - 2] != t {
            return Err(Error::Shape(format!(
                "causal mask needs square trailing axes, got {s:?}"
            )));
        }
        let mut out = self.value(x).clone();
        for (r, row) in out.data_mut().chunks_mut(t).enumerate() {
            let i = r % t;
            row[i + 1..].iter_mut().for_each(|v| *v = S::neg_infinity());
        }
        Ok(self.push(out, Op::CausalMask(x)))
    }

    /// Mean negative log-likelihood of `targets` under row-softmax of
    /// `logits[m×V]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        let (m, v) = (lv.rows(), lv.cols());
        if targets.len() != m {
            return Err(dim_err("cross_entropy", lv.shape(), &[targets.len()]));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= v) {
            return Err(Error::Index {
                what: "vocabulary",
                index: bad,
                bound: v,
            });
        }
        let mut probs = lv.data().to_vec();
        let mut total = S::zero();
        for (row, &t) in probs.chunks_mut(v).zip(targets) {
            let max = row.iter().copied().fold(S::neg_infinity(), S::max);
            let lse = max + row.iter().map(|&z| (z - max).exp()).sum::<S>().ln();
            total += lse - row[t];
            row.iter_mut().for_each(|z| *z = (*z - lse).exp());
        }
        let loss = Tensor::scalar(total / S::of(m as f64));
        Ok(self.push(
            loss,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
        ))
    }

    /// `y[i, :] = x[rows[i], :]`; also the embedding lookup.
    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let (n, cols) = (xv.rows(), xv.cols());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for &r in rows {
            if r >= n {
                return Err(Error::Index {
                    what: "row gather",
                    index: r,
                    bound: n,
                });
            }
            data.extend_from_slice(&xv.data()[r * cols..(r + 1) * cols]);
        }
        if rows.is_empty() {
            return Err(Error::Empty("row gather"));
        }
        let out = Tensor::new(&[rows.len(), cols], data)?;
        Ok(self.push(
            out,
            Op::GatherRows {
                x,
                rows: rows.to_vec(),
            },
        ))
    }

    /// Rotates each interleaved pair `(x[2t], x[2t+1])` of row `r` by the
    /// angle whose cosine/sine sit at `cos[(r % seq) * half + t]`.
    pub fn rotate(&mut self, x: Var, cos: Vec<S>, sin: Vec<S>, seq: usize) -> Result<Var> {
        let xv = self.value(x);
        let cols = xv.cols();
        let half = cols / 2;
        if !cols.is_multiple_of(2)
            || cos.len() != seq * half
            || sin.len() != cos.len()
            || !xv.rows().is_multiple_of(seq)
        {
            return Err(dim_err("rotate", xv.shape(), &[seq, half]));
        }
        let mut out = xv.clone();
        for (r, row) in out.data_mut().chunks_mut(cols).enumerate() {
            let base = (r % seq) * half;
            for t in 0..half {
                let (c, s) = (cos[base + t], sin[base + t]);
                let (u, v) = (row[2 * t], row[2 * t + 1]);
                row[2 * t] = u * c - v * s;
                row[2 * t + 1] = u * s + v * c;
            }
        }
        Ok(self.push(out, Op::Rotate { x, cos, sin, seq }))
    }

    /// `[batch*seq, heads*hd]` to `[batch*heads, seq, hd]`.
    pub fn split_heads(&mut self, x: Var, batch: usize, seq: usize, heads: usize) -> Result<Var> {
        let xv = self.value(x);
        let width = xv.cols();
        if xv.rows() != batch * seq || !width.is_multiple_of(heads) {
            return Err(dim_err("split_heads", xv.shape(), &[batch, seq, heads]));
        }
        let hd = width / heads;
        let mut out = Tensor::zeros(&[batch * heads, seq, hd]);
        let src = xv.data();
        for (r, row) in out.data_mut().chunks_mut(hd).enumerate() {
            let (mr, h) = head_row(r, seq, heads);
            row.copy_from_slice(&src[mr * width + h * hd..mr * width + (h + 1) * hd]);
        }
        Ok(self.push(out, Op::SplitHeads { x, seq, heads }))
    }

    /// Inverse of [`split_heads`](Self::split_heads).
    pub fn merge_heads(&mut self, x: Var, batch: usize, seq: usize, heads: usize) -> Result<Var> {
        let xv = self.value(x);
        let hd = xv.cols();
        if xv.rows() != batch * heads * seq {
            return Err(dim_err("merge_heads", xv.shape(), &[batch, seq, heads]));
        }
        let width = heads * hd;
        let mut out = Tensor::zeros(&[batch * seq, width]);
        let dst = out.data_mut();
        for (r, row) in xv.data().chunks(hd).enumerate() {
            let (mr, h) = head_row(r, seq, heads);
            dst[mr * width + h * hd..mr * width + (h + 1) * hd].copy_from_slice(row);
        }
        Ok(self.push(out, Op::MergeHeads { x, seq, heads }))
    }

    /// Expands 2×2-block free parameters `[out/2, in/2, k]` into the dense
    /// `[out, in]` weight; `k = 2` (tied `(a, b)`) or `k = 4` (untied).
    pub fn blocks(&mut self, free: Var, tied: bool) -> Result<Var> {
        let s = self.shape(free).to_vec();
        let k = if tied { 2 } else { 4 };
        if s.len() != 3 || s[2] != k {
            return Err(dim_err("blocks", &s, &[0, 0, k]));
        }
        let w = crate::layers::block_linear::materialize(self.value(free).data(), s[0], s[1], tied);
        Ok(self.push(w, Op::Blocks { free, tied }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum::<S>();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.data().iter().copied().sum::<S>() / S::of(v.numel() as f64);
        self.push(Tensor::scalar(s), Op::Mean(x))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshaped(shape)?;
        Ok(self.push(t, Op::Reshape(x)))
    }

    /// Back-propagates from the scalar `loss`. Parameter gradients are
    /// accumulated into `store`; parameters that the loss does not reach
    /// are left untouched.
    pub fn backward(&mut self, loss: Var, store: &mut ParamStore<S>) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<S>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![S::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads, store);
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn propagate(
        &self,
        i: usize,
        g: &[S],
        grads: &mut [Option<Vec<S>>],
        store: &mut ParamStore<S>,
    ) {
        let node = &self.nodes[i];
        let val = |v: Var| self.nodes[v.0].value.data();
        macro_rules! acc {
            ($v:expr) => {{
                let v: Var = $v;
                slot(grads, v, self.nodes[v.0].value.numel())
            }};
        }
        match &node.op {
            Op::Input => {}
            Op::Param(id) => {
                let p = store.get_mut(*id);
                p.grad
                    .data_mut()
                    .iter_mut()
                    .zip(g)
                    .for_each(|(a, &b)| *a += b);
            }
            &Op::MatMul { a, b, trans_b } => {
                let (sa, sb) = (self.shape(a), self.shape(b));
                let (m, k) = (sa[0], sa[1]);
                let n = if trans_b { sb[0] } else { sb[1] };
                // ga[m×k] += g[m×n] · op(b)ᵀ
                let (rs, cs) = if trans_b {
                    (k as isize, 1)
                } else {
                    (1, n as isize)
                };
                S::gemm(
                    m,
                    n,
                    k,
                    S::one(),
                    g,
                    n as isize,
                    1,
                    val(b),
                    rs,
                    cs,
                    S::one(),
                    acc!(a),
                    k as isize,
                    1,
                );
                if trans_b {
                    // gb[n×k] += gᵀ · a
                    S::gemm(
                        n,
                        m,
                        k,
                        S::one(),
                        g,
                        1,
                        n as isize,
                        val(a),
                        k as isize,
                        1,
                        S::one(),
                        acc!(b),
                        k as isize,
                        1,
                    );
                } else {
                    // gb[k×n] += aᵀ · g
                    S::gemm(
                        k,
                        m,
                        n,
                        S::one(),
                        val(a),
                        1,
                        k as isize,
                        g,
                        n as isize,
                        1,
                        S::one(),
                        acc!(b),
                        n as isize,
                        1,
                    );
                }
            }
            &Op::BatchMatMul {
                a,
                b,
                batch,
                trans_b,
            } => {
                let (sa, sb) = (self.shape(a), self.shape(b));
                let (m, k) = (sa[1], sa[2]);
                let n = if trans_b { sb[1] } else { sb[2] };
                let (mk, kn, mn) = (m * k, k * n, m * n);
                let (rs, cs) = if trans_b {
                    (k as isize, 1)
                } else {
                    (1, n as isize)
                };
                {
                    let ga = acc!(a);
                    for t in 0..batch {
                        S::gemm(
                            m,
                            n,
                            k,
                            S::one(),
                            &g[t * mn..(t + 1) * mn],
                            n as isize,
                            1,
                            &val(b)[t * kn..(t + 1) * kn],
                            rs,
                            cs,
                            S::one(),
                            &mut ga[t * mk..(t + 1) * mk],
                            k as isize,
                            1,
                        );
                    }
                }
                let gb = acc!(b);
                for t in 0..batch {
                    let (gt, at, bt) = (
                        &g[t * mn..(t + 1) * mn],
                        &val(a)[t * mk..(t + 1) * mk],
                        &mut gb[t * kn..(t + 1) * kn],
                    );
                    if trans_b {
                        S::gemm(
                            n,
                            m,
                            k,
                            S::one(),
                            gt,
                            1,
                            n as isize,
                            at,
                            k as isize,
                            1,
                            S::one(),
                            bt,
                            k as isize,
                            1,
                        );
                    } else {
                        S::gemm(
                            k,
                            m,
                            n,
                            S::one(),
                            at,
                            1,
                            k as isize,
                            gt,
                            n as isize,
                            1,
                            S::one(),
                            bt,
                            n as isize,
                            1,
                        );
                    }
                }
            }
            &Op::Add(a, b) => {
                acc!(a).iter_mut().zip(g).for_each(|(x, &y)| *x += y);
                acc!(b).iter_mut().zip(g).for_each(|(x, &y)| *x += y);
            }
            &Op::Mul(a, b) => {
                let (av, bv) = (val(a), val(b));
                acc!(a)
                    .iter_mut()
                    .zip(g.iter().zip(bv))
                    .for_each(|(x, (&gi, &bi))| *x += gi * bi);
                acc!(b)
                    .iter_mut()
                    .zip(g.iter().zip(av))
                    .for_each(|(x, (&gi, &ai))| *x += gi * ai);
            }
            &Op::Scale(a, c) => {
                acc!(a).iter_mut().zip(g).for_each(|(x, &y)| *x += y * c);
            }
            &Op::Silu(a) => {
                let av = val(a);
                acc!(a)
                    .iter_mut()
                    .zip(g.iter().zip(av))
                    .for_each(|(x, (&gi, &z))| {
                        let s = sigmoid(z);
                        *x += gi * s * (S::one() + z * (S::one() - s));
                    });
            }
            Op::RmsNormalize { x, inv_rms } => {
                let y = node.value.data();
                let cols = node.value.cols();
                let n = S::of(cols as f64);
                let gx = acc!(*x);
                for (r, &ir) in inv_rms.iter().enumerate() {
                    let span = r * cols..(r + 1) * cols;
                    let (gr, yr) = (&g[span.clone()], &y[span.clone()]);
                    let dot = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum::<S>() / n;
                    for ((o, &gi), &yi) in gx[span].iter_mut().zip(gr).zip(yr) {
                        *o += ir * (gi - yi * dot);
                    }
                }
            }
            &Op::MulCols { x, gain } => {
                let cols = node.value.cols();
                let (xv, gv) = (val(x), val(gain));
                {
                    let gx = acc!(x);
                    for (j, (o, &gi)) in gx.iter_mut().zip(g).enumerate() {
                        *o += gi * gv[j % cols];
                    }
                }
                let gg = acc!(gain);
                for (j, (&gi, &xi)) in g.iter().zip(xv).enumerate() {
                    gg[j % cols] += gi * xi;
                }
            }
            Op::ScaleRows { x, gain, group } => {
                let cols = node.value.cols();
                let (xv, gv) = (val(*x), val(*gain));
                {
                    let gx = acc!(*x);
                    for (j, (o, &gi)) in gx.iter_mut().zip(g).enumerate() {
                        *o += gi * gv[group[j / cols]];
                    }
                }
                let gg = acc!(*gain);
                for (r, &grp) in group.iter().enumerate() {
                    let span = r * cols..(r + 1) * cols;
                    gg[grp] += g[span.clone()]
                        .iter()
                        .zip(&xv[span])
                        .map(|(&a, &b)| a * b)
                        .sum::<S>();
                }
            }
            &Op::Softmax(x) => {
                let y = node.value.data();
                let cols = node.value.cols();
                let gx = acc!(x);
                for ((gxr, gr), yr) in gx.chunks_mut(cols).zip(g.chunks(cols)).zip(y.chunks(cols)) {
                    let dot = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum::<S>();
                    for ((o, &gi), &yi) in gxr.iter_mut().zip(gr).zip(yr) {
                        *o += yi * (gi - dot);
                    }
                }
            }
            &Op::CausalMask(x) => {
                let t = node.value.cols();
                let gx = acc!(x);
                for (r, (gxr, gr)) in gx.chunks_mut(t).zip(g.chunks(t)).enumerate() {
                    let i = r % t;
                    gxr[..=i]
                        .iter_mut()
                        .zip(&gr[..=i])
                        .for_each(|(o, &gi)| *o += gi);
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let v = self.value(*logits).cols();
                let scale = g[0] / S::of(targets.len() as f64);
                let gl = acc!(*logits);
                for (r, &t) in targets.iter().enumerate() {
                    for c in 0..v {
                        let p = probs[r * v + c];
                        let d = if c == t { p - S::one() } else { p };
                        gl[r * v + c] += scale * d;
                    }
                }
            }
            Op::GatherRows { x, rows } => {
                let cols = node.value.cols();
                let gx = acc!(*x);
                for (i, &r) in rows.iter().enumerate() {
                    gx[r * cols..(r + 1) * cols]
                        .iter_mut()
                        .zip(&g[i * cols..(i + 1) * cols])
                        .for_each(|(o, &gi)| *o += gi);
                }
            }
            Op::Rotate { x, cos, sin, seq } => {
                let cols = node.value.cols();
                let half = cols / 2;
                let gx = acc!(*x);
                for (r, (gxr, gr)) in gx.chunks_mut(cols).zip(g.chunks(cols)).enumerate() {
                    let base = (r % seq) * half;
                    for t in 0..half {
                        let (c, s) = (cos[base + t], sin[base + t]);
                        let (u, v) = (gr[2 * t], gr[2 * t + 1]);
                        gxr[2 * t] += u * c + v * s;
                        gxr[2 * t + 1] += v * c - u * s;
                    }
                }
            }
            &Op::SplitHeads { x, seq, heads, .. } => {
                let hd = node.value.cols();
                let width = heads * hd;
                let gx = acc!(x);
                for (r, gr) in g.chunks(hd).enumerate() {
                    let (mr, h) = head_row(r, seq, heads);
                    gx[mr * width + h * hd..mr * width + (h + 1) * hd]
                        .iter_mut()
                        .zip(gr)
                        .for_each(|(o, &gi)| *o += gi);
                }
            }
            &Op::MergeHeads { x, seq, heads, .. } => {
                let hd = self.value(x).cols();
                let width = heads * hd;
                let gx = acc!(x);
                for (r, gxr) in gx.chunks_mut(hd).enumerate() {
                    let (mr, h) = head_row(r, seq, heads);
                    gxr.iter_mut()
                        .zip(&g[mr * width + h * hd..mr * width + (h + 1) * hd])
                        .for_each(|(o, &gi)| *o += gi);
                }
            }
            &Op::Blocks { free, tied } => {
                let s = self.shape(free);
                let (ob, ib) = (s[0], s[1]);
                crate::layers::block_linear::materialize_backward(g, acc!(free), ob, ib, tied);
            }
            &Op::Sum(x) => {
                acc!(x).iter_mut().for_each(|o| *o += g[0]);
            }
            &Op::Mean(x) => {
                let n = S::of(self.value(x).numel() as f64);
                acc!(x).iter_mut().for_each(|o| *o += g[0] / n);
            }
            &Op::Reshape(x) => {
                acc!(x).iter_mut().zip(g).for_each(|(o, &gi)| *o += gi);
            }
        }
    }
}

fn slot<S: Scalar>(grads: &mut [Option<Vec<S>>], v: Var, numel: usize) -> &mut Vec<S> {
    grads[v.0].get_or_insert_with(|| vec![S::zero(); numel])
}

pub(crate) fn softmax_in_place<S: Scalar>(row: &mut [S]) {
    let max = row.iter().copied().fold(S::neg_infinity(), S::max);
    let mut total = S::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    row.iter_mut().for_each(|v| *v /= total);
}
