//! Reverse-mode gradient tape over [`NdArray`] values.
//!
//! Each forward operation appends a node holding its output and whatever the
//! backward rule needs. [`Tape::backward`] walks the nodes in reverse and
//! accumulates gradients for every parameter leaf into a [`Gradients`] set.
//! Parameters are borrowed from a [`ParamStore`], never copied.

use super::array::{
    axis_split, gelu_grad_scalar, gelu_scalar, gemm_nn, gemm_nt, gemm_tn, layer_norm_raw, NdArray,
    Scalar,
};
use super::attention::{attention_backward, attention_forward, Segments};
use super::param::{Gradients, ParamId, ParamStore};
use crate::error::{ensure, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    Gelu(Var),
    Softmax {
        x: Var,
        axis: usize,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        seg: Segments,
        probs: Vec<T>,
    },
    GatherRows {
        x: Var,
        idx: Vec<usize>,
    },
    ScatterRows {
        src: Var,
        fill: Var,
        positions: Vec<usize>,
    },
    MeanRows(Var),
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
}

struct Node<T> {
    op: Op<T>,
    value: Option<NdArray<T>>,
}

pub struct Tape<'s, T: Scalar> {
    store: &'s ParamStore<T>,
    nodes: Vec<Node<T>>,
}

fn dims2<T: Scalar>(a: &NdArray<T>, what: &str) -> Result<(usize, usize)> {
    ensure!(
        a.rank() == 2,
        Dimension,
        "{what}: expected a matrix, got shape {:?}",
        a.shape()
    );
    Ok((a.shape()[0], a.shape()[1]))
}

impl<'s, T: Scalar> Tape<'s, T> {
    pub fn new(store: &'s ParamStore<T>) -> Self {
        Self {
            store,
            nodes: Vec::new(),
        }
    }

    pub fn store(&self) -> &'s ParamStore<T> {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op<T>, value: NdArray<T>) -> Var {
        self.nodes.push(Node {
            op,
            value: Some(value),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &NdArray<T> {
        let node = &self.nodes[v.0];
        match (&node.op, &node.value) {
            (Op::Param(id), _) => self.store.value(*id),
            (_, Some(val)) => val,
            _ => unreachable!("non-parameter node without a value"),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    pub fn constant(&mut self, value: NdArray<T>) -> Var {
        self.push(Op::Leaf, value)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            op: Op::Param(id),
            value: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k) = dims2(av, "matmul lhs")?;
        let (k2, n) = dims2(bv, "matmul rhs")?;
        ensure!(
            k == k2,
            Dimension,
            "matmul inner extents differ: {:?} x {:?}",
            av.shape(),
            bv.shape()
        );
        let mut out = vec![T::zero(); m * n];
        gemm_nn(av.data(), bv.data(), &mut out, m, k, n);
        let val = NdArray::from_vec(&[m, n], out)?;
        Ok(self.push(Op::MatMul(a, b), val))
    }

    /// `a · bᵀ` without materializing the transpose.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k) = dims2(av, "matmul_nt lhs")?;
        let (n, k2) = dims2(bv, "matmul_nt rhs")?;
        ensure!(
            k == k2,
            Dimension,
            "matmul_nt inner extents differ: {:?} x {:?}ᵀ",
            av.shape(),
            bv.shape()
        );
        let mut out = vec![T::zero(); m * n];
        gemm_nt(av.data(), bv.data(), &mut out, m, k, n);
        let val = NdArray::from_vec(&[m, n], out)?;
        Ok(self.push(Op::MatMulNt(a, b), val))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let val = self.value(a).transpose2()?;
        Ok(self.push(Op::Transpose(a), val))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        ensure!(
            self.shape(a) == self.shape(b),
            Dimension,
            "{what}: shapes {:?} and {:?} differ",
            self.shape(a),
            self.shape(b)
        );
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op<T>, f: impl Fn(T, T) -> T) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let val = NdArray::from_vec(av.shape(), data).expect("same shape");
        self.push(op, val)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        Ok(self.zip_with(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        Ok(self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        Ok(self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y))
    }

    /// Broadcast-add a vector to every row of `a` (last-axis broadcast).
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (av, rv) = (self.value(a), self.value(row));
        let width = *av.shape().last().unwrap_or(&0);
        ensure!(
            rv.len() == width && width > 0,
            Dimension,
            "add_row: vector {:?} does not match rows of {:?}",
            rv.shape(),
            av.shape()
        );
        let mut data = av.data().to_vec();
        for chunk in data.chunks_mut(width) {
            for (o, &r) in chunk.iter_mut().zip(rv.data()) {
                *o = *o + r;
            }
        }
        let val = NdArray::from_vec(av.shape(), data)?;
        Ok(self.push(Op::AddRow(a, row), val))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let val = self.value(a).map(|v| v * c);
        self.push(Op::Scale(a, c), val)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let val = self.value(a).map(gelu_scalar);
        self.push(Op::Gelu(a), val)
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let val = super::array::softmax(self.value(x), axis)?;
        Ok(self.push(Op::Softmax { x, axis }, val))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: T) -> Result<Var> {
        let xv = self.value(x);
        let width = *xv.shape().last().unwrap_or(&0);
        ensure!(width > 0, Dimension, "layer_norm over an empty last axis");
        let (gv, bv) = (self.value(gain), self.value(bias));
        ensure!(
            gv.len() == width && bv.len() == width,
            Dimension,
            "layer_norm gain/bias {:?}/{:?} do not match width {width}",
            gv.shape(),
            bv.shape()
        );
        let (out, xhat, rstd) = layer_norm_raw(xv.data(), width, gv.data(), bv.data(), eps);
        let val = NdArray::from_vec(xv.shape(), out)?;
        Ok(self.push(
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            val,
        ))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        let (r, c) = dims2(xv, "slice_cols")?;
        ensure!(
            start + len <= c && len > 0,
            Index,
            "slice_cols [{start}, {}) out of {c} columns",
            start + len
        );
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&xv.data()[i * c + start..i * c + start + len]);
        }
        let val = NdArray::from_vec(&[r, len], data)?;
        Ok(self.push(Op::SliceCols { x, start }, val))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        ensure!(!parts.is_empty(), Contract, "concat_cols of nothing");
        let r = dims2(self.value(parts[0]), "concat_cols")?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pr, pc) = dims2(self.value(p), "concat_cols")?;
            ensure!(pr == r, Dimension, "concat_cols row counts differ: {pr} vs {r}");
            widths.push(pc);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        let val = NdArray::from_vec(&[r, total], data)?;
        Ok(self.push(Op::ConcatCols(parts.to_vec()), val))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        ensure!(!parts.is_empty(), Contract, "concat_rows of nothing");
        let c = dims2(self.value(parts[0]), "concat_rows")?.1;
        let mut rows = 0;
        for &p in parts {
            let (pr, pc) = dims2(self.value(p), "concat_rows")?;
            ensure!(pc == c, Dimension, "concat_rows widths differ: {pc} vs {c}");
            rows += pr;
        }
        let mut data = Vec::with_capacity(rows * c);
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let val = NdArray::from_vec(&[rows, c], data)?;
        Ok(self.push(Op::ConcatRows(parts.to_vec()), val))
    }

    /// Multi-head self-attention from projected `q`, `k`, `v` (all
    /// `rows × d`); rows are split into independent sequences by `seg`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, seg: &Segments) -> Result<Var> {
        let (r, d) = dims2(self.value(q), "attention")?;
        for x in [k, v] {
            ensure!(
                self.shape(x) == [r, d],
                Dimension,
                "attention: q is {:?} but k/v is {:?}",
                [r, d],
                self.shape(x)
            );
        }
        let (out, probs) = attention_forward(
            self.value(q).data(),
            self.value(k).data(),
            self.value(v).data(),
            d,
            heads,
            seg,
        )?;
        let val = NdArray::from_vec(&[r, d], out)?;
        Ok(self.push(
            Op::Attention {
                q,
                k,
                v,
                heads,
                seg: seg.clone(),
                probs,
            },
            val,
        ))
    }

    /// Attention probabilities recorded by an [`Tape::attention`] node,
    /// laid out per (sequence, head) as square blocks.
    pub fn attention_probs(&self, v: Var) -> Option<&[T]> {
        match &self.nodes[v.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let (r, c) = dims2(xv, "gather_rows")?;
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            ensure!(i < r, Index, "gather_rows index {i} out of {r} rows");
            data.extend_from_slice(xv.row(i));
        }
        let val = NdArray::from_vec(&[idx.len(), c], data)?;
        Ok(self.push(
            Op::GatherRows {
                x,
                idx: idx.to_vec(),
            },
            val,
        ))
    }

    /// Build an `n × d` matrix whose rows at `positions` come from `src` (in
    /// order) and whose remaining rows are copies of the vector `fill`.
    pub fn scatter_rows(&mut self, src: Var, fill: Var, positions: &[usize], n: usize) -> Result<Var> {
        let sv = self.value(src);
        let (r, d) = dims2(sv, "scatter_rows")?;
        ensure!(
            r == positions.len(),
            Dimension,
            "scatter_rows: {r} source rows for {} positions",
            positions.len()
        );
        let fv = self.value(fill);
        ensure!(
            fv.len() == d,
            Dimension,
            "scatter_rows: fill {:?} does not match width {d}",
            fv.shape()
        );
        let mut taken = vec![false; n];
        for &p in positions {
            ensure!(p < n, Index, "scatter_rows position {p} out of {n}");
            ensure!(!taken[p], Contract, "scatter_rows position {p} repeated");
            taken[p] = true;
        }
        let mut data = Vec::with_capacity(n * d);
        for _ in 0..n {
            data.extend_from_slice(fv.data());
        }
        for (k, &p) in positions.iter().enumerate() {
            data[p * d..(p + 1) * d].copy_from_slice(sv.row(k));
        }
        let val = NdArray::from_vec(&[n, d], data)?;
        Ok(self.push(
            Op::ScatterRows {
                src,
                fill,
                positions: positions.to_vec(),
            },
            val,
        ))
    }

    /// Arithmetic mean over rows: `n × d → 1 × d`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let (r, c) = dims2(xv, "mean_rows")?;
        ensure!(r > 0, Dimension, "mean_rows over zero rows");
        let mut out = vec![T::zero(); c];
        for i in 0..r {
            for (o, &v) in out.iter_mut().zip(xv.row(i)) {
                *o = *o + v;
            }
        }
        let inv = T::one() / T::from_usize(r).unwrap();
        out.iter_mut().for_each(|v| *v = *v * inv);
        let val = NdArray::from_vec(&[1, c], out)?;
        Ok(self.push(Op::MeanRows(x), val))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let val = NdArray::scalar(self.value(x).sum());
        self.push(Op::Sum(x), val)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        ensure!(!xv.is_empty(), Dimension, "mean of an empty array");
        let val = NdArray::scalar(xv.sum() / T::from_usize(xv.len()).unwrap());
        Ok(self.push(Op::Mean(x), val))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let val = self.value(x).clone().reshape(shape)?;
        Ok(self.push(Op::Reshape(x), val))
    }

    /// Mean softmax cross-entropy of `logits` (batch × classes) against
    /// integer labels, log-sum-exp stabilized.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        let (b, m) = dims2(lv, "cross_entropy")?;
        ensure!(
            b == labels.len() && b > 0,
            Dimension,
            "cross_entropy: {b} rows for {} labels",
            labels.len()
        );
        let probs = super::array::softmax(lv, 1)?.into_vec();
        let mut loss = T::zero();
        for (i, &y) in labels.iter().enumerate() {
            ensure!(y < m, Index, "label {y} out of {m} classes");
            let row = lv.row(i);
            let mx = row.iter().fold(T::neg_infinity(), |a, &v| a.max(v));
            let lse = mx + row.iter().fold(T::zero(), |a, &v| a + (v - mx).exp()).ln();
            loss = loss + (lse - row[y]);
        }
        let val = NdArray::scalar(loss / T::from_usize(b).unwrap());
        Ok(self.push(
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            val,
        ))
    }

    /// Propagate from a scalar `loss`; returns gradients for every parameter
    /// in the store (zero for parameters the loss does not reach).
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        ensure!(
            lv.len() == 1,
            Contract,
            "backward needs a scalar loss, got shape {:?}",
            lv.shape()
        );
        let mut out = Gradients::zeros_like(self.store);
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads, &mut out);
        }
        Ok(out)
    }

    fn backprop_node(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>], out: &mut Gradients<T>) {
        fn slot<T: Scalar>(grads: &mut [Option<Vec<T>>], v: Var, len: usize) -> &mut [T] {
            grads[v.0].get_or_insert_with(|| vec![T::zero(); len])
        }
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Param(id) => {
                for (a, &b) in out.0[id.0].data_mut().iter_mut().zip(g) {
                    *a = *a + b;
                }
            }
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                // dA = dC · Bᵀ, dB = Aᵀ · dC
                gemm_nt(g, bv.data(), slot(grads, *a, m * k), m, n, k);
                gemm_tn(av.data(), g, slot(grads, *b, k * n), k, m, n);
            }
            Op::MatMulNt(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[0]);
                // C = A·Bᵀ: dA = dC · B, dB = dCᵀ · A
                gemm_nn(g, bv.data(), slot(grads, *a, m * k), m, n, k);
                gemm_tn(g, av.data(), slot(grads, *b, n * k), n, m, k);
            }
            Op::Transpose(a) => {
                let av = self.value(*a);
                let (r, c) = (av.shape()[0], av.shape()[1]);
                let s = slot(grads, *a, r * c);
                for x in 0..r {
                    for y in 0..c {
                        s[x * c + y] = s[x * c + y] + g[y * r + x];
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    let s = slot(grads, v, g.len());
                    s.iter_mut().zip(g).for_each(|(o, &d)| *o = *o + d);
                }
            }
            Op::Sub(a, b) => {
                let s = slot(grads, *a, g.len());
                s.iter_mut().zip(g).for_each(|(o, &d)| *o = *o + d);
                let s = slot(grads, *b, g.len());
                s.iter_mut().zip(g).for_each(|(o, &d)| *o = *o - d);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let da: Vec<T> = g.iter().zip(bv).map(|(&d, &y)| d * y).collect();
                let db: Vec<T> = g.iter().zip(av).map(|(&d, &x)| d * x).collect();
                let s = slot(grads, *a, g.len());
                s.iter_mut().zip(&da).for_each(|(o, &d)| *o = *o + d);
                let s = slot(grads, *b, g.len());
                s.iter_mut().zip(&db).for_each(|(o, &d)| *o = *o + d);
            }
            Op::AddRow(a, row) => {
                let s = slot(grads, *a, g.len());
                s.iter_mut().zip(g).for_each(|(o, &d)| *o = *o + d);
                let w = self.value(*row).len();
                let s = slot(grads, *row, w);
                for chunk in g.chunks(w) {
                    s.iter_mut().zip(chunk).for_each(|(o, &d)| *o = *o + d);
                }
            }
            Op::Scale(a, c) => {
                let s = slot(grads, *a, g.len());
                s.iter_mut().zip(g).for_each(|(o, &d)| *o = *o + d * *c);
            }
            Op::Gelu(a) => {
                let av = self.value(*a).data();
                let s = slot(grads, *a, g.len());
                for ((o, &d), &x) in s.iter_mut().zip(g).zip(av) {
                    *o = *o + d * gelu_grad_scalar(x);
                }
            }
            Op::Softmax { x, axis } => {
                let y = node.value.as_ref().unwrap();
                let (outer, len, inner) = axis_split(y.shape(), *axis).expect("validated");
                let yd = y.data();
                let s = slot(grads, *x, g.len());
                for o in 0..outer {
                    for k in 0..inner {
                        let base = o * len * inner + k;
                        let mut dot = T::zero();
                        for j in 0..len {
                            dot = dot + g[base + j * inner] * yd[base + j * inner];
                        }
                        for j in 0..len {
                            let p = base + j * inner;
                            s[p] = s[p] + yd[p] * (g[p] - dot);
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let gv = self.value(*gain).data();
                let w = gv.len();
                let wt = T::from_usize(w).unwrap();
                let mut dx = vec![T::zero(); g.len()];
                let mut dgain = vec![T::zero(); w];
                let mut dbias = vec![T::zero(); w];
                for (r, &rs) in rstd.iter().enumerate() {
                    let gr = &g[r * w..(r + 1) * w];
                    let hr = &xhat[r * w..(r + 1) * w];
                    let mut mean_dh = T::zero();
                    let mut mean_dh_h = T::zero();
                    for j in 0..w {
                        let dh = gr[j] * gv[j];
                        mean_dh = mean_dh + dh;
                        mean_dh_h = mean_dh_h + dh * hr[j];
                        dgain[j] = dgain[j] + gr[j] * hr[j];
                        dbias[j] = dbias[j] + gr[j];
                    }
                    mean_dh = mean_dh / wt;
                    mean_dh_h = mean_dh_h / wt;
                    for j in 0..w {
                        let dh = gr[j] * gv[j];
                        dx[r * w + j] = rs * (dh - mean_dh - hr[j] * mean_dh_h);
                    }
                }
                for (v, d) in [(*x, dx), (*gain, dgain), (*bias, dbias)] {
                    let s = slot(grads, v, d.len());
                    s.iter_mut().zip(&d).for_each(|(o, &e)| *o = *o + e);
                }
            }
            Op::SliceCols { x, start } => {
                let xv = self.value(*x);
                let (r, c) = (xv.shape()[0], xv.shape()[1]);
                let len = g.len() / r;
                let s = slot(grads, *x, r * c);
                for i in 0..r {
                    for j in 0..len {
                        let p = i * c + start + j;
                        s[p] = s[p] + g[i * len + j];
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let total = node.value.as_ref().unwrap().shape()[1];
                let r = g.len() / total;
                let mut off = 0;
                for &p in parts {
                    let w = self.value(p).shape()[1];
                    let s = slot(grads, p, r * w);
                    for i in 0..r {
                        for j in 0..w {
                            s[i * w + j] = s[i * w + j] + g[i * total + off + j];
                        }
                    }
                    off += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    let s = slot(grads, p, n);
                    s.iter_mut().zip(&g[off..off + n]).for_each(|(o, &d)| *o = *o + d);
                    off += n;
                }
            }
            Op::Attention {
                q,
                k,
                v,
                heads,
                seg,
                probs,
            } => {
                let n = g.len();
                let d = self.value(*q).shape()[1];
                let (mut dq, mut dk, mut dv) = (vec![T::zero(); n], vec![T::zero(); n], vec![T::zero(); n]);
                attention_backward(
                    self.value(*q).data(),
                    self.value(*k).data(),
                    self.value(*v).data(),
                    probs,
                    g,
                    d,
                    *heads,
                    seg,
                    &mut dq,
                    &mut dk,
                    &mut dv,
                );
                for (x, dx) in [(*q, dq), (*k, dk), (*v, dv)] {
                    let s = slot(grads, x, n);
                    s.iter_mut().zip(&dx).for_each(|(o, &e)| *o = *o + e);
                }
            }
            Op::GatherRows { x, idx } => {
                let xv = self.value(*x);
                let c = xv.shape()[1];
                let s = slot(grads, *x, xv.len());
                for (k, &row) in idx.iter().enumerate() {
                    for j in 0..c {
                        s[row * c + j] = s[row * c + j] + g[k * c + j];
                    }
                }
            }
            Op::ScatterRows {
                src,
                fill,
                positions,
            } => {
                let d = self.value(*fill).len();
                let n = g.len() / d;
                let mut from_src = vec![false; n];
                {
                    let s = slot(grads, *src, positions.len() * d);
                    for (k, &p) in positions.iter().enumerate() {
                        from_src[p] = true;
                        for j in 0..d {
                            s[k * d + j] = s[k * d + j] + g[p * d + j];
                        }
                    }
                }
                let s = slot(grads, *fill, d);
                for (p, used) in from_src.iter().enumerate() {
                    if !used {
                        for j in 0..d {
                            s[j] = s[j] + g[p * d + j];
                        }
                    }
                }
            }
            Op::MeanRows(x) => {
                let xv = self.value(*x);
                let (r, c) = (xv.shape()[0], xv.shape()[1]);
                let inv = T::one() / T::from_usize(r).unwrap();
                let s = slot(grads, *x, r * c);
                for i in 0..r {
                    for j in 0..c {
                        s[i * c + j] = s[i * c + j] + g[j] * inv;
                    }
                }
            }
            Op::Sum(x) => {
                let n = self.value(*x).len();
                let s = slot(grads, *x, n);
                s.iter_mut().for_each(|o| *o = *o + g[0]);
            }
            Op::Mean(x) => {
                let n = self.value(*x).len();
                let d = g[0] / T::from_usize(n).unwrap();
                let s = slot(grads, *x, n);
                s.iter_mut().for_each(|o| *o = *o + d);
            }
            Op::Reshape(x) => {
                let s = slot(grads, *x, g.len());
                s.iter_mut().zip(g).for_each(|(o, &d)| *o = *o + d);
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let b = labels.len();
                let m = probs.len() / b;
                let scale = g[0] / T::from_usize(b).unwrap();
                let s = slot(grads, *logits, probs.len());
                for (i, &y) in labels.iter().enumerate() {
                    for j in 0..m {
                        let onehot = if j == y { T::one() } else { T::zero() };
                        s[i * m + j] = s[i * m + j] + (probs[i * m + j] - onehot) * scale;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_sum_gradient() {
        let mut store = ParamStore::<f64>::new();
        let p = store.add("p", NdArray::from_vec(&[1], vec![3.0]).unwrap()).unwrap();
        let unused = store.add("unused", NdArray::full(&[2], 1.0)).unwrap();
        let mut tape = Tape::new(&store);
        let x = tape.param(p);
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum(sq);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(p).data(), &[6.0]);
        assert_eq!(g.get(unused).data(), &[0.0, 0.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let store = ParamStore::<f64>::new();
        let mut tape = Tape::new(&store);
        let x = tape.constant(NdArray::zeros(&[2]));
        assert!(matches!(tape.backward(x), Err(crate::Error::Contract(_))));
    }

    #[test]
    fn scatter_rows_layout() {
        let store = ParamStore::<f64>::new();
        let mut tape = Tape::new(&store);
        let src = tape.constant(NdArray::from_rows(&[&[1.0, 1.0], &[2.0, 2.0]]).unwrap());
        let fill = tape.constant(NdArray::from_vec(&[2], vec![9.0, 8.0]).unwrap());
        let out = tape.scatter_rows(src, fill, &[1, 3], 4).unwrap();
        assert_eq!(
            tape.value(out).data(),
            &[9.0, 8.0, 1.0, 1.0, 9.0, 8.0, 2.0, 2.0]
        );
        assert!(tape.scatter_rows(src, fill, &[1, 1], 4).is_err());
    }
}
