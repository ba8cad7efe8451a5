//! Tape-based reverse-mode differentiation over dense tensors.
//!
//! A [`Graph`] records every operation as a node holding its forward value.
//! [`Graph::backward`] walks the nodes in reverse creation order, which is a
//! valid topological order because inputs always precede their consumers.
//! Gradients are only propagated into nodes that transitively depend on a
//! leaf created with `requires_grad = true`.

use crate::autodiff::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    MatMul {
        a: Var,
        b: Var,
    },
    BatchMatMul {
        a: Var,
        b: Var,
    },
    Reshape(Var),
    Permute {
        a: Var,
        perm: Vec<usize>,
    },
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Narrow {
        a: Var,
        axis: usize,
        start: usize,
    },
    BroadcastBatch(Var),
    Mean {
        a: Var,
        axis: usize,
    },
    Sum(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Gelu(Var),
    LayerNorm {
        x: Var,
        scale: Var,
        shift: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
}

struct Node<T> {
    shape: Vec<usize>,
    data: Vec<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Gradients produced by one call to [`Graph::backward`], indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&[T]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    /// Accumulates the gradient for `var` into `tensor.grad`, if one exists.
    pub fn accumulate_into(&self, var: Var, tensor: &mut Tensor<T>) -> Result<()> {
        match self.get(var) {
            Some(g) => tensor.accumulate_grad(g),
            None => Ok(()),
        }
    }
}

#[derive(Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

/// Splits `shape` around `axis` into (outer, dim, inner) extents.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn is_suffix(long: &[usize], short: &[usize]) -> bool {
    short.len() <= long.len() && long[long.len() - short.len()..] == *short
}

fn add_into<T: Scalar>(slot: &mut Option<Vec<T>>, g: &[T]) {
    match slot {
        Some(buf) => buf.iter_mut().zip(g).for_each(|(a, &b)| *a += b),
        None => *slot = Some(g.to_vec()),
    }
}

/// `out[m,n] += a[m,k] * b[k,n]`
fn gemm_nn<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m,k] += g[m,n] * b[k,n]^T`
fn gemm_nt<T: Scalar>(g: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let mut acc = T::zero();
            for (&x, &y) in grow.iter().zip(brow) {
                acc += x * y;
            }
            out[i * k + p] += acc;
        }
    }
}

/// `out[k,n] += a[m,k]^T * g[m,n]`
fn gemm_tn<T: Scalar>(a: &[T], g: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &gv) in orow.iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
}

fn permute_data<T: Scalar>(data: &[T], shape: &[usize], perm: &[usize]) -> Vec<T> {
    let rank = shape.len();
    let mut in_strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut out = Vec::with_capacity(data.len());
    let mut idx = vec![0usize; rank];
    let mut offset = 0usize;
    for _ in 0..data.len() {
        out.push(data[offset]);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            offset += strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            offset -= strides[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    out
}

fn gelu_cdf<T: Scalar>(x: T) -> T {
    let half = T::from_f64(0.5);
    half * (T::one() + (x * T::from_f64(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].data
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Copies the node's value out as a standalone tensor.
    pub fn tensor(&self, v: Var) -> Tensor<T> {
        let n = &self.nodes[v.0];
        Tensor::new(n.shape.clone(), n.data.clone()).expect("graph node shape is consistent")
    }

    fn push(
        &mut self,
        name: &'static str,
        shape: Vec<usize>,
        data: Vec<T>,
        op: Op<T>,
        requires_grad: bool,
    ) -> Result<Var> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric { op: name });
        }
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.nodes.push(Node {
            shape,
            data,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Registers a tensor as a graph input. Gradients flow into it iff the
    /// tensor has `requires_grad` set.
    pub fn leaf(&mut self, t: &Tensor<T>) -> Result<Var> {
        self.push(
            "leaf",
            t.shape().to_vec(),
            t.data().to_vec(),
            Op::Leaf,
            t.requires_grad(),
        )
    }

    /// Constant input that never receives gradients.
    pub fn constant(&mut self, shape: &[usize], data: Vec<T>) -> Result<Var> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::dim(
                "constant",
                format!("{shape:?} vs {}", data.len()),
            ));
        }
        self.push("constant", shape.to_vec(), data, Op::Leaf, false)
    }

    /// Elementwise sum. `b` may have the shape of a trailing suffix of `a`
    /// (e.g. a bias), in which case it is repeated over the leading axes.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b) = self.order_broadcast("add", a, b)?;
        let ad = &self.nodes[a.0].data;
        let bd = &self.nodes[b.0].data;
        let bn = bd.len();
        let data: Vec<T> = ad
            .iter()
            .enumerate()
            .map(|(i, &x)| x + bd[i % bn])
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.rg(&[a, b]);
        self.push("add", shape, data, Op::Add(a, b), rg)
    }

    /// Elementwise product with the same broadcasting rule as [`Graph::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b) = self.order_broadcast("mul", a, b)?;
        let ad = &self.nodes[a.0].data;
        let bd = &self.nodes[b.0].data;
        let bn = bd.len();
        let data: Vec<T> = ad
            .iter()
            .enumerate()
            .map(|(i, &x)| x * bd[i % bn])
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.rg(&[a, b]);
        self.push("mul", shape, data, Op::Mul(a, b), rg)
    }

    fn order_broadcast(&self, op: &'static str, a: Var, b: Var) -> Result<(Var, Var)> {
        let sa = &self.nodes[a.0].shape;
        let sb = &self.nodes[b.0].shape;
        if is_suffix(sa, sb) {
            Ok((a, b))
        } else if is_suffix(sb, sa) {
            Ok((b, a))
        } else {
            Err(Error::dim(
                op,
                format!("{sa:?} and {sb:?} do not broadcast"),
            ))
        }
    }

    pub fn scale(&mut self, a: Var, k: T) -> Result<Var> {
        let data = self.nodes[a.0].data.iter().map(|&x| x * k).collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.rg(&[a]);
        self.push("scale", shape, data, Op::Scale(a, k), rg)
    }

    /// `a[..., K] x b[K, N] -> [..., N]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.nodes[a.0].shape.clone();
        let sb = &self.nodes[b.0].shape;
        if sa.is_empty() || sb.len() != 2 || sa[sa.len() - 1] != sb[0] {
            return Err(Error::dim("matmul", format!("{sa:?} x {sb:?}")));
        }
        let (k, n) = (sb[0], sb[1]);
        let m = self.nodes[a.0].data.len() / k;
        let mut out = vec![T::zero(); m * n];
        gemm_nn(
            &self.nodes[a.0].data,
            &self.nodes[b.0].data,
            &mut out,
            m,
            k,
            n,
        );
        let mut shape = sa;
        *shape.last_mut().unwrap() = n;
        let rg = self.rg(&[a, b]);
        self.push("matmul", shape, out, Op::MatMul { a, b }, rg)
    }

    /// `a[B, M, K] x b[B, K, N] -> [B, M, N]`
    pub fn batch_matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = &self.nodes[a.0].shape;
        let sb = &self.nodes[b.0].shape;
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(Error::dim("batch_matmul", format!("{sa:?} x {sb:?}")));
        }
        let (bt, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let mut out = vec![T::zero(); bt * m * n];
        let ad = &self.nodes[a.0].data;
        let bd = &self.nodes[b.0].data;
        for i in 0..bt {
            gemm_nn(
                &ad[i * m * k..(i + 1) * m * k],
                &bd[i * k * n..(i + 1) * k * n],
                &mut out[i * m * n..(i + 1) * m * n],
                m,
                k,
                n,
            );
        }
        let rg = self.rg(&[a, b]);
        self.push(
            "batch_matmul",
            vec![bt, m, n],
            out,
            Op::BatchMatMul { a, b },
            rg,
        )
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != self.nodes[a.0].data.len() {
            return Err(Error::dim(
                "reshape",
                format!("{:?} -> {shape:?}", self.nodes[a.0].shape),
            ));
        }
        let data = self.nodes[a.0].data.clone();
        let rg = self.rg(&[a]);
        self.push("reshape", shape.to_vec(), data, Op::Reshape(a), rg)
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        let shape = &self.nodes[a.0].shape;
        let mut seen = vec![false; shape.len()];
        if perm.len() != shape.len()
            || perm
                .iter()
                .any(|&p| p >= shape.len() || std::mem::replace(&mut seen[p], true))
        {
            return Err(Error::dim("permute", format!("{perm:?} for {shape:?}")));
        }
        let data = permute_data(&self.nodes[a.0].data, shape, perm);
        let out_shape = perm.iter().map(|&p| shape[p]).collect();
        let rg = self.rg(&[a]);
        self.push(
            "permute",
            out_shape,
            data,
            Op::Permute {
                a,
                perm: perm.to_vec(),
            },
            rg,
        )
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let r = self.nodes[a.0].shape.len();
        if r < 2 {
            return Err(Error::dim("transpose", "rank < 2"));
        }
        let mut perm: Vec<usize> = (0..r).collect();
        perm.swap(r - 2, r - 1);
        self.permute(a, &perm)
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::dim("concat", "no inputs"))?;
        let base = self.nodes[first.0].shape.clone();
        if axis >= base.len() {
            return Err(Error::dim("concat", format!("axis {axis} for {base:?}")));
        }
        let mut total = 0;
        for v in inputs {
            let s = &self.nodes[v.0].shape;
            if s.len() != base.len()
                || s.iter()
                    .zip(&base)
                    .enumerate()
                    .any(|(i, (x, y))| i != axis && x != y)
            {
                return Err(Error::dim("concat", format!("{s:?} vs {base:?}")));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for v in inputs {
                let d = self.nodes[v.0].shape[axis];
                let src = &self.nodes[v.0].data;
                data.extend_from_slice(&src[o * d * inner..(o + 1) * d * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let rg = self.rg(inputs);
        self.push(
            "concat",
            shape,
            data,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            rg,
        )
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.nodes[a.0].shape.clone();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::dim(
                "narrow",
                format!("[{start}, {}) on axis {axis} of {shape:?}", start + len),
            ));
        }
        let (outer, d, inner) = split_axis(&shape, axis);
        let src = &self.nodes[a.0].data;
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * d * inner + start * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let rg = self.rg(&[a]);
        self.push("narrow", out_shape, data, Op::Narrow { a, axis, start }, rg)
    }

    /// Repeats a `[1, ...]` tensor `n` times along axis 0.
    pub fn broadcast_batch(&mut self, a: Var, n: usize) -> Result<Var> {
        let shape = self.nodes[a.0].shape.clone();
        if shape.first() != Some(&1) || n == 0 {
            return Err(Error::dim("broadcast_batch", format!("{shape:?} to {n}")));
        }
        let src = &self.nodes[a.0].data;
        let mut data = Vec::with_capacity(src.len() * n);
        for _ in 0..n {
            data.extend_from_slice(src);
        }
        let mut out_shape = shape;
        out_shape[0] = n;
        let rg = self.rg(&[a]);
        self.push(
            "broadcast_batch",
            out_shape,
            data,
            Op::BroadcastBatch(a),
            rg,
        )
    }

    /// Mean over one axis; the axis is removed from the shape.
    pub fn mean(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.nodes[a.0].shape.clone();
        if axis >= shape.len() {
            return Err(Error::dim("mean", format!("axis {axis} for {shape:?}")));
        }
        let (outer, d, inner) = split_axis(&shape, axis);
        let src = &self.nodes[a.0].data;
        let inv = T::one() / T::from_f64(d as f64);
        let mut data = vec![T::zero(); outer * inner];
        for o in 0..outer {
            let dst = &mut data[o * inner..(o + 1) * inner];
            for j in 0..d {
                let row = &src[(o * d + j) * inner..(o * d + j + 1) * inner];
                dst.iter_mut().zip(row).for_each(|(x, &y)| *x += y);
            }
            dst.iter_mut().for_each(|x| *x *= inv);
        }
        let mut out_shape = shape;
        out_shape.remove(axis);
        let rg = self.rg(&[a]);
        self.push("mean", out_shape, data, Op::Mean { a, axis }, rg)
    }

    /// Sum of all elements; the result is a scalar.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s: T = self.nodes[a.0].data.iter().copied().sum();
        let rg = self.rg(&[a]);
        self.push("sum", Vec::new(), vec![s], Op::Sum(a), rg)
    }

    fn last_axis(&self, op: &'static str, a: Var) -> Result<usize> {
        self.nodes[a.0]
            .shape
            .last()
            .copied()
            .ok_or_else(|| Error::dim(op, "scalar input has no last axis"))
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let n = self.last_axis("softmax", a)?;
        let mut data = self.nodes[a.0].data.clone();
        for row in data.chunks_mut(n) {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                z += *v;
            }
            row.iter_mut().for_each(|v| *v = *v / z);
        }
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.rg(&[a]);
        self.push("softmax", shape, data, Op::Softmax(a), rg)
    }

    /// `x - logsumexp(x)` along the last axis, evaluated with the max shift.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let n = self.last_axis("log_softmax", a)?;
        let mut data = self.nodes[a.0].data.clone();
        for row in data.chunks_mut(n) {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let z: T = row.iter().map(|&v| (v - m).exp()).sum();
            let lse = m + z.ln();
            row.iter_mut().for_each(|v| *v = *v - lse);
        }
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.rg(&[a]);
        self.push("log_softmax", shape, data, Op::LogSoftmax(a), rg)
    }

    /// Exact GELU, `x * Phi(x)`.
    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let data = self.nodes[a.0]
            .data
            .iter()
            .map(|&x| x * gelu_cdf(x))
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.rg(&[a]);
        self.push("gelu", shape, data, Op::Gelu(a), rg)
    }

    /// Layer normalization over the last axis with learned `scale` and `shift`.
    pub fn layer_norm(&mut self, x: Var, scale: Var, shift: Var, eps: f64) -> Result<Var> {
        if !(eps > 0.0) {
            return Err(Error::contract("layer_norm epsilon must be positive"));
        }
        let d = self.last_axis("layer_norm", x)?;
        if self.nodes[scale.0].shape != [d] || self.nodes[shift.0].shape != [d] {
            return Err(Error::dim(
                "layer_norm",
                format!(
                    "scale {:?} / shift {:?} for width {d}",
                    self.nodes[scale.0].shape, self.nodes[shift.0].shape
                ),
            ));
        }
        let src = &self.nodes[x.0].data;
        let g = &self.nodes[scale.0].data;
        let b = &self.nodes[shift.0].data;
        let rows = src.len() / d;
        let inv_d = T::one() / T::from_f64(d as f64);
        let eps = T::from_f64(eps);
        let mut xhat = Vec::with_capacity(src.len());
        let mut rstd = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(src.len());
        for row in src.chunks(d) {
            let mu = row.iter().copied().sum::<T>() * inv_d;
            let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() * inv_d;
            let r = T::one() / (var + eps).sqrt();
            rstd.push(r);
            for (j, &v) in row.iter().enumerate() {
                let h = (v - mu) * r;
                xhat.push(h);
                out.push(h * g[j] + b[j]);
            }
        }
        let shape = self.nodes[x.0].shape.clone();
        let rg = self.rg(&[x, scale, shift]);
        self.push(
            "layer_norm",
            shape,
            out,
            Op::LayerNorm {
                x,
                scale,
                shift,
                xhat,
                rstd,
            },
            rg,
        )
    }

    /// Reverse accumulation from a single-element `loss` node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.nodes[loss.0].data.len() != 1 {
            return Err(Error::contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![T::one()]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if self.wants(*a) {
                    add_into(&mut grads[a.0], g);
                }
                if self.wants(*b) {
                    let bn = self.nodes[b.0].data.len();
                    let mut gb = vec![T::zero(); bn];
                    for chunk in g.chunks(bn) {
                        gb.iter_mut().zip(chunk).for_each(|(x, &y)| *x += y);
                    }
                    add_into(&mut grads[b.0], &gb);
                }
            }
            Op::Mul(a, b) => {
                let ad = &self.nodes[a.0].data;
                let bd = &self.nodes[b.0].data;
                let bn = bd.len();
                if self.wants(*a) {
                    let ga: Vec<T> = g.iter().enumerate().map(|(i, &x)| x * bd[i % bn]).collect();
                    add_into(&mut grads[a.0], &ga);
                }
                if self.wants(*b) {
                    let mut gb = vec![T::zero(); bn];
                    for (i, (&x, &y)) in g.iter().zip(ad).enumerate() {
                        gb[i % bn] += x * y;
                    }
                    add_into(&mut grads[b.0], &gb);
                }
            }
            Op::Scale(a, k) => {
                if self.wants(*a) {
                    let ga: Vec<T> = g.iter().map(|&x| x * *k).collect();
                    add_into(&mut grads[a.0], &ga);
                }
            }
            Op::MatMul { a, b } => {
                let sb = &self.nodes[b.0].shape;
                let (k, n) = (sb[0], sb[1]);
                let ad = &self.nodes[a.0].data;
                let bd = &self.nodes[b.0].data;
                let m = ad.len() / k;
                if self.wants(*a) {
                    let mut ga = vec![T::zero(); m * k];
                    gemm_nt(g, bd, &mut ga, m, k, n);
                    add_into(&mut grads[a.0], &ga);
                }
                if self.wants(*b) {
                    let mut gb = vec![T::zero(); k * n];
                    gemm_tn(ad, g, &mut gb, m, k, n);
                    add_into(&mut grads[b.0], &gb);
                }
            }
            Op::BatchMatMul { a, b } => {
                let sa = &self.nodes[a.0].shape;
                let (bt, m, k) = (sa[0], sa[1], sa[2]);
                let n = self.nodes[b.0].shape[2];
                let ad = &self.nodes[a.0].data;
                let bd = &self.nodes[b.0].data;
                if self.wants(*a) {
                    let mut ga = vec![T::zero(); bt * m * k];
                    for i in 0..bt {
                        gemm_nt(
                            &g[i * m * n..(i + 1) * m * n],
                            &bd[i * k * n..(i + 1) * k * n],
                            &mut ga[i * m * k..(i + 1) * m * k],
                            m,
                            k,
                            n,
                        );
                    }
                    add_into(&mut grads[a.0], &ga);
                }
                if self.wants(*b) {
                    let mut gb = vec![T::zero(); bt * k * n];
                    for i in 0..bt {
                        gemm_tn(
                            &ad[i * m * k..(i + 1) * m * k],
                            &g[i * m * n..(i + 1) * m * n],
                            &mut gb[i * k * n..(i + 1) * k * n],
                            m,
                            k,
                            n,
                        );
                    }
                    add_into(&mut grads[b.0], &gb);
                }
            }
            Op::Reshape(a) => {
                if self.wants(*a) {
                    add_into(&mut grads[a.0], g);
                }
            }
            Op::Permute { a, perm } => {
                if self.wants(*a) {
                    let mut inv = vec![0; perm.len()];
                    for (i, &p) in perm.iter().enumerate() {
                        inv[p] = i;
                    }
                    let ga = permute_data(g, &node.shape, &inv);
                    add_into(&mut grads[a.0], &ga);
                }
            }
            Op::Concat { inputs, axis } => {
                let (outer, total, inner) = split_axis(&node.shape, *axis);
                let mut offset = 0;
                for v in inputs {
                    let d = self.nodes[v.0].shape[*axis];
                    if self.wants(*v) {
                        let mut gv = Vec::with_capacity(outer * d * inner);
                        for o in 0..outer {
                            let base = (o * total + offset) * inner;
                            gv.extend_from_slice(&g[base..base + d * inner]);
                        }
                        add_into(&mut grads[v.0], &gv);
                    }
                    offset += d;
                }
            }
            Op::Narrow { a, axis, start } => {
                if self.wants(*a) {
                    let in_shape = &self.nodes[a.0].shape;
                    let (outer, d, inner) = split_axis(in_shape, *axis);
                    let len = node.shape[*axis];
                    let mut ga = vec![T::zero(); outer * d * inner];
                    for o in 0..outer {
                        let dst = o * d * inner + start * inner;
                        ga[dst..dst + len * inner]
                            .copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                    }
                    add_into(&mut grads[a.0], &ga);
                }
            }
            Op::BroadcastBatch(a) => {
                if self.wants(*a) {
                    let n = self.nodes[a.0].data.len();
                    let mut ga = vec![T::zero(); n];
                    for chunk in g.chunks(n) {
                        ga.iter_mut().zip(chunk).for_each(|(x, &y)| *x += y);
                    }
                    add_into(&mut grads[a.0], &ga);
                }
            }
            Op::Mean { a, axis } => {
                if self.wants(*a) {
                    let (outer, d, inner) = split_axis(&self.nodes[a.0].shape, *axis);
                    let inv = T::one() / T::from_f64(d as f64);
                    let mut ga = Vec::with_capacity(outer * d * inner);
                    for o in 0..outer {
                        let row = &g[o * inner..(o + 1) * inner];
                        for _ in 0..d {
                            ga.extend(row.iter().map(|&x| x * inv));
                        }
                    }
                    add_into(&mut grads[a.0], &ga);
                }
            }
            Op::Sum(a) => {
                if self.wants(*a) {
                    let ga = vec![g[0]; self.nodes[a.0].data.len()];
                    add_into(&mut grads[a.0], &ga);
                }
            }
            Op::Softmax(a) => {
                if self.wants(*a) {
                    let n = *node.shape.last().unwrap();
                    let mut ga = Vec::with_capacity(g.len());
                    for (gy, y) in g.chunks(n).zip(node.data.chunks(n)) {
                        let dot: T = gy.iter().zip(y).map(|(&a, &b)| a * b).sum();
                        ga.extend(gy.iter().zip(y).map(|(&a, &b)| b * (a - dot)));
                    }
                    add_into(&mut grads[a.0], &ga);
                }
            }
            Op::LogSoftmax(a) => {
                if self.wants(*a) {
                    let n = *node.shape.last().unwrap();
                    let mut ga = Vec::with_capacity(g.len());
                    for (gy, y) in g.chunks(n).zip(node.data.chunks(n)) {
                        let s: T = gy.iter().copied().sum();
                        ga.extend(gy.iter().zip(y).map(|(&a, &b)| a - b.exp() * s));
                    }
                    add_into(&mut grads[a.0], &ga);
                }
            }
            Op::Gelu(a) => {
                if self.wants(*a) {
                    let inv_sqrt_2pi = T::from_f64(1.0 / (2.0 * std::f64::consts::PI).sqrt());
                    let half = T::from_f64(0.5);
                    let ga: Vec<T> = g
                        .iter()
                        .zip(&self.nodes[a.0].data)
                        .map(|(&gy, &x)| {
                            let pdf = (-half * x * x).exp() * inv_sqrt_2pi;
                            gy * (gelu_cdf(x) + x * pdf)
                        })
                        .collect();
                    add_into(&mut grads[a.0], &ga);
                }
            }
            Op::LayerNorm {
                x,
                scale,
                shift,
                xhat,
                rstd,
            } => {
                let d = *node.shape.last().unwrap();
                let gamma = &self.nodes[scale.0].data;
                if self.wants(*scale) {
                    let mut gs = vec![T::zero(); d];
                    for (gy, h) in g.chunks(d).zip(xhat.chunks(d)) {
                        for j in 0..d {
                            gs[j] += gy[j] * h[j];
                        }
                    }
                    add_into(&mut grads[scale.0], &gs);
                }
                if self.wants(*shift) {
                    let mut gb = vec![T::zero(); d];
                    for gy in g.chunks(d) {
                        gb.iter_mut().zip(gy).for_each(|(a, &b)| *a += b);
                    }
                    add_into(&mut grads[shift.0], &gb);
                }
                if self.wants(*x) {
                    let inv_d = T::one() / T::from_f64(d as f64);
                    let mut gx = Vec::with_capacity(g.len());
                    for ((gy, h), &r) in g.chunks(d).zip(xhat.chunks(d)).zip(rstd) {
                        let mut m1 = T::zero();
                        let mut m2 = T::zero();
                        for j in 0..d {
                            let dh = gy[j] * gamma[j];
                            m1 += dh;
                            m2 += dh * h[j];
                        }
                        m1 *= inv_d;
                        m2 *= inv_d;
                        for j in 0..d {
                            let dh = gy[j] * gamma[j];
                            gx.push(r * (dh - m1 - h[j] * m2));
                        }
                    }
                    add_into(&mut grads[x.0], &gx);
                }
            }
        }
    }
}
