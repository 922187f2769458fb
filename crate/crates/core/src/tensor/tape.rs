use std::collections::HashMap;
use std::rc::Rc;

use rand::Rng;

use super::linalg::gemm;
use super::{rng_from_seed, KeyIndex, ParamId, ParamStore, SemaRng, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug)]
enum Unary {
    Tanh,
    Sigmoid,
    Relu,
    Softplus,
    Exp,
    Log,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul {
        a: Var,
        b: Var,
        trans_b: bool,
    },
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Unary(Var, Unary),
    Softmax {
        x: Var,
        len: usize,
        inner: usize,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    Concat {
        inputs: Vec<Var>,
        inner: usize,
        sizes: Vec<usize>,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    SliceRows {
        x: Var,
        start: usize,
    },
    Transpose(Var),
    GatherScores {
        q: Var,
        k: Var,
        index: Rc<KeyIndex>,
    },
    GatherMix {
        w: Var,
        v: Var,
        index: Rc<KeyIndex>,
    },
    Sum(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
        scale: f64,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients of a scalar with respect to every parameter the backward pass reached.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    entries: Vec<(ParamId, Tensor)>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.entries
            .binary_search_by_key(&id, |(k, _)| *k)
            .ok()
            .map(|i| &self.entries[i].1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.entries.iter().map(|(k, v)| (*k, v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Append-only record of a forward computation.
///
/// Nodes are pushed in execution order, so inputs always precede the nodes that
/// consume them and a single reverse sweep visits each node once. Parameters are
/// read from the borrowed [`ParamStore`] the first time they are used and cached.
pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
    rng: SemaRng,
    training: bool,
    grad_enabled: bool,
}

impl<'p> Tape<'p> {
    /// A tape that records gradients. Dropout is inactive until [`Tape::train`].
    pub fn new(params: &'p ParamStore, seed: u64) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
            rng: rng_from_seed(seed),
            training: false,
            grad_enabled: true,
        }
    }

    /// A tape for pure inference: nothing requires a gradient.
    pub fn inference(params: &'p ParamStore, seed: u64) -> Self {
        Self {
            grad_enabled: false,
            ..Self::new(params, seed)
        }
    }

    pub fn train(mut self, training: bool) -> Self {
        self.training = training;
        self
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn rng(&mut self) -> &mut SemaRng {
        &mut self.rng
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad =
            self.grad_enabled && inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn dims2(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        match *self.shape(v) {
            [r, c] => Ok((r, c)),
            ref s => Err(Error::shape(op, s, &[0, 0])),
        }
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) == self.shape(b) {
            Ok(())
        } else {
            Err(Error::shape(op, self.shape(a), self.shape(b)))
        }
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, &[])
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let value = self.params.value(id).clone();
        self.nodes.push(Node {
            value,
            op: Op::Param(id),
            requires_grad: self.grad_enabled,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    /// `a · b` for `a: m×k`, `b: k×n`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2("matmul", a)?;
        let (k2, n) = self.dims2("matmul", b)?;
        if k != k2 {
            return Err(Error::shape("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            false,
            self.value(b).data(),
            false,
            &mut out,
            false,
        );
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push(
            value,
            Op::MatMul {
                a,
                b,
                trans_b: false,
            },
            &[a, b],
        ))
    }

    /// `a · bᵀ` for `a: m×k`, `b: n×k`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2("matmul_nt", a)?;
        let (n, k2) = self.dims2("matmul_nt", b)?;
        if k != k2 {
            return Err(Error::shape("matmul_nt", self.shape(a), self.shape(b)));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            false,
            self.value(b).data(),
            true,
            &mut out,
            false,
        );
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push(
            value,
            Op::MatMul {
                a,
                b,
                trans_b: true,
            },
            &[a, b],
        ))
    }

    /// `x · w + b` for `x: m×k`, `w: k×n` and an optional bias of length `n`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (m, k) = self.dims2("linear", x)?;
        let (k2, n) = self.dims2("linear", w)?;
        if k != k2 {
            return Err(Error::shape("linear", self.shape(x), self.shape(w)));
        }
        let mut out = vec![0.0; m * n];
        if let Some(b) = b {
            let bias = self.value(b);
            if bias.numel() != n {
                return Err(Error::shape("linear bias", bias.shape(), &[n]));
            }
            for row in out.chunks_mut(n) {
                row.copy_from_slice(bias.data());
            }
        }
        gemm(
            m,
            k,
            n,
            self.value(x).data(),
            false,
            self.value(w).data(),
            false,
            &mut out,
            b.is_some(),
        );
        let value = Tensor::new(vec![m, n], out)?;
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        Ok(self.push(value, Op::Linear { x, w, b }, &inputs))
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let va = self.value(a);
        let data = va
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor {
            shape: va.shape().to_vec(),
            data,
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let value = self.zip_with(a, b, |x, y| x + y);
        Ok(self.push(value, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let value = self.zip_with(a, b, |x, y| x - y);
        Ok(self.push(value, Op::Sub(a, b), &[a, b]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let value = self.zip_with(a, b, |x, y| x * y);
        Ok(self.push(value, Op::Mul(a, b), &[a, b]))
    }

    /// Adds a row vector (length = last axis) to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let cols = self.value(x).cols();
        if self.value(row).numel() != cols {
            return Err(Error::shape("add_row", self.shape(x), self.shape(row)));
        }
        let r = self.value(row).data().to_vec();
        let mut value = self.value(x).clone();
        for chunk in value.data_mut().chunks_mut(cols) {
            for (v, b) in chunk.iter_mut().zip(&r) {
                *v += b;
            }
        }
        Ok(self.push(value, Op::AddRow(x, row), &[x, row]))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let mut value = self.value(x).clone();
        value.data_mut().iter_mut().for_each(|v| *v *= factor);
        self.push(value, Op::Scale(x, factor), &[x])
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let mut value = self.value(x).clone();
        value.data_mut().iter_mut().for_each(|v| *v += c);
        self.push(value, Op::AddScalar(x), &[x])
    }

    fn unary(&mut self, x: Var, kind: Unary) -> Var {
        let f: fn(f64) -> f64 = match kind {
            Unary::Tanh => f64::tanh,
            Unary::Sigmoid => sigmoid,
            Unary::Relu => |v| v.max(0.0),
            Unary::Softplus => softplus,
            Unary::Exp => f64::exp,
            Unary::Log => f64::ln,
        };
        let mut value = self.value(x).clone();
        value.data_mut().iter_mut().for_each(|v| *v = f(*v));
        self.push(value, Op::Unary(x, kind), &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Tanh)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Sigmoid)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Relu)
    }

    /// `ln(1 + eˣ)`, evaluated without overflow.
    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Softplus)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Exp)
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Log)
    }

    /// Softmax along `axis`, max-subtracted.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::contract(format!(
                "softmax axis {axis} out of range for rank {}",
                shape.len()
            )));
        }
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let mut value = self.value(x).clone();
        let data = value.data_mut();
        let outer = data.len() / (len * inner);
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let max = (0..len)
                    .map(|j| data[base + j * inner])
                    .fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for j in 0..len {
                    let e = (data[base + j * inner] - max).exp();
                    data[base + j * inner] = e;
                    total += e;
                }
                for j in 0..len {
                    data[base + j * inner] /= total;
                }
            }
        }
        Ok(self.push(value, Op::Softmax { x, len, inner }, &[x]))
    }

    /// Row softmax over a matrix where `keep[i * cols + j] == false` excludes key
    /// `j` from row `i`. Excluded entries come out as exactly zero.
    pub fn masked_softmax(&mut self, x: Var, keep: &[bool]) -> Result<Var> {
        let (rows, cols) = self.dims2("masked_softmax", x)?;
        if keep.len() != rows * cols {
            return Err(Error::shape(
                "masked_softmax mask",
                &[rows, cols],
                &[keep.len()],
            ));
        }
        let mut value = self.value(x).clone();
        for (r, (row, mask)) in value
            .data_mut()
            .chunks_mut(cols)
            .zip(keep.chunks(cols))
            .enumerate()
        {
            let max = row
                .iter()
                .zip(mask)
                .filter(|(_, &k)| k)
                .map(|(&v, _)| v)
                .fold(f64::NEG_INFINITY, f64::max);
            if !mask.contains(&true) {
                return Err(Error::contract(format!(
                    "attention row {r} has no unmasked key"
                )));
            }
            // Non-finite scores give a NaN row, which surfaces as a NaN loss.
            let max = if max.is_finite() { max } else { f64::NAN };
            let mut total = 0.0;
            for (v, &k) in row.iter_mut().zip(mask) {
                *v = if k { (*v - max).exp() } else { 0.0 };
                total += *v;
            }
            row.iter_mut().for_each(|v| *v /= total);
        }
        Ok(self.push(
            value,
            Op::Softmax {
                x,
                len: cols,
                inner: 1,
            },
            &[x],
        ))
    }

    /// Normalizes each row (last axis) to zero mean and unit variance, then applies
    /// `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let cols = self.value(x).cols();
        for p in [gain, bias] {
            if self.value(p).numel() != cols {
                return Err(Error::shape("layer_norm", self.shape(x), self.shape(p)));
            }
        }
        let g = self.value(gain).data().to_vec();
        let b = self.value(bias).data().to_vec();
        let mut value = self.value(x).clone();
        let mut xhat = vec![0.0; value.numel()];
        let mut inv_std = Vec::with_capacity(value.rows());
        for (row, hat) in value
            .data_mut()
            .chunks_mut(cols)
            .zip(xhat.chunks_mut(cols))
        {
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / cols as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for j in 0..cols {
                hat[j] = (row[j] - mean) * inv;
                row[j] = hat[j] * g[j] + b[j];
            }
            inv_std.push(inv);
        }
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            &[x, gain, bias],
        ))
    }

    /// Gathers rows of `table` (vocab × dim) into an `ids.len() × dim` matrix.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (vocab, dim) = self.dims2("embedding", table)?;
        if ids.is_empty() {
            return Err(Error::contract("embedding lookup of an empty id list"));
        }
        let t = self.value(table);
        let mut data = Vec::with_capacity(ids.len() * dim);
        for &id in ids {
            if id >= vocab {
                return Err(Error::contract(format!(
                    "id {id} outside embedding table of {vocab} rows"
                )));
            }
            data.extend_from_slice(t.row(id));
        }
        let value = Tensor::new(vec![ids.len(), dim], data)?;
        Ok(self.push(
            value,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        ))
    }

    /// Inverted dropout: kept entries are scaled by `1/(1-p)`. Identity when the
    /// tape is not training or `p == 0`.
    pub fn dropout(&mut self, x: Var, p: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::contract(format!("dropout probability {p} not in [0,1)")));
        }
        if !self.training || p == 0.0 {
            return Ok(x);
        }
        let keep_scale = 1.0 / (1.0 - p);
        let n = self.value(x).numel();
        let mask: Vec<f64> = (0..n)
            .map(|_| {
                if self.rng.random::<f64>() >= p {
                    keep_scale
                } else {
                    0.0
                }
            })
            .collect();
        let mut value = self.value(x).clone();
        for (v, m) in value.data_mut().iter_mut().zip(&mask) {
            *v *= m;
        }
        Ok(self.push(value, Op::Dropout { x, mask }, &[x]))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::contract("concat of zero tensors"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::contract(format!(
                "concat axis {axis} out of range for rank {}",
                base.len()
            )));
        }
        let mut sizes = Vec::with_capacity(inputs.len());
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::shape("concat", &base, s));
            }
            sizes.push(s[axis]);
        }
        let inner: usize = base[axis + 1..].iter().product();
        let outer: usize = base[..axis].iter().product();
        let total: usize = sizes.iter().sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (&v, &sz) in inputs.iter().zip(&sizes) {
                let chunk = sz * inner;
                data.extend_from_slice(&self.value(v).data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let value = Tensor::new(shape, data)?;
        Ok(self.push(
            value,
            Op::Concat {
                inputs: inputs.to_vec(),
                inner,
                sizes,
            },
            inputs,
        ))
    }

    /// Columns `start..start+len` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = self.dims2("slice_cols", x)?;
        if len == 0 || start + len > cols {
            return Err(Error::shape("slice_cols", &[rows, cols], &[start, len]));
        }
        let src = self.value(x);
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&src.row(r)[start..start + len]);
        }
        let value = Tensor::new(vec![rows, len], data)?;
        Ok(self.push(value, Op::SliceCols { x, start }, &[x]))
    }

    /// Rows `start..start+len` of a matrix.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = self.dims2("slice_rows", x)?;
        if len == 0 || start + len > rows {
            return Err(Error::shape("slice_rows", &[rows, cols], &[start, len]));
        }
        let data = self.value(x).data()[start * cols..(start + len) * cols].to_vec();
        let value = Tensor::new(vec![len, cols], data)?;
        Ok(self.push(value, Op::SliceRows { x, start }, &[x]))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (rows, cols) = self.dims2("transpose", x)?;
        let src = self.value(x).data();
        let mut data = vec![0.0; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                data[c * rows + r] = src[r * cols + c];
            }
        }
        let value = Tensor::new(vec![cols, rows], data)?;
        Ok(self.push(value, Op::Transpose(x), &[x]))
    }

    /// Sum of all entries, as a one-element tensor.
    fn check_index(&self, op: &'static str, rows: usize, keys: Var, index: &KeyIndex) -> Result<()> {
        if index.rows() != rows {
            return Err(Error::shape(op, &[rows], &[index.rows()]));
        }
        if index.key_bound() > self.shape(keys)[0] {
            return Err(Error::contract(format!(
                "{op}: key row {} outside {} rows",
                index.key_bound() - 1,
                self.shape(keys)[0]
            )));
        }
        Ok(())
    }

    /// `out[r][j] = q[r] · k[index.keys(r)[j]]`, zero on padding; `rows × width`.
    pub fn gather_scores(&mut self, q: Var, k: Var, index: &Rc<KeyIndex>) -> Result<Var> {
        let (rows, d) = self.dims2("gather_scores", q)?;
        let (_, d2) = self.dims2("gather_scores", k)?;
        if d != d2 {
            return Err(Error::shape("gather_scores", self.shape(q), self.shape(k)));
        }
        self.check_index("gather_scores", rows, k, index)?;
        let width = index.width();
        let (qv, kv) = (self.value(q), self.value(k));
        let mut out = vec![0.0; rows * width];
        for r in 0..rows {
            let qr = qv.row(r);
            for (j, &key) in index.keys(r).iter().enumerate() {
                out[r * width + j] = qr.iter().zip(kv.row(key)).map(|(a, b)| a * b).sum();
            }
        }
        let value = Tensor::new(vec![rows, width], out)?;
        Ok(self.push(
            value,
            Op::GatherScores {
                q,
                k,
                index: Rc::clone(index),
            },
            &[q, k],
        ))
    }

    /// `out[r] = Σ_j w[r][j] · v[index.keys(r)[j]]`; padding weights are ignored.
    pub fn gather_mix(&mut self, w: Var, v: Var, index: &Rc<KeyIndex>) -> Result<Var> {
        let (rows, width) = self.dims2("gather_mix", w)?;
        let (_, d) = self.dims2("gather_mix", v)?;
        if width != index.width() {
            return Err(Error::shape("gather_mix", &[rows, width], &[index.rows(), index.width()]));
        }
        self.check_index("gather_mix", rows, v, index)?;
        let (wv, vv) = (self.value(w), self.value(v));
        let mut out = vec![0.0; rows * d];
        for r in 0..rows {
            let o = &mut out[r * d..(r + 1) * d];
            for (j, &key) in index.keys(r).iter().enumerate() {
                let a = wv.data()[r * width + j];
                for (x, y) in o.iter_mut().zip(vv.row(key)) {
                    *x += a * y;
                }
            }
        }
        let value = Tensor::new(vec![rows, d], out)?;
        Ok(self.push(
            value,
            Op::GatherMix {
                w,
                v,
                index: Rc::clone(index),
            },
            &[w, v],
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        self.push(value, Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).numel() as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    /// Mean negative log-likelihood of `targets` (one per row) under row-softmax
    /// of `logits`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let rows = self.dims2("cross_entropy", logits)?.0;
        self.cross_entropy_scaled(logits, targets, 1.0 / rows as f64)
    }

    /// Summed negative log-likelihood of `targets`.
    pub fn cross_entropy_sum(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        self.cross_entropy_scaled(logits, targets, 1.0)
    }

    fn cross_entropy_scaled(&mut self, logits: Var, targets: &[usize], scale: f64) -> Result<Var> {
        let (rows, cols) = self.dims2("cross_entropy", logits)?;
        if targets.len() != rows {
            return Err(Error::shape("cross_entropy", &[rows, cols], &[targets.len()]));
        }
        let lv = self.value(logits);
        let mut probs = vec![0.0; rows * cols];
        let mut loss = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            if t >= cols {
                return Err(Error::contract(format!(
                    "target {t} outside {cols} classes"
                )));
            }
            let row = lv.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let total: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let log_z = max + total.ln();
            for (p, v) in probs[r * cols..(r + 1) * cols].iter_mut().zip(row) {
                *p = (v - log_z).exp();
            }
            loss += log_z - row[t];
        }
        let value = Tensor::scalar(loss * scale);
        Ok(self.push(
            value,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
                scale,
            },
            &[logits],
        ))
    }

    /// Reverse sweep from a scalar `loss`. Returns the gradient of every
    /// parameter that `loss` depends on; unreached parameters are absent.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        if !self.nodes[loss.0].requires_grad {
            return Ok(Gradients::default());
        }
        grads[loss.0] = Some(vec![1.0]);
        let mut out = Vec::new();
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if let Op::Param(id) = node.op {
                out.push((id, Tensor::new(node.value.shape().to_vec(), g)?));
                continue;
            }
            self.backprop_node(node, &g, &mut grads);
        }
        out.sort_by_key(|(id, _)| *id);
        Ok(Gradients { entries: out })
    }

    /// Gradient slot for `v`, allocated on first use; `None` when `v` needs none.
    fn slot<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut Vec<f64>> {
        let node = &self.nodes[v.0];
        if !node.requires_grad {
            return None;
        }
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; node.value.numel()]))
    }

    fn acc(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl Fn(usize) -> f64) {
        if let Some(s) = self.slot(grads, v) {
            for (i, x) in s.iter_mut().enumerate() {
                *x += f(i);
            }
        }
    }

    fn backprop_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let out = node.value.data();
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul { a, b, trans_b } => {
                let (m, k) = (self.value(*a).rows(), self.value(*a).cols());
                let n = node.value.cols();
                let bv = self.value(*b).data();
                let av = self.value(*a).data();
                if let Some(s) = self.slot(grads, *a) {
                    // dA = dC · op(B)ᵀ
                    gemm(m, n, k, g, false, bv, !*trans_b, s, true);
                }
                if let Some(s) = self.slot(grads, *b) {
                    if *trans_b {
                        // C = A·Bᵀ, B: n×k → dB = dCᵀ · A
                        gemm(n, m, k, g, true, av, false, s, true);
                    } else {
                        // dB = Aᵀ · dC
                        gemm(k, m, n, av, true, g, false, s, true);
                    }
                }
            }
            Op::Linear { x, w, b } => {
                let (m, k) = (self.value(*x).rows(), self.value(*x).cols());
                let n = node.value.cols();
                if let Some(s) = self.slot(grads, *x) {
                    gemm(m, n, k, g, false, self.value(*w).data(), true, s, true);
                }
                if let Some(s) = self.slot(grads, *w) {
                    gemm(k, m, n, self.value(*x).data(), true, g, false, s, true);
                }
                if let Some(b) = b {
                    if let Some(s) = self.slot(grads, *b) {
                        for row in g.chunks(n) {
                            for (acc, v) in s.iter_mut().zip(row) {
                                *acc += v;
                            }
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, |i| g[i]);
                self.acc(grads, *b, |i| g[i]);
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, |i| g[i]);
                self.acc(grads, *b, |i| -g[i]);
            }
            Op::Mul(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                self.acc(grads, *a, |i| g[i] * bv[i]);
                self.acc(grads, *b, |i| g[i] * av[i]);
            }
            Op::AddRow(x, row) => {
                self.acc(grads, *x, |i| g[i]);
                if let Some(s) = self.slot(grads, *row) {
                    let n = s.len();
                    for chunk in g.chunks(n) {
                        for (acc, v) in s.iter_mut().zip(chunk) {
                            *acc += v;
                        }
                    }
                }
            }
            Op::Scale(x, f) => self.acc(grads, *x, |i| g[i] * f),
            Op::AddScalar(x) => self.acc(grads, *x, |i| g[i]),
            Op::Unary(x, kind) => {
                let xv = self.value(*x).data();
                match kind {
                    Unary::Tanh => self.acc(grads, *x, |i| g[i] * (1.0 - out[i] * out[i])),
                    Unary::Sigmoid => self.acc(grads, *x, |i| g[i] * out[i] * (1.0 - out[i])),
                    Unary::Relu => {
                        self.acc(grads, *x, |i| if xv[i] > 0.0 { g[i] } else { 0.0 })
                    }
                    Unary::Softplus => self.acc(grads, *x, |i| g[i] * sigmoid(xv[i])),
                    Unary::Exp => self.acc(grads, *x, |i| g[i] * out[i]),
                    Unary::Log => self.acc(grads, *x, |i| g[i] / xv[i]),
                }
            }
            Op::Softmax { x, len, inner } => {
                if let Some(s) = self.slot(grads, *x) {
                    let (len, inner) = (*len, *inner);
                    let outer = out.len() / (len * inner);
                    for o in 0..outer {
                        for i in 0..inner {
                            let base = o * len * inner + i;
                            let dot: f64 = (0..len)
                                .map(|j| g[base + j * inner] * out[base + j * inner])
                                .sum();
                            for j in 0..len {
                                let idx = base + j * inner;
                                s[idx] += out[idx] * (g[idx] - dot);
                            }
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let gv = self.value(*gain).data();
                let cols = gv.len();
                if let Some(s) = self.slot(grads, *x) {
                    let nf = cols as f64;
                    for (r, inv) in inv_std.iter().enumerate() {
                        let gr = &g[r * cols..(r + 1) * cols];
                        let hr = &xhat[r * cols..(r + 1) * cols];
                        let mut sum_d = 0.0;
                        let mut sum_dh = 0.0;
                        for j in 0..cols {
                            let d = gr[j] * gv[j];
                            sum_d += d;
                            sum_dh += d * hr[j];
                        }
                        for j in 0..cols {
                            let d = gr[j] * gv[j];
                            s[r * cols + j] += inv / nf * (nf * d - sum_d - hr[j] * sum_dh);
                        }
                    }
                }
                if let Some(s) = self.slot(grads, *gain) {
                    for (gr, hr) in g.chunks(cols).zip(xhat.chunks(cols)) {
                        for j in 0..cols {
                            s[j] += gr[j] * hr[j];
                        }
                    }
                }
                if let Some(s) = self.slot(grads, *bias) {
                    for gr in g.chunks(cols) {
                        for j in 0..cols {
                            s[j] += gr[j];
                        }
                    }
                }
            }
            Op::Embedding { table, ids } => {
                if let Some(s) = self.slot(grads, *table) {
                    let dim = node.value.cols();
                    for (r, &id) in ids.iter().enumerate() {
                        for j in 0..dim {
                            s[id * dim + j] += g[r * dim + j];
                        }
                    }
                }
            }
            Op::Dropout { x, mask } => self.acc(grads, *x, |i| g[i] * mask[i]),
            Op::Concat {
                inputs,
                inner,
                sizes,
            } => {
                let total: usize = sizes.iter().sum::<usize>() * inner;
                let outer = g.len() / total;
                let mut offset = 0;
                for (&v, &sz) in inputs.iter().zip(sizes) {
                    let chunk = sz * inner;
                    if let Some(s) = self.slot(grads, v) {
                        for o in 0..outer {
                            let src = &g[o * total + offset..o * total + offset + chunk];
                            for (acc, val) in s[o * chunk..(o + 1) * chunk].iter_mut().zip(src) {
                                *acc += val;
                            }
                        }
                    }
                    offset += chunk;
                }
            }
            Op::SliceCols { x, start } => {
                let len = node.value.cols();
                if let Some(s) = self.slot(grads, *x) {
                    let cols = self.value(*x).cols();
                    for (r, gr) in g.chunks(len).enumerate() {
                        for (j, v) in gr.iter().enumerate() {
                            s[r * cols + start + j] += v;
                        }
                    }
                }
            }
            Op::SliceRows { x, start } => {
                if let Some(s) = self.slot(grads, *x) {
                    let cols = node.value.cols();
                    for (acc, v) in s[start * cols..].iter_mut().zip(g) {
                        *acc += v;
                    }
                }
            }
            Op::Transpose(x) => {
                if let Some(s) = self.slot(grads, *x) {
                    let (rows, cols) = (self.value(*x).rows(), self.value(*x).cols());
                    for r in 0..rows {
                        for c in 0..cols {
                            s[r * cols + c] += g[c * rows + r];
                        }
                    }
                }
            }
            Op::GatherScores { q, k, index } => {
                let width = index.width();
                let (qv, kv) = (self.value(*q), self.value(*k));
                let d = qv.cols();
                if let Some(s) = self.slot(grads, *q) {
                    for r in 0..index.rows() {
                        for (j, &key) in index.keys(r).iter().enumerate() {
                            let gr = g[r * width + j];
                            for (acc, y) in s[r * d..(r + 1) * d].iter_mut().zip(kv.row(key)) {
                                *acc += gr * y;
                            }
                        }
                    }
                }
                if let Some(s) = self.slot(grads, *k) {
                    for r in 0..index.rows() {
                        for (j, &key) in index.keys(r).iter().enumerate() {
                            let gr = g[r * width + j];
                            for (acc, x) in s[key * d..(key + 1) * d].iter_mut().zip(qv.row(r)) {
                                *acc += gr * x;
                            }
                        }
                    }
                }
            }
            Op::GatherMix { w, v, index } => {
                let width = index.width();
                let (wv, vv) = (self.value(*w), self.value(*v));
                let d = vv.cols();
                if let Some(s) = self.slot(grads, *w) {
                    for r in 0..index.rows() {
                        let gr = &g[r * d..(r + 1) * d];
                        for (j, &key) in index.keys(r).iter().enumerate() {
                            s[r * width + j] += gr.iter().zip(vv.row(key)).map(|(a, b)| a * b).sum::<f64>();
                        }
                    }
                }
                if let Some(s) = self.slot(grads, *v) {
                    for r in 0..index.rows() {
                        let gr = &g[r * d..(r + 1) * d];
                        for (j, &key) in index.keys(r).iter().enumerate() {
                            let a = wv.data()[r * width + j];
                            for (acc, x) in s[key * d..(key + 1) * d].iter_mut().zip(gr) {
                                *acc += a * x;
                            }
                        }
                    }
                }
            }
            Op::Sum(x) => self.acc(grads, *x, |_| g[0]),
            Op::CrossEntropy {
                logits,
                targets,
                probs,
                scale,
            } => {
                if let Some(s) = self.slot(grads, *logits) {
                    let cols = probs.len() / targets.len();
                    let k = g[0] * scale;
                    for (r, &t) in targets.iter().enumerate() {
                        for j in 0..cols {
                            let onehot = if j == t { 1.0 } else { 0.0 };
                            s[r * cols + j] += k * (probs[r * cols + j] - onehot);
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}
