use super::kernels::{self, ConvDims, Padding};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize, (usize, usize, usize)),
    Add(usize, usize),
    AddBias(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Relu(usize),
    Concat(Vec<usize>, usize),
    MeanAxis(usize, usize),
    Sum(usize),
    Softmax(usize),
    CrossEntropy { logits: usize, target: Tensor },
    ConvTime { x: usize, kernel: usize, dims: ConvDims },
    AvgPool { x: usize, bins: usize },
    Interp { x: usize, t_out: usize },
    Reshape(usize),
    Propagate { adj: usize, x: usize },
    Repeat { x: usize, axis: usize, n: usize },
    Unfold2d { x: usize, k: usize },
}

impl std::fmt::Debug for ConvDims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "ConvDims(t {}->{}, c {}->{}, k {}, stride {}, {:?})",
            self.t_in, self.t_out, self.c_in, self.c_out, self.k, self.stride, self.padding
        )
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    tracked: bool,
    grad: Option<Tensor>,
}

/// Append-only record of a computation. Nodes are stored in creation order,
/// which is a topological order, so backward is a single reverse sweep.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            tracked,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    /// Register a tensor whose gradient should be accumulated.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Register a tensor that takes no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.tracked(v)
    }

    /// Accumulated gradient of a tracked leaf, if backward has reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape(format!("matmul of {sa:?} and {sb:?}")));
        }
        let dims = (sa[0], sa[1], sb[1]);
        let out = kernels::matmul(self.value(a).data(), self.value(b).data(), dims.0, dims.1, dims.2);
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(Tensor::new([dims.0, dims.2], out)?, Op::MatMul(a.0, b.0, dims), tracked))
    }

    /// x [..., c_in] · w [c_in, c_out] -> [..., c_out]
    pub fn dense(&mut self, x: Var, w: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let c_in = *shape
            .last()
            .ok_or_else(|| Error::shape("dense on a scalar"))?;
        let rows = shape.iter().rev().skip(1).product::<usize>();
        let flat = self.reshape(x, [rows, c_in])?;
        let y = self.matmul(flat, w)?;
        let mut out_shape = shape;
        *out_shape.last_mut().unwrap() = self.shape(w)[1];
        self.reshape(y, out_shape)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(format!(
                "{what} of {:?} and {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(t, Op::Add(a.0, b.0), tracked))
    }

    /// Broadcast add of `bias` [c] over the last axis of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let c = self.shape(bias);
        if c.len() != 1 || self.shape(x).last() != Some(&c[0]) {
            return Err(Error::shape(format!(
                "bias {:?} does not match last axis of {:?}",
                c,
                self.shape(x)
            )));
        }
        let b = self.value(bias).data();
        let n = b.len();
        let data = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v + b[i % n])
            .collect();
        let t = Tensor::new(self.shape(x).to_vec(), data)?;
        let tracked = self.tracked(x) || self.tracked(bias);
        Ok(self.push(t, Op::AddBias(x.0, bias.0), tracked))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(t, Op::Mul(a.0, b.0), tracked))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let t = self.value(x).map(|v| v * s);
        let tracked = self.tracked(x);
        self.push(t, Op::Scale(x.0, s), tracked)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x).map(|v| v.max(0.0));
        let tracked = self.tracked(x);
        self.push(t, Op::Relu(x.0), tracked)
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::arg("concat of zero tensors"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::shape(format!("concat axis {axis} for shape {base:?}")));
        }
        let mut total = 0;
        for p in parts {
            let s = self.shape(*p);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::shape(format!(
                    "concat along axis {axis} of {base:?} and {s:?}"
                )));
            }
            total += s[axis];
        }
        let (outer, _, inner) = axis_split(&base, axis);
        let mut out_shape = base;
        out_shape[axis] = total;
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let t = self.value(*p);
                let w = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * w..(o + 1) * w]);
            }
        }
        let tracked = parts.iter().any(|p| self.tracked(*p));
        let ids = parts.iter().map(|p| p.0).collect();
        Ok(self.push(Tensor::new(out_shape, data)?, Op::Concat(ids, axis), tracked))
    }

    /// Mean over `axis`, removing it.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::shape(format!("mean axis {axis} for shape {shape:?}")));
        }
        let (outer, n, inner) = axis_split(&shape, axis);
        if n == 0 {
            return Err(Error::shape("mean over an empty axis"));
        }
        let src = self.value(x).data();
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for a in 0..n {
                let row = &src[(o * n + a) * inner..(o * n + a + 1) * inner];
                for (d, v) in data[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                    *d += v;
                }
            }
        }
        let inv = 1.0 / n as f64;
        data.iter_mut().for_each(|v| *v *= inv);
        let mut out_shape = shape;
        out_shape.remove(axis);
        let tracked = self.tracked(x);
        Ok(self.push(Tensor::new(out_shape, data)?, Op::MeanAxis(x.0, axis), tracked))
    }

    /// Sum of all entries as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let tracked = self.tracked(x);
        self.push(Tensor::scalar(s), Op::Sum(x.0), tracked)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len().max(1);
        let s = self.sum(x);
        self.scale(s, 1.0 / n as f64)
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let k = *shape.last().ok_or_else(|| Error::shape("softmax on a scalar"))?;
        let mut data = self.value(x).data().to_vec();
        for row in data.chunks_mut(k) {
            softmax_in_place(row);
        }
        let tracked = self.tracked(x);
        Ok(self.push(Tensor::new(shape, data)?, Op::Softmax(x.0), tracked))
    }

    /// Mean over rows of `-Σ target · log softmax(logits)`. Targets may be
    /// any distributions over the last axis.
    pub fn cross_entropy(&mut self, logits: Var, target: &Tensor) -> Result<Var> {
        let shape = self.shape(logits).to_vec();
        if shape.as_slice() != target.shape() || shape.is_empty() {
            return Err(Error::shape(format!(
                "cross entropy of logits {shape:?} against target {:?}",
                target.shape()
            )));
        }
        let k = *shape.last().unwrap();
        let rows = self.value(logits).len() / k;
        let mut loss = 0.0;
        for (row, trow) in self
            .value(logits)
            .data()
            .chunks(k)
            .zip(target.data().chunks(k))
        {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += trow.iter().zip(row).map(|(t, z)| t * (lse - z)).sum::<f64>();
        }
        loss /= rows as f64;
        let tracked = self.tracked(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits: logits.0,
                target: target.clone(),
            },
            tracked,
        ))
    }

    /// Temporal cross-correlation. `x` is [t, ..., c_in] (middle axes are
    /// treated as independent batch lanes), `kernel` is [k, c_in, c_out].
    pub fn conv_time(&mut self, x: Var, kernel: Var, stride: usize, padding: Padding) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ks = self.shape(kernel).to_vec();
        if xs.len() < 2 || ks.len() != 3 || ks[1] != *xs.last().unwrap() {
            return Err(Error::shape(format!(
                "conv_time of input {xs:?} with kernel {ks:?}"
            )));
        }
        if stride == 0 {
            return Err(Error::arg("conv_time stride must be positive"));
        }
        let t_out = kernels::conv_out_len(xs[0], ks[0], stride, padding.amount()).ok_or_else(|| {
            Error::shape(format!(
                "kernel of length {} is longer than padded input of length {}",
                ks[0],
                xs[0] + 2 * padding.amount()
            ))
        })?;
        let dims = ConvDims {
            t_in: xs[0],
            t_out,
            batch: xs[1..xs.len() - 1].iter().product(),
            c_in: ks[1],
            c_out: ks[2],
            k: ks[0],
            stride,
            padding,
        };
        let out = kernels::conv_time_forward(self.value(x).data(), self.value(kernel).data(), &dims);
        let mut shape = xs;
        shape[0] = t_out;
        *shape.last_mut().unwrap() = dims.c_out;
        let tracked = self.tracked(x) || self.tracked(kernel);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::ConvTime {
                x: x.0,
                kernel: kernel.0,
                dims,
            },
            tracked,
        ))
    }

    /// Average over `bins` contiguous spans of axis 0.
    pub fn avg_pool_time(&mut self, x: Var, bins: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let t = *shape.first().ok_or_else(|| Error::shape("pool on a scalar"))?;
        if bins == 0 || bins > t {
            return Err(Error::arg(format!("cannot pool {t} frames into {bins} bins")));
        }
        let inner = self.value(x).inner_len();
        let out = kernels::avg_pool_forward(self.value(x).data(), t, inner, bins);
        let mut out_shape = shape;
        out_shape[0] = bins;
        let tracked = self.tracked(x);
        Ok(self.push(Tensor::new(out_shape, out)?, Op::AvgPool { x: x.0, bins }, tracked))
    }

    /// Endpoint-aligned linear resampling of axis 0 to `t_out` frames.
    pub fn interpolate_time(&mut self, x: Var, t_out: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let t = *shape.first().ok_or_else(|| Error::shape("interpolate a scalar"))?;
        if t_out == 0 {
            return Err(Error::arg("interpolation target length must be positive"));
        }
        if t == 0 {
            return Err(Error::shape("interpolate an empty sequence"));
        }
        let inner = self.value(x).inner_len();
        let out = kernels::interp_forward(self.value(x).data(), t, inner, t_out);
        let mut out_shape = shape;
        out_shape[0] = t_out;
        let tracked = self.tracked(x);
        Ok(self.push(Tensor::new(out_shape, out)?, Op::Interp { x: x.0, t_out }, tracked))
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        let tracked = self.tracked(x);
        Ok(self.push(t, Op::Reshape(x.0), tracked))
    }

    /// Per-frame node mixing: y[t] = adj · x[t] with adj [v, v], x [t, v, c].
    pub fn propagate(&mut self, adj: Var, x: Var) -> Result<Var> {
        let (sa, sx) = (self.shape(adj).to_vec(), self.shape(x).to_vec());
        if sa.len() != 2 || sa[0] != sa[1] || sx.len() != 3 || sx[1] != sa[0] {
            return Err(Error::shape(format!(
                "propagate with adjacency {sa:?} over features {sx:?}"
            )));
        }
        let out = kernels::propagate(self.value(adj).data(), self.value(x).data(), sx[0], sx[1], sx[2]);
        let tracked = self.tracked(adj) || self.tracked(x);
        Ok(self.push(Tensor::new(sx, out)?, Op::Propagate { adj: adj.0, x: x.0 }, tracked))
    }

    /// Insert a new axis of size `n` at `axis`, repeating the input along it.
    pub fn repeat_axis(&mut self, x: Var, axis: usize, n: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis > shape.len() || n == 0 {
            return Err(Error::shape(format!("repeat axis {axis} x{n} for {shape:?}")));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis..].iter().product();
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(outer * n * inner);
        for o in 0..outer {
            for _ in 0..n {
                data.extend_from_slice(&src[o * inner..(o + 1) * inner]);
            }
        }
        let mut out_shape = shape;
        out_shape.insert(axis, n);
        let tracked = self.tracked(x);
        Ok(self.push(Tensor::new(out_shape, data)?, Op::Repeat { x: x.0, axis, n }, tracked))
    }

    /// Zero-padded `k`×`k` patch extraction: [n, h, w, c] -> [n, h, w, k·k·c].
    pub fn unfold2d(&mut self, x: Var, k: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 || k.is_multiple_of(2) {
            return Err(Error::shape(format!("unfold2d with odd k on [n,h,w,c], got {s:?} k={k}")));
        }
        let dims = (s[0], s[1], s[2], s[3]);
        let out = kernels::unfold2d(self.value(x).data(), dims, k);
        let tracked = self.tracked(x);
        Ok(self.push(
            Tensor::new([s[0], s[1], s[2], k * k * s[3]], out)?,
            Op::Unfold2d { x: x.0, k },
            tracked,
        ))
    }

    /// Reverse sweep from a scalar `loss`, accumulating into tracked leaves.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].tracked {
                continue;
            }
            self.backprop_node(i, g, &mut grads);
        }
        Ok(())
    }

    fn backprop_node(&mut self, i: usize, g: Vec<f64>, grads: &mut [Option<Vec<f64>>]) {
        if let Op::Leaf = self.nodes[i].op {
            let node = &mut self.nodes[i];
            match &mut node.grad {
                Some(existing) => add_into(existing.data_mut(), &g),
                None => node.grad = Some(Tensor::new(node.value.shape().to_vec(), g).unwrap()),
            }
            return;
        }
        let nodes = &self.nodes;
        let tracked = |j: usize| nodes[j].tracked;
        let len = |j: usize| nodes[j].value.len();
        let mut acc = |j: usize, f: &dyn Fn(&mut [f64])| {
            let buf = grads[j].get_or_insert_with(|| vec![0.0; len(j)]);
            f(buf);
        };
        match &nodes[i].op {
            Op::Leaf => unreachable!("leaves handled above"),
            Op::MatMul(a, b, dims) => {
                let (av, bv) = (nodes[*a].value.data(), nodes[*b].value.data());
                let mut da = tracked(*a).then(|| vec![0.0; av.len()]);
                let mut db = tracked(*b).then(|| vec![0.0; bv.len()]);
                kernels::matmul_backward(av, bv, &g, *dims, da.as_deref_mut(), db.as_deref_mut());
                if let Some(da) = da {
                    acc(*a, &|buf| add_into(buf, &da));
                }
                if let Some(db) = db {
                    acc(*b, &|buf| add_into(buf, &db));
                }
            }
            Op::Add(a, b) => {
                for j in [*a, *b] {
                    if tracked(j) {
                        acc(j, &|buf| add_into(buf, &g));
                    }
                }
            }
            Op::AddBias(x, b) => {
                if tracked(*x) {
                    acc(*x, &|buf| add_into(buf, &g));
                }
                if tracked(*b) {
                    let n = len(*b);
                    acc(*b, &|buf| {
                        for (k, v) in g.iter().enumerate() {
                            buf[k % n] += v;
                        }
                    });
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (nodes[*a].value.data(), nodes[*b].value.data());
                if tracked(*a) {
                    acc(*a, &|buf| {
                        for ((d, gv), o) in buf.iter_mut().zip(&g).zip(bv) {
                            *d += gv * o;
                        }
                    });
                }
                if tracked(*b) {
                    acc(*b, &|buf| {
                        for ((d, gv), o) in buf.iter_mut().zip(&g).zip(av) {
                            *d += gv * o;
                        }
                    });
                }
            }
            Op::Scale(x, s) => acc(*x, &|buf| {
                for (d, gv) in buf.iter_mut().zip(&g) {
                    *d += gv * s;
                }
            }),
            Op::Relu(x) => {
                let xv = nodes[*x].value.data();
                acc(*x, &|buf| {
                    for ((d, gv), v) in buf.iter_mut().zip(&g).zip(xv) {
                        if *v > 0.0 {
                            *d += gv;
                        }
                    }
                })
            }
            Op::Concat(parts, axis) => {
                let out_shape = nodes[i].value.shape();
                let (outer, total, inner) = axis_split(out_shape, *axis);
                let mut offset = 0;
                for &p in parts {
                    let w = nodes[p].value.shape()[*axis];
                    if tracked(p) {
                        acc(p, &|buf| {
                            for o in 0..outer {
                                let src = &g[(o * total + offset) * inner..(o * total + offset + w) * inner];
                                add_into(&mut buf[o * w * inner..(o + 1) * w * inner], src);
                            }
                        });
                    }
                    offset += w;
                }
            }
            Op::MeanAxis(x, axis) => {
                let (outer, n, inner) = axis_split(nodes[*x].value.shape(), *axis);
                let inv = 1.0 / n as f64;
                acc(*x, &|buf| {
                    for o in 0..outer {
                        let gr = &g[o * inner..(o + 1) * inner];
                        for a in 0..n {
                            for (d, gv) in buf[(o * n + a) * inner..(o * n + a + 1) * inner]
                                .iter_mut()
                                .zip(gr)
                            {
                                *d += gv * inv;
                            }
                        }
                    }
                })
            }
            Op::Sum(x) => acc(*x, &|buf| buf.iter_mut().for_each(|d| *d += g[0])),
            Op::Softmax(x) => {
                let y = nodes[i].value.data();
                let k = *nodes[i].value.shape().last().unwrap();
                acc(*x, &|buf| {
                    for ((yr, gr), dr) in y.chunks(k).zip(g.chunks(k)).zip(buf.chunks_mut(k)) {
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for ((d, yv), gv) in dr.iter_mut().zip(yr).zip(gr) {
                            *d += yv * (gv - dot);
                        }
                    }
                })
            }
            Op::CrossEntropy { logits, target } => {
                let z = nodes[*logits].value.data();
                let k = *nodes[*logits].value.shape().last().unwrap();
                let rows = z.len() / k;
                let scale = g[0] / rows as f64;
                acc(*logits, &|buf| {
                    for ((zr, tr), dr) in z.chunks(k).zip(target.data().chunks(k)).zip(buf.chunks_mut(k)) {
                        let mut p = zr.to_vec();
                        softmax_in_place(&mut p);
                        let mass: f64 = tr.iter().sum();
                        for ((d, pv), tv) in dr.iter_mut().zip(&p).zip(tr) {
                            *d += scale * (mass * pv - tv);
                        }
                    }
                })
            }
            Op::ConvTime { x, kernel, dims } => {
                let (xv, kv) = (nodes[*x].value.data(), nodes[*kernel].value.data());
                let mut dx = tracked(*x).then(|| vec![0.0; xv.len()]);
                let mut dk = tracked(*kernel).then(|| vec![0.0; kv.len()]);
                kernels::conv_time_backward(xv, kv, &g, dims, dx.as_deref_mut(), dk.as_deref_mut());
                if let Some(dx) = dx {
                    acc(*x, &|buf| add_into(buf, &dx));
                }
                if let Some(dk) = dk {
                    acc(*kernel, &|buf| add_into(buf, &dk));
                }
            }
            Op::AvgPool { x, bins } => {
                let t = nodes[*x].value.shape()[0];
                let inner = nodes[*x].value.inner_len();
                acc(*x, &|buf| kernels::avg_pool_backward(&g, buf, t, inner, *bins))
            }
            Op::Interp { x, t_out } => {
                let t = nodes[*x].value.shape()[0];
                let inner = nodes[*x].value.inner_len();
                acc(*x, &|buf| kernels::interp_backward(&g, buf, t, inner, *t_out))
            }
            Op::Reshape(x) => acc(*x, &|buf| add_into(buf, &g)),
            Op::Propagate { adj, x } => {
                let (av, xv) = (nodes[*adj].value.data(), nodes[*x].value.data());
                let s = nodes[*x].value.shape();
                let dims = (s[0], s[1], s[2]);
                let mut da = tracked(*adj).then(|| vec![0.0; av.len()]);
                let mut dx = tracked(*x).then(|| vec![0.0; xv.len()]);
                kernels::propagate_backward(av, xv, &g, dims, da.as_deref_mut(), dx.as_deref_mut());
                if let Some(da) = da {
                    acc(*adj, &|buf| add_into(buf, &da));
                }
                if let Some(dx) = dx {
                    acc(*x, &|buf| add_into(buf, &dx));
                }
            }
            Op::Repeat { x, axis, n } => {
                let s = nodes[*x].value.shape();
                let outer: usize = s[..*axis].iter().product();
                let inner: usize = s[*axis..].iter().product();
                acc(*x, &|buf| {
                    for o in 0..outer {
                        for r in 0..*n {
                            let src = &g[(o * n + r) * inner..(o * n + r + 1) * inner];
                            add_into(&mut buf[o * inner..(o + 1) * inner], src);
                        }
                    }
                })
            }
            Op::Unfold2d { x, k } => {
                let s = nodes[*x].value.shape();
                let dims = (s[0], s[1], s[2], s[3]);
                acc(*x, &|buf| kernels::unfold2d_backward(&g, buf, dims, *k))
            }
        }
    }
}

#[inline]
fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    row.iter_mut().for_each(|v| *v /= sum);
}
