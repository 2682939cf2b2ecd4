//! Operation tape for reverse-mode differentiation.
//!
//! Nodes are appended in execution order, so every node's inputs precede it
//! and a single reverse sweep visits producers after consumers. Gradients of
//! one `backward` pass are computed in scratch buffers and then added into
//! each node's persistent gradient, which is what makes repeated backward
//! calls accumulate instead of overwrite.

use super::{mm_nn_acc, mm_nt_acc, mm_tn_acc, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    /// a[m,k] * b[k,n]
    Matmul { a: Var, b: Var },
    /// a[m,k] * b[n,k]^T  (weights stored row-per-output)
    MatmulNt { a: Var, b: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Tanh { x: Var },
    Sigmoid { x: Var },
    LeakyRelu { x: Var, slope: f64 },
    ConcatLast { parts: Vec<Var> },
    SliceCols { x: Var, start: usize, len: usize },
    GatherRows { x: Var, idx: Vec<usize> },
    ScaleRows { x: Var, s: Var },
    SegmentSumRows { x: Var, seg: Vec<usize> },
    SegmentSoftmax { s: Var, seg: Vec<usize> },
    Sum { x: Var },
    Scale { x: Var, c: f64 },
    Reshape { x: Var },
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    data: Vec<f64>,
    /// Accumulated gradient across backward calls; empty until first used.
    grad: Vec<f64>,
    requires: bool,
    op: Op,
}

/// How a binary elementwise op lines its operands up.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Bcast {
    /// identical shapes
    Same,
    /// right operand is a row vector repeated over the rows of the left
    RowRhs,
    /// right operand is a single scalar
    ScalarRhs,
    /// mirror cases with the left operand being the small one
    RowLhs,
    ScalarLhs,
}

fn bcast(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Result<Bcast> {
    if lhs == rhs {
        return Ok(Bcast::Same);
    }
    let l_numel: usize = lhs.iter().product();
    let r_numel: usize = rhs.iter().product();
    let last = |s: &[usize]| s.last().copied().unwrap_or(0);
    if r_numel == 1 {
        return Ok(Bcast::ScalarRhs);
    }
    if l_numel == 1 {
        return Ok(Bcast::ScalarLhs);
    }
    if rhs.len() == 1 && rhs[0] == last(lhs) {
        return Ok(Bcast::RowRhs);
    }
    if lhs.len() == 1 && lhs[0] == last(rhs) {
        return Ok(Bcast::RowLhs);
    }
    Err(Error::shape(op, lhs, rhs))
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    /// Records a constant input; gradients never flow into it.
    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::contract(format!(
                "constant shape {shape:?} does not match {} values",
                data.len()
            )));
        }
        Ok(self.push(shape, data, false, Op::Leaf))
    }

    pub fn constant_tensor(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), false, Op::Leaf)
    }

    /// Records a parameter leaf; `backward` accumulates its gradient.
    pub fn param(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), true, Op::Leaf)
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn data(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].data
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::new(n.shape.clone(), n.data.clone()).expect("tape node is consistent")
    }

    /// Accumulated gradient of a tracked node, `None` if gradients do not
    /// flow into it or no backward pass has touched it yet.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        let n = &self.nodes[v.0];
        if n.requires && !n.grad.is_empty() {
            Some(&n.grad)
        } else {
            None
        }
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, requires: bool, op: Op) -> Var {
        self.nodes.push(Node {
            shape,
            data,
            grad: Vec::new(),
            requires,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, shape: Vec<usize>, data: Vec<f64>, inputs: &[Var], op: Op) -> Var {
        let requires = inputs.iter().any(|v| self.nodes[v.0].requires);
        self.push(shape, data, requires, op)
    }

    fn dims2(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        match *self.nodes[v.0].shape.as_slice() {
            [r, c] => Ok((r, c)),
            ref s => Err(Error::shape(op, s, &[])),
        }
    }

    /// Standard matrix product `a[m,k] * b[k,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2("matmul", a)?;
        let (k2, n) = self.dims2("matmul", b)?;
        if k != k2 {
            return Err(Error::shape(
                "matmul",
                &self.nodes[a.0].shape,
                &self.nodes[b.0].shape,
            ));
        }
        let mut out = vec![0.0; m * n];
        mm_nn_acc(&self.nodes[a.0].data, &self.nodes[b.0].data, &mut out, m, k, n);
        Ok(self.push_op(vec![m, n], out, &[a, b], Op::Matmul { a, b }))
    }

    /// `a[m,k] * b[n,k]^T`; the natural orientation for `[out,in]` weights.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2("matmul_nt", a)?;
        let (n, k2) = self.dims2("matmul_nt", b)?;
        if k != k2 {
            return Err(Error::shape(
                "matmul_nt",
                &self.nodes[a.0].shape,
                &self.nodes[b.0].shape,
            ));
        }
        let mut out = vec![0.0; m * n];
        mm_nt_acc(&self.nodes[a.0].data, &self.nodes[b.0].data, &mut out, m, k, n);
        Ok(self.push_op(vec![m, n], out, &[a, b], Op::MatmulNt { a, b }))
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let pat = bcast(name, &self.nodes[a.0].shape, &self.nodes[b.0].shape)?;
        let (ad, bd) = (&self.nodes[a.0].data, &self.nodes[b.0].data);
        let (shape, out): (Vec<usize>, Vec<f64>) = match pat {
            Bcast::Same => (
                self.nodes[a.0].shape.clone(),
                ad.iter().zip(bd).map(|(&x, &y)| f(x, y)).collect(),
            ),
            Bcast::ScalarRhs => {
                let y = bd[0];
                (self.nodes[a.0].shape.clone(), ad.iter().map(|&x| f(x, y)).collect())
            }
            Bcast::ScalarLhs => {
                let x = ad[0];
                (self.nodes[b.0].shape.clone(), bd.iter().map(|&y| f(x, y)).collect())
            }
            Bcast::RowRhs => {
                let w = bd.len();
                (
                    self.nodes[a.0].shape.clone(),
                    ad.iter().enumerate().map(|(i, &x)| f(x, bd[i % w])).collect(),
                )
            }
            Bcast::RowLhs => {
                let w = ad.len();
                (
                    self.nodes[b.0].shape.clone(),
                    bd.iter().enumerate().map(|(i, &y)| f(ad[i % w], y)).collect(),
                )
            }
        };
        Ok(self.push_op(shape, out, &[a, b], op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul { a, b })
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let data = self.nodes[x.0].data.iter().map(|v| v.tanh()).collect();
        let shape = self.nodes[x.0].shape.clone();
        self.push_op(shape, data, &[x], Op::Tanh { x })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let data = self.nodes[x.0]
            .data
            .iter()
            .map(|v| 1.0 / (1.0 + (-v).exp()))
            .collect();
        let shape = self.nodes[x.0].shape.clone();
        self.push_op(shape, data, &[x], Op::Sigmoid { x })
    }

    /// y = x for x >= 0, slope * x otherwise. The subgradient at 0 is 1.
    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let data = self.nodes[x.0]
            .data
            .iter()
            .map(|&v| if v >= 0.0 { v } else { slope * v })
            .collect();
        let shape = self.nodes[x.0].shape.clone();
        self.push_op(shape, data, &[x], Op::LeakyRelu { x, slope })
    }

    /// Concatenates along the last dimension; all other dimensions must agree.
    pub fn concat_last(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::contract("concat_last needs at least one operand"));
        }
        let lead = |s: &[usize]| s[..s.len() - 1].to_vec();
        let first = self.nodes[parts[0].0].shape.clone();
        let mut width = 0usize;
        for p in parts {
            let s = &self.nodes[p.0].shape;
            if lead(s) != lead(&first) {
                return Err(Error::shape("concat_last_dim", &first, s));
            }
            width += s.last().copied().unwrap_or(0);
        }
        let rows: usize = lead(&first).iter().product();
        let mut out = vec![0.0; rows * width];
        let mut col = 0usize;
        for p in parts {
            let w = *self.nodes[p.0].shape.last().unwrap();
            let d = &self.nodes[p.0].data;
            for r in 0..rows {
                out[r * width + col..r * width + col + w].copy_from_slice(&d[r * w..(r + 1) * w]);
            }
            col += w;
        }
        let mut shape = lead(&first);
        shape.push(width);
        Ok(self.push_op(shape, out, parts, Op::ConcatLast { parts: parts.to_vec() }))
    }

    /// Column window `[start, start+len)` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.dims2("slice_cols", x)?;
        if start + len > c {
            return Err(Error::contract(format!(
                "slice_cols [{start}, {}) out of {c} columns",
                start + len
            )));
        }
        let d = &self.nodes[x.0].data;
        let mut out = vec![0.0; r * len];
        for i in 0..r {
            out[i * len..(i + 1) * len].copy_from_slice(&d[i * c + start..i * c + start + len]);
        }
        Ok(self.push_op(vec![r, len], out, &[x], Op::SliceCols { x, start, len }))
    }

    /// Row lookup: output row e is `x[idx[e]]`. Backward scatter-adds.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let (r, c) = self.dims2("gather_rows", x)?;
        if let Some(&bad) = idx.iter().find(|&&i| i >= r) {
            return Err(Error::contract(format!(
                "gather_rows index {bad} out of {r} rows"
            )));
        }
        let d = &self.nodes[x.0].data;
        let mut out = vec![0.0; idx.len() * c];
        for (e, &i) in idx.iter().enumerate() {
            out[e * c..(e + 1) * c].copy_from_slice(&d[i * c..(i + 1) * c]);
        }
        Ok(self.push_op(
            vec![idx.len(), c],
            out,
            &[x],
            Op::GatherRows { x, idx: idx.to_vec() },
        ))
    }

    /// Multiplies row e of `x` by scalar `s[e]`.
    pub fn scale_rows(&mut self, x: Var, s: Var) -> Result<Var> {
        let (r, c) = self.dims2("scale_rows", x)?;
        if self.nodes[s.0].data.len() != r {
            return Err(Error::shape(
                "scale_rows",
                &self.nodes[x.0].shape,
                &self.nodes[s.0].shape,
            ));
        }
        let xd = &self.nodes[x.0].data;
        let sd = &self.nodes[s.0].data;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let f = sd[i];
            for j in 0..c {
                out[i * c + j] = xd[i * c + j] * f;
            }
        }
        Ok(self.push_op(vec![r, c], out, &[x, s], Op::ScaleRows { x, s }))
    }

    /// Adds row e of `x` into output row `seg[e]`; output has `segments` rows.
    pub fn segment_sum_rows(&mut self, x: Var, seg: &[usize], segments: usize) -> Result<Var> {
        let (r, c) = self.dims2("segment_sum_rows", x)?;
        if seg.len() != r {
            return Err(Error::contract(format!(
                "segment map length {} does not match {r} rows",
                seg.len()
            )));
        }
        if let Some(&bad) = seg.iter().find(|&&i| i >= segments) {
            return Err(Error::contract(format!(
                "segment id {bad} out of {segments} segments"
            )));
        }
        let d = &self.nodes[x.0].data;
        let mut out = vec![0.0; segments * c];
        for (e, &i) in seg.iter().enumerate() {
            for j in 0..c {
                out[i * c + j] += d[e * c + j];
            }
        }
        Ok(self.push_op(
            vec![segments, c],
            out,
            &[x],
            Op::SegmentSumRows { x, seg: seg.to_vec() },
        ))
    }

    /// Softmax within each segment of a flat score vector. `seg[e]` names the
    /// segment of score `e`; every segment's outputs are positive and sum to 1.
    /// Empty input yields empty output.
    pub fn segment_softmax(&mut self, s: Var, seg: &[usize]) -> Result<Var> {
        let n = self.nodes[s.0].data.len();
        if seg.len() != n {
            return Err(Error::contract(format!(
                "segment map length {} does not match {n} scores",
                seg.len()
            )));
        }
        let nseg = seg.iter().map(|&i| i + 1).max().unwrap_or(0);
        let d = &self.nodes[s.0].data;
        let mut seg_max = vec![f64::NEG_INFINITY; nseg];
        for (e, &i) in seg.iter().enumerate() {
            seg_max[i] = seg_max[i].max(d[e]);
        }
        let mut out: Vec<f64> = d
            .iter()
            .zip(seg)
            .map(|(&v, &i)| (v - seg_max[i]).exp())
            .collect();
        let mut seg_sum = vec![0.0; nseg];
        for (e, &i) in seg.iter().enumerate() {
            seg_sum[i] += out[e];
        }
        for (e, &i) in seg.iter().enumerate() {
            out[e] /= seg_sum[i];
        }
        let shape = self.nodes[s.0].shape.clone();
        Ok(self.push_op(shape, out, &[s], Op::SegmentSoftmax { s, seg: seg.to_vec() }))
    }

    /// Full reduction to a scalar of shape `[1]`.
    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.nodes[x.0].data.iter().sum();
        self.push_op(vec![1], vec![s], &[x], Op::Sum { x })
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let data = self.nodes[x.0].data.iter().map(|v| v * c).collect();
        let shape = self.nodes[x.0].shape.clone();
        self.push_op(shape, data, &[x], Op::Scale { x, c })
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != self.nodes[x.0].data.len() {
            return Err(Error::shape("reshape", &self.nodes[x.0].shape, &shape));
        }
        let data = self.nodes[x.0].data.clone();
        Ok(self.push_op(shape, data, &[x], Op::Reshape { x }))
    }

    /// Propagates d(loss)/d(node) to every gradient-tracked node reachable
    /// from `loss` and adds the result into each node's persistent gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].data.len() != 1 {
            return Err(Error::contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        if !self.nodes[loss.0].requires {
            return Ok(());
        }
        // Scratch gradients for this pass only.
        let mut g: Vec<Vec<f64>> = self
            .nodes
            .iter()
            .take(loss.0 + 1)
            .map(|n| if n.requires { vec![0.0; n.data.len()] } else { Vec::new() })
            .collect();
        g[loss.0][0] = 1.0;

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires {
                continue;
            }
            let gi = std::mem::take(&mut g[i]);
            self.propagate(i, &gi, &mut g);
            let node = &mut self.nodes[i];
            if node.grad.is_empty() {
                node.grad = gi;
            } else {
                for (a, b) in node.grad.iter_mut().zip(&gi) {
                    *a += b;
                }
            }
        }
        Ok(())
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires
    }

    fn propagate(&self, i: usize, gi: &[f64], g: &mut [Vec<f64>]) {
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Matmul { a, b } => {
                let (m, k) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
                let n = self.nodes[b.0].shape[1];
                if self.wants(*a) {
                    // dA = dC * B^T
                    mm_nt_acc(gi, &self.nodes[b.0].data, &mut g[a.0], m, n, k);
                }
                if self.wants(*b) {
                    // dB = A^T * dC
                    mm_tn_acc(&self.nodes[a.0].data, gi, &mut g[b.0], m, k, n);
                }
            }
            Op::MatmulNt { a, b } => {
                let (m, k) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
                let n = self.nodes[b.0].shape[0];
                if self.wants(*a) {
                    // dA = dC * B
                    mm_nn_acc(gi, &self.nodes[b.0].data, &mut g[a.0], m, n, k);
                }
                if self.wants(*b) {
                    // dB = dC^T * A
                    mm_tn_acc(gi, &self.nodes[a.0].data, &mut g[b.0], m, n, k);
                }
            }
            Op::Add { a, b } => {
                if self.wants(*a) {
                    reduce_into(gi, &mut g[a.0], 1.0);
                }
                if self.wants(*b) {
                    reduce_into(gi, &mut g[b.0], 1.0);
                }
            }
            Op::Sub { a, b } => {
                if self.wants(*a) {
                    reduce_into(gi, &mut g[a.0], 1.0);
                }
                if self.wants(*b) {
                    reduce_into(gi, &mut g[b.0], -1.0);
                }
            }
            Op::Mul { a, b } => {
                let (ad, bd) = (&self.nodes[a.0].data, &self.nodes[b.0].data);
                if self.wants(*a) {
                    let scaled = expand_mul(gi, bd);
                    reduce_into(&scaled, &mut g[a.0], 1.0);
                }
                if self.wants(*b) {
                    let scaled = expand_mul(gi, ad);
                    reduce_into(&scaled, &mut g[b.0], 1.0);
                }
            }
            Op::Tanh { x } => {
                if self.wants(*x) {
                    let y = &self.nodes[i].data;
                    for (e, gx) in g[x.0].iter_mut().enumerate() {
                        *gx += gi[e] * (1.0 - y[e] * y[e]);
                    }
                }
            }
            Op::Sigmoid { x } => {
                if self.wants(*x) {
                    let y = &self.nodes[i].data;
                    for (e, gx) in g[x.0].iter_mut().enumerate() {
                        *gx += gi[e] * y[e] * (1.0 - y[e]);
                    }
                }
            }
            Op::LeakyRelu { x, slope } => {
                if self.wants(*x) {
                    let xd = &self.nodes[x.0].data;
                    for (e, gx) in g[x.0].iter_mut().enumerate() {
                        *gx += gi[e] * if xd[e] >= 0.0 { 1.0 } else { *slope };
                    }
                }
            }
            Op::ConcatLast { parts } => {
                let width = *self.nodes[i].shape.last().unwrap();
                let rows = self.nodes[i].data.len() / width;
                let mut col = 0usize;
                for p in parts {
                    let w = *self.nodes[p.0].shape.last().unwrap();
                    if self.wants(*p) {
                        let gp = &mut g[p.0];
                        for r in 0..rows {
                            for j in 0..w {
                                gp[r * w + j] += gi[r * width + col + j];
                            }
                        }
                    }
                    col += w;
                }
            }
            Op::SliceCols { x, start, len } => {
                if self.wants(*x) {
                    let c = self.nodes[x.0].shape[1];
                    let rows = self.nodes[i].shape[0];
                    let gx = &mut g[x.0];
                    for r in 0..rows {
                        for j in 0..*len {
                            gx[r * c + start + j] += gi[r * len + j];
                        }
                    }
                }
            }
            Op::GatherRows { x, idx } => {
                if self.wants(*x) {
                    let c = self.nodes[x.0].shape[1];
                    let gx = &mut g[x.0];
                    for (e, &row) in idx.iter().enumerate() {
                        for j in 0..c {
                            gx[row * c + j] += gi[e * c + j];
                        }
                    }
                }
            }
            Op::ScaleRows { x, s } => {
                let c = self.nodes[x.0].shape[1];
                let rows = self.nodes[x.0].shape[0];
                if self.wants(*x) {
                    let sd = &self.nodes[s.0].data;
                    let gx = &mut g[x.0];
                    for r in 0..rows {
                        for j in 0..c {
                            gx[r * c + j] += gi[r * c + j] * sd[r];
                        }
                    }
                }
                if self.wants(*s) {
                    let xd = &self.nodes[x.0].data;
                    let gs = &mut g[s.0];
                    for r in 0..rows {
                        let mut dot = 0.0;
                        for j in 0..c {
                            dot += gi[r * c + j] * xd[r * c + j];
                        }
                        gs[r] += dot;
                    }
                }
            }
            Op::SegmentSumRows { x, seg } => {
                if self.wants(*x) {
                    let c = self.nodes[x.0].shape[1];
                    let gx = &mut g[x.0];
                    for (e, &i_out) in seg.iter().enumerate() {
                        for j in 0..c {
                            gx[e * c + j] += gi[i_out * c + j];
                        }
                    }
                }
            }
            Op::SegmentSoftmax { s, seg } => {
                if self.wants(*s) {
                    let y = &self.nodes[i].data;
                    let nseg = seg.iter().map(|&i| i + 1).max().unwrap_or(0);
                    let mut dots = vec![0.0; nseg];
                    for (e, &i_seg) in seg.iter().enumerate() {
                        dots[i_seg] += gi[e] * y[e];
                    }
                    let gs = &mut g[s.0];
                    for (e, &i_seg) in seg.iter().enumerate() {
                        gs[e] += y[e] * (gi[e] - dots[i_seg]);
                    }
                }
            }
            Op::Sum { x } => {
                if self.wants(*x) {
                    for gx in g[x.0].iter_mut() {
                        *gx += gi[0];
                    }
                }
            }
            Op::Scale { x, c } => {
                if self.wants(*x) {
                    for (e, gx) in g[x.0].iter_mut().enumerate() {
                        *gx += gi[e] * c;
                    }
                }
            }
            Op::Reshape { x } => {
                if self.wants(*x) {
                    for (e, gx) in g[x.0].iter_mut().enumerate() {
                        *gx += gi[e];
                    }
                }
            }
        }
    }
}

/// Elementwise product of an output-shaped gradient with the *other* operand
/// of a broadcast multiply, expanding the operand as the forward pass did.
fn expand_mul(gi: &[f64], other: &[f64]) -> Vec<f64> {
    if other.len() == gi.len() {
        gi.iter().zip(other).map(|(&g, &o)| g * o).collect()
    } else if other.len() == 1 {
        gi.iter().map(|&g| g * other[0]).collect()
    } else {
        // row vector repeated over rows
        let w = other.len();
        gi.iter().enumerate().map(|(e, &g)| g * other[e % w]).collect()
    }
}

/// Adds `src` (output-shaped) into `dst` (operand-shaped), summing over
/// broadcast positions; `sign` handles subtraction's right operand.
fn reduce_into(src: &[f64], dst: &mut [f64], sign: f64) {
    if dst.len() == src.len() {
        for (d, &s) in dst.iter_mut().zip(src) {
            *d += sign * s;
        }
    } else if dst.len() == 1 {
        dst[0] += sign * src.iter().sum::<f64>();
    } else {
        let w = dst.len();
        for (e, &s) in src.iter().enumerate() {
            dst[e % w] += sign * s;
        }
    }
}
