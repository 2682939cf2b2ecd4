//! Neural building blocks at the model's fixed sizes: a linear embedding,
//! a 32-unit single-layer GRU, a 64-unit two-layer LSTM and a three-head
//! graph-attention layer with concatenated heads.
//!
//! Each block exposes two entry points: a `*_fwd` function that records onto
//! a caller-owned [`Tape`] (used by training, where many vehicles or samples
//! are batched into one graph), and a plain tensor-in/tensor-out wrapper that
//! runs a private tape (used by tests and one-off evaluation).

use crate::error::{Error, Result};
use crate::graph::EdgeSet;
use crate::tensor::{Tape, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const GRU_HIDDEN: usize = 32;
pub const LSTM_HIDDEN: usize = 64;
pub const GAT_HEADS: usize = 3;
/// The single activation used everywhere in the network.
pub const LEAKY_SLOPE: f64 = 0.1;

fn uniform_init(rng: &mut ChaCha8Rng, shape: Vec<usize>, fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let data = (0..shape.iter().product::<usize>())
        .map(|_| rng.gen_range(-bound..=bound))
        .collect();
    Tensor::new(shape, data).expect("static shape").with_grad()
}

fn zeros_grad(shape: Vec<usize>) -> Tensor {
    Tensor::zeros(shape).with_grad()
}

// ---------------------------------------------------------------------------
// Linear
// ---------------------------------------------------------------------------

/// y = x W^T + b with `weight` stored `[out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl LinearParams {
    pub fn init(rng: &mut ChaCha8Rng, out: usize, inp: usize) -> Self {
        Self {
            weight: uniform_init(rng, vec![out, inp], inp),
            bias: zeros_grad(vec![out]),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn bind(&self, tape: &mut Tape) -> LinearVars {
        LinearVars {
            w: tape.param(&self.weight),
            b: tape.param(&self.bias),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LinearVars {
    pub w: Var,
    pub b: Var,
}

pub fn linear_fwd(tape: &mut Tape, p: &LinearVars, x: Var) -> Result<Var> {
    let prod = tape.matmul_nt(x, p.w)?;
    tape.add(prod, p.b)
}

/// Applies the layer to a vector `[in]` or a batch of rows `[n, in]`.
pub fn linear(p: &LinearParams, x: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let squeeze = x.shape().len() == 1;
    let xv = if squeeze {
        let v = tape.constant_tensor(x);
        tape.reshape(v, vec![1, x.numel()])?
    } else {
        tape.constant_tensor(x)
    };
    let p = p.bind(&mut tape);
    let mut y = linear_fwd(&mut tape, &p, xv)?;
    if squeeze {
        let out = tape.shape(y)[1];
        y = tape.reshape(y, vec![out])?;
    }
    Ok(tape.to_tensor(y))
}

// ---------------------------------------------------------------------------
// GRU
// ---------------------------------------------------------------------------

/// Single-layer GRU with gates stacked row-wise in order (reset, update,
/// candidate): `w_ih` is `[3H, D]`, `w_hh` is `[3H, H]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GruParams {
    pub w_ih: Tensor,
    pub w_hh: Tensor,
    pub b_ih: Tensor,
    pub b_hh: Tensor,
}

impl GruParams {
    pub fn init(rng: &mut ChaCha8Rng, hidden: usize, input: usize) -> Self {
        Self {
            w_ih: uniform_init(rng, vec![3 * hidden, input], input),
            w_hh: uniform_init(rng, vec![3 * hidden, hidden], hidden),
            b_ih: zeros_grad(vec![3 * hidden]),
            b_hh: zeros_grad(vec![3 * hidden]),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_hh.shape()[1]
    }

    pub fn input(&self) -> usize {
        self.w_ih.shape()[1]
    }

    pub fn bind(&self, tape: &mut Tape) -> GruVars {
        GruVars {
            w_ih: tape.param(&self.w_ih),
            w_hh: tape.param(&self.w_hh),
            b_ih: tape.param(&self.b_ih),
            b_hh: tape.param(&self.b_hh),
            hidden: self.hidden(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GruVars {
    pub w_ih: Var,
    pub w_hh: Var,
    pub b_ih: Var,
    pub b_hh: Var,
    hidden: usize,
}

/// One GRU step over a batch of rows.
///
/// r = sigmoid(W_ir x + b_ir + W_hr h + b_hr)
/// z = sigmoid(W_iz x + b_iz + W_hz h + b_hz)
/// n = tanh(W_in x + b_in + r * (W_hn h + b_hn))
/// h' = z * n + (1 - z) * h
///
/// The update gate z gates the candidate: a saturated-open gate replaces the
/// state with the candidate outright.
fn gru_step(tape: &mut Tape, p: &GruVars, h: Var, x: Var) -> Result<Var> {
    let hsz = p.hidden;
    let gi = tape.matmul_nt(x, p.w_ih)?;
    let gi = tape.add(gi, p.b_ih)?;
    let gh = tape.matmul_nt(h, p.w_hh)?;
    let gh = tape.add(gh, p.b_hh)?;

    let (gi_r, gi_z, gi_n) = (
        tape.slice_cols(gi, 0, hsz)?,
        tape.slice_cols(gi, hsz, hsz)?,
        tape.slice_cols(gi, 2 * hsz, hsz)?,
    );
    let (gh_r, gh_z, gh_n) = (
        tape.slice_cols(gh, 0, hsz)?,
        tape.slice_cols(gh, hsz, hsz)?,
        tape.slice_cols(gh, 2 * hsz, hsz)?,
    );

    let r_pre = tape.add(gi_r, gh_r)?;
    let r = tape.sigmoid(r_pre);
    let z_pre = tape.add(gi_z, gh_z)?;
    let z = tape.sigmoid(z_pre);
    let gated = tape.mul(r, gh_n)?;
    let n_pre = tape.add(gi_n, gated)?;
    let n = tape.tanh(n_pre);

    // z*n + (1-z)*h, written as z*n + h - z*h
    let zn = tape.mul(z, n)?;
    let zh = tape.mul(z, h)?;
    let keep = tape.sub(h, zh)?;
    tape.add(zn, keep)
}

/// Runs the GRU over `steps` (each `[rows, D]`) from a zero initial state and
/// returns the final hidden state `[rows, H]`.
pub fn gru_forward(tape: &mut Tape, p: &GruVars, steps: &[Var]) -> Result<Var> {
    let first = *steps
        .first()
        .ok_or_else(|| Error::contract("gru_encode requires a non-empty sequence"))?;
    let rows = tape.shape(first)[0];
    let mut h = tape.constant(vec![rows, p.hidden], vec![0.0; rows * p.hidden])?;
    for &x in steps {
        h = gru_step(tape, p, h, x)?;
    }
    Ok(h)
}

/// Encodes a single sequence `[T, D]` into the final hidden state `[H]`.
pub fn gru_encode(p: &GruParams, seq: &Tensor) -> Result<Tensor> {
    if seq.shape().len() != 2 || seq.shape()[1] != p.input() {
        return Err(Error::shape("gru_encode", seq.shape(), &[0, p.input()]));
    }
    let t_len = seq.shape()[0];
    if t_len == 0 {
        return Err(Error::contract("gru_encode requires a non-empty sequence"));
    }
    let d = p.input();
    let mut tape = Tape::new();
    let pv = p.bind(&mut tape);
    let steps: Vec<Var> = (0..t_len)
        .map(|t| tape.constant(vec![1, d], seq.data()[t * d..(t + 1) * d].to_vec()))
        .collect::<Result<_>>()?;
    let h = gru_forward(&mut tape, &pv, &steps)?;
    let h = tape.reshape(h, vec![p.hidden()])?;
    Ok(tape.to_tensor(h))
}

// ---------------------------------------------------------------------------
// LSTM
// ---------------------------------------------------------------------------

/// One LSTM cell; gates stacked row-wise in order (input, forget, cell,
/// output).
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCellParams {
    pub w_ih: Tensor,
    pub w_hh: Tensor,
    pub b_ih: Tensor,
    pub b_hh: Tensor,
}

impl LstmCellParams {
    pub fn init(rng: &mut ChaCha8Rng, hidden: usize, input: usize) -> Self {
        Self {
            w_ih: uniform_init(rng, vec![4 * hidden, input], input),
            w_hh: uniform_init(rng, vec![4 * hidden, hidden], hidden),
            b_ih: zeros_grad(vec![4 * hidden]),
            b_hh: zeros_grad(vec![4 * hidden]),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_hh.shape()[1]
    }

    pub fn input(&self) -> usize {
        self.w_ih.shape()[1]
    }
}

/// Two stacked LSTM cells; layer 2 consumes layer 1's hidden state.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub layer1: LstmCellParams,
    pub layer2: LstmCellParams,
}

impl LstmParams {
    pub fn init(rng: &mut ChaCha8Rng, hidden: usize, input: usize) -> Self {
        Self {
            layer1: LstmCellParams::init(rng, hidden, input),
            layer2: LstmCellParams::init(rng, hidden, hidden),
        }
    }

    pub fn hidden(&self) -> usize {
        self.layer1.hidden()
    }

    pub fn input(&self) -> usize {
        self.layer1.input()
    }

    pub fn bind(&self, tape: &mut Tape) -> LstmVars {
        LstmVars {
            layer1: CellVars::bind(&self.layer1, tape),
            layer2: CellVars::bind(&self.layer2, tape),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CellVars {
    pub w_ih: Var,
    pub w_hh: Var,
    pub b_ih: Var,
    pub b_hh: Var,
    hidden: usize,
}

impl CellVars {
    fn bind(p: &LstmCellParams, tape: &mut Tape) -> Self {
        Self {
            w_ih: tape.param(&p.w_ih),
            w_hh: tape.param(&p.w_hh),
            b_ih: tape.param(&p.b_ih),
            b_hh: tape.param(&p.b_hh),
            hidden: p.hidden(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LstmVars {
    pub layer1: CellVars,
    pub layer2: CellVars,
}

/// i = sigmoid(.), f = sigmoid(.), g = tanh(.), o = sigmoid(.)
/// c' = f*c + i*g ; h' = o * tanh(c')
fn lstm_cell_step(tape: &mut Tape, p: &CellVars, h: Var, c: Var, x: Var) -> Result<(Var, Var)> {
    let hsz = p.hidden;
    let gi = tape.matmul_nt(x, p.w_ih)?;
    let gi = tape.add(gi, p.b_ih)?;
    let gh = tape.matmul_nt(h, p.w_hh)?;
    let gh = tape.add(gh, p.b_hh)?;
    let pre = tape.add(gi, gh)?;

    let i_pre = tape.slice_cols(pre, 0, hsz)?;
    let f_pre = tape.slice_cols(pre, hsz, hsz)?;
    let g_pre = tape.slice_cols(pre, 2 * hsz, hsz)?;
    let o_pre = tape.slice_cols(pre, 3 * hsz, hsz)?;
    let i = tape.sigmoid(i_pre);
    let f = tape.sigmoid(f_pre);
    let g = tape.tanh(g_pre);
    let o = tape.sigmoid(o_pre);

    let fc = tape.mul(f, c)?;
    let ig = tape.mul(i, g)?;
    let c_next = tape.add(fc, ig)?;
    let c_act = tape.tanh(c_next);
    let h_next = tape.mul(o, c_act)?;
    Ok((h_next, c_next))
}

/// Unrolls the two-layer stack for `steps` steps, feeding the same `input`
/// rows at every step, from zero initial states. Returns the top-layer hidden
/// state of each step.
pub fn lstm_forward(tape: &mut Tape, p: &LstmVars, input: Var, steps: usize) -> Result<Vec<Var>> {
    if steps < 1 {
        return Err(Error::contract("lstm_decode requires steps >= 1"));
    }
    let rows = tape.shape(input)[0];
    let h = p.layer1.hidden;
    let zero = |tape: &mut Tape| tape.constant(vec![rows, h], vec![0.0; rows * h]);
    let (mut h1, mut c1) = (zero(tape)?, zero(tape)?);
    let (mut h2, mut c2) = (zero(tape)?, zero(tape)?);
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        let (nh1, nc1) = lstm_cell_step(tape, &p.layer1, h1, c1, input)?;
        let (nh2, nc2) = lstm_cell_step(tape, &p.layer2, h2, c2, nh1)?;
        h1 = nh1;
        c1 = nc1;
        h2 = nh2;
        c2 = nc2;
        out.push(h2);
    }
    Ok(out)
}

/// Decodes `steps` hidden states `[steps, H]` from a single context vector.
pub fn lstm_decode(p: &LstmParams, step_input: &Tensor, steps: usize) -> Result<Tensor> {
    if step_input.shape() != [p.input()] {
        return Err(Error::shape("lstm_decode", step_input.shape(), &[p.input()]));
    }
    let mut tape = Tape::new();
    let pv = p.bind(&mut tape);
    let x = tape.constant(vec![1, p.input()], step_input.data().to_vec())?;
    let tops = lstm_forward(&mut tape, &pv, x, steps)?;
    let h = p.hidden();
    let mut data = Vec::with_capacity(steps * h);
    for v in tops {
        data.extend_from_slice(tape.data(v));
    }
    Tensor::new(vec![steps, h], data)
}

// ---------------------------------------------------------------------------
// Graph attention
// ---------------------------------------------------------------------------

/// One attention head: projection `w` `[d_head, d_in]` and attention vector
/// `a` `[2 * d_head]`. No bias, per the layer definition.
#[derive(Debug, Clone, PartialEq)]
pub struct GatHeadParams {
    pub w: Tensor,
    pub a: Tensor,
}

/// Three-head attention layer; head outputs are concatenated, giving
/// `3 * d_head` features per node.
#[derive(Debug, Clone, PartialEq)]
pub struct GatLayerParams {
    pub heads: Vec<GatHeadParams>,
}

impl GatLayerParams {
    pub fn init(rng: &mut ChaCha8Rng, d_head: usize, d_in: usize) -> Self {
        let heads = (0..GAT_HEADS)
            .map(|_| GatHeadParams {
                w: uniform_init(rng, vec![d_head, d_in], d_in),
                a: uniform_init(rng, vec![2 * d_head], 2 * d_head),
            })
            .collect();
        Self { heads }
    }

    pub fn in_dim(&self) -> usize {
        self.heads[0].w.shape()[1]
    }

    pub fn head_dim(&self) -> usize {
        self.heads[0].w.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.heads.len() * self.head_dim()
    }

    pub fn bind(&self, tape: &mut Tape) -> GatVars {
        GatVars {
            heads: self
                .heads
                .iter()
                .map(|h| GatHeadVars {
                    w: tape.param(&h.w),
                    a: tape.param(&h.a),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GatHeadVars {
    pub w: Var,
    pub a: Var,
}

#[derive(Debug, Clone)]
pub struct GatVars {
    pub heads: Vec<GatHeadVars>,
}

/// Flat `(dst, src)` index lists ready for tape ops; shared by every head and
/// reusable across layers (the graph does not change between them).
pub struct EdgeIndex {
    pub dst: Vec<usize>,
    pub src: Vec<usize>,
    pub nodes: usize,
}

impl EdgeIndex {
    pub fn from_edges(edges: &EdgeSet) -> Result<Self> {
        if !edges.every_node_has_inbound() {
            return Err(Error::contract(
                "attention requires every node to have an incoming edge",
            ));
        }
        Ok(Self {
            dst: edges.edges().iter().map(|&(d, _)| d).collect(),
            src: edges.edges().iter().map(|&(_, s)| s).collect(),
            nodes: edges.nodes(),
        })
    }

    /// Concatenates another graph after `self`, offsetting its node ids;
    /// used to batch disjoint per-sample graphs into one attention pass.
    pub fn append(&mut self, edges: &EdgeSet) -> Result<()> {
        if !edges.every_node_has_inbound() {
            return Err(Error::contract(
                "attention requires every node to have an incoming edge",
            ));
        }
        let off = self.nodes;
        self.dst.extend(edges.edges().iter().map(|&(d, _)| d + off));
        self.src.extend(edges.edges().iter().map(|&(_, s)| s + off));
        self.nodes += edges.nodes();
        Ok(())
    }
}

/// Attention layer over node features `x` `[N, d_in]`.
///
/// Per head: z = x W^T; the score of edge (i <- j) is
/// leaky_relu(a . [z_i || z_j]); scores normalize by softmax over each node's
/// incoming edges; the node output is the attention-weighted sum of source
/// projections. Heads concatenate; `activate` applies the inter-layer
/// leaky_relu to the result.
pub fn gat_forward(
    tape: &mut Tape,
    p: &GatVars,
    x: Var,
    idx: &EdgeIndex,
    activate: bool,
) -> Result<Var> {
    let mut head_outs = Vec::with_capacity(p.heads.len());
    for head in &p.heads {
        let z = tape.matmul_nt(x, head.w)?;
        let z_dst = tape.gather_rows(z, &idx.dst)?;
        let z_src = tape.gather_rows(z, &idx.src)?;
        let cat = tape.concat_last(&[z_dst, z_src])?;
        let a_dim = tape.data(head.a).len();
        let a_row = tape.reshape(head.a, vec![1, a_dim])?;
        let score = tape.matmul_nt(cat, a_row)?;
        let score = tape.leaky_relu(score, LEAKY_SLOPE);
        let score = tape.reshape(score, vec![idx.dst.len()])?;
        let alpha = tape.segment_softmax(score, &idx.dst)?;
        let weighted = tape.scale_rows(z_src, alpha)?;
        head_outs.push(tape.segment_sum_rows(weighted, &idx.dst, idx.nodes)?);
    }
    let out = tape.concat_last(&head_outs)?;
    Ok(if activate {
        tape.leaky_relu(out, LEAKY_SLOPE)
    } else {
        out
    })
}

/// Single attention layer over a feature matrix `[N, d_in]`.
pub fn gat_layer(
    p: &GatLayerParams,
    feats: &Tensor,
    edges: &EdgeSet,
    activate: bool,
) -> Result<Tensor> {
    if feats.shape().len() != 2 || feats.shape()[1] != p.in_dim() {
        return Err(Error::shape("gat_layer", feats.shape(), &[0, p.in_dim()]));
    }
    if feats.shape()[0] != edges.nodes() {
        return Err(Error::Graph(format!(
            "feature rows {} do not match node count {}",
            feats.shape()[0],
            edges.nodes()
        )));
    }
    let idx = EdgeIndex::from_edges(edges)?;
    let mut tape = Tape::new();
    let pv = p.bind(&mut tape);
    let x = tape.constant_tensor(feats);
    let out = gat_forward(&mut tape, &pv, x, &idx, activate)?;
    Ok(tape.to_tensor(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_star_edges;
    use rand::{Rng, SeedableRng};

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
        Tensor::new(shape, data).unwrap().with_grad()
    }

    fn max_rel(a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(&x, &y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-12))
            .fold(0.0, f64::max)
    }

    /// Central finite differences over every entry of `tensors`, where
    /// `forward` recomputes the scalar from the current tensor values.
    fn fd_check(
        tensors: &mut [&mut Tensor],
        forward: &mut dyn FnMut(&[&mut Tensor]) -> f64,
        analytic: &[Vec<f64>],
        eps: f64,
    ) -> f64 {
        let mut worst = 0.0f64;
        for ti in 0..tensors.len() {
            for ei in 0..tensors[ti].numel() {
                let orig = tensors[ti].data()[ei];
                tensors[ti].data_mut()[ei] = orig + eps;
                let up = forward(tensors);
                tensors[ti].data_mut()[ei] = orig - eps;
                let down = forward(tensors);
                tensors[ti].data_mut()[ei] = orig;
                let cd = (up - down) / (2.0 * eps);
                let a = analytic[ti][ei];
                worst = worst.max((a - cd).abs() / a.abs().max(cd.abs()).max(1e-12));
            }
        }
        worst
    }

    // ---- linear ----

    #[test]
    fn linear_identity() {
        let p = LinearParams {
            weight: Tensor::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]).unwrap(),
            bias: Tensor::zeros(vec![2]),
        };
        let y = linear(&p, &Tensor::new(vec![2], vec![3.0, 4.0]).unwrap()).unwrap();
        assert_eq!(y.data(), &[3.0, 4.0]);
        assert_eq!(y.shape(), &[2]);
    }

    #[test]
    fn linear_sum_minus_one() {
        let p = LinearParams {
            weight: Tensor::from_rows(&[&[1.0, 1.0]]).unwrap(),
            bias: Tensor::new(vec![1], vec![-1.0]).unwrap(),
        };
        let y = linear(&p, &Tensor::new(vec![2], vec![2.0, 3.0]).unwrap()).unwrap();
        assert_eq!(y.data(), &[4.0]);
    }

    #[test]
    fn linear_shape_error() {
        let mut r = rng(1);
        let p = LinearParams::init(&mut r, 3, 2);
        let bad = Tensor::new(vec![4], vec![0.0; 4]).unwrap();
        assert!(linear(&p, &bad).is_err());
    }

    #[test]
    fn linear_gradient_check() {
        let mut r = rng(2);
        let mut p = LinearParams::init(&mut r, 3, 4);
        let x = rand_tensor(&mut r, vec![2, 4], -2.0, 2.0);

        let mut tape = Tape::new();
        let pv = p.bind(&mut tape);
        let xv = tape.constant_tensor(&x);
        let y = linear_fwd(&mut tape, &pv, xv).unwrap();
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        let analytic = vec![
            tape.grad(pv.w).unwrap().to_vec(),
            tape.grad(pv.b).unwrap().to_vec(),
        ];

        let x2 = x.clone();
        let mut forward = move |ts: &[&mut Tensor]| -> f64 {
            let p = LinearParams {
                weight: ts[0].clone(),
                bias: ts[1].clone(),
            };
            let mut tape = Tape::new();
            let pv = p.bind(&mut tape);
            let xv = tape.constant_tensor(&x2);
            let y = linear_fwd(&mut tape, &pv, xv).unwrap();
            let s = tape.sum(y);
            tape.data(s)[0]
        };
        let err = fd_check(
            &mut [&mut p.weight, &mut p.bias],
            &mut forward,
            &analytic,
            1e-6,
        );
        assert!(err < 1e-8, "linear gradient err {err}");
    }

    // ---- GRU ----

    /// Plain-loop single-unit reference of the same gate equations; no tape.
    fn gru_scalar_reference(p: &GruParams, seq: &[Vec<f64>]) -> Vec<f64> {
        let h_size = p.hidden();
        let d = p.input();
        let wi = p.w_ih.data();
        let wh = p.w_hh.data();
        let bi = p.b_ih.data();
        let bh = p.b_hh.data();
        let mut h = vec![0.0; h_size];
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        for x in seq {
            let mut gi = vec![0.0; 3 * h_size];
            let mut gh = vec![0.0; 3 * h_size];
            for row in 0..3 * h_size {
                for c in 0..d {
                    gi[row] += wi[row * d + c] * x[c];
                }
                gi[row] += bi[row];
                for c in 0..h_size {
                    gh[row] += wh[row * h_size + c] * h[c];
                }
                gh[row] += bh[row];
            }
            let mut next = vec![0.0; h_size];
            for u in 0..h_size {
                let r = sig(gi[u] + gh[u]);
                let z = sig(gi[h_size + u] + gh[h_size + u]);
                let n = (gi[2 * h_size + u] + r * gh[2 * h_size + u]).tanh();
                next[u] = z * n + (1.0 - z) * h[u];
            }
            h = next;
        }
        h
    }

    #[test]
    fn gru_zero_weights_fixed_point() {
        let p = GruParams {
            w_ih: Tensor::zeros(vec![9, 2]),
            w_hh: Tensor::zeros(vec![9, 3]),
            b_ih: Tensor::zeros(vec![9]),
            b_hh: Tensor::zeros(vec![9]),
        };
        let seq = Tensor::new(vec![4, 2], vec![1.0; 8]).unwrap();
        let h = gru_encode(&p, &seq).unwrap();
        assert_eq!(h.data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn gru_forced_open_update_gate_gives_tanh_one() {
        // All weights zero except candidate bias 1 and a huge update-gate
        // bias: one step turns h into tanh(1) per unit.
        let h = 3usize;
        let mut b_ih = vec![0.0; 3 * h];
        for u in 0..h {
            b_ih[h + u] = 1e6; // update gate saturated open
            b_ih[2 * h + u] = 1.0; // candidate bias
        }
        let p = GruParams {
            w_ih: Tensor::zeros(vec![3 * h, 2]),
            w_hh: Tensor::zeros(vec![3 * h, h]),
            b_ih: Tensor::new(vec![3 * h], b_ih).unwrap(),
            b_hh: Tensor::zeros(vec![3 * h]),
        };
        let seq = Tensor::new(vec![1, 2], vec![0.3, -0.7]).unwrap();
        let out = gru_encode(&p, &seq).unwrap();
        for &v in out.data() {
            assert!((v - 1.0f64.tanh()).abs() < 1e-12, "got {v}");
        }
        assert!((out.data()[0] - 0.7616).abs() < 1e-4);
    }

    #[test]
    fn gru_empty_sequence_is_contract_error() {
        let mut r = rng(3);
        let p = GruParams::init(&mut r, 3, 2);
        let seq = Tensor::new(vec![0, 2], vec![]).unwrap();
        assert!(gru_encode(&p, &seq).is_err());
    }

    #[test]
    fn gru_matches_scalar_reference() {
        for seed in 0..5 {
            let mut r = rng(100 + seed);
            let p = GruParams::init(&mut r, 2, 2);
            let steps = 7;
            let seq_data: Vec<f64> = (0..steps * 2).map(|_| r.gen_range(-2.0..2.0)).collect();
            let seq = Tensor::new(vec![steps, 2], seq_data.clone()).unwrap();
            let h = gru_encode(&p, &seq).unwrap();
            let seq_rows: Vec<Vec<f64>> = seq_data.chunks(2).map(|c| c.to_vec()).collect();
            let expect = gru_scalar_reference(&p, &seq_rows);
            for (a, b) in h.data().iter().zip(&expect) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gru_gradient_check_t16() {
        let mut r = rng(4);
        let mut p = GruParams::init(&mut r, 4, 3);
        let t_len = 16;
        let seq = rand_tensor(&mut r, vec![t_len, 3], -2.0, 2.0);

        let run = |p: &GruParams, want_grads: bool| -> (f64, Option<Vec<Vec<f64>>>) {
            let mut tape = Tape::new();
            let pv = p.bind(&mut tape);
            let steps: Vec<Var> = (0..t_len)
                .map(|t| {
                    tape.constant(vec![1, 3], seq.data()[t * 3..(t + 1) * 3].to_vec())
                        .unwrap()
                })
                .collect();
            let h = gru_forward(&mut tape, &pv, &steps).unwrap();
            let s = tape.sum(h);
            let val = tape.data(s)[0];
            if want_grads {
                tape.backward(s).unwrap();
                let g = [pv.w_ih, pv.w_hh, pv.b_ih, pv.b_hh]
                    .iter()
                    .map(|&v| tape.grad(v).unwrap().to_vec())
                    .collect();
                (val, Some(g))
            } else {
                (val, None)
            }
        };
        let (_, analytic) = run(&p, true);
        let analytic = analytic.unwrap();
        let mut forward = |ts: &[&mut Tensor]| -> f64 {
            let p = GruParams {
                w_ih: ts[0].clone(),
                w_hh: ts[1].clone(),
                b_ih: ts[2].clone(),
                b_hh: ts[3].clone(),
            };
            run(&p, false).0
        };
        let err = fd_check(
            &mut [&mut p.w_ih, &mut p.w_hh, &mut p.b_ih, &mut p.b_hh],
            &mut forward,
            &analytic,
            1e-5,
        );
        assert!(err < 1e-6, "gru gradient err {err}");
    }

    // ---- LSTM ----

    fn lstm_cell_reference(
        p: &LstmCellParams,
        h: &[f64],
        c: &[f64],
        x: &[f64],
    ) -> (Vec<f64>, Vec<f64>) {
        let hs = p.hidden();
        let d = p.input();
        let wi = p.w_ih.data();
        let wh = p.w_hh.data();
        let bi = p.b_ih.data();
        let bh = p.b_hh.data();
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let mut pre = vec![0.0; 4 * hs];
        for row in 0..4 * hs {
            for col in 0..d {
                pre[row] += wi[row * d + col] * x[col];
            }
            for col in 0..hs {
                pre[row] += wh[row * hs + col] * h[col];
            }
            pre[row] += bi[row] + bh[row];
        }
        let mut h2 = vec![0.0; hs];
        let mut c2 = vec![0.0; hs];
        for u in 0..hs {
            let i = sig(pre[u]);
            let f = sig(pre[hs + u]);
            let g = pre[2 * hs + u].tanh();
            let o = sig(pre[3 * hs + u]);
            c2[u] = f * c[u] + i * g;
            h2[u] = o * c2[u].tanh();
        }
        (h2, c2)
    }

    #[test]
    fn lstm_zero_weights_outputs_zero() {
        let zeros = |h: usize, d: usize| LstmCellParams {
            w_ih: Tensor::zeros(vec![4 * h, d]),
            w_hh: Tensor::zeros(vec![4 * h, h]),
            b_ih: Tensor::zeros(vec![4 * h]),
            b_hh: Tensor::zeros(vec![4 * h]),
        };
        let p = LstmParams {
            layer1: zeros(3, 2),
            layer2: zeros(3, 3),
        };
        let x = Tensor::new(vec![2], vec![1.0, -1.0]).unwrap();
        let y = lstm_decode(&p, &x, 4).unwrap();
        assert_eq!(y.shape(), &[4, 3]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lstm_single_step_equals_cell_application() {
        let mut r = rng(5);
        let p = LstmParams::init(&mut r, 3, 2);
        let x: Vec<f64> = (0..2).map(|_| r.gen_range(-1.5..1.5)).collect();
        let y = lstm_decode(&p, &Tensor::new(vec![2], x.clone()).unwrap(), 1).unwrap();

        let (h1, _c1) = lstm_cell_reference(&p.layer1, &[0.0; 3], &[0.0; 3], &x);
        let (h2, _c2) = lstm_cell_reference(&p.layer2, &[0.0; 3], &[0.0; 3], &h1);
        for (a, b) in y.data().iter().zip(&h2) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn lstm_matches_scalar_reference_over_steps() {
        for seed in 0..5 {
            let mut r = rng(200 + seed);
            let p = LstmParams::init(&mut r, 2, 2);
            let x: Vec<f64> = (0..2).map(|_| r.gen_range(-1.5..1.5)).collect();
            let steps = 6;
            let y = lstm_decode(&p, &Tensor::new(vec![2], x.clone()).unwrap(), steps).unwrap();

            let (mut h1, mut c1) = (vec![0.0; 2], vec![0.0; 2]);
            let (mut h2, mut c2) = (vec![0.0; 2], vec![0.0; 2]);
            for s in 0..steps {
                let (nh1, nc1) = lstm_cell_reference(&p.layer1, &h1, &c1, &x);
                let (nh2, nc2) = lstm_cell_reference(&p.layer2, &h2, &c2, &nh1);
                h1 = nh1;
                c1 = nc1;
                h2 = nh2;
                c2 = nc2;
                for u in 0..2 {
                    assert!((y.data()[s * 2 + u] - h2[u]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn lstm_zero_steps_is_contract_error() {
        let mut r = rng(6);
        let p = LstmParams::init(&mut r, 3, 2);
        let x = Tensor::new(vec![2], vec![0.0, 0.0]).unwrap();
        assert!(lstm_decode(&p, &x, 0).is_err());
    }

    #[test]
    fn lstm_gradient_check_10_steps() {
        let mut r = rng(7);
        let mut p = LstmParams::init(&mut r, 3, 4);
        let x = rand_tensor(&mut r, vec![1, 4], -1.5, 1.5);

        let run = |p: &LstmParams, want: bool| -> (f64, Option<Vec<Vec<f64>>>) {
            let mut tape = Tape::new();
            let pv = p.bind(&mut tape);
            let xv = tape.constant_tensor(&x);
            let tops = lstm_forward(&mut tape, &pv, xv, 10).unwrap();
            let mut total = None;
            for h in tops {
                let s = tape.sum(h);
                total = Some(match total {
                    None => s,
                    Some(acc) => tape.add(acc, s).unwrap(),
                });
            }
            let loss = total.unwrap();
            let val = tape.data(loss)[0];
            if want {
                tape.backward(loss).unwrap();
                let g = [
                    pv.layer1.w_ih,
                    pv.layer1.w_hh,
                    pv.layer1.b_ih,
                    pv.layer1.b_hh,
                    pv.layer2.w_ih,
                    pv.layer2.w_hh,
                    pv.layer2.b_ih,
                    pv.layer2.b_hh,
                ]
                .iter()
                .map(|&v| tape.grad(v).unwrap().to_vec())
                .collect();
                (val, Some(g))
            } else {
                (val, None)
            }
        };
        let analytic = run(&p, true).1.unwrap();
        let mut forward = |ts: &[&mut Tensor]| -> f64 {
            let cell = |o: usize, ts: &[&mut Tensor]| LstmCellParams {
                w_ih: ts[o].clone(),
                w_hh: ts[o + 1].clone(),
                b_ih: ts[o + 2].clone(),
                b_hh: ts[o + 3].clone(),
            };
            let p = LstmParams {
                layer1: cell(0, ts),
                layer2: cell(4, ts),
            };
            run(&p, false).0
        };
        let err = fd_check(
            &mut [
                &mut p.layer1.w_ih,
                &mut p.layer1.w_hh,
                &mut p.layer1.b_ih,
                &mut p.layer1.b_hh,
                &mut p.layer2.w_ih,
                &mut p.layer2.w_hh,
                &mut p.layer2.b_ih,
                &mut p.layer2.b_hh,
            ],
            &mut forward,
            &analytic,
            1e-5,
        );
        assert!(err < 1e-6, "lstm gradient err {err}");
    }

    // ---- GAT ----

    /// Dense oracle: materializes the full masked attention matrix per head
    /// and normalizes each row explicitly.
    pub(crate) fn gat_dense_oracle(
        p: &GatLayerParams,
        feats: &[Vec<f64>],
        edges: &[(usize, usize)],
        n: usize,
        activate: bool,
    ) -> Vec<Vec<f64>> {
        let d_in = p.in_dim();
        let dh = p.head_dim();
        let slope = LEAKY_SLOPE;
        let lrelu = |v: f64| if v >= 0.0 { v } else { slope * v };
        let mut out = vec![Vec::new(); n];
        for head in &p.heads {
            let w = head.w.data();
            let a = head.a.data();
            // projections
            let z: Vec<Vec<f64>> = feats
                .iter()
                .map(|x| {
                    (0..dh)
                        .map(|r| (0..d_in).map(|c| w[r * d_in + c] * x[c]).sum())
                        .collect()
                })
                .collect();
            // dense masked score matrix: score[i][j] for edge j -> i
            let mut mask = vec![vec![false; n]; n];
            for &(dst, src) in edges {
                mask[dst][src] = true;
            }
            for i in 0..n {
                let mut weights = vec![0.0; n];
                let mut denom = 0.0;
                let mut row_max = f64::NEG_INFINITY;
                let mut scores = vec![0.0; n];
                for j in 0..n {
                    if mask[i][j] {
                        let mut s = 0.0;
                        for k in 0..dh {
                            s += a[k] * z[i][k] + a[dh + k] * z[j][k];
                        }
                        scores[j] = lrelu(s);
                        row_max = row_max.max(scores[j]);
                    }
                }
                for j in 0..n {
                    if mask[i][j] {
                        weights[j] = (scores[j] - row_max).exp();
                        denom += weights[j];
                    }
                }
                let mut acc = vec![0.0; dh];
                for j in 0..n {
                    if mask[i][j] {
                        let alpha = weights[j] / denom;
                        for k in 0..dh {
                            acc[k] += alpha * z[j][k];
                        }
                    }
                }
                out[i].extend(acc);
            }
        }
        if activate {
            for row in &mut out {
                for v in row {
                    *v = lrelu(*v);
                }
            }
        }
        out
    }

    #[test]
    fn gat_single_node_self_loop_identity_projection() {
        // W = I, one node with only a self-loop: attention weight is 1 and
        // the activated output is leaky_relu(x).
        let d = 3;
        let eye: Vec<f64> = (0..d * d)
            .map(|i| if i % (d + 1) == 0 { 1.0 } else { 0.0 })
            .collect();
        let mut r = rng(8);
        let p = GatLayerParams {
            heads: (0..GAT_HEADS)
                .map(|_| GatHeadParams {
                    w: Tensor::new(vec![d, d], eye.clone()).unwrap(),
                    a: rand_tensor(&mut r, vec![2 * d], -1.0, 1.0),
                })
                .collect(),
        };
        let x = vec![0.5, -2.0, 1.25];
        let feats = Tensor::new(vec![1, d], x.clone()).unwrap();
        let edges = build_star_edges(0).unwrap();
        let y = gat_layer(&p, &feats, &edges, true).unwrap();
        assert_eq!(y.shape(), &[1, 3 * d]);
        for h in 0..GAT_HEADS {
            for (k, &xv) in x.iter().enumerate() {
                let expect = if xv >= 0.0 { xv } else { LEAKY_SLOPE * xv };
                assert!((y.data()[h * d + k] - expect).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn gat_zero_attention_vector_averages_projections() {
        // Star with two neighbors and a = 0: the target's three incoming
        // edges get uniform attention 1/3, so its output is the mean of the
        // three projected features.
        let mut r = rng(9);
        let d = 4;
        let p = GatLayerParams {
            heads: (0..GAT_HEADS)
                .map(|_| GatHeadParams {
                    w: rand_tensor(&mut r, vec![d, d], -1.0, 1.0),
                    a: Tensor::zeros(vec![2 * d]),
                })
                .collect(),
        };
        let feats = rand_tensor(&mut r, vec![3, d], -1.0, 1.0);
        let edges = build_star_edges(2).unwrap();
        let y = gat_layer(&p, &feats, &edges, false).unwrap();

        for (h, head) in p.heads.iter().enumerate() {
            let w = head.w.data();
            for k in 0..d {
                let mut mean = 0.0;
                for j in 0..3 {
                    let mut z = 0.0;
                    for c in 0..d {
                        z += w[k * d + c] * feats.data()[j * d + c];
                    }
                    mean += z / 3.0;
                }
                let got = y.data()[h * d + k];
                assert!((got - mean).abs() < 1e-12, "head {h} dim {k}");
            }
        }
    }

    #[test]
    fn gat_matches_dense_oracle_on_random_graph() {
        let mut r = rng(10);
        for case in 0..20 {
            let n = r.gen_range(1..=5);
            let d_in = 3;
            let p = GatLayerParams::init(&mut r, 2, d_in);
            // self-loops guarantee inbound edges everywhere
            let mut edges: Vec<(usize, usize)> = (0..n).map(|i| (i, i)).collect();
            for dst in 0..n {
                for src in 0..n {
                    if dst != src && r.gen_bool(0.4) {
                        edges.push((dst, src));
                    }
                }
            }
            let feats_rows: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..d_in).map(|_| r.gen_range(-2.0..2.0)).collect())
                .collect();
            let feats =
                Tensor::new(vec![n, d_in], feats_rows.concat()).unwrap();
            let es = EdgeSet::new(n, edges.clone()).unwrap();
            let activate = case % 2 == 0;
            let y = gat_layer(&p, &feats, &es, activate).unwrap();
            let oracle = gat_dense_oracle(&p, &feats_rows, &edges, n, activate);
            for i in 0..n {
                for (k, &o) in oracle[i].iter().enumerate() {
                    let got = y.data()[i * oracle[i].len() + k];
                    assert!(
                        (got - o).abs() < 1e-10,
                        "case {case} node {i} dim {k}: {got} vs {o}"
                    );
                }
            }
        }
    }

    #[test]
    fn gat_output_depends_only_on_in_neighbors() {
        // Perturbing a node with no edge into node 0 leaves node 0's output
        // bit-identical.
        let mut r = rng(11);
        let p = GatLayerParams::init(&mut r, 3, 3);
        // nodes: 0 <- 1, 2 isolated (self-loops everywhere)
        let edges = EdgeSet::new(3, vec![(0, 0), (1, 1), (2, 2), (0, 1)]).unwrap();
        let mut feats = rand_tensor(&mut r, vec![3, 3], -1.0, 1.0);
        let y1 = gat_layer(&p, &feats, &edges, true).unwrap();
        feats.data_mut()[2 * 3] += 10.0; // perturb node 2
        let y2 = gat_layer(&p, &feats, &edges, true).unwrap();
        let out_w = y1.shape()[1];
        assert_eq!(y1.data()[..out_w], y2.data()[..out_w]); // node 0 identical
        assert_ne!(y1.data()[2 * out_w..], y2.data()[2 * out_w..]);
    }

    #[test]
    fn gat_permutation_equivariance() {
        let mut r = rng(12);
        let p = GatLayerParams::init(&mut r, 3, 3);
        let n = 4;
        let edges = vec![(0, 0), (1, 1), (2, 2), (3, 3), (0, 1), (0, 3), (2, 0)];
        let feats = rand_tensor(&mut r, vec![n, 3], -1.0, 1.0);
        let es = EdgeSet::new(n, edges.clone()).unwrap();
        let y = gat_layer(&p, &feats, &es, true).unwrap();

        // permute nodes with sigma, relabel edges, permute features
        let sigma = [2usize, 0, 3, 1]; // new index of old node i
        let mut feats_p = vec![0.0; feats.numel()];
        for old in 0..n {
            let new = sigma[old];
            feats_p[new * 3..new * 3 + 3].copy_from_slice(&feats.data()[old * 3..old * 3 + 3]);
        }
        let edges_p: Vec<(usize, usize)> =
            edges.iter().map(|&(d, s)| (sigma[d], sigma[s])).collect();
        let es_p = EdgeSet::new(n, edges_p).unwrap();
        let y_p = gat_layer(
            &p,
            &Tensor::new(vec![n, 3], feats_p).unwrap(),
            &es_p,
            true,
        )
        .unwrap();

        let w = y.shape()[1];
        for old in 0..n {
            let new = sigma[old];
            for k in 0..w {
                let a = y.data()[old * w + k];
                let b = y_p.data()[new * w + k];
                assert!((a - b).abs() < 1e-12, "node {old} dim {k}");
            }
        }
    }

    #[test]
    fn gat_rejects_inboundless_nodes_and_bad_indices() {
        let mut r = rng(13);
        let p = GatLayerParams::init(&mut r, 2, 3);
        let feats = rand_tensor(&mut r, vec![2, 3], -1.0, 1.0);
        // node 1 has no incoming edge
        let edges = EdgeSet::new(2, vec![(0, 0), (0, 1)]).unwrap();
        assert!(matches!(
            gat_layer(&p, &feats, &edges, true),
            Err(crate::error::Error::Contract(_))
        ));
        // edge referencing node 5 is a graph error at construction
        assert!(matches!(
            EdgeSet::new(2, vec![(0, 0), (1, 5)]),
            Err(crate::error::Error::Graph(_))
        ));
    }

    #[test]
    fn gat_gradient_check_on_star_graph() {
        // 9-node star (target plus 8 neighbors)
        let mut r = rng(14);
        let mut p = GatLayerParams::init(&mut r, 2, 3);
        let n = 9;
        let feats = rand_tensor(&mut r, vec![n, 3], -1.5, 1.5);
        let edges = build_star_edges(8).unwrap();
        let idx = EdgeIndex::from_edges(&edges).unwrap();

        let run = |p: &GatLayerParams, want: bool| -> (f64, Option<Vec<Vec<f64>>>) {
            let mut tape = Tape::new();
            let pv = p.bind(&mut tape);
            let x = tape.constant_tensor(&feats);
            let y = gat_forward(&mut tape, &pv, x, &idx, true).unwrap();
            let s = tape.sum(y);
            let val = tape.data(s)[0];
            if want {
                tape.backward(s).unwrap();
                let g = pv
                    .heads
                    .iter()
                    .flat_map(|h| [h.w, h.a])
                    .map(|v| tape.grad(v).unwrap().to_vec())
                    .collect();
                (val, Some(g))
            } else {
                (val, None)
            }
        };
        let analytic = run(&p, true).1.unwrap();
        let mut forward = |ts: &[&mut Tensor]| -> f64 {
            let heads = (0..GAT_HEADS)
                .map(|h| GatHeadParams {
                    w: ts[2 * h].clone(),
                    a: ts[2 * h + 1].clone(),
                })
                .collect();
            run(&GatLayerParams { heads }, false).0
        };
        let mut refs: Vec<&mut Tensor> = Vec::new();
        for h in &mut p.heads {
            refs.push(&mut h.w);
            refs.push(&mut h.a);
        }
        let err = fd_check(&mut refs, &mut forward, &analytic, 1e-5);
        assert!(err < 1e-6, "gat gradient err {err}");
    }
}
