//! The assembled predictor: shared GRU history encoder, two-layer
//! graph-attention interaction encoder over the star graph, and a two-layer
//! LSTM future decoder fed the concatenated context at every step.
//!
//! Three variants share the architecture and differ only in what reaches the
//! decoder: the full model concatenates the predicted vehicle's dynamics
//! feature r and interaction feature g, the dynamics-only ablation feeds r
//! alone, the interaction-only ablation feeds g alone.
//!
//! Predictions are displacements from the predicted vehicle's position at the
//! current instant. For single-target samples that vehicle sits at the
//! origin, so displacements coincide with sample-frame positions.

use crate::data::{Sample, T_FUT, T_HIST};
use crate::error::{Error, Result};
use crate::graph::EdgeSet;
use crate::layers::{
    gat_forward, gru_forward, linear_fwd, lstm_forward, EdgeIndex, GatLayerParams, GatVars,
    GruParams, GruVars, LinearParams, LinearVars, LstmParams, LstmVars, GAT_HEADS, GRU_HIDDEN,
    LSTM_HIDDEN,
};
use crate::tensor::{ParamSet, Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Input coordinates per trajectory point.
pub const COORDS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    TwoChannel,
    DynamicsOnly,
    InteractionOnly,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::TwoChannel => "two_channel",
            Variant::DynamicsOnly => "dynamics_only",
            Variant::InteractionOnly => "interaction_only",
        }
    }

    pub fn uses_interaction(self) -> bool {
        !matches!(self, Variant::DynamicsOnly)
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two_channel" => Ok(Variant::TwoChannel),
            "dynamics_only" => Ok(Variant::DynamicsOnly),
            "interaction_only" => Ok(Variant::InteractionOnly),
            other => Err(Error::Config(format!(
                "unknown variant '{other}' (expected two_channel, dynamics_only or interaction_only)"
            ))),
        }
    }
}

/// Width knobs the architecture leaves open; recurrent sizes are fixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    /// embedding width of the (x, y) inputs
    pub d_emb: usize,
    /// per-head attention width; a layer outputs 3 * d_head
    pub d_head: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_emb: 32,
            d_head: 32,
        }
    }
}

impl ModelConfig {
    pub fn gat_out(&self) -> usize {
        GAT_HEADS * self.d_head
    }

    /// Decoder context width for a variant.
    pub fn ctx_dim(&self, variant: Variant) -> usize {
        match variant {
            Variant::TwoChannel => self.gat_out() + GRU_HIDDEN,
            Variant::DynamicsOnly => GRU_HIDDEN,
            Variant::InteractionOnly => self.gat_out(),
        }
    }
}

/// Every learnable weight of the network.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub variant: Variant,
    pub cfg: ModelConfig,
    pub emb: LinearParams,
    pub gru: GruParams,
    pub gat1: GatLayerParams,
    pub gat2: GatLayerParams,
    pub dec: LstmParams,
    pub head: LinearParams,
}

impl ModelParams {
    /// Seeded init: weights uniform in (-1/sqrt(fan_in), +1/sqrt(fan_in)),
    /// biases zero.
    pub fn init(variant: Variant, cfg: ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            variant,
            cfg,
            emb: LinearParams::init(&mut rng, cfg.d_emb, COORDS),
            gru: GruParams::init(&mut rng, GRU_HIDDEN, cfg.d_emb),
            gat1: GatLayerParams::init(&mut rng, cfg.d_head, GRU_HIDDEN),
            gat2: GatLayerParams::init(&mut rng, cfg.d_head, cfg.gat_out()),
            dec: LstmParams::init(&mut rng, LSTM_HIDDEN, cfg.ctx_dim(variant)),
            head: LinearParams::init(&mut rng, COORDS, LSTM_HIDDEN),
        }
    }

    pub fn num_params(&self) -> usize {
        self.num_values()
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundModel {
        // Bind order mirrors tensors(); a unit test pins the alignment.
        let emb = self.emb.bind(tape);
        let gru = self.gru.bind(tape);
        let gat1 = self.gat1.bind(tape);
        let gat2 = self.gat2.bind(tape);
        let dec = self.dec.bind(tape);
        let head = self.head.bind(tape);
        let mut param_vars = vec![emb.w, emb.b, gru.w_ih, gru.w_hh, gru.b_ih, gru.b_hh];
        for h in gat1.heads.iter().chain(gat2.heads.iter()) {
            param_vars.push(h.w);
            param_vars.push(h.a);
        }
        for cell in [&dec.layer1, &dec.layer2] {
            param_vars.extend([cell.w_ih, cell.w_hh, cell.b_ih, cell.b_hh]);
        }
        param_vars.extend([head.w, head.b]);
        BoundModel {
            variant: self.variant,
            emb,
            gru,
            gat1,
            gat2,
            dec,
            head,
            param_vars,
        }
    }

    /// Adds the tape's accumulated leaf gradients into the parameters'
    /// gradient buffers.
    pub fn absorb_grads(&mut self, tape: &Tape, bound: &BoundModel) -> Result<()> {
        let vars = bound.param_vars.clone();
        for ((_, t), var) in self.tensors_mut().into_iter().zip(vars) {
            if let Some(g) = tape.grad(var) {
                t.accumulate_grad(g)?;
            }
        }
        Ok(())
    }
}

impl ParamSet for ModelParams {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = vec![
            ("emb.weight".into(), &self.emb.weight),
            ("emb.bias".into(), &self.emb.bias),
            ("gru.w_ih".into(), &self.gru.w_ih),
            ("gru.w_hh".into(), &self.gru.w_hh),
            ("gru.b_ih".into(), &self.gru.b_ih),
            ("gru.b_hh".into(), &self.gru.b_hh),
        ];
        for (li, layer) in [&self.gat1, &self.gat2].into_iter().enumerate() {
            for (hi, h) in layer.heads.iter().enumerate() {
                out.push((format!("gat{}.h{}.w", li + 1, hi), &h.w));
                out.push((format!("gat{}.h{}.a", li + 1, hi), &h.a));
            }
        }
        for (ci, cell) in [&self.dec.layer1, &self.dec.layer2].into_iter().enumerate() {
            out.push((format!("dec.l{}.w_ih", ci + 1), &cell.w_ih));
            out.push((format!("dec.l{}.w_hh", ci + 1), &cell.w_hh));
            out.push((format!("dec.l{}.b_ih", ci + 1), &cell.b_ih));
            out.push((format!("dec.l{}.b_hh", ci + 1), &cell.b_hh));
        }
        out.push(("head.weight".into(), &self.head.weight));
        out.push(("head.bias".into(), &self.head.bias));
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = vec![
            ("emb.weight".into(), &mut self.emb.weight),
            ("emb.bias".into(), &mut self.emb.bias),
            ("gru.w_ih".into(), &mut self.gru.w_ih),
            ("gru.w_hh".into(), &mut self.gru.w_hh),
            ("gru.b_ih".into(), &mut self.gru.b_ih),
            ("gru.b_hh".into(), &mut self.gru.b_hh),
        ];
        for (li, layer) in [&mut self.gat1, &mut self.gat2].into_iter().enumerate() {
            for (hi, h) in layer.heads.iter_mut().enumerate() {
                out.push((format!("gat{}.h{}.w", li + 1, hi), &mut h.w));
                out.push((format!("gat{}.h{}.a", li + 1, hi), &mut h.a));
            }
        }
        for (ci, cell) in [&mut self.dec.layer1, &mut self.dec.layer2]
            .into_iter()
            .enumerate()
        {
            out.push((format!("dec.l{}.w_ih", ci + 1), &mut cell.w_ih));
            out.push((format!("dec.l{}.w_hh", ci + 1), &mut cell.w_hh));
            out.push((format!("dec.l{}.b_ih", ci + 1), &mut cell.b_ih));
            out.push((format!("dec.l{}.b_hh", ci + 1), &mut cell.b_hh));
        }
        out.push(("head.weight".into(), &mut self.head.weight));
        out.push(("head.bias".into(), &mut self.head.bias));
        out
    }
}

/// Tape handles of one bound parameter set.
pub struct BoundModel {
    pub variant: Variant,
    pub emb: LinearVars,
    pub gru: GruVars,
    pub gat1: GatVars,
    pub gat2: GatVars,
    pub dec: LstmVars,
    pub head: LinearVars,
    /// aligned with [`ModelParams::tensors`]
    pub param_vars: Vec<Var>,
}

/// Predicted future of one vehicle: displacements from its current position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub points: [[f64; 2]; T_FUT],
}

impl Prediction {
    pub fn is_finite(&self) -> bool {
        self.points.iter().flatten().all(|v| v.is_finite())
    }
}

/// Flattened inputs of a batch of samples: per-step coordinate matrices over
/// all vehicles, the disjoint union of the per-sample graphs, and the rows
/// to decode.
pub struct BatchPlan {
    pub n_nodes: usize,
    /// 16 matrices [n_nodes, 2]
    steps: Vec<Vec<f64>>,
    edges: EdgeIndex,
    /// node-space row of every predicted vehicle, sample-major
    pub target_rows: Vec<usize>,
    /// predicted vehicles per sample, for regrouping outputs
    pub targets_per_sample: Vec<usize>,
    /// 10 matrices [n_targets, 2]: ground-truth displacements
    pub truth_steps: Vec<Vec<f64>>,
}

impl BatchPlan {
    pub fn new(samples: &[Sample]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::contract("empty batch"));
        }
        let n_nodes: usize = samples.iter().map(|s| s.histories.len()).sum();
        let n_targets: usize = samples.iter().map(|s| s.targets.len()).sum();

        let mut steps = vec![Vec::with_capacity(n_nodes * COORDS); T_HIST];
        let mut edges: Option<EdgeIndex> = None;
        let mut target_rows = Vec::with_capacity(n_targets);
        let mut truth_steps = vec![Vec::with_capacity(n_targets * COORDS); T_FUT];
        let mut offset = 0usize;
        for s in samples {
            for (t, step) in steps.iter_mut().enumerate() {
                for h in &s.histories {
                    step.extend_from_slice(&h[t]);
                }
            }
            match &mut edges {
                None => edges = Some(EdgeIndex::from_edges(&s.edges)?),
                Some(e) => e.append(&s.edges)?,
            }
            for t in &s.targets {
                target_rows.push(offset + t.node);
                let cur = s.current_of(t.node);
                for (k, row) in truth_steps.iter_mut().enumerate() {
                    row.push(t.future[k][0] - cur[0]);
                    row.push(t.future[k][1] - cur[1]);
                }
            }
            offset += s.histories.len();
        }
        Ok(Self {
            n_nodes,
            steps,
            edges: edges.expect("non-empty batch"),
            target_rows,
            targets_per_sample: samples.iter().map(|s| s.targets.len()).collect(),
            truth_steps,
        })
    }

    pub fn n_targets(&self) -> usize {
        self.target_rows.len()
    }
}

/// Records the full forward pass of a batch on `tape`; returns the ten
/// per-step output matrices `[n_targets, 2]`.
pub fn forward_on_tape(tape: &mut Tape, bound: &BoundModel, plan: &BatchPlan) -> Result<Vec<Var>> {
    // Shared history encoder over every vehicle of every sample.
    let mut embedded = Vec::with_capacity(T_HIST);
    for step in &plan.steps {
        let x = tape.constant(vec![plan.n_nodes, COORDS], step.clone())?;
        embedded.push(linear_fwd(tape, &bound.emb, x)?);
    }
    let r_all = gru_forward(tape, &bound.gru, &embedded)?;

    let ctx = match bound.variant {
        Variant::DynamicsOnly => tape.gather_rows(r_all, &plan.target_rows)?,
        Variant::InteractionOnly | Variant::TwoChannel => {
            let h1 = gat_forward(tape, &bound.gat1, r_all, &plan.edges, true)?;
            let g_all = gat_forward(tape, &bound.gat2, h1, &plan.edges, false)?;
            let g_rows = tape.gather_rows(g_all, &plan.target_rows)?;
            if bound.variant == Variant::InteractionOnly {
                g_rows
            } else {
                let r_rows = tape.gather_rows(r_all, &plan.target_rows)?;
                tape.concat_last(&[g_rows, r_rows])?
            }
        }
    };

    let tops = lstm_forward(tape, &bound.dec, ctx, T_FUT)?;
    tops.into_iter()
        .map(|h| linear_fwd(tape, &bound.head, h))
        .collect()
}

fn collect_predictions(tape: &Tape, outputs: &[Var], plan: &BatchPlan) -> Vec<Vec<Prediction>> {
    let mut per_sample = Vec::with_capacity(plan.targets_per_sample.len());
    let mut row = 0usize;
    for &m in &plan.targets_per_sample {
        let mut preds = Vec::with_capacity(m);
        for r in row..row + m {
            let mut points = [[0.0; 2]; T_FUT];
            for (k, &out) in outputs.iter().enumerate() {
                let d = tape.data(out);
                points[k] = [d[r * COORDS], d[r * COORDS + 1]];
            }
            preds.push(Prediction { points });
        }
        per_sample.push(preds);
        row += m;
    }
    per_sample
}

/// Batched forward pass; outer Vec per sample, inner per predicted vehicle.
pub fn forward_batch(p: &ModelParams, samples: &[Sample]) -> Result<Vec<Vec<Prediction>>> {
    let plan = BatchPlan::new(samples)?;
    let mut tape = Tape::new();
    let bound = p.bind(&mut tape);
    let outputs = forward_on_tape(&mut tape, &bound, &plan)?;
    Ok(collect_predictions(&tape, &outputs, &plan))
}

/// Predicts the single-target sample's node 0.
pub fn forward_stp(p: &ModelParams, sample: &Sample) -> Result<Prediction> {
    if !sample.is_single_target() {
        return Err(Error::contract(
            "forward_stp expects a single-target sample",
        ));
    }
    Ok(forward_batch(p, std::slice::from_ref(sample))?[0][0])
}

/// Predicts every target of a multi-target sample, in node order 1..=m.
pub fn forward_mtp(p: &ModelParams, sample: &Sample) -> Result<Vec<Prediction>> {
    Ok(forward_batch(p, std::slice::from_ref(sample))?
        .pop()
        .expect("one sample in, one sample out"))
}

/// Per-vehicle dynamics features: embeds each history point and runs the
/// shared GRU, one row per vehicle.
pub fn encode_history(p: &ModelParams, histories: &[[[f64; 2]; T_HIST]]) -> Result<Tensor> {
    if histories.is_empty() {
        return Err(Error::contract("encode_history needs at least one vehicle"));
    }
    let n = histories.len();
    let mut tape = Tape::new();
    let emb = p.emb.bind(&mut tape);
    let gru = p.gru.bind(&mut tape);
    let mut embedded = Vec::with_capacity(T_HIST);
    for t in 0..T_HIST {
        let step: Vec<f64> = histories.iter().flat_map(|h| h[t]).collect();
        let x = tape.constant(vec![n, COORDS], step)?;
        embedded.push(linear_fwd(&mut tape, &emb, x)?);
    }
    let r = gru_forward(&mut tape, &gru, &embedded)?;
    Ok(tape.to_tensor(r))
}

/// Interaction features: two attention layers over the graph, leaky ReLU
/// between them, none after the second.
pub fn encode_interaction(p: &ModelParams, r: &Tensor, edges: &EdgeSet) -> Result<Tensor> {
    if r.shape().len() != 2 || r.shape()[1] != GRU_HIDDEN {
        return Err(Error::shape(
            "encode_interaction",
            r.shape(),
            &[0, GRU_HIDDEN],
        ));
    }
    if r.shape()[0] != edges.nodes() {
        return Err(Error::Graph(format!(
            "feature rows {} do not match node count {}",
            r.shape()[0],
            edges.nodes()
        )));
    }
    let idx = EdgeIndex::from_edges(edges)?;
    let mut tape = Tape::new();
    let gat1 = p.gat1.bind(&mut tape);
    let gat2 = p.gat2.bind(&mut tape);
    let x = tape.constant_tensor(r);
    let h1 = gat_forward(&mut tape, &gat1, x, &idx, true)?;
    let g = gat_forward(&mut tape, &gat2, h1, &idx, false)?;
    Ok(tape.to_tensor(g))
}

/// Decodes a future from the per-variant context. The unused channel of an
/// ablation may be omitted (or passed and ignored).
pub fn decode_future(
    p: &ModelParams,
    g0: Option<&Tensor>,
    r0: Option<&Tensor>,
) -> Result<Prediction> {
    let need = |t: Option<&Tensor>, dim: usize, what: &str| -> Result<Vec<f64>> {
        let t = t
            .ok_or_else(|| Error::contract(format!("variant {} needs {what}", p.variant.name())))?;
        if t.shape() != [dim] {
            return Err(Error::shape("decode_future", t.shape(), &[dim]));
        }
        Ok(t.data().to_vec())
    };
    let ctx = match p.variant {
        Variant::TwoChannel => {
            let mut v = need(g0, p.cfg.gat_out(), "the interaction feature g0")?;
            v.extend(need(r0, GRU_HIDDEN, "the dynamics feature r0")?);
            v
        }
        Variant::DynamicsOnly => need(r0, GRU_HIDDEN, "the dynamics feature r0")?,
        Variant::InteractionOnly => need(g0, p.cfg.gat_out(), "the interaction feature g0")?,
    };
    let mut tape = Tape::new();
    let dec = p.dec.bind(&mut tape);
    let head = p.head.bind(&mut tape);
    let dim = ctx.len();
    let x = tape.constant(vec![1, dim], ctx)?;
    let tops = lstm_forward(&mut tape, &dec, x, T_FUT)?;
    let mut points = [[0.0; 2]; T_FUT];
    for (k, h) in tops.into_iter().enumerate() {
        let y = linear_fwd(&mut tape, &head, h)?;
        let d = tape.data(y);
        points[k] = [d[0], d[1]];
    }
    Ok(Prediction { points })
}
