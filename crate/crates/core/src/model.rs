//! GCN-LSTM: one LSTM + dense module per node, a multi-channel signed GCN
//! pooling layer, and a linear head with skip connections.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::graphbuild::SignedGraph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Activation {
    Tanh,
    Relu,
}

/// How the graph diagonal enters the propagation matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SelfLoopMode {
    /// `D^-1/2 (A - I) D^-1/2`.
    Subtract,
    /// `D^-1/2 (A + I) D^-1/2`.
    Add,
    /// `D^-1/2 A D^-1/2`.
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Architecture {
    /// Node modules, GCN pooling, head with skips.
    GcnLstm,
    /// Node modules and head only.
    Lstm,
    /// Dense layers on the last input row only, then the head.
    Ann,
}

impl Architecture {
    pub fn label(self) -> &'static str {
        match self {
            Architecture::GcnLstm => "GCN-LSTM",
            Architecture::Lstm => "LSTM",
            Architecture::Ann => "ANN",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub lstm_units: usize,
    pub dense1_units: usize,
    pub dense2_units: usize,
    pub gcn_out_units: usize,
    pub seq_len: usize,
    pub gcn_activation: Activation,
    pub share_node_weights: bool,
    pub self_loop_mode: SelfLoopMode,
    /// Use `h_t = c_t * tanh(c_t)` instead of `o_t * tanh(c_t)`.
    pub verbatim_hidden_state: bool,
    pub architecture: Architecture,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            lstm_units: 64,
            dense1_units: 32,
            dense2_units: 16,
            gcn_out_units: 16,
            seq_len: 12,
            gcn_activation: Activation::Tanh,
            share_node_weights: false,
            self_loop_mode: SelfLoopMode::Subtract,
            verbatim_hidden_state: false,
            architecture: Architecture::GcnLstm,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> crate::Result<()> {
        let sizes = [self.lstm_units, self.dense1_units, self.dense2_units, self.gcn_out_units, self.seq_len];
        if sizes.contains(&0) {
            return Err(crate::Error::Config(format!("model sizes must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// `D^-1/2 M D^-1/2` where `M` is `A - I`, `A + I` or `A` and `D` counts the
/// nonzero entries of each row of `A` (diagonal included, floored at 1).
pub fn propagation_matrix(graph: &SignedGraph, mode: SelfLoopMode) -> Tensor {
    let n = graph.n();
    let deg: Vec<f64> = graph.degree().into_iter().map(|d| d.max(1) as f64).collect();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let mut a = graph.get(i, j);
            if i == j {
                match mode {
                    SelfLoopMode::Subtract => a -= 1.0,
                    SelfLoopMode::Add => a += 1.0,
                    SelfLoopMode::None => {}
                }
            }
            out[i * n + j] = a / (deg[i] * deg[j]).sqrt();
        }
    }
    Tensor::matrix(n, n, out)
}

/// Trainable tensors with names and an L1 flag (weights yes, biases no).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    pub names: Vec<String>,
    pub tensors: Vec<Tensor>,
    pub penalized: Vec<bool>,
}

impl ParamSet {
    fn push(&mut self, name: String, t: Tensor, penalized: bool) -> usize {
        self.names.push(name);
        self.tensors.push(t);
        self.penalized.push(penalized);
        self.tensors.len() - 1
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn n_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }
}

/// Indices into a [`ParamSet`] for one node module.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModuleIdx {
    pub lstm_w: Option<usize>,
    pub lstm_u: Option<usize>,
    pub lstm_b: Option<usize>,
    pub d1_w: usize,
    pub d1_b: usize,
    pub d2_w: usize,
    pub d2_b: usize,
    pub head_gcn: Option<usize>,
    pub head_skip: usize,
    pub head_b: usize,
}

/// Per-node inputs for a batch of `batch` time indices: for each node a
/// `(seq_len * batch) x input_dim` tensor whose rows `s*batch..(s+1)*batch`
/// hold step `s` of every sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeBatch {
    pub batch: usize,
    pub seq_len: usize,
    pub inputs: Vec<Tensor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcnLstm {
    pub config: ModelConfig,
    pub n_nodes: usize,
    pub input_dim: usize,
    pub params: ParamSet,
    pub modules: Vec<ModuleIdx>,
    pub gcn_w: Vec<usize>,
    /// Propagation matrices, one per channel.
    pub channels: Vec<Tensor>,
}

fn glorot(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize, rows: usize, cols: usize) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-bound..=bound)).collect())
}

/// The Glorot-uniform bound for a layer.
pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

impl GcnLstm {
    /// Seeded initialization: Glorot-uniform weights, zero biases, forget-gate bias 1.
    pub fn new(config: ModelConfig, n_nodes: usize, input_dim: usize, graphs: &[SignedGraph], seed: u64) -> Self {
        config.validate().expect("invalid model configuration");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet { names: vec![], tensors: vec![], penalized: vec![] };
        let h = config.lstm_units;
        let f = config.dense2_units;
        let use_gcn = config.architecture == Architecture::GcnLstm;
        let k = if use_gcn { graphs.len() } else { 0 };
        let f1 = config.gcn_out_units;
        for g in graphs {
            assert_eq!(g.n(), n_nodes, "graph has {} nodes, model has {n_nodes}", g.n());
        }

        let n_modules = if config.share_node_weights { 1 } else { n_nodes };
        let mut modules = Vec::with_capacity(n_modules);
        for m in 0..n_modules {
            let p = if config.share_node_weights { "shared".to_string() } else { format!("node{m}") };
            let (lstm_w, lstm_u, lstm_b, d1_in) = if config.architecture == Architecture::Ann {
                (None, None, None, input_dim)
            } else {
                let w = Tensor::new(
                    vec![input_dim, 4 * h],
                    interleave_gates(&mut rng, input_dim, h, |r| glorot(r, input_dim, h, input_dim, h)),
                );
                let u = Tensor::new(vec![h, 4 * h], interleave_gates(&mut rng, h, h, |r| glorot(r, h, h, h, h)));
                let mut b = Tensor::zeros(&[4 * h]);
                // Gate order i, f, o, c: forget-gate bias starts at 1.
                b.data[h..2 * h].fill(1.0);
                (
                    Some(params.push(format!("{p}.lstm.W"), w, true)),
                    Some(params.push(format!("{p}.lstm.U"), u, true)),
                    Some(params.push(format!("{p}.lstm.b"), b, false)),
                    h,
                )
            };
            let d1 = config.dense1_units;
            let d1_w = params.push(format!("{p}.dense1.W"), glorot(&mut rng, d1_in, d1, d1_in, d1), true);
            let d1_b = params.push(format!("{p}.dense1.b"), Tensor::zeros(&[d1]), false);
            let d2_w = params.push(format!("{p}.dense2.W"), glorot(&mut rng, d1, f, d1, f), true);
            let d2_b = params.push(format!("{p}.dense2.b"), Tensor::zeros(&[f]), false);
            let head_in = k * f1 + f;
            let head_gcn = use_gcn.then(|| params.push(format!("{p}.head.Wg"), glorot(&mut rng, head_in, 1, k * f1, 1), true));
            let head_skip = params.push(format!("{p}.head.Ws"), glorot(&mut rng, head_in, 1, f, 1), true);
            let head_b = params.push(format!("{p}.head.b"), Tensor::zeros(&[1]), false);
            modules.push(ModuleIdx { lstm_w, lstm_u, lstm_b, d1_w, d1_b, d2_w, d2_b, head_gcn, head_skip, head_b });
        }
        let gcn_w = (0..k).map(|c| params.push(format!("gcn{c}.W"), glorot(&mut rng, f, f1, f, f1), true)).collect();
        let channels = if use_gcn { graphs.iter().map(|g| propagation_matrix(g, config.self_loop_mode)).collect() } else { vec![] };
        Self { config, n_nodes, input_dim, params, modules, gcn_w, channels }
    }

    pub fn module(&self, node: usize) -> &ModuleIdx {
        if self.config.share_node_weights {
            &self.modules[0]
        } else {
            &self.modules[node]
        }
    }

    /// Register every parameter on `tape`, in [`ParamSet`] order.
    pub fn leaves<'t>(&self, tape: &'t Tape) -> Vec<Var<'t>> {
        self.params.tensors.iter().map(|t| tape.leaf(t.clone())).collect()
    }

    /// The L1-penalized subset of `leaves`.
    pub fn penalized<'t>(&self, leaves: &[Var<'t>]) -> Vec<Var<'t>> {
        leaves.iter().zip(&self.params.penalized).filter(|(_, p)| **p).map(|(v, _)| *v).collect()
    }

    /// Node module: LSTM (or last input row for ANN) then two tanh dense
    /// layers. `x` is `(seq_len * batch) x input_dim`; returns `batch x F`.
    fn module_forward<'t>(&self, p: &[Var<'t>], m: &ModuleIdx, x: Var<'t>, batch: usize) -> Var<'t> {
        let tape = x.tape();
        let seq = self.config.seq_len;
        let h_units = self.config.lstm_units;
        let z = if let (Some(w), Some(u), Some(b)) = (m.lstm_w, m.lstm_u, m.lstm_b) {
            let xw = x.matmul(p[w]);
            let mut h = tape.leaf(Tensor::zeros(&[batch, h_units]));
            let mut c = h;
            for s in 0..seq {
                let gates = xw.slice(0, s * batch, batch);
                let gates = if s == 0 { gates } else { gates.add(h.matmul(p[u])) };
                let gates = gates.add_row_bias(p[b]);
                let i = gates.slice(1, 0, h_units).sigmoid();
                let f = gates.slice(1, h_units, h_units).sigmoid();
                let o = gates.slice(1, 2 * h_units, h_units).sigmoid();
                let g = gates.slice(1, 3 * h_units, h_units).tanh();
                c = if s == 0 { i.mul(g) } else { f.mul(c).add(i.mul(g)) };
                h = if self.config.verbatim_hidden_state { c.mul(c.tanh()) } else { o.mul(c.tanh()) };
            }
            h
        } else {
            x.slice(0, (seq - 1) * batch, batch)
        };
        let d1 = z.matmul(p[m.d1_w]).add_row_bias(p[m.d1_b]).tanh();
        d1.matmul(p[m.d2_w]).add_row_bias(p[m.d2_b]).tanh()
    }

    /// Skip vectors (`batch x F` per node).
    pub fn skips<'t>(&self, p: &[Var<'t>], batch: &NodeBatch) -> Vec<Var<'t>> {
        assert_eq!(batch.inputs.len(), self.n_nodes, "batch has {} nodes, model has {}", batch.inputs.len(), self.n_nodes);
        assert_eq!(batch.seq_len, self.config.seq_len, "sequence length mismatch");
        let tape = p[0].tape();
        let b = batch.batch;
        if self.config.share_node_weights {
            // One pass over all nodes stacked step-major: rows (s, node, b).
            let d = self.input_dim;
            let n = self.n_nodes;
            let mut data = Vec::with_capacity(self.config.seq_len * n * b * d);
            for s in 0..self.config.seq_len {
                for t in &batch.inputs {
                    data.extend_from_slice(&t.data[s * b * d..(s + 1) * b * d]);
                }
            }
            let x = tape.leaf(Tensor::matrix(self.config.seq_len * n * b, d, data));
            let all = self.module_forward(p, &self.modules[0], x, n * b);
            (0..n).map(|node| all.slice(0, node * b, b)).collect()
        } else {
            batch
                .inputs
                .iter()
                .enumerate()
                .map(|(node, t)| {
                    assert_eq!(t.dims2(), (self.config.seq_len * b, self.input_dim), "node {node} input shape");
                    self.module_forward(p, &self.modules[node], tape.leaf(t.clone()), b)
                })
                .collect()
        }
    }

    /// GCN channel outputs for stacked skips: `(N * batch) x (K * F1)`.
    pub fn gcn<'t>(&self, p: &[Var<'t>], skips: &[Var<'t>], batch: usize) -> Var<'t> {
        let tape = p[0].tape();
        let n = self.n_nodes;
        let f = self.config.dense2_units;
        let stacked = Var::concat(skips, 0).reshape(&[n, batch * f]);
        let outs: Vec<Var<'t>> = self
            .channels
            .iter()
            .zip(&self.gcn_w)
            .map(|(a, &w)| {
                let mixed = tape.leaf(a.clone()).matmul(stacked).reshape(&[n * batch, f]).matmul(p[w]);
                match self.config.gcn_activation {
                    Activation::Tanh => mixed.tanh(),
                    Activation::Relu => mixed.relu(),
                }
            })
            .collect();
        Var::concat(&outs, 1)
    }

    /// Forecasts, one `batch x 1` tensor per node.
    pub fn forward<'t>(&self, p: &[Var<'t>], batch: &NodeBatch) -> Vec<Var<'t>> {
        let b = batch.batch;
        let skips = self.skips(p, batch);
        let pooled = (self.config.architecture == Architecture::GcnLstm && !self.channels.is_empty())
            .then(|| self.gcn(p, &skips, b));
        skips
            .iter()
            .enumerate()
            .map(|(node, skip)| {
                let m = self.module(node);
                let mut out = skip.matmul(p[m.head_skip]);
                if let (Some(pooled), Some(wg)) = (pooled, m.head_gcn) {
                    let row = pooled.slice(0, node * b, b).matmul(p[wg]);
                    out = row.add(out);
                }
                out.add_row_bias(p[m.head_b])
            })
            .collect()
    }

    /// Forward pass without gradients; returns `forecasts[node][b]`.
    pub fn predict(&self, batch: &NodeBatch) -> Vec<Vec<f64>> {
        let tape = Tape::new();
        let p = self.leaves(&tape);
        self.forward(&p, batch).iter().map(|v| v.value().data).collect()
    }

    /// Forecasts from the skip path alone (head bias plus skip weights),
    /// ignoring any GCN contribution.
    pub fn predict_skip_only(&self, batch: &NodeBatch) -> Vec<Vec<f64>> {
        let tape = Tape::new();
        let p = self.leaves(&tape);
        self.skips(&p, batch)
            .iter()
            .enumerate()
            .map(|(node, s)| {
                let m = self.module(node);
                s.matmul(p[m.head_skip]).add_row_bias(p[m.head_b]).value().data
            })
            .collect()
    }

    pub fn checkpoint(&self) -> crate::autodiff::Checkpoint {
        let tensors = self.params.names.iter().cloned().zip(self.params.tensors.iter().cloned()).collect();
        crate::autodiff::Checkpoint::new(tensors, serde_json::to_value(&self.config).unwrap_or_default())
    }

    /// Overwrite parameters from a checkpoint with matching names and shapes.
    pub fn load_checkpoint(&mut self, ck: &crate::autodiff::Checkpoint) -> crate::Result<()> {
        for (name, t) in self.params.names.iter().zip(self.params.tensors.iter_mut()) {
            let src = ck.tensors.get(name).ok_or_else(|| crate::Error::Shape(format!("checkpoint lacks {name}")))?;
            if src.shape != t.shape {
                return Err(crate::Error::Shape(format!("{name}: checkpoint {:?} vs model {:?}", src.shape, t.shape)));
            }
            *t = src.clone();
        }
        Ok(())
    }
}

/// Fused `[i | f | o | c]` gate matrix built from four independently
/// initialized `rows x h` blocks.
fn interleave_gates(rng: &mut ChaCha8Rng, rows: usize, h: usize, mut block: impl FnMut(&mut ChaCha8Rng) -> Tensor) -> Vec<f64> {
    let blocks: Vec<Tensor> = (0..4).map(|_| block(rng)).collect();
    let mut out = Vec::with_capacity(rows * 4 * h);
    for r in 0..rows {
        for b in &blocks {
            out.extend_from_slice(&b.data[r * h..(r + 1) * h]);
        }
    }
    out
}
