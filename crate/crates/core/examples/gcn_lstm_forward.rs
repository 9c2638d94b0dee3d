//! Assemble a three-node GCN-LSTM over two signed graphs, run a forward
//! pass, and show that identity graphs reduce it to the skip path.
//!
//! cargo run --release --example gcn_lstm_forward

use termnet::autodiff::Tensor;
use termnet::features::Quantity;
use termnet::graphbuild::{weighted_adjacency, CorrMatrix, GraphConfig, SignedGraph, Variant};
use termnet::marketdata::InstrumentId;
use termnet::model::{propagation_matrix, GcnLstm, ModelConfig, NodeBatch, SelfLoopMode};

fn main() {
    let nodes = vec![InstrumentId::es(1), InstrumentId::es(2), InstrumentId::vx(1)];
    let cfg = GraphConfig::new(Quantity::Return, Quantity::Return, 0, Variant::Weighted);
    let corr = CorrMatrix::from_dense(3, vec![1.0, 0.9, -0.6, 0.9, 1.0, -0.5, -0.6, -0.5, 1.0]);
    let graph = weighted_adjacency(&corr, nodes.clone(), cfg);
    println!("propagation matrix (A - I):\n{:?}", propagation_matrix(&graph, SelfLoopMode::Subtract).data);

    let config = ModelConfig { lstm_units: 8, dense1_units: 6, dense2_units: 4, gcn_out_units: 3, seq_len: 5, ..ModelConfig::default() };
    let (batch, d) = (2, 4);
    let inputs = (0..3)
        .map(|n| Tensor::matrix(config.seq_len * batch, d, (0..config.seq_len * batch * d).map(|i| ((i + 7 * n) as f64 * 0.37).sin()).collect()))
        .collect();
    let x = NodeBatch { batch, seq_len: config.seq_len, inputs };

    let model = GcnLstm::new(config.clone(), 3, d, &[graph.clone(), graph], 42);
    println!("{} trainable scalars", model.params.n_scalars());
    for (node, f) in model.predict(&x).iter().enumerate() {
        println!("{}: {:?}", nodes[node], f);
    }

    let identity = SignedGraph::identity(nodes, cfg);
    let plain = GcnLstm::new(config, 3, d, &[identity.clone(), identity], 42);
    println!("identity graphs, full == skip-only: {}", plain.predict(&x) == plain.predict_skip_only(&x));
}
