//! Build the twelve signed correlation graphs used for the RETURN task on a
//! synthetic market, print their edge counts and correlation quantiles, and one graph in DOT.
//!
//! cargo run --release --example correlation_graphs

use termnet::features::{assemble, FeatureConfig, Horizon, Quantity};
use termnet::graphbuild::{build_channel_set, graph_stats};
use termnet::marketdata::{build_panel, canonical_universe, filter_zero_liquidity, GridConfig};
use termnet::synthgen::{generate, SynthConfig};

fn main() -> termnet::Result<()> {
    let universe = canonical_universe();
    let stream = filter_zero_liquidity(&generate(&SynthConfig::canonical(10, 3)));
    let panel = build_panel(&stream, &universe, &GridConfig::default())?;
    let (_, targets) = assemble(&panel, &stream, &FeatureConfig::default(), Horizon::H1);

    let graphs = build_channel_set(&targets, 24..targets.row_ts.len() - 1, Quantity::Return);
    println!("{:<42} {:>4} {:>4}  quantiles", "graph", "+", "-");
    for g in &graphs {
        let s = graph_stats(g);
        let q = s.corr_quantiles.map_or("NA".to_string(), |q| format!("{:.2?}", q));
        println!("{:<42} {:>4} {:>4}  {q}", s.label, s.positive_edges, s.negative_edges);
    }
    println!("\n{}", graphs[1].to_dot());
    Ok(())
}
