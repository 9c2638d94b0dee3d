//! Run the nine-row robustness grid (graph subsets, loss swaps, shared
//! modules, full model) on a small synthetic market and print the table.
//!
//! cargo run --release --example ablation_grid -- [out.csv]

use termnet::features::Quantity;
use termnet::marketdata::{build_panel, filter_zero_liquidity, GridConfig, InstrumentId};
use termnet::pipeline::{run_ablation, Dataset, RunConfig};
use termnet::synthgen::{generate, SynthConfig};

fn main() -> termnet::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "target/ablation.csv".into());
    let universe = [InstrumentId::es(1), InstrumentId::es(2), InstrumentId::vx(1), InstrumentId::vx(2)];
    let stream = filter_zero_liquidity(&generate(&SynthConfig::for_universe(&universe, 25, 4)));
    let panel = build_panel(&stream, &universe, &GridConfig::default())?;

    let mut base = RunConfig::desk(Quantity::Return);
    base.lookback = 300;
    base.roll = 100;
    base.epochs_initial = 5;
    base.epochs_roll = 2;
    let ds = Dataset::build(&panel, &stream, &base.features, base.horizon, &base.thresholds);
    let table = run_ablation(&base, &Quantity::ALL, &ds)?;

    println!("{:<28} {}", "config", table.columns.join(" "));
    for row in &table.rows {
        let cells: Vec<String> = row.cells.iter().map(|c| c.map_or("NA".into(), |v| format!("{v:.3e}"))).collect();
        println!("{:<28} {}", row.label, cells.join(" "));
    }
    table.write_csv(&out)?;
    println!("wrote {out}");
    Ok(())
}
