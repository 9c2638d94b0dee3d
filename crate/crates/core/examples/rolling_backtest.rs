//! Walk-forward GCN-LSTM backtest against naive, OLS, LASSO and PCR on a
//! synthetic four-contract market, with report files written to disk.
//!
//! cargo run --release --example rolling_backtest -- [RETURN|VOLATILITY|VOLUME] [out_dir]

use termnet::features::Quantity;
use termnet::marketdata::{build_panel, filter_zero_liquidity, GridConfig, InstrumentId};
use termnet::pipeline::{emit_report, run_on_dataset, Dataset, RunConfig};
use termnet::synthgen::{generate, SynthConfig};

fn main() -> termnet::Result<()> {
    let mut args = std::env::args().skip(1);
    let task = args.next().and_then(|s| Quantity::parse(&s)).unwrap_or(Quantity::Return);
    let out = args.next().unwrap_or_else(|| "target/rolling_backtest".into());

    let universe = [InstrumentId::es(1), InstrumentId::es(2), InstrumentId::vx(1), InstrumentId::vx(2)];
    let stream = filter_zero_liquidity(&generate(&SynthConfig::for_universe(&universe, 40, 21)));
    let panel = build_panel(&stream, &universe, &GridConfig::default())?;

    let mut run = RunConfig::desk(task);
    run.lookback = 600;
    run.roll = 100;
    let ds = Dataset::build(&panel, &stream, &run.features, run.horizon, &run.thresholds);
    let report = run_on_dataset(&run, &ds)?;

    println!("{} blocks, {} forecasts, fingerprint {}", report.n_blocks, report.n_forecasts, &report.fingerprint[..12]);
    for m in report.metrics.iter().filter(|m| m.product == "ES_1" || m.product == "VX_1") {
        println!("{:<9} {:<5} {:<6} {:>12}  n={}", m.model, m.product, m.metric, m.value.map_or("NA".into(), |v| format!("{v:.4e}")), m.n);
    }
    for path in emit_report(&report, &out)? {
        println!("wrote {}", path.display());
    }
    Ok(())
}
