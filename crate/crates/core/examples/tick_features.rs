//! Build the minute panel and the hourly feature matrix from a synthetic
//! tick stream, then show a few standardized feature rows and targets.
//!
//! cargo run --release --example tick_features

use termnet::features::{assemble, standardize, FeatureConfig, Horizon};
use termnet::marketdata::{build_panel, filter_zero_liquidity, GridConfig, InstrumentId};
use termnet::synthgen::{generate, SynthConfig};

fn main() -> termnet::Result<()> {
    let universe = [InstrumentId::es(1), InstrumentId::vx(1), InstrumentId::SPX];
    let stream = filter_zero_liquidity(&generate(&SynthConfig::for_universe(&universe, 5, 11)));
    let panel = build_panel(&stream, &universe, &GridConfig::default())?;
    println!("panel: {} minutes x {} instruments", panel.n_minutes(), panel.instruments().len());

    let cfg = FeatureConfig::default();
    let (fm, targets) = assemble(&panel, &stream, &cfg, Horizon::H1);
    let valid: Vec<usize> = (0..fm.n_rows()).filter(|&r| fm.mask[0][r]).collect();
    println!("{} hourly rows, {} columns, {} rows with a full ES_1 history", fm.n_rows(), fm.n_cols(), valid.len());

    let (z, _) = standardize(&fm, &valid);
    let show = ["ret_60", "rv_60", "rv_pos60", "weigh_rv_0.9", "ofi_60", "num_trades_60", "Hour_12"];
    let r = *valid.iter().rev().find(|&&r| targets.ret[0][r].is_finite()).expect("a row with a known target");
    for inst in 0..fm.instruments.len() {
                let row = z.row(inst, r);
        let cells: Vec<String> = show.iter().map(|c| format!("{c}={:+.3}", row[fm.column_index(c).expect("column")])).collect();
        println!("{:<5} {}", fm.instruments[inst].to_string(), cells.join(" "));
        println!("      next-hour return {:+.3e}  log RV {:.3}", targets.ret[inst][r], targets.log_rv[inst][r]);
    }
    Ok(())
}
