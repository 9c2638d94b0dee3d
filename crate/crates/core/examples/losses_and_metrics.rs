//! Evaluate every loss on a small forecast set and compute the daily P&L,
//! Sharpe ratio and profit per day of the sign-following strategy.
//!
//! cargo run --release --example losses_and_metrics

use termnet::losses::{daily_pnl, evaluate, ppd, sharpe, LossConfig, LossKind};

fn main() {
    let y = [0.004, -0.002, 0.001, -0.003, 0.002, 0.0015];
    let yhat = [0.002, -0.001, -0.0005, -0.001, 0.001, 0.0];
    let cfg = LossConfig::default();
    for kind in [LossKind::Mse, LossKind::Mae, LossKind::Sr, LossKind::Mixed] {
        println!("{:<6} {:+.6e}", kind.label(), evaluate(kind, &y, &yhat, &cfg));
    }
    let log_var = [-9.0, -8.5, -9.2];
    let log_var_hat = [-8.8, -8.7, -9.2];
    for kind in [LossKind::Qlike, LossKind::Hmse] {
        println!("{:<6} {:+.6e}", kind.label(), evaluate(kind, &log_var, &log_var_hat, &cfg));
    }

    let days = [0, 0, 0, 1, 1, 1];
    let tradable = [true, true, true, true, false, true];
    let pnl = daily_pnl(&days, &y, &yhat, &tradable);
    for d in &pnl {
        println!("day {} pnl {:+.4} over {} periods", d.day, d.pnl, d.n_periods);
    }
    let series: Vec<f64> = pnl.iter().map(|d| d.pnl).collect();
    println!("SR {:?}  PPD {:?}", sharpe(&series), ppd(&series));
}
