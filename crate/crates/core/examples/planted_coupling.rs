//! Plant a lagged ES_1 -> VX_1 coupling in a synthetic market and compare
//! the GCN-LSTM, the LSTM without graph pooling, and the zero forecast on
//! VX_1's next-hour return.
//!
//! cargo run --release --example planted_coupling -- [beta] [seed]

use std::time::Instant;

use termnet::features::Quantity;
use termnet::losses::{mse, LossKind};
use termnet::marketdata::{build_panel, filter_zero_liquidity, GridConfig, InstrumentId};
use termnet::model::Architecture;
use termnet::pipeline::{rolling_train, Dataset, RunConfig};
use termnet::synthgen::{generate, SynthConfig};

fn main() -> termnet::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let beta: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(-2.0);
    let seed: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1);
    let (es, vx) = (InstrumentId::es(1), InstrumentId::vx(1));

    let universe = [es, InstrumentId::es(2), vx, InstrumentId::vx(2)];
    let mut synth = SynthConfig::for_universe(&universe, 112, seed).plant_predictability(es, vx, beta);
    synth.factor_corr = -0.5;
    for s in &mut synth.instruments {
        s.minute_sd = 5e-4;
    }
    let t0 = Instant::now();
    let stream = filter_zero_liquidity(&generate(&synth));
    let panel = build_panel(&stream, &universe, &GridConfig::default())?;
    let mut run = RunConfig::desk(Quantity::Return);
    run.loss = LossKind::Mse;
    run.seed = seed;
    run.linear_baselines = false;
    let ds = Dataset::build(&panel, &stream, &run.features, run.horizon, &run.thresholds);
    println!("data ready in {:.1}s", t0.elapsed().as_secs_f64());

    let node = ds.features.instruments.iter().position(|&i| i == vx).expect("VX_1 in universe");
    let y = &ds.targets.ret[node];
    for arch in [Architecture::GcnLstm, Architecture::Lstm] {
        let t = Instant::now();
        let mut cfg = run.clone();
        cfg.model.architecture = arch;
        let out = rolling_train(&cfg, &ds)?;
        let ys: Vec<f64> = out.rows.iter().map(|&r| y[r]).collect();
        let zero = vec![0.0; ys.len()];
        println!(
            "{:<9} blocks {} forecasts {} mse {:.4e} zero {:.4e} ratio {:.3} loss {:?} ({:.1}s)",
            arch.label(),
            out.blocks.len(),
            ys.len(),
            mse(&ys, &out.forecasts[node]),
            mse(&ys, &zero),
            mse(&ys, &out.forecasts[node]) / mse(&ys, &zero),
            out.train_loss,
            t.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
