//! Integration tests across modules and through the command-line binary.

use std::process::Command;

use termnet::features::{assemble, k_minute_return, FeatureConfig, Horizon, Quantity};
use termnet::marketdata::{
    build_panel, filter_zero_liquidity, read_ticks, write_ticks_to, GridConfig, InstrumentId, PanelSeries, TickEvent,
    TickFormat, NANOS_PER_HOUR,
};
use termnet::model::ModelConfig;
use termnet::pipeline::{emit_report, run_on_dataset, Dataset, RunConfig, LOW_POWER_SAMPLES};
use termnet::synthgen::{generate, SynthConfig};

fn universe() -> Vec<InstrumentId> {
    vec![InstrumentId::es(1), InstrumentId::vx(1), InstrumentId::SPX]
}

fn market(days: usize, seed: u64) -> (Vec<TickEvent>, PanelSeries) {
    let stream = filter_zero_liquidity(&generate(&SynthConfig::for_universe(&universe(), days, seed)));
    let panel = build_panel(&stream, &universe(), &GridConfig::default()).unwrap();
    (stream, panel)
}

fn small_run(task: Quantity) -> RunConfig {
    let mut run = RunConfig::desk(task);
    run.features = FeatureConfig {
        return_windows: vec![5, 60],
        rv_windows: vec![60],
        semivol_windows: vec![60],
        ew_weights: vec![0.9],
        ew_span: 60,
        ofi_windows: vec![60],
        volume_windows: vec![30],
    };
    run.lookback = 80;
    run.roll = 30;
    run.epochs_initial = 2;
    run.epochs_roll = 1;
    run.batch_size = 16;
    run.model = ModelConfig { lstm_units: 4, dense1_units: 4, dense2_units: 3, gcn_out_units: 2, seq_len: 4, ..ModelConfig::default() };
    run
}

fn header(path: &std::path::Path) -> Vec<String> {
    let text = std::fs::read_to_string(path).unwrap();
    text.lines().next().unwrap().split(',').map(str::to_string).collect()
}

#[test]
fn tick_csv_round_trips() {
    let stream = generate(&SynthConfig::for_universe(&universe(), 1, 3));
    let mut buf = Vec::new();
    write_ticks_to(&mut buf, &stream).unwrap();
    let load = read_ticks(buf.as_slice(), &TickFormat::default()).unwrap();
    assert_eq!(load.malformed_rows, 0);
    assert!(load.zero_liquidity_rows > 0);
    assert_eq!(load.events, stream);
}

#[test]
fn six_hour_target_is_the_360_minute_return() {
    let (stream, panel) = market(4, 5);
    let (fm, targets) = assemble(&panel, &stream, &FeatureConfig::default(), Horizon::H6);
    let mut checked = 0;
    for (r, &t) in fm.row_minute.iter().enumerate() {
        for (i, &inst) in fm.instruments.iter().enumerate() {
            let want = k_minute_return(&panel, inst, t + 360, 360);
            let got = targets.ret[i][r];
            match want {
                Some(w) => {
                    assert!((got - w).abs() < 1e-15, "row {r} {inst}: {got} vs {w}");
                    checked += 1;
                }
                None => assert!(got.is_nan()),
            }
        }
    }
    assert!(checked > 20);
    for w in fm.row_ts.windows(2) {
        assert_eq!((w[1] - w[0]) % (6 * NANOS_PER_HOUR), 0);
    }
}

#[test]
fn daily_grid_falls_on_local_midnight() {
    let (stream, panel) = market(5, 6);
    let (fm, _) = assemble(&panel, &stream, &FeatureConfig::default(), Horizon::Day);
    assert!(fm.n_rows() >= 4);
    let offset = fm.utc_offset_hours as i64 * NANOS_PER_HOUR;
    assert!(fm.row_ts.iter().all(|ts| (ts + offset).rem_euclid(24 * NANOS_PER_HOUR) == 0));
}

#[test]
fn report_files_have_the_documented_schema() {
    let (stream, panel) = market(8, 7);
    let dir = tempfile::tempdir().unwrap();
    for task in [Quantity::Return, Quantity::Volatility] {
        let run = small_run(task);
        let ds = Dataset::build(&panel, &stream, &run.features, run.horizon, &run.thresholds);
        let report = run_on_dataset(&run, &ds).unwrap();
        assert_eq!(report.low_power, report.n_forecasts < LOW_POWER_SAMPLES);
        let files = emit_report(&report, dir.path()).unwrap();
        let metrics = files.iter().find(|p| p.file_name().unwrap().to_string_lossy().starts_with("metrics_")).unwrap();
        let cols = header(metrics);
        match task {
            Quantity::Return => {
                for c in ["product", "SR", "PPD", "n_tradable"] {
                    assert!(cols.iter().any(|h| h == c), "missing {c} in {cols:?}");
                }
                assert!(files.iter().any(|p| p.file_name().unwrap().to_string_lossy().starts_with("pnl_ES_1_")));
            }
            _ => {
                for c in ["product", "QLIKE", "HMSE"] {
                    assert!(cols.iter().any(|h| h == c), "missing {c} in {cols:?}");
                }
            }
        }
        let models: Vec<&str> = report.models.iter().map(String::as_str).collect();
        assert_eq!(models, ["GCN-LSTM", "Naive", "OLS", "LASSO", "PCR"]);
    }
}

#[test]
fn command_line_synth_then_backtest() {
    let bin = env!("CARGO_BIN_EXE_termnet");
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();

    let synth = SynthConfig::for_universe(&universe(), 8, 12);
    std::fs::write(out.join("synth.json"), serde_json::to_string(&synth).unwrap()).unwrap();
    let status = Command::new(bin)
        .args(["synth", "--config"])
        .arg(out.join("synth.json"))
        .arg("--out")
        .arg(out)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(out.join("ticks.csv").exists() && out.join("ground_truth.json").exists());

    std::fs::write(out.join("run.json"), serde_json::to_string(&small_run(Quantity::Return)).unwrap()).unwrap();
    let output = Command::new(bin)
        .args(["backtest", "--seed", "3", "--config"])
        .arg(out.join("run.json"))
        .arg("--ticks")
        .arg(out.join("ticks.csv"))
        .arg("--out")
        .arg(out.join("report"))
        .output()
        .unwrap();
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("metrics_return_"), "{stdout}");

    let output = Command::new(bin).args(["report", "--out"]).arg(out.join("report")).output().unwrap();
    assert!(output.status.success());
    assert!(String::from_utf8_lossy(&output.stdout).contains("GCN-LSTM"));

    let output = Command::new(bin).args(["backtest", "--task", "PRICE", "--ticks"]).arg(out.join("ticks.csv")).output().unwrap();
    assert!(!output.status.success());
}
