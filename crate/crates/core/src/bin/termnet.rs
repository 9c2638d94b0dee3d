//! Command-line front end: synthetic data, features, graphs, training,
//! backtests, ablations and report summaries.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use termnet::features::{assemble, Horizon, Quantity};
use termnet::graphbuild::{export_graph, graph_stats, write_stats_csv, ExportFormat};
use termnet::pipeline::{
    emit_report, fit_window, load_market, plan_blocks, rolling_train, run_ablation, run_on_dataset, sample_rows, Dataset,
    Profile, RunConfig,
};
use termnet::synthgen::{generate_to_dir, SynthConfig};
use termnet::{Error, Result};

#[derive(Parser)]
#[command(name = "termnet", about = "GCN-LSTM forecasting of ES and VX futures term structures")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON file with RunConfig fields (SynthConfig fields for `synth`).
    #[arg(long)]
    config: Option<PathBuf>,
    /// RETURN, VOLATILITY or VOLUME.
    #[arg(long)]
    task: Option<String>,
    /// 1h, 3h, 4h, 6h or 1d.
    #[arg(long)]
    horizon: Option<String>,
    #[arg(long, default_value = "desk")]
    profile: String,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Tick CSV to read.
    #[arg(long, default_value = "out/ticks.csv")]
    ticks: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic tick stream and its ground truth.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 30)]
        days: usize,
    },
    /// Compute the feature matrix and export one CSV per instrument.
    Features(Common),
    /// Build the graph channels on the first training window.
    Graphs(Common),
    /// Walk-forward training; writes forecasts and the final checkpoint.
    Train(Common),
    /// Train, score against baselines and write the report files.
    Backtest(Common),
    /// Run the robustness grid and write its table.
    Ablate(Common),
    /// Print the metrics files found in the output directory.
    Report(Common),
}

fn parse_task(s: &str) -> Result<Quantity> {
    Quantity::parse(s).ok_or_else(|| Error::Config(format!("unknown task {s}")))
}

fn run_config(c: &Common) -> Result<RunConfig> {
    let profile = Profile::parse(&c.profile).ok_or_else(|| Error::Config(format!("unknown profile {}", c.profile)))?;
    let task = c.task.as_deref().map(parse_task).transpose()?.unwrap_or(Quantity::Return);
    let mut run = match &c.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.clone(), source })?;
            serde_json::from_str(&text)?
        }
        None => RunConfig::profile(profile, task),
    };
    if c.task.is_some() {
        run.task = task;
        if !run.loss.compatible_with(task) {
            run.loss = termnet::losses::LossKind::default_for(task);
        }
    }
    if let Some(h) = &c.horizon {
        run.horizon = Horizon::parse(h).ok_or_else(|| Error::Config(format!("unknown horizon {h}")))?;
    }
    if let Some(seed) = c.seed {
        run.seed = seed;
    }
    run.validate()?;
    Ok(run)
}

fn dataset(c: &Common, run: &RunConfig) -> Result<Dataset> {
    let (stream, panel) = load_market(&c.ticks)?;
    Ok(Dataset::build(&panel, &stream, &run.features, run.horizon, &run.thresholds))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io { path: dir.to_path_buf(), source })
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { common, days } => {
            let mut cfg = match &common.config {
                Some(path) => {
                    let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.clone(), source })?;
                    serde_json::from_str(&text)?
                }
                None => SynthConfig::canonical(days, 0),
            };
            if let Some(seed) = common.seed {
                cfg.seed = seed;
            }
            let truth = generate_to_dir(&cfg, &common.out)?;
            println!("{} events ({} trades) written to {}", truth.n_events, truth.n_trades, common.out.display());
        }
        Command::Features(common) => {
            let run = run_config(&common)?;
            let (stream, panel) = load_market(&common.ticks)?;
            let (fm, _) = assemble(&panel, &stream, &run.features, run.horizon);
            let dir = common.out.join("features");
            fm.export(&dir)?;
            println!("{} rows x {} columns for {} instruments in {}", fm.n_rows(), fm.n_cols(), fm.instruments.len(), dir.display());
        }
        Command::Graphs(common) => {
            let run = run_config(&common)?;
            let ds = dataset(&common, &run)?;
            let samples = sample_rows(&ds, run.task, run.model.seq_len);
            let blocks = plan_blocks(&samples, &ds.targets.row_ts, ds.targets.horizon_minutes, run.lookback, run.roll)?;
            let fit = fit_window(&ds, &run, &blocks[0].train_rows);
            let dir = common.out.join("graphs");
            create_dir(&dir)?;
            for g in &fit.graphs {
                let slug = g.config.slug();
                export_graph(g, ExportFormat::Json, dir.join(format!("{slug}.json")))?;
                export_graph(g, ExportFormat::Dot, dir.join(format!("{slug}.dot")))?;
                let s = graph_stats(g);
                println!("{:<40} +{:<3} -{:<3}", s.label, s.positive_edges, s.negative_edges);
            }
            write_stats_csv(&fit.graphs, dir.join("graph_stats.csv"))?;
        }
        Command::Train(common) => {
            let run = run_config(&common)?;
            let ds = dataset(&common, &run)?;
            let out = rolling_train(&run, &ds)?;
            create_dir(&common.out)?;
            out.model.checkpoint().save(common.out.join("model.json"))?;
            let path = common.out.join("forecasts.csv");
            let mut w = csv::Writer::from_path(&path)?;
            let mut header = vec!["row_ts".to_string()];
            header.extend(ds.features.instruments.iter().map(|i| i.to_string()));
            w.write_record(&header)?;
            for (k, &r) in out.rows.iter().enumerate() {
                let mut rec = vec![ds.targets.row_ts[r].to_string()];
                rec.extend(out.forecasts.iter().map(|f| f[k].to_string()));
                w.write_record(&rec)?;
            }
            w.flush().map_err(|source| Error::Io { path: path.clone(), source })?;
            println!("{} blocks, {} forecasts, last-epoch losses {:?}", out.blocks.len(), out.rows.len(), out.train_loss);
        }
        Command::Backtest(common) => {
            let run = run_config(&common)?;
            let ds = dataset(&common, &run)?;
            let report = run_on_dataset(&run, &ds)?;
            for path in emit_report(&report, &common.out)? {
                println!("{}", path.display());
            }
            if report.low_power {
                println!("warning: only {} forecast periods (low power)", report.n_forecasts);
            }
        }
        Command::Ablate(common) => {
            let run = run_config(&common)?;
            let tasks = match &common.task {
                Some(t) => vec![parse_task(t)?],
                None => Quantity::ALL.to_vec(),
            };
            let ds = dataset(&common, &run)?;
            let table = run_ablation(&run, &tasks, &ds)?;
            create_dir(&common.out)?;
            let path = common.out.join("ablation.csv");
            table.write_csv(&path)?;
            println!("{}", path.display());
        }
        Command::Report(common) => {
            let entries = std::fs::read_dir(&common.out).map_err(|source| Error::Io { path: common.out.clone(), source })?;
            let mut files: Vec<PathBuf> = entries
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("metrics_") || n == "ablation.csv"))
                .collect();
            files.sort();
            for path in files {
                println!("# {}", path.display());
                let text = std::fs::read_to_string(&path).map_err(|source| Error::Io { path: path.clone(), source })?;
                let rows: Vec<Vec<&str>> = text.lines().map(|l| l.split(',').collect()).collect();
                let ncols = rows.iter().map(Vec::len).max().unwrap_or(0);
                let widths: Vec<usize> =
                    (0..ncols).map(|c| rows.iter().filter_map(|r| r.get(c)).map(|v| v.len()).max().unwrap_or(0)).collect();
                for r in &rows {
                    let cells: Vec<String> = r.iter().zip(&widths).map(|(v, w)| format!("{v:>w$}")).collect();
                    println!("{}", cells.join("  "));
                }
            }
        }
    }
    Ok(())
}
