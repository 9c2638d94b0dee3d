//! Walk-forward experiments: tradability filtering, sample selection,
//! rolling GCN-LSTM training with frozen graphs and scalers, linear
//! baselines, metrics, report files and the ablation grid.

use std::collections::BTreeMap;
use std::ops::Range;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{l1_penalty, Adam, Tape, Tensor};
use crate::baselines::{lasso_fit, naive_forecast, ols_fit, pcr_fit, LassoConfig, LinearModel};
use crate::error::{io_err, Error, Result};
use crate::features::{assemble, local_day, FeatureConfig, FeatureMatrix, Horizon, Quantity, Standardizer, TargetSet};
use crate::graphbuild::{build_graph, channel_configs, write_stats_csv, ChannelKind, Normalization, SignedGraph};
use crate::losses::{daily_pnl, hmse, loss_on_tape, mae, mse, ppd, qlike, sharpe, LossConfig, LossKind};
use crate::marketdata::{spread_bp, InstrumentClass, InstrumentId, PanelSeries, TickEvent, NANOS_PER_MINUTE};
use crate::model::{Architecture, GcnLstm, ModelConfig, NodeBatch};

/// Forecast periods below this count flag a report as low-power.
pub const LOW_POWER_SAMPLES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Profile {
    Paper,
    Desk,
}

impl Profile {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "paper" => Some(Profile::Paper),
            "desk" => Some(Profile::Desk),
            _ => None,
        }
    }
}

/// Liquidity filter: spread strictly below the class threshold and both
/// quoted sizes strictly above `min_size`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub es_spread_bp: f64,
    pub vx_spread_bp: f64,
    pub min_size: u32,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { es_spread_bp: 15.0, vx_spread_bp: 25.0, min_size: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub task: Quantity,
    pub horizon: Horizon,
    /// Training window length, in samples.
    pub lookback: usize,
    /// Forecast block length, in samples.
    pub roll: usize,
    pub epochs_initial: usize,
    pub epochs_roll: usize,
    pub seed: u64,
    pub loss: LossKind,
    pub loss_config: LossConfig,
    pub channels: Vec<ChannelKind>,
    pub knn_k: usize,
    pub normalization: Normalization,
    pub thresholds: Thresholds,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub l1_lambda: f64,
    /// Recompute graphs, feature scalers and target scales at every roll
    /// instead of freezing them on the first training window.
    pub refit_each_roll: bool,
    /// Also fit OLS, LASSO and PCR.
    pub linear_baselines: bool,
    pub model: ModelConfig,
    pub features: FeatureConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::desk(Quantity::Return)
    }
}

impl RunConfig {
    /// The published setup: 20000/1500 samples, 120/25 epochs, 64/32/16/16 units.
    pub fn paper(task: Quantity) -> Self {
        Self {
            task,
            horizon: Horizon::H1,
            lookback: 20_000,
            roll: 1_500,
            epochs_initial: 120,
            epochs_roll: 25,
            seed: 0,
            loss: LossKind::default_for(task),
            loss_config: LossConfig::default(),
            channels: ChannelKind::ALL.to_vec(),
            knn_k: 3,
            normalization: Normalization::Row,
            thresholds: Thresholds::default(),
            batch_size: 128,
            learning_rate: 5e-4,
            l1_lambda: 1e-5,
            refit_each_roll: false,
            linear_baselines: true,
            model: ModelConfig::default(),
            features: FeatureConfig::default(),
        }
    }

    /// Minutes-scale setup: 2000/250 samples, a smaller network, fewer
    /// epochs, and a stronger L1 penalty to match the tenfold smaller window.
    pub fn desk(task: Quantity) -> Self {
        Self {
            lookback: 2_000,
            roll: 250,
            epochs_initial: 10,
            epochs_roll: 3,
            batch_size: 64,
            learning_rate: 1e-3,
            l1_lambda: 1e-3,
            model: ModelConfig { lstm_units: 16, dense1_units: 16, dense2_units: 8, gcn_out_units: 8, ..ModelConfig::default() },
            ..Self::paper(task)
        }
    }

    pub fn profile(profile: Profile, task: Quantity) -> Self {
        match profile {
            Profile::Paper => Self::paper(task),
            Profile::Desk => Self::desk(task),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lookback > self.roll && self.roll > 0) {
            return bad(format!("need lookback > roll > 0, got {} and {}", self.lookback, self.roll));
        }
        let t = &self.thresholds;
        if !(t.es_spread_bp > 0.0 && t.vx_spread_bp > 0.0) {
            return bad("spread thresholds must be positive".into());
        }
        if !self.loss.compatible_with(self.task) {
            return bad(format!("{} loss does not apply to {}", self.loss.label(), self.task.label()));
        }
        if self.batch_size == 0 || !(self.learning_rate > 0.0) {
            return bad("batch size and learning rate must be positive".into());
        }
        if self.model.architecture == Architecture::GcnLstm && self.channels.is_empty() {
            return bad("GCN-LSTM needs at least one graph channel".into());
        }
        self.model.validate()?;
        self.features.validate()
    }

    /// The graph channels this run uses, pair-major.
    pub fn channel_configs(&self) -> Vec<crate::graphbuild::GraphConfig> {
        channel_configs(self.task, &self.channels, self.knn_k, self.normalization)
    }
}

/// Per-row tradability: `train[r]` when ES_1 or VX_1 passes, `eval[node][r]`
/// when that node itself passes. Index nodes never pass.
#[derive(Debug, Clone, PartialEq)]
pub struct TradabilityMask {
    pub train: Vec<bool>,
    pub eval: Vec<Vec<bool>>,
}

/// Whether `instrument` is tradable on the book standing at minute `t`.
pub fn passes_filter(panel: &PanelSeries, node: usize, t: usize, th: &Thresholds) -> bool {
    let s = &panel.series()[node];
    let limit = match s.instrument.class() {
        InstrumentClass::Es => th.es_spread_bp,
        InstrumentClass::Vx => th.vx_spread_bp,
        InstrumentClass::IndexSpx | InstrumentClass::IndexVix => return false,
    };
    if !s.valid[t] || s.bid_sz_close[t] <= th.min_size || s.ask_sz_close[t] <= th.min_size {
        return false;
    }
    spread_bp(s.bid_close[t], s.ask_close[t]).is_ok_and(|bp| bp < limit)
}

pub fn tradability_mask(panel: &PanelSeries, rows: &[usize], th: &Thresholds) -> TradabilityMask {
    let eval: Vec<Vec<bool>> =
        (0..panel.instruments().len()).map(|i| rows.iter().map(|&t| passes_filter(panel, i, t, th)).collect()).collect();
    let anchors: Vec<usize> =
        [InstrumentId::es(1), InstrumentId::vx(1)].iter().filter_map(|id| panel.index_of(*id)).collect();
    let train = (0..rows.len()).map(|r| anchors.iter().any(|&i| eval[i][r])).collect();
    TradabilityMask { train, eval }
}

/// Features, targets and masks on one horizon's grid.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub features: FeatureMatrix,
    pub targets: TargetSet,
    pub tradable: TradabilityMask,
    pub horizon: Horizon,
}

impl Dataset {
    pub fn build(panel: &PanelSeries, stream: &[TickEvent], features: &FeatureConfig, horizon: Horizon, th: &Thresholds) -> Self {
        let (fm, targets) = assemble(panel, stream, features, horizon);
        let tradable = tradability_mask(panel, &fm.row_minute, th);
        Self { features: fm, targets, tradable, horizon }
    }

    pub fn n_nodes(&self) -> usize {
        self.features.instruments.len()
    }

    /// SHA-256 over row times, feature values and targets.
    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for ts in &self.features.row_ts {
            h.update(ts.to_le_bytes());
        }
        let mut put = |v: &[f64]| v.iter().for_each(|x| h.update(x.to_bits().to_le_bytes()));
        self.features.values.iter().for_each(|v| put(v));
        for q in Quantity::ALL {
            self.targets.quantity(q).iter().for_each(|v| put(v));
        }
        h.finalize().into()
    }
}

/// Instruments of the canonical universe present in `stream`, in canonical order.
pub fn universe_of(stream: &[TickEvent]) -> Vec<InstrumentId> {
    let seen: std::collections::BTreeSet<InstrumentId> = stream.iter().map(|e| e.instrument).collect();
    crate::marketdata::canonical_universe().into_iter().filter(|i| seen.contains(i)).collect()
}

/// Load a tick CSV, drop zero-liquidity rows, and build the minute panel
/// over the instruments it contains.
pub fn load_market(path: impl AsRef<Path>) -> Result<(Vec<TickEvent>, PanelSeries)> {
    let load = crate::marketdata::load_ticks(path, &crate::marketdata::TickFormat::default())?;
    let stream = crate::marketdata::filter_zero_liquidity(&load.events);
    let universe = universe_of(&stream);
    let panel = crate::marketdata::build_panel(&stream, &universe, &crate::marketdata::GridConfig::default())?;
    Ok((stream, panel))
}

/// Grid rows usable as samples: a complete valid feature window for every
/// node, at least one finite target, and (for returns) a train-eligible hour.
pub fn sample_rows(ds: &Dataset, task: Quantity, seq_len: usize) -> Vec<usize> {
    let y = ds.targets.quantity(task);
    (seq_len.saturating_sub(1)..ds.features.n_rows())
        .filter(|&r| {
            (task != Quantity::Return || ds.tradable.train[r])
                && (0..ds.n_nodes()).all(|i| (r + 1 - seq_len..=r).all(|w| ds.features.mask[i][w]))
                && y.iter().any(|yi| yi[r].is_finite())
        })
        .collect()
}

/// One walk-forward step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    /// Training rows after the embargo.
    pub train_rows: Vec<usize>,
    /// Forecast rows.
    pub forecast_rows: Vec<usize>,
}

/// Split `samples` into an initial `lookback` window and forecast blocks of
/// `roll`, the last possibly partial. Training rows whose target window ends
/// after the block's first forecast time are dropped.
pub fn plan_blocks(samples: &[usize], row_ts: &[i64], horizon_minutes: usize, lookback: usize, roll: usize) -> Result<Vec<Block>> {
    if samples.len() < lookback + roll {
        return Err(Error::InsufficientData { needed: lookback + roll, available: samples.len() });
    }
    let span = horizon_minutes as i64 * NANOS_PER_MINUTE;
    let mut blocks = Vec::new();
    let mut start = lookback;
    while start < samples.len() {
        let end = (start + roll).min(samples.len());
        let first_ts = row_ts[samples[start]];
        let train_rows = samples[start - lookback..start].iter().copied().filter(|&r| row_ts[r] + span <= first_ts).collect();
        blocks.push(Block { train_rows, forecast_rows: samples[start..end].to_vec() });
        start = end;
    }
    Ok(blocks)
}

/// Affine target scaling `(y - shift) / scale` per node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetScale {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl TargetScale {
    /// Returns and volume changes are divided by their sd; log variances are
    /// centered.
    pub fn fit(task: Quantity, y: &[Vec<f64>], rows: &[usize]) -> Self {
        let mut shift = Vec::with_capacity(y.len());
        let mut scale = Vec::with_capacity(y.len());
        for yi in y {
            let v: Vec<f64> = rows.iter().map(|&r| yi[r]).filter(|x| x.is_finite()).collect();
            let n = v.len().max(1) as f64;
            let m = v.iter().sum::<f64>() / n;
            let sd = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt();
            match task {
                Quantity::Volatility => {
                    shift.push(m);
                    scale.push(1.0);
                }
                Quantity::Return | Quantity::Volume => {
                    shift.push(0.0);
                    scale.push(if sd > 1e-12 { sd } else { 1.0 });
                }
            }
        }
        Self { shift, scale }
    }

    pub fn forward(&self, node: usize, y: f64) -> f64 {
        (y - self.shift[node]) / self.scale[node]
    }

    pub fn inverse(&self, node: usize, y: f64) -> f64 {
        y * self.scale[node] + self.shift[node]
    }
}

/// Everything fitted on a training window that forecasting depends on.
#[derive(Debug, Clone)]
pub struct WindowFit {
    pub standardizer: Standardizer,
    pub features: FeatureMatrix,
    pub graphs: Vec<SignedGraph>,
    pub scale: TargetScale,
}

/// Fit scalers and graphs on the rows of `train` (and their input windows).
pub fn fit_window(ds: &Dataset, run: &RunConfig, train: &[usize]) -> WindowFit {
    let seq = run.model.seq_len;
    let (lo, hi) = (train[0] + 1 - seq, *train.last().expect("non-empty training window"));
    let rows: Vec<usize> = (lo..=hi).collect();
    let standardizer = Standardizer::fit(&ds.features, &rows);
    let features = standardizer.apply(&ds.features);
    let graph_rows = train[0]..hi + 1;
    let graphs = run.channel_configs().iter().map(|c| build_graph(&ds.targets, graph_rows.clone(), c)).collect();
    let scale = TargetScale::fit(run.task, ds.targets.quantity(run.task), train);
    WindowFit { standardizer, features, graphs, scale }
}

/// Input windows for `rows`, laid out as [`NodeBatch`] expects.
pub fn make_batch(x: &FeatureMatrix, rows: &[usize], seq_len: usize) -> NodeBatch {
    let d = x.n_cols();
    let b = rows.len();
    let inputs = (0..x.instruments.len())
        .map(|i| {
            let mut data = Vec::with_capacity(seq_len * b * d);
            for s in 0..seq_len {
                for &r in rows {
                    data.extend_from_slice(x.row(i, r + 1 + s - seq_len));
                }
            }
            Tensor::matrix(seq_len * b, d, data)
        })
        .collect();
    NodeBatch { batch: b, seq_len, inputs }
}

/// One optimizer step on a mini-batch; returns the data loss.
fn train_step(model: &mut GcnLstm, adam: &mut Adam, fit: &WindowFit, y: &[Vec<f64>], rows: &[usize], run: &RunConfig) -> Option<f64> {
    let grads = {
        let tape = Tape::new();
        let p = model.leaves(&tape);
        let batch = make_batch(&fit.features, rows, run.model.seq_len);
        let preds = model.forward(&p, &batch);
        let mut terms = Vec::new();
        for (node, pred) in preds.iter().enumerate() {
            let idx: Vec<usize> = (0..rows.len()).filter(|&k| y[node][rows[k]].is_finite()).collect();
            if idx.is_empty() {
                continue;
            }
            let yt = Tensor::matrix(idx.len(), 1, idx.iter().map(|&k| fit.scale.forward(node, y[node][rows[k]])).collect());
            let pv = if idx.len() == rows.len() { *pred } else { pred.gather_rows(&idx) };
            terms.push(loss_on_tape(run.loss, pv, &yt, &run.loss_config));
        }
        let first = *terms.first()?;
        let data = terms[1..].iter().fold(first, |a, t| a.add(*t)).scale(1.0 / terms.len() as f64);
        let value = data.item();
        let loss = match l1_penalty(&model.penalized(&p), run.l1_lambda) {
            Some(l1) if run.l1_lambda > 0.0 => data.add(l1),
            _ => data,
        };
        let g = tape.backward(loss);
        (p.iter().map(|v| g.get(*v)).collect::<Vec<_>>(), value)
    };
    adam.step(&mut model.params.tensors, &grads.0);
    Some(grads.1)
}

/// Unscaled forecasts `[node][k]` for `rows`.
pub fn forecast(model: &GcnLstm, fit: &WindowFit, rows: &[usize], batch_size: usize) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::with_capacity(rows.len()); model.n_nodes];
    for chunk in rows.chunks(batch_size.max(1)) {
        let batch = make_batch(&fit.features, chunk, model.config.seq_len);
        for (node, p) in model.predict(&batch).into_iter().enumerate() {
            out[node].extend(p.into_iter().map(|v| fit.scale.inverse(node, v)));
        }
    }
    out
}

/// Result of a walk-forward run.
#[derive(Debug, Clone)]
pub struct RollingOutput {
    pub blocks: Vec<Block>,
    /// Forecast rows, in block order.
    pub rows: Vec<usize>,
    /// `forecasts[node][k]` for `rows[k]`.
    pub forecasts: Vec<Vec<f64>>,
    /// Graphs of the first training window.
    pub graphs: Vec<SignedGraph>,
    pub model: GcnLstm,
    /// Last-epoch training loss per block.
    pub train_loss: Vec<Option<f64>>,
}

/// Walk-forward training: fit on the first window for `epochs_initial`,
/// forecast a block, roll, warm-start for `epochs_roll`, repeat.
pub fn rolling_train(run: &RunConfig, ds: &Dataset) -> Result<RollingOutput> {
    run.validate()?;
    let samples = sample_rows(ds, run.task, run.model.seq_len);
    let blocks = plan_blocks(&samples, &ds.targets.row_ts, ds.targets.horizon_minutes, run.lookback, run.roll)?;
    if blocks[0].train_rows.is_empty() {
        return Err(Error::InsufficientData { needed: run.lookback + run.roll, available: 0 });
    }
    let mut fit = fit_window(ds, run, &blocks[0].train_rows);
    let graphs = fit.graphs.clone();
    let mut model = GcnLstm::new(run.model.clone(), ds.n_nodes(), ds.features.n_cols(), &fit.graphs, run.seed);
    let mut adam = Adam::new(run.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(run.seed ^ 0x5EED_0F_B10C);
    let y = ds.targets.quantity(run.task);

    let mut rows = Vec::new();
    let mut forecasts = vec![Vec::new(); ds.n_nodes()];
    let mut train_loss = Vec::new();
    for (k, block) in blocks.iter().enumerate() {
        if k > 0 && run.refit_each_roll && !block.train_rows.is_empty() {
            fit = fit_window(ds, run, &block.train_rows);
            let fresh = GcnLstm::new(run.model.clone(), ds.n_nodes(), ds.features.n_cols(), &fit.graphs, run.seed);
            model.channels = fresh.channels;
        }
        let epochs = if k == 0 { run.epochs_initial } else { run.epochs_roll };
        train_loss.push(train_epochs(&mut model, &mut adam, &fit, run, y, &block.train_rows, epochs, &mut rng));
        let f = forecast(&model, &fit, &block.forecast_rows, run.batch_size);
        for (node, v) in f.into_iter().enumerate() {
            forecasts[node].extend(v);
        }
        rows.extend_from_slice(&block.forecast_rows);
    }
    Ok(RollingOutput { blocks, rows, forecasts, graphs, model, train_loss })
}

/// Train for `epochs` passes over `rows` in shuffled mini-batches against
/// raw targets `y[node][row]`; returns the mean data loss of the last epoch.
#[allow(clippy::too_many_arguments)]
pub fn train_epochs(
    model: &mut GcnLstm,
    adam: &mut Adam,
    fit: &WindowFit,
    run: &RunConfig,
    y: &[Vec<f64>],
    rows: &[usize],
    epochs: usize,
    rng: &mut ChaCha8Rng,
) -> Option<f64> {
    let mut last = None;
    for _ in 0..epochs {
        let mut order = rows.to_vec();
        order.shuffle(rng);
        let (mut sum, mut n) = (0.0, 0usize);
        for chunk in order.chunks(run.batch_size) {
            if let Some(v) = train_step(model, adam, fit, y, chunk, run) {
                sum += v;
                n += 1;
            }
        }
        last = (n > 0).then(|| sum / n as f64);
    }
    last
}

/// Naive and (optionally) linear baseline forecasts `[node][k]` on the same
/// blocks as `out`. Linear models regress each node's target on its own
/// standardized features at the forecast row, refit every block.
pub fn baseline_forecasts(run: &RunConfig, ds: &Dataset, out: &RollingOutput) -> Vec<(String, Vec<Vec<f64>>)> {
    let n = ds.n_nodes();
    let y = ds.targets.quantity(run.task);
    let naive = (0..n)
        .map(|i| {
            out.rows
                .iter()
                .map(|&r| match run.task {
                    // Point forecast for error metrics; the naive trading signal is long.
                    Quantity::Return => 0.0,
                    _ => naive_forecast(run.task, ds.targets.last_log_rv[i][r]).unwrap_or(f64::NAN),
                })
                .collect()
        })
        .collect();
    let mut result = vec![("Naive".to_string(), naive)];
    if !run.linear_baselines {
        return result;
    }

    let fitters: [(&str, fn(&DMatrix<f64>, &DVector<f64>) -> LinearModel); 3] = [
        ("OLS", ols_fit),
        ("LASSO", |x, y| {
            // Stop once coordinate moves are small against the target's scale.
            let sd = (y.variance() * y.len() as f64 / (y.len() as f64 - 1.0).max(1.0)).sqrt();
            lasso_fit(x, y, &LassoConfig { tol: 1e-4 * sd.max(f64::MIN_POSITIVE), max_sweeps: 1_000, ..LassoConfig::default() })
        }),
        ("PCR", |x, y| pcr_fit(x, y, 0.9)),
    ];
    let mut preds: Vec<Vec<Vec<f64>>> = vec![vec![Vec::with_capacity(out.rows.len()); n]; fitters.len()];
    let mut fit = fit_window(ds, run, &out.blocks[0].train_rows);
    for (k, block) in out.blocks.iter().enumerate() {
        if k > 0 && run.refit_each_roll && !block.train_rows.is_empty() {
            fit = fit_window(ds, run, &block.train_rows);
        }
        let x = &fit.features;
        for node in 0..n {
            let rows: Vec<usize> = block.train_rows.iter().copied().filter(|&r| y[node][r].is_finite()).collect();
            let design = |rs: &[usize]| DMatrix::from_fn(rs.len(), x.n_cols(), |i, c| x.row(node, rs[i])[c]);
            for (m, (_, fitter)) in fitters.iter().enumerate() {
                if rows.len() < 2 {
                    preds[m][node].extend(std::iter::repeat(f64::NAN).take(block.forecast_rows.len()));
                    continue;
                }
                let model = fitter(&design(&rows), &DVector::from_iterator(rows.len(), rows.iter().map(|&r| y[node][r])));
                preds[m][node].extend(block.forecast_rows.iter().map(|&r| model.predict_row(x.row(node, r))));
            }
        }
    }
    result.extend(fitters.iter().zip(preds).map(|((name, _), p)| (name.to_string(), p)));
    result
}

/// One metric of one model on one product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub model: String,
    pub product: String,
    pub metric: String,
    pub value: Option<f64>,
    /// Periods the metric is computed over.
    pub n: usize,
}

/// Cumulative daily P&L of one model on one product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PnlSeries {
    pub model: String,
    pub product: String,
    pub days: Vec<i64>,
    pub cumulative: Vec<f64>,
}

/// Metric names reported per task, in column order.
pub fn metric_names(task: Quantity) -> &'static [&'static str] {
    match task {
        Quantity::Return => &["SR", "PPD", "MSE"],
        Quantity::Volatility => &["QLIKE", "HMSE", "MSE", "MAE"],
        Quantity::Volume => &["MSE", "MAE"],
    }
}

/// Metrics of forecasts `yhat` (aligned with `rows`) for `node`. Returns are
/// scored only on that product's tradable periods; `long_only` replaces the
/// trading signal with a constant long position.
pub fn score_product(
    task: Quantity,
    ds: &Dataset,
    node: usize,
    rows: &[usize],
    yhat: &[f64],
    long_only: bool,
) -> (Vec<(String, Option<f64>, usize)>, Option<(Vec<i64>, Vec<f64>)>) {
    let y = &ds.targets.quantity(task)[node];
    let keep: Vec<usize> = (0..rows.len())
        .filter(|&k| y[rows[k]].is_finite() && yhat[k].is_finite())
        .filter(|&k| task != Quantity::Return || ds.tradable.eval[node][rows[k]])
        .collect();
    let ys: Vec<f64> = keep.iter().map(|&k| y[rows[k]]).collect();
    let ps: Vec<f64> = keep.iter().map(|&k| yhat[k]).collect();
    let n = keep.len();
    let some = |f: &dyn Fn(&[f64], &[f64]) -> f64| (n > 0).then(|| f(&ys, &ps));
    let mut out = Vec::new();
    let mut pnl = None;
    match task {
        Quantity::Return => {
            let days: Vec<i64> = rows.iter().map(|&r| local_day(ds.targets.row_ts[r], ds.features.utc_offset_hours)).collect();
            let ret: Vec<f64> = rows.iter().map(|&r| y[r]).collect();
            let signal: Vec<f64> = if long_only { vec![1.0; rows.len()] } else { yhat.to_vec() };
            let trad: Vec<bool> = rows.iter().map(|&r| ds.tradable.eval[node][r]).collect();
            let daily = daily_pnl(&days, &ret, &signal, &trad);
            let values: Vec<f64> = daily.iter().map(|d| d.pnl).collect();
            let active = n > 0;
            out.push(("SR".into(), if active { sharpe(&values) } else { None }, n));
            out.push(("PPD".into(), if active { ppd(&values) } else { None }, n));
            out.push(("MSE".into(), some(&mse), n));
            let mut acc = 0.0;
            let cumulative = values.iter().map(|v| {
                acc += v;
                acc
            });
            pnl = Some((daily.iter().map(|d| d.day).collect(), cumulative.collect()));
        }
        Quantity::Volatility => {
            out.push(("QLIKE".into(), some(&|y, p| qlike(y, p).0), n));
            out.push(("HMSE".into(), some(&|y, p| hmse(y, p).0), n));
            out.push(("MSE".into(), some(&mse), n));
            out.push(("MAE".into(), some(&mae), n));
        }
        Quantity::Volume => {
            out.push(("MSE".into(), some(&mse), n));
            out.push(("MAE".into(), some(&mae), n));
        }
    }
    (out, pnl)
}

/// Hex SHA-256 of the run configuration, the data and the graphs.
pub fn fingerprint(run: &RunConfig, ds: &Dataset, graphs: &[SignedGraph]) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(run).expect("config serializes"));
    h.update(ds.digest());
    for g in graphs {
        h.update(serde_json::to_vec(g).expect("graph serializes"));
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestReport {
    pub config: RunConfig,
    pub fingerprint: String,
    /// Fewer than [`LOW_POWER_SAMPLES`] forecast periods.
    pub low_power: bool,
    pub n_blocks: usize,
    pub n_forecasts: usize,
    pub products: Vec<InstrumentId>,
    pub models: Vec<String>,
    pub metrics: Vec<MetricRecord>,
    pub pnl: Vec<PnlSeries>,
    pub graphs: Vec<SignedGraph>,
}

impl BacktestReport {
    pub fn metric(&self, model: &str, product: InstrumentId, metric: &str) -> Option<&MetricRecord> {
        let p = product.to_string();
        self.metrics.iter().find(|m| m.model == model && m.product == p && m.metric == metric)
    }
}

/// Score the GCN-LSTM and baseline forecasts into a report.
pub fn build_report(run: &RunConfig, ds: &Dataset, out: &RollingOutput, baselines: &[(String, Vec<Vec<f64>>)]) -> BacktestReport {
    let mut models = vec![(run.model.architecture.label().to_string(), &out.forecasts)];
    models.extend(baselines.iter().map(|(n, f)| (n.clone(), f)));
    let mut metrics = Vec::new();
    let mut pnl = Vec::new();
    for (node, inst) in ds.features.instruments.iter().enumerate() {
        if run.task == Quantity::Volume && !inst.has_volume() {
            continue;
        }
        for (name, f) in &models {
            let long_only = run.task == Quantity::Return && name == "Naive";
            let (scores, p) = score_product(run.task, ds, node, &out.rows, &f[node], long_only);
            metrics.extend(scores.into_iter().map(|(metric, value, n)| MetricRecord {
                model: name.clone(),
                product: inst.to_string(),
                metric,
                value,
                n,
            }));
            if let (Some((days, cumulative)), false) = (p, inst.is_index()) {
                pnl.push(PnlSeries { model: name.clone(), product: inst.to_string(), days, cumulative });
            }
        }
    }
    BacktestReport {
        config: run.clone(),
        fingerprint: fingerprint(run, ds, &out.graphs),
        low_power: out.rows.len() < LOW_POWER_SAMPLES,
        n_blocks: out.blocks.len(),
        n_forecasts: out.rows.len(),
        products: ds.features.instruments.clone(),
        models: models.into_iter().map(|(n, _)| n).collect(),
        metrics,
        pnl,
        graphs: out.graphs.clone(),
    }
}

/// Rebuild targets at `run.horizon`, train walk-forward, score everything.
pub fn run_horizon(run: &RunConfig, panel: &PanelSeries, stream: &[TickEvent]) -> Result<BacktestReport> {
    run.validate()?;
    let ds = Dataset::build(panel, stream, &run.features, run.horizon, &run.thresholds);
    run_on_dataset(run, &ds)
}

pub fn run_on_dataset(run: &RunConfig, ds: &Dataset) -> Result<BacktestReport> {
    let out = rolling_train(run, ds)?;
    let baselines = baseline_forecasts(run, ds, &out);
    Ok(build_report(run, ds, &out, &baselines))
}

fn fmt_value(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

fn day_label(day: i64) -> String {
    chrono::DateTime::from_timestamp(day * 86_400, 0).map_or_else(|| day.to_string(), |d| d.date_naive().to_string())
}

/// Write metrics, cumulative P&L per product, config and graph statistics
/// into `dir`; every file name carries the first 12 fingerprint digits.
pub fn emit_report(report: &BacktestReport, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let fp = &report.fingerprint[..12.min(report.fingerprint.len())];
    let task = report.config.task;
    let mut written = Vec::new();

    let path = dir.join(format!("metrics_{}_{fp}.csv", task.label().to_lowercase()));
    let mut w = csv::Writer::from_path(&path)?;
    let names = metric_names(task);
    let mut header = vec!["model".to_string(), "product".to_string()];
    header.extend(names.iter().map(|s| s.to_string()));
    header.push(if task == Quantity::Return { "n_tradable" } else { "n" }.to_string());
    w.write_record(&header)?;
    let mut keys: Vec<(String, String)> = Vec::new();
    for m in &report.metrics {
        let k = (m.model.clone(), m.product.clone());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    for (model, product) in &keys {
        let mut rec = vec![model.clone(), product.clone()];
        let mut n = 0;
        for name in names {
            let m = report.metrics.iter().find(|m| &m.model == model && &m.product == product && m.metric == *name);
            n = n.max(m.map_or(0, |m| m.n));
            rec.push(fmt_value(m.and_then(|m| m.value)));
        }
        rec.push(n.to_string());
        w.write_record(&rec)?;
    }
    w.flush().map_err(io_err(&path))?;
    written.push(path);

    let mut products: Vec<&str> = Vec::new();
    for p in &report.pnl {
        if !products.contains(&p.product.as_str()) {
            products.push(&p.product);
        }
    }
    for product in products {
        let series: Vec<&PnlSeries> = report.pnl.iter().filter(|p| p.product == product).collect();
        let path = dir.join(format!("pnl_{product}_{fp}.csv"));
        let mut w = csv::Writer::from_path(&path)?;
        let mut header = vec!["day".to_string()];
        header.extend(series.iter().map(|s| s.model.clone()));
        w.write_record(&header)?;
        for (k, &day) in series[0].days.iter().enumerate() {
            let mut rec = vec![day_label(day)];
            rec.extend(series.iter().map(|s| s.cumulative[k].to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(io_err(&path))?;
        written.push(path);
    }

    let path = dir.join(format!("config_{fp}.json"));
    let meta = serde_json::json!({
        "fingerprint": report.fingerprint,
        "low_power": report.low_power,
        "n_blocks": report.n_blocks,
        "n_forecasts": report.n_forecasts,
        "run": report.config,
    });
    std::fs::write(&path, serde_json::to_string_pretty(&meta)?).map_err(io_err(&path))?;
    written.push(path);

    let path = dir.join(format!("graph_stats_{fp}.csv"));
    write_stats_csv(&report.graphs, &path)?;
    written.push(path);
    Ok(written)
}

/// One row of the robustness grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AblationVariant {
    /// Only the three graphs of one construction kind.
    Graphs(ChannelKind),
    Loss(LossKind),
    /// One LSTM/dense module shared by every node.
    NonParallel,
    Full,
}

pub const ABLATION_ROWS: [AblationVariant; 9] = [
    AblationVariant::Graphs(ChannelKind::ContemporaneousWeighted),
    AblationVariant::Graphs(ChannelKind::ContemporaneousUnweighted),
    AblationVariant::Graphs(ChannelKind::LaggedWeighted),
    AblationVariant::Graphs(ChannelKind::LaggedUnweighted),
    AblationVariant::Loss(LossKind::Mse),
    AblationVariant::Loss(LossKind::Mae),
    AblationVariant::Loss(LossKind::Sr),
    AblationVariant::NonParallel,
    AblationVariant::Full,
];

impl AblationVariant {
    pub fn label(self) -> String {
        match self {
            AblationVariant::Graphs(k) => k.label().to_string(),
            AblationVariant::Loss(l) => format!("Loss Function: {}", l.label()),
            AblationVariant::NonParallel => "Non-parallel modules".to_string(),
            AblationVariant::Full => "Used model".to_string(),
        }
    }

    /// The configuration for `task`, or `None` where the cell is NA: a loss
    /// that does not apply to the task or that is already its default.
    pub fn apply(self, base: &RunConfig, task: Quantity) -> Option<RunConfig> {
        let mut cfg = RunConfig { task, loss: LossKind::default_for(task), ..base.clone() };
        match self {
            AblationVariant::Graphs(k) => cfg.channels = vec![k],
            AblationVariant::Loss(l) => {
                if !l.compatible_with(task) || l == LossKind::default_for(task) {
                    return None;
                }
                cfg.loss = l;
            }
            AblationVariant::NonParallel => cfg.model.share_node_weights = true,
            AblationVariant::Full => {}
        }
        Some(cfg)
    }
}

/// The grid's products: ES_1 and VX_1.
pub const ABLATION_PRODUCTS: [InstrumentId; 2] = [InstrumentId::es(1), InstrumentId::vx(1)];

/// Two headline metrics per task and product.
pub fn ablation_metrics(task: Quantity) -> [&'static str; 2] {
    match task {
        Quantity::Return => ["SR", "PPD"],
        Quantity::Volatility => ["QLIKE", "HMSE"],
        Quantity::Volume => ["MSE", "MAE"],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub cells: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub columns: Vec<String>,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["config".to_string()];
        header.extend(self.columns.iter().cloned());
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![r.label.clone()];
            rec.extend(r.cells.iter().map(|v| fmt_value(*v)));
            w.write_record(&rec)?;
        }
        w.flush().map_err(io_err(path))?;
        Ok(())
    }
}

/// Run every grid cell for `tasks` on one dataset (cells run concurrently)
/// and tabulate GCN-LSTM metrics for ES_1 and VX_1.
pub fn run_ablation(base: &RunConfig, tasks: &[Quantity], ds: &Dataset) -> Result<AblationTable> {
    let mut columns = Vec::new();
    for &task in tasks {
        for p in ABLATION_PRODUCTS {
            for m in ablation_metrics(task) {
                columns.push(format!("{}_{p}_{m}", task.label()));
            }
        }
    }
    let jobs: Vec<(usize, usize, RunConfig)> = ABLATION_ROWS
        .iter()
        .enumerate()
        .flat_map(|(r, v)| tasks.iter().enumerate().filter_map(move |(t, &task)| v.apply(base, task).map(|c| (r, t, c))))
        .collect();
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(jobs.len().max(1));
    let mut results: Vec<Option<Result<BacktestReport>>> = (0..jobs.len()).map(|_| None).collect();
    std::thread::scope(|s| {
        let chunks: Vec<_> = results.chunks_mut(jobs.len().div_ceil(workers).max(1)).zip(jobs.chunks(jobs.len().div_ceil(workers).max(1))).collect();
        for (slots, js) in chunks {
            s.spawn(move || {
                for (slot, (_, _, cfg)) in slots.iter_mut().zip(js) {
                    let cfg = RunConfig { linear_baselines: false, ..cfg.clone() };
                    *slot = Some(rolling_train(&cfg, ds).map(|out| build_report(&cfg, ds, &out, &[])));
                }
            });
        }
    });

    let mut cells: BTreeMap<(usize, usize), BacktestReport> = BTreeMap::new();
    for ((r, t, _), res) in jobs.iter().zip(results) {
        cells.insert((*r, *t), res.expect("every job ran")?);
    }
    let rows = ABLATION_ROWS
        .iter()
        .enumerate()
        .map(|(r, v)| {
            let mut values = Vec::new();
            for (t, &task) in tasks.iter().enumerate() {
                for p in ABLATION_PRODUCTS {
                    for m in ablation_metrics(task) {
                        let rep = cells.get(&(r, t));
                        values.push(rep.and_then(|rep| rep.metric(rep.models[0].as_str(), p, m)).and_then(|m| m.value));
                    }
                }
            }
            AblationRow { label: v.label(), cells: values }
        })
        .collect();
    Ok(AblationTable { columns, rows })
}

/// Forecast rows of each block as index ranges into [`RollingOutput::rows`].
pub fn block_ranges(blocks: &[Block]) -> Vec<Range<usize>> {
    let mut start = 0;
    blocks
        .iter()
        .map(|b| {
            let r = start..start + b.forecast_rows.len();
            start = r.end;
            r
        })
        .collect()
}
