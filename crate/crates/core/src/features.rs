//! Predictive features and forecast targets on the hourly grid.
//!
//! Every minute-level kernel takes the minute index `t` of the panel and only
//! reads minutes `<= t`, so a feature row never depends on anything after its
//! timestamp. Targets look forward by the horizon and are kept separate.

use std::path::Path;

use chrono::{Datelike, TimeZone, Timelike, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{io_err, Result};
use crate::marketdata::{InstrumentId, InstrumentSeries, PanelSeries, TickEvent, NANOS_PER_HOUR, NANOS_PER_MINUTE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub return_windows: Vec<usize>,
    pub rv_windows: Vec<usize>,
    pub semivol_windows: Vec<usize>,
    pub ew_weights: Vec<f64>,
    pub ew_span: usize,
    pub ofi_windows: Vec<usize>,
    pub volume_windows: Vec<usize>,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            return_windows: vec![5, 10, 30, 60, 90, 180, 240, 360, 1440],
            rv_windows: vec![5, 10, 30, 60, 90, 180, 390],
            semivol_windows: vec![5, 10, 30, 60, 90, 180, 391],
            ew_weights: vec![0.75, 0.9, 0.975, 0.99, 0.999, 1.0],
            ew_span: 1440,
            ofi_windows: vec![5, 10, 30, 60, 90, 120, 180, 270, 360, 1440],
            volume_windows: vec![5, 10, 30, 60, 90, 180, 240, 360, 1440],
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        let windows = [
            &self.return_windows,
            &self.rv_windows,
            &self.semivol_windows,
            &self.ofi_windows,
            &self.volume_windows,
        ];
        if windows.iter().any(|w| w.contains(&0)) {
            return Err(crate::Error::Config("feature windows must be positive".into()));
        }
        if self.ew_weights.iter().any(|&w| !(w > 0.0 && w <= 1.0)) {
            return Err(crate::Error::Config("ew weights must lie in (0, 1]".into()));
        }
        Ok(())
    }

    /// Canonical column names, in matrix order.
    pub fn column_names(&self) -> Vec<String> {
        let mut cols = Vec::new();
        cols.extend(self.return_windows.iter().map(|k| format!("ret_{k}")));
        cols.extend(self.rv_windows.iter().map(|k| format!("rv_{k}")));
        cols.extend(self.semivol_windows.iter().map(|k| format!("rv_pos{k}")));
        cols.extend(self.semivol_windows.iter().map(|k| format!("rv_neg{k}")));
        cols.extend(self.ew_weights.iter().map(|w| format!("weigh_rets_{w:?}")));
        cols.extend(self.ew_weights.iter().map(|w| format!("weigh_rv_{w:?}")));
        cols.extend(self.ofi_windows.iter().map(|k| format!("ofi_{k}")));
        cols.extend(self.volume_windows.iter().map(|k| format!("num_trades_{k}")));
        cols.extend(DAY_NAMES.iter().map(|d| d.to_string()));
        cols.extend((0..23).map(|h| format!("Hour_{h:02}")));
        cols
    }

    pub fn n_features(&self) -> usize {
        self.return_windows.len()
            + self.rv_windows.len()
            + 2 * self.semivol_windows.len()
            + 2 * self.ew_weights.len()
            + self.ofi_windows.len()
            + self.volume_windows.len()
            + N_CALENDAR
    }

    fn volume_range(&self) -> std::ops::Range<usize> {
        let start = self.return_windows.len()
            + self.rv_windows.len()
            + 2 * self.semivol_windows.len()
            + 2 * self.ew_weights.len();
        start..start + self.ofi_windows.len() + self.volume_windows.len()
    }
}

pub const DAY_NAMES: [&str; 6] = ["Monday", "Tuesday", "Wednesday", "Thursday", "Friday", "Saturday"];
pub const N_CALENDAR: usize = 6 + 23;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Pos,
    Neg,
}

/// Simple 1-minute mid return ending at minute `t`.
pub fn one_minute_return(s: &InstrumentSeries, t: usize) -> Option<f64> {
    if t == 0 || !s.valid[t] || !s.valid[t - 1] {
        return None;
    }
    let prev = s.mid_close[t - 1];
    Some((s.mid_close[t] - prev) / prev)
}

fn series<'a>(panel: &'a PanelSeries, instrument: InstrumentId) -> &'a InstrumentSeries {
    panel.get(instrument).unwrap_or_else(|| panic!("{instrument} not in panel"))
}

/// `(P_t - P_{t-k}) / P_{t-k}` on mid-prices; `None` if either end is invalid.
pub fn k_minute_return(panel: &PanelSeries, instrument: InstrumentId, t: usize, k: usize) -> Option<f64> {
    ret_kernel(series(panel, instrument), t, k)
}

fn ret_kernel(s: &InstrumentSeries, t: usize, k: usize) -> Option<f64> {
    if t < k || t >= s.valid.len() || !s.valid[t] || !s.valid[t - k] {
        return None;
    }
    let base = s.mid_close[t - k];
    Some((s.mid_close[t] - base) / base)
}

/// Sum of squared 1-minute returns over minutes `t-k+1..=t`.
pub fn realized_variance(panel: &PanelSeries, instrument: InstrumentId, t: usize, k: usize) -> Option<f64> {
    rv_kernel(series(panel, instrument), t, k, None)
}

/// Realized semivariance. Exactly-zero returns count on both sides.
pub fn semivariance(panel: &PanelSeries, instrument: InstrumentId, t: usize, k: usize, side: Side) -> Option<f64> {
    rv_kernel(series(panel, instrument), t, k, Some(side))
}

fn rv_kernel(s: &InstrumentSeries, t: usize, k: usize, side: Option<Side>) -> Option<f64> {
    if k == 0 || t + 1 < k + 1 || t >= s.valid.len() {
        return None;
    }
    let mut acc = 0.0;
    for j in 0..k {
        let r = one_minute_return(s, t - j)?;
        let keep = match side {
            None => true,
            Some(Side::Pos) => r >= 0.0,
            Some(Side::Neg) => r <= 0.0,
        };
        if keep {
            acc += r * r;
        }
    }
    Some(acc)
}

/// Exponentially weighted sum of the 1-minute returns over `span + 1` minutes.
/// For `w == 1` the `(1 - w)` prefactor would vanish, so the raw sum is returned.
pub fn ew_return(panel: &PanelSeries, instrument: InstrumentId, t: usize, w: f64, span: usize) -> Option<f64> {
    ew_kernel(series(panel, instrument), t, w, span, false)
}

/// Exponentially weighted sum of the 1-minute realized variances (squared
/// 1-minute returns), with the same `w == 1` convention as [`ew_return`].
pub fn ew_rv(panel: &PanelSeries, instrument: InstrumentId, t: usize, w: f64, span: usize) -> Option<f64> {
    ew_kernel(series(panel, instrument), t, w, span, true)
}

fn ew_kernel(s: &InstrumentSeries, t: usize, w: f64, span: usize, squared: bool) -> Option<f64> {
    if t < span + 1 || t >= s.valid.len() {
        return None;
    }
    let mut acc = 0.0;
    let mut wj = 1.0;
    for j in 0..=span {
        let r = one_minute_return(s, t - j)?;
        let x = if squared { r * r } else { r };
        acc += wj * x;
        wj *= w;
    }
    Some(if w == 1.0 { acc } else { (1.0 - w) * acc })
}

/// Order-flow contribution of `cur` given the preceding event `prev`.
pub fn ofi_contribution(prev: &TickEvent, cur: &TickEvent) -> f64 {
    let mut e = 0.0;
    if cur.bid_px >= prev.bid_px {
        e += cur.bid_sz as f64;
    }
    if cur.bid_px <= prev.bid_px {
        e -= prev.bid_sz as f64;
    }
    if cur.ask_px <= prev.ask_px {
        e -= cur.ask_sz as f64;
    }
    if cur.ask_px >= prev.ask_px {
        e += prev.ask_sz as f64;
    }
    e
}

/// Order-flow imbalance over events with timestamps in `(t_ns - k min, t_ns]`.
/// The predecessor of each event is the previous event of the same
/// instrument in `stream`, wherever it falls; the very first event has none
/// and is skipped.
pub fn ofi(stream: &[TickEvent], instrument: InstrumentId, t_ns: i64, k: usize) -> f64 {
    let lo = t_ns - k as i64 * NANOS_PER_MINUTE;
    let mut prev: Option<&TickEvent> = None;
    let mut acc = 0.0;
    for ev in stream.iter().filter(|e| e.instrument == instrument) {
        if ev.ts_ns > t_ns {
            break;
        }
        if ev.ts_ns > lo {
            if let Some(p) = prev {
                acc += ofi_contribution(p, ev);
            }
        }
        prev = Some(ev);
    }
    acc
}

fn trade_sum(s: &InstrumentSeries, hi: usize, k: usize) -> Option<u64> {
    // Minutes hi-k+1..=hi.
    if hi + 1 < k || hi >= s.trade_count.len() {
        return None;
    }
    Some(s.trade_count[hi + 1 - k..=hi].iter().map(|&c| c as u64).sum())
}

/// `log(V_t / V_{t-k})` where `V_t` counts trades in the `k` minutes ending at `t`.
pub fn delta_volume(panel: &PanelSeries, instrument: InstrumentId, t: usize, k: usize) -> Option<f64> {
    dvol_kernel(series(panel, instrument), t, k)
}

fn dvol_kernel(s: &InstrumentSeries, t: usize, k: usize) -> Option<f64> {
    if k == 0 || t < k {
        return None;
    }
    let now = trade_sum(s, t, k)?;
    let before = trade_sum(s, t - k, k)?;
    (now > 0 && before > 0).then(|| (now as f64 / before as f64).ln())
}

/// Day-of-week (Monday..Saturday) and hour-of-day (00..22) indicators in
/// exchange-local time. Sunday and hour 23 are the reference categories.
pub fn calendar_dummies(ts_ns: i64, utc_offset_hours: i32) -> [f64; N_CALENDAR] {
    let local = ts_ns + utc_offset_hours as i64 * NANOS_PER_HOUR;
    let dt = Utc.timestamp_nanos(local);
    let mut out = [0.0; N_CALENDAR];
    let dow = dt.weekday().num_days_from_monday() as usize; // Monday = 0, Sunday = 6
    if dow < 6 {
        out[dow] = 1.0;
    }
    let hour = dt.hour() as usize;
    if hour < 23 {
        out[6 + hour] = 1.0;
    }
    out
}

/// Local calendar day index (days since epoch in exchange-local time).
pub fn local_day(ts_ns: i64, utc_offset_hours: i32) -> i64 {
    (ts_ns + utc_offset_hours as i64 * NANOS_PER_HOUR).div_euclid(24 * NANOS_PER_HOUR)
}

/// Spacing of the row grid and of the forecast targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Horizon {
    H1,
    H3,
    H4,
    H6,
    Day,
}

impl Horizon {
    pub fn minutes(self) -> usize {
        match self {
            Horizon::H1 => 60,
            Horizon::H3 => 180,
            Horizon::H4 => 240,
            Horizon::H6 => 360,
            Horizon::Day => 1440,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Horizon::H1 => "1h",
            Horizon::H3 => "3h",
            Horizon::H4 => "4h",
            Horizon::H6 => "6h",
            Horizon::Day => "1d",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "1h" => Horizon::H1,
            "3h" => Horizon::H3,
            "4h" => Horizon::H4,
            "6h" => Horizon::H6,
            "1d" | "day" => Horizon::Day,
            _ => return None,
        })
    }
}

/// Per-instrument feature rows on the forecast grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub row_ts: Vec<i64>,
    /// Panel minute index whose close equals the row timestamp.
    pub row_minute: Vec<usize>,
    pub columns: Vec<String>,
    /// Calendar dummies; exempt from standardization.
    pub binary: Vec<bool>,
    pub instruments: Vec<InstrumentId>,
    /// Row-major `n_rows x n_cols` per instrument.
    pub values: Vec<Vec<f64>>,
    pub mask: Vec<Vec<bool>>,
    /// Columns that do not exist for an instrument (order flow and volume
    /// for indices). They are zero-filled and ignored by the mask.
    pub structural: Vec<Vec<bool>>,
    pub utc_offset_hours: i32,
}

impl FeatureMatrix {
    pub fn n_rows(&self) -> usize {
        self.row_ts.len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn row(&self, inst: usize, r: usize) -> &[f64] {
        let c = self.n_cols();
        &self.values[inst][r * c..(r + 1) * c]
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// One CSV per instrument: `row_ts,<feature columns>,valid`.
    pub fn export(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        for (i, inst) in self.instruments.iter().enumerate() {
            let path = dir.join(format!("features_{inst}.csv"));
            let mut w = csv::Writer::from_path(&path)?;
            let mut header = vec!["row_ts".to_string()];
            header.extend(self.columns.iter().cloned());
            header.push("valid".into());
            w.write_record(&header)?;
            for r in 0..self.n_rows() {
                let mut rec = vec![self.row_ts[r].to_string()];
                rec.extend(self.row(i, r).iter().map(|v| if v.is_finite() { v.to_string() } else { String::new() }));
                rec.push((self.mask[i][r] as u8).to_string());
                w.write_record(&rec)?;
            }
            w.flush().map_err(io_err(&path))?;
        }
        Ok(())
    }
}

/// The three forecast quantities; also the node observables graphs are built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Quantity {
    Return,
    Volatility,
    Volume,
}

impl Quantity {
    pub const ALL: [Quantity; 3] = [Quantity::Return, Quantity::Volatility, Quantity::Volume];

    pub fn label(self) -> &'static str {
        match self {
            Quantity::Return => "Return",
            Quantity::Volatility => "Volatility",
            Quantity::Volume => "Volume",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "return" | "returns" | "ret" => Some(Quantity::Return),
            "volatility" | "vol" | "vola" => Some(Quantity::Volatility),
            "volume" | "vlm" => Some(Quantity::Volume),
            _ => None,
        }
    }
}

/// Forecast targets aligned with a [`FeatureMatrix`]'s rows. `NaN` = missing.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetSet {
    pub row_ts: Vec<i64>,
    pub instruments: Vec<InstrumentId>,
    pub horizon_minutes: usize,
    pub ret: Vec<Vec<f64>>,
    pub log_rv: Vec<Vec<f64>>,
    pub dvol: Vec<Vec<f64>>,
    /// Most recent realized quantities observable at the row (the
    /// previous period's `log_rv`), used by the naive volatility forecast.
    pub last_log_rv: Vec<Vec<f64>>,
}

impl TargetSet {
    /// Per-instrument series of one target quantity.
    pub fn quantity(&self, q: Quantity) -> &[Vec<f64>] {
        match q {
            Quantity::Return => &self.ret,
            Quantity::Volatility => &self.log_rv,
            Quantity::Volume => &self.dvol,
        }
    }
}

/// Rows of the grid: minute closes that are multiples of the horizon in
/// exchange-local time.
pub fn grid_rows(panel: &PanelSeries, horizon: Horizon) -> Vec<usize> {
    let stride = horizon.minutes() as i64 * NANOS_PER_MINUTE;
    let offset = panel.utc_offset_hours() as i64 * NANOS_PER_HOUR;
    (0..panel.n_minutes())
        .filter(|&t| (panel.minute_close_ts(t) + offset).rem_euclid(stride) == 0)
        .collect()
}

/// Per-minute order-flow contributions for one instrument, bucketed like the panel.
fn minute_ofi(stream: &[TickEvent], panel: &PanelSeries, instrument: InstrumentId) -> Vec<f64> {
    let n = panel.n_minutes();
    let mut out = vec![0.0; n];
    let origin = panel.origin_ns();
    let end = panel.minute_close_ts(n.saturating_sub(1));
    let mut prev: Option<&TickEvent> = None;
    for ev in stream.iter().filter(|e| e.instrument == instrument) {
        if let Some(p) = prev {
            if ev.ts_ns > origin && ev.ts_ns <= end {
                let m = ((ev.ts_ns - origin - 1) / NANOS_PER_MINUTE) as usize;
                out[m] += ofi_contribution(p, ev);
            }
        }
        prev = Some(ev);
    }
    out
}

/// Compute every configured feature and the one-step-ahead targets.
///
/// `stream` must be the filtered stream the panel was built from (it is only
/// used for order flow). Rows with any missing non-structural feature are
/// masked out; targets are missing where their window is.
pub fn assemble(panel: &PanelSeries, stream: &[TickEvent], cfg: &FeatureConfig, horizon: Horizon) -> (FeatureMatrix, TargetSet) {
    let rows = grid_rows(panel, horizon);
    let columns = cfg.column_names();
    let n_cols = columns.len();
    let binary: Vec<bool> = (0..n_cols).map(|c| c >= n_cols - N_CALENDAR).collect();
    let vol_range = cfg.volume_range();
    let instruments = panel.instruments();
    let hk = horizon.minutes();
    let offset = panel.utc_offset_hours();

    let mut values = Vec::with_capacity(instruments.len());
    let mut masks = Vec::with_capacity(instruments.len());
    let mut structural = Vec::with_capacity(instruments.len());
    let mut targets = TargetSet {
        row_ts: rows.iter().map(|&t| panel.minute_close_ts(t)).collect(),
        instruments: instruments.clone(),
        horizon_minutes: hk,
        ret: Vec::new(),
        log_rv: Vec::new(),
        dvol: Vec::new(),
        last_log_rv: Vec::new(),
    };

    for s in panel.series() {
        let has_volume = s.instrument.has_volume();
        let flow = if has_volume { minute_ofi(stream, panel, s.instrument) } else { Vec::new() };
        let mut flow_prefix = vec![0.0; flow.len() + 1];
        for (i, f) in flow.iter().enumerate() {
            flow_prefix[i + 1] = flow_prefix[i] + f;
        }
        let structural_cols: Vec<bool> = (0..n_cols).map(|c| !has_volume && vol_range.contains(&c)).collect();

        let mut vals = Vec::with_capacity(rows.len() * n_cols);
        let mut mask = Vec::with_capacity(rows.len());
        let (mut ret, mut lrv, mut dv, mut last) = (vec![], vec![], vec![], vec![]);
        for &t in &rows {
            let start = vals.len();
            let nan = f64::NAN;
            for &k in &cfg.return_windows {
                vals.push(ret_kernel(s, t, k).unwrap_or(nan));
            }
            for &k in &cfg.rv_windows {
                vals.push(rv_kernel(s, t, k, None).unwrap_or(nan));
            }
            for side in [Side::Pos, Side::Neg] {
                for &k in &cfg.semivol_windows {
                    vals.push(rv_kernel(s, t, k, Some(side)).unwrap_or(nan));
                }
            }
            for squared in [false, true] {
                for &w in &cfg.ew_weights {
                    vals.push(ew_kernel(s, t, w, cfg.ew_span, squared).unwrap_or(nan));
                }
            }
            for &k in &cfg.ofi_windows {
                if !has_volume {
                    vals.push(0.0);
                } else if t + 1 >= k {
                    // Minutes t-k+1..=t cover events in (close(t) - k min, close(t)].
                    vals.push(flow_prefix[t + 1] - flow_prefix[t + 1 - k]);
                } else {
                    vals.push(nan);
                }
            }
            for &k in &cfg.volume_windows {
                vals.push(if has_volume { dvol_kernel(s, t, k).unwrap_or(nan) } else { 0.0 });
            }
            vals.extend_from_slice(&calendar_dummies(panel.minute_close_ts(t), offset));
            let ok = vals[start..]
                .iter()
                .zip(&structural_cols)
                .all(|(v, &st)| st || v.is_finite());
            mask.push(ok);

            let ahead = t + hk;
            ret.push(ret_kernel(s, ahead, hk).unwrap_or(f64::NAN));
            lrv.push(rv_kernel(s, ahead, hk, None).filter(|&v| v > 0.0).map_or(f64::NAN, f64::ln));
            dv.push(if has_volume { dvol_kernel(s, ahead, hk).unwrap_or(f64::NAN) } else { f64::NAN });
            last.push(rv_kernel(s, t, hk, None).filter(|&v| v > 0.0).map_or(f64::NAN, f64::ln));
        }
        values.push(vals);
        masks.push(mask);
        structural.push(structural_cols);
        targets.ret.push(ret);
        targets.log_rv.push(lrv);
        targets.dvol.push(dv);
        targets.last_log_rv.push(last);
    }

    let fm = FeatureMatrix {
        row_ts: targets.row_ts.clone(),
        row_minute: rows,
        columns,
        binary,
        instruments,
        values,
        mask: masks,
        structural,
        utc_offset_hours: offset,
    };
    (fm, targets)
}

/// Per-instrument, per-column training statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<Vec<f64>>,
    pub sd: Vec<Vec<f64>>,
}

pub const SD_FLOOR: f64 = 1e-12;

impl Standardizer {
    /// Mean and population sd over the masked-in `rows` of each instrument.
    pub fn fit(matrix: &FeatureMatrix, rows: &[usize]) -> Self {
        let c = matrix.n_cols();
        let mut mean = vec![vec![0.0; c]; matrix.instruments.len()];
        let mut sd = vec![vec![0.0; c]; matrix.instruments.len()];
        for i in 0..matrix.instruments.len() {
            let used: Vec<usize> = rows.iter().copied().filter(|&r| matrix.mask[i][r]).collect();
            if used.is_empty() {
                continue;
            }
            let n = used.len() as f64;
            for col in 0..c {
                let m = used.iter().map(|&r| matrix.row(i, r)[col]).sum::<f64>() / n;
                let v = used.iter().map(|&r| (matrix.row(i, r)[col] - m).powi(2)).sum::<f64>() / n;
                mean[i][col] = m;
                sd[i][col] = v.sqrt();
            }
        }
        Self { mean, sd }
    }

    /// z-score every non-binary column; near-constant columns are only centered.
    pub fn apply(&self, matrix: &FeatureMatrix) -> FeatureMatrix {
        let mut out = matrix.clone();
        let c = matrix.n_cols();
        for i in 0..matrix.instruments.len() {
            for r in 0..matrix.n_rows() {
                let row = &mut out.values[i][r * c..(r + 1) * c];
                for col in 0..c {
                    if matrix.binary[col] {
                        continue;
                    }
                    let sd = self.sd[i][col];
                    let centered = row[col] - self.mean[i][col];
                    row[col] = if sd < SD_FLOOR { centered } else { centered / sd };
                }
            }
        }
        out
    }
}

/// Convenience wrapper: fit on `train_rows` and apply to the whole matrix.
pub fn standardize(matrix: &FeatureMatrix, train_rows: &[usize]) -> (FeatureMatrix, Standardizer) {
    let st = Standardizer::fit(matrix, train_rows);
    (st.apply(matrix), st)
}
