//! Level-1 tick ingestion and the aligned minute panel.
//!
//! Minute `i` of a panel covers the half-open interval
//! `(origin + 60i s, origin + 60(i+1) s]` and is labelled by its start. Its
//! close is the end of the interval, so "the mid at minute `i`" is the last
//! mid observed at or before that close. Windows over minutes therefore match
//! the `(t - k, t]` event windows used by the order-flow features.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};

pub const NANOS_PER_SEC: i64 = 1_000_000_000;
pub const NANOS_PER_MINUTE: i64 = 60 * NANOS_PER_SEC;
pub const NANOS_PER_HOUR: i64 = 60 * NANOS_PER_MINUTE;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum InstrumentClass {
    Es,
    Vx,
    IndexSpx,
    IndexVix,
}

/// Which of the two product clusters an instrument belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Cluster {
    Spx,
    Vix,
}

/// An instrument identified by product class and tenor rank.
///
/// Futures carry a rank (1 = nearest expiry); indices carry rank 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct InstrumentId {
    class: InstrumentClass,
    tenor_rank: u8,
}

impl InstrumentId {
    pub fn new(class: InstrumentClass, tenor_rank: u8) -> Result<Self> {
        let ok = match class {
            InstrumentClass::Es => (1..=4).contains(&tenor_rank),
            InstrumentClass::Vx => (1..=8).contains(&tenor_rank),
            InstrumentClass::IndexSpx | InstrumentClass::IndexVix => tenor_rank == 0,
        };
        if !ok {
            return Err(Error::InvalidValue(format!(
                "tenor rank {tenor_rank} out of range for {class:?}"
            )));
        }
        Ok(Self { class, tenor_rank })
    }

    pub const fn es(rank: u8) -> Self {
        assert!(rank >= 1 && rank <= 4);
        Self { class: InstrumentClass::Es, tenor_rank: rank }
    }

    pub const fn vx(rank: u8) -> Self {
        assert!(rank >= 1 && rank <= 8);
        Self { class: InstrumentClass::Vx, tenor_rank: rank }
    }

    pub const SPX: Self = Self { class: InstrumentClass::IndexSpx, tenor_rank: 0 };
    pub const VIX: Self = Self { class: InstrumentClass::IndexVix, tenor_rank: 0 };

    pub fn class(&self) -> InstrumentClass {
        self.class
    }

    pub fn tenor_rank(&self) -> u8 {
        self.tenor_rank
    }

    pub fn is_index(&self) -> bool {
        matches!(self.class, InstrumentClass::IndexSpx | InstrumentClass::IndexVix)
    }

    /// Indices have no trades, so no volume series.
    pub fn has_volume(&self) -> bool {
        !self.is_index()
    }

    pub fn cluster(&self) -> Cluster {
        match self.class {
            InstrumentClass::Es | InstrumentClass::IndexSpx => Cluster::Spx,
            InstrumentClass::Vx | InstrumentClass::IndexVix => Cluster::Vix,
        }
    }
}

impl fmt::Display for InstrumentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.class {
            InstrumentClass::Es => write!(f, "ES_{}", self.tenor_rank),
            InstrumentClass::Vx => write!(f, "VX_{}", self.tenor_rank),
            InstrumentClass::IndexSpx => f.write_str("SPX"),
            InstrumentClass::IndexVix => f.write_str("VIX"),
        }
    }
}

impl FromStr for InstrumentId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let unknown = || Error::UnknownInstrument(s.to_string());
        match s {
            "SPX" => return Ok(Self::SPX),
            "VIX" => return Ok(Self::VIX),
            _ => {}
        }
        let (prefix, rank) = s.split_once('_').ok_or_else(unknown)?;
        let rank: u8 = rank.parse().map_err(|_| unknown())?;
        let class = match prefix {
            "ES" => InstrumentClass::Es,
            "VX" => InstrumentClass::Vx,
            _ => return Err(unknown()),
        };
        Self::new(class, rank).map_err(|_| unknown())
    }
}

impl Serialize for InstrumentId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for InstrumentId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// The 14-instrument universe: four ES futures, eight VX futures, SPX and VIX.
pub fn canonical_universe() -> Vec<InstrumentId> {
    let mut v: Vec<InstrumentId> = (1..=4).map(InstrumentId::es).collect();
    v.extend((1..=8).map(InstrumentId::vx));
    v.push(InstrumentId::SPX);
    v.push(InstrumentId::VIX);
    v
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventKind {
    Trade,
    Quote,
    Cancel,
}

impl EventKind {
    pub fn code(self) -> char {
        match self {
            EventKind::Trade => 'T',
            EventKind::Quote => 'Q',
            EventKind::Cancel => 'C',
        }
    }

    pub fn from_code(s: &str) -> Option<Self> {
        match s {
            "T" => Some(EventKind::Trade),
            "Q" => Some(EventKind::Quote),
            "C" => Some(EventKind::Cancel),
            _ => None,
        }
    }
}

/// One top-of-book update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TickEvent {
    pub ts_ns: i64,
    pub instrument: InstrumentId,
    pub bid_px: f64,
    pub ask_px: f64,
    pub bid_sz: u32,
    pub ask_sz: u32,
    pub kind: EventKind,
}

impl TickEvent {
    /// Either side of the book is empty.
    pub fn is_zero_liquidity(&self) -> bool {
        self.bid_sz == 0 || self.ask_sz == 0
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.bid_px + self.ask_px)
    }
}

/// Parsing options for the tick CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TickFormat {
    /// Out-of-order rows within one instrument are re-sorted when the
    /// regression is at most this many nanoseconds; larger regressions fail.
    pub ts_tolerance_ns: i64,
}

impl Default for TickFormat {
    fn default() -> Self {
        Self { ts_tolerance_ns: NANOS_PER_SEC }
    }
}

#[derive(Debug, Clone, Default)]
pub struct TickLoad {
    pub events: Vec<TickEvent>,
    pub malformed_rows: usize,
    pub zero_liquidity_rows: usize,
}

pub const TICK_HEADER: [&str; 7] = ["ts_ns", "instrument", "bid_px", "ask_px", "bid_sz", "ask_sz", "kind"];

/// Read a tick CSV (`ts_ns,instrument,bid_px,ask_px,bid_sz,ask_sz,kind`).
///
/// Rows that fail to parse are counted in `malformed_rows` and skipped. An
/// unknown instrument code is a hard error, as is a per-instrument timestamp
/// regression beyond the configured tolerance. Zero-liquidity rows are kept
/// (and counted) so that filtering stays an explicit downstream step.
pub fn load_ticks(path: impl AsRef<Path>, format: &TickFormat) -> Result<TickLoad> {
    let path = path.as_ref();
    let file = File::open(path).map_err(io_err(path))?;
    read_ticks(file, format)
}

pub fn read_ticks(reader: impl std::io::Read, format: &TickFormat) -> Result<TickLoad> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.iter().map(str::trim).ne(TICK_HEADER.iter().copied()) {
        return Err(Error::InvalidValue(format!("unexpected tick header: {headers:?}")));
    }

    let mut out = TickLoad::default();
    let mut last_ts: std::collections::HashMap<InstrumentId, i64> = Default::default();
    let mut record = csv::StringRecord::new();
    let mut line = 1u64;
    let mut needs_sort = false;
    while rdr.read_record(&mut record)? {
        line += 1;
        if record.len() != TICK_HEADER.len() {
            out.malformed_rows += 1;
            continue;
        }
        let instrument: InstrumentId = record[1].trim().parse()?;
        let parsed = (|| {
            Some(TickEvent {
                ts_ns: record[0].trim().parse().ok()?,
                instrument,
                bid_px: record[2].trim().parse().ok().filter(|x: &f64| x.is_finite())?,
                ask_px: record[3].trim().parse().ok().filter(|x: &f64| x.is_finite())?,
                bid_sz: record[4].trim().parse().ok()?,
                ask_sz: record[5].trim().parse().ok()?,
                kind: EventKind::from_code(record[6].trim())?,
            })
        })();
        let Some(ev) = parsed else {
            out.malformed_rows += 1;
            continue;
        };
        if let Some(&prev) = last_ts.get(&instrument) {
            let regression = prev - ev.ts_ns;
            if regression > format.ts_tolerance_ns {
                return Err(Error::TimestampRegression {
                    line,
                    instrument: instrument.to_string(),
                    regression_ns: regression,
                    tolerance_ns: format.ts_tolerance_ns,
                });
            }
            needs_sort |= regression > 0;
        }
        let entry = last_ts.entry(instrument).or_insert(ev.ts_ns);
        *entry = (*entry).max(ev.ts_ns);
        if ev.is_zero_liquidity() {
            out.zero_liquidity_rows += 1;
        }
        out.events.push(ev);
    }
    if needs_sort || !out.events.windows(2).all(|w| w[0].ts_ns <= w[1].ts_ns) {
        out.events.sort_by_key(|e| e.ts_ns);
    }
    Ok(out)
}

pub fn write_ticks(path: impl AsRef<Path>, events: &[TickEvent]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    write_ticks_to(&mut w, events).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

pub fn write_ticks_to(w: &mut impl Write, events: &[TickEvent]) -> std::io::Result<()> {
    writeln!(w, "{}", TICK_HEADER.join(","))?;
    for e in events {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            e.ts_ns,
            e.instrument,
            e.bid_px,
            e.ask_px,
            e.bid_sz,
            e.ask_sz,
            e.kind.code()
        )?;
    }
    Ok(())
}

/// Keep only events with liquidity on both sides of the book.
pub fn filter_zero_liquidity<'a>(stream: impl IntoIterator<Item = &'a TickEvent>) -> Vec<TickEvent> {
    stream.into_iter().filter(|e| !e.is_zero_liquidity()).copied().collect()
}

pub fn mid_price(bid: f64, ask: f64) -> Result<f64> {
    if !bid.is_finite() || !ask.is_finite() {
        return Err(Error::InvalidValue(format!("non-finite quote ({bid}, {ask})")));
    }
    Ok(0.5 * (bid + ask))
}

/// Quoted spread in basis points of the mid.
pub fn spread_bp(bid: f64, ask: f64) -> Result<f64> {
    let mid = mid_price(bid, ask)?;
    if mid <= 0.0 {
        return Err(Error::InvalidValue(format!("non-positive mid {mid}")));
    }
    Ok(1e4 * (ask - bid) / mid)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridConfig {
    /// A mid older than this many minutes is stale and the minute invalid.
    pub ffill_limit_minutes: usize,
    /// Fixed offset from UTC to exchange-local time, used for calendar
    /// dummies and trading-day boundaries.
    pub utc_offset_hours: i32,
    /// Optional explicit grid bounds (ns); otherwise the stream's span,
    /// rounded out to whole hours.
    pub start_ns: Option<i64>,
    pub end_ns: Option<i64>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { ffill_limit_minutes: 120, utc_offset_hours: -6, start_ns: None, end_ns: None }
    }
}

/// Per-instrument minute series. `NaN` marks an invalid minute in the price
/// columns.
#[derive(Debug, Clone, PartialEq)]
pub struct InstrumentSeries {
    pub instrument: InstrumentId,
    pub mid_close: Vec<f64>,
    pub bid_close: Vec<f64>,
    pub ask_close: Vec<f64>,
    pub bid_sz_close: Vec<u32>,
    pub ask_sz_close: Vec<u32>,
    pub trade_count: Vec<u32>,
    pub valid: Vec<bool>,
}

/// Aligned minute panel over a fixed universe.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelSeries {
    origin_ns: i64,
    n_minutes: usize,
    utc_offset_hours: i32,
    series: Vec<InstrumentSeries>,
}

impl PanelSeries {
    pub fn origin_ns(&self) -> i64 {
        self.origin_ns
    }

    pub fn n_minutes(&self) -> usize {
        self.n_minutes
    }

    pub fn utc_offset_hours(&self) -> i32 {
        self.utc_offset_hours
    }

    /// Start of minute `i` (its label).
    pub fn minute_ts(&self, i: usize) -> i64 {
        self.origin_ns + i as i64 * NANOS_PER_MINUTE
    }

    /// Close of minute `i`.
    pub fn minute_close_ts(&self, i: usize) -> i64 {
        self.minute_ts(i) + NANOS_PER_MINUTE
    }

    pub fn instruments(&self) -> Vec<InstrumentId> {
        self.series.iter().map(|s| s.instrument).collect()
    }

    pub fn series(&self) -> &[InstrumentSeries] {
        &self.series
    }

    pub fn get(&self, instrument: InstrumentId) -> Option<&InstrumentSeries> {
        self.series.iter().find(|s| s.instrument == instrument)
    }

    pub fn index_of(&self, instrument: InstrumentId) -> Option<usize> {
        self.series.iter().position(|s| s.instrument == instrument)
    }

    /// Minute index whose close lies in `(origin, ts]`'s last full minute,
    /// i.e. the latest minute with close <= `ts`.
    pub fn minute_at_or_before(&self, ts: i64) -> Option<usize> {
        let k = (ts - self.origin_ns).div_euclid(NANOS_PER_MINUTE) - 1;
        (k >= 0 && (k as usize) < self.n_minutes).then_some(k as usize)
    }

    /// Write one `minute_ts,mid,trade_count,valid` CSV per instrument into
    /// `dir`, named `<instrument>.csv`.
    pub fn export(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        for s in &self.series {
            let path = dir.join(format!("{}.csv", s.instrument));
            let mut w = csv::Writer::from_path(&path)?;
            w.write_record(["minute_ts", "mid", "trade_count", "valid"])?;
            for i in 0..self.n_minutes {
                let mid = if s.valid[i] { s.mid_close[i].to_string() } else { String::new() };
                w.write_record([
                    self.minute_ts(i).to_string(),
                    mid,
                    s.trade_count[i].to_string(),
                    (s.valid[i] as u8).to_string(),
                ])?;
            }
            w.flush().map_err(io_err(&path))?;
        }
        Ok(())
    }
}

fn floor_to(ts: i64, unit: i64) -> i64 {
    ts.div_euclid(unit) * unit
}

/// Aggregate a (filtered, time-ordered) stream into minute bars.
///
/// Each minute holds the book at its close (last event at or before it),
/// forward-filled for at most `ffill_limit_minutes`; `trade_count` counts the
/// `Trade` events falling inside the minute. Events for instruments outside
/// `universe` and outside the grid are ignored.
pub fn build_panel(stream: &[TickEvent], universe: &[InstrumentId], grid: &GridConfig) -> Result<PanelSeries> {
    if universe.is_empty() {
        return Err(Error::EmptyUniverse);
    }
    let (first, last) = match (stream.first(), stream.last()) {
        (Some(f), Some(l)) => (f.ts_ns, l.ts_ns),
        _ => (0, 0),
    };
    let origin = grid.start_ns.unwrap_or_else(|| floor_to(first - 1, NANOS_PER_HOUR));
    let end = grid.end_ns.unwrap_or_else(|| floor_to(last - 1, NANOS_PER_HOUR) + NANOS_PER_HOUR);
    if end < origin {
        return Err(Error::InvalidValue(format!("grid end {end} precedes start {origin}")));
    }
    let n = ((end - origin) / NANOS_PER_MINUTE) as usize;

    let mut series: Vec<InstrumentSeries> = universe
        .iter()
        .map(|&instrument| InstrumentSeries {
            instrument,
            mid_close: vec![f64::NAN; n],
            bid_close: vec![f64::NAN; n],
            ask_close: vec![f64::NAN; n],
            bid_sz_close: vec![0; n],
            ask_sz_close: vec![0; n],
            trade_count: vec![0; n],
            valid: vec![false; n],
        })
        .collect();
    // Latest event seen per instrument and the minute it fell into.
    let mut observed: Vec<Vec<Option<TickEvent>>> = vec![vec![None; n]; universe.len()];

    for ev in stream {
        let Some(slot) = universe.iter().position(|&u| u == ev.instrument) else {
            continue;
        };
        if ev.ts_ns <= origin || ev.ts_ns > end {
            continue;
        }
        let minute = ((ev.ts_ns - origin - 1) / NANOS_PER_MINUTE) as usize;
        observed[slot][minute] = Some(*ev);
        if ev.kind == EventKind::Trade {
            series[slot].trade_count[minute] += 1;
        }
    }

    for (s, obs) in series.iter_mut().zip(&observed) {
        let mut last: Option<(usize, TickEvent)> = None;
        for i in 0..n {
            if let Some(ev) = obs[i] {
                last = Some((i, ev));
            }
            if let Some((seen, ev)) = last {
                if i - seen <= grid.ffill_limit_minutes {
                    s.mid_close[i] = ev.mid();
                    s.bid_close[i] = ev.bid_px;
                    s.ask_close[i] = ev.ask_px;
                    s.bid_sz_close[i] = ev.bid_sz;
                    s.ask_sz_close[i] = ev.ask_sz;
                    s.valid[i] = true;
                }
            }
        }
    }

    Ok(PanelSeries { origin_ns: origin, n_minutes: n, utc_offset_hours: grid.utc_offset_hours, series })
}
