//! Synthetic Level-1 tick streams with planted structure: a market factor
//! driving the ES-like nodes, a volatility factor driving the VX-like nodes,
//! a shared autoregressive log-variance state, trade counts tied to that
//! state, and optional lagged cross-node couplings.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{io_err, Result};
use crate::marketdata::{
    canonical_universe, write_ticks, EventKind, InstrumentClass, InstrumentId, TickEvent, NANOS_PER_HOUR, NANOS_PER_MINUTE,
    NANOS_PER_SEC,
};

/// Loadings and microstructure parameters of one instrument.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstrumentSpec {
    pub id: InstrumentId,
    pub start_price: f64,
    pub market_loading: f64,
    pub vol_loading: f64,
    pub idio_loading: f64,
    /// Per-minute return scale at the unconditional variance level.
    pub minute_sd: f64,
    /// Mean trades per minute at log-variance state 0.
    pub base_intensity: f64,
    /// Spread threshold (bp) the hourly spread regime is centered around.
    pub spread_threshold_bp: f64,
}

/// Hour-`h` simple return of `source` adds `beta * R / 60` to each minute
/// return of `dest` during hour `h + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coupling {
    pub source: InstrumentId,
    pub dest: InstrumentId,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_days: usize,
    pub start_ns: i64,
    pub instruments: Vec<InstrumentSpec>,
    /// Correlation between the market and volatility factor shocks.
    pub factor_corr: f64,
    /// Per-minute persistence of the log-variance state.
    pub vol_persistence: f64,
    /// Stationary standard deviation of the log-variance state.
    pub vol_of_vol: f64,
    pub volume_elasticity: f64,
    pub couplings: Vec<Coupling>,
    /// Mean and sd of the log spread relative to the threshold, per hour.
    pub spread_log_mean: f64,
    pub spread_log_sd: f64,
    /// Probability that a quote shows size 1 (failing the liquidity filter).
    pub thin_size_prob: f64,
    pub cancel_prob: f64,
    pub zero_size_prob: f64,
}

impl SynthConfig {
    /// Default specs for `universe`: ES-like nodes load on the market factor,
    /// VX-like nodes on the volatility factor with loadings decaying in tenor.
    pub fn for_universe(universe: &[InstrumentId], n_days: usize, seed: u64) -> Self {
        let instruments = universe
            .iter()
            .map(|&id| {
                let decay = 0.9f64.powi(id.tenor_rank().saturating_sub(1) as i32);
                let (start_price, market, vol, sd, intensity, thr) = match id.class() {
                    InstrumentClass::Es => (4500.0, 1.0, 0.0, 4e-4, 10.0, 15.0),
                    InstrumentClass::Vx => (18.0 + id.tenor_rank() as f64, 0.0, decay, 1.2e-3, 6.0 * decay, 25.0),
                    InstrumentClass::IndexSpx => (4490.0, 1.0, 0.0, 4e-4, 0.0, 15.0),
                    InstrumentClass::IndexVix => (17.0, 0.0, 1.0, 1.5e-3, 0.0, 25.0),
                };
                InstrumentSpec {
                    id,
                    start_price,
                    market_loading: market,
                    vol_loading: vol,
                    idio_loading: 0.3,
                    minute_sd: sd,
                    base_intensity: intensity,
                    spread_threshold_bp: thr,
                }
            })
            .collect();
        Self {
            seed,
            n_days,
            start_ns: 1_704_067_200 * NANOS_PER_SEC,
            instruments,
            factor_corr: -0.7,
            vol_persistence: 0.995,
            vol_of_vol: 0.5,
            volume_elasticity: 1.0,
            couplings: Vec::new(),
            spread_log_mean: 0.7f64.ln(),
            spread_log_sd: 0.35,
            thin_size_prob: 0.05,
            cancel_prob: 0.05,
            zero_size_prob: 0.02,
        }
    }

    pub fn canonical(n_days: usize, seed: u64) -> Self {
        Self::for_universe(&canonical_universe(), n_days, seed)
    }

    pub fn universe(&self) -> Vec<InstrumentId> {
        self.instruments.iter().map(|s| s.id).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(crate::Error::Config(m.to_string()));
        if !(self.vol_persistence > 0.0 && self.vol_persistence < 1.0) {
            return bad("vol_persistence must lie in (0, 1)");
        }
        if self.instruments.iter().any(|s| s.base_intensity < 0.0 || !s.base_intensity.is_finite()) {
            return bad("trade intensities must be non-negative");
        }
        if self.instruments.iter().any(|s| !s.id.has_volume() && s.base_intensity > 0.0) {
            return bad("indices carry no trades");
        }
        if self.instruments.iter().any(|s| s.id.has_volume() && s.base_intensity <= 0.0) {
            return bad("futures need a positive trade intensity");
        }
        if !(-1.0..=1.0).contains(&self.factor_corr) {
            return bad("factor_corr must lie in [-1, 1]");
        }
        let ids = self.universe();
        for c in &self.couplings {
            if !ids.contains(&c.source) || !ids.contains(&c.dest) {
                return bad("coupling references an instrument outside the universe");
            }
        }
        Ok(())
    }

    /// Correlation of two instruments' uncoupled minute returns implied by
    /// the loadings.
    pub fn implied_return_corr(&self, a: InstrumentId, b: InstrumentId) -> Option<f64> {
        let sa = self.instruments.iter().find(|s| s.id == a)?;
        let sb = self.instruments.iter().find(|s| s.id == b)?;
        let rho = self.factor_corr;
        let cov = |x: &InstrumentSpec, y: &InstrumentSpec| {
            x.market_loading * y.market_loading
                + x.vol_loading * y.vol_loading
                + rho * (x.market_loading * y.vol_loading + x.vol_loading * y.market_loading)
        };
        let var = |x: &InstrumentSpec| cov(x, x) + x.idio_loading * x.idio_loading;
        let c = if a == b { var(sa) } else { cov(sa, sb) };
        Some(c / (var(sa) * var(sb)).sqrt())
    }

    /// Add a planted lagged coupling (see [`Coupling`]).
    pub fn plant_predictability(mut self, source: InstrumentId, dest: InstrumentId, beta: f64) -> Self {
        self.couplings.push(Coupling { source, dest, beta });
        self
    }

    pub fn n_minutes(&self) -> usize {
        self.n_days * 1440
    }
}

/// The generator's parameters, written next to the tick file for test oracles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub config: SynthConfig,
    pub n_events: usize,
    pub n_trades: usize,
}

/// Simulate the tick stream, ordered by timestamp.
pub fn generate(cfg: &SynthConfig) -> Vec<TickEvent> {
    cfg.validate().expect("invalid synthetic market configuration");
    let n = cfg.instruments.len();
    let mut factor_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut node_rngs: Vec<ChaCha8Rng> = (0..n)
        .map(|i| ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(i as u64 + 1)))
        .collect();
    let phi = cfg.vol_persistence;
    let shock_sd = cfg.vol_of_vol * (1.0 - phi * phi).sqrt();
    let rho = cfg.factor_corr;
    let rho_perp = (1.0 - rho * rho).sqrt();
    // Keep E[exp(h)] = 1 so minute_sd is the unconditional scale.
    let h_shift = -0.5 * cfg.vol_of_vol * cfg.vol_of_vol;
    let norms: Vec<f64> = cfg
        .instruments
        .iter()
        .map(|s| {
            let v = s.market_loading.powi(2)
                + s.vol_loading.powi(2)
                + 2.0 * rho * s.market_loading * s.vol_loading
                + s.idio_loading.powi(2);
            if v > 0.0 { v.sqrt() } else { 1.0 }
        })
        .collect();
    let index_of = |id: InstrumentId| cfg.instruments.iter().position(|s| s.id == id).expect("validated");
    let couplings: Vec<(usize, usize, f64)> = cfg.couplings.iter().map(|c| (index_of(c.source), index_of(c.dest), c.beta)).collect();

    let mut mid: Vec<f64> = cfg.instruments.iter().map(|s| s.start_price).collect();
    let mut hour_open = mid.clone();
    let mut drift = vec![0.0; n];
    let mut spread_bp = vec![0.0; n];
    let mut book: Vec<Option<(f64, f64, u32, u32)>> = vec![None; n];
    let mut h: f64 = 0.0;
    let mut events = Vec::new();
    let spread_noise = Normal::new(cfg.spread_log_mean, cfg.spread_log_sd.max(0.0)).expect("finite spread parameters");

    for m in 0..cfg.n_minutes() {
        let base = cfg.start_ns + m as i64 * NANOS_PER_MINUTE;
        if m % 60 == 0 {
            drift.fill(0.0);
            for &(src, dst, beta) in &couplings {
                if m > 0 {
                    drift[dst] += beta * (mid[src] - hour_open[src]) / hour_open[src] / 60.0;
                }
            }
            hour_open.clone_from(&mid);
            for (i, s) in cfg.instruments.iter().enumerate() {
                spread_bp[i] = if s.id.is_index() { 0.0 } else { s.spread_threshold_bp * spread_noise.sample(&mut node_rngs[i]).exp() };
            }
        }
        h = phi * h + shock_sd * factor_rng.sample::<f64, _>(StandardNormal);
        let scale = (0.5 * (h + h_shift)).exp();
        let market: f64 = factor_rng.sample(StandardNormal);
        let vol = rho * market + rho_perp * factor_rng.sample::<f64, _>(StandardNormal);

        for (i, s) in cfg.instruments.iter().enumerate() {
            let rng = &mut node_rngs[i];
            let idio: f64 = rng.sample(StandardNormal);
            let z = (s.market_loading * market + s.vol_loading * vol + s.idio_loading * idio) / norms[i];
            let r = s.minute_sd * scale * z + drift[i];

            // Trades in the first part of the minute execute against the
            // book quoted at the end of the previous minute.
            if s.id.has_volume() {
                if let Some((bid, ask, bs, asz)) = book[i] {
                    let lambda = s.base_intensity * (cfg.volume_elasticity * (h + h_shift)).exp();
                    let k = if lambda > 0.0 { Poisson::new(lambda).map_or(0.0, |p| p.sample(rng)) as usize } else { 0 };
                    let mut times: Vec<i64> = (0..k).map(|_| rng.gen_range(NANOS_PER_SEC..50 * NANOS_PER_SEC)).collect();
                    times.sort_unstable();
                    for t in times {
                        events.push(TickEvent { ts_ns: base + t, instrument: s.id, bid_px: bid, ask_px: ask, bid_sz: bs, ask_sz: asz, kind: EventKind::Trade });
                    }
                    if rng.gen_bool(cfg.cancel_prob) {
                        events.push(TickEvent {
                            ts_ns: base + 52 * NANOS_PER_SEC,
                            instrument: s.id,
                            bid_px: bid,
                            ask_px: ask,
                            bid_sz: bs.saturating_sub(1).max(1),
                            ask_sz: asz,
                            kind: EventKind::Cancel,
                        });
                    }
                    if rng.gen_bool(cfg.zero_size_prob) {
                        events.push(TickEvent { ts_ns: base + 53 * NANOS_PER_SEC, instrument: s.id, bid_px: bid, ask_px: ask, bid_sz: 0, ask_sz: asz, kind: EventKind::Quote });
                    }
                }
            }

            mid[i] *= 1.0 + r;
            let half = 0.5 * spread_bp[i] / 1e4 * mid[i];
            let (bid, ask) = (mid[i] - half, mid[i] + half);
            let (bs, asz) = if s.id.is_index() {
                (1, 1)
            } else {
                let size = |rng: &mut ChaCha8Rng| if rng.gen_bool(cfg.thin_size_prob) { 1 } else { rng.gen_range(2..=30) };
                (size(rng), size(rng))
            };
            book[i] = Some((bid, ask, bs, asz));
            events.push(TickEvent {
                ts_ns: base + 55 * NANOS_PER_SEC + i as i64 * 10_000_000,
                instrument: s.id,
                bid_px: bid,
                ask_px: ask,
                bid_sz: bs,
                ask_sz: asz,
                kind: EventKind::Quote,
            });
        }
    }
    events.sort_by_key(|e| e.ts_ns);
    events
}

/// Generate, then write `ticks.csv` and `ground_truth.json` into `dir`.
pub fn generate_to_dir(cfg: &SynthConfig, dir: impl AsRef<Path>) -> Result<GroundTruth> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let events = generate(cfg);
    write_ticks(dir.join("ticks.csv"), &events)?;
    let truth = GroundTruth {
        config: cfg.clone(),
        n_events: events.len(),
        n_trades: events.iter().filter(|e| e.kind == EventKind::Trade).count(),
    };
    let path = dir.join("ground_truth.json");
    std::fs::write(&path, serde_json::to_string_pretty(&truth)?).map_err(io_err(&path))?;
    Ok(truth)
}

/// Timestamp of the first hour boundary at or after `ts`.
pub fn ceil_hour(ts: i64) -> i64 {
    (ts + NANOS_PER_HOUR - 1).div_euclid(NANOS_PER_HOUR) * NANOS_PER_HOUR
}
