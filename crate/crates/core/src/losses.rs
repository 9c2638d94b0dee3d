//! Training losses and evaluation metrics, as plain functions over slices
//! and as differentiable tape expressions.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::features::Quantity;

/// Exponent clamp for QLIKE/HMSE.
pub const EXP_CLAMP: f64 = 50.0;
pub const TRADING_DAYS: f64 = 252.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LossKind {
    Mse,
    Mae,
    Sr,
    Mixed,
    Qlike,
    Hmse,
}

impl LossKind {
    pub fn label(self) -> &'static str {
        match self {
            LossKind::Mse => "MSE",
            LossKind::Mae => "MAE",
            LossKind::Sr => "SR",
            LossKind::Mixed => "MSE+SR",
            LossKind::Qlike => "QLIKE",
            LossKind::Hmse => "HMSE",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s.to_ascii_lowercase().as_str() {
            "mse" => LossKind::Mse,
            "mae" => LossKind::Mae,
            "sr" => LossKind::Sr,
            "mixed" | "mse+sr" => LossKind::Mixed,
            "qlike" => LossKind::Qlike,
            "hmse" => LossKind::Hmse,
            _ => return None,
        })
    }

    /// Training loss used for each task unless overridden.
    pub fn default_for(task: Quantity) -> Self {
        match task {
            Quantity::Return => LossKind::Mixed,
            Quantity::Volatility => LossKind::Qlike,
            Quantity::Volume => LossKind::Mae,
        }
    }

    /// Sharpe-based losses only make sense for returns.
    pub fn compatible_with(self, task: Quantity) -> bool {
        !matches!(self, LossKind::Sr | LossKind::Mixed) || task == Quantity::Return
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub epsilon: f64,
    pub alpha: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { epsilon: 1e-6, alpha: 1.0 }
    }
}

fn check(y: &[f64], yhat: &[f64]) {
    assert_eq!(y.len(), yhat.len(), "label/forecast length mismatch");
    assert!(!y.is_empty(), "loss of an empty sample");
}

pub fn mse(y: &[f64], yhat: &[f64]) -> f64 {
    check(y, yhat);
    y.iter().zip(yhat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64
}

pub fn mae(y: &[f64], yhat: &[f64]) -> f64 {
    check(y, yhat);
    y.iter().zip(yhat).map(|(a, b)| (a - b).abs()).sum::<f64>() / y.len() as f64
}

fn mean_sd(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
    (m, v.sqrt())
}

/// `-mean(R) / (sd(R) + eps)` with `R_t = y_t tanh(yhat_t / eps)` and the
/// population sd.
pub fn sr_loss(y: &[f64], yhat: &[f64], eps: f64) -> f64 {
    check(y, yhat);
    let r: Vec<f64> = y.iter().zip(yhat).map(|(a, b)| a * (b / eps).tanh()).collect();
    let (m, sd) = mean_sd(&r);
    -m / (sd + eps)
}

pub fn mixed_loss(y: &[f64], yhat: &[f64], cfg: &LossConfig) -> f64 {
    mse(y, yhat) + cfg.alpha * sr_loss(y, yhat, cfg.epsilon)
}

/// Mean QLIKE over log-variances and the number of clamped terms.
pub fn qlike(y: &[f64], yhat: &[f64]) -> (f64, usize) {
    check(y, yhat);
    let mut clamped = 0;
    let total: f64 = y
        .iter()
        .zip(yhat)
        .map(|(a, b)| {
            let d = a - b;
            let dc = d.clamp(-EXP_CLAMP, EXP_CLAMP);
            clamped += (dc != d) as usize;
            dc.exp() - dc - 1.0
        })
        .sum();
    (total / y.len() as f64, clamped)
}

/// Mean `(1 - exp(yhat) / exp(y))^2` over log-variances and the clamp count.
pub fn hmse(y: &[f64], yhat: &[f64]) -> (f64, usize) {
    check(y, yhat);
    let mut clamped = 0;
    let total: f64 = y
        .iter()
        .zip(yhat)
        .map(|(a, b)| {
            let d = b - a;
            let dc = d.clamp(-EXP_CLAMP, EXP_CLAMP);
            clamped += (dc != d) as usize;
            (1.0 - dc.exp()).powi(2)
        })
        .sum();
    (total / y.len() as f64, clamped)
}

/// Plain-number evaluation of any [`LossKind`].
pub fn evaluate(kind: LossKind, y: &[f64], yhat: &[f64], cfg: &LossConfig) -> f64 {
    match kind {
        LossKind::Mse => mse(y, yhat),
        LossKind::Mae => mae(y, yhat),
        LossKind::Sr => sr_loss(y, yhat, cfg.epsilon),
        LossKind::Mixed => mixed_loss(y, yhat, cfg),
        LossKind::Qlike => qlike(y, yhat).0,
        LossKind::Hmse => hmse(y, yhat).0,
    }
}

/// Differentiable loss of `pred` against constant labels `y` (same shape).
pub fn loss_on_tape<'t>(kind: LossKind, pred: Var<'t>, y: &Tensor, cfg: &LossConfig) -> Var<'t> {
    let tape: &'t Tape = pred.tape();
    let yv = tape.leaf(y.clone());
    match kind {
        LossKind::Mse => pred.sub(yv).square().mean(),
        LossKind::Mae => pred.sub(yv).abs().mean(),
        LossKind::Sr => sr_on_tape(pred, yv, cfg.epsilon),
        LossKind::Mixed => pred.sub(yv).square().mean().add(sr_on_tape(pred, yv, cfg.epsilon).scale(cfg.alpha)),
        LossKind::Qlike => {
            let d = yv.sub(pred).clamp(-EXP_CLAMP, EXP_CLAMP);
            d.exp().sub(d).add_scalar(-1.0).mean()
        }
        LossKind::Hmse => {
            let d = pred.sub(yv).clamp(-EXP_CLAMP, EXP_CLAMP);
            d.exp().scale(-1.0).add_scalar(1.0).square().mean()
        }
    }
}

fn sr_on_tape<'t>(pred: Var<'t>, y: Var<'t>, eps: f64) -> Var<'t> {
    let r = y.mul(pred.scale(1.0 / eps).tanh());
    let denom = r.sd().add_scalar(eps);
    r.mean().div(denom).scale(-1.0)
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// P&L of one trading day.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DayPnl {
    pub day: i64,
    pub pnl: f64,
    /// Tradable periods that day; 0 flags a day recorded as flat.
    pub n_periods: usize,
}

/// `sum_t R_t sign(yhat_t)` per day over tradable periods. Every day that
/// appears in `day` gets a record, in ascending order.
pub fn daily_pnl(day: &[i64], ret: &[f64], yhat: &[f64], tradable: &[bool]) -> Vec<DayPnl> {
    assert!(day.len() == ret.len() && ret.len() == yhat.len() && yhat.len() == tradable.len(), "daily_pnl inputs differ in length");
    let mut out: Vec<DayPnl> = Vec::new();
    let mut order: Vec<usize> = (0..day.len()).collect();
    order.sort_by_key(|&i| day[i]);
    for i in order {
        if out.last().map_or(true, |d| d.day != day[i]) {
            out.push(DayPnl { day: day[i], pnl: 0.0, n_periods: 0 });
        }
        if tradable[i] && ret[i].is_finite() && yhat[i].is_finite() {
            let d = out.last_mut().expect("pushed above");
            d.pnl += ret[i] * sign(yhat[i]);
            d.n_periods += 1;
        }
    }
    out
}

/// Annualized Sharpe ratio of daily P&L (sample sd); `None` for fewer than
/// two days or zero dispersion.
pub fn sharpe(pnl: &[f64]) -> Option<f64> {
    if pnl.len() < 2 {
        return None;
    }
    let n = pnl.len() as f64;
    let m = pnl.iter().sum::<f64>() / n;
    let var = pnl.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (var > 0.0).then(|| m * TRADING_DAYS.sqrt() / var.sqrt())
}

/// Mean daily P&L.
pub fn ppd(pnl: &[f64]) -> Option<f64> {
    (!pnl.is_empty()).then(|| pnl.iter().sum::<f64>() / pnl.len() as f64)
}

/// One serialized metric row: `product,metric,value,n_periods`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub product: String,
    pub metric: String,
    pub value: Option<f64>,
    pub n_periods: usize,
}
