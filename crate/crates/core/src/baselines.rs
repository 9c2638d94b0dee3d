//! Non-deep baselines: naive forecasts, OLS, cross-validated LASSO, PCR,
//! and LASSO-based feature importance.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::features::Quantity;

/// The naive forecast: always long for returns, last observed log-RV for
/// volatility, zero change for volume.
pub fn naive_forecast(task: Quantity, last_log_rv: f64) -> Option<f64> {
    match task {
        Quantity::Return => Some(1.0),
        Quantity::Volatility => last_log_rv.is_finite().then_some(last_log_rv),
        Quantity::Volume => Some(0.0),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FitInfo {
    Ols { ridge_fallback: bool },
    Lasso { lambda: f64, lambdas: Vec<f64>, cv_mse: Vec<f64>, converged: bool, sweeps: usize },
    Pcr { components: usize, explained: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub coef: Vec<f64>,
    pub intercept: f64,
    pub info: FitInfo,
}

impl LinearModel {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        self.intercept + self.coef.iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> DVector<f64> {
        let b = DVector::from_column_slice(&self.coef);
        (x * b).add_scalar(self.intercept)
    }

    /// JSON map of feature name to coefficient, plus the intercept.
    pub fn to_named_json(&self, names: &[String]) -> serde_json::Value {
        let coef: serde_json::Map<String, serde_json::Value> =
            names.iter().zip(&self.coef).map(|(n, c)| (n.clone(), serde_json::json!(c))).collect();
        serde_json::json!({ "intercept": self.intercept, "coefficients": coef, "info": self.info })
    }
}

fn center(x: &DMatrix<f64>, y: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>, DVector<f64>, f64) {
    let n = x.nrows() as f64;
    let means = DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.sum() / n));
    let mut xc = x.clone();
    for (j, mut col) in xc.column_iter_mut().enumerate() {
        col.add_scalar_mut(-means[j]);
    }
    let ym = y.sum() / n;
    (xc, y.add_scalar(-ym), means, ym)
}

fn intercept(means: &DVector<f64>, ym: f64, beta: &DVector<f64>) -> f64 {
    ym - means.dot(beta)
}

pub const RIDGE_FALLBACK: f64 = 1e-8;
const RANK_TOL: f64 = 1e-10;

/// Least squares with intercept. Rank-deficient designs fall back to ridge
/// with penalty `1e-8` on the centered problem.
pub fn ols_fit(x: &DMatrix<f64>, y: &DVector<f64>) -> LinearModel {
    assert_eq!(x.nrows(), y.len(), "design and response differ in length");
    let (xc, yc, means, ym) = center(x, y);
    let svd = xc.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let full_rank = x.nrows() >= x.ncols() && svd.singular_values.iter().all(|&s| s > RANK_TOL * smax.max(f64::MIN_POSITIVE));
    let (beta, fallback) = if full_rank && smax > 0.0 {
        (svd.solve(&yc, 0.0).expect("svd computed with u and v"), false)
    } else {
        let p = x.ncols();
        let gram = xc.transpose() * &xc + DMatrix::identity(p, p) * RIDGE_FALLBACK;
        let rhs = xc.transpose() * &yc;
        let beta = gram.cholesky().map(|c| c.solve(&rhs)).unwrap_or_else(|| DVector::zeros(p));
        (beta, true)
    };
    LinearModel { intercept: intercept(&means, ym, &beta), coef: beta.iter().copied().collect(), info: FitInfo::Ols { ridge_fallback: fallback } }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoConfig {
    pub n_lambda: usize,
    pub lambda_min_ratio: f64,
    pub folds: usize,
    /// Contiguous time blocks; otherwise round-robin assignment.
    pub contiguous_folds: bool,
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for LassoConfig {
    fn default() -> Self {
        Self { n_lambda: 50, lambda_min_ratio: 1e-4, folds: 10, contiguous_folds: true, tol: 1e-10, max_sweeps: 100_000 }
    }
}

/// Coordinate descent on `(1/2n)|y - Xb|^2 + lambda |b|_1` for a centered
/// problem, using the Gram matrix. Warm-starts from `beta`.
struct Gram {
    g: DMatrix<f64>,
    c: DVector<f64>,
}

impl Gram {
    fn new(xc: &DMatrix<f64>, yc: &DVector<f64>) -> Self {
        let n = xc.nrows() as f64;
        Self { g: xc.transpose() * xc / n, c: xc.transpose() * yc / n }
    }

    fn solve(&self, lambda: f64, beta: &mut DVector<f64>, tol: f64, max_sweeps: usize) -> (bool, usize) {
        let p = beta.len();
        let mut gb = &self.g * &*beta;
        let mut sweeps = 0;
        let mut full = true;
        while sweeps < max_sweeps {
            sweeps += 1;
            let mut max_delta: f64 = 0.0;
            for j in 0..p {
                if !full && beta[j] == 0.0 {
                    continue;
                }
                let gjj = self.g[(j, j)];
                if gjj <= 0.0 {
                    continue;
                }
                let rho = self.c[j] - gb[j] + gjj * beta[j];
                let new = soft_threshold(rho, lambda) / gjj;
                let delta = new - beta[j];
                if delta != 0.0 {
                    gb.axpy(delta, &self.g.column(j), 1.0);
                    beta[j] = new;
                    max_delta = max_delta.max(delta.abs() * gjj.sqrt());
                }
            }
            if max_delta < tol {
                if full {
                    return (true, sweeps);
                }
                full = true;
            } else {
                full = false;
            }
        }
        (false, sweeps)
    }
}

pub fn soft_threshold(z: f64, lambda: f64) -> f64 {
    if z > lambda {
        z - lambda
    } else if z < -lambda {
        z + lambda
    } else {
        0.0
    }
}

/// Smallest penalty at which every coefficient is zero.
pub fn lambda_max(x: &DMatrix<f64>, y: &DVector<f64>) -> f64 {
    let (xc, yc, _, _) = center(x, y);
    let n = x.nrows() as f64;
    (xc.transpose() * yc).amax() / n
}

pub fn lambda_grid(lmax: f64, cfg: &LassoConfig) -> Vec<f64> {
    let k = cfg.n_lambda.max(1);
    if k == 1 || lmax <= 0.0 {
        return vec![lmax; k];
    }
    let (hi, lo) = (lmax.ln(), (lmax * cfg.lambda_min_ratio).ln());
    (0..k).map(|i| (hi + (lo - hi) * i as f64 / (k - 1) as f64).exp()).collect()
}

/// LASSO at a single penalty.
pub fn lasso_fit_lambda(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64, cfg: &LassoConfig) -> LinearModel {
    let (xc, yc, means, ym) = center(x, y);
    let gram = Gram::new(&xc, &yc);
    let mut beta = DVector::zeros(x.ncols());
    let (converged, sweeps) = gram.solve(lambda, &mut beta, cfg.tol, cfg.max_sweeps);
    LinearModel {
        intercept: intercept(&means, ym, &beta),
        coef: beta.iter().copied().collect(),
        info: FitInfo::Lasso { lambda, lambdas: vec![lambda], cv_mse: vec![], converged, sweeps },
    }
}

fn fold_of(i: usize, n: usize, folds: usize, contiguous: bool) -> usize {
    if contiguous {
        i * folds / n
    } else {
        i % folds
    }
}

fn select_rows(x: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), x.ncols(), |r, c| x[(rows[r], c)])
}

/// LASSO with the penalty chosen by k-fold cross-validation over a
/// log-spaced grid, then refit on all rows.
pub fn lasso_fit(x: &DMatrix<f64>, y: &DVector<f64>, cfg: &LassoConfig) -> LinearModel {
    let n = x.nrows();
    let lmax = lambda_max(x, y);
    let grid = lambda_grid(lmax, cfg);
    let folds = cfg.folds.clamp(2, n.max(2));
    let mut cv = vec![0.0; grid.len()];
    for k in 0..folds {
        let (train, test): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| fold_of(i, n, folds, cfg.contiguous_folds) != k);
        if train.len() < 2 || test.is_empty() {
            continue;
        }
        let xt = select_rows(x, &train);
        let yt = DVector::from_iterator(train.len(), train.iter().map(|&i| y[i]));
        let (xc, yc, means, ym) = center(&xt, &yt);
        let gram = Gram::new(&xc, &yc);
        let mut beta = DVector::zeros(x.ncols());
        for (g, &lambda) in grid.iter().enumerate() {
            gram.solve(lambda, &mut beta, cfg.tol, cfg.max_sweeps);
            let b0 = intercept(&means, ym, &beta);
            let sse: f64 = test
                .iter()
                .map(|&i| {
                    let pred = b0 + (0..x.ncols()).map(|j| x[(i, j)] * beta[j]).sum::<f64>();
                    (y[i] - pred).powi(2)
                })
                .sum();
            cv[g] += sse / n as f64;
        }
    }
    let best = cv.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).map_or(0, |(i, _)| i);

    let (xc, yc, means, ym) = center(x, y);
    let gram = Gram::new(&xc, &yc);
    let mut beta = DVector::zeros(x.ncols());
    let mut status = (true, 0);
    for &lambda in &grid[..=best] {
        status = gram.solve(lambda, &mut beta, cfg.tol, cfg.max_sweeps);
    }
    LinearModel {
        intercept: intercept(&means, ym, &beta),
        coef: beta.iter().copied().collect(),
        info: FitInfo::Lasso { lambda: grid[best], lambdas: grid, cv_mse: cv, converged: status.0, sweeps: status.1 },
    }
}

/// Largest KKT violation of a LASSO solution at penalty `lambda`:
/// `|x_j' r| / n <= lambda` for zero coefficients and `x_j' r / n = lambda
/// sign(b_j)` for active ones.
pub fn lasso_kkt_violation(x: &DMatrix<f64>, y: &DVector<f64>, model: &LinearModel, lambda: f64) -> f64 {
    let (xc, yc, _, _) = center(x, y);
    let beta = DVector::from_column_slice(&model.coef);
    let r = yc - &xc * &beta;
    let n = x.nrows() as f64;
    let grad = xc.transpose() * r / n;
    grad.iter()
        .zip(beta.iter())
        .map(|(&g, &b)| if b == 0.0 { (g.abs() - lambda).max(0.0) } else { (g - lambda * b.signum()).abs() })
        .fold(0.0, f64::max)
}

/// Eigenvalues of the sample covariance of `x`, descending, with the
/// matching eigenvectors as columns.
fn principal_axes(xc: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = xc.nrows().max(2) as f64;
    let cov = xc.transpose() * xc / (n - 1.0);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let vals = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let vecs = DMatrix::from_fn(xc.ncols(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
    (vals, vecs)
}

/// Number of leading components whose cumulative explained variance first
/// reaches `target`, clamped to the numerical rank.
pub fn components_for(eigenvalues: &[f64], target: f64) -> usize {
    let total: f64 = eigenvalues.iter().sum();
    if total <= 0.0 {
        return 0;
    }
    let rank = eigenvalues.iter().filter(|&&v| v > 1e-12 * eigenvalues[0]).count();
    let mut acc = 0.0;
    for (i, v) in eigenvalues.iter().enumerate() {
        acc += v;
        if acc / total >= target - 1e-12 {
            return (i + 1).min(rank).max(1);
        }
    }
    rank.max(1)
}

/// Principal-component regression on the fewest components explaining at
/// least `variance_target` of the variance.
pub fn pcr_fit(x: &DMatrix<f64>, y: &DVector<f64>, variance_target: f64) -> LinearModel {
    let (xc, _, _, _) = center(x, y);
    let (vals, _) = principal_axes(&xc);
    let m = components_for(&vals, variance_target);
    pcr_fit_components(x, y, m)
}

/// PCR on exactly `m` leading components.
pub fn pcr_fit_components(x: &DMatrix<f64>, y: &DVector<f64>, m: usize) -> LinearModel {
    let (xc, yc, means, ym) = center(x, y);
    let (vals, vecs) = principal_axes(&xc);
    let total: f64 = vals.iter().sum();
    let mut beta = DVector::zeros(x.ncols());
    for k in 0..m.min(vals.len()) {
        let v = vecs.column(k);
        let z = &xc * v;
        let zz = z.dot(&z);
        if zz > 0.0 {
            beta.axpy(z.dot(&yc) / zz, &v, 1.0);
        }
    }
    let explained = if total > 0.0 { vals[..m.min(vals.len())].iter().sum::<f64>() / total } else { 0.0 };
    LinearModel {
        intercept: intercept(&means, ym, &beta),
        coef: beta.iter().copied().collect(),
        info: FitInfo::Pcr { components: m, explained },
    }
}

/// Cumulative explained-variance ratios of the principal components of `x`.
pub fn explained_variance(x: &DMatrix<f64>) -> Vec<f64> {
    let y = DVector::zeros(x.nrows());
    let (xc, _, _, _) = center(x, &y);
    let (vals, _) = principal_axes(&xc);
    let total: f64 = vals.iter().sum();
    let mut acc = 0.0;
    vals.iter()
        .map(|v| {
            acc += v;
            if total > 0.0 { acc / total } else { 0.0 }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub feature: String,
    pub median_rank: f64,
    pub nonzero_count: usize,
}

/// Ranks of `|coef|` in ascending order (1 = smallest); ties share the
/// lowest rank of their group, so all-zero coefficients rank 1.
pub fn abs_ranks(coef: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..coef.len()).collect();
    idx.sort_by(|&a, &b| coef[a].abs().total_cmp(&coef[b].abs()));
    let mut ranks = vec![0.0; coef.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && coef[idx[j + 1]].abs() == coef[idx[i]].abs() {
            j += 1;
        }
        for &k in &idx[i..=j] {
            ranks[k] = (i + 1) as f64;
        }
        i = j + 1;
    }
    ranks
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Median rank and nonzero count per feature across fitted models, sorted by
/// median rank (highest first, ties by name order of `names`).
pub fn feature_importance(models: &[LinearModel], names: &[String]) -> Vec<FeatureImportance> {
    assert!(!models.is_empty(), "feature importance needs at least one model");
    let ranks: Vec<Vec<f64>> = models.iter().map(|m| abs_ranks(&m.coef)).collect();
    let mut out: Vec<FeatureImportance> = names
        .iter()
        .enumerate()
        .map(|(j, name)| FeatureImportance {
            feature: name.clone(),
            median_rank: median(ranks.iter().map(|r| r[j]).collect()),
            nonzero_count: models.iter().filter(|m| m.coef[j] != 0.0).count(),
        })
        .collect();
    out.sort_by(|a, b| b.median_rank.total_cmp(&a.median_rank));
    out
}
