//! Fit OLS, cross-validated LASSO and PCR on a sparse synthetic regression
//! and rank features by LASSO coefficient size across bootstrap-like splits.
//!
//! cargo run --release --example linear_baselines

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use termnet::baselines::{feature_importance, lasso_fit, ols_fit, pcr_fit, FitInfo, LassoConfig};

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (n, p) = (400, 12);
    let x: DMatrix<f64> = DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng));
    let truth = [1.5, -2.0, 0.0, 0.0, 0.7, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.3];
    let y = DVector::from_fn(n, |i, _| {
        let noise: f64 = StandardNormal.sample(&mut rng);
        (0..p).map(|j| x[(i, j)] * truth[j]).sum::<f64>() + 0.5 * noise
    });

    let ols = ols_fit(&x, &y);
    let lasso = lasso_fit(&x, &y, &LassoConfig::default());
    let pcr = pcr_fit(&x, &y, 0.9);
    println!("{:>4} {:>7} {:>7} {:>7} {:>7}", "j", "truth", "OLS", "LASSO", "PCR");
    for j in 0..p {
        println!("{j:>4} {:>7.3} {:>7.3} {:>7.3} {:>7.3}", truth[j], ols.coef[j], lasso.coef[j], pcr.coef[j]);
    }
    if let FitInfo::Lasso { lambda, .. } = lasso.info {
        println!("LASSO lambda chosen by 10-fold CV: {lambda:.4e}");
    }

    let names: Vec<String> = (0..p).map(|j| format!("x{j}")).collect();
    let models: Vec<_> = (0..5)
        .map(|k| {
            let rows: Vec<usize> = (0..n).filter(|i| i % 5 != k).collect();
            let xs = DMatrix::from_fn(rows.len(), p, |r, c| x[(rows[r], c)]);
            let ys = DVector::from_fn(rows.len(), |r, _| y[rows[r]]);
            lasso_fit(&xs, &ys, &LassoConfig::default())
        })
        .collect();
    for f in feature_importance(&models, &names).iter().take(5) {
        println!("{:<4} median rank {:>5.1} nonzero in {} fits", f.feature, f.median_rank, f.nonzero_count);
    }
}
