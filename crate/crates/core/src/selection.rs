//! k-fold cross-validation of the ridge weight.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{MixedDataset, ParamMatrix};
use crate::optimizer::{fit, FitConfig};
use crate::pseudolikelihood::node_moments;

pub const DEFAULT_FOLDS: usize = 10;
pub const DEFAULT_GRID_MIN: f64 = 1e-10;
pub const DEFAULT_GRID_MAX: f64 = 1e2;
pub const DEFAULT_GRID_POINTS: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub lambda_grid: Vec<f64>,
    pub mean_mspe: Vec<f64>,
    pub sd_mspe: Vec<f64>,
    pub lambda_opt: f64,
    pub folds: usize,
    pub seed: u64,
    /// Largest iteration count among the fold fits.
    pub max_iterations: usize,
    pub all_converged: bool,
}

/// `points` log-spaced values from `min` to `max` inclusive.
pub fn log_grid(min: f64, max: f64, points: usize) -> Result<Vec<f64>> {
    if !(min > 0.0) || !(max >= min) || points == 0 {
        return Err(Error::Parameter(format!(
            "grid needs 0 < min <= max and at least one point, got [{min}, {max}] x {points}"
        )));
    }
    if points == 1 {
        return Ok(vec![min]);
    }
    let (lo, hi) = (min.log10(), max.log10());
    Ok((0..points)
        .map(|k| {
            if k == points - 1 {
                max
            } else {
                10f64.powf(lo + (hi - lo) * k as f64 / (points - 1) as f64)
            }
        })
        .collect())
}

pub fn default_grid() -> Vec<f64> {
    log_grid(DEFAULT_GRID_MIN, DEFAULT_GRID_MAX, DEFAULT_GRID_POINTS).unwrap()
}

/// Seeded shuffle of `0..n` cut into `k` groups whose sizes differ by at most one.
pub fn fold_split(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 || k > n {
        return Err(Error::Parameter(format!(
            "fold count must satisfy 2 <= k <= n, got k = {k}, n = {n}"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha20Rng::seed_from_u64(seed));
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        let mut fold = idx[start..start + len].to_vec();
        fold.sort_unstable();
        folds.push(fold);
        start += len;
    }
    Ok(folds)
}

/// Mean squared difference between observations and their node-conditional means.
pub fn mspe(theta: &ParamMatrix, test: &MixedDataset) -> Result<f64> {
    let m = node_moments(theta, test)?;
    let resid = test.values() - &m.mean;
    Ok(resid.norm_squared() / (test.n() * test.p()) as f64)
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Scores every grid value on the same folds; fits warm-start along ascending lambda within a fold.
pub fn cross_validate(
    data: &MixedDataset,
    grid: &[f64],
    k: usize,
    seed: u64,
    fit_config: &FitConfig,
) -> Result<CvResult> {
    if grid.is_empty() || grid.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
        return Err(Error::Parameter(
            "lambda grid must be nonempty with finite positive values".into(),
        ));
    }
    let mut lambda_grid = grid.to_vec();
    lambda_grid.sort_by(f64::total_cmp);
    lambda_grid.dedup();
    let folds = fold_split(data.n(), k, seed)?;

    let per_fold: Vec<Vec<(f64, usize, bool)>> = folds
        .par_iter()
        .enumerate()
        .map(|(f, test_idx)| {
            let train_idx: Vec<usize> = (0..data.n())
                .filter(|i| test_idx.binary_search(i).is_err())
                .collect();
            let train = data.select_rows(&train_idx);
            let test = data.select_rows(test_idx);
            let mut warm = fit_config.initial_theta.clone();
            let mut scores = Vec::with_capacity(lambda_grid.len());
            for &lambda in &lambda_grid {
                let cfg = FitConfig {
                    lambda,
                    initial_theta: warm.take(),
                    ..fit_config.clone()
                };
                let wrap = |e: Error| Error::Fold {
                    lambda,
                    fold: f,
                    source: Box::new(e),
                };
                let res = fit(&train, &cfg).map_err(wrap)?;
                let score = mspe(&res.theta_hat, &test).map_err(wrap)?;
                scores.push((score, res.iterations, res.converged));
                warm = Some(res.theta_hat);
            }
            Ok(scores)
        })
        .collect::<Result<_>>()?;

    let mut mean_mspe = Vec::with_capacity(lambda_grid.len());
    let mut sd_mspe = Vec::with_capacity(lambda_grid.len());
    for l in 0..lambda_grid.len() {
        let col: Vec<f64> = per_fold.iter().map(|s| s[l].0).collect();
        let (m, s) = mean_sd(&col);
        mean_mspe.push(m);
        sd_mspe.push(s);
    }
    let best = (0..lambda_grid.len())
        .fold(0, |b, l| if mean_mspe[l] < mean_mspe[b] { l } else { b });
    let max_iterations = per_fold.iter().flatten().map(|s| s.1).max().unwrap_or(0);
    let all_converged = per_fold.iter().flatten().all(|s| s.2);
    Ok(CvResult {
        max_iterations,
        all_converged,
        lambda_opt: lambda_grid[best],
        lambda_grid,
        mean_mspe,
        sd_mspe,
        folds: k,
        seed,
    })
}
