//! Parallel block coordinate Newton-Raphson.
//!
//! Each iteration takes one Newton step per block `j` on the `p` coordinates
//! `(j, 0..p)` while all other coordinates are held fixed, embeds the steps into
//! the unique-coordinate vector, and moves by `1/alpha` times their sum. An
//! off-diagonal coordinate `(j, k)` therefore receives contributions from blocks
//! `j` and `k`.
//!
//! Block computations run on the current rayon pool. The aggregation is done in
//! block order after all blocks finish, so the floating-point result does not
//! depend on the number of workers.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{MixedDataset, ParamMatrix, DEFAULT_BARRIER_BETA};
use crate::pseudolikelihood::{all_blocks, evaluate, BlockDerivatives, PenaltyConfig};

/// Doublings of the multiplier allowed within one iteration before giving up.
const MAX_DOUBLINGS: usize = 60;
/// Floor on the default iteration cap; with alpha >= 3 tiny models still need dozens of steps.
const MIN_DEFAULT_ITERATIONS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlphaPolicy {
    Fixed,
    AdaptiveDoubling,
}

impl std::str::FromStr for AlphaPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(AlphaPolicy::Fixed),
            "adaptive-doubling" | "adaptive" => Ok(AlphaPolicy::AdaptiveDoubling),
            other => Err(Error::Parameter(format!("unknown alpha policy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub lambda: f64,
    pub tau: f64,
    /// Step multiplier; `None` means `p`.
    pub alpha0: Option<f64>,
    pub alpha_policy: AlphaPolicy,
    /// `None` means `50 p^3`.
    pub max_iterations: Option<usize>,
    pub initial_theta: Option<ParamMatrix>,
    pub penalize_diagonal: bool,
    pub barrier_beta: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            lambda: 0.0,
            tau: 1e-10,
            alpha0: None,
            alpha_policy: AlphaPolicy::Fixed,
            max_iterations: None,
            initial_theta: None,
            penalize_diagonal: false,
            barrier_beta: DEFAULT_BARRIER_BETA,
        }
    }
}

impl FitConfig {
    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn penalty(&self) -> PenaltyConfig {
        PenaltyConfig {
            lambda: self.lambda,
            penalize_diagonal: self.penalize_diagonal,
            barrier_beta: self.barrier_beta,
        }
    }

    pub fn alpha_for(&self, p: usize) -> f64 {
        self.alpha0.unwrap_or((p as f64).max(3.0))
    }

    pub fn max_iterations_for(&self, p: usize) -> usize {
        self.max_iterations.unwrap_or((50 * p * p * p).max(MIN_DEFAULT_ITERATIONS)).max(1)
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        self.penalty().validate()?;
        if !(self.tau > 0.0) {
            return Err(Error::Parameter(format!("tau must be > 0, got {}", self.tau)));
        }
        let alpha = self.alpha_for(p);
        if !(alpha >= 3.0) || !alpha.is_finite() {
            return Err(Error::Parameter(format!("alpha must be >= 3, got {alpha}")));
        }
        if self.max_iterations == Some(0) {
            return Err(Error::Parameter("max_iterations must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub theta_hat: ParamMatrix,
    pub iterations: usize,
    /// Gradient norm after each accepted update.
    pub error_trace: Vec<f64>,
    /// Multiplier used for each accepted update.
    pub alpha_trace: Vec<f64>,
    pub converged: bool,
}

fn solve_negative_definite(h: &DMatrix<f64>, g: &DVector<f64>) -> Option<DVector<f64>> {
    let neg = -h;
    if let Some(chol) = neg.clone().cholesky() {
        let x = chol.solve(g);
        if x.iter().all(|v| v.is_finite()) {
            return Some(x);
        }
    }
    let x = h.clone().lu().solve(g)?;
    let x = -x;
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Newton step `delta` solving `H delta = -g` on the free coordinates of the block.
pub fn block_newton_step(bd: &BlockDerivatives) -> Result<DVector<f64>> {
    let p = bd.gradient.len();
    let mut delta = DVector::zeros(p);
    if bd.gradient.iter().all(|&v| v == 0.0) {
        return Ok(delta);
    }
    let idx: Vec<usize> = (0..p).filter(|&k| bd.free[k]).collect();
    let m = idx.len();
    let h = DMatrix::from_fn(m, m, |a, b| bd.hessian[(idx[a], idx[b])]);
    let g = DVector::from_fn(m, |a, _| bd.gradient[idx[a]]);

    let step = match solve_negative_definite(&h, &g) {
        Some(s) => s,
        None => {
            let eps = 1e-8 * (h.trace().abs() / p as f64).max(1.0);
            let jittered = &h - DMatrix::identity(m, m) * eps;
            solve_negative_definite(&jittered, &g).ok_or(Error::SingularBlock { block: bd.j })?
        }
    };
    for (a, &k) in idx.iter().enumerate() {
        delta[k] = step[a];
    }
    Ok(delta)
}

/// `theta + (1/alpha) * sum_j embed(delta_j)`.
pub fn aggregate_update(theta: &ParamMatrix, deltas: &[DVector<f64>], alpha: f64) -> ParamMatrix {
    let p = theta.p();
    let mut out = theta.clone();
    for a in 0..p {
        out.set_unchecked(a, a, theta.get(a, a) + deltas[a][a] / alpha);
        for b in (a + 1)..p {
            if theta.is_free(a, b) {
                let step = (deltas[a][b] + deltas[b][a]) / alpha;
                out.set_unchecked(a, b, theta.get(a, b) + step);
            }
        }
    }
    out
}

pub fn fit(data: &MixedDataset, config: &FitConfig) -> Result<FitResult> {
    let p = data.p();
    config.validate(p)?;
    let pen = config.penalty();
    let max_iter = config.max_iterations_for(p);

    let mut theta = match &config.initial_theta {
        Some(t) => {
            if t.families() != data.families() {
                return Err(Error::Dimension(
                    "initial theta families do not match the dataset".into(),
                ));
            }
            t.clone()
        }
        None => ParamMatrix::initial(data.families().to_vec()),
    };
    theta = theta.with_names(data.names().to_vec())?;

    let mut eval = evaluate(&theta, data, &pen)?;
    let mut alpha = config.alpha_for(p);
    let mut error_trace = Vec::new();
    let mut alpha_trace = Vec::new();
    let mut converged = false;

    for k in 0..max_iter {
        let blocks = all_blocks(&theta, data, &pen, &eval);
        let deltas: Vec<DVector<f64>> = blocks
            .par_iter()
            .map(block_newton_step)
            .collect::<Result<Vec<_>>>()?;

        // the fixed policy only backs off for this step when it leaves the domain
        let mut step_alpha = alpha;
        let mut attempts = 0;
        let (candidate, cand_eval) = loop {
            if attempts > MAX_DOUBLINGS {
                return Err(Error::Stalled {
                    iteration: k,
                    alpha: step_alpha,
                });
            }
            attempts += 1;
            let candidate = aggregate_update(&theta, &deltas, step_alpha);
            match evaluate(&candidate, data, &pen) {
                Ok(e) if !e.norm.is_finite() => {
                    return Err(Error::Divergence {
                        iteration: k,
                        reason: format!("non-finite gradient norm at theta = {:?}", candidate.entries()),
                    });
                }
                Ok(e) => {
                    if config.alpha_policy == AlphaPolicy::AdaptiveDoubling && e.norm >= eval.norm {
                        alpha *= 2.0;
                        step_alpha = alpha;
                        continue;
                    }
                    break (candidate, e);
                }
                Err(Error::Evaluation { .. }) => {
                    if config.alpha_policy == AlphaPolicy::AdaptiveDoubling {
                        alpha *= 2.0;
                        step_alpha = alpha;
                    } else {
                        step_alpha *= 2.0;
                    }
                }
                Err(e) => return Err(e),
            }
        };

        theta = candidate;
        eval = cand_eval;
        error_trace.push(eval.norm);
        alpha_trace.push(step_alpha);
        if eval.norm <= config.tau {
            converged = true;
            break;
        }
    }

    Ok(FitResult {
        theta_hat: theta,
        iterations: error_trace.len(),
        error_trace,
        alpha_trace,
        converged,
    })
}
