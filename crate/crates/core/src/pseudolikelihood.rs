//! Penalized pseudo-log-likelihood, its block derivatives and the stopping-criterion norm.
//!
//! With residuals `r_ij = y_ij - D'_j(eta_ij)` and weights `w_ij = D''_j(eta_ij)`, the
//! derivative of the average pseudo-log-likelihood with respect to a unique off-diagonal
//! coordinate `(a, b)` collects one term from each of the two node conditionals involved:
//!
//! ```text
//! (1/n) sum_i [ r_ia y_ib + r_ib y_ia ]
//! ```
//!
//! The ridge term `lambda/2 ||Theta||_F^2` counts each off-diagonal pair twice.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{
    constraint_penalty, constraint_penalty_block_hessian, MixedDataset, ParamMatrix,
    DEFAULT_BARRIER_BETA,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenaltyConfig {
    pub lambda: f64,
    pub penalize_diagonal: bool,
    pub barrier_beta: f64,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        PenaltyConfig {
            lambda: 0.0,
            penalize_diagonal: false,
            barrier_beta: DEFAULT_BARRIER_BETA,
        }
    }
}

impl PenaltyConfig {
    pub fn ridge(lambda: f64) -> Self {
        PenaltyConfig {
            lambda,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::Parameter(format!(
                "lambda must be finite and >= 0, got {}",
                self.lambda
            )));
        }
        if !(self.barrier_beta > 0.0) {
            return Err(Error::Parameter(format!(
                "barrier beta must be > 0, got {}",
                self.barrier_beta
            )));
        }
        Ok(())
    }

    /// `lambda/2 * ||Theta||_F^2`, diagonal included only when penalized.
    pub fn ridge_value(&self, theta: &ParamMatrix) -> f64 {
        let p = theta.p();
        let mut sq = 0.0;
        for a in 0..p {
            for b in 0..p {
                if a != b || self.penalize_diagonal {
                    sq += theta.get(a, b).powi(2);
                }
            }
        }
        0.5 * self.lambda * sq
    }
}

/// Gradient and Hessian of the penalized objective over the `p` coordinates of block `j`.
///
/// Index `k` is the unique coordinate `(j, k)`; `k == j` is the diagonal entry.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockDerivatives {
    pub j: usize,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
    /// `false` at structural-zero coordinates.
    pub free: Vec<bool>,
}

/// Natural parameters and conditional moments for every cell of the dataset.
pub(crate) struct NodeMoments {
    pub eta: DMatrix<f64>,
    pub logpartition: DMatrix<f64>,
    pub mean: DMatrix<f64>,
    pub variance: DMatrix<f64>,
}

fn check_dims(theta: &ParamMatrix, data: &MixedDataset) -> Result<()> {
    if theta.families() != data.families() {
        return Err(Error::Dimension(format!(
            "parameter families {:?} do not match dataset families {:?}",
            theta.families(),
            data.families()
        )));
    }
    Ok(())
}

/// `eta = Y * offdiag(Theta) + 1 diag(Theta)^T`.
pub(crate) fn natural_parameters(theta: &ParamMatrix, values: &DMatrix<f64>) -> DMatrix<f64> {
    let p = theta.p();
    let mut off = theta.entries().clone();
    off.fill_diagonal(0.0);
    let mut eta = values * off;
    for j in 0..p {
        let d = theta.get(j, j);
        eta.column_mut(j).add_scalar_mut(d);
    }
    eta
}

pub(crate) fn node_moments(theta: &ParamMatrix, data: &MixedDataset) -> Result<NodeMoments> {
    check_dims(theta, data)?;
    let (n, p) = (data.n(), data.p());
    let eta = natural_parameters(theta, data.values());
    let mut logpartition = DMatrix::zeros(n, p);
    let mut mean = DMatrix::zeros(n, p);
    let mut variance = DMatrix::zeros(n, p);
    for (j, fam) in data.families().iter().enumerate() {
        for i in 0..n {
            let e = eta[(i, j)];
            if !fam.eta_in_domain(e) {
                return Err(Error::Evaluation {
                    observation: i,
                    variate: j,
                    reason: format!("natural parameter {e} outside the {fam} domain"),
                });
            }
            let m = fam.functions_unchecked(e);
            logpartition[(i, j)] = m.logpartition;
            mean[(i, j)] = m.mean;
            variance[(i, j)] = m.variance;
        }
    }
    Ok(NodeMoments {
        eta,
        logpartition,
        mean,
        variance,
    })
}

/// Average over observations of the summed node-conditional log-likelihoods.
pub fn pseudo_loglik(theta: &ParamMatrix, data: &MixedDataset) -> Result<f64> {
    let m = node_moments(theta, data)?;
    Ok(loglik_from_moments(&m, data))
}

fn loglik_from_moments(m: &NodeMoments, data: &MixedDataset) -> f64 {
    let (n, p) = (data.n(), data.p());
    let mut total = 0.0;
    for j in 0..p {
        let fam = data.families()[j];
        for i in 0..n {
            let y = data.value(i, j);
            total += y * m.eta[(i, j)] - m.logpartition[(i, j)]
                + fam.log_base_measure_unchecked(y);
        }
    }
    total / n as f64
}

pub fn penalized_pseudo_loglik(
    theta: &ParamMatrix,
    data: &MixedDataset,
    pen: &PenaltyConfig,
) -> Result<f64> {
    pen.validate()?;
    let pl = pseudo_loglik(theta, data)?;
    Ok(pl - pen.ridge_value(theta) - constraint_penalty(theta, pen.barrier_beta).value)
}

/// Moments plus the full unique-coordinate gradient at one iterate.
pub(crate) struct Evaluation {
    pub moments: NodeMoments,
    /// Symmetric; entry `(a, b)` is the derivative with respect to unique coordinate `(a, b)`.
    pub gradient: DMatrix<f64>,
    pub norm: f64,
}

pub(crate) fn evaluate(
    theta: &ParamMatrix,
    data: &MixedDataset,
    pen: &PenaltyConfig,
) -> Result<Evaluation> {
    let moments = node_moments(theta, data)?;
    let gradient = gradient_from_moments(theta, data, pen, &moments);
    let mut sq = 0.0;
    for (a, b) in theta.free_coordinates() {
        sq += gradient[(a, b)].powi(2);
    }
    Ok(Evaluation {
        moments,
        gradient,
        norm: sq.sqrt(),
    })
}

fn gradient_from_moments(
    theta: &ParamMatrix,
    data: &MixedDataset,
    pen: &PenaltyConfig,
    m: &NodeMoments,
) -> DMatrix<f64> {
    let p = theta.p();
    let inv_n = 1.0 / data.n() as f64;
    let resid = data.values() - &m.mean;
    let cross = cross_products(&resid, data.values());
    let barrier = constraint_penalty(theta, pen.barrier_beta).gradient;
    let mut g = DMatrix::zeros(p, p);
    for a in 0..p {
        let ridge_diag = if pen.penalize_diagonal {
            pen.lambda * theta.get(a, a)
        } else {
            0.0
        };
        g[(a, a)] = resid.column(a).sum() * inv_n - ridge_diag - barrier[(a, a)];
        for b in (a + 1)..p {
            if !theta.is_free(a, b) {
                continue;
            }
            let v = (cross[(a, b)] + cross[(b, a)]) * inv_n
                - 2.0 * pen.lambda * theta.get(a, b)
                - barrier[(a, b)];
            g[(a, b)] = v;
            g[(b, a)] = v;
        }
    }
    g
}

/// Per-iteration products shared by all block Hessians.
pub(crate) struct HessianInputs {
    /// `S[(a, j)] = sum_i w_ia y_ij^2`.
    pub weighted_squares: DMatrix<f64>,
}

pub(crate) fn hessian_inputs(data: &MixedDataset, m: &NodeMoments) -> HessianInputs {
    let ysq = data.values().component_mul(data.values());
    HessianInputs {
        weighted_squares: cross_products(&m.variance, &ysq),
    }
}

/// Four fixed accumulator lanes so the loop vectorizes; the summation order never changes.
fn dot(x: &[f64], y: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (xc, yc) = (x.chunks_exact(4), y.chunks_exact(4));
    let tail: f64 = xc.remainder().iter().zip(yc.remainder()).map(|(a, b)| a * b).sum();
    for (a, b) in xc.zip(yc) {
        for l in 0..4 {
            acc[l] += a[l] * b[l];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `X^T Y` by column dot products, which beats the generic transpose product at these shapes.
fn cross_products(x: &DMatrix<f64>, y: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(x.ncols(), y.ncols(), |a, b| {
        dot(x.column(a).as_slice(), y.column(b).as_slice())
    })
}

pub(crate) fn block_from_evaluation(
    theta: &ParamMatrix,
    data: &MixedDataset,
    pen: &PenaltyConfig,
    eval: &Evaluation,
    inputs: &HessianInputs,
    j: usize,
) -> BlockDerivatives {
    let (n, p) = (data.n(), data.p());
    let inv_n = 1.0 / n as f64;
    let free: Vec<bool> = (0..p).map(|k| theta.is_free(j, k)).collect();

    // Gram matrix of node j's weighted design: the other variates plus an intercept in column j
    let w = eval.moments.variance.column(j);
    let w = w.as_slice();
    let mut gram = DMatrix::zeros(p, p);
    let mut weighted = vec![0.0; n];
    for a in (0..p).filter(|&a| free[a]) {
        if a == j {
            weighted.copy_from_slice(w);
        } else {
            let ya = data.values().column(a);
            for (dst, (wi, yi)) in weighted.iter_mut().zip(w.iter().zip(ya.as_slice())) {
                *dst = wi * yi;
            }
        }
        for b in (a..p).filter(|&b| free[b]) {
            let v = if b == j {
                weighted.iter().sum()
            } else {
                dot(&weighted, data.values().column(b).as_slice())
            };
            gram[(a, b)] = v;
            gram[(b, a)] = v;
        }
    }

    let barrier = constraint_penalty_block_hessian(theta, pen.barrier_beta, j);
    let mut hessian = DMatrix::zeros(p, p);
    for a in 0..p {
        if !free[a] {
            continue;
        }
        for b in 0..p {
            if !free[b] {
                continue;
            }
            hessian[(a, b)] = -gram[(a, b)] * inv_n - barrier[(a, b)];
        }
        if a == j {
            if pen.penalize_diagonal {
                hessian[(a, a)] -= pen.lambda;
            }
        } else {
            hessian[(a, a)] -= inputs.weighted_squares[(a, j)] * inv_n + 2.0 * pen.lambda;
        }
    }
    // exact symmetry; the barrier block may carry rounding asymmetry
    for a in 0..p {
        for b in (a + 1)..p {
            let v = 0.5 * (hessian[(a, b)] + hessian[(b, a)]);
            hessian[(a, b)] = v;
            hessian[(b, a)] = v;
        }
    }

    let gradient = DVector::from_fn(p, |k, _| if free[k] { eval.gradient[(j, k)] } else { 0.0 });
    BlockDerivatives {
        j,
        gradient,
        hessian,
        free,
    }
}

/// All `p` blocks at one iterate, computed concurrently and returned in block order.
pub(crate) fn all_blocks(
    theta: &ParamMatrix,
    data: &MixedDataset,
    pen: &PenaltyConfig,
    eval: &Evaluation,
) -> Vec<BlockDerivatives> {
    let inputs = hessian_inputs(data, &eval.moments);
    (0..theta.p())
        .into_par_iter()
        .map(|j| block_from_evaluation(theta, data, pen, eval, &inputs, j))
        .collect()
}

pub fn block_derivatives(
    theta: &ParamMatrix,
    data: &MixedDataset,
    pen: &PenaltyConfig,
    j: usize,
) -> Result<BlockDerivatives> {
    pen.validate()?;
    if j >= theta.p() {
        return Err(Error::Dimension(format!(
            "block {j} out of range for p = {}",
            theta.p()
        )));
    }
    let eval = evaluate(theta, data, pen)?;
    let inputs = hessian_inputs(data, &eval.moments);
    Ok(block_from_evaluation(theta, data, pen, &eval, &inputs, j))
}

/// Gradient of the penalized objective over unique coordinates, as a symmetric table.
pub fn full_gradient(
    theta: &ParamMatrix,
    data: &MixedDataset,
    pen: &PenaltyConfig,
) -> Result<DMatrix<f64>> {
    pen.validate()?;
    Ok(evaluate(theta, data, pen)?.gradient)
}

/// Euclidean norm of the gradient over the free unique coordinates.
pub fn full_gradient_norm(
    theta: &ParamMatrix,
    data: &MixedDataset,
    pen: &PenaltyConfig,
) -> Result<f64> {
    pen.validate()?;
    Ok(evaluate(theta, data, pen)?.norm)
}
