//! Simulation designs and runners: the mixed-type lattice, the banded Gaussian
//! graphical model, edge recovery and the node-wise regression baseline.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{MixedDataset, ParamMatrix, VariateFamily};
use crate::optimizer::{fit, FitConfig};
use crate::sampler::{gibbs_chain, ChainConfig, DEFAULT_BURN_IN, DEFAULT_THINNING};
use crate::selection::{cross_validate, default_grid, DEFAULT_FOLDS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    pub weight: f64,
}

/// Undirected weighted edges, each stored with `a < b`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EdgeSet {
    pub edges: Vec<Edge>,
}

impl EdgeSet {
    pub fn new(edges: Vec<Edge>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        let mut out = Vec::with_capacity(edges.len());
        for e in edges {
            if e.a == e.b {
                return Err(Error::Parameter(format!("self-loop at node {}", e.a)));
            }
            let (a, b) = if e.a < e.b { (e.a, e.b) } else { (e.b, e.a) };
            if !seen.insert((a, b)) {
                return Err(Error::Parameter(format!("duplicate edge ({a}, {b})")));
            }
            out.push(Edge {
                a,
                b,
                weight: e.weight,
            });
        }
        Ok(EdgeSet { edges: out })
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn contains(&self, a: usize, b: usize) -> bool {
        let (a, b) = if a < b { (a, b) } else { (b, a) };
        self.edges.iter().any(|e| e.a == a && e.b == b)
    }

    /// Number of unordered pairs present in both sets, ignoring weights.
    pub fn overlap(&self, other: &EdgeSet) -> usize {
        self.edges.iter().filter(|e| other.contains(e.a, e.b)).count()
    }
}

pub const LATTICE_SIDE: usize = 4;
pub const LATTICE_EDGE_WEIGHT: f64 = -0.2;

/// Family occupying each column of the 4x4 lattice, left to right.
const LATTICE_COLUMNS: [VariateFamily; 4] = [
    VariateFamily::Gaussian,
    VariateFamily::Bernoulli,
    VariateFamily::Poisson,
    VariateFamily::Exponential,
];

fn lattice_node(row: usize, col: usize) -> usize {
    // variates are ordered Bernoulli, Gaussian, Poisson, exponential
    let group = match LATTICE_COLUMNS[col] {
        VariateFamily::Bernoulli => 0,
        VariateFamily::Gaussian => 1,
        VariateFamily::Poisson => 2,
        VariateFamily::Exponential => 3,
    };
    group * LATTICE_SIDE + row
}

/// The 16-node mixed lattice with its 36 edges.
///
/// Nodes sit on a 4x4 grid with one family per column: Gaussian, Bernoulli,
/// Poisson, exponential. Edges join vertical and horizontal neighbours, plus
/// both diagonals inside the Gaussian-Bernoulli and Poisson-exponential column
/// pairs. Gaussian nodes are never adjacent to Poisson or exponential nodes.
/// All edges weigh -0.2; the diagonal is -0.2 for Bernoulli and exponential
/// variates and 2 for Gaussian and Poisson variates.
pub fn lattice_theta() -> (ParamMatrix, EdgeSet) {
    use VariateFamily::*;
    let side = LATTICE_SIDE;
    let families: Vec<VariateFamily> = [Bernoulli, Gaussian, Poisson, Exponential]
        .iter()
        .flat_map(|&f| std::iter::repeat(f).take(side))
        .collect();
    let names: Vec<String> = families
        .iter()
        .enumerate()
        .map(|(j, f)| format!("{}{}", f.tag()[..1].to_ascii_uppercase(), j % side + 1))
        .collect();

    let mut pairs = Vec::new();
    for r in 0..side {
        for c in 0..side {
            if r + 1 < side {
                pairs.push((lattice_node(r, c), lattice_node(r + 1, c)));
            }
            if c + 1 < side {
                pairs.push((lattice_node(r, c), lattice_node(r, c + 1)));
                if r + 1 < side && c % 2 == 0 {
                    pairs.push((lattice_node(r, c), lattice_node(r + 1, c + 1)));
                    pairs.push((lattice_node(r + 1, c), lattice_node(r, c + 1)));
                }
            }
        }
    }

    let mut theta = ParamMatrix::zeros(families.clone());
    for (j, f) in families.iter().enumerate() {
        let d = match f {
            Bernoulli | Exponential => -0.2,
            Gaussian | Poisson => 2.0,
        };
        theta.set_unchecked(j, j, d);
    }
    let mut edges = Vec::with_capacity(pairs.len());
    for &(a, b) in &pairs {
        theta
            .set(a, b, LATTICE_EDGE_WEIGHT)
            .expect("lattice edges avoid structural zeros");
        edges.push(Edge {
            a,
            b,
            weight: LATTICE_EDGE_WEIGHT,
        });
    }
    let theta = theta.with_names(names).expect("one name per node");
    (theta, EdgeSet::new(edges).expect("lattice edges are distinct"))
}

/// Unit diagonal with bands 0.5, 0.2 and 0.1 at offsets 1, 2 and 3.
pub fn banded_precision(p: usize) -> Result<DMatrix<f64>> {
    if p < 4 {
        return Err(Error::Parameter(format!(
            "banded precision needs p >= 4, got {p}"
        )));
    }
    Ok(DMatrix::from_fn(p, p, |a, b| match a.abs_diff(b) {
        0 => 1.0,
        1 => 0.5,
        2 => 0.2,
        3 => 0.1,
        _ => 0.0,
    }))
}

/// Gaussian MRF parameter with joint precision `omega`: zero diagonal and `-omega` off it.
///
/// `omega` must have a unit diagonal, matching the unit conditional variances.
pub fn gaussian_theta(omega: &DMatrix<f64>) -> Result<ParamMatrix> {
    let p = omega.nrows();
    if (0..p).any(|j| omega[(j, j)] != 1.0) {
        return Err(Error::Parameter("precision matrix must have a unit diagonal".into()));
    }
    let entries = DMatrix::from_fn(p, p, |a, b| if a == b { 0.0 } else { -omega[(a, b)] });
    ParamMatrix::from_dense(vec![VariateFamily::Gaussian; p], entries)
}

/// The `k` off-diagonal entries of largest magnitude; ties go to the lexicographically smaller pair.
pub fn top_k_edges(theta: &ParamMatrix, k: usize) -> Result<EdgeSet> {
    let p = theta.p();
    let total = p * p.saturating_sub(1) / 2;
    if k > total {
        return Err(Error::Parameter(format!(
            "requested {k} edges but only {total} off-diagonal entries exist"
        )));
    }
    let mut cand: Vec<Edge> = Vec::with_capacity(total);
    for a in 0..p {
        for b in (a + 1)..p {
            cand.push(Edge {
                a,
                b,
                weight: theta.get(a, b),
            });
        }
    }
    // stable sort keeps lexicographic order among equal magnitudes
    cand.sort_by(|x, y| y.weight.abs().total_cmp(&x.weight.abs()));
    cand.truncate(k);
    Ok(EdgeSet { edges: cand })
}

const NODEWISE_TOL: f64 = 1e-10;
const NODEWISE_MAX_ITER: usize = 500;

/// Ridge-penalized GLM of one node on the others; returns coefficients indexed like block `j`.
fn node_regression(data: &MixedDataset, j: usize, lambda: f64) -> Result<DVector<f64>> {
    let (n, p) = (data.n(), data.p());
    let fam = data.families()[j];
    let free: Vec<usize> = (0..p)
        .filter(|&k| k == j || !crate::model::structurally_zero(fam, data.families()[k]))
        .collect();
    let m = free.len();
    let design = DMatrix::from_fn(n, m, |i, c| {
        if free[c] == j {
            1.0
        } else {
            data.value(i, free[c])
        }
    });
    let y = data.values().column(j).clone_owned();
    let inv_n = 1.0 / n as f64;
    let ridge = DVector::from_fn(m, |c, _| if free[c] == j { 0.0 } else { lambda });

    let objective = |beta: &DVector<f64>| -> Option<f64> {
        let eta = &design * beta;
        let mut total = 0.0;
        for i in 0..n {
            let mo = fam.functions(eta[i]).ok()?;
            total += y[i] * eta[i] - mo.logpartition;
        }
        Some(total * inv_n - 0.5 * beta.component_mul(&ridge).dot(beta))
    };

    let mut beta = DVector::zeros(m);
    let intercept = free.iter().position(|&k| k == j).unwrap();
    if fam == VariateFamily::Exponential {
        beta[intercept] = -1.0;
    }
    let mut current = objective(&beta).expect("starting point is in the domain");

    for _ in 0..NODEWISE_MAX_ITER {
        let eta = &design * &beta;
        let mut resid = DVector::zeros(n);
        let mut weighted = design.clone();
        for i in 0..n {
            let mo = fam.functions_unchecked(eta[i]);
            resid[i] = y[i] - mo.mean;
            let s = mo.variance.sqrt();
            weighted.row_mut(i).scale_mut(s);
        }
        let grad = design.tr_mul(&resid) * inv_n - ridge.component_mul(&beta);
        if grad.norm() <= NODEWISE_TOL {
            return Ok(embed(&free, &beta, p));
        }
        let mut neg_h = weighted.tr_mul(&weighted) * inv_n;
        for c in 0..m {
            neg_h[(c, c)] += ridge[c];
        }
        let step = neg_h
            .cholesky()
            .map(|c| c.solve(&grad))
            .ok_or(Error::SingularBlock { block: j })?;
        let mut t = 1.0;
        loop {
            let cand = &beta + &step * t;
            if let Some(v) = objective(&cand) {
                if v >= current - 1e-14 * current.abs() {
                    beta = cand;
                    current = v;
                    break;
                }
            }
            t *= 0.5;
            if t < 1e-12 {
                return Err(Error::Divergence {
                    iteration: 0,
                    reason: "line search failed in node-wise regression".into(),
                });
            }
        }
    }
    Err(Error::Divergence {
        iteration: NODEWISE_MAX_ITER,
        reason: "node-wise regression did not converge".into(),
    })
}

fn embed(free: &[usize], beta: &DVector<f64>, p: usize) -> DVector<f64> {
    let mut out = DVector::zeros(p);
    for (c, &k) in free.iter().enumerate() {
        out[k] = beta[c];
    }
    out
}

/// Averages the two node-wise estimates of every interaction; the diagonal comes from each node's own fit.
pub fn nodewise_baseline(data: &MixedDataset, lambda: f64) -> Result<ParamMatrix> {
    if !(lambda >= 0.0) {
        return Err(Error::Parameter(format!("lambda must be >= 0, got {lambda}")));
    }
    let p = data.p();
    let coefs: Vec<DVector<f64>> = (0..p)
        .into_par_iter()
        .map(|j| {
            node_regression(data, j, lambda).map_err(|e| Error::Node {
                node: j,
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;
    let mut theta = ParamMatrix::zeros(data.families().to_vec());
    for a in 0..p {
        theta.set_unchecked(a, a, coefs[a][a]);
        for b in (a + 1)..p {
            if theta.is_free(a, b) {
                theta.set_unchecked(a, b, 0.5 * (coefs[a][b] + coefs[b][a]));
            }
        }
    }
    theta.with_names(data.names().to_vec())
}

/// Ridge coefficients of node `j` alone, exposed for checking against direct regressions.
pub fn node_coefficients(data: &MixedDataset, j: usize, lambda: f64) -> Result<DVector<f64>> {
    node_regression(data, j, lambda)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimator {
    /// Pseudo-likelihood fit at the cross-validated ridge weight.
    RidgeCv,
    /// Pseudo-likelihood fit with `lambda = 0`.
    Unpenalized,
    /// Averaged node-wise regressions.
    Nodewise,
}

impl Estimator {
    pub fn tag(self) -> &'static str {
        match self {
            Estimator::RidgeCv => "ridge-cv",
            Estimator::Unpenalized => "unpenalized",
            Estimator::Nodewise => "nodewise",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Design {
    Lattice,
    /// Banded-precision Gaussian graphical model with `p` variates.
    BandedGaussian { p: usize },
}

impl Design {
    pub fn truth(&self) -> Result<(ParamMatrix, Option<EdgeSet>)> {
        match *self {
            Design::Lattice => {
                let (t, e) = lattice_theta();
                Ok((t, Some(e)))
            }
            Design::BandedGaussian { p } => Ok((gaussian_theta(&banded_precision(p)?)?, None)),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RecoverySpec {
    pub design: Design,
    pub sample_sizes: Vec<usize>,
    pub replicates: usize,
    pub estimators: Vec<Estimator>,
    pub seed: u64,
    pub burn_in: usize,
    pub thinning: usize,
    pub lambda_grid: Vec<f64>,
    pub folds: usize,
    pub fit: FitConfig,
    pub nodewise_lambda: f64,
}

impl RecoverySpec {
    pub fn new(design: Design, sample_sizes: Vec<usize>, replicates: usize, seed: u64) -> Self {
        RecoverySpec {
            design,
            sample_sizes,
            replicates,
            estimators: vec![Estimator::RidgeCv, Estimator::Unpenalized, Estimator::Nodewise],
            seed,
            burn_in: DEFAULT_BURN_IN,
            thinning: DEFAULT_THINNING,
            lambda_grid: default_grid(),
            folds: DEFAULT_FOLDS,
            fit: FitConfig::default(),
            nodewise_lambda: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub estimator: Estimator,
    pub n: usize,
    pub replicate: usize,
    pub frobenius_error: Option<f64>,
    pub edges_recovered: Option<usize>,
    pub lambda: Option<f64>,
    /// Largest iteration count over every pseudo-likelihood fit in this cell, CV folds included.
    pub iterations: Option<usize>,
    pub converged: Option<bool>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub sample_sizes: Vec<usize>,
    pub replicates: usize,
    pub true_edges: Option<usize>,
    pub rows: Vec<ReportRow>,
}

impl ExperimentReport {
    fn cells(&self, estimator: Estimator, n: usize) -> impl Iterator<Item = &ReportRow> {
        self.rows
            .iter()
            .filter(move |r| r.estimator == estimator && r.n == n)
    }

    /// Mean Frobenius error over replicates that produced an estimate.
    pub fn mean_error(&self, estimator: Estimator, n: usize) -> Option<f64> {
        let v: Vec<f64> = self.cells(estimator, n).filter_map(|r| r.frobenius_error).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn mean_recovered(&self, estimator: Estimator, n: usize) -> Option<f64> {
        let v: Vec<usize> = self.cells(estimator, n).filter_map(|r| r.edges_recovered).collect();
        (!v.is_empty()).then(|| v.iter().sum::<usize>() as f64 / v.len() as f64)
    }

    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| r.failure.is_some()).count()
    }

    /// Columns: estimator, n, replicate, frobenius_error, edges_recovered.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["estimator", "n", "replicate", "frobenius_error", "edges_recovered"])?;
        for r in &self.rows {
            w.write_record([
                r.estimator.tag().to_string(),
                r.n.to_string(),
                r.replicate.to_string(),
                r.frobenius_error.map(|v| v.to_string()).unwrap_or_default(),
                r.edges_recovered.map(|v| v.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// SplitMix64 finalizer over a combination of the inputs.
pub fn derive_seed(master: u64, a: u64, b: u64) -> u64 {
    let mut z = master
        ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ b.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Estimate from one estimator, with the bookkeeping the report needs.
pub struct Estimate {
    pub theta: ParamMatrix,
    pub lambda: Option<f64>,
    pub iterations: Option<usize>,
    pub converged: Option<bool>,
}

/// Cross-validates lambda, then refits on all of `data`.
pub fn ridge_cv_fit(
    data: &MixedDataset,
    grid: &[f64],
    folds: usize,
    seed: u64,
    config: &FitConfig,
) -> Result<Estimate> {
    let cv = cross_validate(data, grid, folds, seed, config)?;
    let res = fit(data, &config.clone().with_lambda(cv.lambda_opt))?;
    Ok(Estimate {
        theta: res.theta_hat,
        lambda: Some(cv.lambda_opt),
        iterations: Some(cv.max_iterations.max(res.iterations)),
        converged: Some(cv.all_converged && res.converged),
    })
}

pub fn run_estimator(
    estimator: Estimator,
    data: &MixedDataset,
    spec: &RecoverySpec,
    seed: u64,
) -> Result<Estimate> {
    match estimator {
        Estimator::RidgeCv => ridge_cv_fit(data, &spec.lambda_grid, spec.folds, seed, &spec.fit),
        Estimator::Unpenalized => {
            let res = fit(data, &spec.fit.clone().with_lambda(0.0))?;
            Ok(Estimate {
                theta: res.theta_hat,
                lambda: Some(0.0),
                iterations: Some(res.iterations),
                converged: Some(res.converged),
            })
        }
        Estimator::Nodewise => Ok(Estimate {
            theta: nodewise_baseline(data, spec.nodewise_lambda)?,
            lambda: Some(spec.nodewise_lambda),
            iterations: None,
            converged: None,
        }),
    }
}

pub fn run_recovery_experiment(spec: &RecoverySpec) -> Result<ExperimentReport> {
    if spec.sample_sizes.is_empty() || spec.replicates == 0 || spec.estimators.is_empty() {
        return Err(Error::Parameter(
            "experiment needs sample sizes, replicates and estimators".into(),
        ));
    }
    let (truth, edges) = spec.design.truth()?;
    let cells: Vec<(usize, usize)> = spec
        .sample_sizes
        .iter()
        .flat_map(|&n| (0..spec.replicates).map(move |r| (n, r)))
        .collect();

    let rows: Vec<Vec<ReportRow>> = cells
        .par_iter()
        .map(|&(n, r)| {
            let cell_seed = derive_seed(spec.seed, n as u64, r as u64);
            let chain = ChainConfig {
                n_samples: n,
                burn_in: spec.burn_in,
                thinning: spec.thinning,
                seed: cell_seed,
                initial_state: None,
            };
            let data = gibbs_chain(&truth, &chain);
            spec.estimators
                .iter()
                .map(|&est| {
                    let outcome = data
                        .as_ref()
                        .map_err(|e| Error::Parameter(format!("sampling failed: {e}")))
                        .and_then(|d| run_estimator(est, d, spec, cell_seed.wrapping_add(1)));
                    match outcome {
                        Ok(e) => ReportRow {
                            estimator: est,
                            n,
                            replicate: r,
                            frobenius_error: Some(e.theta.frobenius_distance(&truth)),
                            edges_recovered: edges.as_ref().map(|true_edges| {
                                top_k_edges(&e.theta, true_edges.len())
                                    .map(|top| top.overlap(true_edges))
                                    .unwrap_or(0)
                            }),
                            lambda: e.lambda,
                            iterations: e.iterations,
                            converged: e.converged,
                            failure: None,
                        },
                        Err(err) => ReportRow {
                            estimator: est,
                            n,
                            replicate: r,
                            frobenius_error: None,
                            edges_recovered: None,
                            lambda: None,
                            iterations: None,
                            converged: None,
                            failure: Some(err.to_string()),
                        },
                    }
                })
                .collect()
        })
        .collect();

    Ok(ExperimentReport {
        sample_sizes: spec.sample_sizes.clone(),
        replicates: spec.replicates,
        true_edges: edges.map(|e| e.len()),
        rows: rows.into_iter().flatten().collect(),
    })
}
