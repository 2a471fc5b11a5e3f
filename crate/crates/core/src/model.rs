//! Node-conditional exponential families, the symmetric parameter matrix, typed
//! datasets and the well-definedness constraints of the joint distribution.
//!
//! Every variate has sufficient statistic `T(y) = y`. Conditionally on the other
//! variates, variate `j` follows its family with natural parameter
//!
//! ```text
//! eta_j = theta[j][j] + sum_{j' != j} theta[j][j'] * y_j'
//! ```
//!
//! Gaussian variates have unit conditional variance, so `theta[j][j]` acts as an
//! intercept and the Gaussian joint precision is `I - theta_G,off`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Default weight of the cubic-hinge constraint penalty.
pub const DEFAULT_BARRIER_BETA: f64 = 1e4;
/// Margin that keeps strict inequalities (exponential rates, Gaussian block) strictly satisfied.
pub const RATE_MARGIN: f64 = 1e-6;
/// Sharpness of the softplus used in the Bernoulli-exponential aggregate constraint.
pub const SOFTPLUS_SHARPNESS: f64 = 50.0;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VariateFamily {
    Bernoulli,
    Gaussian,
    Poisson,
    Exponential,
}

/// `(D(eta), D'(eta), D''(eta))`: log-partition, conditional mean and conditional variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FamilyMoments {
    pub logpartition: f64,
    pub mean: f64,
    pub variance: f64,
}

impl VariateFamily {
    pub const ALL: [VariateFamily; 4] = [
        VariateFamily::Bernoulli,
        VariateFamily::Gaussian,
        VariateFamily::Poisson,
        VariateFamily::Exponential,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            VariateFamily::Bernoulli => "bernoulli",
            VariateFamily::Gaussian => "gaussian",
            VariateFamily::Poisson => "poisson",
            VariateFamily::Exponential => "exponential",
        }
    }

    pub fn eta_in_domain(self, eta: f64) -> bool {
        match self {
            VariateFamily::Exponential => eta < 0.0,
            _ => eta.is_finite(),
        }
    }

    pub fn value_in_domain(self, y: f64) -> bool {
        match self {
            VariateFamily::Bernoulli => y == 0.0 || y == 1.0,
            VariateFamily::Gaussian => y.is_finite(),
            VariateFamily::Poisson => y.is_finite() && y >= 0.0 && y.fract() == 0.0,
            VariateFamily::Exponential => y.is_finite() && y >= 0.0,
        }
    }

    /// Log-partition and its first two derivatives at `eta`.
    pub fn functions(self, eta: f64) -> Result<FamilyMoments> {
        if !self.eta_in_domain(eta) {
            return Err(Error::Domain(match self {
                VariateFamily::Exponential => {
                    format!("exponential natural parameter must satisfy eta < 0, got {eta}")
                }
                _ => format!("{} natural parameter must be finite, got {eta}", self.tag()),
            }));
        }
        Ok(self.functions_unchecked(eta))
    }

    /// As [`VariateFamily::functions`] for an `eta` already known to be in the domain.
    pub(crate) fn functions_unchecked(self, eta: f64) -> FamilyMoments {
        match self {
            VariateFamily::Bernoulli => {
                let e = (-eta.abs()).exp();
                let mean = if eta >= 0.0 { 1.0 / (1.0 + e) } else { e / (1.0 + e) };
                FamilyMoments {
                    logpartition: eta.max(0.0) + e.ln_1p(),
                    mean,
                    variance: mean * (1.0 - mean),
                }
            }
            VariateFamily::Gaussian => FamilyMoments {
                logpartition: 0.5 * eta * eta,
                mean: eta,
                variance: 1.0,
            },
            VariateFamily::Poisson => {
                let e = eta.exp();
                FamilyMoments {
                    logpartition: e,
                    mean: e,
                    variance: e,
                }
            }
            VariateFamily::Exponential => FamilyMoments {
                logpartition: -(-eta).ln(),
                mean: -1.0 / eta,
                variance: 1.0 / (eta * eta),
            },
        }
    }

    /// `log h(y)`; the Gaussian normalizing constant is folded in here.
    pub fn log_base_measure(self, y: f64) -> Result<f64> {
        if !self.value_in_domain(y) {
            return Err(Error::Domain(format!(
                "value {y} is outside the {} value domain",
                self.tag()
            )));
        }
        Ok(self.log_base_measure_unchecked(y))
    }

    pub(crate) fn log_base_measure_unchecked(self, y: f64) -> f64 {
        match self {
            VariateFamily::Bernoulli | VariateFamily::Exponential => 0.0,
            VariateFamily::Gaussian => -0.5 * y * y - LN_SQRT_2PI,
            VariateFamily::Poisson => -ln_gamma(y + 1.0),
        }
    }
}

impl fmt::Display for VariateFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for VariateFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "bernoulli" => Ok(VariateFamily::Bernoulli),
            "gaussian" => Ok(VariateFamily::Gaussian),
            "poisson" => Ok(VariateFamily::Poisson),
            "exponential" => Ok(VariateFamily::Exponential),
            other => Err(Error::Parameter(format!("unknown family tag `{other}`"))),
        }
    }
}

pub fn family_functions(family: VariateFamily, eta: f64) -> Result<FamilyMoments> {
    family.functions(eta)
}

pub fn log_base_measure(family: VariateFamily, y: f64) -> Result<f64> {
    family.log_base_measure(y)
}

pub(crate) fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^x)` without overflow.
pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Gaussian-Poisson and Gaussian-exponential interactions are fixed at zero.
pub fn structurally_zero(a: VariateFamily, b: VariateFamily) -> bool {
    use VariateFamily::*;
    matches!(
        (a, b),
        (Gaussian, Poisson) | (Gaussian, Exponential) | (Poisson, Gaussian) | (Exponential, Gaussian)
    )
}

fn default_names(p: usize) -> Vec<String> {
    (1..=p).map(|j| format!("V{j}")).collect()
}

/// Symmetric `p x p` parameter matrix of a pairwise MRF over typed variates.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamMatrix {
    families: Vec<VariateFamily>,
    names: Vec<String>,
    entries: DMatrix<f64>,
}

impl ParamMatrix {
    pub fn zeros(families: Vec<VariateFamily>) -> Self {
        let p = families.len();
        ParamMatrix {
            names: default_names(p),
            families,
            entries: DMatrix::zeros(p, p),
        }
    }

    /// Feasible starting point: zero, except a diagonal of -1 for exponential variates.
    pub fn initial(families: Vec<VariateFamily>) -> Self {
        let mut theta = ParamMatrix::zeros(families);
        for j in 0..theta.p() {
            if theta.families[j] == VariateFamily::Exponential {
                theta.entries[(j, j)] = -1.0;
            }
        }
        theta
    }

    /// Builds a matrix from a dense table, rejecting asymmetry and nonzero structural zeros.
    pub fn from_dense(families: Vec<VariateFamily>, entries: DMatrix<f64>) -> Result<Self> {
        let p = families.len();
        if entries.nrows() != p || entries.ncols() != p {
            return Err(Error::Dimension(format!(
                "expected a {p}x{p} table, got {}x{}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        for a in 0..p {
            for b in (a + 1)..p {
                if entries[(a, b)].to_bits() != entries[(b, a)].to_bits() {
                    return Err(Error::Validation(format!(
                        "entry ({a}, {b}) = {} differs from ({b}, {a}) = {}",
                        entries[(a, b)],
                        entries[(b, a)]
                    )));
                }
                if structurally_zero(families[a], families[b]) && entries[(a, b)] != 0.0 {
                    return Err(Error::Validation(format!(
                        "entry ({a}, {b}) couples {} and {} variates and must be 0, got {}",
                        families[a],
                        families[b],
                        entries[(a, b)]
                    )));
                }
            }
        }
        Ok(ParamMatrix {
            names: default_names(p),
            families,
            entries,
        })
    }

    pub fn with_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.p() {
            return Err(Error::Dimension(format!(
                "{} names for {} variates",
                names.len(),
                self.p()
            )));
        }
        self.names = names;
        Ok(self)
    }

    pub fn p(&self) -> usize {
        self.families.len()
    }

    pub fn families(&self) -> &[VariateFamily] {
        &self.families
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.entries[(a, b)]
    }

    /// Sets both `(a, b)` and `(b, a)`.
    pub fn set(&mut self, a: usize, b: usize, value: f64) -> Result<()> {
        if a >= self.p() || b >= self.p() {
            return Err(Error::Dimension(format!(
                "index ({a}, {b}) out of range for p = {}",
                self.p()
            )));
        }
        if !self.is_free(a, b) && value != 0.0 {
            return Err(Error::Validation(format!(
                "entry ({a}, {b}) is a structural zero"
            )));
        }
        self.entries[(a, b)] = value;
        self.entries[(b, a)] = value;
        Ok(())
    }

    pub(crate) fn set_unchecked(&mut self, a: usize, b: usize, value: f64) {
        self.entries[(a, b)] = value;
        self.entries[(b, a)] = value;
    }

    pub fn is_free(&self, a: usize, b: usize) -> bool {
        a == b || !structurally_zero(self.families[a], self.families[b])
    }

    /// `p(p+1)/2`, the number of unique entries.
    pub fn unique_count(&self) -> usize {
        let p = self.p();
        p * (p + 1) / 2
    }

    /// Unique entries that are not structural zeros.
    pub fn free_count(&self) -> usize {
        self.free_coordinates().len()
    }

    /// Free unique coordinates `(a, b)` with `a <= b`, in row-major order.
    pub fn free_coordinates(&self) -> Vec<(usize, usize)> {
        let p = self.p();
        let mut out = Vec::with_capacity(self.unique_count());
        for a in 0..p {
            for b in a..p {
                if self.is_free(a, b) {
                    out.push((a, b));
                }
            }
        }
        out
    }

    pub fn frobenius_distance(&self, other: &ParamMatrix) -> f64 {
        (&self.entries - &other.entries).norm()
    }

    /// Relabels variates: new variate `k` is old variate `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> ParamMatrix {
        let p = self.p();
        ParamMatrix {
            families: perm.iter().map(|&k| self.families[k]).collect(),
            names: perm.iter().map(|&k| self.names[k].clone()).collect(),
            entries: DMatrix::from_fn(p, p, |a, b| self.entries[(perm[a], perm[b])]),
        }
    }

    /// The same entries as a row-major vector, for tight loops.
    pub(crate) fn row_major(&self) -> Vec<f64> {
        let p = self.p();
        let mut out = Vec::with_capacity(p * p);
        for a in 0..p {
            for b in 0..p {
                out.push(self.entries[(a, b)]);
            }
        }
        out
    }
}

/// `n` observations of `p` typed variates.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedDataset {
    families: Vec<VariateFamily>,
    names: Vec<String>,
    values: DMatrix<f64>,
}

impl MixedDataset {
    pub fn new(families: Vec<VariateFamily>, values: DMatrix<f64>) -> Result<Self> {
        if values.ncols() != families.len() {
            return Err(Error::Dimension(format!(
                "{} columns for {} families",
                values.ncols(),
                families.len()
            )));
        }
        if values.nrows() == 0 {
            return Err(Error::Parameter("dataset must have at least one row".into()));
        }
        for (j, fam) in families.iter().enumerate() {
            for i in 0..values.nrows() {
                let y = values[(i, j)];
                if !fam.value_in_domain(y) {
                    return Err(Error::Domain(format!(
                        "row {}, column {}: value {y} is outside the {fam} value domain",
                        i + 1,
                        j + 1
                    )));
                }
            }
        }
        Ok(MixedDataset {
            names: default_names(families.len()),
            families,
            values,
        })
    }

    /// Builds a dataset from row vectors.
    pub fn from_rows(families: Vec<VariateFamily>, rows: &[Vec<f64>]) -> Result<Self> {
        let p = families.len();
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != p) {
            return Err(Error::Dimension(format!(
                "row {} has {} values, expected {p}",
                i + 1,
                r.len()
            )));
        }
        let values = DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j]);
        MixedDataset::new(families, values)
    }

    pub fn with_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.p() {
            return Err(Error::Dimension(format!(
                "{} names for {} columns",
                names.len(),
                self.p()
            )));
        }
        self.names = names;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn p(&self) -> usize {
        self.values.ncols()
    }

    pub fn families(&self) -> &[VariateFamily] {
        &self.families
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[(i, j)]
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.values.row(i).iter().copied().collect()
    }

    pub fn column_mean(&self, j: usize) -> f64 {
        self.values.column(j).mean()
    }

    pub fn select_rows(&self, rows: &[usize]) -> MixedDataset {
        MixedDataset {
            families: self.families.clone(),
            names: self.names.clone(),
            values: self.values.select_rows(rows),
        }
    }

    /// New column `k` is old column `perm[k]`.
    pub fn permuted_columns(&self, perm: &[usize]) -> MixedDataset {
        MixedDataset {
            families: perm.iter().map(|&k| self.families[k]).collect(),
            names: perm.iter().map(|&k| self.names[k].clone()).collect(),
            values: self.values.select_columns(perm),
        }
    }
}

/// `eta_j` for one observation `row`; `row[j]` itself is ignored.
pub fn natural_parameter(theta: &ParamMatrix, row: &[f64], j: usize) -> f64 {
    let mut eta = theta.get(j, j);
    for (k, &y) in row.iter().enumerate() {
        if k != j {
            eta += theta.get(j, k) * y;
        }
    }
    eta
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConstraintKind {
    PoissonPoissonSign,
    PoissonExponentialSign,
    ExponentialExponentialSign,
    GaussianPoissonZero,
    GaussianExponentialZero,
    GaussianBlock,
    BernoulliExponentialAggregate,
    ExponentialRate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub constraint: ConstraintKind,
    pub indices: Vec<usize>,
    pub magnitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintReport {
    pub violations: Vec<Violation>,
    pub satisfied: bool,
}

impl fmt::Display for ConstraintReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.satisfied {
            return f.write_str("all constraints satisfied");
        }
        for (k, v) in self.violations.iter().enumerate() {
            if k > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{:?} at {:?} by {:e}", v.constraint, v.indices, v.magnitude)?;
        }
        Ok(())
    }
}

struct GaussianSpectrum {
    indices: Vec<usize>,
    values: Vec<f64>,
    vectors: DMatrix<f64>,
    top: usize,
}

impl GaussianSpectrum {
    fn lambda_max(&self) -> f64 {
        self.values[self.top]
    }
}

/// Eigendecomposition of the zero-diagonal Gaussian-Gaussian block, when there are at least two Gaussians.
fn gaussian_spectrum(theta: &ParamMatrix) -> Option<GaussianSpectrum> {
    let indices: Vec<usize> = (0..theta.p())
        .filter(|&j| theta.families[j] == VariateFamily::Gaussian)
        .collect();
    let k = indices.len();
    if k < 2 {
        return None;
    }
    let block = DMatrix::from_fn(k, k, |a, b| {
        if a == b {
            0.0
        } else {
            theta.get(indices[a], indices[b])
        }
    });
    let eig = SymmetricEigen::new(block);
    let values: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    let top = values
        .iter()
        .enumerate()
        .fold(0, |best, (i, &v)| if v > values[best] { i } else { best });
    Some(GaussianSpectrum {
        indices,
        values,
        vectors: eig.eigenvectors,
        top,
    })
}

fn bernoulli_indices(theta: &ParamMatrix) -> Vec<usize> {
    (0..theta.p())
        .filter(|&j| theta.families[j] == VariateFamily::Bernoulli)
        .collect()
}

pub fn check_constraints(theta: &ParamMatrix) -> ConstraintReport {
    use VariateFamily::*;
    let p = theta.p();
    let fam = &theta.families;
    let mut violations = Vec::new();

    for a in 0..p {
        for b in (a + 1)..p {
            let v = theta.get(a, b);
            let kind = match (fam[a], fam[b]) {
                (Poisson, Poisson) => Some((ConstraintKind::PoissonPoissonSign, false)),
                (Poisson, Exponential) | (Exponential, Poisson) => {
                    Some((ConstraintKind::PoissonExponentialSign, false))
                }
                (Exponential, Exponential) => {
                    Some((ConstraintKind::ExponentialExponentialSign, false))
                }
                (Gaussian, Poisson) | (Poisson, Gaussian) => {
                    Some((ConstraintKind::GaussianPoissonZero, true))
                }
                (Gaussian, Exponential) | (Exponential, Gaussian) => {
                    Some((ConstraintKind::GaussianExponentialZero, true))
                }
                _ => None,
            };
            match kind {
                Some((constraint, true)) if v != 0.0 => violations.push(Violation {
                    constraint,
                    indices: vec![a, b],
                    magnitude: v.abs(),
                }),
                Some((constraint, false)) if v > 0.0 => violations.push(Violation {
                    constraint,
                    indices: vec![a, b],
                    magnitude: v,
                }),
                _ => {}
            }
        }
    }

    if let Some(spec) = gaussian_spectrum(theta) {
        let lmax = spec.lambda_max();
        if lmax >= 1.0 {
            violations.push(Violation {
                constraint: ConstraintKind::GaussianBlock,
                indices: spec.indices.clone(),
                magnitude: lmax - 1.0 + RATE_MARGIN,
            });
        }
    }

    let bernoullis = bernoulli_indices(theta);
    for e in (0..p).filter(|&j| fam[j] == Exponential) {
        let rate = theta.get(e, e);
        if rate >= 0.0 {
            violations.push(Violation {
                constraint: ConstraintKind::ExponentialRate,
                indices: vec![e],
                magnitude: rate + RATE_MARGIN,
            });
        }
        if !bernoullis.is_empty() {
            let total = rate + bernoullis.iter().map(|&b| theta.get(b, e).max(0.0)).sum::<f64>();
            if total >= 0.0 {
                let mut indices = bernoullis.clone();
                indices.push(e);
                violations.push(Violation {
                    constraint: ConstraintKind::BernoulliExponentialAggregate,
                    indices,
                    magnitude: total + RATE_MARGIN,
                });
            }
        }
    }

    ConstraintReport {
        satisfied: violations.is_empty(),
        violations,
    }
}

/// Value and gradient of the smooth constraint penalty.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintPenalty {
    pub value: f64,
    /// Derivative with respect to each unique entry, stored at both `(a, b)` and `(b, a)`.
    pub gradient: DMatrix<f64>,
}

fn softplus_sharp(x: f64) -> f64 {
    softplus(SOFTPLUS_SHARPNESS * x) / SOFTPLUS_SHARPNESS
}

/// One active inequality `g > 0` with its sparse gradient over unique coordinates.
struct ActiveConstraint {
    hinge: f64,
    gradient: Vec<((usize, usize), f64)>,
}

fn ordered(a: usize, b: usize) -> (usize, usize) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

fn sign_constrained(a: VariateFamily, b: VariateFamily) -> bool {
    use VariateFamily::*;
    matches!(a, Poisson | Exponential) && matches!(b, Poisson | Exponential)
}

fn active_constraints(theta: &ParamMatrix) -> Vec<ActiveConstraint> {
    let p = theta.p();
    let fam = &theta.families;
    let mut out = Vec::new();

    for a in 0..p {
        for b in (a + 1)..p {
            if sign_constrained(fam[a], fam[b]) {
                let g = theta.get(a, b);
                if g > 0.0 {
                    out.push(ActiveConstraint {
                        hinge: g,
                        gradient: vec![((a, b), 1.0)],
                    });
                }
            }
        }
    }

    if let Some(spec) = gaussian_spectrum(theta) {
        let g = spec.lambda_max() - 1.0 + RATE_MARGIN;
        if g > 0.0 {
            let v = spec.vectors.column(spec.top);
            let k = spec.indices.len();
            let mut gradient = Vec::with_capacity(k * (k - 1) / 2);
            for a in 0..k {
                for b in (a + 1)..k {
                    gradient.push(((spec.indices[a], spec.indices[b]), 2.0 * v[a] * v[b]));
                }
            }
            out.push(ActiveConstraint { hinge: g, gradient });
        }
    }

    let bernoullis = bernoulli_indices(theta);
    for e in (0..p).filter(|&j| fam[j] == VariateFamily::Exponential) {
        let g = theta.get(e, e) + RATE_MARGIN;
        if g > 0.0 {
            out.push(ActiveConstraint {
                hinge: g,
                gradient: vec![((e, e), 1.0)],
            });
        }
        if !bernoullis.is_empty() {
            let g = theta.get(e, e)
                + bernoullis
                    .iter()
                    .map(|&b| softplus_sharp(theta.get(b, e)))
                    .sum::<f64>();
            if g > 0.0 {
                let mut gradient = vec![((e, e), 1.0)];
                for &b in &bernoullis {
                    gradient.push((
                        ordered(b, e),
                        logistic(SOFTPLUS_SHARPNESS * theta.get(b, e)),
                    ));
                }
                out.push(ActiveConstraint { hinge: g, gradient });
            }
        }
    }
    out
}

/// `beta * sum max(0, g)^3` over the inequality constraints, with its gradient.
pub fn constraint_penalty(theta: &ParamMatrix, beta: f64) -> ConstraintPenalty {
    let p = theta.p();
    let mut gradient = DMatrix::zeros(p, p);
    let mut value = 0.0;
    for c in active_constraints(theta) {
        value += beta * c.hinge.powi(3);
        let scale = 3.0 * beta * c.hinge * c.hinge;
        for ((a, b), dg) in c.gradient {
            gradient[(a, b)] += scale * dg;
            if a != b {
                gradient[(b, a)] += scale * dg;
            }
        }
    }
    ConstraintPenalty { value, gradient }
}

/// Hessian of the constraint penalty restricted to the coordinates of block `j`.
///
/// Row/column `k` of the result is the coordinate `(j, k)`.
pub(crate) fn constraint_penalty_block_hessian(
    theta: &ParamMatrix,
    beta: f64,
    j: usize,
) -> DMatrix<f64> {
    let p = theta.p();
    let fam = &theta.families;
    let mut h = DMatrix::zeros(p, p);

    for k in 0..p {
        if k != j && sign_constrained(fam[j], fam[k]) {
            let g = theta.get(j, k);
            if g > 0.0 {
                h[(k, k)] += 6.0 * beta * g;
            }
        }
    }

    if fam[j] == VariateFamily::Gaussian {
        if let Some(spec) = gaussian_spectrum(theta) {
            let g = spec.lambda_max() - 1.0 + RATE_MARGIN;
            if g > 0.0 {
                let kk = spec.indices.len();
                let local = spec.indices.iter().position(|&x| x == j).unwrap();
                let top = spec.top;
                let v1 = spec.vectors.column(top);
                // d eta_max / d theta_(j, indices[b]) and the second-order perturbation terms
                let dg: Vec<f64> = (0..kk).map(|b| 2.0 * v1[local] * v1[b]).collect();
                let lmax = spec.lambda_max();
                for b in 0..kk {
                    if b == local {
                        continue;
                    }
                    for c in 0..kk {
                        if c == local {
                            continue;
                        }
                        let mut d2 = 0.0;
                        for m in 0..kk {
                            let gap = lmax - spec.values[m];
                            if m == top || gap <= 1e-12 {
                                continue;
                            }
                            let vm = spec.vectors.column(m);
                            let ub = vm[local] * v1[b] + vm[b] * v1[local];
                            let uc = vm[local] * v1[c] + vm[c] * v1[local];
                            d2 += 2.0 * ub * uc / gap;
                        }
                        let (ib, ic) = (spec.indices[b], spec.indices[c]);
                        h[(ib, ic)] += 6.0 * beta * g * dg[b] * dg[c] + 3.0 * beta * g * g * d2;
                    }
                }
            }
        }
    }

    let bernoullis = bernoulli_indices(theta);
    if fam[j] == VariateFamily::Exponential {
        let g = theta.get(j, j) + RATE_MARGIN;
        if g > 0.0 {
            h[(j, j)] += 6.0 * beta * g;
        }
        if !bernoullis.is_empty() {
            let g = theta.get(j, j)
                + bernoullis
                    .iter()
                    .map(|&b| softplus_sharp(theta.get(b, j)))
                    .sum::<f64>();
            if g > 0.0 {
                let mut dg = vec![(j, 1.0)];
                for &b in &bernoullis {
                    let s = logistic(SOFTPLUS_SHARPNESS * theta.get(b, j));
                    dg.push((b, s));
                    h[(b, b)] += 3.0 * beta * g * g * SOFTPLUS_SHARPNESS * s * (1.0 - s);
                }
                for &(x, dx) in &dg {
                    for &(y, dy) in &dg {
                        h[(x, y)] += 6.0 * beta * g * dx * dy;
                    }
                }
            }
        }
    }
    if fam[j] == VariateFamily::Bernoulli {
        for e in (0..p).filter(|&e| fam[e] == VariateFamily::Exponential) {
            let g = theta.get(e, e)
                + bernoullis
                    .iter()
                    .map(|&b| softplus_sharp(theta.get(b, e)))
                    .sum::<f64>();
            if g > 0.0 {
                let s = logistic(SOFTPLUS_SHARPNESS * theta.get(j, e));
                h[(e, e)] += 6.0 * beta * g * s * s
                    + 3.0 * beta * g * g * SOFTPLUS_SHARPNESS * s * (1.0 - s);
            }
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use VariateFamily::*;

    #[test]
    fn family_function_values() {
        let m = family_functions(Bernoulli, 0.0).unwrap();
        assert_abs_diff_eq!(m.logpartition, 2f64.ln(), epsilon = 1e-15);
        assert_eq!((m.mean, m.variance), (0.5, 0.25));

        let m = family_functions(Poisson, 0.0).unwrap();
        assert_eq!((m.logpartition, m.mean, m.variance), (1.0, 1.0, 1.0));

        let m = family_functions(Exponential, -1.0).unwrap();
        assert_eq!((m.logpartition, m.mean, m.variance), (0.0, 1.0, 1.0));

        let m = family_functions(Gaussian, 2.0).unwrap();
        assert_eq!((m.logpartition, m.mean, m.variance), (2.0, 2.0, 1.0));
    }

    #[test]
    fn exponential_rejects_nonnegative_eta() {
        for eta in [0.0, 0.5] {
            let err = family_functions(Exponential, eta).unwrap_err();
            assert!(err.to_string().contains("eta < 0"), "{err}");
        }
    }

    #[test]
    fn bernoulli_extremes_stay_finite() {
        for eta in [-800.0, 800.0] {
            let m = family_functions(Bernoulli, eta).unwrap();
            assert!(m.logpartition.is_finite());
            assert!(m.mean >= 0.0 && m.mean <= 1.0);
        }
    }

    #[test]
    fn base_measures() {
        assert_eq!(log_base_measure(Bernoulli, 1.0).unwrap(), 0.0);
        assert_abs_diff_eq!(
            log_base_measure(Gaussian, 0.0).unwrap(),
            -0.5 * (2.0 * std::f64::consts::PI).ln(),
            epsilon = 1e-15
        );
        // log 3! by direct product
        let direct: f64 = -(1..=3).map(|k| k as f64).product::<f64>().ln();
        assert_abs_diff_eq!(log_base_measure(Poisson, 3.0).unwrap(), direct, epsilon = 1e-12);
        assert_abs_diff_eq!(log_base_measure(Poisson, 3.0).unwrap(), -1.791759, epsilon = 1e-6);
        assert!(log_base_measure(Poisson, 2.5).is_err());
        assert!(log_base_measure(Bernoulli, 2.0).is_err());
        assert!(log_base_measure(Exponential, -1.0).is_err());
    }

    #[test]
    fn large_poisson_count_is_finite() {
        let v = log_base_measure(Poisson, 1e6).unwrap();
        assert!(v.is_finite() && v < 0.0);
    }

    #[test]
    fn natural_parameter_hand_evaluation() {
        let mut theta = ParamMatrix::zeros(vec![Bernoulli, Bernoulli, Exponential]);
        assert_eq!(natural_parameter(&theta, &[1.0, 0.0, 0.3], 1), 0.0);
        theta.set(1, 1, 2.0).unwrap();
        theta.set(1, 0, -0.2).unwrap();
        theta.set(1, 2, -0.5).unwrap();
        let eta = natural_parameter(&theta, &[1.0, 123.0, 0.5], 1);
        assert_abs_diff_eq!(eta, 1.55, epsilon = 1e-15);
    }

    #[test]
    fn structural_zero_is_enforced() {
        let mut theta = ParamMatrix::zeros(vec![Gaussian, Poisson]);
        assert!(theta.set(0, 1, 0.1).is_err());
        assert!(theta.set(0, 1, 0.0).is_ok());
        assert_eq!(theta.unique_count(), 3);
        assert_eq!(theta.free_count(), 2);
    }

    #[test]
    fn from_dense_rejects_asymmetry() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 0.1, 0.2, 0.0]);
        assert!(ParamMatrix::from_dense(vec![Bernoulli, Bernoulli], m).is_err());
    }

    #[test]
    fn dataset_domain_validation() {
        let err = MixedDataset::from_rows(vec![Bernoulli], &[vec![1.0], vec![2.0]]).unwrap_err();
        assert!(err.to_string().contains("row 2"), "{err}");
        assert!(MixedDataset::from_rows(vec![Poisson], &[vec![1.5]]).is_err());
        assert!(MixedDataset::from_rows(vec![Exponential], &[vec![-0.1]]).is_err());
        assert!(MixedDataset::from_rows(vec![Gaussian], &[vec![-0.1]]).is_ok());
    }

    #[test]
    fn constraints_all_bernoulli_always_satisfied() {
        let mut theta = ParamMatrix::zeros(vec![Bernoulli; 3]);
        theta.set(0, 1, 5.0).unwrap();
        theta.set(1, 2, -7.0).unwrap();
        theta.set(2, 2, 9.0).unwrap();
        assert!(check_constraints(&theta).satisfied);
    }

    #[test]
    fn constraints_poisson_sign() {
        let mut theta = ParamMatrix::zeros(vec![Poisson, Poisson]);
        theta.set(0, 1, 0.1).unwrap();
        let r = check_constraints(&theta);
        assert!(!r.satisfied);
        assert_eq!(r.violations.len(), 1);
        assert_eq!(r.violations[0].constraint, ConstraintKind::PoissonPoissonSign);
        assert_abs_diff_eq!(r.violations[0].magnitude, 0.1, epsilon = 1e-15);
    }

    #[test]
    fn constraints_exponential_rate() {
        let theta = ParamMatrix::zeros(vec![Exponential]);
        let r = check_constraints(&theta);
        assert_eq!(r.violations.len(), 1);
        assert_eq!(r.violations[0].constraint, ConstraintKind::ExponentialRate);
        assert!(r.violations[0].magnitude > 0.0);
    }

    #[test]
    fn constraints_gaussian_block_and_aggregate() {
        let mut theta = ParamMatrix::zeros(vec![Gaussian, Gaussian, Bernoulli, Exponential]);
        theta.set(0, 0, 2.0).unwrap();
        theta.set(3, 3, -0.5).unwrap();
        theta.set(0, 1, 0.9).unwrap();
        assert!(check_constraints(&theta).satisfied);
        theta.set(0, 1, 1.2).unwrap();
        theta.set(2, 3, 0.7).unwrap();
        let r = check_constraints(&theta);
        let kinds: Vec<_> = r.violations.iter().map(|v| v.constraint).collect();
        assert_eq!(
            kinds,
            vec![ConstraintKind::GaussianBlock, ConstraintKind::BernoulliExponentialAggregate]
        );
        assert_abs_diff_eq!(r.violations[0].magnitude, 0.2 + RATE_MARGIN, epsilon = 1e-12);
        assert_abs_diff_eq!(r.violations[1].magnitude, 0.2 + RATE_MARGIN, epsilon = 1e-12);
        assert!(r.violations.iter().all(|v| v.magnitude > 0.0));
    }

    #[test]
    fn penalty_values() {
        let mut theta = ParamMatrix::zeros(vec![Poisson, Poisson]);
        let pen = constraint_penalty(&theta, 1e4);
        assert_eq!(pen.value, 0.0);
        assert!(pen.gradient.iter().all(|&g| g == 0.0));

        theta.set(0, 1, 0.1).unwrap();
        let pen = constraint_penalty(&theta, 1e4);
        assert_abs_diff_eq!(pen.value, 10.0, epsilon = 1e-10);
        assert_abs_diff_eq!(pen.gradient[(0, 1)], 3e4 * 0.01, epsilon = 1e-9);
        assert_eq!(pen.gradient[(0, 1)], pen.gradient[(1, 0)]);
    }

    #[test]
    fn penalty_continuous_at_boundary() {
        let mut theta = ParamMatrix::zeros(vec![Poisson, Exponential]);
        theta.set(1, 1, -1.0).unwrap();
        for x in [-1e-9, 0.0, 1e-9] {
            theta.set(0, 1, x).unwrap();
            let pen = constraint_penalty(&theta, 1e4);
            assert!(pen.value <= 1e-22);
            assert!(pen.gradient[(0, 1)].abs() <= 1e-13);
        }
    }

    fn mixed_theta(seed: u64) -> ParamMatrix {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
        let fams = vec![Gaussian, Gaussian, Gaussian, Bernoulli, Bernoulli, Exponential, Poisson];
        let mut theta = ParamMatrix::zeros(fams);
        for a in 0..7 {
            for b in a..7 {
                if theta.is_free(a, b) {
                    theta.set(a, b, rng.random_range(-1.5..1.5)).unwrap();
                }
            }
        }
        theta
    }

    fn scalar_penalty(theta: &ParamMatrix, beta: f64, coord: (usize, usize), x: f64) -> f64 {
        let mut t = theta.clone();
        t.set_unchecked(coord.0, coord.1, x);
        constraint_penalty(&t, beta).value
    }

    #[test]
    fn penalty_gradient_matches_finite_differences() {
        let beta = 3.0;
        let h = 1e-6;
        for seed in 0..20 {
            let theta = mixed_theta(seed);
            let pen = constraint_penalty(&theta, beta);
            for (a, b) in theta.free_coordinates() {
                let x = theta.get(a, b);
                let fd = (scalar_penalty(&theta, beta, (a, b), x + h)
                    - scalar_penalty(&theta, beta, (a, b), x - h))
                    / (2.0 * h);
                let an = pen.gradient[(a, b)];
                assert!(
                    (fd - an).abs() <= 1e-5 * (1.0 + an.abs()),
                    "seed {seed} coord ({a},{b}): fd {fd} analytic {an}"
                );
            }
        }
    }

    #[test]
    fn penalty_block_hessian_matches_finite_differences() {
        let beta = 3.0;
        let h = 1e-6;
        for seed in 0..20 {
            let theta = mixed_theta(seed);
            for j in 0..theta.p() {
                let hess = constraint_penalty_block_hessian(&theta, beta, j);
                for k in 0..theta.p() {
                    if !theta.is_free(j, k) {
                        continue;
                    }
                    let mut plus = theta.clone();
                    plus.set_unchecked(j, k, theta.get(j, k) + h);
                    let mut minus = theta.clone();
                    minus.set_unchecked(j, k, theta.get(j, k) - h);
                    let gp = constraint_penalty(&plus, beta).gradient;
                    let gm = constraint_penalty(&minus, beta).gradient;
                    for l in 0..theta.p() {
                        if !theta.is_free(j, l) {
                            continue;
                        }
                        let fd = (gp[(j, l)] - gm[(j, l)]) / (2.0 * h);
                        let an = hess[(l, k)];
                        assert!(
                            (fd - an).abs() <= 1e-4 * (1.0 + an.abs()),
                            "seed {seed} block {j} ({l},{k}): fd {fd} analytic {an}"
                        );
                    }
                }
            }
        }
    }
}
