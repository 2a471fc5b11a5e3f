//! Systematic-scan Gibbs sampler for the pairwise MRF.
//!
//! The generator is ChaCha20 (`rand_chacha::ChaCha20Rng`) seeded through
//! `SeedableRng::seed_from_u64`, which gives the same stream on every platform.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Exp, Poisson, StandardNormal};

use crate::error::{Error, Result};
use crate::model::{check_constraints, logistic, MixedDataset, ParamMatrix, VariateFamily};

pub const DEFAULT_BURN_IN: usize = 5000;
pub const DEFAULT_THINNING: usize = 500;

#[derive(Debug, Clone, PartialEq)]
pub struct ChainConfig {
    pub n_samples: usize,
    pub burn_in: usize,
    pub thinning: usize,
    pub seed: u64,
    pub initial_state: Option<Vec<f64>>,
}

impl ChainConfig {
    pub fn new(n_samples: usize, seed: u64) -> Self {
        ChainConfig {
            n_samples,
            burn_in: DEFAULT_BURN_IN,
            thinning: DEFAULT_THINNING,
            seed,
            initial_state: None,
        }
    }

    pub fn total_sweeps(&self) -> usize {
        self.burn_in + self.thinning * self.n_samples
    }
}

/// One draw from the node-conditional distribution with natural parameter `eta`.
pub fn conditional_draw<R: Rng + ?Sized>(
    family: VariateFamily,
    eta: f64,
    rng: &mut R,
) -> Result<f64> {
    if !family.eta_in_domain(eta) {
        return Err(Error::Domain(format!(
            "cannot sample {family} with natural parameter {eta}"
        )));
    }
    let y = match family {
        VariateFamily::Bernoulli => {
            let u: f64 = rng.random();
            if u < logistic(eta) {
                1.0
            } else {
                0.0
            }
        }
        VariateFamily::Gaussian => {
            let z: f64 = StandardNormal.sample(rng);
            eta + z
        }
        VariateFamily::Poisson => {
            let rate = eta.exp();
            if rate == 0.0 {
                0.0
            } else {
                Poisson::new(rate)
                    .map_err(|e| Error::Domain(format!("poisson rate {rate}: {e}")))?
                    .sample(rng)
            }
        }
        VariateFamily::Exponential => Exp::new(-eta)
            .map_err(|e| Error::Domain(format!("exponential rate {}: {e}", -eta)))?
            .sample(rng),
    };
    Ok(y)
}

/// A single chain over the joint distribution defined by `theta`.
pub struct GibbsSampler {
    families: Vec<VariateFamily>,
    theta: Vec<f64>,
    state: Vec<f64>,
    rng: ChaCha20Rng,
    sweeps: usize,
}

impl GibbsSampler {
    /// Without an initial state each variate starts from its conditional with the others at zero.
    pub fn new(theta: &ParamMatrix, seed: u64, initial_state: Option<&[f64]>) -> Result<Self> {
        let p = theta.p();
        let families = theta.families().to_vec();
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let state = match initial_state {
            Some(s) => {
                if s.len() != p {
                    return Err(Error::Dimension(format!(
                        "initial state has {} values, expected {p}",
                        s.len()
                    )));
                }
                for (j, (&y, fam)) in s.iter().zip(&families).enumerate() {
                    if !fam.value_in_domain(y) {
                        return Err(Error::Domain(format!(
                            "initial value {y} of variate {j} is outside the {fam} domain"
                        )));
                    }
                }
                s.to_vec()
            }
            None => {
                let mut s = Vec::with_capacity(p);
                for (j, &fam) in families.iter().enumerate() {
                    let y = conditional_draw(fam, theta.get(j, j), &mut rng).map_err(|e| {
                        Error::Sampling {
                            sweep: 0,
                            variate: j,
                            reason: e.to_string(),
                        }
                    })?;
                    s.push(y);
                }
                s
            }
        };
        Ok(GibbsSampler {
            families,
            theta: theta.row_major(),
            state,
            rng,
            sweeps: 0,
        })
    }

    /// Updates variates `0..p` in order, each given the current values of the others.
    pub fn sweep(&mut self) -> Result<()> {
        let p = self.families.len();
        for j in 0..p {
            let row = &self.theta[j * p..(j + 1) * p];
            let mut eta = row[j];
            for (k, (&t, &y)) in row.iter().zip(&self.state).enumerate() {
                if k != j {
                    eta += t * y;
                }
            }
            self.state[j] =
                conditional_draw(self.families[j], eta, &mut self.rng).map_err(|e| {
                    Error::Sampling {
                        sweep: self.sweeps,
                        variate: j,
                        reason: e.to_string(),
                    }
                })?;
        }
        self.sweeps += 1;
        Ok(())
    }

    pub fn state(&self) -> &[f64] {
        &self.state
    }

    pub fn sweeps(&self) -> usize {
        self.sweeps
    }
}

/// Burn-in followed by one recorded state every `thinning` sweeps.
pub fn gibbs_chain(theta: &ParamMatrix, config: &ChainConfig) -> Result<MixedDataset> {
    if config.thinning == 0 {
        return Err(Error::Parameter("thinning must be >= 1".into()));
    }
    if config.n_samples == 0 {
        return Err(Error::Parameter("n_samples must be >= 1".into()));
    }
    let report = check_constraints(theta);
    if !report.satisfied {
        return Err(Error::Constraints(report));
    }
    let mut sampler = GibbsSampler::new(theta, config.seed, config.initial_state.as_deref())?;
    for _ in 0..config.burn_in {
        sampler.sweep()?;
    }
    let p = theta.p();
    let mut values = DMatrix::zeros(config.n_samples, p);
    for i in 0..config.n_samples {
        for _ in 0..config.thinning {
            sampler.sweep()?;
        }
        for (j, &y) in sampler.state().iter().enumerate() {
            values[(i, j)] = y;
        }
    }
    debug_assert_eq!(sampler.sweeps(), config.total_sweeps());
    MixedDataset::new(theta.families().to_vec(), values)?.with_names(theta.names().to_vec())
}
