//! Ridge-penalized pseudo-likelihood estimation of pairwise Markov random fields
//! over mixed Bernoulli, Gaussian, Poisson and exponential variates.
//!
//! The estimator maximizes the average sum of node-conditional log-likelihoods
//! minus `lambda/2 ||Theta||_F^2` with a parallel block coordinate Newton-Raphson
//! scheme ([`optimizer::fit`]). Around it sit a Gibbs sampler for the joint
//! distribution ([`sampler`]), k-fold selection of `lambda` ([`selection`]),
//! simulation designs ([`experiments`]) and file formats ([`io`]).
//!
//! ```no_run
//! use ridgemrf::{experiments, optimizer, sampler};
//!
//! let (truth, _) = experiments::lattice_theta();
//! let data = sampler::gibbs_chain(&truth, &sampler::ChainConfig::new(500, 1)).unwrap();
//! let res = optimizer::fit(&data, &optimizer::FitConfig::default().with_lambda(0.1)).unwrap();
//! println!("{} iterations, converged = {}", res.iterations, res.converged);
//! ```

pub mod error;
pub mod experiments;
pub mod io;
pub mod model;
pub mod optimizer;
pub mod parallel;
pub mod pseudolikelihood;
pub mod sampler;
pub mod selection;

pub use nalgebra;

pub use error::{Error, Result};
pub use experiments::{lattice_theta, EdgeSet, ExperimentReport};
pub use model::{
    check_constraints, ConstraintReport, MixedDataset, ParamMatrix, VariateFamily,
};
pub use optimizer::{fit, AlphaPolicy, FitConfig, FitResult};
pub use pseudolikelihood::PenaltyConfig;
pub use sampler::{gibbs_chain, ChainConfig};
pub use selection::{cross_validate, CvResult};
