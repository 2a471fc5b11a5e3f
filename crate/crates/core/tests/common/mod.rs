#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use ridgemrf::model::{MixedDataset, ParamMatrix, VariateFamily};

use VariateFamily::*;

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// `p` families, all four present when `p >= 4`, in shuffled order.
pub fn mixed_families(rng: &mut ChaCha20Rng, p: usize) -> Vec<VariateFamily> {
    let mut fams: Vec<VariateFamily> = VariateFamily::ALL.iter().copied().take(p).collect();
    while fams.len() < p {
        fams.push(VariateFamily::ALL[rng.random_range(0..4)]);
    }
    for i in (1..p).rev() {
        fams.swap(i, rng.random_range(0..=i));
    }
    fams
}

/// A constraint-satisfying Theta with small interactions.
pub fn feasible_theta(rng: &mut ChaCha20Rng, fams: &[VariateFamily], scale: f64) -> ParamMatrix {
    let p = fams.len();
    let mut theta = ParamMatrix::zeros(fams.to_vec());
    for a in 0..p {
        let d = match fams[a] {
            Exponential => rng.random_range(-2.5..-1.5),
            _ => rng.random_range(-0.5..0.5),
        };
        theta.set(a, a, d).unwrap();
        for b in (a + 1)..p {
            if !theta.is_free(a, b) {
                continue;
            }
            let v: f64 = rng.random_range(-scale..scale);
            let count_pair =
                matches!(fams[a], Poisson | Exponential) && matches!(fams[b], Poisson | Exponential);
            theta.set(a, b, if count_pair { -v.abs() } else { v }).unwrap();
        }
    }
    theta
}

pub fn random_value(rng: &mut ChaCha20Rng, family: VariateFamily) -> f64 {
    match family {
        Bernoulli => f64::from(rng.random_bool(0.5)),
        Gaussian => rng.random_range(-2.0..2.0),
        Poisson => rng.random_range(0..5) as f64,
        Exponential => rng.random_range(0.05..3.0),
    }
}

pub fn random_dataset(rng: &mut ChaCha20Rng, fams: &[VariateFamily], n: usize) -> MixedDataset {
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| fams.iter().map(|&f| random_value(rng, f)).collect())
        .collect();
    MixedDataset::from_rows(fams.to_vec(), &rows).unwrap()
}

pub fn shifted(theta: &ParamMatrix, a: usize, b: usize, h: f64) -> ParamMatrix {
    let mut t = theta.clone();
    t.set(a, b, theta.get(a, b) + h).unwrap();
    t
}

/// Inverse of a permutation given as `new position -> old index`.
pub fn inverse(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (new, &old) in perm.iter().enumerate() {
        inv[old] = new;
    }
    inv
}
