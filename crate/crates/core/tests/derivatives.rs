mod common;

use std::collections::HashMap;

use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use rand::Rng;
use ridgemrf::model::{
    constraint_penalty, family_functions, MixedDataset, ParamMatrix, VariateFamily,
    DEFAULT_BARRIER_BETA,
};
use ridgemrf::pseudolikelihood::{
    block_derivatives, full_gradient, full_gradient_norm, penalized_pseudo_loglik, pseudo_loglik,
    PenaltyConfig,
};

use common::*;
use VariateFamily::*;

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn block_gradient_and_hessian_match_finite_differences(
        seed in any::<u64>(),
        p in 2usize..=6,
        n in 5usize..=50,
        lambda in 0.0f64..1.0,
        diag in any::<bool>(),
    ) {
        let mut r = rng(seed);
        let fams = mixed_families(&mut r, p);
        let theta = feasible_theta(&mut r, &fams, 0.3);
        let data = random_dataset(&mut r, &fams, n);
        let pen = PenaltyConfig { lambda, penalize_diagonal: diag, ..Default::default() };
        let f = |t: &ParamMatrix| penalized_pseudo_loglik(t, &data, &pen).unwrap();
        let h = 1e-5;
        for j in 0..p {
            let bd = block_derivatives(&theta, &data, &pen, j).unwrap();
            for k in 0..p {
                if !bd.free[k] {
                    prop_assert_eq!(bd.gradient[k], 0.0);
                    continue;
                }
                let fd = (f(&shifted(&theta, j, k, h)) - f(&shifted(&theta, j, k, -h))) / (2.0 * h);
                prop_assert!(rel(bd.gradient[k], fd) <= 1e-6, "grad ({j},{k}) {} vs {fd}", bd.gradient[k]);
                let up = block_derivatives(&shifted(&theta, j, k, h), &data, &pen, j).unwrap();
                let down = block_derivatives(&shifted(&theta, j, k, -h), &data, &pen, j).unwrap();
                for l in (0..p).filter(|&l| bd.free[l]) {
                    let fd = (up.gradient[l] - down.gradient[l]) / (2.0 * h);
                    prop_assert!(rel(bd.hessian[(l, k)], fd) <= 1e-5);
                }
            }
            prop_assert_eq!(bd.hessian.clone(), bd.hessian.transpose());
        }
    }

    #[test]
    fn block_gradients_agree_with_full_gradient(seed in any::<u64>(), p in 2usize..=6) {
        let mut r = rng(seed);
        let fams = mixed_families(&mut r, p);
        let theta = feasible_theta(&mut r, &fams, 0.3);
        let data = random_dataset(&mut r, &fams, 20);
        let pen = PenaltyConfig::ridge(0.2);
        let g = full_gradient(&theta, &data, &pen).unwrap();
        let mut sq = 0.0;
        for j in 0..p {
            let bd = block_derivatives(&theta, &data, &pen, j).unwrap();
            for k in 0..p {
                prop_assert_eq!(bd.gradient[k], g[(j, k)]);
                if k >= j && bd.free[k] {
                    sq += g[(j, k)].powi(2);
                }
            }
        }
        let norm = full_gradient_norm(&theta, &data, &pen).unwrap();
        prop_assert!((norm - sq.sqrt()).abs() <= 1e-12 * norm.max(1.0));
    }

    #[test]
    fn log_partition_derivatives(eta in -4.0f64..4.0, fam in 0usize..4) {
        let fam = VariateFamily::ALL[fam];
        let eta = if fam == Exponential { -eta.abs() - 0.1 } else { eta };
        let h = 1e-5;
        let d = |e: f64| family_functions(fam, e).unwrap().logpartition;
        let m = |e: f64| family_functions(fam, e).unwrap().mean;
        let mo = family_functions(fam, eta).unwrap();
        prop_assert!(rel(mo.mean, (d(eta + h) - d(eta - h)) / (2.0 * h)) <= 1e-7);
        prop_assert!(rel(mo.variance, (m(eta + h) - m(eta - h)) / (2.0 * h)) <= 1e-6);
        prop_assert!(mo.variance > 0.0);
    }

    #[test]
    fn constraint_penalty_is_midpoint_convex(seed in any::<u64>(), p in 2usize..=6, scale in 0.1f64..3.0) {
        let mut r = rng(seed);
        let fams = mixed_families(&mut r, p);
        let mut random_theta = || {
            let mut t = ParamMatrix::zeros(fams.clone());
            for a in 0..p {
                for b in a..p {
                    if t.is_free(a, b) {
                        t.set(a, b, r.random_range(-scale..scale)).unwrap();
                    }
                }
            }
            t
        };
        let (x, y) = (random_theta(), random_theta());
        let mid = ParamMatrix::from_dense(fams.clone(), (x.entries() + y.entries()) * 0.5).unwrap();
        let v = |t: &ParamMatrix| constraint_penalty(t, DEFAULT_BARRIER_BETA).value;
        let bound = 0.5 * (v(&x) + v(&y));
        prop_assert!(v(&mid) <= bound + 1e-9 * bound.max(1.0));
    }

    #[test]
    fn penalized_objective_is_midpoint_concave(seed in any::<u64>(), p in 2usize..=6) {
        let mut r = rng(seed);
        let fams = mixed_families(&mut r, p);
        let x = feasible_theta(&mut r, &fams, 0.3);
        let y = feasible_theta(&mut r, &fams, 0.3);
        let data = random_dataset(&mut r, &fams, 30);
        let mid = ParamMatrix::from_dense(fams.clone(), (x.entries() + y.entries()) * 0.5).unwrap();
        let pen = PenaltyConfig::ridge(0.1);
        let f = |t: &ParamMatrix| penalized_pseudo_loglik(t, &data, &pen).unwrap();
        prop_assert!(f(&mid) >= 0.5 * (f(&x) + f(&y)) - 1e-10);
    }

    #[test]
    fn pseudo_loglik_is_permutation_invariant(seed in any::<u64>(), p in 2usize..=6) {
        let mut r = rng(seed);
        let fams = mixed_families(&mut r, p);
        let theta = feasible_theta(&mut r, &fams, 0.3);
        let data = random_dataset(&mut r, &fams, 25);
        let mut perm: Vec<usize> = (0..p).collect();
        for i in (1..p).rev() {
            perm.swap(i, r.random_range(0..=i));
        }
        let a = pseudo_loglik(&theta, &data).unwrap();
        let b = pseudo_loglik(&theta.permuted(&perm), &data.permuted_columns(&perm)).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }
}

/// Direct enumeration of each node conditional of an all-Bernoulli model.
fn bernoulli_conditional_loglik(theta: &ParamMatrix, rows: &[Vec<f64>]) -> f64 {
    let p = theta.p();
    let mut total = 0.0;
    for y in rows {
        for j in 0..p {
            let weight = |v: f64| {
                let mut e = theta.get(j, j) * v;
                for k in (0..p).filter(|&k| k != j) {
                    e += theta.get(j, k) * v * y[k];
                }
                e.exp()
            };
            total += (weight(y[j]) / (weight(0.0) + weight(1.0))).ln();
        }
    }
    total / rows.len() as f64
}

#[test]
fn bernoulli_pseudo_loglik_matches_enumeration() {
    for p in [2usize, 3] {
        for seed in 0..25u64 {
            let mut r = rng(seed);
            let mut theta = ParamMatrix::zeros(vec![Bernoulli; p]);
            for a in 0..p {
                for b in a..p {
                    theta.set(a, b, r.random_range(-2.0..2.0)).unwrap();
                }
            }
            // every state once, plus a few repeats
            let mut rows: Vec<Vec<f64>> = (0..1usize << p)
                .map(|s| (0..p).map(|j| ((s >> j) & 1) as f64).collect())
                .collect();
            for _ in 0..5 {
                rows.push((0..p).map(|_| f64::from(r.random_bool(0.3))).collect());
            }
            let data = MixedDataset::from_rows(vec![Bernoulli; p], &rows).unwrap();
            assert_abs_diff_eq!(
                pseudo_loglik(&theta, &data).unwrap(),
                bernoulli_conditional_loglik(&theta, &rows),
                epsilon = 1e-12
            );
        }
    }
}

#[test]
fn exchanging_identical_columns_swaps_gradient_entries() {
    let mut r = rng(77);
    let fams = vec![Poisson, Bernoulli, Bernoulli, Gaussian];
    let theta = feasible_theta(&mut r, &fams, 0.3);
    let mut sym = theta.clone();
    // make variates 1 and 2 exchangeable
    sym.set(2, 2, theta.get(1, 1)).unwrap();
    sym.set(0, 2, theta.get(0, 1)).unwrap();
    sym.set(2, 3, theta.get(1, 3)).unwrap();
    let data = random_dataset(&mut r, &fams, 40);
    let swapped = data.permuted_columns(&[0, 2, 1, 3]);
    let pen = PenaltyConfig::ridge(0.05);
    let a = full_gradient(&sym, &data, &pen).unwrap();
    let b = full_gradient(&sym, &swapped, &pen).unwrap();
    let idx: HashMap<usize, usize> = [(0, 0), (1, 2), (2, 1), (3, 3)].into_iter().collect();
    for i in 0..4 {
        for k in 0..4 {
            assert_abs_diff_eq!(a[(i, k)], b[(idx[&i], idx[&k])], epsilon = 1e-12);
        }
    }
}
