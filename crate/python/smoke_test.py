"""Smoke test for the ridgemrf extension module.

Build and run from the repository root:

    cargo build --release -p ridgemrf-python
    cp target/release/libridgemrf_py.so python/ridgemrf.so
    python3 python/smoke_test.py
"""

import math
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent))

import ridgemrf  # noqa: E402


def main():
    theta, edges = ridgemrf.lattice_theta()
    assert theta.p == 16
    assert len(edges) == 36
    ok, problems = theta.check_constraints()
    assert ok, problems

    data = ridgemrf.gibbs_chain(theta, 150, seed=1, burn_in=500, thin=20)
    assert (data.n, data.p) == (150, 16)
    assert data.families == theta.families

    res = ridgemrf.fit(data, lam=0.1)
    assert res.converged
    assert res.iterations == len(res.error_trace)
    assert res.error_trace[-1] <= 1e-10
    hat = res.theta_hat
    print(f"fit: {res.iterations} iterations, error {hat.frobenius_distance(theta):.3f}")

    again = ridgemrf.ParamMatrix.from_json(hat.to_json())
    assert again.to_list() == hat.to_list()

    top = hat.top_k_edges(36)
    recovered = sum(1 for a, b, _ in top if any(a == x and b == y for x, y, _ in edges))
    print(f"top-36 edges: {recovered} of 36 true edges")

    cv = ridgemrf.cross_validate(data, k=3, grid_min=1e-3, grid_max=1.0, grid_points=4)
    assert cv.lambda_opt in cv.lambda_grid
    assert len(cv.mean_mspe) == 4

    one = ridgemrf.Dataset(["gaussian"], [[1.0], [2.5], [1.5], [3.0]])
    g = ridgemrf.fit(one)
    assert abs(g.theta_hat.get(0, 0) - 2.0) < 1e-8

    try:
        ridgemrf.Dataset(["bernoulli"], [[2.0]])
    except ValueError as exc:
        assert "domain" in str(exc)
    else:
        raise AssertionError("domain violation not reported")

    pl = ridgemrf.pseudo_loglik(ridgemrf.ParamMatrix(["bernoulli"], [[0.0]]),
                                ridgemrf.Dataset(["bernoulli"], [[0.0], [1.0]]))
    assert abs(pl + math.log(2.0)) < 1e-14

    nw = ridgemrf.nodewise_baseline(data)
    assert nw.p == 16
    print("smoke test passed")


if __name__ == "__main__":
    main()
