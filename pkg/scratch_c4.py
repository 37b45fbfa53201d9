"""Prototype of the joint-perturbation empirical bound check (criterion 4)."""
import time

import numpy as np

from stgnn_lab.graph import (
    Graph, apply_relative_perturbation, eigenvector_misalignment,
    sample_diagonal_error, sym_eigendecomposition,
)
from stgnn_lab.stability import (
    StabilityBoundInputs, bound_filter, distance_mod_joint,
    exp_filter_operator, warped_exp_filter_operator,
)
from stgnn_lab.stfilter import FirFilter, estimate_lipschitz
from stgnn_lab.timeline import SamplingGrid, warp_exponential_cosine

TS = 0.1
T = 32
EPS_LIST = [0.0125, 0.025, 0.05, 0.1]


def random_adjacency(n, rng):
    a = (rng.uniform(size=(n, n)) < 0.6).astype(float)
    a = np.triu(a, 1)
    return Graph(a + a.T)


def trial(i, rng):
    eps = EPS_LIST[i % len(EPS_LIST)]
    n = int(rng.integers(3, 7))
    graph = random_adjacency(n, rng)
    k = int(rng.integers(2, 6))
    taps = rng.standard_normal(k) / np.sqrt(k)
    filt = FirFilter(taps, TS)
    grid = SamplingGrid(TS, T)

    pert = sample_diagonal_error(n, eps, int(rng.integers(0, 2**31)))
    graph_hat = apply_relative_perturbation(graph, pert)
    warp = warp_exponential_cosine(eps)
    delta = eigenvector_misalignment(graph, pert)

    lam = np.concatenate([
        sym_eigendecomposition(graph).eigenvalues,
        sym_eigendecomposition(graph_hat).eigenvalues,
    ])
    c = estimate_lipschitz(filt, (float(lam.min()), float(lam.max())), np.pi / TS, 96)

    op = exp_filter_operator(filt, graph, grid)
    op_hat = warped_exp_filter_operator(filt, graph_hat, warp, grid)
    dist, (perm, s) = distance_mod_joint(
        op, op_hat, "brute_force", s_grid=np.array([-TS, 0.0, TS]),
        ts=TS, shift_mode="circular", seed=i,
    )
    bound = bound_filter(StabilityBoundInputs(
        lipschitz_c=c, eps_s=eps, delta=delta, n_nodes=n, eps_u=eps,
    ))
    ok = dist <= bound + 10 * eps**2
    return eps, n, dist, bound + 10 * eps**2, delta, c, ok, s


def main():
    rng = np.random.default_rng(2024)
    t0 = time.time()
    results = [trial(i, rng) for i in range(100)]
    dt = time.time() - t0
    n_pass = sum(r[6] for r in results)
    print(f"passed {n_pass}/100 in {dt:.1f}s")
    for r in results:
        if not r[6]:
            print("FAIL", r)
    # show margin distribution
    margins = [r[2] / r[3] for r in results]
    print("dist/bound ratio: min %.3f median %.3f max %.3f" %
          (np.min(margins), np.median(margins), np.max(margins)))
    byeps = {}
    for r in results:
        byeps.setdefault(r[0], []).append(r[2] / r[3])
    for eps, v in sorted(byeps.items()):
        print(f"  eps={eps}: max ratio {max(v):.3f}")


if __name__ == "__main__":
    main()
