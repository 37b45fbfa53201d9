"""Prototype dilation special case + permuted-copy recovery."""
import time

import numpy as np

from stgnn_lab.graph import Graph, GraphPerturbation, eigenvector_misalignment, sym_eigendecomposition
from stgnn_lab.stability import (
    StabilityBoundInputs, bound_filter, distance_mod_permutation, exp_filter_operator,
)
from stgnn_lab.stfilter import FirFilter, estimate_lipschitz
from stgnn_lab.timeline import SamplingGrid

TS = 0.1
T = 32


def random_adjacency(n, rng):
    a = (rng.uniform(size=(n, n)) < 0.6).astype(float)
    a = np.triu(a, 1)
    return Graph(a + a.T)


def main():
    rng = np.random.default_rng(7)
    t0 = time.time()
    worst = 0.0
    for i in range(50):
        eps = float(rng.uniform(0.01, 0.1))
        n = int(rng.integers(3, 7))
        graph = random_adjacency(n, rng)
        k = int(rng.integers(2, 6))
        filt = FirFilter(rng.standard_normal(k) / np.sqrt(k), TS)
        grid = SamplingGrid(TS, T)
        pert = GraphPerturbation((eps / 2) * np.eye(n), np.arange(n), eps / 2)
        delta = eigenvector_misalignment(graph, pert)
        assert delta <= 1e-6, delta
        graph_hat = Graph((1 + eps) * graph.gso)
        lam = np.concatenate([
            sym_eigendecomposition(graph).eigenvalues,
            sym_eigendecomposition(graph_hat).eigenvalues,
        ])
        c = estimate_lipschitz(filt, (float(lam.min()), float(lam.max())), np.pi / TS, 96)
        op = exp_filter_operator(filt, graph, grid)
        op_hat = exp_filter_operator(filt, graph_hat, grid)
        dist, _ = distance_mod_permutation(op, op_hat, "identity_only", seed=i)
        limit = 2 * c * eps + 10 * eps**2
        worst = max(worst, dist / limit)
        assert dist <= limit, (dist, limit)
    print(f"dilation: 50/50 within bound, worst ratio {worst:.3f}, {time.time()-t0:.1f}s")

    # permuted + delayed copy recovery
    n = 5
    graph = random_adjacency(n, rng)
    filt = FirFilter(rng.standard_normal(3), TS)
    grid = SamplingGrid(TS, T)
    perm = rng.permutation(n)
    relabeled = Graph(graph.gso[np.ix_(perm, perm)])
    op = exp_filter_operator(filt, graph, grid)
    op_hat = exp_filter_operator(filt, relabeled, grid)
    dist, got = distance_mod_permutation(op, op_hat, "brute_force", seed=0)
    print(f"permuted copy: dist={dist:.2e} recovered={got} true={tuple(perm)}")
    assert dist <= 1e-8


if __name__ == "__main__":
    main()
