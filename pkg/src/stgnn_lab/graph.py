"""Graphs, graph shift operators, spectral decomposition, and relative perturbations.

Functions:

build_knn_graph:             symmetric M-nearest-neighbor adjacency from 2D positions
build_range_graph:           symmetric communication-range adjacency from 2D positions
sym_eigendecomposition:      eigenpairs of a symmetric shift operator, canonical signs
apply_relative_perturbation: relabeled degree-relative perturbation of a shift operator
sample_diagonal_error:       seeded diagonal error matrix with exact spectral norm
eigenvector_misalignment:    basis misalignment between an error matrix and the graph
graph_to_text / graph_from_text: plain-text (de)serialization of shift operators

All shift operators built here are binary adjacency matrices (zero diagonal,
symmetric).  Every returned object is an immutable value; all functions are
pure and safe to call concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

_SYM_TOL = 0.0  # construction enforces exact symmetry
_CLUSTER_GAP = 1e-8  # eigenvalues closer than this are treated as degenerate


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Graph:
    """An undirected graph represented by its N x N symmetric shift operator."""

    gso: np.ndarray

    def __post_init__(self):
        gso = np.asarray(self.gso, dtype=np.float64)
        if gso.ndim != 2 or gso.shape[0] != gso.shape[1]:
            raise ValueError(f"shift operator must be square, got shape {gso.shape}")
        if not np.array_equal(gso, gso.T):
            raise ValueError("shift operator must be exactly symmetric")
        object.__setattr__(self, "gso", _freeze(gso))

    @property
    def n_nodes(self) -> int:
        return self.gso.shape[0]


@dataclass(frozen=True)
class SpectralDecomposition:
    """Eigenvalues (ascending) and orthonormal eigenvectors of a shift operator."""

    eigenvalues: np.ndarray  # (N,)
    eigenvectors: np.ndarray  # (N, N), columns

    def __post_init__(self):
        object.__setattr__(self, "eigenvalues", _freeze(self.eigenvalues))
        object.__setattr__(self, "eigenvectors", _freeze(self.eigenvectors))


@dataclass(frozen=True)
class GraphPerturbation:
    """A symmetric error matrix E, a node relabeling, and eps_s = ||E||_2."""

    error_matrix: np.ndarray  # (N, N) symmetric
    permutation: np.ndarray  # (N,) integer relabeling
    eps_s: float

    def __post_init__(self):
        e = np.asarray(self.error_matrix, dtype=np.float64)
        if not np.array_equal(e, e.T):
            raise ValueError("error matrix must be exactly symmetric")
        perm = np.asarray(self.permutation, dtype=np.int64)
        if sorted(perm.tolist()) != list(range(e.shape[0])):
            raise ValueError("permutation must be a relabeling of 0..N-1")
        norm = float(np.linalg.norm(e, 2)) if e.size else 0.0
        if abs(norm - self.eps_s) > 1e-9:
            raise ValueError(
                f"stored eps_s={self.eps_s} disagrees with ||E||={norm}"
            )
        object.__setattr__(self, "error_matrix", _freeze(e))
        perm.flags.writeable = False
        object.__setattr__(self, "permutation", perm)


def build_knn_graph(positions: np.ndarray, m_neighbors: int) -> Graph:
    """Binary symmetric adjacency connecting each node to its M nearest neighbors.

    Edge (i, j) exists iff j is among i's M nearest nodes or i is among j's.
    Distance ties are broken by the lower node index.  Duplicate positions are
    rejected: a zero distance makes "nearest" ill-defined.
    """
    pos = np.asarray(positions, dtype=np.float64)
    n = pos.shape[0]
    if n < 2:
        raise ValueError("need at least 2 nodes")
    if not 1 <= m_neighbors < n:
        raise ValueError(f"m_neighbors must be in [1, {n - 1}], got {m_neighbors}")
    diffs = pos[:, None, :] - pos[None, :, :]
    dist = np.sqrt(np.sum(diffs**2, axis=-1))
    off_diag = ~np.eye(n, dtype=bool)
    if np.any(dist[off_diag] == 0.0):
        raise ValueError("duplicate positions: nearest neighbors are ill-defined")
    adj = np.zeros((n, n), dtype=np.float64)
    idx = np.arange(n)
    for i in range(n):
        order = np.lexsort((idx, dist[i]))  # sort by distance, then node index
        order = order[order != i][:m_neighbors]
        adj[i, order] = 1.0
    adj = np.maximum(adj, adj.T)  # the "or" rule symmetrizes
    return Graph(adj)


def build_range_graph(positions: np.ndarray, range_r: float) -> Graph:
    """Binary symmetric adjacency: (i, j) = 1 iff ||p_i - p_j|| < range_r, i != j."""
    if range_r <= 0:
        raise ValueError("range_r must be positive")
    pos = np.asarray(positions, dtype=np.float64)
    n = pos.shape[0]
    diffs = pos[:, None, :] - pos[None, :, :]
    dist = np.sqrt(np.sum(diffs**2, axis=-1))
    adj = (dist < range_r).astype(np.float64)
    np.fill_diagonal(adj, 0.0)
    return Graph(adj)


def _canonical_signs(vecs: np.ndarray) -> np.ndarray:
    """Flip each column so its largest-magnitude entry (first on ties) is positive."""
    vecs = vecs.copy()
    for i in range(vecs.shape[1]):
        k = int(np.argmax(np.abs(vecs[:, i])))
        if vecs[k, i] < 0:
            vecs[:, i] = -vecs[:, i]
    return vecs


def sym_eigendecomposition(graph: Graph) -> SpectralDecomposition:
    """Full eigendecomposition of the symmetric shift operator.

    Eigenvalues are sorted ascending.  A deterministic sign convention is
    applied: each eigenvector's entry of largest magnitude is made positive
    (ties resolved by the lowest index).  Raises if the underlying iterative
    solver fails to converge within LAPACK's internal iteration cap.
    """
    try:
        vals, vecs = np.linalg.eigh(graph.gso)
    except np.linalg.LinAlgError as exc:
        raise RuntimeError(f"eigendecomposition failed to converge: {exc}") from exc
    return SpectralDecomposition(vals, _canonical_signs(vecs))


def apply_relative_perturbation(graph: Graph, pert: GraphPerturbation) -> Graph:
    """Perturbed shift operator: relabel(S + SE + ES) under the stored permutation.

    The returned operator S_hat satisfies  relabel_back(S_hat) = S + SE + ES
    elementwise, where relabeling follows the convention
    S_hat[i, j] = (S + SE + ES)[perm[i], perm[j]].
    """
    s = graph.gso
    e = pert.error_matrix
    if e.shape != s.shape:
        raise ValueError(f"dimension mismatch: S is {s.shape}, E is {e.shape}")
    se = s @ e
    # ES = (SE)^T for symmetric S, E; the grouping keeps m exactly symmetric
    m = s + (se + se.T)
    perm = pert.permutation
    return Graph(m[np.ix_(perm, perm)])


def sample_diagonal_error(n: int, eps: float, seed: int) -> GraphPerturbation:
    """Diagonal error matrix with entries uniform on [-eps, eps], rescaled so
    the largest magnitude (hence the spectral norm) equals eps exactly.

    The permutation is the identity.  Deterministic given the seed.
    """
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    rng = np.random.default_rng(seed)
    diag = rng.uniform(-eps, eps, size=n)
    peak = np.max(np.abs(diag)) if n else 0.0
    if eps > 0 and peak > 0:
        diag = diag * (eps / peak)
    elif eps == 0:
        diag = np.zeros(n)
    return GraphPerturbation(np.diag(diag), np.arange(n), float(eps))


def _match_columns(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Pair each column of v with a distinct column of u maximizing |<u_j, v_i>|."""
    overlap = np.abs(u.T @ v)  # overlap[j, i] = |<u_j, v_i>|
    rows, cols = linear_sum_assignment(-overlap)
    order = np.empty(u.shape[1], dtype=np.int64)
    order[cols] = rows
    return order


def eigenvector_misalignment(graph: Graph, pert: GraphPerturbation) -> float:
    """Misalignment delta = (||U - V|| + 1)^2 - 1 between the eigenbases of the
    error matrix (U) and the shift operator (V), spectral norms.

    Eigenbases are defined only up to column order, signs, and rotations inside
    degenerate eigenspaces, so U is canonicalized against V before taking the
    norm: columns are paired by maximal absolute overlap, and within each
    cluster of (near-)equal error-matrix eigenvalues the paired block is
    aligned to V by an orthogonal Procrustes rotation (which covers the sign
    flip for isolated eigenvalues).  The result lies in [0, 8].
    """
    v = sym_eigendecomposition(graph).eigenvectors
    try:
        evals, u = np.linalg.eigh(pert.error_matrix)
    except np.linalg.LinAlgError as exc:
        raise RuntimeError(f"eigendecomposition failed to converge: {exc}") from exc
    order = _match_columns(u, v)
    u = u[:, order]
    evals = evals[order]
    # group matched columns whose error-matrix eigenvalues coincide
    remaining = list(range(len(evals)))
    aligned = np.empty_like(u)
    while remaining:
        i = remaining.pop(0)
        cluster = [i]
        for j in list(remaining):
            if abs(evals[j] - evals[i]) < _CLUSTER_GAP:
                cluster.append(j)
                remaining.remove(j)
        uc = u[:, cluster]
        w, _, zt = np.linalg.svd(uc.T @ v[:, cluster])
        aligned[:, cluster] = uc @ (w @ zt)
    diff = float(np.linalg.norm(aligned - v, 2))
    return (diff + 1.0) ** 2 - 1.0


def graph_to_text(graph: Graph) -> str:
    """Serialize: first line N, then N rows of N space-separated entries."""
    lines = [str(graph.n_nodes)]
    for row in graph.gso:
        lines.append(" ".join(f"{x:.17g}" for x in row))
    return "\n".join(lines) + "\n"


def graph_from_text(text: str) -> Graph:
    """Inverse of graph_to_text."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ValueError("empty graph text")
    try:
        n = int(lines[0])
    except ValueError as exc:
        raise ValueError(f"bad node count line: {lines[0]!r}") from exc
    if len(lines) != n + 1:
        raise ValueError(f"expected {n} matrix rows, found {len(lines) - 1}")
    try:
        rows = [[float(x) for x in ln.split()] for ln in lines[1:]]
    except ValueError as exc:
        raise ValueError(f"non-numeric matrix entry: {exc}") from exc
    mat = np.array(rows, dtype=np.float64)
    if mat.shape != (n, n):
        raise ValueError(f"expected a {n}x{n} matrix, got {mat.shape}")
    return Graph(mat)
