"""FIR filters acting jointly on a graph and on discrete time.

A filter with taps (h_0 .. h_{K-1}) applied to a node-time signal combines
k graph hops with a k-step time delay:

    y_n = sum_k h_k * S^k x_{n-k}          (static graph)
    y_n = h_0 x_n + sum_k h_k (S_{n-1} S_{n-2} ... S_{n-k}) x_{n-k}   (time-varying)

with zero prehistory (x_n = 0 for n < 0), which keeps the operation causal.
The continuous-form frequency response h(lambda, jw) = sum_k h_k
exp(-k*ts*(lambda + jw)) drives the Lipschitz-constant and operator-norm
estimates; a polynomial response evaluator is provided for the executed
convention where the shift is the GSO itself.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .graph import Graph, sym_eigendecomposition
from .timeline import SamplingGrid

_OMEGA_GRID = 512


@dataclass(frozen=True)
class FirFilter:
    """Real filter taps plus the sampling period baked into the response."""

    taps: np.ndarray  # (K,)
    ts: float

    def __post_init__(self):
        taps = np.asarray(self.taps, dtype=np.float64).reshape(-1)
        if taps.size < 1:
            raise ValueError("need at least one tap")
        if not np.all(np.isfinite(taps)):
            raise ValueError("taps must be finite")
        if self.ts <= 0:
            raise ValueError("ts must be positive")
        taps = taps.copy()
        taps.flags.writeable = False
        object.__setattr__(self, "taps", taps)

    @property
    def n_taps(self) -> int:
        return self.taps.size


@dataclass(frozen=True)
class SpaceTimeSignal:
    """F x N x T tensor of node features over a uniform time grid."""

    data: np.ndarray
    grid: SamplingGrid

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 3:
            raise ValueError(f"signal must be F x N x T, got shape {data.shape}")
        if data.shape[2] != self.grid.n_steps:
            raise ValueError("time axis must match the grid length")
        if not np.all(np.isfinite(data)):
            raise ValueError("signal entries must be finite")
        data = data.copy()
        data.flags.writeable = False
        object.__setattr__(self, "data", data)

    @property
    def n_features(self) -> int:
        return self.data.shape[0]

    @property
    def n_nodes(self) -> int:
        return self.data.shape[1]

    @property
    def n_steps(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class FilterSpectrum:
    """Lipschitz constant plus the continuous-form response map of a filter."""

    lipschitz_c: float
    response: "np.vectorize"


def propagate_shifts(filt: FirFilter, graphs: list[np.ndarray], x: np.ndarray) -> np.ndarray:
    """Stack P[k] of k-hop, k-step-delayed versions of x.

    P[0] = x and P[k][:, :, n] = S_{n-1} @ P[k-1][:, :, n-1] (zero for n < k).
    x has shape (F, N, T); the result has shape (K, F, N, T).
    """
    k_taps = filt.n_taps
    f, n_nodes, t_steps = x.shape
    out = np.zeros((k_taps, f, n_nodes, t_steps))
    out[0] = x
    for k in range(1, k_taps):
        prev = out[k - 1]
        for n in range(1, t_steps):
            out[k, :, :, n] = prev[:, :, n - 1] @ graphs[n - 1].T
    return out


def apply_static(filt: FirFilter, graph: Graph, x: SpaceTimeSignal) -> SpaceTimeSignal:
    """Apply the filter on a fixed graph: y_n = sum_k h_k S^k x_{n-k}."""
    if x.n_nodes != graph.n_nodes:
        raise ValueError(
            f"signal has {x.n_nodes} nodes but graph has {graph.n_nodes}"
        )
    return apply_dynamic(filt, [graph] * x.n_steps, x)


def apply_dynamic(filt: FirFilter, graphs: list[Graph], x: SpaceTimeSignal) -> SpaceTimeSignal:
    """Apply the filter with one graph per step.

    The k-th term uses the product S_{n-1} S_{n-2} ... S_{n-k} (the graphs in
    force at each hop's shift time); terms reaching before step 0 vanish.
    """
    if len(graphs) != x.n_steps:
        raise ValueError(f"need {x.n_steps} graphs, got {len(graphs)}")
    mats = [g.gso for g in graphs]
    for g in graphs:
        if g.n_nodes != x.n_nodes:
            raise ValueError("all graphs must match the signal's node count")
    stack = propagate_shifts(filt, mats, x.data)
    y = np.tensordot(filt.taps, stack, axes=(0, 0))
    return SpaceTimeSignal(y, x.grid)


def frequency_response(filt: FirFilter, lam: float, omega: float) -> complex:
    """Continuous-form response sum_k h_k exp(-k*ts*(lam + j*omega))."""
    k = np.arange(filt.n_taps)
    return complex(np.sum(filt.taps * np.exp(-k * filt.ts * (lam + 1j * omega))))


def frequency_response_gso(filt: FirFilter, lam: float, omega: float) -> complex:
    """Executed-convention response sum_k h_k lam^k exp(-j*k*ts*omega).

    This evaluates the spectral multiplier of the filter as implemented with
    the GSO as the shift (powers of the eigenvalue instead of exponentials).
    """
    k = np.arange(filt.n_taps)
    return complex(np.sum(filt.taps * lam**k * np.exp(-1j * k * filt.ts * omega)))


def _response_grid(filt: FirFilter, lams: np.ndarray, omegas: np.ndarray) -> np.ndarray:
    k = np.arange(filt.n_taps)
    zeta = lams[:, None] + 1j * omegas[None, :]
    return np.einsum("k,klo->lo", filt.taps, np.exp(-k[:, None, None] * filt.ts * zeta))


def estimate_lipschitz(
    filt: FirFilter,
    lambda_range: tuple[float, float],
    omega_max: float,
    grid_pts: int = 64,
) -> float:
    """Max of |lam + j*omega| * |d/dzeta response| over a tensor grid.

    The partial derivative with respect to lam equals the one with respect to
    j*omega (the response depends on lam + j*omega only), so a single analytic
    derivative sum_k (-k*ts) h_k exp(-k*ts*(lam + j*omega)) covers both.
    """
    if grid_pts < 16:
        raise ValueError("grid_pts must be at least 16")
    lo, hi = lambda_range
    lams = np.linspace(lo, hi, grid_pts)
    omegas = np.linspace(0.0, omega_max, grid_pts)
    k = np.arange(filt.n_taps)
    zeta = lams[:, None] + 1j * omegas[None, :]
    deriv = np.einsum(
        "k,klo->lo",
        -k * filt.ts * filt.taps,
        np.exp(-k[:, None, None] * filt.ts * zeta),
    )
    return float(np.max(np.abs(zeta) * np.abs(deriv)))


def filter_spectrum(
    filt: FirFilter,
    lambda_range: tuple[float, float],
    omega_max: float,
    grid_pts: int = 64,
) -> FilterSpectrum:
    """Bundle the estimated Lipschitz constant with the response evaluator."""
    c = estimate_lipschitz(filt, lambda_range, omega_max, grid_pts)
    resp = np.vectorize(lambda lam, om: frequency_response(filt, lam, om))
    return FilterSpectrum(c, resp)


def operator_norm(filt: FirFilter, graph: Graph, omega_max: float) -> float:
    """Largest response magnitude over the graph spectrum and an omega grid.

    Evaluates |h(lambda_i, j*omega)| on every eigenvalue of the graph and a
    512-point grid over [0, omega_max].
    """
    decomp = sym_eigendecomposition(graph)
    omegas = np.linspace(0.0, omega_max, _OMEGA_GRID)
    resp = _response_grid(filt, decomp.eigenvalues, omegas)
    return float(np.max(np.abs(resp)))


def signal_to_csv(sig: SpaceTimeSignal) -> str:
    """Serialize as CSV with header f,n,t,value — one row per tensor entry."""
    buf = io.StringIO()
    buf.write("f,n,t,value\n")
    f, n, t = sig.data.shape
    for fi in range(f):
        for ni in range(n):
            for ti in range(t):
                buf.write(f"{fi},{ni},{ti},{float(sig.data[fi, ni, ti])!r}\n")
    return buf.getvalue()


def signal_from_csv(text: str, ts: float) -> SpaceTimeSignal:
    """Inverse of signal_to_csv; the sampling period is supplied by the caller."""
    lines = text.strip().splitlines()
    if not lines or lines[0] != "f,n,t,value":
        raise ValueError("bad signal CSV header")
    entries = []
    for ln in lines[1:]:
        fi, ni, ti, val = ln.split(",")
        entries.append((int(fi), int(ni), int(ti), float(val)))
    if not entries:
        raise ValueError("empty signal CSV")
    f = max(e[0] for e in entries) + 1
    n = max(e[1] for e in entries) + 1
    t = max(e[2] for e in entries) + 1
    data = np.zeros((f, n, t))
    for fi, ni, ti, val in entries:
        data[fi, ni, ti] = val
    return SpaceTimeSignal(data, SamplingGrid(ts, t))
