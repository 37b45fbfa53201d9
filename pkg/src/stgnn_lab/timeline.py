"""Discrete sampling grids, time-warp perturbations, and trajectory resampling.

The warp model: instead of x(u) the signal is observed as x(u + z(u)), where
z is differentiable and its derivative xi = z' controls the perturbation
strength.  Resampling uses piecewise-linear interpolation with query times
clamped to the grid span, so warps never extrapolate past the horizon.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

_XI_CHECK_TOL = 1e-6
_SIMPSON_PANELS = 2**14


@dataclass(frozen=True)
class SamplingGrid:
    """Uniform time grid: samples at k * ts for k = 0..n_steps-1."""

    ts: float
    n_steps: int

    def __post_init__(self):
        if self.ts <= 0:
            raise ValueError("sampling period must be positive")
        if self.n_steps < 1:
            raise ValueError("need at least one sample")

    def times(self) -> np.ndarray:
        return np.arange(self.n_steps) * self.ts

    @property
    def horizon(self) -> float:
        return (self.n_steps - 1) * self.ts


@dataclass(frozen=True)
class WarpFunction:
    """A differentiable time warp z with error function xi = z' and ||xi||_2 <= kappa * eps_u."""

    eps_u: float
    z: Callable[[np.ndarray], np.ndarray]
    xi: Callable[[np.ndarray], np.ndarray]
    kappa: float

    def check_derivative(self, probe: np.ndarray | None = None) -> None:
        """Verify xi matches a central difference of z on a probe grid."""
        if probe is None:
            probe = np.linspace(0.0, 10.0, 101)
        h = 1e-6
        fd = (self.z(probe + h) - self.z(probe - h)) / (2 * h)
        if np.max(np.abs(fd - self.xi(probe))) > _XI_CHECK_TOL:
            raise ValueError("xi is not the derivative of z")


def warp_exponential_cosine(eps: float) -> WarpFunction:
    """Damped-cosine warp z(u) = sqrt(eps) * cos(eps*u) * exp(-eps*u).

    Its derivative is xi(u) = -eps^(3/2) * (sin(eps*u) + cos(eps*u)) * exp(-eps*u),
    whose L2 norm over [0, inf) is sqrt(3/4) * eps.
    """
    if not 0 <= eps < 1:
        raise ValueError("eps must lie in [0, 1)")
    if eps == 0:
        return WarpFunction(0.0, lambda u: np.zeros_like(np.asarray(u, float)),
                            lambda u: np.zeros_like(np.asarray(u, float)),
                            math.sqrt(0.75))
    root = math.sqrt(eps)

    def z(u):
        u = np.asarray(u, dtype=np.float64)
        return root * np.cos(eps * u) * np.exp(-eps * u)

    def xi(u):
        u = np.asarray(u, dtype=np.float64)
        return -(eps * root) * (np.sin(eps * u) + np.cos(eps * u)) * np.exp(-eps * u)

    return WarpFunction(float(eps), z, xi, math.sqrt(0.75))


def xi_l2_norm(warp: WarpFunction) -> float:
    """L2 norm of the error function over [0, inf), by composite Simpson.

    The integrand of the damped-cosine family decays like exp(-2*eps*u), so
    truncating at 40/eps leaves a negligible tail.
    """
    if warp.eps_u == 0:
        return 0.0
    upper = 40.0 / warp.eps_u
    n = _SIMPSON_PANELS
    u = np.linspace(0.0, upper, n + 1)
    f = warp.xi(u) ** 2
    h = upper / n
    integral = (h / 3.0) * (f[0] + f[-1] + 4 * np.sum(f[1:-1:2]) + 2 * np.sum(f[2:-1:2]))
    return math.sqrt(integral)


def _interp_rows(samples: np.ndarray, old_times: np.ndarray, query: np.ndarray) -> np.ndarray:
    """Piecewise-linear interpolation along the last axis, one row at a time."""
    flat = samples.reshape(-1, samples.shape[-1])
    out = np.empty((flat.shape[0], query.shape[0]))
    for i, row in enumerate(flat):
        out[i] = np.interp(query, old_times, row)
    return out.reshape(samples.shape[:-1] + (query.shape[0],))


def resample_warped(samples: np.ndarray, grid: SamplingGrid, warp: WarpFunction) -> np.ndarray:
    """Sample the linear interpolant of `samples` at the warped times k*ts + z(k*ts).

    Works on any array whose last axis is time (length grid.n_steps).  Query
    times are clamped to [0, horizon].
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.shape[-1] != grid.n_steps:
        raise ValueError("last axis must match the grid length")
    if grid.n_steps < 2:
        raise ValueError("need at least 2 samples to interpolate")
    times = grid.times()
    query = np.clip(times + warp.z(times), 0.0, grid.horizon)
    return _interp_rows(samples, times, query)


def regrid(samples: np.ndarray, old_ts: float, new_ts: float) -> np.ndarray:
    """Linearly resample onto a new uniform grid spanning the same duration.

    The output has floor((T-1) * old_ts / new_ts) + 1 samples.
    """
    if old_ts <= 0 or new_ts <= 0:
        raise ValueError("sampling periods must be positive")
    samples = np.asarray(samples, dtype=np.float64)
    t_old = samples.shape[-1]
    duration = (t_old - 1) * old_ts
    t_new = int(math.floor(duration / new_ts + 1e-12)) + 1
    if t_old < 1 or t_new < 1:
        raise ValueError("new grid would be empty")
    old_times = np.arange(t_old) * old_ts
    new_times = np.arange(t_new) * new_ts
    return _interp_rows(samples, old_times, new_times)
