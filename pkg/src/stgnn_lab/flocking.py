"""Flocking/consensus task: reference tracking, mobility, controllers, datasets.

A swarm of N planar agents tracks a slowly drifting reference velocity that
each agent observes with a per-trajectory constant bias, while a pairwise
potential keeps agents from colliding.  An optimal centralized controller
(which sees every agent's observation) supplies imitation targets; a
decentralized baseline works from k-hop delayed information only.

Two dataset flavors: `static_grid` freezes the agents on a mesh grid (the
graph never changes; only velocities and the reference evolve), `dynamic`
rolls the swarm forward under the centralized controller, rebuilding the
communication graph from positions at every step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .graph import Graph, build_range_graph
from .stfilter import SpaceTimeSignal
from .stgnn import Dataset, Example, StgnnParams, forward
from .timeline import SamplingGrid

_NORM_2D = math.sqrt(math.pi / 2)  # E||standard 2D normal||
_MIN_SPACING = 0.1  # rejection threshold for initial placements, meters


@dataclass(frozen=True)
class SwarmState:
    positions: np.ndarray  # (N, 2) meters
    velocities: np.ndarray  # (N, 2) m/s
    step: int = 0

    def __post_init__(self):
        for name in ("positions", "velocities"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} must be finite")
            arr = arr.copy()
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)


@dataclass(frozen=True)
class FlockingConfig:
    n_agents: int = 50
    density_rho0: float = 0.5  # agents per square meter
    comm_range_r: float = 2.0  # meters
    mu_max_accel: float = 3.0  # m/s^2
    t_steps: int = 100
    ts_seconds: float = 0.1
    ref_speed: float = 1.0  # E||r_0||, m/s
    ref_increment: float = 1.0  # E||dr_n||, m/s
    obs_noise: float = 1.0  # E||observation bias||, m/s
    vel_noise: float = 1.0  # E||initial velocity offset||, m/s
    chi_potential: float = 1.0  # meters
    k_hops: int = 4
    seed: int = 0


@dataclass(frozen=True)
class RolloutResult:
    positions: np.ndarray  # (T+1, N, 2)
    velocities: np.ndarray  # (T+1, N, 2)
    accelerations: np.ndarray  # (T, N, 2)
    costs: np.ndarray  # (T,)
    consensus: np.ndarray  # (T,) mean ||v_i - r_n||
    reference: np.ndarray  # (T, 2)


def _scaled_normal(rng: np.random.Generator, target_norm: float, shape) -> np.ndarray:
    """2D normal draws scaled so the expected Euclidean norm hits the target."""
    raw = rng.standard_normal(shape)
    return raw * (target_norm / _NORM_2D)


def generate_reference(config: FlockingConfig, seed: int) -> np.ndarray:
    """Reference velocity walk r_{n+1} = r_n + ts * dr_n, Gaussian r_0 and dr_n."""
    rng = np.random.default_rng(seed)
    r0 = _scaled_normal(rng, config.ref_speed, 2)
    incs = _scaled_normal(rng, config.ref_increment, (config.t_steps, 2))
    ref = np.empty((config.t_steps, 2))
    ref[0] = r0
    for n in range(1, config.t_steps):
        ref[n] = ref[n - 1] + config.ts_seconds * incs[n - 1]
    return ref


def observe_reference(
    r_n: np.ndarray, noise_scale: float, seed: int, n_agents: int
) -> np.ndarray:
    """Per-agent biased observations r_n + bias_i.

    The bias is drawn once from the seed, so repeated calls with the same seed
    return the same per-agent offsets: constant in time along a trajectory.
    """
    bias = _scaled_normal(np.random.default_rng(seed), noise_scale, (n_agents, 2))
    return np.asarray(r_n, dtype=np.float64)[None, :] + bias


def clip_acceleration(accel: np.ndarray, mu: float) -> np.ndarray:
    """Direction-preserving magnitude clip to ||u|| <= mu."""
    accel = np.asarray(accel, dtype=np.float64)
    norms = np.linalg.norm(accel, axis=-1, keepdims=True)
    factor = np.ones_like(norms)
    over = norms > mu
    factor[over] = mu / norms[over]
    return accel * factor


def step_mobility(state: SwarmState, accel: np.ndarray, ts: float) -> SwarmState:
    """Exact kinematics: v += ts*u, p += ts*v + ts^2/2 * u."""
    accel = np.asarray(accel, dtype=np.float64)
    new_v = state.velocities + ts * accel
    new_p = state.positions + ts * state.velocities + 0.5 * ts**2 * accel
    return SwarmState(new_p, new_v, state.step + 1)


def potential_gradient(p_i: np.ndarray, p_j: np.ndarray, chi: float) -> np.ndarray:
    """Gradient (wrt p_i) of the collision potential between two agents.

    Inside the interaction radius chi the potential is 1/d^2 - log(d^2);
    beyond chi it is constant, so the gradient is zero there.
    """
    diff = np.asarray(p_i, dtype=np.float64) - np.asarray(p_j, dtype=np.float64)
    d2 = float(diff @ diff)
    if d2 == 0.0:
        raise ValueError("coincident agents: potential gradient is singular")
    if d2 > chi**2:
        return np.zeros(2)
    return (-2.0 / d2**2 - 2.0 / d2) * diff


def _pairwise_potential_sum(positions: np.ndarray, chi: float) -> np.ndarray:
    """sum_j grad_{p_i} C(p_i - p_j) for every i, self excluded, vectorized."""
    diffs = positions[:, None, :] - positions[None, :, :]  # (N, N, 2)
    d2 = np.sum(diffs**2, axis=-1)
    n = positions.shape[0]
    off = ~np.eye(n, dtype=bool)
    if np.any(d2[off] == 0.0):
        raise ValueError("coincident agents: potential gradient is singular")
    inside = off & (d2 <= chi**2)
    coef = np.zeros_like(d2)
    coef[inside] = -2.0 / d2[inside] ** 2 - 2.0 / d2[inside]
    return np.sum(coef[:, :, None] * diffs, axis=1)


def centralized_controller(
    state: SwarmState, r_tilde: np.ndarray, config: FlockingConfig
) -> np.ndarray:
    """Optimal accelerations from global information, clipped to mu.

    u_i = -1/(2ts) (v_i - mean_j rt_j) - 1/(2ts) sum_{j != i} grad C(p_i - p_j).
    """
    ts = config.ts_seconds
    consensus = state.velocities - np.mean(r_tilde, axis=0)[None, :]
    repulsion = _pairwise_potential_sum(state.positions, config.chi_potential)
    u = (-1.0 / (2 * ts)) * (consensus + repulsion)
    return clip_acceleration(u, config.mu_max_accel)


def hop_membership(graphs: list[Graph], n: int, k: int) -> np.ndarray:
    """Boolean matrix M with M[i, j] = True iff j is a k-hop neighbor of i
    at step n: walks of length exactly k whose first edge uses the graph at
    step n, the second the graph at step n-1, and so on."""
    n_nodes = graphs[0].n_nodes
    if k == 0:
        return np.eye(n_nodes, dtype=bool)
    prev = hop_membership(graphs, n - 1, k - 1)
    return (graphs[n].gso.astype(bool) @ prev) > 0


def decentralized_controller(
    positions_history: list[np.ndarray],
    velocities: np.ndarray,
    rtilde_history: list[np.ndarray],
    graphs_history: list[Graph],
    k_hops: int,
    config: FlockingConfig,
) -> np.ndarray:
    """Baseline controller from k-hop delayed information.

    Hop level k supplies observations and positions from k steps ago,
    restricted to the k-hop neighborhoods; the observed reference is the mean
    over nonempty hop levels of per-hop means.  Histories run oldest-first and
    the current step is their last entry; with fewer than k_hops past steps
    the hop range truncates.
    """
    n_now = len(graphs_history) - 1
    n_agents = velocities.shape[0]
    ts = config.ts_seconds
    max_hop = min(k_hops, n_now)
    hops = [hop_membership(graphs_history, n_now, k) for k in range(max_hop + 1)]
    ref_sum = np.zeros((n_agents, 2))
    ref_hops = np.zeros(n_agents)
    repulsion = np.zeros((n_agents, 2))
    chi2 = config.chi_potential**2
    for k, members in enumerate(hops):
        delayed_rt = rtilde_history[n_now - k]
        delayed_p = positions_history[n_now - k]
        counts = members.sum(axis=1)
        nonempty = counts > 0
        hop_mean = np.zeros((n_agents, 2))
        hop_mean[nonempty] = (members @ delayed_rt)[nonempty] / counts[nonempty, None]
        ref_sum[nonempty] += hop_mean[nonempty]
        ref_hops[nonempty] += 1
        if k == 0:
            continue
        for i in range(n_agents):
            js = np.flatnonzero(members[i])
            for j in js:
                if j == i:
                    continue  # own delayed position: self-interaction excluded
                diff = positions_history[n_now][i] - delayed_p[j]
                d2 = float(diff @ diff)
                if d2 == 0.0:
                    raise ValueError("coincident agents in delayed potential term")
                if d2 <= chi2:
                    repulsion[i] += (-2.0 / d2**2 - 2.0 / d2) * diff
    ref_est = np.zeros((n_agents, 2))
    have = ref_hops > 0
    ref_est[have] = ref_sum[have] / ref_hops[have, None]
    u = (-1.0 / (2 * ts)) * ((velocities - ref_est) + repulsion)
    return clip_acceleration(u, config.mu_max_accel)


def step_cost(
    velocities: np.ndarray, r_tilde: np.ndarray, accel: np.ndarray, config: FlockingConfig
) -> float:
    """Consensus-plus-effort cost of one step.

    1/(2N) sum_i ||v_i - mean_j rt_j||^2 + 1/(2N) sum_i ||ts * u_i||^2.
    """
    n = velocities.shape[0]
    mean_rt = np.mean(r_tilde, axis=0)
    consensus = np.sum((velocities - mean_rt[None, :]) ** 2)
    effort = np.sum((config.ts_seconds * accel) ** 2)
    return float((consensus + effort) / (2 * n))


def mesh_grid_positions(n_agents: int) -> np.ndarray:
    """Unit-spacing square mesh; requires a perfect-square agent count."""
    side = int(round(math.sqrt(n_agents)))
    if side * side != n_agents:
        raise ValueError(f"mesh grid needs a square agent count, got {n_agents}")
    xs, ys = np.meshgrid(np.arange(side, dtype=float), np.arange(side, dtype=float))
    return np.column_stack([xs.ravel(), ys.ravel()])


def scatter_positions(config: FlockingConfig, rng: np.random.Generator) -> np.ndarray:
    """Uniform placement in a square of area N/rho_0 with minimum spacing."""
    side = math.sqrt(config.n_agents / config.density_rho0)
    for _ in range(200):
        pos = rng.uniform(0.0, side, size=(config.n_agents, 2))
        diffs = pos[:, None, :] - pos[None, :, :]
        d = np.sqrt(np.sum(diffs**2, axis=-1))
        np.fill_diagonal(d, np.inf)
        if np.min(d) >= _MIN_SPACING:
            return pos
    raise RuntimeError("could not place agents with the required spacing")


def relative_masses(positions: np.ndarray, graph: Graph) -> np.ndarray:
    """q_i = sum_{j in N_i} (p_i - p_j), the local center-offset feature."""
    adj = graph.gso
    deg = adj.sum(axis=1, keepdims=True)
    return positions * deg - adj @ positions


def _initial_state(config: FlockingConfig, positions, ref0, rng) -> SwarmState:
    offsets = _scaled_normal(rng, config.vel_noise, (config.n_agents, 2))
    return SwarmState(positions, ref0[None, :] + offsets, 0)


def generate_example(
    config: FlockingConfig, experiment: str, seed: int
) -> Example:
    """One trajectory driven by the centralized controller.

    static_grid: 4 input features (v, observed reference); agents frozen on a
    mesh grid, velocities integrate the optimal accelerations.
    dynamic: 6 input features (v, observed reference, relative mass); the
    swarm moves and the range graph is rebuilt every step.
    """
    if experiment not in ("static_grid", "dynamic"):
        raise ValueError(f"unknown experiment {experiment!r}")
    static = experiment == "static_grid"
    rng = np.random.default_rng(seed)
    ref = generate_reference(config, seed)
    obs_seed = int(rng.integers(0, 2**63))
    if static:
        positions = mesh_grid_positions(config.n_agents)
    else:
        positions = scatter_positions(config, rng)
    state = _initial_state(config, positions, ref[0], rng)
    fixed_graph = build_range_graph(positions, config.comm_range_r) if static else None

    n, t = config.n_agents, config.t_steps
    n_features = 4 if static else 6
    inputs = np.empty((n_features, n, t))
    targets = np.empty((2, n, t))
    graphs: list[Graph] = []
    for step in range(t):
        graph = fixed_graph if static else build_range_graph(
            state.positions, config.comm_range_r
        )
        graphs.append(graph)
        r_tilde = observe_reference(ref[step], config.obs_noise, obs_seed, n)
        u = centralized_controller(state, r_tilde, config)
        inputs[0:2, :, step] = state.velocities.T
        inputs[2:4, :, step] = r_tilde.T
        if not static:
            inputs[4:6, :, step] = relative_masses(state.positions, graph).T
        targets[:, :, step] = u.T
        if static:
            state = SwarmState(
                state.positions, state.velocities + config.ts_seconds * u, step + 1
            )
        else:
            state = step_mobility(state, u, config.ts_seconds)
    grid = SamplingGrid(config.ts_seconds, t)
    return Example(
        SpaceTimeSignal(inputs, grid), SpaceTimeSignal(targets, grid), tuple(graphs)
    )


def generate_dataset(
    config: FlockingConfig, counts: tuple[int, int, int], experiment: str
) -> Dataset:
    """Train/validation/test examples with per-example seeds seed XOR index."""
    n_train, n_val, n_test = counts
    total = n_train + n_val + n_test
    examples = [
        generate_example(config, experiment, config.seed ^ idx) for idx in range(total)
    ]
    return Dataset(
        tuple(examples[:n_train]),
        tuple(examples[n_train : n_train + n_val]),
        tuple(examples[n_train + n_val :]),
    )


def receptive_window(params: StgnnParams) -> int:
    """Steps of input history the network output at a step depends on."""
    return sum(l.shape[2] - 1 for l in params.layers) + 1


def _network_accel(
    params: StgnnParams,
    features: np.ndarray,
    graphs: list[Graph],
    step: int,
    config: FlockingConfig,
) -> np.ndarray:
    """Evaluate the causal network at `step` from a sliding history window."""
    w = receptive_window(params)
    lo = max(0, step + 1 - w)
    window = features[:, :, lo : step + 1]
    grid = SamplingGrid(config.ts_seconds, window.shape[2])
    sig = SpaceTimeSignal(window, grid)
    out, _ = forward(params, graphs[lo : step + 1], sig)
    return out.data[:, :, -1].T


def rollout_policy(
    policy, config: FlockingConfig, seed: int
) -> RolloutResult:
    """Closed-loop rollout of a policy on a fresh dynamic-swarm episode.

    `policy` is "centralized", "decentralized", or trained StgnnParams (whose
    input must be the 6-feature dynamic layout).  Accelerations are clipped to
    mu before the mobility step; per-step costs and the mean velocity gap to
    the reference are traced.
    """
    rng = np.random.default_rng(seed)
    ref = generate_reference(config, seed)
    obs_seed = int(rng.integers(0, 2**63))
    positions = scatter_positions(config, rng)
    state = _initial_state(config, positions, ref[0], rng)

    n, t = config.n_agents, config.t_steps
    is_net = isinstance(policy, StgnnParams)
    if not is_net and policy not in ("centralized", "decentralized"):
        raise ValueError(f"unknown policy {policy!r}")
    features = np.zeros((6, n, t)) if is_net else None

    pos_trace = np.empty((t + 1, n, 2))
    vel_trace = np.empty((t + 1, n, 2))
    acc_trace = np.empty((t, n, 2))
    costs = np.empty(t)
    consensus = np.empty(t)
    graphs: list[Graph] = []
    positions_hist: list[np.ndarray] = []
    rtilde_hist: list[np.ndarray] = []

    pos_trace[0] = state.positions
    vel_trace[0] = state.velocities
    for step in range(t):
        graph = build_range_graph(state.positions, config.comm_range_r)
        graphs.append(graph)
        positions_hist.append(state.positions)
        r_tilde = observe_reference(ref[step], config.obs_noise, obs_seed, n)
        rtilde_hist.append(r_tilde)
        if policy == "centralized":
            u = centralized_controller(state, r_tilde, config)
        elif policy == "decentralized":
            u = decentralized_controller(
                positions_hist, state.velocities, rtilde_hist, graphs,
                config.k_hops, config,
            )
        else:
            features[0:2, :, step] = state.velocities.T
            features[2:4, :, step] = r_tilde.T
            features[4:6, :, step] = relative_masses(state.positions, graph).T
            u = clip_acceleration(
                _network_accel(policy, features, graphs, step, config),
                config.mu_max_accel,
            )
        acc_trace[step] = u
        costs[step] = step_cost(state.velocities, r_tilde, u, config)
        consensus[step] = float(
            np.mean(np.linalg.norm(state.velocities - ref[step][None, :], axis=1))
        )
        state = step_mobility(state, u, config.ts_seconds)
        pos_trace[step + 1] = state.positions
        vel_trace[step + 1] = state.velocities
    return RolloutResult(pos_trace, vel_trace, acc_trace, costs, consensus, ref)
