"""Unlabeled motion planning: assignment, straight-line plans, features, metrics.

N interchangeable agents must cover N goal locations.  The centralized
solution assigns goals by minimum total squared distance (Hungarian) and
drives each agent along a constant-speed straight line over the horizon;
its accelerations are the imitation targets.  Agents sense their own state,
the M nearest neighbors, and the M nearest goals (6M + 4 features), and
communicate over an M-nearest-neighbor graph rebuilt every step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .flocking import SwarmState, clip_acceleration, step_mobility
from .graph import Graph, build_knn_graph
from .stfilter import SpaceTimeSignal
from .stgnn import Dataset, Example, StgnnParams, forward
from .timeline import SamplingGrid

_LEX_TOL = 1e-9  # cost slack when canonicalizing equal-cost assignments


@dataclass(frozen=True)
class PlanningConfig:
    n_agents: int = 12
    m_neighbors: int = 5
    min_spacing: float = 1.5  # meters, between starts and between goals
    initial_speed: float = 4.0  # m/s, random heading per agent at execution
    mu_max_accel: float = 5.0  # m/s^2
    t_steps: int = 30
    ts_seconds: float = 0.1
    box_side: float | None = None  # defaults to min_spacing * (sqrt(N) + 1)
    seed: int = 0

    @property
    def side(self) -> float:
        if self.box_side is not None:
            return self.box_side
        return self.min_spacing * (math.sqrt(self.n_agents) + 1.0)

    @property
    def n_features(self) -> int:
        return 6 * self.m_neighbors + 4


@dataclass(frozen=True)
class PlanningInstance:
    starts: np.ndarray  # (N, 2)
    goals: np.ndarray  # (N, 2)
    min_spacing: float
    t_steps: int
    ts: float

    def __post_init__(self):
        starts = np.asarray(self.starts, dtype=np.float64)
        goals = np.asarray(self.goals, dtype=np.float64)
        if starts.shape != goals.shape:
            raise ValueError("starts and goals must have matching shapes")
        for name, pts in (("starts", starts), ("goals", goals)):
            d = _pairwise_min_distance(pts)
            if d < self.min_spacing - 1e-9:
                raise ValueError(f"{name} violate the minimum spacing")
            arr = pts.copy()
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)


@dataclass(frozen=True)
class FinalDistanceStats:
    mean: float
    var_population: float
    var_sample: float


def _pairwise_min_distance(pts: np.ndarray) -> float:
    if pts.shape[0] < 2:
        return np.inf
    diffs = pts[:, None, :] - pts[None, :, :]
    d = np.sqrt(np.sum(diffs**2, axis=-1))
    np.fill_diagonal(d, np.inf)
    return float(np.min(d))


def capt_assignment(starts: np.ndarray, goals: np.ndarray) -> np.ndarray:
    """Goal permutation phi minimizing sum_i ||start_i - goal_phi(i)||^2.

    Solved by optimal assignment on the squared-distance matrix; among
    equal-cost optima the lexicographically smallest phi is returned
    (deterministic tie-break).
    """
    starts = np.asarray(starts, dtype=np.float64)
    goals = np.asarray(goals, dtype=np.float64)
    if starts.shape != goals.shape:
        raise ValueError("starts and goals must have matching counts")
    n = starts.shape[0]
    cost = np.sum((starts[:, None, :] - goals[None, :, :]) ** 2, axis=-1)
    rows, cols = linear_sum_assignment(cost)
    best = float(cost[rows, cols].sum())
    # canonicalize: fix agents in order, each to its smallest feasible goal
    phi = np.empty(n, dtype=np.int64)
    free = list(range(n))
    remaining_cost = best
    for i in range(n):
        rest = list(range(i + 1, n))
        for j in sorted(free):
            if len(rest) == 0:
                completion = 0.0
            else:
                others = [g for g in free if g != j]
                sub = cost[np.ix_(rest, others)]
                r2, c2 = linear_sum_assignment(sub)
                completion = float(sub[r2, c2].sum())
            if cost[i, j] + completion <= remaining_cost + _LEX_TOL:
                phi[i] = j
                free.remove(j)
                remaining_cost -= cost[i, j]
                break
        else:  # pragma: no cover - optimal completion always exists
            raise RuntimeError("assignment canonicalization failed")
    return phi


def capt_trajectories(
    instance: PlanningInstance, assignment: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Constant-speed straight-line plans plus finite-difference targets.

    Positions interpolate start -> assigned goal over T-1 steps.  Velocities
    are forward differences (the last repeats); accelerations are backward
    differences of the velocities from rest, so a constant-speed line has a
    single nonzero acceleration at step 0.
    """
    starts, goals = instance.starts, instance.goals[np.asarray(assignment)]
    t, ts = instance.t_steps, instance.ts
    alphas = np.arange(t) / max(t - 1, 1)
    positions = starts[:, None, :] + alphas[None, :, None] * (goals - starts)[:, None, :]
    velocities = np.empty_like(positions)
    velocities[:, :-1] = np.diff(positions, axis=1) / ts
    velocities[:, -1] = velocities[:, -2]
    accelerations = np.empty_like(velocities)
    accelerations[:, 0] = velocities[:, 0] / ts  # from rest
    accelerations[:, 1:] = np.diff(velocities, axis=1) / ts
    return positions, velocities, accelerations


def _nearest_indices(dist_row: np.ndarray, count: int, exclude: int | None) -> np.ndarray:
    order = np.lexsort((np.arange(dist_row.size), dist_row))
    if exclude is not None:
        order = order[order != exclude]
    return order[:count]


def assemble_features(
    positions: np.ndarray,  # (N, T, 2)
    velocities: np.ndarray,  # (N, T, 2)
    goals: np.ndarray,  # (N, 2)
    m_neighbors: int,
    ts: float = 0.1,
    centroid: np.ndarray | None = None,
) -> SpaceTimeSignal:
    """Per-agent feature stack of width 6M + 4.

    Layout: own position relative to the instance centroid (2), own velocity
    (2), the M nearest neighbors' relative positions (2M) and velocities (2M),
    and the M nearest goals' relative positions (2M); neighbor and goal blocks
    are sorted by ascending distance (index tie-break) and zero-padded when
    fewer than M exist.  The centroid averages initial positions and goals
    (or is supplied by the caller when the first frame is not the instance
    start), so every feature is invariant to joint translations.
    """
    n, t, _ = positions.shape
    if n < 1:
        raise ValueError("need at least one agent")
    m = m_neighbors
    if centroid is None:
        centroid = (positions[:, 0, :].mean(axis=0) + goals.mean(axis=0)) / 2.0
    data = np.zeros((6 * m + 4, n, t))
    for step in range(t):
        pos = positions[:, step, :]
        vel = velocities[:, step, :]
        diffs = pos[:, None, :] - pos[None, :, :]
        dist = np.sqrt(np.sum(diffs**2, axis=-1))
        gdiffs = goals[None, :, :] - pos[:, None, :]
        gdist = np.sqrt(np.sum(gdiffs**2, axis=-1))
        for i in range(n):
            data[0:2, i, step] = pos[i] - centroid
            data[2:4, i, step] = vel[i]
            nbrs = _nearest_indices(dist[i], m, exclude=i)
            for slot, j in enumerate(nbrs):
                data[4 + 2 * slot : 6 + 2 * slot, i, step] = pos[j] - pos[i]
                data[4 + 2 * m + 2 * slot : 6 + 2 * m + 2 * slot, i, step] = vel[j]
            ngoals = _nearest_indices(gdist[i], m, exclude=None)
            for slot, j in enumerate(ngoals):
                data[4 + 4 * m + 2 * slot : 6 + 4 * m + 2 * slot, i, step] = (
                    goals[j] - pos[i]
                )
    return SpaceTimeSignal(data, SamplingGrid(ts, t))


def knn_graph_sequence(positions: np.ndarray, m_neighbors: int) -> list[Graph]:
    """One M-nearest-neighbor graph per time step of a (N, T, 2) trajectory."""
    return [
        build_knn_graph(positions[:, step, :], m_neighbors)
        for step in range(positions.shape[1])
    ]


def sample_instance(
    config: PlanningConfig, seed: int, max_tries: int = 500
) -> tuple[PlanningInstance, int]:
    """Random feasible instance plus the number of rejected placements.

    Placements are uniform in the instance box with the minimum spacing
    enforced by rejection; instances whose straight-line plans would need a
    constant speed above mu * ts * T are rejected as infeasible.
    """
    rng = np.random.default_rng(seed)
    rejections = 0
    speed_cap = config.mu_max_accel * config.ts_seconds * config.t_steps
    for _ in range(max_tries):
        starts = _spaced_points(rng, config)
        goals = _spaced_points(rng, config)
        if starts is None or goals is None:
            rejections += 1
            continue
        phi = capt_assignment(starts, goals)
        span = np.linalg.norm(goals[phi] - starts, axis=1)
        speed = span / ((config.t_steps - 1) * config.ts_seconds)
        if np.max(speed) > speed_cap:
            rejections += 1
            continue
        instance = PlanningInstance(
            starts, goals, config.min_spacing, config.t_steps, config.ts_seconds
        )
        return instance, rejections
    raise RuntimeError(f"no feasible instance after {max_tries} tries")


def _spaced_points(rng: np.random.Generator, config: PlanningConfig):
    for _ in range(200):
        pts = rng.uniform(0.0, config.side, size=(config.n_agents, 2))
        if _pairwise_min_distance(pts) >= config.min_spacing:
            return pts
    return None


def generate_example(
    config: PlanningConfig, seed: int
) -> tuple[Example, PlanningInstance]:
    """One supervised pair from the centralized plan of a random instance."""
    instance, _ = sample_instance(config, seed)
    phi = capt_assignment(instance.starts, instance.goals)
    positions, velocities, accelerations = capt_trajectories(instance, phi)
    features = assemble_features(
        positions, velocities, instance.goals, config.m_neighbors,
        ts=config.ts_seconds,
    )
    grid = SamplingGrid(config.ts_seconds, config.t_steps)
    targets = SpaceTimeSignal(
        np.transpose(accelerations, (2, 0, 1)), grid
    )
    graphs = tuple(knn_graph_sequence(positions, config.m_neighbors))
    return Example(features, targets, graphs), instance


@dataclass(frozen=True)
class PlanningDataset:
    dataset: Dataset
    instances: dict  # split name -> list of PlanningInstance


def generate_dataset(
    config: PlanningConfig, counts: tuple[int, int, int]
) -> PlanningDataset:
    """Train/validation/test CAPT imitation data, seeds seed XOR index."""
    n_train, n_val, n_test = counts
    total = n_train + n_val + n_test
    examples, instances = [], []
    for idx in range(total):
        ex, inst = generate_example(config, config.seed ^ idx)
        examples.append(ex)
        instances.append(inst)
    splits = {
        "train": slice(0, n_train),
        "validation": slice(n_train, n_train + n_val),
        "test": slice(n_train + n_val, total),
    }
    return PlanningDataset(
        Dataset(
            tuple(examples[splits["train"]]),
            tuple(examples[splits["validation"]]),
            tuple(examples[splits["test"]]),
        ),
        {name: instances[sl] for name, sl in splits.items()},
    )


def evaluate_final_distance(
    final_positions: np.ndarray, goals: np.ndarray
) -> FinalDistanceStats:
    """Mean and variance of agent-to-goal distances under the best matching.

    Agents are unlabeled, so the assignment is recomputed on the final
    positions before measuring distances.
    """
    phi = capt_assignment(final_positions, goals)
    d = np.linalg.norm(np.asarray(final_positions) - np.asarray(goals)[phi], axis=1)
    n = d.size
    mean = float(np.mean(d))
    var_pop = float(np.var(d))
    var_sample = float(np.var(d, ddof=1)) if n > 1 else 0.0
    return FinalDistanceStats(mean, var_pop, var_sample)


def _receptive_window(params: StgnnParams) -> int:
    return sum(l.shape[2] - 1 for l in params.layers) + 1


def rollout_network(
    params: StgnnParams,
    instance: PlanningInstance,
    config: PlanningConfig,
    seed: int,
    m_override: int | None = None,
    ts_override: float | None = None,
) -> np.ndarray:
    """Closed-loop execution of a trained network on one instance.

    Agents start at the instance starts with the configured speed and a
    seeded random heading; each step rebuilds the communication graph (with
    `m_override` neighbors if given, perturbing the graph topology) and the
    feature stack, evaluates the causal network at the current step, clips the
    acceleration, and integrates the mobility model at the (possibly
    overridden) sampling period over the same physical duration.  Returns the
    (N, T, 2) position trajectory.
    """
    ts = ts_override if ts_override is not None else config.ts_seconds
    duration = (config.t_steps - 1) * config.ts_seconds
    t_steps = int(math.floor(duration / ts + 1e-12)) + 1
    m_graph = m_override if m_override is not None else config.m_neighbors
    n = instance.starts.shape[0]
    if not 1 <= m_graph < n:
        raise ValueError(f"graph neighborhood size {m_graph} out of [1, {n - 1}]")
    rng = np.random.default_rng(seed)
    heading = rng.uniform(0.0, 2 * np.pi, size=n)
    vel0 = config.initial_speed * np.column_stack([np.cos(heading), np.sin(heading)])
    state = SwarmState(instance.starts, vel0, 0)
    centroid = (instance.starts.mean(axis=0) + instance.goals.mean(axis=0)) / 2.0

    positions = np.empty((n, t_steps, 2))
    velocities = np.empty((n, t_steps, 2))
    graphs: list[Graph] = []
    window = _receptive_window(params)
    for step in range(t_steps):
        positions[:, step, :] = state.positions
        velocities[:, step, :] = state.velocities
        graphs.append(build_knn_graph(state.positions, m_graph))
        lo = max(0, step + 1 - window)
        sig = assemble_features(
            positions[:, lo : step + 1, :],
            velocities[:, lo : step + 1, :],
            instance.goals,
            config.m_neighbors,
            ts=ts,
            centroid=centroid,
        )
        out, _ = forward(params, graphs[lo : step + 1], sig)
        u = clip_acceleration(out.data[:, :, -1].T, config.mu_max_accel)
        state = step_mobility(state, u, ts)
    return positions


def sensitivity_sweep(
    params: StgnnParams,
    base_config: PlanningConfig,
    instances: list[PlanningInstance],
    delta_m_list: list[int],
    delta_ts_list: list[float],
    seed: int = 0,
) -> list[dict]:
    """Relative final-distance error under neighborhood-size and sampling-time
    changes at execution.

    Each row records the sweep kind, the delta, the measured mean final
    distance, and its relative error against the unperturbed rollout.
    `delta_m` values pushing the graph size out of [1, N-1] are skipped with a
    warning row.  The feature layout keeps the trained width: neighborhood
    deltas perturb the communication graph only.
    """

    def mean_final_distance(m_override=None, ts_override=None):
        vals = []
        for k, inst in enumerate(instances):
            traj = rollout_network(
                params, inst, base_config, seed ^ k,
                m_override=m_override, ts_override=ts_override,
            )
            vals.append(evaluate_final_distance(traj[:, -1, :], inst.goals).mean)
        return float(np.mean(vals))

    baseline = mean_final_distance()
    rows = [
        {
            "kind": "baseline", "delta": 0.0, "d_pg": baseline,
            "rel_error": 0.0, "status": "ok",
        }
    ]
    n = base_config.n_agents
    for dm in delta_m_list:
        m_new = base_config.m_neighbors + dm
        if not 1 <= m_new < n:
            rows.append(
                {
                    "kind": "delta_m", "delta": float(dm), "d_pg": float("nan"),
                    "rel_error": float("nan"), "status": "skipped: M out of range",
                }
            )
            continue
        if dm == 0:
            d = baseline
        else:
            d = mean_final_distance(m_override=m_new)
        rows.append(
            {
                "kind": "delta_m", "delta": float(dm), "d_pg": d,
                "rel_error": (d - baseline) / baseline, "status": "ok",
            }
        )
    for dts in delta_ts_list:
        ts_new = base_config.ts_seconds + dts
        if ts_new <= 0:
            rows.append(
                {
                    "kind": "delta_ts", "delta": float(dts), "d_pg": float("nan"),
                    "rel_error": float("nan"), "status": "skipped: ts not positive",
                }
            )
            continue
        if dts == 0:
            d = baseline
        else:
            d = mean_final_distance(ts_override=ts_new)
        rows.append(
            {
                "kind": "delta_ts", "delta": float(dts), "d_pg": d,
                "rel_error": (d - baseline) / baseline, "status": "ok",
            }
        )
    return rows
