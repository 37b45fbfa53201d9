"""Layered space-time graph networks: forward pass, exact gradients, ADAM training.

Each layer applies a bank of FIR space-time filters (one per input/output
feature pair, sharing the layer's tap count) followed by a pointwise tanh;
the final layer's activation is configurable (identity by default, for
regression targets that exceed tanh's range).  Gradients are computed by
hand-rolled reverse mode: the transpose of the time-varying filter uses the
same symmetric graphs with time indices reflected.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace

import numpy as np

from .graph import Graph
from .stfilter import FirFilter, SpaceTimeSignal, propagate_shifts

PARAMS_MAGIC = b"STGNN1"
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class StgnnParams:
    """Per-layer tap tensors of shape (F_out, F_in, K) plus the sampling period.

    Hidden layers use tanh; `final_activation` is "identity" or "tanh".
    """

    layers: tuple[np.ndarray, ...]
    ts: float
    final_activation: str = "identity"

    def __post_init__(self):
        if not self.layers:
            raise ValueError("need at least one layer")
        if self.final_activation not in ("identity", "tanh"):
            raise ValueError(f"unknown final activation {self.final_activation!r}")
        frozen = []
        for i, taps in enumerate(self.layers):
            taps = np.asarray(taps, dtype=np.float64)
            if taps.ndim != 3:
                raise ValueError(f"layer {i} taps must be (F_out, F_in, K)")
            if not np.all(np.isfinite(taps)):
                raise ValueError(f"layer {i} has non-finite taps")
            if i > 0 and taps.shape[1] != self.layers[i - 1].shape[0]:
                raise ValueError(
                    f"layer {i} expects {taps.shape[1]} inputs but layer "
                    f"{i - 1} outputs {self.layers[i - 1].shape[0]}"
                )
            taps = taps.copy()
            taps.flags.writeable = False
            frozen.append(taps)
        object.__setattr__(self, "layers", tuple(frozen))

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    @property
    def feature_sizes(self) -> tuple[int, ...]:
        return (self.layers[0].shape[1],) + tuple(l.shape[0] for l in self.layers)

    def scaled(self, factors: list[float]) -> "StgnnParams":
        return replace(
            self, layers=tuple(l * f for l, f in zip(self.layers, factors))
        )


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    epochs: int = 30
    batch_size: int = 20
    seed: int = 0
    selection_metric: str = "validation_mse"

    def __post_init__(self):
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in (0, 1)")
        if self.selection_metric not in (
            "validation_cost",
            "validation_mse",
            "final_goal_distance",
        ):
            raise ValueError(f"unknown selection metric {self.selection_metric!r}")


@dataclass(frozen=True)
class Example:
    """One supervised pair: input signal, target signal, per-step graphs."""

    input: SpaceTimeSignal
    target: SpaceTimeSignal
    graphs: tuple[Graph, ...]


@dataclass(frozen=True)
class Dataset:
    train: tuple[Example, ...]
    validation: tuple[Example, ...]
    test: tuple[Example, ...]


@dataclass
class LayerTape:
    prop: np.ndarray  # (K, F_in, N, T) propagated shifts of the layer input
    out: np.ndarray  # (F_out, N, T) post-activation output
    activation: str


def init_params(
    features: list[int], taps: list[int], ts: float, seed: int,
    final_activation: str = "identity",
) -> StgnnParams:
    """Uniform init on [-a, a] with a = 1/sqrt(F_in * K), fan-in scaled."""
    if len(taps) != len(features) - 1:
        raise ValueError("need one tap count per layer")
    rng = np.random.default_rng(seed)
    layers = []
    for f_in, f_out, k in zip(features[:-1], features[1:], taps):
        a = 1.0 / np.sqrt(f_in * k)
        layers.append(rng.uniform(-a, a, size=(f_out, f_in, k)))
    return StgnnParams(tuple(layers), ts, final_activation)


def forward(
    params: StgnnParams, graphs: list[Graph], x: SpaceTimeSignal
) -> tuple[SpaceTimeSignal, list[LayerTape]]:
    """Run the layer stack; the tape retains what backward needs."""
    if x.n_features != params.layers[0].shape[1]:
        raise ValueError(
            f"input has {x.n_features} features, first layer expects "
            f"{params.layers[0].shape[1]}"
        )
    mats = [g.gso for g in graphs]
    if len(mats) != x.n_steps:
        raise ValueError(f"need {x.n_steps} graphs, got {len(mats)}")
    cur = x.data
    tape: list[LayerTape] = []
    for li, taps in enumerate(params.layers):
        f_out, f_in, k = taps.shape
        filt = FirFilter(np.ones(k), params.ts)
        prop = propagate_shifts(filt, mats, cur)  # (K, F_in, N, T)
        z = np.einsum("fgk,kgnt->fnt", taps, prop)
        act = "tanh" if li < params.n_layers - 1 else params.final_activation
        cur = np.tanh(z) if act == "tanh" else z
        tape.append(LayerTape(prop=prop, out=cur, activation=act))
    return SpaceTimeSignal(cur, x.grid), tape


def backward(
    params: StgnnParams,
    graphs: list[Graph],
    tape: list[LayerTape],
    loss_grad: SpaceTimeSignal,
) -> list[np.ndarray]:
    """Exact reverse-mode gradients of the taps, given a forward tape."""
    mats = [g.gso for g in graphs]
    if len(tape) != params.n_layers:
        raise ValueError("tape does not match the parameter stack")
    grad = loss_grad.data
    grads: list[np.ndarray] = [np.empty(0)] * params.n_layers
    for li in range(params.n_layers - 1, -1, -1):
        taps = params.layers[li]
        lt = tape[li]
        if lt.out.shape != grad.shape:
            raise ValueError("stale tape: shapes do not match")
        dz = grad * (1.0 - lt.out**2) if lt.activation == "tanh" else grad
        grads[li] = np.einsum("fnt,kgnt->fgk", dz, lt.prop)
        if li > 0:
            # grad wrt the layer input: transpose filter, time reflected
            a = np.einsum("fgk,fnt->kgnt", taps, dz)
            k_taps = taps.shape[2]
            cur = a[k_taps - 1]
            for k in range(k_taps - 2, -1, -1):
                shifted = np.zeros_like(cur)
                for n in range(len(mats) - 1):
                    shifted[:, :, n] = cur[:, :, n + 1] @ mats[n]
                cur = a[k] + shifted
            grad = cur
    return grads


def mse_loss(
    pred: SpaceTimeSignal, target: SpaceTimeSignal
) -> tuple[float, SpaceTimeSignal]:
    """Mean squared error over all entries, plus its gradient wrt pred."""
    if pred.data.shape != target.data.shape:
        raise ValueError(
            f"shape mismatch: {pred.data.shape} vs {target.data.shape}"
        )
    diff = pred.data - target.data
    value = float(np.mean(diff**2))
    grad = 2.0 * diff / diff.size
    return value, SpaceTimeSignal(grad, pred.grid)


@dataclass(frozen=True)
class AdamState:
    params: StgnnParams
    m: tuple[np.ndarray, ...]
    v: tuple[np.ndarray, ...]
    step: int

    @classmethod
    def fresh(cls, params: StgnnParams) -> "AdamState":
        zeros = tuple(np.zeros_like(l) for l in params.layers)
        return cls(params, zeros, tuple(np.zeros_like(l) for l in params.layers), 0)


def adam_step(state: AdamState, grads: list[np.ndarray], config: TrainConfig) -> AdamState:
    """One bias-corrected ADAM update."""
    t = state.step + 1
    b1, b2 = config.beta1, config.beta2
    new_m, new_v, new_layers = [], [], []
    for layer, m, v, g in zip(state.params.layers, state.m, state.v, grads):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g**2
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        new_layers.append(layer - config.learning_rate * m_hat / (np.sqrt(v_hat) + ADAM_EPS))
        new_m.append(m)
        new_v.append(v)
    params = replace(state.params, layers=tuple(new_layers))
    return AdamState(params, tuple(new_m), tuple(new_v), t)


def _batch_gradient(
    params: StgnnParams, batch: list[Example]
) -> tuple[float, list[np.ndarray]]:
    """Mean loss and mean gradient over a batch, accumulated in index order."""
    total = 0.0
    acc: list[np.ndarray] | None = None
    for ex in batch:
        out, tape = forward(params, list(ex.graphs), ex.input)
        value, lgrad = mse_loss(out, ex.target)
        grads = backward(params, list(ex.graphs), tape, lgrad)
        total += value
        if acc is None:
            acc = grads
        else:
            acc = [a + g for a, g in zip(acc, grads)]
    scale = 1.0 / len(batch)
    return total * scale, [a * scale for a in acc]


def validation_mse(params: StgnnParams, examples: tuple[Example, ...]) -> float:
    losses = []
    for ex in examples:
        out, _ = forward(params, list(ex.graphs), ex.input)
        losses.append(mse_loss(out, ex.target)[0])
    return float(np.mean(losses))


def train_imitation(
    dataset: Dataset,
    arch: StgnnParams,
    config: TrainConfig,
    val_metric_fn=None,
) -> tuple[StgnnParams, list[dict]]:
    """Minibatch ADAM on the train split, keeping the best-validation model.

    `arch` supplies the initial parameter values.  After each epoch the
    selection metric is evaluated on the validation split (mean MSE unless
    `val_metric_fn(params) -> float` overrides it); the parameters with the
    lowest metric over all epochs are returned together with a log of
    per-epoch train loss and validation metric.
    """
    if not dataset.train or not dataset.validation:
        raise ValueError("need nonempty train and validation splits")
    rng = np.random.default_rng(config.seed)
    state = AdamState.fresh(arch)
    metric = val_metric_fn or (lambda p: validation_mse(p, dataset.validation))
    best_params = arch
    best_metric = float("inf")
    best_epoch = -1
    log: list[dict] = []
    n = len(dataset.train)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        epoch_losses = []
        for start in range(0, n, config.batch_size):
            batch = [dataset.train[i] for i in order[start : start + config.batch_size]]
            loss, grads = _batch_gradient(state.params, batch)
            if not np.isfinite(loss):
                raise RuntimeError(f"training diverged at epoch {epoch}")
            state = adam_step(state, grads, config)
            epoch_losses.append(loss)
        val = float(metric(state.params))
        if not np.isfinite(val):
            raise RuntimeError(f"training diverged at epoch {epoch}")
        log.append(
            {
                "epoch": epoch,
                "train_loss": float(np.mean(epoch_losses)),
                "val_metric": val,
                "new_best": val < best_metric,
            }
        )
        if val < best_metric:
            best_metric = val
            best_params = state.params
            best_epoch = epoch
    for row in log:
        row["best_epoch"] = best_epoch
    return best_params, log


def save_params(params: StgnnParams, path) -> None:
    """Versioned binary layout: magic, u32 layer count, per-layer u32 shape
    triple (F_out, F_in, K), then float64 taps in (f, g, k) row-major order,
    all little-endian."""
    with open(path, "wb") as fh:
        fh.write(PARAMS_MAGIC)
        fh.write(struct.pack("<I", params.n_layers))
        for taps in params.layers:
            fh.write(struct.pack("<III", *taps.shape))
        for taps in params.layers:
            fh.write(np.ascontiguousarray(taps, dtype="<f8").tobytes())


def load_params(path, ts: float = 0.1, final_activation: str = "identity") -> StgnnParams:
    """Read the binary layout written by save_params.

    The sampling period and final activation are not part of the file format
    and must be supplied by the caller.  Malformed files raise ValueError with
    the byte offset of the problem.
    """
    with open(path, "rb") as fh:
        blob = fh.read()

    def need(offset: int, count: int) -> bytes:
        if offset + count > len(blob):
            raise ValueError(f"truncated parameter file at byte {len(blob)}")
        return blob[offset : offset + count]

    if need(0, len(PARAMS_MAGIC)) != PARAMS_MAGIC:
        raise ValueError("bad magic at byte 0")
    off = len(PARAMS_MAGIC)
    (n_layers,) = struct.unpack("<I", need(off, 4))
    off += 4
    shapes = []
    for _ in range(n_layers):
        shapes.append(struct.unpack("<III", need(off, 12)))
        off += 12
    for i in range(1, n_layers):
        if shapes[i][1] != shapes[i - 1][0]:
            raise ValueError(f"mismatched layer shapes declared at byte {6 + 4 + 12 * i}")
    layers = []
    for shape in shapes:
        count = shape[0] * shape[1] * shape[2]
        raw = need(off, count * 8)
        layers.append(np.frombuffer(raw, dtype="<f8").reshape(shape).copy())
        off += count * 8
    if off != len(blob):
        raise ValueError(f"trailing bytes at byte {off}")
    return StgnnParams(tuple(layers), ts, final_activation)
