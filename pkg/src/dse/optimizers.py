"""DSE-MVR, DSE-SGD and the DSGD / DLSGD baselines.

All four share one synchronous state machine over node-major arrays
``(N, d)``: row ``i`` is node ``i``.  Mixing ``y_i = sum_j w_ij b_j`` is
therefore ``W @ B``.

Mini-batches are addressed by ``(seed, node, "batch", k)`` where ``k`` is the
index of the iterate the batch is evaluated at, so every algorithm draws the
same batch for the same ``(node, k)``.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import rng as rngmod
from .errors import ContractViolation, DivergenceError
from .metrics import MetricsRow, compute_row, default_cadence
from .problems import GradientOracle, Problem, sample_batch
from .topology import MixingMatrix

ALGORITHMS = ("dse_mvr", "dse_sgd", "dsgd", "dlsgd")


# -- schedules ---------------------------------------------------------------

@dataclass(frozen=True)
class Constant:
    value: float

    def __call__(self, t: int) -> float:
        return self.value


@dataclass(frozen=True)
class Halving:
    """Divide by 2 at each fraction of the horizon T."""

    value: float
    T: int
    fractions: tuple[float, ...] = (0.5, 0.75)

    def __call__(self, t: int) -> float:
        k = sum(1 for f in self.fractions if t >= f * self.T)
        return self.value / (2 ** k)


@dataclass(frozen=True)
class Decay:
    """Multiply by ``factor`` after every completed communication round."""

    value: float
    tau: int
    factor: float = 0.99

    def __call__(self, t: int) -> float:
        return self.value * self.factor ** (t // self.tau)


Schedule = Callable[[int], float]


# -- state -------------------------------------------------------------------

@dataclass
class NodeState:
    x: np.ndarray
    v: np.ndarray
    y: np.ndarray
    h: np.ndarray
    x_ckpt: np.ndarray
    h_prev: np.ndarray
    y_prev: np.ndarray


@dataclass
class AlgoParams:
    gamma: Schedule
    tau: int
    T: int
    b: int = 1
    alpha: Schedule | None = None
    full_batch: bool = False
    reset: bool = True  # DSE-MVR: full-gradient direction after communication

    def __post_init__(self):
        if isinstance(self.gamma, (int, float)):
            self.gamma = Constant(float(self.gamma))
        if isinstance(self.alpha, (int, float)):
            self.alpha = Constant(float(self.alpha))
        problems = []
        if self.tau < 1:
            problems.append("tau must be >= 1")
        if self.b < 1:
            problems.append("b must be >= 1")
        if self.T < 1:
            problems.append("T must be >= 1")
        elif self.tau >= 1 and self.T % self.tau != 0:
            problems.append("T mod tau != 0")
        if problems:
            raise ContractViolation("; ".join(problems))


_BUFFERS = ("x", "v", "y", "h", "x_ckpt", "h_prev", "y_prev")


@dataclass
class SwarmState:
    x: np.ndarray
    v: np.ndarray
    y: np.ndarray
    h: np.ndarray
    x_ckpt: np.ndarray
    h_prev: np.ndarray
    y_prev: np.ndarray
    t: int = 0
    comm_rounds: int = 0

    @classmethod
    def initial(cls, x0: np.ndarray, n_nodes: int) -> "SwarmState":
        x0 = np.asarray(x0, dtype=np.float64)
        x = np.tile(x0, (n_nodes, 1))
        z = np.zeros_like(x)
        return cls(x, z.copy(), z.copy(), z.copy(), x.copy(), z.copy(), z.copy())

    @property
    def n_nodes(self) -> int:
        return self.x.shape[0]

    def node(self, i: int) -> NodeState:
        return NodeState(*(getattr(self, name)[i].copy() for name in _BUFFERS))

    def set_node(self, i: int, node: NodeState) -> None:
        for name in _BUFFERS:
            getattr(self, name)[i] = getattr(node, name)

    def copy(self) -> "SwarmState":
        return SwarmState(*(getattr(self, name).copy() for name in _BUFFERS), t=self.t, comm_rounds=self.comm_rounds)


def tau_prev(t: int, tau: int) -> int:
    """Most recent communication iteration at or before t."""
    if tau < 1:
        raise ContractViolation("tau must be >= 1")
    return (t // tau) * tau


# -- per-node primitives -----------------------------------------------------

def _direction(oracle: GradientOracle, x, batch) -> np.ndarray:
    return oracle.full_gradient(x) if batch is None else oracle.stochastic_gradient(x, batch)


def draw_batch(oracle: GradientOracle, seed: int, node_id: int, k: int, b: int, full_batch: bool):
    """Indices for the batch evaluated at iterate k, or None for the whole shard."""
    if full_batch:
        return None
    return sample_batch(rngmod.stream(seed, node_id, rngmod.BATCH, k), oracle.n, b)


def mvr_update(oracle: GradientOracle, x_new, x_old, v_old, alpha: float, batch) -> np.ndarray:
    """v_new = g(x_new) + (1 - alpha)(v_old - g(x_old)), both g on the same batch."""
    g_new = _direction(oracle, x_new, batch)
    g_old = _direction(oracle, x_old, batch)
    return g_new + (1.0 - alpha) * (v_old - g_old)


def local_step_mvr(node: NodeState, oracle: GradientOracle, gamma: float, alpha_next: float, batch) -> NodeState:
    """One non-communicating DSE-MVR step; ``batch=None`` means full shard."""
    x_new = node.x - gamma * node.v
    v_new = mvr_update(oracle, x_new, node.x, node.v, alpha_next, batch)
    return NodeState(x_new, v_new, node.y, node.h, node.x_ckpt, node.h_prev, node.y_prev)


def _check_finite(swarm: SwarmState, t: int) -> None:
    if not (np.all(np.isfinite(swarm.x)) and np.all(np.isfinite(swarm.v))):
        raise DivergenceError(t)


def communicate(
    swarm: SwarmState,
    W: MixingMatrix,
    gamma: float,
    oracles: Sequence[GradientOracle] | None = None,
) -> SwarmState:
    """Slow gradient tracking plus slow partial averaging, in place.

    Called at iteration t with mod(t + 1, tau) == 0.  Reads ``swarm.x`` and
    ``swarm.v`` as x_t and v_t.  When ``oracles`` are given (DSE-MVR) each
    node's direction is reset to its full local gradient at the new iterate;
    otherwise ``swarm.v`` is left for the caller.
    """
    w = W.w if isinstance(W, MixingMatrix) else np.asarray(W)
    if w.shape != (swarm.n_nodes, swarm.n_nodes):
        raise ContractViolation(f"W is {w.shape}, swarm has {swarm.n_nodes} nodes")
    x_half = swarm.x - gamma * swarm.v
    h = swarm.x_ckpt - x_half
    y = w @ (swarm.y_prev + h - swarm.h_prev)
    x = w @ (swarm.x_ckpt - y)
    swarm.h = h
    swarm.y = y
    swarm.x = x
    swarm.x_ckpt = x.copy()
    swarm.h_prev = h.copy()
    swarm.y_prev = y.copy()
    if oracles is not None:
        swarm.v = np.stack([o.full_gradient(x[i]) for i, o in enumerate(oracles)])
    swarm.t += 1
    swarm.comm_rounds += 1
    return swarm


# -- runs --------------------------------------------------------------------

@dataclass
class StepEvent:
    """What one iteration t -> t+1 did; handed to ``observer`` callbacks."""

    t: int
    gamma: float
    x_prev: np.ndarray
    v_prev: np.ndarray
    swarm: SwarmState
    communicated: bool


@dataclass
class RunResult:
    algorithm: str
    rows: list[MetricsRow]
    swarm: SwarmState
    cadence: int = 1
    L_hat: float = field(default=float("nan"))


def _batch_directions(problem: Problem, swarm_x: np.ndarray, seed: int, k: int, params: AlgoParams) -> np.ndarray:
    out = np.empty_like(swarm_x)
    for i, o in enumerate(problem.oracles):
        batch = draw_batch(o, seed, i, k, params.b, params.full_batch)
        out[i] = _direction(o, swarm_x[i], batch)
    return out


def run(
    algorithm: str,
    problem: Problem,
    W: MixingMatrix,
    params: AlgoParams,
    seed: int,
    x0: np.ndarray | None = None,
    observer: Callable[[StepEvent], None] | None = None,
    cadence: int | None = None,
    timing: bool = False,
) -> RunResult:
    """Execute T iterations of ``algorithm`` and return the metrics trajectory."""
    if algorithm not in ALGORITHMS:
        raise ContractViolation(f"unknown algorithm {algorithm!r}")
    n = problem.n_nodes
    if W.n != n:
        raise ContractViolation(f"W has {W.n} nodes, problem has {n}")
    mvr = algorithm == "dse_mvr"
    tau = 1 if algorithm == "dsgd" else params.tau
    if mvr and params.alpha is None:
        raise ContractViolation("dse_mvr needs an alpha schedule")
    alpha = params.alpha if mvr else Constant(1.0)
    cadence = cadence or default_cadence(params.T, tau)
    x0 = np.zeros(problem.dim) if x0 is None else np.asarray(x0, dtype=np.float64)
    swarm = SwarmState.initial(x0, n)
    start = time.perf_counter_ns()

    if mvr and params.reset:
        swarm.v = np.stack([o.full_gradient(swarm.x[i]) for i, o in enumerate(problem.oracles)])
    else:
        swarm.v = _batch_directions(problem, swarm.x, seed, 0, params)

    def row(t: int) -> MetricsRow:
        wall = time.perf_counter_ns() - start if timing else 0
        return compute_row(problem, swarm.x, t, swarm.comm_rounds, params.gamma(t), alpha(t), wall)

    rows = [row(0)]
    with np.errstate(over="ignore", invalid="ignore"):
        _loop(algorithm, problem, W, params, seed, swarm, alpha, tau, cadence, observer, rows, row)
    return RunResult(algorithm, rows, swarm, cadence)


def _loop(algorithm, problem, W, params, seed, swarm, alpha, tau, cadence, observer, rows, row):
    mvr = algorithm == "dse_mvr"
    tracking = algorithm in ("dse_mvr", "dse_sgd")
    for t in range(params.T):
        gamma = params.gamma(t)
        comm = (t + 1) % tau == 0
        x_prev = swarm.x.copy() if (observer or (mvr and comm and not params.reset)) else swarm.x
        v_prev = swarm.v.copy() if observer else swarm.v
        if tracking and comm:
            communicate(swarm, W, gamma, problem.oracles if (mvr and params.reset) else None)
            if mvr and not params.reset:
                a = alpha(t + 1)
                for i, o in enumerate(problem.oracles):
                    batch = draw_batch(o, seed, i, t + 1, params.b, params.full_batch)
                    swarm.v[i] = mvr_update(o, swarm.x[i], x_prev[i], v_prev[i], a, batch)
            elif not mvr:
                swarm.v = _batch_directions(problem, swarm.x, seed, t + 1, params)
        elif mvr:
            a = alpha(t + 1)
            x_new = np.empty_like(swarm.x)
            v_new = np.empty_like(swarm.v)
            for i, o in enumerate(problem.oracles):
                batch = draw_batch(o, seed, i, t + 1, params.b, params.full_batch)
                x_new[i] = swarm.x[i] - gamma * swarm.v[i]
                v_new[i] = mvr_update(o, x_new[i], swarm.x[i], swarm.v[i], a, batch)
            swarm.x, swarm.v = x_new, v_new
            swarm.t += 1
        else:
            # SGD-type step; baselines gossip the half-step
            x_half = swarm.x - gamma * swarm.v
            if comm:
                x_half = W.w @ x_half
                swarm.comm_rounds += 1
            swarm.x = x_half
            swarm.v = _batch_directions(problem, swarm.x, seed, t + 1, params)
            swarm.t += 1
        _check_finite(swarm, t + 1)
        if observer is not None:
            observer(StepEvent(t, gamma, x_prev, v_prev, swarm, comm))
        if (t + 1) % cadence == 0 or t + 1 == params.T:
            rows.append(row(t + 1))


def run_dse_mvr(problem: Problem, W: MixingMatrix, params: AlgoParams, seed: int, **kw) -> RunResult:
    return run("dse_mvr", problem, W, params, seed, **kw)


def run_dse_sgd(problem: Problem, W: MixingMatrix, params: AlgoParams, seed: int, **kw) -> RunResult:
    return run("dse_sgd", problem, W, params, seed, **kw)


def run_dsgd(problem: Problem, W: MixingMatrix, params: AlgoParams, seed: int, **kw) -> RunResult:
    return run("dsgd", problem, W, params, seed, **kw)


def run_dlsgd(problem: Problem, W: MixingMatrix, params: AlgoParams, seed: int, **kw) -> RunResult:
    return run("dlsgd", problem, W, params, seed, **kw)
