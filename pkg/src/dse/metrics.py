"""Diagnostics logged during a run and the empirical assumption quantities."""
from __future__ import annotations

import csv
import io
from dataclasses import astuple, dataclass, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ContractViolation
from .problems import GradientOracle, Problem

CSV_COLUMNS = ("t", "comm_rounds", "loss", "grad_norm_sq", "consensus_sq", "gamma_t", "alpha_t", "wall_nanos")


@dataclass(frozen=True)
class MetricsRow:
    t: int
    comm_rounds: int
    loss: float
    grad_norm_sq: float
    consensus_sq: float
    gamma_t: float
    alpha_t: float
    wall_nanos: int = 0


def average_iterate(x: np.ndarray) -> np.ndarray:
    """Mean over nodes of a node-major (N, d) array."""
    return np.mean(x, axis=0)


def consensus_distance_sq(x: np.ndarray) -> float:
    """sum_i ||x_i - xbar||^2 for node-major (N, d) parameters."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] < 1:
        raise ContractViolation("need at least one node")
    dev = x - x.mean(axis=0, keepdims=True)
    return float(np.sum(dev * dev))


def global_grad_norm_sq(problem: Problem, xbar) -> float:
    g = problem.gradient(xbar)
    return float(g @ g)


def heterogeneity_sq(problem: Problem, x) -> float:
    """(1/N) sum_i ||grad f_i(x) - grad F(x)||^2."""
    grads = np.stack([o.full_gradient(x) for o in problem.oracles])
    dev = grads - grads.mean(axis=0, keepdims=True)
    return float(np.sum(dev * dev)) / problem.n_nodes


def noise_sq_estimate(oracle: GradientOracle, x, b: int = 1, M: int = 1000, gen: np.random.Generator | None = None) -> float:
    """Monte-Carlo mean of ||g(x; batch) - grad f_i(x)||^2 over M draws of size b.

    With ``b >= n`` the draw is taken as the whole shard, so the estimate is 0.
    """
    if M < 2:
        raise ContractViolation("M must be >= 2")
    full = oracle.full_gradient(x)
    if b >= oracle.n:
        return 0.0
    gen = gen if gen is not None else np.random.default_rng(0)
    total = 0.0
    for _ in range(M):
        idx = gen.integers(0, oracle.n, size=b)
        diff = oracle.stochastic_gradient(x, idx) - full
        total += float(diff @ diff)
    return total / M


def population_noise_sq(oracle: GradientOracle, x) -> float:
    """Exact single-sample gradient variance by enumeration over the shard."""
    grads = oracle.sample_gradients(x)
    dev = grads - oracle.full_gradient(x)
    return float(np.sum(dev * dev)) / oracle.n


def compute_row(problem: Problem, x: np.ndarray, t: int, comm_rounds: int, gamma_t: float, alpha_t: float, wall_nanos: int = 0) -> MetricsRow:
    xbar = average_iterate(x)
    return MetricsRow(
        t=t,
        comm_rounds=comm_rounds,
        loss=problem.loss(xbar),
        grad_norm_sq=global_grad_norm_sq(problem, xbar),
        consensus_sq=consensus_distance_sq(x),
        gamma_t=float(gamma_t),
        alpha_t=float(alpha_t),
        wall_nanos=int(wall_nanos),
    )


def default_cadence(T: int, tau: int) -> int:
    return 1 if T <= 10_000 else tau


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.17g}"


def rows_to_csv(rows: Iterable[MetricsRow], cadence: int | None = None) -> str:
    buf = io.StringIO()
    if cadence is not None:
        buf.write(f"# cadence={cadence}\n")
    buf.write(",".join(CSV_COLUMNS) + "\n")
    for r in rows:
        buf.write(",".join(_fmt(v) for v in astuple(r)) + "\n")
    return buf.getvalue()


def write_csv(rows: Sequence[MetricsRow], path: str | Path, cadence: int | None = None) -> None:
    Path(path).write_text(rows_to_csv(rows, cadence), encoding="utf-8", newline="\n")


def read_csv(path: str | Path) -> list[MetricsRow]:
    lines = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines() if not ln.startswith("#")]
    reader = csv.DictReader(lines)
    if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
        raise ContractViolation(f"unexpected columns {reader.fieldnames}")
    types = {f.name: f.type for f in fields(MetricsRow)}
    out = []
    for rec in reader:
        out.append(MetricsRow(**{k: (int(v) if types[k] in ("int", int) else float(v)) for k, v in rec.items()}))
    return out
