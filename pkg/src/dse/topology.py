"""Communication graphs, gossip mixing matrices and the consensus rate lambda."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractViolation, InvalidTopologyError

STOCHASTIC_TOL = 1e-12
DENSE_EIG_MAX_N = 512
POWER_MAX_ITER = 1000
POWER_TOL = 1e-10


@dataclass(frozen=True)
class Graph:
    n_nodes: int
    edges: frozenset[tuple[int, int]]
    name: str = "graph"

    def __post_init__(self):
        if self.n_nodes < 1:
            raise InvalidTopologyError("graph needs at least one node")
        norm = set()
        for i, j in self.edges:
            if i == j:
                raise InvalidTopologyError(f"self-loop on node {i}")
            if not (0 <= i < self.n_nodes and 0 <= j < self.n_nodes):
                raise InvalidTopologyError(f"edge ({i},{j}) out of range")
            norm.add((min(i, j), max(i, j)))
        object.__setattr__(self, "edges", frozenset(norm))

    def neighbors(self, i: int) -> list[int]:
        out = [b if a == i else a for a, b in self.edges if i in (a, b)]
        return sorted(out)

    def degrees(self) -> list[int]:
        deg = [0] * self.n_nodes
        for a, b in self.edges:
            deg[a] += 1
            deg[b] += 1
        return deg

    def is_connected(self) -> bool:
        adj: list[list[int]] = [[] for _ in range(self.n_nodes)]
        for a, b in self.edges:
            adj[a].append(b)
            adj[b].append(a)
        seen = {0}
        queue = deque([0])
        while queue:
            u = queue.popleft()
            for v in adj[u]:
                if v not in seen:
                    seen.add(v)
                    queue.append(v)
        return len(seen) == self.n_nodes


def build_ring(n: int) -> Graph:
    if n < 3:
        raise InvalidTopologyError(f"ring needs n >= 3, got {n}")
    edges = {(min(i, (i + 1) % n), max(i, (i + 1) % n)) for i in range(n)}
    return Graph(n, frozenset(edges), name=f"ring{n}")


def build_complete(n: int) -> Graph:
    if n < 2:
        raise InvalidTopologyError(f"complete graph needs n >= 2, got {n}")
    edges = {(i, j) for i in range(n) for j in range(i + 1, n)}
    return Graph(n, frozenset(edges), name=f"complete{n}")


@dataclass(frozen=True)
class MixingMatrix:
    """Symmetric doubly stochastic gossip weights with cached lambda = ||W - Q||.

    The weight array is read-only; build through the constructors below or
    :meth:`from_array`, which checks every invariant.
    """

    w: np.ndarray
    lam: float = field(default=float("nan"))
    graph: Graph | None = field(default=None, compare=False)

    @property
    def n(self) -> int:
        return self.w.shape[0]

    @classmethod
    def from_array(cls, w, graph: Graph | None = None) -> "MixingMatrix":
        w = np.array(w, dtype=np.float64, copy=True)
        check_doubly_stochastic(w)
        if graph is not None:
            if graph.n_nodes != w.shape[0]:
                raise ContractViolation("graph size does not match W")
            allowed = np.eye(w.shape[0], dtype=bool)
            for a, b in graph.edges:
                allowed[a, b] = allowed[b, a] = True
            if np.any((w > 0) & ~allowed):
                raise ContractViolation("W has weight on a pair that is not an edge")
        w.flags.writeable = False
        return cls(w, spectral_lambda(w), graph)

    def is_doubly_stochastic(self, tol: float = STOCHASTIC_TOL) -> bool:
        try:
            check_doubly_stochastic(self.w, tol)
        except ContractViolation:
            return False
        return True

    def to_csv(self, path: str | Path) -> None:
        write_matrix_csv(self.w, path)


def check_doubly_stochastic(w: np.ndarray, tol: float = STOCHASTIC_TOL) -> None:
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise ContractViolation(f"W must be square, got shape {w.shape}")
    if np.any(w < 0) or np.any(w > 1):
        raise ContractViolation("W entries must lie in [0, 1]")
    if not np.array_equal(w, w.T):
        raise ContractViolation("W must be symmetric")
    if np.max(np.abs(w.sum(axis=1) - 1.0)) > tol or np.max(np.abs(w.sum(axis=0) - 1.0)) > tol:
        raise ContractViolation("W rows and columns must sum to 1")


def metropolis_hastings_weights(g: Graph) -> MixingMatrix:
    """w_ij = 1 / (max(deg i, deg j) + 1) on edges, remainder on the diagonal."""
    if not g.is_connected():
        raise InvalidTopologyError(f"{g.name} is not connected")
    n = g.n_nodes
    deg = g.degrees()
    w = np.zeros((n, n))
    for a, b in sorted(g.edges):
        wij = 1.0 / (max(deg[a], deg[b]) + 1)
        w[a, b] = wij
        w[b, a] = wij
    for i in range(n):
        w[i, i] = 1.0 - w[i].sum()
    return MixingMatrix.from_array(w, g)


def uniform_average_matrix(n: int) -> MixingMatrix:
    if n < 1:
        raise InvalidTopologyError("n must be >= 1")
    w = np.full((n, n), 1.0 / n)
    w.flags.writeable = False
    return MixingMatrix(w, 0.0, build_complete(n) if n >= 2 else None)


def spectral_lambda(w, method: str = "auto") -> float:
    """Spectral norm of W - Q for a symmetric doubly stochastic W."""
    w = w.w if isinstance(w, MixingMatrix) else np.asarray(w, dtype=np.float64)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise ContractViolation("W must be square")
    if not np.array_equal(w, w.T):
        raise ContractViolation("spectral_lambda requires a symmetric W")
    n = w.shape[0]
    if method == "auto":
        method = "dense" if n <= DENSE_EIG_MAX_N else "power"
    a = w - np.full((n, n), 1.0 / n)
    if method == "dense":
        eig = np.linalg.eigvalsh(a)
        return float(np.max(np.abs(eig)))
    if method == "power":
        return power_iteration_norm(a)
    raise ValueError(f"unknown method {method!r}")


def power_iteration_norm(a: np.ndarray, max_iter: int = POWER_MAX_ITER, tol: float = POWER_TOL) -> float:
    """Largest |eigenvalue| of symmetric ``a`` by power iteration on a @ a.

    The all-ones direction is projected out each step; for a = W - Q it lies in
    the kernel already, the projection only removes round-off drift.
    """
    n = a.shape[0]
    v = np.random.default_rng(0).standard_normal(n)
    v -= v.mean()
    nv = np.linalg.norm(v)
    if nv == 0.0:
        return 0.0
    v /= nv
    est = 0.0
    for _ in range(max_iter):
        u = a @ (a @ v)
        u -= u.mean()
        new = float(np.sqrt(max(v @ u, 0.0)))
        nu = np.linalg.norm(u)
        if nu == 0.0:
            return 0.0
        v = u / nu
        if abs(new - est) < tol:
            est = new
            break
        est = new
    return est


def consensus_contraction_holds(w: MixingMatrix, x: np.ndarray, slack: float = 1e-10) -> bool:
    """||W X - mean|| <= lambda ||X - mean|| for node-major X (N x d)."""
    xbar = x.mean(axis=0, keepdims=True)
    lhs = np.linalg.norm(w.w @ x - xbar)
    rhs = w.lam * np.linalg.norm(x - xbar)
    return bool(lhs <= rhs + slack)


def write_matrix_csv(w: np.ndarray, path: str | Path) -> None:
    lines = [",".join(f"{v:.17g}" for v in row) for row in np.asarray(w)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_matrix_csv(path: str | Path) -> np.ndarray:
    rows = [
        [float(tok) for tok in line.split(",")]
        for line in Path(path).read_text(encoding="utf-8").splitlines()
        if line.strip()
    ]
    return np.array(rows, dtype=np.float64)


def build_topology(kind: str, n: int) -> MixingMatrix:
    """Metropolis-Hastings weights on a named topology (``ring`` or ``complete``)."""
    if kind == "ring":
        return metropolis_hastings_weights(build_ring(n))
    if kind == "complete":
        return metropolis_hastings_weights(build_complete(n))
    raise InvalidTopologyError(f"unknown topology {kind!r}")
