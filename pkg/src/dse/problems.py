"""Per-node objectives, synthetic data and heterogeneous partitioning."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from . import rng as rngmod
from .errors import ContractViolation, PartitionError

# sup |d^2/dz^2 (sigmoid(z) - y)^2| over z and y in [0, 1]:
# 2 (sigmoid'^2 + |sigmoid - y| |sigmoid''|) <= 2 (1/16 + 1/(6 sqrt 3))
_SIGMOID_CURVATURE = 2.0 * (1.0 / 16.0 + 1.0 / (6.0 * np.sqrt(3.0)))


class ProblemKind(str, enum.Enum):
    LEAST_SQUARES = "least_squares"
    SIGMOID_REGRESSION = "sigmoid_regression"
    SOFTMAX_CLASSIFICATION = "softmax_classification"

    @property
    def is_classification(self) -> bool:
        return self is ProblemKind.SOFTMAX_CLASSIFICATION


class Sample(NamedTuple):
    features: np.ndarray
    label: float


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray  # (n, d)
    labels: np.ndarray  # (n,) float for regression, int for classes
    kind: ProblemKind
    theta_star: np.ndarray | None = None
    n_classes: int = 0

    def __len__(self) -> int:
        return self.features.shape[0]

    def __getitem__(self, i: int) -> Sample:
        return Sample(self.features[i], self.labels[i])

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.intp)
        return Dataset(self.features[idx], self.labels[idx], self.kind, self.theta_star, self.n_classes)


@dataclass(frozen=True)
class LocalShard:
    node_id: int
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if self.features.shape[0] < 1:
            raise ContractViolation(f"shard {self.node_id} is empty")
        if self.features.shape[0] != self.labels.shape[0]:
            raise ContractViolation("features and labels disagree in length")
        self.features.flags.writeable = False
        self.labels.flags.writeable = False

    def __len__(self) -> int:
        return self.features.shape[0]


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def generate_synthetic(
    seed: int,
    n_samples: int,
    d: int,
    kind: ProblemKind | str,
    label_noise: float = 0.0,
    n_classes: int = 2,
) -> Dataset:
    """Standard-normal features, labels from a hidden parameter plus noise."""
    kind = ProblemKind(kind)
    if n_samples < 1 or d < 1:
        raise ContractViolation("n_samples and d must be >= 1")
    if label_noise < 0:
        raise ContractViolation("label_noise must be >= 0")
    g = rngmod.stream(seed, 0, rngmod.DATA)
    a = g.standard_normal((n_samples, d))
    scale = 1.0 / np.sqrt(d)
    if kind is ProblemKind.SOFTMAX_CLASSIFICATION:
        if n_classes < 2:
            raise ContractViolation("classification needs n_classes >= 2")
        theta = g.standard_normal((d, n_classes)) * scale
        logits = a @ theta
        if label_noise > 0:
            logits = logits + label_noise * g.standard_normal(logits.shape)
        labels = np.argmax(logits, axis=1).astype(np.int64)
        return Dataset(a, labels, kind, theta, n_classes)
    theta = g.standard_normal(d) * scale
    z = a @ theta
    if kind is ProblemKind.LEAST_SQUARES:
        y = z if label_noise == 0 else z + label_noise * g.standard_normal(n_samples)
    else:
        # binary targets: the sign of the noisy response
        if label_noise > 0:
            z = z + label_noise * g.standard_normal(n_samples)
        y = (z > 0).astype(np.float64)
    return Dataset(a, y, kind, theta, 0)


def partition_keys(data: Dataset, n_buckets: int = 10) -> np.ndarray:
    """Class labels, or quantile buckets of the noiseless response for regression."""
    if data.kind.is_classification:
        return np.asarray(data.labels, dtype=np.int64)
    if data.theta_star is None:
        raise ContractViolation("regression partitioning needs the hidden parameter")
    z = data.features @ data.theta_star
    edges = np.quantile(z, np.linspace(0, 1, n_buckets + 1)[1:-1])
    return np.searchsorted(edges, z, side="right").astype(np.int64)


def dirichlet_partition(
    keys: Sequence[int],
    omega: float,
    n_nodes: int,
    seed: int,
    max_retries: int = 1000,
) -> list[np.ndarray]:
    """Split sample indices across nodes with per-class Dirichlet(omega) proportions.

    Returns one sorted index array per node.  Proportions are redrawn until
    every node holds at least one sample.
    """
    keys = np.asarray(keys)
    if omega <= 0:
        raise ContractViolation("omega must be > 0")
    if n_nodes < 1:
        raise ContractViolation("n_nodes must be >= 1")
    if len(keys) < n_nodes:
        raise PartitionError(f"{len(keys)} samples cannot cover {n_nodes} nodes")
    if n_nodes == 1:
        return [np.arange(len(keys))]
    classes = np.unique(keys)
    for attempt in range(max_retries):
        g = rngmod.stream(seed, 0, rngmod.PARTITION, attempt)
        parts: list[list[np.ndarray]] = [[] for _ in range(n_nodes)]
        for c in classes:
            idx = np.flatnonzero(keys == c)
            g.shuffle(idx)
            p = g.dirichlet(np.full(n_nodes, float(omega)))
            cuts = (np.cumsum(p)[:-1] * len(idx)).astype(np.int64)
            for node, chunk in enumerate(np.split(idx, cuts)):
                parts[node].append(chunk)
        out = [np.sort(np.concatenate(chunks)) for chunks in parts]
        if all(len(o) > 0 for o in out):
            return out
    raise PartitionError(f"no partition with non-empty shards after {max_retries} draws")


def make_shards(data: Dataset, index_sets: Sequence[np.ndarray]) -> list[LocalShard]:
    return [
        LocalShard(i, data.features[idx].copy(), data.labels[idx].copy())
        for i, idx in enumerate(index_sets)
    ]


def sample_batch(gen: np.random.Generator, shard_size: int, b: int) -> np.ndarray:
    """b indices uniform on [0, shard_size), with replacement."""
    if b < 1:
        raise ContractViolation("batch size must be >= 1")
    return gen.integers(0, shard_size, size=b)


class GradientOracle:
    """Loss and gradients of one node's regularised empirical risk.

    For softmax classification the parameter is the flattened (d, n_classes)
    weight matrix, so ``dim == d * n_classes``.
    """

    def __init__(self, shard: LocalShard, kind: ProblemKind | str, mu: float = 0.0, n_classes: int = 0):
        self.shard = shard
        self.kind = ProblemKind(kind)
        if mu < 0:
            raise ContractViolation("mu must be >= 0")
        self.mu = float(mu)
        self.d = shard.features.shape[1]
        if self.kind.is_classification:
            if n_classes < 2:
                n_classes = int(np.max(shard.labels)) + 1
            self.n_classes = max(int(n_classes), 2)
            self.dim = self.d * self.n_classes
        else:
            self.n_classes = 0
            self.dim = self.d

    @property
    def n(self) -> int:
        return len(self.shard)

    def _loss_terms(self, x, a, y) -> float:
        if self.kind is ProblemKind.LEAST_SQUARES:
            r = a @ x - y
            return 0.5 * float(r @ r) / len(y)
        if self.kind is ProblemKind.SIGMOID_REGRESSION:
            r = _sigmoid(a @ x) - y
            return float(r @ r) / len(y)
        logits = a @ x.reshape(self.d, self.n_classes)
        m = logits.max(axis=1)
        lse = m + np.log(np.exp(logits - m[:, None]).sum(axis=1))
        return float(np.sum(lse - logits[np.arange(len(y)), y])) / len(y)

    def _grad_terms(self, x, a, y) -> np.ndarray:
        m = len(y)
        if self.kind is ProblemKind.LEAST_SQUARES:
            g = a.T @ (a @ x - y) / m
        elif self.kind is ProblemKind.SIGMOID_REGRESSION:
            s = _sigmoid(a @ x)
            g = a.T @ (2.0 * (s - y) * s * (1.0 - s)) / m
        else:
            logits = a @ x.reshape(self.d, self.n_classes)
            logits -= logits.max(axis=1, keepdims=True)
            p = np.exp(logits)
            p /= p.sum(axis=1, keepdims=True)
            p[np.arange(m), y] -= 1.0
            g = (a.T @ p / m).reshape(-1)
        if self.mu:
            g = g + self.mu * x
        return g

    def loss(self, x) -> float:
        x = np.asarray(x, dtype=np.float64)
        val = self._loss_terms(x, self.shard.features, self.shard.labels)
        if self.mu:
            val += 0.5 * self.mu * float(x @ x)
        return val

    def full_gradient(self, x) -> np.ndarray:
        return self._grad_terms(np.asarray(x, dtype=np.float64), self.shard.features, self.shard.labels)

    def stochastic_gradient(self, x, batch_indices) -> np.ndarray:
        idx = np.asarray(batch_indices, dtype=np.intp)
        if idx.size == 0:
            raise ContractViolation("empty batch")
        if idx.min() < 0 or idx.max() >= self.n:
            raise ContractViolation("batch index out of shard bounds")
        return self._grad_terms(np.asarray(x, dtype=np.float64), self.shard.features[idx], self.shard.labels[idx])

    def sample_gradients(self, x) -> np.ndarray:
        """Per-sample gradients, one row per sample (regulariser included)."""
        return np.stack([self.stochastic_gradient(x, [r]) for r in range(self.n)])

    def estimate_L(self) -> float:
        a = self.shard.features
        if self.kind is ProblemKind.LEAST_SQUARES:
            return float(np.linalg.eigvalsh(a.T @ a / self.n)[-1]) + self.mu
        max_sq = float(np.max(np.einsum("ij,ij->i", a, a)))
        if self.kind is ProblemKind.SIGMOID_REGRESSION:
            return _SIGMOID_CURVATURE * max_sq + self.mu
        return 0.5 * max_sq + self.mu


# module-level aliases matching the operation names
def stochastic_gradient(oracle: GradientOracle, x, batch_indices) -> np.ndarray:
    return oracle.stochastic_gradient(x, batch_indices)


def full_gradient(oracle: GradientOracle, x) -> np.ndarray:
    return oracle.full_gradient(x)


def finite_difference_gradient(oracle: GradientOracle, x, h: float = 1e-5) -> np.ndarray:
    if h <= 0:
        raise ContractViolation("h must be > 0")
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        out[k] = (oracle.loss(x + e) - oracle.loss(x - e)) / (2.0 * h)
    return out


@dataclass
class Problem:
    """F(x) = (1/N) sum_i f_i(x) over a list of node oracles."""

    oracles: list[GradientOracle]
    dataset: Dataset | None = field(default=None, repr=False)

    @property
    def n_nodes(self) -> int:
        return len(self.oracles)

    @property
    def dim(self) -> int:
        return self.oracles[0].dim

    def loss(self, x) -> float:
        return sum(o.loss(x) for o in self.oracles) / self.n_nodes

    def gradient(self, x) -> np.ndarray:
        g = np.zeros(self.dim)
        for o in self.oracles:
            g += o.full_gradient(x)
        return g / self.n_nodes

    def estimate_L(self) -> float:
        return max(o.estimate_L() for o in self.oracles)


def build_problem(
    kind: ProblemKind | str,
    n_nodes: int,
    samples_per_node: int,
    d: int,
    omega: float | None,
    seed: int,
    label_noise: float = 0.0,
    mu: float = 0.0,
    n_classes: int = 2,
    n_buckets: int = 10,
) -> Problem:
    """Synthesize N * samples_per_node samples and split them across nodes.

    ``omega=None`` deals samples round-robin (iid, equal sizes).
    """
    kind = ProblemKind(kind)
    data = generate_synthetic(seed, n_nodes * samples_per_node, d, kind, label_noise, n_classes)
    if omega is None:
        sets = [np.arange(i, len(data), n_nodes) for i in range(n_nodes)]
    else:
        sets = dirichlet_partition(partition_keys(data, n_buckets), omega, n_nodes, seed)
    shards = make_shards(data, sets)
    return Problem([GradientOracle(s, kind, mu, data.n_classes) for s in shards], data)


def export_csv(data: Dataset, path: str | Path) -> None:
    lines = []
    for a, y in zip(data.features, data.labels):
        cells = [f"{v:.17g}" for v in a]
        cells.append(str(int(y)) if data.kind.is_classification else f"{float(y):.17g}")
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def import_csv(path: str | Path, kind: ProblemKind | str, n_classes: int = 0) -> Dataset:
    kind = ProblemKind(kind)
    rows = np.loadtxt(path, delimiter=",", ndmin=2)
    feats = np.ascontiguousarray(rows[:, :-1])
    if kind.is_classification:
        labels = rows[:, -1].astype(np.int64)
        n_classes = max(n_classes, int(labels.max()) + 1)
        return Dataset(feats, labels, kind, None, n_classes)
    return Dataset(feats, np.ascontiguousarray(rows[:, -1]), kind, None, 0)
