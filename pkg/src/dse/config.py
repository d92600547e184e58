"""Run configuration: schema, TOML parsing and validation.

A config is a UTF-8 TOML document (``key = value`` lines, dotted keys or
``[section]`` headers)::

    algorithm = "dse_sgd"      # dse_mvr | dse_sgd | dsgd | dlsgd
    seed = 7
    T = 100
    tau = 2
    b = 1

    [topology]
    kind = "ring"              # ring | complete
    n = 4

    [problem]
    kind = "least_squares"     # least_squares | sigmoid_regression | softmax_classification
    d = 10
    samples_per_node = 50
    omega = 0.1                # Dirichlet concentration; omit for an iid split
    label_noise = 0.1
    mu = 0.0
    n_classes = 3              # classification only
    full_batch = false         # exact local gradients instead of mini-batches

    [gamma]
    kind = "constant"          # constant | halving | corollary
    value = 0.01
    # corollary = 2

    [alpha]                    # DSE-MVR only
    kind = "theory"            # constant | decay | theory | corollary
    # value = 0.1 ; factor = 0.99 ; corollary = 2

    [metrics]
    cadence = 0                # 0 = every iteration up to T = 10^4, else every tau
    timing = false             # record wall-clock nanoseconds (breaks byte-identity)
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError
from .optimizers import ALGORITHMS
from .problems import ProblemKind

GAMMA_KINDS = ("constant", "halving", "corollary")
ALPHA_KINDS = ("constant", "decay", "theory", "corollary")
TOPOLOGIES = ("ring", "complete")


@dataclass(frozen=True)
class GammaSpec:
    kind: str = "constant"
    value: float | None = None
    corollary: int | None = None


@dataclass(frozen=True)
class AlphaSpec:
    kind: str = "constant"
    value: float | None = None
    factor: float = 0.99
    corollary: int | None = None


@dataclass(frozen=True)
class RunConfig:
    algorithm: str
    n_nodes: int
    tau: int
    b: int
    T: int
    gamma: GammaSpec
    seed: int
    topology: str = "ring"
    kind: str = "least_squares"
    d: int = 10
    samples_per_node: int = 50
    omega: float | None = None
    label_noise: float = 0.0
    mu: float = 0.0
    n_classes: int = 2
    full_batch: bool = False
    alpha: AlphaSpec = field(default_factory=AlphaSpec)
    cadence: int = 0
    timing: bool = False

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:12]

    def replace(self, **changes) -> "RunConfig":
        return validate(dataclasses.replace(self, **changes))


def validate(cfg: RunConfig) -> RunConfig:
    """Return ``cfg`` unchanged or raise ConfigError listing every problem."""
    p: list[str] = []
    if cfg.algorithm not in ALGORITHMS:
        p.append(f"algorithm: must be one of {ALGORITHMS}, got {cfg.algorithm!r}")
    if cfg.topology not in TOPOLOGIES:
        p.append(f"topology.kind: must be one of {TOPOLOGIES}, got {cfg.topology!r}")
    min_n = 3 if cfg.topology == "ring" else 2
    if cfg.n_nodes < min_n and not (cfg.topology == "complete" and cfg.n_nodes == 1):
        p.append(f"topology.n: {cfg.topology} needs n >= {min_n}")
    try:
        ProblemKind(cfg.kind)
    except ValueError:
        p.append(f"problem.kind: unknown kind {cfg.kind!r}")
    if cfg.d < 1:
        p.append("problem.d: must be >= 1")
    if cfg.samples_per_node < 1:
        p.append("problem.samples_per_node: must be >= 1")
    if cfg.omega is not None and cfg.omega <= 0:
        p.append("problem.omega: must be > 0")
    if cfg.label_noise < 0:
        p.append("problem.label_noise: must be >= 0")
    if cfg.mu < 0:
        p.append("problem.mu: must be >= 0")
    if cfg.kind == ProblemKind.SOFTMAX_CLASSIFICATION.value and cfg.n_classes < 2:
        p.append("problem.n_classes: must be >= 2")
    if cfg.tau < 1:
        p.append("tau: must be >= 1")
    if cfg.b < 1:
        p.append("b: must be >= 1")
    if cfg.T < 1:
        p.append("T: must be >= 1")
    elif cfg.tau >= 1 and cfg.T % cfg.tau != 0:
        p.append("T mod tau != 0")
    g = cfg.gamma
    if g.kind not in GAMMA_KINDS:
        p.append(f"gamma.kind: must be one of {GAMMA_KINDS}")
    elif g.kind in ("constant", "halving") and (g.value is None or g.value < 0):
        p.append("gamma.value: required and >= 0")
    elif g.kind == "corollary" and g.corollary not in (1, 2, 3):
        p.append("gamma.corollary: must be 1, 2 or 3")
    a = cfg.alpha
    if cfg.algorithm == "dse_mvr":
        if a.kind not in ALPHA_KINDS:
            p.append(f"alpha.kind: must be one of {ALPHA_KINDS}")
        elif a.kind in ("constant", "decay") and (a.value is None or not 0 < a.value <= 1):
            p.append("alpha.value: required, in (0, 1]")
        elif a.kind == "corollary" and a.corollary not in (1, 2):
            p.append("alpha.corollary: must be 1 or 2")
        if a.kind == "decay" and not 0 < a.factor <= 1:
            p.append("alpha.factor: must be in (0, 1]")
    if cfg.cadence < 0:
        p.append("metrics.cadence: must be >= 0")
    if not -(2**63) <= cfg.seed < 2**64:
        p.append("seed: must fit in 64 bits")
    if p:
        raise ConfigError("invalid config: " + "; ".join(p), problems=p)
    return cfg


_TOP = {"algorithm", "seed", "T", "tau", "b", "topology", "problem", "gamma", "alpha", "metrics"}
_PROBLEM = {"kind", "d", "samples_per_node", "omega", "label_noise", "mu", "n_classes", "full_batch"}


def from_dict(doc: dict[str, Any]) -> RunConfig:
    unknown = set(doc) - _TOP
    problems = [f"{k}: unknown key" for k in sorted(unknown)]
    topo = doc.get("topology", {})
    prob = doc.get("problem", {})
    problems += [f"problem.{k}: unknown key" for k in sorted(set(prob) - _PROBLEM)]
    for req in ("algorithm", "seed", "T", "tau"):
        if req not in doc:
            problems.append(f"{req}: missing")
    if "n" not in topo:
        problems.append("topology.n: missing")
    if "gamma" not in doc:
        problems.append("gamma: missing")
    if problems:
        raise ConfigError("invalid config: " + "; ".join(problems), problems=problems)
    try:
        gamma = GammaSpec(**doc["gamma"])
        alpha = AlphaSpec(**doc.get("alpha", {}))
        metrics = doc.get("metrics", {})
        cfg = RunConfig(
            algorithm=doc["algorithm"],
            n_nodes=int(topo["n"]),
            topology=topo.get("kind", "ring"),
            tau=int(doc["tau"]),
            b=int(doc.get("b", 1)),
            T=int(doc["T"]),
            gamma=gamma,
            alpha=alpha,
            seed=int(doc["seed"]),
            kind=prob.get("kind", "least_squares"),
            d=int(prob.get("d", 10)),
            samples_per_node=int(prob.get("samples_per_node", 50)),
            omega=None if prob.get("omega") is None else float(prob["omega"]),
            label_noise=float(prob.get("label_noise", 0.0)),
            mu=float(prob.get("mu", 0.0)),
            n_classes=int(prob.get("n_classes", 2)),
            full_batch=bool(prob.get("full_batch", False)),
            cadence=int(metrics.get("cadence", 0)),
            timing=bool(metrics.get("timing", False)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config: {exc}", problems=[str(exc)]) from exc
    return validate(cfg)


def parse_text(text: str) -> RunConfig:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        line = getattr(exc, "lineno", None)
        if line is None:
            # tomli < 2.1 only embeds the position in the message
            import re

            m = re.search(r"line (\d+)", str(exc))
            line = int(m.group(1)) if m else None
        raise ConfigError(f"parse error at line {line}: {exc}", line=line) from exc
    return from_dict(doc)


def parse_config(path: str | Path) -> RunConfig:
    return parse_text(Path(path).read_text(encoding="utf-8"))


def to_toml(cfg: RunConfig) -> str:
    """Serialise a config back to the documented TOML layout."""

    def val(v):
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, str):
            return json.dumps(v)
        if isinstance(v, float):
            return repr(v)
        return str(v)

    lines = [f"algorithm = {val(cfg.algorithm)}", f"seed = {cfg.seed}", f"T = {cfg.T}", f"tau = {cfg.tau}", f"b = {cfg.b}", ""]
    lines += ["[topology]", f"kind = {val(cfg.topology)}", f"n = {cfg.n_nodes}", ""]
    lines += ["[problem]", f"kind = {val(cfg.kind)}", f"d = {cfg.d}", f"samples_per_node = {cfg.samples_per_node}"]
    if cfg.omega is not None:
        lines.append(f"omega = {val(float(cfg.omega))}")
    lines += [
        f"label_noise = {val(float(cfg.label_noise))}",
        f"mu = {val(float(cfg.mu))}",
        f"n_classes = {cfg.n_classes}",
        f"full_batch = {val(cfg.full_batch)}",
        "",
    ]
    for name, spec in (("gamma", cfg.gamma), ("alpha", cfg.alpha)):
        lines.append(f"[{name}]")
        for k, v in dataclasses.asdict(spec).items():
            if v is not None:
                lines.append(f"{k} = {val(v)}")
        lines.append("")
    lines += ["[metrics]", f"cadence = {cfg.cadence}", f"timing = {val(cfg.timing)}", ""]
    return "\n".join(lines)
