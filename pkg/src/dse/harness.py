"""Wiring from a RunConfig to artifacts: single runs, sweeps, validation, plots."""
from __future__ import annotations

import csv
import dataclasses
import io
import itertools
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import theory
from .config import RunConfig, from_dict, validate
from .errors import ArtifactConflict, ConfigError, ContractViolation, DivergenceError, DSEError, TheoryViolation
from .metrics import CSV_COLUMNS, default_cadence, rows_to_csv
from .optimizers import AlgoParams, Constant, Decay, Halving, RunResult, run
from .problems import Problem, build_problem
from .topology import MixingMatrix, build_topology, uniform_average_matrix

CHECKPOINT_MAGIC = b"DSE1"
DEFAULT_SWEEP_CAP = 1024
SUMMARY_STATS = ("status", "final_loss", "final_grad_norm_sq", "min_loss", "comm_rounds_total")


# -- experiment assembly -----------------------------------------------------

@dataclass
class Experiment:
    config: RunConfig
    problem: Problem
    W: MixingMatrix
    params: AlgoParams
    L_hat: float
    gamma0: float
    alpha0: float | None
    warnings: list[str] = field(default_factory=list)


def build_mixing(cfg: RunConfig) -> MixingMatrix:
    if cfg.topology == "complete" and cfg.n_nodes == 1:
        return uniform_average_matrix(1)
    return build_topology(cfg.topology, cfg.n_nodes)


def build_experiment(cfg: RunConfig) -> Experiment:
    """Materialise data, topology and schedules; theory presets resolved here."""
    W = build_mixing(cfg)
    problem = build_problem(
        cfg.kind, cfg.n_nodes, cfg.samples_per_node, cfg.d, cfg.omega, cfg.seed,
        label_noise=cfg.label_noise, mu=cfg.mu, n_classes=cfg.n_classes,
    )
    L = problem.estimate_L()
    N, b, T, tau = cfg.n_nodes, cfg.b, cfg.T, cfg.tau
    warnings: list[str] = []

    g = cfg.gamma
    try:
        if g.kind == "corollary":
            gamma0 = theory.corollary_preset(g.corollary, T, N, b, L, tau=tau, lam=W.lam)[0]
            gamma = Constant(gamma0)
        elif g.kind == "halving":
            gamma0 = float(g.value)
            gamma = Halving(gamma0, T)
        else:
            gamma0 = float(g.value)
            gamma = Constant(gamma0)

        alpha = None
        alpha0 = None
        if cfg.algorithm == "dse_mvr":
            a = cfg.alpha
            if a.kind == "theory":
                alpha0 = theory.alpha_theory(L, gamma0, N, b)
                alpha = Constant(alpha0)
            elif a.kind == "corollary":
                alpha0 = theory.corollary_preset(a.corollary, T, N, b, L, tau=tau, lam=W.lam)[1]
                alpha = Constant(alpha0)
            elif a.kind == "decay":
                alpha0 = float(a.value)
                alpha = Decay(alpha0, tau, a.factor)
            else:
                alpha0 = float(a.value)
                alpha = Constant(alpha0)
            if alpha0 <= 0:
                raise ConfigError("alpha resolves to 0; the momentum rule needs alpha > 0", ["alpha: resolves to 0"])
    except TheoryViolation as exc:
        raise ConfigError(f"invalid config: {exc}", problems=[str(exc)]) from exc

    if cfg.algorithm in ("dse_mvr", "dse_sgd"):
        bound = theory.max_gamma(cfg.algorithm, L, W.lam, tau)
        if gamma0 > bound:
            warnings.append(
                f"warning: gamma={gamma0:.6g} exceeds the theoretical bound {bound:.6g} "
                f"(L_hat={L:.6g}, lambda={W.lam:.6g}, tau={tau}); proceeding"
            )
    if cfg.full_batch and b > min(o.n for o in problem.oracles):
        warnings.append("warning: b exceeds the smallest shard; full_batch ignores b")

    params = AlgoParams(gamma=gamma, tau=tau, T=T, b=b, alpha=alpha, full_batch=cfg.full_batch)
    return Experiment(cfg, problem, W, params, L, gamma0, alpha0, warnings)


# -- checkpoints ---------------------------------------------------------------

def checkpoint_bytes(x: np.ndarray) -> bytes:
    x = np.ascontiguousarray(x, dtype="<f8")
    n, d = x.shape
    return CHECKPOINT_MAGIC + struct.pack("<QQ", n, d) + x.tobytes(order="C")


def write_checkpoint(path: str | Path, x: np.ndarray) -> None:
    Path(path).write_bytes(checkpoint_bytes(x))


def read_checkpoint(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise ContractViolation(f"{path}: not a DSE1 checkpoint")
    n, d = struct.unpack("<QQ", raw[4:20])
    body = raw[20:]
    if len(body) != 8 * n * d:
        raise ContractViolation(f"{path}: truncated checkpoint")
    return np.frombuffer(body, dtype="<f8").reshape(n, d).astype(np.float64)


def _write_artifact(path: Path, data: bytes, force: bool = False) -> None:
    if path.exists() and not force:
        if path.read_bytes() == data:
            return
        raise ArtifactConflict(f"{path} exists with different content (use --force to overwrite)")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(data)


# -- single run ------------------------------------------------------------------

@dataclass
class RunOutcome:
    config: RunConfig
    result: RunResult
    csv_path: Path | None
    checkpoint_path: Path | None
    warnings: list[str]

    @property
    def csv_text(self) -> str:
        return rows_to_csv(self.result.rows, self.result.cadence)


def execute(cfg: RunConfig) -> tuple[Experiment, RunResult]:
    exp = build_experiment(cfg)
    cadence = cfg.cadence or default_cadence(cfg.T, 1 if cfg.algorithm == "dsgd" else cfg.tau)
    result = run(cfg.algorithm, exp.problem, exp.W, exp.params, cfg.seed, cadence=cadence, timing=cfg.timing)
    result.L_hat = exp.L_hat
    return exp, result


def artifact_stem(cfg: RunConfig) -> str:
    return f"{cfg.algorithm}-{cfg.digest()}"


def run_config(cfg: RunConfig, out_dir: str | Path | None = None, force: bool = False) -> RunOutcome:
    """Run one config; with ``out_dir`` write ``<stem>.csv`` and ``<stem>.ckpt``."""
    exp, result = execute(cfg)
    csv_path = ckpt_path = None
    if out_dir is not None:
        out = Path(out_dir)
        stem = artifact_stem(cfg)
        csv_path = out / f"{stem}.csv"
        ckpt_path = out / f"{stem}.ckpt"
        _write_artifact(csv_path, rows_to_csv(result.rows, result.cadence).encode("utf-8"), force)
        _write_artifact(ckpt_path, checkpoint_bytes(result.swarm.x), force)
    return RunOutcome(cfg, result, csv_path, ckpt_path, exp.warnings)


# -- sweeps -----------------------------------------------------------------------

@dataclass
class SweepSpec:
    base: RunConfig
    axes: dict[str, list[Any]]
    seeds: list[int]
    cap: int = DEFAULT_SWEEP_CAP

    def grid(self) -> list[tuple[dict[str, Any], int]]:
        names = list(self.axes)
        combos = list(itertools.product(*(self.axes[n] for n in names))) if names else [()]
        seeds = self.seeds or [self.base.seed]
        points = [(dict(zip(names, combo)), s) for combo in combos for s in seeds]
        if len(points) > self.cap:
            raise ConfigError(f"sweep has {len(points)} runs, cap is {self.cap}", [f"cap: {len(points)} > {self.cap}"])
        return points


_RUNCONFIG_FIELDS = {f.name for f in dataclasses.fields(RunConfig)}


def parse_sweep(path: str | Path) -> SweepSpec:
    """Sweep TOML: ``base = "<config path>"`` or a ``[base]`` table, ``seeds``, ``cap``, ``[axes]``."""
    from .config import parse_config, tomllib

    path = Path(path)
    try:
        doc = tomllib.loads(path.read_text(encoding="utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"parse error: {exc}") from exc
    base_doc = doc.get("base")
    if isinstance(base_doc, str):
        base = parse_config(path.parent / base_doc)
    elif isinstance(base_doc, dict):
        base = from_dict(base_doc)
    else:
        raise ConfigError("sweep: 'base' must be a config path or table", ["base: missing"])
    axes = {k: list(v) for k, v in doc.get("axes", {}).items()}
    bad = [k for k in axes if k not in _RUNCONFIG_FIELDS or k in ("gamma", "alpha")]
    if bad:
        raise ConfigError(f"sweep: unknown axes {bad}", [f"axes.{k}: unknown" for k in bad])
    spec = SweepSpec(base, axes, [int(s) for s in doc.get("seeds", [])], int(doc.get("cap", DEFAULT_SWEEP_CAP)))
    spec.grid()
    return spec


def _sweep_point(base: RunConfig, point: dict[str, Any], seed: int, runs_dir: Path | None, force: bool) -> dict[str, Any]:
    rec: dict[str, Any] = {"seed": seed}
    try:
        cfg = validate(dataclasses.replace(base, seed=seed, **point))
        outcome = run_config(cfg, runs_dir, force)
        rows = outcome.result.rows
        rec.update(
            status="ok",
            final_loss=rows[-1].loss,
            final_grad_norm_sq=rows[-1].grad_norm_sq,
            min_loss=min(r.loss for r in rows),
            comm_rounds_total=outcome.result.swarm.comm_rounds,
            csv=outcome.csv_path.name if outcome.csv_path else "",
        )
    except ConfigError as exc:
        rec.update(status=f"config_error: {exc}")
    except DivergenceError as exc:
        rec.update(status=f"diverged@{exc.iteration}")
    except DSEError as exc:
        rec.update(status=f"error: {exc}")
    return rec


def sweep_threads() -> int:
    raw = os.environ.get("DSE_THREADS")
    if raw:
        return max(1, int(raw))
    return os.cpu_count() or 1


def sweep(spec: SweepSpec, out_dir: str | Path | None = None, threads: int | None = None, force: bool = False) -> list[dict[str, Any]]:
    """Run every grid point; failures are recorded in the summary, not raised."""
    points = spec.grid()
    runs_dir = Path(out_dir) / "runs" if out_dir is not None else None
    threads = threads or sweep_threads()
    if threads <= 1:
        records = [_sweep_point(spec.base, p, s, runs_dir, force) for p, s in points]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            records = list(pool.map(lambda ps: _sweep_point(spec.base, ps[0], ps[1], runs_dir, force), points))
    summary = [{**p, **r} for (p, _), r in zip(points, records)]
    if out_dir is not None:
        _write_artifact(Path(out_dir) / "summary.csv", summary_csv(spec, summary).encode("utf-8"), force)
    return summary


def summary_csv(spec: SweepSpec, summary: Sequence[dict[str, Any]]) -> str:
    cols = list(spec.axes) + ["seed", *SUMMARY_STATS, "csv"]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for rec in summary:
        out = []
        for c in cols:
            v = rec.get(c, "")
            out.append(f"{v:.17g}" if isinstance(v, float) else v)
        w.writerow(out)
    return buf.getvalue()


# -- validate ---------------------------------------------------------------------

def validate_report(cfg: RunConfig) -> str:
    """Human-readable theory and topology diagnostics for a config; no side effects."""
    W = build_mixing(cfg)
    problem = build_problem(
        cfg.kind, cfg.n_nodes, cfg.samples_per_node, cfg.d, cfg.omega, cfg.seed,
        label_noise=cfg.label_noise, mu=cfg.mu, n_classes=cfg.n_classes,
    )
    L = problem.estimate_L()
    lines = [f"config        {cfg.algorithm} {cfg.topology} N={cfg.n_nodes} tau={cfg.tau} b={cfg.b} T={cfg.T}"]
    lines.append(f"L_hat         {L:.10g}")
    lines.append(f"lambda        {W.lam:.12g}")
    for algo in ("dse_mvr", "dse_sgd"):
        mark = " *" if algo == cfg.algorithm else ""
        lines.append(f"max_gamma     {algo:8s} {theory.max_gamma(algo, L, W.lam, cfg.tau):.10g}{mark}")
    gamma0 = cfg.gamma.value
    if cfg.gamma.kind == "corollary":
        try:
            gamma0 = theory.corollary_preset(cfg.gamma.corollary, cfg.T, cfg.n_nodes, cfg.b, L, cfg.tau, W.lam)[0]
        except TheoryViolation as exc:
            gamma0 = None
            lines.append(f"gamma         corollary {cfg.gamma.corollary}: {exc}")
    if gamma0 is not None:
        try:
            a = theory.alpha_theory(L, gamma0, cfg.n_nodes, cfg.b)
            lines.append(f"alpha_theory  {a:.10g} (gamma={gamma0:.6g})")
        except TheoryViolation as exc:
            lines.append(f"alpha_theory  n/a ({exc})")
    for cid in theory.COROLLARIES:
        lines.append(f"min_horizon   corollary {cid}: {theory.min_horizon(cid, cfg.n_nodes, cfg.b, cfg.tau, W.lam, L)}")
    lines.append(f"doubly_stochastic  {'PASS' if W.is_doubly_stochastic() else 'FAIL'}")
    connected = W.graph.is_connected() if W.graph is not None else True
    lines.append(f"connected          {'PASS' if connected else 'FAIL'}")
    return "\n".join(lines) + "\n"


# -- plot -------------------------------------------------------------------------

def plot(csv_paths: Sequence[str | Path], metric: str, out_path: str | Path, log: bool | None = None) -> Path:
    """One polyline per CSV against t; written as a static SVG."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    if metric not in CSV_COLUMNS:
        raise ContractViolation(f"unknown metric column {metric!r}")
    series = []
    for p in csv_paths:
        lines = [ln for ln in Path(p).read_text(encoding="utf-8").splitlines() if not ln.startswith("#")]
        reader = csv.DictReader(lines)
        if metric not in (reader.fieldnames or []) or "t" not in (reader.fieldnames or []):
            raise ContractViolation(f"{p}: missing column {metric!r}")
        recs = list(reader)
        series.append((Path(p).stem, [float(r["t"]) for r in recs], [float(r[metric]) for r in recs]))
    if log is None:
        log = metric in ("loss", "grad_norm_sq", "consensus_sq")
    with matplotlib.rc_context({"svg.hashsalt": "dse", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(6, 4))
        for name, t, y in series:
            ax.plot(t, y, label=name, linewidth=1.2)
        if log:
            ax.set_yscale("log")
        ax.set_xlabel("iteration t")
        ax.set_ylabel(metric)
        ax.legend(fontsize=8)
        fig.tight_layout()
        out = Path(out_path)
        fig.savefig(out, format="svg", metadata={"Date": None})
        plt.close(fig)
    return out
