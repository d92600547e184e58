"""Step-size and momentum prescriptions from the DSE-MVR / DSE-SGD convergence theorems.

Corollary ids:

* ``1`` -- DSE-MVR, iid data, ``gamma = N^(2/3) / (L T^(1/3))``, ``alpha = N^(1/3) T^(-2/3)``
* ``2`` -- DSE-MVR, ``gamma = sqrt(bN) / (L sqrt T)``, ``alpha = 1/T``
* ``3`` -- DSE-SGD, ``gamma = sqrt(bN / T)``  (no momentum; alpha reported as 1)

Presets that prescribe b or tau growing with T are only suggestions, see
:func:`suggested_batch` and :func:`suggested_tau`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import ContractViolation, TheoryViolation

COROLLARIES = (1, 2, 3)


@dataclass(frozen=True)
class TheoryInputs:
    L: float
    lam: float
    tau: int
    N: int
    b: int
    T: int

    def __post_init__(self):
        if self.L <= 0 or self.tau < 1 or self.N < 1 or self.b < 1 or self.T < 1:
            raise ContractViolation("L, tau, N, b, T must all be positive")
        _check_lambda(self.lam)


def _check_lambda(lam: float) -> None:
    if not 0.0 <= lam < 1.0:
        raise ContractViolation(f"lambda must lie in [0, 1), got {lam}")


def _gamma_bound(L: float, lam: float, tau: int, first: float, second: float) -> float:
    if L <= 0 or tau < 1:
        raise ContractViolation("L must be > 0 and tau >= 1")
    _check_lambda(lam)
    a = 1.0 / (first * L * tau)
    if lam == 0.0:
        return a  # the consensus constraint vanishes on a complete average
    b = (1.0 - lam**2) ** 2 / (second * lam**2 * L * tau)
    return min(a, b)


def max_gamma_dse_mvr(L: float, lam: float, tau: int) -> float:
    return _gamma_bound(L, lam, tau, 8.0, 64.0 * math.sqrt(6.0))


def max_gamma_dse_sgd(L: float, lam: float, tau: int) -> float:
    return _gamma_bound(L, lam, tau, 4.0 * math.sqrt(2.0), 32.0 * math.sqrt(6.0))


def max_gamma(algorithm: str, L: float, lam: float, tau: int) -> float:
    if algorithm == "dse_mvr":
        return max_gamma_dse_mvr(L, lam, tau)
    if algorithm == "dse_sgd":
        return max_gamma_dse_sgd(L, lam, tau)
    raise ContractViolation(f"no step-size bound for {algorithm!r}")


def alpha_theory(L: float, gamma: float, N: int, b: int) -> float:
    """alpha = 32 L^2 gamma^2 / (N b); must not exceed 1."""
    if L <= 0 or gamma < 0 or N < 1 or b < 1:
        raise ContractViolation("alpha_theory needs L > 0, gamma >= 0, N >= 1, b >= 1")
    alpha = 32.0 * L**2 * gamma**2 / (N * b)
    if alpha > 1.0:
        raise TheoryViolation(f"alpha = {alpha:.6g} > 1: step size too large for the momentum rule")
    return alpha


def min_horizon_real(corollary_id: int, N: int, b: int, tau: int, lam: float, L: float = 1.0) -> float:
    _check_lambda(lam)
    gap = 1.0 - lam**2
    if corollary_id == 1:
        return max(512.0 * N**2 * tau**3, 192.0**3 * N**2 * lam**6 * tau**3 / gap**6)
    if corollary_id == 2:
        return max(64.0 * N * b * tau**2, 192.0**2 * N * lam**4 * b * tau**2 / gap**4)
    if corollary_id == 3:
        return max(32.0 * N * L**2 * b * tau**2, 6144.0 * N * lam**4 * L**2 * b * tau**2 / gap**4)
    raise ContractViolation(f"unknown corollary {corollary_id!r}; expected one of {COROLLARIES}")


def min_horizon(corollary_id: int, N: int, b: int, tau: int, lam: float, L: float = 1.0) -> int:
    """Smallest T for which the corollary's preset applies."""
    return math.ceil(min_horizon_real(corollary_id, N, b, tau, lam, L))


def corollary_preset(
    corollary_id: int,
    T: int,
    N: int,
    b: int,
    L: float,
    tau: int = 1,
    lam: float = 0.0,
) -> tuple[float, float]:
    """(gamma, alpha) prescribed by a corollary for horizon T."""
    required = min_horizon(corollary_id, N, b, tau, lam, L)
    if T < required:
        raise TheoryViolation(f"corollary {corollary_id} needs T >= {required}, got {T}", required)
    if corollary_id == 1:
        return N ** (2 / 3) / L * T ** (-1 / 3), N ** (1 / 3) * T ** (-2 / 3)
    if corollary_id == 2:
        return math.sqrt(b * N) / L / math.sqrt(T), 1.0 / T
    return math.sqrt(b * N / T), 1.0


def suggested_batch(T: int, N: int) -> int:
    """b ~ T^(1/3) / N, big-O constant taken as 1."""
    return max(1, math.ceil(T ** (1 / 3) / N))


def suggested_tau(T: int, N: int, variant: str = "quarter") -> int:
    """tau ~ T^(1/4) N^(-3/4) ("quarter") or T^(1/2) N^(-2/3) ("half"), constant 1."""
    if variant == "quarter":
        return max(1, math.ceil(T**0.25 * N**-0.75))
    if variant == "half":
        return max(1, math.ceil(T**0.5 * N ** (-2 / 3)))
    raise ValueError(f"unknown variant {variant!r}")
