"""Closed-form convergence bounds, step-size rules and time-speedup predictions."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence


class StepSizeError(ValueError):
    pass


@dataclass(frozen=True)
class TheoremParams:
    gamma: float
    L: float
    k: int
    sigma2: float
    zeta2: float
    N: int
    batch_sizes: tuple[int, ...]
    T: int
    initial_gap: float

    @property
    def sum_M(self) -> int:
        return int(sum(self.batch_sizes))


def _stability_margin(gamma: float, L: float, k: int) -> float:
    return 1.0 - 16.0 * gamma**2 * k**2 * L**2


def d_coefficients(params: TheoremParams) -> tuple[float, float]:
    """(D1, D2) with D2 = 8 g^2 L^2 k / (1 - 16 g^2 k^2 L^2) and D1 = 1 - 2k D2."""
    g, L, k = params.gamma, params.L, params.k
    margin = _stability_margin(g, L, k)
    if margin <= 0:
        raise StepSizeError("step size too large for period")
    d2 = 8.0 * g**2 * L**2 * k / margin
    return 1.0 - 2.0 * k * d2, d2


def theorem1_rhs(params: TheoremParams) -> float:
    """Upper bound on (1/T) sum_t D1 * E||grad f(x_hat_t)||^2."""
    if params.gamma <= 0 or params.gamma * params.L > 1.0:
        raise StepSizeError("bound needs 0 < gamma <= 1/L")
    _, d2 = d_coefficients(params)
    sum_m = params.sum_M
    return (
        2.0 * params.initial_gap / (params.T * params.gamma)
        + d2 * (params.N * params.sigma2 / sum_m + 2.0 * params.k * params.zeta2)
        + params.gamma * params.L * params.sigma2 / sum_m
    )


def corollary_lr(sigma: float, T: int, sum_M: float) -> float:
    """gamma = sqrt(sum_M / T) / sigma."""
    if sigma <= 0:
        raise ValueError("use deterministic step rule: sigma must be positive")
    if T < 1:
        raise ValueError("T must be >= 1")
    return math.sqrt(sum_M / T) / sigma


def corollary_min_T(L: float, sigma: float, zeta: float, k: int, N: int, batch_sizes: Sequence[int]) -> int:
    """Smallest T for which the O(1/sqrt(T sum M)) rate is guaranteed."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    m = float(sum(batch_sizes))
    s2 = sigma**2
    terms = (
        L**2 * m / s2,
        48.0 * m * L**2 * k**2 / s2,
        144.0 * m**3 / s2**3 * L**2 * k**2 * (N * s2 / m + 2.0 * k * zeta**2) ** 2,
    )
    # drop float noise beyond 12 significant digits before the ceiling (1152.0000000002 -> 1152)
    return max(1, math.ceil(float(f"{max(terms):.12g}")))


def corollary_rate_rhs(sigma: float, gap: float, L: float, T: int, sum_M: float) -> float:
    return 4.0 * sigma * (gap + L) / math.sqrt(T * sum_M)


def max_period(T: int, N: int, c: float = 1.0) -> int:
    """Largest communication period that keeps the rate, c * T^(1/4) / N^(3/4)."""
    if T < 1 or N < 1:
        raise ValueError("T and N must be >= 1")
    return max(1, math.floor(round(c * T**0.25 / N**0.75, 9)))


def scaled_lr(gamma_1: float, capabilities: Sequence[float], reference: float | None = None) -> float:
    """gamma_N = (sum C_i / C_ref) * gamma_1; N * gamma_1 when all capabilities match."""
    if gamma_1 <= 0:
        raise ValueError("gamma_1 must be positive")
    ref = capabilities[0] if reference is None else reference
    return sum(capabilities) / ref * gamma_1


def predicted_iteration_time(variant: str, t_comp: float, t_comm: float, a: float, k: int) -> float:
    """Mean wall time per iteration implied by the per-variant overlap model."""
    name = getattr(variant, "name", variant)
    if name == "ssgd":
        return t_comp + t_comm
    if name == "pipe":
        return t_comp + t_comm * a
    if name == "local":
        return t_comp + t_comm / k
    if name == "cocod":
        return t_comp + t_comm * a / k
    raise ValueError(f"unknown variant {name!r}")


def predicted_speedup(variant, N: int, t_comp: float, t_comm: float, a: float, k: int = 1) -> float:
    if t_comp <= 0:
        raise ValueError("t_comp must be positive")
    return N * t_comp / predicted_iteration_time(variant, t_comp, t_comm, a, k)


def lemma2_rhs(
    gamma: float,
    L: float,
    k: int,
    sigma2: float,
    zeta2: float,
    N: int,
    sum_M: float,
    T: int,
    grad_norm_sum: float,
) -> float:
    """Bound on sum_t sum_i (M_i / sum M) ||x_hat_t - x_t^i||^2."""
    margin = _stability_margin(gamma, L, k)
    if margin <= 0:
        raise StepSizeError("step size too large for period")
    return (8.0 * gamma**2 * k / margin) * (
        T * N * sigma2 / sum_M + 2.0 * k * T * zeta2 + 2.0 * k * grad_norm_sum
    )
