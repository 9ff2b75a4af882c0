"""Closed-form high-dimensional results: sample-complexity constants and FPR."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq
from scipy.special import erfc

from .replica_eos.core import OrderParams, pattern_table
from .replica_eos.logr import _gh_nodes, yhat

__all__ = [
    "ComplexityResult",
    "paramagnetic_check",
    "sample_complexity",
    "fpr_asymptotic",
    "logr_delta",
    "logr_limit_params",
    "logr_sample_complexity",
    "quadratic_delta",
]


@dataclass(frozen=True)
class ComplexityResult:
    c: float
    c0: float
    lower_bound_constant: float
    delta: float
    loss: str = "quadratic"


def paramagnetic_check(d: int, K0: float) -> bool:
    """True iff ``(d-1) tanh(K0)^2 < 1``."""
    if d < 2:
        raise ValueError("d >= 2 required")
    return bool((d - 1) * np.tanh(K0) ** 2 < 1.0)


def _check_lambda(lam: float, K0: float):
    t = abs(np.tanh(K0))
    if not 0.0 < lam < t:
        raise ValueError(
            f"lambda={lam} outside (0, tanh(K0)={t:.6g}): consistency needs 0 < lambda < tanh(K0); "
            "at or above tanh(K0) the active couplings are thresholded to zero (false negatives)"
        )


def quadratic_delta(lam: float, K0: float, d: int) -> float:
    t2 = np.tanh(K0) ** 2
    return (1.0 - t2 + d * lam * lam) / (1.0 + (d - 1) * t2)


def sample_complexity(lam: float, K0: float, d: int) -> ComplexityResult:
    """``M > c log N / lambda^2`` with ``c = 2(1 - t^2 + d lambda^2)/(1 + (d-1) t^2)``."""
    _check_lambda(lam, K0)
    t2 = np.tanh(K0) ** 2
    c = 2.0 * (1.0 - t2 + d * lam * lam) / (1.0 + (d - 1) * t2)
    return ComplexityResult(float(c), float(c / lam**2), float(2.0 / t2), float(quadratic_delta(lam, K0, d)))


def fpr_asymptotic(lam: float, M: float, delta: float) -> float:
    """``erfc(lambda sqrt(M / (2 delta)))``."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    return float(erfc(lam * np.sqrt(M / (2.0 * delta))))


def logr_limit_params(lam: float, K0: float, d: int) -> OrderParams:
    """Logistic order parameters in the M = c log N limit (chi, Q -> 0).

    The mean coupling solves ``tanh(K0) - E[tanh(J m) s0 s_k] = lambda``
    with ``m = s0 sum_j s_j``.
    """
    _check_lambda(lam, K0)
    X, p = pattern_table(d, K0)
    m = X.sum(axis=1)
    t = np.tanh(abs(K0))

    def g(J):
        return t - float(np.dot(p, np.tanh(J * m) * m)) / d - lam

    J = brentq(g, 0.0, 50.0, xtol=1e-15)
    return OrderParams(chi=0.0, Q=0.0, Jbar=np.full(d, J))


def logr_delta(K0: float, d: int, params: OrderParams) -> float:
    """``E_{s,z}[(1 - tanh y_hat)^2]`` at the given (chi, Q, J-bar)."""
    X, p = pattern_table(d, K0)
    J = np.asarray(params.Jbar, dtype=float)
    if J.size == 1:
        J = np.full(d, float(J))
    u0 = X @ np.abs(J)
    z, wz = _gh_nodes()
    u = u0[:, None] + np.sqrt(max(params.Q, 0.0)) * z[None, :]
    y = yhat(u, params.chi) if params.chi > 0 else u
    return float(np.sum(p[:, None] * wz[None, :] * (1.0 - np.tanh(y)) ** 2))


def logr_sample_complexity(lam: float, K0: float, d: int) -> ComplexityResult:
    """Logistic analog: ``c0 = 2 delta / lambda^2`` with delta from the limit parameters."""
    params = logr_limit_params(lam, K0, d)
    delta = logr_delta(K0, d, params)
    t2 = np.tanh(K0) ** 2
    return ComplexityResult(2.0 * delta, 2.0 * delta / lam**2, float(2.0 / t2), delta, "logistic")
