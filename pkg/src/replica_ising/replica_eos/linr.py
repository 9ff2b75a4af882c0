"""Equations of state for the quadratic loss (l1-regularized linear regression)."""

from __future__ import annotations

import numpy as np
from numba import njit

from .logr import draw_logr_samples
from .core import (
    ActiveTrialSet,
    EosProblem,
    EosSolution,
    OrderParams,
    neighborhood_expectation,
    pattern_table,
    run_outer,
    soft,
)

__all__ = ["solve_linr_asymptotic", "solve_linr_finite", "linr_jbar", "draw_linr_statistics"]


RAW_LIMIT = 20_000_000  # elements of the (T, M, d) sample array


def linr_jbar(t: float, lam: float, chi: float, d: int) -> float:
    """Closed-form mean active coupling ``soft(t, lam(1+chi)) / (1+(d-1)t^2)``."""
    return soft(t, lam * (1.0 + chi)) / (1.0 + (d - 1) * t * t)


def _check(prob: EosProblem):
    if prob.loss != "quadratic":
        raise ValueError(f"quadratic-loss solver called with loss={prob.loss!r}")


def solve_linr_asymptotic(prob: EosProblem, init: OrderParams | None = None) -> EosSolution:
    """Expectation-form EOS with the closed-form J-bar line."""
    _check(prob)
    t, d, a = prob.t, prob.d, prob.alpha
    signs = prob.signs

    def stats(p: OrderParams):
        J = signs * linr_jbar(t, prob.lam, p.chi, d)
        delta = neighborhood_expectation(d, prob.K0, lambda s0, s: (s0 - s @ J) ** 2, signs)
        return a / (1 + p.chi), a * (delta + p.Q) / (1 + p.chi) ** 2, {"Jbar": J, "delta": delta}

    def jres(p, state):
        return float(np.max(np.abs(state["Jbar"] - signs * linr_jbar(t, prob.lam, p.chi, d)), initial=0.0))

    p, state, res, it, hist, flags = run_outer(prob, stats, init, jres)
    trials = ActiveTrialSet(state["Jbar"][None, :], np.array([state["delta"]]), {"mode": "asymptotic"})
    return EosSolution(p, trials, res, it, hist, flags, prob)


# ---------------------------------------------------------------- finite mode

def draw_linr_statistics(prob: EosProblem, rng=None, raw_limit: int = RAW_LIMIT):
    """Per-trial sufficient statistics of the sampled d-dimensional problem.

    For trial t with samples (x_mu = s0 s_Psi, z_mu) only the pattern counts
    and the per-pattern noise sums enter the quadratic objective.  When
    T_MC * M * d <= raw_limit the statistics are reduced from the very samples
    ``draw_logr_samples`` produces for the same seed, so a LinR/LogR pair run
    with one seed shares its random numbers.  Above the limit they are drawn
    directly as Multinomial(M, p) counts and N(0, count) sums (same law).
    Returns (G, a, c): second moments ``mean x x^T``, ``mean x`` and ``mean z x``.
    """
    rng = np.random.default_rng(prob.seed if rng is None else rng)
    T, M = prob.T_MC, prob.M
    if T * M * prob.d <= raw_limit:
        Xs, Z = draw_logr_samples(prob, rng)
        G = np.einsum("tmj,tmk->tjk", Xs, Xs) / M
        return G, Xs.mean(axis=1), np.einsum("tm,tmj->tj", Z, Xs) / M
    X, p = pattern_table(prob.d, prob.K0, prob.signs)
    counts = rng.multinomial(M, p, size=T).astype(float)  # (T, P)
    zsum = rng.standard_normal(counts.shape) * np.sqrt(counts)
    G = np.einsum("tp,pj,pk->tjk", counts, X, X) / M
    a = counts @ X / M
    c = zsum @ X / M
    return G, a, c


@njit(cache=True)
def _cd_batch(G, b, pen, J, tol, max_sweeps):
    """Cyclic coordinate descent for ``0.5 J'GJ - b'J + pen |J|_1`` per trial."""
    T, d = b.shape
    kkt = np.zeros(T)
    for t in range(T):
        for sweep in range(max_sweeps):
            biggest = 0.0
            for j in range(d):
                r = b[t, j]
                for k in range(d):
                    if k != j:
                        r -= G[t, j, k] * J[t, k]
                gjj = G[t, j, j]
                if gjj <= 0.0:
                    new = 0.0
                elif r > pen:
                    new = (r - pen) / gjj
                elif r < -pen:
                    new = (r + pen) / gjj
                else:
                    new = 0.0
                ch = abs(new - J[t, j])
                if ch > biggest:
                    biggest = ch
                J[t, j] = new
            if biggest <= tol:
                break
        worst = 0.0
        for j in range(d):
            g = -b[t, j]
            for k in range(d):
                g += G[t, j, k] * J[t, k]
            if J[t, j] != 0.0:
                v = abs(g + pen * np.sign(J[t, j]))
            else:
                v = max(abs(g) - pen, 0.0)
            if v > worst:
                worst = v
        kkt[t] = worst
    return kkt


def solve_active_linr(G, a, c, Q, chi, lam, J0=None, tol=1e-12, max_sweeps=100_000):
    """Solve every trial's d-dimensional lasso; returns (J, delta, kkt)."""
    b = a - np.sqrt(Q) * c
    J = np.zeros_like(a) if J0 is None else np.array(J0, dtype=float)
    kkt = _cd_batch(G, b, lam * (1.0 + chi), J, tol, max_sweeps)
    delta = 1.0 - 2.0 * np.einsum("tj,tj->t", J, a) + np.einsum("tj,tjk,tk->t", J, G, J)
    return J, np.maximum(delta, 0.0), kkt


def solve_linr_finite(prob: EosProblem, init: OrderParams | None = None, rng=None) -> EosSolution:
    """Sample-average EOS: the J-bar line is replaced by T_MC sampled lasso problems."""
    _check(prob)
    G, a, c = draw_linr_statistics(prob, rng)
    alpha = prob.alpha
    cache = {"J": None}

    def stats(p: OrderParams):
        J, delta, kkt = solve_active_linr(G, a, c, p.Q, p.chi, prob.lam, cache["J"])
        cache["J"] = J
        dbar = float(delta.mean())
        E = alpha / (1 + p.chi)
        F = alpha * (dbar + p.Q) / (1 + p.chi) ** 2
        return E, F, {"Jbar": J.mean(axis=0), "J": J, "delta": delta, "kkt": kkt}

    def jres(p, state):
        return float(state["kkt"].max())

    p, state, res, it, hist, flags = run_outer(prob, stats, init, jres)
    trials = ActiveTrialSet(state["J"], state["delta"], {"mode": "finite", "kkt_max": float(state["kkt"].max())})
    return EosSolution(p, trials, res, it, hist, flags, prob)
