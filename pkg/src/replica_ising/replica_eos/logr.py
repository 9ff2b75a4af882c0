"""Equations of state for the logistic loss ``l(y) = log(1 + exp(-2y))``.

The scalar minimizer ``y_hat`` of ``(y - u)^2/(2 chi) + l(y)`` solves
``y - u = chi (1 - tanh y)``; the left side minus the right is strictly
increasing in y and the root lies in ``[u, u + 2 chi]``, so Newton with a
bisection fallback on that bracket always converges.
"""

from __future__ import annotations

import numpy as np
from numba import njit
from scipy.optimize import brentq

from .core import (
    ActiveTrialSet,
    EosProblem,
    EosSolution,
    OrderParams,
    pattern_table,
    run_outer,
    soft,
)

__all__ = ["solve_logr", "yhat", "logr_active_mean", "moreau_loss", "draw_logr_samples", "GH_ORDER"]

GH_ORDER = 61
NEWTON_TOL = 1e-12


class YhatNonConvergence(RuntimeError):
    pass


def yhat(u, chi: float, tol: float = NEWTON_TOL, max_iter: int = 100):
    """Vectorized safeguarded Newton solve of ``y - u = chi (1 - tanh y)``."""
    u = np.asarray(u, dtype=float)
    lo, hi = u.copy(), u + 2.0 * chi
    y = u.copy()
    for _ in range(max_iter):
        th = np.tanh(y)
        f = y - u - chi * (1.0 - th)
        lo = np.where(f < 0, y, lo)
        hi = np.where(f > 0, y, hi)
        step = f / (1.0 + chi * (1.0 - th * th))
        y_new = y - step
        bad = (y_new <= lo) | (y_new >= hi)
        y_new = np.where(bad, 0.5 * (lo + hi), y_new)
        if np.all(np.abs(y_new - y) <= tol * (1.0 + np.abs(y))):
            return y_new
        y = y_new
    f = y - u - chi * (1.0 - np.tanh(y))
    i = int(np.argmax(np.abs(f)))
    raise YhatNonConvergence(f"y_hat Newton failed at u={u.ravel()[i]:.6g}, chi={chi:.3g}")


def moreau_loss(u, chi: float):
    """``min_y (y-u)^2/(2chi) + log(1+e^{-2y})`` and its minimizer."""
    y = yhat(u, chi)
    return (y - u) ** 2 / (2 * chi) + np.logaddexp(0.0, -2.0 * y), y


def _gh_nodes(order: int = GH_ORDER):
    x, w = np.polynomial.hermite_e.hermegauss(order)
    return x, w / w.sum()


# ---------------------------------------------------------------- asymptotic

def logr_active_mean(prob_or_d, K0=None, chi=None, Q=None, lam=None, signs=None, order: int = GH_ORDER):
    """Symmetric mean coupling J-bar for the logistic loss at given (chi, Q).

    Solves the stationarity of the convex scalar problem
    ``E[env(sqrt(Q) z + c sum_j x_j)] + lam d |c|`` directly:
    ``E[(1 - tanh y_hat) m] = lam d`` with ``m = sum_j x_j``.
    Returns (c, dict of expectations at the solution).
    """
    d = prob_or_d
    X, p = pattern_table(d, K0, signs)
    sg = np.ones(d) if signs is None else np.sign(signs)
    m = (X * sg).sum(axis=1)  # s0 * sum_j sign_j s_j; gauge makes it sign-free
    z, wz = _gh_nodes(order)
    W = p[:, None] * wz[None, :]
    sq = np.sqrt(max(Q, 0.0))

    def expect(c):
        u = sq * z[None, :] + c * m[:, None]
        y = yhat(u, chi)
        return y, u

    def phi(c):
        y, _ = expect(c)
        return float(np.sum(W * (1.0 - np.tanh(y)) * m[:, None])) - lam * d

    if phi(0.0) <= 0:
        c = 0.0
    else:
        hi = 1.0
        while phi(hi) > 0:
            hi *= 2.0
            if hi > 1e4:
                raise YhatNonConvergence("no bracket for the active coupling")
        c = brentq(phi, 0.0, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    y, u = expect(c)
    th = np.tanh(y)
    sech2 = 1.0 - th * th
    stats = {
        "m": m,
        "W": W,
        "E_stein": float(np.sum(W * sech2 / (1.0 + chi * sech2))),
        "F2": float(np.sum(W * (1.0 - th) ** 2)),
        "E_ym": float(np.sum(W * y * m[:, None])),
        "E_z_tanh": float(np.sum(W * z[None, :] * th)),
    }
    return c, stats


def _jbar_line(c, st, d, t, lam, chi):
    """Residual of ``J = soft(E[y_hat m], lam d chi) / (d (1 + (d-1) t^2))``."""
    return abs(c - soft(st["E_ym"], lam * d * chi) / (d * (1.0 + (d - 1) * t * t)))


# ---------------------------------------------------------------- finite mode

def draw_logr_samples(prob: EosProblem, rng=None):
    """Per-trial samples (x = s0 s_Psi, z' = s0 z): arrays (T, M, d) and (T, M)."""
    rng = np.random.default_rng(prob.seed if rng is None else rng)
    X, p = pattern_table(prob.d, prob.K0, prob.signs)
    idx = rng.choice(len(p), size=(prob.T_MC, prob.M), p=p)
    Z = rng.standard_normal((prob.T_MC, prob.M))
    return X[idx], Z


@njit(cache=True)
def _yhat1(u, chi, y0):
    lo = u
    hi = u + 2.0 * chi
    y = y0 if (y0 > lo and y0 < hi) else u
    for _ in range(200):
        th = np.tanh(y)
        f = y - u - chi * (1.0 - th)
        if f < 0.0:
            lo = y
        elif f > 0.0:
            hi = y
        else:
            return y
        y_new = y - f / (1.0 + chi * (1.0 - th * th))
        if y_new <= lo or y_new >= hi:
            y_new = 0.5 * (lo + hi)
        if abs(y_new - y) <= 1e-14 * (1.0 + abs(y)):
            return y_new
        y = y_new
    return y


@njit(cache=True)
def _trial_eval(Xt, zt, sq, chi, J, Y, grad, hess):
    """Fill y_hat (in place), gradient and Hessian; return mean envelope."""
    M, d = Xt.shape
    for j in range(d):
        grad[j] = 0.0
        for k in range(d):
            hess[j, k] = 0.0
    obj = 0.0
    for mu in range(M):
        u = sq * zt[mu]
        for j in range(d):
            u += J[j] * Xt[mu, j]
        y = _yhat1(u, chi, Y[mu])
        Y[mu] = y
        th = np.tanh(y)
        s2 = 1.0 - th * th
        w = s2 / (1.0 + chi * s2)
        g1 = -(1.0 - th)
        if y > 0:
            ll = np.log1p(np.exp(-2.0 * y))
        else:
            ll = -2.0 * y + np.log1p(np.exp(2.0 * y))
        obj += (y - u) * (y - u) / (2.0 * chi) + ll
        for j in range(d):
            grad[j] += g1 * Xt[mu, j]
            for k in range(d):
                hess[j, k] += w * Xt[mu, j] * Xt[mu, k]
    for j in range(d):
        grad[j] /= M
        for k in range(d):
            hess[j, k] /= M
    return obj / M


@njit(cache=True)
def _l1(v):
    s = 0.0
    for x in v:
        s += abs(x)
    return s


@njit(cache=True)
def _prox_newton_batch(X, Z, sq, chi, lam, J, Y, tol, max_iter):
    """Proximal Newton per trial on ``mean env(u) + lam |J|_1`` (d small)."""
    T, M, d = X.shape
    kkt = np.zeros(T)
    grad = np.zeros(d)
    hess = np.zeros((d, d))
    g2 = np.zeros(d)
    h2 = np.zeros((d, d))
    Jn = np.zeros(d)
    Yn = np.zeros(M)
    for t in range(T):
        Jt = J[t]
        Yt = Y[t]
        obj = _trial_eval(X[t], Z[t], sq, chi, Jt, Yt, grad, hess) + lam * _l1(Jt)
        for it in range(max_iter):
            # stationarity measure: distance to the subdifferential
            worst = 0.0
            for j in range(d):
                if Jt[j] != 0.0:
                    v = abs(grad[j] + lam * np.sign(Jt[j]))
                else:
                    v = max(abs(grad[j]) - lam, 0.0)
                worst = max(worst, v)
            kkt[t] = worst
            if worst <= tol:
                break
            # quadratic model solved by coordinate descent on the new point
            for j in range(d):
                Jn[j] = Jt[j]
            for sweep in range(1000):
                big = 0.0
                for j in range(d):
                    hjj = hess[j, j]
                    if hjj <= 0.0:
                        continue
                    # minimize g.(Jn-Jt) + 0.5 (Jn-Jt)'H(Jn-Jt) + lam|Jn|_1 over coordinate j
                    r = hjj * Jn[j] - grad[j]
                    for k in range(d):
                        r -= hess[j, k] * (Jn[k] - Jt[k])
                    if r > lam:
                        new = (r - lam) / hjj
                    elif r < -lam:
                        new = (r + lam) / hjj
                    else:
                        new = 0.0
                    big = max(big, abs(new - Jn[j]))
                    Jn[j] = new
                if big <= 1e-15:
                    break
            # backtracking on the true objective
            dec = 0.0
            for j in range(d):
                dec += grad[j] * (Jn[j] - Jt[j])
            dec += lam * (_l1(Jn) - _l1(Jt))
            step = 1.0
            accepted = False
            Jtry = np.empty(d)
            for ls in range(60):
                for j in range(d):
                    Jtry[j] = Jt[j] + step * (Jn[j] - Jt[j])
                for mu in range(M):
                    Yn[mu] = Yt[mu]
                new_obj = _trial_eval(X[t], Z[t], sq, chi, Jtry, Yn, g2, h2) + lam * _l1(Jtry)
                if new_obj <= obj + 1e-4 * step * dec or abs(new_obj - obj) <= 1e-15 * max(1.0, abs(obj)):
                    accepted = True
                    break
                step *= 0.5
            if not accepted:
                break
            for j in range(d):
                Jt[j] = Jtry[j]
                grad[j] = g2[j]
                for k in range(d):
                    hess[j, k] = h2[j, k]
            for mu in range(M):
                Yt[mu] = Yn[mu]
            obj = new_obj
        # final stationarity
        worst = 0.0
        for j in range(d):
            if Jt[j] != 0.0:
                v = abs(grad[j] + lam * np.sign(Jt[j]))
            else:
                v = max(abs(grad[j]) - lam, 0.0)
            worst = max(worst, v)
        kkt[t] = worst
    return kkt


@njit(cache=True)
def _finite_stats(X, Z, sq, chi, J, Y):
    """Per-trial means of ``l''/(1 + chi l'')`` and ``(1 - tanh y)^2``."""
    T, M, d = X.shape
    e = np.zeros(T)
    f = np.zeros(T)
    for t in range(T):
        for mu in range(M):
            th = np.tanh(Y[t, mu])
            s2 = 1.0 - th * th
            e[t] += s2 / (1.0 + chi * s2)
            f[t] += (1.0 - th) * (1.0 - th)
        e[t] /= M
        f[t] /= M
    return e, f


def solve_active_logr(X, Z, Q, chi, lam, J=None, Y=None, tol=1e-12, max_iter=200):
    T, M, d = X.shape
    J = np.zeros((T, d)) if J is None else J
    Y = np.zeros((T, M)) if Y is None else Y
    kkt = _prox_newton_batch(X, Z, float(np.sqrt(max(Q, 0.0))), float(chi), float(lam), J, Y, tol, max_iter)
    return J, Y, kkt


# ---------------------------------------------------------------- driver

def solve_logr(prob: EosProblem, finite_size: bool = True, init: OrderParams | None = None, rng=None) -> EosSolution:
    """Logistic-loss EOS in expectation form (``finite_size=False``) or sampled form."""
    if prob.loss != "logistic":
        raise ValueError(f"logistic solver called with loss={prob.loss!r}")
    alpha, d, t = prob.alpha, prob.d, prob.t
    signs = prob.signs

    if not finite_size:
        def stats(p: OrderParams):
            c, st = logr_active_mean(d, prob.K0, p.chi, p.Q, prob.lam, signs)
            st["Jbar"] = c * signs
            st["c"] = c
            return alpha * st["E_stein"], alpha * st["F2"], st

        def jres(p, st):
            return float(_jbar_line(st["c"], st, d, t, prob.lam, p.chi))

        p, st, res, it, hist, flags = run_outer(prob, stats, init, jres)
        trials = ActiveTrialSet(st["Jbar"][None, :], np.array([st["F2"]]), {"mode": "asymptotic"})
        return EosSolution(p, trials, res, it, hist, flags, prob)

    Xs, Z = draw_logr_samples(prob, rng)
    Xs = np.ascontiguousarray(Xs)
    cache = {"J": None, "Y": None}

    def stats(p: OrderParams):
        J, Y, kkt = solve_active_logr(Xs, Z, p.Q, p.chi, prob.lam, cache["J"], cache["Y"])
        cache["J"], cache["Y"] = J, Y
        e, f = _finite_stats(Xs, Z, np.sqrt(p.Q), p.chi, J, Y)
        return alpha * float(e.mean()), alpha * float(f.mean()), {
            "Jbar": J.mean(axis=0), "J": J.copy(), "delta": f, "kkt": kkt}

    def jres(p, st):
        return float(st["kkt"].max())

    p, st, res, it, hist, flags = run_outer(prob, stats, init, jres)
    trials = ActiveTrialSet(st["J"], st["delta"], {"mode": "finite", "kkt_max": float(st["kkt"].max())})
    return EosSolution(p, trials, res, it, hist, flags, prob)
