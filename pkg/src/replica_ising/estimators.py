"""l1-regularized neighborhood regression (linear and logistic) and selection metrics."""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from numba import njit

__all__ = [
    "NeighborhoodEstimate",
    "SelectionMetrics",
    "SeparabilityWarning",
    "linr_fit",
    "logr_fit",
    "linr_objective",
    "logr_objective",
    "extract_neighborhood",
    "score",
    "aggregate",
]

KKT_TOL = 1e-10
MAGNITUDE_GUARD = 30.0


class SeparabilityWarning(RuntimeWarning):
    pass


@dataclass
class NeighborhoodEstimate:
    center: int
    coeffs: np.ndarray  # length N-1, ordered as ``index``
    index: np.ndarray  # original spin indices of the coefficients
    objective: float
    kkt_residual: float
    loss: str
    lam: float
    iterations: int = 0
    converged: bool = True

    def full(self, N: int | None = None) -> np.ndarray:
        """Coefficients scattered into a length-N vector (zero at the center)."""
        N = len(self.coeffs) + 1 if N is None else N
        out = np.zeros(N)
        out[self.index] = self.coeffs
        return out

    def to_json(self) -> dict:
        return {
            "center": self.center,
            "loss": self.loss,
            "lambda": self.lam,
            "objective": self.objective,
            "kkt_residual": self.kkt_residual,
            "iterations": self.iterations,
            "converged": self.converged,
            "neighborhood": sorted(extract_neighborhood(self)),
            "coeffs": {int(i): float(c) for i, c in zip(self.index, self.coeffs) if c != 0.0},
        }


@dataclass
class SelectionMetrics:
    precision: float  # NaN when undefined
    recall: float
    rss: float
    tp: float
    fp: float
    fn: float
    precision_se: float = 0.0
    recall_se: float = 0.0
    rss_se: float = 0.0
    fpr: float = float("nan")
    n_trials: int = 1
    n_excluded: int = 0
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, float) and math.isnan(v):
                d[k] = None
        return d


def _design(spins: np.ndarray, center: int):
    s = np.asarray(spins, dtype=float)
    N = s.shape[1]
    if not 0 <= center < N:
        raise IndexError(f"center {center} outside 0..{N - 1}")
    index = np.delete(np.arange(N), center)
    return np.ascontiguousarray(s[:, index]), np.ascontiguousarray(s[:, center]), index


def _spins(dataset):
    return dataset.spins if hasattr(dataset, "spins") else np.asarray(dataset)


# ---------------------------------------------------------------- linear

def linr_objective(X, y, J, lam) -> float:
    r = y - X @ J
    return float(r @ r / (2 * len(y)) + lam * np.abs(J).sum())


@njit(cache=True)
def _cd_lasso(X, y, lam, J, colsq, tol, max_sweeps):
    M, p = X.shape
    r = y - X @ J
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        biggest = 0.0
        for j in range(p):
            if colsq[j] == 0.0:
                continue
            g = 0.0
            for mu in range(M):
                g += X[mu, j] * r[mu]
            rho = g / M + colsq[j] * J[j]
            if rho > lam:
                new = (rho - lam) / colsq[j]
            elif rho < -lam:
                new = (rho + lam) / colsq[j]
            else:
                new = 0.0
            diff = new - J[j]
            if diff != 0.0:
                for mu in range(M):
                    r[mu] -= X[mu, j] * diff
                J[j] = new
                if abs(diff) > biggest:
                    biggest = abs(diff)
        if biggest <= tol:
            break
    return sweeps


def _kkt(grad, J, lam) -> float:
    nz = J != 0
    v = np.where(nz, np.abs(grad + lam * np.sign(J)), np.maximum(np.abs(grad) - lam, 0.0))
    return float(v.max(initial=0.0))


def linr_fit(dataset, center: int, lam: float, tol: float = 1e-13, max_sweeps: int = 100_000,
             J0=None) -> NeighborhoodEstimate:
    """Lasso neighborhood regression ``(1/2M) sum (s_c - sum_j J_j s_j)^2 + lam |J|_1``
    by cyclic coordinate descent."""
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    X, y, index = _design(_spins(dataset), center)
    M = len(y)
    colsq = (X * X).sum(axis=0) / M  # all ones for +-1 spins
    J = np.zeros(X.shape[1]) if J0 is None else np.array(J0, dtype=float)
    sweeps = _cd_lasso(X, y, float(lam), J, colsq, tol, max_sweeps)
    grad = -X.T @ (y - X @ J) / M
    kkt = _kkt(grad, J, lam)
    return NeighborhoodEstimate(center, J, index, linr_objective(X, y, J, lam), kkt, "quadratic", lam,
                                int(sweeps), bool(sweeps < max_sweeps or kkt <= 1e-8))


# ---------------------------------------------------------------- logistic

def _logloss(x):
    return np.logaddexp(0.0, -2.0 * x)


def logr_objective(X, y, J, lam) -> float:
    return float(_logloss(y * (X @ J)).mean() + lam * np.abs(J).sum())


def _soft(v, t):
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


def logr_fit(dataset, center: int, lam: float, tol: float = KKT_TOL, max_iter: int = 20_000,
             guard: float = MAGNITUDE_GUARD, J0=None) -> NeighborhoodEstimate:
    """Logistic neighborhood regression ``(1/M) sum log(1+exp(-2 s_c h)) + lam |J|_1``.

    Accelerated proximal gradient with backtracking, interleaved with Newton
    polishing on the current support; stops when the subgradient optimality
    residual is below ``tol``.
    """
    if not lam > 0:
        raise ValueError("lambda must be > 0 for the logistic fit (lambda=0 diverges on separable data)")
    X, y, index = _design(_spins(dataset), center)
    M, p = X.shape
    Xy = X * y[:, None]  # margin x_mu = (Xy @ J)_mu

    def f(J):
        return float(_logloss(Xy @ J).mean())

    def grad(J):
        return Xy.T @ (-(1.0 - np.tanh(Xy @ J))) / M

    J = np.zeros(p) if J0 is None else np.array(J0, dtype=float)
    L = max(np.linalg.norm(Xy, 2) ** 2 / M, 1e-12)  # l'' <= 1 bound
    it = 0
    kkt = _kkt(grad(J), J, lam)
    while it < max_iter and kkt > tol:
        # accelerated proximal gradient until moderately accurate
        Yk, Jprev, tk = J.copy(), J.copy(), 1.0
        stage_goal = max(tol, 1e-6)
        inner = 0
        while it < max_iter:
            it += 1
            inner += 1
            gY, fY = grad(Yk), f(Yk)
            step = 1.0 / L
            while True:
                Jn = _soft(Yk - step * gY, step * lam)
                dlt = Jn - Yk
                if f(Jn) <= fY + gY @ dlt + (dlt @ dlt) / (2 * step) + 1e-15:
                    break
                step *= 0.5
            tn = 0.5 * (1 + np.sqrt(1 + 4 * tk * tk))
            obj_new = f(Jn) + lam * np.abs(Jn).sum()
            obj_old = f(J) + lam * np.abs(J).sum()
            if obj_new > obj_old:  # adaptive restart
                Yk, tk = J.copy(), 1.0
                continue
            Jprev, J = J, Jn
            Yk = J + ((tk - 1) / tn) * (J - Jprev)
            tk = tn
            if inner % 10 == 0:
                kkt = _kkt(grad(J), J, lam)
                if kkt <= stage_goal:
                    break
        J = _newton_polish(Xy, J, lam, M)
        kkt = _kkt(grad(J), J, lam)
    if np.abs(J).max(initial=0.0) > guard:
        warnings.warn(f"|J| = {np.abs(J).max():.3g} exceeds {guard}: data may be separable", SeparabilityWarning)
    return NeighborhoodEstimate(center, J, index, f(J) + lam * np.abs(J).sum(), kkt, "logistic", lam,
                                it, bool(kkt <= max(tol, 1e-8)))


def _newton_polish(Xy, J, lam, M, max_iter: int = 50):
    """Newton on the support of J with signs held fixed; keeps the point if no gain."""
    J = J.copy()
    for _ in range(max_iter):
        S = np.flatnonzero(J)
        if S.size == 0:
            return J
        sgn = np.sign(J[S])
        xs = Xy[:, S]
        marg = Xy @ J
        th = np.tanh(marg)
        g = xs.T @ (-(1.0 - th)) / M + lam * sgn
        if np.abs(g).max() <= 1e-15:
            return J
        H = (xs * (1.0 - th * th)[:, None]).T @ xs / M
        try:
            dS = -np.linalg.solve(H + 1e-14 * np.eye(len(S)), g)
        except np.linalg.LinAlgError:
            return J
        # do not cross zero: cap the step at the first sign change
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(J[S] * dS < 0, -J[S] / dS, np.inf)
        tmax = min(1.0, float(ratio.min()))
        obj0 = float(_logloss(marg).mean()) + lam * np.abs(J).sum()
        t = tmax
        while t > 1e-12:
            Jt = J.copy()
            Jt[S] += t * dS
            if t == tmax and tmax < 1.0:
                Jt[S[np.argmin(ratio)]] = 0.0
            obj = float(_logloss(Xy @ Jt).mean()) + lam * np.abs(Jt).sum()
            if obj <= obj0:
                break
            t *= 0.5
        else:
            return J
        moved = np.abs(Jt - J).max()
        J = Jt
        if moved <= 1e-15:
            return J
    return J


# ---------------------------------------------------------------- support & scoring

def extract_neighborhood(est: NeighborhoodEstimate) -> frozenset:
    """Indices with exactly nonzero coefficients."""
    return frozenset(int(i) for i in est.index[est.coeffs != 0.0])


def score(est: NeighborhoodEstimate, truth, center: int) -> SelectionMetrics:
    """TP/FP/FN against the true neighborhood and RSS over all N-1 couplings."""
    W = truth.coupling_matrix()
    true_row = W[center]
    true_set = frozenset(int(j) for j in np.flatnonzero(true_row))
    est_set = extract_neighborhood(est)
    tp = len(est_set & true_set)
    fp = len(est_set - true_set)
    fn = len(true_set - est_set)
    prec = tp / (tp + fp) if tp + fp > 0 else float("nan")
    rec = tp / (tp + fn) if tp + fn > 0 else float("nan")
    rss = float(((est.full(truth.N) - true_row) ** 2)[est.index].sum())
    return SelectionMetrics(prec, rec, rss, tp, fp, fn, n_excluded=int(tp + fp == 0))


def aggregate(rows: list[SelectionMetrics]) -> SelectionMetrics:
    """Trial average with standard errors; undefined precisions are dropped and counted."""
    def mse(vals):
        v = np.asarray([x for x in vals if not math.isnan(x)], dtype=float)
        if v.size == 0:
            return float("nan"), float("nan"), 0
        se = float(v.std(ddof=1) / np.sqrt(v.size)) if v.size > 1 else 0.0
        return float(v.mean()), se, v.size

    p, pse, npr = mse([r.precision for r in rows])
    rc, rse, _ = mse([r.recall for r in rows])
    rs, rsse, _ = mse([r.rss for r in rows])
    return SelectionMetrics(
        p, rc, rs,
        float(np.mean([r.tp for r in rows])), float(np.mean([r.fp for r in rows])),
        float(np.mean([r.fn for r in rows])),
        pse, rse, rsse, n_trials=len(rows), n_excluded=len(rows) - npr,
    )
