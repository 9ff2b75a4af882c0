"""Numerical checks of the sparse-solution and Haar-eigenvector assumptions."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from numba import njit
from scipy.stats import kstat

from .ising_sim import gen_rr_graph
from .spectra import bethe_inverse_covariance

__all__ = ["AnsatzReport", "CumulantReport", "ansatz1_check", "haar_cumulant_check", "jacobi_eigh",
           "haar_expectation"]


@dataclass
class AnsatzReport:
    d: int
    K0: float
    lam: float
    chi: float
    J: float
    generations: np.ndarray  # a = 1..a_max
    margins: np.ndarray  # lam - |t^a - t^(a-1) D J| / (1+chi)

    @property
    def holds(self) -> bool:
        # generation 1 is the equality line; the check concerns a >= 2
        return bool(np.all(self.margins[1:] > 0))

    def rows(self):
        for a, m in zip(self.generations, self.margins):
            yield {"generation": int(a), "margin": float(m), "holds": bool(m >= -1e-15 if a == 1 else m > 0)}


def ansatz1_check(d: int, K0: float, lam: float, chi: float, a_max: int = 10) -> AnsatzReport:
    """Subgradient margins of the generation-a couplings when only the first
    generation is active.

    J solves the first-generation stationarity
    ``(t - (1+(d-1)t^2) J)/(1+chi) = lam`` (J = 0 when lam(1+chi) >= t); the
    generation-a condition is ``|t^a - t^(a-1)(1+(d-1)t^2) J|/(1+chi) <= lam``.
    """
    t = np.tanh(K0)
    D = 1.0 + (d - 1) * t * t
    J = max(t - lam * (1.0 + chi), 0.0) / D
    a = np.arange(1, a_max + 1)
    lhs = np.abs(t**a - t ** (a - 1) * D * J) / (1.0 + chi)
    margins = lam - lhs
    if J == 0.0:
        margins[0] = max(margins[0], 0.0)
    return AnsatzReport(d, K0, lam, chi, J, a, margins)


# ---------------------------------------------------------------- Haar check

@njit(cache=True)
def _jacobi(A, tol, max_sweeps):
    n = A.shape[0]
    V = np.eye(n)
    for sweep in range(max_sweeps):
        off = 0.0
        for i in range(n):
            for j in range(i + 1, n):
                off += A[i, j] * A[i, j]
        if np.sqrt(off) <= tol:
            return V, sweep
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if abs(apq) < 1e-300:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0)) if theta != 0 else 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                for k in range(n):
                    akp = A[k, p]
                    akq = A[k, q]
                    A[k, p] = c * akp - s * akq
                    A[k, q] = s * akp + c * akq
                for k in range(n):
                    apk = A[p, k]
                    aqk = A[q, k]
                    A[p, k] = c * apk - s * aqk
                    A[q, k] = s * apk + c * aqk
                for k in range(n):
                    vkp = V[k, p]
                    vkq = V[k, q]
                    V[k, p] = c * vkp - s * vkq
                    V[k, q] = s * vkp + c * vkq
    return V, -1


def jacobi_eigh(A, tol: float = 1e-10, max_sweeps: int = 100):
    """Cyclic Jacobi eigendecomposition of a symmetric matrix; (eigenvalues, vectors)."""
    A = np.array(A, dtype=float)
    if not np.allclose(A, A.T):
        raise ValueError("matrix must be symmetric")
    V, sweeps = _jacobi(A, tol, max_sweeps)
    if sweeps < 0:
        raise np.linalg.LinAlgError("Jacobi sweeps exhausted")
    w = np.diag(A).copy()
    order = np.argsort(w)
    return w[order], V[:, order]


@dataclass
class CumulantReport:
    k: int
    which: str  # "O^k" or "O^-k"
    mean: float
    variance: float
    third_cumulant: float
    mean_se: float
    variance_se: float
    third_se: float
    replicates: int
    haar_mean: float
    haar_variance: float

    def to_dict(self) -> dict:
        return asdict(self)


def haar_expectation(k: int) -> tuple[float, float]:
    """Large-N mean and variance of Tr(O^k) for Haar orthogonal O."""
    return (1.0 if k % 2 == 0 else 0.0), float(k)


def _cumulants(x):
    return kstat(x, 1), kstat(x, 2), kstat(x, 3)


def _jackknife_se(x, fn, min_n: int = 2):
    n = len(x)
    if n - 1 < min_n:
        return float("nan")
    vals = np.array([fn(np.delete(x, i)) for i in range(n)])
    return float(np.sqrt((n - 1) / n * ((vals - vals.mean()) ** 2).sum()))


def _trace_powers(O, k_max):
    out = np.empty(k_max)
    P = np.eye(O.shape[0])
    for k in range(k_max):
        P = P @ O
        out[k] = np.trace(P)
    return out


def haar_cumulant_check(N: int, d: int, K0: float, replicates: int, k_max: int = 8, rng=None,
                        solver: str = "eigh", random_signs: bool = True, return_raw: bool = False):
    """Cumulants 1-3 of Tr(O^k), Tr(O^-k) for the eigenvector matrix O of the
    covariance of fresh RR-graph models (Bethe inverse covariance, inverted).

    ``solver="jacobi"`` uses the cyclic Jacobi routine instead of LAPACK.
    """
    if replicates < 2:
        raise ValueError("need at least 2 replicates")
    rng = np.random.default_rng(rng)
    tr_pos = np.empty((replicates, k_max))
    tr_neg = np.empty((replicates, k_max))
    worst_orth = 0.0
    for r in range(replicates):
        model = gen_rr_graph(N, d, K0, "random_sign", rng)
        C = np.linalg.inv(bethe_inverse_covariance(model))
        C = 0.5 * (C + C.T)
        if solver == "eigh":
            _, O = np.linalg.eigh(C)
        elif solver == "jacobi":
            _, O = jacobi_eigh(C)
        else:
            raise ValueError(solver)
        if random_signs:
            O = O * rng.choice([-1.0, 1.0], size=N)[None, :]
        worst_orth = max(worst_orth, float(np.abs(O.T @ O - np.eye(N)).max()))
        tr_pos[r] = _trace_powers(O, k_max)
        tr_neg[r] = _trace_powers(O.T, k_max)  # O^-1 = O^T
    reports = []
    for which, tr in (("O^k", tr_pos), ("O^-k", tr_neg)):
        for k in range(1, k_max + 1):
            x = tr[:, k - 1]
            k1, k2, k3 = _cumulants(x)
            hm, hv = haar_expectation(k)
            reports.append(CumulantReport(
                k, which, float(k1), float(k2), float(k3),
                float(np.sqrt(k2 / replicates)),
                _jackknife_se(x, lambda v: kstat(v, 2)),
                _jackknife_se(x, lambda v: kstat(v, 3), min_n=3),
                replicates, hm, hv,
            ))
    meta = {"orthogonality_residual": worst_orth, "covariance": "inverse of Bethe inverse covariance",
            "solver": solver, "random_signs": random_signs}
    if return_raw:
        return reports, meta, (tr_pos, tr_neg)
    return reports, meta
