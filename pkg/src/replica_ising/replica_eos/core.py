"""Shared machinery for the equations of state: parameter containers, the
neighborhood enumeration, the Gamma substitution and the damped outer loop."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.special import erfc, erfcx

from ..spectra import SpectralDensity

log = logging.getLogger(__name__)

FIELDS = ("chi", "Q", "E", "F", "R", "eta", "K", "H", "Gamma")
CLAMP = 1e-12


class EosDivergence(RuntimeError):
    """Outer fixed-point loop did not reach tolerance."""

    def __init__(self, message: str, history: list[float]):
        super().__init__(message)
        self.history = history


class GammaNonConvergence(RuntimeError):
    def __init__(self, message: str, last: tuple[float, float]):
        super().__init__(message)
        self.last = last


def soft(z, tau):
    z = np.asarray(z, dtype=float)
    out = np.sign(z) * np.maximum(np.abs(z) - tau, 0.0)
    return out if out.ndim else float(out)


@dataclass
class OrderParams:
    chi: float = 1.0
    Q: float = 1.0
    E: float = 1.0
    F: float = 1.0
    R: float = 1.0
    eta: float = 1.0
    K: float = 1.0
    H: float = 1.0
    Gamma: float = 0.1
    Jbar: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def Lambda(self) -> float:
        return -1.0 / self.Gamma

    def copy(self) -> "OrderParams":
        return replace(self, Jbar=np.array(self.Jbar, dtype=float))

    def vector(self) -> np.ndarray:
        return np.array([getattr(self, f) for f in FIELDS])

    def to_dict(self) -> dict:
        d = asdict(self)
        d["Jbar"] = np.asarray(self.Jbar, dtype=float).tolist()
        return d


@dataclass
class EosProblem:
    """Inputs of one EOS solve; ``alpha = M / N``."""

    loss: str
    M: int
    N: int
    lam: float
    d: int
    K0: float
    density: object  # SpectralDensity or EmpiricalSpectrum
    T_MC: int = 200
    damp: float = 0.5
    tol: float = 1e-10
    max_iter: int = 10_000
    seed: int = 0
    signs: np.ndarray | None = None  # signs of the d true couplings (gauge)

    def __post_init__(self):
        if self.loss not in ("quadratic", "logistic"):
            raise ValueError(f"loss must be 'quadratic' or 'logistic', got {self.loss!r}")
        if not self.lam > 0:
            raise ValueError(f"lambda must be > 0, got {self.lam}")
        if self.M < 1 or self.N < 1 or self.T_MC < 1:
            raise ValueError("M, N, T_MC must be >= 1")
        if not 0.0 <= self.damp < 1.0:
            raise ValueError(f"damp must lie in [0, 1), got {self.damp}")
        if self.signs is None:
            self.signs = np.ones(self.d)
        self.signs = np.sign(np.asarray(self.signs, dtype=float))
        if self.signs.shape != (self.d,) or np.any(self.signs == 0):
            raise ValueError("signs must be a length-d vector of +-1")

    @property
    def alpha(self) -> float:
        return self.M / self.N

    @property
    def t(self) -> float:
        return float(np.tanh(abs(self.K0)))

    @property
    def true_couplings(self) -> np.ndarray:
        return abs(self.K0) * self.signs

    def threshold_arg(self, H: float) -> float:
        """``lambda M / sqrt(2 H N)``, the argument of the inactive-set erfc."""
        return self.lam * self.M / np.sqrt(2.0 * H * self.N)


@dataclass
class ActiveTrialSet:
    J: np.ndarray  # (T, d)
    delta: np.ndarray  # (T,) residual second moment for quadratic loss, F-part for logistic
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.J = np.atleast_2d(np.asarray(self.J, dtype=float))
        self.delta = np.atleast_1d(np.asarray(self.delta, dtype=float))
        if np.any(self.delta < -1e-12):
            raise ValueError("per-trial residuals must be non-negative")

    @property
    def T(self) -> int:
        return self.J.shape[0]

    @property
    def mean_J(self) -> np.ndarray:
        return self.J.mean(axis=0)


@dataclass
class EosSolution:
    params: OrderParams
    trials: ActiveTrialSet
    residuals: dict
    iterations: int
    history: list
    flags: list
    problem: EosProblem
    converged: bool = True

    def to_dict(self) -> dict:
        return {
            "params": self.params.to_dict(),
            "residuals": self.residuals,
            "iterations": self.iterations,
            "converged": self.converged,
            "flags": self.flags,
            "trial_mean_J": self.trials.mean_J.tolist(),
        }


# ---------------------------------------------------------------- enumeration

def neighborhood_states(d: int, K0: float, signs=None) -> tuple[np.ndarray, np.ndarray]:
    """All (s0, s_Psi) with weights ``exp(s0 sum_j K_j s_j)``, normalized."""
    if d > 20:
        raise ValueError(f"d={d}: enumeration over 2^(d+1) states limited to d <= 20")
    n = d + 1
    bits = (np.arange(2**n)[:, None] >> np.arange(n)[None, :]) & 1
    s = (2 * bits - 1).astype(float)
    Kv = abs(K0) * (np.ones(d) if signs is None else np.sign(np.asarray(signs, dtype=float)))
    logw = s[:, 0] * (s[:, 1:] @ Kv)
    w = np.exp(logw - logw.max())
    return s, w / w.sum()


def neighborhood_expectation(d: int, K0: float, f: Callable, signs=None) -> float:
    """Exact E[f(s0, s_Psi)] under ``P ~ exp(K0 s0 sum_j s_j)``.

    ``f`` receives two arrays: s0 of shape (S,) and s_Psi of shape (S, d).
    """
    s, p = neighborhood_states(d, K0, signs)
    vals = np.asarray(f(s[:, 0], s[:, 1:]), dtype=float)
    return float(np.dot(p, np.broadcast_to(vals, p.shape)))


def pattern_table(d: int, K0: float, signs=None) -> tuple[np.ndarray, np.ndarray]:
    """Distribution of the products ``x_j = s0 s_j`` (2^d patterns).

    Every loss in this model depends on the samples only through x and the
    sign-symmetrized noise ``s0 z``, so sampling x directly is equivalent to
    sampling the full (d+1)-spin neighborhood.
    """
    s, p = neighborhood_states(d, K0, signs)
    x = s[:, :1] * s[:, 1:]
    bits = (x > 0).astype(np.int64) @ (1 << np.arange(d, dtype=np.int64))
    probs = np.bincount(bits, weights=p, minlength=2**d)
    pb = (np.arange(2**d)[:, None] >> np.arange(d)[None, :]) & 1
    return (2 * pb - 1).astype(float), probs


# ---------------------------------------------------------------- inactive set

def r_update(prob: EosProblem, H: float, K: float) -> float:
    """``(1/K^2)[(H + l^2M^2/N) erfc(a) - 2 l M sqrt(H/N) e^{-a^2}/sqrt(2 pi)]``.

    Written as ``2 H phi(tau) [(1+tau^2) m(tau) - tau] / K^2`` with
    ``tau = sqrt(2) a`` and the Mills ratio ``m`` from ``erfcx``, which keeps
    relative accuracy far into the tail where the bracket underflows.
    """
    tau = np.sqrt(2.0) * prob.threshold_arg(H)
    phi = np.exp(-0.5 * tau * tau) / np.sqrt(2.0 * np.pi)
    mills = erfcx(tau / np.sqrt(2.0)) * np.sqrt(np.pi / 2.0)
    return max(2.0 * H * phi * ((1.0 + tau * tau) * mills - tau), 0.0) / K**2


def eta_update(prob: EosProblem, H: float, K: float) -> float:
    return float(erfc(prob.threshold_arg(H))) / K


# ---------------------------------------------------------------- Gamma

def _I(density, G: float, power: int) -> float:
    g, w = density.nodes
    return float(np.dot(w, (1.0 + G * g) ** (-power)))


@dataclass(frozen=True)
class SpectralMoments:
    """Spectral integrals at one Gamma, arranged to avoid cancellation.

    With ``u = 1/(1+G g)`` and ``v = g u``: ``I1 = int u = 1 - G J1``,
    ``I2 = int u^2``, ``J1 = int v``, ``J2 = int g u^2`` and ``Vv = int (v - J1)^2``,
    so that ``int (u - I1)^2 = G^2 Vv`` without subtracting numbers close to 1.
    """

    G: float
    I1: float
    I2: float
    J1: float
    J2: float
    Vv: float

    @classmethod
    def at(cls, density, G: float) -> "SpectralMoments":
        g, w = density.nodes
        u = 1.0 / (1.0 + G * g)
        v = g * u
        J1 = float(np.dot(w, v))
        return cls(G, 1.0 - G * J1, float(np.dot(w, u * u)), J1, float(np.dot(w, g * u * u)),
                   float(np.dot(w, (v - J1) ** 2)))


def gamma_sup(density) -> float:
    """``lim_{G->inf} G int rho/(1+G gamma) = <1/gamma>``: no root for E eta above it."""
    g, w = density.nodes
    return float(np.dot(w, 1.0 / g))


def gamma_fixed_point(E: float, eta: float, density, damp: float = 0.0, tol: float = 1e-14,
                      max_iter: int = 100_000, start: float | None = None, method: str = "newton") -> float:
    """Solve ``Gamma * int rho/(1+Gamma gamma) = E eta`` for Gamma > 0.

    ``method="iterate"`` runs the damped map ``Gamma <- E eta / int rho/(1+Gamma gamma)``.
    ``method="newton"`` applies Newton to ``g(G) = G I(G) - E eta``; g is increasing
    and concave, so Newton started at or left of the root climbs monotonically.
    """
    target = E * eta
    if not target > 0:
        raise ValueError(f"E*eta must be positive, got {target}")
    sup = gamma_sup(density)
    if target >= sup:
        raise GammaNonConvergence(f"E*eta={target:.6g} >= <1/gamma>={sup:.6g}: no positive root", (np.inf, np.inf))
    if method == "iterate":
        G = target if start is None else start
        prev = G
        for _ in range(max_iter):
            new = (1 - damp) * target / _I(density, G, 1) + damp * G
            if abs(new - G) <= tol * abs(new):
                return new
            prev, G = G, new
        raise GammaNonConvergence("damped Gamma iteration did not converge", (prev, G))
    if method != "newton":
        raise ValueError(method)
    G = 0.0
    if start is not None and start > 0 and start * _I(density, start, 1) <= target:
        G = start
    step = 0.0
    for _ in range(500):
        step = (target - G * _I(density, G, 1)) / _I(density, G, 2)
        G += step
        if abs(step) <= tol * G:
            return G
    raise GammaNonConvergence("Newton on Gamma did not converge", (G - step, G))


# ---------------------------------------------------------------- outer loop

def _mix(new: float, old: float, damp: float) -> float:
    return (1.0 - damp) * new + damp * old


def spectral_lines(E: float, F: float, R: float, eta: float, sm: SpectralMoments) -> dict:
    """K, chi, Q, H lines after eliminating Lambda through the Gamma line.

    Substituting ``E eta = G I1`` into ``K = -E/G + 1/eta``, ``chi = -eta/G + 1/E``
    and the Q, H lines gives algebraically identical expressions free of the
    ``1/eta - E/G`` cancellation that destroys precision once the false
    positive rate (and with it eta and G) is small.
    """
    G = sm.G
    return {
        "K": E * sm.J1 / sm.I1,
        "chi": G * sm.J1 / E,
        "Q": (F / E**2) * G * G * sm.Vv / sm.I2 + R * sm.J2 / sm.I2,
        "H": F * sm.J2 / sm.I2 + R * (E / sm.I1) ** 2 * sm.Vv / sm.I2,
    }


def eos_rhs(p: OrderParams, prob: EosProblem, E_star: float, F_star: float) -> dict:
    """Right-hand sides of every line evaluated at the current state ``p``."""
    sm = SpectralMoments.at(prob.density, p.Gamma)
    out = {
        "E": E_star,
        "F": F_star,
        "R": r_update(prob, p.H, p.K),
        "Gamma": p.E * p.eta / sm.I1,
    }
    out.update(spectral_lines(p.E, p.F, p.R, p.eta, sm))
    out["eta"] = eta_update(prob, p.H, p.K)
    return out


def scaled_residuals(p: OrderParams, rhs: dict) -> dict:
    return {k: abs(getattr(p, k) - v) / max(1.0, abs(getattr(p, k))) for k, v in rhs.items()}


def damped_step(p: OrderParams, prob: EosProblem, E_star: float, F_star: float, flags: list) -> OrderParams:
    """One damped Gauss-Seidel sweep in the order E, F, R, Gamma, K, chi, Q, H, eta.

    Gamma is solved to convergence at the freshly updated (E, eta), as the
    inner Gamma loop does; the remaining lines are damped.
    """
    dmp = prob.damp
    q = p.copy()
    q.E = _mix(E_star, q.E, dmp)
    q.F = _mix(F_star, q.F, dmp)
    q.R = _mix(r_update(prob, q.H, q.K), q.R, dmp)
    target, sup = q.E * q.eta, gamma_sup(prob.density)
    if target >= sup:
        flags.append(f"capped E*eta={target:.3g} below <1/gamma>")
        target = (1.0 - 1e-3) * sup
    q.Gamma = gamma_fixed_point(target, 1.0, prob.density, start=q.Gamma)
    lines = spectral_lines(q.E, q.F, q.R, q.eta, SpectralMoments.at(prob.density, q.Gamma))
    for name in ("K", "chi", "Q", "H"):
        v = _mix(lines[name], getattr(q, name), dmp)
        if not v > 0:
            flags.append(f"clamped {name}={v:.3g}")
            v = CLAMP
        setattr(q, name, v)
    q.eta = _mix(eta_update(prob, q.H, q.K), q.eta, dmp)
    if not q.eta > 0:
        flags.append(f"clamped eta={q.eta:.3g}")
        q.eta = CLAMP
    return q


def run_outer(prob: EosProblem, loss_stats: Callable, init: OrderParams | None = None,
              jbar_residual: Callable | None = None):
    """Generic damped outer loop.

    ``loss_stats(p)`` returns ``(E*, F*, state)`` at the current (chi, Q); ``state``
    carries whatever the loss needs to report (Jbar, per-trial estimates).
    Convergence is declared when every scaled EOS residual is <= tol.
    """
    p = init.copy() if init is not None else OrderParams()
    history, flags = [], []
    for it in range(prob.max_iter + 1):
        E_star, F_star, state = loss_stats(p)
        p.Jbar = np.asarray(state["Jbar"], dtype=float)
        rhs = eos_rhs(p, prob, E_star, F_star)
        res = scaled_residuals(p, rhs)
        if jbar_residual is not None:
            res["Jbar"] = jbar_residual(p, state)
        worst = max(res.values())
        history.append(worst)
        if not np.isfinite(worst):
            raise EosDivergence(f"non-finite residual at iteration {it}", history)
        if worst <= prob.tol:
            return p, state, res, it, history, flags
        if it == prob.max_iter:
            break
        p = damped_step(p, prob, E_star, F_star, flags)
    raise EosDivergence(
        f"EOS not converged after {prob.max_iter} iterations (residual {history[-1]:.3g})", history
    )
