"""Eigenvalue densities of the Ising covariance matrix on regular tree-like graphs.

The inverse covariance of a paramagnetic Ising model on a d-regular graph is,
at the Bethe level, a shifted and rescaled adjacency matrix.  Its spectrum
follows the McKay law, which we map to the covariance eigenvalue
``gamma = 1 / eta``.

Spectral integrals are evaluated by Gauss-Legendre quadrature in the angle
``theta`` of ``zeta = b sin(theta)``; the substitution removes the square-root
edges of the density so the integrand is smooth.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np

__all__ = [
    "SpectralDensity",
    "EmpiricalSpectrum",
    "QuadratureError",
    "mckay_density",
    "build_density",
    "spectral_integral",
    "bethe_inverse_covariance",
    "empirical_density",
]

Kernel = Callable[[np.ndarray], np.ndarray]


class QuadratureError(RuntimeError):
    """Raised when a spectral integral misses its error target."""

    def __init__(self, message: str, error_estimate: float):
        super().__init__(message)
        self.error_estimate = error_estimate


def _coupling_transform(K0: float) -> float:
    t = np.tanh(K0)
    return t / (1.0 - t * t)


def mckay_density(zeta, d: int, K1: float):
    """McKay eigenvalue density of a d-regular coupling matrix with strength K1.

    Vectorized over ``zeta``; zero outside ``|zeta| <= 2 K1 sqrt(d-1)``.
    """
    if d < 3:
        raise ValueError(f"McKay density requires d >= 3, got d={d}")
    if K1 <= 0:
        raise ValueError(f"K1 must be positive, got {K1}")
    zeta = np.asarray(zeta, dtype=float)
    edge2 = 4.0 * K1 * K1 * (d - 1)
    inside = zeta * zeta <= edge2
    num = d * np.sqrt(np.where(inside, edge2 - zeta * zeta, 0.0))
    den = 2.0 * np.pi * (K1 * K1 * d * d - zeta * zeta)
    out = np.where(inside, num / den, 0.0)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class SpectralDensity:
    """Analytic density rho(gamma) of covariance eigenvalues (McKay law)."""

    d: int
    K0: float
    n_nodes: int = 2000
    K1: float = field(init=False)
    eta_center: float = field(init=False)
    half_width: float = field(init=False)

    def __post_init__(self):
        t = np.tanh(self.K0)
        object.__setattr__(self, "K1", _coupling_transform(self.K0))
        object.__setattr__(self, "eta_center", self.d / (1.0 - t * t) - self.d + 1.0)
        object.__setattr__(self, "half_width", 2.0 * self.K1 * np.sqrt(self.d - 1.0))

    is_approximation = False

    @property
    def eta_min(self) -> float:
        return self.eta_center - self.half_width

    @property
    def eta_max(self) -> float:
        return self.eta_center + self.half_width

    @property
    def gamma_min(self) -> float:
        return 1.0 / self.eta_max

    @property
    def gamma_max(self) -> float:
        return 1.0 / self.eta_min

    @property
    def support(self) -> tuple[float, float]:
        return self.gamma_min, self.gamma_max

    def rho_eta(self, eta):
        return mckay_density(self.eta_center - np.asarray(eta, dtype=float), self.d, self.K1)

    def __call__(self, gamma):
        gamma = np.asarray(gamma, dtype=float)
        # evaluate on the support only: 1/gamma overflows for tiny gamma
        inside = (gamma >= self.gamma_min) & (gamma <= self.gamma_max)
        safe = np.where(inside, gamma, 1.0)
        out = np.where(inside, self.rho_eta(1.0 / safe) / safe**2, 0.0)
        return out if out.ndim else float(out)

    def _rule(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        x, w = np.polynomial.legendre.leggauss(n)
        theta = 0.5 * np.pi * x
        b = self.half_width
        zeta = b * np.sin(theta)
        # rho_zeta(b sin t) * b cos t, written without the square root
        jac = self.d * b * b * np.cos(theta) ** 2 / (2.0 * np.pi * (self.K1**2 * self.d**2 - zeta**2))
        gamma = 1.0 / (self.eta_center - zeta)
        return gamma, 0.5 * np.pi * w * jac

    @cached_property
    def nodes(self) -> tuple[np.ndarray, np.ndarray]:
        """Quadrature nodes in gamma and their weights (weights sum to 1)."""
        return self._rule(self.n_nodes)

    @cached_property
    def _half_nodes(self) -> tuple[np.ndarray, np.ndarray]:
        return self._rule(max(self.n_nodes // 2, 8))

    def integrate(self, kernel: Kernel) -> float:
        g, w = self.nodes
        return float(np.dot(w, kernel(g)))

    def error_estimate(self, kernel: Kernel) -> float:
        g, w = self._half_nodes
        return abs(self.integrate(kernel) - float(np.dot(w, kernel(g))))

    @cached_property
    def mean(self) -> float:
        return self.integrate(lambda g: g)

    def metadata(self) -> dict:
        return {
            "kind": "mckay",
            "d": self.d,
            "K0": self.K0,
            "gamma_min": self.gamma_min,
            "gamma_max": self.gamma_max,
            "approximation": False,
        }


@dataclass(frozen=True)
class EmpiricalSpectrum:
    """Point-mass density built from a finite set of covariance eigenvalues.

    Used for loopy graphs (e.g. periodic grids) where no closed-form density is
    available.  Integrals are plain averages over the eigenvalues.
    """

    eigenvalues: np.ndarray
    label: str = "bethe-eigendecomposition"

    is_approximation = True

    @property
    def support(self) -> tuple[float, float]:
        return float(self.eigenvalues.min()), float(self.eigenvalues.max())

    @property
    def gamma_min(self) -> float:
        return self.support[0]

    @property
    def gamma_max(self) -> float:
        return self.support[1]

    @property
    def nodes(self) -> tuple[np.ndarray, np.ndarray]:
        n = len(self.eigenvalues)
        return self.eigenvalues, np.full(n, 1.0 / n)

    def integrate(self, kernel: Kernel) -> float:
        return float(np.mean(kernel(self.eigenvalues)))

    def error_estimate(self, kernel: Kernel) -> float:
        return 0.0

    @cached_property
    def mean(self) -> float:
        return float(np.mean(self.eigenvalues))

    def metadata(self) -> dict:
        return {
            "kind": "empirical",
            "label": self.label,
            "n_eigenvalues": int(len(self.eigenvalues)),
            "gamma_min": self.gamma_min,
            "gamma_max": self.gamma_max,
            "approximation": True,
        }


def build_density(d: int, K0: float, n_nodes: int = 2000) -> SpectralDensity:
    """Covariance eigenvalue density for a d-regular graph with coupling K0."""
    if d < 3:
        raise ValueError(f"d={d}: the chain d=2 is degenerate; need d >= 3")
    t2 = np.tanh(K0) ** 2
    if (d - 1) * t2 >= 1.0:
        raise ValueError(
            f"(d-1)*tanh(K0)^2 = {(d - 1) * t2:.6g} >= 1: "
            "paramagnetic condition (d-1)tanh^2(K0) < 1 violated"
        )
    if K0 == 0:
        raise ValueError("K0 = 0 gives a point mass at gamma=1; use EmpiricalSpectrum(np.ones(n))")
    return SpectralDensity(d=d, K0=abs(float(K0)), n_nodes=n_nodes)


def spectral_integral(density, kernel: Kernel, tol: float = 1e-10) -> float:
    """Integral of ``kernel(gamma) * rho(gamma)`` with an error check.

    The error estimate compares the full rule against one of half the order.
    """
    value = density.integrate(kernel)
    err = density.error_estimate(kernel)
    if not np.isfinite(value) or err > tol:
        raise QuadratureError(
            f"spectral integral did not reach tol={tol:g} (estimate {err:.3g})", err
        )
    return value


def bethe_inverse_covariance(model) -> np.ndarray:
    """Dense Bethe-level inverse covariance of a zero-field Ising model.

    Off-diagonal ``-t/(1-t^2)`` per edge with ``t = tanh(J)``; diagonal
    ``1 + sum_j t_ij^2/(1-t_ij^2)``, which reduces to ``d/(1-t^2) - d + 1`` for
    uniform couplings.
    """
    N = model.N
    A = np.zeros((N, N))
    diag = np.ones(N)
    if len(model.couplings):
        t = np.tanh(model.couplings)
        off = t / (1.0 - t * t)
        i, j = model.edges[:, 0], model.edges[:, 1]
        A[i, j] = -off
        A[j, i] = -off
        np.add.at(diag, i, t * t / (1.0 - t * t))
        np.add.at(diag, j, t * t / (1.0 - t * t))
    A[np.diag_indices(N)] = diag
    return A


def empirical_density(model) -> EmpiricalSpectrum:
    """Covariance spectrum from the inverted Bethe Hessian of a concrete graph."""
    eta = np.linalg.eigvalsh(bethe_inverse_covariance(model))
    if eta.min() <= 0:
        raise ValueError("Bethe inverse covariance is not positive definite (not paramagnetic)")
    return EmpiricalSpectrum(np.sort(1.0 / eta))
